//! Parametric catheter-in-lumen phantoms: cross-sections, extruded
//! tetrahedral meshes, mesh quality and mesh file I/O.

mod extrude;
pub mod io;
mod mesh;
mod profile;
mod section;

pub use extrude::{
    annulus_volume, end_cap_cylinder, extrude_mesh, extrude_with_grid, phantom_mesh, AxialGrid,
    AxialSizing, MeshResolution, ELECTRODE_AREA_TOLERANCE, SALINE_REGION,
};
pub use mesh::{mesh_quality, signed_volume, triangle_area, Mesh, Point, QualityReport, ASPECT_BINS};
pub use profile::{wrap_angle, CatheterSpec, LumenProfile, ProfileKind, MIN_WALL_CLEARANCE};
pub use section::{build_cross_section, build_cross_section_with, CrossSection, SectionResolution, DEFAULT_BAND};
