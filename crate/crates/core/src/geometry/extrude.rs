//! Prism extrusion of a cross-section along the catheter axis.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use super::mesh::{signed_volume, triangle_area, Mesh, Point};
use super::profile::{wrap_angle, CatheterSpec, LumenProfile};
use super::section::{build_cross_section_with, CrossSection, SectionResolution, DEFAULT_BAND};
use crate::error::{Error, Result};

/// Region label carried by every saline element.
pub const SALINE_REGION: u32 = 1;

/// Relative tolerance on electrode patch area against width x height.
pub const ELECTRODE_AREA_TOLERANCE: f64 = 0.10;

/// Axial node positions (mm, domain coordinates, increasing).
#[derive(Debug, Clone, PartialEq)]
pub struct AxialGrid {
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start: f64,
    end: f64,
    on_electrode: bool,
}

/// Axial sizing: element height `fine` on electrodes, growing linearly with
/// distance from them at `growth` up to `coarse`. The central slice band
/// is refined to half its thickness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxialSizing {
    pub fine: f64,
    pub coarse: f64,
    pub growth: f64,
    pub slice_thickness: f64,
}

impl Default for AxialSizing {
    fn default() -> Self {
        Self {
            fine: 0.5,
            coarse: 4.0,
            growth: 0.4,
            slice_thickness: 2.0,
        }
    }
}

fn electrode_bands(catheter: &CatheterSpec) -> Vec<(f64, f64)> {
    let zc = catheter.array_centre();
    let h = 0.5 * catheter.electrode_height;
    (0..catheter.ring_count)
        .map(|r| {
            let z = zc + catheter.ring_offset(r);
            (z - h, z + h)
        })
        .collect()
}

fn segments(catheter: &CatheterSpec, slice_thickness: f64) -> Vec<Segment> {
    let zc = catheter.array_centre();
    let bands = electrode_bands(catheter);
    let mut breaks = vec![0.0, catheter.shaft_length, zc];
    if slice_thickness > 0.0 {
        breaks.push(zc - 0.5 * slice_thickness);
        breaks.push(zc + 0.5 * slice_thickness);
    }
    for &(a, b) in &bands {
        breaks.push(a);
        breaks.push(b);
    }
    breaks.retain(|&z| (0.0..=catheter.shaft_length).contains(&z));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    breaks
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            Segment {
                start: w[0],
                end: w[1],
                on_electrode: bands.iter().any(|&(a, b)| mid > a && mid < b),
            }
        })
        .collect()
}

impl AxialSizing {
    fn size_at(&self, z: f64, bands: &[(f64, f64)], slice: (f64, f64)) -> f64 {
        let d = bands
            .iter()
            .map(|&(a, b)| if z < a { a - z } else if z > b { z - b } else { 0.0 })
            .fold(f64::INFINITY, f64::min);
        let mut h = (self.fine + self.growth * d).min(self.coarse);
        if z >= slice.0 && z <= slice.1 {
            h = h.min(0.5 * self.slice_thickness);
        }
        h
    }
}

/// Number of elements (weight) per segment from integrating 1/h.
fn segment_weights(catheter: &CatheterSpec, sizing: &AxialSizing, segs: &[Segment]) -> Vec<f64> {
    let bands = electrode_bands(catheter);
    let zc = catheter.array_centre();
    let slice = (zc - 0.5 * sizing.slice_thickness, zc + 0.5 * sizing.slice_thickness);
    segs.iter()
        .map(|s| {
            const N: usize = 200;
            let dz = (s.end - s.start) / N as f64;
            (0..N)
                .map(|k| dz / sizing.size_at(s.start + (k as f64 + 0.5) * dz, &bands, slice))
                .sum()
        })
        .collect()
}

/// Places `n` layers in `seg`, equidistributing the weight 1/h.
fn fill_segment(
    seg: Segment,
    n: usize,
    sizing: &AxialSizing,
    bands: &[(f64, f64)],
    slice: (f64, f64),
    out: &mut Vec<f64>,
) {
    const N: usize = 400;
    let dz = (seg.end - seg.start) / N as f64;
    let mut cum = vec![0.0];
    for k in 0..N {
        let h = sizing.size_at(seg.start + (k as f64 + 0.5) * dz, bands, slice);
        let last = *cum.last().unwrap();
        cum.push(last + dz / h);
    }
    let total = *cum.last().unwrap();
    for m in 1..n {
        let target = total * m as f64 / n as f64;
        let k = cum.partition_point(|&c| c < target).clamp(1, N);
        let frac = (target - cum[k - 1]) / (cum[k] - cum[k - 1]);
        out.push(seg.start + (k as f64 - 1.0 + frac) * dz);
    }
    out.push(seg.end);
}

impl AxialGrid {
    /// Graded grid whose layer count follows from the sizing.
    pub fn graded(catheter: &CatheterSpec, sizing: &AxialSizing) -> Result<Self> {
        catheter.validate()?;
        let segs = segments(catheter, sizing.slice_thickness);
        let weights = segment_weights(catheter, sizing, &segs);
        let counts: Vec<usize> = segs
            .iter()
            .zip(&weights)
            .map(|(s, w)| {
                let n = (w - 1e-9).ceil().max(1.0) as usize;
                if s.on_electrode {
                    n.max(2)
                } else {
                    n
                }
            })
            .collect();
        Ok(Self::assemble(catheter, sizing, &segs, &counts))
    }

    /// Grid with exactly `layers` layers distributed by the default sizing.
    pub fn with_layers(catheter: &CatheterSpec, layers: usize) -> Result<Self> {
        catheter.validate()?;
        let sizing = AxialSizing::default();
        let segs = segments(catheter, sizing.slice_thickness);
        if layers < segs.len() {
            return Err(Error::Meshing(format!(
                "{layers} axial layers cannot cover {} required axial segments",
                segs.len()
            )));
        }
        let weights = segment_weights(catheter, &sizing, &segs);
        let total: f64 = weights.iter().sum();
        // Largest-remainder apportionment with at least one layer per segment.
        let mut counts: Vec<usize> = vec![1; segs.len()];
        let spare = layers - segs.len();
        let ideal: Vec<f64> = weights.iter().map(|w| w / total * layers as f64).collect();
        let mut extra: Vec<f64> = ideal.iter().map(|x| (x - 1.0).max(0.0)).collect();
        let extra_total: f64 = extra.iter().sum();
        if extra_total > 0.0 {
            extra.iter_mut().for_each(|x| *x *= spare as f64 / extra_total);
        }
        let mut assigned = 0;
        for (c, x) in counts.iter_mut().zip(&extra) {
            *c += x.floor() as usize;
            assigned += x.floor() as usize;
        }
        let mut order: Vec<usize> = (0..segs.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = extra[a] - extra[a].floor();
            let fb = extra[b] - extra[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &k in order.iter().cycle().take(spare - assigned) {
            counts[k] += 1;
        }
        for (s, &c) in segs.iter().zip(&counts) {
            if s.on_electrode && c < 2 {
                return Err(Error::Meshing(format!(
                    "{layers} axial layers leave fewer than 2 layers across an electrode"
                )));
            }
        }
        Ok(Self::assemble(catheter, &sizing, &segs, &counts))
    }

    fn assemble(
        catheter: &CatheterSpec,
        sizing: &AxialSizing,
        segs: &[Segment],
        counts: &[usize],
    ) -> Self {
        let bands = electrode_bands(catheter);
        let zc = catheter.array_centre();
        let slice = (zc - 0.5 * sizing.slice_thickness, zc + 0.5 * sizing.slice_thickness);
        let mut z = vec![0.0];
        for (s, &n) in segs.iter().zip(counts) {
            fill_segment(*s, n, sizing, &bands, slice, &mut z);
        }
        Self { z }
    }

    pub fn layer_count(&self) -> usize {
        self.z.len() - 1
    }
}

/// Splits the prism over an ordered triangle (v0 < v1 < v2) into three
/// tetrahedra. Neighbouring prisms sharing a side face choose the same
/// diagonal, so the result is conforming.
fn split_prism(bottom: [usize; 3], top: [usize; 3]) -> [[usize; 4]; 3] {
    let [a, b, c] = bottom;
    let [ta, tb, tc] = top;
    [[a, b, c, tc], [a, b, tb, tc], [a, ta, tb, tc]]
}

/// Extrudes planar node positions (a function of z) through `grid`.
fn extrude_ordered(
    points_at: impl Fn(f64) -> Vec<[f64; 2]>,
    triangles: &[[usize; 3]],
    grid: &AxialGrid,
) -> (Vec<Point>, Vec<[usize; 4]>) {
    let mut nodes = Vec::new();
    let mut per_layer = 0;
    for &z in &grid.z {
        let pts = points_at(z);
        per_layer = pts.len();
        nodes.extend(pts.iter().map(|p| [p[0], p[1], z]));
    }
    let mut elements = Vec::with_capacity(3 * triangles.len() * grid.layer_count());
    for k in 0..grid.layer_count() {
        let lo = k * per_layer;
        let hi = (k + 1) * per_layer;
        for t in triangles {
            for mut tet in split_prism(t.map(|v| v + lo), t.map(|v| v + hi)) {
                let p = tet.map(|n| nodes[n]);
                if signed_volume(p[0], p[1], p[2], p[3]) < 0.0 {
                    tet.swap(2, 3);
                }
                elements.push(tet);
            }
        }
    }
    (nodes, elements)
}

/// Assigns shaft boundary faces to electrode patches by face centroid.
fn assign_electrodes(
    nodes: &[Point],
    boundary: &[([usize; 3], usize)],
    catheter: &CatheterSpec,
) -> Result<Vec<Vec<[usize; 3]>>> {
    let r = catheter.shaft_radius();
    let tol = 1e-9 * r.max(1.0);
    let half_angle = catheter.electrode_half_angle();
    let half_height = 0.5 * catheter.electrode_height;
    let zc = catheter.array_centre();
    let mut patches = vec![Vec::new(); catheter.electrode_count()];
    for (face, _) in boundary {
        let on_shaft = face.iter().all(|&n| {
            let p = nodes[n];
            ((p[0] * p[0] + p[1] * p[1]).sqrt() - r).abs() < tol
        });
        if !on_shaft {
            continue;
        }
        let c = face.iter().fold([0.0; 3], |acc, &n| {
            [acc[0] + nodes[n][0] / 3.0, acc[1] + nodes[n][1] / 3.0, acc[2] + nodes[n][2] / 3.0]
        });
        let theta = c[1].atan2(c[0]);
        for (k, patch) in patches.iter_mut().enumerate() {
            let dz = c[2] - (zc + catheter.ring_offset(catheter.electrode_ring(k)));
            let dtheta = wrap_angle(theta - catheter.electrode_azimuth(k));
            if dz.abs() < half_height && dtheta.abs() < half_angle {
                patch.push(*face);
                break;
            }
        }
    }
    let nominal = catheter.electrode_width * catheter.electrode_height;
    for (k, patch) in patches.iter().enumerate() {
        let area: f64 = patch
            .iter()
            .map(|f| triangle_area(nodes[f[0]], nodes[f[1]], nodes[f[2]]))
            .sum();
        if (area - nominal).abs() > ELECTRODE_AREA_TOLERANCE * nominal {
            return Err(Error::Meshing(format!(
                "electrode {} snapped to {area:.3} mm^2 against nominal {nominal:.3} mm^2",
                k + 1
            )));
        }
    }
    Ok(patches)
}

/// Extrudes `section` through an explicit axial grid and attaches the
/// catheter electrode patches.
pub fn extrude_with_grid(
    section: &CrossSection,
    catheter: &CatheterSpec,
    grid: &AxialGrid,
) -> Result<Mesh> {
    catheter.validate()?;
    let zc = catheter.array_centre();
    let (nodes, elements) =
        extrude_ordered(|z| section.points(z - zc), section.ordered_triangles(), grid);
    let mut mesh = Mesh {
        element_region: vec![SALINE_REGION; elements.len()],
        nodes,
        elements,
        electrodes: Vec::new(),
        characteristic_size: characteristic_size(section, grid),
    };
    let boundary = mesh.boundary_faces();
    mesh.electrodes = assign_electrodes(&mesh.nodes, &boundary, catheter)?;
    mesh.validate()?;
    Ok(mesh)
}

/// Extrudes `section` into `axial_layers` graded layers.
pub fn extrude_mesh(
    section: &CrossSection,
    catheter: &CatheterSpec,
    axial_layers: usize,
) -> Result<Mesh> {
    let grid = AxialGrid::with_layers(catheter, axial_layers)?;
    extrude_with_grid(section, catheter, &grid)
}

fn characteristic_size(section: &CrossSection, grid: &AxialGrid) -> f64 {
    let r_mean = 0.5 * (section.shaft_radius + section.profile.major_radius());
    let tangential = TAU * r_mean / section.angular_count() as f64;
    let radial = (section.profile.major_radius() - section.shaft_radius)
        / (section.radial_count() - 1) as f64;
    let axial = grid.z.last().unwrap() / grid.layer_count() as f64;
    (tangential * radial * axial).cbrt()
}

/// Full mesh resolution: cross-section counts plus axial sizing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshResolution {
    pub section: SectionResolution,
    pub axial: AxialSizing,
}

impl MeshResolution {
    /// Desk-scale phantom mesh: 64 rays, 11 radial layers (roughly 135k
    /// elements for the default catheter). Transfer voltages move by under
    /// 1% on a twofold refinement.
    pub fn desk() -> Self {
        Self {
            section: SectionResolution {
                electrode_segments: 4,
                gap_segments: 4,
                inner_layers: 3,
                inner_thickness: DEFAULT_BAND,
                inner_growth: 1.25,
                outer_layers: 8,
            },
            axial: AxialSizing::default(),
        }
    }

    /// Coarse mesh for fast tests (a few thousand elements).
    pub fn coarse() -> Self {
        Self {
            section: SectionResolution {
                electrode_segments: 2,
                gap_segments: 2,
                inner_layers: 2,
                inner_thickness: DEFAULT_BAND,
                inner_growth: 1.3,
                outer_layers: 2,
            },
            axial: AxialSizing {
                fine: 1.0,
                coarse: 5.0,
                growth: 0.5,
                slice_thickness: 2.0,
            },
        }
    }

    /// Coarse reconstruction mesh resolution (about 14k elements for a
    /// 30 mm lumen with the default catheter).
    pub fn reconstruction() -> Self {
        Self {
            section: SectionResolution {
                electrode_segments: 2,
                gap_segments: 2,
                inner_layers: 1,
                inner_thickness: DEFAULT_BAND,
                inner_growth: 1.25,
                outer_layers: 3,
            },
            axial: AxialSizing {
                fine: 1.0,
                coarse: 8.0,
                growth: 0.6,
                slice_thickness: 2.0,
            },
        }
    }

    /// Uniformly refines every direction by `factor`.
    pub fn refined(&self, factor: f64) -> Self {
        Self {
            section: self.section.refined(factor),
            axial: AxialSizing {
                fine: self.axial.fine / factor,
                coarse: self.axial.coarse / factor,
                growth: self.axial.growth,
                slice_thickness: self.axial.slice_thickness,
            },
        }
    }

    /// Looks up a named preset (`coarse`, `desk`, `fine`, `recon`).
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "coarse" => Ok(Self::coarse()),
            "desk" => Ok(Self::desk()),
            "fine" => Ok(Self::desk().refined(2.0)),
            "recon" | "reconstruction" => Ok(Self::reconstruction()),
            other => Err(Error::Parameter(format!("unknown resolution `{other}`"))),
        }
    }
}

/// Builds a catheter-in-lumen phantom mesh.
pub fn phantom_mesh(
    profile: &LumenProfile,
    catheter: &CatheterSpec,
    resolution: &MeshResolution,
) -> Result<Mesh> {
    let section = build_cross_section_with(profile, catheter, &resolution.section)?;
    let grid = AxialGrid::graded(catheter, &resolution.axial)?;
    extrude_with_grid(&section, catheter, &grid)
}

/// Solid cylinder of `radius` and `length` (mm) along z with two electrodes
/// covering the end caps; used for analytic forward-solver checks.
pub fn end_cap_cylinder(
    radius: f64,
    length: f64,
    angular: usize,
    rings: usize,
    layers: usize,
) -> Result<Mesh> {
    if !(radius > 0.0 && length > 0.0) || angular < 3 || rings == 0 || layers == 0 {
        return Err(Error::Parameter("invalid cylinder parameters".into()));
    }
    // Node 0 is the axis; ring i (1-based) node j is 1 + (i-1)*angular + j.
    let mut pts = vec![[0.0, 0.0]];
    for i in 1..=rings {
        let r = radius * i as f64 / rings as f64;
        for j in 0..angular {
            let t = TAU * j as f64 / angular as f64;
            pts.push([r * t.cos(), r * t.sin()]);
        }
    }
    let idx = |i: usize, j: usize| 1 + (i - 1) * angular + (j % angular);
    let mut triangles = Vec::new();
    for j in 0..angular {
        triangles.push([0, idx(1, j), idx(1, j + 1)]);
    }
    for i in 1..rings {
        for j in 0..angular {
            triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i, j + 1), idx(i + 1, j + 1)]);
        }
    }
    let grid = AxialGrid {
        z: (0..=layers).map(|k| length * k as f64 / layers as f64).collect(),
    };
    let (nodes, elements) = extrude_ordered(|_| pts.clone(), &triangles, &grid);
    let mut mesh = Mesh {
        element_region: vec![SALINE_REGION; elements.len()],
        nodes,
        elements,
        electrodes: vec![Vec::new(), Vec::new()],
        characteristic_size: length / layers as f64,
    };
    for (face, _) in mesh.boundary_faces() {
        let z: Vec<f64> = face.iter().map(|&n| mesh.nodes[n][2]).collect();
        if z.iter().all(|&v| v.abs() < 1e-12) {
            mesh.electrodes[0].push(face);
        } else if z.iter().all(|&v| (v - length).abs() < 1e-12) {
            mesh.electrodes[1].push(face);
        }
    }
    mesh.validate()?;
    Ok(mesh)
}

/// Analytic volume of the shaft-to-circle annular prism.
pub fn annulus_volume(diameter: f64, catheter: &CatheterSpec) -> f64 {
    PI * (0.25 * diameter * diameter - catheter.shaft_radius().powi(2)) * catheter.shaft_length
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::section::build_cross_section;
    use approx::assert_relative_eq;

    #[test]
    fn grid_hits_breakpoints_and_honours_layer_count() {
        let c = CatheterSpec::default();
        let g = AxialGrid::with_layers(&c, 40).unwrap();
        assert_eq!(g.layer_count(), 40);
        for z in [0.0, 14.0, 16.0, 19.0, 20.0, 21.0, 24.0, 26.0, 40.0] {
            assert!(g.z.iter().any(|&v| (v - z).abs() < 1e-9), "missing {z}");
        }
        assert!(g.z.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn too_few_layers_is_a_meshing_error() {
        let c = CatheterSpec::default();
        assert!(matches!(AxialGrid::with_layers(&c, 5), Err(Error::Meshing(_))));
        assert!(matches!(AxialGrid::with_layers(&c, 9), Err(Error::Meshing(_))));
    }

    #[test]
    fn sixteen_electrodes_with_nominal_area() {
        let c = CatheterSpec::default();
        let s = build_cross_section(&LumenProfile::circle(25.0), &c, 1.0).unwrap();
        let m = extrude_mesh(&s, &c, 40).unwrap();
        assert_eq!(m.electrode_count(), 16);
        for k in 0..16 {
            let a = m.electrode_area(k);
            assert!((a - 2.0).abs() < 0.2, "electrode {} area {a}", k + 1);
        }
        assert!(m.volumes().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn ring_two_sits_behind_ring_one() {
        let c = CatheterSpec::default();
        let m = phantom_mesh(&LumenProfile::circle(20.0), &c, &MeshResolution::coarse()).unwrap();
        let centre = |k: usize| {
            let mut acc = [0.0; 3];
            let mut n = 0.0;
            for f in &m.electrodes[k] {
                for &v in f {
                    for d in 0..3 {
                        acc[d] += m.nodes[v][d];
                    }
                    n += 1.0;
                }
            }
            acc.map(|x| x / n)
        };
        for k in 0..8 {
            let a = centre(k);
            let b = centre(k + 8);
            assert_relative_eq!(a[1].atan2(a[0]), b[1].atan2(b[0]), epsilon = 1e-9);
            assert_relative_eq!(b[2] - a[2], 10.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn volume_converges_under_axial_refinement() {
        let c = CatheterSpec::default();
        let s = build_cross_section(&LumenProfile::circle(25.0), &c, 1.0).unwrap();
        let exact = annulus_volume(25.0, &c);
        for layers in [20, 40, 80] {
            let m = extrude_mesh(&s, &c, layers).unwrap();
            let rel = (m.total_volume() - exact).abs() / exact;
            assert!(rel < 5e-3, "{layers} layers: relative volume error {rel}");
        }
    }

    #[test]
    fn indented_wall_follows_axial_profile() {
        let c = CatheterSpec::default();
        let p = LumenProfile::indented(24.0, 4.0);
        let m = phantom_mesh(&p, &c, &MeshResolution::coarse()).unwrap();
        let zc = c.array_centre();
        let wall_max = m
            .nodes
            .iter()
            .filter(|n| (n[2] - zc).abs() < 1e-9)
            .map(|n| (n[0] * n[0] + n[1] * n[1]).sqrt())
            .filter(|&r| r > 7.9 && r < 8.1)
            .count();
        assert!(wall_max >= 1);
        m.validate().unwrap();
    }

    #[test]
    fn cylinder_caps_are_electrodes() {
        let m = end_cap_cylinder(5.0, 20.0, 16, 3, 10).unwrap();
        assert_eq!(m.electrode_count(), 2);
        let cap = 0.5 * 16.0 * 25.0 * (TAU / 16.0).sin();
        assert_relative_eq!(m.electrode_area(0), cap, epsilon = 1e-9);
        assert_relative_eq!(m.electrode_area(1), cap, epsilon = 1e-9);
        assert_relative_eq!(m.total_volume(), cap * 20.0, epsilon = 1e-9);
    }
}
