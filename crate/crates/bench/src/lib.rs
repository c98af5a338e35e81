//! Benchmark fixtures shared by the criterion benches.

use lumen_eit::fem::{ForwardConfig, ForwardModel};
use lumen_eit::geometry::{phantom_mesh, CatheterSpec, LumenProfile, MeshResolution};

/// Forward model of the 26 mm, 0.75 ellipse at `resolution`.
pub fn ellipse_model(resolution: &MeshResolution) -> ForwardModel {
    let mesh = phantom_mesh(
        &LumenProfile::ellipse(26.0, 0.75),
        &CatheterSpec::default(),
        resolution,
    )
    .expect("benchmark phantom meshes");
    ForwardModel::new(mesh, ForwardConfig::default()).expect("benchmark model assembles")
}
