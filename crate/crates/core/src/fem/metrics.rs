//! Mid-slice current-spread and wall-sensitivity metrics.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{ConductivityField, ForwardConfig, ForwardModel};
use crate::error::{Error, Result};
use crate::geometry::{CatheterSpec, LumenProfile, Mesh};

/// Reference maximum for the half-maximum current-density cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CdThreshold {
    #[default]
    SliceMaximum,
    GlobalMaximum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceConfig {
    /// Axial thickness of the band centred between the rings, mm.
    pub slice_thickness: f64,
    /// Elements whose centroid radius exceeds this fraction of the local
    /// wall radius count as outer elements.
    pub outer_fraction: f64,
    /// Fraction of qualifying elements the spread window must contain.
    pub coverage: f64,
    pub threshold: CdThreshold,
    /// Compare outer elements by sensitivity per unit volume, rescaled by
    /// the mean outer-element volume, so that element-size variation across
    /// the section does not favour any sector. Off takes raw entries.
    #[serde(default = "default_true")]
    pub volume_normalised: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self {
            slice_thickness: 2.0,
            outer_fraction: 0.9,
            coverage: 0.99,
            threshold: CdThreshold::SliceMaximum,
            volume_normalised: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    /// Current spread angle, degrees in (0, 360].
    pub cd_theta: f64,
    /// Largest |sensitivity| over outer slice elements, one per supplied row,
    /// V·m/S.
    pub j_wall: Vec<f64>,
    pub slice_thickness: f64,
    pub slice_elements: usize,
}

/// Elements whose centroid lies in the band of `thickness` mm centred on
/// the electrode array.
pub fn slice_elements(mesh: &Mesh, catheter: &CatheterSpec, thickness: f64) -> Vec<usize> {
    let zc = catheter.array_centre();
    let half = 0.5 * thickness;
    (0..mesh.element_count())
        .filter(|&e| (mesh.centroid(e)[2] - zc).abs() <= half + 1e-9)
        .collect()
}

/// Smallest circular window (radians) containing `ceil(coverage * n)` of
/// `angles`.
pub fn minimal_window(angles: &[f64], coverage: f64) -> f64 {
    let n = angles.len();
    if n == 0 {
        return 0.0;
    }
    let mut a: Vec<f64> = angles.iter().map(|t| t.rem_euclid(TAU)).collect();
    a.sort_by(f64::total_cmp);
    let k = ((coverage * n as f64).ceil() as usize).clamp(1, n);
    (0..n)
        .map(|i| {
            let j = i + k - 1;
            let end = if j < n { a[j] } else { a[j - n] + TAU };
            end - a[i]
        })
        .fold(f64::INFINITY, f64::min)
}

/// Current spread angle and per-row wall sensitivity in the mid-slice.
///
/// `cd` is the per-element current density of one injection and each entry
/// of `sensitivity_rows` one sensitivity row over the elements.
pub fn slice_metrics(
    cd: &[f64],
    sensitivity_rows: &[&[f64]],
    mesh: &Mesh,
    profile: &LumenProfile,
    catheter: &CatheterSpec,
    config: &SliceConfig,
) -> Result<SliceMetrics> {
    let m = mesh.element_count();
    if cd.len() != m || sensitivity_rows.iter().any(|r| r.len() != m) {
        return Err(Error::Input("metric fields must have one value per element".into()));
    }
    let slice = slice_elements(mesh, catheter, config.slice_thickness);
    if slice.is_empty() {
        return Err(Error::Geometry(format!(
            "no elements in the {} mm mid-slice",
            config.slice_thickness
        )));
    }
    let reference = match config.threshold {
        CdThreshold::SliceMaximum => slice.iter().map(|&e| cd[e]).fold(0.0, f64::max),
        CdThreshold::GlobalMaximum => cd.iter().copied().fold(0.0, f64::max),
    };
    let zc = catheter.array_centre();
    let mut qualifying = Vec::new();
    let mut outer = Vec::new();
    for &e in &slice {
        let c = mesh.centroid(e);
        let theta = c[1].atan2(c[0]);
        if cd[e] > 0.5 * reference {
            qualifying.push(theta);
        }
        let r = c[0].hypot(c[1]);
        if r > config.outer_fraction * profile.wall_radius(theta, c[2] - zc) {
            outer.push(e);
        }
    }
    let cd_theta = if qualifying.is_empty() {
        360.0
    } else {
        minimal_window(&qualifying, config.coverage).to_degrees().clamp(1e-9, 360.0)
    };
    if outer.is_empty() && !sensitivity_rows.is_empty() {
        return Err(Error::Geometry("mid-slice has no outer elements".into()));
    }
    let weights: Vec<f64> = if config.volume_normalised {
        let vols: Vec<f64> = outer.iter().map(|&e| mesh.element_volume(e)).collect();
        let mean = vols.iter().sum::<f64>() / vols.len().max(1) as f64;
        vols.iter().map(|v| mean / v).collect()
    } else {
        vec![1.0; outer.len()]
    };
    let j_wall = sensitivity_rows
        .iter()
        .map(|row| {
            outer
                .iter()
                .zip(&weights)
                .map(|(&e, w)| row[e].abs() * w)
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(SliceMetrics {
        cd_theta,
        j_wall,
        slice_thickness: config.slice_thickness,
        slice_elements: slice.len(),
    })
}

/// One-shot current density for an injection pair (1-based), A/m^2.
pub fn current_density(
    mesh: &Mesh,
    sigma: &ConductivityField,
    pair: (usize, usize),
    amplitude: f64,
) -> Result<Vec<f64>> {
    let model = ForwardModel::new(mesh.clone(), ForwardConfig::default())?;
    let fields = model.electrode_fields(sigma)?;
    model.current_density(sigma, &fields, pair, amplitude)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn window_of_clustered_angles() {
        let a: Vec<f64> = (-5..=5).map(|k| (k as f64).to_radians()).collect();
        assert!((minimal_window(&a, 1.0).to_degrees() - 10.0).abs() < 1e-9);
        let spread: Vec<f64> = (0..360).map(|k| (k as f64).to_radians()).collect();
        assert!((minimal_window(&spread, 1.0).to_degrees() - 359.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn window_is_rotation_invariant(angles in prop::collection::vec(0.0..TAU, 1..60), shift in 0.0..TAU) {
            let w = minimal_window(&angles, 0.99);
            let rotated: Vec<f64> = angles.iter().map(|a| a + shift).collect();
            prop_assert!((minimal_window(&rotated, 0.99) - w).abs() < 1e-9);
            prop_assert!(w >= 0.0 && w < TAU);
        }
    }
}
