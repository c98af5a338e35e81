//! Cross-section approximation from a thresholded difference image.
//!
//! Elements whose change exceeds a multiple of the average change next to
//! the electrodes are taken to lie outside the balloon; the retained
//! mid-slice elements, plus the catheter shaft, approximate the lumen
//! cross-section.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ReconMesh, ReconMode, Reconstruction};
use crate::error::{Error, Result};
use crate::fem::slice_elements;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsaConfig {
    /// Elements are removed when their change exceeds this multiple of the
    /// electrode-adjacent average.
    pub threshold_factor: f64,
    /// Compare magnitudes (default) rather than signed values. Narrowing
    /// lumens produce conductivity decreases, which a signed comparison
    /// never removes.
    pub use_magnitude: bool,
    pub slice_thickness: f64,
    /// Azimuthal bins of the boundary and the per-sector areas.
    pub bins: usize,
}

impl Default for CsaConfig {
    fn default() -> Self {
        Self {
            threshold_factor: 3.0,
            use_magnitude: true,
            slice_thickness: 2.0,
            bins: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsaEstimate {
    /// Retained mid-slice area plus the shaft cross-section, mm^2.
    pub area: f64,
    pub retained_elements: usize,
    pub slice_elements: usize,
    /// Average change over electrode-adjacent elements (signed or
    /// magnitude per the configuration), S/m.
    pub electrode_average: f64,
    pub threshold: f64,
    /// Bin centres, degrees.
    pub angles: Vec<f64>,
    /// Outermost retained centroid radius per bin, mm (shaft radius when
    /// nothing in the bin is retained).
    pub boundary: Vec<f64>,
    /// Retained and nominal (all mid-slice) area per bin, mm^2, shaft
    /// excluded.
    pub sector_area: Vec<f64>,
    pub sector_nominal: Vec<f64>,
}

impl CsaEstimate {
    /// Azimuth (degrees) of the area-weighted centroid of the removed area.
    /// `None` when nothing was removed.
    pub fn deficit_direction(&self) -> Option<f64> {
        let (mut x, mut y, mut total) = (0.0, 0.0, 0.0);
        for ((t, a), n) in self.angles.iter().zip(&self.sector_area).zip(&self.sector_nominal) {
            let d = n - a;
            let r = t.to_radians();
            x += d * r.cos();
            y += d * r.sin();
            total += d;
        }
        (total > 0.0 && x.hypot(y) > 1e-12 * total).then(|| y.atan2(x).to_degrees().rem_euclid(360.0))
    }

    /// Fraction of the removed area that lies within `half_width` degrees
    /// of `azimuth`.
    pub fn deficit_fraction_near(&self, azimuth: f64, half_width: f64) -> f64 {
        let mut near = 0.0;
        let mut total = 0.0;
        for ((t, a), n) in self.angles.iter().zip(&self.sector_area).zip(&self.sector_nominal) {
            let d = n - a;
            total += d;
            if super::analysis::angular_distance(*t, azimuth) <= half_width {
                near += d;
            }
        }
        if total > 0.0 {
            near / total
        } else {
            0.0
        }
    }
}

/// Thresholds a difference image and measures the retained cross-section.
pub fn approximate_csa(recon: &Reconstruction, rm: &ReconMesh, config: &CsaConfig) -> Result<CsaEstimate> {
    check_image(recon, rm, config)?;
    let average = electrode_average(recon, rm, config);
    retained_section(recon, rm, config, average)
}

/// Cross-sections of an image series whose threshold is anchored to the
/// electrode average of the first image.
///
/// A per-image threshold is invariant to the image scale, so a linear
/// difference image of a shrinking perturbation would keep the same
/// retained region at every amplitude; anchoring lets the series follow
/// the perturbation size.
pub fn approximate_csa_series(recons: &[Reconstruction], rm: &ReconMesh, config: &CsaConfig) -> Result<Vec<CsaEstimate>> {
    let first = recons
        .first()
        .ok_or_else(|| Error::Input("cross-section series is empty".into()))?;
    for r in recons {
        check_image(r, rm, config)?;
    }
    let average = electrode_average(first, rm, config);
    recons
        .iter()
        .map(|r| retained_section(r, rm, config, average))
        .collect()
}

fn measure(config: &CsaConfig, v: f64) -> f64 {
    if config.use_magnitude {
        v.abs()
    } else {
        v
    }
}

fn electrode_average(recon: &Reconstruction, rm: &ReconMesh, config: &CsaConfig) -> f64 {
    let adjacent = rm.mesh().electrode_adjacent_elements();
    adjacent.iter().map(|&e| measure(config, recon.values[e])).sum::<f64>() / adjacent.len().max(1) as f64
}

fn check_image(recon: &Reconstruction, rm: &ReconMesh, config: &CsaConfig) -> Result<()> {
    if recon.mode == ReconMode::Absolute {
        return Err(Error::Input("cross-section approximation needs a difference image".into()));
    }
    let mesh = rm.mesh();
    if recon.values.len() != mesh.element_count() {
        return Err(Error::Input(format!(
            "image has {} values for {} elements",
            recon.values.len(),
            mesh.element_count()
        )));
    }
    if !(config.threshold_factor > 0.0) || !(config.slice_thickness > 0.0) || config.bins == 0 {
        return Err(Error::Parameter(
            "threshold factor, slice thickness and bin count must be positive".into(),
        ));
    }
    Ok(())
}

fn retained_section(recon: &Reconstruction, rm: &ReconMesh, config: &CsaConfig, electrode_average: f64) -> Result<CsaEstimate> {
    let mesh = rm.mesh();
    let threshold = config.threshold_factor * electrode_average;
    let slice = slice_elements(mesh, rm.catheter(), config.slice_thickness);
    let shaft = rm.catheter().shaft_radius();
    let bins = config.bins;
    let mut sector_area = vec![0.0; bins];
    let mut sector_nominal = vec![0.0; bins];
    let mut boundary = vec![shaft; bins];
    let mut retained = 0;
    for &e in &slice {
        let c = mesh.centroid(e);
        let t = c[1].atan2(c[0]).rem_euclid(TAU);
        let k = ((t / TAU * bins as f64) as usize).min(bins - 1);
        let footprint = mesh.element_volume(e) / config.slice_thickness;
        sector_nominal[k] += footprint;
        if measure(config, recon.values[e]) > threshold {
            continue;
        }
        retained += 1;
        sector_area[k] += footprint;
        boundary[k] = boundary[k].max(c[0].hypot(c[1]));
    }
    if retained == 0 {
        return Err(Error::DegenerateImage(format!(
            "every mid-slice element exceeds the threshold {threshold:.3e} S/m"
        )));
    }
    Ok(CsaEstimate {
        area: sector_area.iter().sum::<f64>() + PI * shaft * shaft,
        retained_elements: retained,
        slice_elements: slice.len(),
        electrode_average,
        threshold,
        angles: (0..bins).map(|k| (k as f64 + 0.5) * 360.0 / bins as f64).collect(),
        boundary,
        sector_area,
        sector_nominal,
    })
}

/// `frame,area_mm2,retained_elements` rows, one per estimate.
pub fn write_csa_csv(estimates: &[CsaEstimate], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["frame", "area_mm2", "retained_elements"])?;
    for (i, est) in estimates.iter().enumerate() {
        w.write_record([i.to_string(), est.area.to_string(), est.retained_elements.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
