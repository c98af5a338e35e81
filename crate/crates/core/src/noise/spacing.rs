//! Ring-spacing sweep: current spread and wall sensitivity in the slice
//! midway between the electrode rings.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{slice_metrics, ForwardConfig, ForwardModel, SliceConfig};
use crate::geometry::{phantom_mesh, CatheterSpec, LumenProfile, MeshResolution};
use crate::protocol::{radial_protocol, Protocol};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacingConfig {
    /// Ring spacings, mm.
    pub spacings: Vec<f64>,
    /// Lumen; the default ellipse is turned a quarter pitch so radial rows
    /// 1..4 face four distinct azimuths between major and minor axis.
    pub profile: LumenProfile,
    /// Catheter template; its ring spacing and shaft length are replaced
    /// per case.
    pub catheter: CatheterSpec,
    /// Domain length beyond the ring spacing, mm.
    pub domain_margin: f64,
    pub resolution: MeshResolution,
    pub forward: ForwardConfig,
    pub slice: SliceConfig,
    /// Injection pair (1-based) whose current density defines the spread.
    pub spread_pair: (usize, usize),
    /// Radial-protocol row indices (0-based), one per sector.
    pub sector_rows: Vec<usize>,
}

impl Default for SpacingConfig {
    fn default() -> Self {
        Self {
            spacings: vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0],
            profile: LumenProfile::ellipse(26.0, 0.75).with_rotation(11.25),
            catheter: CatheterSpec::default(),
            domain_margin: 30.0,
            resolution: MeshResolution::desk(),
            forward: ForwardConfig::default(),
            slice: SliceConfig::default(),
            spread_pair: (1, 9),
            sector_rows: vec![0, 1, 2, 3],
        }
    }
}

impl SpacingConfig {
    /// Catheter for ring spacing `spacing`.
    pub fn catheter_for(&self, spacing: f64) -> CatheterSpec {
        CatheterSpec {
            ring_spacing: spacing,
            shaft_length: spacing + self.domain_margin,
            ..self.catheter.clone()
        }
    }

    /// Azimuth of each sector row's centre measured from the major axis and
    /// folded into [0, 90] degrees.
    pub fn sector_angles(&self) -> Vec<f64> {
        let p = radial_protocol();
        self.sector_rows
            .iter()
            .map(|&r| {
                let m = &p.rows[r];
                let a = self.catheter.electrode_azimuth(m.inject_pos - 1).to_degrees();
                let b = self.catheter.electrode_azimuth(m.meas_pos - 1).to_degrees();
                let centre = 0.5 * (a + b) - self.profile.rotation;
                let folded = centre.rem_euclid(180.0);
                if folded > 90.0 {
                    180.0 - folded
                } else {
                    folded
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacingCase {
    pub spacing: f64,
    pub cd_theta: f64,
    /// One value per sector row, V·m/S.
    pub j_wall: Vec<f64>,
    pub slice_elements: usize,
    pub element_count: usize,
}

impl SpacingCase {
    /// Spread of the sector values relative to their mean.
    pub fn j_wall_spread(&self) -> f64 {
        let max = self.j_wall.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.j_wall.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = self.j_wall.iter().sum::<f64>() / self.j_wall.len().max(1) as f64;
        (max - min) / mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacingResult {
    pub sector_angles: Vec<f64>,
    pub cases: Vec<SpacingCase>,
}

impl SpacingResult {
    pub fn case(&self, spacing: f64) -> Option<&SpacingCase> {
        self.cases.iter().find(|c| (c.spacing - spacing).abs() < 1e-9)
    }

    /// One row per spacing: l, CD_theta, then one J_wall column per sector.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["spacing_mm".to_string(), "cd_theta_deg".to_string()];
        header.extend((1..=self.sector_angles.len()).map(|k| format!("j_wall_{k}")));
        header.push("slice_elements".into());
        w.write_record(&header)?;
        for c in &self.cases {
            let mut rec = vec![c.spacing.to_string(), c.cd_theta.to_string()];
            rec.extend(c.j_wall.iter().map(|j| j.to_string()));
            rec.push(c.slice_elements.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mid-slice metrics for one ring spacing.
pub fn spacing_case(config: &SpacingConfig, spacing: f64) -> Result<SpacingCase> {
    let catheter = config.catheter_for(spacing);
    let mesh = phantom_mesh(&config.profile, &catheter, &config.resolution)?;
    let element_count = mesh.element_count();
    let model = ForwardModel::new(mesh, config.forward.clone())?;
    let sigma = model.homogeneous();
    let fields = model.electrode_fields(&sigma)?;
    let cd = model.current_density(&sigma, &fields, config.spread_pair, config.forward.current_amplitude)?;
    let radial = radial_protocol();
    let rows = config
        .sector_rows
        .iter()
        .map(|&r| {
            radial
                .rows
                .get(r)
                .copied()
                .ok_or_else(|| Error::Parameter(format!("sector row {r} is outside the radial protocol")))
        })
        .collect::<Result<Vec<_>>>()?;
    let sectors = Protocol {
        name: "sectors".into(),
        rows,
    };
    let jac = model.sensitivity_from_fields(&fields, &sectors)?;
    let row_refs: Vec<&[f64]> = (0..sectors.len()).map(|i| jac.row(i)).collect();
    let metrics = slice_metrics(&cd, &row_refs, model.mesh(), &config.profile, &catheter, &config.slice)?;
    Ok(SpacingCase {
        spacing,
        cd_theta: metrics.cd_theta,
        j_wall: metrics.j_wall,
        slice_elements: metrics.slice_elements,
        element_count,
    })
}

/// Runs every spacing in parallel; the first failing case aborts the sweep.
pub fn sweep_spacing(config: &SpacingConfig) -> Result<SpacingResult> {
    if config.spacings.is_empty() {
        return Err(Error::Parameter("no ring spacings given".into()));
    }
    let cases = config
        .spacings
        .par_iter()
        .map(|&l| {
            spacing_case(config, l).map_err(|e| Error::Stage {
                stage: format!("ring spacing {l} mm"),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpacingResult {
        sector_angles: config.sector_angles(),
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sectors_cover_the_quadrant() {
        let mut a = SpacingConfig::default().sector_angles();
        a.sort_by(f64::total_cmp);
        let expected = [11.25, 33.75, 56.25, 78.75];
        for (x, y) in a.iter().zip(expected) {
            assert!((x - y).abs() < 1e-9, "{a:?}");
        }
    }

    #[test]
    fn catheter_tracks_spacing() {
        let c = SpacingConfig::default().catheter_for(25.0);
        assert_eq!(c.ring_spacing, 25.0);
        assert_eq!(c.shaft_length, 55.0);
        c.validate().unwrap();
    }

    #[test]
    fn coarse_case_runs() {
        let config = SpacingConfig {
            resolution: MeshResolution::coarse(),
            slice: SliceConfig {
                outer_fraction: 0.7,
                ..Default::default()
            },
            ..Default::default()
        };
        let case = spacing_case(&config, 10.0).unwrap();
        assert_eq!(case.j_wall.len(), 4);
        assert!(case.cd_theta > 0.0 && case.cd_theta <= 360.0);
        assert!(case.j_wall.iter().all(|&j| j > 0.0));
        assert!(sweep_spacing(&SpacingConfig {
            sector_rows: vec![9],
            spacings: vec![10.0],
            ..config
        })
        .is_err());
    }
}
