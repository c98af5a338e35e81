//! Size and ellipticity detectability over a grid of elliptical lumens.
//!
//! Every case is a noiseless radial-protocol frame on its own phantom. Two
//! signals are compared against the case's detection threshold: the change
//! in voltage for a 1 mm larger circular lumen, and the contrast between
//! the rows facing the minor and the major axis.

use std::io::Write;
use std::path::Path;

use faer::linalg::solvers::SolveLstsq;
use faer::Mat;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{detection_threshold, NoiseModel};
use crate::error::{Error, Result};
use crate::fem::{ForwardConfig, ForwardModel};
use crate::geometry::{phantom_mesh, CatheterSpec, LumenProfile, MeshResolution};
use crate::protocol::{radial_protocol, Frame, Protocol};

/// Inclusive grid `start, start + step, ..., stop` with values rounded to
/// remove accumulated floating-point drift.
pub fn grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| round_decimal(start + k as f64 * step)).collect()
}

/// Nearest double to `x` rounded to nine decimals.
fn round_decimal(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectabilityConfig {
    /// Major diameters, mm, increasing in 1 mm steps.
    pub diameters: Vec<f64>,
    /// Aspect ratios in (0, 1]; must include 1.
    pub aspect_ratios: Vec<f64>,
    pub resolution: MeshResolution,
    pub catheter: CatheterSpec,
    pub forward: ForwardConfig,
    pub noise: NoiseModel,
    /// Noisy repetitions per case for the detection-rate cross-check; 0
    /// disables it.
    pub monte_carlo_trials: usize,
}

impl Default for DetectabilityConfig {
    fn default() -> Self {
        Self {
            diameters: grid(12.0, 30.0, 1.0),
            aspect_ratios: grid(0.5, 1.0, 0.05),
            resolution: MeshResolution::desk(),
            catheter: CatheterSpec::default(),
            forward: ForwardConfig::default(),
            noise: NoiseModel::default(),
            monte_carlo_trials: 0,
        }
    }
}

impl DetectabilityConfig {
    fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if self.diameters.is_empty() || self.aspect_ratios.is_empty() {
            return Err(Error::Parameter("detectability grids must be nonempty".into()));
        }
        if self.diameters.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("diameters must be strictly increasing".into()));
        }
        if self.aspect_ratios.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::Parameter("aspect ratios must lie in (0, 1]".into()));
        }
        if !self.aspect_ratios.contains(&1.0) {
            return Err(Error::Parameter(
                "aspect-ratio grid must include 1 for the circular size signal".into(),
            ));
        }
        Ok(())
    }

    /// All (diameter, aspect ratio) cases in diameter-major order.
    pub fn cases(&self) -> Vec<(f64, f64)> {
        self.diameters
            .iter()
            .flat_map(|&d| self.aspect_ratios.iter().map(move |&f| (d, f)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectabilityCase {
    pub diameter: f64,
    pub aspect_ratio: f64,
    /// Noiseless radial-protocol voltages, V.
    pub voltages: Vec<f64>,
    /// Mean minor-axis row voltage minus mean major-axis row voltage, V.
    pub dv_ellip: f64,
    pub dv_limit: f64,
    pub detectable: bool,
    /// Fraction of noisy repetitions whose contrast exceeds the threshold.
    pub detection_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub diameter: f64,
    pub aspect_ratio: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectabilityResult {
    pub diameters: Vec<f64>,
    /// Mean absolute radial-voltage change from the circle 1 mm smaller,
    /// per diameter; `None` where either circle is missing.
    pub dv_diam: Vec<Option<f64>>,
    /// Detection threshold of each circular case, V.
    pub dv_limit_circle: Vec<Option<f64>>,
    /// Largest diameter whose size step is detectable.
    pub size_limit: Option<f64>,
    /// Largest detectable aspect ratio below 1 per diameter.
    pub f_max: Vec<Option<f64>>,
    /// Least-squares `c0 + c1 D + c2 D^2` fit of `f_max`.
    pub fit_coeffs: Option<[f64; 3]>,
    pub cases: Vec<DetectabilityCase>,
    pub failures: Vec<CaseFailure>,
}

impl DetectabilityResult {
    pub fn case(&self, diameter: f64, aspect_ratio: f64) -> Option<&DetectabilityCase> {
        self.cases
            .iter()
            .find(|c| (c.diameter - diameter).abs() < 1e-9 && (c.aspect_ratio - aspect_ratio).abs() < 1e-9)
    }

    pub fn f_max_at(&self, diameter: f64) -> Option<f64> {
        let i = self.diameters.iter().position(|d| (d - diameter).abs() < 1e-9)?;
        self.f_max[i]
    }

    /// Value of the quadratic fit at `diameter`.
    pub fn fit_at(&self, diameter: f64) -> Option<f64> {
        self.fit_coeffs.map(|c| c[0] + c[1] * diameter + c[2] * diameter * diameter)
    }

    /// One row per case: D, f, dV, dv_limit, detectable flag.
    pub fn write_cases_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["diameter_mm", "aspect_ratio", "dv_ellip_v", "dv_limit_v", "detectable", "detection_rate"])?;
        for c in &self.cases {
            w.write_record([
                c.diameter.to_string(),
                c.aspect_ratio.to_string(),
                c.dv_ellip.to_string(),
                c.dv_limit.to_string(),
                c.detectable.to_string(),
                c.detection_rate.map(|r| r.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-diameter summary plus the fit coefficients as `#` comment lines.
    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        if let Some(c) = self.fit_coeffs {
            writeln!(file, "# fit_c0={}", c[0])?;
            writeln!(file, "# fit_c1={}", c[1])?;
            writeln!(file, "# fit_c2={}", c[2])?;
        }
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        if let Some(s) = self.size_limit {
            writeln!(file, "# size_limit_mm={s}")?;
        }
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["diameter_mm", "dv_diam_v", "dv_limit_v", "f_max"])?;
        for (i, d) in self.diameters.iter().enumerate() {
            w.write_record([
                d.to_string(),
                opt(self.dv_diam[i]),
                opt(self.dv_limit_circle[i]),
                opt(self.f_max[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Failed cases, one per row.
    pub fn write_failures_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["diameter_mm", "aspect_ratio", "message"])?;
        for f in &self.failures {
            w.write_record([f.diameter.to_string(), f.aspect_ratio.to_string(), f.message.clone()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Rows grouped by the wall radius the row faces: `(major, minor)` hold the
/// rows at the largest and smallest radius. Ties (a circle) put every row in
/// both groups.
pub fn axis_rows(protocol: &Protocol, profile: &LumenProfile, catheter: &CatheterSpec) -> (Vec<usize>, Vec<usize>) {
    let radii: Vec<f64> = protocol
        .rows
        .iter()
        .map(|m| profile.wall_radius(row_azimuth(m.inject_pos, m.meas_pos, catheter), 0.0))
        .collect();
    let hi = radii.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = radii.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * hi;
    let pick = |target: f64| (0..radii.len()).filter(|&i| (radii[i] - target).abs() <= tol).collect();
    (pick(hi), pick(lo))
}

/// Circular midpoint of the azimuths of two 1-based electrodes.
fn row_azimuth(a: usize, b: usize, catheter: &CatheterSpec) -> f64 {
    let ta = catheter.electrode_azimuth(a - 1);
    let tb = catheter.electrode_azimuth(b - 1);
    let (s, c) = ((ta.sin() + tb.sin()), (ta.cos() + tb.cos()));
    s.atan2(c)
}

/// Minor-axis minus major-axis mean voltage.
pub fn ellipticity_signal(voltages: &[f64], rows: &(Vec<usize>, Vec<usize>)) -> f64 {
    let mean = |idx: &[usize]| idx.iter().map(|&i| voltages[i]).sum::<f64>() / idx.len().max(1) as f64;
    mean(&rows.1) - mean(&rows.0)
}

fn run_case(config: &DetectabilityConfig, index: usize, diameter: f64, f: f64) -> Result<DetectabilityCase> {
    let profile = LumenProfile::ellipse(diameter, f);
    let mesh = phantom_mesh(&profile, &config.catheter, &config.resolution)?;
    let model = ForwardModel::new(mesh, config.forward.clone())?;
    let protocol = radial_protocol();
    let frame = model.frame(&model.homogeneous(), &protocol)?;
    let rows = axis_rows(&protocol, &profile, &config.catheter);
    let dv_ellip = ellipticity_signal(&frame.voltages, &rows);
    let dv_limit = detection_threshold(&frame, &config.noise)?;
    let detection_rate = (config.monte_carlo_trials > 0)
        .then(|| detection_rate(&frame, &rows, config, index, dv_limit));
    Ok(DetectabilityCase {
        diameter,
        aspect_ratio: f,
        voltages: frame.voltages,
        dv_ellip,
        dv_limit,
        detectable: dv_ellip > dv_limit,
        detection_rate,
    })
}

/// Each case owns a block of RNG streams keyed by its grid index, so the
/// result does not depend on scheduling.
fn detection_rate(
    frame: &Frame,
    rows: &(Vec<usize>, Vec<usize>),
    config: &DetectabilityConfig,
    index: usize,
    dv_limit: f64,
) -> f64 {
    let stds = config.noise.std_per_row(&frame.voltages);
    let trials = config.monte_carlo_trials;
    let mut rng = config.noise.rng(index as u64);
    let mut hits = 0usize;
    let mut noisy = frame.voltages.clone();
    for _ in 0..trials {
        for ((n, v), s) in noisy.iter_mut().zip(&frame.voltages).zip(&stds) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *n = v + s * z;
        }
        if ellipticity_signal(&noisy, rows) > dv_limit {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}

/// Runs every (diameter, aspect ratio) case in parallel. Failed cases are
/// recorded and excluded.
pub fn sweep_detectability(config: &DetectabilityConfig) -> Result<DetectabilityResult> {
    config.validate()?;
    let cases = config.cases();
    let outcomes: Vec<Result<DetectabilityCase>> = cases
        .par_iter()
        .enumerate()
        .map(|(i, &(d, f))| run_case(config, i, d, f))
        .collect();
    let mut done = Vec::new();
    let mut failures = Vec::new();
    for ((d, f), out) in cases.into_iter().zip(outcomes) {
        match out {
            Ok(c) => done.push(c),
            Err(e) => failures.push(CaseFailure {
                diameter: d,
                aspect_ratio: f,
                message: e.to_string(),
            }),
        }
    }
    Ok(summarise(config, done, failures))
}

fn summarise(config: &DetectabilityConfig, cases: Vec<DetectabilityCase>, failures: Vec<CaseFailure>) -> DetectabilityResult {
    let find = |d: f64, f: f64| {
        cases
            .iter()
            .find(|c| (c.diameter - d).abs() < 1e-9 && (c.aspect_ratio - f).abs() < 1e-9)
    };
    let diameters = config.diameters.clone();
    let circles: Vec<Option<&DetectabilityCase>> = diameters.iter().map(|&d| find(d, 1.0)).collect();
    let dv_limit_circle: Vec<Option<f64>> = circles.iter().map(|c| c.map(|c| c.dv_limit)).collect();
    let dv_diam: Vec<Option<f64>> = (0..diameters.len())
        .map(|i| {
            if i == 0 || (diameters[i] - diameters[i - 1] - 1.0).abs() > 1e-9 {
                return None;
            }
            let (a, b) = (circles[i - 1]?, circles[i]?);
            let n = a.voltages.len() as f64;
            Some(a.voltages.iter().zip(&b.voltages).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
        })
        .collect();
    let size_limit = (0..diameters.len())
        .filter(|&i| matches!((dv_diam[i], dv_limit_circle[i]), (Some(s), Some(l)) if s > l))
        .map(|i| diameters[i])
        .last();
    let f_max: Vec<Option<f64>> = diameters
        .iter()
        .map(|&d| {
            cases
                .iter()
                .filter(|c| (c.diameter - d).abs() < 1e-9 && c.aspect_ratio < 1.0 && c.detectable)
                .map(|c| c.aspect_ratio)
                .fold(None, |m: Option<f64>, f| Some(m.map_or(f, |m| m.max(f))))
        })
        .collect();
    let points: Vec<(f64, f64)> = diameters
        .iter()
        .zip(&f_max)
        .filter_map(|(&d, f)| f.map(|f| (d, f)))
        .collect();
    DetectabilityResult {
        fit_coeffs: quadratic_fit(&points),
        diameters,
        dv_diam,
        dv_limit_circle,
        size_limit,
        f_max,
        cases,
        failures,
    }
}

/// Least-squares quadratic through `points`; needs at least three distinct
/// abscissae.
pub fn quadratic_fit(points: &[(f64, f64)]) -> Option<[f64; 3]> {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.dedup();
    if xs.len() < 3 {
        return None;
    }
    // Centre and scale the abscissa for conditioning.
    let mean = points.iter().map(|p| p.0).sum::<f64>() / points.len() as f64;
    let scale = points.iter().map(|p| (p.0 - mean).abs()).fold(0.0, f64::max).max(1e-12);
    let a = Mat::from_fn(points.len(), 3, |i, j| ((points[i].0 - mean) / scale).powi(j as i32));
    let b = Mat::from_fn(points.len(), 1, |i, _| points[i].1);
    let x = a.qr().solve_lstsq(&b);
    let (u0, u1, u2) = (x[(0, 0)], x[(1, 0)] / scale, x[(2, 0)] / (scale * scale));
    // Expand u0 + u1 (D - m) + u2 (D - m)^2 into powers of D.
    Some([u0 - u1 * mean + u2 * mean * mean, u1 - 2.0 * u2 * mean, u2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::radial_protocol;

    #[test]
    fn grid_is_inclusive_and_exact() {
        let g = grid(0.5, 1.0, 0.05);
        assert_eq!(g.len(), 11);
        assert_eq!(g[10], 1.0);
        assert_eq!(g[4], 0.7);
        assert_eq!(grid(12.0, 30.0, 1.0).len() * g.len(), 209);
    }

    #[test]
    fn axis_rows_for_aligned_ellipse() {
        let cat = CatheterSpec::default();
        let (major, minor) = axis_rows(&radial_protocol(), &LumenProfile::ellipse(25.0, 0.6), &cat);
        assert_eq!(major, vec![0, 3, 4, 7]);
        assert_eq!(minor, vec![1, 2, 5, 6]);
        let rotated = LumenProfile::ellipse(25.0, 0.6).with_rotation(90.0);
        let (major, minor) = axis_rows(&radial_protocol(), &rotated, &cat);
        assert_eq!(major, vec![1, 2, 5, 6]);
        assert_eq!(minor, vec![0, 3, 4, 7]);
        let (major, minor) = axis_rows(&radial_protocol(), &LumenProfile::circle(25.0), &cat);
        assert_eq!(major.len(), 8);
        assert_eq!(minor.len(), 8);
        assert_eq!(ellipticity_signal(&[1.0; 8], &(major, minor)), 0.0);
    }

    #[test]
    fn quadratic_fit_recovers_polynomial() {
        let pts: Vec<(f64, f64)> = (12..=30).map(|d| (d as f64, 1.4 - 0.04 * d as f64 + 3e-4 * (d * d) as f64)).collect();
        let c = quadratic_fit(&pts).unwrap();
        assert!((c[0] - 1.4).abs() < 1e-9 && (c[1] + 0.04).abs() < 1e-10 && (c[2] - 3e-4).abs() < 1e-12, "{c:?}");
        assert!(quadratic_fit(&pts[..2]).is_none());
    }

    #[test]
    fn summary_from_synthetic_cases() {
        let config = DetectabilityConfig {
            diameters: vec![20.0, 21.0, 22.0],
            aspect_ratios: vec![0.5, 0.75, 1.0],
            ..Default::default()
        };
        let case = |d: f64, f: f64, v: f64, ellip: f64| DetectabilityCase {
            diameter: d,
            aspect_ratio: f,
            voltages: vec![v; 8],
            dv_ellip: ellip,
            dv_limit: 0.01 * v,
            detectable: ellip > 0.01 * v,
            detection_rate: None,
        };
        let cases = vec![
            case(20.0, 1.0, 1.00, 0.0),
            case(20.0, 0.75, 1.0, 0.02),
            case(20.0, 0.5, 1.0, 0.05),
            case(21.0, 1.0, 0.98, 0.0),
            case(21.0, 0.75, 1.0, 0.005),
            case(21.0, 0.5, 1.0, 0.05),
            case(22.0, 1.0, 0.975, 0.0),
        ];
        let r = summarise(&config, cases, Vec::new());
        assert_eq!(r.dv_diam[0], None);
        assert!((r.dv_diam[1].unwrap() - 0.02).abs() < 1e-12);
        assert!((r.dv_diam[2].unwrap() - 0.005).abs() < 1e-12);
        assert_eq!(r.size_limit, Some(21.0));
        assert_eq!(r.f_max, vec![Some(0.75), Some(0.5), None]);
    }

    #[test]
    fn grid_without_circle_is_rejected() {
        let config = DetectabilityConfig {
            aspect_ratios: vec![0.5],
            ..Default::default()
        };
        assert!(sweep_detectability(&config).is_err());
    }
}
