//! Regularised Gauss-Newton reconstruction of absolute conductivity.
//!
//! Minimises `|v - F(sigma)|^2 + lambda^2 (sigma - sigma0)^T R (sigma - sigma0)`
//! with the NOSER weight `R = diag(J^T J)^p`, rescaled by `s^(1-p)` (`s`
//! the mean diagonal) so that lambda is dimensionless. Each step is solved
//! in the measurement-space (Woodbury) form and damped by a fixed ladder of
//! step fractions.

use faer::Mat;
use serde::{Deserialize, Serialize};

use super::{spd_solve, ReconMesh, ReconMode, Reconstruction};
use crate::error::{Error, Result};
use crate::protocol::Frame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsoluteConfig {
    pub lambda: f64,
    pub max_iterations: usize,
    /// Exponent applied to the diagonal of `J^T J`.
    pub noser_exponent: f64,
    /// Step fractions tried are `1, 1/2, ..., 1/2^ladder_depth`.
    pub ladder_depth: u32,
    /// Stop once the data misfit changes by less than this fraction.
    pub tolerance: f64,
}

impl Default for AbsoluteConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            max_iterations: 4,
            noser_exponent: 0.5,
            ladder_depth: 10,
            tolerance: 1e-4,
        }
    }
}

impl AbsoluteConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Parameter("absolute reconstruction needs a positive lambda".into()));
        }
        if !(self.noser_exponent >= 0.0) || !(self.tolerance >= 0.0) {
            return Err(Error::Parameter("NOSER exponent and tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussNewtonStep {
    /// Accepted fraction of the full step; 0 when the ladder was exhausted.
    pub step_fraction: f64,
    /// Regularised objective before and after the step, under this
    /// iteration's weight.
    pub objective_before: f64,
    pub objective_after: f64,
    /// Data misfit norm after the step, V.
    pub misfit: f64,
}

struct State {
    sigma: Vec<f64>,
    voltages: Vec<f64>,
    jacobian: Vec<f64>,
}

/// Absolute conductivity image from one frame, starting from the
/// homogeneous background.
pub fn reconstruct_absolute(frame: &Frame, rm: &ReconMesh, config: &AbsoluteConfig) -> Result<Reconstruction> {
    config.validate()?;
    rm.check_frame(frame)?;
    let rows = rm.protocol().len();
    let cols = rm.parameter_count();
    let sigma0 = vec![rm.background(); cols];
    let lambda2 = config.lambda * config.lambda;
    let mut state = State {
        sigma: sigma0.clone(),
        voltages: rm.reference_frame().voltages.clone(),
        jacobian: rm.jacobian().to_vec(),
    };
    let mut forward_solves = 0;
    let misfit_of = |v: &[f64]| -> f64 {
        frame
            .voltages
            .iter()
            .zip(v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let mut misfit = misfit_of(&state.voltages);
    let mut history = vec![misfit];
    let mut steps = Vec::new();
    let mut stagnated = false;
    for _ in 0..config.max_iterations {
        if misfit == 0.0 {
            break;
        }
        let weight = noser_weight(&state.jacobian, rows, cols, config.noser_exponent);
        let prior = |s: &[f64]| -> f64 {
            s.iter()
                .zip(&sigma0)
                .zip(&weight)
                .map(|((a, b), w)| w * (a - b) * (a - b))
                .sum::<f64>()
        };
        let objective = misfit * misfit + lambda2 * prior(&state.sigma);
        let residual: Vec<f64> = frame.voltages.iter().zip(&state.voltages).map(|(a, b)| a - b).collect();
        let direction = gn_direction(&state, &residual, &weight, &sigma0, lambda2, rows, cols)?;
        let mut accepted = None;
        for k in 0..=config.ladder_depth {
            let t = 0.5f64.powi(k as i32);
            let candidate: Vec<f64> = state.sigma.iter().zip(&direction).map(|(s, d)| s + t * d).collect();
            if candidate.iter().any(|&s| !(s > 0.0)) {
                continue;
            }
            let field = rm.field(&candidate)?;
            let fields = rm.model().electrode_fields(&field)?;
            forward_solves += 1;
            let voltages = rm.model().frame_from_fields(&fields, rm.protocol())?.voltages;
            let m = misfit_of(&voltages);
            let obj = m * m + lambda2 * prior(&candidate);
            if obj < objective && m <= misfit {
                accepted = Some((t, candidate, voltages, fields, m, obj));
                break;
            }
        }
        let Some((t, candidate, voltages, fields, m, obj)) = accepted else {
            steps.push(GaussNewtonStep {
                step_fraction: 0.0,
                objective_before: objective,
                objective_after: objective,
                misfit,
            });
            stagnated = true;
            break;
        };
        let full = rm.model().sensitivity_from_fields(&fields, rm.protocol())?;
        state = State {
            jacobian: super::group_columns(&full.data, rows, rm.basis(), cols),
            sigma: candidate,
            voltages,
        };
        steps.push(GaussNewtonStep {
            step_fraction: t,
            objective_before: objective,
            objective_after: obj,
            misfit: m,
        });
        let change = (misfit - m).abs() / misfit.max(f64::MIN_POSITIVE);
        misfit = m;
        history.push(m);
        if change < config.tolerance {
            break;
        }
    }
    Ok(Reconstruction {
        values: rm.expand(&state.sigma),
        mode: ReconMode::Absolute,
        lambda: config.lambda,
        iterations: history.len() - 1,
        residual_history: history,
        steps,
        stagnated,
        forward_solves,
    })
}

/// NOSER diagonal `d^p s^(1-p)` with a floor for insensitive parameters.
fn noser_weight(jac: &[f64], rows: usize, cols: usize, exponent: f64) -> Vec<f64> {
    let mut d = vec![0.0; cols];
    for i in 0..rows {
        d.iter_mut()
            .zip(&jac[i * cols..(i + 1) * cols])
            .for_each(|(dk, j)| *dk += j * j);
    }
    let mean = d.iter().sum::<f64>() / cols as f64;
    let floor = 1e-12 * mean;
    d.iter()
        .map(|&x| x.max(floor).powf(exponent) * mean.powf(1.0 - exponent))
        .collect()
}

/// Solves `(J^T J + l2 R) delta = J^T r - l2 R (sigma - sigma0)` through
/// the rows x rows system `l2 I + J R^-1 J^T`.
fn gn_direction(
    state: &State,
    residual: &[f64],
    weight: &[f64],
    sigma0: &[f64],
    lambda2: f64,
    rows: usize,
    cols: usize,
) -> Result<Vec<f64>> {
    let jac = &state.jacobian;
    let row = |i: usize| &jac[i * cols..(i + 1) * cols];
    // b = J^T r - l2 R (sigma - sigma0)
    let mut b: Vec<f64> = state
        .sigma
        .iter()
        .zip(sigma0)
        .zip(weight)
        .map(|((s, s0), w)| -lambda2 * w * (s - s0))
        .collect();
    for (i, r) in residual.iter().enumerate() {
        b.iter_mut().zip(row(i)).for_each(|(bk, j)| *bk += r * j);
    }
    let wb: Vec<f64> = b.iter().zip(weight).map(|(x, w)| x / w).collect();
    let mut a = Mat::from_fn(rows, rows, |i, k| {
        row(i)
            .iter()
            .zip(row(k))
            .zip(weight)
            .map(|((x, y), w)| x * y / w)
            .sum::<f64>()
    });
    for i in 0..rows {
        a[(i, i)] += lambda2;
    }
    let jwb: Vec<f64> = (0..rows).map(|i| row(i).iter().zip(&wb).map(|(x, y)| x * y).sum()).collect();
    let y = spd_solve(&a, &jwb)?;
    let mut jty = vec![0.0; cols];
    for (i, yi) in y.iter().enumerate() {
        jty.iter_mut().zip(row(i)).for_each(|(t, j)| *t += yi * j);
    }
    Ok(wb
        .iter()
        .zip(&jty)
        .zip(weight)
        .map(|((x, t), w)| (x - t / w) / lambda2)
        .collect())
}
