//! One-step linearised difference imaging with zeroth-order Tikhonov
//! regularisation, and k-fold cross-validation of its weight.

use faer::linalg::solvers::SolveLstsq;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use super::{spd_solve, ReconMesh, ReconMode, Reconstruction};
use crate::error::{Error, Result};
use crate::protocol::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DifferenceMode {
    /// Reference is a measured frame of the initial state.
    TimeDifference,
    /// Reference is simulated for the unobstructed lumen.
    PseudoTimeDifference,
}

impl From<DifferenceMode> for ReconMode {
    fn from(m: DifferenceMode) -> Self {
        match m {
            DifferenceMode::TimeDifference => ReconMode::TimeDifference,
            DifferenceMode::PseudoTimeDifference => ReconMode::PseudoTimeDifference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    /// Candidate weights, increasing.
    pub lambdas: Vec<f64>,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 8,
            lambdas: lambda_grid(1e-6, 1e2, 25),
        }
    }
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn lambda_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count)
        .map(|k| 10f64.powf(a + (b - a) * k as f64 / (count - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub lambdas: Vec<f64>,
    /// Mean squared held-out prediction error per candidate, V^2.
    pub errors: Vec<f64>,
    pub selected: f64,
}

fn difference_data(frame: &Frame, reference: &Frame, rm: &ReconMesh) -> Result<Vec<f64>> {
    rm.check_frame(frame)?;
    rm.check_frame(reference)?;
    frame.check_compatible(reference)?;
    Ok(frame
        .voltages
        .iter()
        .zip(&reference.voltages)
        .map(|(a, b)| a - b)
        .collect())
}

/// Tikhonov solution `(J^T J + lambda^2 s I)^-1 J^T dv` in parameter space,
/// where `s` is the mean diagonal of `J^T J`.
pub(crate) fn tikhonov(rm: &ReconMesh, dv: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let rows = rm.protocol().len();
    let cols = rm.parameter_count();
    let jac = rm.jacobian();
    let mu = lambda * lambda * rm.sensitivity_scale();
    if dv.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; cols]);
    }
    if mu == 0.0 {
        if cols > rows {
            return Err(Error::Parameter(
                "unregularised difference solve needs at least as many measurements as unknowns".into(),
            ));
        }
        let a = Mat::from_fn(rows, cols, |i, k| jac[i * cols + k]);
        let b = Mat::from_fn(rows, 1, |i, _| dv[i]);
        let x = a.qr().solve_lstsq(&b);
        return Ok((0..cols).map(|k| x[(k, 0)]).collect());
    }
    let mut a = rm.gram().clone();
    for i in 0..rows {
        a[(i, i)] += mu;
    }
    let y = spd_solve(&a, dv)?;
    let mut x = vec![0.0; cols];
    for (i, yi) in y.iter().enumerate() {
        let row = &jac[i * cols..(i + 1) * cols];
        x.iter_mut().zip(row).for_each(|(xk, j)| *xk += yi * j);
    }
    Ok(x)
}

/// Difference image of `frame` against `reference`. Without `lambda` the
/// weight is chosen by cross-validation.
pub fn reconstruct_difference(
    frame: &Frame,
    reference: &Frame,
    rm: &ReconMesh,
    lambda: Option<f64>,
    mode: DifferenceMode,
) -> Result<Reconstruction> {
    let dv = difference_data(frame, reference, rm)?;
    let lambda = match lambda {
        Some(l) if l >= 0.0 && l.is_finite() => l,
        Some(l) => return Err(Error::Parameter(format!("lambda must be finite and non-negative, got {l}"))),
        None => cross_validate(rm, &dv, &CvConfig::default())?.selected,
    };
    let params = tikhonov(rm, &dv, lambda)?;
    let misfit = residual_norm(rm, &params, &dv);
    Ok(Reconstruction {
        values: rm.expand(&params),
        mode: mode.into(),
        lambda,
        iterations: 1,
        residual_history: vec![norm(&dv), misfit],
        steps: Vec::new(),
        stagnated: false,
        forward_solves: 0,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn residual_norm(rm: &ReconMesh, params: &[f64], dv: &[f64]) -> f64 {
    let cols = rm.parameter_count();
    let jac = rm.jacobian();
    dv.iter()
        .enumerate()
        .map(|(i, d)| {
            let p: f64 = jac[i * cols..(i + 1) * cols].iter().zip(params).map(|(a, b)| a * b).sum();
            (d - p) * (d - p)
        })
        .sum::<f64>()
        .sqrt()
}

/// Chooses the Tikhonov weight for `frame - reference` by k-fold
/// cross-validation over measurement rows grouped by injection pair.
pub fn select_lambda_cv(rm: &ReconMesh, frame: &Frame, reference: &Frame, config: &CvConfig) -> Result<CvReport> {
    let dv = difference_data(frame, reference, rm)?;
    cross_validate(rm, &dv, config)
}

/// Fold of every row: injection order index modulo the fold count.
fn fold_labels(rm: &ReconMesh, folds: usize) -> Result<Vec<usize>> {
    let protocol = rm.protocol();
    let injections = protocol.injections();
    if folds < 2 || injections.len() < folds {
        return Err(Error::Input(format!(
            "{folds} folds cannot be formed from {} distinct injections",
            injections.len()
        )));
    }
    Ok(protocol
        .rows
        .iter()
        .map(|r| injections.iter().position(|&p| p == r.injection()).unwrap() % folds)
        .collect())
}

fn cross_validate(rm: &ReconMesh, dv: &[f64], config: &CvConfig) -> Result<CvReport> {
    if config.lambdas.is_empty() || config.lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Parameter("cross-validation needs positive candidate weights".into()));
    }
    let labels = fold_labels(rm, config.folds)?;
    let g = rm.gram();
    let scale = rm.sensitivity_scale();
    let mut errors = vec![0.0; config.lambdas.len()];
    for fold in 0..config.folds {
        let train: Vec<usize> = (0..dv.len()).filter(|&i| labels[i] != fold).collect();
        let held: Vec<usize> = (0..dv.len()).filter(|&i| labels[i] == fold).collect();
        let g_tt = Mat::from_fn(train.len(), train.len(), |a, b| g[(train[a], train[b])]);
        let eig = g_tt
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Numeric(format!("eigendecomposition failed: {e:?}")))?;
        let q = eig.U();
        let vals = eig.S().column_vector();
        let d_t: Vec<f64> = train.iter().map(|&i| dv[i]).collect();
        // Coefficients of the training data in the eigenbasis.
        let proj: Vec<f64> = (0..train.len())
            .map(|k| (0..train.len()).map(|a| q[(a, k)] * d_t[a]).sum())
            .collect();
        for (li, &lambda) in config.lambdas.iter().enumerate() {
            let mu = lambda * lambda * scale;
            let coeff: Vec<f64> = proj
                .iter()
                .enumerate()
                .map(|(k, p)| p / (vals[k].max(0.0) + mu))
                .collect();
            let y: Vec<f64> = (0..train.len())
                .map(|a| (0..train.len()).map(|k| q[(a, k)] * coeff[k]).sum())
                .collect();
            for &h in &held {
                let pred: f64 = train.iter().zip(&y).map(|(&t, yt)| g[(h, t)] * yt).sum();
                errors[li] += (dv[h] - pred).powi(2);
            }
        }
    }
    errors.iter_mut().for_each(|e| *e /= dv.len() as f64);
    let best = errors
        .iter()
        .enumerate()
        .fold(0, |b, (i, &e)| if e < errors[b] { i } else { b });
    Ok(CvReport {
        lambdas: config.lambdas.clone(),
        selected: config.lambdas[best],
        errors,
    })
}
