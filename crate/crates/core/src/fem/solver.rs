//! Linear solves for the grounded electrode system: sparse Cholesky below a
//! size threshold, Jacobi-preconditioned conjugate gradients above it.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::SparseColMatRef;
use faer::{Mat, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::assembly::SystemPattern;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Largest system dimension factorised directly.
    pub direct_limit: usize,
    /// Relative residual required of every solution.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            direct_limit: 400_000,
            tolerance: 1e-10,
            max_iterations: 50_000,
        }
    }
}

/// Reusable solver state for one sparsity pattern.
#[derive(Debug)]
pub struct PatternSolver {
    symbolic: std::sync::OnceLock<std::result::Result<SymbolicLlt<usize>, String>>,
}

impl Default for PatternSolver {
    fn default() -> Self {
        Self {
            symbolic: std::sync::OnceLock::new(),
        }
    }
}

impl Clone for PatternSolver {
    fn clone(&self) -> Self {
        let out = Self::default();
        if let Some(s) = self.symbolic.get() {
            let _ = out.symbolic.set(s.clone());
        }
        out
    }
}

impl PatternSolver {
    /// Solves `A X = B` column by column, where `A` has `values` on
    /// `pattern`. Each column of `rhs` is one right-hand side.
    pub fn solve(
        &self,
        pattern: &SystemPattern,
        values: &[f64],
        rhs: &[Vec<f64>],
        config: &SolverConfig,
    ) -> Result<Vec<Vec<f64>>> {
        let dim = pattern.dim();
        if rhs.iter().any(|b| b.len() != dim) {
            return Err(Error::Input("right-hand side length differs from system size".into()));
        }
        if dim <= config.direct_limit {
            self.solve_direct(pattern, values, rhs, config)
        } else {
            rhs.par_iter()
                .map(|b| pcg(pattern, values, b, config))
                .collect()
        }
    }

    fn solve_direct(
        &self,
        pattern: &SystemPattern,
        values: &[f64],
        rhs: &[Vec<f64>],
        config: &SolverConfig,
    ) -> Result<Vec<Vec<f64>>> {
        let dim = pattern.dim();
        let symbolic = self
            .symbolic
            .get_or_init(|| SymbolicLlt::try_new(pattern.as_ref(), Side::Lower).map_err(|e| format!("{e:?}")))
            .as_ref()
            .map_err(|e| Error::Numeric(format!("symbolic factorisation failed: {e}")))?;
        let matrix = SparseColMatRef::new(pattern.as_ref(), values);
        let llt = Llt::try_new_with_symbolic(symbolic.clone(), matrix, Side::Lower)
            .map_err(|e| Error::Numeric(format!("system is not positive definite: {e:?}")))?;
        let b = Mat::from_fn(dim, rhs.len(), |i, j| rhs[j][i]);
        let x = llt.solve(&b);
        let mut out: Vec<Vec<f64>> = (0..rhs.len()).map(|j| (0..dim).map(|i| x[(i, j)]).collect()).collect();
        // Iterative refinement keeps the relative residual within tolerance
        // for poorly scaled systems.
        let mut r = vec![0.0; dim];
        for (j, xj) in out.iter_mut().enumerate() {
            let bnorm = norm(&rhs[j]).max(f64::MIN_POSITIVE);
            let mut res = 0.0;
            for _ in 0..4 {
                pattern.multiply(values, xj, &mut r);
                r.iter_mut().zip(&rhs[j]).for_each(|(ri, bi)| *ri = bi - *ri);
                res = norm(&r) / bnorm;
                if res <= config.tolerance {
                    break;
                }
                let corr = llt.solve(Mat::from_fn(dim, 1, |i, _| r[i]));
                xj.iter_mut().enumerate().for_each(|(i, v)| *v += corr[(i, 0)]);
            }
            if res > config.tolerance {
                return Err(Error::NonConvergence {
                    iterations: 4,
                    residual: res,
                });
            }
        }
        Ok(out)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Jacobi-preconditioned conjugate gradients.
pub fn pcg(pattern: &SystemPattern, values: &[f64], b: &[f64], config: &SolverConfig) -> Result<Vec<f64>> {
    let dim = pattern.dim();
    let inv_diag: Vec<f64> = (0..dim).map(|i| 1.0 / values[pattern.position(i, i)]).collect();
    let bnorm = norm(b);
    let mut x = vec![0.0; dim];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; dim];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for it in 0..config.max_iterations {
        pattern.multiply(values, &p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::Numeric("conjugate gradients met a non-positive curvature".into()));
        }
        let alpha = rz / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= alpha * api);
        let res = norm(&r) / bnorm;
        if res <= config.tolerance {
            return Ok(x);
        }
        if it + 1 == config.max_iterations {
            return Err(Error::NonConvergence {
                iterations: config.max_iterations,
                residual: res,
            });
        }
        z.iter_mut().zip(r.iter().zip(&inv_diag)).for_each(|(zi, (ri, d))| *zi = ri * d);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    Err(Error::NonConvergence {
        iterations: config.max_iterations,
        residual: f64::NAN,
    })
}
