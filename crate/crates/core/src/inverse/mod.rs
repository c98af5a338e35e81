//! Image reconstruction on a fixed reconstruction mesh: absolute
//! Gauss-Newton, linearised difference imaging, cross-validated
//! regularisation and thresholded cross-section estimates.

mod absolute;
mod analysis;
mod csa;
mod difference;

use std::path::Path;

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

pub use absolute::{reconstruct_absolute, AbsoluteConfig, GaussNewtonStep};
pub use analysis::{angular_distance, axis_distance, azimuthal_profile, AzimuthalProfile};
pub use csa::{approximate_csa, approximate_csa_series, write_csa_csv, CsaConfig, CsaEstimate};
pub use difference::{
    lambda_grid, reconstruct_difference, select_lambda_cv, CvConfig, CvReport, DifferenceMode,
};

use crate::error::{Error, Result};
use crate::fem::{ConductivityField, ForwardConfig, ForwardModel, SALINE_CONDUCTIVITY};
use crate::geometry::{io::write_vtk, phantom_mesh, CatheterSpec, LumenProfile, Mesh, MeshResolution};
use crate::protocol::{full_protocol, Frame, Protocol};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    /// Diameter of the circular model lumen, mm.
    pub diameter: f64,
    pub catheter: CatheterSpec,
    pub resolution: MeshResolution,
    pub forward: ForwardConfig,
    /// Homogeneous background conductivity, S/m.
    pub background: f64,
    pub protocol: Protocol,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            diameter: 30.0,
            catheter: CatheterSpec::default(),
            resolution: MeshResolution::reconstruction(),
            forward: ForwardConfig::default(),
            background: SALINE_CONDUCTIVITY,
            protocol: full_protocol(),
        }
    }
}

/// Reconstruction mesh with the linearised forward map at the homogeneous
/// background.
///
/// Unknowns are piecewise constant over groups of elements (`basis` maps
/// element to group); by default every element is its own group.
#[derive(Debug, Clone)]
pub struct ReconMesh {
    profile: LumenProfile,
    catheter: CatheterSpec,
    model: ForwardModel,
    protocol: Protocol,
    background: f64,
    basis: Vec<usize>,
    parameter_count: usize,
    /// Row-major rows x parameters, V per S/m.
    jacobian: Vec<f64>,
    /// `J J^T`, rows x rows.
    gram: Mat<f64>,
    reference: Frame,
}

impl ReconMesh {
    pub fn new(config: &ReconConfig) -> Result<Self> {
        if !(config.background > 0.0) {
            return Err(Error::Parameter("background conductivity must be positive".into()));
        }
        let profile = LumenProfile::circle(config.diameter);
        let mesh = phantom_mesh(&profile, &config.catheter, &config.resolution)?;
        let model = ForwardModel::new(mesh, config.forward.clone())?;
        let m = model.element_count();
        Self::assemble(
            profile,
            config.catheter.clone(),
            model,
            config.protocol.clone(),
            config.background,
            (0..m).collect(),
        )
    }

    /// Same geometry with unknowns grouped by `basis` (element -> group,
    /// groups numbered densely from 0).
    pub fn with_basis(self, basis: Vec<usize>) -> Result<Self> {
        Self::assemble(self.profile, self.catheter, self.model, self.protocol, self.background, basis)
    }

    fn assemble(
        profile: LumenProfile,
        catheter: CatheterSpec,
        model: ForwardModel,
        protocol: Protocol,
        background: f64,
        basis: Vec<usize>,
    ) -> Result<Self> {
        let m = model.element_count();
        if basis.len() != m {
            return Err(Error::Input(format!("basis has {} entries for {m} elements", basis.len())));
        }
        let parameter_count = basis.iter().max().map_or(0, |&b| b + 1);
        let mut used = vec![false; parameter_count];
        basis.iter().for_each(|&b| used[b] = true);
        if used.iter().any(|u| !u) {
            return Err(Error::Input("basis groups must be numbered densely from 0".into()));
        }
        let sigma = ConductivityField::uniform(m, background)?;
        let fields = model.electrode_fields(&sigma)?;
        let reference = model.frame_from_fields(&fields, &protocol)?;
        let full = model.sensitivity_from_fields(&fields, &protocol)?;
        let jacobian = group_columns(&full.data, protocol.len(), &basis, parameter_count);
        let gram = gram(&jacobian, protocol.len(), parameter_count);
        Ok(Self {
            profile,
            catheter,
            model,
            protocol,
            background,
            basis,
            parameter_count,
            jacobian,
            gram,
            reference,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        self.model.mesh()
    }

    pub fn model(&self) -> &ForwardModel {
        &self.model
    }

    pub fn profile(&self) -> &LumenProfile {
        &self.profile
    }

    pub fn catheter(&self) -> &CatheterSpec {
        &self.catheter
    }

    pub fn protocol(&self) -> &Protocol {
        &self.protocol
    }

    pub fn background(&self) -> f64 {
        self.background
    }

    pub fn element_count(&self) -> usize {
        self.model.element_count()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_count
    }

    pub fn basis(&self) -> &[usize] {
        &self.basis
    }

    /// Row-major sensitivity of each protocol voltage to each parameter.
    pub fn jacobian(&self) -> &[f64] {
        &self.jacobian
    }

    pub fn gram(&self) -> &Mat<f64> {
        &self.gram
    }

    /// Simulated homogeneous-background frame on this mesh.
    pub fn reference_frame(&self) -> &Frame {
        &self.reference
    }

    /// Mean of the diagonal of `J^T J`; regularisation weights are quoted
    /// relative to it so that lambda is dimensionless.
    pub fn sensitivity_scale(&self) -> f64 {
        let n = self.protocol.len();
        (0..n).map(|i| self.gram[(i, i)]).sum::<f64>() / self.parameter_count as f64
    }

    /// Per-element values from per-parameter values.
    pub fn expand(&self, parameters: &[f64]) -> Vec<f64> {
        self.basis.iter().map(|&b| parameters[b]).collect()
    }

    /// Conductivity field for per-parameter conductivities.
    pub(crate) fn field(&self, parameters: &[f64]) -> Result<ConductivityField> {
        ConductivityField::new(self.expand(parameters))
    }

    pub(crate) fn check_frame(&self, frame: &Frame) -> Result<()> {
        if frame.protocol.rows != self.protocol.rows {
            return Err(Error::Input(format!(
                "frame protocol `{}` differs from the reconstruction protocol `{}`",
                frame.protocol.name, self.protocol.name
            )));
        }
        let amp = self.model.config.current_amplitude;
        if (frame.metadata.current_amplitude - amp).abs() > 1e-9 * amp {
            return Err(Error::Input(format!(
                "frame current {} A differs from the model current {amp} A",
                frame.metadata.current_amplitude
            )));
        }
        Ok(())
    }
}

fn group_columns(data: &[f64], rows: usize, basis: &[usize], groups: usize) -> Vec<f64> {
    let cols = basis.len();
    let mut out = vec![0.0; rows * groups];
    for r in 0..rows {
        let src = &data[r * cols..(r + 1) * cols];
        let dst = &mut out[r * groups..(r + 1) * groups];
        for (e, &b) in basis.iter().enumerate() {
            dst[b] += src[e];
        }
    }
    out
}

fn gram(jac: &[f64], rows: usize, cols: usize) -> Mat<f64> {
    let j = Mat::from_fn(rows, cols, |i, k| jac[i * cols + k]);
    &j * j.transpose()
}

/// Angular-sector by radial-band grouping of the mid-plane position of each
/// element; a coarse basis for small well-posed problems.
pub fn sector_basis(mesh: &Mesh, sectors: usize, radius_edges: &[f64]) -> Vec<usize> {
    let bands = radius_edges.len() + 1;
    let mut raw: Vec<usize> = (0..mesh.element_count())
        .map(|e| {
            let c = mesh.centroid(e);
            let t = c[1].atan2(c[0]).rem_euclid(std::f64::consts::TAU);
            let s = ((t / std::f64::consts::TAU * sectors as f64) as usize).min(sectors - 1);
            let r = c[0].hypot(c[1]);
            let b = radius_edges.iter().filter(|&&edge| r > edge).count();
            s * bands + b
        })
        .collect();
    // Renumber densely in order of first use.
    let mut map = std::collections::BTreeMap::new();
    let mut next = 0;
    for g in raw.iter_mut() {
        let id = *map.entry(*g).or_insert_with(|| {
            next += 1;
            next - 1
        });
        *g = id;
    }
    raw
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReconMode {
    Absolute,
    TimeDifference,
    PseudoTimeDifference,
}

impl std::fmt::Display for ReconMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Absolute => "absolute",
            Self::TimeDifference => "td",
            Self::PseudoTimeDifference => "ptd",
        })
    }
}

impl std::str::FromStr for ReconMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" | "abs" => Ok(Self::Absolute),
            "td" => Ok(Self::TimeDifference),
            "ptd" => Ok(Self::PseudoTimeDifference),
            other => Err(Error::Parameter(format!("unknown reconstruction mode `{other}`"))),
        }
    }
}

/// Per-element conductivity (absolute) or conductivity change (difference)
/// image, S/m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub values: Vec<f64>,
    pub mode: ReconMode,
    pub lambda: f64,
    pub iterations: usize,
    /// Data misfit norm, V: the initial value followed by one entry per
    /// accepted iteration.
    pub residual_history: Vec<f64>,
    /// Absolute mode only: per-iteration line-search outcome.
    pub steps: Vec<GaussNewtonStep>,
    /// Absolute mode only: the last line search found no acceptable step.
    pub stagnated: bool,
    pub forward_solves: usize,
}

impl Reconstruction {
    pub fn write_vtk(&self, rm: &ReconMesh, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        let name = match self.mode {
            ReconMode::Absolute => "sigma",
            _ => "delta_sigma",
        };
        write_vtk(&mut f, rm.mesh(), &[(name, &self.values)])
    }

    /// `element,value` rows with 0-based element ids.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["element", "value"])?;
        for (e, v) in self.values.iter().enumerate() {
            w.write_record([e.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Solves `(A) x = b` for a small dense SPD matrix.
pub(crate) fn spd_solve(a: &Mat<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let llt = a
        .llt(Side::Lower)
        .map_err(|e| Error::Numeric(format!("regularised normal matrix is not positive definite: {e:?}")))?;
    use faer::linalg::solvers::Solve;
    let x = llt.solve(Mat::from_fn(b.len(), 1, |i, _| b[i]));
    Ok((0..b.len()).map(|i| x[(i, 0)]).collect())
}


#[cfg(test)]
mod tests;
