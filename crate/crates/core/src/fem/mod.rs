//! Complete-electrode-model forward solver, adjoint sensitivities and
//! current-density metrics.
//!
//! Every electrode carries one unit-current field computed with a single
//! factorisation; any balanced injection pattern is a difference of two
//! such fields, so a whole protocol costs one factorisation and as many
//! back-substitutions as there are electrodes.

pub mod assembly;
pub mod metrics;
pub mod solver;

pub use metrics::{current_density, minimal_window, slice_elements, slice_metrics, CdThreshold, SliceConfig, SliceMetrics};
pub use solver::SolverConfig;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use self::assembly::{dot, ElectrodeSurfaces, ElementGeometry, SystemPattern};
use self::solver::PatternSolver;
use crate::error::{Error, Result};
use crate::geometry::Mesh;
use crate::protocol::{Frame, FrameMetadata, Measurement, Protocol};

/// Saline conductivity used throughout, S/m.
pub const SALINE_CONDUCTIVITY: f64 = 1.6;
/// Injected current amplitude, A.
pub const DEFAULT_CURRENT: f64 = 141e-6;
/// Electrode contact impedance, ohm m^2.
pub const DEFAULT_CONTACT_IMPEDANCE: f64 = 1e-3;

/// Per-element conductivity, S/m; every value positive and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityField {
    values: Vec<f64>,
}

impl ConductivityField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((e, v)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Parameter(format!("conductivity {v} at element {e} is not positive")));
        }
        Ok(Self { values })
    }

    pub fn uniform(element_count: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; element_count])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardConfig {
    /// Contact impedance shared by all electrodes, ohm m^2.
    pub contact_impedance: f64,
    /// Injected current amplitude, A.
    pub current_amplitude: f64,
    pub solver: SolverConfig,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            contact_impedance: DEFAULT_CONTACT_IMPEDANCE,
            current_amplitude: DEFAULT_CURRENT,
            solver: SolverConfig::default(),
        }
    }
}

impl ForwardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.contact_impedance > 0.0) {
            return Err(Error::Parameter("contact impedance must be positive".into()));
        }
        if !(self.current_amplitude > 0.0) {
            return Err(Error::Parameter("current amplitude must be positive".into()));
        }
        Ok(())
    }
}

/// Potentials for the unit current entering electrode `k` and leaving
/// evenly through all electrodes; stored as node values followed by
/// electrode values, in V/A.
#[derive(Debug, Clone)]
pub struct ElectrodeFields {
    node_count: usize,
    fields: Vec<Vec<f64>>,
}

impl ElectrodeFields {
    pub fn electrode_count(&self) -> usize {
        self.fields.len()
    }

    /// Full potential vector for unit current from `pos` to `neg` (0-based).
    pub fn pair_potential(&self, pos: usize, neg: usize) -> Vec<f64> {
        self.fields[pos]
            .iter()
            .zip(&self.fields[neg])
            .map(|(a, b)| a - b)
            .collect()
    }

    /// Electrode potential `m` for unit current from `pos` to `neg` (0-based).
    fn electrode_value(&self, pos: usize, neg: usize, m: usize) -> f64 {
        let i = self.node_count + m;
        self.fields[pos][i] - self.fields[neg][i]
    }

    /// Transfer impedance of a protocol row (1-based indices), ohm.
    pub fn transfer(&self, row: &Measurement) -> f64 {
        let (a, b) = (row.inject_pos - 1, row.inject_neg - 1);
        self.electrode_value(a, b, row.meas_pos - 1) - self.electrode_value(a, b, row.meas_neg - 1)
    }
}

/// Potentials of each distinct injection of a protocol at the configured
/// current; electrode potentials have zero mean.
#[derive(Debug, Clone)]
pub struct ForwardSolution {
    pub injections: Vec<(usize, usize)>,
    pub node_potentials: Vec<Vec<f64>>,
    pub electrode_potentials: Vec<Vec<f64>>,
    pub injected_current: f64,
}

/// Rows are protocol measurements, columns are elements; V m/S.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl SensitivityMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, e: usize) -> f64 {
        self.data[i * self.cols + e]
    }
}

/// Precomputed geometry, pattern and solver state for one mesh.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    mesh: Mesh,
    geometry: ElementGeometry,
    surfaces: ElectrodeSurfaces,
    pattern: SystemPattern,
    solver: PatternSolver,
    pub config: ForwardConfig,
}

impl ForwardModel {
    pub fn new(mesh: Mesh, config: ForwardConfig) -> Result<Self> {
        config.validate()?;
        mesh.validate()?;
        let geometry = ElementGeometry::new(&mesh)?;
        let surfaces = ElectrodeSurfaces::new(&mesh)?;
        let pattern = SystemPattern::new(&mesh);
        Ok(Self {
            mesh,
            geometry,
            surfaces,
            pattern,
            solver: PatternSolver::default(),
            config,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn geometry(&self) -> &ElementGeometry {
        &self.geometry
    }

    pub fn element_count(&self) -> usize {
        self.mesh.element_count()
    }

    pub fn electrode_count(&self) -> usize {
        self.surfaces.count()
    }

    /// Uniform saline conductivity on this mesh.
    pub fn homogeneous(&self) -> ConductivityField {
        ConductivityField {
            values: vec![SALINE_CONDUCTIVITY; self.element_count()],
        }
    }

    /// Assembled matrix values on [`ForwardModel::pattern`].
    pub fn assemble(&self, sigma: &ConductivityField, grounded: bool) -> Result<Vec<f64>> {
        assembly::assemble(
            &self.pattern,
            &self.geometry,
            &self.surfaces,
            &self.mesh,
            sigma.values(),
            self.config.contact_impedance,
            grounded,
        )
    }

    pub fn pattern(&self) -> &SystemPattern {
        &self.pattern
    }

    /// Solves the unit-current field of every electrode.
    pub fn electrode_fields(&self, sigma: &ConductivityField) -> Result<ElectrodeFields> {
        let values = self.assemble(sigma, true)?;
        let n = self.mesh.node_count();
        let l = self.electrode_count();
        let rhs: Vec<Vec<f64>> = (0..l)
            .map(|k| {
                let mut b = vec![0.0; n + l];
                b[n + k] = 1.0;
                b
            })
            .collect();
        let fields = self.solver.solve(&self.pattern, &values, &rhs, &self.config.solver)?;
        Ok(ElectrodeFields { node_count: n, fields })
    }

    fn check_protocol(&self, protocol: &Protocol) -> Result<()> {
        let l = self.electrode_count();
        for r in &protocol.rows {
            for e in [r.inject_pos, r.inject_neg, r.meas_pos, r.meas_neg] {
                if e == 0 || e > l {
                    return Err(Error::Input(format!("protocol row {r} references electrode {e}; mesh has {l}")));
                }
            }
            if r.inject_pos == r.inject_neg {
                return Err(Error::Input(format!("protocol row {r} injects on a single electrode")));
            }
        }
        Ok(())
    }

    /// Voltages of `protocol` at the configured current.
    pub fn frame_from_fields(&self, fields: &ElectrodeFields, protocol: &Protocol) -> Result<Frame> {
        self.check_protocol(protocol)?;
        let amp = self.config.current_amplitude;
        let voltages = protocol.rows.iter().map(|r| amp * fields.transfer(r)).collect();
        Frame::new(
            protocol.clone(),
            voltages,
            FrameMetadata {
                current_amplitude: amp,
                ..Default::default()
            },
        )
    }

    pub fn frame(&self, sigma: &ConductivityField, protocol: &Protocol) -> Result<Frame> {
        self.check_protocol(protocol)?;
        let fields = self.electrode_fields(sigma)?;
        self.frame_from_fields(&fields, protocol)
    }

    pub fn solution(&self, sigma: &ConductivityField, protocol: &Protocol) -> Result<ForwardSolution> {
        self.check_protocol(protocol)?;
        let fields = self.electrode_fields(sigma)?;
        let amp = self.config.current_amplitude;
        let n = self.mesh.node_count();
        let injections = protocol.injections();
        let mut node_potentials = Vec::with_capacity(injections.len());
        let mut electrode_potentials = Vec::with_capacity(injections.len());
        for &(a, b) in &injections {
            let mut u = fields.pair_potential(a - 1, b - 1);
            u.iter_mut().for_each(|v| *v *= amp);
            electrode_potentials.push(u.split_off(n));
            node_potentials.push(u);
        }
        Ok(ForwardSolution {
            injections,
            node_potentials,
            electrode_potentials,
            injected_current: amp,
        })
    }

    /// Current leaving through each electrode for a solution injection, A;
    /// positive where current enters the domain.
    pub fn electrode_currents(&self, node_potentials: &[f64], electrode_potentials: &[f64]) -> Vec<f64> {
        let z = self.config.contact_impedance;
        self.surfaces
            .faces
            .iter()
            .enumerate()
            .map(|(k, faces)| {
                faces
                    .iter()
                    .map(|(f, area)| {
                        let mean_u = f.iter().map(|&i| node_potentials[i]).sum::<f64>() / 3.0;
                        area * (electrode_potentials[k] - mean_u) / z
                    })
                    .sum()
            })
            .collect()
    }

    /// Per-element gradient of a full potential vector, V/m.
    pub fn element_gradients(&self, potential: &[f64]) -> Vec<[f64; 3]> {
        self.mesh
            .elements
            .iter()
            .zip(&self.geometry.gradients)
            .map(|(t, g)| {
                let mut out = [0.0; 3];
                for k in 0..4 {
                    let u = potential[t[k]];
                    for d in 0..3 {
                        out[d] += u * g[k][d];
                    }
                }
                out
            })
            .collect()
    }

    /// Adjoint sensitivity of each protocol voltage to each element's
    /// conductivity, from precomputed fields.
    pub fn sensitivity_from_fields(&self, fields: &ElectrodeFields, protocol: &Protocol) -> Result<SensitivityMatrix> {
        self.check_protocol(protocol)?;
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for r in &protocol.rows {
            pairs.push(r.injection());
            pairs.push(r.measurement());
        }
        pairs.sort_unstable();
        pairs.dedup();
        let grads: HashMap<(usize, usize), Vec<[f64; 3]>> = pairs
            .par_iter()
            .map(|&(a, b)| ((a, b), self.element_gradients(&fields.pair_potential(a - 1, b - 1))))
            .collect();
        let m = self.element_count();
        let amp = self.config.current_amplitude;
        let vol = &self.geometry.volumes;
        let mut data = vec![0.0; protocol.len() * m];
        data.par_chunks_mut(m.max(1)).zip(&protocol.rows).for_each(|(row, r)| {
            let gi = &grads[&r.injection()];
            let gm = &grads[&r.measurement()];
            for e in 0..m {
                row[e] = -amp * vol[e] * dot(&gi[e], &gm[e]);
            }
        });
        Ok(SensitivityMatrix {
            rows: protocol.len(),
            cols: m,
            data,
        })
    }

    pub fn sensitivity(&self, sigma: &ConductivityField, protocol: &Protocol) -> Result<SensitivityMatrix> {
        self.check_protocol(protocol)?;
        let fields = self.electrode_fields(sigma)?;
        self.sensitivity_from_fields(&fields, protocol)
    }

    /// Current-density magnitude per element for an injection pair
    /// (1-based), A/m^2.
    pub fn current_density(
        &self,
        sigma: &ConductivityField,
        fields: &ElectrodeFields,
        pair: (usize, usize),
        amplitude: f64,
    ) -> Result<Vec<f64>> {
        let l = self.electrode_count();
        if pair.0 == 0 || pair.1 == 0 || pair.0 > l || pair.1 > l || pair.0 == pair.1 {
            return Err(Error::Input(format!("invalid injection pair {pair:?}")));
        }
        if !(amplitude > 0.0) {
            return Err(Error::Parameter("current amplitude must be positive".into()));
        }
        let g = self.element_gradients(&fields.pair_potential(pair.0 - 1, pair.1 - 1));
        Ok(g
            .iter()
            .zip(sigma.values())
            .map(|(g, s)| amplitude * s * dot(g, g).sqrt())
            .collect())
    }
}

/// One-shot forward solve with default settings at `current_amplitude`.
pub fn solve_forward(
    mesh: &Mesh,
    sigma: &ConductivityField,
    protocol: &Protocol,
    current_amplitude: f64,
) -> Result<Frame> {
    let config = ForwardConfig {
        current_amplitude,
        ..Default::default()
    };
    ForwardModel::new(mesh.clone(), config)?.frame(sigma, protocol)
}

/// One-shot sensitivity matrix with default settings.
pub fn compute_sensitivity(mesh: &Mesh, sigma: &ConductivityField, protocol: &Protocol) -> Result<SensitivityMatrix> {
    ForwardModel::new(mesh.clone(), ForwardConfig::default())?.sensitivity(sigma, protocol)
}
