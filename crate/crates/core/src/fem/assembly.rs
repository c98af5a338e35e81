//! Complete-electrode-model system assembly.
//!
//! Unknowns are ordered as all node potentials followed by one potential per
//! electrode. Geometry is converted to metres on construction, so assembled
//! entries are in SI units.

use faer::sparse::{SymbolicSparseColMat, SymbolicSparseColMatRef};

use crate::error::{Error, Result};
use crate::geometry::Mesh;

/// Millimetres to metres.
pub const MM: f64 = 1e-3;

/// Per-element volumes (m^3) and barycentric gradients (1/m).
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    pub volumes: Vec<f64>,
    pub gradients: Vec<[[f64; 3]; 4]>,
}

impl ElementGeometry {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        let mut volumes = Vec::with_capacity(mesh.element_count());
        let mut gradients = Vec::with_capacity(mesh.element_count());
        for (e, t) in mesh.elements.iter().enumerate() {
            let p: Vec<[f64; 3]> = t
                .iter()
                .map(|&n| {
                    let q = mesh.nodes[n];
                    [q[0] * MM, q[1] * MM, q[2] * MM]
                })
                .collect();
            let d = |k: usize| [p[k][0] - p[0][0], p[k][1] - p[0][1], p[k][2] - p[0][2]];
            let (a, b, c) = (d(1), d(2), d(3));
            let det = a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
                + a[2] * (b[0] * c[1] - b[1] * c[0]);
            if !(det > 0.0) {
                return Err(Error::Geometry(format!("element {e} has non-positive volume")));
            }
            // Rows of the inverse Jacobian are the gradients of the
            // barycentric coordinates of vertices 1..3.
            let inv = 1.0 / det;
            let g1 = scale(cross(b, c), inv);
            let g2 = scale(cross(c, a), inv);
            let g3 = scale(cross(a, b), inv);
            let g0 = [
                -(g1[0] + g2[0] + g3[0]),
                -(g1[1] + g2[1] + g3[1]),
                -(g1[2] + g2[2] + g3[2]),
            ];
            volumes.push(det / 6.0);
            gradients.push([g0, g1, g2, g3]);
        }
        Ok(Self { volumes, gradients })
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Electrode surface faces with their areas in m^2.
#[derive(Debug, Clone)]
pub struct ElectrodeSurfaces {
    pub faces: Vec<Vec<([usize; 3], f64)>>,
    pub areas: Vec<f64>,
}

impl ElectrodeSurfaces {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        if mesh.electrodes.is_empty() {
            return Err(Error::Input("mesh has no electrodes".into()));
        }
        let mut faces = Vec::with_capacity(mesh.electrodes.len());
        let mut areas = Vec::with_capacity(mesh.electrodes.len());
        for (k, patch) in mesh.electrodes.iter().enumerate() {
            if patch.is_empty() {
                return Err(Error::Input(format!("electrode {} owns no faces", k + 1)));
            }
            let list: Vec<([usize; 3], f64)> = patch
                .iter()
                .map(|f| {
                    let a = crate::geometry::triangle_area(
                        mesh.nodes[f[0]],
                        mesh.nodes[f[1]],
                        mesh.nodes[f[2]],
                    );
                    (*f, a * MM * MM)
                })
                .collect();
            areas.push(list.iter().map(|(_, a)| a).sum());
            faces.push(list);
        }
        Ok(Self { faces, areas })
    }

    pub fn count(&self) -> usize {
        self.areas.len()
    }
}

/// Symmetric sparsity pattern stored as full compressed columns (which
/// equal compressed rows by symmetry), sorted within each column.
#[derive(Debug, Clone)]
pub struct SystemPattern {
    pub symbolic: SymbolicSparseColMat<usize>,
    pub node_count: usize,
    pub electrode_count: usize,
}

impl SystemPattern {
    pub fn new(mesh: &Mesh) -> Self {
        let n = mesh.node_count();
        let l = mesh.electrode_count();
        let dim = n + l;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); dim];
        for t in &mesh.elements {
            for &a in t {
                adj[a].extend_from_slice(t);
            }
        }
        for (k, patch) in mesh.electrodes.iter().enumerate() {
            let ek = n + k;
            for f in patch {
                for &a in f {
                    adj[a].push(ek);
                    adj[ek].push(a);
                }
            }
        }
        // The grounding term couples every pair of electrodes.
        for k in 0..l {
            adj[n + k].extend(n..n + l);
        }
        let mut col_ptr = Vec::with_capacity(dim + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for (i, mut list) in adj.into_iter().enumerate() {
            list.push(i);
            list.sort_unstable();
            list.dedup();
            row_idx.extend_from_slice(&list);
            col_ptr.push(row_idx.len());
        }
        Self {
            symbolic: SymbolicSparseColMat::new_checked(dim, dim, col_ptr, None, row_idx),
            node_count: n,
            electrode_count: l,
        }
    }

    pub fn dim(&self) -> usize {
        self.node_count + self.electrode_count
    }

    pub fn nnz(&self) -> usize {
        self.symbolic.row_idx().len()
    }

    pub fn as_ref(&self) -> SymbolicSparseColMatRef<'_, usize> {
        self.symbolic.as_ref()
    }

    /// Storage position of entry `(row, col)`; panics if it is not in the
    /// pattern.
    #[inline]
    pub fn position(&self, row: usize, col: usize) -> usize {
        let ptr = self.symbolic.col_ptr();
        let rows = &self.symbolic.row_idx()[ptr[col]..ptr[col + 1]];
        ptr[col] + rows.binary_search(&row).expect("entry outside sparsity pattern")
    }

    /// Column `col` as (row indices, storage offset).
    #[inline]
    pub fn column(&self, col: usize) -> (&[usize], usize) {
        let ptr = self.symbolic.col_ptr();
        (&self.symbolic.row_idx()[ptr[col]..ptr[col + 1]], ptr[col])
    }

    /// `y = A x` for values laid out on this pattern.
    pub fn multiply(&self, values: &[f64], x: &[f64], y: &mut [f64]) {
        for (j, yj) in y.iter_mut().enumerate() {
            let (rows, off) = self.column(j);
            let mut acc = 0.0;
            for (k, &i) in rows.iter().enumerate() {
                acc += values[off + k] * x[i];
            }
            *yj = acc;
        }
    }
}

/// Scale of the zero-mean electrode constraint `c * e e^T`.
pub fn grounding_weight(surfaces: &ElectrodeSurfaces, contact_impedance: f64) -> f64 {
    surfaces.areas.iter().sum::<f64>() / (surfaces.count() as f64 * contact_impedance)
}

/// Assembles the complete-electrode-model matrix. With `grounded` the
/// zero-mean electrode constraint is added, making it positive definite.
pub fn assemble(
    pattern: &SystemPattern,
    geometry: &ElementGeometry,
    surfaces: &ElectrodeSurfaces,
    mesh: &Mesh,
    sigma: &[f64],
    contact_impedance: f64,
    grounded: bool,
) -> Result<Vec<f64>> {
    if !(contact_impedance > 0.0) || !contact_impedance.is_finite() {
        return Err(Error::Parameter(format!(
            "contact impedance must be positive, got {contact_impedance}"
        )));
    }
    if sigma.len() != mesh.element_count() {
        return Err(Error::Parameter(format!(
            "{} conductivities for {} elements",
            sigma.len(),
            mesh.element_count()
        )));
    }
    if let Some(bad) = sigma.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(Error::Parameter(format!("non-positive conductivity {bad}")));
    }
    let mut values = vec![0.0; pattern.nnz()];
    for (e, t) in mesh.elements.iter().enumerate() {
        let g = &geometry.gradients[e];
        let w = sigma[e] * geometry.volumes[e];
        for a in 0..4 {
            for b in 0..4 {
                values[pattern.position(t[a], t[b])] += w * dot(&g[a], &g[b]);
            }
        }
    }
    let n = pattern.node_count;
    let zinv = 1.0 / contact_impedance;
    for (k, faces) in surfaces.faces.iter().enumerate() {
        let ek = n + k;
        for (f, area) in faces {
            let mass = zinv * area / 12.0;
            let coupling = -zinv * area / 3.0;
            for a in 0..3 {
                for b in 0..3 {
                    let m = if a == b { 2.0 * mass } else { mass };
                    values[pattern.position(f[a], f[b])] += m;
                }
                values[pattern.position(f[a], ek)] += coupling;
                values[pattern.position(ek, f[a])] += coupling;
            }
        }
        values[pattern.position(ek, ek)] += zinv * surfaces.areas[k];
    }
    if grounded {
        let c = grounding_weight(surfaces, contact_impedance);
        let l = surfaces.count();
        for a in 0..l {
            for b in 0..l {
                values[pattern.position(n + a, n + b)] += c;
            }
        }
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{phantom_mesh, CatheterSpec, LumenProfile, MeshResolution};

    fn coarse() -> Mesh {
        phantom_mesh(&LumenProfile::circle(20.0), &CatheterSpec::default(), &MeshResolution::coarse()).unwrap()
    }

    #[test]
    fn gradients_reproduce_linear_functions() {
        let mesh = coarse();
        let geo = ElementGeometry::new(&mesh).unwrap();
        for (e, t) in mesh.elements.iter().enumerate().step_by(97) {
            // u = 2x - y + 3z (metres) has gradient (2, -1, 3).
            let mut grad = [0.0; 3];
            for (k, &n) in t.iter().enumerate() {
                let p = mesh.nodes[n];
                let u = (2.0 * p[0] - p[1] + 3.0 * p[2]) * MM;
                for d in 0..3 {
                    grad[d] += u * geo.gradients[e][k][d];
                }
            }
            for (g, want) in grad.iter().zip([2.0, -1.0, 3.0]) {
                assert!((g - want).abs() < 1e-9, "{g} vs {want}");
            }
        }
        let total: f64 = geo.volumes.iter().sum();
        assert!((total - mesh.total_volume() * 1e-9).abs() < 1e-12 * total.max(1.0) + 1e-15);
    }

    #[test]
    fn matrix_is_symmetric_and_singular_on_constants() {
        let mesh = coarse();
        let pattern = SystemPattern::new(&mesh);
        let geo = ElementGeometry::new(&mesh).unwrap();
        let surf = ElectrodeSurfaces::new(&mesh).unwrap();
        let sigma = vec![1.6; mesh.element_count()];
        let values = assemble(&pattern, &geo, &surf, &mesh, &sigma, 1e-3, false).unwrap();
        for j in 0..pattern.dim() {
            let (rows, off) = pattern.column(j);
            for (k, &i) in rows.iter().enumerate() {
                let other = values[pattern.position(j, i)];
                assert!((values[off + k] - other).abs() <= 1e-12 * other.abs().max(1.0));
            }
        }
        let ones = vec![1.0; pattern.dim()];
        let mut y = vec![0.0; pattern.dim()];
        pattern.multiply(&values, &ones, &mut y);
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(y.iter().all(|v| v.abs() < 1e-10 * scale));
        // Node-node off-diagonal pattern equals element adjacency.
        let mut adjacent = std::collections::HashSet::new();
        for t in &mesh.elements {
            for &a in t {
                for &b in t {
                    adjacent.insert((a, b));
                }
            }
        }
        for j in 0..pattern.node_count {
            let (rows, _) = pattern.column(j);
            for &i in rows.iter().filter(|&&i| i < pattern.node_count) {
                assert!(adjacent.contains(&(i, j)));
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let mesh = coarse();
        let pattern = SystemPattern::new(&mesh);
        let geo = ElementGeometry::new(&mesh).unwrap();
        let surf = ElectrodeSurfaces::new(&mesh).unwrap();
        let mut sigma = vec![1.6; mesh.element_count()];
        assert!(assemble(&pattern, &geo, &surf, &mesh, &sigma, 0.0, true).is_err());
        sigma[3] = 0.0;
        assert!(matches!(
            assemble(&pattern, &geo, &surf, &mesh, &sigma, 1e-3, true),
            Err(Error::Parameter(_))
        ));
    }
}
