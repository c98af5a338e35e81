//! Tetrahedral volume mesh with electrode surface patches.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Tetrahedral mesh of the saline-filled balloon. Coordinates are in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<Point>,
    pub elements: Vec<[usize; 4]>,
    pub element_region: Vec<u32>,
    /// Boundary triangles owned by each electrode, as node triples.
    pub electrodes: Vec<Vec<[usize; 3]>>,
    pub characteristic_size: f64,
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

/// Signed volume of the tetrahedron (a, b, c, d); positive when (b-a, c-a, d-a)
/// is right-handed.
pub fn signed_volume(a: Point, b: Point, c: Point, d: Point) -> f64 {
    dot(sub(b, a), cross(sub(c, a), sub(d, a))) / 6.0
}

pub fn triangle_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * norm(cross(sub(b, a), sub(c, a)))
}

impl Mesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn electrode_count(&self) -> usize {
        self.electrodes.len()
    }

    pub fn element_points(&self, e: usize) -> [Point; 4] {
        self.elements[e].map(|n| self.nodes[n])
    }

    pub fn element_volume(&self, e: usize) -> f64 {
        let [a, b, c, d] = self.element_points(e);
        signed_volume(a, b, c, d)
    }

    pub fn volumes(&self) -> Vec<f64> {
        (0..self.element_count()).map(|e| self.element_volume(e)).collect()
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes().iter().sum()
    }

    pub fn centroid(&self, e: usize) -> Point {
        let p = self.element_points(e);
        let mut c = [0.0; 3];
        for q in p {
            for k in 0..3 {
                c[k] += 0.25 * q[k];
            }
        }
        c
    }

    pub fn centroids(&self) -> Vec<Point> {
        (0..self.element_count()).map(|e| self.centroid(e)).collect()
    }

    pub fn electrode_area(&self, electrode: usize) -> f64 {
        self.electrodes[electrode]
            .iter()
            .map(|f| triangle_area(self.nodes[f[0]], self.nodes[f[1]], self.nodes[f[2]]))
            .sum()
    }

    /// Triangles that belong to exactly one element, with their owning element.
    pub fn boundary_faces(&self) -> Vec<([usize; 3], usize)> {
        let mut seen: HashMap<[usize; 3], (usize, [usize; 3], usize)> =
            HashMap::with_capacity(self.elements.len() * 2);
        for (e, tet) in self.elements.iter().enumerate() {
            for skip in 0..4 {
                let face: Vec<usize> = (0..4).filter(|&k| k != skip).map(|k| tet[k]).collect();
                let face = [face[0], face[1], face[2]];
                let mut key = face;
                key.sort_unstable();
                seen.entry(key)
                    .and_modify(|entry| entry.0 += 1)
                    .or_insert((1, face, e));
            }
        }
        let mut out: Vec<([usize; 3], usize)> = seen
            .into_values()
            .filter(|(count, _, _)| *count == 1)
            .map(|(_, face, e)| (face, e))
            .collect();
        out.sort_unstable();
        out
    }

    /// Elements that own at least one electrode face.
    pub fn electrode_adjacent_elements(&self) -> Vec<usize> {
        let mut faces: HashMap<[usize; 3], ()> = HashMap::new();
        for patch in &self.electrodes {
            for f in patch {
                let mut k = *f;
                k.sort_unstable();
                faces.insert(k, ());
            }
        }
        let mut out: Vec<usize> = self
            .boundary_faces()
            .into_iter()
            .filter(|(f, _)| {
                let mut k = *f;
                k.sort_unstable();
                faces.contains_key(&k)
            })
            .map(|(_, e)| e)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Checks the structural invariants: positive volumes, in-range indices,
    /// non-empty and pairwise disjoint electrode patches on the boundary.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if self.element_region.len() != self.elements.len() {
            return Err(Error::Meshing("region label count mismatch".into()));
        }
        for (e, tet) in self.elements.iter().enumerate() {
            if tet.iter().any(|&v| v >= n) {
                return Err(Error::Meshing(format!("element {e} references a missing node")));
            }
            if self.element_volume(e) <= 0.0 {
                return Err(Error::Meshing(format!("element {e} has non-positive volume")));
            }
        }
        let boundary: HashMap<[usize; 3], ()> = self
            .boundary_faces()
            .into_iter()
            .map(|(mut f, _)| {
                f.sort_unstable();
                (f, ())
            })
            .collect();
        let mut owner: HashMap<[usize; 3], usize> = HashMap::new();
        for (k, patch) in self.electrodes.iter().enumerate() {
            if patch.is_empty() {
                return Err(Error::Meshing(format!("electrode {} owns no faces", k + 1)));
            }
            for f in patch {
                let mut key = *f;
                key.sort_unstable();
                if !boundary.contains_key(&key) {
                    return Err(Error::Meshing(format!(
                        "electrode {} face {:?} is not on the boundary",
                        k + 1,
                        f
                    )));
                }
                if let Some(prev) = owner.insert(key, k) {
                    return Err(Error::Meshing(format!(
                        "electrodes {} and {} share a face",
                        prev + 1,
                        k + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Summary of element shape quality. Never mutates the mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub element_count: usize,
    pub min_dihedral_deg: f64,
    pub max_dihedral_deg: f64,
    /// Bin edges are 1, 2, 3, 5, 10, inf; ratio 1 is the regular tetrahedron.
    pub aspect_histogram: [usize; 5],
    pub max_aspect_ratio: f64,
    pub signed_volume_sum: f64,
    pub absolute_volume_sum: f64,
    /// Elements with non-positive volume or aspect ratio above the bound.
    pub flagged: Vec<usize>,
    pub volume_check_passed: bool,
}

pub const ASPECT_BINS: [f64; 5] = [2.0, 3.0, 5.0, 10.0, f64::INFINITY];

/// Dihedral angles (radians) at the six edges of a tetrahedron.
fn dihedral_angles(p: [Point; 4]) -> [f64; 6] {
    // Face k is opposite vertex k; its outward normal direction.
    let faces = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];
    let normals: Vec<Point> = faces
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let n = cross(sub(p[f[1]], p[f[0]]), sub(p[f[2]], p[f[0]]));
            let s = if dot(n, sub(p[k], p[f[0]])) > 0.0 { -1.0 } else { 1.0 };
            let l = norm(n).max(f64::MIN_POSITIVE);
            [s * n[0] / l, s * n[1] / l, s * n[2] / l]
        })
        .collect();
    let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    pairs.map(|(a, b)| std::f64::consts::PI - dot(normals[a], normals[b]).clamp(-1.0, 1.0).acos())
}

/// Normalised radius ratio R / (3 r); 1 for the regular tetrahedron.
fn aspect_ratio(p: [Point; 4]) -> f64 {
    let vol = signed_volume(p[0], p[1], p[2], p[3]).abs();
    if vol <= 0.0 {
        return f64::INFINITY;
    }
    let area: f64 = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]
        .iter()
        .map(|f| triangle_area(p[f[0]], p[f[1]], p[f[2]]))
        .sum();
    let inradius = 3.0 * vol / area;
    // Circumradius from the edge-length formula.
    let a = sub(p[1], p[0]);
    let b = sub(p[2], p[0]);
    let c = sub(p[3], p[0]);
    let num = [cross(b, c), cross(c, a), cross(a, b)];
    let w = [dot(a, a), dot(b, b), dot(c, c)];
    let mut v = [0.0; 3];
    for k in 0..3 {
        for (n, wk) in num.iter().zip(w) {
            v[k] += wk * n[k];
        }
    }
    let circumradius = norm(v) / (12.0 * vol);
    circumradius / (3.0 * inradius)
}

/// Quality report; elements with aspect ratio above `max_aspect` are flagged.
pub fn mesh_quality(mesh: &Mesh, max_aspect: f64) -> QualityReport {
    let mut report = QualityReport {
        element_count: mesh.element_count(),
        min_dihedral_deg: if mesh.elements.is_empty() { 0.0 } else { f64::INFINITY },
        max_dihedral_deg: 0.0,
        aspect_histogram: [0; 5],
        max_aspect_ratio: 0.0,
        signed_volume_sum: 0.0,
        absolute_volume_sum: 0.0,
        flagged: Vec::new(),
        volume_check_passed: true,
    };
    for e in 0..mesh.element_count() {
        let p = mesh.element_points(e);
        let vol = signed_volume(p[0], p[1], p[2], p[3]);
        report.signed_volume_sum += vol;
        report.absolute_volume_sum += vol.abs();
        for a in dihedral_angles(p) {
            let deg = a.to_degrees();
            report.min_dihedral_deg = report.min_dihedral_deg.min(deg);
            report.max_dihedral_deg = report.max_dihedral_deg.max(deg);
        }
        let ar = aspect_ratio(p);
        report.max_aspect_ratio = report.max_aspect_ratio.max(ar);
        let bin = ASPECT_BINS.iter().position(|&edge| ar < edge).unwrap_or(4);
        report.aspect_histogram[bin] += 1;
        if vol <= 0.0 {
            report.volume_check_passed = false;
        }
        if vol <= 0.0 || ar > max_aspect {
            report.flagged.push(e);
        }
    }
    report
}
