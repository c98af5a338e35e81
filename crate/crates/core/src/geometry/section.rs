//! Planar triangulation of the annulus between the catheter shaft and the
//! lumen wall.
//!
//! The annulus is meshed as a mapped grid: rays at fixed azimuths run from
//! the shaft to the wall, with nodes graded along each ray. Ray
//! azimuths put electrode edges exactly on nodes, so electrode patches are
//! conforming, and the pattern repeats every electrode pitch, so a circular
//! section is exactly invariant under a one-pitch rotation. Because node
//! positions are a function of the wall radius, the same topology can follow
//! an axially varying wall.

use serde::{Deserialize, Serialize};

use super::profile::{CatheterSpec, LumenProfile};
use crate::error::{Error, Result};

/// Node counts of a cross-section.
///
/// Radially, a band of fixed thickness around the shaft carries
/// `inner_layers` geometrically graded layers identical on every ray, so the
/// steep fields next to the electrodes are resolved the same way in every
/// direction. The `outer_layers` beyond it continue the progression with a
/// per-ray ratio that lands exactly on the wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionResolution {
    /// Angular segments across each electrode.
    pub electrode_segments: usize,
    /// Angular segments across each inter-electrode gap.
    pub gap_segments: usize,
    pub inner_layers: usize,
    /// Band thickness in mm, capped at half the smallest wall clearance.
    pub inner_thickness: f64,
    /// Ratio between consecutive band layer thicknesses (>= 1).
    pub inner_growth: f64,
    pub outer_layers: usize,
}

impl SectionResolution {
    /// Derives counts from a target element size: electrode-adjacent
    /// elements are graded to a third of `target_size`.
    pub fn from_target_size(
        profile: &LumenProfile,
        catheter: &CatheterSpec,
        target_size: f64,
    ) -> Result<Self> {
        let gap = profile.major_radius() - catheter.shaft_radius();
        if !(target_size > 0.0) || target_size >= 0.5 * gap {
            return Err(Error::Parameter(format!(
                "target size {target_size} mm must be positive and below a quarter of the \
                 diameter clearance ({:.3} mm)",
                0.5 * gap
            )));
        }
        let fine = target_size / 3.0;
        let r = catheter.shaft_radius();
        let gap_arc = r * catheter.pitch() - catheter.electrode_width;
        let even = |x: f64| 2 * ((0.5 * x).ceil().max(1.0) as usize);
        let growth: f64 = 1.2;
        let band = DEFAULT_BAND.min(0.5 * gap);
        let mut thickness = fine;
        let mut covered = 0.0;
        let mut inner_layers = 0usize;
        while covered < band {
            covered += thickness;
            thickness *= growth;
            inner_layers += 1;
        }
        Ok(Self {
            electrode_segments: even(catheter.electrode_width / fine),
            gap_segments: even(gap_arc / fine),
            inner_layers,
            inner_thickness: band,
            inner_growth: growth,
            outer_layers: ((gap - band) / target_size).ceil().max(1.0) as usize,
        })
    }

    /// Scales every count by `factor`, keeping the band thickness.
    pub fn refined(&self, factor: f64) -> Self {
        let scale = |n: usize| ((n as f64) * factor).round().max(1.0) as usize;
        Self {
            electrode_segments: scale(self.electrode_segments),
            gap_segments: scale(self.gap_segments),
            inner_layers: scale(self.inner_layers),
            inner_thickness: self.inner_thickness,
            inner_growth: self.inner_growth.powf(1.0 / factor),
            outer_layers: scale(self.outer_layers),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.electrode_segments == 0
            || self.gap_segments == 0
            || self.inner_layers == 0
            || self.outer_layers == 0
        {
            return Err(Error::Parameter("section resolution counts must be positive".into()));
        }
        if !(self.inner_growth >= 1.0) {
            return Err(Error::Parameter("band growth must be at least 1".into()));
        }
        if !(self.inner_thickness > 0.0) {
            return Err(Error::Parameter("band thickness must be positive".into()));
        }
        Ok(())
    }
}

/// Nominal thickness of the uniform band around the shaft, mm.
pub const DEFAULT_BAND: f64 = 1.0;

/// Mapped triangulation of the shaft-to-wall annulus.
///
/// Node `(i, j)` lies on ray `j` at radial level `i`, where level 0 is the
/// shaft and the last level the wall; its flat index is
/// `i * angles.len() + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSection {
    pub profile: LumenProfile,
    pub shaft_radius: f64,
    /// Ray azimuths in radians, increasing.
    pub angles: Vec<f64>,
    /// Offsets of the band levels from the shaft, mm; starts at 0.
    pub band: Vec<f64>,
    pub outer_layers: usize,
    /// Triangles with vertices sorted by a global node key; see
    /// [`CrossSection::ordered_triangles`].
    triangles: Vec<[usize; 3]>,
}

impl CrossSection {
    pub fn angular_count(&self) -> usize {
        self.angles.len()
    }

    /// Number of radial node levels, shaft and wall included.
    pub fn radial_count(&self) -> usize {
        self.band.len() + self.outer_layers
    }

    pub fn node_count(&self) -> usize {
        self.angles.len() * self.radial_count()
    }

    /// Offsets of all radial levels from the shaft for a ray whose wall
    /// lies `clearance` mm from it.
    pub fn level_offsets(&self, clearance: f64) -> Vec<f64> {
        let n = self.band.len();
        let band = self.band[n - 1];
        let last = band - self.band[n - 2];
        let ratio = outer_ratio(last, self.outer_layers, clearance - band);
        let mut out = self.band.clone();
        let mut h = last;
        let mut acc = band;
        for _ in 0..self.outer_layers {
            h *= ratio;
            acc += h;
            out.push(acc);
        }
        *out.last_mut().unwrap() = clearance;
        out
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.angles.len() + j
    }

    /// Triangles listed in a global node order shared by all neighbours;
    /// extrusion relies on it for conforming prism splits.
    pub fn ordered_triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Counter-clockwise oriented triangles.
    pub fn triangles(&self) -> Vec<[usize; 3]> {
        let pts = self.points(0.0);
        self.triangles
            .iter()
            .map(|&[a, b, c]| {
                let area = orient(pts[a], pts[b], pts[c]);
                if area > 0.0 {
                    [a, b, c]
                } else {
                    [a, c, b]
                }
            })
            .collect()
    }

    /// Node coordinates (x, y) in mm at axial offset `z_rel` from the array centre.
    pub fn points(&self, z_rel: f64) -> Vec<[f64; 2]> {
        let nt = self.angles.len();
        let mut out = vec![[0.0; 2]; self.node_count()];
        for (j, &t) in self.angles.iter().enumerate() {
            let wall = self.profile.wall_radius(t, z_rel);
            let (s, c) = t.sin_cos();
            for (i, d) in self.level_offsets(wall - self.shaft_radius).into_iter().enumerate() {
                let r = self.shaft_radius + d;
                out[i * nt + j] = [r * c, r * s];
            }
        }
        out
    }

    /// True when node `(i, j)` is on the shaft (`Some(false)`) or the wall (`Some(true)`).
    pub fn boundary_side(&self, flat: usize) -> Option<bool> {
        let i = flat / self.angles.len();
        if i == 0 {
            Some(false)
        } else if i + 1 == self.radial_count() {
            Some(true)
        } else {
            None
        }
    }

    /// Triangulated area in mm^2 at axial offset `z_rel`.
    pub fn area(&self, z_rel: f64) -> f64 {
        let pts = self.points(z_rel);
        self.triangles
            .iter()
            .map(|&[a, b, c]| orient(pts[a], pts[b], pts[c]).abs())
            .sum()
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

/// Ray azimuths with electrode edges on rays; repeats every pitch.
fn ray_angles(catheter: &CatheterSpec, res: &SectionResolution) -> Vec<f64> {
    let pitch = catheter.pitch();
    let half = catheter.electrode_half_angle();
    let mut angles = Vec::new();
    for p in 0..catheter.electrodes_per_ring {
        let start = p as f64 * pitch - half;
        for k in 0..res.electrode_segments {
            angles.push(start + 2.0 * half * k as f64 / res.electrode_segments as f64);
        }
        let gap_start = p as f64 * pitch + half;
        let gap = pitch - 2.0 * half;
        for k in 0..res.gap_segments {
            angles.push(gap_start + gap * k as f64 / res.gap_segments as f64);
        }
    }
    angles
}

/// Offsets of the band levels: geometric layers summing to `thickness`.
fn band_offsets(res: &SectionResolution, thickness: f64) -> Vec<f64> {
    let mut cum = vec![0.0];
    let mut t = 1.0;
    for _ in 0..res.inner_layers {
        let last = *cum.last().unwrap();
        cum.push(last + t);
        t *= res.inner_growth;
    }
    let total = *cum.last().unwrap();
    cum.iter_mut().for_each(|c| *c *= thickness / total);
    *cum.last_mut().unwrap() = thickness;
    cum
}

/// Ratio `q` with `first * (q + q^2 + ... + q^layers) = span`.
fn outer_ratio(first: f64, layers: usize, span: f64) -> f64 {
    let sum = |q: f64| {
        let mut acc = 0.0;
        let mut p = 1.0;
        for _ in 0..layers {
            p *= q;
            acc += p;
        }
        first * acc
    };
    let (mut lo, mut hi) = (1e-6_f64, 1e3_f64);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if sum(mid) < span {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    (lo * hi).sqrt()
}

/// Angular distance of each ray to the nearest electrode centre, quantised
/// so that mirror-image rays compare equal.
fn folded_keys(angles: &[f64], pitch: f64) -> Vec<i64> {
    angles
        .iter()
        .map(|a| {
            let x = a.rem_euclid(pitch);
            (x.min(pitch - x) * 1e9).round() as i64
        })
        .collect()
}

/// Builds the annular triangulation with explicit node counts.
pub fn build_cross_section_with(
    profile: &LumenProfile,
    catheter: &CatheterSpec,
    res: &SectionResolution,
) -> Result<CrossSection> {
    catheter.validate()?;
    profile.validate(catheter)?;
    res.validate()?;
    let angles = ray_angles(catheter, res);
    let clearance = profile.min_wall_radius() - catheter.shaft_radius();
    let band = band_offsets(res, res.inner_thickness.min(0.5 * clearance));
    let layers = res.inner_layers + res.outer_layers;
    let nt = angles.len();
    let fold = folded_keys(&angles, catheter.pitch());
    // Node order key: folded azimuth, then ring, then index. It is
    // invariant under the layout's rotations and reflections wherever no
    // two nodes of one triangle tie, which holds for even segment counts.
    let key = |flat: usize| (fold[flat % nt], flat / nt, flat);
    let mut triangles = Vec::with_capacity(2 * nt * layers);
    for i in 0..layers {
        for j in 0..nt {
            let jn = (j + 1) % nt;
            // The diagonal runs from the inner node of the ray nearer an
            // electrode or gap centre to the outer node of the other ray,
            // so mirror-image quads get mirror-image diagonals.
            let (near, far) = if (fold[j], j) <= (fold[jn], jn) { (j, jn) } else { (jn, j) };
            let a = i * nt + near;
            let b = (i + 1) * nt + near;
            let c = (i + 1) * nt + far;
            let d = i * nt + far;
            for mut t in [[a, b, c], [a, d, c]] {
                t.sort_by_key(|&v| key(v));
                triangles.push(t);
            }
        }
    }
    Ok(CrossSection {
        profile: profile.clone(),
        shaft_radius: catheter.shaft_radius(),
        angles,
        band,
        outer_layers: res.outer_layers,
        triangles,
    })
}

/// Builds the annular triangulation sized by `target_size` (mm).
pub fn build_cross_section(
    profile: &LumenProfile,
    catheter: &CatheterSpec,
    target_size: f64,
) -> Result<CrossSection> {
    catheter.validate()?;
    profile.validate(catheter)?;
    let res = SectionResolution::from_target_size(profile, catheter, target_size)?;
    build_cross_section_with(profile, catheter, &res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn circle_boundary_nodes_on_both_curves() {
        let c = CatheterSpec::default();
        let s = build_cross_section(&LumenProfile::circle(25.0), &c, 1.0).unwrap();
        let pts = s.points(0.0);
        for (k, p) in pts.iter().enumerate() {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            match s.boundary_side(k) {
                Some(false) => assert_relative_eq!(r, 2.65, epsilon = 1e-12),
                Some(true) => assert_relative_eq!(r, 12.5, epsilon = 1e-12),
                None => assert!(r > 2.65 && r < 12.5),
            }
        }
        for t in s.triangles() {
            assert!(orient(pts[t[0]], pts[t[1]], pts[t[2]]) > 0.0);
        }
    }

    #[test]
    fn ellipse_wall_on_curve() {
        let c = CatheterSpec::default();
        let s = build_cross_section(&LumenProfile::ellipse(26.0, 0.75), &c, 1.0).unwrap();
        let pts = s.points(0.0);
        for (k, p) in pts.iter().enumerate() {
            if s.boundary_side(k) == Some(true) {
                let v = (p[0] / 13.0).powi(2) + (p[1] / 9.75).powi(2);
                assert_relative_eq!(v, 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn degenerate_annulus_rejected() {
        let c = CatheterSpec::default();
        let r = build_cross_section(&LumenProfile::circle(5.3 + 2e-3), &c, 1e-4);
        assert!(matches!(r, Err(Error::Geometry(_))));
    }

    #[test]
    fn electrode_edges_are_rays() {
        let c = CatheterSpec::default();
        let res = SectionResolution {
            electrode_segments: 3,
            gap_segments: 3,
            inner_layers: 3,
            inner_thickness: 1.0,
            inner_growth: 1.2,
            outer_layers: 3,
        };
        let s = build_cross_section_with(&LumenProfile::circle(20.0), &c, &res).unwrap();
        assert_eq!(s.angular_count(), 48);
        let half = c.electrode_half_angle();
        for k in 0..8 {
            let centre = k as f64 * PI / 4.0;
            for edge in [centre - half, centre + half] {
                assert!(s.angles.iter().any(|a| (a - edge).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn triangulation_is_mirror_symmetric() {
        let c = CatheterSpec::default();
        let res = SectionResolution {
            electrode_segments: 2,
            gap_segments: 4,
            inner_layers: 2,
            inner_thickness: 1.0,
            inner_growth: 1.2,
            outer_layers: 2,
        };
        let s = build_cross_section_with(&LumenProfile::circle(20.0), &c, &res).unwrap();
        let pts = s.points(0.0);
        let key = |p: [f64; 2]| ((p[0] * 1e8).round() as i64, (p[1] * 1e8).round() as i64);
        let canon = |tris: &[[usize; 3]], map: &dyn Fn([f64; 2]) -> [f64; 2]| {
            let mut v: Vec<Vec<(i64, i64)>> = tris
                .iter()
                .map(|t| {
                    let mut k: Vec<_> = t.iter().map(|&n| key(map(pts[n]))).collect();
                    k.sort();
                    k
                })
                .collect();
            v.sort();
            v
        };
        let tris = s.ordered_triangles();
        let identity = canon(tris, &|p| p);
        // Reflections about an electrode centre and a gap centre.
        assert_eq!(canon(tris, &|p| [p[0], -p[1]]), identity);
        let (sn, cs) = (PI / 4.0).sin_cos();
        assert_eq!(canon(tris, &|p| [cs * p[0] + sn * p[1], sn * p[0] - cs * p[1]]), identity);
    }

    #[test]
    fn area_converges_to_annulus() {
        let c = CatheterSpec::default();
        let exact = PI * (12.5f64.powi(2) - 2.65f64.powi(2));
        let coarse = build_cross_section(&LumenProfile::circle(25.0), &c, 2.0).unwrap();
        let fine = build_cross_section(&LumenProfile::circle(25.0), &c, 0.5).unwrap();
        let e_coarse = (coarse.area(0.0) - exact).abs();
        let e_fine = (fine.area(0.0) - exact).abs();
        assert!(e_fine < e_coarse);
        assert!(e_fine / exact < 2e-3);
    }
}
