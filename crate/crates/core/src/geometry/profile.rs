//! Catheter and lumen cross-section parameterisations.
//!
//! All lengths are millimetres and all angles are stored in degrees on the
//! public structs; wall evaluation works in radians.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum radial clearance between the shaft and any point of the lumen wall.
pub const MIN_WALL_CLEARANCE: f64 = 0.05;

/// Electrode-carrying catheter shaft.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatheterSpec {
    pub shaft_diameter: f64,
    pub ring_count: usize,
    pub electrodes_per_ring: usize,
    /// Axial centre-to-centre distance between neighbouring rings.
    pub ring_spacing: f64,
    /// Circumferential (arc-length) electrode extent.
    pub electrode_width: f64,
    /// Axial electrode extent.
    pub electrode_height: f64,
    /// Axial length of the simulated balloon domain.
    pub shaft_length: f64,
}

impl Default for CatheterSpec {
    fn default() -> Self {
        Self::with_spacing(10.0)
    }
}

impl CatheterSpec {
    /// Two rings of eight 1 x 2 mm electrodes on a 14 Fr shaft, with the
    /// domain extending 15 mm beyond each ring.
    pub fn with_spacing(ring_spacing: f64) -> Self {
        Self {
            shaft_diameter: 5.3,
            ring_count: 2,
            electrodes_per_ring: 8,
            ring_spacing,
            electrode_width: 1.0,
            electrode_height: 2.0,
            shaft_length: ring_spacing + 30.0,
        }
    }

    pub fn shaft_radius(&self) -> f64 {
        0.5 * self.shaft_diameter
    }

    pub fn electrode_count(&self) -> usize {
        self.ring_count * self.electrodes_per_ring
    }

    /// Angular pitch between neighbouring electrodes on a ring, radians.
    pub fn pitch(&self) -> f64 {
        TAU / self.electrodes_per_ring as f64
    }

    /// Angular half-width of one electrode patch on the shaft, radians.
    pub fn electrode_half_angle(&self) -> f64 {
        0.5 * self.electrode_width / self.shaft_radius()
    }

    /// Azimuth of the centre of electrode `index` (0-based), radians.
    ///
    /// Electrodes are numbered counter-clockwise starting at azimuth 0; the
    /// electrode `index + electrodes_per_ring` sits axially behind `index`.
    pub fn electrode_azimuth(&self, index: usize) -> f64 {
        (index % self.electrodes_per_ring) as f64 * self.pitch()
    }

    /// Ring of electrode `index` (0-based).
    pub fn electrode_ring(&self, index: usize) -> usize {
        index / self.electrodes_per_ring
    }

    /// Axial centre of `ring` relative to the centre of the electrode array.
    pub fn ring_offset(&self, ring: usize) -> f64 {
        (ring as f64 - 0.5 * (self.ring_count as f64 - 1.0)) * self.ring_spacing
    }

    /// Axial position of the centre of the electrode array in domain coordinates.
    pub fn array_centre(&self) -> f64 {
        0.5 * self.shaft_length
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shaft_diameter > 0.0) {
            return Err(Error::Parameter("shaft diameter must be positive".into()));
        }
        if self.ring_count == 0 || self.electrodes_per_ring == 0 {
            return Err(Error::Parameter("catheter needs at least one electrode".into()));
        }
        if !(self.electrode_width > 0.0 && self.electrode_height > 0.0) {
            return Err(Error::Parameter("electrode dimensions must be positive".into()));
        }
        if self.ring_count > 1 && self.ring_spacing <= self.electrode_height {
            return Err(Error::Parameter(format!(
                "ring spacing {} mm does not clear electrode height {} mm",
                self.ring_spacing, self.electrode_height
            )));
        }
        if self.electrodes_per_ring as f64 * self.electrode_width >= PI * self.shaft_diameter {
            return Err(Error::Parameter(
                "electrodes overlap around the shaft circumference".into(),
            ));
        }
        let array_extent =
            (self.ring_count as f64 - 1.0) * self.ring_spacing + self.electrode_height;
        if self.shaft_length <= array_extent {
            return Err(Error::Parameter(format!(
                "shaft length {} mm cannot hold the {} mm electrode array",
                self.shaft_length, array_extent
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Circle,
    Ellipse,
    Crescent,
    Indented,
}

impl std::str::FromStr for ProfileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "circle" => Ok(Self::Circle),
            "ellipse" => Ok(Self::Ellipse),
            "crescent" => Ok(Self::Crescent),
            "indented" => Ok(Self::Indented),
            other => Err(Error::Parameter(format!("unknown profile kind `{other}`"))),
        }
    }
}

/// Lumen wall shape that the inflated balloon conforms to.
///
/// The base shape is an ellipse of major diameter `major_diameter` and minor
/// diameter `aspect_ratio * major_diameter`, major axis at `rotation`.
/// Crescent and indented profiles subtract a feature from a circular base
/// (aspect ratio 1), centred at azimuth `rotation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LumenProfile {
    pub kind: ProfileKind,
    pub major_diameter: f64,
    pub aspect_ratio: f64,
    /// Degrees, counter-clockwise from electrode 1.
    pub rotation: f64,
    pub crescent_depth: f64,
    pub crescent_extent: f64,
    pub indent_depth: f64,
    /// Angular half-width of the cosine indentation bump, degrees.
    pub indent_half_width: f64,
    /// Axial half-length of the cosine indentation bump, millimetres.
    pub indent_half_length: f64,
    /// Radius of a partially inflated balloon; the boundary is the smaller
    /// of this and the lumen wall.
    #[serde(default)]
    pub balloon_radius: Option<f64>,
}

impl LumenProfile {
    pub fn circle(diameter: f64) -> Self {
        Self {
            kind: ProfileKind::Circle,
            major_diameter: diameter,
            aspect_ratio: 1.0,
            rotation: 0.0,
            crescent_depth: 6.0,
            crescent_extent: 120.0,
            indent_depth: 0.0,
            indent_half_width: 50.0,
            indent_half_length: 8.0,
            balloon_radius: None,
        }
    }

    pub fn ellipse(major_diameter: f64, aspect_ratio: f64) -> Self {
        Self {
            kind: ProfileKind::Ellipse,
            aspect_ratio,
            ..Self::circle(major_diameter)
        }
    }

    /// Circular lumen with a crescent lesion centred between electrodes 2 and 4.
    pub fn crescent(diameter: f64) -> Self {
        Self {
            kind: ProfileKind::Crescent,
            rotation: 90.0,
            ..Self::circle(diameter)
        }
    }

    /// Circular lumen pushed in by a rounded indenter at the array centre.
    pub fn indented(diameter: f64, depth: f64) -> Self {
        Self {
            kind: ProfileKind::Indented,
            indent_depth: depth,
            rotation: 90.0,
            ..Self::circle(diameter)
        }
    }

    pub fn with_rotation(mut self, degrees: f64) -> Self {
        self.rotation = degrees;
        self
    }

    /// Clamps the boundary to a free balloon of `radius` mm.
    pub fn with_balloon_radius(mut self, radius: f64) -> Self {
        self.balloon_radius = Some(radius);
        self
    }

    pub fn major_radius(&self) -> f64 {
        0.5 * self.major_diameter
    }

    fn ellipse_radius(&self, theta: f64) -> f64 {
        let a = self.major_radius();
        let b = a * self.aspect_ratio;
        let phi = theta - self.rotation.to_radians();
        let (s, c) = phi.sin_cos();
        a * b / ((b * c).powi(2) + (a * s).powi(2)).sqrt()
    }

    /// Wall radius of the lesion arc along azimuth `theta`, if the ray hits it.
    fn crescent_radius(&self, theta: f64) -> Option<f64> {
        let r0 = self.major_radius();
        let half = 0.5 * self.crescent_extent.to_radians();
        let depth = self.crescent_depth;
        if depth <= 0.0 || half <= 0.0 {
            return None;
        }
        let dphi = wrap_angle(theta - self.rotation.to_radians());
        if dphi.abs() >= half {
            return None;
        }
        // Circle through the two wall end points (r0, +-half) and the apex
        // (r0 - depth, 0), expressed in the lesion-aligned frame.
        let ex = r0 * half.cos();
        let ey = r0 * half.sin();
        let apex = r0 - depth;
        let ux = dphi.cos();
        if (ex - apex).abs() < 1e-12 {
            // The arc degenerates to the chord between the end points.
            return Some((apex / ux).min(r0));
        }
        let centre = (ex * ex + ey * ey - apex * apex) / (2.0 * (ex - apex));
        let rho = (apex - centre).abs();
        let uc = ux * centre;
        let disc = uc * uc - centre * centre + rho * rho;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let inside = centre.abs() < rho;
        let t = if inside { uc + sq } else { uc - sq };
        (t > 0.0).then_some(t.min(r0))
    }

    fn indent_amount(&self, theta: f64, z_rel: f64) -> f64 {
        if self.indent_depth <= 0.0 {
            return 0.0;
        }
        let dphi = wrap_angle(theta - self.rotation.to_radians());
        let u = dphi / self.indent_half_width.to_radians();
        let v = z_rel / self.indent_half_length;
        self.indent_depth * cosine_bump(u) * cosine_bump(v)
    }

    /// Distance from the shaft axis to the wall along azimuth `theta`
    /// (radians) at axial offset `z_rel` from the electrode-array centre.
    pub fn wall_radius(&self, theta: f64, z_rel: f64) -> f64 {
        let wall = match self.kind {
            ProfileKind::Circle => self.major_radius(),
            ProfileKind::Ellipse => self.ellipse_radius(theta),
            ProfileKind::Crescent => self
                .crescent_radius(theta)
                .unwrap_or_else(|| self.major_radius()),
            ProfileKind::Indented => self.major_radius() - self.indent_amount(theta, z_rel),
        };
        match self.balloon_radius {
            Some(r) => wall.min(r),
            None => wall,
        }
    }

    /// Smallest wall radius over the profile, sampled densely in azimuth
    /// (and at the indentation apex for indented profiles).
    pub fn min_wall_radius(&self) -> f64 {
        const SAMPLES: usize = 2048;
        (0..SAMPLES)
            .map(|k| self.wall_radius(k as f64 * TAU / SAMPLES as f64, 0.0))
            .chain(std::iter::once(
                self.wall_radius(self.rotation.to_radians(), 0.0),
            ))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self, catheter: &CatheterSpec) -> Result<()> {
        if !(self.major_diameter > 0.0) {
            return Err(Error::Parameter("lumen diameter must be positive".into()));
        }
        if !(self.aspect_ratio > 0.0 && self.aspect_ratio <= 1.0) {
            return Err(Error::Parameter(format!(
                "aspect ratio {} outside (0, 1]",
                self.aspect_ratio
            )));
        }
        if self.kind != ProfileKind::Ellipse && self.aspect_ratio != 1.0 {
            return Err(Error::Parameter(format!(
                "{:?} profile requires aspect ratio 1",
                self.kind
            )));
        }
        if self.kind == ProfileKind::Crescent
            && !(self.crescent_extent > 0.0 && self.crescent_extent < 360.0)
        {
            return Err(Error::Parameter("crescent extent must lie in (0, 360)".into()));
        }
        if self.kind == ProfileKind::Indented
            && !(self.indent_half_width > 0.0 && self.indent_half_length > 0.0)
        {
            return Err(Error::Parameter("indent extents must be positive".into()));
        }
        let clearance = self.min_wall_radius() - catheter.shaft_radius();
        if clearance <= MIN_WALL_CLEARANCE {
            return Err(Error::Geometry(format!(
                "degenerate annulus: lumen wall comes within {clearance:.3} mm of the shaft"
            )));
        }
        Ok(())
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

fn cosine_bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (PI * u).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_catheter_is_valid() {
        let c = CatheterSpec::default();
        c.validate().unwrap();
        assert_eq!(c.electrode_count(), 16);
        assert_relative_eq!(c.ring_offset(0), -5.0);
        assert_relative_eq!(c.ring_offset(1), 5.0);
    }

    #[test]
    fn overlapping_rings_rejected() {
        let mut c = CatheterSpec::default();
        c.ring_spacing = 1.5;
        assert!(c.validate().is_err());
        let mut c = CatheterSpec::default();
        c.electrodes_per_ring = 20;
        assert!(c.validate().is_err());
    }

    #[test]
    fn ellipse_radius_hits_axes() {
        let p = LumenProfile::ellipse(26.0, 0.75);
        assert_relative_eq!(p.wall_radius(0.0, 0.0), 13.0, epsilon = 1e-12);
        assert_relative_eq!(p.wall_radius(PI / 2.0, 0.0), 9.75, epsilon = 1e-12);
        let r = p.wall_radius(0.7, 0.0);
        let (x, y) = (r * 0.7f64.cos(), r * 0.7f64.sin());
        assert_relative_eq!((x / 13.0).powi(2) + (y / 9.75).powi(2), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn crescent_apex_and_ends() {
        let p = LumenProfile::crescent(26.0);
        let apex = p.wall_radius(90f64.to_radians(), 0.0);
        assert_relative_eq!(apex, 13.0 - 6.0, epsilon = 1e-9);
        // Continuous with the wall at the ends of the extent.
        let end = p.wall_radius((90.0f64 + 59.999).to_radians(), 0.0);
        assert!((end - 13.0).abs() < 1e-3);
        assert_relative_eq!(p.wall_radius(-PI / 2.0, 0.0), 13.0);
    }

    #[test]
    fn deep_crescent_bulges_inwards() {
        let mut p = LumenProfile::crescent(26.0);
        p.crescent_depth = 9.0;
        p.crescent_extent = 60.0;
        let apex = p.wall_radius(90f64.to_radians(), 0.0);
        assert_relative_eq!(apex, 4.0, epsilon = 1e-9);
        assert!(p.wall_radius(100f64.to_radians(), 0.0) > apex);
    }

    #[test]
    fn indent_is_local() {
        let p = LumenProfile::indented(24.0, 4.0);
        assert_relative_eq!(p.wall_radius(PI / 2.0, 0.0), 8.0);
        assert_relative_eq!(p.wall_radius(-PI / 2.0, 0.0), 12.0);
        assert_relative_eq!(p.wall_radius(PI / 2.0, 20.0), 12.0);
    }

    #[test]
    fn degenerate_annulus_is_a_geometry_error() {
        let c = CatheterSpec::default();
        let p = LumenProfile::circle(5.3 + 2.0 * 0.01);
        assert!(matches!(p.validate(&c), Err(Error::Geometry(_))));
        let p = LumenProfile::ellipse(12.0, 0.4);
        assert!(matches!(p.validate(&c), Err(Error::Geometry(_))));
    }

    #[test]
    fn circle_must_have_unit_aspect() {
        let mut p = LumenProfile::circle(20.0);
        p.aspect_ratio = 0.9;
        assert!(p.validate(&CatheterSpec::default()).is_err());
    }
}
