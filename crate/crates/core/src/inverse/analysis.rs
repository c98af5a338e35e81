//! Azimuthal summaries of reconstructed images in the mid-slice.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::ReconMesh;
use crate::error::{Error, Result};
use crate::fem::slice_elements;

/// Volume-weighted mean of an image over equal azimuthal bins of the
/// mid-slice. Bin `k` covers `[k, k+1) * 360/bins` degrees from electrode 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AzimuthalProfile {
    /// Bin centres, degrees.
    pub angles: Vec<f64>,
    pub values: Vec<f64>,
}

/// Profile of per-element `values` over `bins` sectors of the mid-slice of
/// `slice_thickness` mm, restricted to elements whose centroid radius is at
/// least `min_radius` mm.
pub fn azimuthal_profile(
    values: &[f64],
    rm: &ReconMesh,
    bins: usize,
    slice_thickness: f64,
    min_radius: f64,
) -> Result<AzimuthalProfile> {
    let mesh = rm.mesh();
    if values.len() != mesh.element_count() {
        return Err(Error::Input(format!(
            "image has {} values for {} elements",
            values.len(),
            mesh.element_count()
        )));
    }
    if bins < 4 {
        return Err(Error::Parameter("an azimuthal profile needs at least 4 bins".into()));
    }
    let mut sum = vec![0.0; bins];
    let mut weight = vec![0.0; bins];
    for e in slice_elements(mesh, rm.catheter(), slice_thickness) {
        let c = mesh.centroid(e);
        if c[0].hypot(c[1]) < min_radius {
            continue;
        }
        let t = c[1].atan2(c[0]).rem_euclid(TAU);
        let k = ((t / TAU * bins as f64) as usize).min(bins - 1);
        let v = mesh.element_volume(e);
        sum[k] += v * values[e];
        weight[k] += v;
    }
    if let Some(k) = weight.iter().position(|&w| w == 0.0) {
        return Err(Error::DegenerateImage(format!("azimuthal bin {k} holds no mid-slice elements")));
    }
    Ok(AzimuthalProfile {
        angles: (0..bins).map(|k| (k as f64 + 0.5) * 360.0 / bins as f64).collect(),
        values: sum.iter().zip(&weight).map(|(s, w)| s / w).collect(),
    })
}

/// Unsigned angular distance between two azimuths, degrees in [0, 180].
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Distance between two axes (directions modulo 180 degrees), in [0, 90].
pub fn axis_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

impl AzimuthalProfile {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// Values minus the profile mean.
    pub fn anomaly(&self) -> Vec<f64> {
        let m = self.mean();
        self.values.iter().map(|v| v - m).collect()
    }

    fn argmin(values: &[f64]) -> usize {
        values
            .iter()
            .enumerate()
            .fold(0, |b, (i, &v)| if v < values[b] { i } else { b })
    }

    /// Azimuth (degrees) of the dominant decrease: the circular centroid,
    /// weighted by depth, of the contiguous bins around the deepest bin whose
    /// anomaly is below half the minimum.
    pub fn dominant_decrease(&self) -> f64 {
        let a = self.anomaly();
        let n = a.len();
        let k0 = Self::argmin(&a);
        let level = 0.5 * a[k0];
        let mut members = vec![k0];
        for dir in [1isize, -1] {
            for step in 1..n {
                let k = (k0 as isize + dir * step as isize).rem_euclid(n as isize) as usize;
                if a[k] >= level || members.contains(&k) {
                    break;
                }
                members.push(k);
            }
        }
        let (mut x, mut y) = (0.0, 0.0);
        for k in members {
            let w = -a[k];
            let t = self.angles[k].to_radians();
            x += w * t.cos();
            y += w * t.sin();
        }
        y.atan2(x).to_degrees().rem_euclid(360.0)
    }

    /// Axis (degrees modulo 180) along which the second azimuthal harmonic
    /// of the profile is lowest.
    pub fn decrease_axis(&self) -> f64 {
        let (mut c, mut s) = (0.0, 0.0);
        for (t, v) in self.angles.iter().zip(&self.values) {
            let t2 = 2.0 * t.to_radians();
            c += v * t2.cos();
            s += v * t2.sin();
        }
        // The harmonic peaks at phase/2; its minima are a quarter turn away.
        (0.5 * s.atan2(c).to_degrees() + 90.0).rem_euclid(180.0)
    }

    /// Azimuths of the deepest bin and of the deepest bin at least 90 degrees
    /// away from it.
    pub fn antipodal_minima(&self) -> [f64; 2] {
        let k0 = Self::argmin(&self.values);
        let first = self.angles[k0];
        let k1 = (0..self.len())
            .filter(|&k| angular_distance(self.angles[k], first) >= 90.0)
            .fold(None, |b: Option<usize>, k| match b {
                Some(j) if self.values[j] <= self.values[k] => Some(j),
                _ => Some(k),
            })
            .unwrap_or(k0);
        [first, self.angles[k1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(f: impl Fn(f64) -> f64) -> AzimuthalProfile {
        let angles: Vec<f64> = (0..32).map(|k| (k as f64 + 0.5) * 11.25).collect();
        let values = angles.iter().map(|&t| f(t)).collect();
        AzimuthalProfile { angles, values }
    }

    #[test]
    fn distances_wrap() {
        assert_eq!(angular_distance(350.0, 10.0), 20.0);
        assert_eq!(axis_distance(170.0, 10.0), 20.0);
        assert_eq!(axis_distance(90.0, 270.0), 0.0);
    }

    #[test]
    fn single_dip_is_located() {
        let p = profile(|t| 1.0 - (-(angular_distance(t, 100.0) / 20.0).powi(2)).exp());
        assert!(angular_distance(p.dominant_decrease(), 100.0) < 3.0);
    }

    #[test]
    fn dip_across_zero_is_located() {
        let p = profile(|t| -(-(angular_distance(t, 5.0) / 25.0).powi(2)).exp());
        assert!(angular_distance(p.dominant_decrease(), 5.0) < 3.0);
    }

    #[test]
    fn second_harmonic_axis() {
        let p = profile(|t| (2.0 * (t - 30.0).to_radians()).cos());
        assert!(axis_distance(p.decrease_axis(), 120.0) < 1e-6);
        let [a, b] = p.antipodal_minima();
        assert!(axis_distance(a, 120.0) < 6.0 && axis_distance(b, 120.0) < 6.0);
        assert!(angular_distance(a, b) > 150.0);
    }
}
