//! Additive measurement noise, detection thresholds and the two sweep
//! analyses built on them.

pub mod detectability;
pub mod spacing;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::Frame;

/// Detection threshold as a multiple of the noise standard deviation.
pub const THRESHOLD_FACTOR: f64 = 10.0;

/// Amplitude the SNR is referred to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseReference {
    /// Each measurement's own magnitude.
    #[default]
    PerMeasurement,
    /// Root-mean-square of the frame.
    FrameRms,
    /// Largest magnitude in the frame.
    FrameMax,
}

impl fmt::Display for NoiseReference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PerMeasurement => "per-measurement",
            Self::FrameRms => "frame-rms",
            Self::FrameMax => "frame-max",
        })
    }
}

impl FromStr for NoiseReference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-measurement" => Ok(Self::PerMeasurement),
            "frame-rms" => Ok(Self::FrameRms),
            "frame-max" => Ok(Self::FrameMax),
            other => Err(Error::Parameter(format!("unknown noise reference `{other}`"))),
        }
    }
}

/// Zero-mean Gaussian noise at an amplitude signal-to-noise ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub snr_db: f64,
    pub seed: u64,
    pub reference: NoiseReference,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            snr_db: 60.0,
            seed: 0,
            reference: NoiseReference::PerMeasurement,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.snr_db > 0.0) {
            return Err(Error::Parameter(format!("SNR must be positive, got {} dB", self.snr_db)));
        }
        Ok(())
    }

    /// Noise standard deviation per unit reference amplitude.
    pub fn relative_std(&self) -> f64 {
        10f64.powf(-self.snr_db / 20.0)
    }

    /// Noise standard deviation for each measurement of `voltages`.
    pub fn std_per_row(&self, voltages: &[f64]) -> Vec<f64> {
        let k = self.relative_std();
        match self.reference {
            NoiseReference::PerMeasurement => voltages.iter().map(|v| k * v.abs()).collect(),
            NoiseReference::FrameRms => vec![k * rms(voltages); voltages.len()],
            NoiseReference::FrameMax => vec![k * max_abs(voltages); voltages.len()],
        }
    }

    /// Noise-generator for stream `stream` of this model's seed.
    pub fn rng(&self, stream: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Returns `frame` plus noise drawn from RNG stream `stream`; the model and
/// stream are recorded in the metadata.
pub fn add_noise(frame: &Frame, model: &NoiseModel, stream: u64) -> Result<Frame> {
    model.validate()?;
    if frame.is_empty() {
        return Err(Error::Input("cannot add noise to an empty frame".into()));
    }
    let stds = model.std_per_row(&frame.voltages);
    let mut rng = model.rng(stream);
    let voltages = frame
        .voltages
        .iter()
        .zip(&stds)
        .map(|(v, s)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + s * z
        })
        .collect();
    let mut out = frame.clone();
    out.voltages = voltages;
    out.metadata.noise = Some((*model, stream));
    Ok(out)
}

/// Scalar detection threshold: ten noise standard deviations, with the
/// per-measurement convention averaged over the frame.
pub fn detection_threshold(frame: &Frame, model: &NoiseModel) -> Result<f64> {
    model.validate()?;
    if frame.is_empty() {
        return Err(Error::Input("empty frame has no detection threshold".into()));
    }
    let stds = model.std_per_row(&frame.voltages);
    Ok(THRESHOLD_FACTOR * stds.iter().sum::<f64>() / stds.len() as f64)
}

/// Per-row detection thresholds (ten noise standard deviations each).
pub fn detection_thresholds(frame: &Frame, model: &NoiseModel) -> Result<Vec<f64>> {
    model.validate()?;
    Ok(model
        .std_per_row(&frame.voltages)
        .into_iter()
        .map(|s| THRESHOLD_FACTOR * s)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{radial_protocol, FrameMetadata};
    use approx::assert_relative_eq;

    fn frame(v: Vec<f64>) -> Frame {
        Frame::new(radial_protocol(), v, FrameMetadata::default()).unwrap()
    }

    #[test]
    fn frame_max_threshold_arithmetic() {
        let mut v = vec![0.01; 8];
        v[3] = -0.05;
        let m = NoiseModel {
            reference: NoiseReference::FrameMax,
            ..Default::default()
        };
        assert_relative_eq!(detection_threshold(&frame(v.clone()), &m).unwrap(), 0.5e-3, max_relative = 1e-12);
        let doubled: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        assert_relative_eq!(detection_threshold(&frame(doubled), &m).unwrap(), 1e-3, max_relative = 1e-12);
        let m40 = NoiseModel { snr_db: 40.0, ..m };
        assert_relative_eq!(detection_threshold(&frame(v), &m40).unwrap(), 5e-3, max_relative = 1e-12);
    }

    #[test]
    fn per_measurement_std_is_proportional() {
        let v: Vec<f64> = (1..=8).map(|k| k as f64 * 1e-3).collect();
        let s = NoiseModel::default().std_per_row(&v);
        for (a, b) in s.iter().zip(&v) {
            assert_relative_eq!(*a, 1e-3 * b, max_relative = 1e-12);
        }
    }

    #[test]
    fn empirical_std_matches_model() {
        let v = vec![0.02; 8];
        let m = NoiseModel::default();
        let mut samples = Vec::new();
        for stream in 0..2000 {
            let f = add_noise(&frame(v.clone()), &m, stream).unwrap();
            samples.extend(f.voltages.iter().map(|x| x - 0.02));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 4.0 * 2e-5 / n.sqrt());
        assert_relative_eq!(sd, 2e-5, max_relative = 0.03);
    }

    #[test]
    fn deterministic_and_vanishing_at_high_snr() {
        let v: Vec<f64> = (0..8).map(|k| 0.01 + k as f64 * 1e-3).collect();
        let m = NoiseModel::default();
        let a = add_noise(&frame(v.clone()), &m, 3).unwrap();
        let b = add_noise(&frame(v.clone()), &m, 3).unwrap();
        assert_eq!(a, b);
        let c = add_noise(&frame(v.clone()), &m, 4).unwrap();
        assert_ne!(a.voltages, c.voltages);
        let quiet = NoiseModel { snr_db: 400.0, ..m };
        let q = add_noise(&frame(v.clone()), &quiet, 0).unwrap();
        for (x, y) in q.voltages.iter().zip(&v) {
            assert_relative_eq!(*x, *y, max_relative = 1e-15);
        }
    }

    #[test]
    fn reference_names_round_trip() {
        for r in [NoiseReference::PerMeasurement, NoiseReference::FrameRms, NoiseReference::FrameMax] {
            assert_eq!(r.to_string().parse::<NoiseReference>().unwrap(), r);
        }
    }
}
