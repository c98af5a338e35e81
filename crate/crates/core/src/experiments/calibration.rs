//! Free-space calibration of inflation series and the statistics computed
//! on calibrated voltages.

use crate::error::{Error, Result};
use crate::geometry::CatheterSpec;
use crate::protocol::{Frame, Protocol};

/// Frames of a free balloon inflating in free space (`baseline`) and of the
/// same inflation steps inside the lumen (`measured`).
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub baseline: Vec<Frame>,
    pub measured: Vec<Frame>,
}

/// Per step and per measurement, `measured - baseline`.
pub fn calibrate(set: &CalibrationSet) -> Result<Vec<Frame>> {
    if set.baseline.len() != set.measured.len() {
        return Err(Error::Input(format!(
            "{} baseline frames for {} measured frames",
            set.baseline.len(),
            set.measured.len()
        )));
    }
    set.measured
        .iter()
        .zip(&set.baseline)
        .map(|(m, b)| m.subtract(b))
        .collect()
}

/// Population standard deviation and mean.
fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (var.sqrt(), mean)
}

/// `std / |mean|` of each frame's measurement vector; `None` marks a frame
/// whose mean is zero, for which the ratio is undefined.
pub fn coefficient_of_variation(frames: &[Frame]) -> Result<Vec<Option<f64>>> {
    frames
        .iter()
        .map(|f| {
            if f.len() < 2 {
                return Err(Error::Input("coefficient of variation needs at least 2 measurements".into()));
            }
            let (std, mean) = moments(&f.voltages);
            Ok((mean != 0.0).then(|| std / mean.abs()))
        })
        .collect()
}

/// Standard deviation of the relative deviation `(measured - expected) /
/// expected` per frame; `None` when an expected value is zero.
pub fn deviation_cv(measured: &[Frame], expected: &[Frame]) -> Result<Vec<Option<f64>>> {
    if measured.len() != expected.len() {
        return Err(Error::Input(format!(
            "{} measured frames for {} expected frames",
            measured.len(),
            expected.len()
        )));
    }
    measured
        .iter()
        .zip(expected)
        .map(|(m, e)| {
            m.check_compatible(e)?;
            if m.len() < 2 {
                return Err(Error::Input("coefficient of variation needs at least 2 measurements".into()));
            }
            if e.voltages.iter().any(|&x| x == 0.0) {
                return Ok(None);
            }
            let rel: Vec<f64> = m.voltages.iter().zip(&e.voltages).map(|(a, b)| (a - b) / b).collect();
            Ok(Some(moments(&rel).0))
        })
        .collect()
}

/// Azimuth (degrees) each row faces: the circular mean of its positive
/// injection and positive measurement electrode azimuths.
pub fn row_azimuths(protocol: &Protocol, catheter: &CatheterSpec) -> Vec<f64> {
    protocol
        .rows
        .iter()
        .map(|r| {
            let a = catheter.electrode_azimuth(r.inject_pos - 1);
            let b = catheter.electrode_azimuth(r.meas_pos - 1);
            let (y, x) = (a.sin() + b.sin(), a.cos() + b.cos());
            y.atan2(x).to_degrees().rem_euclid(360.0)
        })
        .collect()
}

/// Azimuth (degrees, modulo `360 / harmonic`) where the given azimuthal
/// harmonic of `values` peaks. Harmonic 1 locates a single peak, harmonic 2
/// the axis of an antipodal double peak.
pub fn peak_azimuth(values: &[f64], azimuths: &[f64], harmonic: u32) -> Result<f64> {
    if values.len() != azimuths.len() || values.is_empty() || harmonic == 0 {
        return Err(Error::Input("peak location needs one azimuth per value and a positive harmonic".into()));
    }
    let h = f64::from(harmonic);
    let (mut c, mut s) = (0.0, 0.0);
    for (v, t) in values.iter().zip(azimuths) {
        let a = h * t.to_radians();
        c += v * a.cos();
        s += v * a.sin();
    }
    if c == 0.0 && s == 0.0 {
        return Err(Error::DegenerateImage("values carry no component at the requested harmonic".into()));
    }
    Ok((s.atan2(c).to_degrees() / h).rem_euclid(360.0 / h))
}

/// Signed shift from `from` to `to` in electrode pitches, wrapped into the
/// half-open period of the harmonic.
pub fn peak_shift(from: f64, to: f64, harmonic: u32, pitch_deg: f64) -> f64 {
    let period = 360.0 / f64::from(harmonic);
    let mut d = (to - from).rem_euclid(period);
    if d > 0.5 * period {
        d -= period;
    }
    d / pitch_deg
}

/// Number of values at or above half the maximum.
pub fn peak_width(values: &[f64]) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return 0;
    }
    values.iter().filter(|&&v| v >= 0.5 * max).count()
}
