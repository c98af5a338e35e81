//! Synthetic inflation, lesion and dilation experiments.
//!
//! Inflation is geometric: at step `t` the balloon boundary is the lumen
//! wall clamped to a free radius growing linearly from the configured start
//! to half the lumen diameter. The free-space baseline of step `t` is the
//! circle of that radius. Noise streams are drawn in a fixed order, so a
//! run is a pure function of its configuration.

use crate::error::{Error, Result};
use crate::fem::ForwardModel;
use crate::geometry::{phantom_mesh, CatheterSpec, LumenProfile, MeshResolution};
use crate::inverse::{
    approximate_csa_series, azimuthal_profile, reconstruct_absolute, reconstruct_difference, select_lambda_cv,
    AbsoluteConfig, AzimuthalProfile, CsaConfig, CsaEstimate, CvConfig, DifferenceMode, ReconConfig, ReconMesh,
    ReconMode, Reconstruction,
};
use crate::noise::{add_noise, detection_threshold, NoiseModel};
use crate::protocol::{full_protocol, Frame, Protocol};

use super::calibration::{
    calibrate, coefficient_of_variation, deviation_cv, peak_azimuth, peak_shift, peak_width, row_azimuths,
    CalibrationSet,
};
use super::config::ExperimentConfig;

/// Axial thickness of the mid-slice used by image summaries, mm.
const SLICE_THICKNESS: f64 = 2.0;

/// Wraps an error with the name of the stage that produced it.
pub(crate) fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: stage.into(),
            source: Box::new(e),
        },
    }
}

/// Phantom simulation with a sequential noise-stream counter.
pub struct Simulator {
    catheter: CatheterSpec,
    resolution: MeshResolution,
    cfg: ExperimentConfig,
    noise: NoiseModel,
    next_stream: u64,
}

impl Simulator {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            catheter: CatheterSpec::default(),
            resolution: cfg.mesh_resolution()?,
            cfg: cfg.clone(),
            noise: cfg.noise_model(),
            next_stream: 0,
        })
    }

    pub fn catheter(&self) -> &CatheterSpec {
        &self.catheter
    }

    /// Noiseless frames of `profile`, one per protocol, sharing one mesh
    /// and one set of electrode fields.
    pub fn simulate(&self, profile: &LumenProfile, protocols: &[&Protocol], label: &str) -> Result<Vec<Frame>> {
        let mesh = phantom_mesh(profile, &self.catheter, &self.resolution)?;
        let model = ForwardModel::new(mesh, self.cfg.forward_config())?;
        let fields = model.electrode_fields(&model.homogeneous())?;
        protocols
            .iter()
            .map(|p| {
                let mut f = model.frame_from_fields(&fields, p)?;
                f.metadata.label = label.into();
                Ok(f)
            })
            .collect()
    }

    /// `frame` plus noise from the next stream.
    pub fn noisy(&mut self, frame: &Frame) -> Result<Frame> {
        let stream = self.next_stream;
        self.next_stream += 1;
        add_noise(frame, &self.noise, stream)
    }
}

/// Free balloon radius per step: linear from `start` to `end` inclusive.
pub fn inflation_radii(start: f64, end: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|k| start + (end - start) * k as f64 / (steps - 1) as f64)
        .collect()
}

/// One lumen inflated through all steps.
#[derive(Debug, Clone)]
pub struct InflationSeries {
    pub label: String,
    pub profile: LumenProfile,
    /// Noisy frames per step on the series protocol.
    pub measured: Vec<Frame>,
    /// `measured - baseline` per step.
    pub calibrated: Vec<Frame>,
    /// Detection threshold per step from the noiseless measured frame, V.
    pub dv_limit: Vec<f64>,
    /// `std / |mean|` of the measured frame per step.
    pub cv: Vec<Option<f64>>,
    /// Std of the relative deviation from the free-space circle per step.
    pub cv_deviation: Vec<Option<f64>>,
    /// Noisy full-protocol frame at full inflation.
    pub final_full: Frame,
}

impl InflationSeries {
    /// Largest calibrated magnitude at full inflation over its threshold.
    pub fn final_excess(&self) -> f64 {
        let last = self.calibrated.last().expect("series has steps");
        let peak = last.voltages.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        peak / self.dv_limit.last().expect("series has steps")
    }
}

#[derive(Debug, Clone)]
pub struct InflationStudy {
    pub radii: Vec<f64>,
    /// Noisy free-space frames per step.
    pub baseline: Vec<Frame>,
    /// Noiseless full-protocol frame of the unobstructed lumen, the
    /// pseudo-time-difference reference.
    pub reference_full: Frame,
    pub series: Vec<InflationSeries>,
}

impl InflationStudy {
    pub fn series(&self, label: &str) -> Option<&InflationSeries> {
        self.series.iter().find(|s| s.label == label)
    }
}

fn inflation_study(cfg: &ExperimentConfig, sim: &mut Simulator, cases: &[(String, LumenProfile)]) -> Result<InflationStudy> {
    let protocol = cfg.series_protocol()?;
    let full = full_protocol();
    let radii = inflation_radii(cfg.balloon_start_radius, 0.5 * cfg.diameter(), cfg.inflation_steps);
    let last = radii.len() - 1;
    let noise = cfg.noise_model();
    let mut baseline_clean = Vec::with_capacity(radii.len());
    let mut baseline = Vec::with_capacity(radii.len());
    let mut reference_full = None;
    let mut clean: Vec<Vec<Frame>> = vec![Vec::new(); cases.len()];
    let mut measured: Vec<Vec<Frame>> = vec![Vec::new(); cases.len()];
    let mut final_full = vec![None; cases.len()];
    for (t, &r) in radii.iter().enumerate() {
        let protocols: Vec<&Protocol> = if t == last { vec![&protocol, &full] } else { vec![&protocol] };
        let mut frames = sim.simulate(&LumenProfile::circle(2.0 * r), &protocols, &format!("free-space step {t}"))?;
        if t == last {
            reference_full = frames.pop();
        }
        baseline.push(sim.noisy(&frames[0])?);
        baseline_clean.push(frames.swap_remove(0));
        for (c, (label, profile)) in cases.iter().enumerate() {
            let inflated = profile.clone().with_balloon_radius(r);
            let mut frames = sim.simulate(&inflated, &protocols, &format!("{label} step {t}"))?;
            if t == last {
                final_full[c] = Some(sim.noisy(&frames[1])?);
                frames.truncate(1);
            }
            measured[c].push(sim.noisy(&frames[0])?);
            clean[c].push(frames.swap_remove(0));
        }
    }
    let mut series = Vec::with_capacity(cases.len());
    for (c, (label, profile)) in cases.iter().enumerate() {
        let calibrated = calibrate(&CalibrationSet {
            baseline: baseline.clone(),
            measured: measured[c].clone(),
        })?;
        let dv_limit = clean[c]
            .iter()
            .map(|f| detection_threshold(f, &noise))
            .collect::<Result<Vec<_>>>()?;
        series.push(InflationSeries {
            label: label.clone(),
            profile: profile.clone(),
            cv: coefficient_of_variation(&measured[c])?,
            cv_deviation: deviation_cv(&measured[c], &baseline_clean)?,
            calibrated,
            dv_limit,
            measured: std::mem::take(&mut measured[c]),
            final_full: final_full[c].take().expect("final step simulated"),
        });
    }
    Ok(InflationStudy {
        radii,
        baseline,
        reference_full: reference_full.expect("final step simulated"),
        series,
    })
}

/// Azimuthal summary of one reconstructed image.
#[derive(Debug, Clone)]
pub struct ImageSummary {
    pub case: String,
    pub mode: ReconMode,
    pub profile: AzimuthalProfile,
    /// Centroid azimuth of the dominant decrease, degrees.
    pub dominant_decrease: f64,
    /// Axis of the lowest second harmonic, degrees modulo 180.
    pub decrease_axis: f64,
    pub minima: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct CaseImage {
    pub summary: ImageSummary,
    pub image: Reconstruction,
}

/// Shared reconstruction mesh for a run (circular 30 mm model, full
/// protocol).
pub fn reconstruction_mesh(cfg: &ExperimentConfig) -> Result<ReconMesh> {
    ReconMesh::new(&ReconConfig {
        forward: cfg.forward_config(),
        ..ReconConfig::default()
    })
}

fn absolute_config(cfg: &ExperimentConfig) -> AbsoluteConfig {
    AbsoluteConfig {
        lambda: cfg.absolute_lambda,
        max_iterations: cfg.max_iterations,
        noser_exponent: cfg.noser_exponent,
        ..AbsoluteConfig::default()
    }
}

fn summarise(case: &str, image: Reconstruction, rm: &ReconMesh, bins: usize) -> Result<CaseImage> {
    let profile = azimuthal_profile(&image.values, rm, bins, SLICE_THICKNESS, 0.0)?;
    Ok(CaseImage {
        summary: ImageSummary {
            case: case.into(),
            mode: image.mode,
            dominant_decrease: profile.dominant_decrease(),
            decrease_axis: profile.decrease_axis(),
            minima: profile.antipodal_minima(),
            profile,
        },
        image,
    })
}

/// Absolute and pseudo-time-difference images of each series' final
/// full-protocol frame.
fn case_images(cfg: &ExperimentConfig, study: &InflationStudy, labels: &[&str], rm: &ReconMesh) -> Result<Vec<CaseImage>> {
    let abs = absolute_config(cfg);
    let mut out = Vec::new();
    for &label in labels {
        let s = study
            .series(label)
            .ok_or_else(|| Error::Input(format!("no series `{label}`")))?;
        let a = reconstruct_absolute(&s.final_full, rm, &abs)?;
        out.push(summarise(label, a, rm, cfg.profile_bins)?);
        let p = reconstruct_difference(
            &s.final_full,
            &study.reference_full,
            rm,
            cfg.lambda,
            DifferenceMode::PseudoTimeDifference,
        )?;
        out.push(summarise(label, p, rm, cfg.profile_bins)?);
    }
    Ok(out)
}

fn ellipse_label(aspect_ratio: f64, rotation: f64) -> String {
    format!("ellipse_f{aspect_ratio}_r{rotation}")
}

/// Position of the calibrated-voltage peak of one rotated ellipse.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakShift {
    pub aspect_ratio: f64,
    pub rotation: f64,
    /// Peak azimuth of the second harmonic of the final calibrated frame,
    /// degrees modulo 180.
    pub peak_azimuth: f64,
    /// Shift from the first rotation's peak in electrode pitches. Its sign
    /// is arbitrary when the shift is exactly half a period.
    pub shift: f64,
}

#[derive(Debug, Clone)]
pub struct EllipticityResult {
    pub study: InflationStudy,
    pub images: Vec<CaseImage>,
    pub peaks: Vec<PeakShift>,
}

/// Circle plus every (aspect ratio, rotation) ellipse, inflated, calibrated
/// and imaged at full inflation.
pub fn run_ellipticity(cfg: &ExperimentConfig) -> Result<EllipticityResult> {
    let d = cfg.diameter();
    let mut sim = Simulator::new(cfg)?;
    let mut cases = vec![("circle".to_string(), LumenProfile::circle(d))];
    for &f in &cfg.aspect_ratios {
        for &r in &cfg.rotations {
            cases.push((ellipse_label(f, r), LumenProfile::ellipse(d, f).with_rotation(r)));
        }
    }
    let study = inflation_study(cfg, &mut sim, &cases).map_err(at("inflation"))?;
    let azimuths = row_azimuths(&cfg.series_protocol()?, sim.catheter());
    let pitch = sim.catheter().pitch().to_degrees();
    let mut peaks = Vec::new();
    for &f in &cfg.aspect_ratios {
        let mut first = None;
        for &r in &cfg.rotations {
            let s = study.series(&ellipse_label(f, r)).expect("case simulated");
            let cal = s.calibrated.last().expect("series has steps");
            let peak = peak_azimuth(&cal.voltages, &azimuths, 2).map_err(at("peak analysis"))?;
            let base = *first.get_or_insert(peak);
            peaks.push(PeakShift {
                aspect_ratio: f,
                rotation: r,
                peak_azimuth: peak,
                shift: peak_shift(base, peak, 2, pitch),
            });
        }
    }
    let labels: Vec<String> = cases.iter().skip(1).map(|(l, _)| l.clone()).collect();
    let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
    let rm = reconstruction_mesh(cfg).map_err(at("reconstruction"))?;
    let images = case_images(cfg, &study, &labels, &rm).map_err(at("reconstruction"))?;
    Ok(EllipticityResult { study, images, peaks })
}

#[derive(Debug, Clone)]
pub struct LesionResult {
    pub study: InflationStudy,
    pub images: Vec<CaseImage>,
    pub lesion_azimuth: f64,
    /// First-harmonic peak azimuth of the final calibrated lesion frame.
    pub peak_azimuth: f64,
    /// Rows of that frame at or above half its maximum.
    pub peak_width: usize,
}

/// Circular lumen with and without a crescent lesion.
pub fn run_lesion(cfg: &ExperimentConfig) -> Result<LesionResult> {
    let d = cfg.diameter();
    let mut sim = Simulator::new(cfg)?;
    let cases = vec![
        ("circle".to_string(), LumenProfile::circle(d)),
        ("lesion".to_string(), LumenProfile::crescent(d).with_rotation(cfg.lesion_azimuth)),
    ];
    let study = inflation_study(cfg, &mut sim, &cases).map_err(at("inflation"))?;
    let azimuths = row_azimuths(&cfg.series_protocol()?, sim.catheter());
    let cal = study.series("lesion").expect("case simulated").calibrated.last().expect("series has steps");
    let peak = peak_azimuth(&cal.voltages, &azimuths, 1).map_err(at("peak analysis"))?;
    let width = peak_width(&cal.voltages);
    let rm = reconstruction_mesh(cfg).map_err(at("reconstruction"))?;
    let images = case_images(cfg, &study, &["lesion"], &rm).map_err(at("reconstruction"))?;
    Ok(LesionResult {
        study,
        images,
        lesion_azimuth: cfg.lesion_azimuth.rem_euclid(360.0),
        peak_azimuth: peak,
        peak_width: width,
    })
}

#[derive(Debug, Clone)]
pub struct DilationResult {
    /// Frame times, s.
    pub times: Vec<f64>,
    /// Indenter depth per frame, mm.
    pub depths: Vec<f64>,
    /// Noisy full-protocol frames.
    pub frames: Vec<Frame>,
    /// Noiseless frame of the unindented lumen.
    pub reference: Frame,
    pub lambda: f64,
    pub ptd: Vec<Reconstruction>,
    /// Time-difference images against the first frame.
    pub td: Vec<Reconstruction>,
    pub csa: Vec<CsaEstimate>,
    pub indenter_azimuth: f64,
}

impl DilationResult {
    /// Number of consecutive CSA pairs that decrease.
    pub fn monotonicity_violations(&self) -> usize {
        self.csa.windows(2).filter(|w| w[1].area < w[0].area).count()
    }
}

/// Indenter depth per frame as it retracts at the configured rate.
pub fn dilation_schedule(cfg: &ExperimentConfig) -> (Vec<f64>, Vec<f64>) {
    let duration = cfg.indent_depth / cfg.retraction_rate;
    let frames = (duration * cfg.frame_rate + 1e-9).floor() as usize + 1;
    let times: Vec<f64> = (0..frames).map(|k| k as f64 / cfg.frame_rate).collect();
    let depths = times
        .iter()
        .map(|t| (cfg.indent_depth - cfg.retraction_rate * t).max(0.0))
        .collect();
    (times, depths)
}

/// Retracting indenter in a circular lumen, imaged frame by frame.
pub fn run_dilation(cfg: &ExperimentConfig) -> Result<DilationResult> {
    let d = cfg.diameter();
    let mut sim = Simulator::new(cfg)?;
    let full = full_protocol();
    let (times, depths) = dilation_schedule(cfg);
    let reference = sim
        .simulate(&LumenProfile::circle(d), &[&full], "unindented")
        .map_err(at("simulation"))?
        .remove(0);
    let mut frames = Vec::with_capacity(depths.len());
    for (k, &depth) in depths.iter().enumerate() {
        let profile = LumenProfile::indented(d, depth);
        let clean = sim
            .simulate(&profile, &[&full], &format!("frame {k}"))
            .map_err(at("simulation"))?
            .remove(0);
        frames.push(sim.noisy(&clean).map_err(at("simulation"))?);
    }
    let rm = reconstruction_mesh(cfg).map_err(at("reconstruction"))?;
    let lambda = match cfg.lambda {
        Some(l) => l,
        None => {
            select_lambda_cv(&rm, &frames[0], &reference, &CvConfig::default())
                .map_err(at("reconstruction"))?
                .selected
        }
    };
    let mut ptd = Vec::with_capacity(frames.len());
    let mut td = Vec::with_capacity(frames.len());
    for f in &frames {
        ptd.push(
            reconstruct_difference(f, &reference, &rm, Some(lambda), DifferenceMode::PseudoTimeDifference)
                .map_err(at("reconstruction"))?,
        );
        td.push(
            reconstruct_difference(f, &frames[0], &rm, Some(lambda), DifferenceMode::TimeDifference)
                .map_err(at("reconstruction"))?,
        );
    }
    let csa_config = CsaConfig {
        threshold_factor: cfg.csa_threshold,
        ..CsaConfig::default()
    };
    let csa = approximate_csa_series(&ptd, &rm, &csa_config).map_err(at("cross-section"))?;
    Ok(DilationResult {
        times,
        depths,
        frames,
        reference,
        lambda,
        ptd,
        td,
        csa,
        indenter_azimuth: LumenProfile::indented(d, cfg.indent_depth).rotation,
    })
}
