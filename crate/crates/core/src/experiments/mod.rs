//! Configuration-driven replays of the inflation, lesion and dilation
//! experiments on synthetic data, plus the two parameter sweeps, with a
//! plain-text manifest of every artifact written.

mod calibration;
mod config;
mod manifest;
mod scenarios;

use std::fs;
use std::path::Path;

pub use calibration::{
    calibrate, coefficient_of_variation, deviation_cv, peak_azimuth, peak_shift, peak_width, row_azimuths,
    CalibrationSet,
};
pub use config::{ExperimentConfig, Scenario, CONFIG_VERSION};
pub use manifest::{Artifact, ArtifactKind, Manifest, RunStatus, MANIFEST_FILE};
pub use scenarios::{
    dilation_schedule, inflation_radii, reconstruction_mesh, run_dilation, run_ellipticity, run_lesion, CaseImage,
    DilationResult, EllipticityResult, ImageSummary, InflationSeries, InflationStudy, LesionResult, PeakShift,
    Simulator,
};

use crate::error::{Error, Result};
use crate::geometry::{CatheterSpec, LumenProfile};
use crate::inverse::{write_csa_csv, ReconMesh};
use crate::noise::detectability::{sweep_detectability, DetectabilityConfig};
use crate::noise::spacing::{sweep_spacing, SpacingConfig};
use crate::protocol::Frame;
use scenarios::at;

/// Runs the configured scenario, writes its artifacts under
/// `cfg.output`, and returns the manifest (also written as
/// `manifest.txt`). On failure a partial manifest is written and the error
/// names the failing stage.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output)?;
    let mut out = Manifest::new(&cfg.output, cfg);
    let result = run_into(cfg, &mut out);
    out.status = match &result {
        Ok(()) => RunStatus::Complete,
        Err(Error::Stage { stage, .. }) => RunStatus::Failed(stage.clone()),
        Err(_) => RunStatus::Failed("setup".into()),
    };
    out.write()?;
    result.map(|()| out)
}

fn run_into(cfg: &ExperimentConfig, out: &mut Manifest) -> Result<()> {
    out.add(ArtifactKind::Toml, "config.toml", |p| Ok(fs::write(p, cfg.to_toml())?))
        .map_err(at("write"))?;
    match cfg.scenario {
        Scenario::Ellipticity => {
            let r = run_ellipticity(cfg)?;
            let rm = reconstruction_mesh(cfg).map_err(at("write"))?;
            write_study(out, &r.study).map_err(at("write"))?;
            write_images(out, &r.images, &rm).map_err(at("write"))?;
            out.add(ArtifactKind::Csv, "peaks.csv", |p| {
                let mut w = csv::Writer::from_path(p)?;
                w.write_record(["aspect_ratio", "rotation_deg", "peak_azimuth_deg", "shift_electrodes"])?;
                for k in &r.peaks {
                    w.write_record([
                        k.aspect_ratio.to_string(),
                        k.rotation.to_string(),
                        k.peak_azimuth.to_string(),
                        k.shift.to_string(),
                    ])?;
                }
                Ok(w.flush()?)
            })
            .map_err(at("write"))?;
        }
        Scenario::Lesion => {
            let r = run_lesion(cfg)?;
            let rm = reconstruction_mesh(cfg).map_err(at("write"))?;
            write_study(out, &r.study).map_err(at("write"))?;
            write_images(out, &r.images, &rm).map_err(at("write"))?;
            out.add(ArtifactKind::Csv, "peak.csv", |p| {
                let mut w = csv::Writer::from_path(p)?;
                w.write_record(["lesion_azimuth_deg", "peak_azimuth_deg", "peak_width_rows"])?;
                w.write_record([
                    r.lesion_azimuth.to_string(),
                    r.peak_azimuth.to_string(),
                    r.peak_width.to_string(),
                ])?;
                Ok(w.flush()?)
            })
            .map_err(at("write"))?;
        }
        Scenario::Dilation => {
            let r = run_dilation(cfg)?;
            let rm = reconstruction_mesh(cfg).map_err(at("write"))?;
            write_dilation(out, &r, &rm).map_err(at("write"))?;
        }
        Scenario::SpacingSweep => {
            let defaults = SpacingConfig::default();
            let sweep = SpacingConfig {
                spacings: cfg.spacings.clone().unwrap_or(defaults.spacings),
                profile: LumenProfile {
                    major_diameter: cfg.diameter(),
                    ..defaults.profile
                },
                resolution: cfg.mesh_resolution()?,
                forward: cfg.forward_config(),
                ..SpacingConfig::default()
            };
            let result = sweep_spacing(&sweep).map_err(at("spacing sweep"))?;
            out.add(ArtifactKind::Csv, "spacing.csv", |p| result.write_csv(p))
                .map_err(at("write"))?;
        }
        Scenario::DetectabilitySweep => {
            let defaults = DetectabilityConfig::default();
            let sweep = DetectabilityConfig {
                diameters: cfg.sweep_diameters.clone().unwrap_or(defaults.diameters),
                aspect_ratios: cfg.sweep_aspect_ratios.clone().unwrap_or(defaults.aspect_ratios),
                resolution: cfg.mesh_resolution()?,
                catheter: CatheterSpec::default(),
                forward: cfg.forward_config(),
                noise: cfg.noise_model(),
                monte_carlo_trials: cfg.monte_carlo_trials,
            };
            let result = sweep_detectability(&sweep).map_err(at("detectability sweep"))?;
            out.add(ArtifactKind::Csv, "detectability_cases.csv", |p| result.write_cases_csv(p))
                .map_err(at("write"))?;
            out.add(ArtifactKind::Csv, "detectability_summary.csv", |p| result.write_summary_csv(p))
                .map_err(at("write"))?;
            out.add(ArtifactKind::Csv, "detectability_failures.csv", |p| result.write_failures_csv(p))
                .map_err(at("write"))?;
        }
    }
    Ok(())
}

fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    frame.write_csv(std::io::BufWriter::new(fs::File::create(path)?))
}

fn cv_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| x.to_string())
}

/// Long-format series tables plus the final full-protocol frames.
fn write_study(out: &mut Manifest, study: &InflationStudy) -> Result<()> {
    out.add(ArtifactKind::Csv, "frames.csv", |p| {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record([
            "case", "step", "balloon_radius_mm", "row", "inject_pos", "inject_neg", "meas_pos", "meas_neg", "voltage",
        ])?;
        let sets = std::iter::once(("free_space", &study.baseline))
            .chain(study.series.iter().map(|s| (s.label.as_str(), &s.measured)));
        for (label, frames) in sets {
            for (t, f) in frames.iter().enumerate() {
                for (i, (m, v)) in f.protocol.rows.iter().zip(&f.voltages).enumerate() {
                    w.write_record([
                        label.to_string(),
                        t.to_string(),
                        study.radii[t].to_string(),
                        i.to_string(),
                        m.inject_pos.to_string(),
                        m.inject_neg.to_string(),
                        m.meas_pos.to_string(),
                        m.meas_neg.to_string(),
                        v.to_string(),
                    ])?;
                }
            }
        }
        Ok(w.flush()?)
    })?;
    out.add(ArtifactKind::Csv, "calibrated.csv", |p| {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["case", "step", "row", "calibrated", "dv_limit"])?;
        for s in &study.series {
            for (t, (f, limit)) in s.calibrated.iter().zip(&s.dv_limit).enumerate() {
                for (i, v) in f.voltages.iter().enumerate() {
                    w.write_record([s.label.clone(), t.to_string(), i.to_string(), v.to_string(), limit.to_string()])?;
                }
            }
        }
        Ok(w.flush()?)
    })?;
    out.add(ArtifactKind::Csv, "cv.csv", |p| {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["case", "step", "balloon_radius_mm", "cv", "cv_deviation"])?;
        for s in &study.series {
            for (t, (c, d)) in s.cv.iter().zip(&s.cv_deviation).enumerate() {
                w.write_record([
                    s.label.clone(),
                    t.to_string(),
                    study.radii[t].to_string(),
                    cv_cell(*c),
                    cv_cell(*d),
                ])?;
            }
        }
        Ok(w.flush()?)
    })?;
    fs::create_dir_all(out.root().join("frames_full"))?;
    out.add(ArtifactKind::Csv, "frames_full/reference.csv", |p| write_frame(p, &study.reference_full))?;
    for s in &study.series {
        out.add(ArtifactKind::Csv, &format!("frames_full/{}.csv", s.label), |p| write_frame(p, &s.final_full))?;
    }
    Ok(())
}

fn write_images(out: &mut Manifest, images: &[CaseImage], rm: &ReconMesh) -> Result<()> {
    out.add(ArtifactKind::Csv, "images.csv", |p| {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record([
            "case",
            "mode",
            "lambda",
            "iterations",
            "forward_solves",
            "dominant_decrease_deg",
            "decrease_axis_deg",
            "minimum_1_deg",
            "minimum_2_deg",
        ])?;
        for c in images {
            let s = &c.summary;
            w.write_record([
                s.case.clone(),
                s.mode.to_string(),
                c.image.lambda.to_string(),
                c.image.iterations.to_string(),
                c.image.forward_solves.to_string(),
                s.dominant_decrease.to_string(),
                s.decrease_axis.to_string(),
                s.minima[0].to_string(),
                s.minima[1].to_string(),
            ])?;
        }
        Ok(w.flush()?)
    })?;
    fs::create_dir_all(out.root().join("images"))?;
    for c in images {
        let stem = format!("images/{}_{}", c.summary.case, c.summary.mode);
        out.add(ArtifactKind::Vtk, &format!("{stem}.vtk"), |p| c.image.write_vtk(rm, p))?;
        out.add(ArtifactKind::Csv, &format!("{stem}.csv"), |p| c.image.write_csv(p))?;
    }
    Ok(())
}

fn write_dilation(out: &mut Manifest, r: &DilationResult, rm: &ReconMesh) -> Result<()> {
    out.add(ArtifactKind::Csv, "csa.csv", |p| write_csa_csv(&r.csa, p))?;
    out.add(ArtifactKind::Csv, "series.csv", |p| {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["frame", "time_s", "indent_depth_mm", "area_mm2", "deficit_direction_deg", "lambda"])?;
        for (k, est) in r.csa.iter().enumerate() {
            w.write_record([
                k.to_string(),
                r.times[k].to_string(),
                r.depths[k].to_string(),
                est.area.to_string(),
                est.deficit_direction().map_or_else(String::new, |d| d.to_string()),
                r.lambda.to_string(),
            ])?;
        }
        Ok(w.flush()?)
    })?;
    for dir in ["frames", "images"] {
        fs::create_dir_all(out.root().join(dir))?;
    }
    out.add(ArtifactKind::Csv, "frames/reference.csv", |p| write_frame(p, &r.reference))?;
    for (k, f) in r.frames.iter().enumerate() {
        out.add(ArtifactKind::Csv, &format!("frames/frame_{k:03}.csv"), |p| write_frame(p, f))?;
    }
    for (k, (ptd, td)) in r.ptd.iter().zip(&r.td).enumerate() {
        for (tag, img) in [("ptd", ptd), ("td", td)] {
            let stem = format!("images/{tag}_{k:03}");
            out.add(ArtifactKind::Vtk, &format!("{stem}.vtk"), |p| img.write_vtk(rm, p))?;
            out.add(ArtifactKind::Csv, &format!("{stem}.csv"), |p| img.write_csv(p))?;
        }
    }
    Ok(())
}
