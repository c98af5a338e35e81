//! Acceptance suite: runs every acceptance criterion at its stated tolerance
//! and prints one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed. The
//! process fails if any check fails, except checks listed in `KNOWN_UNMET`,
//! which are still evaluated and reported as FAIL. Each of those has a
//! written analysis in the decisions ledger; a known-unmet check that starts
//! passing also fails the run, so the list cannot go stale.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use lumen_eit::experiments::{
    run_dilation, run_ellipticity, run_experiment, run_lesion, ArtifactKind, ExperimentConfig, Manifest, RunStatus,
    Scenario,
};
use lumen_eit::fem::{ConductivityField, ForwardConfig, ForwardModel};
use lumen_eit::geometry::{end_cap_cylinder, phantom_mesh, CatheterSpec, LumenProfile, MeshResolution};
use lumen_eit::inverse::{
    angular_distance, axis_distance, reconstruct_difference, DifferenceMode, ReconConfig, ReconMesh, ReconMode,
};
use lumen_eit::noise::detectability::{sweep_detectability, DetectabilityConfig};
use lumen_eit::noise::spacing::{sweep_spacing, SpacingConfig};
use lumen_eit::protocol::{full_protocol, radial_protocol, Measurement, Protocol, RING_SIZE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Checks that fail at desk scale for documented reasons.
const KNOWN_UNMET: &[&str] = &["cd_theta(10) <= 100"];

struct Check {
    name: String,
    pass: bool,
    detail: String,
}

#[derive(Default)]
struct Criterion {
    checks: Vec<Check>,
}

impl Criterion {
    fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            pass,
            detail: detail.into(),
        });
    }
}

fn spacing() -> Criterion {
    let mut c = Criterion::default();
    let t = Instant::now();
    let r = sweep_spacing(&SpacingConfig::default()).expect("spacing sweep");
    let secs = t.elapsed().as_secs_f64();
    let cd10 = r.case(10.0).expect("l = 10").cd_theta;
    c.check("cd_theta(10) <= 100", cd10 <= 100.0, format!("{cd10:.1} deg"));
    let wide: Vec<_> = r.cases.iter().filter(|k| k.spacing >= 20.0).collect();
    let min_wide = wide.iter().map(|k| k.cd_theta).fold(f64::INFINITY, f64::min);
    c.check(
        "cd_theta(l >= 20) > 180",
        !wide.is_empty() && min_wide > 180.0,
        format!("min {min_wide:.1} deg"),
    );
    let spreads: Vec<f64> = r.cases.iter().filter(|k| k.spacing >= 35.0).map(|k| k.j_wall_spread()).collect();
    let worst = spreads.iter().copied().fold(0.0, f64::max);
    c.check(
        "j_wall within 10% for l >= 35",
        !spreads.is_empty() && worst <= 0.10,
        format!("worst spread {:.1}%", 100.0 * worst),
    );
    c.check("sweep under 10 min", secs < 600.0, format!("{secs:.0} s"));
    c
}

fn detectability() -> Criterion {
    let mut c = Criterion::default();
    let t = Instant::now();
    let r = sweep_detectability(&DetectabilityConfig::default()).expect("detectability sweep");
    let secs = t.elapsed().as_secs_f64();
    let f = |d: f64| r.f_max_at(d);
    let show = |v: Option<f64>| v.map_or("none".into(), |x| format!("{x}"));
    c.check("209 cases", r.cases.len() == 209 && r.failures.is_empty(), format!("{} cases", r.cases.len()));
    c.check("f_max(14) >= 0.85", f(14.0).is_some_and(|v| v >= 0.85 - 1e-9), show(f(14.0)));
    c.check(
        "f_max(25) = 0.7 +- 0.1",
        f(25.0).is_some_and(|v| (v - 0.7).abs() <= 0.1 + 1e-9),
        show(f(25.0)),
    );
    c.check(
        "f_max(30) = 0.5 +- 0.1",
        f(30.0).is_some_and(|v| (v - 0.5).abs() <= 0.1 + 1e-9),
        format!("{} (quadratic fit {:.3})", show(f(30.0)), r.fit_at(30.0).unwrap_or(f64::NAN)),
    );
    c.check(
        "size limit 28 +- 2",
        r.size_limit.is_some_and(|d| (d - 28.0).abs() <= 2.0),
        format!("{} mm", show(r.size_limit)),
    );
    let fm: Vec<f64> = r.f_max.iter().map(|v| v.unwrap_or(0.5)).collect();
    c.check(
        "f_max non-increasing",
        r.f_max.iter().all(Option::is_some) && fm.windows(2).all(|w| w[1] <= w[0]),
        format!("{fm:?}"),
    );
    c.check("sweep under 60 min", secs < 3600.0, format!("{secs:.0} s"));
    // Mesh convergence at one diameter: a 1.5x refinement keeps f_max.
    let refined = sweep_detectability(&DetectabilityConfig {
        diameters: vec![20.0],
        aspect_ratios: vec![0.75, 0.8, 0.85, 1.0],
        resolution: MeshResolution::desk().refined(1.5),
        ..DetectabilityConfig::default()
    })
    .expect("refined sweep");
    c.check(
        "f_max(20) stable under refinement",
        refined.f_max_at(20.0) == f(20.0),
        format!("{} refined vs {}", show(refined.f_max_at(20.0)), show(f(20.0))),
    );
    c
}

fn forward_oracles() -> Criterion {
    let mut c = Criterion::default();
    // Uniform cylinder with end-cap electrodes: R = L / (sigma pi r^2).
    let sigma = 1.6;
    let mesh = end_cap_cylinder(5.0, 20.0, 48, 6, 10).expect("cylinder mesh");
    let model = ForwardModel::new(
        mesh,
        ForwardConfig {
            contact_impedance: 1e-6,
            ..ForwardConfig::default()
        },
    )
    .expect("cylinder model");
    let field = ConductivityField::uniform(model.element_count(), sigma).unwrap();
    let r = model.electrode_fields(&field).unwrap().transfer(&Measurement::new(1, 2, 1, 2));
    let exact = 20e-3 / (sigma * PI * 25e-6);
    let rel = (r - exact).abs() / exact;
    c.check("cylinder resistance within 1%", rel <= 0.01, format!("{:.3}%", 100.0 * rel));

    let phantom = |res: &MeshResolution| {
        let mesh = phantom_mesh(&LumenProfile::ellipse(24.0, 0.7), &CatheterSpec::default(), res).unwrap();
        ForwardModel::new(mesh, ForwardConfig::default()).unwrap()
    };
    let m = phantom(&MeshResolution::desk());
    let fields = m.electrode_fields(&m.homogeneous()).unwrap();
    let worst = full_protocol()
        .rows
        .iter()
        .map(|r| {
            let (a, b) = (fields.transfer(r), fields.transfer(&r.reciprocal()));
            (a - b).abs() / a.abs().max(b.abs())
        })
        .fold(0.0, f64::max);
    c.check("reciprocity within 0.1%", worst <= 1e-3, format!("worst {worst:.2e}"));

    let mut res = MeshResolution::coarse();
    res.section.electrode_segments = 1;
    res.section.gap_segments = 1;
    res.section.inner_layers = 1;
    res.section.outer_layers = 2;
    res.axial.coarse = 10.0;
    res.axial.growth = 1.0;
    let m = phantom(&res);
    let p = full_protocol();
    let base = m.homogeneous();
    let jac = m.sensitivity(&base, &p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut checked, mut worst) = (0, 0.0f64);
    while checked < 20 {
        let row = rng.random_range(0..p.len());
        let e = rng.random_range(0..m.element_count());
        let j = jac.get(row, e);
        let row_max = jac.row(row).iter().fold(0.0f64, |s, v| s.max(v.abs()));
        if j.abs() < 1e-6 * row_max {
            continue;
        }
        let h = 1e-3 * base.values()[e];
        let single = Protocol {
            name: "one".into(),
            rows: vec![p.rows[row]],
        };
        let solve = |delta: f64| {
            let mut v = base.values().to_vec();
            v[e] += delta;
            m.frame(&ConductivityField::new(v).unwrap(), &single).unwrap().voltages[0]
        };
        let fd = (solve(h) - solve(-h)) / (2.0 * h);
        worst = worst.max((j - fd).abs() / fd.abs());
        checked += 1;
    }
    c.check(
        "adjoint vs finite differences within 0.1%",
        m.element_count() <= 5000 && worst <= 1e-3,
        format!("{} elements, worst {worst:.2e}", m.element_count()),
    );
    c
}

fn protocol_counts() -> Criterion {
    let mut c = Criterion::default();
    let radial = radial_protocol();
    c.check("radial has 8 rows", radial.len() == RING_SIZE, format!("{}", radial.len()));
    let full = full_protocol();
    let clean = full.rows.iter().all(|r| {
        let inj = [r.inject_pos, r.inject_neg];
        !inj.contains(&r.meas_pos) && !inj.contains(&r.meas_neg)
    });
    c.check(
        "full has 136 rows, none on an injecting electrode",
        full.len() == 136 && clean,
        format!("{} rows", full.len()),
    );
    c
}

struct Runs {
    ellipticity: lumen_eit::experiments::EllipticityResult,
    lesion: lumen_eit::experiments::LesionResult,
    dilation: lumen_eit::experiments::DilationResult,
}

fn localisation(runs: &Runs) -> Criterion {
    let mut c = Criterion::default();
    let truth = runs.lesion.lesion_azimuth;
    for img in &runs.lesion.images {
        let found = img.summary.dominant_decrease;
        let d = angular_distance(found, truth);
        c.check(
            format!("lesion {} within 45 deg", img.summary.mode),
            d <= 45.0,
            format!("{found:.1} vs {truth}"),
        );
    }
    for img in runs.ellipticity.images.iter().filter(|i| i.summary.case.starts_with("ellipse_f0.5_")) {
        let series = runs.ellipticity.study.series(&img.summary.case).expect("series");
        let minor = series.profile.rotation + 90.0;
        let [a, b] = img.summary.minima;
        let pass = axis_distance(a, minor) <= 45.0 && axis_distance(b, minor) <= 45.0 && angular_distance(a, b) >= 90.0;
        c.check(
            format!("{} {} minima on minor axis", img.summary.case, img.summary.mode),
            pass,
            format!("[{a}, {b}] vs {}", minor.rem_euclid(180.0)),
        );
    }
    let rm = ReconMesh::new(&ReconConfig::default()).expect("reconstruction mesh");
    let frame = runs.dilation.frames[0].clone();
    let td = reconstruct_difference(&frame, &frame, &rm, None, DifferenceMode::TimeDifference).unwrap();
    c.check(
        "identical-frame TD image is identically zero",
        td.mode == ReconMode::TimeDifference && td.values.iter().all(|&v| v == 0.0),
        format!("{} elements", td.values.len()),
    );
    c
}

fn ellipticity(runs: &Runs) -> Criterion {
    let mut c = Criterion::default();
    let r = &runs.ellipticity;
    for label in ["ellipse_f0.75_r0", "ellipse_f0.75_r90"] {
        let excess = r.study.series(label).expect("series").final_excess();
        c.check(
            format!("{label} calibrated deviation above dv_limit"),
            excess > 1.0,
            format!("{excess:.2}x dv_limit"),
        );
    }
    for p in r.peaks.iter().filter(|p| p.rotation == 90.0) {
        let s = p.shift.abs();
        c.check(
            format!("f={} peak shift is two electrodes", p.aspect_ratio),
            s.round() == 2.0 && (s - 2.0).abs() < 0.25,
            format!("{s:.3} electrodes"),
        );
    }
    c
}

fn dilation(runs: &Runs) -> Criterion {
    let mut c = Criterion::default();
    let r = &runs.dilation;
    let areas: Vec<f64> = r.csa.iter().map(|e| e.area.round()).collect();
    let v = r.monotonicity_violations();
    c.check("csa non-decreasing with at most one violation", v <= 1, format!("{areas:?}, {v} violation(s)"));
    c.check(
        "csa grows from maximum depth to none",
        r.csa.last().unwrap().area > r.csa[0].area,
        format!("depths {:?}", r.depths.iter().map(|d| (d * 100.0).round() / 100.0).collect::<Vec<_>>()),
    );
    let first = &r.csa[0];
    let dir = first.deficit_direction();
    let frac = first.deficit_fraction_near(r.indenter_azimuth, 45.0);
    c.check(
        "deficit at maximum depth in the indenter sector",
        dir.is_some_and(|d| angular_distance(d, r.indenter_azimuth) <= 45.0) && frac > 0.5,
        format!("direction {:.1} deg, {:.0}% within 45 deg", dir.unwrap_or(f64::NAN), 100.0 * frac),
    );
    c
}

fn csv_files(m: &Manifest) -> Vec<(String, Vec<u8>)> {
    m.artifacts
        .iter()
        .filter(|a| a.kind == ArtifactKind::Csv)
        .map(|a| (a.path.clone(), fs::read(m.artifact_path(a)).expect("artifact")))
        .collect()
}

fn determinism(dir: &Path) -> Criterion {
    let mut c = Criterion::default();
    for scenario in [
        Scenario::Ellipticity,
        Scenario::Lesion,
        Scenario::Dilation,
        Scenario::SpacingSweep,
        Scenario::DetectabilitySweep,
    ] {
        let mut cfg = ExperimentConfig::new(scenario);
        // The spacing metrics need the outer layers of the desk mesh.
        cfg.resolution = if scenario == Scenario::SpacingSweep { "desk" } else { "coarse" }.into();
        cfg.inflation_steps = 4;
        cfg.max_iterations = 2;
        cfg.spacings = Some(vec![10.0, 20.0]);
        cfg.sweep_diameters = Some(vec![14.0, 15.0, 16.0]);
        cfg.sweep_aspect_ratios = Some(vec![0.8, 0.9, 1.0]);
        cfg.monte_carlo_trials = 20;
        let runs: Vec<Manifest> = ["a", "b"]
            .iter()
            .map(|tag| {
                cfg.output = dir.join(format!("{scenario}_{tag}"));
                run_experiment(&cfg).expect("experiment")
            })
            .collect();
        let (a, b) = (csv_files(&runs[0]), csv_files(&runs[1]));
        let ok = runs.iter().all(|m| m.status == RunStatus::Complete && m.verify().is_ok())
            && !a.is_empty()
            && a == b;
        c.check(
            format!("{scenario} rerun byte-identical"),
            ok,
            format!("{} CSV files", a.len()),
        );
    }
    c
}

fn main() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut report: Vec<(&str, Criterion)> = Vec::new();
    report.push(("1 spacing optimisation", spacing()));
    report.push(("2 detectability sweep", detectability()));
    report.push(("3 forward-solver oracles", forward_oracles()));
    report.push(("4 protocol counts", protocol_counts()));
    let runs = Runs {
        ellipticity: run_ellipticity(&ExperimentConfig::new(Scenario::Ellipticity)).expect("ellipticity"),
        lesion: run_lesion(&ExperimentConfig::new(Scenario::Lesion)).expect("lesion"),
        dilation: run_dilation(&ExperimentConfig::new(Scenario::Dilation)).expect("dilation"),
    };
    report.push(("5 reconstruction localisation", localisation(&runs)));
    report.push(("6 ellipticity via calibrated voltages", ellipticity(&runs)));
    report.push(("7 dilation series", dilation(&runs)));
    report.push(("8 determinism", determinism(tmp.path())));

    let mut unexpected = Vec::new();
    println!();
    for (name, crit) in &report {
        let pass = crit.checks.iter().all(|k| k.pass);
        let failed: Vec<&Check> = crit.checks.iter().filter(|k| !k.pass).collect();
        let detail = if pass {
            crit.checks.iter().map(|k| format!("{}: {}", k.name, k.detail)).collect::<Vec<_>>().join("; ")
        } else {
            failed.iter().map(|k| format!("{}: {}", k.name, k.detail)).collect::<Vec<_>>().join("; ")
        };
        println!("criterion {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
        for k in &crit.checks {
            let known = KNOWN_UNMET.contains(&k.name.as_str());
            if k.pass == known {
                unexpected.push(format!("{name} / {}{}", k.name, if known { " (known unmet, now passes)" } else { "" }));
            }
        }
    }
    let met = report.iter().filter(|(_, c)| c.checks.iter().all(|k| k.pass)).count();
    println!(
        "acceptance: {met}/{} criteria met in {:.0} s; known unmet: {KNOWN_UNMET:?}",
        report.len(),
        start.elapsed().as_secs_f64()
    );
    if !unexpected.is_empty() {
        eprintln!("unexpected results: {unexpected:?}");
        std::process::exit(1);
    }
}
