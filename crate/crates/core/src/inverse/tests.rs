use std::collections::HashMap;
use std::sync::OnceLock;

use super::*;
use crate::fem::ConductivityField;
use crate::noise::{add_noise, NoiseModel};

fn recon_mesh() -> &'static ReconMesh {
    static RM: OnceLock<ReconMesh> = OnceLock::new();
    RM.get_or_init(|| ReconMesh::new(&ReconConfig::default()).unwrap())
}

/// Noiseless full-protocol frame of `profile` on an independent coarse mesh.
fn phantom_frame(profile: &LumenProfile) -> Frame {
    let mesh = phantom_mesh(profile, &CatheterSpec::default(), &MeshResolution::coarse()).unwrap();
    let model = ForwardModel::new(mesh, ForwardConfig::default()).unwrap();
    model.frame(&model.homogeneous(), &full_protocol()).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn ptd(frame: &Frame, reference: &Frame, lambda: Option<f64>) -> Reconstruction {
    reconstruct_difference(frame, reference, recon_mesh(), lambda, DifferenceMode::PseudoTimeDifference).unwrap()
}

/// Element receiving each element under a rotation by `degrees` about the
/// shaft axis; the mesh must be symmetric under that rotation.
fn rotation_map(mesh: &Mesh, degrees: f64) -> Vec<usize> {
    let key = |p: [f64; 3]| {
        [
            (p[0] * 1e4).round() as i64,
            (p[1] * 1e4).round() as i64,
            (p[2] * 1e4).round() as i64,
        ]
    };
    let index: HashMap<_, _> = (0..mesh.element_count()).map(|e| (key(mesh.centroid(e)), e)).collect();
    let (s, c) = degrees.to_radians().sin_cos();
    (0..mesh.element_count())
        .map(|e| {
            let p = mesh.centroid(e);
            index[&key([c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]])]
        })
        .collect()
}

#[test]
fn default_mesh_matches_the_nominal_size() {
    let rm = recon_mesh();
    assert!((8_000..=15_000).contains(&rm.element_count()), "{}", rm.element_count());
    assert_eq!(rm.parameter_count(), rm.element_count());
    assert_eq!(rm.reference_frame().len(), 136);
    assert_eq!(rm.jacobian().len(), 136 * rm.parameter_count());
    assert!(rm.sensitivity_scale() > 0.0);
}

#[test]
fn mode_names_round_trip() {
    for m in [ReconMode::Absolute, ReconMode::TimeDifference, ReconMode::PseudoTimeDifference] {
        assert_eq!(m.to_string().parse::<ReconMode>().unwrap(), m);
    }
    assert!("tv".parse::<ReconMode>().is_err());
}

#[test]
fn identical_frames_give_an_exactly_zero_image() {
    let rm = recon_mesh();
    let frame = phantom_frame(&LumenProfile::circle(26.0));
    for lambda in [None, Some(0.1)] {
        let r = reconstruct_difference(&frame, &frame, rm, lambda, DifferenceMode::TimeDifference).unwrap();
        assert_eq!(r.mode, ReconMode::TimeDifference);
        assert_eq!(r.values.len(), rm.element_count());
        assert!(r.values.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn difference_image_is_linear_in_the_data() {
    let rm = recon_mesh();
    let reference = rm.reference_frame();
    let change: Vec<f64> = phantom_frame(&LumenProfile::crescent(26.0))
        .voltages
        .iter()
        .zip(&phantom_frame(&LumenProfile::circle(26.0)).voltages)
        .map(|(a, b)| a - b)
        .collect();
    let frame_for = |c: f64| {
        let mut f = reference.clone();
        f.voltages = reference.voltages.iter().zip(&change).map(|(r, d)| r + c * d).collect();
        f
    };
    let one = ptd(&frame_for(1.0), reference, Some(0.05));
    let three = ptd(&frame_for(3.0), reference, Some(0.05));
    let scale = norm(&one.values);
    for (a, b) in one.values.iter().zip(&three.values) {
        assert!((3.0 * a - b).abs() <= 1e-8 * scale, "{a} {b}");
    }
}

#[test]
fn strong_regularisation_shrinks_the_image_monotonically() {
    let rm = recon_mesh();
    let frame = phantom_frame(&LumenProfile::crescent(26.0));
    let norms: Vec<f64> = [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1e4]
        .iter()
        .map(|&l| norm(&ptd(&frame, rm.reference_frame(), Some(l)).values))
        .collect();
    assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    assert!(norms[6] < 1e-6 * norms[0], "{norms:?}");
}

#[test]
fn negative_lambda_is_rejected() {
    let rm = recon_mesh();
    let f = rm.reference_frame();
    assert!(reconstruct_difference(f, f, rm, Some(-1.0), DifferenceMode::TimeDifference).is_err());
}

#[test]
fn protocol_mismatch_is_an_input_error() {
    let rm = recon_mesh();
    let mesh = phantom_mesh(&LumenProfile::circle(26.0), &CatheterSpec::default(), &MeshResolution::coarse()).unwrap();
    let model = ForwardModel::new(mesh, ForwardConfig::default()).unwrap();
    let radial = model.frame(&model.homogeneous(), &crate::protocol::radial_protocol()).unwrap();
    let err = reconstruct_difference(&radial, &radial, rm, Some(0.1), DifferenceMode::TimeDifference).unwrap_err();
    assert!(matches!(err, Error::Input(_)), "{err}");
}

#[test]
fn cross_validation_prefers_more_regularisation_for_noisy_data() {
    let rm = recon_mesh();
    // Data the linearised model explains almost exactly: a small
    // perturbation simulated on the reconstruction mesh itself.
    let mut sigma = vec![rm.background(); rm.element_count()];
    for (e, s) in sigma.iter_mut().enumerate() {
        let c = rm.mesh().centroid(e);
        if c[1] > 8.0 {
            *s *= 0.99;
        }
    }
    let field = ConductivityField::new(sigma).unwrap();
    let clean = rm.model().frame(&field, rm.protocol()).unwrap();
    let noisy = add_noise(&clean, &NoiseModel::default(), 0).unwrap();
    let config = CvConfig::default();
    let a = select_lambda_cv(rm, &clean, rm.reference_frame(), &config).unwrap();
    let b = select_lambda_cv(rm, &noisy, rm.reference_frame(), &config).unwrap();
    assert_eq!(a.errors.len(), 25);
    assert!(a.selected <= 1e-4, "noiseless selection {}", a.selected);
    assert!(b.selected > a.selected, "{} vs {}", b.selected, a.selected);
    let again = select_lambda_cv(rm, &noisy, rm.reference_frame(), &config).unwrap();
    assert_eq!(b, again);
}

#[test]
fn cross_validation_needs_enough_injections() {
    let rm = recon_mesh();
    let f = rm.reference_frame();
    for folds in [1, 25] {
        let config = CvConfig {
            folds,
            ..Default::default()
        };
        assert!(matches!(select_lambda_cv(rm, f, f, &config), Err(Error::Input(_))));
    }
}

#[test]
fn lambda_grid_is_log_spaced() {
    let g = lambda_grid(1e-6, 1e2, 25);
    assert_eq!(g.len(), 25);
    assert!((g[0] - 1e-6).abs() < 1e-18 && (g[24] - 1e2).abs() < 1e-10);
    assert!((g[3] - 1e-5).abs() < 1e-15);
}

#[test]
fn rotating_the_phantom_by_one_pitch_rotates_the_image() {
    let rm = recon_mesh();
    let base = LumenProfile::crescent(26.0);
    let a = ptd(&phantom_frame(&base), rm.reference_frame(), Some(0.05));
    let b = ptd(&phantom_frame(&base.clone().with_rotation(base.rotation + 45.0)), rm.reference_frame(), Some(0.05));
    let map = rotation_map(rm.mesh(), 45.0);
    let mut rotated = vec![0.0; a.values.len()];
    for (e, &t) in map.iter().enumerate() {
        rotated[t] = a.values[e];
    }
    let diff: Vec<f64> = rotated.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    let rel = norm(&diff) / norm(&a.values);
    assert!(rel < 0.05, "relative RMS difference {rel}");
}

#[test]
fn unregularised_solve_recovers_a_coarse_perturbation() {
    let config = ReconConfig {
        resolution: MeshResolution::coarse(),
        ..Default::default()
    };
    let full = ReconMesh::new(&config).unwrap();
    let basis = sector_basis(full.mesh(), 8, &[7.0, 11.0]);
    let rm = full.with_basis(basis).unwrap();
    assert_eq!(rm.parameter_count(), 24);
    let truth: Vec<f64> = (0..24).map(|k| 1e-4 * (1.0 + (k as f64 * 0.7).sin())).collect();
    let sigma: Vec<f64> = rm.expand(&truth).iter().map(|d| rm.background() + d).collect();
    let frame = rm.model().frame(&ConductivityField::new(sigma).unwrap(), rm.protocol()).unwrap();
    let r = reconstruct_difference(&frame, rm.reference_frame(), &rm, Some(0.0), DifferenceMode::TimeDifference)
        .unwrap();
    let got = rm.expand(&truth);
    let diff: Vec<f64> = r.values.iter().zip(&got).map(|(a, b)| a - b).collect();
    let rel = norm(&diff) / norm(&got);
    assert!(rel < 0.01, "relative error {rel}");
}

#[test]
fn sector_basis_numbers_groups_densely() {
    let rm = recon_mesh();
    let basis = sector_basis(rm.mesh(), 4, &[8.0]);
    let max = *basis.iter().max().unwrap();
    assert_eq!(max, 7);
    assert!(ReconMesh::new(&ReconConfig {
        resolution: MeshResolution::coarse(),
        ..Default::default()
    })
    .unwrap()
    .with_basis(vec![0, 2])
    .is_err());
}

#[test]
fn absolute_image_of_the_nominal_lumen_is_uniform() {
    let rm = recon_mesh();
    let r = reconstruct_absolute(rm.reference_frame(), rm, &AbsoluteConfig::default()).unwrap();
    assert_eq!(r.mode, ReconMode::Absolute);
    let bg = rm.background();
    let rms = (r.values.iter().map(|v| (v - bg).powi(2)).sum::<f64>() / r.values.len() as f64).sqrt();
    assert!(rms < 0.05 * bg, "RMS deviation {rms}");
    assert!(!r.stagnated);
}

#[test]
fn gauss_newton_absorbs_a_discretisation_mismatch() {
    let rm = recon_mesh();
    let frame = phantom_frame(&LumenProfile::circle(30.0));
    let r = reconstruct_absolute(&frame, rm, &AbsoluteConfig::default()).unwrap();
    assert!(r.values.iter().all(|&v| v > 0.0));
    let h = &r.residual_history;
    assert!(h[h.len() - 1] < 1e-2 * h[0], "{h:?}");
}

#[test]
fn accepted_gauss_newton_steps_never_increase_the_objective() {
    let rm = recon_mesh();
    let frame = phantom_frame(&LumenProfile::crescent(26.0));
    let r = reconstruct_absolute(&frame, rm, &AbsoluteConfig::default()).unwrap();
    assert!(r.values.iter().all(|&v| v > 0.0));
    assert!(r.iterations >= 1);
    assert_eq!(r.residual_history.len(), r.iterations + 1);
    assert!(r.residual_history.windows(2).all(|w| w[1] <= w[0]));
    for s in r.steps.iter().filter(|s| s.step_fraction > 0.0) {
        assert!(s.objective_after < s.objective_before);
    }
    assert!(r.forward_solves >= r.iterations);
}

#[test]
fn absolute_solver_rejects_a_zero_weight() {
    let rm = recon_mesh();
    let config = AbsoluteConfig {
        lambda: 0.0,
        ..Default::default()
    };
    assert!(reconstruct_absolute(rm.reference_frame(), rm, &config).is_err());
}

#[test]
fn null_image_keeps_the_full_disc() {
    let rm = recon_mesh();
    let zero = Reconstruction {
        values: vec![0.0; rm.element_count()],
        mode: ReconMode::PseudoTimeDifference,
        lambda: 0.1,
        iterations: 1,
        residual_history: vec![0.0, 0.0],
        steps: Vec::new(),
        stagnated: false,
        forward_solves: 0,
    };
    let est = approximate_csa(&zero, rm, &CsaConfig::default()).unwrap();
    let disc = std::f64::consts::PI * 15.0 * 15.0;
    assert!((est.area - disc).abs() < 0.01 * disc, "{}", est.area);
    assert_eq!(est.retained_elements, est.slice_elements);
    assert!(est.deficit_direction().is_none());
}

#[test]
fn bright_hemisphere_is_removed() {
    let rm = recon_mesh();
    let mesh = rm.mesh();
    let adjacent = mesh.electrode_adjacent_elements();
    let mut values: Vec<f64> = (0..mesh.element_count())
        .map(|e| if mesh.centroid(e)[1] > 0.0 { 10.0 } else { 1.0 })
        .collect();
    for &e in &adjacent {
        values[e] = 1.0;
    }
    let image = Reconstruction {
        values,
        mode: ReconMode::TimeDifference,
        lambda: 0.1,
        iterations: 1,
        residual_history: vec![0.0, 0.0],
        steps: Vec::new(),
        stagnated: false,
        forward_solves: 0,
    };
    let est = approximate_csa(&image, rm, &CsaConfig::default()).unwrap();
    assert_eq!(est.electrode_average, 1.0);
    let shaft = rm.catheter().shaft_radius();
    for (t, r) in est.angles.iter().zip(&est.boundary) {
        if *t < 180.0 {
            assert_eq!(*r, shaft, "bin at {t}");
        } else {
            assert!(*r > 12.0, "bin at {t}");
        }
    }
    assert!(angular_distance(est.deficit_direction().unwrap(), 90.0) < 1e-6);
    let half = 0.5 * std::f64::consts::PI * (15.0f64.powi(2) - shaft * shaft) + std::f64::consts::PI * shaft * shaft;
    assert!((est.area - half).abs() < 0.01 * half, "{} vs {half}", est.area);
    assert!(approximate_csa(
        &Reconstruction {
            mode: ReconMode::Absolute,
            ..image
        },
        rm,
        &CsaConfig::default()
    )
    .is_err());
}

#[test]
fn everything_removed_is_a_degenerate_image() {
    let rm = recon_mesh();
    let mesh = rm.mesh();
    let mut values = vec![100.0; mesh.element_count()];
    for e in mesh.electrode_adjacent_elements() {
        values[e] = 1.0;
    }
    let image = Reconstruction {
        values,
        mode: ReconMode::TimeDifference,
        lambda: 0.1,
        iterations: 1,
        residual_history: vec![],
        steps: Vec::new(),
        stagnated: false,
        forward_solves: 0,
    };
    assert!(matches!(
        approximate_csa(&image, rm, &CsaConfig::default()),
        Err(Error::DegenerateImage(_))
    ));
}

#[test]
fn anchored_series_tracks_a_shrinking_perturbation() {
    let rm = recon_mesh();
    let mesh = rm.mesh();
    let pattern: Vec<f64> = (0..mesh.element_count())
        .map(|e| {
            let c = mesh.centroid(e);
            let t = c[1].atan2(c[0]).to_degrees();
            if (t - 90.0).abs() < 40.0 { -(c[0].hypot(c[1]) / 15.0) } else { -0.01 }
        })
        .collect();
    let series: Vec<Reconstruction> = [1.0, 0.6, 0.3, 0.0]
        .iter()
        .map(|&a| Reconstruction {
            values: pattern.iter().map(|p| a * p).collect(),
            mode: ReconMode::PseudoTimeDifference,
            lambda: 0.1,
            iterations: 1,
            residual_history: vec![],
            steps: Vec::new(),
            stagnated: false,
            forward_solves: 0,
        })
        .collect();
    let est = approximate_csa_series(&series, rm, &CsaConfig::default()).unwrap();
    let areas: Vec<f64> = est.iter().map(|e| e.area).collect();
    assert!(areas.windows(2).all(|w| w[1] > w[0]), "{areas:?}");
    assert!(angular_distance(est[0].deficit_direction().unwrap(), 90.0) < 10.0);
    // Per-image thresholds are scale invariant.
    let single: Vec<f64> = series[..3]
        .iter()
        .map(|r| approximate_csa(r, rm, &CsaConfig::default()).unwrap().area)
        .collect();
    assert!(single.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-9), "{single:?}");
}

#[test]
fn lesion_is_located_by_both_solvers() {
    let rm = recon_mesh();
    let lesion = LumenProfile::crescent(26.0);
    let frame = add_noise(&phantom_frame(&lesion), &NoiseModel::default(), 0).unwrap();
    let reference = phantom_frame(&LumenProfile::circle(26.0));
    let images = [
        ptd(&frame, &reference, None),
        reconstruct_absolute(&frame, rm, &AbsoluteConfig::default()).unwrap(),
    ];
    for r in &images {
        let profile = azimuthal_profile(&r.values, rm, 16, 2.0, 0.0).unwrap();
        let found = profile.dominant_decrease();
        assert!(angular_distance(found, lesion.rotation) <= 45.0, "{} at {found}", r.mode);
    }
}
