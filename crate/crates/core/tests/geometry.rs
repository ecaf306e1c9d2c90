//! Fundamental tensor, causal classification, connections, curvature and the
//! Berwald diagnostic, checked against closed forms and finite-difference
//! oracles.

mod common;

use common::{mat_gap, ClassicalOracle};
use finsler_core::geometry::{
    berwald_diagnostic, chern_gamma_gap, classify_causal, connection_magnitude, constant_field,
    covariant_derivative, curvature_and_ricci, euler_primal_residual, fundamental_tensor,
    gv_identity_residual, metric_homogeneity_residual, nconn_identity_residual,
    nconn_spray_fd_residual, spray_and_connections, CausalClass, TimeOrientation,
};
use finsler_core::{zoo, Error};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn minkowski_fundamental_tensor_is_eta() {
    let model = zoo::minkowski2();
    let m = fundamental_tensor(&model, &[0.0, 0.0], &[1.0, 0.3]).unwrap();
    let eta = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
    assert!(mat_gap(&m.g, &eta) < 1e-14);
    assert!((m.det_g + 1.0).abs() < 1e-14);
}

#[test]
fn warped_fundamental_tensor_at_origin() {
    let model = zoo::warped2();
    let m = fundamental_tensor(&model, &[0.0, 0.0], &[1.0, 0.2]).unwrap();
    let eta = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
    assert!(mat_gap(&m.g, &eta) < 1e-14);
}

#[test]
fn randers_tensor_matches_fd_hessian() {
    let model = zoo::randers_flat();
    let x = [0.0, 0.0];
    let v = [1.0, 0.1];
    let m = fundamental_tensor(&model, &x, &v).unwrap();
    let fd = common::fd_velocity_hessian(&model, &x, &v, 1e-3);
    for i in 0..2 {
        for j in 0..2 {
            let rel = (m.g[(i, j)] - fd[(i, j)]).abs() / (1.0 + fd[(i, j)].abs());
            assert!(rel < 1e-6, "g[{i}{j}] = {} vs fd {}", m.g[(i, j)], fd[(i, j)]);
        }
    }
}

#[test]
fn signature_error_for_wrong_lagrangian() {
    // L = +v1^2 has signature (+, ...) and must be rejected.
    let file = finsler_core::model::ModelFile::parse(
        r#"
[model]
name = "bad"
n = 2
lagrangian = "v1^2 + v2^2"
orientation = ["1", "0"]
"#,
    )
    .unwrap();
    let model = file.build().unwrap();
    match fundamental_tensor(&model, &[0.0, 0.0], &[1.0, 0.0]) {
        Err(Error::Signature { .. }) => {}
        other => panic!("expected signature error, got {other:?}"),
    }
}

#[test]
fn classification_examples() {
    let model = zoo::minkowski2();
    let x = [0.0, 0.0];

    let info = classify_causal(&model, &x, &[1.0, 0.0]).unwrap();
    assert_eq!(info.class, CausalClass::Timelike);
    assert_eq!(info.orientation, TimeOrientation::Future);
    assert!((info.f.unwrap() - 1.0).abs() < 1e-12);

    let info = classify_causal(&model, &x, &[1.0, 1.0]).unwrap();
    assert_eq!(info.class, CausalClass::Lightlike);
    assert_eq!(info.orientation, TimeOrientation::Future);

    let info = classify_causal(&model, &x, &[0.0, 1.0]).unwrap();
    assert_eq!(info.class, CausalClass::Spacelike);
    assert_eq!(info.orientation, TimeOrientation::None);
    assert!(info.f.is_none());

    let info = classify_causal(&model, &x, &[0.0, 0.0]).unwrap();
    assert_eq!(info.class, CausalClass::Zero);

    let info = classify_causal(&model, &x, &[-2.0, 0.5]).unwrap();
    assert_eq!(info.class, CausalClass::Timelike);
    assert_eq!(info.orientation, TimeOrientation::Past);
}

#[test]
fn minkowski_connections_vanish() {
    let model = zoo::minkowski2();
    let conn = spray_and_connections(&model, &[0.3, -0.7], &[1.0, 0.4]).unwrap();
    assert!(conn.spray.amax() < 1e-14);
    assert!(conn.nconn.amax() < 1e-14);
    for i in 0..2 {
        assert!(conn.gamma[i].amax() < 1e-14);
        assert!(conn.chern[i].amax() < 1e-14);
    }
}

#[test]
fn warped_chern_matches_levi_civita() {
    let model = zoo::warped2();
    for (x1, v) in [(0.0, [1.0, 0.2]), (0.4, [1.3, -0.5]), (-0.6, [0.9, 0.1])] {
        let x = [x1, 0.0];
        let conn = spray_and_connections(&model, &x, &v).unwrap();
        let warp = (2.0 * x1).exp();
        // closed-form Christoffels of -dt^2 + e^{2t} dy^2
        assert!((conn.chern[0][(1, 1)] - warp).abs() < 1e-9);
        assert!((conn.chern[1][(0, 1)] - 1.0).abs() < 1e-9);
        assert!((conn.chern[1][(1, 0)] - 1.0).abs() < 1e-9);
        assert!(conn.chern[0][(0, 0)].abs() < 1e-9);
        assert!(conn.chern[0][(0, 1)].abs() < 1e-9);
        assert!(conn.chern[1][(1, 1)].abs() < 1e-9);
        // quadratic L: Chern symbols coincide with the formal Christoffels
        assert!(chern_gamma_gap(&model, &x, &v).unwrap() < 1e-12);
        // and with the finite-difference classical oracle
        let oracle = ClassicalOracle::new(&model, &[1.0, 0.0]);
        let christoffel = oracle.christoffel(&x);
        for i in 0..2 {
            assert!(mat_gap(&conn.chern[i], &christoffel[i]) < 1e-7);
        }
    }
}

#[test]
fn flat_randers_has_zero_connection() {
    let model = zoo::randers_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let Some((x, v)) = model.sample_point(&mut rng) else {
            panic!("sampling failed")
        };
        assert!(connection_magnitude(&model, &x, &v).unwrap() < 1e-12);
    }
}

#[test]
fn covariant_derivative_constant_field_flat() {
    let model = zoo::minkowski2();
    let field = constant_field(&[1.0, 0.0]);
    let d = covariant_derivative(&model, &field, &[0.0, 0.0], &[0.7, 0.2], &[1.0, 0.1]).unwrap();
    assert!(d.amax() < 1e-14);
}

#[test]
fn covariant_derivative_warped_matches_contraction() {
    let model = zoo::warped2();
    let x = [0.2, 0.1];
    let field = constant_field(&[0.0, 1.0]); // d/dx2
    let v = [1.0, 0.0]; // d/dx1
    let w = [1.0, 0.1];
    let d = covariant_derivative(&model, &field, &x, &v, &w).unwrap();
    // D_v^w X = sum_i Gamma^i_{12}(w) d/dx^i with Gamma^1_12 = 0, Gamma^2_12 = 1
    assert!((d[0] - 0.0).abs() < 1e-9);
    assert!((d[1] - 1.0).abs() < 1e-9);
}

#[test]
fn covariant_derivative_reference_independent_in_berwald() {
    let model = zoo::randers_flat();
    let mut builder_field = Vec::new();
    for src in ["x1*x2", "x1 + x2^2"] {
        builder_field.push(finsler_core::expr::parse(src, &[]).unwrap());
    }
    let x = [0.3, 0.1];
    let v = [0.5, -0.2];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut reference = None;
    let mut max_dev = 0.0f64;
    for _ in 0..20 {
        let Some(w) = model.sample_velocity_at(&x, &mut rng) else {
            continue;
        };
        let d = covariant_derivative(&model, &builder_field, &x, &v, &w).unwrap();
        match &reference {
            None => reference = Some(d),
            Some(r) => max_dev = max_dev.max((r - &d).amax()),
        }
    }
    assert!(reference.is_some());
    assert!(max_dev < 1e-10, "reference dependence {max_dev}");
}

#[test]
fn minkowski_curvature_vanishes() {
    let model = zoo::minkowski4();
    let c = curvature_and_ricci(&model, &[0.0; 4], &[1.0, 0.2, -0.1, 0.3]).unwrap();
    assert!(c.r.amax() < 1e-14);
    assert!(c.ricci.abs() < 1e-14);
}

#[test]
fn warped_ricci_matches_classical_oracle() {
    let model = zoo::warped2();
    let oracle = ClassicalOracle::new(&model, &[1.0, 0.0]);
    for (x, v) in [
        ([0.0, 0.0], [1.0, 0.0]),
        ([0.3, -0.2], [1.0, 0.4]),
        ([-0.5, 0.1], [0.8, -0.3]),
    ] {
        let engine = curvature_and_ricci(&model, &x, &v).unwrap().ricci;
        let classical = oracle.ricci(&x, &v);
        assert!(
            (engine - classical).abs() < 1e-7,
            "Ric mismatch at {x:?}: {engine} vs {classical}"
        );
        // exact classical value for -dt^2 + e^{2t} dy^2: Ric(v) = -v1^2 + e^{2t} v2^2
        let exact = -v[0] * v[0] + (2.0 * x[0]).exp() * v[1] * v[1];
        assert!(
            (engine - exact).abs() < 1e-10,
            "Ric closed-form mismatch at {x:?}: {engine} vs {exact}"
        );
    }
    // spot value: at v = (1, 0) the time-time Ricci of -dt^2+e^{2t}dy^2 is -1
    let spot = curvature_and_ricci(&model, &[0.0, 0.0], &[1.0, 0.0])
        .unwrap()
        .ricci;
    assert!((spot + 1.0).abs() < 1e-10, "Ric(d_t) = {spot}");
}

#[test]
fn ricci_is_two_homogeneous() {
    let model = zoo::warped_quartic();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let Some((x, v)) = model.sample_point(&mut rng) else {
            continue;
        };
        let r = finsler_core::geometry::ricci_homogeneity_residual(&model, &x, &v, 2.0).unwrap();
        assert!(r < 1e-8, "Ric(2v) != 4 Ric(v): residual {r}");
    }
}

#[test]
fn berwald_diagnostic_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let report =
        berwald_diagnostic(&zoo::minkowski2(), &[0.0, 0.0], 12, &mut rng).unwrap();
    assert!(report.is_berwald_numerically);
    assert_eq!(report.max_fiber_variation, 0.0);

    let report =
        berwald_diagnostic(&zoo::randers_flat(), &[0.2, 0.0], 12, &mut rng).unwrap();
    assert!(report.is_berwald_numerically);

    let report =
        berwald_diagnostic(&zoo::warped_quartic(), &[0.0, 0.0], 16, &mut rng).unwrap();
    assert!(!report.is_berwald_numerically);
    assert!(
        report.max_fiber_variation > 1e-3,
        "quartic perturbation fiber variation only {}",
        report.max_fiber_variation
    );
}

#[test]
fn reverse_model_flips_lagrangian() {
    let model = zoo::randers_flat();
    let reversed = model.reverse().unwrap();
    let double = reversed.reverse().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    for _ in 0..100 {
        let Some((x, v)) = model.sample_point(&mut rng) else {
            continue;
        };
        let neg: Vec<f64> = v.iter().map(|c| -c).collect();
        let l = model.lagrangian_value(&x, &v).unwrap();
        let lrev = reversed.lagrangian_value(&x, &neg).unwrap();
        assert!((l - lrev).abs() <= 1e-12 * (1.0 + l.abs()));
        let ldouble = double.lagrangian_value(&x, &v).unwrap();
        assert!((l - ldouble).abs() <= 1e-12 * (1.0 + l.abs()));
        checked += 1;
    }
    assert!(checked > 50);
    // a reversible model reverses to itself
    let mink = zoo::minkowski2();
    let mrev = mink.reverse().unwrap();
    let l = mrev.lagrangian_value(&[0.0, 0.0], &[1.0, 0.3]).unwrap();
    assert_eq!(l, mink.lagrangian_value(&[0.0, 0.0], &[1.0, 0.3]).unwrap());
}

#[test]
fn euler_and_definition_identities_across_zoo() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for name in ["minkowski2", "warped2", "randers-flat", "warped-quartic", "product-sin"] {
        let model = zoo::builtin(name).unwrap();
        for _ in 0..20 {
            let Some((x, v)) = model.sample_point(&mut rng) else {
                continue;
            };
            assert!(
                gv_identity_residual(&model, &x, &v).unwrap() < 1e-10,
                "{name}: g(v,v) != 2L"
            );
            assert!(
                metric_homogeneity_residual(&model, &x, &v, 2.0).unwrap() < 1e-10,
                "{name}: g not 0-homogeneous"
            );
            assert!(
                euler_primal_residual(&model, &x, &v).unwrap() < 1e-9,
                "{name}: Euler identity fails"
            );
            assert!(
                nconn_identity_residual(&model, &x, &v).unwrap() < 1e-9,
                "{name}: N identity fails"
            );
            assert!(
                nconn_spray_fd_residual(&model, &x, &v).unwrap() < 1e-6,
                "{name}: N vs half dG/dv fails"
            );
        }
    }
}

#[test]
fn insufficient_samples_is_reported() {
    // A domain nothing satisfies: v1 > 0 and -v1 > 0.
    let file = finsler_core::model::ModelFile::parse(
        r#"
[model]
name = "empty-domain"
n = 2
lagrangian = "(-(v1^2) + v2^2)/2"
domain = ["v1", "-v1"]
orientation = ["1", "0"]
"#,
    )
    .unwrap();
    let model = file.build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    match berwald_diagnostic(&model, &[0.0, 0.0], 8, &mut rng) {
        Err(Error::InsufficientSamples { .. }) => {}
        other => panic!("expected InsufficientSamples, got {other:?}"),
    }
}

#[test]
fn orientation_seed_vector_is_future() {
    let model = zoo::minkowski2();
    let seed = model.seed_vector(&[0.0, 0.0]).unwrap();
    assert_eq!(seed, DVector::from_row_slice(&[1.0, 0.0]));
}
