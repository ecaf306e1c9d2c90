//! Legendre duality, operator two-route agreement, ellipticity symbol,
//! q-Lagrangian/p-Hamiltonian and p-energy quadrature.

mod common;

use finsler_core::duality::{
    ellipticity_symbol, euler_dual_residual, gradient, hessian_and_dalembertian,
    legendre_transform, p_energy, p_hamiltonian, parallel_defect, q_lagrangian,
    reverse_cauchy_schwarz_gap,
};
use finsler_core::expr::parse;
use finsler_core::{zoo, Error};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dag(src: &str) -> finsler_core::ExprDag {
    parse(src, &[]).unwrap()
}

#[test]
fn minkowski_legendre_closed_form() {
    let model = zoo::minkowski2();
    let x = [0.0, 0.0];
    let dual = legendre_transform(&model, &x, &[-1.0, 0.0]).unwrap();
    assert!((dual.legendre - DVector::from_row_slice(&[1.0, 0.0])).norm() < 1e-12);
    assert!((dual.l_star + 0.5).abs() < 1e-12);
    assert!((dual.f_star - 1.0).abs() < 1e-12);

    // 1-homogeneity of F*
    let dual2 = legendre_transform(&model, &x, &[-2.0, 0.0]).unwrap();
    assert!((dual2.legendre - DVector::from_row_slice(&[2.0, 0.0])).norm() < 1e-12);
    assert!((dual2.f_star - 2.0).abs() < 1e-12);
}

#[test]
fn legendre_defining_identities_on_randers() {
    let model = zoo::randers_flat();
    let x = [0.0, 0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    for _ in 0..50 {
        // produce covectors deep in the polar cone as images of timelike v
        let Some(v) = model.sample_velocity_at(&x, &mut rng) else {
            continue;
        };
        let omega = lv_at(&model, &x, &v);
        let dual = legendre_transform(&model, &x, &omega).unwrap();
        // round trip
        let back = lv_at(&model, &x, dual.legendre.as_slice());
        for i in 0..2 {
            assert!((back[i] - omega[i]).abs() < 1e-9 * (1.0 + omega[i].abs()));
        }
        // defining identity L(v) = L* = omega(v)/2
        let l_of_v = model
            .lagrangian_value(&x, dual.legendre.as_slice())
            .unwrap();
        let pairing: f64 = omega
            .iter()
            .zip(dual.legendre.iter())
            .map(|(w, vi)| w * vi)
            .sum();
        assert!((l_of_v - dual.l_star).abs() < 1e-9 * (1.0 + l_of_v.abs()));
        assert!((dual.l_star - pairing / 2.0).abs() < 1e-9 * (1.0 + pairing.abs()));
        // g* is the inverse of g at the image
        let (_, _, g) = metric_at(&model, &x, dual.legendre.as_slice());
        let product = &g * &dual.gstar;
        let eye = nalgebra::DMatrix::<f64>::identity(2, 2);
        assert!((product - eye).amax() < 1e-8);
        checked += 1;
    }
    assert!(checked > 30, "only {checked} covectors checked");
}

fn lv_at(model: &finsler_core::Model, x: &[f64], v: &[f64]) -> Vec<f64> {
    // dL/dv via the engine's own gradient of L in v: use finite differences
    // to stay independent of tape internals.
    let n = model.n();
    (0..n)
        .map(|i| {
            common::d1_central5(
                |s| {
                    let mut vv = v.to_vec();
                    vv[i] = s;
                    model.lagrangian_value(x, &vv).unwrap()
                },
                v[i],
                1e-4,
            )
        })
        .collect()
}

fn metric_at(
    model: &finsler_core::Model,
    x: &[f64],
    v: &[f64],
) -> (f64, DVector<f64>, nalgebra::DMatrix<f64>) {
    let g = common::fd_velocity_hessian(model, x, v, 1e-3);
    let l = model.lagrangian_value(x, v).unwrap();
    (l, DVector::zeros(model.n()), g)
}

#[test]
fn reverse_cauchy_schwarz() {
    let model = zoo::minkowski2();
    let x = [0.0, 0.0];
    // proportional pair: zero gap
    let gap = reverse_cauchy_schwarz_gap(&model, &x, &[1.0, 0.0], &[-1.0, 0.0]).unwrap();
    assert!(gap.abs() < 1e-12);
    // worked example: -omega(v) = 1, F* = sqrt(0.75)
    let gap = reverse_cauchy_schwarz_gap(&model, &x, &[1.0, 0.0], &[-1.0, 0.5]).unwrap();
    assert!((gap - (1.0 - 0.75f64.sqrt())).abs() < 1e-12);

    // sampling sweep across models: gap always >= -1e-10, equality iff parallel
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for name in ["minkowski2", "randers-flat", "warped2"] {
        let model = zoo::builtin(name).unwrap();
        let mut count = 0;
        while count < 300 {
            let Some((x, v)) = model.sample_point(&mut rng) else {
                continue;
            };
            if model.lagrangian_value(&x, &v).unwrap() >= 0.0 {
                continue;
            }
            let Some(w) = model.sample_velocity_at(&x, &mut rng) else {
                continue;
            };
            let omega = lv_at(&model, &x, &w);
            let Ok(gap) = reverse_cauchy_schwarz_gap(&model, &x, &v, &omega) else {
                continue;
            };
            assert!(gap >= -1e-10, "{name}: rCS gap {gap}");
            let dual = legendre_transform(&model, &x, &omega).unwrap();
            let defect = parallel_defect(&DVector::from_row_slice(&v), &dual.legendre);
            if gap <= 1e-8 {
                assert!(defect < 1e-4, "{name}: gap {gap} but defect {defect}");
            }
            if defect < 1e-9 {
                assert!(gap < 1e-8, "{name}: parallel but gap {gap}");
            }
            count += 1;
        }
    }
}

#[test]
fn gradient_examples() {
    let model = zoo::minkowski2();
    let x = [0.3, -0.2];
    let g = gradient(&model, &dag("x1"), &x).unwrap();
    assert!((g - DVector::from_row_slice(&[1.0, 0.0])).norm() < 1e-12);
    let g = gradient(&model, &dag("2*x1"), &x).unwrap();
    assert!((g - DVector::from_row_slice(&[2.0, 0.0])).norm() < 1e-12);
    match gradient(&model, &dag("x2"), &x) {
        Err(Error::NotTemporal { .. }) => {}
        other => panic!("expected NotTemporal, got {other:?}"),
    }
}

#[test]
fn flat_linear_function_has_zero_operators() {
    let model = zoo::minkowski2();
    let op = hessian_and_dalembertian(&model, &dag("x1"), &[0.1, 0.2], -2.0).unwrap();
    assert!(op.hess.amax() < 1e-12);
    assert!(op.box_plain.abs() < 1e-12);
    assert!(op.box_m.abs() < 1e-12);
    assert!(op.box_mp.abs() < 1e-12);
    assert!(op.box_mp_expanded.abs() < 1e-12);
}

#[test]
fn time_separation_dalembertian_value() {
    // f = sqrt(x1^2 - x2^2): the time separation from the origin. At (t, 0)
    // the classical weighted d'Alembertian is (n-1)/t = 1/t.
    let model = zoo::minkowski2();
    let f = dag("sqrt(x1^2 - x2^2)");
    for t in [0.5, 1.0, 2.0, 5.0] {
        let op = hessian_and_dalembertian(&model, &f, &[t, 0.0], -2.0).unwrap();
        assert!(
            (op.box_m - 1.0 / t).abs() < 1e-7,
            "box_m at t={t}: {} vs {}",
            op.box_m,
            1.0 / t
        );
        assert!((op.box_m - op.box_m_div).abs() < 1e-7);
    }
}

#[test]
fn hessian_self_adjointness() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for name in ["minkowski2", "warped2", "minkowski2-expweight"] {
        let model = zoo::builtin(name).unwrap();
        let f = dag("x1 + x2^2/10 + x1*x2/20");
        for _ in 0..20 {
            let x = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            let Ok(op) = hessian_and_dalembertian(&model, &f, &x, -2.0) else {
                continue;
            };
            // g H must be symmetric
            let gh = &op.g * &op.hess;
            let asym = (&gh - gh.transpose()).amax();
            assert!(asym < 1e-8, "{name}: Hessian not self-adjoint: {asym}");
        }
    }
}

#[test]
fn two_route_agreement_across_zoo() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let f = dag("x1 + x2^2/8");
    for name in [
        "minkowski2",
        "warped2",
        "minkowski2-expweight",
        "minkowski2-gaussweight",
        "product-sin",
        "randers-flat",
    ] {
        let model = zoo::builtin(name).unwrap();
        for p in [-2.0, -1.0, 0.5] {
            let mut checked = 0;
            for _ in 0..200 {
                if checked >= 25 {
                    break;
                }
                let x = [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)];
                let Ok(op) = hessian_and_dalembertian(&model, &f, &x, p) else {
                    continue;
                };
                assert!(
                    (op.box_m - op.box_m_div).abs() < 1e-7,
                    "{name} p={p}: box_m routes differ by {}",
                    (op.box_m - op.box_m_div).abs()
                );
                assert!(
                    (op.box_mp - op.box_mp_expanded).abs() < 1e-7,
                    "{name} p={p}: box_mp routes differ by {}",
                    (op.box_mp - op.box_mp_expanded).abs()
                );
                checked += 1;
            }
            assert!(checked >= 10, "{name}: too few in-domain samples");
        }
    }
}

#[test]
fn unit_lapse_property() {
    // f = x1 + eps x2^2: at x2 = 0, F*(-df) = 1 with vanishing derivative,
    // so box_mp = box_m there.
    let model = zoo::minkowski2();
    let f = dag("x1 + x2^2/20");
    for t in [0.0, 0.5, -0.3] {
        let op = hessian_and_dalembertian(&model, &f, &[t, 0.0], -2.0).unwrap();
        assert!((op.f_star - 1.0).abs() < 1e-12);
        assert!(
            (op.box_mp - op.box_m).abs() < 1e-8,
            "unit lapse violated: {} vs {}",
            op.box_mp,
            op.box_m
        );
    }
}

#[test]
fn symbol_eigenvalues() {
    let model = zoo::minkowski2();
    let f = dag("x1");
    let x = [0.0, 0.0];
    let s = ellipticity_symbol(&model, &f, &x, -2.0).unwrap();
    assert!((s.eigenvalues[0] - 1.0).abs() < 1e-9);
    assert!((s.eigenvalues[1] - 3.0).abs() < 1e-9);

    let s = ellipticity_symbol(&model, &f, &x, 0.5).unwrap();
    assert!((s.eigenvalues[0] - 0.5).abs() < 1e-9);
    assert!((s.eigenvalues[1] - 1.0).abs() < 1e-9);

    let s = ellipticity_symbol(&model, &f, &x, 2.0).unwrap();
    assert!((s.eigenvalues[0] + 1.0).abs() < 1e-9, "p=2 must be hyperbolic");
}

#[test]
fn symbol_positive_iff_p_below_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let f = dag("x1 + x2^2/9 + x2/7");
    for name in ["minkowski2", "warped2", "randers-flat"] {
        let model = zoo::builtin(name).unwrap();
        let mut checked = 0;
        for _ in 0..300 {
            if checked >= 35 {
                break;
            }
            let p = rng.random_range(-3.0..2.0);
            let x = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
            let Ok(s) = ellipticity_symbol(&model, &f, &x, p) else {
                continue;
            };
            let all_positive = s.eigenvalues.iter().all(|&e| e > 0.0);
            assert_eq!(
                all_positive,
                p < 1.0,
                "{name}: symbol positivity wrong at p={p}: {:?}",
                s.eigenvalues
            );
            checked += 1;
        }
        assert!(checked >= 20);
    }
}

#[test]
fn q_lagrangian_and_p_hamiltonian_values() {
    let model = zoo::minkowski2();
    let x = [0.0, 0.0];
    let lq = q_lagrangian(&model, &x, &[1.0, 0.0], 0.5).unwrap();
    assert!((lq + 2.0).abs() < 1e-12);
    let hp = p_hamiltonian(&model, &x, &[-1.0, 0.0], 0.5).unwrap();
    assert!((hp - 1.0).abs() < 1e-12);
    // spacelike v: infinite sentinel
    let lq = q_lagrangian(&model, &x, &[0.0, 1.0], 0.5).unwrap();
    assert!(lq.is_infinite());
    // omega outside the polar cone: infinite sentinel
    let hp = p_hamiltonian(&model, &x, &[0.0, 1.0], 0.5).unwrap();
    assert!(hp.is_infinite());
}

#[test]
fn young_duality_by_radial_maximization() {
    // H_p(omega) = sup_v omega(v) - L_q(v); brute-force over a radial grid
    // in the direction of the Legendre image.
    let model = zoo::minkowski2();
    let x = [0.0, 0.0];
    let q = 0.5;
    for omega in [[-1.0, 0.0], [-1.2, 0.3], [-0.8, -0.2]] {
        let hp = p_hamiltonian(&model, &x, &omega, q).unwrap();
        let dual = legendre_transform(&model, &x, &omega).unwrap();
        let dir = dual.legendre.normalize();
        let mut best = f64::NEG_INFINITY;
        let mut scale = 1e-3;
        while scale < 1e3 {
            let v: Vec<f64> = dir.iter().map(|c| c * scale).collect();
            let lq = q_lagrangian(&model, &x, &v, q).unwrap();
            if lq.is_finite() {
                let pairing: f64 = omega.iter().zip(&v).map(|(w, vi)| w * vi).sum();
                best = best.max(pairing - lq);
            }
            scale *= 1.0005;
        }
        assert!(
            (hp - best).abs() < 1e-6 * (1.0 + hp.abs()),
            "Young duality at {omega:?}: {hp} vs brute force {best}"
        );
    }
}

#[test]
fn p_energy_examples() {
    let model = zoo::minkowski2();
    // f = x1, sigma = 1, p = -1: H_p = 1 on the unit box [0,1]^2.
    let e = p_energy(&model, &dag("x1"), &[0.0, 0.0], &[1.0, 1.0], -1.0, 4, 6).unwrap();
    assert!((e - 1.0).abs() < 1e-9, "constant integrand energy = {e}");
    // f = 2 x1: F* = 2, H_p = 2^{-1} for p = -1.
    let e = p_energy(&model, &dag("2*x1"), &[0.0, 0.0], &[1.0, 1.0], -1.0, 4, 6).unwrap();
    assert!((e - 0.5).abs() < 1e-9, "scaled integrand energy = {e}");
    // refinement convergence on a curved integrand
    let e1 = p_energy(&model, &dag("x1 + x2^2/10"), &[0.0, 0.0], &[1.0, 1.0], -1.0, 4, 8).unwrap();
    let e2 = p_energy(&model, &dag("x1 + x2^2/10"), &[0.0, 0.0], &[1.0, 1.0], -1.0, 8, 8).unwrap();
    assert!((e1 - e2).abs() < 2e-6 * e1.abs());
}

#[test]
fn p_energy_reports_not_temporal_node() {
    let model = zoo::minkowski2();
    // temporal near x2 = 0 but not across the whole box
    let f = dag("x1 + x2^2");
    match p_energy(&model, &f, &[0.0, 0.0], &[1.0, 1.0], -1.0, 4, 3) {
        Err(Error::NotTemporal { x, .. }) => {
            assert_eq!(x.len(), 2);
        }
        other => panic!("expected NotTemporal with node location, got {other:?}"),
    }
}

#[test]
fn dual_euler_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for name in ["minkowski2", "randers-flat"] {
        let model = zoo::builtin(name).unwrap();
        let x = [0.0, 0.0];
        let mut checked = 0;
        for _ in 0..40 {
            if checked >= 10 {
                break;
            }
            let Some(v) = model.sample_velocity_at(&x, &mut rng) else {
                continue;
            };
            let omega = lv_at(&model, &x, &v);
            let Ok(residual) = euler_dual_residual(&model, &x, &omega) else {
                continue;
            };
            assert!(residual < 1e-4, "{name}: dual Euler residual {residual}");
            checked += 1;
        }
        assert!(checked >= 5);
    }
}

#[test]
fn lq_convexity() {
    // L_q is convex on the future cone (strictly on timelike directions).
    let model = zoo::randers_flat();
    let x = [0.0, 0.0];
    let q = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mut checked = 0;
    for _ in 0..200 {
        if checked >= 60 {
            break;
        }
        let Some(v) = model.sample_velocity_at(&x, &mut rng) else {
            continue;
        };
        let Some(w) = model.sample_velocity_at(&x, &mut rng) else {
            continue;
        };
        let lambda: f64 = rng.random_range(0.05..0.95);
        let mix: Vec<f64> = v
            .iter()
            .zip(&w)
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        let (lv, lw) = (
            q_lagrangian(&model, &x, &v, q).unwrap(),
            q_lagrangian(&model, &x, &w, q).unwrap(),
        );
        let lmix = q_lagrangian(&model, &x, &mix, q).unwrap();
        if lv.is_finite() && lw.is_finite() && lmix.is_finite() {
            assert!(
                lmix <= lambda * lv + (1.0 - lambda) * lw + 1e-10,
                "convexity violated"
            );
            checked += 1;
        }
    }
    assert!(checked >= 40);
}
