//! Shared independent oracles for the integration tests: finite-difference
//! stencils and a classical Lorentzian curvature pipeline. These never call
//! the engine paths they are used to check.

#![allow(dead_code)]

use finsler_core::Model;
use nalgebra::{DMatrix, DVector};

/// 5-point central first derivative, O(h^4).
pub fn d1_central5(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
    (f(t - 2.0 * h) - 8.0 * f(t - h) + 8.0 * f(t + h) - f(t + 2.0 * h)) / (12.0 * h)
}

/// 5-point central second derivative, O(h^4).
pub fn d2_central5(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
    (-f(t - 2.0 * h) + 16.0 * f(t - h) - 30.0 * f(t) + 16.0 * f(t + h) - f(t + 2.0 * h))
        / (12.0 * h * h)
}

/// Mixed second derivative by the 4-point cross stencil, O(h^2) (use with a
/// Richardson step when more accuracy is needed).
pub fn d2_mixed(f: impl Fn(f64, f64) -> f64, a: f64, b: f64, h: f64) -> f64 {
    (f(a + h, b + h) + f(a - h, b - h) - f(a + h, b - h) - f(a - h, b + h)) / (4.0 * h * h)
}

/// Finite-difference Hessian of L in the velocity variables (independent of
/// the symbolic tape path).
pub fn fd_velocity_hessian(model: &Model, x: &[f64], v: &[f64], h: f64) -> DMatrix<f64> {
    let n = model.n();
    let l = |vv: &[f64]| model.lagrangian_value(x, vv).unwrap();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            d2_central5(
                |s| {
                    let mut vv = v.to_vec();
                    vv[i] = s;
                    l(&vv)
                },
                v[i],
                h,
            )
        } else {
            let f = |a: f64, b: f64| {
                let mut vv = v.to_vec();
                vv[i] = a;
                vv[j] = b;
                l(&vv)
            };
            // one Richardson step upgrades the cross stencil to O(h^4)
            let coarse = d2_mixed(&f, v[i], v[j], h);
            let fine = d2_mixed(&f, v[i], v[j], h / 2.0);
            (4.0 * fine - coarse) / 3.0
        }
    })
}

/// Classical Lorentzian-geometry oracle for quadratic Lagrangians: the
/// metric tensor read off g_ij(x) (velocity-independent), Christoffels and
/// Riemann computed by finite differences, Ricci by contraction. Convention:
/// R^r_{s m n} = d_m Gamma^r_{n s} - d_n Gamma^r_{m s}
///              + Gamma^r_{m l} Gamma^l_{n s} - Gamma^r_{n l} Gamma^l_{m s},
/// Ric_{s n} = R^m_{s m n}, and Ric(v) = Ric_{s n} v^s v^n.
pub struct ClassicalOracle<'m> {
    pub model: &'m Model,
    pub probe_v: Vec<f64>,
}

impl<'m> ClassicalOracle<'m> {
    pub fn new(model: &'m Model, probe_v: &[f64]) -> Self {
        ClassicalOracle {
            model,
            probe_v: probe_v.to_vec(),
        }
    }

    pub fn metric(&self, x: &[f64]) -> DMatrix<f64> {
        fd_velocity_hessian(self.model, x, &self.probe_v, 1e-2)
    }

    pub fn christoffel(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        let n = self.model.n();
        let h = 1e-2;
        let dg: Vec<DMatrix<f64>> = (0..n)
            .map(|k| {
                let mut lo2 = x.to_vec();
                let mut lo1 = x.to_vec();
                let mut hi1 = x.to_vec();
                let mut hi2 = x.to_vec();
                lo2[k] -= 2.0 * h;
                lo1[k] -= h;
                hi1[k] += h;
                hi2[k] += 2.0 * h;
                (self.metric(&lo2) - self.metric(&hi2) + (self.metric(&hi1) - self.metric(&lo1)) * 8.0)
                    / (12.0 * h)
            })
            .collect();
        let g = self.metric(x);
        let ginv = g.try_inverse().expect("metric invertible");
        (0..n)
            .map(|i| {
                DMatrix::from_fn(n, n, |j, k| {
                    let mut acc = 0.0;
                    for l in 0..n {
                        acc += 0.5 * ginv[(i, l)] * (dg[j][(l, k)] + dg[k][(j, l)] - dg[l][(j, k)]);
                    }
                    acc
                })
            })
            .collect()
    }

    /// Ric(v) = Ric_{sn} v^s v^n from finite differences of Christoffels.
    pub fn ricci(&self, x: &[f64], v: &[f64]) -> f64 {
        let n = self.model.n();
        let h = 1e-2;
        // dGamma[m][r][(n,s)] = d Gamma^r_{n s} / d x^m
        let dgamma: Vec<Vec<DMatrix<f64>>> = (0..n)
            .map(|m| {
                let mut lo2 = x.to_vec();
                let mut lo1 = x.to_vec();
                let mut hi1 = x.to_vec();
                let mut hi2 = x.to_vec();
                lo2[m] -= 2.0 * h;
                lo1[m] -= h;
                hi1[m] += h;
                hi2[m] += 2.0 * h;
                let a = self.christoffel(&lo2);
                let b = self.christoffel(&lo1);
                let c = self.christoffel(&hi1);
                let d = self.christoffel(&hi2);
                (0..n)
                    .map(|r| (&a[r] - &d[r] + (&c[r] - &b[r]) * 8.0) / (12.0 * h))
                    .collect()
            })
            .collect();
        let gamma = self.christoffel(x);
        let mut ric = 0.0;
        for s in 0..n {
            for nn in 0..n {
                let mut r_sn = 0.0;
                for m in 0..n {
                    // R^m_{s m n}
                    let mut term = dgamma[m][m][(nn, s)] - dgamma[nn][m][(m, s)];
                    for l in 0..n {
                        term += gamma[m][(m, l)] * gamma[l][(nn, s)]
                            - gamma[m][(nn, l)] * gamma[l][(m, s)];
                    }
                    r_sn += term;
                }
                ric += r_sn * v[s] * v[nn];
            }
        }
        ric
    }
}

/// Convenience: DVector from slice.
pub fn vec_of(values: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(values)
}

/// max |a - b| entrywise.
pub fn mat_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
