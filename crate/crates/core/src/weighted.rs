//! Weighted Finsler geometry: the weight function along the geodesic flow,
//! weighted Ricci curvature with effective dimension N, the epsilon-range
//! bookkeeping, the d'Alembertian comparison bound, the Bochner-type
//! identity residual and the Wylie inequality.
//!
//! psi and its flow derivatives come from the compiled jet tapes: for a
//! geodesic, etadotdot = -G(etadot) closes the chain rule on the tangent
//! bundle, so (psi o etadot)' and '' are exact expressions in (x, v). A
//! stencil-on-trajectory route is provided as an independent cross-check.

use crate::duality::{gradient_jets, ScalarField};
use crate::dynamics::{integrate_geodesic, GeodesicPath};
use crate::error::Error;
use crate::expr::{DagBuilder, ExprDag};
use crate::geometry::lorentz_frame;
use crate::model::Model;
use crate::quad::adaptive_simpson;
use crate::Result;
use nalgebra::{DMatrix, DVector};

/// Effective dimension parameter N; infinity is a distinct value.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum EffectiveDim {
    Finite(f64),
    Infinite,
}

impl std::fmt::Display for EffectiveDim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EffectiveDim::Finite(x) => write!(f, "{x}"),
            EffectiveDim::Infinite => write!(f, "inf"),
        }
    }
}

/// Weight values along the geodesic flow at (x, v).
#[derive(Clone, Debug)]
pub struct WeightAt {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    /// psi_m(x, v) = log sqrt(-det g(v)) - log sigma(x).
    pub psi: f64,
    /// (psi_m o etadot)'(0) along the geodesic with etadot(0) = v.
    pub dpsi: f64,
    /// (psi_m o etadot)''(0).
    pub ddpsi: f64,
}

/// Weight function and its first two derivatives along the geodesic through
/// (x, v), from the exact chain-rule tapes.
pub fn psi_and_derivatives(model: &Model, x: &[f64], v: &[f64]) -> Result<WeightAt> {
    model.require_domain(x, v)?;
    let (psi, dpsi, ddpsi) = model.psi_data(x, v)?;
    Ok(WeightAt {
        x: DVector::from_row_slice(x),
        v: DVector::from_row_slice(v),
        psi,
        dpsi,
        ddpsi,
    })
}

/// Independent route: integrate the geodesic and differentiate psi along it
/// with a 5-point stencil (step scaled by 1e-3/F(v), integrator tolerance
/// two orders tighter than the stencil error budget).
pub fn psi_derivatives_stencil(model: &Model, x: &[f64], v: &[f64]) -> Result<(f64, f64)> {
    let l = model.lagrangian_value(x, v)?;
    if l >= 0.0 {
        return Err(Error::InvalidModel(
            "stencil route needs a timelike velocity".into(),
        ));
    }
    let f = (-2.0 * l).sqrt();
    let h = 1e-3 / f;
    let path = integrate_geodesic(model, x, v, (-2.5 * h, 2.5 * h), 1e-13)?;
    let psi_at = |t: f64| -> Result<f64> {
        let (xs, vs) = path.state(t);
        Ok(model.psi_data(xs.as_slice(), vs.as_slice())?.0)
    };
    let samples = [
        psi_at(-2.0 * h)?,
        psi_at(-h)?,
        psi_at(0.0)?,
        psi_at(h)?,
        psi_at(2.0 * h)?,
    ];
    let dpsi = (samples[0] - 8.0 * samples[1] + 8.0 * samples[3] - samples[4]) / (12.0 * h);
    let ddpsi = (-samples[0] + 16.0 * samples[1] - 30.0 * samples[2] + 16.0 * samples[3]
        - samples[4])
        / (12.0 * h * h);
    Ok((dpsi, ddpsi))
}

/// Weighted Ricci curvature Ric_N(v). By convention Ric_N(0) = 0; at N = n
/// the limit N -> n from above is used, which diverges to -infinity unless
/// (psi o flow)'(0) = 0.
pub fn weighted_ricci(model: &Model, x: &[f64], v: &[f64], n_eff: EffectiveDim) -> Result<f64> {
    let vnorm2: f64 = v.iter().map(|c| c * c).sum();
    if vnorm2 <= 1e-24 {
        return Ok(0.0);
    }
    model.require_domain(x, v)?;
    let (_, r, ric) = model.frame_at(x, v)?;
    let _ = r;
    let (_, dpsi, ddpsi) = model.psi_data(x, v)?;
    let n = model.n() as f64;
    match n_eff {
        EffectiveDim::Infinite => Ok(ric + ddpsi),
        EffectiveDim::Finite(nn) if (nn - n).abs() <= 1e-12 => {
            if dpsi.abs() <= 1e-10 {
                Ok(ric + ddpsi)
            } else {
                // the defining limit diverges when the S-curvature is nonzero
                Ok(f64::NEG_INFINITY)
            }
        }
        EffectiveDim::Finite(nn) => Ok(ric + ddpsi - dpsi * dpsi / (nn - n)),
    }
}

/// Admissible (N, epsilon) pair with its comparison constant c(N, epsilon).
#[derive(Clone, Copy, Debug)]
pub struct EpsilonSpec {
    pub n: usize,
    pub big_n: EffectiveDim,
    pub epsilon: f64,
    pub c: f64,
}

/// Validates the epsilon-range and computes c(N, epsilon).
pub fn epsilon_constant(n: usize, big_n: EffectiveDim, epsilon: f64) -> Result<EpsilonSpec> {
    let nf = n as f64;
    let c = match big_n {
        EffectiveDim::Infinite => {
            if epsilon.abs() >= 1.0 {
                return Err(Error::OutOfEpsilonRange(format!(
                    "|epsilon| = {} must be < 1 for N = inf",
                    epsilon.abs()
                )));
            }
            (1.0 - epsilon * epsilon) / nf
        }
        EffectiveDim::Finite(big) => {
            if !(big <= 1.0 || big >= nf) {
                return Err(Error::OutOfEpsilonRange(format!(
                    "N = {big} must lie in (-inf, 1] or [{nf}, inf]"
                )));
            }
            if (big - 1.0).abs() <= 1e-15 {
                if epsilon != 0.0 {
                    return Err(Error::OutOfEpsilonRange(format!(
                        "epsilon must be 0 at N = 1, got {epsilon}"
                    )));
                }
                1.0 / nf
            } else if (big - nf).abs() <= 1e-15 {
                // any epsilon; the (N - n) factor drops
                1.0 / nf
            } else {
                let bound = ((big - 1.0) / (big - nf)).sqrt();
                if epsilon.abs() >= bound {
                    return Err(Error::OutOfEpsilonRange(format!(
                        "|epsilon| = {} must be < sqrt((N-1)/(N-n)) = {bound}",
                        epsilon.abs()
                    )));
                }
                (1.0 - epsilon * epsilon * (big - nf) / (big - 1.0)) / nf
            }
        }
    };
    debug_assert!(c > 0.0);
    Ok(EpsilonSpec {
        n,
        big_n,
        epsilon,
        c,
    })
}

fn require_unit_speed(geod: &GeodesicPath) -> Result<()> {
    let f = (-2.0 * geod.l0).max(0.0).sqrt();
    if (f - 1.0).abs() > 1e-8 {
        return Err(Error::NotUnitSpeed { f });
    }
    Ok(())
}

fn weight_integrand(model: &Model, geod: &GeodesicPath, spec: &EpsilonSpec) -> impl FnMut(f64) -> Result<f64> {
    let exponent = 2.0 * (spec.epsilon - 1.0) / (spec.n as f64 - 1.0);
    let model = model.clone();
    let geod = geod.clone();
    move |s: f64| -> Result<f64> {
        let (x, v) = geod.state(s);
        let (psi, _, _) = model.psi_data(x.as_slice(), v.as_slice())?;
        Ok((exponent * psi).exp())
    }
}

/// Right-hand side of the d'Alembertian comparison estimate at parameter t
/// along a unit-speed geodesic from its start:
/// exp(k psi(etadot(t))) / (c int_0^t exp(k psi(etadot(s))) ds),
/// with k = 2(epsilon-1)/(n-1).
pub fn comparison_bound(
    model: &Model,
    geod: &GeodesicPath,
    t: f64,
    spec: &EpsilonSpec,
) -> Result<f64> {
    require_unit_speed(geod)?;
    let mut integrand = weight_integrand(model, geod, spec);
    let numerator = integrand(t)?;
    let integral = adaptive_simpson(&mut integrand, 0.0, t, 1e-9)?;
    Ok(numerator / (spec.c * integral))
}

/// Reverse version: integrates over [-t, 0] and evaluates the weight at -t.
pub fn comparison_bound_reverse(
    model: &Model,
    geod: &GeodesicPath,
    t: f64,
    spec: &EpsilonSpec,
) -> Result<f64> {
    require_unit_speed(geod)?;
    let mut integrand = weight_integrand(model, geod, spec);
    let numerator = integrand(-t)?;
    let integral = adaptive_simpson(&mut integrand, -t, 0.0, 1e-9)?;
    Ok(numerator / (spec.c * integral))
}

/// Completeness integrand int_0^T exp(k psi(etadot(s))) ds; growth in T
/// across horizons indicates epsilon-completeness.
pub fn completeness_integrand(
    model: &Model,
    geod: &GeodesicPath,
    horizon: f64,
    spec: &EpsilonSpec,
) -> Result<f64> {
    require_unit_speed(geod)?;
    let mut integrand = weight_integrand(model, geod, spec);
    adaptive_simpson(&mut integrand, 0.0, horizon, 1e-9)
}

// ---------------------------------------------------------------------------
// Bochner-type identity
// ---------------------------------------------------------------------------

/// The four terms of the Bochner-type identity for h with -h temporal:
/// div_m(grad^{grad h}[F(grad h)^2/2]) + d(box_m h)(grad h)
/// + Ric_inf(grad h) + HS_{grad h}(hess h) = 0.
#[derive(Clone, Debug)]
pub struct BochnerTerms {
    pub term_div: f64,
    pub term_dbox: f64,
    pub term_ric: f64,
    pub term_hs: f64,
    pub residual: f64,
}

pub(crate) struct BochnerContext {
    pub terms: BochnerTerms,
    pub box_m_h: f64,
    pub dpsi: f64,
    pub psi: f64,
    pub f2: f64,
    /// u_j = d_j [F(grad h)^2 / 2].
    pub du: DVector<f64>,
    pub grad_h: DVector<f64>,
    pub hess: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub ric0_at_grad: f64,
}

/// Evaluates every term of the Bochner identity at x from exact implicit
/// derivatives of the gradient field.
pub fn bochner_residual(model: &Model, h: &ExprDag, x: &[f64]) -> Result<BochnerTerms> {
    Ok(bochner_context(model, h, x)?.terms)
}

pub(crate) fn bochner_context(model: &Model, h: &ExprDag, x: &[f64]) -> Result<BochnerContext> {
    let n = model.n();
    // f = -h is temporal; the gradient field is V = grad h = Legendre(dh).
    let f = negate(h);
    let field = ScalarField::compile(n, &f)?;
    let gj = gradient_jets(model, &field, x)?;
    let point = &gj.point;
    let hx = -&gj.field.grad; // dh
    let hxx = -&gj.field.hess;

    // Hessian endomorphism of h.
    let mut hess = gj.dv.clone();
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += point.chern[i][(j, k)] * gj.v[k];
            }
            hess[(i, j)] += acc;
        }
    }
    let box_h = hess.trace();
    let box_m_h = box_h - point.dpsi_flow;

    // HS term: trace of the squared endomorphism.
    let term_hs = (&hess * &hess).trace();

    // Ric_inf(grad h).
    let term_ric = point.ric + point.ddpsi_flow;

    // d(box_m h)(grad h) with box_m h = div_m V.
    let mut term_dbox = 0.0;
    for l in 0..n {
        let mut ddiv_l = 0.0;
        for i in 0..n {
            ddiv_l += gj.d2v[i][(i, l)]
                + gj.dv[(i, l)] * point.phi_x[i]
                + gj.v[i] * point.phi_xx[(i, l)];
        }
        term_dbox += ddiv_l * gj.v[l];
    }

    // u_j = d_j [F(grad h)^2/2] = -(Lx_j + sum_k hx_k dV^k/dx^j).
    let mut du = DVector::zeros(n);
    for j in 0..n {
        let mut acc = point.lx[j];
        for k in 0..n {
            acc += hx[k] * gj.dv[(k, j)];
        }
        du[j] = -acc;
    }
    // u_{jl} = -(Lxx + Lvx-chain + hxx dv + hx d2v).
    let mut duu = DMatrix::zeros(n, n);
    for j in 0..n {
        for l in 0..n {
            let mut acc = point.lxx[(j, l)];
            for a in 0..n {
                acc += point.lvx[(a, j)] * gj.dv[(a, l)];
            }
            for k in 0..n {
                acc += hxx[(k, l)] * gj.dv[(k, j)] + hx[k] * gj.d2v[k][(j, l)];
            }
            duu[(j, l)] = -acc;
        }
    }
    // W^i = g^{ij}(V) u_j and div_m W.
    let mut term_div = 0.0;
    for i in 0..n {
        // d_i W^i = d_i[g^{ij}] u_j + g^{ij} u_{ji}
        let mut dgi = 0.0;
        // d_i g_ab along x through (x, V(x))
        let mut dg_i = DMatrix::zeros(n, n);
        for a in 0..n {
            for bb in 0..n {
                let mut acc = point.dgdx[i][(a, bb)];
                for c in 0..n {
                    acc += point.dgdv[c][(a, bb)] * gj.dv[(c, i)];
                }
                dg_i[(a, bb)] = acc;
            }
        }
        let dginv_i = -(&point.ginv * dg_i * &point.ginv);
        for j in 0..n {
            dgi += dginv_i[(i, j)] * du[j] + point.ginv[(i, j)] * duu[(j, i)];
        }
        let mut w_i = 0.0;
        for j in 0..n {
            w_i += point.ginv[(i, j)] * du[j];
        }
        term_div += dgi + w_i * point.phi_x[i];
    }

    let residual = term_div + term_dbox + term_ric + term_hs;
    let nf = n as f64;
    let ric0_at_grad =
        point.ric + point.ddpsi_flow + point.dpsi_flow * point.dpsi_flow / nf;

    Ok(BochnerContext {
        terms: BochnerTerms {
            term_div,
            term_dbox,
            term_ric,
            term_hs,
            residual,
        },
        box_m_h,
        dpsi: point.dpsi_flow,
        psi: point.psi,
        f2: gj.f_star * gj.f_star,
        du,
        grad_h: gj.v.clone(),
        hess,
        g: point.g.clone(),
        ric0_at_grad,
    })
}

fn negate(dag: &ExprDag) -> ExprDag {
    let mut b = DagBuilder::new();
    let mut map = Vec::new();
    let root = b.import(dag, &mut map);
    let neg = b.neg(root);
    b.finish(neg)
}

// ---------------------------------------------------------------------------
// Wylie inequality (Ric_0 >= 0 case)
// ---------------------------------------------------------------------------

/// Both sides of the Wylie inequality with w = exp(2 psi(grad h)/n):
/// w div_m(grad^{grad h}[F^2/2]) + d(w box_m h)(grad h) + w (box_m h)^2/n
///   <= w/(2 F^2) sum_{a>=2} (d[F^2](e_a))^2.
#[derive(Clone, Debug)]
pub struct WylieReport {
    pub lhs: f64,
    pub rhs: f64,
    /// rhs - lhs; expected >= -1e-8 under Ric_0 >= 0.
    pub slack: f64,
    /// |d[F(grad h)^2]| is negligible at x, so equality conditions apply.
    pub f_grad_constant: bool,
    pub ric0_at_grad: f64,
    /// max |H - c Id| over the best scalar c; zero when the Hessian is a
    /// multiple of the identity.
    pub hessian_proportionality_defect: f64,
}

/// Evaluates the Wylie inequality at x; errors with InapplicableCurvature
/// when Ric_0 < 0 at a sampled direction near grad h.
pub fn wylie_check(model: &Model, h: &ExprDag, x: &[f64]) -> Result<WylieReport> {
    let n = model.n();
    let ctx = bochner_context(model, h, x)?;

    // hypothesis check: Ric_0 >= 0 on deterministic directions around grad h
    let mut probes = vec![ctx.grad_h.clone()];
    for k in 0..n {
        for sign in [1.0, -1.0] {
            let mut v = ctx.grad_h.clone();
            v[k] += sign * 0.2 * ctx.grad_h.norm();
            probes.push(v);
        }
    }
    for v in &probes {
        if !model.in_domain(x, v.as_slice()) {
            continue;
        }
        if model.lagrangian_value(x, v.as_slice())? >= 0.0 {
            continue;
        }
        let r0 = weighted_ricci(model, x, v.as_slice(), EffectiveDim::Finite(0.0))?;
        if r0 < -1e-10 {
            return Err(Error::InapplicableCurvature {
                at: format!("x={x:?}, v={:?}", v.as_slice()),
                value: r0,
            });
        }
    }

    let nf = n as f64;
    let w = (2.0 * ctx.psi / nf).exp();
    let lhs = w * ctx.terms.term_div
        + (w * ctx.terms.term_dbox + 2.0 * w * ctx.dpsi / nf * ctx.box_m_h)
        + w * ctx.box_m_h * ctx.box_m_h / nf;

    let frame = lorentz_frame(&ctx.g, &ctx.grad_h)?;
    let mut rhs = 0.0;
    for e in frame.iter().skip(1) {
        let mut d f2_e = 0.0;
        for j in 0..n {
            df2_e += 2.0 * ctx.du[j] * e[j];
        }
        rhs += df2_e * df2_e;
    }
    rhs *= w / (2.0 * ctx.f2);

    let df2_norm = 2.0 * ctx.du.norm();
    let f_grad_constant = df2_norm <= 1e-8;
    let c = ctx.hess.trace() / nf;
    let eye = DMatrix::<f64>::identity(n, n);
    let defect = (&ctx.hess - eye * c).amax();

    Ok(WylieReport {
        lhs,
        rhs,
        slack: rhs - lhs,
        f_grad_constant,
        ric0_at_grad: ctx.ric0_at_grad,
        hessian_proportionality_defect: defect,
    })
}
