//! Legendre duality and the differential operators living on it: gradients
//! and Hessians of temporal functions, the weighted d'Alembertian by two
//! independent routes, the q-Lagrangian / p-Hamiltonian pair, the
//! p-d'Alembertian and its ellipticity symbol, and the p-energy quadrature.
//!
//! The gradient field `V(x) = grad(-f)(x)` is defined implicitly by the
//! stationarity system dL/dv(x, V(x)) = -df(x); its x-derivatives are
//! obtained by exact implicit differentiation through the jet tapes, so no
//! finite differences enter any operator below.

use crate::error::Error;
use crate::expr::{DagBuilder, ExprDag, Tape, Var};
use crate::geometry::{classify_causal, lorentz_frame, CausalClass, TimeOrientation};
use crate::model::{tri, tri_len, Model, PointJets};
use crate::Result;
use nalgebra::{DMatrix, DVector};

/// Legendre data at a point.
#[derive(Clone, Debug)]
pub struct DualAt {
    pub x: DVector<f64>,
    pub omega: DVector<f64>,
    /// L*(omega) <= 0.
    pub l_star: f64,
    /// F*(omega) = sqrt(-2 L*).
    pub f_star: f64,
    /// The Legendre image v with dL/dv(v) = omega.
    pub legendre: DVector<f64>,
    /// g*_ij(omega) = inverse of g_ij at the Legendre image.
    pub gstar: DMatrix<f64>,
}

/// Solves dL/dv(x, v) = omega by damped Newton iteration seeded inside the
/// future cone; rejects covectors outside the polar cone.
pub fn legendre_transform(model: &Model, x: &[f64], omega: &[f64]) -> Result<DualAt> {
    let omega_v = DVector::from_row_slice(omega);
    let not_polar = |reason: &str| Error::NotInPolarCone {
        omega: omega.to_vec(),
        reason: reason.to_string(),
    };

    // Seed: g^{-1}(at the orientation seed) applied to omega, flipped into
    // the future cone if needed.
    let seed = model.seed_vector(x)?;
    let (_, _, g_seed) = model.metric_data(x, seed.as_slice())?;
    let ginv_seed = g_seed
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::IllConditioned("metric at seed not invertible".into()))?;
    let mut v = &ginv_seed * &omega_v;
    let pairing = (seed.transpose() * &g_seed * &v)[(0, 0)];
    if pairing > 0.0 {
        v = -v;
    }
    if !model.in_domain(x, v.as_slice()) || model.lagrangian_value(x, v.as_slice())? >= 0.0 {
        // retreat toward the seed until timelike in-domain
        let mut blend = 0.5;
        let mut found = false;
        for _ in 0..40 {
            let cand = &v * (1.0 - blend) + &seed * blend;
            if model.in_domain(x, cand.as_slice())
                && model.lagrangian_value(x, cand.as_slice())? < 0.0
            {
                v = cand;
                found = true;
                break;
            }
            blend = (blend + 1.0) / 2.0;
        }
        if !found {
            v = seed.clone();
        }
    }

    let residual = |v: &DVector<f64>| -> Result<DVector<f64>> {
        let (_, lv, _) = model.metric_data(x, v.as_slice())?;
        Ok(lv - &omega_v)
    };
    let mut r = residual(&v)?;
    let target = 1e-12 * (1.0 + omega_v.norm());
    let mut converged = r.norm() <= target;
    for _ in 0..100 {
        if converged {
            break;
        }
        let (_, _, g) = model.metric_data(x, v.as_slice())?;
        let delta = g
            .lu()
            .solve(&(-&r))
            .ok_or_else(|| Error::IllConditioned("Newton system singular".into()))?;
        let mut alpha = 1.0;
        let mut advanced = false;
        while alpha >= 1e-8 {
            let cand = &v + &delta * alpha;
            if model.in_domain(x, cand.as_slice())
                && model.lagrangian_value(x, cand.as_slice())? < 0.0
            {
                let rc = residual(&cand)?;
                if rc.norm() < r.norm() {
                    v = cand;
                    r = rc;
                    advanced = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !advanced {
            return Err(not_polar("Newton iteration stalled"));
        }
        converged = r.norm() <= target;
    }
    if !converged {
        return Err(not_polar("Newton did not converge in 100 iterations"));
    }

    let info = classify_causal(model, x, v.as_slice())?;
    if info.class != CausalClass::Timelike || info.orientation != TimeOrientation::Future {
        return Err(not_polar("solution is not future timelike"));
    }

    let l_star = model.lagrangian_value(x, v.as_slice())?;
    let (_, _, g) = model.metric_data(x, v.as_slice())?;
    let gstar = g
        .try_inverse()
        .ok_or_else(|| Error::IllConditioned("metric at Legendre image singular".into()))?;
    Ok(DualAt {
        x: DVector::from_row_slice(x),
        omega: omega_v,
        l_star,
        f_star: (-2.0 * l_star).max(0.0).sqrt(),
        legendre: v,
        gstar,
    })
}

/// Gap of the reverse Cauchy-Schwarz inequality:
/// -omega(v) - F*(omega) F(v), nonnegative for future causal v and polar
/// omega, zero exactly on proportional pairs.
pub fn reverse_cauchy_schwarz_gap(
    model: &Model,
    x: &[f64],
    v: &[f64],
    omega: &[f64],
) -> Result<f64> {
    let info = classify_causal(model, x, v)?;
    if info.f.is_none() || info.orientation != TimeOrientation::Future {
        return Err(Error::InvalidModel(
            "reverse Cauchy-Schwarz needs a future causal vector".into(),
        ));
    }
    let dual = legendre_transform(model, x, omega)?;
    let pairing: f64 = omega.iter().zip(v).map(|(w, vi)| w * vi).sum();
    Ok(-pairing - dual.f_star * info.f.unwrap())
}

/// Normalized parallelism defect: max_ij |a_i b_j - a_j b_i| / (|a| |b|).
pub fn parallel_defect(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let scale = a.norm() * b.norm();
    if scale == 0.0 {
        return 0.0;
    }
    let n = a.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[i] * b[j] - a[j] * b[i]).abs());
        }
    }
    worst / scale
}

// ---------------------------------------------------------------------------
// Scalar fields f(x) with compiled jets up to third order
// ---------------------------------------------------------------------------

/// A function of x with a compiled tape for (f, df, d2f, d3f).
pub struct ScalarField {
    n: usize,
    tape: Tape,
    pub dag: ExprDag,
}

pub(crate) struct FieldJets {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
    /// third[i] symmetric in (m,l): d^3 f / dx^i dx^m dx^l.
    pub third: Vec<DMatrix<f64>>,
}

impl ScalarField {
    pub fn compile(n: usize, f: &ExprDag) -> Result<ScalarField> {
        for var in f.free_vars() {
            match var {
                Var::X(i) if *i < n => {}
                other => {
                    return Err(Error::InvalidModel(format!(
                        "scalar field uses `{other}`, expected only x1..x{n}"
                    )))
                }
            }
        }
        let nn2 = tri_len(n);
        let mut b = DagBuilder::new();
        let mut map = Vec::new();
        let imported = b.import(f, &mut map);
        let root = b.resimplify(imported);
        let d1: Vec<_> = (0..n).map(|i| b.diff(root, &Var::X(i))).collect();
        let mut d2 = vec![0; nn2];
        for i in 0..n {
            for j in i..n {
                d2[tri(n, i, j)] = b.diff(d1[i], &Var::X(j));
            }
        }
        let mut d3 = vec![0; n * nn2];
        for i in 0..n {
            for m in 0..n {
                for l in m..n {
                    d3[i * nn2 + tri(n, m, l)] = b.diff(d2[tri(n, i, m)], &Var::X(l));
                }
            }
        }
        let mut roots = vec![root];
        roots.extend_from_slice(&d1);
        roots.extend_from_slice(&d2);
        roots.extend_from_slice(&d3);
        let (nodes, outputs) = b.extract(&roots);
        Ok(ScalarField {
            n,
            tape: Tape::from_nodes(nodes, outputs),
            dag: f.clone(),
        })
    }

    pub(crate) fn jets(&self, x: &[f64]) -> Result<FieldJets> {
        let n = self.n;
        let nn2 = tri_len(n);
        let mut buf = Vec::new();
        let mut out = vec![0.0; self.tape.num_outputs()];
        self.tape.eval_xv(x, &[], &mut buf, &mut out)?;
        let value = out[0];
        let grad = DVector::from_fn(n, |i, _| out[1 + i]);
        let hess = DMatrix::from_fn(n, n, |i, j| out[1 + n + tri(n, i, j)]);
        let third = (0..n)
            .map(|i| DMatrix::from_fn(n, n, |m, l| out[1 + n + nn2 + i * nn2 + tri(n, m, l)]))
            .collect();
        Ok(FieldJets {
            value,
            grad,
            hess,
            third,
        })
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.jets(x)?.value)
    }
}

// ---------------------------------------------------------------------------
// Gradient field of a temporal function and its implicit derivatives
// ---------------------------------------------------------------------------

/// Gradient field data at x: V = grad(-f), dV = dV^k/dx^m, and optionally
/// the second implicit derivatives d2V^k/dx^m dx^l.
pub(crate) struct GradientJets {
    pub v: DVector<f64>,
    pub dv: DMatrix<f64>,
    pub d2v: Vec<DMatrix<f64>>,
    pub point: PointJets,
    pub field: FieldJets,
    pub f_star: f64,
    /// dF*(-df)/dx^m.
    pub dfstar: DVector<f64>,
}

pub(crate) fn gradient_jets(model: &Model, field: &ScalarField, x: &[f64]) -> Result<GradientJets> {
    let n = model.n();
    let fj = field.jets(x)?;
    let omega: Vec<f64> = (0..n).map(|i| -fj.grad[i]).collect();
    let dual = legendre_transform(model, x, &omega).map_err(|e| match e {
        Error::NotInPolarCone { reason, .. } => Error::NotTemporal {
            x: x.to_vec(),
            reason,
        },
        other => other,
    })?;
    let v = dual.legendre.clone();
    let point = model.point_jets(x, v.as_slice())?;

    // First-order implicit differentiation of dL/dv(x, V(x)) = -df(x):
    //   dV^k/dx^m = -g^{ki} (Lvx[i][m] + f_hess[i][m])
    let mut rhs = DMatrix::zeros(n, n);
    for i in 0..n {
        for m in 0..n {
            rhs[(i, m)] = point.lvx[(i, m)] + fj.hess[(i, m)];
        }
    }
    let dv = -(&point.ginv * &rhs);

    // Second-order implicit differentiation.
    let mut d2v: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        d2v.push(DMatrix::zeros(n, n));
    }
    for m in 0..n {
        for l in 0..n {
            // b_i = Lvxx[i][(m,l)] + sum_a dgdx[m][(i,a)] dv[a][l]
            //     + sum_k' (dgdx[l][(i,k')] + sum_a dgdv[a][(i,k')] dv[a][l]) dv[k'][m]
            //     + f_third[i][(m,l)]
            let mut b = DVector::zeros(n);
            for i in 0..n {
                let mut acc = point.lvxx[i][(m, l)] + fj.third[i][(m, l)];
                for a in 0..n {
                    acc += point.dgdx[m][(i, a)] * dv[(a, l)];
                }
                for kp in 0..n {
                    let mut coeff = point.dgdx[l][(i, kp)];
                    for a in 0..n {
                        coeff += point.dgdv[a][(i, kp)] * dv[(a, l)];
                    }
                    acc += coeff * dv[(kp, m)];
                }
                b[i] = acc;
            }
            let col = -(&point.ginv * b);
            for k in 0..n {
                d2v[k][(m, l)] = col[k];
            }
        }
    }

    // dF*/dx^m from F*^2 = -2 L(x, V(x)) and dL/dv(V) = omega = -df.
    let f_star = dual.f_star;
    let mut dfstar = DVector::zeros(n);
    for m in 0..n {
        let mut dl = point.lx[m];
        for k in 0..n {
            dl += -fj.grad[k] * dv[(k, m)];
        }
        dfstar[m] = -dl / f_star;
    }

    Ok(GradientJets {
        v,
        dv,
        d2v,
        point,
        field: fj,
        f_star,
        dfstar,
    })
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

/// Gradient, Hessian and d'Alembertian family of a temporal function at x.
#[derive(Clone, Debug)]
pub struct OperatorAt {
    pub x: DVector<f64>,
    pub f_value: f64,
    /// grad(-f)(x), future timelike.
    pub grad: DVector<f64>,
    /// F*(-df)(x) = F(grad(-f)).
    pub f_star: f64,
    /// Hessian endomorphism: hess[(i,j)] = (nabla^2(-f) e_j)^i.
    pub hess: DMatrix<f64>,
    /// Fundamental tensor at the gradient (for inner products in the caller).
    pub g: DMatrix<f64>,
    /// Trace of the Hessian.
    pub box_plain: f64,
    /// Weighted d'Alembertian, trace-minus-weight route.
    pub box_m: f64,
    /// Weighted d'Alembertian, divergence route (independent cross-check).
    pub box_m_div: f64,
    /// p-d'Alembertian, divergence form.
    pub box_mp: f64,
    /// p-d'Alembertian, expanded form (independent cross-check).
    pub box_mp_expanded: f64,
    pub p: f64,
}

/// Computes grad(-f) = Legendre(-df) at x; fails with NotTemporal when -df
/// is not in the polar cone.
pub fn gradient(model: &Model, f: &ExprDag, x: &[f64]) -> Result<DVector<f64>> {
    let field = ScalarField::compile(model.n(), f)?;
    let jets = gradient_jets(model, &field, x)?;
    Ok(jets.v)
}

/// Full operator record at x for exponent p: spacetime Hessian, plain,
/// weighted (two routes) and p-d'Alembertians (two routes).
pub fn hessian_and_dalembertian(
    model: &Model,
    f: &ExprDag,
    x: &[f64],
    p: f64,
) -> Result<OperatorAt> {
    let field = ScalarField::compile(model.n(), f)?;
    operator_at(model, &field, x, p)
}

pub(crate) fn operator_at(
    model: &Model,
    field: &ScalarField,
    x: &[f64],
    p: f64,
) -> Result<OperatorAt> {
    let n = model.n();
    let gj = gradient_jets(model, field, x)?;

    // Hessian endomorphism H^i_j = dV^i/dx^j + Gamma^i_jk(V) V^k.
    let mut hess = gj.dv.clone();
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += gj.point.chern[i][(j, k)] * gj.v[k];
            }
            hess[(i, j)] += acc;
        }
    }
    let box_plain = hess.trace();
    let box_m = box_plain - gj.point.dpsi_flow;

    // Divergence route: div_m V = sum dV^i/dx^i + V^i dPhi/dx^i.
    let mut box_m_div = 0.0;
    for i in 0..n {
        box_m_div += gj.dv[(i, i)] + gj.v[i] * gj.point.phi_x[i];
    }

    // p-d'Alembertian, divergence form:
    // div_m(F*^{p-2} V) = (p-2) F*^{p-3} dF*(V) + F*^{p-2} div_m V.
    let fstar = gj.f_star;
    let dfstar_v: f64 = (0..n).map(|m| gj.dfstar[m] * gj.v[m]).sum();
    let box_mp = (p - 2.0) * fstar.powf(p - 3.0) * dfstar_v + fstar.powf(p - 2.0) * box_m_div;

    // Expanded form: F*^{p-2} [ box_m - (p-2) g_V(H u, u) ], u = V / F*.
    let u = &gj.v / fstar;
    let hu = &hess * &u;
    let ghu_u = (hu.transpose() * &gj.point.g * &u)[(0, 0)];
    let box_mp_expanded = fstar.powf(p - 2.0) * (box_m - (p - 2.0) * ghu_u);

    Ok(OperatorAt {
        x: DVector::from_row_slice(x),
        f_value: gj.field.value,
        grad: gj.v.clone(),
        f_star: fstar,
        hess,
        g: gj.point.g.clone(),
        box_plain,
        box_m,
        box_m_div,
        box_mp,
        box_mp_expanded,
        p,
    })
}

/// Principal symbol of the p-d'Alembertian at x in a g_{grad(-f)}-orthonormal
/// frame with e1 = grad(-f)/F*; eigenvalues are {1-p, 1, ..., 1}.
#[derive(Clone, Debug)]
pub struct SymbolAt {
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

pub fn ellipticity_symbol(model: &Model, f: &ExprDag, x: &[f64], p: f64) -> Result<SymbolAt> {
    let n = model.n();
    let field = ScalarField::compile(n, f)?;
    let gj = gradient_jets(model, &field, x)?;
    let u = &gj.v / gj.f_star;
    // S^{kj} = g^{kj}(V) - (p-2) u^k u^j, the coefficient matrix of the
    // second-order part acting on Hessians of (-f).
    let s = &gj.point.ginv - (&u * u.transpose()) * (p - 2.0);
    let frame = lorentz_frame(&gj.point.g, &u)?;
    let mut e = DMatrix::zeros(n, n);
    for (a, vec) in frame.iter().enumerate() {
        e.set_column(a, vec);
    }
    let e_inv = e
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::IllConditioned("frame matrix singular".into()))?;
    let m = &e_inv * s * e_inv.transpose();
    let mut eigenvalues: Vec<f64> = m
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(SymbolAt {
        matrix: m,
        eigenvalues,
    })
}

/// q-Lagrangian L_q(v) = -F(v)^q / q for future causal v, +infinity
/// otherwise (q in (0,1)).
pub fn q_lagrangian(model: &Model, x: &[f64], v: &[f64], q: f64) -> Result<f64> {
    check_q(q)?;
    let info = classify_causal(model, x, v)?;
    match (info.f, info.orientation) {
        (Some(f), TimeOrientation::Future) => Ok(-f.powf(q) / q),
        _ => Ok(f64::INFINITY),
    }
}

/// p-Hamiltonian H_p(omega) = -(-2 L*(omega))^{p/2} / p for polar omega,
/// +infinity otherwise; p = q/(q-1) < 0.
pub fn p_hamiltonian(model: &Model, x: &[f64], omega: &[f64], q: f64) -> Result<f64> {
    check_q(q)?;
    let p = q / (q - 1.0);
    match legendre_transform(model, x, omega) {
        Ok(dual) => Ok(-(-2.0 * dual.l_star).powf(p / 2.0) / p),
        Err(Error::NotInPolarCone { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

fn check_q(q: f64) -> Result<()> {
    if q <= 0.0 || q >= 1.0 {
        return Err(Error::OutOfEpsilonRange(format!(
            "q = {q} outside (0, 1)"
        )));
    }
    Ok(())
}

/// p-energy of a temporal function over a coordinate box: midpoint-rule
/// tensor quadrature of H_p(-df) sigma, with grid doubling until the
/// relative change drops below 1e-6.
pub fn p_energy(
    model: &Model,
    f: &ExprDag,
    lo: &[f64],
    hi: &[f64],
    p: f64,
    base_grid: usize,
    max_depth: usize,
) -> Result<f64> {
    let n = model.n();
    if lo.len() != n || hi.len() != n {
        return Err(Error::InvalidModel("box dimension mismatch".into()));
    }
    let field = ScalarField::compile(n, f)?;
    let mut grid = base_grid.max(1);
    let mut previous: Option<f64> = None;
    for _ in 0..=max_depth {
        let value = midpoint_energy(model, &field, lo, hi, p, grid)?;
        if let Some(prev) = previous {
            if (value - prev).abs() <= 1e-6 * value.abs().max(1e-30) {
                return Ok(value);
            }
        }
        previous = Some(value);
        grid *= 2;
    }
    Ok(previous.unwrap())
}

fn midpoint_energy(
    model: &Model,
    field: &ScalarField,
    lo: &[f64],
    hi: &[f64],
    p: f64,
    grid: usize,
) -> Result<f64> {
    let n = model.n();
    let steps: Vec<f64> = (0..n).map(|i| (hi[i] - lo[i]) / grid as f64).collect();
    let cell: f64 = steps.iter().product();
    let mut idx = vec![0usize; n];
    let mut total = 0.0;
    loop {
        let x: Vec<f64> = (0..n)
            .map(|i| lo[i] + (idx[i] as f64 + 0.5) * steps[i])
            .collect();
        let fj = field.jets(&x)?;
        let omega: Vec<f64> = (0..n).map(|i| -fj.grad[i]).collect();
        let dual = legendre_transform(model, &x, &omega).map_err(|e| match e {
            Error::NotInPolarCone { reason, .. } => Error::NotTemporal {
                x: x.clone(),
                reason: format!("p-energy node at {x:?}: {reason}"),
            },
            other => other,
        })?;
        let hp = -dual.f_star.powf(p) / p;
        total += hp * model.sigma(&x)? * cell;
        // advance the tensor index
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < grid {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == n {
                return Ok(total);
            }
        }
    }
}

/// Residual of the dual Euler identity sum_k dg*_ij/dw_k w_k = 0, with the
/// omega-derivatives of g* from a central finite-difference stencil on the
/// Legendre transform (no symbolic path exists for g*, making this an
/// independent identity check).
pub fn euler_dual_residual(model: &Model, x: &[f64], omega: &[f64]) -> Result<f64> {
    let n = model.n();
    let h = 1e-5 * (1.0 + omega.iter().map(|w| w * w).sum::<f64>().sqrt());
    let gstar_at = |w: &[f64]| -> Result<DMatrix<f64>> {
        Ok(legendre_transform(model, x, w)?.gstar)
    };
    let mut contraction = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut wp = omega.to_vec();
        let mut wm = omega.to_vec();
        wp[k] += h;
        wm[k] -= h;
        let diff = (gstar_at(&wp)? - gstar_at(&wm)?) / (2.0 * h);
        contraction += diff * omega[k];
    }
    Ok(contraction.amax())
}
