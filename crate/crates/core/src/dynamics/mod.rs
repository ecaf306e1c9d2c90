//! Geodesic dynamics: integration of the spray ODE, parallel transport,
//! Jacobi frames with the Riccati residual, two-point shooting and the time
//! separation.
//!
//! Sign convention fixed by the spray: with G^i = gamma^i_jk v^j v^k the
//! geodesic equation reads xdotdot^i + G^i(xdot) = 0, and Gamma^i_jk(v) v^j
//! v^k = G^i(v) by the Euler identities, so the residual invariant checks
//! both routes at once.

pub mod rk45;

pub use rk45::{DensePath, OdeOptions};

use crate::duality::{gradient_jets, ScalarField};
use crate::error::Error;
use crate::expr::{DagBuilder, ExprDag};
use crate::geometry::lorentz_frame;
use crate::model::{Family, Model};
use crate::quad::adaptive_simpson;
use crate::Result;
use nalgebra::{DMatrix, DVector};

/// A densely sampled geodesic with cubic Hermite interpolation. State layout
/// is [x, xdot] of dimension 2n; the curve parameter 0 corresponds to the
/// initial condition.
#[derive(Clone, Debug)]
pub struct GeodesicPath {
    model: Model,
    path: DensePath,
    /// Conserved Lagrangian value L(xdot(0)).
    pub l0: f64,
    /// F(xdot) = 1 within 1e-9.
    pub unit_speed: bool,
}

impl GeodesicPath {
    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn span(&self) -> (f64, f64) {
        (self.path.t_start(), self.path.t_end())
    }

    pub fn position(&self, t: f64) -> DVector<f64> {
        let n = self.model.n();
        let y = self.path.value(t);
        DVector::from_fn(n, |i, _| y[i])
    }

    pub fn velocity(&self, t: f64) -> DVector<f64> {
        let n = self.model.n();
        let y = self.path.value(t);
        DVector::from_fn(n, |i, _| y[n + i])
    }

    pub fn state(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        (self.position(t), self.velocity(t))
    }

    /// Acceleration of the interpolant at t.
    pub fn acceleration(&self, t: f64) -> DVector<f64> {
        let n = self.model.n();
        let dy = self.path.derivative(t);
        DVector::from_fn(n, |i, _| dy[n + i])
    }

    pub(crate) fn dense(&self) -> &DensePath {
        &self.path
    }

    /// Lorentz-Finsler length of the whole parameter range; the flow
    /// conserves L, so this is F(xdot(0)) times the parameter length.
    pub fn length(&self) -> f64 {
        let (a, b) = self.span();
        (-2.0 * self.l0).max(0.0).sqrt() * (b - a)
    }

    /// max |L(xdot(t)) - L(xdot(0))| over the accepted nodes.
    pub fn lagrangian_drift(&self) -> Result<f64> {
        let n = self.model.n();
        let mut worst = 0.0f64;
        for (_, y, _) in self.path.nodes() {
            let x: Vec<f64> = (0..n).map(|i| y[i]).collect();
            let v: Vec<f64> = (0..n).map(|i| y[n + i]).collect();
            let l = self.model.lagrangian_value(&x, &v)?;
            worst = worst.max((l - self.l0).abs());
        }
        Ok(worst)
    }

    /// max over nodes of |xdotdot^i + Gamma^i_jk(xdot) xdot^j xdot^k|.
    pub fn geodesic_residual(&self) -> Result<f64> {
        let n = self.model.n();
        let mut worst = 0.0f64;
        for (_, y, dy) in self.path.nodes() {
            let x: Vec<f64> = (0..n).map(|i| y[i]).collect();
            let v: Vec<f64> = (0..n).map(|i| y[n + i]).collect();
            let chern = self.model.chern_at(&x, &v)?;
            for i in 0..n {
                let mut acc = dy[n + i];
                for j in 0..n {
                    for k in 0..n {
                        acc += chern[i][(j, k)] * v[j] * v[k];
                    }
                }
                worst = worst.max(acc.abs());
            }
        }
        Ok(worst)
    }
}

impl GeodesicPath {
    pub(crate) fn from_dense(model: Model, path: DensePath, l0: f64) -> GeodesicPath {
        let f0 = (-2.0 * l0).max(0.0).sqrt();
        GeodesicPath {
            model,
            path,
            l0,
            unit_speed: (f0 - 1.0).abs() <= 1e-9,
        }
    }
}

/// Integrates the geodesic with initial state (x, v) at parameter 0 over
/// [t_span.0, t_span.1] (0 must lie in the span). `tol` feeds both the
/// absolute and relative integrator tolerances.
pub fn integrate_geodesic(
    model: &Model,
    x: &[f64],
    v: &[f64],
    t_span: (f64, f64),
    tol: f64,
) -> Result<GeodesicPath> {
    let opts = OdeOptions {
        rtol: tol,
        atol: tol,
        ..OdeOptions::default()
    };
    integrate_geodesic_opts(model, x, v, t_span, opts)
}

/// `integrate_geodesic` with full integrator options; callers that sample
/// the interpolant densely (quadrature along the path) cap `max_step`.
pub fn integrate_geodesic_opts(
    model: &Model,
    x: &[f64],
    v: &[f64],
    t_span: (f64, f64),
    opts: OdeOptions,
) -> Result<GeodesicPath> {
    let (a, b) = t_span;
    if a > 0.0 || b < 0.0 || a >= b {
        return Err(Error::InvalidModel(format!(
            "geodesic span ({a}, {b}) must contain the initial parameter 0"
        )));
    }
    model.require_domain(x, v)?;
    let n = model.n();
    let l0 = model.lagrangian_value(x, v)?;

    let mut y0 = DVector::zeros(2 * n);
    for i in 0..n {
        y0[i] = x[i];
        y0[n + i] = v[i];
    }

    let rhs = |model: &Model| {
        let n = model.n();
        let model = model.clone();
        let mut buf = Vec::new();
        let mut spray = vec![0.0; n];
        move |_t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| -> Result<()> {
            let (xs, vs) = y.as_slice().split_at(n);
            model.spray_into(xs, vs, &mut buf, &mut spray)?;
            for i in 0..n {
                dy[i] = vs[i];
                dy[n + i] = -spray[i];
            }
            Ok(())
        }
    };

    let forward = if b > 0.0 {
        Some(rk45::integrate(rhs(model), 0.0, y0.clone(), b, opts)?)
    } else {
        None
    };
    let backward = if a < 0.0 {
        Some(rk45::integrate(rhs(model), 0.0, y0.clone(), a, opts)?)
    } else {
        None
    };
    let path = match (backward, forward) {
        (Some(back), Some(fwd)) => DensePath::join(back, fwd),
        (None, Some(fwd)) => fwd,
        (Some(back), None) => back,
        (None, None) => unreachable!("span contains 0"),
    };

    // domain exit check over accepted nodes
    for (t, y, _) in path.nodes() {
        let (xs, vs) = y.as_slice().split_at(n);
        if !model.in_domain(xs, vs) {
            return Err(Error::LeftDomain { t });
        }
    }

    Ok(GeodesicPath::from_dense(model.clone(), path, l0))
}

/// Parallel transport of w0 along the path: solves D^{etadot}_{etadot} W = 0
/// coupled with the geodesic itself (the base curve is re-integrated rather
/// than interpolated, keeping the transport at integrator accuracy).
/// Returns the transported field W as a dense path over the same span.
pub fn parallel_transport(model: &Model, path: &GeodesicPath, w0: &[f64]) -> Result<DensePath> {
    let n = model.n();
    let (a, b) = path.span();
    let (x0, v0) = path.state(0.0);
    let model_c = model.clone();
    let rhs = move |_t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| -> Result<()> {
        let xs: Vec<f64> = (0..n).map(|i| y[i]).collect();
        let vs: Vec<f64> = (0..n).map(|i| y[n + i]).collect();
        let mut buf = Vec::new();
        let mut spray = vec![0.0; n];
        model_c.spray_into(&xs, &vs, &mut buf, &mut spray)?;
        let chern = model_c.chern_at(&xs, &vs)?;
        for i in 0..n {
            dy[i] = vs[i];
            dy[n + i] = -spray[i];
            let mut acc = 0.0;
            for j in 0..n {
                for k in 0..n {
                    acc += chern[i][(j, k)] * vs[j] * y[2 * n + k];
                }
            }
            dy[2 * n + i] = -acc;
        }
        Ok(())
    };
    let mut y0 = DVector::zeros(3 * n);
    for i in 0..n {
        y0[i] = x0[i];
        y0[n + i] = v0[i];
        y0[2 * n + i] = w0[i];
    }
    let opts = OdeOptions::default();
    let full = if a < 0.0 {
        let back = rk45::integrate(rhs.clone(), 0.0, y0.clone(), a, opts)?;
        let fwd = rk45::integrate(rhs, 0.0, y0, b, opts)?;
        DensePath::join(back, fwd)
    } else {
        rk45::integrate(rhs, a, y0, b, opts)?
    };
    Ok(full.slice(2 * n, n))
}

/// Jacobi frames along the gradient-flow geodesic of a function h with -h
/// temporal: E_i(0) is a g_{grad h}-orthonormal basis with e_1 the
/// normalized gradient, D E_i(0) is the Hessian image of e_i, and each E_i
/// solves the Jacobi equation.
#[derive(Clone)]
pub struct JacobiFrame {
    pub path: GeodesicPath,
    /// state layout: [E (n*n, rows E_i), P (n*n, rows D E_i)]
    frame: DensePath,
    n: usize,
}

impl JacobiFrame {
    pub fn span(&self) -> (f64, f64) {
        self.path.span()
    }

    /// Matrix with rows E_i(t) in coordinates.
    pub fn e_matrix(&self, t: f64) -> DMatrix<f64> {
        let n = self.n;
        let y = self.frame.value(t);
        DMatrix::from_fn(n, n, |i, k| y[i * n + k])
    }

    /// Matrix with rows (D_{etadot} E_i)(t).
    pub fn p_matrix(&self, t: f64) -> DMatrix<f64> {
        let n = self.n;
        let y = self.frame.value(t);
        DMatrix::from_fn(n, n, |i, k| y[n * n + i * n + k])
    }

    /// A(t)_ij = g_{etadot}(E_i, E_j).
    pub fn a_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        let (x, v) = self.path.state(t);
        let (_, _, g) = self
            .path
            .model()
            .metric_data(x.as_slice(), v.as_slice())?;
        let e = self.e_matrix(t);
        Ok(&e * g * e.transpose())
    }

    /// B(t) with D E_i = sum_j b_ij E_j; fails when the frame degenerates.
    pub fn b_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        let e = self.e_matrix(t);
        let p = self.p_matrix(t);
        let svd = e.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= 0.0 || smax / smin > 1e12 {
            return Err(Error::FrameSingular {
                t,
                cond: if smin > 0.0 { smax / smin } else { f64::INFINITY },
            });
        }
        let e_inv = e
            .try_inverse()
            .ok_or(Error::FrameSingular { t, cond: f64::INFINITY })?;
        Ok(p * e_inv)
    }

    /// trace B(0)^2; equals the Hilbert-Schmidt invariant of the Hessian.
    pub fn trace_b0_squared(&self) -> Result<f64> {
        let b = self.b_matrix(0.0)?;
        Ok((&b * &b).trace())
    }
}

/// Builds the Jacobi frame for the geodesic zeta(t) = exp_x(t grad h(x)).
pub fn jacobi_frame(
    model: &Model,
    h: &ExprDag,
    x: &[f64],
    t_span: (f64, f64),
) -> Result<JacobiFrame> {
    let n = model.n();
    // f = -h is temporal; grad h = Legendre(dh) = grad(-f).
    let f = negate_dag(h);
    let field = ScalarField::compile(n, &f)?;
    let gj = gradient_jets(model, &field, x)?;
    let grad_h = gj.v.clone();

    // Hessian endomorphism of h (w -> D_w grad h).
    let mut hess = gj.dv.clone();
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += gj.point.chern[i][(j, k)] * grad_h[k];
            }
            hess[(i, j)] += acc;
        }
    }

    let frame0 = lorentz_frame(&gj.point.g, &grad_h)?;
    let (a, b) = t_span;
    if a > 0.0 || b <= a {
        return Err(Error::InvalidModel(format!(
            "frame span ({a}, {b}) must contain the initial parameter 0"
        )));
    }

    // coupled state [x, v, E (rows), P (rows)]; the base geodesic is carried
    // in the same integration so the Jacobi right-hand side never reads an
    // interpolant.
    let nn = n * n;
    let mut y0 = DVector::zeros(2 * n + 2 * nn);
    for i in 0..n {
        y0[i] = x[i];
        y0[n + i] = grad_h[i];
    }
    for (i, e) in frame0.iter().enumerate() {
        for k in 0..n {
            y0[2 * n + i * n + k] = e[k];
        }
        let pe = &hess * e;
        for k in 0..n {
            y0[2 * n + nn + i * n + k] = pe[k];
        }
    }

    let model_c = model.clone();
    let rhs = move |_t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| -> Result<()> {
        let xs: Vec<f64> = (0..n).map(|i| y[i]).collect();
        let vs: Vec<f64> = (0..n).map(|i| y[n + i]).collect();
        let mut buf = Vec::new();
        let mut spray = vec![0.0; n];
        model_c.spray_into(&xs, &vs, &mut buf, &mut spray)?;
        let (chern, r, _) = model_c.frame_at(&xs, &vs)?;
        for i in 0..n {
            dy[i] = vs[i];
            dy[n + i] = -spray[i];
        }
        let e_base = 2 * n;
        let p_base = 2 * n + nn;
        for i in 0..n {
            for k in 0..n {
                // E' = P - Gamma(v) v E ; P' = -R E - Gamma(v) v P
                let mut gamma_ve = 0.0;
                let mut gamma_vp = 0.0;
                for j in 0..n {
                    for l in 0..n {
                        gamma_ve += chern[k][(j, l)] * vs[j] * y[e_base + i * n + l];
                        gamma_vp += chern[k][(j, l)] * vs[j] * y[p_base + i * n + l];
                    }
                }
                let mut re = 0.0;
                for l in 0..n {
                    re += r[(k, l)] * y[e_base + i * n + l];
                }
                dy[e_base + i * n + k] = y[p_base + i * n + k] - gamma_ve;
                dy[p_base + i * n + k] = -re - gamma_vp;
            }
        }
        Ok(())
    };

    // cap the step so that dense-output stencils stay at integrator accuracy
    let opts = OdeOptions {
        max_step: 0.02,
        ..OdeOptions::default()
    };
    let full = if a < 0.0 {
        let back = rk45::integrate(rhs.clone(), 0.0, y0.clone(), a, opts)?;
        let fwd = rk45::integrate(rhs, 0.0, y0, b, opts)?;
        DensePath::join(back, fwd)
    } else {
        rk45::integrate(rhs, 0.0, y0, b, opts)?
    };

    let l0 = model.lagrangian_value(x, grad_h.as_slice())?;
    let path = GeodesicPath::from_dense(model.clone(), full.slice(0, 2 * n), l0);
    let frame = full.slice(2 * n, 2 * nn);
    Ok(JacobiFrame { path, frame, n })
}

fn negate_dag(dag: &ExprDag) -> ExprDag {
    let mut b = DagBuilder::new();
    let mut map = Vec::new();
    let root = b.import(dag, &mut map);
    let neg = b.neg(root);
    b.finish(neg)
}

/// |d/dt trace B + trace B^2 + Ric(zetadot)| at t, with the trace derivative
/// from a 5-point stencil on the dense output.
pub fn riccati_residual(frame: &JacobiFrame, t: f64) -> Result<f64> {
    let (a, b) = frame.span();
    let h = ((b - a) * 1e-3).min(1e-3).max(1e-6);
    if t - 2.0 * h < a || t + 2.0 * h > b {
        return Err(Error::InvalidModel(format!(
            "t = {t} too close to the frame span ({a}, {b}) for the stencil"
        )));
    }
    let tr = |s: f64| -> Result<f64> { Ok(frame.b_matrix(s)?.trace()) };
    let dtrace = (tr(t - 2.0 * h)? - 8.0 * tr(t - h)? + 8.0 * tr(t + h)? - tr(t + 2.0 * h)?)
        / (12.0 * h);
    let bmat = frame.b_matrix(t)?;
    let trace_b2 = (&bmat * &bmat).trace();
    let (x, v) = frame.path.state(t);
    let (_, _, ric) = frame
        .path
        .model()
        .frame_at(x.as_slice(), v.as_slice())?;
    Ok((dtrace + trace_b2 + ric).abs())
}

// ---------------------------------------------------------------------------
// Two-point problems and the time separation
// ---------------------------------------------------------------------------

/// Result of the boundary-value search: either a maximizing geodesic or a
/// diagnostic that no connecting geodesic was found (which is a result, not
/// an error).
#[derive(Clone, Debug)]
pub enum Connection {
    Path(GeodesicPath),
    None { seeds_tried: usize, reason: String },
}

impl Connection {
    pub fn path(&self) -> Option<&GeodesicPath> {
        match self {
            Connection::Path(p) => Some(p),
            Connection::None { .. } => None,
        }
    }
}

/// Shooting Newton iteration over (v, T): solves exp_x(T v) = y with the
/// unit-speed normalization L(v) = -1/2, from a fan of future-directed
/// seeds. Among converged solutions the largest length wins; ties go to the
/// earliest (smallest-offset) seed.
pub fn connect_points(model: &Model, x: &[f64], y: &[f64]) -> Result<Connection> {
    connect_points_seeded(model, x, y, &[])
}

/// `connect_points` with extra caller-provided (v, T) warm starts tried
/// before the default fan.
pub fn connect_points_seeded(
    model: &Model,
    x: &[f64],
    y: &[f64],
    warm: &[(Vec<f64>, f64)],
) -> Result<Connection> {
    let n = model.n();
    let mut seeds: Vec<(Vec<f64>, f64)> = warm.to_vec();

    // deterministic fan of future unit directions
    let seed_vec = model.seed_vector(x)?;
    let dist: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
        .max(1e-3);
    let push_dir = |dir: DVector<f64>, seeds: &mut Vec<(Vec<f64>, f64)>| {
        if !model.in_domain(x, dir.as_slice()) {
            return;
        }
        if let Ok(l) = model.lagrangian_value(x, dir.as_slice()) {
            if l < 0.0 {
                let f = (-2.0 * l).sqrt();
                let unit: Vec<f64> = dir.iter().map(|c| c / f).collect();
                seeds.push((unit, dist));
            }
        }
    };
    push_dir(seed_vec.clone(), &mut seeds);
    for beta in [0.3, 0.6, 0.85] {
        for k in 0..n {
            for sign in [1.0, -1.0] {
                let mut dir = seed_vec.clone();
                dir[k] += sign * beta * seed_vec.norm();
                push_dir(dir, &mut seeds);
            }
        }
    }

    let mut best: Option<(GeodesicPath, f64)> = None;
    let mut ill_conditioned = 0usize;
    let mut tried = 0usize;

    'seed_loop: for (v_seed, t_seed) in &seeds {
        tried += 1;
        let mut z = DVector::zeros(n + 1);
        for i in 0..n {
            z[i] = v_seed[i];
        }
        z[n] = (*t_seed).max(1e-3);

        let residual = |z: &DVector<f64>| -> Result<DVector<f64>> {
            let v: Vec<f64> = (0..n).map(|i| z[i]).collect();
            let t_end = z[n];
            if t_end <= 1e-8 || !model.in_domain(x, &v) {
                return Err(Error::OutsideDomain {
                    x: x.to_vec(),
                    v: v.clone(),
                });
            }
            let path = integrate_geodesic(model, x, &v, (0.0, t_end), 1e-12)?;
            let end = path.position(t_end);
            let l = model.lagrangian_value(x, &v)?;
            let mut r = DVector::zeros(n + 1);
            for i in 0..n {
                r[i] = end[i] - y[i];
            }
            r[n] = l + 0.5;
            Ok(r)
        };

        let Ok(mut r) = residual(&z) else {
            continue;
        };
        let tol_pos = 1e-10 * (1.0 + dist);
        for _iter in 0..60 {
            let pos_norm = r.rows(0, n).norm();
            if pos_norm <= tol_pos && r[n].abs() <= 1e-11 {
                // converged: record candidate
                let v: Vec<f64> = (0..n).map(|i| z[i]).collect();
                let t_end = z[n];
                let Ok(path) = integrate_geodesic(model, x, &v, (0.0, t_end), 1e-12) else {
                    continue 'seed_loop;
                };
                let length = path.length();
                let better = match &best {
                    None => true,
                    Some((_, best_len)) => length > best_len + 1e-10,
                };
                if better {
                    best = Some((path, length));
                }
                continue 'seed_loop;
            }

            // forward-difference Jacobian
            let mut jac = DMatrix::zeros(n + 1, n + 1);
            let mut ok = true;
            for col in 0..=n {
                let h = 1e-7 * (1.0 + z[col].abs());
                let mut zp = z.clone();
                zp[col] += h;
                match residual(&zp) {
                    Ok(rp) => {
                        for row in 0..=n {
                            jac[(row, col)] = (rp[row] - r[row]) / h;
                        }
                    }
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue 'seed_loop;
            }
            let svd = jac.clone().svd(false, false);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            if smin <= 0.0 || smax / smin > 1e12 {
                ill_conditioned += 1;
                continue 'seed_loop;
            }
            let Some(delta) = jac.lu().solve(&(-&r)) else {
                ill_conditioned += 1;
                continue 'seed_loop;
            };
            let mut alpha = 1.0;
            let mut advanced = false;
            while alpha >= 1e-6 {
                let zc = &z + &delta * alpha;
                if let Ok(rc) = residual(&zc) {
                    if rc.norm() < r.norm() {
                        z = zc;
                        r = rc;
                        advanced = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !advanced {
                continue 'seed_loop;
            }
        }
    }

    match best {
        Some((path, _)) => Ok(Connection::Path(path)),
        None => {
            if ill_conditioned == tried && tried > 0 {
                Err(Error::IllConditioned(format!(
                    "all {tried} shooting seeds hit singular Jacobians"
                )))
            } else {
                Ok(Connection::None {
                    seeds_tried: tried,
                    reason: "no shooting seed converged to a connecting geodesic".into(),
                })
            }
        }
    }
}

/// Time separation tau(x, y): closed forms for the registered families,
/// shooting otherwise; -infinity when y is not in the chronological future
/// of x (as far as the solver can tell).
pub fn time_separation(model: &Model, x: &[f64], y: &[f64]) -> Result<f64> {
    match model.family() {
        Family::Flat => {
            let w: Vec<f64> = y.iter().zip(x).map(|(b, a)| b - a).collect();
            let info = crate::geometry::classify_causal(model, x, &w)?;
            match (info.class, info.orientation) {
                (crate::geometry::CausalClass::Timelike, crate::geometry::TimeOrientation::Future) =>
                {
                    Ok(info.f.unwrap())
                }
                (crate::geometry::CausalClass::Lightlike, crate::geometry::TimeOrientation::Future) =>
                {
                    Ok(0.0)
                }
                _ => Ok(f64::NEG_INFINITY),
            }
        }
        Family::Product => {
            if model.n() != 2 {
                return Err(Error::InvalidModel(
                    "product time separation requires a 1-dimensional spatial factor".into(),
                ));
            }
            let dt = y[0] - x[0];
            if dt <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            let d_sigma = spatial_distance_1d(model, x[1], y[1])?;
            if dt > d_sigma {
                Ok((dt * dt - d_sigma * d_sigma).sqrt())
            } else if (dt - d_sigma).abs() <= 1e-14 * (1.0 + dt.abs()) {
                Ok(0.0)
            } else {
                Ok(f64::NEG_INFINITY)
            }
        }
        Family::Generic => match connect_points(model, x, y)? {
            Connection::Path(path) => Ok(path.length()),
            Connection::None { .. } => Ok(f64::NEG_INFINITY),
        },
    }
}

/// Riemannian distance on the 1-D spatial factor of a product model:
/// integral of sqrt(h) between the coordinates.
pub(crate) fn spatial_distance_1d(model: &Model, a: f64, b: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let mut h_at = |s: f64| -> Result<f64> {
        let (_, _, g) = model.metric_data(&[0.0, s], &[1.0, 0.0])?;
        Ok(g[(1, 1)].max(0.0).sqrt())
    };
    adaptive_simpson(&mut h_at, lo, hi, 1e-12)
}

/// x is chronologically before y.
pub fn chronological(model: &Model, x: &[f64], y: &[f64]) -> Result<bool> {
    Ok(time_separation(model, x, y)? > 0.0)
}
