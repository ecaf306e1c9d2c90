//! Pointwise Lorentz-Finsler geometry: fundamental tensor, causal
//! classification, sprays and connections, covariant derivatives, curvature
//! and the Berwald diagnostic.

use crate::error::Error;
use crate::expr::{DagBuilder, ExprDag, Var};
use crate::model::Model;
use crate::Result;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Fundamental tensor at a point-velocity pair.
#[derive(Clone, Debug)]
pub struct MetricAt {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    pub l: f64,
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    pub det_g: f64,
}

impl MetricAt {
    /// g_v(a, b).
    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a.transpose() * &self.g * b)[(0, 0)]
    }
}

/// g_ij(v) = second velocity derivatives of L, with inverse and determinant.
/// Fails with a signature error unless the eigenvalues are (-,+,...,+).
pub fn fundamental_tensor(model: &Model, x: &[f64], v: &[f64]) -> Result<MetricAt> {
    model.require_domain(x, v)?;
    let (l, _, g) = model.metric_data(x, v)?;
    check_signature(&g, x, v)?;
    let det_g = g.determinant();
    let g_inv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::IllConditioned("fundamental tensor not invertible".into()))?;
    Ok(MetricAt {
        x: DVector::from_row_slice(x),
        v: DVector::from_row_slice(v),
        l,
        g,
        g_inv,
        det_g,
    })
}

pub(crate) fn check_signature(g: &DMatrix<f64>, x: &[f64], v: &[f64]) -> Result<()> {
    let eigen = g.clone().symmetric_eigen().eigenvalues;
    let scale = eigen.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
    let negatives = eigen.iter().filter(|&&e| e < 0.0).count();
    let degenerate = eigen.iter().any(|&e| e.abs() <= 1e-12 * scale.max(1.0));
    if negatives != 1 || degenerate {
        return Err(Error::Signature {
            at: format!("x={x:?}, v={v:?}"),
            eigenvalues: eigen.iter().copied().collect(),
        });
    }
    Ok(())
}

/// Causal type of a vector.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum CausalClass {
    Timelike,
    Lightlike,
    Spacelike,
    Zero,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum TimeOrientation {
    Future,
    Past,
    None,
}

/// Causal classification record.
#[derive(Clone, Debug)]
pub struct CausalInfo {
    pub class: CausalClass,
    pub orientation: TimeOrientation,
    /// F(v) = sqrt(-2L(v)), attached for causal vectors only.
    pub f: Option<f64>,
}

/// Classifies v by the sign of L with a homogeneity-respecting tolerance
/// band, and orients causal vectors against the seed field: v is
/// future-directed iff it lies in the seed's cone component, tested by the
/// segment from X(x) to v staying timelike.
pub fn classify_causal(model: &Model, x: &[f64], v: &[f64]) -> Result<CausalInfo> {
    let n = model.n();
    let vnorm2: f64 = v.iter().map(|c| c * c).sum();
    if vnorm2 <= 1e-24 {
        return Ok(CausalInfo {
            class: CausalClass::Zero,
            orientation: TimeOrientation::None,
            f: None,
        });
    }
    // Evaluating L outside a declared cone domain counts as spacelike-or-
    // unclassifiable; the Lagrangian itself decides where that happens.
    let l = match model.lagrangian_value(x, v) {
        Ok(l) => l,
        Err(Error::Domain { .. }) => {
            return Ok(CausalInfo {
                class: CausalClass::Spacelike,
                orientation: TimeOrientation::None,
                f: None,
            })
        }
        Err(e) => return Err(e),
    };
    let band = 1e-12 * (1.0 + vnorm2);
    let class = if l.abs() <= band {
        CausalClass::Lightlike
    } else if l < 0.0 {
        CausalClass::Timelike
    } else {
        CausalClass::Spacelike
    };
    if class == CausalClass::Spacelike {
        return Ok(CausalInfo {
            class,
            orientation: TimeOrientation::None,
            f: None,
        });
    }
    let f = (-2.0 * l).max(0.0).sqrt();

    let seed = model.seed_vector(x)?;
    let seed_l = model.lagrangian_value(x, seed.as_slice())?;
    let seed_hat: Vec<f64> = {
        let fs = (-2.0 * seed_l).sqrt();
        seed.iter().map(|s| s / fs).collect()
    };

    // Push lightlike vectors slightly into the open cone before the segment
    // test; convexity of each component makes this orientation-preserving.
    let test_vec = |w: &[f64], sign: f64| -> Vec<f64> {
        let scale = if class == CausalClass::Timelike {
            f
        } else {
            vnorm2.sqrt()
        };
        let mut u: Vec<f64> = w.iter().map(|c| sign * c / scale).collect();
        if class == CausalClass::Lightlike {
            for i in 0..n {
                u[i] += 1e-3 * seed_hat[i];
            }
        }
        u
    };
    let segment_timelike = |target: &[f64]| -> bool {
        const STEPS: usize = 32;
        for s in 0..=STEPS {
            let t = s as f64 / STEPS as f64;
            let u: Vec<f64> = (0..n)
                .map(|i| (1.0 - t) * seed_hat[i] + t * target[i])
                .collect();
            match model.lagrangian_value(x, &u) {
                Ok(lu) if lu < 0.0 => {}
                _ => return false,
            }
        }
        true
    };

    let orientation = if segment_timelike(&test_vec(v, 1.0)) {
        TimeOrientation::Future
    } else if segment_timelike(&test_vec(v, -1.0)) {
        TimeOrientation::Past
    } else {
        // Fallback pairing g_X(X, v) = dL/dv(X) . v, negative for vectors in
        // the seed component.
        let (_, lv_at_seed, _) = model.metric_data(x, seed.as_slice())?;
        let pairing: f64 = (0..n).map(|i| lv_at_seed[i] * v[i]).sum();
        if pairing < 0.0 {
            TimeOrientation::Future
        } else if pairing > 0.0 {
            TimeOrientation::Past
        } else {
            TimeOrientation::None
        }
    };

    Ok(CausalInfo {
        class,
        orientation,
        f: Some(f),
    })
}

/// Connection data at a fixed (x, v).
#[derive(Clone, Debug)]
pub struct ConnectionAt {
    /// gamma[i] is the symmetric matrix (j,k) -> gamma^i_jk.
    pub gamma: Vec<DMatrix<f64>>,
    /// Spray coefficients G^i.
    pub spray: DVector<f64>,
    /// Nonlinear connection N^i_j.
    pub nconn: DMatrix<f64>,
    /// Chern connection coefficients Gamma^i_jk.
    pub chern: Vec<DMatrix<f64>>,
}

/// Formal Christoffel symbols, spray, nonlinear connection and Chern
/// connection, all from exact derivative tapes of L.
pub fn spray_and_connections(model: &Model, x: &[f64], v: &[f64]) -> Result<ConnectionAt> {
    let jets = model.point_jets(x, v)?;
    check_signature(&jets.g, x, v)?;
    Ok(ConnectionAt {
        gamma: jets.gamma,
        spray: jets.spray,
        nconn: jets.nconn,
        chern: jets.chern,
    })
}

/// Covariant derivative D_v^w X of a vector field X(x) given by component
/// expressions, with direction v and reference vector w.
pub fn covariant_derivative(
    model: &Model,
    field: &[ExprDag],
    x: &[f64],
    v: &[f64],
    w: &[f64],
) -> Result<DVector<f64>> {
    let n = model.n();
    if field.len() != n {
        return Err(Error::InvalidModel(format!(
            "vector field has {} components, expected {n}",
            field.len()
        )));
    }
    model.require_domain(x, w)?;
    let chern = model.chern_at(x, w)?;
    let mut result = DVector::zeros(n);
    for i in 0..n {
        let mut value = 0.0;
        // directional derivative of the components
        for (j, vj) in v.iter().enumerate() {
            if *vj == 0.0 {
                continue;
            }
            let d = field[i].differentiate(&Var::X(j));
            value += vj * d.eval(&crate::expr::Env::xv(x, &[]))?;
        }
        // connection term
        let xk: Vec<f64> = (0..n)
            .map(|k| field[k].eval(&crate::expr::Env::xv(x, &[])))
            .collect::<Result<_>>()?;
        for j in 0..n {
            for k in 0..n {
                value += chern[i][(j, k)] * v[j] * xk[k];
            }
        }
        result[i] = value;
    }
    Ok(result)
}

/// Curvature data at (x, v).
#[derive(Clone, Debug)]
pub struct CurvatureAt {
    /// Curvature endomorphism R^i_j(v).
    pub r: DMatrix<f64>,
    /// Ricci scalar, the trace of R_v.
    pub ricci: f64,
}

pub fn curvature_and_ricci(model: &Model, x: &[f64], v: &[f64]) -> Result<CurvatureAt> {
    model.require_domain(x, v)?;
    let (_, r, ricci) = model.frame_at(x, v)?;
    Ok(CurvatureAt { r, ricci })
}

/// Numerical Berwald diagnostic: fiber variation of the Chern symbols.
#[derive(Clone, Debug)]
pub struct BerwaldReport {
    pub is_berwald_numerically: bool,
    pub max_fiber_variation: f64,
    pub samples_used: usize,
}

/// Samples `sample_count` in-domain velocities over the fixed base point and
/// reports the largest pairwise deviation of any Chern coefficient.
pub fn berwald_diagnostic(
    model: &Model,
    x: &[f64],
    sample_count: usize,
    rng: &mut impl Rng,
) -> Result<BerwaldReport> {
    let n = model.n();
    let mut values: Vec<Vec<DMatrix<f64>>> = Vec::new();
    for _ in 0..sample_count {
        if let Some(v) = model.sample_velocity_at(x, rng) {
            values.push(model.chern_at(x, &v)?);
        }
    }
    if values.len() < 2 {
        return Err(Error::InsufficientSamples {
            found: values.len(),
            need: 2,
        });
    }
    let mut max_dev = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for sample in &values {
                    let c = sample[i][(j, k)];
                    lo = lo.min(c);
                    hi = hi.max(c);
                }
                max_dev = max_dev.max(hi - lo);
            }
        }
    }
    Ok(BerwaldReport {
        is_berwald_numerically: max_dev <= 1e-8,
        max_fiber_variation: max_dev,
        samples_used: values.len(),
    })
}

/// Builds a g_w-orthonormal frame (e_1, ..., e_n) with timelike e_1
/// proportional to `first` (normalized to g(e1,e1) = -1) and spacelike
/// e_2..e_n, by Gram-Schmidt against the coordinate basis.
pub(crate) fn lorentz_frame(g: &DMatrix<f64>, first: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    let n = g.nrows();
    let inner = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * g * b)[(0, 0)];
    let norm_t = inner(first, first);
    if norm_t >= 0.0 {
        return Err(Error::IllConditioned(
            "frame seed is not timelike for this metric".into(),
        ));
    }
    let mut frame = vec![first / (-norm_t).sqrt()];
    for k in 0..n {
        if frame.len() == n {
            break;
        }
        let mut candidate = DVector::zeros(n);
        candidate[k] = 1.0;
        // project out e_1 (timelike, sign -1) and the spacelike ones
        let mut w = candidate.clone();
        let e1 = &frame[0];
        w += e1 * inner(&candidate, e1);
        for e in frame.iter().skip(1) {
            w -= e * inner(&candidate, e);
        }
        let norm = inner(&w, &w);
        if norm > 1e-12 {
            frame.push(w / norm.sqrt());
        }
    }
    if frame.len() != n {
        return Err(Error::IllConditioned(
            "could not complete an orthonormal frame".into(),
        ));
    }
    Ok(frame)
}

/// Helper shared by builders of vector fields: component expressions of a
/// constant vector.
pub fn constant_field(components: &[f64]) -> Vec<ExprDag> {
    components
        .iter()
        .map(|&c| {
            let mut b = DagBuilder::new();
            let node = b.constant(c);
            b.finish(node)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Identity residuals (shared by the test suites and the CLI identity runner)
// ---------------------------------------------------------------------------

/// |g_v(v,v) - 2 L(v)| / (1 + |2L|), the Euler homogeneity identity.
pub fn gv_identity_residual(model: &Model, x: &[f64], v: &[f64]) -> Result<f64> {
    let (l, _, g) = model.metric_data(x, v)?;
    let vv = DVector::from_row_slice(v);
    let q = (vv.transpose() * &g * &vv)[(0, 0)];
    Ok((q - 2.0 * l).abs() / (1.0 + (2.0 * l).abs()))
}

/// max_ij |g_ij(c v) - g_ij(v)|: 0-homogeneity of the fundamental tensor.
pub fn metric_homogeneity_residual(model: &Model, x: &[f64], v: &[f64], c: f64) -> Result<f64> {
    let (_, _, g) = model.metric_data(x, v)?;
    let scaled: Vec<f64> = v.iter().map(|vi| vi * c).collect();
    let (_, _, gc) = model.metric_data(x, &scaled)?;
    Ok((&gc - &g).amax())
}

/// max_ij |sum_k dg_ij/dv^k v^k|: Euler identity for the 0-homogeneous g.
pub fn euler_primal_residual(model: &Model, x: &[f64], v: &[f64]) -> Result<f64> {
    let jets = model.point_jets(x, v)?;
    let n = model.n();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for (k, vk) in v.iter().enumerate() {
                acc += jets.dgdv[k][(i, j)] * vk;
            }
            worst = worst.max(acc.abs());
        }
    }
    Ok(worst)
}

/// Residual of the homogeneous-function identity
/// N^i_j = sum_k gamma^i_jk v^k - 1/2 sum_kl g^ik dg_kl/dv^j G^l.
pub fn nconn_identity_residual(model: &Model, x: &[f64], v: &[f64]) -> Result<f64> {
    let jets = model.point_jets(x, v)?;
    let n = model.n();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let mut rhs = 0.0;
            for (k, vk) in v.iter().enumerate() {
                rhs += jets.gamma[i][(j, k)] * vk;
            }
            for k in 0..n {
                for l in 0..n {
                    rhs -= 0.5 * jets.ginv[(i, k)] * jets.dgdv[j][(k, l)] * jets.spray[l];
                }
            }
            worst = worst.max((jets.nconn[(i, j)] - rhs).abs());
        }
    }
    Ok(worst)
}

/// |N^i_j - (1/2) dG^i/dv^j| with the derivative from a 5-point stencil on
/// the spray tape; definition-consistency check independent of the symbolic
/// derivative path.
pub fn nconn_spray_fd_residual(model: &Model, x: &[f64], v: &[f64]) -> Result<f64> {
    let n = model.n();
    let jets = model.point_jets(x, v)?;
    let vnorm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    let h = 1e-3 * (vnorm + 1.0);
    let mut buf = Vec::new();
    let mut worst = 0.0f64;
    let mut spray_at = |vv: &[f64]| -> Result<Vec<f64>> {
        let mut out = vec![0.0; n];
        model.spray_into(x, vv, &mut buf, &mut out)?;
        Ok(out)
    };
    for j in 0..n {
        let mut samples = Vec::new();
        for step in [-2.0, -1.0, 1.0, 2.0] {
            let mut vv = v.to_vec();
            vv[j] += step * h;
            samples.push(spray_at(&vv)?);
        }
        for i in 0..n {
            let d = (samples[0][i] - 8.0 * samples[1][i] + 8.0 * samples[2][i]
                - samples[3][i])
                / (12.0 * h);
            worst = worst.max((jets.nconn[(i, j)] - 0.5 * d).abs());
        }
    }
    Ok(worst)
}

/// max |Gamma^i_jk - gamma^i_jk|; vanishes for quadratic (Lorentzian) L.
pub fn chern_gamma_gap(model: &Model, x: &[f64], v: &[f64]) -> Result<f64> {
    let jets = model.point_jets(x, v)?;
    let n = model.n();
    let mut worst = 0.0f64;
    for i in 0..n {
        worst = worst.max((&jets.chern[i] - &jets.gamma[i]).amax());
    }
    Ok(worst)
}

/// max over all entries of gamma, G, N, Gamma, R; everything must vanish for
/// position-independent Lagrangians.
pub fn connection_magnitude(model: &Model, x: &[f64], v: &[f64]) -> Result<f64> {
    let jets = model.point_jets(x, v)?;
    let n = model.n();
    let mut worst = jets.spray.amax().max(jets.nconn.amax()).max(jets.curv.amax());
    for i in 0..n {
        worst = worst.max(jets.gamma[i].amax()).max(jets.chern[i].amax());
    }
    Ok(worst)
}

/// Relative 2-homogeneity residual of the Ricci scalar: Ric(cv) vs c^2 Ric(v).
pub fn ricci_homogeneity_residual(model: &Model, x: &[f64], v: &[f64], c: f64) -> Result<f64> {
    let base = curvature_and_ricci(model, x, v)?.ricci;
    let scaled: Vec<f64> = v.iter().map(|vi| vi * c).collect();
    let at_scaled = curvature_and_ricci(model, x, &scaled)?.ricci;
    Ok((at_scaled - c * c * base).abs() / (1.0 + (c * c * base).abs()))
}
