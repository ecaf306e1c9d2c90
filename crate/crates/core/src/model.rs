//! Model spacetimes: a Lagrangian L(x, v), a weight density, a domain
//! predicate and a time-orientation seed, compiled into evaluation tapes for
//! every geometric object the engine needs.
//!
//! All derived quantities (fundamental tensor, sprays, connections,
//! curvature, weight derivatives along the geodesic flow) are assembled
//! *symbolically* from the Lagrangian and compiled once per model, so every
//! downstream evaluation is exact to machine precision.

use crate::error::Error;
use crate::expr::{DagBuilder, ExprDag, NodeId, Tape, Var};
use crate::Result;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Deserialize;
use std::collections::HashMap;
use std::sync::Arc;

/// Strategy hint for the time separation on registered model families.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Family {
    /// Position-independent L: tau(x, y) = F(y - x) on the future cone.
    Flat,
    /// Product -dt^2 + h with a one-dimensional spatial factor.
    Product,
    /// No registered closed form; the shooting solver is used.
    Generic,
}

/// Raw model definition (expressions with parameters already substituted).
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub name: String,
    pub n: usize,
    pub lagrangian: ExprDag,
    /// Positive density sigma(x); the measure is sigma dx^1...dx^n.
    pub weight: ExprDag,
    /// Conjunction of predicates `expr > 0`; empty means all of TM minus 0.
    pub domain: Vec<ExprDag>,
    /// Time-orientation seed vector field X(x), one expression per component.
    pub orientation: Vec<ExprDag>,
    pub family: Family,
    pub berwald: bool,
}

/// A validated model with compiled jet tapes. Cheap to clone.
#[derive(Clone)]
pub struct Model {
    inner: Arc<ModelInner>,
}

struct ModelInner {
    spec: ModelSpec,
    jets: Jets,
}

/// Triangular index for symmetric storage, order-insensitive.
pub(crate) fn tri(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + j
}

pub(crate) fn tri_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Output layout of the full jet tape.
pub(crate) struct FullLayout {
    n: usize,
    pub l: usize,
    pub lv: usize,
    pub lx: usize,
    pub g: usize,
    pub det: usize,
    pub ginv: usize,
    pub gamma: usize,
    pub spray: usize,
    pub nconn: usize,
    pub chern: usize,
    pub curv: usize,
    pub ric: usize,
    pub lxx: usize,
    pub lvx: usize,
    pub lvxx: usize,
    pub dgdx: usize,
    pub dgdv: usize,
    pub psi: usize,
    pub dpsi_flow: usize,
    pub ddpsi_flow: usize,
    pub phi_x: usize,
    pub phi_xx: usize,
    pub sigma: usize,
    pub total: usize,
}

impl FullLayout {
    fn new(n: usize) -> Self {
        let nn2 = tri_len(n);
        let mut cursor = 0;
        let mut take = |count: usize| {
            let at = cursor;
            cursor += count;
            at
        };
        FullLayout {
            n,
            l: take(1),
            lv: take(n),
            lx: take(n),
            g: take(nn2),
            det: take(1),
            ginv: take(nn2),
            gamma: take(n * nn2),
            spray: take(n),
            nconn: take(n * n),
            chern: take(n * nn2),
            curv: take(n * n),
            ric: take(1),
            lxx: take(nn2),
            lvx: take(n * n),
            lvxx: take(n * nn2),
            dgdx: take(n * nn2),
            dgdv: take(n * nn2),
            psi: take(1),
            dpsi_flow: take(1),
            ddpsi_flow: take(1),
            phi_x: take(n),
            phi_xx: take(nn2),
            sigma: take(1),
            total: cursor,
        }
    }

    fn sym_matrix(&self, out: &[f64], base: usize) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |i, j| out[base + tri(n, i, j)])
    }

    fn full_matrix(&self, out: &[f64], base: usize) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |i, j| out[base + i * n + j])
    }
}

/// All jet values at a fixed (x, v), decoded from the full tape.
pub(crate) struct PointJets {
    pub l: f64,
    pub lv: DVector<f64>,
    pub lx: DVector<f64>,
    pub g: DMatrix<f64>,
    pub det_g: f64,
    pub ginv: DMatrix<f64>,
    /// gamma[i] is the symmetric matrix (j,k) -> gamma^i_jk.
    pub gamma: Vec<DMatrix<f64>>,
    pub spray: DVector<f64>,
    pub nconn: DMatrix<f64>,
    pub chern: Vec<DMatrix<f64>>,
    pub curv: DMatrix<f64>,
    pub ric: f64,
    pub lxx: DMatrix<f64>,
    /// lvx[(i, m)] = d^2 L / dv^i dx^m.
    pub lvx: DMatrix<f64>,
    /// lvxx[i] symmetric in (m, l): d^3 L / dv^i dx^m dx^l.
    pub lvxx: Vec<DMatrix<f64>>,
    /// dgdx[k] symmetric in (i, j): d g_ij / d x^k.
    pub dgdx: Vec<DMatrix<f64>>,
    /// dgdv[k] symmetric in (i, j): d g_ij / d v^k.
    pub dgdv: Vec<DMatrix<f64>>,
    pub psi: f64,
    pub dpsi_flow: f64,
    pub ddpsi_flow: f64,
    pub phi_x: DVector<f64>,
    pub phi_xx: DMatrix<f64>,
    pub sigma: f64,
}

/// Compiled tapes for one model.
pub(crate) struct Jets {
    pub layout: FullLayout,
    pub full: Tape,
    /// L, Lv, g (symmetric) — light tape for classification and inner products.
    pub metric: Tape,
    /// Spray G only — geodesic ODE right-hand side.
    pub spray: Tape,
    /// Chern symbols only (symmetric in jk).
    pub chern: Tape,
    /// Chern symbols + curvature R + Ric — Jacobi propagation.
    pub frame: Tape,
    /// sigma(x).
    pub sigma: Tape,
    /// psi, (psi o flow)', (psi o flow)'' at (x, v).
    pub psi: Tape,
    /// Domain predicates (may be empty).
    pub domain: Option<Tape>,
    /// Orientation seed X(x).
    pub seed: Tape,
}

impl Model {
    pub fn from_spec(spec: ModelSpec) -> Result<Model> {
        let n = spec.n;
        if n < 2 {
            return Err(Error::InvalidModel(format!("dimension {n} < 2")));
        }
        check_vars(&spec.lagrangian, n, true, "lagrangian")?;
        check_vars(&spec.weight, n, false, "weight")?;
        if spec.orientation.len() != n {
            return Err(Error::InvalidModel(format!(
                "orientation field has {} components, model dimension is {n}",
                spec.orientation.len()
            )));
        }
        for component in &spec.orientation {
            check_vars(component, n, false, "orientation")?;
        }
        for predicate in &spec.domain {
            check_vars(predicate, n, true, "domain")?;
        }
        let jets = build_jets(&spec);
        Ok(Model {
            inner: Arc::new(ModelInner { spec, jets }),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.inner.spec
    }

    pub fn n(&self) -> usize {
        self.inner.spec.n
    }

    pub fn name(&self) -> &str {
        &self.inner.spec.name
    }

    pub fn family(&self) -> Family {
        self.inner.spec.family
    }

    pub fn is_berwald(&self) -> bool {
        self.inner.spec.berwald
    }

    pub(crate) fn jets(&self) -> &Jets {
        &self.inner.jets
    }

    /// True when (x, v) satisfies every declared domain predicate and v != 0.
    pub fn in_domain(&self, x: &[f64], v: &[f64]) -> bool {
        let vnorm2: f64 = v.iter().map(|c| c * c).sum();
        if vnorm2 <= 1e-24 {
            return false;
        }
        match &self.inner.jets.domain {
            None => true,
            Some(tape) => {
                let mut buf = Vec::new();
                let mut out = vec![0.0; tape.num_outputs()];
                match tape.eval_xv(x, v, &mut buf, &mut out) {
                    Ok(()) => out.iter().all(|&p| p > 0.0),
                    Err(_) => false,
                }
            }
        }
    }

    pub(crate) fn require_domain(&self, x: &[f64], v: &[f64]) -> Result<()> {
        if self.in_domain(x, v) {
            Ok(())
        } else {
            Err(Error::OutsideDomain {
                x: x.to_vec(),
                v: v.to_vec(),
            })
        }
    }

    /// Orientation seed X(x).
    pub fn seed_vector(&self, x: &[f64]) -> Result<DVector<f64>> {
        let tape = &self.inner.jets.seed;
        let mut buf = Vec::new();
        let mut out = vec![0.0; tape.num_outputs()];
        tape.eval_xv(x, &[], &mut buf, &mut out)?;
        Ok(DVector::from_vec(out))
    }

    /// Weight density sigma(x).
    pub fn sigma(&self, x: &[f64]) -> Result<f64> {
        let tape = &self.inner.jets.sigma;
        let mut buf = Vec::new();
        let mut out = [0.0];
        tape.eval_xv(x, &[], &mut buf, &mut out)?;
        Ok(out[0])
    }

    /// L(x, v).
    pub fn lagrangian_value(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        let tape = &self.inner.jets.metric;
        let mut buf = Vec::new();
        let mut out = vec![0.0; tape.num_outputs()];
        tape.eval_xv(x, v, &mut buf, &mut out)?;
        Ok(out[0])
    }

    /// F(v) = sqrt(-2 L(v)) for causal v; error outside the causal cone.
    pub fn finsler_norm(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        let l = self.lagrangian_value(x, v)?;
        if l > 0.0 {
            return Err(Error::InvalidModel(format!(
                "F undefined: L = {l} > 0 at spacelike vector"
            )));
        }
        Ok((-2.0 * l).sqrt())
    }

    /// (L, dL/dv, g) at (x, v); g is mirrored to exact symmetry.
    pub(crate) fn metric_data(
        &self,
        x: &[f64],
        v: &[f64],
    ) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let n = self.n();
        let tape = &self.inner.jets.metric;
        let mut buf = Vec::new();
        let mut out = vec![0.0; tape.num_outputs()];
        tape.eval_xv(x, v, &mut buf, &mut out)?;
        let l = out[0];
        let lv = DVector::from_fn(n, |i, _| out[1 + i]);
        let g = DMatrix::from_fn(n, n, |i, j| out[1 + n + tri(n, i, j)]);
        Ok((l, lv, g))
    }

    /// Decodes the entire jet bundle at (x, v). Checks the domain.
    pub(crate) fn point_jets(&self, x: &[f64], v: &[f64]) -> Result<PointJets> {
        self.require_domain(x, v)?;
        self.point_jets_unchecked(x, v)
    }

    pub(crate) fn point_jets_unchecked(&self, x: &[f64], v: &[f64]) -> Result<PointJets> {
        let jets = &self.inner.jets;
        let layout = &jets.layout;
        let n = layout.n;
        let nn2 = tri_len(n);
        let mut buf = Vec::new();
        let mut out = vec![0.0; layout.total];
        jets.full.eval_xv(x, v, &mut buf, &mut out)?;

        let sym_list = |base: usize| -> Vec<DMatrix<f64>> {
            (0..n)
                .map(|k| layout.sym_matrix(&out, base + k * nn2))
                .collect()
        };

        Ok(PointJets {
            l: out[layout.l],
            lv: DVector::from_fn(n, |i, _| out[layout.lv + i]),
            lx: DVector::from_fn(n, |i, _| out[layout.lx + i]),
            g: layout.sym_matrix(&out, layout.g),
            det_g: out[layout.det],
            ginv: layout.sym_matrix(&out, layout.ginv),
            gamma: sym_list(layout.gamma),
            spray: DVector::from_fn(n, |i, _| out[layout.spray + i]),
            nconn: layout.full_matrix(&out, layout.nconn),
            chern: sym_list(layout.chern),
            curv: layout.full_matrix(&out, layout.curv),
            ric: out[layout.ric],
            lxx: layout.sym_matrix(&out, layout.lxx),
            lvx: layout.full_matrix(&out, layout.lvx),
            lvxx: sym_list(layout.lvxx),
            dgdx: sym_list(layout.dgdx),
            dgdv: sym_list(layout.dgdv),
            psi: out[layout.psi],
            dpsi_flow: out[layout.dpsi_flow],
            ddpsi_flow: out[layout.ddpsi_flow],
            phi_x: DVector::from_fn(n, |i, _| out[layout.phi_x + i]),
            phi_xx: layout.sym_matrix(&out, layout.phi_xx),
            sigma: out[layout.sigma],
        })
    }

    /// (psi, (psi o flow)', (psi o flow)'') at (x, v).
    pub fn psi_data(&self, x: &[f64], v: &[f64]) -> Result<(f64, f64, f64)> {
        let tape = &self.inner.jets.psi;
        let mut buf = Vec::new();
        let mut out = [0.0; 3];
        tape.eval_xv(x, v, &mut buf, &mut out)?;
        Ok((out[0], out[1], out[2]))
    }

    /// Spray G^i(x, v) written into `out`; hot path for the geodesic ODE.
    pub(crate) fn spray_into(
        &self,
        x: &[f64],
        v: &[f64],
        buf: &mut Vec<f64>,
        out: &mut [f64],
    ) -> Result<()> {
        self.inner.jets.spray.eval_xv(x, v, buf, out)
    }

    /// Chern symbols at (x, v) as n symmetric matrices.
    pub(crate) fn chern_at(&self, x: &[f64], v: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let n = self.n();
        let nn2 = tri_len(n);
        let tape = &self.inner.jets.chern;
        let mut buf = Vec::new();
        let mut out = vec![0.0; tape.num_outputs()];
        tape.eval_xv(x, v, &mut buf, &mut out)?;
        Ok((0..n)
            .map(|i| DMatrix::from_fn(n, n, |j, k| out[i * nn2 + tri(n, j, k)]))
            .collect())
    }

    /// Chern symbols, curvature endomorphism and Ricci scalar at (x, v).
    pub(crate) fn frame_at(
        &self,
        x: &[f64],
        v: &[f64],
    ) -> Result<(Vec<DMatrix<f64>>, DMatrix<f64>, f64)> {
        let n = self.n();
        let nn2 = tri_len(n);
        let tape = &self.inner.jets.frame;
        let mut buf = Vec::new();
        let mut out = vec![0.0; tape.num_outputs()];
        tape.eval_xv(x, v, &mut buf, &mut out)?;
        let chern: Vec<_> = (0..n)
            .map(|i| DMatrix::from_fn(n, n, |j, k| out[i * nn2 + tri(n, j, k)]))
            .collect();
        let base = n * nn2;
        let r = DMatrix::from_fn(n, n, |i, j| out[base + i * n + j]);
        let ric = out[base + n * n];
        Ok((chern, r, ric))
    }

    /// Reversed structure: L(v) -> L(-v), seed -X, same measure.
    pub fn reverse(&self) -> Result<Model> {
        let spec = self.spec();
        let n = spec.n;
        let flip = |dag: &ExprDag| -> ExprDag {
            let mut builder = DagBuilder::new();
            let mut map = Vec::new();
            let root = builder.import(dag, &mut map);
            let mut subst = HashMap::new();
            for i in 0..n {
                let var = builder.var(Var::V(i));
                let negated = builder.neg(var);
                subst.insert(Var::V(i), negated);
            }
            let new_root = builder.substitute(root, &subst);
            builder.finish(new_root)
        };
        let negate = |dag: &ExprDag| -> ExprDag {
            let mut builder = DagBuilder::new();
            let mut map = Vec::new();
            let root = builder.import(dag, &mut map);
            let negated = builder.neg(root);
            builder.finish(negated)
        };
        Model::from_spec(ModelSpec {
            name: format!("{}-reverse", spec.name),
            n,
            lagrangian: flip(&spec.lagrangian),
            weight: spec.weight.clone(),
            domain: spec.domain.iter().map(flip).collect(),
            orientation: spec.orientation.iter().map(negate).collect(),
            family: spec.family,
            berwald: spec.berwald,
        })
    }

    /// Draws an in-domain (x, v) sample; `None` if rejection sampling fails.
    pub fn sample_point(&self, rng: &mut impl Rng) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.n();
        for _ in 0..200 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let Ok(seed) = self.seed_vector(&x) else {
                continue;
            };
            let scale = rng.random_range(0.4..1.6);
            let mut v: Vec<f64> = (0..n)
                .map(|i| seed[i] * scale + rng.random_range(-0.4..0.4) * scale)
                .collect();
            // For unrestricted models also exercise arbitrary directions.
            if self.inner.jets.domain.is_none() && rng.random_bool(0.5) {
                v = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
            }
            if self.in_domain(&x, &v) {
                return Some((x, v));
            }
        }
        None
    }

    /// Draws a future timelike in-domain velocity at fixed x.
    pub fn sample_velocity_at(&self, x: &[f64], rng: &mut impl Rng) -> Option<Vec<f64>> {
        let n = self.n();
        let seed = self.seed_vector(x).ok()?;
        for _ in 0..200 {
            let scale = rng.random_range(0.4..1.6);
            let v: Vec<f64> = (0..n)
                .map(|i| seed[i] * scale + rng.random_range(-0.35..0.35) * scale)
                .collect();
            if self.in_domain(x, &v) {
                if let Ok(l) = self.lagrangian_value(x, &v) {
                    if l < 0.0 {
                        return Some(v);
                    }
                }
            }
        }
        None
    }
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Model({}, n={})", self.name(), self.n())
    }
}

fn check_vars(dag: &ExprDag, n: usize, allow_v: bool, what: &str) -> Result<()> {
    for var in dag.free_vars() {
        match var {
            Var::X(i) if *i < n => {}
            Var::V(i) if allow_v && *i < n => {}
            Var::Param(name) => {
                return Err(Error::InvalidModel(format!(
                    "{what} still contains unresolved parameter `{name}`"
                )))
            }
            other => {
                return Err(Error::InvalidModel(format!(
                    "{what} uses `{other}`, which is out of range for dimension {n}"
                )))
            }
        }
    }
    Ok(())
}

/// Determinant of a NodeId matrix by Laplace expansion along the first row.
fn det_nodes(
    builder: &mut DagBuilder,
    get: &dyn Fn(usize, usize) -> NodeId,
    rows: &[usize],
    cols: &[usize],
) -> NodeId {
    if rows.len() == 1 {
        return get(rows[0], cols[0]);
    }
    let row = rows[0];
    let rest: Vec<usize> = rows[1..].to_vec();
    let mut acc: Option<NodeId> = None;
    for (pos, &col) in cols.iter().enumerate() {
        let sub_cols: Vec<usize> = cols.iter().copied().filter(|&c| c != col).collect();
        let minor = det_nodes(builder, get, &rest, &sub_cols);
        let entry = get(row, col);
        let term = builder.mul(entry, minor);
        acc = Some(match acc {
            None => term,
            Some(prev) => {
                if pos % 2 == 1 {
                    builder.sub(prev, term)
                } else {
                    builder.add(prev, term)
                }
            }
        });
    }
    acc.expect("nonempty matrix")
}

fn build_jets(spec: &ModelSpec) -> Jets {
    let n = spec.n;
    let nn2 = tri_len(n);
    let mut b = DagBuilder::new();

    let mut map = Vec::new();
    let imported = b.import(&spec.lagrangian, &mut map);
    let l = b.resimplify(imported);

    let vvar: Vec<NodeId> = (0..n).map(|i| b.var(Var::V(i))).collect();

    // First and second jets of L.
    let lv: Vec<NodeId> = (0..n).map(|i| b.diff(l, &Var::V(i))).collect();
    let lx: Vec<NodeId> = (0..n).map(|i| b.diff(l, &Var::X(i))).collect();
    let mut g = vec![0 as NodeId; nn2];
    for i in 0..n {
        for j in i..n {
            g[tri(n, i, j)] = b.diff(lv[i], &Var::V(j));
        }
    }

    let mut lxx = vec![0 as NodeId; nn2];
    for i in 0..n {
        for j in i..n {
            lxx[tri(n, i, j)] = b.diff(lx[i], &Var::X(j));
        }
    }
    let mut lvx = vec![0 as NodeId; n * n];
    for i in 0..n {
        for m in 0..n {
            lvx[i * n + m] = b.diff(lv[i], &Var::X(m));
        }
    }
    let mut lvxx = vec![0 as NodeId; n * nn2];
    for i in 0..n {
        for m in 0..n {
            for q in m..n {
                lvxx[i * nn2 + tri(n, m, q)] = b.diff(lvx[i * n + m], &Var::X(q));
            }
        }
    }
    let mut dgdx = vec![0 as NodeId; n * nn2];
    let mut dgdv = vec![0 as NodeId; n * nn2];
    for k in 0..n {
        for i in 0..n {
            for j in i..n {
                dgdx[k * nn2 + tri(n, i, j)] = b.diff(g[tri(n, i, j)], &Var::X(k));
                dgdv[k * nn2 + tri(n, i, j)] = b.diff(g[tri(n, i, j)], &Var::V(k));
            }
        }
    }

    // Determinant and inverse via the adjugate (g is symmetric).
    let all: Vec<usize> = (0..n).collect();
    let g_nodes = g.clone();
    let det = det_nodes(&mut b, &|i, j| g_nodes[tri(n, i, j)], &all, &all);
    let mut ginv = vec![0 as NodeId; nn2];
    for i in 0..n {
        for j in i..n {
            // adj_ij = (-1)^{i+j} det(g with row j and column i removed)
            let rows: Vec<usize> = (0..n).filter(|&r| r != j).collect();
            let cols: Vec<usize> = (0..n).filter(|&c| c != i).collect();
            let minor = det_nodes(&mut b, &|r, c| g_nodes[tri(n, r, c)], &rows, &cols);
            let signed = if (i + j) % 2 == 0 {
                minor
            } else {
                b.neg(minor)
            };
            ginv[tri(n, i, j)] = b.div(signed, det);
        }
    }

    // gamma^i_jk = 1/2 sum_l g^il (d_xj g_lk + d_xk g_jl - d_xl g_jk)
    let half = b.constant(0.5);
    let mut gamma = vec![0 as NodeId; n * nn2];
    for i in 0..n {
        for j in 0..n {
            for k in j..n {
                let mut acc: Option<NodeId> = None;
                for l in 0..n {
                    let t1 = dgdx[j * nn2 + tri(n, l, k)];
                    let t2 = dgdx[k * nn2 + tri(n, j, l)];
                    let t3 = dgdx[l * nn2 + tri(n, j, k)];
                    let s = b.add(t1, t2);
                    let s = b.sub(s, t3);
                    let term = b.mul(ginv[tri(n, i, l)], s);
                    acc = Some(match acc {
                        None => term,
                        Some(prev) => b.add(prev, term),
                    });
                }
                let sum = acc.unwrap();
                gamma[i * nn2 + tri(n, j, k)] = b.mul(half, sum);
            }
        }
    }

    // G^i = sum_{j,k} gamma^i_jk v^j v^k
    let mut spray = vec![0 as NodeId; n];
    for i in 0..n {
        let mut acc: Option<NodeId> = None;
        for j in 0..n {
            for k in 0..n {
                let vj_vk = b.mul(vvar[j], vvar[k]);
                let term = b.mul(gamma[i * nn2 + tri(n, j, k)], vj_vk);
                acc = Some(match acc {
                    None => term,
                    Some(prev) => b.add(prev, term),
                });
            }
        }
        spray[i] = acc.unwrap();
    }

    // N^i_j = 1/2 dG^i/dv^j
    let mut nconn = vec![0 as NodeId; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = b.diff(spray[i], &Var::V(j));
            nconn[i * n + j] = b.mul(half, d);
        }
    }

    // Chern symbols.
    let mut chern = vec![0 as NodeId; n * nn2];
    for i in 0..n {
        for j in 0..n {
            for k in j..n {
                let mut acc: Option<NodeId> = None;
                for l in 0..n {
                    let mut inner_acc: Option<NodeId> = None;
                    for m in 0..n {
                        let t1 = b.mul(dgdv[m * nn2 + tri(n, l, k)], nconn[m * n + j]);
                        let t2 = b.mul(dgdv[m * nn2 + tri(n, j, l)], nconn[m * n + k]);
                        let t3 = b.mul(dgdv[m * nn2 + tri(n, j, k)], nconn[m * n + l]);
                        let s = b.add(t1, t2);
                        let s = b.sub(s, t3);
                        inner_acc = Some(match inner_acc {
                            None => s,
                            Some(prev) => b.add(prev, s),
                        });
                    }
                    let inner = inner_acc.unwrap();
                    let term = b.mul(ginv[tri(n, i, l)], inner);
                    acc = Some(match acc {
                        None => term,
                        Some(prev) => b.add(prev, term),
                    });
                }
                let sum = acc.unwrap();
                let corr = b.mul(half, sum);
                chern[i * nn2 + tri(n, j, k)] = b.sub(gamma[i * nn2 + tri(n, j, k)], corr);
            }
        }
    }

    // Curvature R^i_j = dG^i/dx^j - sum_k { dN^i_j/dx^k v^k - dN^i_j/dv^k G^k + N^i_k N^k_j }.
    let mut curv = vec![0 as NodeId; n * n];
    for i in 0..n {
        for j in 0..n {
            let dg_dx = b.diff(spray[i], &Var::X(j));
            let mut acc = dg_dx;
            for k in 0..n {
                let dn_dx = b.diff(nconn[i * n + j], &Var::X(k));
                let t1 = b.mul(dn_dx, vvar[k]);
                let dn_dv = b.diff(nconn[i * n + j], &Var::V(k));
                let t2 = b.mul(dn_dv, spray[k]);
                let t3 = b.mul(nconn[i * n + k], nconn[k * n + j]);
                acc = b.sub(acc, t1);
                acc = b.add(acc, t2);
                acc = b.sub(acc, t3);
            }
            curv[i * n + j] = acc;
        }
    }
    let mut ric = curv[0];
    for i in 1..n {
        ric = b.add(ric, curv[i * n + i]);
    }

    // Weight psi = 1/2 log(-det g) - log sigma and its flow derivatives.
    let mut sigma_map = Vec::new();
    let sigma_imported = b.import(&spec.weight, &mut sigma_map);
    let sigma = b.resimplify(sigma_imported);
    let log_sigma = b.log(sigma);
    let neg_det = b.neg(det);
    let log_neg_det = b.log(neg_det);
    let half_log = b.mul(half, log_neg_det);
    let psi = b.sub(half_log, log_sigma);

    // d/dt of a 0-homogeneous observable along the geodesic flow:
    // w_x . v - w_v . G  (using etadotdot = -G).
    let flow_derivative = |b: &mut DagBuilder, w: NodeId, spray: &[NodeId]| -> NodeId {
        let mut acc: Option<NodeId> = None;
        for i in 0..n {
            let wx = b.diff(w, &Var::X(i));
            let vv = b.var(Var::V(i));
            let t1 = b.mul(wx, vv);
            let wv = b.diff(w, &Var::V(i));
            let t2 = b.mul(wv, spray[i]);
            let term = b.sub(t1, t2);
            acc = Some(match acc {
                None => term,
                Some(prev) => b.add(prev, term),
            });
        }
        acc.unwrap()
    };
    let dpsi_flow = flow_derivative(&mut b, psi, &spray);
    let ddpsi_flow = flow_derivative(&mut b, dpsi_flow, &spray);

    let phi_x: Vec<NodeId> = (0..n).map(|i| b.diff(log_sigma, &Var::X(i))).collect();
    let mut phi_xx = vec![0 as NodeId; nn2];
    for i in 0..n {
        for j in i..n {
            phi_xx[tri(n, i, j)] = b.diff(phi_x[i], &Var::X(j));
        }
    }

    // Assemble output lists in the layout order.
    let layout = FullLayout::new(n);
    let mut outputs = Vec::with_capacity(layout.total);
    outputs.push(l);
    outputs.extend_from_slice(&lv);
    outputs.extend_from_slice(&lx);
    outputs.extend_from_slice(&g);
    outputs.push(det);
    outputs.extend_from_slice(&ginv);
    outputs.extend_from_slice(&gamma);
    outputs.extend_from_slice(&spray);
    outputs.extend_from_slice(&nconn);
    outputs.extend_from_slice(&chern);
    outputs.extend_from_slice(&curv);
    outputs.push(ric);
    outputs.extend_from_slice(&lxx);
    outputs.extend_from_slice(&lvx);
    outputs.extend_from_slice(&lvxx);
    outputs.extend_from_slice(&dgdx);
    outputs.extend_from_slice(&dgdv);
    outputs.push(psi);
    outputs.push(dpsi_flow);
    outputs.push(ddpsi_flow);
    outputs.extend_from_slice(&phi_x);
    outputs.extend_from_slice(&phi_xx);
    outputs.push(sigma);
    assert_eq!(outputs.len(), layout.total);

    let extract_tape = |b: &DagBuilder, roots: &[NodeId]| {
        let (nodes, mapped) = b.extract(roots);
        Tape::from_nodes(nodes, mapped)
    };

    let full = extract_tape(&b, &outputs);

    let mut metric_roots = vec![l];
    metric_roots.extend_from_slice(&lv);
    metric_roots.extend_from_slice(&g);
    let metric = extract_tape(&b, &metric_roots);

    let spray_tape = extract_tape(&b, &spray);
    let chern_tape = extract_tape(&b, &chern);

    let mut frame_roots = chern.clone();
    frame_roots.extend_from_slice(&curv);
    frame_roots.push(ric);
    let frame = extract_tape(&b, &frame_roots);

    let sigma_tape = extract_tape(&b, &[sigma]);
    let psi_tape = extract_tape(&b, &[psi, dpsi_flow, ddpsi_flow]);

    let domain = if spec.domain.is_empty() {
        None
    } else {
        let mut builder = DagBuilder::new();
        let roots: Vec<NodeId> = spec
            .domain
            .iter()
            .map(|dag| {
                let mut map = Vec::new();
                let root = builder.import(dag, &mut map);
                builder.resimplify(root)
            })
            .collect();
        let (nodes, mapped) = builder.extract(&roots);
        Some(Tape::from_nodes(nodes, mapped))
    };

    let seed = {
        let mut builder = DagBuilder::new();
        let roots: Vec<NodeId> = spec
            .orientation
            .iter()
            .map(|dag| {
                let mut map = Vec::new();
                let root = builder.import(dag, &mut map);
                builder.resimplify(root)
            })
            .collect();
        let (nodes, mapped) = builder.extract(&roots);
        Tape::from_nodes(nodes, mapped)
    };

    Jets {
        layout,
        full,
        metric,
        spray: spray_tape,
        chern: chern_tape,
        frame,
        sigma: sigma_tape,
        psi: psi_tape,
        domain,
        seed,
    }
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

/// On-disk model description: TOML with sections `[model]`, optional
/// `[params]`, `[line]` and `[run]`.
#[derive(Clone, Debug, Deserialize)]
pub struct ModelFile {
    pub model: ModelSection,
    #[serde(default)]
    pub params: std::collections::BTreeMap<String, f64>,
    pub line: Option<LineSection>,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Clone, Debug, Deserialize)]
pub struct ModelSection {
    pub name: String,
    pub n: usize,
    pub lagrangian: String,
    #[serde(default = "default_weight")]
    pub weight: String,
    #[serde(default)]
    pub domain: Vec<String>,
    pub orientation: Vec<String>,
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default)]
    pub berwald: bool,
}

fn default_weight() -> String {
    "1".to_string()
}

fn default_family() -> String {
    "generic".to_string()
}

/// Straight-line candidate attached to a model file.
#[derive(Clone, Debug, Deserialize)]
pub struct LineSection {
    pub base: Vec<f64>,
    pub velocity: Vec<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

fn default_horizon() -> f64 {
    100.0
}

/// Run parameters; commands read what they need, CLI flags take precedence.
#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub seed: u64,
    pub p: f64,
    #[serde(rename = "N")]
    pub big_n: BigN,
    pub epsilon: f64,
    pub grid: usize,
    pub tmax: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 42,
            p: -2.0,
            big_n: BigN::Infinite,
            epsilon: 0.0,
            grid: 41,
            tmax: 5.0,
        }
    }
}

/// N from a file: a number or the string "inf".
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BigN {
    Number(f64),
    Infinite,
}

impl<'de> Deserialize<'de> for BigN {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Number(x) => Ok(BigN::Number(x)),
            Raw::Text(s) if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") => {
                Ok(BigN::Infinite)
            }
            Raw::Text(other) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", found `{other}`"
            ))),
        }
    }
}

impl ModelFile {
    /// Parses TOML text; syntax errors carry a byte offset.
    pub fn parse(text: &str) -> Result<ModelFile> {
        toml::from_str(text).map_err(|e| Error::ModelFile {
            offset: e.span().map(|s| s.start).unwrap_or(0),
            message: e.message().to_string(),
        })
    }

    /// Builds the compiled model, substituting `[params]` into expressions.
    pub fn build(&self) -> Result<Model> {
        let param_names: Vec<&str> = self.params.keys().map(|s| s.as_str()).collect();
        let params: Vec<(Arc<str>, f64)> = self
            .params
            .iter()
            .map(|(name, value)| (Arc::from(name.as_str()), *value))
            .collect();
        let build_expr = |src: &str| -> Result<ExprDag> {
            let dag = crate::expr::parse(src, &param_names)?;
            Ok(substitute_params(&dag, &params))
        };
        let family = match self.model.family.as_str() {
            "flat" => Family::Flat,
            "product" => Family::Product,
            "generic" => Family::Generic,
            other => {
                return Err(Error::InvalidModel(format!(
                    "unknown family `{other}` (expected flat | product | generic)"
                )))
            }
        };
        let spec = ModelSpec {
            name: self.model.name.clone(),
            n: self.model.n,
            lagrangian: build_expr(&self.model.lagrangian)?,
            weight: build_expr(&self.model.weight)?,
            domain: self
                .model
                .domain
                .iter()
                .map(|s| build_expr(s))
                .collect::<Result<_>>()?,
            orientation: self
                .model
                .orientation
                .iter()
                .map(|s| build_expr(s))
                .collect::<Result<_>>()?,
            family,
            berwald: self.model.berwald,
        };
        Model::from_spec(spec)
    }
}

fn substitute_params(dag: &ExprDag, params: &[(Arc<str>, f64)]) -> ExprDag {
    if params.is_empty() {
        return dag.clone();
    }
    let mut builder = DagBuilder::new();
    let mut map = Vec::new();
    let root = builder.import(dag, &mut map);
    let mut subst = HashMap::new();
    for (name, value) in params {
        let constant = builder.constant(*value);
        subst.insert(Var::Param(name.clone()), constant);
    }
    let new_root = builder.substitute(root, &subst);
    builder.finish(new_root)
}

// ---------------------------------------------------------------------------
// Sampled validation of the Lorentz-Finsler axioms
// ---------------------------------------------------------------------------

/// Result of sampling the defining invariants of a model.
#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub samples: usize,
    /// max |L(cv) - c^2 L(v)| / (1 + |L(v)|) over samples and c in {0.5, 2, 3}.
    pub homogeneity: f64,
    /// Worst-case signature margin: min over samples of min |eigenvalue| of g,
    /// negated when the signature is not (-,+,...,+) at some sample.
    pub signature_margin: f64,
    /// min sigma(x) over samples.
    pub sigma_min: f64,
    /// max L(X(x)) over samples; must be negative (seed timelike).
    pub seed_max_l: f64,
    pub failure: Option<String>,
}

impl ValidationReport {
    pub fn ok(&self, tol: f64) -> bool {
        self.failure.is_none()
            && self.homogeneity <= tol
            && self.signature_margin > 0.0
            && self.sigma_min > 0.0
            && self.seed_max_l < 0.0
    }
}

/// Samples the defining conditions of a Lorentz-Finsler structure: positive
/// 2-homogeneity, signature (-,+,...,+) of the velocity Hessian, positive
/// density, and a timelike orientation seed.
pub fn validate_model(model: &Model, samples: usize, rng: &mut impl Rng) -> ValidationReport {
    let mut report = ValidationReport {
        samples: 0,
        homogeneity: 0.0,
        signature_margin: f64::INFINITY,
        sigma_min: f64::INFINITY,
        seed_max_l: f64::NEG_INFINITY,
        failure: None,
    };
    for _ in 0..samples {
        let Some((x, v)) = model.sample_point(rng) else {
            report.failure = Some("rejection sampling found no in-domain points".into());
            return report;
        };
        let check = (|| -> Result<()> {
            let (l, _, g) = model.metric_data(&x, &v)?;
            for c in [0.5, 2.0, 3.0] {
                let scaled: Vec<f64> = v.iter().map(|vi| vi * c).collect();
                if model.in_domain(&x, &scaled) {
                    let lc = model.lagrangian_value(&x, &scaled)?;
                    let defect = (lc - c * c * l).abs() / (1.0 + l.abs());
                    report.homogeneity = report.homogeneity.max(defect);
                }
            }
            let eigen = g.symmetric_eigen().eigenvalues;
            let negatives = eigen.iter().filter(|&&e| e < 0.0).count();
            let margin = eigen.iter().fold(f64::INFINITY, |m, &e| m.min(e.abs()));
            report.signature_margin = report.signature_margin.min(if negatives == 1 {
                margin
            } else {
                -margin
            });
            let sigma = model.sigma(&x)?;
            report.sigma_min = report.sigma_min.min(sigma);
            let seed = model.seed_vector(&x)?;
            let seed_l = model.lagrangian_value(&x, seed.as_slice())?;
            report.seed_max_l = report.seed_max_l.max(seed_l);
            Ok(())
        })();
        if let Err(e) = check {
            report.failure = Some(e.to_string());
            return report;
        }
        report.samples += 1;
    }
    report
}

impl Model {
    /// Instruction counts of the compiled tapes (full, spray, frame).
    pub fn tape_sizes(&self) -> (usize, usize, usize) {
        let jets = &self.inner.jets;
        (jets.full.len(), jets.spray.len(), jets.frame.len())
    }
}
