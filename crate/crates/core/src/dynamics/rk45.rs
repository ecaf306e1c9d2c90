//! Embedded Dormand-Prince 5(4) integrator with dense cubic-Hermite output.

use crate::error::Error;
use crate::Result;
use nalgebra::DVector;

/// Integrator options; tolerances apply per component.
#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Cap on |h|. Dense output is cubic Hermite (O(h^4) between nodes), so
    /// callers that sample between nodes tighten this.
    pub max_step: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-12,
            atol: 1e-12,
            max_steps: 2_000_000,
            max_step: f64::INFINITY,
        }
    }
}

/// Accepted integration steps plus the right-hand side at each node; values
/// in between come from cubic Hermite interpolation.
#[derive(Clone, Debug)]
pub struct DensePath {
    /// (t, y, f(t, y)) with t strictly increasing.
    steps: Vec<(f64, DVector<f64>, DVector<f64>)>,
}

impl DensePath {
    pub fn t_start(&self) -> f64 {
        self.steps.first().unwrap().0
    }

    pub fn t_end(&self) -> f64 {
        self.steps.last().unwrap().0
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, &DVector<f64>, &DVector<f64>)> {
        self.steps.iter().map(|(t, y, dy)| (*t, y, dy))
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    fn segment(&self, t: f64) -> usize {
        match self
            .steps
            .binary_search_by(|(s, _, _)| s.partial_cmp(&t).unwrap())
        {
            Ok(i) => i.min(self.steps.len() - 2),
            Err(0) => 0,
            Err(i) if i >= self.steps.len() => self.steps.len() - 2,
            Err(i) => i - 1,
        }
    }

    /// Interpolated state at t (cubic Hermite on the covering segment).
    pub fn value(&self, t: f64) -> DVector<f64> {
        if self.steps.len() == 1 {
            return self.steps[0].1.clone();
        }
        let i = self.segment(t);
        let (ta, ya, fa) = &self.steps[i];
        let (tb, yb, fb) = &self.steps[i + 1];
        let h = tb - ta;
        let theta = (t - ta) / h;
        let t2 = theta * theta;
        let t3 = t2 * theta;
        ya * (1.0 - 3.0 * t2 + 2.0 * t3)
            + yb * (3.0 * t2 - 2.0 * t3)
            + fa * (h * (theta - 2.0 * t2 + t3))
            + fb * (h * (t3 - t2))
    }

    /// Derivative of the interpolant at t.
    pub fn derivative(&self, t: f64) -> DVector<f64> {
        if self.steps.len() == 1 {
            return self.steps[0].2.clone();
        }
        let i = self.segment(t);
        let (ta, ya, fa) = &self.steps[i];
        let (tb, yb, fb) = &self.steps[i + 1];
        let h = tb - ta;
        let theta = (t - ta) / h;
        let t2 = theta * theta;
        (ya * ((-6.0 * theta + 6.0 * t2) / h))
            + (yb * ((6.0 * theta - 6.0 * t2) / h))
            + fa * (1.0 - 4.0 * theta + 3.0 * t2)
            + fb * (3.0 * t2 - 2.0 * theta)
    }

    /// New path from a component range of each node state (the Hermite
    /// interpolant of a slice equals the slice of the interpolant).
    pub fn slice(&self, offset: usize, len: usize) -> DensePath {
        DensePath {
            steps: self
                .steps
                .iter()
                .map(|(t, y, dy)| {
                    (
                        *t,
                        DVector::from_fn(len, |i, _| y[offset + i]),
                        DVector::from_fn(len, |i, _| dy[offset + i]),
                    )
                })
                .collect(),
        }
    }

    /// Concatenates a backward and a forward run sharing the t=0 node.
    pub fn join(backward: DensePath, forward: DensePath) -> DensePath {
        let mut steps = backward.steps;
        steps.reverse();
        steps.pop(); // drop duplicated t = 0 node
        steps.extend(forward.steps);
        DensePath { steps }
    }
}

const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [&[f64]; 6] = [
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
    ],
    &[
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ],
    &[
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates dy/dt = f(t, y) from t0 to t1 (either direction). The
/// right-hand side may fail (domain exits); failed stage evaluations shrink
/// the step until the minimum step signals a hard stop.
pub fn integrate<F>(
    mut f: F,
    t0: f64,
    y0: DVector<f64>,
    t1: f64,
    opts: OdeOptions,
) -> Result<DensePath>
where
    F: FnMut(f64, &DVector<f64>, &mut DVector<f64>) -> Result<()>,
{
    let dim = y0.len();
    let direction = if t1 >= t0 { 1.0 } else { -1.0 };
    let total = (t1 - t0).abs();
    if total == 0.0 {
        let mut dy = DVector::zeros(dim);
        f(t0, &y0, &mut dy)?;
        return Ok(DensePath {
            steps: vec![(t0, y0, dy)],
        });
    }
    let min_step = total * 1e-14 + 1e-300;

    let mut t = t0;
    let mut y = y0;
    let mut k0 = DVector::zeros(dim);
    f(t, &y, &mut k0)?;
    let mut h = (total / 100.0).min(0.1).min(opts.max_step).max(min_step) * direction;

    let mut steps = vec![(t, y.clone(), k0.clone())];
    let mut stages: Vec<DVector<f64>> = (0..7).map(|_| DVector::zeros(dim)).collect();

    for _ in 0..opts.max_steps {
        if (t - t1).abs() <= 1e-14 * total.max(1.0) {
            if direction > 0.0 {
                return Ok(DensePath { steps });
            }
            steps.reverse();
            return Ok(DensePath { steps });
        }
        if (t1 - t) * direction < h.abs() {
            h = t1 - t;
        }

        stages[0].copy_from(&k0);
        let mut stage_failed = false;
        for s in 0..6 {
            let mut ys = y.clone();
            for (j, &coeff) in A[s].iter().enumerate() {
                if coeff != 0.0 {
                    ys.axpy(h * coeff, &stages[j], 1.0);
                }
            }
            let ts = t + C[s] * h;
            let (head, tail) = stages.split_at_mut(s + 1);
            let _ = head;
            if f(ts, &ys, &mut tail[0]).is_err() {
                stage_failed = true;
                break;
            }
        }

        if stage_failed {
            h *= 0.5;
            if h.abs() < min_step {
                return Err(Error::StepFailure {
                    t,
                    step: h.abs(),
                });
            }
            continue;
        }

        let mut y5 = y.clone();
        let mut err_vec = DVector::zeros(dim);
        for s in 0..7 {
            if B5[s] != 0.0 {
                y5.axpy(h * B5[s], &stages[s], 1.0);
            }
            let diff = B5[s] - B4[s];
            if diff != 0.0 {
                err_vec.axpy(h * diff, &stages[s], 1.0);
            }
        }

        let mut err = 0.0f64;
        for i in 0..dim {
            let scale = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
            let e = err_vec[i] / scale;
            err += e * e;
        }
        err = (err / dim as f64).sqrt();

        if err <= 1.0 {
            t += h;
            y = y5;
            // FSAL: stage 6 is f at the accepted point
            k0.copy_from(&stages[6]);
            steps.push((t, y.clone(), k0.clone()));
        }

        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        if h.abs() > opts.max_step {
            h = opts.max_step * direction;
        }
        if h.abs() < min_step {
            return Err(Error::StepFailure {
                t,
                step: h.abs(),
            });
        }
    }
    Err(Error::StepFailure {
        t,
        step: h.abs(),
    })
}
