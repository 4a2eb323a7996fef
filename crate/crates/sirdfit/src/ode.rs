//! Adaptive explicit Runge–Kutta 5(4) initial-value solver.
//!
//! The integrator uses the Dormand–Prince embedded pair: a fifth-order
//! solution is propagated (local extrapolation) while the difference to the
//! embedded fourth-order solution drives the step-size controller. Accepted
//! steps record the state and its derivative, so solutions can afterwards be
//! sampled on arbitrary grids with cubic Hermite interpolation.
//!
//! Backward (adjoint) problems are handled by the *caller* substituting
//! `τ = T − t`; this module only ever integrates forward in time.
//!
//! # References
//!
//! - Dormand, J. R.; Prince, P. J. (1980). "A family of embedded
//!   Runge–Kutta formulae".
//! - Hairer, Nørsett, Wanner (1993). "Solving Ordinary Differential
//!   Equations I" (automatic initial step selection, error control).

/// Stages of the Dormand–Prince 5(4) pair.
const STAGES: usize = 7;

/// Nodes `c` of the tableau.
const C: [f64; STAGES] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

/// Runge–Kutta matrix `a` (strictly lower triangular, row-major).
const A: [[f64; 6]; STAGES] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

/// Error-estimate weights: the difference between the fifth- and
/// fourth-order solutions is `h · Σ e_i k_i`.
const E: [f64; STAGES] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
/// Controller exponent: `err^(-1/(order+1))` with error-estimator order 4.
const ERROR_EXPONENT: f64 = -0.2;
/// Hard cap on accepted plus rejected steps, to turn pathological inputs
/// into a diagnostic failure instead of an unbounded loop.
const MAX_STEPS: usize = 1_000_000;

/// Failure modes of [`integrate`].
#[derive(Debug, Clone, thiserror::Error)]
pub enum OdeError {
    /// Invalid problem definition (span, tolerances, or initial state).
    #[error("invalid initial-value problem: {0}")]
    Invalid(String),

    /// The controller drove the step size below the representable
    /// resolution near `t_reached` — typically stiffness or blow-up.
    #[error("step size underflow at t = {t_reached} (stiffness or blow-up)")]
    StepSizeUnderflow {
        /// Last time the solver reached before failing.
        t_reached: f64,
    },

    /// The right-hand side produced a non-finite value.
    #[error("right-hand side returned a non-finite value at t = {t}")]
    NonFiniteRhs {
        /// Time of the offending evaluation.
        t: f64,
    },

    /// More than [`MAX_STEPS`] step attempts were needed.
    #[error("step budget exhausted at t = {t_reached}")]
    StepBudget {
        /// Last time the solver reached before failing.
        t_reached: f64,
    },

    /// A sampling time lies outside the integrated span.
    #[error("sample time {t} outside the integrated span [{t_start}, {t_end}]")]
    SampleOutsideSpan {
        /// Offending time.
        t: f64,
        /// Span start.
        t_start: f64,
        /// Span end.
        t_end: f64,
    },
}

/// An initial-value problem `y' = rhs(t, y)`, `y(t_start) = y0`, integrated
/// forward over `t_span = (t_start, t_end)` with mixed absolute/relative
/// error control.
pub struct IvpProblem<F> {
    /// Right-hand side, writing `dy/dt` into its third argument.
    pub rhs: F,
    /// Initial state.
    pub y0: Vec<f64>,
    /// Integration span `(t_start, t_end)` with `t_start < t_end`.
    pub t_span: (f64, f64),
    /// Relative tolerance (> 0).
    pub rel_tol: f64,
    /// Absolute tolerance (> 0).
    pub abs_tol: f64,
}

/// Accepted/rejected step counts of an integration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    /// Number of accepted steps.
    pub accepted: usize,
    /// Number of rejected step attempts.
    pub rejected: usize,
    /// Number of right-hand-side evaluations.
    pub rhs_evaluations: usize,
}

/// The dense result of an integration: states and derivatives at every
/// accepted step, ready for cubic Hermite sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPath {
    nodes: Vec<f64>,
    /// Node-major flat storage: node `i` occupies `values[i*dim..(i+1)*dim]`.
    values: Vec<f64>,
    /// Exact right-hand-side evaluations at the nodes, same layout.
    derivs: Vec<f64>,
    dim: usize,
    stats: StepStats,
}

impl SolutionPath {
    /// Strictly increasing accepted-step times, spanning the full interval.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// State dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// State at node `i`.
    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Right-hand side at node `i` (exact evaluation, not a difference).
    pub fn deriv(&self, i: usize) -> &[f64] {
        &self.derivs[i * self.dim..(i + 1) * self.dim]
    }

    /// Final state `y(t_end)`.
    pub fn final_value(&self) -> &[f64] {
        self.value(self.nodes.len() - 1)
    }

    /// Step statistics.
    pub fn stats(&self) -> StepStats {
        self.stats
    }

    /// Samples the path at `t` into `out` by cubic Hermite interpolation on
    /// the enclosing accepted step; node times reproduce stored values
    /// exactly.
    pub fn sample_into(&self, t: f64, out: &mut [f64]) -> Result<(), OdeError> {
        let (t_start, t_end) = (self.nodes[0], *self.nodes.last().unwrap());
        let slack = 1e-9 * (t_end - t_start).max(1.0);
        if !t.is_finite() || t < t_start - slack || t > t_end + slack {
            return Err(OdeError::SampleOutsideSpan { t, t_start, t_end });
        }
        let t = t.clamp(t_start, t_end);
        let idx = self.nodes.partition_point(|&x| x <= t);
        let seg = idx.saturating_sub(1).min(self.nodes.len() - 2);
        let (t0, t1) = (self.nodes[seg], self.nodes[seg + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let v0 = self.value(seg);
        let v1 = self.value(seg + 1);
        let d0 = self.deriv(seg);
        let d1 = self.deriv(seg + 1);
        for d in 0..self.dim {
            out[d] = h00 * v0[d] + h * h10 * d0[d] + h01 * v1[d] + h * h11 * d1[d];
        }
        Ok(())
    }
}

/// Samples a [`SolutionPath`] on a grid of times, returning the node-major
/// flat matrix of states (`grid.len() × path.dim()` entries).
///
/// # Errors
///
/// Any grid time outside the integrated span fails with
/// [`OdeError::SampleOutsideSpan`].
pub fn sample(path: &SolutionPath, grid: &[f64]) -> Result<Vec<f64>, OdeError> {
    let dim = path.dim();
    let mut out = vec![0.0; grid.len() * dim];
    for (i, &t) in grid.iter().enumerate() {
        path.sample_into(t, &mut out[i * dim..(i + 1) * dim])?;
    }
    Ok(out)
}

/// Automatic initial step selection from the right-hand-side magnitude.
fn initial_step<F>(
    rhs: &F,
    t0: f64,
    t_end: f64,
    y0: &[f64],
    f0: &[f64],
    rel_tol: f64,
    abs_tol: f64,
    evals: &mut usize,
) -> f64
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let dim = y0.len();
    let scale: Vec<f64> = y0.iter().map(|&y| abs_tol + rel_tol * y.abs()).collect();
    let rms = |v: &[f64]| -> f64 {
        let s: f64 = v
            .iter()
            .zip(&scale)
            .map(|(&x, &sc)| (x / sc) * (x / sc))
            .sum();
        (s / dim as f64).sqrt()
    };
    let d0 = rms(y0);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(t_end - t0);

    let mut y1 = vec![0.0; dim];
    for i in 0..dim {
        y1[i] = y0[i] + h0 * f0[i];
    }
    let mut f1 = vec![0.0; dim];
    (rhs)(t0 + h0, &y1, &mut f1);
    *evals += 1;
    let mut df = vec![0.0; dim];
    for i in 0..dim {
        df[i] = f1[i] - f0[i];
    }
    let d2 = rms(&df) / h0;

    let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(t_end - t0)
}

/// Integrates an initial-value problem with the Dormand–Prince 5(4) pair.
///
/// The per-step error estimate is controlled against
/// `abs_tol + rel_tol · max(|y_i|, |y_new_i|)` component-wise under a
/// root-mean-square norm; the propagated solution is the fifth-order one.
/// The first stage of each step reuses the last stage of the previous step
/// (first-same-as-last).
///
/// # Errors
///
/// - [`OdeError::Invalid`] for a malformed problem (span, tolerances,
///   non-finite initial state).
/// - [`OdeError::StepSizeUnderflow`] when error control drives the step
///   below floating-point resolution (stiffness or blow-up), carrying the
///   last reached time.
/// - [`OdeError::NonFiniteRhs`] when the right-hand side stops being
///   finite.
///
/// # Examples
///
/// ```
/// use sirdfit::ode::{integrate, IvpProblem};
///
/// // y' = -y, y(0) = 1: y(1) = 1/e.
/// let problem = IvpProblem {
///     rhs: |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = -y[0],
///     y0: vec![1.0],
///     t_span: (0.0, 1.0),
///     rel_tol: 1e-9,
///     abs_tol: 1e-12,
/// };
/// let path = integrate(&problem)?;
/// assert!((path.final_value()[0] - (-1.0f64).exp()).abs() < 1e-8);
/// # Ok::<(), sirdfit::ode::OdeError>(())
/// ```
pub fn integrate<F>(problem: &IvpProblem<F>) -> Result<SolutionPath, OdeError>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let (t0, t_end) = problem.t_span;
    if !(t0.is_finite() && t_end.is_finite() && t0 < t_end) {
        return Err(OdeError::Invalid(format!(
            "t_span must satisfy t_start < t_end (got ({t0}, {t_end}))"
        )));
    }
    if !(problem.rel_tol > 0.0 && problem.abs_tol > 0.0) {
        return Err(OdeError::Invalid(
            "tolerances must be strictly positive".into(),
        ));
    }
    if problem.y0.is_empty() || problem.y0.iter().any(|v| !v.is_finite()) {
        return Err(OdeError::Invalid(
            "initial state must be non-empty and finite".into(),
        ));
    }

    let dim = problem.y0.len();
    let rhs = &problem.rhs;
    let mut stats = StepStats::default();

    let mut t = t0;
    let mut y = problem.y0.clone();
    let mut f = vec![0.0; dim];
    (rhs)(t, &y, &mut f);
    stats.rhs_evaluations += 1;
    if f.iter().any(|v| !v.is_finite()) {
        return Err(OdeError::NonFiniteRhs { t });
    }

    let mut h = initial_step(
        rhs,
        t0,
        t_end,
        &y,
        &f,
        problem.rel_tol,
        problem.abs_tol,
        &mut stats.rhs_evaluations,
    );

    let mut nodes = vec![t];
    let mut values = y.clone();
    let mut derivs = f.clone();

    let mut k = vec![vec![0.0; dim]; STAGES];
    k[0].copy_from_slice(&f);
    let mut y_stage = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let mut rejected_last = false;

    while t < t_end {
        if stats.accepted + stats.rejected >= MAX_STEPS {
            return Err(OdeError::StepBudget { t_reached: t });
        }
        let min_step = 10.0 * f64::EPSILON * t.abs().max(t_end.abs());
        if h < min_step {
            return Err(OdeError::StepSizeUnderflow { t_reached: t });
        }
        h = h.min(t_end - t);

        // Stages 2..=7; stage 1 is the stored `k[0]` (first-same-as-last).
        for s in 1..STAGES {
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    let a = A[s][j];
                    if a != 0.0 {
                        acc += a * kj[i];
                    }
                }
                y_stage[i] = y[i] + h * acc;
            }
            let (ks_head, ks_tail) = k.split_at_mut(s);
            let _ = ks_head;
            (rhs)(t + C[s] * h, &y_stage, &mut ks_tail[0]);
            stats.rhs_evaluations += 1;
        }
        // The 7th stage is evaluated at (t + h, y_new): A[6] equals the
        // propagation weights, so y_stage after stage 7's preparation is
        // y_new itself.
        for i in 0..dim {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate().take(6) {
                let a = A[6][j];
                if a != 0.0 {
                    acc += a * kj[i];
                }
            }
            y_new[i] = y[i] + h * acc;
        }
        if y_new.iter().any(|v| !v.is_finite()) || k[6].iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFiniteRhs { t });
        }

        // Weighted RMS of the embedded error estimate.
        let mut err_sq = 0.0;
        for i in 0..dim {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                if E[j] != 0.0 {
                    e += E[j] * kj[i];
                }
            }
            let scale = problem.abs_tol + problem.rel_tol * y[i].abs().max(y_new[i].abs());
            let ratio = h * e / scale;
            err_sq += ratio * ratio;
        }
        let err = (err_sq / dim as f64).sqrt();

        if err <= 1.0 {
            t += h;
            std::mem::swap(&mut y, &mut y_new);
            let (k_last, k_first) = (STAGES - 1, 0);
            k.swap(k_first, k_last); // first-same-as-last
            nodes.push(t);
            values.extend_from_slice(&y);
            derivs.extend_from_slice(&k[0]);
            stats.accepted += 1;

            let mut factor = if err == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err.powf(ERROR_EXPONENT)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            if rejected_last {
                factor = factor.min(1.0);
            }
            rejected_last = false;
            h *= factor;
        } else {
            stats.rejected += 1;
            rejected_last = true;
            h *= (SAFETY * err.powf(ERROR_EXPONENT)).max(MIN_FACTOR);
        }
    }

    Ok(SolutionPath {
        nodes,
        values,
        derivs,
        dim,
        stats,
    })
}
