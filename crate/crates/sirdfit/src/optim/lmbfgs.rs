//! Active-set limited-memory BFGS trust region.
//!
//! Each iteration estimates the strongly-active bound constraints, moves
//! active coordinates straight toward their bounds, solves a reduced
//! trust-region subproblem over the inactive coordinates with
//! Steihaug–Toint truncated conjugate gradients, blends the result with a
//! projected-gradient fallback direction through a one-dimensional search,
//! and accepts or rejects the step with a model-agreement ratio test. The
//! quasi-Newton metric is kept in compact limited-memory form and rebuilt
//! from the retained correction pairs every iteration.

use super::{
    normalized_norm, stopping, Algorithm, BoxProblem, Counted, FitResult, IterationDetail,
    OptimizerConfig, StopDecision, StopReason, Tracker,
};
use crate::Result;
use nalgebra::{DMatrix, DVector};
use std::collections::VecDeque;

/// Relative residual tolerance of the inner conjugate-gradient solve.
const CG_TOL: f64 = 1e-10;
/// Curvature filter: a pair `(q, d)` is retained only if
/// `qᵀd > CURVATURE_EPS·‖q‖‖d‖`, keeping the compact middle matrix
/// well-defined.
const CURVATURE_EPS: f64 = 1e-12;
/// Width of the final golden-section bracket in the blend search.
const BLEND_TOL: f64 = 1e-3;

/// Compact limited-memory BFGS metric `B = θ̄I − W M Wᵀ` built from
/// correction pairs `(s, y)` (step, gradient difference), oldest first.
///
/// `W = [Y  θ̄S]` and `M` is the inverse of the block matrix
/// `[−D, Lᵀ; L, θ̄SᵀS]` with `D = diag(SᵀY)` and `L` the strictly lower
/// triangle of `SᵀY`. With positive-curvature pairs the block matrix is
/// provably invertible; if rounding still makes it singular the oldest
/// pair is dropped and assembly retried, down to the plain scaling `θ̄I`.
pub struct LimitedMemoryOperator {
    theta_bar: f64,
    w: DMatrix<f64>,
    m_inv: DMatrix<f64>,
    pairs: usize,
}

impl LimitedMemoryOperator {
    /// The empty-memory metric `B = θ̄I`.
    pub fn identity(theta_bar: f64) -> Self {
        Self {
            theta_bar,
            w: DMatrix::zeros(0, 0),
            m_inv: DMatrix::zeros(0, 0),
            pairs: 0,
        }
    }

    /// Assembles the metric from pairs ordered oldest to newest, dropping
    /// the oldest pair and retrying whenever the middle block fails to
    /// invert cleanly.
    pub fn from_pairs(theta_bar: f64, pairs: &[(DVector<f64>, DVector<f64>)]) -> Self {
        let mut start = 0;
        while start < pairs.len() {
            let window = &pairs[start..];
            let m = window.len();
            let n = window[0].0.len();
            let mut s = DMatrix::zeros(n, m);
            let mut y = DMatrix::zeros(n, m);
            for (j, (sj, yj)) in window.iter().enumerate() {
                s.set_column(j, sj);
                y.set_column(j, yj);
            }
            let sty = s.tr_mul(&y);
            let sts = s.tr_mul(&s);
            let mut mid = DMatrix::zeros(2 * m, 2 * m);
            for i in 0..m {
                mid[(i, i)] = -sty[(i, i)];
                for j in 0..m {
                    if j > i {
                        // Lᵀ block: L_ji = s_jᵀy_i for j > i.
                        mid[(i, m + j)] = sty[(j, i)];
                    }
                    if i > j {
                        // L block.
                        mid[(m + i, j)] = sty[(i, j)];
                    }
                    mid[(m + i, m + j)] = theta_bar * sts[(i, j)];
                }
            }
            if let Some(m_inv) = mid.try_inverse() {
                if m_inv.iter().all(|v| v.is_finite()) {
                    let mut w = DMatrix::zeros(n, 2 * m);
                    for j in 0..m {
                        w.set_column(j, &y.column(j).into_owned());
                        w.set_column(m + j, &(s.column(j) * theta_bar));
                    }
                    return Self {
                        theta_bar,
                        w,
                        m_inv,
                        pairs: m,
                    };
                }
            }
            start += 1;
        }
        Self::identity(theta_bar)
    }

    /// Number of pairs the assembled metric actually retains.
    pub fn pair_count(&self) -> usize {
        self.pairs
    }

    /// The metric applied to a vector: `B·v = θ̄v − W(M(Wᵀv))`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.pairs == 0 {
            return v * self.theta_bar;
        }
        let wtv = self.w.tr_mul(v);
        v * self.theta_bar - &self.w * (&self.m_inv * wtv)
    }
}

/// Splits the coordinates into strongly-active and inactive index sets.
///
/// The activity threshold is `ξ = min{ψ, c‖g‖₂^ζ}`; coordinate `i` is
/// active when `x_i ≤ lo_i + ξ` or `x_i ≥ hi_i − ξ`. A zero gradient
/// collapses `ξ` to zero, leaving only exactly-binding coordinates active.
pub fn active_set(
    x: &DVector<f64>,
    g: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    psi: f64,
    c: f64,
    zeta: f64,
) -> (Vec<usize>, Vec<usize>) {
    let xi = psi.min(c * g.norm().powf(zeta));
    let mut active = Vec::new();
    let mut inactive = Vec::new();
    for i in 0..x.len() {
        if x[i] <= lo[i] + xi || x[i] >= hi[i] - xi {
            active.push(i);
        } else {
            inactive.push(i);
        }
    }
    (active, inactive)
}

/// Steihaug–Toint truncated conjugate gradients for
/// `min gᵀd + ½dᵀQd` subject to `‖d‖₂ ≤ Δ`, with `Q` given by its action.
///
/// Interior convergence stops at relative residual `tol`; encountering
/// non-positive curvature or crossing the radius exits on the boundary
/// along the current search direction. The returned step never has
/// positive model value.
pub fn steihaug<F>(quadratic: F, g: &DVector<f64>, delta: f64, tol: f64, max_iter: usize) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut d = DVector::zeros(g.len());
    let gnorm = g.norm();
    if gnorm == 0.0 || delta <= 0.0 {
        return d;
    }
    let threshold = tol * gnorm;
    let mut r = g.clone();
    let mut p = -g.clone();
    let mut rr = r.norm_squared();
    for _ in 0..max_iter {
        let qp = quadratic(&p);
        let curvature = p.dot(&qp);
        if curvature <= 0.0 {
            return boundary_step(&d, &p, delta);
        }
        let alpha = rr / curvature;
        let d_next = &d + &p * alpha;
        if d_next.norm() >= delta {
            return boundary_step(&d, &p, delta);
        }
        d = d_next;
        r += qp * alpha;
        let rr_next = r.norm_squared();
        if rr_next.sqrt() <= threshold {
            break;
        }
        let beta = rr_next / rr;
        rr = rr_next;
        p = &p * beta - &r;
    }
    d
}

/// Positive root `τ` of `‖d + τp‖ = Δ`, i.e. the boundary exit point.
fn boundary_step(d: &DVector<f64>, p: &DVector<f64>, delta: f64) -> DVector<f64> {
    let pp = p.norm_squared();
    if pp == 0.0 {
        return d.clone();
    }
    let dp = d.dot(p);
    let discriminant = (dp * dp + pp * (delta * delta - d.norm_squared())).max(0.0);
    let tau = (-dp + discriminant.sqrt()) / pp;
    d + p * tau
}

/// One-dimensional search over the blend `t ↦ j(x + t·d_G + (1−t)·d_tr)`
/// on `t ∈ [0, 1]`: golden-section refinement to bracket width `1e-3`,
/// then comparison against both endpoints (earlier candidates win ties, so
/// equal directions return `t = 0`). Returns the chosen `t` and the
/// objective value there.
///
/// # Errors
///
/// Objective evaluation failures are propagated.
pub fn blend_search<P: BoxProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    d_g: &DVector<f64>,
    d_tr: &DVector<f64>,
) -> Result<(f64, f64)> {
    let phi = |t: f64| problem.objective(&(x + d_g * t + d_tr * (1.0 - t)));
    if (d_g - d_tr).norm() <= f64::EPSILON * (d_g.norm() + d_tr.norm()) {
        return Ok((0.0, phi(0.0)?));
    }
    let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = phi(c)?;
    let mut fd = phi(d)?;
    while b - a > BLEND_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = phi(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = phi(d)?;
        }
    }
    let interior = 0.5 * (a + b);
    let mut best_t = 0.0;
    let mut best_j = phi(0.0)?;
    for t in [1.0, interior] {
        let j = phi(t)?;
        if j < best_j {
            best_t = t;
            best_j = j;
        }
    }
    Ok((best_t, best_j))
}

/// Scatters `values` (indexed by `idx`) into a zero full-length vector.
fn scatter(values: &DVector<f64>, idx: &[usize], n: usize) -> DVector<f64> {
    let mut full = DVector::zeros(n);
    for (k, &i) in idx.iter().enumerate() {
        full[i] = values[k];
    }
    full
}

/// Gathers the `idx` components of a full-length vector.
fn gather(full: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| full[i]))
}

/// Active-set limited-memory BFGS trust region.
///
/// Per iteration: clamp the radius into `[Δ_min, Δ_max]`, split the
/// coordinates by the activity threshold, send active coordinates toward
/// their bounds (trimmed to the radius), solve the reduced subproblem
/// `min dᵀ[B_Iᵀ(g + B_A d^A)] + ½dᵀB_IᵀB_I d`, `‖d‖ ≤ Δ̂`, over the
/// inactive block, project the combined step, blend it with the scaled
/// projected-gradient direction `d^G = proj(x − (Δ̂/Δ_max)κg) − x` where
/// `κ = min{1, Δ_max/‖g‖, ω/‖g‖}`, and accept when the actual decrease
/// beats `−σgᵀd^G` and the model-agreement ratio reaches `τ_accept`.
/// Rejection shrinks `Δ̂` and recomputes both directions with the same
/// active set; shrinking below `Δ_min` stops the run. Accepted steps with
/// ratio at least `τ_increase` grow the radius. Correction pairs passing
/// the curvature filter update the metric, oldest evicted beyond the
/// memory.
///
/// # Errors
///
/// Failures at the initial point are returned as errors; later evaluation
/// failures stop the run with a [`StopReason::Failed`] decision and the
/// history so far.
pub fn lmbfgs<P: BoxProblem + ?Sized>(
    problem: &P,
    x0: &DVector<f64>,
    cfg: &OptimizerConfig,
) -> Result<FitResult> {
    let counted = Counted::new(problem);
    let constants = cfg.lmbfgs;
    let (lo, hi) = counted.bounds();
    let n = lo.len();
    let min_width = (0..n).fold(f64::INFINITY, |acc, i| acc.min(hi[i] - lo[i]));
    let psi_eff = constants.psi_cap.min(min_width / 4.0);

    let mut x = counted.projected(x0);
    let mut j_x = counted.objective(&x)?;
    let mut g = counted.gradient(&x)?;
    let mut tracker = Tracker::new(&x, j_x, normalized_norm(&g));

    let mut memory: VecDeque<(DVector<f64>, DVector<f64>)> = VecDeque::new();
    let mut delta = constants.delta0;

    let stop;
    let mut k = 1;
    'outer: loop {
        macro_rules! try_eval {
            ($expr:expr, $what:literal) => {
                match $expr {
                    Ok(v) => v,
                    Err(e) => {
                        stop = StopDecision {
                            reason: StopReason::Failed(format!(
                                concat!($what, " failed: {}"),
                                e
                            )),
                            at_iteration: k,
                        };
                        break 'outer;
                    }
                }
            };
        }

        delta = delta.clamp(constants.delta_min, constants.delta_max);
        let mut delta_hat = delta;

        let (active, inactive) =
            active_set(&x, &g, &lo, &hi, psi_eff, constants.c, constants.zeta);
        let pair_list: Vec<_> = memory.iter().cloned().collect();
        let op = LimitedMemoryOperator::from_pairs(constants.theta_bar, &pair_list);

        let gnorm = g.norm();
        let kappa = if gnorm == 0.0 {
            1.0
        } else {
            1.0f64.min(constants.delta_max.min(constants.omega) / gnorm)
        };

        let mut rejections = 0u32;
        loop {
            if delta_hat < constants.delta_min {
                stop = StopDecision {
                    reason: StopReason::RadiusCollapse,
                    at_iteration: k,
                };
                break 'outer;
            }

            // Active coordinates move straight toward their nearest bound,
            // trimmed so the active subvector fits in the radius.
            let mut d_active = DVector::zeros(n);
            for &i in &active {
                d_active[i] = if x[i] - lo[i] <= hi[i] - x[i] {
                    lo[i] - x[i]
                } else {
                    hi[i] - x[i]
                };
            }
            let va_norm = d_active.norm();
            if va_norm > 0.0 {
                let trim = 1.0f64.min(delta_hat / va_norm);
                for &i in &active {
                    d_active[i] *= trim;
                }
            }

            // Reduced subproblem over the inactive block.
            let b_da = op.apply(&d_active);
            let g_tilde = gather(&op.apply(&(&g + &b_da)), &inactive);
            let q_action = |u: &DVector<f64>| {
                let full = scatter(u, &inactive, n);
                gather(&op.apply(&op.apply(&full)), &inactive)
            };
            let d_inactive = steihaug(
                q_action,
                &g_tilde,
                delta_hat,
                CG_TOL,
                2 * inactive.len() + 10,
            );

            let d_comb = &d_active + scatter(&d_inactive, &inactive, n);
            let d_tr = counted.projected(&(&x + &d_comb)) - &x;
            let d_g =
                counted.projected(&(&x - &g * ((delta_hat / constants.delta_max) * kappa))) - &x;

            if d_tr.norm_squared() == 0.0 && d_g.norm_squared() == 0.0 {
                stop = StopDecision {
                    reason: StopReason::Stationary,
                    at_iteration: k,
                };
                break 'outer;
            }

            let (t, j_trial) =
                try_eval!(blend_search(&counted, &x, &d_g, &d_tr), "blend search");
            // Same expression shape as inside the blend search, so the
            // trial objective matches the trial point; the projection only
            // absorbs last-bit rounding of the convex combination.
            let x_trial = counted.projected(&(&x + &d_g * t + &d_tr * (1.0 - t)));
            let d = &x_trial - &x;

            let model = g.dot(&d) + 0.5 * d.dot(&op.apply(&d));
            let ratio = (j_trial - j_x) / model;
            let sigma_threshold = -constants.sigma * g.dot(&d_g);
            let accepted =
                j_x - j_trial >= sigma_threshold && model < 0.0 && ratio >= constants.tau_accept;

            if !accepted {
                rejections += 1;
                delta_hat *= constants.nu_dec;
                continue;
            }

            let g_new = try_eval!(counted.gradient(&x_trial), "gradient evaluation");
            let q_pair = &x_trial - &x;
            let d_pair = &g_new - &g;
            if q_pair.dot(&d_pair) > CURVATURE_EPS * q_pair.norm() * d_pair.norm() {
                memory.push_back((q_pair, d_pair));
                if memory.len() > constants.memory {
                    memory.pop_front();
                }
            }

            tracker.push(
                k,
                &x_trial,
                j_trial,
                normalized_norm(&g_new),
                IterationDetail::LmBfgs {
                    radius: delta_hat,
                    ratio,
                    rejections,
                    blend: t,
                    active: active.len(),
                    model_decrease: model,
                    sigma_threshold,
                },
            );

            let decision = stopping(cfg, k, &x, &x_trial, j_x, j_trial);
            delta = if ratio >= constants.tau_increase {
                constants.nu_inc * delta_hat
            } else {
                delta_hat
            };
            x = x_trial;
            j_x = j_trial;
            g = g_new;
            if let Some(d) = decision {
                stop = d;
                break 'outer;
            }
            k += 1;
            break;
        }
    }

    let (objective_evals, gradient_evals) = counted.counts();
    Ok(tracker.finish(Algorithm::LmBfgs, stop, objective_evals, gradient_evals))
}

#[cfg(test)]
mod tests {
    use super::super::testkit::{convex_2d, tight_config, Quadratic};
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Deterministic pseudo-random stream in [-1, 1).
    struct Stream(u64);

    impl Stream {
        fn next(&mut self) -> f64 {
            self.0 = self
                .0
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((self.0 >> 11) as f64) / ((1u64 << 53) as f64) * 2.0 - 1.0
        }

        fn vector(&mut self, n: usize) -> DVector<f64> {
            DVector::from_fn(n, |_, _| self.next())
        }
    }

    /// Dense one-step BFGS recursion starting from `θ̄I`.
    fn dense_bfgs(theta_bar: f64, pairs: &[(DVector<f64>, DVector<f64>)], n: usize) -> DMatrix<f64> {
        let mut b = DMatrix::identity(n, n) * theta_bar;
        for (s, y) in pairs {
            let bs = &b * s;
            let sbs = s.dot(&bs);
            let sy = s.dot(y);
            b = b - &bs * bs.transpose() / sbs + y * y.transpose() / sy;
        }
        b
    }

    #[test]
    fn empty_memory_scales_by_theta_bar() {
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let op = LimitedMemoryOperator::identity(2.5);
        assert_eq!(op.apply(&v), &v * 2.5);
        assert_eq!(op.pair_count(), 0);
        let from_empty = LimitedMemoryOperator::from_pairs(2.5, &[]);
        assert_eq!(from_empty.apply(&v), &v * 2.5);
    }

    #[test]
    fn single_pair_satisfies_the_secant_condition() {
        let s = DVector::from_vec(vec![0.3, -0.2, 0.7]);
        let y = DVector::from_vec(vec![0.9, 0.1, 0.4]);
        assert!(s.dot(&y) > 0.0);
        let op = LimitedMemoryOperator::from_pairs(1.7, &[(s.clone(), y.clone())]);
        assert_eq!(op.pair_count(), 1);
        let bs = op.apply(&s);
        for i in 0..3 {
            assert_abs_diff_eq!(bs[i], y[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn compact_operator_matches_the_dense_recursion() {
        let n = 6;
        let mut stream = Stream(42);
        // SPD map A = MᵀM + 3I generates consistent positive-curvature
        // pairs y = A·s.
        let m = DMatrix::from_fn(n, n, |_, _| stream.next());
        let a = m.tr_mul(&m) + DMatrix::identity(n, n) * 3.0;
        let pairs: Vec<_> = (0..3)
            .map(|_| {
                let s = stream.vector(n);
                let y = &a * &s;
                (s, y)
            })
            .collect();

        let op = LimitedMemoryOperator::from_pairs(0.8, &pairs);
        assert_eq!(op.pair_count(), 3);
        let dense = dense_bfgs(0.8, &pairs, n);
        for _ in 0..4 {
            let v = stream.vector(n);
            let compact = op.apply(&v);
            let reference = &dense * &v;
            let rel = (&compact - &reference).norm() / reference.norm();
            assert!(rel < 1e-9, "compact/dense disagreement: {rel:e}");
        }
    }

    #[test]
    fn singular_middle_block_drops_the_oldest_pair() {
        // The first pair has zero curvature (s ⊥ y) and zeroes an entire
        // row of the middle block; assembly must fall back to the newer
        // pair alone.
        let s1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let y1 = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let s2 = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let y2 = s2.clone();
        let op = LimitedMemoryOperator::from_pairs(3.0, &[(s1, y1), (s2.clone(), y2.clone())]);
        assert_eq!(op.pair_count(), 1);
        let bs = op.apply(&s2);
        for i in 0..3 {
            assert_abs_diff_eq!(bs[i], y2[i], epsilon = 1e-12);
        }
        // Orthogonal directions still feel the seed scaling.
        let e3 = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        assert_abs_diff_eq!(op.apply(&e3)[2], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn steihaug_solves_the_unconstrained_identity_model() {
        let g = DVector::from_vec(vec![0.4, -1.1, 0.3]);
        let d = steihaug(|v| v.clone(), &g, 1e6, 1e-12, 50);
        for i in 0..3 {
            assert_abs_diff_eq!(d[i], -g[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn steihaug_stops_on_the_boundary_along_the_gradient_ray() {
        let g = DVector::from_vec(vec![1.2, -1.6]); // norm 2
        let delta = 0.4;
        let d = steihaug(|v| v.clone(), &g, delta, 1e-12, 50);
        let expected = -&g * (delta / g.norm());
        for i in 0..2 {
            assert_abs_diff_eq!(d[i], expected[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn steihaug_matches_a_dense_trust_region_oracle() {
        // Exact solver: unconstrained step if it fits, otherwise bisection
        // on the multiplier λ with ‖(Q+λI)⁻¹g‖ = Δ.
        fn oracle_model(q: &DMatrix<f64>, g: &DVector<f64>, delta: f64) -> f64 {
            let model = |d: &DVector<f64>| g.dot(d) + 0.5 * d.dot(&(q * d));
            let unconstrained = -q.clone().try_inverse().unwrap() * g;
            if unconstrained.norm() <= delta {
                return model(&unconstrained);
            }
            let step_norm = |lambda: f64| {
                let shifted = q + DMatrix::identity(2, 2) * lambda;
                (shifted.try_inverse().unwrap() * g).norm()
            };
            let mut lo = 0.0f64;
            let mut hi = 1.0f64;
            while step_norm(hi) > delta {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if step_norm(mid) > delta {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let shifted = q + DMatrix::identity(2, 2) * (0.5 * (lo + hi));
            let d = -(shifted.try_inverse().unwrap() * g);
            model(&d)
        }

        let mut stream = Stream(7);
        for _ in 0..6 {
            let m = DMatrix::from_fn(2, 2, |_, _| stream.next());
            let q = m.tr_mul(&m) + DMatrix::identity(2, 2) * 0.5;
            let g = stream.vector(2);
            // Interior case: truncated conjugate gradients run to the
            // unconstrained solution, which is also the exact one.
            let delta = 1.25 * (q.clone().try_inverse().unwrap() * &g).norm();
            let d = steihaug(|v| &q * v, &g, delta, 1e-12, 50);
            let model = g.dot(&d) + 0.5 * d.dot(&(&q * &d));
            let reference = oracle_model(&q, &g, delta);
            assert!(
                (model - reference).abs() <= 1e-8 * reference.abs().max(1.0),
                "model {model} vs oracle {reference}"
            );
        }

        // Boundary case with the gradient along an eigenvector: the
        // first-crossing exit point is the exact solution there.
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 5.0]);
        let g = DVector::from_vec(vec![3.0, 0.0]);
        let delta = 0.375;
        let d = steihaug(|v| &q * v, &g, delta, 1e-12, 50);
        let model = g.dot(&d) + 0.5 * d.dot(&(&q * &d));
        let reference = oracle_model(&q, &g, delta);
        assert!((model - reference).abs() <= 1e-8 * reference.abs());
    }

    #[test]
    fn active_set_sorts_near_bound_coordinates() {
        let x = DVector::from_vec(vec![1e-9, 0.5, 1.0 - 1e-9]);
        let lo = DVector::zeros(3);
        let hi = DVector::from_element(3, 1.0);
        // ‖g‖ = 1e-6 with c = 1, ζ = 0.5 puts the threshold at 1e-3.
        let g = DVector::from_vec(vec![1e-6, 0.0, 0.0]);
        let (active, inactive) = active_set(&x, &g, &lo, &hi, 0.1, 1.0, 0.5);
        assert_eq!(active, vec![0, 2]);
        assert_eq!(inactive, vec![1]);
    }

    #[test]
    fn zero_gradient_leaves_only_binding_coordinates_active() {
        let x = DVector::from_vec(vec![0.0, 0.5, 1.0]);
        let lo = DVector::zeros(3);
        let hi = DVector::from_element(3, 1.0);
        let g = DVector::zeros(3);
        let (active, inactive) = active_set(&x, &g, &lo, &hi, 0.1, 1.0, 0.5);
        assert_eq!(active, vec![0, 2]);
        assert_eq!(inactive, vec![1]);
    }

    #[test]
    fn tiny_psi_dominates_the_gradient_term() {
        let x = DVector::from_vec(vec![5e-10, 0.5]);
        let lo = DVector::zeros(2);
        let hi = DVector::from_element(2, 1.0);
        let g = DVector::from_vec(vec![1.0, 0.0]); // c‖g‖^ζ = 1 ≫ ψ
        let (active, inactive) = active_set(&x, &g, &lo, &hi, 1e-9, 1.0, 0.5);
        assert_eq!(active, vec![0]);
        assert_eq!(inactive, vec![1]);
    }

    #[test]
    fn equal_directions_blend_to_zero() {
        let problem = convex_2d();
        let x = DVector::from_vec(vec![0.9, 0.9]);
        let d = DVector::from_vec(vec![-0.2, -0.3]);
        let (t, j) = blend_search(&problem, &x, &d, &d).unwrap();
        assert_eq!(t, 0.0);
        let expected = problem.objective(&(&x + &d)).unwrap();
        assert_abs_diff_eq!(j, expected, epsilon = 1e-15);
    }

    #[test]
    fn linear_decrease_with_zero_fallback_blends_to_one() {
        // diag = 0 degenerates the quadratic to the linear map −b·x.
        let problem = Quadratic::new(vec![0.0, 0.0], vec![1.0, 0.0], 0.0, 1.0);
        let x = DVector::from_vec(vec![0.0, 0.5]);
        let d_g = DVector::from_vec(vec![0.5, 0.0]);
        let d_tr = DVector::zeros(2);
        let (t, j) = blend_search(&problem, &x, &d_g, &d_tr).unwrap();
        assert_eq!(t, 1.0);
        assert_abs_diff_eq!(j, -0.5, epsilon = 1e-15);
    }

    #[test]
    fn blend_matches_a_dense_scan() {
        let problem = convex_2d();
        let x = DVector::from_vec(vec![0.9, 0.9]);
        let d_g = DVector::from_vec(vec![-0.7, -0.8]);
        let d_tr = DVector::from_vec(vec![-0.1, 0.0]);
        let (t, j) = blend_search(&problem, &x, &d_g, &d_tr).unwrap();

        let phi = |s: f64| {
            problem
                .objective(&(&x + &d_g * s + &d_tr * (1.0 - s)))
                .unwrap()
        };
        let mut best_s = 0.0;
        let mut best = phi(0.0);
        for i in 1..=10_000 {
            let s = i as f64 / 10_000.0;
            let v = phi(s);
            if v < best {
                best = v;
                best_s = s;
            }
        }
        assert!(
            (t - best_s).abs() <= 2e-3,
            "blend {t} vs scan optimum {best_s}"
        );
        assert_abs_diff_eq!(j, phi(t), epsilon = 1e-15);
        // The golden-section bracket is 1e-3 wide, so the value can sit
        // a curvature-sized sliver above the dense-scan optimum.
        assert!(j <= best + 1e-5);
    }

    #[test]
    fn converges_on_the_reference_quadratic_quickly() {
        let problem = convex_2d();
        let cfg = tight_config(Algorithm::LmBfgs);
        let result = lmbfgs(&problem, &DVector::from_vec(vec![0.5, 0.5]), &cfg).unwrap();
        let minimizer = problem.constrained_minimizer();
        let first_hit = result
            .history
            .iter()
            .find(|r| (r.iterate() - &minimizer).norm() <= 1e-8)
            .map(|r| r.iteration);
        assert!(
            matches!(first_hit, Some(k) if k <= 10),
            "no iterate within 1e-8 inside 10 iterations (first hit: {first_hit:?})"
        );
    }

    #[test]
    fn kkt_corner_start_stops_stationary_with_no_steps() {
        // Unconstrained minimiser (−1, −1): the box corner (0, 0) is the
        // constrained optimum and the projected directions vanish there.
        let problem = Quadratic::new(vec![1.0, 1.0], vec![-1.0, -1.0], 0.0, 1.0);
        let cfg = tight_config(Algorithm::LmBfgs);
        let result = lmbfgs(&problem, &DVector::zeros(2), &cfg).unwrap();
        assert_eq!(result.stop.reason, StopReason::Stationary);
        assert_eq!(result.history.len(), 1);
        assert_eq!(result.best_iteration, 0);
        assert_eq!(result.best(), DVector::zeros(2));
    }

    #[test]
    fn accepted_steps_respect_the_logged_tests() {
        let problem = convex_2d();
        let cfg = tight_config(Algorithm::LmBfgs);
        let result = lmbfgs(&problem, &DVector::from_vec(vec![1.0, 0.0]), &cfg).unwrap();
        assert!(result.history.len() > 1, "expected accepted steps");
        let mut previous = result.history[0].objective;
        for record in &result.history[1..] {
            for &v in &record.x {
                assert!((0.0..=1.0).contains(&v), "iterate left the box: {v}");
            }
            if let IterationDetail::LmBfgs {
                radius,
                ratio,
                blend,
                model_decrease,
                sigma_threshold,
                ..
            } = record.detail
            {
                assert!(radius >= cfg.lmbfgs.delta_min && radius <= cfg.lmbfgs.delta_max);
                assert!((0.0..=1.0).contains(&blend));
                assert!(model_decrease < 0.0);
                assert!(ratio >= cfg.lmbfgs.tau_accept);
                assert!(sigma_threshold >= 0.0);
                assert!(
                    previous - record.objective >= sigma_threshold - 1e-15,
                    "iteration {} missed its sufficient decrease",
                    record.iteration
                );
            } else {
                panic!("expected trust-region detail");
            }
            previous = record.objective;
        }
    }
}
