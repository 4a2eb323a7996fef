//! Nonmonotone accelerated proximal gradient descent with Barzilai–Borwein
//! trial steps.
//!
//! The method keeps a monitor `c_k` — an exponentially weighted average of
//! past objectives — and accepts steps that fall sufficiently below it,
//! which lets individual iterations move uphill while the envelope still
//! decreases. Each iteration extrapolates, takes a proximal step with a
//! Barzilai–Borwein curvature guess refined by backtracking, and falls
//! back to a correction step from the current iterate when the
//! extrapolated point misses the tighter monitor test.

use super::fista::prox_step;
use super::{
    normalized_norm, stopping, Algorithm, BoxProblem, Counted, FitResult, IterationDetail,
    OptimizerConfig, StopDecision, StopReason, Tracker,
};
use crate::Result;
use nalgebra::DVector;

/// Backtracking doubling cap before declaring failure.
const MAX_DOUBLINGS: u32 = 120;

/// Barzilai–Borwein curvature estimate: the Rayleigh quotient
/// `sᵀr / sᵀs` clipped into `[l_min, l_max]`, where `s` is an iterate
/// displacement and `r` the corresponding gradient difference.
///
/// A zero displacement (or non-finite quotient) cannot carry curvature
/// information; the estimate degenerates to `l_min` with the second
/// return flagging the caller.
pub fn bb_stepsize(
    s: &DVector<f64>,
    r: &DVector<f64>,
    l_min: f64,
    l_max: f64,
) -> (f64, bool) {
    let ss = s.norm_squared();
    if ss == 0.0 {
        return (l_min, true);
    }
    let quotient = s.dot(r) / ss;
    if !quotient.is_finite() {
        return (l_min, true);
    }
    (quotient.clamp(l_min, l_max), false)
}

/// The backtracked proximal step shared by both branches: grows `L` by
/// `η` until `j(P_L(base)) ≤ reference − δ·‖P_L(base) − base‖²`.
/// Returns `(point, objective, step_norm_sq, backtracks)`.
#[allow(clippy::too_many_arguments)]
fn backtracked_prox<P: BoxProblem + ?Sized>(
    problem: &Counted<'_, P>,
    base: &DVector<f64>,
    grad: &DVector<f64>,
    l_start: f64,
    eta: f64,
    delta: f64,
    reference: f64,
) -> Result<Option<(DVector<f64>, f64, f64, u32)>> {
    let mut l = l_start;
    let mut backtracks = 0u32;
    loop {
        let candidate = prox_step(problem, base, l, grad);
        let step_norm_sq = (&candidate - base).norm_squared();
        let j_candidate = problem.objective(&candidate)?;
        if j_candidate <= reference - delta * step_norm_sq {
            return Ok(Some((candidate, j_candidate, step_norm_sq, backtracks)));
        }
        backtracks += 1;
        if backtracks > MAX_DOUBLINGS {
            return Ok(None);
        }
        l *= eta;
    }
}

/// Nonmonotone accelerated proximal gradient descent.
///
/// Extrapolates with the classic inertia recurrence
/// `θ_{k+1} = ½(1 + √(1 + 4θ_k²))`, takes a Barzilai–Borwein proximal
/// step accepted against `max{c_k, j(ν_k)}`, falls back to a correction
/// step from the current iterate tested against `c_k` alone, and updates
/// the monitor `c_{k+1} = (μλ_k c_k + j(α_{k+1}))/λ_{k+1}` with
/// `λ_{k+1} = μλ_k + 1`.
///
/// # Errors
///
/// Failures at the initial point are returned as errors; later evaluation
/// failures or an exhausted backtracking loop stop the run with a
/// [`StopReason::Failed`] decision and the history so far.
pub fn nmapg<P: BoxProblem + ?Sized>(
    problem: &P,
    x0: &DVector<f64>,
    cfg: &OptimizerConfig,
) -> Result<FitResult> {
    let counted = Counted::new(problem);
    let constants = cfg.nmapg;

    // α₁ = ω₁ = ν₀ = α₀.
    let mut x = counted.projected(x0);
    let mut x_prev = x.clone();
    let mut omega = x.clone();
    let mut nu_prev = x.clone();
    let mut j_x = counted.objective(&x)?;
    let mut g_nu_prev = counted.gradient(&nu_prev)?;

    let mut tracker = Tracker::new(&x, j_x, normalized_norm(&g_nu_prev));

    let mut theta_prev = 0.0f64; // θ₀
    let mut theta = 1.0f64; // θ₁
    let mut lambda = 1.0f64; // λ₁
    let mut c = j_x; // c₁ = j(α₁)

    let stop;
    let mut k = 1;
    'outer: loop {
        // Extrapolation from the inertia recurrence.
        let nu = &x
            + (&omega - &x) * (theta_prev / theta)
            + (&x - &x_prev) * ((theta_prev - 1.0) / theta);

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

        let g_nu = try_eval!(counted.gradient(&nu), "gradient evaluation");
        let j_nu = try_eval!(counted.objective(&nu), "objective evaluation");

        // Barzilai–Borwein trial curvature from the extrapolation
        // displacement; a degenerate quotient (first iteration) falls back
        // to unit curvature, which the backtracking then corrects.
        let (bb, bb_degenerate) =
            bb_stepsize(&(&nu - &nu_prev), &(&g_nu - &g_nu_prev), constants.l_min, constants.l_max);
        let l_trial = if bb_degenerate {
            1.0f64.clamp(constants.l_min, constants.l_max)
        } else {
            bb
        };

        // Extrapolated step against the looser of monitor and j(ν).
        let max_reference = c.max(j_nu);
        let extrapolated = try_eval!(
            backtracked_prox(
                &counted,
                &nu,
                &g_nu,
                l_trial,
                constants.eta,
                constants.delta,
                max_reference,
            ),
            "extrapolated proximal search"
        );
        let Some((omega_next, j_omega, omega_step_sq, _)) = extrapolated else {
            stop = StopDecision {
                reason: StopReason::Failed(format!(
                    "extrapolated backtracking exhausted after {MAX_DOUBLINGS} doublings"
                )),
                at_iteration: k,
            };
            break 'outer;
        };

        // Accept directly if the tighter monitor test holds; otherwise run
        // the correction branch from the current iterate and keep the
        // better of the two candidates.
        let (x_new, j_new, reference, step_norm_sq, corrected, l_used) =
            if j_omega <= c - constants.delta * omega_step_sq {
                (omega_next.clone(), j_omega, c, omega_step_sq, false, l_trial)
            } else {
                let g_x = try_eval!(counted.gradient(&x), "gradient evaluation");
                let (bb_corr, corr_degenerate) = bb_stepsize(
                    &(&x - &nu_prev),
                    &(&g_x - &g_nu_prev),
                    constants.l_min,
                    constants.l_max,
                );
                let l_corr = if corr_degenerate {
                    1.0f64.clamp(constants.l_min, constants.l_max)
                } else {
                    bb_corr
                };
                let corrected_step = try_eval!(
                    backtracked_prox(
                        &counted,
                        &x,
                        &g_x,
                        l_corr,
                        constants.eta,
                        constants.delta,
                        c,
                    ),
                    "correction proximal search"
                );
                match corrected_step {
                    Some((xi, j_xi, xi_step_sq, _)) if j_xi < j_omega => {
                        (xi, j_xi, c, xi_step_sq, true, l_corr)
                    }
                    // The extrapolated point wins ties, and stands in when
                    // the correction search exhausts (it already passed
                    // the max-branch test).
                    _ => (
                        omega_next.clone(),
                        j_omega,
                        max_reference,
                        omega_step_sq,
                        false,
                        l_trial,
                    ),
                }
            };

        // Monitor update.
        let lambda_next = constants.mu * lambda + 1.0;
        let c_next = (constants.mu * lambda * c + j_new) / lambda_next;

        tracker.push(
            k,
            &x_new,
            j_new,
            normalized_norm(&g_nu),
            IterationDetail::NmApg {
                monitor: c_next,
                bb_step: l_used,
                bb_degenerate,
                corrected,
                reference,
                step_norm_sq,
            },
        );

        if let Some(decision) = stopping(cfg, k, &x, &x_new, j_x, j_new) {
            stop = decision;
            break;
        }

        // Shift the two-level state.
        theta_prev = theta;
        theta = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        lambda = lambda_next;
        c = c_next;
        nu_prev = nu;
        g_nu_prev = g_nu;
        x_prev = std::mem::replace(&mut x, x_new);
        omega = omega_next;
        j_x = j_new;
        k += 1;
    }

    let (objective_evals, gradient_evals) = counted.counts();
    Ok(tracker.finish(Algorithm::NmApg, stop, objective_evals, gradient_evals))
}

#[cfg(test)]
mod tests {
    use super::super::testkit::{convex_2d, tight_config};
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bb_quotient_recovers_a_scalar_curvature() {
        let s = DVector::from_vec(vec![0.3, -0.1, 0.7]);
        let r = &s * 3.0;
        let (l, degenerate) = bb_stepsize(&s, &r, 1e-8, 1e8);
        assert_abs_diff_eq!(l, 3.0, epsilon = 1e-14);
        assert!(!degenerate);
    }

    #[test]
    fn bb_quotient_is_clipped_at_both_ends() {
        let s = DVector::from_vec(vec![1.0]);
        let huge = DVector::from_vec(vec![1e12]);
        assert_eq!(bb_stepsize(&s, &huge, 1e-8, 1e8).0, 1e8);
        let negative = DVector::from_vec(vec![-2.0]);
        assert_eq!(bb_stepsize(&s, &negative, 1e-8, 1e8).0, 1e-8);
    }

    #[test]
    fn zero_displacement_degenerates_to_the_floor() {
        let zero = DVector::zeros(3);
        let r = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let (l, degenerate) = bb_stepsize(&zero, &r, 1e-8, 1e8);
        assert_eq!(l, 1e-8);
        assert!(degenerate);
    }

    #[test]
    fn converges_on_the_convex_benchmark() {
        let problem = convex_2d();
        let cfg = tight_config(Algorithm::NmApg);
        let result = nmapg(&problem, &DVector::from_vec(vec![0.95, 0.95]), &cfg).unwrap();
        let best = result.best();
        assert_abs_diff_eq!(best[0], 0.3, epsilon = 1e-7);
        assert_abs_diff_eq!(best[1], 0.2, epsilon = 1e-7);
    }

    #[test]
    fn zero_memory_collapses_the_monitor_to_the_latest_objective() {
        let problem = convex_2d();
        let mut cfg = tight_config(Algorithm::NmApg);
        cfg.nmapg.mu = 0.0;
        cfg.it_max = 20;
        cfg.tol_a = 0.0;
        cfg.tol_b = 0.0;
        let result = nmapg(&problem, &DVector::from_vec(vec![0.9, 0.1]), &cfg).unwrap();
        for record in &result.history {
            if let IterationDetail::NmApg { monitor, .. } = record.detail {
                assert_eq!(
                    monitor, record.objective,
                    "with μ = 0 the monitor must equal the latest objective"
                );
            }
        }
    }

    #[test]
    fn monitor_stays_inside_the_envelope() {
        let problem = convex_2d();
        let cfg = tight_config(Algorithm::NmApg);
        let result = nmapg(&problem, &DVector::from_vec(vec![0.99, 0.01]), &cfg).unwrap();
        // c₁ is the initial objective; each following c must lie between
        // min and max of {previous c, latest objective}.
        let mut c_prev = result.history[0].objective;
        for record in &result.history[1..] {
            if let IterationDetail::NmApg { monitor, .. } = record.detail {
                let lo = c_prev.min(record.objective) - 1e-14;
                let hi = c_prev.max(record.objective) + 1e-14;
                assert!(
                    (lo..=hi).contains(&monitor),
                    "monitor {monitor} escaped [{lo}, {hi}]"
                );
                c_prev = monitor;
            }
        }
    }

    #[test]
    fn accepted_points_pass_their_decrease_test() {
        let problem = convex_2d();
        let cfg = tight_config(Algorithm::NmApg);
        let result = nmapg(&problem, &DVector::from_vec(vec![0.5, 0.9]), &cfg).unwrap();
        for record in &result.history[1..] {
            if let IterationDetail::NmApg {
                reference,
                step_norm_sq,
                ..
            } = record.detail
            {
                assert!(
                    record.objective <= reference - cfg.nmapg.delta * step_norm_sq + 1e-12,
                    "iteration {} violated its acceptance test",
                    record.iteration
                );
            }
        }
    }

    #[test]
    fn every_iterate_stays_in_the_box() {
        let problem = convex_2d();
        let cfg = tight_config(Algorithm::NmApg);
        let result = nmapg(&problem, &DVector::from_vec(vec![1.0, 0.0]), &cfg).unwrap();
        for record in &result.history {
            for &v in &record.x {
                assert!((0.0..=1.0).contains(&v), "iterate left the box: {v}");
            }
        }
    }

    #[test]
    fn first_iteration_reports_a_degenerate_quotient() {
        let problem = convex_2d();
        let mut cfg = tight_config(Algorithm::NmApg);
        cfg.it_max = 3;
        let result = nmapg(&problem, &DVector::from_vec(vec![0.9, 0.9]), &cfg).unwrap();
        // ν₁ = ν₀ at the start, so no curvature information exists yet.
        if let IterationDetail::NmApg { bb_degenerate, .. } = result.history[1].detail {
            assert!(bb_degenerate);
        } else {
            panic!("expected nonmonotone-APG detail");
        }
    }
}
