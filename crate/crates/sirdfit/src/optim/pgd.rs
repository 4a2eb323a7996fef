//! Projected gradient descent with an Armijo backtracking line search.

use super::{
    normalized_norm, stopping, Algorithm, BoxProblem, Counted, FitResult, IterationDetail,
    OptimizerConfig, StopDecision, StopReason, Tracker,
};
use crate::Result;
use nalgebra::DVector;

/// Armijo sufficient-decrease constant.
const ARMIJO: f64 = 1e-4;
/// Line-search halving cap before declaring failure.
const MAX_HALVINGS: u32 = 80;

/// Minimises by repeated projected gradient steps
/// `α_{k+1} = project(α_k − s_k·∇j(α_k))`.
///
/// The step `s_k` is found by backtracking: the trial starts at twice the
/// last accepted step (so the step can recover after a cautious stretch)
/// and is halved until the Armijo condition along the projection arc
/// holds: `j(α_{k+1}) ≤ j(α_k) − 1e-4·∇j(α_k)ᵀ(α_k − α_{k+1})`. The
/// objective history is therefore non-increasing.
///
/// # Errors
///
/// Failures at the initial point are returned as errors; later evaluation
/// failures or an exhausted line search stop the run with a
/// [`StopReason::Failed`] decision and the history so far.
pub fn pgd<P: BoxProblem + ?Sized>(
    problem: &P,
    x0: &DVector<f64>,
    cfg: &OptimizerConfig,
) -> Result<FitResult> {
    let counted = Counted::new(problem);
    let mut x = counted.projected(x0);
    let mut j = counted.objective(&x)?;
    let mut g = counted.gradient(&x)?;
    let mut tracker = Tracker::new(&x, j, normalized_norm(&g));

    // The warm start doubles before each search, so the very first trial
    // step is exactly 1.
    let mut warm_step = 0.5f64;
    let stop;
    let mut k = 0;
    'outer: loop {
        k += 1;

        // Backtracking along the projection arc.
        let mut step = 2.0 * warm_step;
        let mut backtracks = 0u32;
        let (x_new, j_new) = loop {
            let candidate = counted.projected(&(&x - &g * step));
            let j_candidate = match counted.objective(&candidate) {
                Ok(v) => v,
                Err(e) => {
                    stop = StopDecision {
                        reason: StopReason::Failed(format!("objective evaluation failed: {e}")),
                        at_iteration: k,
                    };
                    break 'outer;
                }
            };
            let decrease = g.dot(&(&x - &candidate));
            if j_candidate <= j - ARMIJO * decrease {
                break (candidate, j_candidate);
            }
            backtracks += 1;
            if backtracks > MAX_HALVINGS {
                stop = StopDecision {
                    reason: StopReason::Failed(format!(
                        "line search exhausted after {MAX_HALVINGS} halvings"
                    )),
                    at_iteration: k,
                };
                break 'outer;
            }
            step *= 0.5;
        };
        warm_step = step;

        let g_new = match counted.gradient(&x_new) {
            Ok(v) => v,
            Err(e) => {
                stop = StopDecision {
                    reason: StopReason::Failed(format!("gradient evaluation failed: {e}")),
                    at_iteration: k,
                };
                break 'outer;
            }
        };
        tracker.push(
            k,
            &x_new,
            j_new,
            normalized_norm(&g_new),
            IterationDetail::Pgd { step, backtracks },
        );

        if let Some(decision) = stopping(cfg, k, &x, &x_new, j, j_new) {
            stop = decision;
            break;
        }
        x = x_new;
        j = j_new;
        g = g_new;
    }

    let (objective_evals, gradient_evals) = counted.counts();
    Ok(tracker.finish(Algorithm::Pgd, stop, objective_evals, gradient_evals))
}

#[cfg(test)]
mod tests {
    use super::super::testkit::{convex_2d, tight_config, Quadratic};
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unit_curvature_quadratic_is_solved_in_one_exact_step() {
        // j = ½‖x − a‖² + const with interior a: the first trial step is
        // exactly 1, landing on a immediately.
        let problem = Quadratic::new(vec![1.0, 1.0], vec![0.4, 0.6], 0.0, 1.0);
        let cfg = tight_config(Algorithm::Pgd);
        let result = pgd(&problem, &DVector::from_vec(vec![0.9, 0.1]), &cfg).unwrap();
        let best = result.best();
        assert_abs_diff_eq!(best[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(best[1], 0.6, epsilon = 1e-15);
        assert_eq!(result.best_iteration, 1, "the first step must be exact");
        assert!(result.history.len() <= 3, "should stop almost immediately");
    }

    #[test]
    fn exterior_minimiser_converges_to_its_projection() {
        // Separable quadratic with unconstrained minimiser (1.5, 0.5): the
        // run must land on its projection (1.0, 0.5).
        let problem = Quadratic::new(vec![1.0, 1.0], vec![1.5, 0.5], 0.0, 1.0);
        let cfg = tight_config(Algorithm::Pgd);
        let result = pgd(&problem, &DVector::from_vec(vec![0.2, 0.9]), &cfg).unwrap();
        let best = result.best();
        assert_abs_diff_eq!(best[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(best[1], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn objective_history_never_increases() {
        let problem = convex_2d();
        let cfg = tight_config(Algorithm::Pgd);
        let result = pgd(&problem, &DVector::from_vec(vec![0.95, 0.95]), &cfg).unwrap();
        let objectives: Vec<f64> = result.objectives().collect();
        for pair in objectives.windows(2) {
            assert!(pair[1] <= pair[0], "objective increased: {pair:?}");
        }
    }

    #[test]
    fn every_iterate_stays_in_the_box() {
        let problem = convex_2d();
        let cfg = tight_config(Algorithm::Pgd);
        let result = pgd(&problem, &DVector::from_vec(vec![1.0, 0.0]), &cfg).unwrap();
        for record in &result.history {
            for &v in &record.x {
                assert!((0.0..=1.0).contains(&v), "iterate left the box: {v}");
            }
        }
    }

    #[test]
    fn evaluation_counts_cover_the_line_search() {
        let problem = convex_2d();
        let mut cfg = tight_config(Algorithm::Pgd);
        cfg.it_max = 5;
        let result = pgd(&problem, &DVector::from_vec(vec![0.9, 0.9]), &cfg).unwrap();
        // One initial objective plus at least one per line-search trial.
        assert!(result.objective_evals > result.history.len() - 1);
        // One initial gradient plus one per completed iteration.
        assert_eq!(result.gradient_evals, result.history.len());
    }

    #[test]
    fn starting_at_the_constrained_minimiser_stops_immediately() {
        let problem = Quadratic::new(vec![1.0, 1.0], vec![1.5, 0.5], 0.0, 1.0);
        let cfg = tight_config(Algorithm::Pgd);
        let start = problem.constrained_minimizer();
        let result = pgd(&problem, &start, &cfg).unwrap();
        // The projected step is zero, so the discrepancy rule fires on the
        // first comparison.
        assert_eq!(result.stop.reason, StopReason::IterateDiscrepancy);
        assert_eq!(result.stop.at_iteration, 1);
        let best = result.best();
        assert_abs_diff_eq!(best[0], start[0], epsilon = 1e-15);
        assert_abs_diff_eq!(best[1], start[1], epsilon = 1e-15);
    }
}
