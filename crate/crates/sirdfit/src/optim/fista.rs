//! Accelerated proximal gradient descent with backtracked surrogate steps.

use super::{
    normalized_norm, stopping, Algorithm, BoxProblem, Counted, FitResult, IterationDetail,
    OptimizerConfig, StopDecision, StopReason, Tracker,
};
use crate::Result;
use nalgebra::DVector;

/// Backtracking doubling cap before declaring failure.
const MAX_DOUBLINGS: u32 = 120;

/// Quadratic surrogate `Q_L(α, ω) = j(ω) + ⟨α − ω, ∇j(ω)⟩ + (L/2)‖α − ω‖²`
/// that upper-bounds the objective at the accepted proximal point.
///
/// # Errors
///
/// Evaluation failures at `ω` are propagated.
pub fn surrogate_q<P: BoxProblem + ?Sized>(
    problem: &P,
    alpha: &DVector<f64>,
    omega: &DVector<f64>,
    l: f64,
) -> Result<f64> {
    let j_omega = problem.objective(omega)?;
    let g_omega = problem.gradient(omega)?;
    Ok(surrogate_q_given(alpha, omega, l, j_omega, &g_omega))
}

/// [`surrogate_q`] with the pieces at `ω` already computed.
pub fn surrogate_q_given(
    alpha: &DVector<f64>,
    omega: &DVector<f64>,
    l: f64,
    j_omega: f64,
    g_omega: &DVector<f64>,
) -> f64 {
    let d = alpha - omega;
    j_omega + g_omega.dot(&d) + 0.5 * l * d.norm_squared()
}

/// Proximal step `P_L(ω) = project(ω − ∇j(ω)/L)`.
pub fn prox_step<P: BoxProblem + ?Sized>(
    problem: &P,
    omega: &DVector<f64>,
    l: f64,
    grad: &DVector<f64>,
) -> DVector<f64> {
    problem.projected(&(omega - grad / l))
}

/// Accelerated proximal gradient method: at each iteration the curvature
/// estimate grows by `η` until the proximal point passes the surrogate
/// test `j(P_L(ω)) ≤ Q_L(P_L(ω), ω)`, the iterate moves there, and the
/// query point gains momentum `ω_{k+1} = α_{k+1} + ((θ_k − 1)/θ_{k+1})
/// (α_{k+1} − α_k)` with inertia `θ_{k+1} = 1 + k/ν`.
///
/// The objective may move upward along the way; the best iterate is
/// reported separately.
///
/// # Errors
///
/// Failures at the initial point are returned as errors; later evaluation
/// failures or an exhausted backtracking loop stop the run with a
/// [`StopReason::Failed`] decision and the history so far.
pub fn fista<P: BoxProblem + ?Sized>(
    problem: &P,
    x0: &DVector<f64>,
    cfg: &OptimizerConfig,
) -> Result<FitResult> {
    let counted = Counted::new(problem);
    let eta = cfg.fista.eta;
    let nu = cfg.fista.nu;

    let mut x = counted.projected(x0);
    let mut omega = x.clone();
    let mut j = counted.objective(&x)?;
    let g0 = counted.gradient(&x)?;
    let mut tracker = Tracker::new(&x, j, normalized_norm(&g0));

    let mut l = cfg.fista.l0;
    let mut theta_prev = 1.0f64; // θ₀
    let stop;
    let mut k = 0;
    'outer: loop {
        k += 1;

        let (j_omega, g_omega) = if k == 1 {
            // ω₁ = α₀, where both pieces are already known.
            (j, g0.clone())
        } else {
            let j_omega = match counted.objective(&omega) {
                Ok(v) => v,
                Err(e) => {
                    stop = StopDecision {
                        reason: StopReason::Failed(format!("objective evaluation failed: {e}")),
                        at_iteration: k,
                    };
                    break 'outer;
                }
            };
            match counted.gradient(&omega) {
                Ok(g) => (j_omega, g),
                Err(e) => {
                    stop = StopDecision {
                        reason: StopReason::Failed(format!("gradient evaluation failed: {e}")),
                        at_iteration: k,
                    };
                    break 'outer;
                }
            }
        };

        // Find the smallest i with L = ηⁱ·L_k passing the surrogate test.
        let mut backtracks = 0u32;
        let (x_new, j_new, q_accepted) = loop {
            let candidate = prox_step(&counted, &omega, l, &g_omega);
            let q = surrogate_q_given(&candidate, &omega, l, j_omega, &g_omega);
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
            if j_candidate <= q {
                break (candidate, j_candidate, q);
            }
            backtracks += 1;
            if backtracks > MAX_DOUBLINGS {
                stop = StopDecision {
                    reason: StopReason::Failed(format!(
                        "surrogate backtracking exhausted after {MAX_DOUBLINGS} doublings"
                    )),
                    at_iteration: k,
                };
                break 'outer;
            }
            l *= eta;
        };

        // Inertia and momentum: θ_k = 1 + (k−1)/ν.
        let theta = 1.0 + (k as f64 - 1.0) / nu;
        let momentum = (theta_prev - 1.0) / theta;
        omega = &x_new + (&x_new - &x) * momentum;
        theta_prev = theta;

        tracker.push(
            k,
            &x_new,
            j_new,
            normalized_norm(&g_omega),
            IterationDetail::Fista {
                lipschitz: l,
                backtracks,
                surrogate: q_accepted,
            },
        );

        if let Some(decision) = stopping(cfg, k, &x, &x_new, j, j_new) {
            stop = decision;
            break;
        }
        x = x_new;
        j = j_new;
    }

    let (objective_evals, gradient_evals) = counted.counts();
    Ok(tracker.finish(Algorithm::Fista, stop, objective_evals, gradient_evals))
}
