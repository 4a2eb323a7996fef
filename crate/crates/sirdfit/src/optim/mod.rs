//! Box-constrained minimisation of the reduced cost.
//!
//! Four algorithms share one problem interface ([`BoxProblem`]) and one
//! result shape ([`FitResult`]):
//!
//! - [`pgd`](pgd::pgd) — projected gradient descent with an Armijo
//!   backtracking line search,
//! - [`fista`](fista::fista) — accelerated proximal gradient with
//!   backtracked surrogate steps,
//! - [`nmapg`](nmapg::nmapg) — nonmonotone accelerated proximal gradient
//!   with Barzilai–Borwein trial steps and a correction branch,
//! - [`lmbfgs`](lmbfgs::lmbfgs) — an active-set limited-memory BFGS trust
//!   region method.
//!
//! All four project onto the same box, record an aligned per-iteration
//! history, and stop under the shared rules of [`stopping`]: an iteration
//! cap, an iterate-discrepancy test (first-order methods only), and
//! Himmelblau's absolute/relative objective tests. The trust-region method
//! replaces the discrepancy test with a minimum-radius check.
//!
//! The nonmonotone methods may move the objective upward; their results
//! report the best iterate over the whole history, not the last one.

pub mod fista;
pub mod lmbfgs;
pub mod nmapg;
pub mod pgd;

use crate::{Error, Result};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::cell::Cell;
use std::time::Instant;

/// A smooth objective over a coordinate box, presented as flat vectors.
///
/// Implementations must be consistent: `gradient` differentiates
/// `objective`, and `project` clips coordinate-wise into `bounds`.
/// Objectives must be defined (finite) in a neighbourhood of the box so
/// extrapolated query points slightly outside remain evaluable.
pub trait BoxProblem {
    /// Number of unknowns.
    fn dof(&self) -> usize;

    /// Objective value at `x`.
    ///
    /// # Errors
    ///
    /// Underlying evaluation failures (for the reduced cost: solver
    /// failures) are propagated.
    fn objective(&self, x: &DVector<f64>) -> Result<f64>;

    /// Gradient at `x`, in the same flat layout as `x`.
    ///
    /// # Errors
    ///
    /// Underlying evaluation failures are propagated.
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// Clips `x` coordinate-wise into the box.
    fn project(&self, x: &mut DVector<f64>);

    /// Lower and upper bound vectors.
    fn bounds(&self) -> (DVector<f64>, DVector<f64>);

    /// Diagonal metric under which `gradient` acts on perturbations:
    /// directional derivatives are `Σᵢ mᵢ gᵢ vᵢ`. `None` (the default)
    /// means the gradient is a plain Euclidean gradient. Problems whose
    /// gradient entries are pointwise densities over a quadrature grid
    /// return the node masses here; [`minimize`] then runs the algorithms
    /// in rescaled coordinates where the plain dot product realises the
    /// pairing, so line searches, model-agreement ratios, and curvature
    /// estimates stay consistent with actual objective changes.
    fn metric(&self) -> Option<DVector<f64>> {
        None
    }

    /// Convenience: a projected copy.
    fn projected(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = x.clone();
        self.project(&mut out);
        out
    }
}

/// The available minimisation algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Projected gradient descent.
    Pgd,
    /// Accelerated proximal gradient with backtracking.
    Fista,
    /// Nonmonotone accelerated proximal gradient.
    NmApg,
    /// Active-set limited-memory BFGS trust region.
    LmBfgs,
}

impl Algorithm {
    /// All algorithms, in reporting order.
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Pgd,
        Algorithm::Fista,
        Algorithm::NmApg,
        Algorithm::LmBfgs,
    ];

    /// Stable lowercase name (also the CLI spelling).
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Pgd => "pgd",
            Algorithm::Fista => "fista",
            Algorithm::NmApg => "nmapg",
            Algorithm::LmBfgs => "lmbfgs",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pgd" => Ok(Algorithm::Pgd),
            "fista" => Ok(Algorithm::Fista),
            "nmapg" => Ok(Algorithm::NmApg),
            "lmbfgs" => Ok(Algorithm::LmBfgs),
            other => Err(Error::Config(format!(
                "unknown algorithm '{other}' (expected pgd, fista, nmapg, or lmbfgs)"
            ))),
        }
    }
}

/// FISTA constants: initial surrogate curvature `L₀`, backtracking growth
/// `η`, and inertia divisor `ν`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FistaConstants {
    /// Initial curvature estimate `L₀ > 0`.
    pub l0: f64,
    /// Backtracking growth factor `η > 1`.
    pub eta: f64,
    /// Inertia divisor `ν > 2` in `θ_{k+1} = 1 + k/ν`.
    pub nu: f64,
}

impl Default for FistaConstants {
    fn default() -> Self {
        Self {
            l0: 1.0,
            eta: 2.0,
            nu: 2.1,
        }
    }
}

/// Nonmonotone-APG constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmApgConstants {
    /// Monitor memory `μ ∈ [0, 1)`; larger keeps more history in the
    /// acceptance envelope.
    pub mu: f64,
    /// Sufficient-decrease margin `δ > 0`.
    pub delta: f64,
    /// Backtracking growth factor `η > 1`.
    pub eta: f64,
    /// Lower clip for the Barzilai–Borwein quotient.
    pub l_min: f64,
    /// Upper clip for the Barzilai–Borwein quotient.
    pub l_max: f64,
}

impl Default for NmApgConstants {
    fn default() -> Self {
        Self {
            mu: 0.8,
            delta: 1e-4,
            eta: 2.0,
            l_min: 1e-8,
            l_max: 1e8,
        }
    }
}

/// Limited-memory BFGS trust-region constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmBfgsConstants {
    /// Number of retained correction pairs `m_c`.
    pub memory: usize,
    /// Seed curvature `θ̄ > 0` of the initial metric `θ̄·I`.
    pub theta_bar: f64,
    /// Cap on the active-set threshold; the effective `ψ` is
    /// `min(psi_cap, ℓ/4)` with `ℓ` the smallest box width, keeping
    /// `ψ < ℓ/2`.
    pub psi_cap: f64,
    /// Gradient-scaling constant `c > 0` in the activity threshold
    /// `ξ = min{ψ, c‖g‖^ζ}`.
    pub c: f64,
    /// Gradient exponent `ζ ∈ (0, 1)` in the activity threshold.
    pub zeta: f64,
    /// Radius shrink factor on rejection, in `(0, 1)`.
    pub nu_dec: f64,
    /// Radius growth factor on a very successful step, `> 1`.
    pub nu_inc: f64,
    /// Minimum model-agreement ratio to accept a step.
    pub tau_accept: f64,
    /// Model-agreement ratio above which the radius grows.
    pub tau_increase: f64,
    /// Sufficient-decrease constant `σ ∈ (0, 1)` against the projected
    /// gradient direction.
    pub sigma: f64,
    /// Gradient-direction scaling cap `ω ∈ (0, 1)`.
    pub omega: f64,
    /// Initial trust-region radius.
    pub delta0: f64,
    /// Radius collapse threshold: shrinking below it stops the run.
    pub delta_min: f64,
    /// Radius ceiling.
    pub delta_max: f64,
}

impl Default for LmBfgsConstants {
    fn default() -> Self {
        Self {
            memory: 5,
            theta_bar: 1.0,
            psi_cap: 0.1,
            c: 1.0,
            zeta: 0.5,
            nu_dec: 0.5,
            nu_inc: 2.0,
            tau_accept: 0.1,
            tau_increase: 0.75,
            sigma: 1e-4,
            omega: 0.9,
            delta0: 0.1,
            delta_min: 1e-6,
            delta_max: 1.0,
        }
    }
}

/// Full optimiser configuration: the algorithm, the shared stopping
/// tolerances, and per-algorithm constants (only the matching block is
/// read).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Which algorithm to run.
    pub algorithm: Algorithm,
    /// Iteration cap.
    pub it_max: usize,
    /// Iterate-discrepancy tolerance (first-order methods): stop when
    /// `‖α_{k+1} − α_k‖₂ < tol_a·√dof`.
    pub tol_a: f64,
    /// Himmelblau objective tolerance: stop when `|Δj| < tol_b` or
    /// `|Δj| < tol_b·|j_k|`.
    pub tol_b: f64,
    /// FISTA constants.
    #[serde(default)]
    pub fista: FistaConstants,
    /// Nonmonotone-APG constants.
    #[serde(default)]
    pub nmapg: NmApgConstants,
    /// LM-BFGS trust-region constants.
    #[serde(default)]
    pub lmbfgs: LmBfgsConstants,
}

impl OptimizerConfig {
    /// Defaults per algorithm: first-order methods cap at 10 000
    /// iterations, the trust-region method at 100; discrepancy tolerance
    /// `1e-7`; Himmelblau tolerance `5e-13`.
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            it_max: if algorithm == Algorithm::LmBfgs {
                100
            } else {
                10_000
            },
            tol_a: 1e-7,
            tol_b: 5e-13,
            fista: FistaConstants::default(),
            nmapg: NmApgConstants::default(),
            lmbfgs: LmBfgsConstants::default(),
        }
    }

    /// Enforces every stated constant range.
    ///
    /// # Errors
    ///
    /// Configuration error naming the violated range.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(format!("optimizer config: {msg}")));
        if self.it_max == 0 {
            return fail("it_max must be at least 1");
        }
        if !(self.tol_a.is_finite() && self.tol_a >= 0.0) {
            return fail("tol_a must be finite and non-negative");
        }
        if !(self.tol_b.is_finite() && self.tol_b >= 0.0) {
            return fail("tol_b must be finite and non-negative");
        }
        let f = &self.fista;
        if !(f.l0 > 0.0 && f.eta > 1.0 && f.nu > 2.0) {
            return fail("FISTA needs L0 > 0, eta > 1, nu > 2");
        }
        let n = &self.nmapg;
        if !(n.mu >= 0.0 && n.mu < 1.0) {
            return fail("nmAPG needs mu in [0, 1)");
        }
        if !(n.delta > 0.0 && n.eta > 1.0) {
            return fail("nmAPG needs delta > 0 and eta > 1");
        }
        if !(n.l_min > 0.0 && n.l_min <= n.l_max) {
            return fail("nmAPG needs 0 < l_min <= l_max");
        }
        let l = &self.lmbfgs;
        if l.memory == 0 {
            return fail("LM-BFGS needs at least one correction pair");
        }
        if !(l.theta_bar > 0.0 && l.psi_cap > 0.0 && l.c > 0.0) {
            return fail("LM-BFGS needs theta_bar, psi_cap, c > 0");
        }
        if !(l.zeta > 0.0 && l.zeta < 1.0) {
            return fail("LM-BFGS needs zeta in (0, 1)");
        }
        if !(l.nu_dec > 0.0 && l.nu_dec < 1.0 && l.nu_inc > 1.0) {
            return fail("LM-BFGS needs nu_dec in (0, 1) and nu_inc > 1");
        }
        if !(0.0 < l.tau_accept && l.tau_accept < l.tau_increase && l.tau_increase < 1.0) {
            return fail("LM-BFGS needs 0 < tau_accept < tau_increase < 1");
        }
        if !(l.sigma > 0.0 && l.sigma < 1.0 && l.omega > 0.0 && l.omega < 1.0) {
            return fail("LM-BFGS needs sigma and omega in (0, 1)");
        }
        if !(l.delta0 > 0.0 && l.delta_min > 0.0 && l.delta_min < l.delta_max) {
            return fail("LM-BFGS needs delta0 > 0 and 0 < delta_min < delta_max");
        }
        Ok(())
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Hit the iteration cap.
    IterationCap,
    /// Consecutive iterates closer than `tol_a·√dof`.
    IterateDiscrepancy,
    /// Consecutive objectives closer than `tol_b` (absolute).
    HimmelblauAbsolute,
    /// Consecutive objectives closer than `tol_b·|j|` (relative).
    HimmelblauRelative,
    /// Trust-region radius shrank below its minimum.
    RadiusCollapse,
    /// No feasible descent direction at the current point.
    Stationary,
    /// An evaluation or line-search failure; the history up to the failure
    /// is retained.
    Failed(String),
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::IterationCap => f.write_str("iteration cap"),
            StopReason::IterateDiscrepancy => f.write_str("iterate discrepancy below tolerance"),
            StopReason::HimmelblauAbsolute => {
                f.write_str("absolute objective change below tolerance")
            }
            StopReason::HimmelblauRelative => {
                f.write_str("relative objective change below tolerance")
            }
            StopReason::RadiusCollapse => f.write_str("trust-region radius collapsed"),
            StopReason::Stationary => f.write_str("stationary point reached"),
            StopReason::Failed(msg) => write!(f, "failed: {msg}"),
        }
    }
}

/// A stop reason together with the iteration it fired at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopDecision {
    /// The rule that triggered.
    pub reason: StopReason,
    /// Iteration count when it triggered.
    pub at_iteration: usize,
}

/// Algorithm-specific per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationDetail {
    /// The initial point (iteration 0).
    Start,
    /// Projected gradient descent.
    Pgd {
        /// Accepted step length.
        step: f64,
        /// Number of halvings in the line search.
        backtracks: u32,
    },
    /// FISTA: the accepted surrogate curvature, the number of curvature
    /// doublings, and the surrogate value at the accepted point (the
    /// accepted objective never exceeds it).
    Fista {
        /// Accepted curvature `L_{k+1}`.
        lipschitz: f64,
        /// Number of doublings `i_k`.
        backtracks: u32,
        /// Surrogate value `Q_L` at the accepted point.
        surrogate: f64,
    },
    /// Nonmonotone APG: monitor value after the update, the (clipped)
    /// Barzilai–Borwein trial curvature, and the acceptance-test pieces
    /// for the chosen point: `objective ≤ reference − δ·step_norm_sq`.
    NmApg {
        /// Monitor `c_{k+1}` after this iteration.
        monitor: f64,
        /// Clipped Barzilai–Borwein trial curvature.
        bb_step: f64,
        /// The trial curvature came from a degenerate (zero-displacement)
        /// quotient.
        bb_degenerate: bool,
        /// The correction branch produced the accepted point.
        corrected: bool,
        /// Reference level of the decrease test the accepted point passed.
        reference: f64,
        /// Squared displacement in that test.
        step_norm_sq: f64,
    },
    /// LM-BFGS trust region: diagnostics of the accepted step (history
    /// rows only record accepted iterates).
    LmBfgs {
        /// Radius `Δ̂` the step was computed with.
        radius: f64,
        /// Agreement ratio `r` between actual and model decrease.
        ratio: f64,
        /// Rejections (radius shrinks) before the step was accepted.
        rejections: u32,
        /// Blend weight `t ∈ [0, 1]` toward the projected gradient
        /// direction.
        blend: f64,
        /// Strongly-active coordinate count.
        active: usize,
        /// Model value `gᵀd + ½dᵀBd` of the step (negative for descent).
        model_decrease: f64,
        /// Sufficient-decrease threshold `−σ·gᵀd^G` the actual decrease
        /// was tested against.
        sigma_threshold: f64,
    },
}

/// One aligned history row: the iterate, its objective, and the norm of
/// the gradient the algorithm used at this iteration, divided by `√dof`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Iteration number (0 = initial point).
    pub iteration: usize,
    /// Objective at the iterate.
    pub objective: f64,
    /// Normalized gradient norm `‖g‖₂/√dof`.
    pub gradient_norm: f64,
    /// The iterate (flat layout).
    pub x: Vec<f64>,
    /// Algorithm-specific diagnostics.
    pub detail: IterationDetail,
}

impl IterationRecord {
    /// The iterate as a vector.
    pub fn iterate(&self) -> DVector<f64> {
        DVector::from_vec(self.x.clone())
    }
}

/// Outcome of one optimiser run: the best iterate over the whole history
/// (relevant for the nonmonotone methods), the aligned history, the stop
/// decision, and evaluation counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Algorithm that produced the run.
    pub algorithm: Algorithm,
    /// Best iterate found.
    pub best_x: Vec<f64>,
    /// Objective at the best iterate (the minimum over the history).
    pub best_objective: f64,
    /// Iteration index of the best iterate.
    pub best_iteration: usize,
    /// Per-iteration records, starting at the initial point.
    pub history: Vec<IterationRecord>,
    /// Why and when the run stopped.
    pub stop: StopDecision,
    /// Wall-clock duration in seconds.
    pub wall_seconds: f64,
    /// Number of objective evaluations.
    pub objective_evals: usize,
    /// Number of gradient evaluations.
    pub gradient_evals: usize,
}

impl FitResult {
    /// The best iterate as a vector.
    pub fn best(&self) -> DVector<f64> {
        DVector::from_vec(self.best_x.clone())
    }

    /// Objective values in iteration order.
    pub fn objectives(&self) -> impl Iterator<Item = f64> + '_ {
        self.history.iter().map(|r| r.objective)
    }
}

/// Shared stopping rules. Returns the first triggered rule, checking the
/// iteration cap, then (for first-order algorithms) the iterate
/// discrepancy `‖α_{k+1} − α_k‖₂ < tol_a·√dof`, then Himmelblau's absolute
/// and relative objective tests. The trust-region method handles its
/// radius-collapse rule itself.
pub fn stopping(
    cfg: &OptimizerConfig,
    iteration: usize,
    previous: &DVector<f64>,
    current: &DVector<f64>,
    previous_objective: f64,
    objective: f64,
) -> Option<StopDecision> {
    let decide = |reason| Some(StopDecision {
        reason,
        at_iteration: iteration,
    });
    if iteration >= cfg.it_max {
        return decide(StopReason::IterationCap);
    }
    if cfg.algorithm != Algorithm::LmBfgs {
        let dof = current.len() as f64;
        if (current - previous).norm() < cfg.tol_a * dof.sqrt() {
            return decide(StopReason::IterateDiscrepancy);
        }
    }
    let dj = (objective - previous_objective).abs();
    if dj < cfg.tol_b {
        return decide(StopReason::HimmelblauAbsolute);
    }
    if dj < cfg.tol_b * previous_objective.abs() {
        return decide(StopReason::HimmelblauRelative);
    }
    None
}

/// Runs the configured algorithm from `x0` (projected into the box if
/// needed).
///
/// # Errors
///
/// Invalid configurations and failures at the initial point are returned
/// as errors; failures mid-run stop the run with a
/// [`StopReason::Failed`] decision and partial history instead.
pub fn minimize<P: BoxProblem + ?Sized>(
    problem: &P,
    x0: &DVector<f64>,
    cfg: &OptimizerConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    match problem.metric() {
        None => dispatch(problem, x0, cfg),
        Some(metric) => {
            let scaled = MetricScaled::new(problem, &metric)?;
            let z0 = scaled.to_scaled(x0);
            let mut fit = dispatch(&scaled, &z0, cfg)?;
            fit.best_x = scaled.to_original(&fit.best_x);
            for record in &mut fit.history {
                record.x = scaled.to_original(&record.x);
            }
            Ok(fit)
        }
    }
}

fn dispatch<P: BoxProblem + ?Sized>(
    problem: &P,
    x0: &DVector<f64>,
    cfg: &OptimizerConfig,
) -> Result<FitResult> {
    match cfg.algorithm {
        Algorithm::Pgd => pgd::pgd(problem, x0, cfg),
        Algorithm::Fista => fista::fista(problem, x0, cfg),
        Algorithm::NmApg => nmapg::nmapg(problem, x0, cfg),
        Algorithm::LmBfgs => lmbfgs::lmbfgs(problem, x0, cfg),
    }
}

/// The problem rewritten in coordinates `z = √m ⊙ x`, where `m` is the
/// diagonal metric of [`BoxProblem::metric`].
///
/// In these coordinates the Euclidean gradient of the transformed objective
/// is `√m ⊙ g` (with `g` the metric-paired gradient of the inner problem),
/// the box stays a box, and projection stays a coordinate-wise clamp — so
/// the algorithms' Euclidean inner products, norms, and quadratic models
/// become consistent with actual objective changes without touching the
/// algorithms themselves.
struct MetricScaled<'a, P: BoxProblem + ?Sized> {
    inner: &'a P,
    scale: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    inner_lower: DVector<f64>,
    inner_upper: DVector<f64>,
}

impl<'a, P: BoxProblem + ?Sized> MetricScaled<'a, P> {
    fn new(inner: &'a P, metric: &DVector<f64>) -> Result<Self> {
        if metric.len() != inner.dof() {
            return Err(Error::Config(format!(
                "metric has {} entries for {} unknowns",
                metric.len(),
                inner.dof()
            )));
        }
        if metric.iter().any(|&m| !m.is_finite() || m <= 0.0) {
            return Err(Error::Config(
                "metric entries must be finite and positive".into(),
            ));
        }
        let scale = metric.map(f64::sqrt);
        let (inner_lower, inner_upper) = inner.bounds();
        let lower = inner_lower.component_mul(&scale);
        let upper = inner_upper.component_mul(&scale);
        Ok(Self {
            inner,
            scale,
            lower,
            upper,
            inner_lower,
            inner_upper,
        })
    }

    fn to_scaled(&self, x: &DVector<f64>) -> DVector<f64> {
        x.component_mul(&self.scale)
    }

    /// Maps a scaled iterate back, clamping away the last-bit rounding of
    /// the division so recorded iterates stay exactly inside the box.
    fn to_original(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, &zi)| (zi / self.scale[i]).clamp(self.inner_lower[i], self.inner_upper[i]))
            .collect()
    }

    fn unscaled(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.to_original(z.as_slice()))
    }
}

impl<P: BoxProblem + ?Sized> BoxProblem for MetricScaled<'_, P> {
    fn dof(&self) -> usize {
        self.inner.dof()
    }

    fn objective(&self, z: &DVector<f64>) -> Result<f64> {
        self.inner.objective(&self.unscaled(z))
    }

    fn gradient(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.inner.gradient(&self.unscaled(z))?;
        Ok(g.component_mul(&self.scale))
    }

    fn project(&self, z: &mut DVector<f64>) {
        for i in 0..z.len() {
            z[i] = z[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        (self.lower.clone(), self.upper.clone())
    }
}

/// Evaluation-counting facade over a problem reference.
pub(crate) struct Counted<'a, P: BoxProblem + ?Sized> {
    inner: &'a P,
    objective_calls: Cell<usize>,
    gradient_calls: Cell<usize>,
}

impl<'a, P: BoxProblem + ?Sized> Counted<'a, P> {
    pub(crate) fn new(inner: &'a P) -> Self {
        Self {
            inner,
            objective_calls: Cell::new(0),
            gradient_calls: Cell::new(0),
        }
    }

    pub(crate) fn counts(&self) -> (usize, usize) {
        (self.objective_calls.get(), self.gradient_calls.get())
    }
}

impl<'a, P: BoxProblem + ?Sized> BoxProblem for Counted<'a, P> {
    fn dof(&self) -> usize {
        self.inner.dof()
    }

    fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        self.objective_calls.set(self.objective_calls.get() + 1);
        self.inner.objective(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.gradient_calls.set(self.gradient_calls.get() + 1);
        self.inner.gradient(x)
    }

    fn project(&self, x: &mut DVector<f64>) {
        self.inner.project(x);
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        self.inner.bounds()
    }
}

/// Shared run bookkeeping: history, best-iterate tracking, timing.
pub(crate) struct Tracker {
    history: Vec<IterationRecord>,
    best_objective: f64,
    best_x: DVector<f64>,
    best_iteration: usize,
    started: Instant,
}

impl Tracker {
    /// Starts a history with the iteration-0 record.
    pub(crate) fn new(x0: &DVector<f64>, objective: f64, gradient_norm: f64) -> Self {
        Self {
            history: vec![IterationRecord {
                iteration: 0,
                objective,
                gradient_norm,
                x: x0.as_slice().to_vec(),
                detail: IterationDetail::Start,
            }],
            best_objective: objective,
            best_x: x0.clone(),
            best_iteration: 0,
            started: Instant::now(),
        }
    }

    /// Records iteration `k` and updates the best iterate on strict
    /// improvement.
    pub(crate) fn push(
        &mut self,
        iteration: usize,
        x: &DVector<f64>,
        objective: f64,
        gradient_norm: f64,
        detail: IterationDetail,
    ) {
        self.history.push(IterationRecord {
            iteration,
            objective,
            gradient_norm,
            x: x.as_slice().to_vec(),
            detail,
        });
        if objective < self.best_objective {
            self.best_objective = objective;
            self.best_x = x.clone();
            self.best_iteration = iteration;
        }
    }

    pub(crate) fn finish(
        self,
        algorithm: Algorithm,
        stop: StopDecision,
        objective_evals: usize,
        gradient_evals: usize,
    ) -> FitResult {
        FitResult {
            algorithm,
            best_x: self.best_x.as_slice().to_vec(),
            best_objective: self.best_objective,
            best_iteration: self.best_iteration,
            history: self.history,
            stop,
            wall_seconds: self.started.elapsed().as_secs_f64(),
            objective_evals,
            gradient_evals,
        }
    }
}

/// Normalized gradient magnitude `‖g‖₂/√dof` used in every history row.
pub(crate) fn normalized_norm(g: &DVector<f64>) -> f64 {
    if g.is_empty() {
        0.0
    } else {
        g.norm() / (g.len() as f64).sqrt()
    }
}

#[cfg(test)]
pub(crate) mod testkit {
    use super::*;

    /// Separable quadratic `j(x) = ½·Σ dᵢxᵢ² − b·x` over a box; the
    /// unconstrained minimiser is `xᵢ = bᵢ/dᵢ`.
    pub(crate) struct Quadratic {
        pub diag: DVector<f64>,
        pub b: DVector<f64>,
        pub lo: DVector<f64>,
        pub hi: DVector<f64>,
    }

    impl Quadratic {
        pub(crate) fn new(diag: Vec<f64>, b: Vec<f64>, lo: f64, hi: f64) -> Self {
            let n = diag.len();
            Self {
                diag: DVector::from_vec(diag),
                b: DVector::from_vec(b),
                lo: DVector::from_element(n, lo),
                hi: DVector::from_element(n, hi),
            }
        }

        /// The box-constrained minimiser (valid because the quadratic is
        /// separable).
        pub(crate) fn constrained_minimizer(&self) -> DVector<f64> {
            let mut x = DVector::zeros(self.diag.len());
            for i in 0..x.len() {
                x[i] = (self.b[i] / self.diag[i]).clamp(self.lo[i], self.hi[i]);
            }
            x
        }
    }

    impl BoxProblem for Quadratic {
        fn dof(&self) -> usize {
            self.diag.len()
        }

        fn objective(&self, x: &DVector<f64>) -> Result<f64> {
            let mut j = 0.0;
            for i in 0..x.len() {
                j += 0.5 * self.diag[i] * x[i] * x[i] - self.b[i] * x[i];
            }
            Ok(j)
        }

        fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
            let mut g = DVector::zeros(x.len());
            for i in 0..x.len() {
                g[i] = self.diag[i] * x[i] - self.b[i];
            }
            Ok(g)
        }

        fn project(&self, x: &mut DVector<f64>) {
            for i in 0..x.len() {
                x[i] = x[i].clamp(self.lo[i], self.hi[i]);
            }
        }

        fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
            (self.lo.clone(), self.hi.clone())
        }
    }

    /// The strictly convex 2-D benchmark with interior minimiser
    /// (0.3, 0.2) used by the cross-algorithm agreement tests.
    pub(crate) fn convex_2d() -> Quadratic {
        Quadratic::new(vec![1.0, 4.0], vec![0.3, 0.8], 0.0, 1.0)
    }

    pub(crate) fn tight_config(algorithm: Algorithm) -> OptimizerConfig {
        let mut cfg = OptimizerConfig::new(algorithm);
        cfg.it_max = 5000;
        cfg.tol_a = 1e-12;
        cfg.tol_b = 1e-18;
        if algorithm == Algorithm::LmBfgs {
            cfg.it_max = 200;
            cfg.lmbfgs.delta_min = 1e-12;
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn algorithm_names_round_trip() {
        for algo in Algorithm::ALL {
            let parsed: Algorithm = algo.name().parse().unwrap();
            assert_eq!(parsed, algo);
        }
        assert!("newton".parse::<Algorithm>().is_err());
    }

    #[test]
    fn default_configs_validate() {
        for algo in Algorithm::ALL {
            OptimizerConfig::new(algo).validate().unwrap();
        }
    }

    #[test]
    fn out_of_range_constants_are_rejected() {
        let mut cfg = OptimizerConfig::new(Algorithm::Fista);
        cfg.fista.nu = 2.0; // must be > 2
        assert!(cfg.validate().is_err());

        let mut cfg = OptimizerConfig::new(Algorithm::NmApg);
        cfg.nmapg.mu = 1.0; // must be < 1
        assert!(cfg.validate().is_err());

        let mut cfg = OptimizerConfig::new(Algorithm::LmBfgs);
        cfg.lmbfgs.tau_accept = 0.8; // must stay below tau_increase
        assert!(cfg.validate().is_err());

        let mut cfg = OptimizerConfig::new(Algorithm::Pgd);
        cfg.it_max = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn identical_objectives_trigger_the_absolute_rule() {
        let cfg = OptimizerConfig::new(Algorithm::Pgd);
        let a = DVector::from_vec(vec![0.1, 0.9]);
        let b = DVector::from_vec(vec![0.3, 0.4]);
        let decision = stopping(&cfg, 3, &a, &b, 1.25, 1.25).unwrap();
        assert_eq!(decision.reason, StopReason::HimmelblauAbsolute);
        assert_eq!(decision.at_iteration, 3);
    }

    #[test]
    fn iteration_cap_fires_first() {
        let mut cfg = OptimizerConfig::new(Algorithm::Pgd);
        cfg.it_max = 10;
        let a = DVector::from_vec(vec![0.1]);
        let decision = stopping(&cfg, 10, &a, &a, 1.0, 1.0).unwrap();
        assert_eq!(decision.reason, StopReason::IterationCap);
    }

    #[test]
    fn discrepancy_applies_only_to_first_order_methods() {
        let a = DVector::from_vec(vec![0.5, 0.5]);
        let mut b = a.clone();
        b[0] += 1e-9;

        let cfg = OptimizerConfig::new(Algorithm::Fista);
        let decision = stopping(&cfg, 2, &a, &b, 2.0, 1.0).unwrap();
        assert_eq!(decision.reason, StopReason::IterateDiscrepancy);

        // Same displacement under the trust-region method: no discrepancy
        // rule, and the objectives differ too much for Himmelblau.
        let cfg = OptimizerConfig::new(Algorithm::LmBfgs);
        assert!(stopping(&cfg, 2, &a, &b, 2.0, 1.0).is_none());
    }

    #[test]
    fn relative_rule_scales_with_the_objective() {
        let mut cfg = OptimizerConfig::new(Algorithm::Pgd);
        cfg.tol_a = 0.0;
        cfg.tol_b = 1e-6;
        let a = DVector::from_vec(vec![0.1]);
        let b = DVector::from_vec(vec![0.9]);
        // |Δj| = 1e-4 fails the absolute rule but sits below 1e-6·1e3.
        let decision = stopping(&cfg, 1, &a, &b, 1e3, 1e3 - 1e-4).unwrap();
        assert_eq!(decision.reason, StopReason::HimmelblauRelative);
    }

    #[test]
    fn normalized_norm_divides_by_the_dof_root() {
        let g = DVector::from_vec(vec![3.0, 4.0]);
        assert_abs_diff_eq!(
            normalized_norm(&g),
            5.0 / 2.0f64.sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn all_four_algorithms_agree_on_the_convex_benchmark() {
        let problem = testkit::convex_2d();
        let minimizer = problem.constrained_minimizer();
        let x0 = DVector::from_vec(vec![0.9, 0.9]);
        for algo in Algorithm::ALL {
            let cfg = testkit::tight_config(algo);
            let result = minimize(&problem, &x0, &cfg).unwrap();
            let error = (result.best() - &minimizer).norm();
            assert!(
                error <= 1e-6,
                "{algo} landed {error:e} away from the shared minimiser"
            );
        }
    }
}
