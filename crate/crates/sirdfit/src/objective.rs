//! Tracking objectives, reduced cost and gradient assembly, box
//! projection, and stationarity certificates.
//!
//! The reduced cost `j(α)` evaluates a fitting objective at the solution of
//! the SIRD system for parameters `α`; its gradient is assembled from one
//! additional (backward) adjoint solve instead of one forward solve per
//! parameter. Four objective forms are supported:
//!
//! - **Tracking** — the time-integrated squared misfit `½‖ρ − ρ̂‖²`.
//! - **Tikhonov** — tracking plus the quadratic parameter penalty
//!   `½·Σᵢ θᵢ αᵢ²` over the variable parameters.
//! - **Tikhonov + terminal observation** — tracking plus `½‖θ ⊙ α‖²` plus a
//!   weighted terminal misfit `½‖ϑ ⊙ (ρ(T) − ρ̂(T))‖²`.
//! - **Data-driven** — for time-dependent parameters: tracking plus the
//!   time-integrated `½‖θ ⊙ α(t)‖²`, an overshoot penalty
//!   `υ·max{0, γ(t)+m(t)−1}²` discouraging bang-bang rate profiles, and a
//!   terminal misfit with pre-squared weights `ϑ²`.
//!
//! Scaling convention: the tracking misfit (running and terminal) is
//! divided by the configured `scale` so objective values are comparable
//! across population sizes; parameter regularisation and penalty terms are
//! *not* scaled. Regularisation of constant parameters enters once
//! (standalone), while for time-dependent parameters it is integrated over
//! time with the same quadrature as the misfit.
//!
//! Time-dependent gradients are reported *pointwise* (per grid node) as the
//! integrand density; pairing such a gradient with a perturbation direction
//! therefore uses the quadrature-weighted inner product
//! ([`ReducedProblem::duality_pairing`]).

use crate::grid::{node_masses, simpson_weights, Interpolant, TimeGrid};
use crate::model::{
    solve_adjoint, solve_state, Param, ParamKind, ParameterVector, SolveSettings, StateTrajectory,
};
use crate::optim::BoxProblem;
use serde::{Deserialize, Serialize};
use crate::{Error, Result};
use nalgebra::DVector;
use std::sync::Mutex;

/// The fitting-objective form. See the module docs for the exact terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObjectiveForm {
    /// Pure tracking: `½‖ρ − ρ̂‖²` integrated over time.
    Tracking,
    /// Tracking plus `½·Σᵢ θᵢ αᵢ²` over the variable parameters (weights
    /// enter linearly).
    Tikhonov {
        /// Per-parameter regularisation weights `(θ_β, θ_γ, θ_m) ≥ 0`.
        theta: [f64; 3],
    },
    /// Tracking plus `½‖θ ⊙ α‖²` (weights enter squared) plus the terminal
    /// observation `½‖ϑ ⊙ (ρ(T) − ρ̂(T))‖²`.
    TikhonovTerminal {
        /// Per-parameter regularisation weights, applied squared.
        theta: [f64; 3],
        /// Per-compartment terminal weights, applied squared.
        vartheta: [f64; 3],
    },
    /// Time-dependent fitting: tracking plus time-integrated
    /// `½·Σᵢ θ²ᵢ αᵢ(t)²`, the overshoot penalty
    /// `υ·max{0, γ(t)+m(t)−1}²`, and the terminal misfit
    /// `½·Σᵢ ϑ²ᵢ (ρᵢ(T) − ρ̂ᵢ(T))²`. The weight fields store the squares
    /// directly.
    DataDriven {
        /// Pre-squared regularisation weights `θ² ≥ 0`.
        theta_sq: [f64; 3],
        /// Pre-squared terminal weights `ϑ² ≥ 0`.
        vartheta_sq: [f64; 3],
        /// Penalty strength `υ ≥ 0` for `γ + m > 1`.
        upsilon: f64,
    },
}

impl ObjectiveForm {
    /// `true` if the form carries a terminal observation term.
    pub fn has_terminal(&self) -> bool {
        matches!(
            self,
            ObjectiveForm::TikhonovTerminal { .. } | ObjectiveForm::DataDriven { .. }
        )
    }

    fn weights_valid(&self) -> bool {
        let ok = |w: &[f64; 3]| w.iter().all(|v| v.is_finite() && *v >= 0.0);
        match self {
            ObjectiveForm::Tracking => true,
            ObjectiveForm::Tikhonov { theta } => ok(theta),
            ObjectiveForm::TikhonovTerminal { theta, vartheta } => ok(theta) && ok(vartheta),
            ObjectiveForm::DataDriven {
                theta_sq,
                vartheta_sq,
                upsilon,
            } => ok(theta_sq) && ok(vartheta_sq) && upsilon.is_finite() && *upsilon >= 0.0,
        }
    }
}

/// An objective form together with the tracking-term divisor.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    form: ObjectiveForm,
    scale: f64,
}

impl ObjectiveSpec {
    /// Validates weights (non-negative, finite) and the scale (positive).
    ///
    /// # Errors
    ///
    /// Configuration error on a non-positive scale or negative weights.
    pub fn new(form: ObjectiveForm, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Config(format!(
                "objective scale must be positive and finite (got {scale})"
            )));
        }
        if !form.weights_valid() {
            return Err(Error::Config(
                "objective weights must be non-negative and finite".into(),
            ));
        }
        Ok(Self { form, scale })
    }

    /// The objective form.
    pub fn form(&self) -> &ObjectiveForm {
        &self.form
    }

    /// The tracking-term divisor.
    pub fn scale(&self) -> f64 {
        self.scale
    }
}

/// Where a target trajectory came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetProvenance {
    /// Simulated from known parameters (smooth).
    Synthetic,
    /// Rolling average of a transformed simulation (piecewise constant).
    RollingAverage,
    /// Loaded from measured data (piecewise linear).
    ExternalData,
}

/// The target state `ρ̂` the objective tracks, defined on all of `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    itp: Interpolant,
    provenance: TargetProvenance,
}

impl Target {
    /// Wraps an interpolant as a target.
    pub fn new(itp: Interpolant, provenance: TargetProvenance) -> Self {
        Self { itp, provenance }
    }

    /// The identically-zero target on `grid` (used for objective-landscape
    /// scans).
    pub fn zeros(grid: TimeGrid) -> Self {
        let values = vec![0.0; grid.len() * 3];
        let itp = Interpolant::linear(grid, values, 3).expect("sized by construction");
        Self {
            itp,
            provenance: TargetProvenance::Synthetic,
        }
    }

    /// Wraps a state trajectory as a (smooth) target.
    pub fn from_state(state: &StateTrajectory, provenance: TargetProvenance) -> Self {
        Self {
            itp: state.interpolant(),
            provenance,
        }
    }

    /// The underlying interpolant.
    pub fn interpolant(&self) -> &Interpolant {
        &self.itp
    }

    /// Provenance tag.
    pub fn provenance(&self) -> TargetProvenance {
        self.provenance
    }

    /// End of the target's definition span.
    pub fn horizon(&self) -> f64 {
        self.itp.horizon()
    }

    /// Samples the target at every node of `grid` (node-major, 3 per node).
    ///
    /// # Errors
    ///
    /// Fails if `grid` extends beyond the target's span.
    pub fn values_on(&self, grid: &TimeGrid) -> Result<Vec<f64>> {
        let mut out = vec![0.0; grid.len() * 3];
        for (k, &t) in grid.nodes().iter().enumerate() {
            self.itp.eval_into(t, &mut out[3 * k..3 * k + 3])?;
        }
        Ok(out)
    }
}

/// One gradient slot per parameter, mirroring [`ParameterVector`] layout.
#[derive(Debug, Clone, PartialEq)]
pub enum GradientEntry {
    /// Fixed parameter: no gradient.
    Zero,
    /// Variable constant parameter.
    Constant(f64),
    /// Variable time-dependent parameter: pointwise density per grid node.
    Nodal(Vec<f64>),
}

/// The reduced gradient `∇j(α)`, one entry per model parameter.
///
/// Entries for fixed parameters are [`GradientEntry::Zero`]. Entries for
/// time-dependent parameters hold the pointwise gradient density at the
/// grid nodes; see the module docs for the pairing convention.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    entries: [GradientEntry; 3],
}

impl GradientVector {
    /// The gradient slot of parameter `p`.
    pub fn entry(&self, p: Param) -> &GradientEntry {
        &self.entries[p.index()]
    }

    /// Concatenates the variable entries (in β, γ, m order) into a flat
    /// vector matching [`ReducedProblem::pack`] layout.
    pub fn to_flat(&self) -> DVector<f64> {
        let mut out = Vec::new();
        for entry in &self.entries {
            match entry {
                GradientEntry::Zero => {}
                GradientEntry::Constant(v) => out.push(*v),
                GradientEntry::Nodal(values) => out.extend_from_slice(values),
            }
        }
        DVector::from_vec(out)
    }

    /// Euclidean norm divided by the square root of the number of entries —
    /// the grid-size-insensitive magnitude used in convergence reports.
    pub fn normalized_norm(&self) -> f64 {
        let flat = self.to_flat();
        if flat.is_empty() {
            return 0.0;
        }
        flat.norm() / (flat.len() as f64).sqrt()
    }

    /// `true` if every entry is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|e| match e {
            GradientEntry::Zero => true,
            GradientEntry::Constant(v) => *v == 0.0,
            GradientEntry::Nodal(values) => values.iter().all(|v| *v == 0.0),
        })
    }
}

/// Fixed ingredients of a reduced-cost evaluation: initial state, sampling
/// grid, and solver tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSetup {
    /// Initial state `ρ(0)`; its sum is the population `n`.
    pub rho0: [f64; 3],
    /// Fitting grid (shared by state samples, parameter nodes, and
    /// quadrature).
    pub grid: TimeGrid,
    /// Forward/backward solver tolerances.
    pub settings: SolveSettings,
}

impl ProblemSetup {
    /// The population `n = Σ ρ0`.
    pub fn population(&self) -> f64 {
        self.rho0.iter().sum()
    }
}

/// Pointwise running-cost density at one instant: the tracking misfit
/// `½‖ρ − ρ̂‖²` plus the form's parameter terms evaluated at `α(t)`
/// (regularisation over the variable parameters, and the overshoot penalty
/// for the data-driven form).
///
/// This is the integrand of the time integral for time-dependent
/// parameters; for constant parameters the regularisation terms enter the
/// reduced cost once (standalone) rather than per unit time — see
/// [`evaluate_reduced_cost`].
pub fn running_cost(
    rho_t: &[f64; 3],
    target_t: &[f64; 3],
    alpha: &ParameterVector,
    t: f64,
    spec: &ObjectiveSpec,
) -> f64 {
    let mut cost = 0.0;
    for i in 0..3 {
        let d = rho_t[i] - target_t[i];
        cost += 0.5 * d * d;
    }
    for p in alpha.variable_params() {
        let v = alpha.value_at(p, t);
        cost += regulariser_half_square(spec.form(), p, v);
    }
    cost += overshoot_penalty(spec.form(), alpha, t);
    cost
}

/// `½·w·α²` with the form's weighting convention for parameter `p`.
fn regulariser_half_square(form: &ObjectiveForm, p: Param, value: f64) -> f64 {
    let i = p.index();
    match form {
        ObjectiveForm::Tracking => 0.0,
        ObjectiveForm::Tikhonov { theta } => 0.5 * theta[i] * value * value,
        ObjectiveForm::TikhonovTerminal { theta, .. } => {
            let weighted = theta[i] * value;
            0.5 * weighted * weighted
        }
        ObjectiveForm::DataDriven { theta_sq, .. } => 0.5 * theta_sq[i] * value * value,
    }
}

/// Derivative `w·α` of [`regulariser_half_square`] with respect to the
/// parameter value.
fn regulariser_derivative(form: &ObjectiveForm, p: Param, value: f64) -> f64 {
    let i = p.index();
    match form {
        ObjectiveForm::Tracking => 0.0,
        ObjectiveForm::Tikhonov { theta } => theta[i] * value,
        ObjectiveForm::TikhonovTerminal { theta, .. } => theta[i] * theta[i] * value,
        ObjectiveForm::DataDriven { theta_sq, .. } => theta_sq[i] * value,
    }
}

/// `υ·max{0, γ(t)+m(t)−1}²` for the data-driven form, else zero.
fn overshoot_penalty(form: &ObjectiveForm, alpha: &ParameterVector, t: f64) -> f64 {
    match form {
        ObjectiveForm::DataDriven { upsilon, .. } => {
            let excess =
                (alpha.value_at(Param::Gamma, t) + alpha.value_at(Param::Mort, t) - 1.0).max(0.0);
            upsilon * excess * excess
        }
        _ => 0.0,
    }
}

/// Derivative of the overshoot penalty with respect to `γ` (equals the one
/// with respect to `m`): `2υ·max{0, γ+m−1}`.
fn overshoot_penalty_derivative(form: &ObjectiveForm, alpha: &ParameterVector, t: f64) -> f64 {
    match form {
        ObjectiveForm::DataDriven { upsilon, .. } => {
            let excess =
                (alpha.value_at(Param::Gamma, t) + alpha.value_at(Param::Mort, t) - 1.0).max(0.0);
            2.0 * upsilon * excess
        }
        _ => 0.0,
    }
}

/// The data-driven form is only meaningful for time-dependent parameters.
fn validate_form_against_parameters(spec: &ObjectiveSpec, alpha: &ParameterVector) -> Result<()> {
    if matches!(spec.form(), ObjectiveForm::DataDriven { .. }) && !alpha.is_time_dependent() {
        return Err(Error::Config(
            "the data-driven objective requires time-dependent parameters".into(),
        ));
    }
    Ok(())
}

/// Terminal misfit term `½‖ϑ ⊙ Δ‖²` (or its pre-squared variant), unscaled.
fn terminal_cost(form: &ObjectiveForm, delta: &[f64; 3]) -> f64 {
    match form {
        ObjectiveForm::Tracking | ObjectiveForm::Tikhonov { .. } => 0.0,
        ObjectiveForm::TikhonovTerminal { vartheta, .. } => {
            let mut sum = 0.0;
            for i in 0..3 {
                let weighted = vartheta[i] * delta[i];
                sum += 0.5 * weighted * weighted;
            }
            sum
        }
        ObjectiveForm::DataDriven { vartheta_sq, .. } => {
            let mut sum = 0.0;
            for i in 0..3 {
                sum += 0.5 * vartheta_sq[i] * delta[i] * delta[i];
            }
            sum
        }
    }
}

/// Cost assembly from an already-computed state solve.
fn cost_given_state(
    state: &StateTrajectory,
    target_values: &[f64],
    weights: &[f64],
    alpha: &ParameterVector,
    spec: &ObjectiveSpec,
) -> f64 {
    let grid = state.grid();
    let node_count = grid.len();

    // Tracking misfit, integrated with the grid quadrature.
    let mut tracking = 0.0;
    for k in 0..node_count {
        let r = state.rho_at(k);
        let mut density = 0.0;
        for i in 0..3 {
            let d = r[i] - target_values[3 * k + i];
            density += 0.5 * d * d;
        }
        tracking += weights[k] * density;
    }

    // Terminal observation.
    let final_rho = state.final_rho();
    let delta = [
        final_rho[0] - target_values[3 * (node_count - 1)],
        final_rho[1] - target_values[3 * (node_count - 1) + 1],
        final_rho[2] - target_values[3 * (node_count - 1) + 2],
    ];
    let terminal = terminal_cost(spec.form(), &delta);

    // Parameter terms: standalone for constants, time-integrated for
    // time-dependent entries; the overshoot penalty is always integrated
    // (it only arises for the time-dependent form).
    let mut parameter_terms = 0.0;
    for p in alpha.variable_params() {
        match alpha.node_values(p) {
            None => {
                let v = alpha.as_constant(p).expect("not nodal, hence constant");
                parameter_terms += regulariser_half_square(spec.form(), p, v);
            }
            Some(values) => {
                for k in 0..node_count {
                    parameter_terms +=
                        weights[k] * regulariser_half_square(spec.form(), p, values[k]);
                }
            }
        }
    }
    if matches!(spec.form(), ObjectiveForm::DataDriven { .. }) {
        for (k, &t) in grid.nodes().iter().enumerate() {
            parameter_terms += weights[k] * overshoot_penalty(spec.form(), alpha, t);
        }
    }

    (tracking + terminal) / spec.scale() + parameter_terms
}

/// Evaluates the reduced cost `j(α)`: one forward solve, then quadrature of
/// the misfit plus the form's parameter and terminal terms.
///
/// The tracking and terminal misfit are divided by the spec's scale; the
/// parameter regularisation and penalty terms are not.
///
/// # Errors
///
/// State-solve failures are propagated; a data-driven spec with constant
/// parameters or a target not covering the grid span is a configuration
/// error.
pub fn evaluate_reduced_cost(
    alpha: &ParameterVector,
    target: &Target,
    spec: &ObjectiveSpec,
    setup: &ProblemSetup,
) -> Result<f64> {
    validate_form_against_parameters(spec, alpha)?;
    let state = solve_state(alpha, setup.rho0, &setup.grid, &setup.settings)?;
    let target_values = target.values_on(&setup.grid)?;
    let weights = simpson_weights(&setup.grid)?;
    Ok(cost_given_state(
        &state,
        &target_values,
        &weights,
        alpha,
        spec,
    ))
}

/// Gradient assembly from already-computed state and adjoint solves.
fn gradient_given_solves(
    state: &StateTrajectory,
    q_flat: &[f64],
    weights: &[f64],
    alpha: &ParameterVector,
    spec: &ObjectiveSpec,
) -> GradientVector {
    let grid = state.grid();
    let node_count = grid.len();
    let scale = spec.scale();

    // Adjoint-weighted integrand densities per node for each rate.
    let density = |p: Param, k: usize| -> f64 {
        let r = state.rho_at(k);
        let q = &q_flat[3 * k..3 * k + 3];
        match p {
            Param::Beta => r[0] * r[1] * (q[1] - q[0]),
            Param::Gamma => r[1] * (q[2] - q[1]),
            Param::Mort => -r[1] * q[1],
        }
    };

    let mut entries = [GradientEntry::Zero, GradientEntry::Zero, GradientEntry::Zero];
    for p in Param::ALL {
        if alpha.kind(p) == ParamKind::Fixed {
            continue;
        }
        match alpha.node_values(p) {
            None => {
                let mut integral = 0.0;
                for k in 0..node_count {
                    integral += weights[k] * density(p, k);
                }
                let v = alpha.as_constant(p).expect("not nodal, hence constant");
                let g = integral / scale + regulariser_derivative(spec.form(), p, v);
                entries[p.index()] = GradientEntry::Constant(g);
            }
            Some(values) => {
                let mut nodal = vec![0.0; node_count];
                for (k, &t) in grid.nodes().iter().enumerate() {
                    let mut g = density(p, k) / scale
                        + regulariser_derivative(spec.form(), p, values[k]);
                    if p == Param::Gamma || p == Param::Mort {
                        g += overshoot_penalty_derivative(spec.form(), alpha, t);
                    }
                    nodal[k] = g;
                }
                entries[p.index()] = GradientEntry::Nodal(nodal);
            }
        }
    }
    GradientVector { entries }
}

/// Computes the reduced gradient `∇j(α)` from one forward and one backward
/// solve.
///
/// Constant-parameter entries are the quadrature of the adjoint-weighted
/// integrands (divided by the scale) plus the regulariser derivative;
/// time-dependent entries hold the same integrand pointwise per node plus
/// the nodal regulariser and penalty derivatives. The terminal observation
/// enters through the adjoint's terminal condition only.
///
/// # Errors
///
/// Solve failures are propagated; configuration mismatches as in
/// [`evaluate_reduced_cost`].
pub fn reduced_gradient(
    alpha: &ParameterVector,
    target: &Target,
    spec: &ObjectiveSpec,
    setup: &ProblemSetup,
) -> Result<GradientVector> {
    validate_form_against_parameters(spec, alpha)?;
    let state = solve_state(alpha, setup.rho0, &setup.grid, &setup.settings)?;
    let adjoint = solve_adjoint(&state, alpha, spec, target, &setup.settings)?;
    let weights = simpson_weights(&setup.grid)?;
    Ok(gradient_given_solves(
        &state,
        adjoint.q_flat(),
        &weights,
        alpha,
        spec,
    ))
}

/// Coordinate-wise projection onto the feasible box: variable entries are
/// clipped into their bounds (node-wise for time-dependent entries), fixed
/// entries pass through untouched.
pub fn project(alpha: &ParameterVector) -> ParameterVector {
    let mut projected = alpha.clone();
    projected.clamp_to_bounds();
    projected
}

/// Estimates parameter values by inverting the model's balance laws on the
/// target trajectory.
///
/// With all three compartments observed, the rates follow pointwise from
/// time derivatives of the data: `β = −ρ̇_S/(ρ_S ρ_I)`, `γ = ρ̇_R/ρ_I`, and
/// `m = −(ρ̇_S + ρ̇_I + ρ̇_R)/ρ_I`. Derivatives are central differences of
/// the target over one median sample spacing, so the estimate inherits the
/// data's sampling and measurement error; it is a starting point for the
/// optimisers, not a final fit.
///
/// Variable time-dependent entries of `template` are filled node by node;
/// variable constant entries take the median of the pointwise law over the
/// target's own sample times; fixed entries are left untouched. Every
/// estimate is clamped into its entry's bounds. Nodes where a denominator
/// is smaller than `1e-9` of the peak infection density keep the template's
/// value there, so an empty or disease-free target degrades to the template
/// rather than to division noise.
///
/// # Errors
///
/// Propagates target evaluation failures (a malformed target interpolant).
pub fn invert_target_rates(
    target: &Target,
    template: &ParameterVector,
) -> Result<ParameterVector> {
    let itp = target.interpolant();
    let sample_nodes = itp.grid().nodes();
    let horizon = itp.grid().horizon();
    let stencil = {
        let mut gaps: Vec<f64> = sample_nodes.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.sort_by(f64::total_cmp);
        gaps[gaps.len() / 2]
    };
    let mut peak_infected = 0.0_f64;
    for &t in sample_nodes {
        peak_infected = peak_infected.max(itp.eval(t)?[1]);
    }
    let floor = 1e-9 * peak_infected.max(f64::MIN_POSITIVE);

    // The pointwise law at time `t`, or `None` where the data cannot
    // support the division.
    let law = |p: Param, t: f64| -> Result<Option<f64>> {
        let a = (t - stencil).max(0.0);
        let b = (t + stencil).min(horizon);
        let width = b - a;
        if width <= 0.0 {
            return Ok(None);
        }
        let va = itp.eval(a)?;
        let vb = itp.eval(b)?;
        let v = itp.eval(t.clamp(0.0, horizon))?;
        if v[1] <= floor {
            return Ok(None);
        }
        let ds = (vb[0] - va[0]) / width;
        let di = (vb[1] - va[1]) / width;
        let dr = (vb[2] - va[2]) / width;
        let raw = match p {
            Param::Beta => {
                if v[0] <= floor {
                    return Ok(None);
                }
                -ds / (v[0] * v[1])
            }
            Param::Gamma => dr / v[1],
            Param::Mort => -(ds + di + dr) / v[1],
        };
        Ok(raw.is_finite().then_some(raw))
    };

    let mut estimate = template.clone();
    for p in template.variable_params() {
        let (lo, hi) = template.bounds(p);
        if template.node_values(p).is_some() {
            let grid = template.grid().expect("nodal entries share a grid");
            let mut values = Vec::with_capacity(grid.nodes().len());
            for &t in grid.nodes() {
                let v = law(p, t)?.unwrap_or_else(|| template.value_at(p, t));
                values.push(v.clamp(lo, hi));
            }
            estimate.set_node_values(p, &values)?;
        } else {
            let mut samples = Vec::new();
            for &t in sample_nodes {
                if let Some(v) = law(p, t)? {
                    samples.push(v);
                }
            }
            if !samples.is_empty() {
                samples.sort_by(f64::total_cmp);
                let median = samples[samples.len() / 2];
                estimate.set_constant(p, median.clamp(lo, hi))?;
            }
        }
    }
    Ok(estimate)
}

/// Which bound (if any) a coordinate sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSide {
    /// Strictly between its bounds.
    Interior,
    /// At (or numerically on) the lower bound.
    Lower,
    /// At (or numerically on) the upper bound.
    Upper,
}

/// One first-order-condition violation.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarityViolation {
    /// Which parameter.
    pub param: Param,
    /// Grid-node index for time-dependent entries, `None` for constants.
    pub node: Option<usize>,
    /// Coordinate value.
    pub value: f64,
    /// Gradient value.
    pub gradient: f64,
    /// Where the coordinate sits.
    pub side: BoundSide,
}

/// Result of a first-order (KKT) check at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport {
    /// Number of variable coordinates checked.
    pub total: usize,
    /// Coordinates violating their first-order condition.
    pub violations: Vec<StationarityViolation>,
    /// Tolerance the check ran with.
    pub tol: f64,
}

impl StationarityReport {
    /// `true` if no coordinate violates its condition.
    pub fn is_satisfied(&self) -> bool {
        self.violations.is_empty()
    }

    /// Fraction of coordinates satisfying their condition.
    pub fn satisfied_fraction(&self) -> f64 {
        if self.total == 0 {
            return 1.0;
        }
        (self.total - self.violations.len()) as f64 / self.total as f64
    }
}

/// Checks the box-constrained first-order conditions coordinate-wise:
/// interior coordinates need `|g| ≤ tol`, coordinates at the lower bound
/// need `g ≥ −tol` (no feasible descent into the box), and at the upper
/// bound `g ≤ tol`.
pub fn check_stationarity(
    alpha: &ParameterVector,
    grad: &GradientVector,
    tol: f64,
) -> StationarityReport {
    let mut total = 0;
    let mut violations = Vec::new();
    for p in alpha.variable_params() {
        let (lo, hi) = alpha.bounds(p);
        let activity = 1e-8 * (hi - lo);
        let mut check_one = |value: f64, gradient: f64, node: Option<usize>| {
            total += 1;
            let side = if value - lo <= activity {
                BoundSide::Lower
            } else if hi - value <= activity {
                BoundSide::Upper
            } else {
                BoundSide::Interior
            };
            let ok = match side {
                BoundSide::Interior => gradient.abs() <= tol,
                BoundSide::Lower => gradient >= -tol,
                BoundSide::Upper => gradient <= tol,
            };
            if !ok {
                violations.push(StationarityViolation {
                    param: p,
                    node,
                    value,
                    gradient,
                    side,
                });
            }
        };
        match (alpha.node_values(p), grad.entry(p)) {
            (None, GradientEntry::Constant(g)) => {
                check_one(alpha.as_constant(p).unwrap(), *g, None);
            }
            (Some(values), GradientEntry::Nodal(gs)) => {
                for (k, (v, g)) in values.iter().zip(gs).enumerate() {
                    check_one(*v, *g, Some(k));
                }
            }
            // Mismatched layouts (e.g. a gradient computed for different
            // kinds) — count the coordinate as unchecked-and-violating so
            // the mismatch is visible.
            (values, _) => {
                let count = values.map(|v| v.len()).unwrap_or(1);
                for k in 0..count {
                    total += 1;
                    violations.push(StationarityViolation {
                        param: p,
                        node: values.map(|_| k),
                        value: f64::NAN,
                        gradient: f64::NAN,
                        side: BoundSide::Interior,
                    });
                }
            }
        }
    }
    StationarityReport {
        total,
        violations,
        tol,
    }
}

/// A complete box-constrained fitting problem over the flat vector of
/// variable parameters, with a one-entry cache of the latest state solve so
/// an objective evaluation followed by a gradient at the same point costs
/// one forward and one backward solve in total.
///
/// Packing layout: variable parameters in (β, γ, m) order; a constant
/// entry contributes one slot, a time-dependent entry one slot per grid
/// node.
pub struct ReducedProblem {
    template: ParameterVector,
    target: Target,
    spec: ObjectiveSpec,
    setup: ProblemSetup,
    target_values: Vec<f64>,
    weights: Vec<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    /// Per-slot quadrature weight: 1 for constant slots, the node's Simpson
    /// weight for nodal slots (the duality pairing for pointwise
    /// gradients).
    slot_weights: DVector<f64>,
    /// Per-slot node mass: 1 for constant slots, the node's basis mass for
    /// nodal slots — strictly positive, so usable as the optimisation
    /// metric where the Simpson weights (which may dip negative on graded
    /// grids) are not.
    slot_masses: DVector<f64>,
    /// Whether any variable parameter is time-dependent; constant-only
    /// problems already carry Euclidean gradients and need no metric.
    has_nodal: bool,
    cache: Mutex<Option<(DVector<f64>, StateTrajectory)>>,
}

impl ReducedProblem {
    /// Assembles a problem and precomputes the quadrature and bound
    /// vectors.
    ///
    /// # Errors
    ///
    /// Configuration errors for: a data-driven spec with constant
    /// parameters, a target that does not span the grid, time-dependent
    /// parameters on a different grid, or a template with no variable
    /// parameters.
    pub fn new(
        template: ParameterVector,
        target: Target,
        spec: ObjectiveSpec,
        setup: ProblemSetup,
    ) -> Result<Self> {
        validate_form_against_parameters(&spec, &template)?;
        if template.variable_dof() == 0 {
            return Err(Error::Config(
                "at least one parameter must be variable".into(),
            ));
        }
        if let Some(pgrid) = template.grid() {
            if pgrid.nodes() != setup.grid.nodes() {
                return Err(Error::Config(
                    "time-dependent parameters must live on the problem grid".into(),
                ));
            }
        }
        let slack = 1e-9 * setup.grid.horizon().max(1.0);
        if target.horizon() + slack < setup.grid.horizon() {
            return Err(Error::Config(format!(
                "target spans [0, {}] but the problem needs [0, {}]",
                target.horizon(),
                setup.grid.horizon()
            )));
        }
        let target_values = target.values_on(&setup.grid)?;
        let weights = simpson_weights(&setup.grid)?;
        let masses = node_masses(&setup.grid);

        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut slot_weights = Vec::new();
        let mut slot_masses = Vec::new();
        let mut has_nodal = false;
        for p in template.variable_params() {
            let (lo, hi) = template.bounds(p);
            match template.node_values(p) {
                None => {
                    lower.push(lo);
                    upper.push(hi);
                    slot_weights.push(1.0);
                    slot_masses.push(1.0);
                }
                Some(values) => {
                    has_nodal = true;
                    for k in 0..values.len() {
                        lower.push(lo);
                        upper.push(hi);
                        slot_weights.push(weights[k]);
                        slot_masses.push(masses[k]);
                    }
                }
            }
        }

        Ok(Self {
            template,
            target,
            spec,
            setup,
            target_values,
            weights,
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
            slot_weights: DVector::from_vec(slot_weights),
            slot_masses: DVector::from_vec(slot_masses),
            has_nodal,
            cache: Mutex::new(None),
        })
    }

    /// The parameter template (kinds, bounds, shapes).
    pub fn template(&self) -> &ParameterVector {
        &self.template
    }

    /// The target being tracked.
    pub fn target(&self) -> &Target {
        &self.target
    }

    /// The objective specification.
    pub fn spec(&self) -> &ObjectiveSpec {
        &self.spec
    }

    /// The fixed problem ingredients.
    pub fn setup(&self) -> &ProblemSetup {
        &self.setup
    }

    /// Flattens the variable entries of `alpha` into the packing layout.
    pub fn pack(&self, alpha: &ParameterVector) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.lower.len());
        for p in alpha.variable_params() {
            match alpha.node_values(p) {
                None => out.push(alpha.as_constant(p).expect("constant entry")),
                Some(values) => out.extend_from_slice(values),
            }
        }
        DVector::from_vec(out)
    }

    /// Writes a flat vector back into a copy of the template.
    ///
    /// # Panics
    ///
    /// Panics if `x` has the wrong length (an internal-logic error, not an
    /// input condition).
    pub fn unpack(&self, x: &DVector<f64>) -> ParameterVector {
        assert_eq!(x.len(), self.lower.len(), "packed vector length mismatch");
        let mut alpha = self.template.clone();
        let mut offset = 0;
        for p in self.template.variable_params() {
            match self.template.node_values(p) {
                None => {
                    alpha.set_constant(p, x[offset]).expect("layout matches");
                    offset += 1;
                }
                Some(values) => {
                    let len = values.len();
                    alpha
                        .set_node_values(p, x.as_slice()[offset..offset + len].as_ref())
                        .expect("layout matches");
                    offset += len;
                }
            }
        }
        alpha
    }

    /// Quadrature-weighted inner product `Σᵢ wᵢ aᵢ bᵢ`: the pairing under
    /// which a pointwise (nodal) gradient acts on a perturbation direction.
    /// Constant slots have weight 1, so for constant-only problems this is
    /// the plain dot product.
    pub fn duality_pairing(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let mut sum = 0.0;
        for i in 0..self.slot_weights.len() {
            sum += self.slot_weights[i] * a[i] * b[i];
        }
        sum
    }

    /// The state solve at `x`, reusing the cached trajectory when `x`
    /// matches the last evaluation point bit-for-bit.
    fn state_for(&self, x: &DVector<f64>) -> Result<StateTrajectory> {
        {
            let cache = self.cache.lock().expect("cache lock");
            if let Some((key, state)) = cache.as_ref() {
                if key == x {
                    return Ok(state.clone());
                }
            }
        }
        let alpha = self.unpack(x);
        let state = solve_state(&alpha, self.setup.rho0, &self.setup.grid, &self.setup.settings)?;
        let mut cache = self.cache.lock().expect("cache lock");
        *cache = Some((x.clone(), state.clone()));
        Ok(state)
    }

    /// Reduced cost at a packed point.
    ///
    /// # Errors
    ///
    /// Solve failures are propagated.
    pub fn objective_value(&self, x: &DVector<f64>) -> Result<f64> {
        let alpha = self.unpack(x);
        let state = self.state_for(x)?;
        Ok(cost_given_state(
            &state,
            &self.target_values,
            &self.weights,
            &alpha,
            &self.spec,
        ))
    }

    /// Reduced gradient at a packed point, flattened to the packing layout.
    ///
    /// # Errors
    ///
    /// Solve failures are propagated.
    pub fn gradient_value(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let alpha = self.unpack(x);
        let state = self.state_for(x)?;
        let adjoint = solve_adjoint(&state, &alpha, &self.spec, &self.target, &self.setup.settings)?;
        let grad = gradient_given_solves(&state, adjoint.q_flat(), &self.weights, &alpha, &self.spec);
        Ok(grad.to_flat())
    }

    /// Structured reduced gradient at a packed point.
    ///
    /// # Errors
    ///
    /// Solve failures are propagated.
    pub fn gradient_structured(&self, x: &DVector<f64>) -> Result<GradientVector> {
        let alpha = self.unpack(x);
        let state = self.state_for(x)?;
        let adjoint = solve_adjoint(&state, &alpha, &self.spec, &self.target, &self.setup.settings)?;
        Ok(gradient_given_solves(
            &state,
            adjoint.q_flat(),
            &self.weights,
            &alpha,
            &self.spec,
        ))
    }

    /// Central-difference directional derivative `(j(x+hv) − j(x−hv))/2h`.
    ///
    /// # Errors
    ///
    /// Solve failures are propagated.
    pub fn directional_difference(
        &self,
        x: &DVector<f64>,
        v: &DVector<f64>,
        h: f64,
    ) -> Result<f64> {
        let plus = self.objective_value(&(x + v * h))?;
        let minus = self.objective_value(&(x - v * h))?;
        Ok((plus - minus) / (2.0 * h))
    }

    /// Relative disagreement between the assembled gradient and central
    /// finite differences at `x`: per-coordinate differences for problems
    /// with up to eight unknowns, otherwise directional derivatives along
    /// `directions` seeded axis directions plus one mixed direction.
    ///
    /// # Errors
    ///
    /// Solve failures are propagated.
    pub fn gradient_check(&self, x: &DVector<f64>, h: f64) -> Result<f64> {
        let g = self.gradient_value(x)?;
        if self.dof() <= 8 {
            let mut fd = DVector::zeros(self.dof());
            for i in 0..self.dof() {
                let mut v = DVector::zeros(self.dof());
                v[i] = 1.0;
                fd[i] = self.directional_difference(x, &v, h)?;
            }
            let denom = fd.norm().max(1e-30);
            Ok((&g - &fd).norm() / denom)
        } else {
            // Time-dependent problems: compare the weighted pairing of the
            // pointwise gradient against directional differences.
            let mut worst = 0.0f64;
            for trial in 0..3 {
                let mut v = DVector::zeros(self.dof());
                for i in 0..self.dof() {
                    // Deterministic ±1 pattern differing per trial.
                    v[i] = if (i * (trial + 2) + trial) % 3 == 0 {
                        -1.0
                    } else {
                        1.0
                    };
                }
                let fd = self.directional_difference(x, &v, h)?;
                let paired = self.duality_pairing(&g, &v);
                let denom = fd.abs().max(1e-30);
                worst = worst.max((paired - fd).abs() / denom);
            }
            Ok(worst)
        }
    }
}

impl BoxProblem for ReducedProblem {
    fn dof(&self) -> usize {
        self.lower.len()
    }

    fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        self.objective_value(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.gradient_value(x)
    }

    fn project(&self, x: &mut DVector<f64>) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        (self.lower.clone(), self.upper.clone())
    }

    fn metric(&self) -> Option<DVector<f64>> {
        // Nodal gradient entries are pointwise densities: they act on a
        // perturbation through the node masses, not the plain dot product.
        // Constant-only problems are already Euclidean.
        self.has_nodal.then(|| self.slot_masses.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::chebyshev_grid;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn normalized_setup(n_interior: usize, horizon: f64) -> ProblemSetup {
        ProblemSetup {
            rho0: [0.99, 0.01, 0.0],
            grid: chebyshev_grid(n_interior, horizon).unwrap(),
            settings: SolveSettings {
                rel_tol: 1e-12,
                abs_tol: 1e-14,
                tol_inv: 1e-6,
            },
        }
    }

    fn tracking() -> ObjectiveSpec {
        ObjectiveSpec::new(ObjectiveForm::Tracking, 1.0).unwrap()
    }

    #[test]
    fn running_cost_vanishes_at_a_perfect_fit() {
        let alpha = ParameterVector::constant([0.0, 0.0, 0.0]);
        let rho = [1.0, 2.0, 3.0];
        let spec = ObjectiveSpec::new(
            ObjectiveForm::Tikhonov {
                theta: [2.0, 2.0, 2.0],
            },
            1.0,
        )
        .unwrap();
        assert_eq!(running_cost(&rho, &rho, &alpha, 0.0, &spec), 0.0);
    }

    #[test]
    fn running_cost_adds_the_quadratic_parameter_penalty() {
        let alpha = ParameterVector::constant([0.3, 0.4, 0.9])
            .with_kind(Param::Mort, ParamKind::Fixed);
        let spec = ObjectiveSpec::new(
            ObjectiveForm::Tikhonov {
                theta: [2.0, 2.0, 2.0],
            },
            1.0,
        )
        .unwrap();
        let rho = [5.0, 1.0, 0.0];
        let target = [4.0, 1.0, 0.0];
        let plain = running_cost(&rho, &target, &alpha, 0.0, &tracking());
        let regularised = running_cost(&rho, &target, &alpha, 0.0, &spec);
        // (θ/2)·(0.3² + 0.4²) with θ = 2; the fixed entry contributes
        // nothing.
        assert_abs_diff_eq!(regularised - plain, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(plain, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn running_cost_adds_the_overshoot_penalty() {
        let alpha = ParameterVector::constant([0.2, 0.7, 0.5]);
        let spec = ObjectiveSpec::new(
            ObjectiveForm::DataDriven {
                theta_sq: [0.0; 3],
                vartheta_sq: [0.0; 3],
                upsilon: 10.0,
            },
            1.0,
        )
        .unwrap();
        let rho = [1.0, 1.0, 1.0];
        let with_penalty = running_cost(&rho, &rho, &alpha, 0.0, &spec);
        // γ + m − 1 = 0.2, so the penalty is 10·0.04.
        assert_abs_diff_eq!(with_penalty, 0.4, epsilon = 1e-14);
    }

    #[test]
    fn refitting_a_synthetic_target_costs_nothing() {
        let setup = normalized_setup(60, 5.0);
        let alpha = ParameterVector::constant([0.5, 0.35, 0.05]);
        let state = solve_state(&alpha, setup.rho0, &setup.grid, &setup.settings).unwrap();
        let target = Target::from_state(&state, TargetProvenance::Synthetic);
        let j = evaluate_reduced_cost(&alpha, &target, &tracking(), &setup).unwrap();
        assert!(j <= 1e-12, "self-fit cost {j} should vanish");
    }

    #[test]
    fn pure_regularisation_cost_matches_the_closed_form() {
        let setup = normalized_setup(40, 3.0);
        let alpha = ParameterVector::constant([0.5, 0.3, 0.1]);
        let state = solve_state(&alpha, setup.rho0, &setup.grid, &setup.settings).unwrap();
        let target = Target::from_state(&state, TargetProvenance::Synthetic);
        let theta = 0.8;
        let spec = ObjectiveSpec::new(
            ObjectiveForm::Tikhonov {
                theta: [theta; 3],
            },
            1.0,
        )
        .unwrap();
        let j = evaluate_reduced_cost(&alpha, &target, &spec, &setup).unwrap();
        let expected = 0.5 * theta * (0.25 + 0.09 + 0.01);
        assert_relative_eq!(j, expected, max_relative = 1e-12);
    }

    #[test]
    fn cost_is_monotone_in_the_regularisation_weight() {
        let setup = normalized_setup(30, 2.0);
        let alpha = ParameterVector::constant([0.4, 0.2, 0.1]);
        let target = Target::zeros(setup.grid.clone());
        let mut previous = -1.0;
        for theta in [0.0, 1e-6, 1e-3, 1e-1, 1.0, 10.0] {
            let spec = ObjectiveSpec::new(
                ObjectiveForm::Tikhonov {
                    theta: [theta; 3],
                },
                1.0,
            )
            .unwrap();
            let j = evaluate_reduced_cost(&alpha, &target, &spec, &setup).unwrap();
            assert!(
                j >= previous,
                "cost {j} decreased when θ grew to {theta}"
            );
            previous = j;
        }
    }

    #[test]
    fn cost_is_nonnegative_and_zero_only_for_a_perfect_unregularised_fit() {
        let setup = normalized_setup(30, 2.0);
        let alpha = ParameterVector::constant([0.4, 0.2, 0.1]);
        let state = solve_state(&alpha, setup.rho0, &setup.grid, &setup.settings).unwrap();
        let own_target = Target::from_state(&state, TargetProvenance::Synthetic);
        let zero_target = Target::zeros(setup.grid.clone());

        // Tracking misfit alone: positive against a wrong target.
        let mismatched = evaluate_reduced_cost(&alpha, &zero_target, &tracking(), &setup).unwrap();
        assert!(mismatched > 0.0);

        // Perfect fit, no regulariser: exactly zero.
        let perfect = evaluate_reduced_cost(&alpha, &own_target, &tracking(), &setup).unwrap();
        assert!(perfect <= 1e-12);

        // Perfect fit but a nonzero regulariser: strictly positive.
        let spec = ObjectiveSpec::new(
            ObjectiveForm::Tikhonov {
                theta: [1.0; 3],
            },
            1.0,
        )
        .unwrap();
        let regularised = evaluate_reduced_cost(&alpha, &own_target, &spec, &setup).unwrap();
        assert!(regularised > 0.0);
    }

    #[test]
    fn gradient_vanishes_at_a_perfect_unregularised_fit() {
        let setup = normalized_setup(40, 3.0);
        let alpha = ParameterVector::constant([0.5, 0.3, 0.1]);
        let state = solve_state(&alpha, setup.rho0, &setup.grid, &setup.settings).unwrap();
        let target = Target::from_state(&state, TargetProvenance::Synthetic);
        let grad = reduced_gradient(&alpha, &target, &tracking(), &setup).unwrap();
        assert!(grad.is_zero(), "exact-fit gradient must vanish: {grad:?}");
    }

    #[test]
    fn constant_parameter_gradient_matches_finite_differences() {
        let setup = normalized_setup(100, 5.0);
        let target_alpha = ParameterVector::constant([0.5, 0.35, 0.05]);
        let state =
            solve_state(&target_alpha, setup.rho0, &setup.grid, &setup.settings).unwrap();
        let target = Target::from_state(&state, TargetProvenance::Synthetic);

        for spec in [
            tracking(),
            ObjectiveSpec::new(
                ObjectiveForm::Tikhonov {
                    theta: [0.3, 0.2, 0.1],
                },
                2.0,
            )
            .unwrap(),
            ObjectiveSpec::new(
                ObjectiveForm::TikhonovTerminal {
                    theta: [0.2; 3],
                    vartheta: [1.0, 2.0, 0.5],
                },
                1.0,
            )
            .unwrap(),
        ] {
            let template = ParameterVector::constant([0.4, 0.3, 0.1]);
            let problem = ReducedProblem::new(
                template.clone(),
                target.clone(),
                spec,
                setup.clone(),
            )
            .unwrap();
            let x = problem.pack(&template);
            let err = problem.gradient_check(&x, 1e-6).unwrap();
            assert!(err <= 1e-4, "gradient disagreement {err} too large");
        }
    }

    #[test]
    fn time_dependent_gradient_matches_directional_differences() {
        // Node count sets the agreement floor: the adjoint gradient and
        // the difference quotient live on the same grid but pair the
        // direction through different quadratures, an O(h²) mismatch.
        let grid = chebyshev_grid(80, 3.0).unwrap();
        let setup = ProblemSetup {
            rho0: [0.99, 0.01, 0.0],
            grid: grid.clone(),
            settings: SolveSettings {
                rel_tol: 1e-12,
                abs_tol: 1e-14,
                tol_inv: 1e-6,
            },
        };
        let mut template = ParameterVector::constant([0.4, 0.6, 0.5]);
        template.make_time_dependent(Param::Beta, &grid).unwrap();
        template.make_time_dependent(Param::Gamma, &grid).unwrap();
        template.make_time_dependent(Param::Mort, &grid).unwrap();

        // γ + m = 1.1 > 1 everywhere exercises the overshoot penalty.
        let spec = ObjectiveSpec::new(
            ObjectiveForm::DataDriven {
                theta_sq: [1e-4, 1e-5, 1e-5],
                vartheta_sq: [0.5, 0.5, 0.25],
                upsilon: 10.0,
            },
            1.0,
        )
        .unwrap();
        let target = Target::zeros(grid.clone());
        let problem = ReducedProblem::new(template.clone(), target, spec, setup).unwrap();
        let x = problem.pack(&template);
        let err = problem.gradient_check(&x, 1e-6).unwrap();
        assert!(err <= 1e-4, "directional disagreement {err} too large");
    }

    #[test]
    fn projection_clips_only_variable_entries() {
        let alpha = ParameterVector::constant([1.5, -0.2, 0.5]);
        let projected = project(&alpha);
        assert_eq!(projected.as_constant(Param::Beta), Some(1.0));
        assert_eq!(projected.as_constant(Param::Gamma), Some(0.0));
        assert_eq!(projected.as_constant(Param::Mort), Some(0.5));

        // Already-feasible input is untouched.
        let feasible = ParameterVector::constant([0.3, 0.2, 0.1]);
        assert_eq!(project(&feasible), feasible);

        // A tightened contact-rate bound clips harder.
        let tight = ParameterVector::constant([0.5, 0.2, 0.1])
            .with_bounds(Param::Beta, 0.0, 1e-2)
            .unwrap();
        assert_eq!(project(&tight).as_constant(Param::Beta), Some(0.01));
    }

    #[test]
    fn projection_is_idempotent_and_nonexpansive() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a = ParameterVector::constant([
                rng.gen_range(-2.0..3.0),
                rng.gen_range(-2.0..3.0),
                rng.gen_range(-2.0..3.0),
            ]);
            let b = ParameterVector::constant([
                rng.gen_range(-2.0..3.0),
                rng.gen_range(-2.0..3.0),
                rng.gen_range(-2.0..3.0),
            ]);
            let pa = project(&a);
            let pb = project(&b);
            assert_eq!(project(&pa), pa, "projection must be idempotent");
            let dist = |x: &ParameterVector, y: &ParameterVector| -> f64 {
                Param::ALL
                    .iter()
                    .map(|p| {
                        let d = x.as_constant(*p).unwrap() - y.as_constant(*p).unwrap();
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt()
            };
            assert!(
                dist(&pa, &pb) <= dist(&a, &b) + 1e-15,
                "projection expanded a pair"
            );
        }
    }

    #[test]
    fn stationarity_check_understands_bound_signs() {
        let alpha = ParameterVector::constant([0.5, 0.0, 0.0]);
        let interior_ok = GradientVector {
            entries: [
                GradientEntry::Constant(0.0),
                GradientEntry::Constant(0.3),
                GradientEntry::Constant(0.3),
            ],
        };
        // Interior zero gradient and outward-pushing gradients at the lower
        // bound both pass.
        let report = check_stationarity(&alpha, &interior_ok, 1e-8);
        assert!(report.is_satisfied(), "{:?}", report.violations);

        // A descent direction into the box at the lower bound is flagged.
        let violating = GradientVector {
            entries: [
                GradientEntry::Constant(0.0),
                GradientEntry::Constant(-0.3),
                GradientEntry::Constant(0.3),
            ],
        };
        let report = check_stationarity(&alpha, &violating, 1e-8);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].param, Param::Gamma);
        assert_eq!(report.violations[0].side, BoundSide::Lower);
        assert_abs_diff_eq!(report.satisfied_fraction(), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn packing_round_trips_mixed_layouts() {
        let grid = chebyshev_grid(5, 1.0).unwrap();
        let mut template = ParameterVector::constant([0.2, 0.3, 0.05])
            .with_kind(Param::Mort, ParamKind::Fixed);
        template.make_time_dependent(Param::Beta, &grid).unwrap();
        let nodal: Vec<f64> = (0..grid.len()).map(|k| 0.1 + 0.01 * k as f64).collect();
        template.set_node_values(Param::Beta, &nodal).unwrap();

        let setup = ProblemSetup {
            rho0: [0.99, 0.01, 0.0],
            grid: grid.clone(),
            settings: SolveSettings::default(),
        };
        let problem = ReducedProblem::new(
            template.clone(),
            Target::zeros(grid),
            tracking(),
            setup,
        )
        .unwrap();

        assert_eq!(problem.dof(), 7 + 1); // 7 β nodes + constant γ
        let x = problem.pack(&template);
        assert_eq!(x.len(), 8);
        let back = problem.unpack(&x);
        assert_eq!(back, template);

        // Bounds follow the packing layout.
        let (lo, hi) = problem.bounds();
        assert!(lo.iter().all(|v| *v == 0.0));
        assert!(hi.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn duality_pairing_reduces_to_dot_product_for_constants() {
        let setup = normalized_setup(10, 1.0);
        let template = ParameterVector::constant([0.2, 0.3, 0.05]);
        let problem = ReducedProblem::new(
            template,
            Target::zeros(setup.grid.clone()),
            tracking(),
            setup,
        )
        .unwrap();
        let a = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let b = DVector::from_vec(vec![-1.0, 0.5, 2.0]);
        assert_abs_diff_eq!(problem.duality_pairing(&a, &b), a.dot(&b), epsilon = 1e-15);
    }

    #[test]
    fn data_driven_spec_requires_time_dependence() {
        let setup = normalized_setup(10, 1.0);
        let template = ParameterVector::constant([0.2, 0.3, 0.05]);
        let spec = ObjectiveSpec::new(
            ObjectiveForm::DataDriven {
                theta_sq: [0.0; 3],
                vartheta_sq: [0.0; 3],
                upsilon: 1.0,
            },
            1.0,
        )
        .unwrap();
        let result = ReducedProblem::new(
            template,
            Target::zeros(setup.grid.clone()),
            spec,
            setup,
        );
        assert!(matches!(result, Err(Error::Config(_))));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(ObjectiveSpec::new(ObjectiveForm::Tracking, 0.0).is_err());
        assert!(ObjectiveSpec::new(
            ObjectiveForm::Tikhonov {
                theta: [-1.0, 0.0, 0.0]
            },
            1.0
        )
        .is_err());
    }

    /// Affine rate laws over `[0, horizon]` used by the inversion tests.
    fn affine_laws(t: f64, horizon: f64) -> [f64; 3] {
        let s = t / horizon;
        [0.4 - 0.1 * s, 0.25 + 0.05 * s, 0.02 + 0.01 * s]
    }

    fn densely_sampled_target(horizon: f64) -> Target {
        let fine = crate::grid::uniform_grid(2001, horizon).unwrap();
        let mut truth = ParameterVector::constant([0.0; 3]);
        for p in Param::ALL {
            truth.make_time_dependent(p, &fine).unwrap();
            let vals: Vec<f64> = fine
                .nodes()
                .iter()
                .map(|&t| affine_laws(t, horizon)[p.index()])
                .collect();
            truth.set_node_values(p, &vals).unwrap();
        }
        let settings = SolveSettings {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            tol_inv: 1e-6,
        };
        let state = solve_state(&truth, [0.95, 0.05, 0.0], &fine, &settings).unwrap();
        Target::from_state(&state, TargetProvenance::Synthetic)
    }

    #[test]
    fn inverting_a_clean_trajectory_recovers_the_rate_laws() {
        let horizon = 5.0;
        let target = densely_sampled_target(horizon);
        let grid = chebyshev_grid(40, horizon).unwrap();
        let mut template = ParameterVector::constant([0.5, 0.5, 0.5]);
        for p in Param::ALL {
            template.make_time_dependent(p, &grid).unwrap();
        }
        let estimate = invert_target_rates(&target, &template).unwrap();
        for p in Param::ALL {
            let worst = grid
                .nodes()
                .iter()
                .map(|&t| (estimate.value_at(p, t) - affine_laws(t, horizon)[p.index()]).abs())
                .fold(0.0, f64::max);
            assert!(
                worst < 2e-4,
                "{p:?}: worst inversion error {worst:.3e} too large"
            );
        }
    }

    #[test]
    fn inversion_fills_constants_with_the_median_law_and_respects_fixed_entries() {
        let horizon = 4.0;
        let fine = crate::grid::uniform_grid(1601, horizon).unwrap();
        let truth = ParameterVector::constant([0.45, 0.3, 0.04]);
        let settings = SolveSettings {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            tol_inv: 1e-6,
        };
        let state = solve_state(&truth, [0.9, 0.1, 0.0], &fine, &settings).unwrap();
        let target = Target::from_state(&state, TargetProvenance::Synthetic);
        let template = ParameterVector::constant([0.1, 0.9, 0.5])
            .with_kind(Param::Mort, ParamKind::Fixed);
        let estimate = invert_target_rates(&target, &template).unwrap();
        assert_relative_eq!(
            estimate.as_constant(Param::Beta).unwrap(),
            0.45,
            max_relative = 1e-3
        );
        assert_relative_eq!(
            estimate.as_constant(Param::Gamma).unwrap(),
            0.3,
            max_relative = 1e-3
        );
        // The fixed entry keeps the template value.
        assert_eq!(estimate.as_constant(Param::Mort).unwrap(), 0.5);
    }

    #[test]
    fn inversion_degrades_to_the_template_on_a_disease_free_target() {
        let target = Target::zeros(chebyshev_grid(20, 2.0).unwrap());
        let grid = chebyshev_grid(15, 2.0).unwrap();
        let mut template = ParameterVector::constant([0.3, 0.2, 0.1]);
        template.make_time_dependent(Param::Beta, &grid).unwrap();
        let estimate = invert_target_rates(&target, &template).unwrap();
        assert_eq!(estimate, template);
    }
}
