//! SIRD compartment dynamics, adjoint system, and epidemiological
//! diagnostics.
//!
//! The state `ρ = (ρ_S, ρ_I, ρ_R)` evolves as
//!
//! ```text
//! dρ_S/dt = −β ρ_S ρ_I
//! dρ_I/dt =  β ρ_S ρ_I − γ ρ_I − m ρ_I
//! dρ_R/dt =  γ ρ_I
//! ```
//!
//! where `β` is the contact rate, `γ` the recovery rate, and `m` the
//! mortality rate; deceased individuals leave the system, so the total
//! population decays at rate `m ρ_I` (and is conserved exactly when
//! `m = 0`).
//!
//! The companion adjoint state `q` solves a backward linear system driven by
//! the derivative of the fitting cost with respect to `ρ`; it is integrated
//! here after the change of variables `τ = T − t` so the shared solver in
//! [`crate::ode`] always runs forward. Gradients of the fitting objectives
//! are then cheap time integrals of `ρ` and `q` (assembled in
//! [`crate::objective`]).
//!
//! Parameters may be constants or piecewise-linear functions of time on the
//! fitting grid; each entry carries its own box bounds and a
//! variable/fixed marker so optimisation can be restricted to a subset.

use crate::grid::{Interpolant, TimeGrid};
use crate::objective::{ObjectiveForm, ObjectiveSpec, Target};
use crate::ode::{integrate, sample, IvpProblem};
use crate::{Error, Result};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

/// Names of the three model parameters, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    /// Contact rate β.
    Beta = 0,
    /// Recovery rate γ.
    Gamma = 1,
    /// Mortality rate m.
    Mort = 2,
}

impl Param {
    /// All parameters in storage order.
    pub const ALL: [Param; 3] = [Param::Beta, Param::Gamma, Param::Mort];

    /// Storage index (β → 0, γ → 1, m → 2).
    pub fn index(self) -> usize {
        self as usize
    }

    /// Lower-case name used in configs and reports.
    pub fn label(self) -> &'static str {
        match self {
            Param::Beta => "beta",
            Param::Gamma => "gamma",
            Param::Mort => "mort",
        }
    }
}

impl std::fmt::Display for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Param {
    type Err = Error;

    /// Accepts the labels `beta`, `gamma`, and `mort` (with `m` as a
    /// shorthand for the mortality rate), case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "beta" => Ok(Param::Beta),
            "gamma" => Ok(Param::Gamma),
            "m" | "mort" => Ok(Param::Mort),
            other => Err(Error::Config(format!(
                "unknown parameter name '{other}' (expected beta, gamma, or m)"
            ))),
        }
    }
}

/// Whether a parameter participates in optimisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Optimised; clipped to its bounds by projection.
    Variable,
    /// Held at its current value; never touched by projection or updates.
    Fixed,
}

/// Internal representation of one parameter's time dependence.
#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Constant(f64),
    /// Piecewise-linear nodal values on the shared grid.
    Nodal(Vec<f64>),
}

/// The three model parameters (β, γ, m), each either constant or
/// piecewise-linear in time, with per-entry bounds and a variable/fixed
/// marker.
///
/// Time-dependent entries share a single [`TimeGrid`] — the same grid the
/// state is sampled on — so nodal parameter values, state samples, and
/// gradient entries stay aligned.
///
/// # Examples
///
/// ```
/// use sirdfit::model::{Param, ParamKind, ParameterVector};
///
/// let alpha = ParameterVector::constant([0.03, 0.6, 0.0])
///     .with_kind(Param::Mort, ParamKind::Fixed);
/// assert_eq!(alpha.value_at(Param::Beta, 5.0), 0.03);
/// assert_eq!(alpha.variable_dof(), 2);
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    reprs: [Repr; 3],
    kinds: [ParamKind; 3],
    bounds: [(f64, f64); 3],
    /// Shared grid for `Repr::Nodal` entries; `None` while all constant.
    grid: Option<TimeGrid>,
}

impl ParameterVector {
    /// Three constant parameters `(β, γ, m)`, all variable, with default
    /// bounds `[0, 1]`.
    pub fn constant(values: [f64; 3]) -> Self {
        Self {
            reprs: [
                Repr::Constant(values[0]),
                Repr::Constant(values[1]),
                Repr::Constant(values[2]),
            ],
            kinds: [ParamKind::Variable; 3],
            bounds: [(0.0, 1.0); 3],
            grid: None,
        }
    }

    /// Sets the variable/fixed marker of one entry.
    pub fn with_kind(mut self, p: Param, kind: ParamKind) -> Self {
        self.kinds[p.index()] = kind;
        self
    }

    /// Sets the box bounds of one entry.
    ///
    /// # Errors
    ///
    /// Bounds must satisfy `0 ≤ lo < hi` and be finite.
    pub fn with_bounds(mut self, p: Param, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi) {
            return Err(Error::Config(format!(
                "bounds for {} must satisfy 0 <= lo < hi (got [{lo}, {hi}])",
                p.label()
            )));
        }
        self.bounds[p.index()] = (lo, hi);
        Ok(self)
    }

    /// Converts one entry to a piecewise-linear function on `grid`,
    /// replicating its current constant value at every node.
    ///
    /// # Errors
    ///
    /// All time-dependent entries must share one grid; a second call with a
    /// different grid is a configuration error, as is converting an entry
    /// twice.
    pub fn make_time_dependent(&mut self, p: Param, grid: &TimeGrid) -> Result<()> {
        if let Some(existing) = &self.grid {
            if existing.nodes() != grid.nodes() {
                return Err(Error::Config(
                    "time-dependent parameters must share a single time grid".into(),
                ));
            }
        }
        let i = p.index();
        let value = match self.reprs[i] {
            Repr::Constant(v) => v,
            Repr::Nodal(_) => {
                return Err(Error::Config(format!(
                    "parameter {} is already time-dependent",
                    p.label()
                )))
            }
        };
        self.reprs[i] = Repr::Nodal(vec![value; grid.len()]);
        self.grid = Some(grid.clone());
        Ok(())
    }

    /// Value of parameter `p` at time `t` (times outside the grid span are
    /// clamped onto it; constants ignore `t`).
    pub fn value_at(&self, p: Param, t: f64) -> f64 {
        match &self.reprs[p.index()] {
            Repr::Constant(v) => *v,
            Repr::Nodal(values) => {
                let grid = self.grid.as_ref().expect("nodal entry always has a grid");
                let t = t.clamp(0.0, grid.horizon());
                let seg = grid.segment_of(t);
                let (t0, t1) = (grid.nodes()[seg], grid.nodes()[seg + 1]);
                let w = (t - t0) / (t1 - t0);
                values[seg] + w * (values[seg + 1] - values[seg])
            }
        }
    }

    /// All three parameter values at time `t`.
    pub fn values_at(&self, t: f64) -> [f64; 3] {
        [
            self.value_at(Param::Beta, t),
            self.value_at(Param::Gamma, t),
            self.value_at(Param::Mort, t),
        ]
    }

    /// The constant value of `p`, or `None` if it is time-dependent.
    pub fn as_constant(&self, p: Param) -> Option<f64> {
        match self.reprs[p.index()] {
            Repr::Constant(v) => Some(v),
            Repr::Nodal(_) => None,
        }
    }

    /// Nodal values of `p`, or `None` if it is constant.
    pub fn node_values(&self, p: Param) -> Option<&[f64]> {
        match &self.reprs[p.index()] {
            Repr::Constant(_) => None,
            Repr::Nodal(values) => Some(values),
        }
    }

    /// Overwrites a constant entry's value.
    ///
    /// # Errors
    ///
    /// Fails on time-dependent entries (use [`Self::set_node_values`]).
    pub fn set_constant(&mut self, p: Param, value: f64) -> Result<()> {
        match &mut self.reprs[p.index()] {
            Repr::Constant(v) => {
                *v = value;
                Ok(())
            }
            Repr::Nodal(_) => Err(Error::Config(format!(
                "parameter {} is time-dependent; set nodal values instead",
                p.label()
            ))),
        }
    }

    /// Overwrites the nodal values of a time-dependent entry.
    ///
    /// # Errors
    ///
    /// Fails on constant entries or on a length mismatch with the grid.
    pub fn set_node_values(&mut self, p: Param, values: &[f64]) -> Result<()> {
        let expected = self.grid.as_ref().map(TimeGrid::len).unwrap_or(0);
        match &mut self.reprs[p.index()] {
            Repr::Nodal(stored) if values.len() == expected => {
                stored.copy_from_slice(values);
                Ok(())
            }
            Repr::Nodal(_) => Err(Error::Config(format!(
                "parameter {} expects {expected} nodal values, got {}",
                p.label(),
                values.len()
            ))),
            Repr::Constant(_) => Err(Error::Config(format!(
                "parameter {} is constant; set a constant value instead",
                p.label()
            ))),
        }
    }

    /// Variable/fixed marker of `p`.
    pub fn kind(&self, p: Param) -> ParamKind {
        self.kinds[p.index()]
    }

    /// Box bounds `(lo, hi)` of `p`.
    pub fn bounds(&self, p: Param) -> (f64, f64) {
        self.bounds[p.index()]
    }

    /// Shared grid of the time-dependent entries, if any exist.
    pub fn grid(&self) -> Option<&TimeGrid> {
        self.grid.as_ref()
    }

    /// `true` if any entry is time-dependent.
    pub fn is_time_dependent(&self) -> bool {
        self.reprs.iter().any(|r| matches!(r, Repr::Nodal(_)))
    }

    /// The variable parameters, in storage order.
    pub fn variable_params(&self) -> Vec<Param> {
        Param::ALL
            .into_iter()
            .filter(|p| self.kinds[p.index()] == ParamKind::Variable)
            .collect()
    }

    /// Number of optimisation unknowns: one per variable constant entry,
    /// one per grid node for variable time-dependent entries.
    pub fn variable_dof(&self) -> usize {
        Param::ALL
            .into_iter()
            .filter(|p| self.kinds[p.index()] == ParamKind::Variable)
            .map(|p| match &self.reprs[p.index()] {
                Repr::Constant(_) => 1,
                Repr::Nodal(values) => values.len(),
            })
            .sum()
    }

    /// Clips every *variable* entry into its bounds (node-wise for
    /// time-dependent entries); fixed entries are never touched.
    pub fn clamp_to_bounds(&mut self) {
        for p in Param::ALL {
            let i = p.index();
            if self.kinds[i] == ParamKind::Fixed {
                continue;
            }
            let (lo, hi) = self.bounds[i];
            match &mut self.reprs[i] {
                Repr::Constant(v) => *v = v.clamp(lo, hi),
                Repr::Nodal(values) => {
                    for v in values.iter_mut() {
                        *v = v.clamp(lo, hi);
                    }
                }
            }
        }
    }
}

/// Tolerances of the forward and backward solves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveSettings {
    /// Relative integration tolerance.
    pub rel_tol: f64,
    /// Absolute integration tolerance.
    pub abs_tol: f64,
    /// Invariant-validation tolerance, relative to the population: a
    /// trajectory may dip to `−tol_inv·n` or overshoot the total by
    /// `tol_inv·n` without complaint; excursions up to ten times that warn,
    /// and anything beyond is an error (the integrator tolerance is too
    /// loose for the requested run).
    pub tol_inv: f64,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            tol_inv: 1e-6,
        }
    }
}

/// A forward solve sampled on the fitting grid: per-node state `ρ` and
/// derivative `dρ/dt`, plus the data needed to rebuild interpolants.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    grid: TimeGrid,
    /// Node-major storage: node `k` occupies `rho[3k..3k+3]`.
    rho: Vec<f64>,
    rho_dot: Vec<f64>,
    population: f64,
    rho0: [f64; 3],
    /// Invariant excursions within ten times the validation tolerance.
    warnings: Vec<String>,
}

impl StateTrajectory {
    /// The sampling grid.
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Number of grid nodes.
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    /// `true` if the trajectory has no nodes (never the case after a solve).
    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// State at node `k`.
    pub fn rho_at(&self, k: usize) -> &[f64] {
        &self.rho[3 * k..3 * k + 3]
    }

    /// Time derivative at node `k` (an exact right-hand-side evaluation).
    pub fn rho_dot_at(&self, k: usize) -> &[f64] {
        &self.rho_dot[3 * k..3 * k + 3]
    }

    /// Flat node-major state values (3 per node).
    pub fn rho_flat(&self) -> &[f64] {
        &self.rho
    }

    /// State at the final time `T`.
    pub fn final_rho(&self) -> [f64; 3] {
        let v = self.rho_at(self.len() - 1);
        [v[0], v[1], v[2]]
    }

    /// Population `n = ρ_S(0) + ρ_I(0) + ρ_R(0)`.
    pub fn population(&self) -> f64 {
        self.population
    }

    /// Initial state.
    pub fn rho0(&self) -> [f64; 3] {
        self.rho0
    }

    /// Invariant-excursion warnings collected during validation (empty for
    /// a clean solve).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Time and height of the infected-curve maximum over the grid nodes.
    pub fn infected_peak(&self) -> (f64, f64) {
        let mut best = (self.grid.nodes()[0], self.rho[1]);
        for k in 0..self.len() {
            let infected = self.rho[3 * k + 1];
            if infected > best.1 {
                best = (self.grid.nodes()[k], infected);
            }
        }
        best
    }

    /// Cubic Hermite interpolant of the trajectory on its grid — the same
    /// curve the objectives and the adjoint source evaluate.
    pub fn interpolant(&self) -> Interpolant {
        Interpolant::cubic_hermite(self.grid.clone(), self.rho.clone(), self.rho_dot.clone(), 3)
            .expect("trajectory storage is grid-shaped by construction")
    }
}

/// A backward solve sampled on the fitting grid: per-node adjoint `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory {
    grid: TimeGrid,
    /// Node-major storage: node `k` occupies `q[3k..3k+3]`.
    q: Vec<f64>,
    terminal: [f64; 3],
}

impl AdjointTrajectory {
    /// The sampling grid (same as the state's).
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Number of grid nodes.
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    /// `true` if the trajectory has no nodes (never the case after a solve).
    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Adjoint at node `k`.
    pub fn q_at(&self, k: usize) -> &[f64] {
        &self.q[3 * k..3 * k + 3]
    }

    /// Flat node-major adjoint values (3 per node).
    pub fn q_flat(&self) -> &[f64] {
        &self.q
    }

    /// Terminal condition `q(T)` (zero unless the objective has a terminal
    /// observation term).
    pub fn terminal(&self) -> [f64; 3] {
        self.terminal
    }

    /// The Lagrange multiplier of the initial condition, `p = q(0)`.
    pub fn multiplier(&self) -> [f64; 3] {
        let v = self.q_at(0);
        [v[0], v[1], v[2]]
    }
}

/// Right-hand side of the SIRD system at one instant.
///
/// Returns `(−βρ_Sρ_I, βρ_Sρ_I − γρ_I − mρ_I, γρ_I)`; the component sum is
/// `−m·ρ_I`, so total population is conserved exactly when `m = 0`.
pub fn state_rhs(rho: &[f64; 3], alpha: &[f64; 3]) -> [f64; 3] {
    let [beta, gamma, mort] = *alpha;
    let infection = beta * rho[0] * rho[1];
    [
        -infection,
        infection - gamma * rho[1] - mort * rho[1],
        gamma * rho[1],
    ]
}

/// Jacobian `∂f/∂ρ` of [`state_rhs`] (rows differentiate one component of
/// `f`, columns vary one component of `ρ`).
pub fn state_jacobian(rho: &[f64; 3], alpha: &[f64; 3]) -> Matrix3<f64> {
    let [beta, gamma, mort] = *alpha;
    Matrix3::new(
        -beta * rho[1],
        -beta * rho[0],
        0.0,
        beta * rho[1],
        beta * rho[0] - gamma - mort,
        0.0,
        0.0,
        gamma,
        0.0,
    )
}

/// Right-hand side of the (time-forward) adjoint system,
/// `dq/dt = −(∂f/∂ρ)ᵀ q − ∂r/∂ρ`, written out component-wise:
///
/// ```text
/// dq_S/dt = βρ_I (q_S − q_I)                        − ∂r/∂ρ_S
/// dq_I/dt = βρ_S (q_S − q_I) + γ(q_I − q_R) + m q_I − ∂r/∂ρ_I
/// dq_R/dt =                                         − ∂r/∂ρ_R
/// ```
pub fn adjoint_rhs(q: &[f64; 3], rho: &[f64; 3], alpha: &[f64; 3], drdrho: &[f64; 3]) -> [f64; 3] {
    let [beta, gamma, mort] = *alpha;
    let transfer = q[0] - q[1];
    [
        beta * rho[1] * transfer - drdrho[0],
        beta * rho[0] * transfer + gamma * (q[1] - q[2]) + mort * q[1] - drdrho[1],
        -drdrho[2],
    ]
}

/// Integrates the SIRD system from `rho0` over the grid's span and samples
/// state and derivative at every grid node.
///
/// The population `n` is the sum of `rho0`. After sampling, the invariant
/// region is validated: components may not dip below `−tol_inv·n`, the
/// total may not exceed `n·(1 + tol_inv)`, and the total may not increase
/// node-to-node by more than `tol_inv·n`. Excursions within ten times the
/// tolerance are recorded as warnings on the trajectory; larger ones fail,
/// signalling that the integration tolerances are too loose.
///
/// # Errors
///
/// - [`Error::Config`] for a negative/non-finite initial state, a zero
///   population, or time-dependent parameters living on a different grid.
/// - [`Error::Ode`] if the integrator fails.
/// - [`Error::Numerics`] for invariant violations beyond ten times
///   `tol_inv·n`.
///
/// # Examples
///
/// ```
/// use sirdfit::grid::chebyshev_grid;
/// use sirdfit::model::{solve_state, ParameterVector, SolveSettings};
///
/// let alpha = ParameterVector::constant([0.03, 0.6, 0.0]);
/// let grid = chebyshev_grid(40, 10.0)?;
/// let state = solve_state(&alpha, [199.0, 1.0, 0.0], &grid, &SolveSettings::default())?;
/// assert_eq!(state.population(), 200.0);
/// # Ok::<(), sirdfit::Error>(())
/// ```
pub fn solve_state(
    alpha: &ParameterVector,
    rho0: [f64; 3],
    grid: &TimeGrid,
    settings: &SolveSettings,
) -> Result<StateTrajectory> {
    if rho0.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Config(format!(
            "initial state must be non-negative and finite (got {rho0:?})"
        )));
    }
    let population: f64 = rho0.iter().sum();
    if population <= 0.0 {
        return Err(Error::Config("initial population must be positive".into()));
    }
    if let Some(pgrid) = alpha.grid() {
        if pgrid.nodes() != grid.nodes() {
            return Err(Error::Config(
                "time-dependent parameters must live on the solve grid".into(),
            ));
        }
    }

    let horizon = grid.horizon();
    let problem = IvpProblem {
        rhs: |t: f64, y: &[f64], dy: &mut [f64]| {
            let rho = [y[0], y[1], y[2]];
            let a = alpha.values_at(t);
            dy.copy_from_slice(&state_rhs(&rho, &a));
        },
        y0: rho0.to_vec(),
        t_span: (0.0, horizon),
        rel_tol: settings.rel_tol,
        abs_tol: settings.abs_tol,
    };
    let path = integrate(&problem)?;
    let rho = sample(&path, grid.nodes())?;

    let mut rho_dot = vec![0.0; rho.len()];
    for (k, &t) in grid.nodes().iter().enumerate() {
        let r = [rho[3 * k], rho[3 * k + 1], rho[3 * k + 2]];
        let a = alpha.values_at(t);
        rho_dot[3 * k..3 * k + 3].copy_from_slice(&state_rhs(&r, &a));
    }

    let mut trajectory = StateTrajectory {
        grid: grid.clone(),
        rho,
        rho_dot,
        population,
        rho0,
        warnings: Vec::new(),
    };
    validate_invariants(&mut trajectory, settings.tol_inv)?;
    Ok(trajectory)
}

/// Checks the invariant region on the sampled grid; excursions within ten
/// times the tolerance become warnings, larger ones are an error.
fn validate_invariants(trajectory: &mut StateTrajectory, tol_inv: f64) -> Result<()> {
    let n = trajectory.population;
    let tol = tol_inv * n;
    let mut min_component = f64::INFINITY;
    let mut max_total = f64::NEG_INFINITY;
    let mut max_increase = 0.0f64;
    let mut previous_total = f64::INFINITY;
    for k in 0..trajectory.len() {
        let r = trajectory.rho_at(k);
        min_component = min_component.min(r[0].min(r[1]).min(r[2]));
        let total = r[0] + r[1] + r[2];
        max_total = max_total.max(total);
        if k > 0 {
            max_increase = max_increase.max(total - previous_total);
        }
        previous_total = total;
    }

    let mut check = |violation: f64, what: &str| -> Result<()> {
        if violation <= tol {
            Ok(())
        } else if violation <= 10.0 * tol {
            trajectory.warnings.push(format!(
                "{what} exceeds the validation tolerance ({violation:.3e} > {tol:.3e}); \
                 consider tightening the integration tolerances"
            ));
            Ok(())
        } else {
            Err(Error::Numerics(format!(
                "{what} violates the invariant region ({violation:.3e} > 10×{tol:.3e}); \
                 the integration tolerances are too loose"
            )))
        }
    };
    check(-min_component, "a negative compartment excursion")?;
    check(max_total - n, "the total population overshoot")?;
    check(max_increase, "a node-to-node total-population increase")?;
    Ok(())
}

/// Terminal condition of the adjoint for a given objective form: zero for
/// the running-cost-only forms, the weighted terminal misfit
/// `ϑ² ⊙ (ρ(T) − ρ̂(T))` when a terminal observation term is present.
fn adjoint_terminal(
    spec: &ObjectiveSpec,
    final_rho: [f64; 3],
    target_at_horizon: [f64; 3],
) -> [f64; 3] {
    match spec.form() {
        ObjectiveForm::Tracking | ObjectiveForm::Tikhonov { .. } => [0.0; 3],
        ObjectiveForm::TikhonovTerminal { vartheta, .. } => {
            let mut q = [0.0; 3];
            for i in 0..3 {
                q[i] = vartheta[i] * vartheta[i] * (final_rho[i] - target_at_horizon[i]);
            }
            q
        }
        ObjectiveForm::DataDriven { vartheta_sq, .. } => {
            let mut q = [0.0; 3];
            for i in 0..3 {
                q[i] = vartheta_sq[i] * (final_rho[i] - target_at_horizon[i]);
            }
            q
        }
    }
}

/// Solves the adjoint system backwards from `T` and samples it on the
/// state's grid.
///
/// The system is integrated in the reversed variable `τ = T − t` (so the
/// shared forward solver applies), restarting at every discontinuity of the
/// target so each leg sees a smooth source. The state `ρ(t)` inside the
/// right-hand side is evaluated from the trajectory's cubic Hermite
/// interpolant — the same curve the objective integrates — which keeps the
/// assembled gradient consistent with the evaluated cost.
///
/// The source term is `∂r/∂ρ = ρ(t) − ρ̂(t)` (all objective forms share the
/// tracking misfit; regularisation and penalty terms do not depend on `ρ`).
/// The terminal condition is zero unless the objective carries a terminal
/// observation, in which case `q(T) = ϑ² ⊙ (ρ(T) − ρ̂(T))`.
///
/// # Errors
///
/// Integrator failures are propagated; a non-finite adjoint is a numerical
/// error.
pub fn solve_adjoint(
    state: &StateTrajectory,
    alpha: &ParameterVector,
    spec: &ObjectiveSpec,
    target: &Target,
    settings: &SolveSettings,
) -> Result<AdjointTrajectory> {
    let grid = state.grid();
    let nodes = grid.nodes();
    let horizon = grid.horizon();
    let node_count = nodes.len();

    let rho_itp = state.interpolant();
    let target_itp = target.interpolant();
    let target_at_horizon = {
        let v = target_itp.eval(horizon)?;
        [v[0], v[1], v[2]]
    };
    let terminal = adjoint_terminal(spec, state.final_rho(), target_at_horizon);

    // Reversed-time leg boundaries: τ = 0 at t = T, then one boundary per
    // target discontinuity (visited in decreasing t), then τ = T.
    let mut tau_bounds = vec![0.0];
    for &t_jump in target_itp.discontinuities().iter().rev() {
        tau_bounds.push(horizon - t_jump);
    }
    tau_bounds.push(horizon);

    let mut q = vec![0.0; 3 * node_count];
    q[3 * (node_count - 1)..].copy_from_slice(&terminal);
    let mut current = terminal.to_vec();
    // Next node to fill, walking from t = T (τ = 0) down to t = 0 (τ = T).
    let mut unfilled = node_count - 1;

    for w in tau_bounds.windows(2) {
        let (tau_lo, tau_hi) = (w[0], w[1]);
        // Between two discontinuities a piecewise-constant target is a
        // single constant cell; evaluating it once at the leg midpoint
        // avoids sampling the wrong side of a jump at the leg boundary.
        let leg_target: Option<[f64; 3]> = if target_itp.discontinuities().is_empty() {
            None
        } else {
            let t_mid = horizon - 0.5 * (tau_lo + tau_hi);
            let v = target_itp.eval(t_mid)?;
            Some([v[0], v[1], v[2]])
        };

        let problem = IvpProblem {
            rhs: |tau: f64, p: &[f64], dp: &mut [f64]| {
                let t = (horizon - tau).clamp(0.0, horizon);
                let mut rho = [0.0; 3];
                rho_itp
                    .eval_into(t, &mut rho)
                    .expect("reversed time stays inside the state span");
                let rho_hat = match leg_target {
                    Some(constant) => constant,
                    None => {
                        let mut v = [0.0; 3];
                        target_itp
                            .eval_into(t, &mut v)
                            .expect("reversed time stays inside the target span");
                        v
                    }
                };
                let source = [rho[0] - rho_hat[0], rho[1] - rho_hat[1], rho[2] - rho_hat[2]];
                let a = alpha.values_at(t);
                let pq = [p[0], p[1], p[2]];
                // dq/dt = −Jᵀq − ∂r/∂ρ flips sign under τ = T − t.
                let forward = adjoint_rhs(&pq, &rho, &a, &source);
                dp[0] = -forward[0];
                dp[1] = -forward[1];
                dp[2] = -forward[2];
            },
            y0: current.clone(),
            t_span: (tau_lo, tau_hi),
            rel_tol: settings.rel_tol,
            abs_tol: settings.abs_tol,
        };
        let leg = integrate(&problem)?;

        while unfilled > 0 {
            let k = unfilled - 1;
            let tau_k = horizon - nodes[k];
            if tau_k > tau_hi {
                break;
            }
            leg.sample_into(tau_k, &mut q[3 * k..3 * k + 3])?;
            unfilled = k;
        }
        current = leg.final_value().to_vec();
    }

    if unfilled != 0 {
        return Err(Error::Numerics(
            "adjoint sampling failed to cover the grid (mismatched spans)".into(),
        ));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerics("adjoint solve produced non-finite values".into()));
    }

    Ok(AdjointTrajectory {
        grid: grid.clone(),
        q,
        terminal,
    })
}

/// Basic reproduction number `R0 = nβ/(γ + m)`: the expected number of
/// secondary infections from one index case in a fully susceptible
/// population.
///
/// # Errors
///
/// Undefined when `γ + m = 0`.
///
/// # Examples
///
/// ```
/// use sirdfit::model::basic_reproduction_number;
///
/// assert_eq!(basic_reproduction_number(&[0.03, 0.6, 0.0], 200.0)?, 10.0);
/// # Ok::<(), sirdfit::Error>(())
/// ```
pub fn basic_reproduction_number(alpha: &[f64; 3], population: f64) -> Result<f64> {
    let [beta, gamma, mort] = *alpha;
    if gamma + mort <= 0.0 {
        return Err(Error::Numerics(
            "the basic reproduction number is undefined for gamma + m = 0".into(),
        ));
    }
    Ok(population * beta / (gamma + mort))
}

/// Elasticities (normalised sensitivity indices) of `R0` with respect to
/// `(β, γ, m)`: the relative change of `R0` per relative change of each
/// rate, `(1, −γ/(γ+m), −m/(γ+m))`.
///
/// A value of `1` for β means doubling the contact rate doubles `R0`;
/// negative entries for γ and m mean faster removal lowers it.
///
/// # Errors
///
/// Undefined when `γ + m = 0`.
pub fn sensitivity_indices(alpha: &[f64; 3]) -> Result<[f64; 3]> {
    let [_, gamma, mort] = *alpha;
    let removal = gamma + mort;
    if removal <= 0.0 {
        return Err(Error::Numerics(
            "sensitivity indices are undefined for gamma + m = 0".into(),
        ));
    }
    Ok([1.0, -gamma / removal, -mort / removal])
}
