//! Experiment orchestration: declarative run configurations, target
//! construction, multi-algorithm fitting, landscape grids, and file export.
//!
//! This module is the I/O layer around the numerical core. An
//! [`ExperimentConfig`] describes a complete fitting run in plain data and
//! loads from a TOML document; [`run_fit`] executes it into a
//! [`RunRecord`]; [`grid_search`] sweeps the reduced objective over one or
//! two parameter axes; [`export_results`] writes a text summary, iteration
//! histories, and fitted curves to files. Targets come from three sources:
//! a forward solve at known parameters ([`synthesize_known_target`]), a
//! deterministically distorted solve averaged over cells
//! ([`synthesize_noisy_target`]), or an external CSV of compartment counts
//! ([`load_csv_target`]).
//!
//! All CSV output is comma-separated UTF-8 with a header row and
//! decimal-point floats formatted so that re-parsing reproduces the exact
//! binary values.

use crate::grid::{chebyshev_grid, rolling_average_fn, GridKind, Interpolant, TimeGrid};
use crate::model::{
    basic_reproduction_number, sensitivity_indices, solve_state, Param, ParamKind,
    ParameterVector, SolveSettings,
};
use crate::objective::{
    check_stationarity, evaluate_reduced_cost, invert_target_rates, reduced_gradient,
    ObjectiveForm, ObjectiveSpec, ProblemSetup, ReducedProblem, Target, TargetProvenance,
};
use crate::optim::{
    minimize, Algorithm, FistaConstants, FitResult, IterationRecord, LmBfgsConstants,
    NmApgConstants, OptimizerConfig,
};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};
use std::{fs, io::Write as _};

/// Column names used when reading compartment counts from CSV. Matching is
/// ASCII case-insensitive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvColumns {
    /// Sample-time column.
    pub time: String,
    /// Susceptible-count column.
    pub susceptible: String,
    /// Infected-count column.
    pub infected: String,
    /// Recovered-count column.
    pub recovered: String,
}

impl Default for CsvColumns {
    fn default() -> Self {
        Self {
            time: "time".into(),
            susceptible: "susceptible".into(),
            infected: "infected".into(),
            recovered: "recovered".into(),
        }
    }
}

/// How one rate enters the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "kebab-case")]
pub enum ParameterRole {
    /// Held at `value`; excluded from optimisation.
    Fixed {
        /// The pinned value.
        value: f64,
    },
    /// One scalar unknown, starting at `initial`.
    Constant {
        /// Starting value.
        initial: f64,
    },
    /// One unknown per grid node (piecewise-linear in time), every node
    /// starting at `initial`.
    Nodal {
        /// Starting value, replicated across the grid.
        initial: f64,
    },
}

impl ParameterRole {
    /// The starting (or pinned) value.
    pub fn start_value(&self) -> f64 {
        match *self {
            ParameterRole::Fixed { value } => value,
            ParameterRole::Constant { initial } | ParameterRole::Nodal { initial } => initial,
        }
    }
}

/// Role and box bounds of one rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterConfig {
    /// Fixed, constant, or nodal.
    #[serde(flatten)]
    pub role: ParameterRole,
    /// Box bounds `[lo, hi]`; defaults to `[0, 1]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 2]>,
}

impl ParameterConfig {
    /// The effective bounds (default `[0, 1]`).
    pub fn effective_bounds(&self) -> [f64; 2] {
        self.bounds.unwrap_or([0.0, 1.0])
    }
}

/// Roles and bounds for all three rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSetup {
    /// Contact rate β.
    pub beta: ParameterConfig,
    /// Recovery rate γ.
    pub gamma: ParameterConfig,
    /// Mortality rate m.
    pub m: ParameterConfig,
}

impl ParameterSetup {
    /// The configuration of one rate.
    pub fn config_of(&self, p: Param) -> &ParameterConfig {
        match p {
            Param::Beta => &self.beta,
            Param::Gamma => &self.gamma,
            Param::Mort => &self.m,
        }
    }

    /// Builds the parameter vector at the initial guess, with roles and
    /// bounds applied (nodal entries live on `grid`).
    ///
    /// # Errors
    ///
    /// Invalid bounds are configuration errors.
    pub fn build(&self, grid: &TimeGrid) -> Result<ParameterVector> {
        let mut alpha = ParameterVector::constant([
            self.beta.role.start_value(),
            self.gamma.role.start_value(),
            self.m.role.start_value(),
        ]);
        for p in Param::ALL {
            let cfg = self.config_of(p);
            if let Some([lo, hi]) = cfg.bounds {
                alpha = alpha.with_bounds(p, lo, hi)?;
            }
            match cfg.role {
                ParameterRole::Fixed { .. } => {
                    alpha = alpha.with_kind(p, ParamKind::Fixed);
                }
                ParameterRole::Constant { .. } => {}
                ParameterRole::Nodal { .. } => alpha.make_time_dependent(p, grid)?,
            }
        }
        Ok(alpha)
    }
}

/// Objective form plus the tracking-term divisor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    /// Which cost terms to assemble.
    #[serde(flatten)]
    pub form: ObjectiveForm,
    /// Divisor for the tracking (and terminal) misfit. Omitted, it defaults
    /// to `n²`, which expresses misfits in proportions of the population.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

impl ObjectiveConfig {
    /// Resolves the spec, defaulting the scale to `population²`.
    ///
    /// # Errors
    ///
    /// Invalid weights or a non-positive scale are configuration errors.
    pub fn resolve(&self, population: f64) -> Result<ObjectiveSpec> {
        ObjectiveSpec::new(self.form.clone(), self.scale.unwrap_or(population * population))
    }
}

/// One optimiser request: an algorithm plus optional overrides of its
/// default configuration. Anything left out keeps the library default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerEntry {
    /// Which algorithm to run.
    pub algorithm: Algorithm,
    /// Iteration cap override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub it_max: Option<usize>,
    /// Iterate-discrepancy tolerance override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_a: Option<f64>,
    /// Objective-decrease tolerance override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_b: Option<f64>,
    /// Momentum-method constants override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fista: Option<FistaConstants>,
    /// Nonmonotone-method constants override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nmapg: Option<NmApgConstants>,
    /// Trust-region constants override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lmbfgs: Option<LmBfgsConstants>,
}

impl OptimizerEntry {
    /// An entry with no overrides.
    pub fn defaults(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            it_max: None,
            tol_a: None,
            tol_b: None,
            fista: None,
            nmapg: None,
            lmbfgs: None,
        }
    }

    /// The concrete optimiser configuration this entry requests.
    pub fn resolve(&self) -> OptimizerConfig {
        let mut cfg = OptimizerConfig::new(self.algorithm);
        if let Some(v) = self.it_max {
            cfg.it_max = v;
        }
        if let Some(v) = self.tol_a {
            cfg.tol_a = v;
        }
        if let Some(v) = self.tol_b {
            cfg.tol_b = v;
        }
        if let Some(v) = self.fista {
            cfg.fista = v;
        }
        if let Some(v) = self.nmapg {
            cfg.nmapg = v;
        }
        if let Some(v) = self.lmbfgs {
            cfg.lmbfgs = v;
        }
        cfg
    }
}

/// Where the fitting target comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetSource {
    /// Forward solve at a known parameter triple; refitting from anywhere
    /// can in principle reach zero misfit.
    Known {
        /// Generating parameters `(β, γ, m)`.
        alpha_star: [f64; 3],
    },
    /// Forward solve at known parameters, warped by the smooth
    /// measurement distortion `ρ ↦ ρ + 4(sin ρ − sin ρ(0))` and averaged
    /// over `cells` uniform cells (piecewise-constant target).
    Noisy {
        /// Generating parameters `(β, γ, m)`.
        alpha_star: [f64; 3],
        /// Number of averaging cells.
        cells: usize,
    },
    /// External compartment counts from a CSV file. The population and
    /// horizon are inferred from the file and cross-checked against the
    /// config.
    Csv {
        /// File path; relative paths in a loaded config resolve against the
        /// config file's directory.
        path: PathBuf,
        /// Column-name mapping.
        #[serde(default)]
        columns: CsvColumns,
        /// Raw times are divided by this (e.g. `7` for days → weeks).
        #[serde(default = "one")]
        time_divisor: f64,
        /// Raw counts are divided by this (e.g. `1e4` for tens of
        /// thousands).
        #[serde(default = "one")]
        population_divisor: f64,
    },
    /// The zero trajectory `ρ̂ ≡ 0`; used for landscape studies.
    Zero,
}

fn one() -> f64 {
    1.0
}

fn default_grid_points() -> usize {
    200
}

fn default_stationarity_tol() -> f64 {
    1e-3
}

/// How the optimisers' starting point is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Initialization {
    /// Use the configured per-parameter initial values as given.
    #[default]
    Explicit,
    /// Estimate starting values from the target itself via
    /// [`invert_target_rates`]: the model's balance laws turn data
    /// derivatives into pointwise rate estimates. The configured initial
    /// values remain the fallback wherever the data cannot support the
    /// inversion.
    InvertTarget,
}

/// A complete fitting run described as plain data.
///
/// Loadable from a TOML document (see [`ExperimentConfig::load`]); the
/// tables `parameters`, `objective`, and `target` plus the array
/// `optimizers` mirror the field structure here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Run label; names default output locations.
    pub name: String,
    /// Total population `n` (must equal the sum of `rho0`).
    pub population: f64,
    /// Initial compartment counts `(S, I, R)`.
    pub rho0: [f64; 3],
    /// Fitting horizon `T` in model time units.
    pub horizon: f64,
    /// Number of interior Chebyshev nodes; the two endpoints are always
    /// added, so the grid has `grid_points + 2` nodes.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Seed for randomised diagnostics (e.g. gradient spot-checks).
    #[serde(default)]
    pub seed: u64,
    /// Tolerance of the first-order (KKT) report computed at each
    /// algorithm's best iterate.
    #[serde(default = "default_stationarity_tol")]
    pub stationarity_tol: f64,
    /// Output directory for [`run_fit`]'s files; `None` skips writing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Forward/backward solver tolerances.
    #[serde(default)]
    pub solver: SolveSettings,
    /// How the starting point is produced from `parameters` and `target`.
    #[serde(default)]
    pub initialization: Initialization,
    /// Roles and bounds of the three rates.
    pub parameters: ParameterSetup,
    /// Objective form and scaling.
    pub objective: ObjectiveConfig,
    /// Target construction.
    pub target: TargetSource,
    /// Algorithms to run, in order. May be empty.
    #[serde(default)]
    pub optimizers: Vec<OptimizerEntry>,
}

impl ExperimentConfig {
    /// Reads a TOML config file. A relative CSV target path is resolved
    /// against the file's directory, and the result is validated.
    ///
    /// # Errors
    ///
    /// I/O failures, TOML syntax errors, and validation failures.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let TargetSource::Csv { path: csv_path, .. } = &mut config.target {
            if csv_path.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv_path = dir.join(&csv_path);
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    /// Checks dimensional and range consistency. Optimiser entries are
    /// *not* validated here — a bad entry fails its own algorithm stage
    /// inside [`run_fit`] without aborting the others.
    ///
    /// # Errors
    ///
    /// Configuration errors naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.name.trim().is_empty() {
            return fail("the run needs a non-empty name".into());
        }
        if !(self.population.is_finite() && self.population > 0.0) {
            return fail(format!("population must be positive (got {})", self.population));
        }
        if self.rho0.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return fail(format!(
                "initial split must be non-negative and finite (got {:?})",
                self.rho0
            ));
        }
        let total: f64 = self.rho0.iter().sum();
        if (total - self.population).abs() > 1e-6 * self.population {
            return fail(format!(
                "initial split sums to {total} but the population is {}",
                self.population
            ));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return fail(format!("horizon must be positive (got {})", self.horizon));
        }
        if self.grid_points == 0 {
            return fail("grid_points must be at least 1".into());
        }
        if !(self.stationarity_tol.is_finite() && self.stationarity_tol > 0.0) {
            return fail("stationarity_tol must be positive".into());
        }
        let s = &self.solver;
        if !(s.rel_tol > 0.0 && s.abs_tol > 0.0 && s.tol_inv > 0.0) {
            return fail("solver tolerances must be positive".into());
        }
        for p in Param::ALL {
            let cfg = self.parameters.config_of(p);
            let [lo, hi] = cfg.effective_bounds();
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi) {
                return fail(format!(
                    "bounds for {} must satisfy 0 <= lo < hi (got [{lo}, {hi}])",
                    p.label()
                ));
            }
            let start = cfg.role.start_value();
            if !start.is_finite() || start < lo || start > hi {
                return fail(format!(
                    "starting value {start} for {} lies outside its bounds [{lo}, {hi}]",
                    p.label()
                ));
            }
        }
        match &self.target {
            TargetSource::Known { alpha_star } | TargetSource::Noisy { alpha_star, .. } => {
                if alpha_star.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return fail(format!(
                        "generating parameters must be non-negative and finite (got {alpha_star:?})"
                    ));
                }
                if let TargetSource::Noisy { cells, .. } = &self.target {
                    if *cells == 0 {
                        return fail("the averaged target needs at least one cell".into());
                    }
                }
            }
            TargetSource::Csv {
                time_divisor,
                population_divisor,
                ..
            } => {
                if !(time_divisor.is_finite() && *time_divisor > 0.0) {
                    return fail(format!("time_divisor must be positive (got {time_divisor})"));
                }
                if !(population_divisor.is_finite() && *population_divisor > 0.0) {
                    return fail(format!(
                        "population_divisor must be positive (got {population_divisor})"
                    ));
                }
            }
            TargetSource::Zero => {}
        }
        Ok(())
    }

    /// A copy whose optimiser list is restricted to `algorithms`, in the
    /// given order; algorithms without a matching entry get defaults.
    pub fn restricted_to(&self, algorithms: &[Algorithm]) -> Self {
        let mut config = self.clone();
        config.optimizers = algorithms
            .iter()
            .map(|&a| {
                self.optimizers
                    .iter()
                    .find(|e| e.algorithm == a)
                    .cloned()
                    .unwrap_or_else(|| OptimizerEntry::defaults(a))
            })
            .collect();
        config
    }

    /// The output directory: the configured one, or `runs/<name>`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(&self.name))
    }
}

/// A target loaded from CSV, with the quantities inferred from the file.
#[derive(Debug, Clone)]
pub struct CsvTarget {
    /// Piecewise-linear target through the (rescaled) samples.
    pub target: Target,
    /// Population: the sum of the first row's compartments.
    pub population: f64,
    /// Horizon: the last (rescaled) sample time.
    pub horizon: f64,
    /// First row's (rescaled) compartments — the initial split.
    pub first_row: [f64; 3],
    /// Number of data rows.
    pub rows: usize,
}

/// Reads compartment counts from a CSV file with a header row.
///
/// Times are divided by `time_divisor` and counts by
/// `population_divisor` before use. The first sample must sit at time
/// zero, times must be strictly increasing, counts must be non-negative,
/// and at least two rows are required. Column headers are matched
/// case-insensitively against `columns`.
///
/// # Errors
///
/// Data errors carry the 1-based file line number (the header is line 1).
pub fn load_csv_target(
    path: &Path,
    columns: &CsvColumns,
    time_divisor: f64,
    population_divisor: f64,
) -> Result<CsvTarget> {
    if !(time_divisor.is_finite() && time_divisor > 0.0) {
        return Err(Error::Config(format!(
            "time_divisor must be positive (got {time_divisor})"
        )));
    }
    if !(population_divisor.is_finite() && population_divisor > 0.0) {
        return Err(Error::Config(format!(
            "population_divisor must be positive (got {population_divisor})"
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                Error::Data(format!(
                    "{}: missing column '{name}' (found: {})",
                    path.display(),
                    headers.iter().collect::<Vec<_>>().join(", ")
                ))
            })
    };
    let idx = [
        find(&columns.time)?,
        find(&columns.susceptible)?,
        find(&columns.infected)?,
        find(&columns.recovered)?,
    ];
    let names = [
        columns.time.as_str(),
        columns.susceptible.as_str(),
        columns.infected.as_str(),
        columns.recovered.as_str(),
    ];

    let mut times: Vec<f64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        let mut parsed = [0.0f64; 4];
        for (k, (&col, name)) in idx.iter().zip(names).enumerate() {
            let raw = record.get(col).ok_or_else(|| {
                Error::Data(format!("line {line}: missing field in column '{name}'"))
            })?;
            let value: f64 = raw.parse().map_err(|_| {
                Error::Data(format!(
                    "line {line}: column '{name}': '{raw}' is not a number"
                ))
            })?;
            if !value.is_finite() {
                return Err(Error::Data(format!(
                    "line {line}: column '{name}': non-finite value"
                )));
            }
            parsed[k] = value;
        }
        let t = parsed[0] / time_divisor;
        let counts = [
            parsed[1] / population_divisor,
            parsed[2] / population_divisor,
            parsed[3] / population_divisor,
        ];
        if counts.iter().any(|v| *v < 0.0) {
            return Err(Error::Data(format!("line {line}: negative count")));
        }
        if times.is_empty() && t != 0.0 {
            return Err(Error::Data(format!(
                "line {line}: the first sample must sit at time zero (got {t})"
            )));
        }
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::Data(format!(
                    "line {line}: times must be strictly increasing ({t} after {prev})"
                )));
            }
        }
        times.push(t);
        values.extend(counts);
    }
    if times.len() < 2 {
        return Err(Error::Data(format!(
            "{}: need at least two data rows (got {})",
            path.display(),
            times.len()
        )));
    }
    let first_row = [values[0], values[1], values[2]];
    let population = first_row.iter().sum();
    let horizon = *times.last().expect("nonempty");
    let rows = times.len();
    let grid = TimeGrid::from_nodes(times, GridKind::Explicit)?;
    let itp = Interpolant::linear(grid, values, 3)?;
    Ok(CsvTarget {
        target: Target::new(itp, TargetProvenance::ExternalData),
        population,
        horizon,
        first_row,
        rows,
    })
}

/// Forward-solves the model at `alpha_star` and wraps the trajectory's own
/// interpolant as the target, so refitting from the same parameters gives
/// (up to round-off) zero misfit.
///
/// # Errors
///
/// Solver failures are propagated.
pub fn synthesize_known_target(
    alpha_star: &ParameterVector,
    rho0: [f64; 3],
    grid: &TimeGrid,
    settings: &SolveSettings,
) -> Result<Target> {
    let state = solve_state(alpha_star, rho0, grid, settings)?;
    Ok(Target::from_state(&state, TargetProvenance::Synthetic))
}

/// Forward-solves at `alpha_star`, applies the component-wise measurement
/// distortion `ρ ↦ ρ + 4(sin ρ − sin ρ(0))` (which leaves the initial
/// value untouched), and averages the result over `cells` uniform cells.
/// The target is the left-continuous piecewise-constant function carrying
/// the cell means, extended to `t = T` by the last cell.
///
/// # Errors
///
/// Solver failures are propagated; `cells` must be at least 1.
pub fn synthesize_noisy_target(
    alpha_star: &ParameterVector,
    rho0: [f64; 3],
    grid: &TimeGrid,
    cells: usize,
    settings: &SolveSettings,
) -> Result<Target> {
    let state = solve_state(alpha_star, rho0, grid, settings)?;
    let itp = state.interpolant();
    let sin0 = rho0.map(f64::sin);
    let averaged = rolling_average_fn(
        |t, out| {
            itp.eval_into(t, out)?;
            for d in 0..3 {
                out[d] += 4.0 * (out[d].sin() - sin0[d]);
            }
            Ok(())
        },
        3,
        grid.horizon(),
        cells,
    )?;
    Ok(Target::new(averaged, TargetProvenance::RollingAverage))
}

/// Everything a fitting run needs, resolved from a config.
struct Prepared {
    template: ParameterVector,
    target: Target,
    spec: ObjectiveSpec,
    setup: ProblemSetup,
    population: f64,
}

fn check_consistent(label: &str, from_file: f64, from_config: f64, reference: f64) -> Result<()> {
    if (from_file - from_config).abs() > 1e-3 * reference.abs().max(1.0) {
        return Err(Error::Config(format!(
            "config says {label} = {from_config} but the data file implies {from_file}"
        )));
    }
    Ok(())
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let settings = config.solver;
    let csv = match &config.target {
        TargetSource::Csv {
            path,
            columns,
            time_divisor,
            population_divisor,
        } => {
            let loaded = load_csv_target(path, columns, *time_divisor, *population_divisor)?;
            check_consistent("population", loaded.population, config.population, loaded.population)?;
            check_consistent("horizon", loaded.horizon, config.horizon, loaded.horizon)?;
            for (i, label) in ["rho0[0]", "rho0[1]", "rho0[2]"].iter().enumerate() {
                check_consistent(label, loaded.first_row[i], config.rho0[i], loaded.population)?;
            }
            Some(loaded)
        }
        _ => None,
    };
    let (population, horizon, rho0) = match &csv {
        Some(c) => (c.population, c.horizon, c.first_row),
        None => (config.population, config.horizon, config.rho0),
    };
    let grid = chebyshev_grid(config.grid_points, horizon)?;
    let target = match &config.target {
        TargetSource::Known { alpha_star } => synthesize_known_target(
            &ParameterVector::constant(*alpha_star),
            rho0,
            &grid,
            &settings,
        )?,
        TargetSource::Noisy { alpha_star, cells } => synthesize_noisy_target(
            &ParameterVector::constant(*alpha_star),
            rho0,
            &grid,
            *cells,
            &settings,
        )?,
        TargetSource::Csv { .. } => csv.expect("loaded above").target,
        TargetSource::Zero => Target::zeros(grid.clone()),
    };
    let template = {
        let built = config.parameters.build(&grid)?;
        match config.initialization {
            Initialization::Explicit => built,
            Initialization::InvertTarget => invert_target_rates(&target, &built)?,
        }
    };
    let spec = config.objective.resolve(population)?;
    let setup = ProblemSetup {
        rho0,
        grid,
        settings,
    };
    Ok(Prepared {
        template,
        target,
        spec,
        setup,
        population,
    })
}

/// Digest of one fitted rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamSummary {
    /// Pinned for the whole run.
    Fixed {
        /// The pinned value.
        value: f64,
    },
    /// Fitted scalar.
    Constant {
        /// The fitted value.
        value: f64,
    },
    /// Fitted time profile.
    Nodal {
        /// Smallest nodal value.
        min: f64,
        /// Largest nodal value.
        max: f64,
        /// Arithmetic mean of the nodal values.
        mean: f64,
        /// Value at `t = 0`.
        start: f64,
        /// Value at `t = T`.
        end: f64,
    },
}

fn digest(alpha: &ParameterVector, p: Param) -> ParamSummary {
    match alpha.node_values(p) {
        Some(values) => {
            let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
            for &v in values {
                min = min.min(v);
                max = max.max(v);
                sum += v;
            }
            ParamSummary::Nodal {
                min,
                max,
                mean: sum / values.len() as f64,
                start: values[0],
                end: *values.last().expect("nodal entries are nonempty"),
            }
        }
        None => {
            let value = alpha.value_at(p, 0.0);
            if alpha.kind(p) == ParamKind::Fixed {
                ParamSummary::Fixed { value }
            } else {
                ParamSummary::Constant { value }
            }
        }
    }
}

/// First-order-condition digest at a best iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaritySummary {
    /// Tolerance the check ran with.
    pub tol: f64,
    /// Variable coordinates checked.
    pub total: usize,
    /// Coordinates violating their condition.
    pub violations: usize,
    /// Fraction of coordinates passing.
    pub fraction: f64,
}

/// Derived quantities for one completed fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    /// Best objective value.
    pub objective: f64,
    /// Total iterations recorded (excluding the initial point).
    pub iterations: usize,
    /// Contact-rate digest.
    pub beta: ParamSummary,
    /// Recovery-rate digest.
    pub gamma: ParamSummary,
    /// Mortality-rate digest.
    pub m: ParamSummary,
    /// Basic reproduction number `nβ/(γ+m)` — constant-rate fits only.
    pub r0: Option<f64>,
    /// Elasticities of the reproduction number — constant-rate fits only.
    pub elasticity: Option<[f64; 3]>,
    /// Normalised gradient norm at the best iterate.
    pub gradient_norm: Option<f64>,
    /// First-order-condition report at the best iterate.
    pub stationarity: Option<StationaritySummary>,
}

/// What happened to one algorithm stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    /// The stage finished; full trace plus derived quantities.
    Completed {
        /// Derived quantities.
        summary: FitSummary,
        /// Full optimisation trace.
        fit: FitResult,
    },
    /// The stage failed; the other algorithms are unaffected.
    Failed {
        /// The failure, rendered as text.
        error: String,
    },
}

/// One algorithm's slot in a run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmRun {
    /// Which algorithm ran.
    pub algorithm: Algorithm,
    /// The resolved configuration it ran with.
    pub config: OptimizerConfig,
    /// Completion or failure.
    pub outcome: RunOutcome,
}

/// The complete, reloadable result of a fitting run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// The configuration the run executed.
    pub config: ExperimentConfig,
    /// Effective population (inferred from the data file for CSV targets).
    pub population: f64,
    /// Effective horizon.
    pub horizon: f64,
    /// Library version that produced the record.
    pub crate_version: String,
    /// Creation time, seconds since the Unix epoch.
    pub created_unix: u64,
    /// Per-algorithm results, in request order.
    pub runs: Vec<AlgorithmRun>,
}

impl RunRecord {
    /// Writes the record as pretty-printed JSON.
    ///
    /// # Errors
    ///
    /// I/O failures.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("serialising run record: {e}")))?;
        fs::write(path, json)?;
        Ok(())
    }

    /// Reads a record written by [`RunRecord::save`].
    ///
    /// # Errors
    ///
    /// I/O failures and malformed JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    /// Zeroes the wall-clock fields so two records of the same run compare
    /// equal.
    pub fn normalise_timings(&mut self) {
        self.created_unix = 0;
        for run in &mut self.runs {
            if let RunOutcome::Completed { fit, .. } = &mut run.outcome {
                fit.wall_seconds = 0.0;
            }
        }
    }

    /// The completed run with the smallest best objective, if any.
    pub fn best_run(&self) -> Option<&AlgorithmRun> {
        self.runs
            .iter()
            .filter(|r| matches!(r.outcome, RunOutcome::Completed { .. }))
            .min_by(|a, b| {
                let ja = match &a.outcome {
                    RunOutcome::Completed { fit, .. } => fit.best_objective,
                    RunOutcome::Failed { .. } => f64::INFINITY,
                };
                let jb = match &b.outcome {
                    RunOutcome::Completed { fit, .. } => fit.best_objective,
                    RunOutcome::Failed { .. } => f64::INFINITY,
                };
                ja.partial_cmp(&jb).unwrap_or(std::cmp::Ordering::Equal)
            })
    }
}

fn summarize(
    problem: &ReducedProblem,
    fit: &FitResult,
    stationarity_tol: f64,
    population: f64,
) -> FitSummary {
    let alpha = problem.unpack(&fit.best());
    let constants: Option<[f64; 3]> = Param::ALL
        .iter()
        .map(|&p| alpha.as_constant(p))
        .collect::<Option<Vec<f64>>>()
        .map(|v| [v[0], v[1], v[2]]);
    let (r0, elasticity) = match constants {
        Some(a) => (
            basic_reproduction_number(&a, population).ok(),
            sensitivity_indices(&a).ok(),
        ),
        None => (None, None),
    };
    let stationarity = reduced_gradient(&alpha, problem.target(), problem.spec(), problem.setup())
        .ok()
        .map(|grad| {
            let report = check_stationarity(&alpha, &grad, stationarity_tol);
            StationaritySummary {
                tol: report.tol,
                total: report.total,
                violations: report.violations.len(),
                fraction: report.satisfied_fraction(),
            }
        });
    let gradient_norm = fit
        .history
        .iter()
        .find(|r| r.iteration == fit.best_iteration)
        .map(|r| r.gradient_norm);
    FitSummary {
        objective: fit.best_objective,
        iterations: fit.history.last().map(|r| r.iteration).unwrap_or(0),
        beta: digest(&alpha, Param::Beta),
        gamma: digest(&alpha, Param::Gamma),
        m: digest(&alpha, Param::Mort),
        r0,
        elasticity,
        gradient_norm,
        stationarity,
    }
}

fn execute_one(
    prepared: &Prepared,
    cfg: &OptimizerConfig,
    stationarity_tol: f64,
) -> Result<RunOutcome> {
    let problem = ReducedProblem::new(
        prepared.template.clone(),
        prepared.target.clone(),
        prepared.spec.clone(),
        prepared.setup.clone(),
    )?;
    let x0 = problem.pack(&prepared.template);
    let fit = minimize(&problem, &x0, cfg)?;
    let summary = summarize(&problem, &fit, stationarity_tol, prepared.population);
    Ok(RunOutcome::Completed { summary, fit })
}

/// Runs every configured algorithm on the configured problem.
///
/// Algorithms run independently (fanned out over the worker pool); a
/// failure in one is recorded in its slot without aborting the others.
/// When the config names an output directory, the record and its derived
/// files are written there via [`export_results`].
///
/// # Errors
///
/// Configuration and target-construction failures, plus export I/O
/// failures; per-algorithm failures are *not* errors.
pub fn run_fit(config: &ExperimentConfig) -> Result<RunRecord> {
    let prepared = prepare(config)?;
    let runs: Vec<AlgorithmRun> = config
        .optimizers
        .par_iter()
        .map(|entry| {
            let resolved = entry.resolve();
            let outcome = match execute_one(&prepared, &resolved, config.stationarity_tol) {
                Ok(outcome) => outcome,
                Err(e) => RunOutcome::Failed {
                    error: e.to_string(),
                },
            };
            AlgorithmRun {
                algorithm: resolved.algorithm,
                config: resolved,
                outcome,
            }
        })
        .collect();
    let record = RunRecord {
        config: config.clone(),
        population: prepared.population,
        horizon: prepared.setup.grid.horizon(),
        crate_version: env!("CARGO_PKG_VERSION").into(),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        runs,
    };
    if let Some(dir) = &config.output_dir {
        export_results(&record, dir)?;
    }
    Ok(record)
}

/// One sweep axis: `cells` equal cells over `[start, stop]`, evaluated at
/// cell centres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    /// Which rate to sweep (must be a constant variable parameter).
    pub param: Param,
    /// Left edge.
    pub start: f64,
    /// Right edge.
    pub stop: f64,
    /// Number of cells.
    pub cells: usize,
}

impl GridAxis {
    /// Cell width `(stop − start)/cells`.
    pub fn width(&self) -> f64 {
        (self.stop - self.start) / self.cells as f64
    }

    /// Centre of cell `i`.
    pub fn center(&self, i: usize) -> f64 {
        self.start + (i as f64 + 0.5) * self.width()
    }

    /// Index of the cell containing `v` (the right edge belongs to the
    /// last cell); `None` outside `[start, stop]`.
    pub fn cell_containing(&self, v: f64) -> Option<usize> {
        if !(v >= self.start && v <= self.stop) {
            return None;
        }
        let i = ((v - self.start) / self.width()).floor() as usize;
        Some(i.min(self.cells - 1))
    }

    fn validate(&self) -> Result<()> {
        if self.cells == 0 {
            return Err(Error::Config("a grid axis needs at least one cell".into()));
        }
        if !(self.start.is_finite() && self.stop.is_finite() && self.stop > self.start) {
            return Err(Error::Config(format!(
                "grid axis for {} needs start < stop (got [{}, {}])",
                self.param.label(),
                self.start,
                self.stop
            )));
        }
        Ok(())
    }
}

/// Location and value of a grid minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    /// Cell index along each axis.
    pub indices: Vec<usize>,
    /// Cell-centre coordinates along each axis.
    pub point: Vec<f64>,
    /// Objective value there.
    pub objective: f64,
}

/// A dense evaluation of the reduced objective over one or two axes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    /// The swept axes.
    pub axes: Vec<GridAxis>,
    /// Values in row-major order (first axis outermost); failed
    /// evaluations hold `NaN`.
    pub values: Vec<f64>,
    /// Location of the smallest finite value, if any evaluation succeeded.
    pub minimum: Option<GridCell>,
    /// Number of failed evaluations.
    pub failures: usize,
}

impl GridSearchResult {
    /// The value at the given per-axis cell indices.
    pub fn value_at(&self, indices: &[usize]) -> f64 {
        let flat = match self.axes.len() {
            1 => indices[0],
            _ => indices[0] * self.axes[1].cells + indices[1],
        };
        self.values[flat]
    }

    /// Writes the grid as CSV: one row per cell with the axis-centre
    /// coordinates and the objective (empty for failed cells).
    ///
    /// # Errors
    ///
    /// I/O failures.
    pub fn write_csv(&self, writer: &mut dyn std::io::Write) -> Result<()> {
        let labels: Vec<&str> = self.axes.iter().map(|a| a.param.label()).collect();
        writeln!(writer, "{},objective", labels.join(","))?;
        for (flat, value) in self.values.iter().enumerate() {
            let indices = self.unflatten(flat);
            for (ax, &i) in self.axes.iter().zip(&indices) {
                write!(writer, "{},", ax.center(i))?;
            }
            if value.is_finite() {
                writeln!(writer, "{value}")?;
            } else {
                writeln!(writer)?;
            }
        }
        Ok(())
    }

    fn unflatten(&self, flat: usize) -> Vec<usize> {
        match self.axes.len() {
            1 => vec![flat],
            _ => {
                let inner = self.axes[1].cells;
                vec![flat / inner, flat % inner]
            }
        }
    }
}

/// Evaluates the reduced objective at every cell centre of a 1- or 2-axis
/// grid (fanned out over the worker pool). Swept parameters must be
/// constant variable parameters of the config; the sweep range is *not*
/// clipped to their bounds. Non-swept parameters stay at their starting
/// values. Failed evaluations become `NaN` cells rather than errors.
///
/// # Errors
///
/// Invalid axes or configs.
pub fn grid_search(config: &ExperimentConfig, axes: &[GridAxis]) -> Result<GridSearchResult> {
    if axes.is_empty() || axes.len() > 2 {
        return Err(Error::Config(format!(
            "grid search sweeps one or two axes (got {})",
            axes.len()
        )));
    }
    for ax in axes {
        ax.validate()?;
    }
    if axes.len() == 2 && axes[0].param == axes[1].param {
        return Err(Error::Config(format!(
            "both grid axes sweep {}",
            axes[0].param.label()
        )));
    }
    let prepared = prepare(config)?;
    for ax in axes {
        if prepared.template.kind(ax.param) != ParamKind::Variable
            || prepared.template.as_constant(ax.param).is_none()
        {
            return Err(Error::Config(format!(
                "grid axes must sweep constant variable parameters ({} is not one)",
                ax.param.label()
            )));
        }
    }
    let total: usize = axes.iter().map(|a| a.cells).product();
    let inner = if axes.len() == 2 { axes[1].cells } else { 1 };
    let values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut alpha = prepared.template.clone();
            let indices = if axes.len() == 2 {
                vec![flat / inner, flat % inner]
            } else {
                vec![flat]
            };
            for (ax, &i) in axes.iter().zip(&indices) {
                if alpha.set_constant(ax.param, ax.center(i)).is_err() {
                    return f64::NAN;
                }
            }
            evaluate_reduced_cost(&alpha, &prepared.target, &prepared.spec, &prepared.setup)
                .unwrap_or(f64::NAN)
        })
        .collect();
    let failures = values.iter().filter(|v| !v.is_finite()).count();
    let mut minimum: Option<(usize, f64)> = None;
    for (flat, &v) in values.iter().enumerate() {
        if v.is_finite() && minimum.map_or(true, |(_, best)| v < best) {
            minimum = Some((flat, v));
        }
    }
    let result = GridSearchResult {
        axes: axes.to_vec(),
        values,
        minimum: None,
        failures,
    };
    let minimum = minimum.map(|(flat, objective)| {
        let indices = result.unflatten(flat);
        let point = axes
            .iter()
            .zip(&indices)
            .map(|(ax, &i)| ax.center(i))
            .collect();
        GridCell {
            indices,
            point,
            objective,
        }
    });
    Ok(GridSearchResult { minimum, ..result })
}

/// Writes iteration records as CSV (`iteration,objective,gradient_norm`);
/// an empty history yields only the header.
///
/// # Errors
///
/// I/O failures.
pub fn write_history_csv(
    history: &[IterationRecord],
    writer: &mut dyn std::io::Write,
) -> Result<()> {
    writeln!(writer, "iteration,objective,gradient_norm")?;
    for record in history {
        writeln!(
            writer,
            "{},{},{}",
            record.iteration, record.objective, record.gradient_norm
        )?;
    }
    Ok(())
}

fn describe_target(source: &TargetSource) -> String {
    match source {
        TargetSource::Known { alpha_star } => {
            format!("forward solve at alpha* = {alpha_star:?}")
        }
        TargetSource::Noisy { alpha_star, cells } => format!(
            "distorted forward solve at alpha* = {alpha_star:?}, averaged over {cells} cells"
        ),
        TargetSource::Csv { path, .. } => format!("data file {}", path.display()),
        TargetSource::Zero => "zero trajectory".into(),
    }
}

fn describe_objective(config: &ObjectiveConfig, population: f64) -> String {
    let scale = config.scale.unwrap_or(population * population);
    let form = match &config.form {
        ObjectiveForm::Tracking => "tracking".to_string(),
        ObjectiveForm::Tikhonov { theta } => format!("tracking + quadratic penalty {theta:?}"),
        ObjectiveForm::TikhonovTerminal { theta, vartheta } => format!(
            "tracking + quadratic penalty {theta:?} + terminal misfit {vartheta:?}"
        ),
        ObjectiveForm::DataDriven {
            theta_sq,
            vartheta_sq,
            upsilon,
        } => format!(
            "tracking + integrated penalty {theta_sq:?} + overshoot ({upsilon}) + terminal {vartheta_sq:?}"
        ),
    };
    format!("{form}, scale = {scale}")
}

fn describe_param_summary(s: &ParamSummary) -> String {
    match s {
        ParamSummary::Fixed { value } => format!("{value} (fixed)"),
        ParamSummary::Constant { value } => format!("{value}"),
        ParamSummary::Nodal {
            min,
            max,
            mean,
            start,
            end,
        } => format!(
            "time-dependent: range [{min:.6}, {max:.6}], mean {mean:.6}, {start:.6} -> {end:.6}"
        ),
    }
}

fn render_summary(record: &RunRecord) -> String {
    let mut out = String::new();
    let c = &record.config;
    let _ = writeln!(out, "run: {}", c.name);
    let _ = writeln!(
        out,
        "version {}, created {} (unix seconds)",
        record.crate_version, record.created_unix
    );
    let _ = writeln!(
        out,
        "population n = {}, horizon T = {}, grid: {} interior nodes + endpoints",
        record.population, record.horizon, c.grid_points
    );
    let _ = writeln!(out, "initial split rho0 = {:?}", c.rho0);
    let _ = writeln!(out, "target: {}", describe_target(&c.target));
    let _ = writeln!(
        out,
        "objective: {}",
        describe_objective(&c.objective, record.population)
    );
    for p in Param::ALL {
        let cfg = c.parameters.config_of(p);
        let [lo, hi] = cfg.effective_bounds();
        let role = match cfg.role {
            ParameterRole::Fixed { value } => format!("fixed at {value}"),
            ParameterRole::Constant { initial } => format!("constant, starts at {initial}"),
            ParameterRole::Nodal { initial } => format!("nodal, starts at {initial}"),
        };
        let _ = writeln!(out, "parameter {}: {role}, bounds [{lo}, {hi}]", p.label());
    }
    for run in &record.runs {
        let _ = writeln!(out);
        match &run.outcome {
            RunOutcome::Failed { error } => {
                let _ = writeln!(out, "algorithm {}: FAILED", run.algorithm.name());
                let _ = writeln!(out, "  {error}");
            }
            RunOutcome::Completed { summary, fit } => {
                let _ = writeln!(out, "algorithm {}: completed", run.algorithm.name());
                let _ = writeln!(
                    out,
                    "  iterations {}, best objective {:e} at iteration {}",
                    summary.iterations, fit.best_objective, fit.best_iteration
                );
                let _ = writeln!(
                    out,
                    "  stopped: {} at iteration {}",
                    fit.stop.reason, fit.stop.at_iteration
                );
                let _ = writeln!(
                    out,
                    "  wall {:.3} s, {} objective evaluations, {} gradient evaluations",
                    fit.wall_seconds, fit.objective_evals, fit.gradient_evals
                );
                let _ = writeln!(out, "  beta  = {}", describe_param_summary(&summary.beta));
                let _ = writeln!(out, "  gamma = {}", describe_param_summary(&summary.gamma));
                let _ = writeln!(out, "  m     = {}", describe_param_summary(&summary.m));
                if let Some(g) = summary.gradient_norm {
                    let _ = writeln!(out, "  normalised gradient norm {g:e}");
                }
                if let Some(r0) = summary.r0 {
                    let _ = writeln!(out, "  reproduction number R0 = {r0}");
                }
                if let Some(e) = summary.elasticity {
                    let _ = writeln!(out, "  R0 elasticities (beta, gamma, m) = {e:?}");
                }
                if let Some(s) = &summary.stationarity {
                    let _ = writeln!(
                        out,
                        "  first-order check at tol {}: {}/{} coordinates pass ({:.1}%)",
                        s.tol,
                        s.total - s.violations,
                        s.total,
                        100.0 * s.fraction
                    );
                }
            }
        }
    }
    out
}

/// File name for the `idx`-th run of `algorithm`, unique within a record
/// even when an algorithm appears twice.
fn stage_file_name(record: &RunRecord, idx: usize, prefix: &str) -> String {
    let algorithm = record.runs[idx].algorithm;
    let repeats_before = record.runs[..idx]
        .iter()
        .filter(|r| r.algorithm == algorithm)
        .count();
    if repeats_before == 0 {
        format!("{prefix}_{}.csv", algorithm.name())
    } else {
        format!("{prefix}_{}_{}.csv", algorithm.name(), repeats_before + 1)
    }
}

/// Writes the full result suite for a record into `dir` (created if
/// missing): `record.json`, `summary.txt`, and per-completed-algorithm
/// `history_*.csv` (iteration vs objective, for convergence plots),
/// `curve_*.csv` (fitted state next to the target on the fitting grid),
/// and `parameters_*.csv` (rate profiles, for time-dependent fits).
/// Returns the written paths.
///
/// # Errors
///
/// Unwritable paths, plus re-preparation failures (curves re-solve the
/// state at each best iterate).
pub fn export_results(record: &RunRecord, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let record_path = dir.join("record.json");
    record.save(&record_path)?;
    written.push(record_path);

    let summary_path = dir.join("summary.txt");
    fs::write(&summary_path, render_summary(record))?;
    written.push(summary_path);

    let needs_curves = record
        .runs
        .iter()
        .any(|r| matches!(r.outcome, RunOutcome::Completed { .. }));
    if !needs_curves {
        return Ok(written);
    }
    let prepared = prepare(&record.config)?;
    let problem = ReducedProblem::new(
        prepared.template.clone(),
        prepared.target.clone(),
        prepared.spec.clone(),
        prepared.setup.clone(),
    )?;
    let grid = &prepared.setup.grid;
    let target_values = prepared.target.values_on(grid)?;

    for (idx, run) in record.runs.iter().enumerate() {
        let RunOutcome::Completed { fit, .. } = &run.outcome else {
            continue;
        };

        let history_path = dir.join(stage_file_name(record, idx, "history"));
        let mut file = fs::File::create(&history_path)?;
        write_history_csv(&fit.history, &mut file)?;
        written.push(history_path);

        let alpha = problem.unpack(&fit.best());
        let state = solve_state(&alpha, prepared.setup.rho0, grid, &prepared.setup.settings)?;
        let curve_path = dir.join(stage_file_name(record, idx, "curve"));
        let mut file = fs::File::create(&curve_path)?;
        writeln!(
            file,
            "time,susceptible,infected,recovered,target_susceptible,target_infected,target_recovered"
        )?;
        for (k, &t) in grid.nodes().iter().enumerate() {
            let rho = state.rho_at(k);
            let tv = &target_values[3 * k..3 * k + 3];
            writeln!(
                file,
                "{t},{},{},{},{},{},{}",
                rho[0], rho[1], rho[2], tv[0], tv[1], tv[2]
            )?;
        }
        written.push(curve_path);

        if alpha.is_time_dependent() {
            let params_path = dir.join(stage_file_name(record, idx, "parameters"));
            let mut file = fs::File::create(&params_path)?;
            writeln!(file, "time,beta,gamma,m")?;
            for &t in grid.nodes() {
                writeln!(
                    file,
                    "{t},{},{},{}",
                    alpha.value_at(Param::Beta, t),
                    alpha.value_at(Param::Gamma, t),
                    alpha.value_at(Param::Mort, t)
                )?;
            }
            written.push(params_path);
        }
    }
    Ok(written)
}
