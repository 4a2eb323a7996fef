// scratch probe (not committed)
use nalgebra::DVector;
use sirdfit::grid::{chebyshev_grid, uniform_grid, GridKind, Interpolant, TimeGrid};
use sirdfit::model::{solve_state, Param, ParameterVector};
use sirdfit::objective::{
    check_stationarity, ProblemSetup, ReducedProblem, Target, TargetProvenance,
};
use sirdfit::optim::{minimize, Algorithm, OptimizerConfig};
use sirdfit::workbench::ExperimentConfig;
use std::path::Path;

const T: f64 = 60.0 / 7.0;

fn truth_laws(t: f64) -> [f64; 3] {
    [
        0.0030 - 0.0008 * (t / T),
        0.60 - 0.10 * (t / T),
        0.010 + 0.005 * (t / T),
    ]
}

fn main() {
    let config =
        ExperimentConfig::load(Path::new("crates/sirdfit/tests/fixtures/exp3.toml")).unwrap();
    let spec = config.objective.resolve(585.0).unwrap();
    let rho0 = [584.0, 1.0, 0.0];
    let grid = chebyshev_grid(config.grid_points, T).unwrap();

    // Fine-grid reference solve for honest sampling.
    let fine = uniform_grid(1921, T).unwrap();
    let mut truth_fine = ParameterVector::constant([0.0030, 0.60, 0.010]);
    truth_fine = truth_fine.with_bounds(Param::Beta, 0.0, 0.01).unwrap();
    for p in Param::ALL {
        truth_fine.make_time_dependent(p, &fine).unwrap();
        let vals: Vec<f64> =
            fine.nodes().iter().map(|&t| truth_laws(t)[p.index()]).collect();
        truth_fine.set_node_values(p, &vals).unwrap();
    }
    let reference = solve_state(&truth_fine, rho0, &fine, &config.solver).unwrap();
    let ritp = reference.interpolant();

    let per_day = 8usize;
    let n_samples = 60 * per_day + 1;
    let times: Vec<f64> = (0..n_samples)
        .map(|i| (i as f64) / (per_day as f64) / 7.0)
        .collect();
    let mut flat = Vec::with_capacity(3 * n_samples);
    for &t in &times {
        let v = ritp.eval(t.min(T)).unwrap();
        flat.extend_from_slice(&v);
    }
    let tgrid = TimeGrid::from_nodes(times, GridKind::Explicit).unwrap();
    let target = Target::new(
        Interpolant::linear(tgrid, flat, 3).unwrap(),
        TargetProvenance::ExternalData,
    );

    let template = {
        let mut a = ParameterVector::constant([0.005, 0.5, 0.05]);
        a = a.with_bounds(Param::Beta, 0.0, 0.01).unwrap();
        for p in Param::ALL {
            a.make_time_dependent(p, &grid).unwrap();
        }
        a
    };
    let setup = ProblemSetup { rho0, grid: grid.clone(), settings: config.solver };
    let problem = ReducedProblem::new(template.clone(), target, spec, setup).unwrap();
    let x0 = problem.pack(&template);

    let mut cfg = OptimizerConfig::new(Algorithm::NmApg);
    cfg.it_max = 50_000;
    cfg.tol_a = 1e-14;
    cfg.tol_b = 1e-16;
    let fit = minimize(&problem, &x0, &cfg).unwrap();
    let xb = DVector::from_vec(fit.best_x.clone());
    let ab = problem.unpack(&xb);
    let rb = check_stationarity(&ab, &problem.gradient_structured(&xb).unwrap(), 1e-3);
    println!(
        "endurance nmapg: {} its, best j {:.4e} at {}, stop {:?}, wall {:.0}s, stationarity {:.2}% ({} viol)",
        fit.history.len() - 1,
        fit.best_objective,
        fit.best_iteration,
        fit.stop.reason,
        fit.wall_seconds,
        100.0 * rb.satisfied_fraction(),
        rb.violations.len()
    );
    for r in fit.history.iter().filter(|r| r.iteration % 5000 == 0) {
        println!("  it {:6}: j {:.6e}", r.iteration, r.objective);
    }
}
