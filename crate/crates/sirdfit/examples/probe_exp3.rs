// scratch probe (not committed)
use sirdfit::workbench::{run_fit, ExperimentConfig, RunOutcome};
use std::path::Path;

fn main() {
    let config =
        ExperimentConfig::load(Path::new("crates/sirdfit/tests/fixtures/exp3.toml")).unwrap();
    let record = run_fit(&config).unwrap();
    for run in &record.runs {
        match &run.outcome {
            RunOutcome::Completed { summary, fit } => {
                let monotone = fit
                    .history
                    .iter()
                    .scan(f64::INFINITY, |best, r| {
                        let ok = r.objective >= *best - 1e-18 || r.objective <= *best;
                        *best = best.min(r.objective);
                        Some(ok)
                    })
                    .all(|x| x);
                let st = summary.stationarity.as_ref().unwrap();
                println!(
                    "{:?}: j {:.4e} at {}, stop {:?}, wall {:.1}s, stationarity {:.2}% ({}/{}), monotone-best {}",
                    run.algorithm,
                    summary.objective,
                    summary.iterations,
                    fit.stop.reason,
                    fit.wall_seconds,
                    100.0 * st.fraction,
                    st.total - st.violations,
                    st.total,
                    monotone
                );
            }
            RunOutcome::Failed { error } => println!("{:?} FAILED: {error}", run.algorithm),
        }
    }
}
