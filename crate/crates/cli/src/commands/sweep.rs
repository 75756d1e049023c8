use coordconv_core::models::ModelName;
use coordconv_core::train::sweep::{best_per_family, run_sweep, write_sweep_csv, write_sweep_timing_csv, SweepGrid};

use crate::commands::train::headline;
use crate::error::{CliError, CliResult};
use crate::files;
use crate::SweepArgs;

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_TIMING_FILE: &str = "sweep_timing.csv";

fn in_family(model: ModelName, family: &str) -> bool {
    let name = model.as_str();
    let family = family.to_ascii_uppercase();
    name == family || name.starts_with(&format!("{family}-"))
}

pub fn run(args: &SweepArgs) -> CliResult<()> {
    if args.jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    let text = std::fs::read_to_string(&args.grid).map_err(|e| CliError::io(&args.grid, e))?;
    let mut grid: SweepGrid = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("malformed grid {}: {e}", args.grid.display())))?;
    if let Some(task) = args.task {
        grid.models.retain(|m| m.task() == task);
    }
    if let Some(family) = &args.family {
        grid.models.retain(|&m| in_family(m, family));
    }
    let jobs = grid.jobs()?;
    println!("{} runs on {} worker(s)", jobs.len(), args.jobs);

    let dataset = files::load_dataset(args.dataset.as_deref())?;
    let results = run_sweep(jobs, &dataset, args.jobs)?;

    files::ensure_dir(&args.out)?;
    files::write_with(&args.out.join(SWEEP_FILE), |w| write_sweep_csv(w, &results))?;
    files::write_with(&args.out.join(SWEEP_TIMING_FILE), |w| write_sweep_timing_csv(w, &results))?;

    for r in best_per_family(&results) {
        match (&r.failure, r.final_train, r.final_test) {
            (None, Some(train), Some(test)) => println!(
                "best {:<11} {:<9} {:>9} params  lr {:<6} wd {:<6} batch {:<3} train {}  test {}",
                r.job.model.as_str(),
                r.job.split.name(),
                r.params,
                r.job.config.lr,
                r.job.config.weight_decay,
                r.job.config.batch_size,
                headline(r.task(), &train),
                headline(r.task(), &test)
            ),
            (failure, _, _) => println!(
                "best {:<11} {:<9} failed: {}",
                r.job.model.as_str(),
                r.job.split.name(),
                failure.as_deref().unwrap_or("no metrics")
            ),
        }
    }
    let failed = results.iter().filter(|r| r.failure.is_some()).count();
    if failed > 0 {
        println!("{failed} run(s) failed; see {}", args.out.join(SWEEP_FILE).display());
    }
    println!("results -> {}", args.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_prefix_matching() {
        assert!(in_family(ModelName::ConvRegU, "conv"));
        assert!(in_family(ModelName::ConvRegU, "CONV-REG-U"));
        assert!(!in_family(ModelName::DeconvCls, "CONV"));
        assert!(!in_family(ModelName::CcCls, "CONV"));
        assert!(in_family(ModelName::CcRen, "CC"));
    }
}
