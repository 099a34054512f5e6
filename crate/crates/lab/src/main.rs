use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use dynprobe_lab::{emit_report, run_experiment, ExperimentConfig, LabError, RunOptions};

/// Runs a dynamical probe experiment and writes its artifacts.
///
/// Stages: forward, dnmap, probe, indicator, verify, detect, report. They
/// may be given as positional subcommands or with `--stage`; without
/// either, the stages listed in the configuration run. `report` alone
/// only needs `--out`.
#[derive(Parser, Debug)]
#[command(name = "dynprobe", version)]
struct Cli {
    /// Stages to run.
    #[arg(value_name = "STAGE")]
    positional: Vec<String>,
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, value_name = "N", default_value_t = 0)]
    jobs: usize,
    #[arg(long = "stage", value_name = "NAME")]
    stage: Vec<String>,
}

fn run(cli: Cli) -> Result<(), LabError> {
    let mut stages = cli.positional;
    stages.extend(cli.stage);
    if stages.iter().all(|s| s == "report") && !stages.is_empty() && cli.config.is_none() {
        for f in emit_report(&cli.out)? {
            println!("{}", cli.out.join(f).display());
        }
        return Ok(());
    }
    let path = cli.config.ok_or_else(|| LabError::Config(vec!["--config is required".into()]))?;
    let cfg = ExperimentConfig::load(&path)?;
    let opts = RunOptions { jobs: cli.jobs, stages: (!stages.is_empty()).then_some(stages), seed: cli.seed };
    let summary = run_experiment(&cfg, &cli.out, &opts)?;
    println!("{}: {} -> {}", cfg.name, summary.stages.join(","), cli.out.display());
    for s in &summary.sweeps {
        println!("curve {}: slope [{:.4}, {:.4}] class {}", s.id, s.slopes.slope_lo, s.slopes.slope_hi, s.class.class.as_str());
    }
    if let Some(d) = &summary.detect {
        println!("detect: {}", d.verdict.verdict.as_str());
    }
    if let Some(v) = &summary.verify {
        let reps = if v.refined.is_empty() { &v.levels[0].reports } else { &v.refined };
        let failed: Vec<&str> = reps.iter().filter(|r| !r.pass).map(|r| r.lemma_id.as_str()).collect();
        println!("verify: {} checks, failed: [{}]", reps.len(), failed.join(", "));
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
