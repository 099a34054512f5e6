//! Stage orchestration and the artifact manifest.

use std::path::Path;

use dynprobe_core::indicator::IndicatorMode;
use dynprobe_core::special::KernelConstants;

use crate::config::{ExperimentConfig, STAGES};
use crate::error::LabError;
use crate::experiment::{
    kernel_constants, run_detect, run_dnmap, run_forward, run_indicators, run_verify, second_world, with_jobs, CurveSweep, DetectResult, Setup,
    VerifyResult,
};
use crate::output::{key_values, sha256_hex, Artifacts, MANIFEST};
use crate::report::emit_report;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `0` uses the global pool.
    pub jobs: usize,
    /// Overrides the configured stage list.
    pub stages: Option<Vec<String>>,
    pub seed: Option<u64>,
}

#[derive(Default)]
pub struct RunSummary {
    pub stages: Vec<String>,
    pub kernel: Option<KernelConstants>,
    pub sweeps: Vec<CurveSweep>,
    pub verify: Option<VerifyResult>,
    pub detect: Option<DetectResult>,
}

fn manifest(cfg: &ExperimentConfig, stages: &[String], status: &str) -> String {
    let text = cfg.to_toml();
    key_values(&[
        ("name", cfg.name.clone()),
        ("config_sha256", sha256_hex(text.as_bytes())),
        ("seed", cfg.seed.to_string()),
        ("lab_version", env!("CARGO_PKG_VERSION").to_string()),
        ("core_version", dynprobe_core::VERSION.to_string()),
        ("stages", stages.join(",")),
        ("status", status.to_string()),
    ])
}

/// Runs the selected stages in pipeline order and writes their artifacts
/// to `out`. On error the outputs written so far stay in place next to a
/// `FAILED` marker naming the stage.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, opts: &RunOptions) -> Result<RunSummary, LabError> {
    let mut cfg = cfg.clone();
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    let wanted = opts.stages.clone().unwrap_or_else(|| cfg.stages.clone());
    if let Some(bad) = wanted.iter().find(|s| !STAGES.contains(&s.as_str())) {
        return Err(LabError::Config(vec![format!("unknown stage `{bad}`; expected one of {}", STAGES.join(", "))]));
    }
    let stages: Vec<String> = STAGES.iter().filter(|s| wanted.iter().any(|w| w == *s)).map(|s| s.to_string()).collect();
    let art = Artifacts::create(out)?;
    art.clear_failed()?;
    art.write_text("config.toml", &cfg.to_toml())?;
    art.write_text(MANIFEST, &manifest(&cfg, &stages, "running"))?;
    let mut current = "setup".to_string();
    let result = with_jobs(opts.jobs, || run_stages(&cfg, &art, &stages, &mut current));
    match result {
        Ok(summary) => {
            art.write_text(MANIFEST, &manifest(&cfg, &stages, "ok"))?;
            // The report reads the final manifest, so it runs last.
            if stages.iter().any(|s| s == "report") {
                if let Err(e) = emit_report(&art.dir) {
                    art.mark_failed("report", &e)?;
                    art.write_text(MANIFEST, &manifest(&cfg, &stages, "failed"))?;
                    return Err(e);
                }
            }
            Ok(summary)
        }
        Err(e) => {
            let e = e.in_stage(&current);
            art.mark_failed(&current, &e)?;
            art.write_text(MANIFEST, &manifest(&cfg, &stages, "failed"))?;
            Err(e)
        }
    }
}

fn run_stages(cfg: &ExperimentConfig, art: &Artifacts, stages: &[String], current: &mut String) -> Result<RunSummary, LabError> {
    let needs_setup = stages.iter().any(|s| s != "report" && s != "verify");
    let mut summary = RunSummary { stages: stages.to_vec(), ..RunSummary::default() };
    let setup = if needs_setup {
        let s = Setup::build(cfg)?;
        art.geometry(&s.geometry)?;
        Some(s)
    } else {
        None
    };
    let mut kernel = None;
    for stage in stages {
        *current = stage.clone();
        let setup = setup.as_ref();
        let mut kc = || -> Result<KernelConstants, LabError> {
            if kernel.is_none() {
                let s = setup.ok_or_else(|| LabError::Missing("setup".into()))?;
                let k = kernel_constants(s)?;
                art.kernel(&k)?;
                kernel = Some(k);
            }
            Ok(kernel.clone().unwrap())
        };
        match stage.as_str() {
            "forward" => {
                let s = setup.unwrap();
                art.mesh(&s.emb.inner)?;
                let f = run_forward(s)?;
                art.forward(&f, &s.grid, &cfg.forward.snapshots)?;
            }
            "dnmap" => {
                let k = kc()?;
                art.dnmap(&run_dnmap(setup.unwrap(), &k)?)?;
            }
            "probe" => {
                let s = setup.unwrap();
                let boundary = s.mode() == IndicatorMode::Boundary;
                // A boundary-mode indicator sweep writes the probe outputs itself.
                if boundary && stages.iter().any(|x| x == "indicator") {
                    continue;
                }
                let k = kc()?;
                if boundary {
                    art.probe(&run_indicators(s, &k)?)?;
                } else {
                    let mut c = cfg.clone();
                    c.probe.mode = "boundary".into();
                    art.probe(&run_indicators(&Setup::build(&c)?, &k)?)?;
                }
            }
            "indicator" => {
                let k = kc()?;
                let s = setup.unwrap();
                let sweeps = run_indicators(s, &k)?;
                if s.mode() == IndicatorMode::Boundary {
                    art.probe(&sweeps)?;
                }
                art.indicator(&sweeps, k.kappa_hat, cfg.probe.mu)?;
                summary.sweeps = sweeps;
            }
            "verify" => {
                let v = run_verify(cfg)?;
                art.constants(&v)?;
                summary.verify = Some(v);
            }
            "detect" => {
                let k = kc()?;
                let s = setup.unwrap();
                let world = second_world(s)?;
                let d = run_detect(s, &world, &k)?;
                art.detect(&d)?;
                summary.detect = Some(d);
            }
            "report" => {}
            _ => unreachable!("stages are validated"),
        }
    }
    summary.kernel = kernel;
    Ok(summary)
}
