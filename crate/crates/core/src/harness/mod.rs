//! Configuration, record persistence and the Monte Carlo experiments behind
//! the `hnls` command line.

pub mod config;
mod decay;
mod diagnostics;
mod ratio;
pub mod records;
mod sample;
mod scatter;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::random::fit_line;

pub use config::{BallKind, ExperimentConfig, ExperimentKind};
pub use records::{RecordContext, RecordWriter, RunRecord};

/// One verdict of a run. `passed = None` marks an informational check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: Option<bool>,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Check {
    pub fn pass_if(name: &str, passed: bool, value: f64, threshold: f64, detail: String) -> Self {
        Self { name: name.into(), passed: Some(passed), value, threshold, detail }
    }

    pub fn info(name: &str, value: f64, detail: String) -> Self {
        Self { name: name.into(), passed: None, value, threshold: f64::NAN, detail }
    }

    pub fn failed(&self) -> bool {
        self.passed == Some(false)
    }
}

/// Everything an experiment produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RunRecord>,
    pub summary: Value,
    pub checks: Vec<Check>,
}

impl RunOutput {
    pub fn all_passed(&self) -> bool {
        !self.checks.iter().any(Check::failed)
    }

    /// `0` when every check passes, `1` otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.all_passed() {
            0
        } else {
            1
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Runs the configured experiment on a pool of `experiment.threads` workers.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.experiment.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_inline(cfg))
}

fn run_inline(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let ctx = RecordContext {
        experiment: cfg.experiment.kind.as_str().to_string(),
        seed: cfg.experiment.seed,
        config_hash: cfg.content_hash(),
    };
    let mut out = match cfg.experiment.kind {
        ExperimentKind::Sample => sample::run_sample(cfg, &ctx)?,
        ExperimentKind::Evolve => sample::run_evolve(cfg, &ctx)?,
        ExperimentKind::DecayScan => decay::run_decay_scan(cfg, &ctx)?,
        ExperimentKind::Scatter => scatter::run_scattering(cfg, &ctx)?,
        ExperimentKind::MeasureRatio => ratio::run_measure_ratio(cfg, &ctx)?,
        ExperimentKind::Diagnostics => diagnostics::run_diagnostics(cfg, &ctx)?,
    };
    let checks = serde_json::to_value(&out.checks).unwrap_or(Value::Null);
    let all_passed = out.all_passed();
    if let Value::Object(map) = &mut out.summary {
        map.insert("experiment".into(), json!(ctx.experiment));
        map.insert("config_hash".into(), json!(ctx.config_hash));
        map.insert("seed".into(), json!(ctx.seed));
        map.insert("checks".into(), checks);
        map.insert("all_passed".into(), json!(all_passed));
    }
    Ok(out)
}

pub use decay::run_decay_scan;
pub use diagnostics::{
    bound_slopes, liouville_sweep, mehler_sweep, run_diagnostics, single_mode_tail, BoundSlopes,
};
pub use ratio::{ratio_checks, run_measure_ratio, RatioEstimate};
pub use sample::{run_evolve, run_sample};
pub use scatter::run_scattering;

/// Writes `records.jsonl`, `timeseries.csv`, `summary.json`, `metadata.json`
/// and the resolved `config.toml` into `dir`.
pub fn write_outputs(out: &RunOutput, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut writer = RecordWriter::create(&dir.join("records.jsonl"))?;
    for r in &out.records {
        writer.write(r)?;
    }
    writer.finish()?;
    records::write_timeseries_csv(fs::File::create(dir.join("timeseries.csv"))?, &out.records)?;
    fs::write(dir.join("summary.json"), records::to_json_pretty(&out.summary)? + "\n")?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = json!({
        "created_unix": stamp,
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": cfg.content_hash(),
        "records": out.records.len(),
    });
    fs::write(dir.join("metadata.json"), records::to_json_pretty(&meta)? + "\n")?;
    Ok(())
}

/// Maps `f` over sample indices on the current pool, keeping index order.
pub(crate) fn par_samples<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..count as u64).into_par_iter().map(f).collect()
}

pub(crate) fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len();
    Some(if m % 2 == 1 { v[m / 2] } else { 0.5 * (v[m / 2 - 1] + v[m / 2]) })
}

/// Least-squares slope of `y` against `x`.
pub(crate) fn slope(pts: &[(f64, f64)]) -> Option<f64> {
    fit_line(pts).map(|f| f.0)
}

/// `n` log-spaced values on `[lo, hi]`.
pub(crate) fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

pub(crate) fn opt_json(x: Option<f64>) -> Value {
    match x {
        Some(v) if v.is_finite() => json!(v),
        _ => Value::Null,
    }
}
