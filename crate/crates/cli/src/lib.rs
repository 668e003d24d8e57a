//! Batch runs, summaries and artifact files behind the `uchain` binary.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use uchain::error::{CalibrationError, ConfigError};
use uchain::estimator::{calibrate_a, parse_calibration_log, Calibration};
use uchain::eventlog::{calibration_rows, is_event_log, parse_event_log};
use uchain::metrics::{iqr, median};
use uchain::{run_scenario, RunOutput, ScenarioConfig, Variant};

pub const OUT_ENV: &str = "UCHAIN_OUT";
pub const DEFAULT_OUT: &str = "runs";

/// One scheduled run.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub environment: String,
    pub variant: Variant,
    pub replicate: usize,
    pub seed: u64,
}

pub struct RunRecord {
    pub job: Job,
    pub output: RunOutput,
}

/// Every (map, variant, replicate) combination, in output order.
pub fn plan(cfg: &ScenarioConfig, only: Option<Variant>, base_seed: u64, replicates: usize) -> Vec<Job> {
    let variants: Vec<Variant> = match only {
        Some(v) => vec![v],
        None => cfg.variants.clone(),
    };
    let mut jobs = Vec::new();
    for environment in cfg.environment_names() {
        for &variant in &variants {
            for replicate in 0..replicates {
                jobs.push(Job {
                    environment: environment.clone(),
                    variant,
                    replicate,
                    seed: uchain::engine::replicate_seed(base_seed, replicate),
                });
            }
        }
    }
    jobs
}

/// Runs replicates in parallel; each world is independent, so the result
/// does not depend on scheduling.
pub fn run_batch(cfg: &ScenarioConfig, jobs: &[Job]) -> Result<Vec<RunRecord>, ConfigError> {
    for env in cfg.environment_names() {
        cfg.on_environment(&env).environment()?;
    }
    jobs.par_iter()
        .map(|job| {
            let output = run_scenario(&cfg.on_environment(&job.environment), job.variant, job.seed)?;
            Ok(RunRecord { job: job.clone(), output })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub environment: String,
    pub variant: Variant,
    pub runs: usize,
    pub converged: usize,
    /// Median, first and third quartile over converged runs.
    pub convergence_s: Option<(f64, f64, f64)>,
    pub variance_m2: (f64, f64, f64),
    pub faults: usize,
}

fn spread(xs: &[f64]) -> (f64, f64, f64) {
    let (q1, q3) = iqr(xs);
    (median(xs), q1, q3)
}

pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, Variant)> = Vec::new();
    for r in records {
        let k = (r.job.environment.clone(), r.job.variant);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(environment, variant)| {
            let group: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.job.environment == environment && r.job.variant == variant)
                .collect();
            let times: Vec<f64> = group.iter().filter_map(|r| r.output.metrics.convergence_time).collect();
            let vars: Vec<f64> = group.iter().map(|r| r.output.metrics.position_variance).collect();
            SummaryRow {
                environment,
                variant,
                runs: group.len(),
                converged: times.len(),
                convergence_s: (!times.is_empty()).then(|| spread(&times)),
                variance_m2: spread(&vars),
                faults: group.iter().map(|r| r.output.metrics.faults.len()).sum(),
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(
        "environment,variant,runs,converged,converged_pct,convergence_median_s,convergence_q1_s,convergence_q3_s,\
         variance_median_m2,variance_q1_m2,variance_q3_m2,faults\n",
    );
    for r in rows {
        let (cm, c1, c3) = match r.convergence_s {
            Some((m, a, b)) => (format!("{m:.2}"), format!("{a:.2}"), format!("{b:.2}")),
            None => Default::default(),
        };
        let (vm, v1, v3) = r.variance_m2;
        let _ = writeln!(
            s,
            "{},{},{},{},{:.1},{cm},{c1},{c3},{vm:.6},{v1:.6},{v3:.6},{}",
            r.environment,
            r.variant,
            r.runs,
            r.converged,
            100.0 * r.converged as f64 / r.runs as f64,
            r.faults
        );
    }
    s
}

/// Aligned table for the terminal.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:<14} {:<7} {:>9} {:>22} {:>28} {:>6}\n",
        "environment", "variant", "converged", "conv. time s (IQR)", "variance m^2 (IQR)", "faults"
    );
    for r in rows {
        let conv = match r.convergence_s {
            Some((m, a, b)) => format!("{m:.1} ({a:.1}-{b:.1})"),
            None => "-".into(),
        };
        let (vm, v1, v3) = r.variance_m2;
        let _ = writeln!(
            s,
            "{:<14} {:<7} {:>9} {:>22} {:>28} {:>6}",
            r.environment,
            r.variant.to_string(),
            format!("{}/{}", r.converged, r.runs),
            conv,
            format!("{vm:.5} ({v1:.5}-{v3:.5})"),
            r.faults
        );
    }
    s
}

fn per_run_csv(records: &[RunRecord]) -> String {
    let mut s = String::from(
        "environment,variant,replicate,seed,converged,convergence_time_s,position_variance_m2,launches,faults\n",
    );
    for r in records {
        let m = &r.output.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.6},{},{}",
            r.job.environment,
            r.job.variant,
            r.job.replicate,
            r.job.seed,
            m.converged(),
            m.convergence_time.map(|t| format!("{t:.2}")).unwrap_or_default(),
            m.position_variance,
            m.launches.len(),
            m.faults.len()
        );
    }
    s
}

fn faults_csv(records: &[RunRecord]) -> String {
    let mut s = String::from("environment,variant,seed,tick,agent,kind\n");
    for r in records {
        for f in &r.output.metrics.faults {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.job.environment, r.job.variant, r.job.seed, f.tick, f.agent, f.kind
            );
        }
    }
    s
}

fn seeds_csv(records: &[RunRecord]) -> String {
    let mut s = String::from("environment,variant,replicate,seed\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.job.environment, r.job.variant, r.job.replicate, r.job.seed
        );
    }
    s
}

pub fn run_log_path(dir: &Path, job: &Job) -> PathBuf {
    dir.join("runs")
        .join(file_safe(&job.environment))
        .join(job.variant.to_string())
        .join(format!("seed-{}.csv", job.seed))
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

/// Writes every artifact of a batch under `dir`.
pub fn write_artifacts(dir: &Path, records: &[RunRecord], rows: &[SummaryRow]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for r in records {
        let path = run_log_path(dir, &r.job);
        fs::create_dir_all(path.parent().unwrap())?;
        fs::write(path, &r.output.event_log)?;
    }
    fs::write(dir.join("summary.csv"), summary_csv(rows))?;
    fs::write(dir.join("metrics.csv"), per_run_csv(records))?;
    fs::write(dir.join("faults.csv"), faults_csv(records))?;
    fs::write(dir.join("seeds.csv"), seeds_csv(records))?;
    Ok(())
}

/// `--out`, else `$UCHAIN_OUT`, else `./runs`; the scenario name is appended.
pub fn output_dir(flag: Option<&Path>, env_value: Option<&str>, scenario: &str) -> PathBuf {
    let root = match (flag, env_value) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(v)) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUT),
    };
    root.join(file_safe(scenario))
}

/// Fits the gain from a separation log or a simulator event log.
pub fn calibrate_file(text: &str, link: Option<&str>) -> Result<Calibration, CalibrationError> {
    let rows = if is_event_log(text) {
        calibration_rows(&parse_event_log(text)?, link)?
    } else {
        parse_calibration_log(text)?
    };
    calibrate_a(&rows)
}
