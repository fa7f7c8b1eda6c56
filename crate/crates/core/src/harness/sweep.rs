use std::collections::BTreeMap;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::emit::{failed_summary, Manifest};
use super::run::{run_experiment_with_id, RunRecord, RunSummary};
use crate::error::{LnmError, Result};
use crate::eval::{rank_methods, RankTable, Setting};

pub const WORKERS_ENV: &str = "LNM_WORKERS";

/// Worker cap from `LNM_WORKERS`, defaulting to the available parallelism.
pub fn workers_from_env() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(LnmError::config(format!(
                "{WORKERS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// One (cell, seed) task of a sweep.
#[derive(Debug)]
pub struct RunOutcome {
    pub cell: usize,
    pub seed: u64,
    pub run_id: String,
    pub method: String,
    pub setting: Setting,
    pub config: ExperimentConfig,
    pub result: std::result::Result<RunRecord, String>,
}

impl RunOutcome {
    pub fn summary(&self) -> RunSummary {
        match &self.result {
            Ok(r) => r.run_summary(),
            Err(e) => failed_summary(
                self.run_id.clone(),
                self.seed,
                self.method.clone(),
                self.config.noise.kind,
                self.config.noise.rate,
                e.clone(),
            ),
        }
    }
}

#[derive(Debug)]
pub struct SweepResult {
    pub runs: Vec<RunOutcome>,
    pub rank: Result<RankTable>,
}

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.result.is_err()).count()
    }

    pub fn records(&self) -> Vec<&RunRecord> {
        self.runs.iter().filter_map(|r| r.result.as_ref().ok()).collect()
    }

    pub fn manifest(&self, cfg: &ExperimentConfig) -> Manifest {
        Manifest::new(cfg, self.runs.iter().map(RunOutcome::summary).collect())
    }
}

pub fn setting_of(cfg: &ExperimentConfig) -> Setting {
    Setting::new(cfg.noise.kind.as_str(), cfg.noise.rate.to_string())
}

/// Runs every (method, noise, seed) combination with at most `workers`
/// concurrent runs. Output order is fixed by the grid, not by completion.
pub fn sweep(cfg: &ExperimentConfig, workers: usize) -> Result<SweepResult> {
    if cfg.seeds.is_empty() {
        return Err(LnmError::config("seeds must be nonempty"));
    }
    let cells = cfg.cells();
    if cells.is_empty() {
        return Err(LnmError::config("sweep grid is empty"));
    }
    let methods: Vec<String> = disambiguate(&cells);
    let mut tasks = Vec::new();
    for (ci, c) in cells.iter().enumerate() {
        for &seed in &cfg.seeds {
            let run_id = format!(
                "c{ci:03}-{}-{}{}-s{seed}",
                methods[ci],
                c.noise.kind.as_str(),
                c.noise.rate
            );
            tasks.push((ci, seed, run_id));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| LnmError::config(format!("thread pool: {e}")))?;
    let runs: Vec<RunOutcome> = pool.install(|| {
        tasks
            .into_par_iter()
            .map(|(ci, seed, run_id)| {
                let c = &cells[ci];
                let result = run_experiment_with_id(c, seed, run_id.clone()).map_err(|e| e.to_string());
                RunOutcome {
                    cell: ci,
                    seed,
                    run_id,
                    method: methods[ci].clone(),
                    setting: setting_of(c),
                    config: c.clone(),
                    result,
                }
            })
            .collect()
    });
    let rank = rank_runs(&runs);
    Ok(SweepResult { runs, rank })
}

/// Method names per cell, suffixed when two distinct method configs share a
/// label.
fn disambiguate(cells: &[ExperimentConfig]) -> Vec<String> {
    let mut distinct: Vec<&crate::methods::MethodConfig> = Vec::new();
    for c in cells {
        if !distinct.contains(&&c.method) {
            distinct.push(&c.method);
        }
    }
    cells
        .iter()
        .map(|c| {
            let label = c.method.label();
            let same: Vec<_> = distinct.iter().filter(|m| m.label() == label).collect();
            if same.len() > 1 {
                let idx = same.iter().position(|m| ***m == c.method).unwrap_or(0);
                format!("{label}#{idx}")
            } else {
                label
            }
        })
        .collect()
}

/// Seed-averaged L per (method, setting), ranked. A cell with any failed
/// seed is missing from the table.
pub fn rank_runs(runs: &[RunOutcome]) -> Result<RankTable> {
    let mut sums: BTreeMap<(String, Setting), (f64, usize, bool)> = BTreeMap::new();
    for r in runs {
        let e = sums
            .entry((r.method.clone(), r.setting.clone()))
            .or_insert((0.0, 0, true));
        match &r.result {
            Ok(rec) => {
                e.0 += rec.summary.last;
                e.1 += 1;
            }
            Err(_) => e.2 = false,
        }
    }
    let mut scores = BTreeMap::new();
    let mut missing = None;
    for ((m, s), (sum, count, complete)) in sums {
        if complete && count > 0 {
            scores.insert((m, s), sum / count as f64);
        } else {
            missing.get_or_insert((m, s));
        }
    }
    if let Some((method, s)) = missing {
        return Err(LnmError::IncompleteTable {
            method,
            setting: format!("{}/{}", s.pattern, s.name),
        });
    }
    rank_methods(&scores)
}
