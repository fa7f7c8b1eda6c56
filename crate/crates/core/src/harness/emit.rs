use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{RunRecord, RunSummary};
use crate::error::Result;
use crate::eval::RankTable;
use crate::noise::NoiseKind;

pub const CSV_HEADER: &str =
    "run_id,seed,method,noise_kind,noise_rate,epoch,train_loss,val_acc,test_acc,clean_ratio,coverage_ratio,est_error";

/// One line of the results table. Absent metrics serialize as empty fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub seed: u64,
    pub method: String,
    pub noise_kind: String,
    pub noise_rate: f64,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub clean_ratio: Option<f64>,
    pub coverage_ratio: Option<f64>,
    pub est_error: Option<f64>,
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(crate::LnmError::Format {
            offset: 0,
            reason: format!("unexpected results header `{}`", header.join(",")),
        });
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Choices that differ from a literal reading of the protocol, echoed into
/// every manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviations {
    pub flip_location: String,
    pub reference_source: String,
    pub validation_labels: String,
    pub pipeline_order: String,
    pub view_augmentation: String,
}

impl Deviations {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        Self {
            flip_location: tag(&cfg.noise.flip_location),
            reference_source: tag(&cfg.noise.reference.source),
            validation_labels: if cfg.clean_validation {
                "clean".into()
            } else {
                "noisy_independent_draw".into()
            },
            pipeline_order: "split_then_long_tail_then_inject".into(),
            view_augmentation: "feature_jitter".into(),
        }
    }
}

fn tag<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub code_version: String,
    pub seeds: Vec<u64>,
    pub deviations: Deviations,
    pub runs: Vec<RunSummary>,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig, runs: Vec<RunSummary>) -> Self {
        Self {
            config: config.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: config.seeds.clone(),
            deviations: Deviations::of(config),
            runs,
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

pub fn failed_summary(
    run_id: String,
    seed: u64,
    method: String,
    noise_kind: NoiseKind,
    noise_rate: f64,
    error: String,
) -> RunSummary {
    RunSummary {
        run_id,
        seed,
        method,
        noise_kind,
        noise_rate,
        ok: false,
        error: Some(error),
        summary: None,
        realized_train_noise: None,
        collapsed_epochs: 0,
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Writes `results.csv`, `manifest.json`, per-run selection and noise CSVs,
/// and `rank.csv` when a ranking is given.
pub fn emit(
    out_dir: impl AsRef<Path>,
    records: &[&RunRecord],
    manifest: &Manifest,
    rank: Option<&RankTable>,
) -> Result<()> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    let rows: Vec<ResultRow> = records.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    write_results_csv(&rows, create(&dir.join("results.csv"))?)?;
    let mut m = create(&dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut m, manifest)?;
    m.write_all(b"\n")?;
    m.flush()?;
    for r in records {
        if r.reports.iter().any(|rep| rep.selection.is_some()) {
            fs::create_dir_all(dir.join("selections"))?;
            r.write_selection_csv(create(&dir.join("selections").join(format!("{}.csv", r.run_id)))?)?;
        }
        if let Some(noise) = &r.train_noise {
            fs::create_dir_all(dir.join("noise"))?;
            noise.write_csv(create(&dir.join("noise").join(format!("{}.csv", r.run_id)))?)?;
        }
    }
    if let Some(t) = rank {
        t.write_csv(create(&dir.join("rank.csv"))?)?;
    }
    Ok(())
}
