use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lnm_core::dataset::save_flat;
use lnm_core::eval::{rank_methods, Setting};
use lnm_core::harness::{
    build_dataset, emit, prepare_data, read_results_csv, sweep, workers_from_env, ExperimentConfig, Manifest,
};
use lnm_core::LnmError;

const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "lnm", version, about = "Learning-with-noisy-labels lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Use this seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-path override, e.g. `noise.rate=0.5`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build, split and long-tail the dataset, then save it as a flat file.
    GenData(Common),
    /// Like gen-data, with noise injected; also writes `<out>.noise.csv`.
    GenNoise(Common),
    /// Run the configured method over every seed.
    Run(Common),
    /// Run the grid of methods x noise settings x seeds and rank methods.
    Sweep(Common),
    /// Rank methods from an existing results CSV.
    Rank {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 5)]
        window: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<LnmError> for Failure {
    fn from(e: LnmError) -> Self {
        let code = match e {
            LnmError::Io(_) | LnmError::Csv(_) => EXIT_IO,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&common.config, &common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        cfg.out_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn out_path(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn gen_data(common: &Common, noisy: bool) -> Result<(), Failure> {
    let cfg = load(common)?;
    cfg.validate()?;
    let seed = cfg.seeds[0];
    let out = out_path(common, "data.lnmb");
    if noisy {
        let prepared = prepare_data(&cfg, seed)?;
        save_flat(&prepared.dataset, &out)?;
        if let Some(n) = &prepared.train_noise {
            let mut csv_path = out.clone().into_os_string();
            csv_path.push(".noise.csv");
            n.write_csv(BufWriter::new(
                File::create(PathBuf::from(csv_path)).map_err(LnmError::from)?,
            ))?;
            eprintln!("realized train noise rate {:.4}", n.outcome.realized_rate);
        }
    } else {
        save_flat(&build_dataset(&cfg, seed)?, &out)?;
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn run_grid(common: &Common, as_sweep: bool) -> Result<(), Failure> {
    let mut cfg = load(common)?;
    if !as_sweep {
        cfg.grid = None;
        cfg.validate()?;
    }
    let workers = workers_from_env()?;
    let result = sweep(&cfg, workers)?;
    let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("results"));
    let manifest: Manifest = result.manifest(&cfg);
    let rank = if as_sweep { result.rank.as_ref().ok() } else { None };
    emit(&out, &result.records(), &manifest, rank)?;
    for r in &result.runs {
        match &r.result {
            Ok(rec) => println!(
                "{}\tB={:.4}\tV={:.4}\tL={:.4}",
                rec.run_id, rec.summary.best, rec.summary.val_selected, rec.summary.last
            ),
            Err(e) => println!("{}\tFAILED\t{e}", r.run_id),
        }
    }
    if as_sweep {
        match &result.rank {
            Ok(t) => {
                for (m, o) in t.methods.iter().zip(&t.overall) {
                    println!("rank\t{m}\t{o:.3}");
                }
            }
            Err(e) => eprintln!("ranking skipped: {e}"),
        }
    }
    let failed = result.failures();
    if failed > 0 {
        return Err(Failure {
            code: EXIT_PARTIAL,
            message: format!("{failed} of {} runs failed", result.runs.len()),
        });
    }
    Ok(())
}

fn rank(csv: &PathBuf, window: usize, out: Option<&PathBuf>) -> Result<(), Failure> {
    let rows = read_results_csv(File::open(csv).map_err(LnmError::from)?)?;
    if window == 0 {
        return Err(LnmError::config("window must be positive").into());
    }
    let mut per_run: BTreeMap<String, Vec<&lnm_core::harness::ResultRow>> = BTreeMap::new();
    for r in &rows {
        per_run.entry(r.run_id.clone()).or_default().push(r);
    }
    let mut cells: BTreeMap<(String, Setting), Vec<f64>> = BTreeMap::new();
    for (id, mut rs) in per_run {
        rs.sort_by_key(|r| r.epoch);
        if rs.len() < window {
            return Err(
                LnmError::domain(format!("run {id} has {} epochs, fewer than window {window}", rs.len())).into(),
            );
        }
        let last = rs[rs.len() - window..].iter().map(|r| r.test_acc).sum::<f64>() / window as f64;
        let s = Setting::new(rs[0].noise_kind.clone(), rs[0].noise_rate.to_string());
        cells.entry((rs[0].method.clone(), s)).or_default().push(last);
    }
    let scores = cells
        .into_iter()
        .map(|(k, v)| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            (k, mean)
        })
        .collect();
    let table = rank_methods(&scores)?;
    match out {
        Some(p) => table.write_csv(BufWriter::new(File::create(p).map_err(LnmError::from)?))?,
        None => table.write_csv(std::io::stdout())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(c) => gen_data(c, false),
        Command::GenNoise(c) => gen_data(c, true),
        Command::Run(c) => run_grid(c, false),
        Command::Sweep(c) => run_grid(c, true),
        Command::Rank { csv, window, out } => rank(csv, *window, out.as_ref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("lnm: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
