//! Command-line driver: map simulation, classifier training, tracking from
//! dumped maps, end-to-end runs, sweeps and report summaries.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coopsense::classifier::save_model;
use coopsense::clustering::GatingMode;
use coopsense::config::{FilterSelection, RunConfig};
use coopsense::pipeline::{
    load_dumped_maps, obtain_classifier, run, run_on_cached_maps, simulate_to_dir, sweep,
    train_classifier, write_outputs, AggregateRow, Setup, SweepResult, SweepVariable, TrackReport,
};
use coopsense::{Error, Result};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "coopsense",
    version,
    about = "Cooperative multi-BS OFDM sensing and tracking simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate fused (and with --dump-maps, per-BS) maps into --out.
    Simulate(Common),
    /// Train the patch classifier and write model.bin and training.json into --out.
    TrainClassifier(Common),
    /// Track from maps written by `simulate` or `run --dump-maps`.
    Track {
        #[command(flatten)]
        common: Common,
        /// Directory holding manifest.json and the fused map files.
        #[arg(long)]
        maps: PathBuf,
    },
    /// Maps, classification, clustering, tracking and metrics in one pass.
    Run(Common),
    /// One run per sweep point and seed, aggregated by config hash.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Swept quantity: `ns` (1..N_tot sensing BSs) or `gating`.
        #[arg(long, default_value = "ns")]
        variable: String,
        /// Comma-separated seeds; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Print a summary of a report.json or sweep.json (or a directory holding one).
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML config; the desk preset when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// phd | mbm | both
    #[arg(long)]
    filter: Option<String>,
    /// fixed-<meters> | adaptive
    #[arg(long)]
    gating: Option<String>,
    /// Number of sensing BSs N_s.
    #[arg(long)]
    ns: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dump_maps: bool,
    /// Direct column synthesis instead of the signal-level chain.
    #[arg(long)]
    fast: bool,
    /// Trained classifier model, overriding training.model_path.
    #[arg(long)]
    model: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(f) = &self.filter {
            cfg.filter = f.parse::<FilterSelection>()?;
        }
        if let Some(g) = &self.gating {
            cfg.gating = g.parse::<GatingMode>()?;
        }
        if let Some(ns) = self.ns {
            cfg.ns = ns;
            cfg.sensing_bs = None;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        cfg.dump_maps |= self.dump_maps;
        cfg.fast |= self.fast;
        if let Some(m) = &self.model {
            cfg.training.model_path = Some(m.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            })
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate(common) => {
            let setup = Setup::new(common.resolve()?)?;
            let out = setup.config.out.clone();
            let manifest = simulate_to_dir(&setup, &out, setup.config.dump_maps)?;
            eprintln!(
                "wrote {} fused maps (sensing BSs {:?}, threshold {:.3e}) to {}",
                manifest.num_scans,
                manifest.sensing_bs,
                manifest.excision_threshold,
                out.display()
            );
        }
        Command::TrainClassifier(common) => {
            let setup = Setup::new(common.resolve()?)?;
            let out = setup.config.out.clone();
            let bundle = train_classifier(&setup)?;
            std::fs::create_dir_all(&out)?;
            save_model(&bundle.model, &out.join("model.bin"))?;
            std::fs::write(
                out.join("training.json"),
                serde_json::to_string_pretty(&bundle.training)?,
            )?;
            if let Some(t) = &bundle.training {
                eprintln!(
                    "trained on {} patches, {} epochs; held-out accuracy {}",
                    t.train_examples,
                    t.epochs_run,
                    fmt_opt(t.test_accuracy)
                );
            }
        }
        Command::Track { common, maps } => {
            let mut setup = Setup::new(common.resolve()?)?;
            let (manifest, fused) = load_dumped_maps(&setup, &maps)?;
            setup.config.seed = manifest.seed;
            let classifier = obtain_classifier(&setup)?;
            let report = run_on_cached_maps(
                &setup,
                manifest.seed,
                &fused,
                manifest.excision_threshold,
                classifier.as_ref(),
            )?;
            finish_run(&report, &setup.config.out)?;
        }
        Command::Run(common) => {
            let setup = Setup::new(common.resolve()?)?;
            let out = setup.config.out.clone();
            let classifier = obtain_classifier(&setup)?;
            let dump = setup.config.dump_maps.then(|| out.join("maps"));
            let report = run(&setup, classifier.as_ref(), dump.as_deref())?;
            finish_run(&report, &out)?;
        }
        Command::Sweep {
            common,
            variable,
            seeds,
        } => {
            let cfg = common.resolve()?;
            let variable: SweepVariable = variable.parse()?;
            let seeds = if seeds.is_empty() {
                vec![cfg.seed]
            } else {
                seeds
            };
            let result = sweep(&cfg, variable, &seeds)?;
            write_sweep(&result, &cfg.out)?;
            print_table(&result.table);
        }
        Command::Report { input } => summarize(&input)?,
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|a| format!("{a:.3}")).unwrap_or_else(|| "n/a".into())
}

fn finish_run(report: &TrackReport, out: &Path) -> Result<()> {
    write_outputs(report, out)?;
    print_report(report);
    eprintln!("outputs in {}", out.display());
    Ok(())
}

fn print_report(report: &TrackReport) {
    let m = &report.metadata;
    println!(
        "seed {}  sensing BSs {:?}  gating {}  config {}",
        m.seed,
        m.sensing_bs,
        m.gating,
        &m.config_hash[..12]
    );
    println!(
        "{:<6} {:>12} {:>10} {:>10}",
        "filter", "median OSPA", "mean OSPA", "accuracy"
    );
    for f in &report.filters {
        println!(
            "{:<6} {:>12.3} {:>10.3} {:>10}",
            f.filter.as_str(),
            f.summary.median_ospa,
            f.summary.mean_ospa,
            fmt_opt(f.summary.accuracy)
        );
    }
    println!(
        "aggregate capacity {:.4} Gbit/s",
        report.capacity.bits_per_s / 1e9
    );
}

#[derive(serde::Serialize)]
struct SweepCsvRow<'a> {
    config_hash: &'a str,
    filter: &'static str,
    n_sensing: usize,
    gating: String,
    runs: usize,
    median_ospa: f64,
    mean_ospa: f64,
    accuracy: Option<f64>,
    capacity_bits_per_s: f64,
}

#[derive(serde::Serialize)]
struct SeriesRow<'a> {
    config_hash: &'a str,
    filter: &'static str,
    n_sensing: usize,
    gating: String,
    scan_index: usize,
    ospa: f64,
}

fn write_sweep(result: &SweepResult, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("sweep.json"),
        serde_json::to_string_pretty(result)?,
    )?;
    let rows: Vec<SweepCsvRow> = result
        .table
        .iter()
        .map(|r| SweepCsvRow {
            config_hash: &r.config_hash,
            filter: r.filter.as_str(),
            n_sensing: r.n_sensing,
            gating: r.gating.to_string(),
            runs: r.runs,
            median_ospa: r.median_ospa,
            mean_ospa: r.mean_ospa,
            accuracy: r.accuracy,
            capacity_bits_per_s: r.capacity_bits_per_s,
        })
        .collect();
    coopsense::io::write_csv_rows(&out.join("sweep.csv"), &rows)?;
    let series: Vec<SeriesRow> = result
        .table
        .iter()
        .flat_map(|r| {
            r.ospa_series
                .iter()
                .enumerate()
                .map(move |(t, &v)| SeriesRow {
                    config_hash: &r.config_hash,
                    filter: r.filter.as_str(),
                    n_sensing: r.n_sensing,
                    gating: r.gating.to_string(),
                    scan_index: t,
                    ospa: v,
                })
        })
        .collect();
    coopsense::io::write_csv_rows(&out.join("ospa_series.csv"), &series)?;
    eprintln!(
        "wrote sweep.json, sweep.csv and ospa_series.csv to {}",
        out.display()
    );
    Ok(())
}

fn print_table(table: &[AggregateRow]) {
    println!(
        "{:<6} {:>3} {:<10} {:>4} {:>12} {:>10} {:>9} {:>10}",
        "filter", "ns", "gating", "runs", "median OSPA", "mean OSPA", "accuracy", "C Gbit/s"
    );
    for r in table {
        println!(
            "{:<6} {:>3} {:<10} {:>4} {:>12.3} {:>10.3} {:>9} {:>10.4}",
            r.filter.as_str(),
            r.n_sensing,
            r.gating.to_string(),
            r.runs,
            r.median_ospa,
            r.mean_ospa,
            fmt_opt(r.accuracy),
            r.capacity_bits_per_s / 1e9
        );
    }
}

fn summarize(input: &Path) -> Result<()> {
    let path = if input.is_dir() {
        ["report.json", "sweep.json"]
            .iter()
            .map(|n| input.join(n))
            .find(|p| p.exists())
            .ok_or_else(|| {
                Error::config(format!(
                    "no report.json or sweep.json in {}",
                    input.display()
                ))
            })?
    } else {
        input.to_path_buf()
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let bad = |e: serde_json::Error| Error::Format {
        path: path.clone(),
        reason: e.to_string(),
    };
    if value.get("table").is_some() {
        let result: SweepResult = serde_json::from_value(value).map_err(bad)?;
        print_table(&result.table);
    } else {
        let report: TrackReport = serde_json::from_value(value).map_err(bad)?;
        print_report(&report);
    }
    Ok(())
}
