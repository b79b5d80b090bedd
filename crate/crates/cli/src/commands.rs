use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tcan_core::data_io::{build_corpus, write_corpus};
use tcan_core::gradcheck::{run_suite, SuiteSize};
use tcan_core::tensor::OpKind;
use tcan_core::trainer::{EpochStats, TrainReport};

use crate::config::{seed_from_env, validate_snr, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::experiment::{load_corpus, run as run_experiment, write_run, CONFUSION_FILE};
use crate::plot::{accuracy_plot, confusion_heatmap, Series};

/// Gradient suite tolerance on the max relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "tcanlab", version, about = "Temporal convolutional attention network experiments on distorted audio")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus: clips/<id>.wav plus manifest.tsv.
    GenData(GenDataArgs),
    /// Train and evaluate one model at a single SNR.
    Train(TrainArgs),
    /// One independent train+evaluate per SNR; writes a CSV table and SVG plot.
    SweepSnr(SweepArgs),
    /// Finite-difference check of every differentiable op and a toy network.
    Gradcheck(GradcheckArgs),
    /// Render a report's confusion matrix as SVG and CSV.
    PlotConfusion(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 500)]
    pub n_train: usize,
    #[arg(long, default_value_t = 100)]
    pub n_test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML experiment config; omitted sections use defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config's out_dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's model.attention_enabled.
    #[arg(long, value_enum)]
    pub attention: Option<Switch>,
    /// Overrides the config's train.epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, allow_negative_numbers = true)]
    pub snr: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated SNR levels in dB (defaults to the config's snrs_db).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub snrs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Size {
    Tiny,
    Small,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = Size::Small)]
    pub size: Size,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test fixture: perturb this op's backward rule.
    #[arg(long, hide = true)]
    pub corrupt_op: Option<String>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train(&a),
        Command::SweepSnr(a) => sweep_snr(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::PlotConfusion(a) => plot_confusion(&a),
    }
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    if a.n_train == 0 || a.n_test == 0 {
        return Err(CliError::Config("--n-train and --n-test must be positive".into()));
    }
    let seed = seed_from_env(a.seed, None)?;
    let manifest = build_corpus(a.n_train, a.n_test, seed)?;
    let path = write_corpus(&manifest, &a.out)?;
    println!("wrote {} clips and {}", manifest.entries.len(), path.display());
    Ok(())
}

struct Resolved {
    config: ExperimentConfig,
    seed: u64,
    out: PathBuf,
    attention: bool,
}

fn resolve(a: &RunArgs) -> Result<Resolved> {
    let mut config = ExperimentConfig::load_or_default(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        config.train.epochs = e;
    }
    config.validate()?;
    let seed = seed_from_env(a.seed, config.seed)?;
    let out = a.out.clone().unwrap_or_else(|| config.out_dir.clone());
    let attention = match a.attention {
        Some(s) => s == Switch::On,
        None => config.model.attention_enabled,
    };
    Ok(Resolved { config, seed, out, attention })
}

fn progress(quiet: bool, tag: String) -> impl FnMut(&EpochStats) {
    move |e| {
        if !quiet {
            let test = e.test_accuracy.map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into());
            eprintln!(
                "[{tag}] epoch {:>3}  lr {:.6}  loss {:.4}  train acc {:.3}  test acc {test}",
                e.epoch + 1,
                e.lr,
                e.train_loss,
                e.train_accuracy
            );
        }
    }
}

fn train(a: &TrainArgs) -> Result<()> {
    validate_snr(a.snr)?;
    let r = resolve(&a.run)?;
    let corpus = load_corpus(&r.config, r.seed)?;
    let outcome = run_experiment(&r.config, &corpus, r.seed, a.snr, r.attention, progress(a.run.quiet, format!("{} dB", a.snr)))?;
    write_run(&r.out, &outcome)?;
    println!(
        "snr {} dB, attention {}: test accuracy {:.4} after {} epochs ({:.1} s); outputs in {}",
        a.snr,
        if r.attention { "on" } else { "off" },
        outcome.report.confusion.accuracy(),
        outcome.report.epochs.len(),
        outcome.report.wall_clock_s,
        r.out.display()
    );
    Ok(())
}

fn snr_dir(snr: f64) -> String {
    format!("snr_{snr}")
}

fn sweep_snr(a: &SweepArgs) -> Result<()> {
    let r = resolve(&a.run)?;
    let snrs = a.snrs.clone().unwrap_or_else(|| r.config.snrs_db.clone());
    if snrs.is_empty() {
        return Err(CliError::Config("no SNR levels requested".into()));
    }
    for &s in &snrs {
        validate_snr(s)?;
    }
    let corpus = load_corpus(&r.config, r.seed)?;
    fs::create_dir_all(&r.out).map_err(CliError::io(&r.out))?;

    let started = Instant::now();
    let mut csv = String::from("snr_db,test_accuracy,final_train_loss,status\n");
    let mut points = Vec::new();
    let mut failures: Vec<CliError> = Vec::new();
    for &snr in &snrs {
        let result = run_experiment(&r.config, &corpus, r.seed, snr, r.attention, progress(a.run.quiet, format!("{snr} dB")))
            .and_then(|o| write_run(&r.out.join(snr_dir(snr)), &o).map(|()| o));
        match result {
            Ok(o) => {
                let acc = o.report.confusion.accuracy();
                let _ = writeln!(csv, "{snr},{acc},{},ok", o.report.final_epoch().train_loss);
                points.push((snr, Some(acc)));
            }
            Err(e) => {
                eprintln!("tcanlab: SNR {snr} dB failed: {e}");
                let _ = writeln!(csv, "{snr},,,\"failed: {}\"", e.to_string().replace('"', "'"));
                points.push((snr, None));
                failures.push(e);
            }
        }
    }
    let csv_path = r.out.join("accuracy_vs_snr.csv");
    fs::write(&csv_path, &csv).map_err(CliError::io(&csv_path))?;
    let name = if r.attention { "TCAN" } else { "TCN" };
    let svg = accuracy_plot("Test accuracy vs SNR", "SNR (dB)", &[Series { name, points }]);
    let svg_path = r.out.join("accuracy_vs_snr.svg");
    fs::write(&svg_path, svg).map_err(CliError::io(&svg_path))?;
    print!("{csv}");
    println!("sweep finished in {:.1} s; outputs in {}", started.elapsed().as_secs_f64(), r.out.display());

    match failures.first() {
        None => Ok(()),
        Some(first) => Err(CliError::Partial {
            failed: failures.len(),
            total: snrs.len(),
            code: first.exit_code(),
        }),
    }
}

fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let fault = match &a.corrupt_op {
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| CliError::Config(format!("unknown op {name:?}")))?),
        None => None,
    };
    let size = match a.size {
        Size::Tiny => SuiteSize::Tiny,
        Size::Small => SuiteSize::Small,
    };
    let started = Instant::now();
    let results = run_suite(size, a.seed, fault)?;
    println!("{:<22} {:>14} {:>8}  status", "check", "max_rel_error", "values");
    let mut failing = Vec::new();
    for r in &results {
        let ok = r.passes(GRADCHECK_TOLERANCE);
        println!("{:<22} {:>14.3e} {:>8}  {}", r.name, r.max_rel_error, r.checked, if ok { "ok" } else { "FAIL" });
        if !ok {
            failing.push(r.name.clone());
        }
    }
    println!("{} checks in {:.2} s, tolerance {GRADCHECK_TOLERANCE:e}", results.len(), started.elapsed().as_secs_f64());
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheck(failing))
    }
}

fn plot_confusion(a: &PlotArgs) -> Result<()> {
    let text = fs::read_to_string(&a.report).map_err(CliError::io(&a.report))?;
    let report = TrainReport::from_text(&text)?;
    write_confusion(&report, &a.out)
}

fn write_confusion(report: &TrainReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    let title = match report.labels.get("snr_db") {
        Some(snr) => format!("Confusion matrix, SNR {snr} dB"),
        None => "Confusion matrix".to_string(),
    };
    let svg_path = out.join("confusion.svg");
    fs::write(&svg_path, confusion_heatmap(&report.confusion, &title)).map_err(CliError::io(&svg_path))?;
    let csv_path = out.join(CONFUSION_FILE);
    fs::write(&csv_path, report.confusion.to_csv()).map_err(CliError::io(&csv_path))?;
    println!("wrote {} and {}", svg_path.display(), csv_path.display());
    Ok(())
}
