//! Command-line entry point: experiment runner, gradient verification,
//! checkpoint diagnostics, dataset generation, and noise injection.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 config/usage error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use dpc_core::dataset::{self, LabeledDataset};
use dpc_core::experiment::{run_experiment, ExperimentSpec, Method};
use dpc_core::metrics::{accuracy, ece};
use dpc_core::nn::Checkpoint;
use dpc_core::selection::{margin, selection_auc};
use dpc_core::{calibrated_softmax, gradcheck, noise, softmax};

#[derive(Parser)]
#[command(name = "dpc", version, about = "Noisy-label training with Dirichlet prediction calibration")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment described by a TOML config.
    Train {
        /// Experiment config file.
        #[arg(long)]
        config: PathBuf,
        /// Run directory for artifacts.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the method (dpc, ce_baseline, small_loss_baseline).
        #[arg(long)]
        method: Option<String>,
        /// Override the epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the noise rate.
        #[arg(long)]
        noise_rate: Option<f64>,
    },
    /// Verify every analytic gradient against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Randomized instances per loss suite.
        #[arg(long, default_value_t = 1000)]
        instances: usize,
    },
    /// Emit diagnostics (histograms, reliability data, summary) for a
    /// trained checkpoint on a dataset.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// ECE bin count.
        #[arg(long, default_value_t = 15)]
        bins: usize,
    },
    /// Generate a synthetic dataset CSV.
    GenData {
        /// blobs or rings.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        dim: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 3.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.0)]
        r_inner: f64,
        #[arg(long, default_value_t = 4.0)]
        r_outer: f64,
        #[arg(long, default_value_t = 0.3)]
        radial_noise: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corrupt the labels of a dataset CSV.
    InjectNoise {
        #[arg(long)]
        data: PathBuf,
        /// symmetric or asymmetric.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        rate: f64,
        /// Asymmetric class map as comma-separated targets, e.g. "1,2,0".
        #[arg(long)]
        class_map: Option<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

enum AppError {
    /// Bad config or arguments: exit 2.
    Config(String),
    /// Failure while running: exit 1.
    Runtime(String),
}

impl From<dpc_core::Error> for AppError {
    fn from(e: dpc_core::Error) -> Self {
        match e {
            dpc_core::Error::InvalidConfig(_) => AppError::Config(e.to_string()),
            _ => AppError::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(AppError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.cmd {
        Cmd::Train { config, out, seed, method, epochs, noise_rate } => {
            cmd_train(&config, &out, seed, method, epochs, noise_rate)
        }
        Cmd::Gradcheck { seed, instances } => cmd_gradcheck(seed, instances),
        Cmd::Diagnose { checkpoint, data, out, bins } => cmd_diagnose(&checkpoint, &data, &out, bins),
        Cmd::GenData { kind, n, dim, classes, separation, r_inner, r_outer, radial_noise, seed, out } => {
            cmd_gen_data(&kind, n, dim, classes, separation, r_inner, r_outer, radial_noise, seed, &out)
        }
        Cmd::InjectNoise { data, kind, rate, class_map, seed, out } => {
            cmd_inject_noise(&data, &kind, rate, class_map.as_deref(), seed, &out)
        }
    }
}

fn parse_method(name: &str) -> Result<Method, AppError> {
    match name {
        "dpc" => Ok(Method::Dpc),
        "ce_baseline" => Ok(Method::CeBaseline),
        "small_loss_baseline" => Ok(Method::SmallLossBaseline),
        _ => Err(AppError::Config(format!(
            "unknown method `{name}` (expected dpc, ce_baseline, or small_loss_baseline)"
        ))),
    }
}

fn cmd_train(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    method: Option<String>,
    epochs: Option<usize>,
    noise_rate: Option<f64>,
) -> Result<(), AppError> {
    let text = fs::read_to_string(config)
        .map_err(|e| AppError::Config(format!("cannot read {}: {e}", config.display())))?;
    let mut spec = ExperimentSpec::from_toml(&text)?;
    if let Some(s) = seed {
        spec.train.seed = s;
    }
    if let Some(m) = method {
        spec.method = parse_method(&m)?;
    }
    if let Some(e) = epochs {
        spec.train.epochs = e;
    }
    if let Some(r) = noise_rate {
        use dpc_core::NoiseSpec;
        spec.noise = match spec.noise {
            NoiseSpec::Asymmetric { class_map, .. } => NoiseSpec::Asymmetric { rate: r, class_map },
            _ => NoiseSpec::Symmetric { rate: r },
        };
    }
    // re-validate after overrides
    spec.train.validate().map_err(AppError::from)?;
    spec.validate().map_err(AppError::from)?;

    let summary = run_experiment(&spec, out)?;
    println!("run complete: {}", out.display());
    println!("  method           {}", summary.method.as_str());
    println!("  final train acc  {:.4}", summary.final_train_acc);
    if let Some(acc) = summary.final_test_acc {
        println!("  final test acc   {acc:.4}");
    }
    if let Some(e) = summary.final_test_ece {
        println!("  final test ece   {e:.4}");
    }
    if let Some(auc) = summary.final_selection_auc {
        println!("  selection auc    {auc:.4}");
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64, instances: usize) -> Result<(), AppError> {
    if instances == 0 {
        return Err(AppError::Config("instances must be >= 1".into()));
    }
    let reports = gradcheck::run_all(seed, instances);
    let mut all_ok = true;
    for r in &reports {
        println!(
            "{} {:<32} max_err {:>10.3e}  tol {:>8.1e}  ({} checks)",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.max_err,
            r.tolerance,
            r.instances
        );
        all_ok &= r.passed;
    }
    if all_ok {
        Ok(())
    } else {
        Err(AppError::Runtime("gradient check failed".into()))
    }
}

fn histogram_csv(path: &Path, values: &[f64], bins: usize) -> Result<(), AppError> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in values {
        let b = (((v - lo) / span) * bins as f64) as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let mut file = fs::File::create(path).map_err(io_runtime)?;
    writeln!(file, "bin_low,bin_high,count").map_err(io_runtime)?;
    for (b, count) in counts.iter().enumerate() {
        let l = lo + span * b as f64 / bins as f64;
        let h = lo + span * (b + 1) as f64 / bins as f64;
        writeln!(file, "{l},{h},{count}").map_err(io_runtime)?;
    }
    Ok(())
}

fn io_runtime(e: std::io::Error) -> AppError {
    AppError::Runtime(e.to_string())
}

fn cmd_diagnose(checkpoint: &Path, data: &Path, out: &Path, bins: usize) -> Result<(), AppError> {
    if bins == 0 {
        return Err(AppError::Config("bins must be >= 1".into()));
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    let ds: LabeledDataset = dataset::read_csv(data)?;
    if ds.dim() != ckpt.model.input_dim() {
        return Err(AppError::Runtime(format!(
            "checkpoint/dataset mismatch: model expects {} features, dataset has {}",
            ckpt.model.input_dim(),
            ds.dim()
        )));
    }
    fs::create_dir_all(out).map_err(io_runtime)?;

    let calibrated = ckpt.method == "dpc";
    let mut confs = Vec::with_capacity(ds.len());
    let mut preds = Vec::with_capacity(ds.len());
    let mut margins = Vec::with_capacity(ds.len());
    let mut given_logits = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let o = ckpt.model.forward(ds.features(i), ckpt.eval_head)?;
        let p = if calibrated {
            calibrated_softmax(&o, ckpt.gamma)
        } else {
            softmax(&o)
        };
        confs.push(p.confidence());
        preds.push(p.argmax());
        margins.push(margin(&o, ds.given_label(i)));
        given_logits.push(o.as_slice()[ds.given_label(i)]);
    }

    histogram_csv(&out.join("confidence_hist.csv"), &confs, 30)?;
    histogram_csv(&out.join("given_logit_hist.csv"), &given_logits, 30)?;
    histogram_csv(&out.join("margin_hist.csv"), &margins, 30)?;

    let truths: Vec<usize> = (0..ds.len()).map(|i| ds.true_label(i)).collect();
    let report = ece(&confs, &preds, &truths, bins)?;
    let mut file = fs::File::create(out.join("reliability.csv")).map_err(io_runtime)?;
    writeln!(file, "bin_low,bin_high,mean_conf,acc,count").map_err(io_runtime)?;
    for b in &report.bins {
        writeln!(file, "{},{},{},{},{}", b.lo, b.hi, b.mean_conf, b.accuracy, b.count)
            .map_err(io_runtime)?;
    }

    let acc = accuracy(&preds, &truths);
    let auc = if ds.has_noise_info() {
        selection_auc(&margins, ds.corruption_flags()).ok()
    } else {
        None
    };
    let mut file = fs::File::create(out.join("summary.csv")).map_err(io_runtime)?;
    if let Some(auc) = auc {
        writeln!(file, "accuracy,ece,selection_auc").map_err(io_runtime)?;
        writeln!(file, "{acc},{},{auc}", report.ece).map_err(io_runtime)?;
    } else {
        writeln!(file, "accuracy,ece").map_err(io_runtime)?;
        writeln!(file, "{acc},{}", report.ece).map_err(io_runtime)?;
    }

    println!("diagnostics written to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen_data(
    kind: &str,
    n: usize,
    dim: usize,
    classes: usize,
    separation: f64,
    r_inner: f64,
    r_outer: f64,
    radial_noise: f64,
    seed: u64,
    out: &Path,
) -> Result<(), AppError> {
    let ds = match kind {
        "blobs" => dataset::gaussian_blobs(n, dim, classes, separation, seed)
            .map_err(|e| AppError::Config(e.to_string()))?,
        "rings" => dataset::concentric_rings(n, r_inner, r_outer, radial_noise, seed)
            .map_err(|e| AppError::Config(e.to_string()))?,
        _ => {
            return Err(AppError::Config(format!(
                "unknown generator `{kind}` (expected blobs or rings)"
            )))
        }
    };
    dataset::write_csv(&ds, out, false)?;
    println!("wrote {} examples to {}", ds.len(), out.display());
    Ok(())
}

fn cmd_inject_noise(
    data: &Path,
    kind: &str,
    rate: f64,
    class_map: Option<&str>,
    seed: u64,
    out: &Path,
) -> Result<(), AppError> {
    let ds = dataset::read_csv(data)?;
    let noisy = match kind {
        "symmetric" => noise::inject_symmetric(&ds, rate, seed)
            .map_err(|e| AppError::Config(e.to_string()))?,
        "asymmetric" => {
            let map = match class_map {
                Some(text) => text
                    .split(',')
                    .map(|t| t.trim().parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| AppError::Config(format!("bad class map: {e}")))?,
                None => noise::cyclic_class_map(ds.n_classes()),
            };
            noise::inject_asymmetric(&ds, rate, &map, seed)
                .map_err(|e| AppError::Config(e.to_string()))?
        }
        _ => {
            return Err(AppError::Config(format!(
                "unknown noise kind `{kind}` (expected symmetric or asymmetric)"
            )))
        }
    };
    dataset::write_csv(&noisy, out, true)?;
    println!(
        "wrote {} examples ({:.1}% corrupted) to {}",
        noisy.len(),
        100.0 * noisy.realized_noise_rate(),
        out.display()
    );
    Ok(())
}
