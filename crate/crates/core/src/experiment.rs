//! Experiment orchestration: dataset construction, noise injection, the
//! method-specific training loops, and the run-directory artifacts
//! (config snapshot, metrics.csv, partition dumps, final checkpoint).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{self, LabeledDataset};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, ece, partition_quality, DEFAULT_ECE_BINS};
use crate::nn::{Checkpoint, MlpModel, SgdMomentum, CHECKPOINT_VERSION};
use crate::noise;
use crate::rng;
use crate::selection::{
    margin_partition, selection_auc, small_loss_partition, PartitionResult, GMM_DEFAULT_MAX_ITER,
    GMM_DEFAULT_TOL,
};
use crate::train::{
    compute_example_losses, compute_margins, confidences, predictions, train_epoch, warmup_epoch,
    TrainConfig, WarmupLoss,
};

/// Which training recipe to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Calibrated evidential training with margin-based selection and the
    /// semi-supervised loop.
    Dpc,
    /// Plain cross-entropy on all (noisy) labels; no selection.
    CeBaseline,
    /// Cross-entropy training plus small-loss selection diagnostics each
    /// epoch (the matched baseline for criterion comparisons); training is
    /// identical to `CeBaseline`.
    SmallLossBaseline,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Dpc => "dpc",
            Method::CeBaseline => "ce_baseline",
            Method::SmallLossBaseline => "small_loss_baseline",
        }
    }
}

/// Where the data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Blobs {
        n_train: usize,
        n_test: usize,
        dim: usize,
        classes: usize,
        separation: f64,
    },
    Rings {
        n_train: usize,
        n_test: usize,
        r_inner: f64,
        r_outer: f64,
        radial_noise: f64,
    },
    Csv {
        train: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test: Option<PathBuf>,
    },
}

/// Label corruption applied to the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    None,
    Symmetric {
        rate: f64,
    },
    Asymmetric {
        rate: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        class_map: Option<Vec<usize>>,
    },
}

/// A full experiment description; serialized verbatim into the run
/// directory as `config.snapshot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub method: Method,
    pub data: DataSource,
    pub noise: NoiseSpec,
    pub train: TrainConfig,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("bad experiment config: {e}")))?;
        spec.train.validate()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match &self.noise {
            NoiseSpec::Symmetric { rate } | NoiseSpec::Asymmetric { rate, .. } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(Error::InvalidConfig(format!(
                        "noise rate must be in [0, 1), got {rate}"
                    )));
                }
            }
            NoiseSpec::None => {}
        }
        match &self.data {
            DataSource::Blobs { n_train, dim, classes, .. } => {
                if *classes < 2 || *dim == 0 || *n_train == 0 {
                    return Err(Error::InvalidConfig("bad blob dimensions".into()));
                }
            }
            DataSource::Rings { n_train, r_inner, r_outer, .. } => {
                if !(r_outer > r_inner && *r_inner > 0.0) || *n_train == 0 {
                    return Err(Error::InvalidConfig("bad ring radii".into()));
                }
            }
            DataSource::Csv { .. } => {}
        }
        Ok(())
    }
}

/// Final numbers of a run, mirrored from the last metrics row.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub method: Method,
    pub epochs: usize,
    pub final_train_acc: f64,
    pub final_test_acc: Option<f64>,
    pub final_test_ece: Option<f64>,
    /// AUC of the method's own selection criterion after the final epoch
    /// (margin posterior for DPC, small-loss posterior for the baseline).
    pub final_selection_auc: Option<f64>,
    pub final_clean_precision: Option<f64>,
    pub final_clean_recall: Option<f64>,
}

struct MetricsWriter {
    file: fs::File,
}

impl MetricsWriter {
    fn create(path: &Path) -> Result<Self> {
        let mut file = fs::File::create(path)?;
        writeln!(
            file,
            "epoch,train_acc,test_acc,ece,selection_auc,clean_precision,clean_recall,loss_sup,loss_uns,lambda_uns"
        )?;
        Ok(Self { file })
    }

    #[allow(clippy::too_many_arguments)]
    fn row(
        &mut self,
        epoch: usize,
        train_acc: f64,
        test_acc: Option<f64>,
        ece: Option<f64>,
        auc: Option<f64>,
        precision: Option<f64>,
        recall: Option<f64>,
        loss_sup: f64,
        loss_uns: Option<f64>,
        lambda_uns: f64,
    ) -> Result<()> {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        writeln!(
            self.file,
            "{epoch},{train_acc},{},{},{},{},{},{loss_sup},{},{lambda_uns}",
            opt(test_acc),
            opt(ece),
            opt(auc),
            opt(precision),
            opt(recall),
            opt(loss_uns),
        )?;
        Ok(())
    }
}

/// Build the train/test pair described by a data source. Synthetic sources
/// draw a single pool (so both splits share class centers) and split off
/// the tail as the clean test set.
pub fn build_datasets(
    source: &DataSource,
    seed: u64,
) -> Result<(LabeledDataset, Option<LabeledDataset>)> {
    match source {
        DataSource::Blobs { n_train, n_test, dim, classes, separation } => {
            let pool = dataset::gaussian_blobs(n_train + n_test, *dim, *classes, *separation, seed)?;
            split_pool(pool, *n_train, *n_test)
        }
        DataSource::Rings { n_train, n_test, r_inner, r_outer, radial_noise } => {
            let pool =
                dataset::concentric_rings(n_train + n_test, *r_inner, *r_outer, *radial_noise, seed)?;
            split_pool(pool, *n_train, *n_test)
        }
        DataSource::Csv { train, test } => {
            let train_ds = dataset::read_csv(train)?;
            let test_ds = test.as_ref().map(|p| dataset::read_csv(p)).transpose()?;
            if let Some(t) = &test_ds {
                if t.dim() != train_ds.dim() {
                    return Err(Error::DimensionMismatch(format!(
                        "train has {} features, test has {}",
                        train_ds.dim(),
                        t.dim()
                    )));
                }
            }
            Ok((train_ds, test_ds))
        }
    }
}

fn split_pool(
    pool: LabeledDataset,
    n_train: usize,
    n_test: usize,
) -> Result<(LabeledDataset, Option<LabeledDataset>)> {
    // the generators interleave classes round-robin, so prefix/suffix splits
    // stay balanced
    let take = |lo: usize, hi: usize| -> Result<LabeledDataset> {
        let features: Vec<Vec<f64>> = (lo..hi).map(|i| pool.features(i).to_vec()).collect();
        let labels: Vec<usize> = (lo..hi).map(|i| pool.true_label(i)).collect();
        LabeledDataset::from_parts(features, labels, pool.n_classes())
    };
    let train = take(0, n_train)?;
    let test = if n_test > 0 { Some(take(n_train, n_train + n_test)?) } else { None };
    Ok((train, test))
}

fn apply_noise(train: LabeledDataset, spec: &NoiseSpec, seed: u64) -> Result<LabeledDataset> {
    match spec {
        NoiseSpec::None => Ok(train),
        NoiseSpec::Symmetric { rate } => noise::inject_symmetric(&train, *rate, seed),
        NoiseSpec::Asymmetric { rate, class_map } => {
            let map = class_map
                .clone()
                .unwrap_or_else(|| noise::cyclic_class_map(train.n_classes()));
            noise::inject_asymmetric(&train, *rate, &map, seed)
        }
    }
}

/// Run one experiment, writing all artifacts into `out_dir`.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunSummary> {
    spec.train.validate()?;
    spec.validate()?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("config.snapshot"), spec.to_toml())?;

    let cfg = &spec.train;
    let (train_clean, test) = build_datasets(&spec.data, cfg.seed)?;
    let train = apply_noise(train_clean, &spec.noise, cfg.seed)?;
    let n_classes = train.n_classes();
    let gamma = cfg.gamma_for(n_classes);

    let mut model = MlpModel::new(train.dim(), &cfg.hidden, n_classes, cfg.seed)?;
    let mut opt = SgdMomentum::new(&model, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
    let mut shuffle_rng = rng::stream(cfg.seed, "shuffle");
    let mut mixup_rng = rng::stream(cfg.seed, "mixup");

    let mut metrics = MetricsWriter::create(&out_dir.join("metrics.csv"))?;
    let is_dpc = spec.method == Method::Dpc;
    let selection_active = spec.method != Method::CeBaseline;

    // partition used by the next SSL epoch (None until the first one exists)
    let mut current_partition: Option<PartitionResult> = None;
    let mut last_auc = None;
    let mut last_precision = None;
    let mut last_recall = None;
    let mut last_test_acc = None;
    let mut last_test_ece = None;
    let mut train_acc = 0.0;

    for epoch in 0..cfg.epochs {
        opt.lr = cfg.lr_at(epoch);

        // --- train ---
        let (loss_sup, loss_uns, lambda_uns) = if is_dpc {
            if epoch < cfg.warmup_epochs {
                let l = warmup_epoch(&mut model, &mut opt, &train, cfg, cfg.warmup_loss, &mut shuffle_rng)?;
                (l, None, 0.0)
            } else {
                let assigned: Vec<bool> = current_partition
                    .as_ref()
                    .map(|p| p.assigned_clean.clone())
                    .unwrap_or_else(|| vec![true; train.len()]);
                let stats = train_epoch(
                    &mut model,
                    &mut opt,
                    &assigned,
                    &train,
                    cfg,
                    epoch,
                    &mut shuffle_rng,
                    &mut mixup_rng,
                )?;
                let uns = (!stats.fallback_warmup).then_some(stats.uns_loss);
                (stats.sup_loss, uns, stats.lambda_uns)
            }
        } else {
            // both baselines train with plain cross-entropy on everything
            let l = warmup_epoch(
                &mut model,
                &mut opt,
                &train,
                cfg,
                WarmupLoss::CrossEntropy,
                &mut shuffle_rng,
            )?;
            (l, None, 0.0)
        };

        // --- select (post-epoch scores; the next epoch trains on them) ---
        let mut auc = None;
        let mut precision = None;
        let mut recall = None;
        if selection_active && epoch + 1 >= cfg.warmup_epochs {
            let part = if is_dpc {
                let margins = compute_margins(&model, &train, cfg.eval_head)?;
                build_margin_partition(&margins, cfg)
            } else {
                let losses = compute_example_losses(&model, &train, false, cfg)?;
                build_small_loss_partition(&losses, cfg)
            };

            if train.has_noise_info() {
                auc = selection_auc(&part.clean_posterior, train.corruption_flags()).ok();
                let q = partition_quality(&part.assigned_clean, train.corruption_flags());
                precision = q.precision;
                recall = q.recall;
            }

            let dump_due = (cfg.partition_dump_every > 0
                && (epoch + 1 - cfg.warmup_epochs) % cfg.partition_dump_every == 0)
                || epoch + 1 == cfg.epochs;
            if dump_due {
                let losses = compute_example_losses(&model, &train, is_dpc, cfg)?;
                let margins = compute_margins(&model, &train, cfg.eval_head)?;
                write_partition_csv(
                    &out_dir.join(format!("partition_epoch{epoch}.csv")),
                    &margins,
                    &losses,
                    &part,
                    &train,
                )?;
            }
            current_partition = Some(part);
            last_auc = auc;
            last_precision = precision;
            last_recall = recall;
        }

        // --- evaluate ---
        let train_preds = predictions(&model, &train, cfg.eval_head)?;
        let given: Vec<usize> = (0..train.len()).map(|i| train.given_label(i)).collect();
        train_acc = accuracy(&train_preds, &given);

        let (test_acc, test_ece) = if let Some(test_ds) = &test {
            let preds = predictions(&model, test_ds, cfg.eval_head)?;
            let truths: Vec<usize> = (0..test_ds.len()).map(|i| test_ds.true_label(i)).collect();
            let acc = accuracy(&preds, &truths);
            let conf = confidences(&model, test_ds, cfg.eval_head, is_dpc, gamma)?;
            let report = ece(&conf, &preds, &truths, DEFAULT_ECE_BINS)?;
            (Some(acc), Some(report.ece))
        } else {
            (None, None)
        };
        last_test_acc = test_acc;
        last_test_ece = test_ece;

        metrics.row(
            epoch, train_acc, test_acc, test_ece, auc, precision, recall, loss_sup, loss_uns,
            lambda_uns,
        )?;
    }

    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        seed: cfg.seed,
        method: spec.method.as_str().to_string(),
        gamma,
        eval_head: cfg.eval_head,
        model,
    };
    ckpt.save(&out_dir.join("model.json"))?;

    Ok(RunSummary {
        method: spec.method,
        epochs: cfg.epochs,
        final_train_acc: train_acc,
        final_test_acc: last_test_acc,
        final_test_ece: last_test_ece,
        final_selection_auc: last_auc,
        final_clean_precision: last_precision,
        final_clean_recall: last_recall,
    })
}

/// Margin partition with the documented fallbacks: a degenerate mixture
/// falls back to a threshold-at-median split, and a mixture without a
/// detectable mislabeled mode keeps everything clean. "No mislabeled mode"
/// means the smaller-mean component still sits at nonnegative raw margins
/// (every mode has evidence for its given label), or the two components are
/// not meaningfully separated at all.
fn build_margin_partition(margins: &[f64], cfg: &TrainConfig) -> PartitionResult {
    match margin_partition(
        margins,
        cfg.clean_threshold,
        GMM_DEFAULT_TOL,
        GMM_DEFAULT_MAX_ITER,
        cfg.seed,
    ) {
        Ok(mut part) => {
            let lo = margins.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = margins.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            // the mixture was fitted on min-max normalized margins
            let comp0_raw_mean = lo + part.gmm.components[0].mean * (hi - lo);
            if part.low_separation || comp0_raw_mean >= 0.0 {
                part.assigned_clean = vec![true; margins.len()];
            }
            part
        }
        Err(_) => median_fallback(margins, true),
    }
}

fn build_small_loss_partition(losses: &[f64], cfg: &TrainConfig) -> PartitionResult {
    match small_loss_partition(
        losses,
        GMM_DEFAULT_TOL,
        GMM_DEFAULT_MAX_ITER,
        cfg.clean_threshold,
        cfg.seed,
    ) {
        Ok(mut part) => {
            if part.low_separation {
                part.assigned_clean = vec![true; losses.len()];
            }
            part
        }
        Err(_) => median_fallback(losses, false),
    }
}

/// Threshold-at-median partition for degenerate score distributions.
/// `high_is_clean` is true for margins, false for losses.
fn median_fallback(scores: &[f64], high_is_clean: bool) -> PartitionResult {
    use crate::selection::{GaussComponent, Gmm1d};
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    let assigned_clean: Vec<bool> = scores
        .iter()
        .map(|&s| if high_is_clean { s >= median } else { s <= median })
        .collect();
    let clean_posterior: Vec<f64> = assigned_clean
        .iter()
        .map(|c| if *c { 1.0 } else { 0.0 })
        .collect();
    let stub = GaussComponent { mean: median, var: 1.0, weight: 0.5 };
    PartitionResult {
        scores: scores.to_vec(),
        clean_posterior,
        assigned_clean,
        gmm: Gmm1d {
            components: [stub, stub],
            iterations: 0,
            log_likelihood: f64::NEG_INFINITY,
            ll_trace: vec![],
        },
        low_separation: true,
    }
}

fn write_partition_csv(
    path: &Path,
    margins: &[f64],
    losses: &[f64],
    part: &PartitionResult,
    train: &LabeledDataset,
) -> Result<()> {
    let mut file = fs::File::create(path)?;
    let with_truth = train.has_noise_info();
    if with_truth {
        writeln!(file, "index,margin,loss,clean_posterior,assigned_clean,is_corrupted")?;
    } else {
        writeln!(file, "index,margin,loss,clean_posterior,assigned_clean")?;
    }
    for i in 0..margins.len() {
        let assigned = if part.assigned_clean[i] { 1 } else { 0 };
        if with_truth {
            let corrupted = if train.is_corrupted(i) { 1 } else { 0 };
            writeln!(
                file,
                "{i},{},{},{},{assigned},{corrupted}",
                margins[i], losses[i], part.clean_posterior[i]
            )?;
        } else {
            writeln!(
                file,
                "{i},{},{},{},{assigned}",
                margins[i], losses[i], part.clean_posterior[i]
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_spec(method: Method, seed: u64) -> ExperimentSpec {
        ExperimentSpec {
            method,
            data: DataSource::Blobs {
                n_train: 400,
                n_test: 200,
                dim: 6,
                classes: 3,
                separation: 3.0,
            },
            noise: NoiseSpec::Symmetric { rate: 0.3 },
            train: TrainConfig {
                epochs: 6,
                warmup_epochs: 2,
                batch_size: 64,
                hidden: vec![16],
                lr_decay_epoch: 5,
                seed,
                ..TrainConfig::default()
            },
        }
    }

    #[test]
    fn toml_roundtrip() {
        let spec = quick_spec(Method::Dpc, 3);
        let text = spec.to_toml();
        let back = ExperimentSpec::from_toml(&text).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn from_toml_rejects_bad_config() {
        assert!(ExperimentSpec::from_toml("method = \"nope\"").is_err());
        let mut spec = quick_spec(Method::Dpc, 1);
        spec.train.warmup_epochs = 99;
        assert!(ExperimentSpec::from_toml(&spec.to_toml()).is_err());
    }

    #[test]
    fn synthetic_split_shares_class_structure() {
        let (train, test) = build_datasets(
            &DataSource::Blobs { n_train: 300, n_test: 150, dim: 4, classes: 3, separation: 3.0 },
            7,
        )
        .unwrap();
        let test = test.unwrap();
        assert_eq!(train.len(), 300);
        assert_eq!(test.len(), 150);
        // class balance within one example on both splits
        for c in 0..3 {
            assert_eq!((0..train.len()).filter(|&i| train.true_label(i) == c).count(), 100);
            assert_eq!((0..test.len()).filter(|&i| test.true_label(i) == c).count(), 50);
        }
    }

    #[test]
    fn dpc_run_produces_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let spec = quick_spec(Method::Dpc, 5);
        let summary = run_experiment(&spec, dir.path()).unwrap();
        assert!(dir.path().join("config.snapshot").exists());
        assert!(dir.path().join("metrics.csv").exists());
        assert!(dir.path().join("model.json").exists());
        assert!(dir.path().join("partition_epoch5.csv").exists());
        assert!(summary.final_test_acc.is_some());
        let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(metrics.lines().count(), 1 + spec.train.epochs);
    }

    #[test]
    fn ce_baseline_emits_no_partition_files() {
        let dir = tempfile::tempdir().unwrap();
        let spec = quick_spec(Method::CeBaseline, 5);
        let summary = run_experiment(&spec, dir.path()).unwrap();
        assert!(summary.final_selection_auc.is_none());
        let partition_files: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with("partition_"))
            .collect();
        assert!(partition_files.is_empty());
    }

    #[test]
    fn small_loss_baseline_reports_selection() {
        let dir = tempfile::tempdir().unwrap();
        let spec = quick_spec(Method::SmallLossBaseline, 5);
        let summary = run_experiment(&spec, dir.path()).unwrap();
        assert!(summary.final_selection_auc.is_some());
        assert!(dir.path().join("partition_epoch5.csv").exists());
    }

    #[test]
    fn same_seed_same_metrics_bytes() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let spec = quick_spec(Method::Dpc, 11);
        run_experiment(&spec, dir_a.path()).unwrap();
        run_experiment(&spec, dir_b.path()).unwrap();
        let a = fs::read(dir_a.path().join("metrics.csv")).unwrap();
        let b = fs::read(dir_b.path().join("metrics.csv")).unwrap();
        assert_eq!(a, b);
    }
}
