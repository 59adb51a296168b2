//! The semi-supervised training loop: warm-up, mixup pairing, the
//! decomposed supervised loss, the L2 unsupervised loss on the second head,
//! and per-epoch bookkeeping.
//!
//! The supervised loss is evaluated on the *original* pair members and then
//! combined with the mixing weight; the mixed features only ever reach the
//! unsupervised head. Mislabeled examples keep no labels at all: when one
//! is drafted as the partner of a supervised pair it contributes a hardened
//! pseudo-label instead.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::calibrate::{calibrated_softmax, ProbabilityVector};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::loss::{cross_entropy_loss, edl_loss, l2_prob_loss, EdlLossConfig, LossValue};
use crate::nn::{Head, MlpModel, ModelGrads, SgdMomentum};
use crate::selection::margin;

/// Loss used during warm-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupLoss {
    Edl,
    CrossEntropy,
}

/// All training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    /// Initial learning rate; divided by `lr_decay_factor` from
    /// `lr_decay_epoch` onward.
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_epoch: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// KL weight in the evidential loss.
    pub beta: f64,
    /// Calibration constant rule: gamma = gamma_times_c / C.
    pub gamma_times_c: f64,
    /// Beta(alpha, alpha) parameter for mixup.
    pub mixup_alpha: f64,
    /// Final unsupervised weight, reached after the ramp.
    pub lambda_uns: f64,
    /// Linear ramp length (post-warm-up epochs) for lambda_uns.
    pub lambda_uns_ramp_epochs: usize,
    /// Clean-posterior cutoff for the partition.
    pub clean_threshold: f64,
    /// Hidden layer widths of the trunk.
    pub hidden: Vec<usize>,
    pub warmup_loss: WarmupLoss,
    /// Head that produces pseudo-label targets.
    pub pseudo_label_head: Head,
    /// Head used for inference, margins, and test metrics.
    pub eval_head: Head,
    /// Optional sharpening temperature for pseudo-targets (off by default).
    pub sharpen_temp: Option<f64>,
    /// Dump partition CSVs every k post-warm-up epochs (0 = final only).
    pub partition_dump_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            warmup_epochs: 10,
            learning_rate: 0.02,
            lr_decay_factor: 10.0,
            lr_decay_epoch: 30,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 128,
            beta: 0.5,
            gamma_times_c: 10.0,
            mixup_alpha: 4.0,
            lambda_uns: 1.0,
            lambda_uns_ramp_epochs: 16,
            clean_threshold: 0.5,
            hidden: vec![64, 64],
            warmup_loss: WarmupLoss::Edl,
            pseudo_label_head: Head::Sup,
            eval_head: Head::Sup,
            sharpen_temp: None,
            partition_dump_every: 0,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs >= self.epochs {
            return Err(Error::InvalidConfig(format!(
                "warmup_epochs ({}) must be < epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("lr_decay_factor", self.lr_decay_factor),
            ("gamma_times_c", self.gamma_times_c),
            ("mixup_alpha", self.mixup_alpha),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("beta", self.beta),
            ("lambda_uns", self.lambda_uns),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.clean_threshold) {
            return Err(Error::InvalidConfig(format!(
                "clean_threshold must be in [0, 1), got {}",
                self.clean_threshold
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if let Some(t) = self.sharpen_temp {
            if !(t > 0.0) {
                return Err(Error::InvalidConfig(format!("sharpen_temp must be > 0, got {t}")));
            }
        }
        Ok(())
    }

    /// Per-class calibration constant.
    pub fn gamma_for(&self, n_classes: usize) -> f64 {
        self.gamma_times_c / n_classes as f64
    }

    pub fn edl_config(&self, n_classes: usize) -> EdlLossConfig {
        EdlLossConfig {
            beta: self.beta,
            gamma: self.gamma_for(n_classes),
        }
    }

    /// Learning rate at a given (global) epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_decay_epoch {
            self.learning_rate / self.lr_decay_factor
        } else {
            self.learning_rate
        }
    }

    /// Unsupervised weight at a given (global) epoch: linear ramp from zero
    /// over the first `lambda_uns_ramp_epochs` post-warm-up epochs.
    pub fn lambda_uns_at(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            return 0.0;
        }
        let progress = (epoch - self.warmup_epochs + 1) as f64
            / self.lambda_uns_ramp_epochs.max(1) as f64;
        self.lambda_uns * progress.min(1.0)
    }
}

/// One side of a mixup pair: features and a target vector (one-hot label or
/// probability vector).
#[derive(Debug, Clone)]
pub struct MixSource {
    pub x: Vec<f64>,
    pub target: Vec<f64>,
}

/// A mixed pair. `lambda` is the folded weight max(l, 1-l), so the first
/// source always dominates.
#[derive(Debug, Clone)]
pub struct MixedPair {
    pub lambda: f64,
    pub x_mixed: Vec<f64>,
    pub target_mixed: Vec<f64>,
    pub a: MixSource,
    pub b: MixSource,
}

/// Draw lambda ~ Beta(alpha, alpha), fold it to [0.5, 1], and mix features
/// and targets with the same weight.
pub fn mix_pair(a: MixSource, b: MixSource, alpha: f64, rng: &mut impl Rng) -> MixedPair {
    debug_assert_eq!(a.x.len(), b.x.len());
    debug_assert_eq!(a.target.len(), b.target.len());
    let beta = Beta::new(alpha, alpha).expect("mixup_alpha validated > 0");
    let raw: f64 = beta.sample(rng);
    let lambda = raw.max(1.0 - raw);
    let x_mixed = a
        .x
        .iter()
        .zip(&b.x)
        .map(|(x1, x2)| lambda * x1 + (1.0 - lambda) * x2)
        .collect();
    let target_mixed = a
        .target
        .iter()
        .zip(&b.target)
        .map(|(t1, t2)| lambda * t1 + (1.0 - lambda) * t2)
        .collect();
    MixedPair { lambda, x_mixed, target_mixed, a, b }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot(label: usize, n_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; n_classes];
    v[label] = 1.0;
    v
}

fn is_one_hot(v: &[f64]) -> bool {
    let ones = v.iter().filter(|x| **x == 1.0).count();
    let zeros = v.iter().filter(|x| **x == 0.0).count();
    ones == 1 && ones + zeros == v.len()
}

/// Supervised pair loss value and its gradients with respect to the two
/// source logit vectors (weights lambda and 1-lambda already applied).
#[derive(Debug, Clone)]
pub struct SupLossValue {
    pub value: f64,
    pub grad_logits_a: Vec<f64>,
    pub grad_logits_b: Vec<f64>,
}

/// Decomposed supervised loss of a mixed pair:
/// lambda * edl(x1, y1) + (1 - lambda) * edl(x2, y2),
/// evaluated on the original examples through the supervised head. The
/// mixed features are never touched.
pub fn supervised_loss(pair: &MixedPair, model: &MlpModel, cfg: &TrainConfig) -> Result<SupLossValue> {
    debug_assert!(is_one_hot(&pair.a.target) && is_one_hot(&pair.b.target));
    let edl_cfg = cfg.edl_config(model.n_classes());
    let la = edl_loss(&model.forward(&pair.a.x, Head::Sup)?, argmax(&pair.a.target), &edl_cfg);
    let lb = edl_loss(&model.forward(&pair.b.x, Head::Sup)?, argmax(&pair.b.target), &edl_cfg);
    let w = pair.lambda;
    Ok(SupLossValue {
        value: w * la.value + (1.0 - w) * lb.value,
        grad_logits_a: la.grad_logits.iter().map(|g| w * g).collect(),
        grad_logits_b: lb.grad_logits.iter().map(|g| (1.0 - w) * g).collect(),
    })
}

/// Unsupervised loss of a mixed pair: squared L2 distance between the mixed
/// pseudo-target and the calibrated probability of the unsupervised head on
/// the mixed input. Gradient is with respect to that head's logits.
pub fn unsupervised_loss(pair: &MixedPair, model: &MlpModel, cfg: &TrainConfig) -> Result<LossValue> {
    let o = model.forward(&pair.x_mixed, Head::Uns)?;
    Ok(l2_prob_loss(&o, &pair.target_mixed, cfg.gamma_for(model.n_classes())))
}

/// Calibrated-softmax pseudo-targets from the configured head, detached
/// from any gradient flow. Optionally sharpened.
pub fn pseudo_targets(
    model: &MlpModel,
    xs: &[&[f64]],
    cfg: &TrainConfig,
) -> Result<Vec<ProbabilityVector>> {
    let gamma = cfg.gamma_for(model.n_classes());
    xs.iter()
        .map(|x| {
            let o = model.forward(x, cfg.pseudo_label_head)?;
            let p = calibrated_softmax(&o, gamma);
            Ok(match cfg.sharpen_temp {
                None => p,
                Some(t) => sharpen(&p, t),
            })
        })
        .collect()
}

fn sharpen(p: &ProbabilityVector, temp: f64) -> ProbabilityVector {
    let powed: Vec<f64> = p.as_slice().iter().map(|v| v.powf(1.0 / temp)).collect();
    let z: f64 = powed.iter().sum();
    ProbabilityVector::new(powed.iter().map(|v| v / z).collect())
        .expect("sharpening preserves normalization")
}

fn pseudo_target_of(model: &MlpModel, x: &[f64], cfg: &TrainConfig) -> Result<Vec<f64>> {
    Ok(pseudo_targets(model, &[x], cfg)?.remove(0).into_vec())
}

/// Stats reported by one training epoch.
#[derive(Debug, Clone, Default)]
pub struct EpochStats {
    pub sup_loss: f64,
    pub uns_loss: f64,
    pub lambda_uns: f64,
    pub n_clean: usize,
    pub n_unlabeled: usize,
    /// True when the clean set was empty and the epoch fell back to
    /// warm-up-style supervised training on everything.
    pub fallback_warmup: bool,
}

/// One pass of supervised training on all (noisy) labels through the
/// supervised head. Used for warm-up and for the cross-entropy baselines.
pub fn warmup_epoch(
    model: &mut MlpModel,
    opt: &mut SgdMomentum,
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    loss_kind: WarmupLoss,
    shuffle_rng: &mut impl Rng,
) -> Result<f64> {
    let edl_cfg = cfg.edl_config(ds.n_classes());
    let mut order: Vec<usize> = (0..ds.len()).collect();
    shuffle(&mut order, shuffle_rng);

    let mut grads = ModelGrads::zeros_like(model);
    let mut total_loss = 0.0;
    for batch in order.chunks(cfg.batch_size) {
        grads.reset();
        for &i in batch {
            let cache = model.forward_cached(ds.features(i))?;
            let o = model.head_logits(&cache, Head::Sup);
            let l = match loss_kind {
                WarmupLoss::Edl => edl_loss(&o, ds.given_label(i), &edl_cfg),
                WarmupLoss::CrossEntropy => cross_entropy_loss(&o, ds.given_label(i)),
            };
            total_loss += l.value;
            model.backward(&cache, Some(&l.grad_logits), None, &mut grads);
        }
        grads.scale(1.0 / batch.len() as f64);
        opt.step(model, &grads);
    }
    Ok(total_loss / ds.len() as f64)
}

/// One semi-supervised epoch over a clean/unlabeled partition.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &mut MlpModel,
    opt: &mut SgdMomentum,
    assigned_clean: &[bool],
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    epoch: usize,
    shuffle_rng: &mut impl Rng,
    mixup_rng: &mut impl Rng,
) -> Result<EpochStats> {
    debug_assert_eq!(assigned_clean.len(), ds.len());
    let n_classes = ds.n_classes();
    let mut clean_idx: Vec<usize> = (0..ds.len()).filter(|&i| assigned_clean[i]).collect();
    let mut unlabeled_idx: Vec<usize> = (0..ds.len()).filter(|&i| !assigned_clean[i]).collect();

    if clean_idx.is_empty() {
        eprintln!(
            "warning: epoch {epoch}: partition produced an empty clean set; \
             falling back to a warm-up-style supervised epoch"
        );
        let loss = warmup_epoch(model, opt, ds, cfg, cfg.warmup_loss, shuffle_rng)?;
        return Ok(EpochStats {
            sup_loss: loss,
            lambda_uns: cfg.lambda_uns_at(epoch),
            n_unlabeled: ds.len(),
            fallback_warmup: true,
            ..Default::default()
        });
    }

    shuffle(&mut clean_idx, shuffle_rng);
    shuffle(&mut unlabeled_idx, shuffle_rng);

    let lambda_uns = cfg.lambda_uns_at(epoch);
    let longest = clean_idx.len().max(unlabeled_idx.len());
    let steps = longest.div_ceil(cfg.batch_size);

    // target for a partner drawn from the union: its given label if clean,
    // a hardened pseudo-label if not
    let sup_partner_target = |model: &MlpModel, j: usize| -> Result<Vec<f64>> {
        if assigned_clean[j] {
            Ok(one_hot(ds.given_label(j), n_classes))
        } else {
            let p = pseudo_target_of(model, ds.features(j), cfg)?;
            Ok(one_hot(argmax(&p), n_classes))
        }
    };

    let mut grads = ModelGrads::zeros_like(model);
    let mut sup_loss_total = 0.0;
    let mut sup_count = 0usize;
    let mut uns_loss_total = 0.0;
    let mut uns_count = 0usize;

    for step in 0..steps {
        grads.reset();

        // supervised half: clean-anchored pairs
        let sup_batch: Vec<usize> = (0..cfg.batch_size.min(longest))
            .map(|k| clean_idx[(step * cfg.batch_size + k) % clean_idx.len()])
            .collect();
        let sup_scale = 1.0 / sup_batch.len() as f64;
        for &i in &sup_batch {
            let partner = partner_index(ds.len(), mixup_rng);
            let a = MixSource {
                x: ds.features(i).to_vec(),
                target: one_hot(ds.given_label(i), n_classes),
            };
            let b = MixSource {
                x: ds.features(partner).to_vec(),
                target: sup_partner_target(model, partner)?,
            };
            let pair = mix_pair(a, b, cfg.mixup_alpha, mixup_rng);
            let l = supervised_loss(&pair, model, cfg)?;
            sup_loss_total += l.value;
            sup_count += 1;

            let cache_a = model.forward_cached(&pair.a.x)?;
            let ga: Vec<f64> = l.grad_logits_a.iter().map(|g| g * sup_scale).collect();
            model.backward(&cache_a, Some(&ga), None, &mut grads);
            let cache_b = model.forward_cached(&pair.b.x)?;
            let gb: Vec<f64> = l.grad_logits_b.iter().map(|g| g * sup_scale).collect();
            model.backward(&cache_b, Some(&gb), None, &mut grads);
        }

        // unsupervised half: mislabeled-anchored pairs on mixed inputs
        if !unlabeled_idx.is_empty() && lambda_uns > 0.0 {
            let uns_batch: Vec<usize> = (0..cfg.batch_size.min(longest))
                .map(|k| unlabeled_idx[(step * cfg.batch_size + k) % unlabeled_idx.len()])
                .collect();
            let uns_scale = lambda_uns / uns_batch.len() as f64;
            for &i in &uns_batch {
                let partner = partner_index(ds.len(), mixup_rng);
                let a = MixSource {
                    x: ds.features(i).to_vec(),
                    target: pseudo_target_of(model, ds.features(i), cfg)?,
                };
                let b = MixSource {
                    x: ds.features(partner).to_vec(),
                    target: pseudo_target_of(model, ds.features(partner), cfg)?,
                };
                let pair = mix_pair(a, b, cfg.mixup_alpha, mixup_rng);
                let cache = model.forward_cached(&pair.x_mixed)?;
                let o = model.head_logits(&cache, Head::Uns);
                let l = l2_prob_loss(&o, &pair.target_mixed, cfg.gamma_for(n_classes));
                uns_loss_total += l.value;
                uns_count += 1;
                let gu: Vec<f64> = l.grad_logits.iter().map(|g| g * uns_scale).collect();
                model.backward(&cache, None, Some(&gu), &mut grads);
            }
        }

        opt.step(model, &grads);
    }

    Ok(EpochStats {
        sup_loss: sup_loss_total / sup_count.max(1) as f64,
        uns_loss: uns_loss_total / uns_count.max(1) as f64,
        lambda_uns,
        n_clean: clean_idx.len(),
        n_unlabeled: unlabeled_idx.len(),
        fallback_warmup: false,
    })
}

fn partner_index(n: usize, rng: &mut impl Rng) -> usize {
    rng.random_range(0..n)
}

fn shuffle(idx: &mut [usize], rng: &mut impl Rng) {
    use rand::seq::SliceRandom;
    idx.shuffle(rng);
}

/// Margins of every example under the given head.
pub fn compute_margins(model: &MlpModel, ds: &LabeledDataset, head: Head) -> Result<Vec<f64>> {
    (0..ds.len())
        .map(|i| {
            let o = model.forward(ds.features(i), head)?;
            Ok(margin(&o, ds.given_label(i)))
        })
        .collect()
}

/// Per-example losses against the given labels (for the small-loss
/// criterion). `edl` selects the evidential loss; otherwise plain CE.
pub fn compute_example_losses(
    model: &MlpModel,
    ds: &LabeledDataset,
    use_edl: bool,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let edl_cfg = cfg.edl_config(ds.n_classes());
    (0..ds.len())
        .map(|i| {
            let o = model.forward(ds.features(i), Head::Sup)?;
            Ok(if use_edl {
                edl_loss(&o, ds.given_label(i), &edl_cfg).value
            } else {
                cross_entropy_loss(&o, ds.given_label(i)).value
            })
        })
        .collect()
}

/// Predicted class per example under the given head.
pub fn predictions(model: &MlpModel, ds: &LabeledDataset, head: Head) -> Result<Vec<usize>> {
    (0..ds.len())
        .map(|i| {
            let o = model.forward(ds.features(i), head)?;
            Ok(argmax(o.as_slice()))
        })
        .collect()
}

/// Max-probability confidences. Calibrated probabilities when `calibrated`
/// is set (the evidential model's own predictive distribution); plain
/// softmax otherwise.
pub fn confidences(
    model: &MlpModel,
    ds: &LabeledDataset,
    head: Head,
    calibrated: bool,
    gamma: f64,
) -> Result<Vec<f64>> {
    (0..ds.len())
        .map(|i| {
            let o = model.forward(ds.features(i), head)?;
            let p = if calibrated {
                calibrated_softmax(&o, gamma)
            } else {
                crate::calibrate::softmax(&o)
            };
            Ok(p.confidence())
        })
        .collect()
}
