//! Large-margin example selection: per-example margins, a two-component
//! one-dimensional Gaussian mixture fitted by EM, the clean/mislabeled
//! partition it induces, the small-loss baseline criterion, and ROC AUC for
//! judging either criterion against ground truth.

use rand::Rng;

use crate::calibrate::LogitVector;
use crate::error::{Error, Result};
use crate::rng;

/// Margin of an example: given-label logit minus the largest complementary
/// logit. Translation-invariant by construction; may be negative.
pub fn margin(o: &LogitVector, given_label: usize) -> f64 {
    let os = o.as_slice();
    assert!(given_label < os.len(), "label {given_label} out of range");
    let best_other = os
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != given_label)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    os[given_label] - best_other
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussComponent {
    pub mean: f64,
    pub var: f64,
    pub weight: f64,
}

impl GaussComponent {
    fn log_density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * (d * d / self.var + self.var.ln() + LN_TWO_PI)
    }
}

const LN_TWO_PI: f64 = 1.837_877_066_409_345_5;

/// Two-component 1-D Gaussian mixture, components ordered by mean
/// (component 0 has the smaller mean).
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm1d {
    pub components: [GaussComponent; 2],
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Log-likelihood after each EM iteration; non-decreasing.
    pub ll_trace: Vec<f64>,
}

impl Gmm1d {
    /// Posterior probability that `x` came from component `k`.
    pub fn posterior(&self, x: f64, k: usize) -> f64 {
        let l0 = self.components[0].weight.ln() + self.components[0].log_density(x);
        let l1 = self.components[1].weight.ln() + self.components[1].log_density(x);
        let m = l0.max(l1);
        let p0 = (l0 - m).exp();
        let p1 = (l1 - m).exp();
        let z = p0 + p1;
        if k == 0 {
            p0 / z
        } else {
            p1 / z
        }
    }

    /// Separation of the two components in pooled standard deviations
    /// (a d' statistic). Small values mean the mixture is effectively
    /// unimodal and the partition carries little signal.
    pub fn separation(&self) -> f64 {
        let pooled = ((self.components[0].var + self.components[1].var) / 2.0).sqrt();
        (self.components[1].mean - self.components[0].mean) / pooled
    }
}

pub const GMM_DEFAULT_TOL: f64 = 1e-6;
pub const GMM_DEFAULT_MAX_ITER: usize = 200;
/// Variance floor scale: floor = 1e-6 * range^2.
const VAR_FLOOR_SCALE: f64 = 1e-6;

/// Fit a two-component GMM by EM.
///
/// Initialization splits the values at the median (deterministic); the seed
/// only matters in the rare case where both halves share a mean, which gets
/// a deterministic jitter. Errors on fewer than 10 values or on constant
/// input; callers should fall back to a threshold-at-median partition in
/// the degenerate case.
pub fn fit_gmm(values: &[f64], tol: f64, max_iter: usize, seed: u64) -> Result<Gmm1d> {
    if values.len() < 10 {
        return Err(Error::Degenerate(format!(
            "need at least 10 values to fit a mixture, got {}",
            values.len()
        )));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Degenerate(
            "all values identical; fall back to a threshold-at-median partition".into(),
        ));
    }
    let range = hi - lo;
    let var_floor = VAR_FLOOR_SCALE * range * range;

    // median-split initialization
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    let (lo_half, hi_half) = sorted.split_at(mid);
    let mut comps = [
        moments_component(lo_half, var_floor),
        moments_component(hi_half, var_floor),
    ];
    if comps[0].mean == comps[1].mean {
        // e.g. > 50% of the values tied at the median
        let sd = (values.iter().map(|v| (v - comps[0].mean).powi(2)).sum::<f64>()
            / values.len() as f64)
            .sqrt()
            .max(range * 1e-3);
        let mut r = rng::stream(seed, "gmm");
        let jitter: f64 = r.random_range(0.1..0.5) * sd;
        comps[0].mean -= jitter;
        comps[1].mean += jitter;
    }

    let n = values.len();
    let mut resp = vec![0.0f64; n]; // responsibility of component 1
    let mut prev_ll = f64::NEG_INFINITY;
    let mut ll_trace = Vec::new();
    let mut iterations = 0;

    for iter in 0..max_iter {
        // E step
        let mut ll = 0.0;
        for (i, &x) in values.iter().enumerate() {
            let l0 = comps[0].weight.ln() + comps[0].log_density(x);
            let l1 = comps[1].weight.ln() + comps[1].log_density(x);
            let m = l0.max(l1);
            let e0 = (l0 - m).exp();
            let e1 = (l1 - m).exp();
            let z = e0 + e1;
            resp[i] = e1 / z;
            ll += m + z.ln();
        }
        ll_trace.push(ll);
        iterations = iter + 1;

        // M step
        let n1: f64 = resp.iter().sum();
        let n0 = n as f64 - n1;
        let w1 = (n1 / n as f64).clamp(1e-8, 1.0 - 1e-8);
        let mu0 = values
            .iter()
            .zip(&resp)
            .map(|(x, r)| x * (1.0 - r))
            .sum::<f64>()
            / n0.max(1e-12);
        let mu1 = values.iter().zip(&resp).map(|(x, r)| x * r).sum::<f64>() / n1.max(1e-12);
        let v0 = values
            .iter()
            .zip(&resp)
            .map(|(x, r)| (1.0 - r) * (x - mu0) * (x - mu0))
            .sum::<f64>()
            / n0.max(1e-12);
        let v1 = values
            .iter()
            .zip(&resp)
            .map(|(x, r)| r * (x - mu1) * (x - mu1))
            .sum::<f64>()
            / n1.max(1e-12);
        comps = [
            GaussComponent { mean: mu0, var: v0.max(var_floor), weight: 1.0 - w1 },
            GaussComponent { mean: mu1, var: v1.max(var_floor), weight: w1 },
        ];

        if prev_ll.is_finite() && ll - prev_ll < tol * prev_ll.abs().max(1.0) {
            prev_ll = ll;
            break;
        }
        prev_ll = ll;
    }

    if comps[0].mean > comps[1].mean {
        comps.swap(0, 1);
    }
    Ok(Gmm1d {
        components: comps,
        iterations,
        log_likelihood: prev_ll,
        ll_trace,
    })
}

fn moments_component(half: &[f64], var_floor: f64) -> GaussComponent {
    let n = half.len() as f64;
    let mean = half.iter().sum::<f64>() / n;
    let var = half.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    GaussComponent {
        mean,
        var: var.max(var_floor),
        weight: 0.5,
    }
}

/// Which component counts as "clean" when scoring a partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CleanComponent {
    /// Larger-mean component (margin criterion).
    LargerMean,
    /// Smaller-mean component (small-loss criterion).
    SmallerMean,
}

/// Per-example partition of a score vector under a fitted mixture.
#[derive(Debug, Clone)]
pub struct PartitionResult {
    /// The raw scores that were partitioned (margins or losses).
    pub scores: Vec<f64>,
    /// Posterior probability of the clean component, per example.
    pub clean_posterior: Vec<f64>,
    /// Clean iff posterior > threshold.
    pub assigned_clean: Vec<bool>,
    pub gmm: Gmm1d,
    /// True when the mixture separation is too weak to trust the split.
    pub low_separation: bool,
}

/// Component separation below which a fitted mixture is flagged as
/// effectively unimodal. EM on a single Gaussian settles around d' of 1;
/// genuinely bimodal margin/loss distributions land well above 2.
pub const LOW_SEPARATION_DPRIME: f64 = 1.5;

/// Score a fitted mixture over raw scores. `normalized` must be the same
/// transform of `scores` that the mixture was fitted on.
pub fn partition(
    scores: &[f64],
    normalized: &[f64],
    gmm: &Gmm1d,
    clean: CleanComponent,
    threshold: f64,
) -> PartitionResult {
    let k = match clean {
        CleanComponent::LargerMean => 1,
        CleanComponent::SmallerMean => 0,
    };
    let clean_posterior: Vec<f64> = normalized.iter().map(|&x| gmm.posterior(x, k)).collect();
    let assigned_clean: Vec<bool> = clean_posterior.iter().map(|p| *p > threshold).collect();
    PartitionResult {
        scores: scores.to_vec(),
        clean_posterior,
        assigned_clean,
        low_separation: gmm.separation() < LOW_SEPARATION_DPRIME,
        gmm: gmm.clone(),
    }
}

fn min_max_normalize(values: &[f64]) -> Option<Vec<f64>> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return None;
    }
    Some(values.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// Margin-criterion partition: min-max normalize margins, fit the mixture,
/// take the larger-mean component's posterior as the clean score.
pub fn margin_partition(
    margins: &[f64],
    threshold: f64,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<PartitionResult> {
    let normalized = min_max_normalize(margins).ok_or_else(|| {
        Error::Degenerate(
            "all margins identical; fall back to a threshold-at-median partition".into(),
        )
    })?;
    let gmm = fit_gmm(&normalized, tol, max_iter, seed)?;
    Ok(partition(
        margins,
        &normalized,
        &gmm,
        CleanComponent::LargerMean,
        threshold,
    ))
}

/// Small-loss-criterion partition: clean examples live in the smaller-mean
/// component of the per-example loss mixture.
pub fn small_loss_partition(
    losses: &[f64],
    tol: f64,
    max_iter: usize,
    threshold: f64,
    seed: u64,
) -> Result<PartitionResult> {
    let normalized = min_max_normalize(losses).ok_or_else(|| {
        Error::Degenerate(
            "all losses identical; fall back to a threshold-at-median partition".into(),
        )
    })?;
    let gmm = fit_gmm(&normalized, tol, max_iter, seed)?;
    Ok(partition(
        losses,
        &normalized,
        &gmm,
        CleanComponent::SmallerMean,
        threshold,
    ))
}

/// ROC AUC of a clean-score against ground-truth corruption flags
/// (rank-sum formulation with tie correction). Clean examples are the
/// positive class; a score that ranks every clean example above every
/// corrupted one gets 1.0.
pub fn selection_auc(scores: &[f64], corrupted: &[bool]) -> Result<f64> {
    if scores.len() != corrupted.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores vs {} flags",
            scores.len(),
            corrupted.len()
        )));
    }
    let n_pos = corrupted.iter().filter(|c| !**c).count();
    let n_neg = corrupted.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate(
            "AUC needs both clean and corrupted examples".into(),
        ));
    }

    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // average ranks over tie groups (1-based ranks)
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &e in &idx[i..=j] {
            if !corrupted[e] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn logits(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn margin_hand_examples() {
        assert_eq!(margin(&logits(&[3.0, -1.0, 0.0]), 0), 3.0);
        assert_eq!(margin(&logits(&[3.0, -1.0, 0.0]), 1), -4.0);
        assert_eq!(margin(&logits(&[2.0, 2.0, 2.0]), 1), 0.0);
    }

    #[test]
    fn margin_is_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..500 {
            let c = rng.random_range(2..9);
            let o: Vec<f64> = (0..c).map(|_| rng.random_range(-20.0..20.0)).collect();
            let label = rng.random_range(0..c);
            let k: f64 = rng.random_range(-50.0..50.0);
            let shifted: Vec<f64> = o.iter().map(|x| x + k).collect();
            // exact equality: the shift cancels in the subtraction only up to
            // rounding of o+k, so allow 1 ulp-ish slack
            let m0 = margin(&logits(&o), label);
            let m1 = margin(&logits(&shifted), label);
            assert!((m0 - m1).abs() <= 1e-12 * m0.abs().max(1.0));
        }
    }

    #[test]
    fn gmm_recovers_well_separated_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut values = Vec::new();
        for _ in 0..1000 {
            let z: f64 = StandardNormal.sample(&mut rng);
            values.push(-4.0 + z);
        }
        for _ in 0..1000 {
            let z: f64 = StandardNormal.sample(&mut rng);
            values.push(4.0 + z);
        }
        let gmm = fit_gmm(&values, GMM_DEFAULT_TOL, GMM_DEFAULT_MAX_ITER, 1).unwrap();
        assert!((gmm.components[0].mean + 4.0).abs() <= 0.2);
        assert!((gmm.components[1].mean - 4.0).abs() <= 0.2);
        assert!((gmm.components[0].weight - 0.5).abs() <= 0.05);
        assert!((gmm.components[1].weight - 0.5).abs() <= 0.05);
        assert!(gmm.separation() > 4.0);
    }

    #[test]
    fn gmm_log_likelihood_never_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for trial in 0..20 {
            let mut values = Vec::new();
            let sep: f64 = rng.random_range(0.5..6.0);
            for _ in 0..400 {
                let z: f64 = StandardNormal.sample(&mut rng);
                values.push(z - sep / 2.0);
            }
            for _ in 0..400 {
                let z: f64 = StandardNormal.sample(&mut rng);
                values.push(z * 1.5 + sep / 2.0);
            }
            let gmm = fit_gmm(&values, GMM_DEFAULT_TOL, GMM_DEFAULT_MAX_ITER, trial).unwrap();
            for w in gmm.ll_trace.windows(2) {
                assert!(
                    w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0),
                    "log-likelihood decreased: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn gmm_on_unimodal_data_flags_low_separation() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let values: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let gmm = fit_gmm(&values, GMM_DEFAULT_TOL, GMM_DEFAULT_MAX_ITER, 1).unwrap();
        let normalized = values.clone();
        let part = partition(&values, &normalized, &gmm, CleanComponent::LargerMean, 0.5);
        assert!(
            part.low_separation,
            "single-Gaussian data must flag low separation, d'={}",
            gmm.separation()
        );
    }

    #[test]
    fn gmm_exactly_separated_clusters_hit_variance_floor() {
        let mut values = vec![0.0; 1000];
        values.extend(vec![10.0; 1000]);
        let gmm = fit_gmm(&values, GMM_DEFAULT_TOL, GMM_DEFAULT_MAX_ITER, 1).unwrap();
        assert!((gmm.components[0].mean - 0.0).abs() <= 1e-3);
        assert!((gmm.components[1].mean - 10.0).abs() <= 1e-3);
        let floor = 1e-6 * 100.0;
        assert!((gmm.components[0].var - floor).abs() <= floor * 1e-6);
        assert!((gmm.components[1].var - floor).abs() <= floor * 1e-6);
    }

    #[test]
    fn gmm_rejects_degenerate_input() {
        assert!(fit_gmm(&[1.0; 100], 1e-6, 100, 1).is_err());
        assert!(fit_gmm(&[1.0, 2.0, 3.0], 1e-6, 100, 1).is_err());
    }

    #[test]
    fn posterior_limits_and_crossing() {
        let gmm = Gmm1d {
            components: [
                GaussComponent { mean: -2.0, var: 1.0, weight: 0.5 },
                GaussComponent { mean: 2.0, var: 1.0, weight: 0.5 },
            ],
            iterations: 0,
            log_likelihood: 0.0,
            ll_trace: vec![],
        };
        assert!(gmm.posterior(50.0, 1) > 1.0 - 1e-12);
        assert!(gmm.posterior(-50.0, 1) < 1e-12);
        // equal weights, equal variances: crossing sits at the midpoint
        assert!((gmm.posterior(0.0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn posterior_monotone_beyond_crossing() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let mut values = Vec::new();
        for _ in 0..1000 {
            let z: f64 = StandardNormal.sample(&mut rng);
            values.push(z * 0.8 - 3.0);
        }
        for _ in 0..1000 {
            let z: f64 = StandardNormal.sample(&mut rng);
            values.push(z * 1.2 + 3.0);
        }
        let gmm = fit_gmm(&values, GMM_DEFAULT_TOL, GMM_DEFAULT_MAX_ITER, 1).unwrap();
        // find the posterior-0.5 crossing by scanning
        let lo = gmm.components[0].mean;
        let hi = gmm.components[1].mean;
        let mut crossing = lo;
        let steps = 1000;
        for s in 0..=steps {
            let x = lo + (hi - lo) * s as f64 / steps as f64;
            if gmm.posterior(x, 1) >= 0.5 {
                crossing = x;
                break;
            }
        }
        let far = hi + 5.0 * gmm.components[1].var.sqrt();
        let mut last = -1.0;
        for s in 0..=200 {
            let x = crossing + (far - crossing) * s as f64 / 200.0;
            let p = gmm.posterior(x, 1);
            assert!(p >= last - 1e-12, "posterior must not decrease past the crossing");
            last = p;
        }
    }

    #[test]
    fn margin_partition_splits_bimodal_margins() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let mut margins = Vec::new();
        let mut truth = Vec::new();
        for _ in 0..500 {
            let z: f64 = StandardNormal.sample(&mut rng);
            margins.push(5.0 + z);
            truth.push(false); // clean
        }
        for _ in 0..500 {
            let z: f64 = StandardNormal.sample(&mut rng);
            margins.push(-5.0 + z);
            truth.push(true); // corrupted
        }
        let part = margin_partition(&margins, 0.5, GMM_DEFAULT_TOL, GMM_DEFAULT_MAX_ITER, 1).unwrap();
        assert!(!part.low_separation);
        let correct = part
            .assigned_clean
            .iter()
            .zip(&truth)
            .filter(|(a, t)| **a == !**t)
            .count();
        assert!(correct >= 990, "partition got {correct}/1000 right");
        let auc = selection_auc(&part.clean_posterior, &truth).unwrap();
        assert!(auc > 0.99);
    }

    #[test]
    fn small_loss_partition_mirrors_margin_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut losses = Vec::new();
        let mut truth = Vec::new();
        for _ in 0..500 {
            let z: f64 = StandardNormal.sample(&mut rng);
            losses.push(0.5 + 0.1 * z);
            truth.push(false); // clean: small loss
        }
        for _ in 0..500 {
            let z: f64 = StandardNormal.sample(&mut rng);
            losses.push(3.0 + 0.3 * z);
            truth.push(true);
        }
        let part = small_loss_partition(&losses, GMM_DEFAULT_TOL, GMM_DEFAULT_MAX_ITER, 0.5, 1).unwrap();
        let correct = part
            .assigned_clean
            .iter()
            .zip(&truth)
            .filter(|(a, t)| **a == !**t)
            .count();
        assert!(correct >= 990, "partition got {correct}/1000 right");
    }

    #[test]
    fn auc_contract_cases() {
        // perfectly separated
        let scores = [1.0, 2.0, 3.0, -1.0, -2.0];
        let corrupted = [false, false, false, true, true];
        assert_eq!(selection_auc(&scores, &corrupted).unwrap(), 1.0);

        // all scores identical: tie correction gives exactly 0.5
        let scores = [1.0; 6];
        let corrupted = [true, false, true, false, true, false];
        assert_eq!(selection_auc(&scores, &corrupted).unwrap(), 0.5);

        // one class absent
        assert!(selection_auc(&[1.0, 2.0], &[false, false]).is_err());
    }

    #[test]
    fn auc_near_half_for_random_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let n = 10_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let corrupted: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let auc = selection_auc(&scores, &corrupted).unwrap();
        assert!((auc - 0.5).abs() <= 0.02, "auc {auc}");
    }
}
