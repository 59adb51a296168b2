//! Finite-difference verification suites for every analytic gradient in the
//! crate, plus the closed-form/numeric cross-check of the gradient gap
//! between plain and calibrated cross-entropy. Used by the `gradcheck` CLI
//! subcommand and by the acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calibrate::{gradient_shrinkage, logits_to_dirichlet, LogitVector};
use crate::loss::{cross_entropy_loss, edl_loss, kl_loss, l2_prob_loss, nll_loss, EdlLossConfig};
use crate::nn::{Head, MlpModel, ModelGrads};
use crate::special::{log_exp_plus_const, log_sum_exp};

/// Outcome of one verification suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub instances: usize,
    pub max_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl SuiteReport {
    fn from_errors(name: &'static str, errors: &[f64], tolerance: f64) -> Self {
        let max_err = errors.iter().cloned().fold(0.0, f64::max);
        Self {
            name,
            instances: errors.len(),
            max_err,
            tolerance,
            passed: max_err <= tolerance,
        }
    }
}

const CLASS_COUNTS: [usize; 3] = [2, 5, 10];

fn fd_grad(f: impl Fn(&[f64]) -> f64, o: &[f64], h: f64) -> Vec<f64> {
    (0..o.len())
        .map(|j| {
            let mut hi = o.to_vec();
            let mut lo = o.to_vec();
            hi[j] += h;
            lo[j] -= h;
            (f(&hi) - f(&lo)) / (2.0 * h)
        })
        .collect()
}

/// Relative error against a 1e-4 tolerance with an absolute floor: values
/// below floor/1e-4 are compared absolutely (|a - n| <= floor passes).
fn rel_err(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(abs_floor / 1e-4);
    (analytic - numeric).abs() / scale
}

fn random_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, usize, f64) {
    let c = CLASS_COUNTS[rng.random_range(0..CLASS_COUNTS.len())];
    let o: Vec<f64> = (0..c).map(|_| rng.random_range(-6.0..6.0)).collect();
    let label = rng.random_range(0..c);
    let gamma = 10.0 / c as f64;
    (o, label, gamma)
}

/// Loss-level gradients (nll, kl, edl, uns) vs central finite differences.
pub fn check_loss_gradients(seed: u64, instances: usize) -> Vec<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut errs_nll = Vec::new();
    let mut errs_kl = Vec::new();
    let mut errs_edl = Vec::new();
    let mut errs_uns = Vec::new();

    for _ in 0..instances {
        let (o, label, gamma) = random_case(&mut rng);

        let analytic = nll_loss(&logits_to_dirichlet(&lv(&o), gamma), label);
        let numeric = fd_grad(|x| nll_loss(&logits_to_dirichlet(&lv(x), gamma), label).value, &o, h);
        collect_errs(&analytic.grad_logits, &numeric, &mut errs_nll);

        let analytic = kl_loss(&logits_to_dirichlet(&lv(&o), gamma), label);
        let numeric = fd_grad(|x| kl_loss(&logits_to_dirichlet(&lv(x), gamma), label).value, &o, h);
        collect_errs(&analytic.grad_logits, &numeric, &mut errs_kl);

        let cfg = EdlLossConfig { beta: 0.5, gamma };
        let analytic = edl_loss(&lv(&o), label, &cfg);
        let numeric = fd_grad(|x| edl_loss(&lv(x), label, &cfg).value, &o, h);
        collect_errs(&analytic.grad_logits, &numeric, &mut errs_edl);

        let mut target: Vec<f64> = (0..o.len()).map(|_| rng.random_range(0.01..1.0)).collect();
        let z: f64 = target.iter().sum();
        target.iter_mut().for_each(|t| *t /= z);
        let analytic = l2_prob_loss(&lv(&o), &target, gamma);
        let numeric = fd_grad(|x| l2_prob_loss(&lv(x), &target, gamma).value, &o, h);
        collect_errs(&analytic.grad_logits, &numeric, &mut errs_uns);
    }

    vec![
        SuiteReport::from_errors("nll_loss gradient", &errs_nll, 1e-4),
        SuiteReport::from_errors("kl_loss gradient", &errs_kl, 1e-4),
        SuiteReport::from_errors("edl_loss gradient", &errs_edl, 1e-4),
        SuiteReport::from_errors("l2_prob_loss gradient", &errs_uns, 1e-4),
    ]
}

fn lv(o: &[f64]) -> LogitVector {
    LogitVector::new(o.to_vec()).unwrap()
}

fn collect_errs(analytic: &[f64], numeric: &[f64], out: &mut Vec<f64>) {
    for (a, n) in analytic.iter().zip(numeric) {
        out.push(rel_err(*a, *n, 1e-7));
    }
}

/// The closed-form gradient gap (calibration shrinkage) vs the directly
/// differenced gap between the two cross-entropy variants, plus the
/// strict-positivity contract.
pub fn check_gradient_shrinkage(seed: u64, instances: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut errs = Vec::new();
    for _ in 0..instances {
        let c = CLASS_COUNTS[rng.random_range(0..CLASS_COUNTS.len())];
        let o: Vec<f64> = (0..c).map(|_| rng.random_range(-5.0..5.0)).collect();
        let label = rng.random_range(0..c);
        let mut class = rng.random_range(0..c);
        if class == label {
            class = (class + 1) % c;
        }
        let gamma: f64 = rng.random_range(0.1..5.0);

        let plain = |x: &[f64]| log_sum_exp(x) - x[label];
        let calibrated = |x: &[f64]| {
            let shifted: Vec<f64> = x.iter().map(|&v| log_exp_plus_const(v, gamma)).collect();
            log_sum_exp(&shifted) - shifted[label]
        };
        let fd = |f: &dyn Fn(&[f64]) -> f64| {
            let mut hi = o.clone();
            let mut lo = o.clone();
            hi[class] += h;
            lo[class] -= h;
            (f(&hi) - f(&lo)) / (2.0 * h)
        };
        let gap = fd(&plain) - fd(&calibrated);
        let closed = gradient_shrinkage(&lv(&o), label, class, gamma).unwrap();
        errs.push((gap - closed).abs());
        if closed <= 0.0 {
            errs.push(f64::INFINITY); // positivity violation fails the suite
        }
    }
    SuiteReport::from_errors("gradient_shrinkage vs fd gap", &errs, 1e-6)
}

/// End-to-end backprop check: every parameter gradient of a two-head
/// network under a composite (supervised edl + unsupervised L2) batch loss
/// vs central finite differences.
pub fn check_network_backprop(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = 6;
    let n_classes = 4;
    let model = MlpModel::new(input_dim, &[16, 16], n_classes, seed ^ 0x5eed).unwrap();
    let cfg = EdlLossConfig { beta: 0.5, gamma: 2.5 };
    let lambda_uns = 0.7;

    let batch: Vec<(Vec<f64>, usize, Vec<f64>)> = (0..8)
        .map(|_| {
            let x: Vec<f64> = (0..input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = rng.random_range(0..n_classes);
            let mut t: Vec<f64> = (0..n_classes).map(|_| rng.random_range(0.01..1.0)).collect();
            let z: f64 = t.iter().sum();
            t.iter_mut().for_each(|v| *v /= z);
            (x, y, t)
        })
        .collect();

    let loss_of = |m: &MlpModel| -> f64 {
        let mut total = 0.0;
        for (x, y, t) in &batch {
            let cache = m.forward_cached(x).unwrap();
            let sup = edl_loss(&m.head_logits(&cache, Head::Sup), *y, &cfg);
            let uns = l2_prob_loss(&m.head_logits(&cache, Head::Uns), t, cfg.gamma);
            total += sup.value + lambda_uns * uns.value;
        }
        total / batch.len() as f64
    };

    let mut grads = ModelGrads::zeros_like(&model);
    for (x, y, t) in &batch {
        let cache = model.forward_cached(x).unwrap();
        let sup = edl_loss(&model.head_logits(&cache, Head::Sup), *y, &cfg);
        let uns = l2_prob_loss(&model.head_logits(&cache, Head::Uns), t, cfg.gamma);
        let gu: Vec<f64> = uns.grad_logits.iter().map(|g| g * lambda_uns).collect();
        model.backward(&cache, Some(&sup.grad_logits), Some(&gu), &mut grads);
    }
    grads.scale(1.0 / batch.len() as f64);
    let analytic = grads.flat();

    let h = 1e-4;
    let mut errs = Vec::with_capacity(analytic.len());
    for idx in 0..model.param_count() {
        let mut hi = model.clone();
        hi.param_add(idx, h);
        let mut lo = model.clone();
        lo.param_add(idx, -h);
        let numeric = (loss_of(&hi) - loss_of(&lo)) / (2.0 * h);
        errs.push(rel_err(analytic[idx], numeric, 1e-7));
    }
    SuiteReport::from_errors("network backprop", &errs, 1e-4)
}

/// Plain cross-entropy gradient (baseline path) vs finite differences.
pub fn check_cross_entropy(seed: u64, instances: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut errs = Vec::new();
    for _ in 0..instances {
        let (o, label, _) = random_case(&mut rng);
        let analytic = cross_entropy_loss(&lv(&o), label);
        let numeric = fd_grad(|x| cross_entropy_loss(&lv(x), label).value, &o, h);
        collect_errs(&analytic.grad_logits, &numeric, &mut errs);
    }
    SuiteReport::from_errors("cross_entropy gradient", &errs, 1e-4)
}

/// Run every suite; the CLI prints these and exits nonzero on any failure.
pub fn run_all(seed: u64, instances: usize) -> Vec<SuiteReport> {
    let mut reports = check_loss_gradients(seed, instances);
    reports.push(check_cross_entropy(seed.wrapping_add(1), instances));
    reports.push(check_gradient_shrinkage(seed.wrapping_add(2), instances));
    reports.push(check_network_backprop(seed.wrapping_add(3)));
    reports
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for r in run_all(123, 200) {
            assert!(
                r.passed,
                "{}: max err {:e} over {} instances (tolerance {:e})",
                r.name, r.max_err, r.instances, r.tolerance
            );
        }
    }
}
