//! Training losses over Dirichlet parameters: the marginal-likelihood term,
//! the KL regularizer that drives complementary evidence to zero, their
//! weighted combination, and plain cross-entropy for baselines. Every loss
//! returns its analytic gradient with respect to the logits.

use crate::calibrate::{
    calibrated_softmax_slice, logits_to_dirichlet, softmax_slice, DirichletParams, LogitVector,
};
use crate::error::{Error, Result};
use crate::special::{digamma_unchecked, log_gamma_unchecked, log_sum_exp, trigamma_unchecked};

/// Weights of the combined evidential loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdlLossConfig {
    /// Weight of the KL term.
    pub beta: f64,
    /// Calibration constant (already resolved per class count).
    pub gamma: f64,
}

impl EdlLossConfig {
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::Domain(format!("beta must be >= 0, got {beta}")));
        }
        if !(gamma > 0.0) {
            return Err(Error::Domain(format!("gamma must be > 0, got {gamma}")));
        }
        Ok(Self { beta, gamma })
    }
}

/// A scalar loss plus its gradient with respect to the logit vector.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad_logits: Vec<f64>,
}

/// Negative log marginal likelihood: ln(sum_j alpha_j) - ln(alpha_c).
///
/// The gradient is taken through alpha = e^o / gamma + 1, so
/// d/do_j = (alpha_j / S - [j == c]) * (alpha_j - 1) / alpha_j.
pub fn nll_loss(alpha: &DirichletParams, label: usize) -> LossValue {
    let a = alpha.alpha();
    assert!(label < a.len(), "label {label} out of range");
    let s = alpha.sum();
    let value = s.ln() - a[label].ln();
    let grad_logits = a
        .iter()
        .enumerate()
        .map(|(j, &aj)| {
            let indicator = if j == label { 1.0 } else { 0.0 };
            (aj / s - indicator) * (aj - 1.0) / aj
        })
        .collect();
    LossValue { value, grad_logits }
}

/// KL(Dir(alpha_tilde) || Dir(1)) / C, where alpha_tilde replaces the
/// given-label entry with 1 so only complementary evidence is penalized.
///
/// The gradient with respect to the given-label logit is exactly zero.
pub fn kl_loss(alpha: &DirichletParams, label: usize) -> LossValue {
    let a = alpha.alpha();
    assert!(label < a.len(), "label {label} out of range");
    let c = a.len();
    let cf = c as f64;

    // alpha_tilde: given-label entry forced to 1; complementary entries
    // floored at 1 (they cannot drop below 1 for finite logits, but
    // hand-built params might).
    let at: Vec<f64> = a
        .iter()
        .enumerate()
        .map(|(j, &aj)| if j == label { 1.0 } else { aj.max(1.0) })
        .collect();
    let st: f64 = at.iter().sum();

    let mut value = log_gamma_unchecked(st) - log_gamma_unchecked(cf);
    let psi_st = digamma_unchecked(st);
    for &aj in &at {
        value -= log_gamma_unchecked(aj);
        value += (aj - 1.0) * (digamma_unchecked(aj) - psi_st);
    }
    value /= cf;

    // dKL/d(alpha_tilde_j) = (at_j - 1) psi'(at_j) - (St - C) psi'(St),
    // then through d(alpha_j)/d(o_j) = alpha_j - 1 for complementary j.
    let tri_st = trigamma_unchecked(st);
    let grad_logits = a
        .iter()
        .enumerate()
        .map(|(j, &aj)| {
            if j == label {
                0.0
            } else {
                let atj = aj.max(1.0);
                let d_at = (atj - 1.0) * trigamma_unchecked(atj) - (st - cf) * tri_st;
                d_at * (aj - 1.0) / cf
            }
        })
        .collect();

    LossValue { value, grad_logits }
}

/// Combined evidential loss: nll + beta * kl, gradients included.
pub fn edl_loss(o: &LogitVector, label: usize, cfg: &EdlLossConfig) -> LossValue {
    let alpha = logits_to_dirichlet(o, cfg.gamma);
    edl_loss_from_params(&alpha, label, cfg.beta)
}

pub(crate) fn edl_loss_from_params(alpha: &DirichletParams, label: usize, beta: f64) -> LossValue {
    let nll = nll_loss(alpha, label);
    if beta == 0.0 {
        return nll;
    }
    let kl = kl_loss(alpha, label);
    let grad_logits = nll
        .grad_logits
        .iter()
        .zip(&kl.grad_logits)
        .map(|(n, k)| n + beta * k)
        .collect();
    LossValue {
        value: nll.value + beta * kl.value,
        grad_logits,
    }
}

/// Plain softmax cross-entropy, used by the warm-up option and the
/// cross-entropy baselines.
pub fn cross_entropy_loss(o: &LogitVector, label: usize) -> LossValue {
    let os = o.as_slice();
    assert!(label < os.len(), "label {label} out of range");
    let value = log_sum_exp(os) - os[label];
    let p = softmax_slice(os);
    let grad_logits = p
        .iter()
        .enumerate()
        .map(|(j, &pj)| pj - if j == label { 1.0 } else { 0.0 })
        .collect();
    LossValue { value, grad_logits }
}

/// Squared L2 distance between a probability target and the calibrated
/// softmax of the logits: ||t - rho_hat(o)||^2. Used by the unsupervised
/// head.
pub fn l2_prob_loss(o: &LogitVector, target: &[f64], gamma: f64) -> LossValue {
    let os = o.as_slice();
    assert_eq!(os.len(), target.len(), "target length mismatch");
    let p = calibrated_softmax_slice(os, gamma);
    let value = p
        .iter()
        .zip(target)
        .map(|(pj, tj)| (pj - tj) * (pj - tj))
        .sum();

    // dL/dp_j = 2 (p_j - t_j); p = softmax(l) with l_j = ln(e^{o_j}+gamma),
    // dl_j/do_j = e^{o_j} / (e^{o_j} + gamma) = alpha-gate in (0, 1).
    let g: Vec<f64> = p.iter().zip(target).map(|(pj, tj)| 2.0 * (pj - tj)).collect();
    let inner: f64 = g.iter().zip(&p).map(|(gj, pj)| gj * pj).sum();
    let grad_logits = os
        .iter()
        .zip(p.iter().zip(&g))
        .map(|(&oj, (&pj, &gj))| {
            let gate = 1.0 / (1.0 + gamma * (-oj).exp());
            gate * pj * (gj - inner)
        })
        .collect();
    LossValue { value, grad_logits }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::calibrated_softmax;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn logits(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

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

    fn assert_close_rel(got: &[f64], want: &[f64], rel: f64, abs: f64) {
        for (g, w) in got.iter().zip(want) {
            let tol = abs + rel * g.abs().max(w.abs());
            assert!((g - w).abs() <= tol, "gradient mismatch: got {g}, want {w}");
        }
    }

    #[test]
    fn nll_hand_example() {
        let alpha = DirichletParams::new(vec![2.0, 2.0], 1.0).unwrap();
        let l = nll_loss(&alpha, 0);
        assert!((l.value - 2.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn nll_vanishes_as_label_alpha_grows() {
        for exp in [4, 8, 12] {
            let alpha = DirichletParams::new(vec![10f64.powi(exp), 2.0, 3.0], 1.0).unwrap();
            let l = nll_loss(&alpha, 0);
            assert!(l.value < 10.0 / 10f64.powi(exp));
        }
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..500 {
            let c = [2usize, 5, 10][rng.random_range(0..3)];
            let o: Vec<f64> = (0..c).map(|_| rng.random_range(-6.0..6.0)).collect();
            let label = rng.random_range(0..c);
            let gamma: f64 = rng.random_range(0.2..5.0);
            let analytic = nll_loss(&logits_to_dirichlet(&logits(&o), gamma), label);
            let numeric = fd_grad(
                |x| {
                    nll_loss(&logits_to_dirichlet(&logits(x), gamma), label).value
                },
                &o,
                1e-5,
            );
            assert_close_rel(&analytic.grad_logits, &numeric, 1e-5, 1e-8);
        }
    }

    #[test]
    fn nll_strictly_decreasing_in_label_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let c = rng.random_range(2..8);
            let mut o: Vec<f64> = (0..c).map(|_| rng.random_range(-4.0..4.0)).collect();
            let label = rng.random_range(0..c);
            let lo = nll_loss(&logits_to_dirichlet(&logits(&o), 2.5), label).value;
            o[label] += rng.random_range(0.1..3.0);
            let hi = nll_loss(&logits_to_dirichlet(&logits(&o), 2.5), label).value;
            assert!(hi < lo, "nll must strictly decrease in the label logit");
        }
    }

    #[test]
    fn kl_zero_when_complementary_alpha_is_one() {
        // complementary entries exactly 1 -> alpha_tilde = 1 -> KL = 0 exactly
        let alpha = DirichletParams::new(vec![7.0, 1.0, 1.0, 1.0], 2.5).unwrap();
        let l = kl_loss(&alpha, 0);
        assert_eq!(l.value, 0.0);
        assert!(l.grad_logits.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn kl_hand_example_two_classes() {
        // alpha = [5, 3], label 0 -> alpha_tilde = [1, 3]
        // (1/2) * [ln(Gamma(4)/(Gamma(2) Gamma(1) Gamma(3))) + 2 (psi(3) - psi(4))]
        let alpha = DirichletParams::new(vec![5.0, 3.0], 1.0).unwrap();
        let l = kl_loss(&alpha, 0);
        assert!(
            (l.value - 0.21597281100072151).abs() < 1e-12,
            "got {}",
            l.value
        );
    }

    #[test]
    fn kl_gradient_zero_on_given_label() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..200 {
            let c = rng.random_range(2..8);
            let o: Vec<f64> = (0..c).map(|_| rng.random_range(-5.0..5.0)).collect();
            let label = rng.random_range(0..c);
            let l = kl_loss(&logits_to_dirichlet(&logits(&o), 2.5), label);
            assert_eq!(l.grad_logits[label], 0.0);
        }
    }

    #[test]
    fn kl_nonnegative_and_zero_iff_unit_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..500 {
            let c = rng.random_range(2..8);
            let o: Vec<f64> = (0..c).map(|_| rng.random_range(-8.0..8.0)).collect();
            let label = rng.random_range(0..c);
            let alpha = logits_to_dirichlet(&logits(&o), 2.5);
            let l = kl_loss(&alpha, label);
            assert!(l.value >= 0.0, "KL must be nonnegative, got {}", l.value);
            let complement_unit = alpha
                .alpha()
                .iter()
                .enumerate()
                .all(|(j, a)| j == label || *a == 1.0);
            if !complement_unit {
                assert!(l.value > 0.0);
            }
        }
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..500 {
            let c = [2usize, 5, 10][rng.random_range(0..3)];
            let o: Vec<f64> = (0..c).map(|_| rng.random_range(-6.0..6.0)).collect();
            let label = rng.random_range(0..c);
            let gamma: f64 = rng.random_range(0.2..5.0);
            let analytic = kl_loss(&logits_to_dirichlet(&logits(&o), gamma), label);
            let numeric = fd_grad(
                |x| kl_loss(&logits_to_dirichlet(&logits(x), gamma), label).value,
                &o,
                1e-5,
            );
            assert_close_rel(&analytic.grad_logits, &numeric, 1e-5, 1e-8);
        }
    }

    #[test]
    fn edl_reduces_to_nll_at_beta_zero() {
        let o = logits(&[0.3, -1.2, 2.0]);
        let cfg = EdlLossConfig::new(0.0, 2.5).unwrap();
        let edl = edl_loss(&o, 1, &cfg);
        let nll = nll_loss(&logits_to_dirichlet(&o, 2.5), 1);
        assert_eq!(edl.value, nll.value);
        assert_eq!(edl.grad_logits, nll.grad_logits);
    }

    #[test]
    fn edl_is_linear_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..200 {
            let c = rng.random_range(2..8);
            let o: Vec<f64> = (0..c).map(|_| rng.random_range(-5.0..5.0)).collect();
            let label = rng.random_range(0..c);
            let lv = logits(&o);
            let cfg = EdlLossConfig::new(0.5, 2.5).unwrap();
            let alpha = logits_to_dirichlet(&lv, 2.5);
            let want = nll_loss(&alpha, label).value + 0.5 * kl_loss(&alpha, label).value;
            let got = edl_loss(&lv, label, &cfg).value;
            assert!((got - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn edl_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let cfg = EdlLossConfig::new(0.5, 2.5).unwrap();
        for _ in 0..500 {
            let c = [2usize, 5, 10][rng.random_range(0..3)];
            let o: Vec<f64> = (0..c).map(|_| rng.random_range(-6.0..6.0)).collect();
            let label = rng.random_range(0..c);
            let analytic = edl_loss(&logits(&o), label, &cfg);
            let numeric = fd_grad(|x| edl_loss(&logits(x), label, &cfg).value, &o, 1e-5);
            assert_close_rel(&analytic.grad_logits, &numeric, 1e-5, 1e-8);
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        for _ in 0..200 {
            let c = rng.random_range(2..9);
            let o: Vec<f64> = (0..c).map(|_| rng.random_range(-6.0..6.0)).collect();
            let label = rng.random_range(0..c);
            let analytic = cross_entropy_loss(&logits(&o), label);
            let numeric = fd_grad(|x| cross_entropy_loss(&logits(x), label).value, &o, 1e-5);
            assert_close_rel(&analytic.grad_logits, &numeric, 1e-5, 1e-8);
        }
    }

    #[test]
    fn l2_prob_loss_examples_and_gradient() {
        // output == target -> 0
        let o = logits(&[1.0, -0.5, 0.2]);
        let target = calibrated_softmax(&o, 2.5);
        let l = l2_prob_loss(&o, target.as_slice(), 2.5);
        assert!(l.value < 1e-24);

        // rho' = [1,0], output [0,1] -> 2
        let l = l2_prob_loss(&logits(&[-60.0, 60.0]), &[1.0, 0.0], 1e-9);
        assert!((l.value - 2.0).abs() < 1e-6, "got {}", l.value);

        let mut rng = ChaCha8Rng::seed_from_u64(28);
        for _ in 0..300 {
            let c = rng.random_range(2..8);
            let o: Vec<f64> = (0..c).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut t: Vec<f64> = (0..c).map(|_| rng.random_range(0.01..1.0)).collect();
            let z: f64 = t.iter().sum();
            t.iter_mut().for_each(|v| *v /= z);
            let gamma: f64 = rng.random_range(0.2..5.0);
            let analytic = l2_prob_loss(&logits(&o), &t, gamma);
            let numeric = fd_grad(|x| l2_prob_loss(&logits(x), &t, gamma).value, &o, 1e-5);
            assert_close_rel(&analytic.grad_logits, &numeric, 1e-5, 1e-8);
        }
    }

    #[test]
    fn single_logit_descent_drives_evidence_apart() {
        // KL-dominant weights: beta = 5, C = 2, gamma = 10/C. After 500 plain
        // gradient steps at rate 0.1 the complementary alpha collapses into
        // [1, 1.05] and the calibrated label probability clears 0.9.
        let cfg = EdlLossConfig::new(5.0, 5.0).unwrap();
        let mut o = vec![0.0, 0.0];
        for _ in 0..500 {
            let l = edl_loss(&logits(&o), 0, &cfg);
            for (oj, g) in o.iter_mut().zip(&l.grad_logits) {
                *oj -= 0.1 * g;
            }
        }
        let alpha = logits_to_dirichlet(&logits(&o), 5.0);
        let comp = alpha.alpha()[1];
        assert!((1.0..=1.05).contains(&comp), "complementary alpha {comp}");
        let p = calibrated_softmax(&logits(&o), 5.0);
        assert!(p.as_slice()[0] >= 0.9, "label probability {}", p.as_slice()[0]);

        // At the paper-default weighting (beta = 0.5) the same descent still
        // moves in the right direction, just more slowly.
        let cfg = EdlLossConfig::new(0.5, 2.5).unwrap();
        let mut o = vec![0.0; 4];
        for _ in 0..500 {
            let l = edl_loss(&logits(&o), 0, &cfg);
            for (oj, g) in o.iter_mut().zip(&l.grad_logits) {
                *oj -= 0.1 * g;
            }
        }
        let alpha = logits_to_dirichlet(&logits(&o), 2.5);
        assert!(alpha.alpha()[1] < 1.4 && alpha.alpha()[1] >= 1.0);
        let p = calibrated_softmax(&logits(&o), 2.5);
        assert!(p.as_slice()[0] >= 0.9);
    }
}
