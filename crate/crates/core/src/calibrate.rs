//! Softmax, the calibrated softmax, the logit-to-Dirichlet mapping, and the
//! gradient-shrinkage diagnostic.
//!
//! The calibrated softmax adds a constant gamma to every exponentiated
//! logit, which breaks the translation invariance of the plain softmax:
//! shifting all logits down now genuinely lowers the winning probability.
//! All probability computation runs through log-space accumulation with a
//! single final normalization so that logits up to a few hundred are safe.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{log_exp_plus_const, log_sum_exp};

/// Per-example class logits; at least two classes, all entries finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Domain(format!(
                "logit vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite logit {bad}")));
        }
        Ok(Self(values))
    }

    /// Wrap values produced internally (network output); validity is checked
    /// only in debug builds.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(values.len() >= 2 && values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    pub fn n_classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// A probability vector: entries in [0, 1] summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let sum: f64 = values.iter().sum();
        if values.iter().any(|p| !(0.0..=1.0 + 1e-9).contains(p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "not a probability vector (sum {sum}): {values:?}"
            )));
        }
        Ok(Self(values))
    }

    fn from_normalized(values: Vec<f64>) -> Self {
        debug_assert!((values.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Largest entry (the prediction confidence).
    pub fn confidence(&self) -> f64 {
        self.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest entry.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.0.iter().enumerate() {
            if *v > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Convex combination lam*a + (1-lam)*b; stays normalized exactly because
    /// the weights sum to one.
    pub fn mix(a: &Self, b: &Self, lam: f64) -> Self {
        debug_assert_eq!(a.len(), b.len());
        let values = a
            .0
            .iter()
            .zip(&b.0)
            .map(|(x, y)| lam * x + (1.0 - lam) * y)
            .collect();
        Self(values)
    }
}

/// Dirichlet parameters alpha derived from logits, together with the
/// calibration constant gamma that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    alpha: Vec<f64>,
    gamma: f64,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::Domain(format!("gamma must be > 0, got {gamma}")));
        }
        if alpha.len() < 2 || alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::Domain(format!("invalid alpha vector {alpha:?}")));
        }
        Ok(Self { alpha, gamma })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_classes(&self) -> usize {
        self.alpha.len()
    }

    pub fn sum(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// Evidence vector e = gamma * (alpha - 1), entrywise >= 0 for alpha
    /// derived from finite logits.
    pub fn evidence(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| self.gamma * (a - 1.0)).collect()
    }

    /// Mean of the Dirichlet distribution, alpha / sum(alpha). Equals the
    /// calibrated softmax of the originating logits.
    pub fn mean(&self) -> ProbabilityVector {
        let s = self.sum();
        ProbabilityVector::from_normalized(self.alpha.iter().map(|a| a / s).collect())
    }
}

/// Standard softmax with max-shift.
pub fn softmax(o: &LogitVector) -> ProbabilityVector {
    ProbabilityVector::from_normalized(softmax_slice(o.as_slice()))
}

pub(crate) fn softmax_slice(o: &[f64]) -> Vec<f64> {
    let m = o.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = o.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    for v in &mut e {
        *v /= z;
    }
    e
}

/// Calibrated softmax: p_c = (e^{o_c} + gamma) / sum_j (e^{o_j} + gamma).
///
/// Evaluated as softmax(ln(e^o + gamma)) so large positive logits cannot
/// overflow.
pub fn calibrated_softmax(o: &LogitVector, gamma: f64) -> ProbabilityVector {
    ProbabilityVector::from_normalized(calibrated_softmax_slice(o.as_slice(), gamma))
}

pub(crate) fn calibrated_softmax_slice(o: &[f64], gamma: f64) -> Vec<f64> {
    let shifted: Vec<f64> = o.iter().map(|&x| log_exp_plus_const(x, gamma)).collect();
    softmax_slice(&shifted)
}

/// Map logits to Dirichlet parameters: alpha_c = e^{o_c} / gamma + 1.
///
/// The Dirichlet mean then reproduces the calibrated softmax exactly.
pub fn logits_to_dirichlet(o: &LogitVector, gamma: f64) -> DirichletParams {
    assert!(gamma > 0.0, "gamma must be > 0");
    let alpha = o.as_slice().iter().map(|&x| x.exp() / gamma + 1.0).collect();
    DirichletParams { alpha, gamma }
}

/// Closed form of the gradient gap between standard and calibrated
/// cross-entropy on a complementary label:
/// gamma * C * e^{o_c} / (sum_j e^{o_j} * sum_j (e^{o_j} + gamma)).
///
/// Always strictly positive for finite logits.
pub fn gradient_shrinkage(
    o: &LogitVector,
    given_label: usize,
    class: usize,
    gamma: f64,
) -> Result<f64> {
    assert!(gamma > 0.0, "gamma must be > 0");
    if class == given_label {
        return Err(Error::Domain(format!(
            "class {class} is the given label; shrinkage is defined on complementary labels"
        )));
    }
    let os = o.as_slice();
    if class >= os.len() || given_label >= os.len() {
        return Err(Error::DimensionMismatch(format!(
            "label indices ({given_label}, {class}) out of range for C={}",
            os.len()
        )));
    }
    let c = os.len() as f64;
    let lse_plain = log_sum_exp(os);
    let shifted: Vec<f64> = os.iter().map(|&x| log_exp_plus_const(x, gamma)).collect();
    let lse_cal = log_sum_exp(&shifted);
    Ok((gamma.ln() + c.ln() + os[class] - lse_plain - lse_cal).exp())
}
