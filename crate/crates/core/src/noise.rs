//! Synthetic label corruption.
//!
//! Symmetric noise flips a uniformly chosen fraction of examples to a label
//! drawn uniformly from the *other* C-1 classes (the "exclusive" convention:
//! a flip never lands back on the true class, so a 50% rate means exactly
//! half the labels are wrong). Asymmetric noise flips a fraction of each
//! class to a fixed confusable target class.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

/// Uniform label noise at the given rate. Corruption always starts from the
/// clean ground truth; features and true labels are untouched.
pub fn inject_symmetric(ds: &LabeledDataset, rate: f64, seed: u64) -> Result<LabeledDataset> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Domain(format!("noise rate must be in [0, 1), got {rate}")));
    }
    let n = ds.len();
    let c = ds.n_classes();
    let mut r = rng::stream(seed, "noise");

    let k = (rate * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut r);

    let mut y_noisy: Vec<usize> = (0..n).map(|i| ds.true_label(i)).collect();
    for &i in order.iter().take(k) {
        let truth = ds.true_label(i);
        // uniform over the other C-1 classes
        let mut pick = r.random_range(0..c - 1);
        if pick >= truth {
            pick += 1;
        }
        y_noisy[i] = pick;
    }
    Ok(ds.with_noisy_labels(y_noisy))
}

/// Class-conditional noise: a fraction `rate` of each class flips to
/// `class_map[class]`. The map must send every class somewhere else.
pub fn inject_asymmetric(
    ds: &LabeledDataset,
    rate: f64,
    class_map: &[usize],
    seed: u64,
) -> Result<LabeledDataset> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Domain(format!("noise rate must be in [0, 1), got {rate}")));
    }
    let c = ds.n_classes();
    if class_map.len() != c {
        return Err(Error::DimensionMismatch(format!(
            "class_map has {} entries for C={c}",
            class_map.len()
        )));
    }
    for (src, &dst) in class_map.iter().enumerate() {
        if dst >= c {
            return Err(Error::Domain(format!("class_map[{src}]={dst} out of range")));
        }
        if dst == src {
            return Err(Error::Domain(format!(
                "class_map maps class {src} to itself"
            )));
        }
    }

    let mut r = rng::stream(seed, "noise");
    let mut y_noisy: Vec<usize> = (0..ds.len()).map(|i| ds.true_label(i)).collect();
    for class in 0..c {
        let mut members: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.true_label(i) == class)
            .collect();
        members.shuffle(&mut r);
        let k = (rate * members.len() as f64).round() as usize;
        for &i in members.iter().take(k) {
            y_noisy[i] = class_map[class];
        }
    }
    Ok(ds.with_noisy_labels(y_noisy))
}

/// Default asymmetric map: c -> (c + 1) mod C.
pub fn cyclic_class_map(n_classes: usize) -> Vec<usize> {
    (0..n_classes).map(|c| (c + 1) % n_classes).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gaussian_blobs;

    #[test]
    fn zero_rate_changes_nothing() {
        let ds = gaussian_blobs(500, 3, 4, 2.0, 1).unwrap();
        let out = inject_symmetric(&ds, 0.0, 2).unwrap();
        assert_eq!(out.realized_noise_rate(), 0.0);
        for i in 0..out.len() {
            assert_eq!(out.given_label(i), out.true_label(i));
            assert!(!out.is_corrupted(i));
        }
        let out = inject_asymmetric(&ds, 0.0, &cyclic_class_map(4), 2).unwrap();
        assert_eq!(out.realized_noise_rate(), 0.0);
    }

    #[test]
    fn symmetric_rate_realized_exactly() {
        let ds = gaussian_blobs(10_000, 4, 10, 2.0, 3).unwrap();
        let out = inject_symmetric(&ds, 0.5, 7).unwrap();
        let rate = out.realized_noise_rate();
        assert!((0.49..=0.51).contains(&rate), "rate {rate}");
        // the exclusive convention: every selected example is truly wrong
        for i in 0..out.len() {
            assert_eq!(out.is_corrupted(i), out.given_label(i) != out.true_label(i));
        }
    }

    #[test]
    fn symmetric_off_diagonal_mass_is_uniform() {
        // chi-square-style bound: each wrong class should receive about
        // k_c / (C-1) of class c's flips, within 3 multinomial sigmas
        let c = 10;
        let ds = gaussian_blobs(10_000, 4, c, 2.0, 5).unwrap();
        let out = inject_symmetric(&ds, 0.5, 13).unwrap();
        for src in 0..c {
            let flipped: Vec<usize> = (0..out.len())
                .filter(|&i| out.true_label(i) == src && out.is_corrupted(i))
                .map(|i| out.given_label(i))
                .collect();
            let k = flipped.len() as f64;
            let p = 1.0 / (c as f64 - 1.0);
            let sigma = (k * p * (1.0 - p)).sqrt();
            for dst in 0..c {
                if dst == src {
                    continue;
                }
                let count = flipped.iter().filter(|&&d| d == dst).count() as f64;
                assert!(
                    (count - k * p).abs() <= 3.0 * sigma,
                    "class {src}->{dst}: count {count}, expected {:.1} +- {:.1}",
                    k * p,
                    3.0 * sigma
                );
            }
        }
    }

    #[test]
    fn symmetric_rejects_rate_one() {
        let ds = gaussian_blobs(100, 2, 3, 2.0, 1).unwrap();
        assert!(inject_symmetric(&ds, 1.0, 1).is_err());
        assert!(inject_symmetric(&ds, -0.1, 1).is_err());
    }

    #[test]
    fn asymmetric_cyclic_map_flips_to_next_class() {
        let ds = gaussian_blobs(3000, 3, 3, 2.0, 2).unwrap();
        let out = inject_asymmetric(&ds, 0.4, &cyclic_class_map(3), 17).unwrap();
        for class in 0..3 {
            let members: Vec<usize> =
                (0..out.len()).filter(|&i| out.true_label(i) == class).collect();
            let flipped = members.iter().filter(|&&i| out.is_corrupted(i)).count();
            let frac = flipped as f64 / members.len() as f64;
            assert!(
                (frac - 0.4).abs() <= 0.01,
                "class {class} flip fraction {frac}"
            );
            for &i in &members {
                if out.is_corrupted(i) {
                    assert_eq!(out.given_label(i), (class + 1) % 3);
                }
            }
        }
    }

    #[test]
    fn asymmetric_rejects_identity_mapping() {
        let ds = gaussian_blobs(100, 2, 3, 2.0, 1).unwrap();
        assert!(inject_asymmetric(&ds, 0.2, &[0, 2, 1], 1).is_err());
        assert!(inject_asymmetric(&ds, 0.2, &[1, 2], 1).is_err());
        assert!(inject_asymmetric(&ds, 0.2, &[1, 2, 5], 1).is_err());
    }

    #[test]
    fn injection_is_reproducible_and_leaves_inputs_alone() {
        let ds = gaussian_blobs(1000, 3, 4, 2.0, 6).unwrap();
        let a = inject_symmetric(&ds, 0.3, 99).unwrap();
        let b = inject_symmetric(&ds, 0.3, 99).unwrap();
        assert_eq!(a, b);
        let c = inject_symmetric(&ds, 0.3, 100).unwrap();
        assert_ne!(a, c);
        for i in 0..ds.len() {
            assert_eq!(a.true_label(i), ds.true_label(i));
            assert_eq!(a.features(i), ds.features(i));
        }
    }
}
