//! Labeled datasets: in-memory representation, synthetic generators, and
//! CSV ingestion/export.
//!
//! Feature CSVs carry a header row `f0..f{d-1},label`. Datasets that have
//! been through noise injection gain two extra columns, `noisy_label` and
//! `is_corrupted` (0/1). Ground-truth labels are kept alongside the noisy
//! ones so that selection quality can be evaluated, but training code only
//! ever reads the noisy labels.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<Vec<f64>>,
    y_true: Vec<usize>,
    y_noisy: Vec<usize>,
    corrupted: Vec<bool>,
    n_classes: usize,
    dim: usize,
    /// Whether corruption flags are meaningful (false for plain CSVs with no
    /// noise columns, where nothing is known about corruption).
    has_noise_info: bool,
}

impl LabeledDataset {
    pub fn from_parts(features: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows vs {} labels",
                features.len(),
                labels.len()
            )));
        }
        if features.is_empty() {
            return Err(Error::Degenerate("empty dataset".into()));
        }
        if n_classes < 2 {
            return Err(Error::Domain(format!("need >= 2 classes, got {n_classes}")));
        }
        let dim = features[0].len();
        if features.iter().any(|f| f.len() != dim) {
            return Err(Error::DimensionMismatch("ragged feature rows".into()));
        }
        if let Some(bad) = labels.iter().find(|l| **l >= n_classes) {
            return Err(Error::InvalidData(format!("label {bad} >= C={n_classes}")));
        }
        let n = labels.len();
        Ok(Self {
            features,
            y_true: labels.clone(),
            y_noisy: labels,
            corrupted: vec![false; n],
            n_classes,
            dim,
            has_noise_info: false,
        })
    }

    pub fn len(&self) -> usize {
        self.y_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_true.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    /// The (possibly corrupted) label visible to training.
    pub fn given_label(&self, i: usize) -> usize {
        self.y_noisy[i]
    }

    /// Hidden ground truth; evaluation only.
    pub fn true_label(&self, i: usize) -> usize {
        self.y_true[i]
    }

    pub fn is_corrupted(&self, i: usize) -> bool {
        self.corrupted[i]
    }

    pub fn corruption_flags(&self) -> &[bool] {
        &self.corrupted
    }

    /// Whether corruption flags carry information (dataset went through
    /// noise injection or was loaded with noise columns).
    pub fn has_noise_info(&self) -> bool {
        self.has_noise_info
    }

    pub fn realized_noise_rate(&self) -> f64 {
        self.corrupted.iter().filter(|c| **c).count() as f64 / self.len() as f64
    }

    pub(crate) fn with_noisy_labels(&self, y_noisy: Vec<usize>) -> Self {
        debug_assert_eq!(y_noisy.len(), self.len());
        let corrupted = y_noisy
            .iter()
            .zip(&self.y_true)
            .map(|(n, t)| n != t)
            .collect();
        Self {
            features: self.features.clone(),
            y_true: self.y_true.clone(),
            y_noisy,
            corrupted,
            n_classes: self.n_classes,
            dim: self.dim,
            has_noise_info: true,
        }
    }
}

/// Gaussian blobs: one spherical unit-variance cluster per class, centers
/// drawn from N(0, separation^2 I).
pub fn gaussian_blobs(
    n: usize,
    dim: usize,
    n_classes: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_classes < 2 || dim == 0 || n < n_classes {
        return Err(Error::Domain(format!(
            "bad blob parameters: n={n}, dim={dim}, C={n_classes}"
        )));
    }
    let mut r = rng::stream(seed, "data");
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    z * separation
                })
                .collect()
        })
        .collect();
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % n_classes;
        let x: Vec<f64> = centers[c]
            .iter()
            .map(|mu| {
                let z: f64 = StandardNormal.sample(&mut r);
                mu + z
            })
            .collect();
        features.push(x);
        labels.push(c);
    }
    LabeledDataset::from_parts(features, labels, n_classes)
}

/// Two concentric rings (2 classes, 2 dims): radii r_inner/r_outer with
/// Gaussian radial noise. A nonlinear sanity benchmark.
pub fn concentric_rings(
    n: usize,
    r_inner: f64,
    r_outer: f64,
    radial_noise: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if !(r_outer > r_inner && r_inner > 0.0) || n < 2 {
        return Err(Error::Domain(format!(
            "bad ring parameters: r_inner={r_inner}, r_outer={r_outer}, n={n}"
        )));
    }
    let mut r = rng::stream(seed, "data");
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let radius_mean = if c == 0 { r_inner } else { r_outer };
        let z: f64 = StandardNormal.sample(&mut r);
        let radius = radius_mean + z * radial_noise;
        let angle: f64 = r.random_range(0.0..TAU);
        features.push(vec![radius * angle.cos(), radius * angle.sin()]);
        labels.push(c);
    }
    LabeledDataset::from_parts(features, labels, 2)
}

/// Read a dataset CSV (with or without noise columns).
pub fn read_csv(path: &Path) -> Result<LabeledDataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();

    let label_col = cols
        .iter()
        .position(|c| *c == "label")
        .ok_or_else(|| Error::InvalidData(format!("{}: missing `label` column", path.display())))?;
    let noisy_col = cols.iter().position(|c| *c == "noisy_label");
    let corrupted_col = cols.iter().position(|c| *c == "is_corrupted");
    let feature_cols: Vec<usize> = cols
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with('f') && c[1..].chars().all(|ch| ch.is_ascii_digit()))
        .map(|(i, _)| i)
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::InvalidData(format!(
            "{}: no feature columns f0..f{{d-1}}",
            path.display()
        )));
    }

    let mut features = Vec::new();
    let mut y_true = Vec::new();
    let mut y_noisy = Vec::new();
    for record in reader.records() {
        let record = record?;
        let parse_f = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| Error::InvalidData(format!("{}: bad float: {e}", path.display())))
        };
        let parse_u = |i: usize| -> Result<usize> {
            record[i]
                .parse::<usize>()
                .map_err(|e| Error::InvalidData(format!("{}: bad label: {e}", path.display())))
        };
        let row: Result<Vec<f64>> = feature_cols.iter().map(|&i| parse_f(i)).collect();
        features.push(row?);
        y_true.push(parse_u(label_col)?);
        if let Some(nc) = noisy_col {
            y_noisy.push(parse_u(nc)?);
        }
    }
    let n_classes = y_true
        .iter()
        .chain(y_noisy.iter())
        .max()
        .map(|m| m + 1)
        .unwrap_or(0)
        .max(2);
    let ds = LabeledDataset::from_parts(features, y_true, n_classes)?;
    if noisy_col.is_some() {
        Ok(ds.with_noisy_labels(y_noisy))
    } else {
        // ignore a stray is_corrupted column without noisy_label
        let _ = corrupted_col;
        Ok(ds)
    }
}

/// Write a dataset CSV. Noise columns are emitted only when requested.
pub fn write_csv(ds: &LabeledDataset, path: &Path, include_noise_cols: bool) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..ds.dim()).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    if include_noise_cols {
        header.push("noisy_label".into());
        header.push("is_corrupted".into());
    }
    writer.write_record(&header)?;
    for i in 0..ds.len() {
        let mut row: Vec<String> = ds.features(i).iter().map(|v| format!("{v}")).collect();
        row.push(format!("{}", ds.true_label(i)));
        if include_noise_cols {
            row.push(format!("{}", ds.given_label(i)));
            row.push(if ds.is_corrupted(i) { "1".into() } else { "0".into() });
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_shape_and_balance() {
        let ds = gaussian_blobs(1000, 5, 4, 3.0, 1).unwrap();
        assert_eq!(ds.len(), 1000);
        assert_eq!(ds.dim(), 5);
        assert_eq!(ds.n_classes(), 4);
        let counts = (0..4)
            .map(|c| (0..ds.len()).filter(|&i| ds.true_label(i) == c).count())
            .collect::<Vec<_>>();
        assert_eq!(counts, vec![250, 250, 250, 250]);
        assert!(!ds.has_noise_info());
    }

    #[test]
    fn blobs_deterministic_per_seed() {
        let a = gaussian_blobs(100, 3, 2, 2.0, 9).unwrap();
        let b = gaussian_blobs(100, 3, 2, 2.0, 9).unwrap();
        let c = gaussian_blobs(100, 3, 2, 2.0, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rings_radii_separate() {
        let ds = concentric_rings(2000, 1.0, 4.0, 0.1, 3).unwrap();
        for i in 0..ds.len() {
            let r = ds.features(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if ds.true_label(i) == 0 {
                assert!(r < 2.5, "inner point at radius {r}");
            } else {
                assert!(r > 2.5, "outer point at radius {r}");
            }
        }
    }

    #[test]
    fn csv_roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        let ds = gaussian_blobs(50, 3, 2, 2.0, 4).unwrap();
        let noisy = crate::noise::inject_symmetric(&ds, 0.3, 11).unwrap();
        write_csv(&noisy, &path, true).unwrap();
        let loaded = read_csv(&path).unwrap();
        assert_eq!(loaded.len(), noisy.len());
        assert!(loaded.has_noise_info());
        for i in 0..noisy.len() {
            assert_eq!(loaded.true_label(i), noisy.true_label(i));
            assert_eq!(loaded.given_label(i), noisy.given_label(i));
            assert_eq!(loaded.is_corrupted(i), noisy.is_corrupted(i));
            for (a, b) in loaded.features(i).iter().zip(noisy.features(i)) {
                assert_eq!(a, b, "float features must round-trip exactly");
            }
        }
    }

    #[test]
    fn csv_without_noise_columns_loads_clean() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plain.csv");
        let ds = gaussian_blobs(30, 2, 3, 2.0, 5).unwrap();
        write_csv(&ds, &path, false).unwrap();
        let loaded = read_csv(&path).unwrap();
        assert!(!loaded.has_noise_info());
        assert_eq!(loaded.realized_noise_rate(), 0.0);
    }

    #[test]
    fn csv_missing_label_column_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "f0,f1\n0.5,0.25\n").unwrap();
        assert!(read_csv(&path).is_err());
    }
}
