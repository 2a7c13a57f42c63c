//! Voxel-level overlap metrics per image and pooled over a set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Mask;

/// Conventions applied where a ratio is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyCase {
    /// Truth and prediction both empty: dice = precision = sensitivity = 1.
    BothEmpty,
    /// Truth empty, prediction not: dice 0, precision 0, sensitivity 1.
    EmptyTruth,
    /// Prediction empty, truth not: dice 0, precision 0, sensitivity 0.
    EmptyPrediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub dice: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empty_case: Option<EmptyCase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub dice: f64,
    pub precision: f64,
    pub sensitivity: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    num as f64 / den as f64
}

/// Metrics from confusion counts.
pub fn metrics_from_counts(id: impl Into<String>, tp: u64, fp: u64, fn_: u64) -> ImageMetrics {
    let (dice, precision, sensitivity, empty_case) = match (tp + fn_ == 0, tp + fp == 0) {
        (true, true) => (1.0, 1.0, 1.0, Some(EmptyCase::BothEmpty)),
        (true, false) => (0.0, 0.0, 1.0, Some(EmptyCase::EmptyTruth)),
        (false, true) => (0.0, 0.0, 0.0, Some(EmptyCase::EmptyPrediction)),
        (false, false) => (
            ratio(2 * tp, 2 * tp + fp + fn_),
            ratio(tp, tp + fp),
            ratio(tp, tp + fn_),
            None,
        ),
    };
    ImageMetrics {
        id: id.into(),
        dice,
        precision,
        sensitivity,
        tp,
        fp,
        fn_,
        empty_case,
    }
}

pub fn image_metrics(id: impl Into<String>, pred: &Mask, truth: &Mask) -> Result<ImageMetrics> {
    if pred.shape() != truth.shape() {
        return Err(Error::ShapeMismatch {
            expected: truth.shape().to_vec(),
            actual: pred.shape().to_vec(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&p, &t) in pred.voxels().iter().zip(truth.voxels()) {
        match (p, t) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    Ok(metrics_from_counts(id, tp, fp, fn_))
}

/// Dice of two masks, with the both-empty case scored 1.
pub fn dice_score(pred: &Mask, truth: &Mask) -> Result<f64> {
    Ok(image_metrics("", pred, truth)?.dice)
}

/// Arithmetic means of the per-image metrics.
pub fn mean_metrics(metrics: &[ImageMetrics]) -> Result<MetricSummary> {
    if metrics.is_empty() {
        return Err(Error::Empty("metric list"));
    }
    let n = metrics.len() as f64;
    Ok(MetricSummary {
        dice: metrics.iter().map(|m| m.dice).sum::<f64>() / n,
        precision: metrics.iter().map(|m| m.precision).sum::<f64>() / n,
        sensitivity: metrics.iter().map(|m| m.sensitivity).sum::<f64>() / n,
    })
}

/// Metrics of the summed voxel counts.
pub fn pooled_metrics(metrics: &[ImageMetrics]) -> Result<MetricSummary> {
    if metrics.is_empty() {
        return Err(Error::Empty("metric list"));
    }
    let sum = |f: fn(&ImageMetrics) -> u64| metrics.iter().map(f).sum::<u64>();
    let m = metrics_from_counts("pooled", sum(|m| m.tp), sum(|m| m.fp), sum(|m| m.fn_));
    Ok(MetricSummary {
        dice: m.dice,
        precision: m.precision,
        sensitivity: m.sensitivity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(bits: &[u8]) -> Mask {
        Mask::new(vec![1, bits.len()], bits.to_vec()).unwrap()
    }

    #[test]
    fn perfect_and_disjoint() {
        let m = image_metrics("a", &mask(&[1, 1, 0]), &mask(&[1, 1, 0])).unwrap();
        assert_eq!((m.dice, m.precision, m.sensitivity), (1.0, 1.0, 1.0));
        assert_eq!(m.empty_case, None);
        let m = image_metrics("a", &mask(&[1, 0, 0, 0]), &mask(&[0, 0, 1, 1])).unwrap();
        assert_eq!((m.dice, m.precision, m.sensitivity), (0.0, 0.0, 0.0));
    }

    #[test]
    fn half_covered_truth() {
        let m = image_metrics("a", &mask(&[1, 1, 0, 0, 0]), &mask(&[1, 1, 1, 1, 0])).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (2, 0, 2));
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.sensitivity, 0.5);
        assert!((m.dice - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_conventions() {
        let m = image_metrics("a", &mask(&[0, 0]), &mask(&[0, 0])).unwrap();
        assert_eq!((m.dice, m.precision, m.sensitivity), (1.0, 1.0, 1.0));
        assert_eq!(m.empty_case, Some(EmptyCase::BothEmpty));
        let m = image_metrics("a", &mask(&[1, 0]), &mask(&[0, 0])).unwrap();
        assert_eq!((m.dice, m.precision, m.sensitivity), (0.0, 0.0, 1.0));
        assert_eq!(m.empty_case, Some(EmptyCase::EmptyTruth));
        let m = image_metrics("a", &mask(&[0, 0]), &mask(&[0, 1])).unwrap();
        assert_eq!((m.dice, m.precision, m.sensitivity), (0.0, 0.0, 0.0));
        assert_eq!(m.empty_case, Some(EmptyCase::EmptyPrediction));
    }

    #[test]
    fn shape_mismatch() {
        assert!(image_metrics("a", &mask(&[0, 0]), &mask(&[0, 0, 1])).is_err());
    }

    #[test]
    fn pooled_differs_from_mean() {
        let a = metrics_from_counts("a", 1, 0, 0);
        let b = metrics_from_counts("b", 0, 9, 0);
        assert_eq!(mean_metrics(&[a.clone(), b.clone()]).unwrap().precision, 0.5);
        assert_eq!(pooled_metrics(&[a, b]).unwrap().precision, 0.1);
    }

    proptest! {
        #[test]
        fn harmonic_identity(bits in proptest::collection::vec((0u8..2, 0u8..2), 1..200)) {
            let (p, t): (Vec<u8>, Vec<u8>) = bits.into_iter().unzip();
            let m = image_metrics("x", &mask(&p), &mask(&t)).unwrap();
            for v in [m.dice, m.precision, m.sensitivity] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if m.empty_case.is_none() && m.precision + m.sensitivity > 0.0 {
                let h = 2.0 * m.precision * m.sensitivity / (m.precision + m.sensitivity);
                prop_assert!((m.dice - h).abs() < 1e-12);
            }
            prop_assert_eq!(m.dice == 1.0, m.fp == 0 && m.fn_ == 0);
        }
    }
}
