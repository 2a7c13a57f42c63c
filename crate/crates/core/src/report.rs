//! Test-set evaluation of trained runs and comparison reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{image_metrics, mean_metrics, pooled_metrics, ImageMetrics, MetricSummary};
use crate::nn::{predict_mask, Model};
use crate::pool::Sample;
use crate::trainer::{CycleLog, InitialLog};
use crate::volume::Mask;
use crate::wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};

pub const METRIC_LEVEL: &str = "voxel";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// 0 is the end of the initial phase.
    pub cycle: u32,
    pub training_size: usize,
    pub test_dice: Option<f64>,
}

/// Test-dice trajectory recorded in a run's logs.
pub fn curve_from_logs(initial: Option<&InitialLog>, initial_size: usize, cycles: &[CycleLog]) -> Vec<CurvePoint> {
    let mut out = Vec::with_capacity(cycles.len() + 1);
    if let Some(i) = initial {
        out.push(CurvePoint {
            cycle: 0,
            training_size: initial_size,
            test_dice: i.test_dice,
        });
    }
    out.extend(cycles.iter().map(|c| CurvePoint {
        cycle: c.cycle,
        training_size: c.pool_sizes.0,
        test_dice: c.test_dice,
    }));
    out
}

/// Metrics of one trained run on a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub label: String,
    pub seed: u64,
    pub metric_level: String,
    pub test_ids: Vec<String>,
    pub images: Vec<ImageMetrics>,
    pub mean: MetricSummary,
    pub pooled: MetricSummary,
    #[serde(default)]
    pub curve: Vec<CurvePoint>,
}

impl EvaluationResult {
    pub fn from_masks(label: impl Into<String>, seed: u64, items: &[(String, Mask, Mask)]) -> Result<Self> {
        let images = items
            .iter()
            .map(|(id, pred, truth)| image_metrics(id.clone(), pred, truth))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            label: label.into(),
            seed,
            metric_level: METRIC_LEVEL.into(),
            test_ids: items.iter().map(|(id, _, _)| id.clone()).collect(),
            mean: mean_metrics(&images)?,
            pooled: pooled_metrics(&images)?,
            images,
            curve: Vec::new(),
        })
    }

    pub fn dice_list(&self) -> Vec<f64> {
        self.images.iter().map(|m| m.dice).collect()
    }
}

/// Whole-volume inference on every test sample, in test order.
pub fn evaluate_model(
    label: impl Into<String>,
    seed: u64,
    model: &Model,
    test: &[Sample],
    threshold: f64,
) -> Result<EvaluationResult> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let items = test
        .par_iter()
        .map(|s| {
            let truth = s
                .mask()
                .ok_or_else(|| Error::config("evaluation", format!("test sample `{}` has no mask", s.id())))?;
            Ok((s.id().to_string(), predict_mask(model, s.volume(), threshold)?, truth.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    EvaluationResult::from_masks(label, seed, &items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub test_ids: Vec<String>,
    pub results: Vec<EvaluationResult>,
    /// Row `a`, column `b`: Wilcoxon test of Dice(a) against Dice(b); `None` on the diagonal.
    pub pairwise: Vec<Vec<Option<WilcoxonResult>>>,
}

impl StudyResult {
    pub fn new(results: Vec<EvaluationResult>) -> Result<Self> {
        let first = results.first().ok_or(Error::Empty("result list"))?;
        let test_ids = first.test_ids.clone();
        for r in &results {
            if r.test_ids != test_ids {
                return Err(Error::Mismatch(format!(
                    "`{}` was evaluated on different test ids (or order) than `{}`",
                    r.label, first.label
                )));
            }
            if r.images.iter().map(|m| &m.id).ne(r.test_ids.iter()) {
                return Err(Error::Mismatch(format!("`{}` lists metrics out of test-id order", r.label)));
            }
        }
        let dice: Vec<Vec<f64>> = results.iter().map(EvaluationResult::dice_list).collect();
        let pairwise = (0..results.len())
            .map(|a| {
                (0..results.len())
                    .map(|b| (a != b).then(|| wilcoxon_signed_rank(&dice[a], &dice[b])).transpose())
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            test_ids,
            results,
            pairwise,
        })
    }

    /// 1-based rank by mean Dice, ties sharing the better rank.
    pub fn ranks(&self) -> Vec<usize> {
        let d: Vec<f64> = self.results.iter().map(|r| r.mean.dice).collect();
        d.iter().map(|x| 1 + d.iter().filter(|y| *y > x).count()).collect()
    }
}

fn cell(w: &Option<WilcoxonResult>) -> String {
    match w {
        None => "1".into(),
        Some(w) => match w.p_value {
            None => "n/a".into(),
            Some(p) if w.is_significant() => format!("{p:.4}*"),
            Some(p) => format!("{p:.4}"),
        },
    }
}

fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(v, w)| format!("{v:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn csv(rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

/// Strategy × metric table. Rank 1 is the best mean Dice and is starred.
pub fn metrics_table(study: &StudyResult) -> Vec<Vec<String>> {
    let ranks = study.ranks();
    let mut rows = vec![[
        "strategy",
        "dice",
        "precision",
        "sensitivity",
        "pooled_dice",
        "pooled_precision",
        "pooled_sensitivity",
        "images",
        "rank",
    ]
    .map(String::from)
    .to_vec()];
    for (r, rank) in study.results.iter().zip(ranks) {
        let f = |v: f64| format!("{v:.4}");
        rows.push(vec![
            r.label.clone(),
            f(r.mean.dice),
            f(r.mean.precision),
            f(r.mean.sensitivity),
            f(r.pooled.dice),
            f(r.pooled.precision),
            f(r.pooled.sensitivity),
            r.images.len().to_string(),
            if rank == 1 { "1*".into() } else { rank.to_string() },
        ]);
    }
    rows
}

pub fn significance_table(study: &StudyResult) -> Vec<Vec<String>> {
    let mut header = vec![String::new()];
    header.extend(study.results.iter().map(|r| r.label.clone()));
    let mut rows = vec![header];
    for (r, line) in study.results.iter().zip(&study.pairwise) {
        let mut row = vec![r.label.clone()];
        row.extend(line.iter().map(cell));
        rows.push(row);
    }
    rows
}

pub fn curve_table(study: &StudyResult) -> Vec<Vec<String>> {
    let mut rows = vec![["strategy", "cycle", "training_size", "test_dice"].map(String::from).to_vec()];
    for r in &study.results {
        for p in &r.curve {
            rows.push(vec![
                r.label.clone(),
                p.cycle.to_string(),
                p.training_size.to_string(),
                p.test_dice.map(|d| format!("{d:.6}")).unwrap_or_default(),
            ]);
        }
    }
    rows
}

/// Write the comparison report into `dir`; returns the files written.
pub fn build_report(study: &StudyResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let metrics = metrics_table(study);
    let sig = significance_table(study);
    let mut text = String::new();
    let _ = writeln!(
        text,
        "Voxel-level metrics over {} test images. Means are per image; pooled columns sum voxel counts.\n",
        study.test_ids.len()
    );
    text.push_str(&aligned(&metrics));
    let _ = writeln!(
        text,
        "\nPaired Wilcoxon signed-rank p-values on image-level Dice (* p < 0.05, n/a = fewer than 5 nonzero differences).\n"
    );
    text.push_str(&aligned(&sig));
    let files = [
        ("report.txt", text),
        ("metrics.csv", csv(&metrics)),
        ("significance.csv", csv(&sig)),
        ("curves.csv", csv(&curve_table(study))),
        (
            "study.json",
            serde_json::to_string_pretty(study).expect("study serializes") + "\n",
        ),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(label: &str, dice: &[f64]) -> EvaluationResult {
        // fp = fn = 1000 - tp gives dice = tp / 1000.
        let images: Vec<ImageMetrics> = dice
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let tp = (d * 1000.0).round() as u64;
                crate::metrics::metrics_from_counts(format!("t{i}"), tp, 1000 - tp, 1000 - tp)
            })
            .collect();
        EvaluationResult {
            label: label.into(),
            seed: 0,
            metric_level: METRIC_LEVEL.into(),
            test_ids: images.iter().map(|m| m.id.clone()).collect(),
            mean: mean_metrics(&images).unwrap(),
            pooled: pooled_metrics(&images).unwrap(),
            images,
            curve: Vec::new(),
        }
    }

    #[test]
    fn single_strategy_single_image() {
        let study = StudyResult::new(vec![result("a", &[1.0])]).unwrap();
        assert_eq!(metrics_table(&study).len(), 2);
        assert_eq!(study.pairwise, vec![vec![None]]);
        let dir = tempfile::tempdir().unwrap();
        let files = build_report(&study, dir.path()).unwrap();
        assert_eq!(files.len(), 5);
        let text = fs::read_to_string(dir.path().join("report.txt")).unwrap();
        assert!(text.contains("1*"));
    }

    #[test]
    fn identical_lists_are_inconclusive() {
        let d = [0.2, 0.4, 0.6, 0.8, 1.0, 0.5];
        let study = StudyResult::new(vec![result("a", &d), result("b", &d)]).unwrap();
        assert!(study.pairwise[0][1].unwrap().is_inconclusive());
        assert_eq!(significance_table(&study)[1][2], "n/a");
    }

    #[test]
    fn three_strategies_twenty_images() {
        let base: Vec<f64> = (0..20).map(|i| 0.3 + 0.02 * i as f64).collect();
        let better: Vec<f64> = base.iter().map(|d| d + 0.1).collect();
        let mixed: Vec<f64> = base.iter().enumerate().map(|(i, d)| if i % 2 == 0 { d + 0.1 } else { d - 0.09 }).collect();
        let study = StudyResult::new(vec![result("base", &base), result("better", &better), result("mixed", &mixed)]).unwrap();
        assert_eq!(metrics_table(&study).len(), 4);
        let sig = significance_table(&study);
        assert_eq!(sig.len(), 4);
        assert!(sig.iter().all(|r| r.len() == 4));
        for i in 0..3 {
            assert_eq!(sig[i + 1][i + 1], "1");
        }
        assert!(study.pairwise[0][1].unwrap().is_significant());
        assert_eq!(study.pairwise[0][1].unwrap().p_value, study.pairwise[1][0].unwrap().p_value);
        assert_eq!(study.ranks(), [3, 1, 2]);
    }

    #[test]
    fn mismatched_ids_rejected() {
        let a = result("a", &[0.5, 0.6]);
        let mut b = result("b", &[0.5, 0.6]);
        b.test_ids.reverse();
        assert!(matches!(StudyResult::new(vec![a, b]), Err(Error::Mismatch(_))));
        assert!(StudyResult::new(vec![]).is_err());
    }

    #[test]
    fn perfect_predictions_score_one() {
        let m = Mask::new(vec![2, 2], vec![0, 1, 1, 0]).unwrap();
        let r = EvaluationResult::from_masks("oracle", 0, &[("x".into(), m.clone(), m)]).unwrap();
        assert_eq!(r.mean.dice, 1.0);
    }
}
