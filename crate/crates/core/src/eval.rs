//! Classification and anomaly-ranking metrics.
//!
//! Anomaly scores follow the indicator convention: a LOW score means the
//! sample is considered anomalous, and a threshold `ρ_c` selects
//! `{n : score_n ≤ ρ_c}`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{input, Result};

pub fn misclassification_error(predictions: &[Label], truth: &[Label]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return input(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        ));
    }
    if truth.is_empty() {
        return input("cannot score an empty prediction set");
    }
    let wrong = predictions
        .iter()
        .zip(truth)
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// Fraction of anomaly/nominal calls that match the ground truth.
pub fn detection_accuracy(detections: &[bool], truth: &[bool]) -> Result<f64> {
    if detections.len() != truth.len() {
        return input(format!(
            "{} detections for {} truth flags",
            detections.len(),
            truth.len()
        ));
    }
    if truth.is_empty() {
        return input("cannot score an empty detection set");
    }
    let right = detections.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(right as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall of `{score ≤ ρ_c}` as `ρ_c` sweeps `{0} ∪ scores ∪ {1}`.
///
/// An empty selection has precision 1.
pub fn precision_recall_curve(scores: &[f64], anomalous: &[bool]) -> Result<Vec<PrPoint>> {
    if scores.len() != anomalous.len() {
        return input(format!(
            "{} scores for {} truth flags",
            scores.len(),
            anomalous.len()
        ));
    }
    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return input("scores must lie in [0,1]");
    }
    let positives = anomalous.iter().filter(|&&a| a).count();
    if positives == 0 {
        return input("ground truth contains no anomalies");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut thresholds: Vec<f64> = std::iter::once(0.0)
        .chain(order.iter().map(|&i| scores[i]))
        .chain([1.0])
        .collect();
    thresholds.dedup();

    let mut curve = Vec::with_capacity(thresholds.len());
    let mut pos = 0;
    let (mut selected, mut hits) = (0usize, 0usize);
    for t in thresholds {
        while pos < order.len() && scores[order[pos]] <= t {
            selected += 1;
            hits += anomalous[order[pos]] as usize;
            pos += 1;
        }
        let precision = if selected == 0 {
            1.0
        } else {
            hits as f64 / selected as f64
        };
        curve.push(PrPoint {
            threshold: t,
            precision,
            recall: hits as f64 / positives as f64,
        });
    }
    Ok(curve)
}

/// Trapezoidal area under precision as a function of recall.
///
/// When the lowest threshold already selects some anomalies (scores tied at
/// 0), the curve is extended flat from its first point down to recall 0.
pub fn auc(curve: &[PrPoint]) -> Result<f64> {
    if curve.len() < 2 {
        return input("AUC needs at least two curve points");
    }
    let mut pts: Vec<(f64, f64)> = curve.iter().map(|p| (p.recall, p.precision)).collect();
    // stable: points sharing a recall keep their sweep order
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts[0].0 > 0.0 {
        pts.insert(0, (0.0, pts[0].1));
    }
    let area: f64 = pts
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1))
        .sum();
    Ok(area.clamp(0.0, 1.0))
}

pub fn write_curve_csv<W: Write>(curve: &[PrPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["threshold", "precision", "recall"])?;
    for p in curve {
        w.write_record([
            p.threshold.to_string(),
            p.precision.to_string(),
            p.recall.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Summary emitted by the `evaluate` command. Absent metrics are `null`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format_version: u32,
    pub error: Option<f64>,
    pub auc: Option<f64>,
    pub pr_curve_path: Option<String>,
    pub detection_accuracy: Option<f64>,
    pub true_positive_rate: Option<f64>,
    pub false_alarm_rate: Option<f64>,
}

/// True-positive rate and false-alarm rate of anomaly calls.
pub fn detection_rates(detections: &[bool], truth: &[bool]) -> Result<(f64, f64)> {
    if detections.len() != truth.len() {
        return input(format!(
            "{} detections for {} truth flags",
            detections.len(),
            truth.len()
        ));
    }
    let (mut tp, mut p, mut fp, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (&d, &t) in detections.iter().zip(truth) {
        if t {
            p += 1;
            tp += d as usize;
        } else {
            neg += 1;
            fp += d as usize;
        }
    }
    if p == 0 || neg == 0 {
        return input("detection rates need both anomalous and nominal samples");
    }
    Ok((tp as f64 / p as f64, fp as f64 / neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(v: &[i8]) -> Vec<Label> {
        v.iter().map(|&x| Label::try_from(x).unwrap()).collect()
    }

    #[test]
    fn error_examples() {
        let t = labels(&[1, -1, 1, 1, -1, -1, 1, -1, 1, 1]);
        assert_eq!(misclassification_error(&t, &t).unwrap(), 0.0);
        let flipped: Vec<Label> = t.iter().map(|l| l.flip()).collect();
        assert_eq!(misclassification_error(&flipped, &t).unwrap(), 1.0);
        let mut three = t.clone();
        for l in three.iter_mut().take(3) {
            *l = l.flip();
        }
        assert!((misclassification_error(&three, &t).unwrap() - 0.3).abs() < 1e-15);
        assert!(misclassification_error(&t[..2], &t).is_err());
    }

    #[test]
    fn detection_accuracy_examples() {
        let t = [
            true, false, false, true, false, false, false, true, false, false,
        ];
        assert_eq!(detection_accuracy(&t, &t).unwrap(), 1.0);
        let inv: Vec<bool> = t.iter().map(|b| !b).collect();
        assert_eq!(detection_accuracy(&inv, &t).unwrap(), 0.0);
        let mut one = t;
        one[4] = true;
        assert!((detection_accuracy(&one, &t).unwrap() - 0.9).abs() < 1e-15);
        assert!(detection_accuracy(&t[..3], &t).is_err());
    }

    #[test]
    fn pr_curve_examples() {
        let scores = [0.1, 0.4, 0.6, 0.9];
        let truth = [true, false, true, false];
        let c = precision_recall_curve(&scores, &truth).unwrap();
        let at = |t: f64| c.iter().find(|p| p.threshold == t).copied().unwrap();
        assert_eq!(at(0.4).precision, 0.5);
        assert_eq!(at(0.4).recall, 0.5);
        assert_eq!(at(0.0).recall, 0.0);
        assert_eq!(at(0.0).precision, 1.0);

        let perfect =
            precision_recall_curve(&[0.05, 0.1, 0.8, 0.9], &[true, true, false, false]).unwrap();
        assert!(perfect
            .iter()
            .any(|p| p.precision == 1.0 && p.recall == 1.0));
        assert!(precision_recall_curve(&scores, &[false; 4]).is_err());
    }

    #[test]
    fn auc_examples() {
        let pt = |r: f64, p: f64| PrPoint {
            threshold: 0.0,
            precision: p,
            recall: r,
        };
        assert_eq!(auc(&[pt(0.0, 1.0), pt(1.0, 1.0)]).unwrap(), 1.0);
        assert_eq!(
            auc(&[pt(0.0, 0.5), pt(0.3, 0.5), pt(1.0, 0.5)]).unwrap(),
            0.5
        );
        assert!((auc(&[pt(0.0, 1.0), pt(0.5, 0.5), pt(1.0, 0.5)]).unwrap() - 0.625).abs() < 1e-15);
        assert!(auc(&[pt(0.0, 1.0)]).is_err());
    }

    #[test]
    fn anomalies_tied_at_zero_rank_perfectly() {
        let curve =
            precision_recall_curve(&[0.0, 0.0, 0.7, 0.9], &[true, true, false, false]).unwrap();
        assert_eq!(curve[0].recall, 1.0);
        assert_eq!(auc(&curve).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_transform(
            raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 2..40),
        ) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
            let mut truth: Vec<bool> = raw.iter().map(|r| r.1).collect();
            truth[0] = true;
            let squashed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
            let a = auc(&precision_recall_curve(&scores, &truth).unwrap()).unwrap();
            let b = auc(&precision_recall_curve(&squashed, &truth).unwrap()).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn recall_nondecreasing(
            raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 1..40),
        ) {
            let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
            let mut truth: Vec<bool> = raw.iter().map(|r| r.1).collect();
            truth[0] = true;
            let c = precision_recall_curve(&scores, &truth).unwrap();
            for w in c.windows(2) {
                prop_assert!(w[1].threshold > w[0].threshold);
                prop_assert!(w[1].recall >= w[0].recall);
            }
        }
    }
}
