//! Confusion matrices and the recall/precision/accuracy/F1 report, plus the
//! JSON/CSV/SVG renderings the CLI emits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::NUM_GENRES;

/// Rows are true genres, columns predicted genres.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_GENRES).map(|i| self.counts[i][i]).sum()
    }
}

/// Count (true, predicted) pairs into a 10x10 matrix.
pub fn confusion(true_labels: &[usize], pred_labels: &[usize]) -> Result<ConfusionMatrix> {
    if true_labels.is_empty() || true_labels.len() != pred_labels.len() {
        return Err(Error::DataError(format!(
            "confusion needs equal-length non-empty label vectors, got {} and {}",
            true_labels.len(),
            pred_labels.len()
        )));
    }
    let mut counts = vec![vec![0u64; NUM_GENRES]; NUM_GENRES];
    for (&t, &p) in true_labels.iter().zip(pred_labels) {
        if t >= NUM_GENRES || p >= NUM_GENRES {
            return Err(Error::DataError(format!("label pair ({t}, {p}) out of range")));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: usize,
    pub support: u64,
    pub predicted: u64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// True when recall was forced to 0 by zero support.
    pub zero_support: bool,
    /// True when precision was forced to 0 by zero predicted positives.
    pub zero_predicted: bool,
    /// Classes absent from both truth and predictions are excluded from the
    /// macro averages.
    pub in_macro: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub total: u64,
}

/// Macro-averaged metrics from a confusion matrix.
///
/// Per-class recall is TP/(TP+FN) with 0 for zero-support classes, precision
/// TP/(TP+FP) with 0 for zero-prediction classes, F1 the harmonic mean.
/// Classes absent from both axes do not enter the macro averages.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::DataError("empty confusion matrix".into()));
    }
    let mut per_class = Vec::with_capacity(NUM_GENRES);
    for k in 0..NUM_GENRES {
        let tp = cm.counts[k][k];
        let support: u64 = cm.counts[k].iter().sum();
        let predicted: u64 = (0..NUM_GENRES).map(|t| cm.counts[t][k]).sum();
        let zero_support = support == 0;
        let zero_predicted = predicted == 0;
        let recall = if zero_support { 0.0 } else { tp as f64 / support as f64 };
        let precision = if zero_predicted { 0.0 } else { tp as f64 / predicted as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassMetrics {
            label: k,
            support,
            predicted,
            recall,
            precision,
            f1,
            zero_support,
            zero_predicted,
            in_macro: !(zero_support && zero_predicted),
        });
    }
    let included: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.in_macro).collect();
    let n = included.len() as f64;
    Ok(MetricsReport {
        accuracy: cm.trace() as f64 / total as f64,
        recall: included.iter().map(|c| c.recall).sum::<f64>() / n,
        precision: included.iter().map(|c| c.precision).sum::<f64>() / n,
        f1: included.iter().map(|c| c.f1).sum::<f64>() / n,
        per_class,
        total,
    })
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,support,predicted,recall,precision,f1\n");
        for c in &self.per_class {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6}\n",
                c.label, c.support, c.predicted, c.recall, c.precision, c.f1
            ));
        }
        out.push_str(&format!(
            "macro,{},,{:.6},{:.6},{:.6}\n",
            self.total, self.recall, self.precision, self.f1
        ));
        out.push_str(&format!("accuracy,,,,,{:.6}\n", self.accuracy));
        out
    }
}

/// Majority vote over the segments of each parent clip; ties break toward
/// the lower genre index. Reported as a labeled extra alongside the
/// segment-level numbers, never compared against them.
pub fn clip_majority_vote(
    segment_parents: &[&str],
    true_labels: &[usize],
    pred_labels: &[usize],
) -> Result<(Vec<usize>, Vec<usize>)> {
    if segment_parents.len() != true_labels.len() || true_labels.len() != pred_labels.len() {
        return Err(Error::DataError("clip vote needs aligned parents/labels/preds".into()));
    }
    let mut by_clip: BTreeMap<&str, (usize, [u64; NUM_GENRES])> = BTreeMap::new();
    for ((parent, &t), &p) in segment_parents.iter().zip(true_labels).zip(pred_labels) {
        let entry = by_clip.entry(parent).or_insert((t, [0; NUM_GENRES]));
        entry.1[p] += 1;
    }
    let mut truths = Vec::with_capacity(by_clip.len());
    let mut preds = Vec::with_capacity(by_clip.len());
    for (_, (t, votes)) in by_clip {
        let mut best = 0;
        for (i, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = i;
            }
        }
        truths.push(t);
        preds.push(best);
    }
    Ok((truths, preds))
}

/// Simple SVG heatmap of the confusion matrix for human inspection.
pub fn confusion_svg(cm: &ConfusionMatrix, title: &str) -> String {
    let cell = 36;
    let margin = 110;
    let size = margin + NUM_GENRES * cell + 20;
    let max = cm.counts.iter().flatten().copied().max().unwrap_or(1).max(1) as f64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" font-family=\"monospace\" font-size=\"11\">\n<text x=\"{margin}\" y=\"18\" font-size=\"13\">{title}</text>\n"
    );
    for (i, name) in crate::dataset::GENRE_NAMES.iter().enumerate() {
        let y = margin + i * cell + cell / 2 + 4;
        svg.push_str(&format!("<text x=\"8\" y=\"{y}\">{name}</text>\n"));
        let x = margin + i * cell + 2;
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" transform=\"rotate(-60 {x} {})\">{name}</text>\n",
            margin - 8,
            margin - 8
        ));
    }
    for t in 0..NUM_GENRES {
        for p in 0..NUM_GENRES {
            let v = cm.counts[t][p] as f64;
            let intensity = (v / max * 255.0).round() as u8;
            let x = margin + p * cell;
            let y = margin + t * cell;
            svg.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({},{},255)\" stroke=\"white\"/>\n",
                255 - intensity,
                255 - intensity
            ));
            let tx = x + cell / 2 - 8;
            let ty = y + cell / 2 + 4;
            let color = if intensity > 140 { "white" } else { "black" };
            svg.push_str(&format!(
                "<text x=\"{tx}\" y=\"{ty}\" fill=\"{color}\">{}</text>\n",
                cm.counts[t][p]
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let labels: Vec<usize> = (0..30).map(|i| i % 10).collect();
        let cm = confusion(&labels, &labels).unwrap();
        for t in 0..10 {
            for p in 0..10 {
                assert_eq!(cm.counts[t][p], if t == p { 3 } else { 0 });
            }
        }
        let report = metrics(&cm).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.recall, 1.0);
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.f1, 1.0);
    }

    #[test]
    fn small_example_counts() {
        let cm = confusion(&[0, 0, 1], &[0, 1, 1]).unwrap();
        assert_eq!(cm.counts[0][0], 1);
        assert_eq!(cm.counts[0][1], 1);
        assert_eq!(cm.counts[1][1], 1);
        assert_eq!(cm.total(), 3);
    }

    #[test]
    fn empty_and_invalid_inputs_rejected() {
        assert!(matches!(confusion(&[], &[]), Err(Error::DataError(_))));
        assert!(matches!(confusion(&[0], &[0, 1]), Err(Error::DataError(_))));
        assert!(matches!(confusion(&[10], &[0]), Err(Error::DataError(_))));
        let empty = ConfusionMatrix { counts: vec![vec![0; 10]; 10] };
        assert!(matches!(metrics(&empty), Err(Error::DataError(_))));
    }

    #[test]
    fn hand_computed_macro_f1() {
        // [[1,1],[0,2]] embedded in the 10x10 matrix: class 0 recall 0.5 and
        // precision 1.0, class 1 recall 1.0 and precision 2/3; the other
        // classes are empty and stay out of the macro average.
        let mut counts = vec![vec![0u64; 10]; 10];
        counts[0][0] = 1;
        counts[0][1] = 1;
        counts[1][1] = 2;
        let report = metrics(&ConfusionMatrix { counts }).unwrap();
        assert!((report.per_class[0].recall - 0.5).abs() < 1e-12);
        assert!((report.per_class[0].precision - 1.0).abs() < 1e-12);
        assert!((report.per_class[1].recall - 1.0).abs() < 1e-12);
        assert!((report.per_class[1].precision - 2.0 / 3.0).abs() < 1e-12);
        let expected_f1 = (2.0 / 3.0 + 0.8) / 2.0;
        assert!((report.f1 - expected_f1).abs() < 1e-9, "{} vs {expected_f1}", report.f1);
        assert!((report.f1 - 0.7333).abs() < 1e-4);
        assert_eq!(report.per_class.iter().filter(|c| c.in_macro).count(), 2);
        assert!((report.accuracy - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_support_and_zero_predicted_flags() {
        let mut counts = vec![vec![0u64; 10]; 10];
        counts[0][0] = 5;
        counts[0][2] = 1; // class 2 predicted but never true
        counts[3][0] = 2; // class 3 true but never predicted
        let report = metrics(&ConfusionMatrix { counts }).unwrap();
        assert!(report.per_class[2].zero_support);
        assert!(report.per_class[2].in_macro);
        assert_eq!(report.per_class[2].recall, 0.0);
        assert!(report.per_class[3].zero_predicted);
        assert_eq!(report.per_class[3].precision, 0.0);
    }

    #[test]
    fn clip_vote_majority() {
        let parents = ["a", "a", "a", "b", "b", "b"];
        let truths = [0, 0, 0, 1, 1, 1];
        let preds = [0, 0, 2, 1, 3, 3];
        let (t, p) = clip_majority_vote(&parents, &truths, &preds).unwrap();
        assert_eq!(t, vec![0, 1]);
        assert_eq!(p, vec![0, 3]);
    }

    #[test]
    fn svg_renders_all_cells() {
        let labels: Vec<usize> = (0..20).map(|i| i % 10).collect();
        let cm = confusion(&labels, &labels).unwrap();
        let svg = confusion_svg(&cm, "test");
        assert_eq!(svg.matches("<rect").count(), 100);
        assert!(svg.contains("blues"));
    }

    proptest! {
        #[test]
        fn jointly_permuting_pairs_preserves_matrix(seed in 0u64..300) {
            use rand::seq::SliceRandom;
            use rand::Rng;
            let mut rng = crate::rng::component_rng(seed, "perm-cm");
            let n = 50;
            let truths: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
            let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
            let cm1 = confusion(&truths, &preds).unwrap();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let t2: Vec<usize> = order.iter().map(|&i| truths[i]).collect();
            let p2: Vec<usize> = order.iter().map(|&i| preds[i]).collect();
            let cm2 = confusion(&t2, &p2).unwrap();
            prop_assert_eq!(cm1, cm2);
        }

        #[test]
        fn identity_predictions_score_one(seed in 0u64..300) {
            use rand::Rng;
            let mut rng = crate::rng::component_rng(seed, "id-cm");
            let n = rng.random_range(1..100);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
            let report = metrics(&confusion(&labels, &labels).unwrap()).unwrap();
            prop_assert_eq!(report.accuracy, 1.0);
            prop_assert_eq!(report.recall, 1.0);
            prop_assert_eq!(report.f1, 1.0);
        }

        #[test]
        fn accuracy_equals_micro_recall_and_precision(seed in 0u64..300) {
            use rand::Rng;
            let mut rng = crate::rng::component_rng(seed, "micro");
            let n = rng.random_range(5..200);
            let truths: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
            let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
            let cm = confusion(&truths, &preds).unwrap();
            // Micro recall = sum TP / sum support; micro precision =
            // sum TP / sum predicted. Both denominators equal the total for
            // single-label classification.
            let micro_recall = cm.trace() as f64 / cm.total() as f64;
            let report = metrics(&cm).unwrap();
            prop_assert!((report.accuracy - micro_recall).abs() < 1e-15);
        }
    }
}
