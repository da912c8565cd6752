//! Accuracy, per-class F1 and support-weighted F1 from a confusion matrix.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classes with fewer true utterances than this are left out of the printed
/// table (never out of the report itself).
pub const TABLE_MIN_SUPPORT: usize = 1;

/// Evaluation summary. `confusion[i][j]` counts utterances of true class `i`
/// predicted as `j`, both indexed in class-name order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub per_class_f1: IndexMap<String, f64>,
    pub confusion: Vec<Vec<usize>>,
    pub support: IndexMap<String, usize>,
}

/// Counts `(truth, predicted)` pairs into a `classes × classes` matrix.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if truth.len() != predicted.len() {
        return Err(Error::dimension("confusion_matrix", &[truth.len()], &[predicted.len()]));
    }
    let mut m = vec![vec![0; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= classes || p >= classes {
            return Err(Error::Contract(format!("class index {} outside {classes} classes", t.max(p))));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// F1 of class `c`; 0 whenever precision + recall is 0 or undefined.
fn f1(confusion: &[Vec<usize>], c: usize) -> f64 {
    let tp = confusion[c][c] as f64;
    let actual: usize = confusion[c].iter().sum();
    let predicted: usize = confusion.iter().map(|row| row[c]).sum();
    if actual == 0 || predicted == 0 || tp == 0.0 {
        return 0.0;
    }
    let precision = tp / predicted as f64;
    let recall = tp / actual as f64;
    2.0 * precision * recall / (precision + recall)
}

impl MetricsReport {
    pub fn from_confusion(confusion: Vec<Vec<usize>>, class_names: &[String]) -> Result<Self> {
        let n = class_names.len();
        if confusion.len() != n || confusion.iter().any(|r| r.len() != n) {
            return Err(Error::dimension("MetricsReport", &[confusion.len()], &[n, n]));
        }
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Contract("no utterances to evaluate".into()));
        }
        let correct: usize = (0..n).map(|c| confusion[c][c]).sum();
        let mut per_class_f1 = IndexMap::new();
        let mut support = IndexMap::new();
        let mut weighted_f1 = 0.0;
        for (c, name) in class_names.iter().enumerate() {
            let s: usize = confusion[c].iter().sum();
            let score = f1(&confusion, c);
            weighted_f1 += s as f64 / total as f64 * score;
            per_class_f1.insert(name.clone(), score);
            support.insert(name.clone(), s);
        }
        Ok(MetricsReport {
            accuracy: correct as f64 / total as f64,
            weighted_f1,
            per_class_f1,
            confusion,
            support,
        })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], class_names: &[String]) -> Result<Self> {
        Self::from_confusion(confusion_matrix(truth, predicted, class_names.len())?, class_names)
    }

    pub fn total(&self) -> usize {
        self.support.values().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table. Classes with support below `min_support`
    /// are omitted from the per-class rows.
    pub fn table(&self, min_support: usize) -> String {
        let width = self.per_class_f1.keys().map(String::len).max().unwrap_or(0).max(5);
        let mut out = format!("{:<width$}  {:>7}  {:>7}\n", "class", "f1", "support");
        let mut hidden = 0;
        for (name, f) in &self.per_class_f1 {
            let s = self.support[name];
            if s < min_support {
                hidden += 1;
                continue;
            }
            out.push_str(&format!("{name:<width$}  {:>7.4}  {s:>7}\n", f));
        }
        if hidden > 0 {
            out.push_str(&format!("({hidden} hidden, support below {min_support})\n"));
        }
        out.push_str(&format!("{:<width$}  {:>7.4}  {:>7}\n", "acc", self.accuracy, self.total()));
        out.push_str(&format!("{:<width$}  {:>7.4}  {:>7}\n", "w-f1", self.weighted_f1, self.total()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 1, 0];
        let r = MetricsReport::from_predictions(&y, &y, &names(3)).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.weighted_f1, 1.0);
        assert!(r.per_class_f1.values().all(|&f| f == 1.0));
    }

    #[test]
    fn majority_predictor_example() {
        let r = MetricsReport::from_predictions(&[0, 0, 0, 1], &[0, 0, 0, 0], &names(2)).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert!((r.per_class_f1["c0"] - 6.0 / 7.0).abs() < 1e-15);
        assert_eq!(r.per_class_f1["c1"], 0.0);
        assert!((r.weighted_f1 - 0.75 * 6.0 / 7.0).abs() < 1e-15);
        assert!((r.weighted_f1 - 0.6429).abs() < 1e-4);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(
            MetricsReport::from_predictions(&[], &[], &names(2)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn table_hides_rare_classes_but_report_keeps_them() {
        let r = MetricsReport::from_predictions(&[0, 0, 1, 1, 2], &[0, 1, 1, 1, 2], &names(3)).unwrap();
        let t = r.table(2);
        assert!(t.contains("c0") && t.contains("c1") && !t.contains("c2 "));
        assert!(t.contains("(1 hidden, support below 2)"));
        assert_eq!(r.per_class_f1.len(), 3);
        let back: MetricsReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
