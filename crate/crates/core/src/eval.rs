//! Confusion matrices and macro-averaged precision / recall / F-score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

pub fn confusion(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Shape {
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        for label in [t, p] {
            if label >= n_classes {
                return Err(Error::LabelOutOfRange { label, n_classes });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|c| self.counts[c][c]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f: f64,
    /// Classes for which some ratio was 0/0 and therefore set to 0.
    #[serde(default)]
    pub undefined: Vec<usize>,
}

fn ratio(num: f64, den: f64, undefined: &mut bool) -> f64 {
    if den == 0.0 {
        *undefined = true;
        0.0
    } else {
        num / den
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let n = cm.n_classes();
    if n == 0 || cm.total() == 0 {
        return Err(Error::Empty("confusion matrix"));
    }
    let (mut precision, mut recall, mut f) = (Vec::new(), Vec::new(), Vec::new());
    let mut undefined = Vec::new();
    for c in 0..n {
        let mut bad = false;
        let tp = cm.counts[c][c] as f64;
        let p = ratio(tp, cm.col_sum(c) as f64, &mut bad);
        let r = ratio(tp, cm.row_sum(c) as f64, &mut bad);
        let fc = ratio(2.0 * p * r, p + r, &mut bad);
        if bad {
            undefined.push(c);
        }
        precision.push(p);
        recall.push(r);
        f.push(fc);
    }
    Ok(MetricReport {
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f: mean(&f),
        precision,
        recall,
        f,
        undefined,
    })
}

impl MetricReport {
    pub fn has_warning(&self) -> bool {
        !self.undefined.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.precision.len()
    }

    /// Values in a fixed order: per-class (P, R, F) then macro (P, R, F).
    fn flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.n_classes() + 3);
        v.extend(&self.precision);
        v.extend(&self.recall);
        v.extend(&self.f);
        v.extend([self.macro_precision, self.macro_recall, self.macro_f]);
        v
    }

    fn from_flat(v: &[f64], n: usize) -> Self {
        Self {
            precision: v[..n].to_vec(),
            recall: v[n..2 * n].to_vec(),
            f: v[2 * n..3 * n].to_vec(),
            macro_precision: v[3 * n],
            macro_recall: v[3 * n + 1],
            macro_f: v[3 * n + 2],
            undefined: Vec::new(),
        }
    }
}

/// Elementwise mean and population standard deviation of several reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: MetricReport,
    pub std: MetricReport,
    pub count: usize,
}

pub fn aggregate(reports: &[MetricReport]) -> Result<MetricSummary> {
    let first = reports.first().ok_or(Error::Empty("metric reports"))?;
    let n = first.n_classes();
    if let Some(r) = reports.iter().find(|r| r.n_classes() != n) {
        return Err(Error::Shape {
            expected: n,
            got: r.n_classes(),
        });
    }
    let rows: Vec<Vec<f64>> = reports.iter().map(MetricReport::flat).collect();
    let k = rows.len() as f64;
    let width = rows[0].len();
    let means: Vec<f64> = (0..width)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / k)
        .collect();
    let stds: Vec<f64> = (0..width)
        .map(|j| {
            let m = means[j];
            (rows.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / k).sqrt()
        })
        .collect();
    let mut mean = MetricReport::from_flat(&means, n);
    mean.undefined = reports
        .iter()
        .flat_map(|r| r.undefined.iter().copied())
        .collect();
    mean.undefined.sort_unstable();
    mean.undefined.dedup();
    Ok(MetricSummary {
        mean,
        std: MetricReport::from_flat(&stds, n),
        count: reports.len(),
    })
}

/// `"0.786 (0.008)"`: display rounding to three decimals.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{mean:.3} ({std:.3})")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_diagonal() {
        let y = [0, 1, 2, 2, 1, 0, 0];
        let cm = confusion(&y, &y, 3).unwrap();
        assert_eq!(cm.counts, vec![vec![3, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
        let m = metrics(&cm).unwrap();
        assert_eq!((m.macro_precision, m.macro_recall, m.macro_f), (1.0, 1.0, 1.0));
        assert_eq!(format_cell(m.macro_f, 0.0), "1.000 (0.000)");
        assert!(!m.has_warning());
    }

    #[test]
    fn constant_predictor_single_column() {
        let cm = confusion(&[0, 1, 2, 1], &[0, 0, 0, 0], 3).unwrap();
        for row in &cm.counts {
            assert_eq!(&row[1..], &[0, 0]);
        }
        assert_eq!(cm.total(), 4);
    }

    #[test]
    fn hand_worked_two_class() {
        let cm = ConfusionMatrix {
            counts: vec![vec![1, 1], vec![0, 2]],
        };
        let m = metrics(&cm).unwrap();
        assert_eq!(m.precision, vec![1.0, 2.0 / 3.0]);
        assert_eq!(m.recall, vec![0.5, 1.0]);
        assert!((m.f[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f[1] - 0.8).abs() < 1e-15);
        assert!((m.macro_precision - 5.0 / 6.0).abs() < 1e-15);
        assert!((m.macro_recall - 0.75).abs() < 1e-15);
        assert!((m.macro_f - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
        assert_eq!(format!("{:.3}", m.macro_f), "0.733");
    }

    #[test]
    fn absent_class_is_zero_with_warning() {
        let cm = confusion(&[0, 1, 1], &[0, 1, 1], 3).unwrap();
        let m = metrics(&cm).unwrap();
        assert_eq!((m.precision[2], m.recall[2], m.f[2]), (0.0, 0.0, 0.0));
        assert_eq!(m.undefined, vec![2]);
    }

    #[test]
    fn errors() {
        assert!(confusion(&[0, 1], &[0], 2).is_err());
        assert!(matches!(
            confusion(&[0, 3], &[0, 1], 2),
            Err(Error::LabelOutOfRange { label: 3, .. })
        ));
        let zero = ConfusionMatrix {
            counts: vec![vec![0, 0], vec![0, 0]],
        };
        assert!(metrics(&zero).is_err());
        assert!(aggregate(&[]).is_err());
    }

    fn report_with_f(f: f64) -> MetricReport {
        MetricReport {
            precision: vec![f],
            recall: vec![f],
            f: vec![f],
            macro_precision: f,
            macro_recall: f,
            macro_f: f,
            undefined: vec![],
        }
    }

    #[test]
    fn aggregate_small_cases() {
        let s = aggregate(&[report_with_f(0.42)]).unwrap();
        assert_eq!(s.std.macro_f, 0.0);
        let s = aggregate(&[report_with_f(0.7), report_with_f(0.9)]).unwrap();
        assert!((s.mean.macro_f - 0.8).abs() < 1e-12);
        assert!((s.std.macro_f - 0.1).abs() < 1e-12);
    }

    #[test]
    fn symmetric_errors_macro_recall_equals_accuracy() {
        // balanced classes, each loses 2 of 10 to the next class
        let cm = ConfusionMatrix {
            counts: vec![vec![8, 2, 0], vec![0, 8, 2], vec![2, 0, 8]],
        };
        let m = metrics(&cm).unwrap();
        assert!((m.macro_recall - cm.accuracy()).abs() < 1e-15);
    }
}
