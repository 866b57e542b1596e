//! Binary classification metrics: confusion matrix, accuracy, sensitivity,
//! specificity, ROC curve and AUC, plus the report renderers.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("nothing to evaluate")]
    Empty,
    #[error("{0} is undefined: its denominator is zero")]
    UndefinedRate(&'static str),
    #[error("ROC needs both classes present")]
    SingleClass,
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(u8),
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
}

/// Rows are ground truth, columns predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
}

fn check_labels(labels: &[u8]) -> Result<(), EvalError> {
    match labels.iter().find(|&&l| l > 1) {
        Some(&l) => Err(EvalError::InvalidLabel(l)),
        None => Ok(()),
    }
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch(preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    check_labels(labels)?;
    check_labels(preds)?;
    let mut cm = ConfusionMatrix::default();
    for (&p, &l) in preds.iter().zip(labels) {
        match (l, p) {
            (0, 0) => cm.tn += 1,
            (0, _) => cm.fp += 1,
            (_, 0) => cm.fn_ += 1,
            _ => cm.tp += 1,
        }
    }
    Ok(cm)
}

impl ConfusionMatrix {
    pub fn new(tn: u64, fp: u64, fn_: u64, tp: u64) -> Self {
        Self { tn, fp, fn_, tp }
    }

    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    fn ratio(num: u64, den: u64, name: &'static str) -> Result<f64, EvalError> {
        if den == 0 {
            Err(EvalError::UndefinedRate(name))
        } else {
            Ok(num as f64 / den as f64)
        }
    }

    pub fn accuracy(&self) -> Result<f64, EvalError> {
        Self::ratio(self.tp + self.tn, self.total(), "accuracy")
    }

    /// True-positive rate `tp / (tp + fn)`.
    pub fn sensitivity(&self) -> Result<f64, EvalError> {
        Self::ratio(self.tp, self.tp + self.fn_, "sensitivity")
    }

    /// True-negative rate `tn / (tn + fp)`.
    pub fn specificity(&self) -> Result<f64, EvalError> {
        Self::ratio(self.tn, self.tn + self.fp, "specificity")
    }
}

/// Scalar rates; `None` (JSON `null`) where a denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    Metrics {
        accuracy: cm.accuracy().ok(),
        sensitivity: cm.sensitivity().ok(),
        specificity: cm.specificity().ok(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Score at or above which samples are called positive; `+inf` for the
    /// origin point (serialized as `null`).
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC over every distinct score. Tied scores form one threshold step, so the
/// curve crosses a tie block on a straight segment; the trapezoidal AUC then
/// equals the Mann-Whitney statistic with ties counted one half.
pub fn roc(scores: &[f64], labels: &[u8]) -> Result<RocCurve, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    check_labels(labels)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: None,
    }];
    // Twice the area, in units of 1 / (n_pos * n_neg).
    let mut area2: u128 = 0;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (tp_prev, fp_prev) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp_prev) as u128 * (tp + tp_prev) as u128;
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold: Some(threshold),
        });
    }
    let auc = area2 as f64 / (2 * n_pos as u128 * n_neg as u128) as f64;
    Ok(RocCurve { points, auc })
}

/// Everything `evaluate` reports for one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub split: String,
    pub n_samples: usize,
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    /// Absent when the evaluated labels hold a single class.
    pub roc: Option<RocCurve>,
}

impl EvalReport {
    /// `hard_labels` are the thresholded predictions; `scores` rank samples for
    /// the ROC (probabilities, or raw decision values for the SVM).
    pub fn from_parts(
        model: &str,
        split: &str,
        threshold: f64,
        hard_labels: &[u8],
        scores: &[f64],
        labels: &[u8],
    ) -> Result<Self, EvalError> {
        let confusion = confusion(hard_labels, labels)?;
        let roc = match roc(scores, labels) {
            Ok(r) => Some(r),
            Err(EvalError::SingleClass) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            model: model.to_string(),
            split: split.to_string(),
            n_samples: labels.len(),
            threshold,
            metrics: metrics(&confusion),
            confusion,
            roc,
        })
    }

    /// Scores thresholded at `threshold` (positive iff `score >= threshold`).
    pub fn from_scores(
        model: &str,
        split: &str,
        threshold: f64,
        scores: &[f64],
        labels: &[u8],
    ) -> Result<Self, EvalError> {
        let hard: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
        Self::from_parts(model, split, threshold, &hard, scores, labels)
    }

    pub fn auc(&self) -> Option<f64> {
        self.roc.as_ref().map(|r| r.auc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn roc_csv(&self) -> String {
        let mut out = String::from("fpr,tpr,threshold\n");
        if let Some(roc) = &self.roc {
            for p in &roc.points {
                let t = p.threshold.map(|t| t.to_string()).unwrap_or_else(|| "inf".into());
                let _ = writeln!(out, "{},{},{}", p.fpr, p.tpr, t);
            }
        }
        out
    }
}

fn pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.0}%", v * 100.0),
        None => "n/a".into(),
    }
}

/// Plain-text comparison table, one row per report.
pub fn comparison_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>6} {:>9} {:>12} {:>12} {:>7}  {:>4} {:>4} {:>4} {:>4}",
        "Model", "N", "Accuracy", "Sensitivity", "Specificity", "AUC", "TN", "FP", "FN", "TP"
    );
    let _ = writeln!(out, "{}", "-".repeat(84));
    for r in reports {
        let auc = r.auc().map(|a| format!("{a:.3}")).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>9} {:>12} {:>12} {:>7}  {:>4} {:>4} {:>4} {:>4}",
            r.model,
            r.n_samples,
            pct(r.metrics.accuracy),
            pct(r.metrics.sensitivity),
            pct(r.metrics.specificity),
            auc,
            r.confusion.tn,
            r.confusion.fp,
            r.confusion.fn_,
            r.confusion.tp
        );
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Standalone SVG with one ROC polyline per report and the chance diagonal.
pub fn roc_svg(reports: &[EvalReport]) -> String {
    let (w, h, m) = (480.0, 480.0, 50.0);
    let plot = w - 2.0 * m;
    let x = |fpr: f64| m + fpr * plot;
    let y = |tpr: f64| h - m - tpr * plot;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{m}" y="{m}" width="{plot}" height="{plot}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 4"/>"##,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{v:.1}</text>"#,
            x(v),
            h - m + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#,
            m - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">False positive rate</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">True positive rate</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, r) in reports.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if let Some(roc) = &r.roc {
            let pts: Vec<String> = roc
                .points
                .iter()
                .map(|p| format!("{:.2},{:.2}", x(p.fpr), y(p.tpr)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline class="roc" data-model="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                xml_escape(&r.model),
                pts.join(" ")
            );
        }
        let auc = r.auc().map(|a| format!(" (AUC {a:.3})")).unwrap_or_default();
        let ly = m + 18.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" fill="{color}">{}{auc}</text>"#,
            x(0.55),
            xml_escape(&r.model)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictor() {
        let labels = [0, 1, 1, 0, 1];
        let cm = confusion(&labels, &labels).unwrap();
        assert_eq!((cm.fp, cm.fn_), (0, 0));
        assert_eq!(cm.total(), 5);
    }

    #[test]
    fn all_positive_predictor() {
        let labels = [0, 1, 0, 1, 0, 1];
        let cm = confusion(&[1; 6], &labels).unwrap();
        assert_eq!(cm.tn, 0);
        assert_eq!(cm.fp, 3);
        assert_eq!(cm.specificity().unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert_eq!(confusion(&[1], &[1, 0]), Err(EvalError::LengthMismatch(1, 2)));
        assert_eq!(confusion(&[], &[]), Err(EvalError::Empty));
    }

    #[test]
    fn undefined_rates_are_explicit() {
        let cm = ConfusionMatrix::new(5, 1, 0, 0);
        assert_eq!(cm.sensitivity(), Err(EvalError::UndefinedRate("sensitivity")));
        let m = metrics(&cm);
        assert_eq!(m.sensitivity, None);
        assert!(serde_json::to_string(&m).unwrap().contains("\"sensitivity\":null"));
    }

    #[test]
    fn roc_extremes() {
        let r = roc(&[0.9, 0.8, 0.3, 0.1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(r.auc, 1.0);
        let r = roc(&[0.5; 6], &[1, 0, 1, 0, 0, 1]).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.points.len(), 2);
        assert_eq!(roc(&[0.1, 0.2], &[1, 1]), Err(EvalError::SingleClass));
    }

    #[test]
    fn roc_endpoints() {
        let r = roc(&[0.2, 0.4, 0.4, 0.9, 0.1], &[0, 1, 0, 1, 0]).unwrap();
        let first = &r.points[0];
        let last = r.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn report_renderers() {
        let rep = EvalReport::from_scores("lstm", "test", 0.5, &[0.9, 0.2, 0.7, 0.4], &[1, 0, 0, 1]).unwrap();
        assert_eq!(rep.confusion, ConfusionMatrix::new(1, 1, 1, 1));
        let json = rep.to_json();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
        assert!(json.contains("\"fn\": 1"));
        assert!(rep.roc_csv().starts_with("fpr,tpr,threshold\n0,0,inf\n"));
        let svg = roc_svg(&[rep.clone(), rep.clone()]);
        assert_eq!(svg.matches("<polyline class=\"roc\"").count(), 2);
        let table = comparison_table(&[rep]);
        assert!(table.contains("lstm"));
        assert!(table.contains("50%"));
    }

    fn mann_whitney(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if li != 1 {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj != 0 {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_statistic(
            data in proptest::collection::vec((0u8..20, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 4.0).collect();
            let labels: Vec<u8> = data.iter().map(|(_, l)| u8::from(*l)).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let r = roc(&scores, &labels).unwrap();
            prop_assert!((r.auc - mann_whitney(&scores, &labels)).abs() < 1e-12);
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((r.auc + roc(&neg, &labels).unwrap().auc - 1.0).abs() < 1e-12);
            let exp: Vec<f64> = scores.iter().map(|s| (s * 0.3).exp() + 4.0).collect();
            prop_assert_eq!(roc(&exp, &labels).unwrap().auc, r.auc);
            for w in r.points.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
        }

        #[test]
        fn metrics_match_integer_arithmetic(tn in 0u64..500, fp in 0u64..500, fn_ in 0u64..500, tp in 0u64..500) {
            let cm = ConfusionMatrix::new(tn, fp, fn_, tp);
            if let Ok(s) = cm.sensitivity() {
                // s == tp / (tp + fn) as exact rationals, up to one rounding.
                let back = (s * (tp + fn_) as f64).round() as u64;
                prop_assert_eq!(back, tp);
                prop_assert_eq!(s, tp as f64 / (tp + fn_) as f64);
            } else {
                prop_assert_eq!(tp + fn_, 0);
            }
            if let Ok(a) = cm.accuracy() {
                prop_assert_eq!((a * cm.total() as f64).round() as u64, tp + tn);
            }
        }
    }
}
