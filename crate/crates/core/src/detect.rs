//! Anomaly verdicts from next-template predictions and the binary metric
//! harness. Anomaly is the positive class throughout.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Label;
use crate::template_miner::TemplateId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub logs_top_k: usize,
    pub trace_top_k: usize,
    pub threshold_grid: Vec<f64>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            logs_top_k: 20,
            trace_top_k: 1,
            threshold_grid: default_grid(),
        }
    }
}

/// 0.05, 0.10, ..., 1.00
pub fn default_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 20.0).collect()
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.logs_top_k == 0 || self.trace_top_k == 0 {
            return Err(Error::Config("top-k values must be at least 1".into()));
        }
        if self.threshold_grid.is_empty()
            || self.threshold_grid.iter().any(|&t| !(t > 0.0 && t <= 1.0))
            || self.threshold_grid.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Config(
                "threshold grid must be strictly increasing within (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Whether `target` is among the `k` most probable templates. Ties are
/// ranked by lower template id first. UNKNOWN is never a hit.
pub fn in_top_k(probs: &[f64], target: TemplateId, k: usize) -> bool {
    if target.is_unknown() || target.index() >= probs.len() {
        return false;
    }
    let t = target.index();
    let pt = probs[t];
    let ahead = probs
        .iter()
        .enumerate()
        .filter(|&(j, &p)| p > pt || (p == pt && j < t))
        .count();
    ahead < k
}

pub fn classify_log(probs: &[f64], true_template: TemplateId, k: usize) -> Label {
    if in_top_k(probs, true_template, k) {
        Label::Normal
    } else {
        Label::Anomaly
    }
}

/// Fraction of windows flagged as errors.
pub fn error_rate(errors: &[bool]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Data("trace has no scorable windows".into()));
    }
    Ok(errors.iter().filter(|&&e| e).count() as f64 / errors.len() as f64)
}

/// Span error rate: share of windows whose true next span is outside the top-k.
pub fn score_trace(predictions: &[(Vec<f64>, TemplateId)], k: usize) -> Result<f64> {
    let errors: Vec<bool> = predictions
        .iter()
        .map(|(p, t)| !in_top_k(p, *t, k))
        .collect();
    error_rate(&errors)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl MetricReport {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MetricReport {
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision,
            recall,
            f1,
            tp,
            fp,
            tn,
            fn_,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "accuracy   {:.4}", self.accuracy)?;
        writeln!(f, "precision  {:.4}", self.precision)?;
        writeln!(f, "recall     {:.4}", self.recall)?;
        writeln!(f, "f1         {:.4}", self.f1)?;
        write!(
            f,
            "tp {}  fp {}  tn {}  fn {}",
            self.tp, self.fp, self.tn, self.fn_
        )
    }
}

pub fn evaluate(preds: &[Label], truth: &[Label]) -> Result<MetricReport> {
    if preds.len() != truth.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &t) in preds.iter().zip(truth) {
        match (p, t) {
            (Label::Anomaly, Label::Anomaly) => tp += 1,
            (Label::Anomaly, Label::Normal) => fp += 1,
            (Label::Normal, Label::Normal) => tn += 1,
            (Label::Normal, Label::Anomaly) => fn_ += 1,
        }
    }
    Ok(MetricReport::from_counts(tp, fp, tn, fn_))
}

pub fn predict_at(rate: f64, threshold: f64) -> Label {
    if rate > threshold {
        Label::Anomaly
    } else {
        Label::Normal
    }
}

/// Picks the grid threshold with the best F1 (smallest on ties).
pub fn sweep_threshold(scores: &[(f64, Label)], grid: &[f64]) -> Result<(f64, MetricReport)> {
    for class in [Label::Anomaly, Label::Normal] {
        if !scores.iter().any(|&(_, l)| l == class) {
            return Err(Error::Data(format!(
                "threshold sweep needs both classes; no {class:?} traces"
            )));
        }
    }
    if grid.is_empty() {
        return Err(Error::Config("empty threshold grid".into()));
    }
    let truth: Vec<Label> = scores.iter().map(|&(_, l)| l).collect();
    let mut best: Option<(f64, MetricReport)> = None;
    for &theta in grid {
        let preds: Vec<Label> = scores.iter().map(|&(r, _)| predict_at(r, theta)).collect();
        let m = evaluate(&preds, &truth)?;
        if best.is_none_or(|(_, b)| m.f1 > b.f1) {
            best = Some((theta, m));
        }
    }
    Ok(best.expect("non-empty grid"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyVerdict {
    pub trace_id: String,
    pub span_error_rate: f64,
    pub windows: usize,
    pub trace_label_pred: Label,
    pub true_label: Label,
    /// One flag per scored log target inside the trace.
    pub per_log_flags: Vec<Label>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::softmax;
    use approx::assert_abs_diff_eq;

    fn probs_ranked(n: usize) -> Vec<f64> {
        // template j gets logit -j, so rank(j) = j + 1
        softmax(&(0..n).map(|j| -(j as f64)).collect::<Vec<_>>())
    }

    #[test]
    fn top_one_hit() {
        let p = softmax(&[0.0, 3.0, 1.0]);
        assert_eq!(classify_log(&p, TemplateId(1), 1), Label::Normal);
        // UNKNOWN never counts as predicted, even when it ranks first
        let p = softmax(&[9.0, 3.0, 1.0]);
        assert_eq!(classify_log(&p, TemplateId::UNKNOWN, 3), Label::Anomaly);
    }

    #[test]
    fn rank_k_plus_one_is_anomaly() {
        let p = probs_ranked(10);
        // id 4 has rank 5
        assert_eq!(classify_log(&p, TemplateId(4), 4), Label::Anomaly);
        assert_eq!(classify_log(&p, TemplateId(4), 5), Label::Normal);
    }

    #[test]
    fn rank_twenty_of_thirty_is_normal() {
        let logits: Vec<f64> = (0..30).map(|j| ((j * 7) % 30) as f64).collect();
        let p = softmax(&logits);
        let mut order: Vec<usize> = (0..30).collect();
        order.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap().then(a.cmp(&b)));
        let twentieth = order[19];
        let twenty_first = order[20];
        assert_eq!(
            classify_log(&p, TemplateId(twentieth as u32), 20),
            Label::Normal
        );
        assert_eq!(
            classify_log(&p, TemplateId(twenty_first as u32), 20),
            Label::Anomaly
        );
    }

    #[test]
    fn ties_prefer_lower_id() {
        let p = vec![0.1, 0.3, 0.3, 0.3];
        assert!(in_top_k(&p, TemplateId(1), 1));
        assert!(!in_top_k(&p, TemplateId(2), 1));
        assert!(in_top_k(&p, TemplateId(2), 2));
    }

    #[test]
    fn span_error_rate_formula() {
        let hit = (softmax(&[0.0, 5.0, 0.0]), TemplateId(1));
        let miss = (softmax(&[0.0, 5.0, 0.0]), TemplateId(2));
        let four = vec![hit.clone(), hit.clone(), miss.clone(), hit.clone()];
        assert_eq!(score_trace(&four, 1).unwrap(), 0.25);
        assert_eq!(score_trace(&[hit.clone(), hit.clone()], 1).unwrap(), 0.0);
        assert_eq!(score_trace(&[miss.clone(), miss], 1).unwrap(), 1.0);
        assert!(score_trace(&[], 1).is_err());
    }

    #[test]
    fn sweep_on_separable_scores() {
        let scores = [
            (0.5, Label::Anomaly),
            (0.6, Label::Anomaly),
            (0.0, Label::Normal),
            (0.1, Label::Normal),
        ];
        let (theta, m) = sweep_threshold(&scores, &default_grid()).unwrap();
        // θ = 0.05 flags the 0.1 normal; 0.10 is the first perfect grid point
        // because the rule is strict (rate > θ)
        assert_abs_diff_eq!(theta, 0.10);
        assert_eq!(m.f1, 1.0);
        for &t in &default_grid() {
            let preds: Vec<_> = scores.iter().map(|&(r, _)| predict_at(r, t)).collect();
            let truth: Vec<_> = scores.iter().map(|&(_, l)| l).collect();
            let perfect = evaluate(&preds, &truth).unwrap().f1 == 1.0;
            assert_eq!(perfect, (0.10..0.50).contains(&t), "θ = {t}");
        }
    }

    #[test]
    fn no_separation_gives_zero_recall() {
        let scores = [
            (0.0, Label::Anomaly),
            (0.0, Label::Normal),
            (0.0, Label::Normal),
        ];
        for &t in &default_grid() {
            let preds: Vec<_> = scores.iter().map(|&(r, _)| predict_at(r, t)).collect();
            let truth: Vec<_> = scores.iter().map(|&(_, l)| l).collect();
            assert_eq!(evaluate(&preds, &truth).unwrap().recall, 0.0);
        }
        let (_, m) = sweep_threshold(&scores, &default_grid()).unwrap();
        assert_eq!(m.recall, 0.0);
    }

    #[test]
    fn degenerate_labels_rejected() {
        let err = sweep_threshold(&[(0.3, Label::Normal)], &default_grid()).unwrap_err();
        assert!(err.to_string().contains("Anomaly"));
    }

    #[test]
    fn perfect_predictions() {
        let y = [Label::Anomaly, Label::Normal, Label::Normal];
        let m = evaluate(&y, &y).unwrap();
        assert_eq!(
            (m.accuracy, m.precision, m.recall, m.f1),
            (1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn confusion_arithmetic() {
        let m = MetricReport::from_counts(9, 1, 89, 1);
        assert_abs_diff_eq!(m.precision, 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(m.recall, 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(m.f1, 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(m.accuracy, 0.98, epsilon = 1e-12);
    }

    #[test]
    fn length_mismatch() {
        assert!(evaluate(&[Label::Normal], &[]).is_err());
    }

    #[test]
    fn grid_defaults() {
        let g = default_grid();
        assert_eq!(g.len(), 20);
        assert_eq!(g[0], 0.05);
        assert_eq!(g[19], 1.0);
        assert!(DetectionConfig::default().validate().is_ok());
        let bad = DetectionConfig {
            threshold_grid: vec![0.5, 0.2],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
