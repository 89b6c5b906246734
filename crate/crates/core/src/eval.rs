//! ROC/AUC, confusion counts, report rendering and the reference-set
//! stability experiment. The positive class is "bad": higher scores mean
//! more anomalous.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pipeline::{self, Dataset, ScreeningConfig};
use crate::seed::hash64;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub is_bad: Vec<bool>,
}

impl LabeledScores {
    pub fn new(ids: Vec<String>, scores: Vec<f64>, is_bad: Vec<bool>) -> Result<Self> {
        if ids.len() != scores.len() || scores.len() != is_bad.len() {
            return Err(Error::dims(
                format!("{} scores and labels", ids.len()),
                format!("{} scores, {} labels", scores.len(), is_bad.len()),
            ));
        }
        if let Some(s) = scores.iter().find(|s| s.is_nan()) {
            return Err(Error::NonFinite(format!("score {s}")));
        }
        Ok(Self { ids, scores, is_bad })
    }

    /// Unnamed scores, for tests and quick checks.
    pub fn from_pairs(pairs: &[(f64, bool)]) -> Self {
        Self {
            ids: (0..pairs.len()).map(|i| i.to_string()).collect(),
            scores: pairs.iter().map(|p| p.0).collect(),
            is_bad: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_bad(&self) -> usize {
        self.is_bad.iter().filter(|&&b| b).count()
    }

    pub fn n_good(&self) -> usize {
        self.len() - self.n_bad()
    }

    fn require_both_classes(&self) -> Result<()> {
        if self.n_bad() == 0 || self.n_good() == 0 {
            return Err(Error::InsufficientData(format!(
                "AUC needs both classes, got {} bad and {} good",
                self.n_bad(),
                self.n_good()
            )));
        }
        Ok(())
    }

    pub fn with_labels_flipped(&self) -> Self {
        Self {
            is_bad: self.is_bad.iter().map(|b| !b).collect(),
            ..self.clone()
        }
    }
}

fn cmp_scores(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

/// Mann–Whitney AUC with mid-ranks for ties: `P(bad > good) + ½·P(bad = good)`.
pub fn auc(s: &LabeledScores) -> Result<f64> {
    s.require_both_classes()?;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| cmp_scores(s.scores[i], s.scores[j]));
    let mut rank_sum_bad = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && s.scores[order[end]] == s.scores[order[start]] {
            end += 1;
        }
        // Ranks start..end (1-based: start+1..=end) share their average.
        let mid_rank = (start + 1 + end) as f64 / 2.0;
        rank_sum_bad += mid_rank * order[start..end].iter().filter(|&&i| s.is_bad[i]).count() as f64;
        start = end;
    }
    let n_bad = s.n_bad() as f64;
    let n_good = s.n_good() as f64;
    Ok((rank_sum_bad - n_bad * (n_bad + 1.0) / 2.0) / (n_bad * n_good))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from (0,0) to (1,1), thresholds descending.
    pub points: Vec<(f64, f64)>,
    /// Trapezoidal area under `points`.
    pub auc: f64,
}

pub fn roc_points(s: &LabeledScores) -> Result<RocCurve> {
    s.require_both_classes()?;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| cmp_scores(s.scores[j], s.scores[i]));
    let (p, n) = (s.n_bad() as f64, s.n_good() as f64);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = vec![(0.0, 0.0)];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && s.scores[order[end]] == s.scores[order[start]] {
            if s.is_bad[order[end]] {
                tp += 1;
            } else {
                fp += 1;
            }
            end += 1;
        }
        points.push((fp as f64 / n, tp as f64 / p));
        start = end;
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl ConfusionCounts {
    pub fn from_predictions(predicted_bad: impl IntoIterator<Item = bool>, is_bad: &[bool]) -> Self {
        let mut c = Self::default();
        for (pred, &bad) in predicted_bad.into_iter().zip(is_bad) {
            match (bad, pred) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.tn + self.fp
    }

    /// Recall of the bad class; absent when there are no bad items.
    pub fn sensitivity(&self) -> Option<f64> {
        let p = self.tp + self.fn_;
        (p > 0).then(|| self.tp as f64 / p as f64)
    }

    /// Recall of the good class; absent when there are no good items.
    pub fn specificity(&self) -> Option<f64> {
        let n = self.tn + self.fp;
        (n > 0).then(|| self.tn as f64 / n as f64)
    }
}

/// Predicts bad iff `score > threshold`.
pub fn confusion_at(s: &LabeledScores, threshold: f64) -> Result<ConfusionCounts> {
    if s.is_empty() {
        return Err(Error::InsufficientData("no scores to threshold".into()));
    }
    Ok(ConfusionCounts::from_predictions(
        s.scores.iter().map(|&x| x > threshold),
        &s.is_bad,
    ))
}

/// Threshold maximising Youden's J (`sensitivity + specificity − 1`).
///
/// Candidates are every distinct score plus −∞; ties keep the highest threshold.
pub fn youden_threshold(s: &LabeledScores) -> Result<(f64, ConfusionCounts)> {
    s.require_both_classes()?;
    let mut candidates = s.scores.clone();
    candidates.sort_by(|a, b| cmp_scores(*b, *a));
    candidates.dedup();
    candidates.push(f64::NEG_INFINITY);
    let mut best: Option<(f64, f64, ConfusionCounts)> = None;
    for t in candidates {
        let c = confusion_at(s, t)?;
        let j = c.sensitivity().unwrap_or(0.0) + c.specificity().unwrap_or(0.0) - 1.0;
        if best.as_ref().is_none_or(|(bj, ..)| j > *bj) {
            best = Some((j, t, c));
        }
    }
    let (_, t, c) = best.expect("at least one candidate");
    Ok((t, c))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdRule {
    /// The `flagged` decisions already stored with the scores.
    Flagged,
    Youden,
    Fixed(f64),
}

impl ThresholdRule {
    pub fn describe(&self) -> String {
        match self {
            ThresholdRule::Flagged => "flagged_column".into(),
            ThresholdRule::Youden => "youden_j".into(),
            ThresholdRule::Fixed(t) => format!("fixed {t:.16e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub auc: f64,
    pub threshold_rule: ThresholdRule,
    pub threshold: Option<f64>,
    pub counts: ConfusionCounts,
    pub config: Vec<(String, String)>,
}

impl EvalReport {
    /// Evaluates `s`; `flagged` is required for [`ThresholdRule::Flagged`].
    pub fn evaluate(
        method: impl Into<String>,
        s: &LabeledScores,
        rule: ThresholdRule,
        flagged: Option<&[bool]>,
    ) -> Result<Self> {
        let auc = auc(s)?;
        let (threshold, counts) = match rule {
            ThresholdRule::Flagged => {
                let flags = flagged.ok_or_else(|| {
                    Error::InvalidArgument("flagged-column rule needs the flagged decisions".into())
                })?;
                if flags.len() != s.len() {
                    return Err(Error::dims(s.len(), flags.len()));
                }
                (None, ConfusionCounts::from_predictions(flags.iter().copied(), &s.is_bad))
            }
            ThresholdRule::Youden => {
                let (t, c) = youden_threshold(s)?;
                (Some(t), c)
            }
            ThresholdRule::Fixed(t) => (Some(t), confusion_at(s, t)?),
        };
        Ok(Self {
            method: method.into(),
            auc,
            threshold_rule: rule,
            threshold,
            counts,
            config: Vec::new(),
        })
    }

    pub fn sensitivity(&self) -> Option<f64> {
        self.counts.sensitivity()
    }

    pub fn specificity(&self) -> Option<f64> {
        self.counts.specificity()
    }

    pub fn render(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("absent".to_string(), |x| format!("{x:.16e}"));
        let mut out = String::new();
        let _ = writeln!(out, "method = {}", self.method);
        let _ = writeln!(out, "auc = {:.16e}", self.auc);
        let _ = writeln!(out, "sensitivity = {}", opt(self.sensitivity()));
        let _ = writeln!(out, "specificity = {}", opt(self.specificity()));
        let _ = writeln!(out, "threshold_rule = {}", self.threshold_rule.describe());
        let _ = writeln!(out, "threshold = {}", opt(self.threshold));
        let _ = writeln!(out, "tp = {}", self.counts.tp);
        let _ = writeln!(out, "fn = {}", self.counts.fn_);
        let _ = writeln!(out, "tn = {}", self.counts.tn);
        let _ = writeln!(out, "fp = {}", self.counts.fp);
        for (k, v) in &self.config {
            let _ = writeln!(out, "config.{k} = {v}");
        }
        out
    }
}

pub const SVG_SIZE: f64 = 512.0;
pub const SVG_MARGIN: f64 = 48.0;

/// ROC curve as a standalone SVG polyline with labeled axes.
pub fn render_roc_svg(curve: &RocCurve, title: &str) -> String {
    let span = SVG_SIZE - 2.0 * SVG_MARGIN;
    let px = |fpr: f64| SVG_MARGIN + fpr * span;
    let py = |tpr: f64| SVG_SIZE - SVG_MARGIN - tpr * span;
    let points: Vec<String> = curve
        .points
        .iter()
        .map(|&(f, t)| format!("{:.3},{:.3}", px(f), py(t)))
        .collect();
    let (lo, hi) = (SVG_MARGIN, SVG_SIZE - SVG_MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="512" height="512" viewBox="0 0 512 512">"#
    );
    let _ = writeln!(s, r#"<rect width="512" height="512" fill="white"/>"#);
    let _ = writeln!(s, r#"<line x1="{lo}" y1="{hi}" x2="{hi}" y2="{hi}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{lo}" y1="{hi}" x2="{lo}" y2="{lo}" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r##"<line x1="{lo}" y1="{hi}" x2="{hi}" y2="{lo}" stroke="#999" stroke-dasharray="4 4"/>"##
    );
    for tick in [0.0, 0.5, 1.0] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{tick}</text>"#, px(tick), hi + 14.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{tick}</text>"#, lo - 6.0, py(tick) + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="256" y="{:.1}" font-size="13" text-anchor="middle">False positive rate</text>"#,
        SVG_SIZE - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="256" font-size="13" text-anchor="middle" transform="rotate(-90 16 256)">True positive rate</text>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="256" y="28" font-size="14" text-anchor="middle">{} (AUC {:.4})</text>"#,
        escape_xml(title),
        curve.auc
    );
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#c0392b" stroke-width="2" points="{}"/>"##,
        points.join(" ")
    );
    s.push_str("</svg>\n");
    s
}

fn escape_xml(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRun {
    pub run_seed: u64,
    pub auc: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub flagged_references: usize,
    pub reference_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilitySummary {
    pub runs: Vec<StabilityRun>,
    pub min_auc: f64,
    pub max_auc: f64,
}

impl StabilitySummary {
    pub fn spread(&self) -> f64 {
        self.max_auc - self.min_auc
    }

    pub fn render(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("absent".to_string(), |x| format!("{x:.16e}"));
        let mut out = String::new();
        let _ = writeln!(out, "runs = {}", self.runs.len());
        for (i, r) in self.runs.iter().enumerate() {
            let _ = writeln!(
                out,
                "run.{i} = seed {} auc {:.16e} sensitivity {} specificity {} flagged_references {}",
                r.run_seed,
                r.auc,
                opt(r.sensitivity),
                opt(r.specificity),
                r.flagged_references
            );
        }
        let _ = writeln!(out, "min_auc = {:.16e}", self.min_auc);
        let _ = writeln!(out, "max_auc = {:.16e}", self.max_auc);
        let _ = writeln!(out, "spread = {:.16e}", self.spread());
        out
    }
}

/// One stability run: fresh reference sample, fresh init, train, score the rest.
pub fn stability_run(dataset: &Dataset, cfg: &ScreeningConfig, run_seed: u64) -> Result<StabilityRun> {
    let run = pipeline::screen_with_seed(dataset, cfg, run_seed)?;
    Ok(StabilityRun {
        run_seed,
        auc: run.auc()?,
        sensitivity: run.counts.sensitivity(),
        specificity: run.counts.specificity(),
        flagged_references: run.flagged_references(),
        reference_ids: run.reference_ids.clone(),
    })
}

/// Repeats screening with independently sampled reference sets.
///
/// Run `r` uses seed `hash64(base_seed, r)`; runs execute in parallel and the
/// summary is independent of completion order.
pub fn ref_sensitivity_experiment(
    dataset: &Dataset,
    cfg: &ScreeningConfig,
    n_runs: usize,
    base_seed: u64,
) -> Result<StabilitySummary> {
    if n_runs < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 runs, got {n_runs}")));
    }
    let good = dataset.manifest().good_indices().len();
    if good < cfg.reference_size {
        return Err(Error::InsufficientData(format!(
            "{good} good entries cannot supply a reference set of {}",
            cfg.reference_size
        )));
    }
    let runs = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| stability_run(dataset, cfg, hash64(base_seed, r)))
        .collect::<Result<Vec<_>>>()?;
    let min_auc = runs.iter().map(|r| r.auc).fold(f64::INFINITY, f64::min);
    let max_auc = runs.iter().map(|r| r.auc).fold(f64::NEG_INFINITY, f64::max);
    Ok(StabilitySummary { runs, min_auc, max_auc })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(good: &[f64], bad: &[f64]) -> LabeledScores {
        let pairs: Vec<(f64, bool)> = good
            .iter()
            .map(|&g| (g, false))
            .chain(bad.iter().map(|&b| (b, true)))
            .collect();
        LabeledScores::from_pairs(&pairs)
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&scores(&[0.1, 0.2], &[0.8, 0.9])).unwrap(), 1.0);
        assert_eq!(auc(&scores(&[0.3, 0.3], &[0.3])).unwrap(), 0.5);
        assert_eq!(auc(&scores(&[0.1, 0.6], &[0.5])).unwrap(), 0.5);
        assert!(auc(&scores(&[0.1], &[])).is_err());
    }

    #[test]
    fn roc_examples() {
        let s = scores(&[0.1, 0.2], &[0.8, 0.9]);
        let c = roc_points(&s).unwrap();
        assert!(c.points.contains(&(0.0, 1.0)));
        assert_eq!(c.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(c.points.last(), Some(&(1.0, 1.0)));
        assert_eq!(c.auc, 1.0);

        let s = scores(&[0.1, 0.6, 0.4], &[0.5, 0.7]);
        let flipped = roc_points(&s.with_labels_flipped()).unwrap();
        assert!((flipped.auc - (1.0 - roc_points(&s).unwrap().auc)).abs() < 1e-12);
    }

    #[test]
    fn confusion_examples() {
        let s = scores(&[1.0, 2.0, 3.0], &[4.0]);
        let below = confusion_at(&s, 0.0).unwrap();
        assert_eq!((below.sensitivity(), below.specificity()), (Some(1.0), Some(0.0)));
        let above = confusion_at(&s, 10.0).unwrap();
        assert_eq!((above.sensitivity(), above.specificity()), (Some(0.0), Some(1.0)));
        let mid = confusion_at(&s, 2.5).unwrap();
        assert_eq!(mid, ConfusionCounts { tp: 1, fn_: 0, tn: 2, fp: 1 });
        assert_eq!(mid.specificity(), Some(2.0 / 3.0));

        let only_good = scores(&[1.0], &[]);
        assert_eq!(confusion_at(&only_good, 0.0).unwrap().sensitivity(), None);
        assert!(confusion_at(&scores(&[], &[]), 0.0).is_err());
    }

    #[test]
    fn youden_picks_the_separating_cut() {
        let s = scores(&[0.1, 0.2, 0.3], &[0.25, 0.9]);
        let (t, c) = youden_threshold(&s).unwrap();
        // Cuts: >0.25 gives J=1/2; >0.2 gives 1+2/3-1=2/3 (best).
        assert_eq!(t, 0.2);
        assert_eq!(c, ConfusionCounts { tp: 2, fn_: 0, tn: 2, fp: 1 });
    }

    #[test]
    fn report_and_svg_render() {
        let s = scores(&[0.1, 0.2], &[0.8]);
        let r = EvalReport::evaluate("m", &s, ThresholdRule::Fixed(0.5), None).unwrap();
        let text = r.render();
        assert!(text.contains("auc = 1.0000000000000000e0"));
        assert!(text.contains("sensitivity = 1.0000000000000000e0"));
        assert!(EvalReport::evaluate("m", &s, ThresholdRule::Flagged, None).is_err());
        let flags = [false, true, true];
        let r = EvalReport::evaluate("m", &s, ThresholdRule::Flagged, Some(&flags)).unwrap();
        assert_eq!(r.counts, ConfusionCounts { tp: 1, fn_: 0, tn: 1, fp: 1 });

        let svg = render_roc_svg(&roc_points(&s).unwrap(), "a<b");
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("False positive rate"));
        assert!(svg.contains("a&lt;b"));
    }
}
