//! Classification metrics: accuracy, per-class and macro F1, ROC AUC and
//! standardized partial AUC over a low false-positive range.
//!
//! ROC curves are built from tied score groups, so a group containing both
//! classes contributes a diagonal segment. Under trapezoidal integration
//! this gives ties half credit, matching the Mann-Whitney statistic.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::Label;
use crate::error::{Error, Result};

pub const DEFAULT_MAXFPR: f64 = 0.1;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    scores: Vec<f64>,
    labels: Vec<Label>,
    pub threshold: f64,
}

impl PredictionSet {
    pub fn new(scores: Vec<f64>, labels: Vec<Label>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: labels.len(),
                actual: scores.len(),
            });
        }
        if scores.is_empty() {
            return Err(Error::InvalidArgument("empty prediction set".into()));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite score at {i}")));
        }
        Ok(PredictionSet {
            scores,
            labels,
            threshold: DEFAULT_THRESHOLD,
        })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `(positives, negatives)`; fake is the positive class.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|l| l.is_fake()).count();
        (pos, self.labels.len() - pos)
    }

    /// Copy with every label flipped.
    pub fn inverted_labels(&self) -> Self {
        PredictionSet {
            labels: self
                .labels
                .iter()
                .map(|l| Label::from(!l.is_fake()))
                .collect(),
            ..self.clone()
        }
    }
}

/// `(false positives, true positives)` pairs.
type RocPoints = Vec<(usize, usize)>;

/// Cumulative `(false positives, true positives)` after each distinct score,
/// from the highest score down, starting at `(0, 0)`.
fn roc_counts(p: &PredictionSet) -> Result<(RocPoints, usize, usize)> {
    let (pos, neg) = p.class_counts();
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass {
            positives: pos,
            negatives: neg,
        });
    }
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p.scores[b].total_cmp(&p.scores[a]));
    let mut points = Vec::with_capacity(p.len() + 1);
    points.push((0, 0));
    let (mut fp, mut tp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let s = p.scores[order[i]];
        while i < order.len() && p.scores[order[i]] == s {
            if p.labels[order[i]].is_fake() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp, tp));
    }
    Ok((points, pos, neg))
}

/// ROC curve as `(fpr, tpr)` points.
pub fn roc_curve(p: &PredictionSet) -> Result<Vec<(f64, f64)>> {
    let (points, pos, neg) = roc_counts(p)?;
    Ok(points
        .into_iter()
        .map(|(fp, tp)| (fp as f64 / neg as f64, tp as f64 / pos as f64))
        .collect())
}

pub fn roc_auc(p: &PredictionSet) -> Result<f64> {
    let (points, pos, neg) = roc_counts(p)?;
    // Twice the area in count units keeps the sum integral.
    let twice: u128 = points
        .windows(2)
        .map(|w| ((w[1].0 - w[0].0) * (w[0].1 + w[1].1)) as u128)
        .sum();
    Ok(twice as f64 / (2.0 * pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RocIntegration {
    /// Linear interpolation between ROC points.
    #[default]
    Trapezoidal,
    /// Left step: each segment takes the TPR at its lower FPR end.
    Step,
}

/// Raw area under the ROC curve for FPR in `[0, maxfpr]`.
pub fn partial_auc(p: &PredictionSet, maxfpr: f64, mode: RocIntegration) -> Result<f64> {
    if !(maxfpr > 0.0 && maxfpr <= 1.0) {
        return Err(Error::InvalidArgument(format!("maxfpr {maxfpr} outside (0, 1]")));
    }
    let curve = roc_curve(p)?;
    let mut area = 0.0;
    for w in curve.windows(2) {
        let ((f0, t0), (f1, t1)) = (w[0], w[1]);
        if f0 >= maxfpr {
            break;
        }
        if f1 <= maxfpr {
            area += match mode {
                RocIntegration::Trapezoidal => (f1 - f0) * (t0 + t1) / 2.0,
                RocIntegration::Step => (f1 - f0) * t0,
            };
        } else {
            let t_cut = t0 + (t1 - t0) * (maxfpr - f0) / (f1 - f0);
            area += match mode {
                RocIntegration::Trapezoidal => (maxfpr - f0) * (t0 + t_cut) / 2.0,
                RocIntegration::Step => (maxfpr - f0) * t0,
            };
            break;
        }
    }
    Ok(area)
}

/// McClish standardization: maps the partial area onto `[0.5, 1]` for
/// curves between the chance diagonal and a perfect classifier.
pub fn standardize_partial_auc(pauc: f64, maxfpr: f64) -> f64 {
    let min_area = 0.5 * maxfpr * maxfpr;
    let max_area = maxfpr;
    0.5 * (1.0 + (pauc - min_area) / (max_area - min_area))
}

pub fn sp_auc(p: &PredictionSet, maxfpr: f64) -> Result<f64> {
    sp_auc_with(p, maxfpr, RocIntegration::Trapezoidal)
}

pub fn sp_auc_with(p: &PredictionSet, maxfpr: f64, mode: RocIntegration) -> Result<f64> {
    let pauc = partial_auc(p, maxfpr, mode)?;
    Ok(standardize_partial_auc(pauc, maxfpr))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(p: &PredictionSet) -> Self {
        let mut c = Confusion::default();
        for (&s, &l) in p.scores.iter().zip(&p.labels) {
            match (s >= p.threshold, l.is_fake()) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    pub fn f1_fake(&self) -> f64 {
        f1(self.tp, self.fp, self.fn_)
    }

    pub fn f1_real(&self) -> f64 {
        f1(self.tn, self.fn_, self.fp)
    }
}

/// `2tp / (2tp + fp + fn)`, zero when nothing was predicted or present.
fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub f1_fake: f64,
    pub f1_real: f64,
    pub macf1: f64,
    pub acc: f64,
}

pub fn f1_scores(p: &PredictionSet) -> F1Scores {
    let c = Confusion::from_predictions(p);
    let (f1_fake, f1_real) = (c.f1_fake(), c.f1_real());
    F1Scores {
        f1_fake,
        f1_real,
        macf1: (f1_fake + f1_real) / 2.0,
        acc: c.accuracy(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Macf1,
    Acc,
    Auc,
    Spauc,
    F1Real,
    F1Fake,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Macf1,
        Metric::Acc,
        Metric::Auc,
        Metric::Spauc,
        Metric::F1Real,
        Metric::F1Fake,
    ];

    pub fn header(self) -> &'static str {
        match self {
            Metric::Macf1 => "macF1",
            Metric::Acc => "Acc",
            Metric::Auc => "AUC",
            Metric::Spauc => "spAUC",
            Metric::F1Real => "F1_real",
            Metric::F1Fake => "F1_fake",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.header().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub macf1: f64,
    pub acc: f64,
    pub auc: f64,
    pub spauc: f64,
    pub f1_real: f64,
    pub f1_fake: f64,
    pub confusion: Confusion,
    pub maxfpr: f64,
    pub threshold: f64,
}

impl EvalReport {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Macf1 => self.macf1,
            Metric::Acc => self.acc,
            Metric::Auc => self.auc,
            Metric::Spauc => self.spauc,
            Metric::F1Real => self.f1_real,
            Metric::F1Fake => self.f1_fake,
        }
    }

    pub fn values(&self) -> [f64; 6] {
        Metric::ALL.map(|m| self.get(m))
    }
}

pub fn evaluate(p: &PredictionSet) -> Result<EvalReport> {
    evaluate_with(p, DEFAULT_MAXFPR)
}

pub fn evaluate_with(p: &PredictionSet, maxfpr: f64) -> Result<EvalReport> {
    let auc = roc_auc(p)?;
    let spauc = sp_auc(p, maxfpr)?;
    let f = f1_scores(p);
    Ok(EvalReport {
        macf1: f.macf1,
        acc: f.acc,
        auc,
        spauc,
        f1_real: f.f1_real,
        f1_fake: f.f1_fake,
        confusion: Confusion::from_predictions(p),
        maxfpr,
        threshold: p.threshold,
    })
}

/// Aligned text table, one row per labelled report.
pub struct ReportTable<'a> {
    pub rows: Vec<(String, &'a EvalReport)>,
}

impl fmt::Display for ReportTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
        write!(f, "{:<width$}", "model")?;
        for m in Metric::ALL {
            write!(f, "  {:>8}", m.header())?;
        }
        writeln!(f)?;
        for (name, r) in &self.rows {
            write!(f, "{name:<width$}")?;
            for v in r.values() {
                write!(f, "  {v:>8.4}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub metric: Metric,
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub metrics: Vec<MetricStat>,
}

impl AggregateReport {
    pub fn mean(&self, metric: Metric) -> f64 {
        self.metrics
            .iter()
            .find(|s| s.metric == metric)
            .map_or(f64::NAN, |s| s.mean)
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate(reports: &[EvalReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no reports to aggregate".into()));
    }
    let metrics = Metric::ALL
        .into_iter()
        .map(|metric| {
            let vals: Vec<f64> = reports.iter().map(|r| r.get(metric)).collect();
            let (mean, std) = mean_std(&vals);
            MetricStat { metric, mean, std }
        })
        .collect();
    Ok(AggregateReport {
        runs: reports.len(),
        metrics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p_value: f64,
    pub mean_diff: f64,
}

/// Paired t-test on `a - b` over matched runs.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("paired t-test needs two or more pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean_diff, sd) = mean_std(&diffs);
    let n = diffs.len() as f64;
    let df = n - 1.0;
    if sd == 0.0 {
        let p_value = if mean_diff == 0.0 { 1.0 } else { 0.0 };
        let t = if mean_diff == 0.0 { 0.0 } else { mean_diff.signum() * f64::INFINITY };
        return Ok(TTest { t, df, p_value, mean_diff });
    }
    let t = mean_diff / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let p_value = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TTest { t, df, p_value, mean_diff })
}
