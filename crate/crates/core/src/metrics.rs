//! Estimation, prediction and classification metrics, plus aggregation of
//! trial ensembles.

use crate::error::{Error, Result};
use crate::glm::GlmFamily;
use crate::lsr::LsrParams;
use crate::optim::{Algorithm, IterateLog};
use crate::tensor::DenseTensor;

/// `‖B − B̂‖_F² / ‖B‖_F²` on the reconstructed tensors.
pub fn estimation_error(truth: &LsrParams, estimate: &LsrParams) -> Result<f64> {
    estimation_error_dense(&truth.reconstruct(), &estimate.reconstruct())
}

pub fn estimation_error_dense(truth: &DenseTensor, estimate: &DenseTensor) -> Result<f64> {
    let denom = truth.frobenius_norm_sq();
    if denom == 0.0 {
        return Err(Error::Metric("ground truth has zero norm".into()));
    }
    Ok(truth.sub(estimate)?.frobenius_norm_sq() / denom)
}

/// Family-specific test error:
/// linear `‖ŷ − y‖²/‖y‖²`, logistic `‖ŷ − y‖₁/n`, Poisson
/// `‖log(ŷ+1) − log(y+1)‖²/‖log(y+1)‖²`.
pub fn prediction_error(family: GlmFamily, y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::Metric(format!(
            "length mismatch: {} responses, {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Metric("empty response vector".into()));
    }
    let normalized = |num: f64, den: f64| {
        if den == 0.0 {
            Err(Error::Metric("zero denominator in prediction error".into()))
        } else {
            Ok(num / den)
        }
    };
    match family {
        GlmFamily::Linear => {
            let num: f64 = y.iter().zip(yhat).map(|(a, b)| (b - a).powi(2)).sum();
            normalized(num, y.iter().map(|a| a * a).sum())
        }
        GlmFamily::Logistic => {
            let num: f64 = y.iter().zip(yhat).map(|(a, b)| (b - a).abs()).sum();
            Ok(num / y.len() as f64)
        }
        GlmFamily::Poisson => {
            if y.iter().chain(yhat).any(|&v| v < 0.0) {
                return Err(Error::Metric("Poisson error needs nonnegative values".into()));
            }
            let num: f64 = y
                .iter()
                .zip(yhat)
                .map(|(a, b)| (b.ln_1p() - a.ln_1p()).powi(2))
                .sum();
            normalized(num, y.iter().map(|a| a.ln_1p().powi(2)).sum())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn at_threshold(scores: &[f64], labels: &[u8], threshold: f64) -> Self {
        let mut c = Self::default();
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= threshold, l == 1) {
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
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub auc: f64,
    pub accuracy: f64,
    pub runtime_seconds: f64,
    pub chosen_iteration: usize,
    pub confusion: Confusion,
    /// Set when `2TP + FP + FN = 0` and F1 was reported as 0.
    pub f1_undefined: bool,
}

fn check_labels(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Metric("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Confusion-matrix rates at `threshold` (a score ≥ threshold predicts the
/// positive class) and the rank-based AUC. Runtime and chosen iteration are
/// left at zero for the caller to fill.
pub fn classification_report(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> Result<ClassificationReport> {
    check_labels(scores, labels)?;
    let auc = auc(scores, labels)?;
    let c = Confusion::at_threshold(scores, labels, threshold);
    let f1_den = 2 * c.tp + c.fp + c.fn_;
    Ok(ClassificationReport {
        sensitivity: c.tp as f64 / (c.tp + c.fn_) as f64,
        specificity: c.tn as f64 / (c.tn + c.fp) as f64,
        f1: if f1_den == 0 {
            0.0
        } else {
            2.0 * c.tp as f64 / f1_den as f64
        },
        auc,
        accuracy: c.accuracy(),
        runtime_seconds: 0.0,
        chosen_iteration: 0,
        confusion: c,
        f1_undefined: f1_den == 0,
    })
}

/// Mann–Whitney AUC with midranks for tied scores.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_labels(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("AUC undefined for single-class labels".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps midranks integral.
    let mut rank_sum_x2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1, midrank (i + j + 2) / 2.
        let mid_x2 = (i + j + 2) as u64;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_x2 += mid_x2;
            }
        }
        i = j + 1;
    }
    let u_x2 = rank_sum_x2 as f64 - (pos * (pos + 1)) as f64;
    Ok(u_x2 / (2.0 * pos as f64 * neg as f64))
}

pub fn misclassification_rate(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check_labels(scores, labels)?;
    Ok(1.0 - Confusion::at_threshold(scores, labels, threshold).accuracy())
}

/// One solver trajectory plus its held-out prediction errors.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub log: IterateLog,
    /// Aligned with `log.records`.
    pub pred_errors: Vec<f64>,
}

impl TrialRecord {
    pub fn algorithm(&self) -> Algorithm {
        self.log.algorithm
    }

    pub fn diverged(&self) -> bool {
        self.log.diverged
    }

    pub fn series(&self, series: Series) -> Vec<f64> {
        match series {
            Series::Loss => self.log.records.iter().map(|r| r.loss).collect(),
            Series::EstimationError => self
                .log
                .records
                .iter()
                .map(|r| r.estimation_error.unwrap_or(f64::NAN))
                .collect(),
            Series::PredictionError => self.pred_errors.clone(),
            Series::Elapsed => self.log.records.iter().map(|r| r.elapsed_s).collect(),
            Series::OrthoResidual => self.log.records.iter().map(|r| r.ortho_residual).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Series {
    Loss,
    EstimationError,
    PredictionError,
    Elapsed,
    OrthoResidual,
}

impl Series {
    pub fn name(self) -> &'static str {
        match self {
            Series::Loss => "loss",
            Series::EstimationError => "est_error",
            Series::PredictionError => "pred_error",
            Series::Elapsed => "elapsed_s",
            Series::OrthoResidual => "ortho_residual",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveBand {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub included: usize,
    pub excluded: usize,
}

/// Pointwise mean and sample standard deviation over non-diverged trials,
/// truncated to the shortest included series.
pub fn mean_curve_and_band(records: &[TrialRecord], series: Series) -> Result<CurveBand> {
    if records.is_empty() {
        return Err(Error::Metric("no trial records".into()));
    }
    let curves: Vec<Vec<f64>> = records
        .iter()
        .filter(|r| !r.diverged())
        .map(|r| r.series(series))
        .collect();
    if curves.is_empty() {
        return Err(Error::Metric("all trials diverged".into()));
    }
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    let count = curves.len() as f64;
    let mut mean = vec![0.0; len];
    let mut std = vec![0.0; len];
    for t in 0..len {
        let m = curves.iter().map(|c| c[t]).sum::<f64>() / count;
        mean[t] = m;
        if curves.len() > 1 {
            let ss: f64 = curves.iter().map(|c| (c[t] - m).powi(2)).sum();
            std[t] = (ss / (count - 1.0)).sqrt();
        }
    }
    Ok(CurveBand {
        mean,
        std,
        included: curves.len(),
        excluded: records.len() - curves.len(),
    })
}

/// Fraction of trials that finished without non-finite values.
pub fn convergence_success_rate(records: &[TrialRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| !r.diverged()).count() as f64 / records.len() as f64
}

/// Index of the global minimum of a mean test-error curve, earliest on ties.
/// NaN entries are never selected.
pub fn early_stop_select(curve: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in curve.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.map_or(true, |(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::Metric("empty or all-NaN curve".into()))
}
