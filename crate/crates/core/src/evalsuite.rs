//! Metrics (AUC, accuracy), pooled and sliced evaluation, rank correlation,
//! and knowledge-state export.
//!
//! AUC uses the rank-sum (Mann-Whitney) formulation with tied predictions
//! counted as half wins; all counts stay exactly representable in f64, so
//! the result equals the quadratic pairwise statistic exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::{QuestionBank, Window};
use crate::error::{Error, Result};
use crate::graph::stable_sigmoid;
use crate::model::{BatchData, Model};
use crate::tensor::Real;

/// Pooled metrics over a set of scored steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    pub accuracy: f64,
    pub count: usize,
    pub slice: String,
}

/// Rank-based AUC; ties count one half. Errors unless both classes occur.
pub fn compute_auc(predictions: &[f64], labels: &[u8]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::data("predictions and labels differ in length"));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::data(
            "AUC needs at least one positive and one negative label",
        ));
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| {
        predictions[a]
            .partial_cmp(&predictions[b])
            .expect("finite predictions")
    });

    // average ranks over tie groups; ranks are 1-based
    let mut rank_sum_positive = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && predictions[order[j + 1]] == predictions[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_positive += avg_rank;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Ok((rank_sum_positive - p * (p + 1.0) / 2.0) / (p * n))
}

/// Fraction of steps where `(prediction >= threshold)` matches the label.
pub fn compute_accuracy(predictions: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::data("predictions and labels differ in length"));
    }
    if predictions.is_empty() {
        return Err(Error::data("accuracy over zero steps"));
    }
    let correct = predictions
        .iter()
        .zip(labels.iter())
        .filter(|(p, l)| (**p >= threshold) == (**l == 1))
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Spearman rank correlation with tie-averaged ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::data("spearman needs two equally sized samples"));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for i in 0..x.len() {
        let dx = rx[i] - mean;
        let dy = ry[i] - mean;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(Error::data("spearman undefined for constant input"));
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// One scored target step from an evaluation pass.
#[derive(Debug, Clone)]
pub struct EvalTarget {
    pub student_idx: u32,
    pub step: usize,
    pub question: u32,
    pub response: u8,
    pub prediction: f64,
    pub question_score: Option<f64>,
    pub concept_score: Option<f64>,
}

/// Pooled inference over windows (no parameter updates). Windows are
/// processed in order in fixed-size batches, so output order is
/// deterministic.
pub fn evaluate_model<T: Real>(
    model: &Model<T>,
    windows: &[&Window],
    bank: &QuestionBank,
    batch_size: usize,
) -> Result<Vec<EvalTarget>> {
    if windows.is_empty() {
        return Err(Error::data("no windows to evaluate"));
    }
    let mut targets = Vec::new();
    for chunk in windows.chunks(batch_size.max(1)) {
        let batch = BatchData::build(chunk, bank)?;
        let mut graph = crate::graph::Graph::new();
        let fwd = model.forward_targets(&mut graph, &batch)?;
        let preds = graph.value(fwd.predictions).to_vec();
        let alpha = fwd
            .question_scores
            .map(|v| graph.value(v).to_vec());
        let beta = fwd.concept_scores.map(|v| graph.value(v).to_vec());
        for i in 0..batch.targets.count {
            let window = chunk[batch.targets.window_of[i]];
            let step = batch.targets.step_of[i];
            targets.push(EvalTarget {
                student_idx: window.student_idx,
                step: window.offset as usize + step,
                question: batch.targets.question[i] as u32,
                response: batch.targets.responses[i] as u8,
                prediction: preds[i].to_f64(),
                question_score: alpha.as_ref().map(|a| a[i].to_f64()),
                concept_score: beta.as_ref().map(|b| b[i].to_f64()),
            });
        }
    }
    Ok(targets)
}

pub fn metric_report(targets: &[EvalTarget], slice: &str) -> Result<MetricReport> {
    if targets.is_empty() {
        return Err(Error::data(format!("slice `{slice}` contains no steps")));
    }
    let preds: Vec<f64> = targets.iter().map(|t| t.prediction).collect();
    let labels: Vec<u8> = targets.iter().map(|t| t.response).collect();
    Ok(MetricReport {
        auc: compute_auc(&preds, &labels)?,
        accuracy: compute_accuracy(&preds, &labels, 0.5)?,
        count: targets.len(),
        slice: slice.to_string(),
    })
}

/// Metrics restricted to targets whose question satisfies the predicate.
pub fn sliced_eval(
    targets: &[EvalTarget],
    slice: &str,
    predicate: impl Fn(u32) -> bool,
) -> Result<MetricReport> {
    let filtered: Vec<EvalTarget> = targets
        .iter()
        .filter(|t| predicate(t.question))
        .cloned()
        .collect();
    metric_report(&filtered, slice)
}

/// Per-step knowledge-state table for one window: `sigmoid` of the concept
/// acquisition state for the selected concepts, plus the prediction
/// decomposition of every target step. The first step has no prediction and
/// leaves those fields empty.
pub fn export_states<T: Real>(
    model: &Model<T>,
    window: &Window,
    bank: &QuestionBank,
    kcs: &[u32],
) -> Result<String> {
    for &kc in kcs {
        if kc as usize >= bank.concept_count {
            return Err(Error::data(format!("unknown kc id {kc}")));
        }
    }
    let full = model.forward_full(window, bank)?;
    let mut out = String::from("step,question_id,response,sigma_alpha,sigma_beta_bar,r_hat");
    for &kc in kcs {
        let _ = write!(out, ",kc_{kc}");
    }
    out.push('\n');
    for (t, step) in window.steps.iter().enumerate() {
        let question_id = bank.questions[step.question as usize];
        let _ = write!(out, "{t},{question_id},{}", step.response);
        if t == 0 {
            out.push_str(",,,");
        } else {
            let target = &full.targets[t - 1];
            let sa = target
                .question_score
                .map(|a| stable_sigmoid(a).to_string())
                .unwrap_or_default();
            let sb = target
                .concept_score
                .map(|b| stable_sigmoid(b).to_string())
                .unwrap_or_default();
            let _ = write!(out, ",{sa},{sb},{}", target.prediction);
        }
        for &kc in kcs {
            if full.concept_states.is_empty() {
                out.push(',');
            } else {
                let gamma = full.concept_states[t].get(kc as usize, 0).to_f64();
                let _ = write!(out, ",{}", stable_sigmoid(gamma));
            }
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_metrics(path: &Path, reports: &[MetricReport]) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(reports)?)?;
    Ok(())
}

/// The minimal comparator: interaction encoder, one ungated LSTM, a linear
/// per-question readout and a sigmoid — i.e. the full model with the
/// concept module, mixture, contrastive term, and IRT combination all
/// switched off. Same code path, ablation flags only.
pub fn baseline_config(base: &crate::trainer::TrainConfig) -> crate::trainer::TrainConfig {
    let mut cfg = base.clone();
    cfg.no_mcka = true;
    cfg.no_moe = true;
    cfg.no_irt = true;
    cfg.no_cl = true;
    cfg.lambda1 = 0.0;
    cfg.lambda2 = 0.0;
    cfg
}

/// Train the baseline on the same folds and report test metrics.
pub fn baseline_train_eval(
    prepared: &crate::dataio::PreparedDataset,
    base: &crate::trainer::TrainConfig,
) -> Result<(MetricReport, crate::trainer::TrainOutcome)> {
    let cfg = baseline_config(base);
    let outcome = crate::trainer::train(prepared, &cfg, None)?;
    let targets = crate::trainer::evaluate_test(prepared, &outcome.model, cfg.batch_size)?;
    let report = metric_report(&targets, "baseline-test")?;
    Ok((report, outcome))
}
