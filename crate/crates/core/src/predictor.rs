//! Score extraction and the parameter-free IRT prediction layer.
//!
//! The question score for a target is the target question's entry of the
//! question acquisition state (a dot product with a one-hot vector); the
//! concept score is the mean of the concept acquisition state over the
//! target's concepts. The prediction is `sigmoid(question_score +
//! concept_score)` — the layer owns no trainable parameters. Probabilities
//! are clamped away from 0/1 before logs; the epsilon widens at f32 where
//! `1 - 1e-7` is not representable.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{stable_sigmoid, Graph, Var};
use crate::tensor::{Real, Tensor};

/// Parameter names owned by the prediction layer. Empty by construction;
/// the checkpoint name scan asserts no parameter ever carries this prefix.
pub const PREDICTOR_PREFIX: &str = "predictor.";

/// Loss reduction over the valid steps of one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Sum over steps (the printed form of the objective).
    Sum,
    Mean,
}

impl Default for Reduction {
    fn default() -> Self {
        Reduction::Sum
    }
}

/// Clamp bound keeping `1 - eps` representable at the working precision.
pub fn prob_epsilon<T: Real>() -> T {
    let spec = T::from_f64(1e-7);
    let width = T::from_f64(10.0) * T::epsilon();
    spec.max(width)
}

/// Question score: the target question's entry of the acquisition state.
pub fn extract_question_score<T: Real>(
    graph: &mut Graph<T>,
    question_state: Var,
    next_question: u32,
) -> Result<Var> {
    let (n, cols) = graph.shape(question_state);
    if cols != 1 {
        return Err(Error::Shape {
            op: "extract_question_score",
            detail: format!("expected a column vector, got {:?}", (n, cols)),
        });
    }
    graph.gather_rows(question_state, &[next_question as usize])
}

/// Concept score: mean of the acquisition state over the target's concepts.
pub fn extract_concept_score<T: Real>(
    graph: &mut Graph<T>,
    concept_state: Var,
    next_kcs: &[u32],
) -> Result<Var> {
    if next_kcs.is_empty() {
        return Err(Error::data("extract_concept_score: empty kc set"));
    }
    let ids: Vec<usize> = next_kcs.iter().map(|&k| k as usize).collect();
    let rows = graph.gather_rows(concept_state, &ids)?;
    graph.segment_mean_rows(rows, &vec![0; ids.len()], 1)
}

/// `sigmoid(question_score + concept_score)`; no trainable parameters.
pub fn irt_predict<T: Real>(graph: &mut Graph<T>, question: Var, concept: Var) -> Result<Var> {
    let sum = graph.add(question, concept)?;
    graph.sigmoid(sum)
}

/// Scalar version for reports and tests.
pub fn irt_value(question_score: f64, concept_score: f64) -> f64 {
    stable_sigmoid(question_score + concept_score)
}

/// Binary cross entropy of probabilities against 0/1 labels, summed (or
/// averaged) over entries. Probabilities are clamped to `[eps, 1-eps]`.
pub fn binary_cross_entropy<T: Real>(
    graph: &mut Graph<T>,
    probs: Var,
    labels: &Tensor<T>,
    reduction: Reduction,
) -> Result<Var> {
    if graph.shape(probs) != labels.shape() {
        return Err(Error::Shape {
            op: "binary_cross_entropy",
            detail: format!(
                "probs {:?} vs labels {:?}",
                graph.shape(probs),
                labels.shape()
            ),
        });
    }
    let eps = prob_epsilon::<T>();
    let clamped = graph.clamp(probs, eps, T::one() - eps)?;
    let log_p = graph.log(clamped)?;
    let one_minus = graph.affine(clamped, -T::one(), T::one())?;
    let log_q = graph.log(one_minus)?;
    let r = graph.constant(labels.clone());
    let one_minus_r = graph.constant(labels.map(|v| T::one() - v));
    let pos = graph.mul(r, log_p)?;
    let neg = graph.mul(one_minus_r, log_q)?;
    let sum_terms = graph.add(pos, neg)?;
    let total = graph.sum_all(sum_terms)?;
    let scale = match reduction {
        Reduction::Sum => -T::one(),
        Reduction::Mean => -T::one() / T::from_f64(labels.len() as f64),
    };
    graph.affine(total, scale, T::zero())
}

/// BCE of already-formed predictions `r_hat` against responses.
pub fn kt_loss<T: Real>(
    graph: &mut Graph<T>,
    predictions: Var,
    labels: &Tensor<T>,
    reduction: Reduction,
) -> Result<Var> {
    binary_cross_entropy(graph, predictions, labels, reduction)
}

/// BCE of `sigmoid(scores)` against responses — the auxiliary objective on
/// raw question/concept scores.
pub fn aux_loss<T: Real>(
    graph: &mut Graph<T>,
    scores: Var,
    labels: &Tensor<T>,
    reduction: Reduction,
) -> Result<Var> {
    let probs = graph.sigmoid(scores)?;
    binary_cross_entropy(graph, probs, labels, reduction)
}

/// `kt + lambda1 * (aux_question + aux_concept) + lambda2 * contrastive`.
/// Absent terms are simply skipped.
pub fn total_loss<T: Real>(
    graph: &mut Graph<T>,
    kt: Var,
    aux_question: Option<Var>,
    aux_concept: Option<Var>,
    contrastive: Option<Var>,
    lambda1: f64,
    lambda2: f64,
) -> Result<Var> {
    if lambda1 < 0.0 || lambda2 < 0.0 {
        return Err(Error::numeric(format!(
            "loss weights must be non-negative, got lambda1={lambda1} lambda2={lambda2}"
        )));
    }
    let mut total = kt;
    if lambda1 > 0.0 {
        for aux in [aux_question, aux_concept].into_iter().flatten() {
            let scaled = graph.affine(aux, T::from_f64(lambda1), T::zero())?;
            total = graph.add(total, scaled)?;
        }
    }
    if lambda2 > 0.0 {
        if let Some(cl) = contrastive {
            let scaled = graph.affine(cl, T::from_f64(lambda2), T::zero())?;
            total = graph.add(total, scaled)?;
        }
    }
    Ok(total)
}

/// One scored target step: the interpretable decomposition of a prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub student_id: String,
    pub step: usize,
    pub question_id: u64,
    pub alpha: f64,
    pub sigmoid_alpha: f64,
    pub beta_bar: f64,
    pub sigmoid_beta_bar: f64,
    pub r_hat: f64,
    pub r: u8,
}

/// Per-step prediction trace for export. The first step of each window is
/// never a target and does not appear.
#[derive(Debug, Clone, Default)]
pub struct PredictionTrace {
    pub rows: Vec<TraceRow>,
}

impl PredictionTrace {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        writeln!(
            file,
            "student_id,step,question_id,alpha,sigmoid_alpha,beta_bar,sigmoid_beta_bar,r_hat,r"
        )?;
        for row in &self.rows {
            writeln!(
                file,
                "{},{},{},{},{},{},{},{},{}",
                row.student_id,
                row.step,
                row.question_id,
                row.alpha,
                row.sigmoid_alpha,
                row.beta_bar,
                row.sigmoid_beta_bar,
                row.r_hat,
                row.r
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn question_score_indexes_the_state() {
        let mut g = Graph::<f64>::new();
        let state = g.constant(Tensor::col(&[0.1, 0.7, 0.2]));
        let score = extract_question_score(&mut g, state, 1).unwrap();
        assert_eq!(g.value(score).scalar_value(), 0.7);

        let zero = g.constant(Tensor::zeros(3, 1));
        let score = extract_question_score(&mut g, zero, 2).unwrap();
        assert_eq!(g.value(score).scalar_value(), 0.0);

        assert!(extract_question_score(&mut g, state, 3).is_err());
    }

    #[test]
    fn question_score_equals_one_hot_dot_product() {
        let mut g = Graph::<f64>::new();
        let values = vec![0.3, -1.2, 0.9, 2.5];
        let state = g.constant(Tensor::col(&values));
        for (q, expect) in values.iter().enumerate() {
            let score = extract_question_score(&mut g, state, q as u32).unwrap();
            // one-hot dot product computed directly
            let brute: f64 = values
                .iter()
                .enumerate()
                .map(|(i, v)| if i == q { *v } else { 0.0 })
                .sum();
            assert_eq!(g.value(score).scalar_value(), brute);
            assert_eq!(brute, *expect);
        }
    }

    #[test]
    fn concept_score_means_over_kcs() {
        let mut g = Graph::<f64>::new();
        let state = g.constant(Tensor::col(&[0.2, 0.4, 0.6]));
        let score = extract_concept_score(&mut g, state, &[0, 2]).unwrap();
        assert!((g.value(score).scalar_value() - 0.4).abs() < 1e-12);
        let single = extract_concept_score(&mut g, state, &[1]).unwrap();
        assert!((g.value(single).scalar_value() - 0.4).abs() < 1e-12);
        assert!(extract_concept_score(&mut g, state, &[]).is_err());
    }

    #[test]
    fn concept_score_matches_indicator_sum() {
        let mut g = Graph::<f64>::new();
        let values = vec![0.25, -0.5, 1.75, 0.125, -2.0];
        let state = g.constant(Tensor::col(&values));
        let kcs = [0u32, 3, 4];
        let score = extract_concept_score(&mut g, state, &kcs).unwrap();
        let brute: f64 =
            kcs.iter().map(|&k| values[k as usize]).sum::<f64>() / kcs.len() as f64;
        assert!((g.value(score).scalar_value() - brute).abs() < 1e-9);
    }

    #[test]
    fn irt_at_zero_is_exactly_half() {
        assert_eq!(irt_value(0.0, 0.0), 0.5);
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::scalar(0.0));
        let b = g.constant(Tensor::scalar(0.0));
        let p = irt_predict(&mut g, a, b).unwrap();
        assert_eq!(g.value(p).scalar_value(), 0.5);
    }

    #[test]
    fn irt_analytic_value() {
        let p = irt_value(2.0, -1.0);
        assert!((p - 0.7310585786300049).abs() < 1e-12);
    }

    #[test]
    fn irt_monotone_in_each_argument() {
        let grid: Vec<f64> = (-8..=8).map(|i| i as f64 * 0.5).collect();
        for &fixed in &grid {
            let mut prev = f64::NEG_INFINITY;
            for &x in &grid {
                let p = irt_value(x, fixed);
                assert!(p > prev, "not increasing in question score");
                prev = p;
            }
            let mut prev = f64::NEG_INFINITY;
            for &x in &grid {
                let p = irt_value(fixed, x);
                assert!(p > prev, "not increasing in concept score");
                prev = p;
            }
        }
    }

    #[test]
    fn kt_loss_single_step_ln2() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::scalar(0.5));
        let labels = Tensor::scalar(1.0);
        let loss = kt_loss(&mut g, p, &labels, Reduction::Sum).unwrap();
        assert!((g.value(loss).scalar_value() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn kt_loss_vanishes_at_perfect_confidence() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::col(&[1.0 - 1e-9, 1e-9]));
        let labels = Tensor::col(&[1.0, 0.0]);
        let loss = kt_loss(&mut g, p, &labels, Reduction::Sum).unwrap();
        assert!(g.value(loss).scalar_value() < 1e-6);
    }

    #[test]
    fn kt_loss_matches_scalar_recomputation() {
        let mut g = Graph::<f64>::new();
        let probs = [0.3, 0.8, 0.55, 0.11];
        let labels = [1.0, 0.0, 1.0, 0.0];
        let p = g.constant(Tensor::col(&probs));
        let loss = kt_loss(&mut g, p, &Tensor::col(&labels), Reduction::Sum).unwrap();
        let brute: f64 = probs
            .iter()
            .zip(labels.iter())
            .map(|(p, r)| -(r * p.ln() + (1.0 - r) * (1.0 - p).ln()))
            .sum();
        assert!((g.value(loss).scalar_value() - brute).abs() < 1e-7);
    }

    #[test]
    fn aux_loss_is_bce_of_sigmoid() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::scalar(0.0));
        let labels = Tensor::scalar(1.0);
        let loss = aux_loss(&mut g, z, &labels, Reduction::Sum).unwrap();
        assert!((g.value(loss).scalar_value() - std::f64::consts::LN_2).abs() < 1e-12);

        // large score with matching label drives the loss to zero
        let z = g.constant(Tensor::scalar(40.0));
        let loss = aux_loss(&mut g, z, &labels, Reduction::Sum).unwrap();
        assert!(g.value(loss).scalar_value() < 1e-6);

        // definitional identity: aux(z) == kt(sigmoid(z))
        let scores = [0.3, -1.1, 2.0];
        let labels = Tensor::col(&[1.0, 0.0, 1.0]);
        let zv = g.constant(Tensor::col(&scores));
        let a = aux_loss(&mut g, zv, &labels, Reduction::Sum).unwrap();
        let sig = g.sigmoid(zv).unwrap();
        let k = kt_loss(&mut g, sig, &labels, Reduction::Sum).unwrap();
        assert!((g.value(a).scalar_value() - g.value(k).scalar_value()).abs() < 1e-12);
    }

    #[test]
    fn total_loss_arithmetic() {
        let mut g = Graph::<f64>::new();
        let kt = g.constant(Tensor::scalar(1.0));
        let a = g.constant(Tensor::scalar(2.0));
        let b = g.constant(Tensor::scalar(3.0));
        let cl = g.constant(Tensor::scalar(4.0));
        let total = total_loss(&mut g, kt, Some(a), Some(b), Some(cl), 0.5, 2.0).unwrap();
        assert!((g.value(total).scalar_value() - 11.5).abs() < 1e-12);

        let only_kt = total_loss(&mut g, kt, Some(a), Some(b), Some(cl), 0.0, 0.0).unwrap();
        assert_eq!(g.value(only_kt).scalar_value(), 1.0);

        assert!(total_loss(&mut g, kt, None, None, None, -0.1, 0.0).is_err());
    }

    #[test]
    fn trace_csv_schema() {
        let trace = PredictionTrace {
            rows: vec![TraceRow {
                student_id: "s1".into(),
                step: 1,
                question_id: 42,
                alpha: 0.5,
                sigmoid_alpha: 0.622,
                beta_bar: -0.1,
                sigmoid_beta_bar: 0.475,
                r_hat: 0.59,
                r: 1,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        trace.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "student_id,step,question_id,alpha,sigmoid_alpha,beta_bar,sigmoid_beta_bar,r_hat,r"
        );
        assert!(lines.next().unwrap().starts_with("s1,1,42,"));
    }
}
