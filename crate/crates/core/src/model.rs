//! Full model assembly: embedding tables, the two acquisition modules, and
//! the prediction layer, wired into a single training graph per batch.
//!
//! Training and evaluation never materialize the full per-question
//! acquisition state: the losses only touch the target question's entry and
//! the target concepts' entries, so the expert projections are evaluated on
//! gathered rows of the output matrices. That path is algebraically
//! identical to indexing the full state (covered by tests) and keeps memory
//! linear in the number of targets. [`Model::forward_full`] computes the
//! dense states for export and inspection.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    self, expert_inner, gate_weights, module_forward, register_module, CandidateActivation,
    ModuleVars,
};
use crate::dataio::{QuestionBank, Window};
use crate::encoder;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{xavier_uniform, ParamStore};
use crate::predictor;
use crate::tensor::{Real, Tensor};

pub const MQKA_PREFIX: &str = "mqka";
pub const MCKA_PREFIX: &str = "mcka";
pub const READOUT_WEIGHT: &str = "readout.weight";
pub const READOUT_BIAS: &str = "readout.bias";

/// Architecture switches. `no_*` flags mirror the ablation variants; the
/// baseline comparator is `{no_mcka, no_moe, no_irt}` on the same code path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub question_count: usize,
    pub concept_count: usize,
    pub embed_dim: usize,
    pub experts: usize,
    #[serde(default)]
    pub candidate_activation: CandidateActivation,
    #[serde(default)]
    pub no_mqka: bool,
    #[serde(default)]
    pub no_mcka: bool,
    #[serde(default)]
    pub no_moe: bool,
    #[serde(default)]
    pub no_irt: bool,
}

impl ModelConfig {
    pub fn new(question_count: usize, concept_count: usize, embed_dim: usize, experts: usize) -> Self {
        ModelConfig {
            question_count,
            concept_count,
            embed_dim,
            experts,
            candidate_activation: CandidateActivation::Sigmoid,
            no_mqka: false,
            no_mcka: false,
            no_moe: false,
            no_irt: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.question_count == 0 || self.concept_count == 0 || self.embed_dim == 0 {
            return Err(Error::data("model dimensions must be positive"));
        }
        if self.experts == 0 {
            return Err(Error::data("expert count must be at least 1"));
        }
        if self.no_mqka && self.no_mcka {
            return Err(Error::data(
                "cannot ablate both acquisition modules at once",
            ));
        }
        if self.no_irt && self.no_mqka {
            return Err(Error::data(
                "the linear-readout variant reads the question module's state",
            ));
        }
        Ok(())
    }

    /// Experts actually instantiated (the no-MoE variant collapses to one).
    pub fn effective_experts(&self) -> usize {
        if self.no_moe {
            1
        } else {
            self.experts
        }
    }

    /// Whether a gating network exists. A single gated expert receives a
    /// softmax weight of exactly 1, so `experts == 1` keeps the gate and
    /// `no_moe` is the structurally gate-free variant.
    pub fn gated(&self) -> bool {
        !self.no_moe
    }

    pub fn has_mqka(&self) -> bool {
        !self.no_mqka
    }

    pub fn has_mcka(&self) -> bool {
        !self.no_mcka && !self.no_irt
    }

    pub fn has_readout(&self) -> bool {
        self.no_irt
    }

    /// Names and shapes of every parameter this config owns.
    pub fn expected_params(&self) -> Vec<(String, usize, usize, bool)> {
        let d = self.embed_dim;
        let mut out = vec![
            (
                encoder::QUESTION_TABLE.to_string(),
                self.question_count,
                d,
                true,
            ),
            (
                encoder::QUESTION_SNAPSHOT.to_string(),
                self.question_count,
                d,
                false,
            ),
            (
                encoder::CONCEPT_TABLE.to_string(),
                self.concept_count,
                d,
                true,
            ),
        ];
        let mut module = |prefix: &str, input_dim: usize, out_dim: usize| {
            for gate in ["input", "forget", "output", "candidate"] {
                out.push((format!("{prefix}.cell.{gate}.w"), d, input_dim, true));
                out.push((format!("{prefix}.cell.{gate}.u"), d, d, true));
                out.push((format!("{prefix}.cell.{gate}.b"), d, 1, true));
            }
            for e in 0..self.effective_experts() {
                out.push((format!("{prefix}.expert{e}.w1"), d, d, true));
                out.push((format!("{prefix}.expert{e}.b1"), d, 1, true));
                out.push((format!("{prefix}.expert{e}.w2"), out_dim, d, true));
                out.push((format!("{prefix}.expert{e}.b2"), out_dim, 1, true));
                out.push((format!("{prefix}.expert{e}.scale"), out_dim, 1, true));
            }
            if self.gated() {
                out.push((
                    format!("{prefix}.gate.weight"),
                    self.effective_experts(),
                    d,
                    true,
                ));
                out.push((
                    format!("{prefix}.gate.bias"),
                    self.effective_experts(),
                    1,
                    true,
                ));
            }
        };
        if self.has_mqka() {
            module(MQKA_PREFIX, 4 * d, self.question_count);
        }
        if self.has_mcka() {
            module(MCKA_PREFIX, 3 * d, self.concept_count);
        }
        if self.has_readout() {
            out.push((READOUT_WEIGHT.to_string(), self.question_count, d, true));
            out.push((READOUT_BIAS.to_string(), self.question_count, 1, true));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Deterministic initialization: embeddings N(0, 0.02), weight matrices
    /// Xavier-uniform, biases zero, expert scales one.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.embed_dim;
        encoder::init_tables(
            &mut store,
            config.question_count,
            config.concept_count,
            d,
            &mut rng,
        )?;
        if config.has_mqka() {
            acquisition::init_module(
                &mut store,
                MQKA_PREFIX,
                4 * d,
                d,
                config.question_count,
                config.effective_experts(),
                config.gated(),
                &mut rng,
            )?;
        }
        if config.has_mcka() {
            acquisition::init_module(
                &mut store,
                MCKA_PREFIX,
                3 * d,
                d,
                config.concept_count,
                config.effective_experts(),
                config.gated(),
                &mut rng,
            )?;
        }
        if config.has_readout() {
            store.insert(
                READOUT_WEIGHT,
                xavier_uniform(config.question_count, d, &mut rng),
                true,
            )?;
            store.insert(READOUT_BIAS, Tensor::zeros(config.question_count, 1), true)?;
        }
        Ok(Model { config, store })
    }

    pub fn snapshot_question_table(&mut self) -> Result<()> {
        encoder::snapshot_question_table(&mut self.store)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("model.json"),
            serde_json::to_vec_pretty(&self.config)?,
        )?;
        self.store
            .save(&dir.join("manifest.json"), &dir.join("params.bin"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config: ModelConfig =
            serde_json::from_slice(&std::fs::read(dir.join("model.json"))?)?;
        Self::load_with_config(dir, config)
    }

    /// Load a checkpoint and validate it against `config`: every expected
    /// parameter must exist with the expected shape, and no extras allowed.
    pub fn load_with_config(dir: &Path, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let store = ParamStore::<T>::load(&dir.join("manifest.json"), &dir.join("params.bin"))?;
        let expected = config.expected_params();
        for (name, rows, cols, _) in &expected {
            let param = store.get(name).map_err(|_| {
                Error::format(format!("checkpoint is missing parameter `{name}`"))
            })?;
            if param.tensor.shape() != (*rows, *cols) {
                return Err(Error::Shape {
                    op: "load_checkpoint",
                    detail: format!(
                        "parameter `{name}` has shape {:?}, config expects {:?}",
                        param.tensor.shape(),
                        (*rows, *cols)
                    ),
                });
            }
        }
        if store.len() != expected.len() {
            let expected_names: std::collections::BTreeSet<&str> =
                expected.iter().map(|(n, ..)| n.as_str()).collect();
            let extra: Vec<&str> = store
                .names()
                .filter(|n| !expected_names.contains(n))
                .collect();
            return Err(Error::format(format!(
                "checkpoint has parameters the config does not expect: {extra:?}"
            )));
        }
        Ok(Model { config, store })
    }

    fn register_module_vars(&self, graph: &mut Graph<T>, prefix: &str) -> Result<ModuleVars> {
        register_module(
            graph,
            &self.store,
            prefix,
            self.config.effective_experts(),
            self.config.gated(),
        )
    }

    /// Build the batched target-path graph. Returns handles for the losses
    /// and the embedding tables (the contrastive term reuses them).
    pub fn forward_targets(&self, graph: &mut Graph<T>, batch: &BatchData) -> Result<TargetForward<T>> {
        let d = self.config.embed_dim;
        let question_param = self.store.get(encoder::QUESTION_TABLE)?;
        let question_table = graph.param(
            encoder::QUESTION_TABLE,
            question_param.tensor.clone(),
            question_param.trainable,
        );
        let snapshot_param = self.store.get(encoder::QUESTION_SNAPSHOT)?;
        let snapshot = graph.param(
            encoder::QUESTION_SNAPSHOT,
            snapshot_param.tensor.clone(),
            false,
        );
        let concept_param = self.store.get(encoder::CONCEPT_TABLE)?;
        let concept_table = graph.param(
            encoder::CONCEPT_TABLE,
            concept_param.tensor.clone(),
            concept_param.trainable,
        );

        let b = batch.batch;
        if batch.targets.count == 0 {
            return Err(Error::data("batch contains no target steps"));
        }

        // per-step encodings
        let mut question_inputs = Vec::new();
        let mut concept_inputs = Vec::new();
        for step in &batch.steps {
            let correct = graph.constant(row_vec::<T>(&step.correct_mask));
            let wrong = graph.constant(row_vec::<T>(&step.wrong_mask));
            let kc_rows = graph.gather_rows(concept_table, &step.kc_ids)?;
            let kc_mean = graph.segment_mean_rows(kc_rows, &step.kc_segments, b)?;
            let kc_cols = graph.transpose(kc_mean)?;
            if self.config.has_mqka() {
                let q_rows = graph.gather_rows(question_table, &step.question_ids)?;
                let q_cols = graph.transpose(q_rows)?;
                let content = graph.concat_rows(&[q_cols, kc_cols])?;
                let top = graph.mul_row_vec(content, correct)?;
                let bottom = graph.mul_row_vec(content, wrong)?;
                question_inputs.push(graph.concat_rows(&[top, bottom])?);
            }
            if self.config.has_mcka() {
                let top = graph.mul_row_vec(kc_cols, correct)?;
                let mid = graph.constant(Tensor::zeros(d, b));
                let bottom = graph.mul_row_vec(kc_cols, wrong)?;
                concept_inputs.push(graph.concat_rows(&[top, mid, bottom])?);
            }
        }

        let run_module = |graph: &mut Graph<T>,
                          module: &ModuleVars,
                          inputs: &[Var]|
         -> Result<Var> {
            let mut h = graph.constant(Tensor::zeros(d, b));
            let mut c = graph.constant(Tensor::zeros(d, b));
            let mut hidden = Vec::with_capacity(inputs.len());
            for &x in inputs {
                let (h2, c2) = acquisition::lstm_step(
                    graph,
                    module.cell,
                    x,
                    h,
                    c,
                    self.config.candidate_activation,
                )?;
                h = h2;
                c = c2;
                hidden.push(h);
            }
            let stacked = graph.concat_cols(&hidden)?;
            graph.gather_cols(stacked, &batch.targets.hidden_col)
        };

        let mut question_scores = None;
        let mut concept_scores = None;
        let mut readout_scores = None;

        if self.config.has_mqka() {
            let module = self.register_module_vars(graph, MQKA_PREFIX)?;
            let h_targets = run_module(graph, &module, &question_inputs)?;
            if self.config.has_readout() {
                let w = self.store.get(READOUT_WEIGHT)?;
                let weight = graph.param(READOUT_WEIGHT, w.tensor.clone(), w.trainable);
                let bias_p = self.store.get(READOUT_BIAS)?;
                let bias = graph.param(READOUT_BIAS, bias_p.tensor.clone(), bias_p.trainable);
                let rows = graph.gather_rows(weight, &batch.targets.question)?;
                let z = graph.row_dot_cols(rows, h_targets)?;
                let bg = graph.gather_rows(bias, &batch.targets.question)?;
                readout_scores = Some(graph.add(z, bg)?);
            } else {
                question_scores = Some(self.gathered_scores(
                    graph,
                    &module,
                    h_targets,
                    &batch.targets.question,
                    None,
                    batch.targets.count,
                )?);
            }
        }
        if self.config.has_mcka() {
            let module = self.register_module_vars(graph, MCKA_PREFIX)?;
            let h_targets = run_module(graph, &module, &concept_inputs)?;
            concept_scores = Some(self.gathered_scores(
                graph,
                &module,
                h_targets,
                &batch.targets.kc_flat,
                Some(&batch.targets.kc_segments),
                batch.targets.count,
            )?);
        }

        let combined = if let Some(z) = readout_scores {
            z
        } else {
            match (question_scores, concept_scores) {
                (Some(a), Some(c)) => graph.add(a, c)?,
                (Some(a), None) => a,
                (None, Some(c)) => c,
                (None, None) => unreachable!("config validation forbids this"),
            }
        };
        let predictions = graph.sigmoid(combined)?;
        let labels = Tensor::from_vec(
            batch.targets.count,
            1,
            batch
                .targets
                .responses
                .iter()
                .map(|&r| T::from_f64(r))
                .collect(),
        )?;

        Ok(TargetForward {
            question_table,
            snapshot,
            question_scores,
            concept_scores,
            predictions,
            labels,
        })
    }

    /// Expert projections evaluated on gathered output rows. For the
    /// question module `row_ids` has one entry per target; for the concept
    /// module it is the flattened concept list with `segments` mapping each
    /// entry back to its target (scores are averaged per target).
    fn gathered_scores(
        &self,
        graph: &mut Graph<T>,
        module: &ModuleVars,
        h_targets: Var,
        row_ids: &[usize],
        segments: Option<&[usize]>,
        target_count: usize,
    ) -> Result<Var> {
        let gate = match &module.gate {
            Some(gate) => {
                let weights = gate_weights(graph, *gate, h_targets)?;
                Some(match segments {
                    Some(segs) => graph.gather_cols(weights, segs)?,
                    None => weights,
                })
            }
            None => None,
        };
        let mut combined: Option<Var> = None;
        for (e, head) in module.experts.iter().enumerate() {
            let inner = expert_inner(graph, *head, h_targets)?;
            let inner = match segments {
                Some(segs) => graph.gather_cols(inner, segs)?,
                None => inner,
            };
            let rows = graph.gather_rows(head.w2, row_ids)?;
            let z = graph.row_dot_cols(rows, inner)?;
            let b2 = graph.gather_rows(head.b2, row_ids)?;
            let z = graph.add(z, b2)?;
            let z = graph.relu(z)?;
            let scale = graph.gather_rows(head.scale, row_ids)?;
            let mut out = graph.mul(z, scale)?;
            if let Some(gate) = gate {
                let row = graph.gather_rows(gate, &[e])?;
                let col = graph.transpose(row)?;
                out = graph.mul(out, col)?;
            }
            combined = Some(match combined {
                None => out,
                Some(acc) => graph.add(acc, out)?,
            });
        }
        let combined = combined.expect("at least one expert");
        match segments {
            Some(segs) => graph.segment_mean_rows(combined, segs, target_count),
            None => Ok(combined),
        }
    }

    /// Dense per-step acquisition states over one window, plus the
    /// prediction decomposition for every target step. Export/inspection
    /// path; memory scales with `n` and `M`.
    pub fn forward_full(&self, window: &Window, bank: &QuestionBank) -> Result<FullForward<T>> {
        let d = self.config.embed_dim;
        let mut graph = Graph::new();
        let question_param = self.store.get(encoder::QUESTION_TABLE)?;
        let question_table = graph.param(
            encoder::QUESTION_TABLE,
            question_param.tensor.clone(),
            question_param.trainable,
        );
        let concept_param = self.store.get(encoder::CONCEPT_TABLE)?;
        let concept_table = graph.param(
            encoder::CONCEPT_TABLE,
            concept_param.tensor.clone(),
            concept_param.trainable,
        );

        let mut question_inputs = Vec::new();
        let mut concept_inputs = Vec::new();
        for step in &window.steps {
            let kcs = bank.kcs_of(step.question);
            if self.config.has_mqka() {
                question_inputs.push(encoder::encode_question_interaction(
                    &mut graph,
                    question_table,
                    concept_table,
                    step.question,
                    kcs,
                    step.response,
                )?);
            }
            if self.config.has_mcka() {
                concept_inputs.push(encoder::encode_concept_interaction(
                    &mut graph,
                    concept_table,
                    kcs,
                    step.response,
                )?);
            }
        }

        let mut question_states = Vec::new();
        let mut question_hidden = Vec::new();
        if self.config.has_mqka() {
            let module = self.register_module_vars(&mut graph, MQKA_PREFIX)?;
            for (h, state) in module_forward(
                &mut graph,
                &module,
                &question_inputs,
                d,
                self.config.candidate_activation,
            )? {
                question_hidden.push(graph.value(h).clone());
                question_states.push(graph.value(state).clone());
            }
        }
        let mut concept_states = Vec::new();
        if self.config.has_mcka() {
            let module = self.register_module_vars(&mut graph, MCKA_PREFIX)?;
            for (_, state) in module_forward(
                &mut graph,
                &module,
                &concept_inputs,
                d,
                self.config.candidate_activation,
            )? {
                concept_states.push(graph.value(state).clone());
            }
        }

        let mut targets = Vec::new();
        for t in 1..window.steps.len() {
            let step = &window.steps[t];
            let kcs = bank.kcs_of(step.question);
            let question_score = if self.config.has_readout() {
                let w = self.store.tensor(READOUT_WEIGHT)?;
                let bta = self.store.tensor(READOUT_BIAS)?;
                let h = &question_hidden[t - 1];
                let q = step.question as usize;
                let mut acc = bta.get(q, 0);
                for k in 0..d {
                    acc = acc + w.get(q, k) * h.get(k, 0);
                }
                Some(acc.to_f64())
            } else if self.config.has_mqka() {
                Some(
                    question_states[t - 1]
                        .get(step.question as usize, 0)
                        .to_f64(),
                )
            } else {
                None
            };
            let concept_score = if self.config.has_mcka() {
                let state = &concept_states[t - 1];
                let sum: f64 = kcs.iter().map(|&k| state.get(k as usize, 0).to_f64()).sum();
                Some(sum / kcs.len() as f64)
            } else {
                None
            };
            let logit = match (self.config.has_readout(), question_score, concept_score) {
                (true, Some(z), _) => z,
                (false, Some(a), Some(c)) => a + c,
                (false, Some(a), None) => a,
                (false, None, Some(c)) => c,
                _ => unreachable!(),
            };
            targets.push(TargetDecomposition {
                step: t,
                question: step.question,
                response: step.response,
                question_score,
                concept_score,
                prediction: crate::graph::stable_sigmoid(logit),
            });
        }

        Ok(FullForward {
            question_states,
            concept_states,
            targets,
        })
    }
}

fn row_vec<T: Real>(values: &[f64]) -> Tensor<T> {
    Tensor::from_vec(1, values.len(), values.iter().map(|&v| T::from_f64(v)).collect())
        .expect("row vector")
}

// ---- joint objective ----------------------------------------------------------

/// Scalar values of the assembled loss terms for logging.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub kt: f64,
    pub aux_question: f64,
    pub aux_concept: f64,
    pub contrastive: f64,
}

/// Assemble the joint objective for one batch: per-window-summed BCE terms
/// averaged over the batch, plus the weighted contrastive term over the
/// sampled anchors. Returns the loss node and the term values.
pub fn training_loss<T: Real>(
    graph: &mut Graph<T>,
    model: &Model<T>,
    batch: &BatchData,
    anchors: &[&crate::contrastive::AnchorPairs],
    lambda1: f64,
    lambda2: f64,
    cl_config: &crate::contrastive::ContrastiveConfig,
) -> Result<(Var, LossBreakdown)> {
    let fwd = model.forward_targets(graph, batch)?;
    let inv_b = T::from_f64(1.0 / batch.batch as f64);

    let kt_sum = predictor::kt_loss(graph, fwd.predictions, &fwd.labels, predictor::Reduction::Sum)?;
    let kt = graph.affine(kt_sum, inv_b, T::zero())?;

    let mut aux_question = None;
    let mut aux_concept = None;
    if lambda1 > 0.0 {
        if let Some(scores) = fwd.question_scores {
            let sum =
                predictor::aux_loss(graph, scores, &fwd.labels, predictor::Reduction::Sum)?;
            aux_question = Some(graph.affine(sum, inv_b, T::zero())?);
        }
        if let Some(scores) = fwd.concept_scores {
            let sum =
                predictor::aux_loss(graph, scores, &fwd.labels, predictor::Reduction::Sum)?;
            aux_concept = Some(graph.affine(sum, inv_b, T::zero())?);
        }
    }
    let contrastive = if lambda2 > 0.0 && !anchors.is_empty() {
        Some(crate::contrastive::contrastive_loss(
            graph,
            fwd.question_table,
            fwd.snapshot,
            anchors,
            cl_config,
        )?)
    } else {
        None
    };

    let total = predictor::total_loss(
        graph,
        kt,
        aux_question,
        aux_concept,
        contrastive,
        lambda1,
        lambda2,
    )?;
    let value = |v: Option<Var>| v.map(|v| graph.value(v).scalar_value().to_f64()).unwrap_or(0.0);
    let breakdown = LossBreakdown {
        total: graph.value(total).scalar_value().to_f64(),
        kt: graph.value(kt).scalar_value().to_f64(),
        aux_question: value(aux_question),
        aux_concept: value(aux_concept),
        contrastive: value(contrastive),
    };
    Ok((total, breakdown))
}

// ---- full-model gradient verification -------------------------------------------

/// Setup for a finite-difference check of the whole objective on a
/// micro-scale model with synthetic data and pairs.
#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub model: ModelConfig,
    pub window_len: usize,
    pub batch: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
}

impl GradCheckConfig {
    pub fn micro(embed_dim: usize, experts: usize) -> Self {
        GradCheckConfig {
            model: ModelConfig::new(12, 5, embed_dim, experts),
            window_len: 6,
            batch: 2,
            lambda1: 0.7,
            lambda2: 0.9,
            seed: 20240,
            step: 1e-4,
            tolerance: 1e-4,
        }
    }
}

/// Compare every trainable parameter's analytic gradient of the total loss
/// against 64-bit central finite differences. Parameters are jittered after
/// initialization so relu/hinge kinks sit away from the evaluation points.
pub fn grad_check(check: &GradCheckConfig) -> Result<crate::optim::GradCheckReport> {
    use rand::Rng;

    if check.model.embed_dim > 16 || check.window_len > 8 {
        return Err(Error::data(
            "gradient checks are restricted to micro-scale configs (d <= 16, T <= 8)",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    let mut model = Model::<f64>::init(check.model.clone(), check.seed)?;
    for name in model.store.trainable_names() {
        let mut t = model.store.tensor(&name)?.clone();
        for r in 0..t.rows() {
            for c in 0..t.cols() {
                t.set(r, c, t.get(r, c) + rng.gen_range(-0.05..0.05));
            }
        }
        model.store.set_values(&name, t)?;
    }

    // synthetic bank: cycle questions over single concepts so that same-kc
    // pools exist for the pair set
    let n = check.model.question_count;
    let m = check.model.concept_count;
    let bank = QuestionBank {
        question_count: n,
        concept_count: m,
        students: (0..check.batch).map(|i| format!("s{i}")).collect(),
        questions: (0..n as u64).collect(),
        concepts: (0..m as u64).collect(),
        kc_map: (0..n).map(|q| vec![(q % m) as u32]).collect(),
    };
    let windows: Vec<Window> = (0..check.batch)
        .map(|w| Window {
            student_idx: w as u32,
            seq_index: w as u32,
            offset: 0,
            steps: (0..check.window_len)
                .map(|t| {
                    let question = rng.gen_range(0..n) as u32;
                    crate::dataio::InteractionRecord {
                        question,
                        kcs: bank.kc_map[question as usize].clone(),
                        response: rng.gen_range(0..2u8),
                        timestamp: t as i64,
                    }
                })
                .collect(),
        })
        .collect();
    let window_refs: Vec<&Window> = windows.iter().collect();
    let batch = BatchData::build(&window_refs, &bank)?;

    // hand-made pairs over same-concept questions; tight positive margin and
    // wide negative margin keep both hinges active
    let anchors: Vec<crate::contrastive::AnchorPairs> = (0..m.min(3))
        .map(|k| {
            let same_kc: Vec<u32> = (0..n).filter(|q| q % m == k).map(|q| q as u32).collect();
            crate::contrastive::AnchorPairs {
                anchor_id: same_kc[0],
                band: 0,
                frequency: 1,
                positive_ids: same_kc[1..].iter().copied().take(2).collect(),
                negative_ids: same_kc[1..].iter().copied().skip(2).take(2).collect(),
            }
        })
        .filter(|a| !a.positive_ids.is_empty())
        .collect();
    let cl_config = crate::contrastive::ContrastiveConfig {
        margin_positive: 0.01,
        margin_negative: 1.0,
        temperature: 0.8,
        mode: crate::contrastive::NegativeMode::PushApart,
    };

    let loss_of = |model: &Model<f64>| -> Result<(Graph<f64>, Var)> {
        let mut graph = Graph::new();
        let anchor_refs: Vec<&crate::contrastive::AnchorPairs> = anchors.iter().collect();
        let (total, _) = training_loss(
            &mut graph,
            model,
            &batch,
            &anchor_refs,
            check.lambda1,
            check.lambda2,
            &cl_config,
        )?;
        Ok((graph, total))
    };

    let (graph, total) = loss_of(&model)?;
    let grads = graph.backward(total)?;
    let analytic = graph.param_gradients(&grads);

    let config = model.config.clone();
    crate::optim::finite_difference_check(
        &mut model.store,
        &analytic,
        check.step,
        check.tolerance,
        move |store| {
            let probe = Model {
                config: config.clone(),
                store: store.clone(),
            };
            let (graph, total) = loss_of(&probe)?;
            Ok(graph.value(total).scalar_value())
        },
    )
}

/// Graph handles produced by [`Model::forward_targets`].
pub struct TargetForward<T: Real> {
    pub question_table: Var,
    pub snapshot: Var,
    /// Raw question scores per target (absent under `no_mqka`/`no_irt`).
    pub question_scores: Option<Var>,
    /// Raw concept scores per target (absent under `no_mcka`/`no_irt`).
    pub concept_scores: Option<Var>,
    /// `sigmoid` of the combined score, one entry per target.
    pub predictions: Var,
    pub labels: Tensor<T>,
}

/// Dense forward output for one window.
pub struct FullForward<T: Real> {
    /// Per-step question acquisition state `(n, 1)`; empty under `no_mqka`.
    pub question_states: Vec<Tensor<T>>,
    /// Per-step concept acquisition state `(M, 1)`; empty under `no_mcka`.
    pub concept_states: Vec<Tensor<T>>,
    pub targets: Vec<TargetDecomposition>,
}

/// The interpretable pieces of one prediction.
#[derive(Debug, Clone)]
pub struct TargetDecomposition {
    pub step: usize,
    pub question: u32,
    pub response: u8,
    pub question_score: Option<f64>,
    pub concept_score: Option<f64>,
    pub prediction: f64,
}

// ---- batch layout -----------------------------------------------------------

/// Plain-data layout of a window batch: per-step gather indices and masks,
/// plus the flattened target lists.
#[derive(Debug, Clone)]
pub struct BatchData {
    pub batch: usize,
    pub max_len: usize,
    pub steps: Vec<StepData>,
    pub targets: TargetData,
}

#[derive(Debug, Clone)]
pub struct StepData {
    pub question_ids: Vec<usize>,
    pub kc_ids: Vec<usize>,
    pub kc_segments: Vec<usize>,
    pub correct_mask: Vec<f64>,
    pub wrong_mask: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TargetData {
    pub count: usize,
    /// Batch column of each target's window.
    pub window_of: Vec<usize>,
    /// The predicted step index within the window.
    pub step_of: Vec<usize>,
    /// Column into the stacked hidden-state matrix (state after step t-1).
    pub hidden_col: Vec<usize>,
    pub question: Vec<usize>,
    pub kc_flat: Vec<usize>,
    pub kc_segments: Vec<usize>,
    pub responses: Vec<f64>,
}

impl BatchData {
    /// Lay out a batch. The first step of every window is never a target;
    /// padded steps beyond a window's length are masked to zero and their
    /// states are never gathered.
    pub fn build(windows: &[&Window], bank: &QuestionBank) -> Result<BatchData> {
        if windows.is_empty() {
            return Err(Error::data("empty window batch"));
        }
        let b = windows.len();
        let max_len = windows.iter().map(|w| w.steps.len()).max().unwrap();
        let mut steps = Vec::with_capacity(max_len);
        for t in 0..max_len {
            let mut step = StepData {
                question_ids: vec![0; b],
                kc_ids: Vec::new(),
                kc_segments: Vec::new(),
                correct_mask: vec![0.0; b],
                wrong_mask: vec![0.0; b],
            };
            for (col, window) in windows.iter().enumerate() {
                if t >= window.steps.len() {
                    continue;
                }
                let rec = &window.steps[t];
                step.question_ids[col] = rec.question as usize;
                for &kc in bank.kcs_of(rec.question) {
                    step.kc_ids.push(kc as usize);
                    step.kc_segments.push(col);
                }
                if rec.response == 1 {
                    step.correct_mask[col] = 1.0;
                } else {
                    step.wrong_mask[col] = 1.0;
                }
            }
            steps.push(step);
        }

        let mut targets = TargetData {
            count: 0,
            window_of: Vec::new(),
            step_of: Vec::new(),
            hidden_col: Vec::new(),
            question: Vec::new(),
            kc_flat: Vec::new(),
            kc_segments: Vec::new(),
            responses: Vec::new(),
        };
        for t in 1..max_len {
            for (col, window) in windows.iter().enumerate() {
                if t >= window.steps.len() {
                    continue;
                }
                let rec = &window.steps[t];
                let idx = targets.count;
                targets.count += 1;
                targets.window_of.push(col);
                targets.step_of.push(t);
                targets.hidden_col.push((t - 1) * b + col);
                targets.question.push(rec.question as usize);
                for &kc in bank.kcs_of(rec.question) {
                    targets.kc_flat.push(kc as usize);
                    targets.kc_segments.push(idx);
                }
                targets.responses.push(f64::from(rec.response));
            }
        }
        Ok(BatchData {
            batch: b,
            max_len,
            steps,
            targets,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::InteractionRecord;

    fn micro_bank(n: usize, m: usize) -> QuestionBank {
        QuestionBank {
            question_count: n,
            concept_count: m,
            students: vec!["s0".into()],
            questions: (0..n as u64).collect(),
            concepts: (0..m as u64).collect(),
            kc_map: (0..n).map(|q| vec![(q % m) as u32, ((q + 1) % m) as u32])
                .map(|mut v| {
                    v.sort_unstable();
                    v.dedup();
                    v
                })
                .collect(),
        }
    }

    fn micro_window(bank: &QuestionBank, len: usize, seed: u64) -> Window {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Window {
            student_idx: 0,
            seq_index: 0,
            offset: 0,
            steps: (0..len)
                .map(|t| {
                    let question = rng.gen_range(0..bank.question_count) as u32;
                    InteractionRecord {
                        question,
                        kcs: bank.kc_map[question as usize].clone(),
                        response: rng.gen_range(0..2u8),
                        timestamp: t as i64,
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn init_matches_expected_param_set() {
        let config = ModelConfig::new(12, 5, 8, 2);
        let model = Model::<f64>::init(config.clone(), 7).unwrap();
        let expected = config.expected_params();
        assert_eq!(model.store.len(), expected.len());
        for (name, rows, cols, trainable) in expected {
            let p = model.store.get(&name).unwrap();
            assert_eq!(p.tensor.shape(), (rows, cols), "{name}");
            assert_eq!(p.trainable, trainable, "{name}");
        }
        // the prediction layer owns nothing
        assert!(model
            .store
            .names()
            .all(|n| !n.starts_with(predictor::PREDICTOR_PREFIX)));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut config = ModelConfig::new(4, 2, 4, 1);
        config.no_mqka = true;
        config.no_mcka = true;
        assert!(config.validate().is_err());

        let mut config = ModelConfig::new(4, 2, 4, 1);
        config.no_irt = true;
        config.no_mqka = true;
        assert!(config.validate().is_err());

        let config = ModelConfig::new(4, 2, 4, 0);
        assert!(config.validate().is_err());
    }

    #[test]
    fn gathered_path_equals_full_state_indexing() {
        let bank = micro_bank(7, 4);
        let config = ModelConfig::new(bank.question_count, bank.concept_count, 6, 3);
        let model = Model::<f64>::init(config, 13).unwrap();
        let window = micro_window(&bank, 9, 5);

        let batch = BatchData::build(&[&window], &bank).unwrap();
        let mut graph = Graph::new();
        let fwd = model.forward_targets(&mut graph, &batch).unwrap();
        let alpha = graph.value(fwd.question_scores.unwrap()).to_vec();
        let beta = graph.value(fwd.concept_scores.unwrap()).to_vec();
        let preds = graph.value(fwd.predictions).to_vec();

        let full = model.forward_full(&window, &bank).unwrap();
        assert_eq!(full.targets.len(), alpha.len());
        for (i, target) in full.targets.iter().enumerate() {
            assert!(
                (alpha[i] - target.question_score.unwrap()).abs() < 1e-9,
                "question score diverges at target {i}"
            );
            assert!(
                (beta[i] - target.concept_score.unwrap()).abs() < 1e-9,
                "concept score diverges at target {i}"
            );
            assert!((preds[i] - target.prediction).abs() < 1e-9);
        }
    }

    #[test]
    fn batched_forward_matches_single_window_runs() {
        let bank = micro_bank(6, 3);
        let config = ModelConfig::new(bank.question_count, bank.concept_count, 5, 2);
        let model = Model::<f64>::init(config, 3).unwrap();
        let w1 = micro_window(&bank, 8, 1);
        let w2 = micro_window(&bank, 5, 2); // shorter: exercises padding
        let w3 = micro_window(&bank, 8, 3);

        let batch = BatchData::build(&[&w1, &w2, &w3], &bank).unwrap();
        let mut graph = Graph::new();
        let fwd = model.forward_targets(&mut graph, &batch).unwrap();
        let batched = graph.value(fwd.predictions).to_vec();

        let mut singles: Vec<(usize, usize, f64)> = Vec::new(); // (window, step, pred)
        for (wi, w) in [&w1, &w2, &w3].iter().enumerate() {
            let sb = BatchData::build(&[w], &bank).unwrap();
            let mut g = Graph::new();
            let f = model.forward_targets(&mut g, &sb).unwrap();
            let preds = g.value(f.predictions).to_vec();
            for (i, p) in preds.iter().enumerate() {
                singles.push((wi, sb.targets.step_of[i], *p));
            }
        }
        assert_eq!(batched.len(), singles.len());
        for (i, p) in batched.iter().enumerate() {
            let (wi, step) = (batch.targets.window_of[i], batch.targets.step_of[i]);
            let single = singles
                .iter()
                .find(|(w, s, _)| *w == wi && *s == step)
                .unwrap()
                .2;
            assert!(
                (p - single).abs() < 1e-9,
                "window {wi} step {step}: batched {p} vs single {single}"
            );
        }
    }

    #[test]
    fn single_expert_with_gate_is_bitwise_equal_to_ungated() {
        let bank = micro_bank(5, 3);
        let gated_config = ModelConfig::new(bank.question_count, bank.concept_count, 4, 1);
        let mut ungated_config = gated_config.clone();
        ungated_config.no_moe = true;

        let gated = Model::<f64>::init(gated_config, 11).unwrap();
        let mut ungated = Model::<f64>::init(ungated_config, 99).unwrap();
        // share every common parameter
        for name in ungated.store.trainable_names() {
            let src = gated.store.tensor(&name).unwrap().clone();
            ungated.store.set_values(&name, src).unwrap();
        }
        ungated
            .store
            .copy_values(encoder::QUESTION_TABLE, encoder::QUESTION_SNAPSHOT)
            .ok();

        let window = micro_window(&bank, 7, 4);
        let batch = BatchData::build(&[&window], &bank).unwrap();
        let mut g1 = Graph::new();
        let p1 = {
            let f = gated.forward_targets(&mut g1, &batch).unwrap();
            g1.value(f.predictions).to_vec()
        };
        let mut g2 = Graph::new();
        let p2 = {
            let f = ungated.forward_targets(&mut g2, &batch).unwrap();
            g2.value(f.predictions).to_vec()
        };
        assert_eq!(p1, p2, "gated single expert must equal the gate-free path bitwise");
    }

    #[test]
    fn checkpoint_round_trip_and_shape_mismatch() {
        let config = ModelConfig::new(6, 3, 4, 2);
        let model = Model::<f32>::init(config.clone(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();

        let loaded = Model::<f32>::load(dir.path()).unwrap();
        for (name, p) in model.store.iter() {
            assert_eq!(&p.tensor, &loaded.store.get(name).unwrap().tensor);
        }

        // loading into a 3-expert config must fail naming the missing expert
        let mut bigger = config.clone();
        bigger.experts = 3;
        let err = Model::<f32>::load_with_config(dir.path(), bigger)
            .unwrap_err()
            .to_string();
        assert!(err.contains("expert2"), "{err}");

        // loading into a different embed dim must fail with a shape error
        let mut wider = config;
        wider.embed_dim = 8;
        let err = Model::<f32>::load_with_config(dir.path(), wider)
            .unwrap_err()
            .to_string();
        assert!(err.contains("shape"), "{err}");
    }

    #[test]
    fn ablated_variants_produce_predictions() {
        let bank = micro_bank(5, 3);
        let window = micro_window(&bank, 6, 8);
        let batch = BatchData::build(&[&window], &bank).unwrap();
        for (no_mqka, no_mcka, no_irt) in
            [(true, false, false), (false, true, false), (false, false, true)]
        {
            let mut config = ModelConfig::new(bank.question_count, bank.concept_count, 4, 2);
            config.no_mqka = no_mqka;
            config.no_mcka = no_mcka;
            config.no_irt = no_irt;
            let model = Model::<f64>::init(config, 2).unwrap();
            let mut g = Graph::new();
            let fwd = model.forward_targets(&mut g, &batch).unwrap();
            let preds = g.value(fwd.predictions);
            assert_eq!(preds.rows(), batch.targets.count);
            assert!(preds.iter().all(|p| p.is_finite() && *p > 0.0 && *p < 1.0));
            assert_eq!(fwd.question_scores.is_none(), no_mqka || no_irt);
            assert_eq!(fwd.concept_scores.is_none(), no_mcka || no_irt);
        }
    }

    #[test]
    fn deterministic_init() {
        let config = ModelConfig::new(6, 3, 4, 2);
        let a = Model::<f64>::init(config.clone(), 42).unwrap();
        let b = Model::<f64>::init(config, 42).unwrap();
        for (name, p) in a.store.iter() {
            assert_eq!(&p.tensor, &b.store.get(name).unwrap().tensor, "{name}");
        }
    }

    #[test]
    fn micro_grad_check_passes() {
        // smaller than the acceptance criterion config, to keep unit tests fast
        let mut check = GradCheckConfig::micro(4, 2);
        check.model = ModelConfig::new(6, 3, 4, 2);
        check.window_len = 4;
        let report = grad_check(&check).unwrap();
        assert!(
            report.pass,
            "worst: {:?}",
            report
                .checks
                .iter()
                .max_by(|a, b| a.max_rel_err.partial_cmp(&b.max_rel_err).unwrap())
        );
    }
}
