//! Joint optimization loop: seeded shuffling, per-batch graph construction,
//! Adam updates, epoch-boundary snapshots of the question table, early
//! stopping on validation AUC, and deterministic grid search.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::CandidateActivation;
use crate::contrastive::{
    build_pairs, compute_question_stats, sample_anchors, ContrastiveConfig, DifficultyBanding,
    PairCaps, PairSet, QuestionStats,
};
use crate::dataio::{PreparedDataset, SplitSlot, Window};
use crate::error::{Error, Result};
use crate::evalsuite::{self, EvalTarget};
use crate::graph::Graph;
use crate::model::{training_loss, BatchData, LossBreakdown, Model, ModelConfig};
use crate::optim::{Adam, AdamConfig};

/// Everything one training run needs. Serialized as `config.json` in the
/// run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub embed_dim: usize,
    pub experts: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Interaction-frequency threshold separating rare from frequent
    /// questions in the contrastive procedure.
    pub epsilon: u64,
    pub banding: DifficultyBanding,
    pub contrastive: ContrastiveConfig,
    pub pair_caps: PairCaps,
    /// Anchors sampled per optimization step.
    pub anchor_batch: usize,
    pub candidate_activation: CandidateActivation,
    pub no_mqka: bool,
    pub no_mcka: bool,
    pub no_moe: bool,
    pub no_cl: bool,
    pub no_irt: bool,
    /// Validation fold index in `0..fold_count`.
    pub fold: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embed_dim: 64,
            experts: 2,
            lambda1: 0.5,
            lambda2: 0.5,
            lr: 1e-3,
            epochs: 200,
            patience: 10,
            batch_size: 64,
            epsilon: 20,
            banding: DifficultyBanding::default(),
            contrastive: ContrastiveConfig::default(),
            pair_caps: PairCaps::default(),
            anchor_batch: 256,
            candidate_activation: CandidateActivation::Sigmoid,
            no_mqka: false,
            no_mcka: false,
            no_moe: false,
            no_cl: false,
            no_irt: false,
            fold: 0,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience >= self.epochs {
            return Err(Error::data(format!(
                "patience {} must be below the epoch cap {}",
                self.patience, self.epochs
            )));
        }
        if self.batch_size == 0 || self.anchor_batch == 0 {
            return Err(Error::data("batch sizes must be positive"));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::data("loss weights must be non-negative"));
        }
        Ok(())
    }

    pub fn model_config(&self, question_count: usize, concept_count: usize) -> ModelConfig {
        ModelConfig {
            question_count,
            concept_count,
            embed_dim: self.embed_dim,
            experts: self.experts,
            candidate_activation: self.candidate_activation,
            no_mqka: self.no_mqka,
            no_mcka: self.no_mcka,
            no_moe: self.no_moe,
            no_irt: self.no_irt,
        }
    }

    /// Contrastive learning active for this run?
    pub fn contrastive_enabled(&self) -> bool {
        !self.no_cl && self.lambda2 > 0.0
    }
}

/// Strict-improvement early stopping with a patience window.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    stall: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            stall: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        if score > self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.stall = 0;
            StopDecision::Improved
        } else {
            self.stall += 1;
            if self.stall >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub kt: f64,
    pub aux_question: f64,
    pub aux_concept: f64,
    pub contrastive: f64,
    pub val_auc: f64,
    pub val_accuracy: f64,
}

pub struct TrainOutcome {
    /// Parameters of the best-validation epoch.
    pub model: Model<f32>,
    pub best_val_auc: f64,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub history: Vec<EpochRecord>,
    /// Training-split question statistics (drives rare-question slicing).
    pub stats: QuestionStats,
    pub pairs: PairSet,
}

/// Split windows by fold membership: (train, validation, test).
pub fn split_windows<'a>(
    prepared: &'a PreparedDataset,
    fold: usize,
) -> Result<(Vec<&'a Window>, Vec<&'a Window>, Vec<&'a Window>)> {
    if fold >= prepared.folds.fold_count {
        return Err(Error::data(format!(
            "fold {fold} out of range 0..{}",
            prepared.folds.fold_count
        )));
    }
    let membership = prepared.folds.membership(&prepared.bank)?;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for window in &prepared.windows {
        match membership[window.student_idx as usize] {
            SplitSlot::Test => test.push(window),
            SplitSlot::Fold(f) if f == fold => val.push(window),
            SplitSlot::Fold(_) => train.push(window),
        }
    }
    Ok((train, val, test))
}

/// Train on the non-validation folds, validate per epoch, keep the best
/// checkpoint. Writes `config.json`, `history.csv`, `metrics.json` and
/// `best.ckpt/` under `run_dir` when given.
pub fn train(
    prepared: &PreparedDataset,
    config: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let bank = &prepared.bank;
    let (train_windows, val_windows, _) = split_windows(prepared, config.fold)?;
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(Error::data("empty training or validation split"));
    }

    let stats = compute_question_stats(&train_windows, bank.question_count);
    let pairs = if config.contrastive_enabled() {
        build_pairs(
            bank,
            &stats,
            &config.banding,
            config.epsilon,
            config.pair_caps,
            config.seed,
        )?
    } else {
        PairSet {
            epsilon: config.epsilon,
            banding: config.banding.clone(),
            caps: config.pair_caps,
            seed: config.seed,
            anchors: Vec::new(),
        }
    };

    let mut model = Model::<f32>::init(
        config.model_config(bank.question_count, bank.concept_count),
        config.seed,
    )?;
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr))?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5157_4B54_5348_5546);
    let mut anchor_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5157_4B54_414E_4348);

    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), serde_json::to_vec_pretty(config)?)?;
    }

    let mut stopper = EarlyStopper::new(config.patience);
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best_model: Option<Model<f32>> = None;
    let mut best_accuracy = 0.0;
    let mut epochs_run = 0;

    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    for epoch in 1..=config.epochs {
        epochs_run = epoch;
        model.snapshot_question_table()?;
        order.shuffle(&mut shuffle_rng);

        let mut sums = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let windows: Vec<&Window> = chunk.iter().map(|&i| train_windows[i]).collect();
            let batch = BatchData::build(&windows, bank)?;
            let anchors = if config.contrastive_enabled() {
                sample_anchors(&pairs, config.anchor_batch, &mut anchor_rng)
            } else {
                Vec::new()
            };
            let mut graph = Graph::new();
            let (total, parts) = training_loss(
                &mut graph,
                &model,
                &batch,
                &anchors,
                config.lambda1,
                if config.no_cl { 0.0 } else { config.lambda2 },
                &config.contrastive,
            )
            .map_err(|e| {
                Error::numeric(format!("epoch {epoch}, batch {batches}: {e}"))
            })?;
            if !parts.total.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {batches}: {parts:?}"
                )));
            }
            let grads = graph.backward(total)?;
            let named = graph.param_gradients(&grads);
            adam.step(&mut model.store, &named)?;

            sums.total += parts.total;
            sums.kt += parts.kt;
            sums.aux_question += parts.aux_question;
            sums.aux_concept += parts.aux_concept;
            sums.contrastive += parts.contrastive;
            batches += 1;
        }
        let inv = 1.0 / batches.max(1) as f64;

        let (val_auc, val_accuracy) = validation_metrics(&model, &val_windows, prepared, config)?;
        history.push(EpochRecord {
            epoch,
            total: sums.total * inv,
            kt: sums.kt * inv,
            aux_question: sums.aux_question * inv,
            aux_concept: sums.aux_concept * inv,
            contrastive: sums.contrastive * inv,
            val_auc,
            val_accuracy,
        });

        match stopper.observe(epoch, val_auc) {
            StopDecision::Improved => {
                best_model = Some(model.clone());
                best_accuracy = val_accuracy;
            }
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    let best_model = best_model.unwrap_or_else(|| model.clone());
    if let Some(dir) = run_dir {
        write_history(&dir.join("history.csv"), &history)?;
        best_model.save(&dir.join("best.ckpt"))?;
        #[derive(Serialize)]
        struct Metrics {
            val_auc: f64,
            val_accuracy: f64,
            best_epoch: usize,
            epochs_run: usize,
            train_windows: usize,
            val_windows: usize,
        }
        std::fs::write(
            dir.join("metrics.json"),
            serde_json::to_vec_pretty(&Metrics {
                val_auc: stopper.best,
                val_accuracy: best_accuracy,
                best_epoch: stopper.best_epoch,
                epochs_run,
                train_windows: train_windows.len(),
                val_windows: val_windows.len(),
            })?,
        )?;
    }
    Ok(TrainOutcome {
        model: best_model,
        best_val_auc: stopper.best,
        best_val_accuracy: best_accuracy,
        best_epoch: stopper.best_epoch,
        epochs_run,
        history,
        stats,
        pairs,
    })
}

/// Pooled validation metrics; a single-class validation split scores 0.5.
fn validation_metrics(
    model: &Model<f32>,
    val_windows: &[&Window],
    prepared: &PreparedDataset,
    config: &TrainConfig,
) -> Result<(f64, f64)> {
    let targets = evalsuite::evaluate_model(model, val_windows, &prepared.bank, config.batch_size)?;
    let preds: Vec<f64> = targets.iter().map(|t| t.prediction).collect();
    let labels: Vec<u8> = targets.iter().map(|t| t.response).collect();
    let auc = match evalsuite::compute_auc(&preds, &labels) {
        Ok(v) => v,
        Err(_) => {
            log::warn!("single-class validation split; reporting AUC 0.5");
            0.5
        }
    };
    let accuracy = evalsuite::compute_accuracy(&preds, &labels, 0.5)?;
    Ok((auc, accuracy))
}

/// Evaluate a trained model on the held-out test students.
pub fn evaluate_test(
    prepared: &PreparedDataset,
    model: &Model<f32>,
    batch_size: usize,
) -> Result<Vec<EvalTarget>> {
    let membership = prepared.folds.membership(&prepared.bank)?;
    let test: Vec<&Window> = prepared
        .windows
        .iter()
        .filter(|w| membership[w.student_idx as usize] == SplitSlot::Test)
        .collect();
    evalsuite::evaluate_model(model, &test, &prepared.bank, batch_size)
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    use std::io::Write;
    let mut file = std::fs::File::create(path)?;
    writeln!(
        file,
        "epoch,total,kt,aux_question,aux_concept,contrastive,val_auc,val_accuracy"
    )?;
    for r in history {
        writeln!(
            file,
            "{},{},{},{},{},{},{},{}",
            r.epoch, r.total, r.kt, r.aux_question, r.aux_concept, r.contrastive, r.val_auc, r.val_accuracy
        )?;
    }
    Ok(())
}

// ---- grid search ---------------------------------------------------------------

/// Hyperparameter grids; defaults cover the protocol's search space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub lr: Vec<f64>,
    pub embed_dim: Vec<usize>,
    pub experts: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lambda1: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            lambda2: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            lr: vec![1e-3, 1e-4, 1e-5],
            embed_dim: vec![64, 256],
            experts: vec![2],
        }
    }
}

impl GridSpec {
    /// Cartesian product in deterministic order.
    pub fn cells(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut cells = Vec::new();
        for &embed_dim in &self.embed_dim {
            for &experts in &self.experts {
                for &lr in &self.lr {
                    for &lambda1 in &self.lambda1 {
                        for &lambda2 in &self.lambda2 {
                            let mut cfg = base.clone();
                            cfg.embed_dim = embed_dim;
                            cfg.experts = experts;
                            cfg.lr = lr;
                            cfg.lambda1 = lambda1;
                            cfg.lambda2 = lambda2;
                            cells.push(cfg);
                        }
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridRow {
    pub cell: usize,
    pub embed_dim: usize,
    pub experts: usize,
    pub lr: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub val_auc: f64,
    pub val_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

pub struct GridReport {
    pub rows: Vec<GridRow>,
    pub best_cell: usize,
    pub best_config: TrainConfig,
}

/// Exhaustive sweep over the grid, selecting by validation AUC (first cell
/// wins ties). Cells run in parallel when `jobs > 1`; the report order is
/// the grid order either way.
pub fn grid_search(
    prepared: &PreparedDataset,
    base: &TrainConfig,
    spec: &GridSpec,
    jobs: usize,
    out_dir: Option<&Path>,
) -> Result<GridReport> {
    let cells = spec.cells(base);
    if cells.is_empty() {
        return Err(Error::data("empty hyperparameter grid"));
    }
    let run_cell = |(idx, cfg): (usize, &TrainConfig)| -> Result<GridRow> {
        let cell_dir: Option<PathBuf> = out_dir.map(|d| d.join(format!("cell{idx:03}")));
        let outcome = train(prepared, cfg, cell_dir.as_deref())?;
        Ok(GridRow {
            cell: idx,
            embed_dim: cfg.embed_dim,
            experts: cfg.experts,
            lr: cfg.lr,
            lambda1: cfg.lambda1,
            lambda2: cfg.lambda2,
            val_auc: outcome.best_val_auc,
            val_accuracy: outcome.best_val_accuracy,
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.epochs_run,
        })
    };

    let rows: Vec<GridRow> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::data(format!("thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            cells
                .par_iter()
                .enumerate()
                .map(run_cell)
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        cells
            .iter()
            .enumerate()
            .map(run_cell)
            .collect::<Result<Vec<_>>>()?
    };

    let best_cell = rows
        .iter()
        .max_by(|a, b| {
            a.val_auc
                .partial_cmp(&b.val_auc)
                .unwrap()
                .then(b.cell.cmp(&a.cell))
        })
        .expect("non-empty grid")
        .cell;

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        use std::io::Write;
        let mut file = std::fs::File::create(dir.join("grid_report.csv"))?;
        writeln!(
            file,
            "cell,embed_dim,experts,lr,lambda1,lambda2,val_auc,val_accuracy,best_epoch,epochs_run"
        )?;
        for r in &rows {
            writeln!(
                file,
                "{},{},{},{},{},{},{},{},{},{}",
                r.cell, r.embed_dim, r.experts, r.lr, r.lambda1, r.lambda2, r.val_auc,
                r.val_accuracy, r.best_epoch, r.epochs_run
            )?;
        }
    }
    Ok(GridReport {
        rows,
        best_cell,
        best_config: cells[best_cell].clone(),
    })
}
