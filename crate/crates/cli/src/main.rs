//! Command-line driver: preparation, stats, pair construction, training,
//! grid search, evaluation, state export, synthetic data, and gradient
//! checks.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
//! failure. Relative input paths resolve against `QMCKT_DATA_DIR` when that
//! variable is set.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qmckt::acquisition::CandidateActivation;
use qmckt::contrastive::{
    build_pairs, compute_question_stats, validate_pairs, DifficultyBanding, NegativeMode, PairCaps,
};
use qmckt::dataio::{
    compute_dataset_stats, load_interactions, load_prepared, prepare_dataset, save_prepared,
    ColumnSpec, SplitSlot,
};
use qmckt::error::Error;
use qmckt::evalsuite::{self, metric_report, sliced_eval};
use qmckt::model::{grad_check, GradCheckConfig, Model, ModelConfig};
use qmckt::predictor::{PredictionTrace, TraceRow};
use qmckt::synth::{generate_dataset, SynthConfig};
use qmckt::trainer::{self, GridSpec, TrainConfig};

#[derive(Parser)]
#[command(name = "qmckt", version, about = "Question- and concept-level knowledge tracing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest an interaction log and write the prepared directory.
    Prep(PrepArgs),
    /// Print dataset statistics for a prepared directory.
    Stats(StatsArgs),
    /// Build contrastive pairs and write them as JSON.
    Pairs(PairsArgs),
    /// Train one model configuration.
    Train(TrainArgs),
    /// Sweep the hyperparameter grid.
    Gridsearch(GridArgs),
    /// Evaluate a checkpoint on the held-out test students.
    Eval(EvalArgs),
    /// Export per-step knowledge states for one window.
    ExportStates(ExportArgs),
    /// Generate a synthetic interaction log with ground truth.
    Synth(SynthArgs),
    /// Verify model gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

fn resolve_input(path: &Path) -> PathBuf {
    if path.is_relative() {
        if let Ok(base) = std::env::var("QMCKT_DATA_DIR") {
            return PathBuf::from(base).join(path);
        }
    }
    path.to_path_buf()
}

#[derive(Args)]
struct PrepArgs {
    /// Interaction log (header: student_id,question_id,kc_ids,response,timestamp).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for bank.json, windows.bin, folds.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    max_len: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    test_frac: f64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Field delimiter of the input file.
    #[arg(long, default_value = ",")]
    delimiter: char,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    prepared: PathBuf,
}

#[derive(Args)]
struct PairsArgs {
    #[arg(long)]
    prepared: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Interaction-frequency threshold below which a question is an anchor.
    #[arg(long, default_value_t = 20)]
    epsilon: u64,
    #[arg(long, default_value_t = 2)]
    min_band_gap: usize,
    /// Band edges spanning [0,1], comma separated.
    #[arg(long, default_value = "0,0.3,0.4,0.5,0.6,0.7,1")]
    band_edges: String,
    #[arg(long, default_value_t = 10)]
    max_positives: usize,
    #[arg(long, default_value_t = 10)]
    max_negatives: usize,
    /// Validation fold excluded from the statistics (with the test set).
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Clone)]
struct TrainOverrides {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    experts: Option<usize>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epsilon: Option<u64>,
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma_p: Option<f64>,
    #[arg(long)]
    sigma_n: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    anchor_batch: Option<usize>,
    #[arg(long, value_enum)]
    negative_mode: Option<NegMode>,
    #[arg(long, value_enum)]
    candidate_activation: Option<Candidate>,
    #[arg(long)]
    no_mqka: bool,
    #[arg(long)]
    no_mcka: bool,
    #[arg(long)]
    no_moe: bool,
    #[arg(long)]
    no_cl: bool,
    #[arg(long)]
    no_irt: bool,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum NegMode {
    PushApart,
    Literal,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum Candidate {
    Sigmoid,
    Tanh,
}

impl TrainOverrides {
    fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        if let Some(v) = self.d {
            cfg.embed_dim = v;
        }
        if let Some(v) = self.experts {
            cfg.experts = v;
        }
        if let Some(v) = self.lambda1 {
            cfg.lambda1 = v;
        }
        if let Some(v) = self.lambda2 {
            cfg.lambda2 = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.fold {
            cfg.fold = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.sigma_p {
            cfg.contrastive.margin_positive = v;
        }
        if let Some(v) = self.sigma_n {
            cfg.contrastive.margin_negative = v;
        }
        if let Some(v) = self.tau {
            cfg.contrastive.temperature = v;
        }
        if let Some(v) = self.anchor_batch {
            cfg.anchor_batch = v;
        }
        if let Some(v) = self.negative_mode {
            cfg.contrastive.mode = match v {
                NegMode::PushApart => NegativeMode::PushApart,
                NegMode::Literal => NegativeMode::Literal,
            };
        }
        if let Some(v) = self.candidate_activation {
            cfg.candidate_activation = match v {
                Candidate::Sigmoid => CandidateActivation::Sigmoid,
                Candidate::Tanh => CandidateActivation::Tanh,
            };
        }
        cfg.no_mqka |= self.no_mqka;
        cfg.no_mcka |= self.no_mcka;
        cfg.no_moe |= self.no_moe;
        cfg.no_cl |= self.no_cl;
        cfg.no_irt |= self.no_irt;
        cfg
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    prepared: PathBuf,
    /// Run directory for config.json, history.csv, metrics.json, best.ckpt.
    #[arg(long)]
    out: PathBuf,
    /// Base configuration file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    prepared: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parallel cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Comma-separated grid values; defaults follow the protocol grids.
    #[arg(long)]
    lambda1_grid: Option<String>,
    #[arg(long)]
    lambda2_grid: Option<String>,
    #[arg(long)]
    lr_grid: Option<String>,
    #[arg(long)]
    d_grid: Option<String>,
    #[arg(long)]
    experts_grid: Option<String>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    prepared: PathBuf,
    /// Checkpoint directory (a run's best.ckpt).
    #[arg(long)]
    model: PathBuf,
    /// Metrics output (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-step prediction trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Rare-question threshold for the sliced report.
    #[arg(long, default_value_t = 20)]
    epsilon: u64,
    /// Validation fold the model was trained against (for slice statistics).
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    prepared: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Window index into the prepared dataset.
    #[arg(long, default_value_t = 0)]
    window: usize,
    /// Concept ids to track, comma separated (default: all).
    #[arg(long)]
    kcs: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Interaction CSV output path.
    #[arg(long)]
    out: PathBuf,
    /// Directory for theta.csv / difficulty.csv (optional).
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    students: usize,
    #[arg(long, default_value_t = 200)]
    questions: usize,
    #[arg(long, default_value_t = 10)]
    concepts: usize,
    #[arg(long, default_value_t = 2)]
    max_kcs: usize,
    #[arg(long, default_value_t = 30)]
    min_len: usize,
    #[arg(long, default_value_t = 90)]
    max_len: usize,
    #[arg(long, default_value_t = 1.2)]
    exponent: f64,
    #[arg(long, default_value_t = 0.02)]
    learning_increment: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Print the oracle ceiling AUC of the generated data.
    #[arg(long)]
    oracle: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    experts: usize,
    #[arg(long, default_value_t = 12)]
    questions: usize,
    #[arg(long, default_value_t = 5)]
    concepts: usize,
    #[arg(long, default_value_t = 6)]
    window_len: usize,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    #[arg(long, default_value_t = 20240)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Numeric(_) => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Error> {
    s.split(',')
        .map(|v| v.trim().parse::<T>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Error::data(format!("cannot parse {what} list `{s}`")))
}

fn load_train_config(path: Option<&Path>) -> Result<TrainConfig, Error> {
    match path {
        Some(p) => {
            let bytes = std::fs::read(resolve_input(p))?;
            Ok(serde_json::from_slice(&bytes)?)
        }
        None => Ok(TrainConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Prep(args) => {
            let spec = ColumnSpec {
                delimiter: args.delimiter as u8,
            };
            let outcome = load_interactions(&resolve_input(&args.data), &spec)?;
            for (student, len) in &outcome.dropped {
                log::warn!("dropped student `{student}` with {len} attempt(s)");
            }
            let prepared = prepare_dataset(
                &outcome,
                args.max_len,
                args.seed,
                args.test_frac,
                args.folds,
            )?;
            save_prepared(&args.out, &prepared)?;
            let stats = compute_dataset_stats(&prepared);
            println!("{}", serde_json::to_string_pretty(&stats)?);
            Ok(())
        }
        Command::Stats(args) => {
            let prepared = load_prepared(&resolve_input(&args.prepared))?;
            let stats = compute_dataset_stats(&prepared);
            println!("{}", serde_json::to_string_pretty(&stats)?);
            Ok(())
        }
        Command::Pairs(args) => {
            let prepared = load_prepared(&resolve_input(&args.prepared))?;
            let membership = prepared.folds.membership(&prepared.bank)?;
            let train: Vec<_> = prepared
                .windows
                .iter()
                .filter(|w| match membership[w.student_idx as usize] {
                    SplitSlot::Test => false,
                    SplitSlot::Fold(f) => args.fold != Some(f),
                })
                .collect();
            let stats = compute_question_stats(&train, prepared.bank.question_count);
            let banding = DifficultyBanding {
                edges: parse_list(&args.band_edges, "band edge")?,
                min_band_gap: args.min_band_gap,
            };
            let caps = PairCaps {
                max_positives: args.max_positives,
                max_negatives: args.max_negatives,
            };
            let pairs = build_pairs(
                &prepared.bank,
                &stats,
                &banding,
                args.epsilon,
                caps,
                args.seed,
            )?;
            validate_pairs(&pairs, &prepared.bank, &stats)?;
            pairs.save(&args.out)?;
            println!(
                "{} anchors ({} positives, {} negatives) -> {}",
                pairs.anchors.len(),
                pairs.anchors.iter().map(|a| a.positive_ids.len()).sum::<usize>(),
                pairs.anchors.iter().map(|a| a.negative_ids.len()).sum::<usize>(),
                args.out.display()
            );
            Ok(())
        }
        Command::Train(args) => {
            let prepared = load_prepared(&resolve_input(&args.prepared))?;
            let cfg = args.overrides.apply(load_train_config(args.config.as_deref())?);
            let outcome = trainer::train(&prepared, &cfg, Some(&args.out))?;
            println!(
                "best epoch {} of {}: val AUC {:.4}, accuracy {:.4}",
                outcome.best_epoch,
                outcome.epochs_run,
                outcome.best_val_auc,
                outcome.best_val_accuracy
            );
            Ok(())
        }
        Command::Gridsearch(args) => {
            let prepared = load_prepared(&resolve_input(&args.prepared))?;
            let base = args.overrides.apply(load_train_config(args.config.as_deref())?);
            let mut spec = GridSpec::default();
            if let Some(s) = &args.lambda1_grid {
                spec.lambda1 = parse_list(s, "lambda1")?;
            }
            if let Some(s) = &args.lambda2_grid {
                spec.lambda2 = parse_list(s, "lambda2")?;
            }
            if let Some(s) = &args.lr_grid {
                spec.lr = parse_list(s, "lr")?;
            }
            if let Some(s) = &args.d_grid {
                spec.embed_dim = parse_list(s, "embed dim")?;
            }
            if let Some(s) = &args.experts_grid {
                spec.experts = parse_list(s, "experts")?;
            }
            let report = trainer::grid_search(&prepared, &base, &spec, args.jobs, Some(&args.out))?;
            let best = &report.rows[report.best_cell];
            println!(
                "{} cells swept; best cell {} (d={}, E={}, lr={}, lambda1={}, lambda2={}) val AUC {:.4}",
                report.rows.len(),
                best.cell,
                best.embed_dim,
                best.experts,
                best.lr,
                best.lambda1,
                best.lambda2,
                best.val_auc
            );
            Ok(())
        }
        Command::Eval(args) => {
            let prepared = load_prepared(&resolve_input(&args.prepared))?;
            let model = Model::<f32>::load(&resolve_input(&args.model))?;
            let targets = trainer::evaluate_test(&prepared, &model, args.batch_size)?;

            let (train_windows, _, _) = trainer::split_windows(&prepared, args.fold)?;
            let stats = compute_question_stats(&train_windows, prepared.bank.question_count);
            let mut reports = vec![metric_report(&targets, "test-all")?];
            let rare = sliced_eval(&targets, "test-rare", |q| {
                stats.frequency[q as usize] < args.epsilon
            });
            if let Ok(report) = rare {
                reports.push(report);
            }
            let frequent = sliced_eval(&targets, "test-frequent", |q| {
                stats.frequency[q as usize] >= args.epsilon
            });
            if let Ok(report) = frequent {
                reports.push(report);
            }
            evalsuite::write_metrics(&args.out, &reports)?;
            for r in &reports {
                println!(
                    "{}: AUC {:.4}, accuracy {:.4} over {} steps",
                    r.slice, r.auc, r.accuracy, r.count
                );
            }
            if let Some(trace_path) = args.trace {
                let trace = PredictionTrace {
                    rows: targets
                        .iter()
                        .map(|t| TraceRow {
                            student_id: prepared.bank.students[t.student_idx as usize].clone(),
                            step: t.step,
                            question_id: prepared.bank.questions[t.question as usize],
                            alpha: t.question_score.unwrap_or(f64::NAN),
                            sigmoid_alpha: t
                                .question_score
                                .map(qmckt::graph::stable_sigmoid)
                                .unwrap_or(f64::NAN),
                            beta_bar: t.concept_score.unwrap_or(f64::NAN),
                            sigmoid_beta_bar: t
                                .concept_score
                                .map(qmckt::graph::stable_sigmoid)
                                .unwrap_or(f64::NAN),
                            r_hat: t.prediction,
                            r: t.response,
                        })
                        .collect(),
                };
                trace.write_csv(&trace_path)?;
            }
            Ok(())
        }
        Command::ExportStates(args) => {
            let prepared = load_prepared(&resolve_input(&args.prepared))?;
            let model = Model::<f32>::load(&resolve_input(&args.model))?;
            let window = prepared.windows.get(args.window).ok_or_else(|| {
                Error::data(format!(
                    "window index {} out of range ({} windows)",
                    args.window,
                    prepared.windows.len()
                ))
            })?;
            let kcs: Vec<u32> = match &args.kcs {
                Some(s) => parse_list(s, "kc id")?,
                None => (0..prepared.bank.concept_count as u32).collect(),
            };
            let csv = evalsuite::export_states(&model, window, &prepared.bank, &kcs)?;
            std::fs::write(&args.out, csv)?;
            println!(
                "exported {} steps for student `{}` -> {}",
                window.steps.len(),
                prepared.bank.students[window.student_idx as usize],
                args.out.display()
            );
            Ok(())
        }
        Command::Synth(args) => {
            let config = SynthConfig {
                students: args.students,
                questions: args.questions,
                concepts: args.concepts,
                max_kcs_per_question: args.max_kcs,
                min_len: args.min_len,
                max_len: args.max_len,
                popularity_exponent: args.exponent,
                learning_increment: args.learning_increment,
                seed: args.seed,
                ..SynthConfig::default()
            };
            let data = generate_dataset(&config)?;
            data.write_interactions(&args.out)?;
            if let Some(dir) = &args.ground_truth {
                data.write_ground_truth(dir)?;
            }
            println!(
                "{} interactions over {} students -> {}",
                data.interactions.len(),
                config.students,
                args.out.display()
            );
            if args.oracle {
                println!("oracle AUC: {:.4}", data.oracle_auc()?);
            }
            Ok(())
        }
        Command::Gradcheck(args) => {
            let check = GradCheckConfig {
                model: ModelConfig::new(args.questions, args.concepts, args.d, args.experts),
                window_len: args.window_len,
                batch: args.batch,
                lambda1: 0.7,
                lambda2: 0.9,
                seed: args.seed,
                step: args.step,
                tolerance: args.tolerance,
            };
            let report = grad_check(&check)?;
            let worst = report
                .checks
                .iter()
                .max_by(|a, b| a.max_rel_err.partial_cmp(&b.max_rel_err).unwrap());
            for c in &report.checks {
                let flag = if c.max_rel_err > report.tolerance {
                    " FAIL"
                } else {
                    ""
                };
                println!("{:<40} max rel err {:.3e}{flag}", c.name, c.max_rel_err);
            }
            if let Some(w) = worst {
                println!(
                    "worst: {} ({:.3e} at entry {:?})",
                    w.name, w.max_rel_err, w.worst_entry
                );
            }
            if report.pass {
                println!("PASS at tolerance {:.1e}", report.tolerance);
                Ok(())
            } else {
                Err(Error::numeric(format!(
                    "gradient check failed at tolerance {:.1e}",
                    report.tolerance
                )))
            }
        }
    }
}
