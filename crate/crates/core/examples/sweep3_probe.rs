use qmckt::acquisition::CandidateActivation;
use qmckt::dataio::{load_interactions_from, prepare_dataset, ColumnSpec};
use qmckt::evalsuite::{metric_report, sliced_eval};
use qmckt::synth::{generate_dataset, SynthConfig};
use qmckt::trainer::{evaluate_test, train, TrainConfig};
use std::time::Instant;

fn run(tag: &str, synth: &SynthConfig, cfg: &TrainConfig) {
    let data = generate_dataset(synth).unwrap();
    let out = load_interactions_from(data.interactions_csv().as_bytes(), &ColumnSpec::default()).unwrap();
    let prepared = prepare_dataset(&out, 200, synth.seed, 0.2, 5).unwrap();
    let t = Instant::now();
    let outcome = train(&prepared, cfg, None).unwrap();
    let targets = evaluate_test(&prepared, &outcome.model, 64).unwrap();
    let all = metric_report(&targets, "all").unwrap();
    let rare = sliced_eval(&targets, "rare", |q| outcome.stats.frequency[q as usize] < cfg.epsilon).unwrap();
    println!(
        "{tag:<22} oracle={:.4} val={:.4} test={:.4} acc={:.4} rare={:.4}(n={}) ep={}/{} [{:.0?}]",
        data.oracle_auc().unwrap(), outcome.best_val_auc, all.auc, all.accuracy, rare.auc, rare.count,
        outcome.best_epoch, outcome.epochs_run, t.elapsed()
    );
}

fn main() {
    let seed = 1u64;
    let synth = SynthConfig {
        min_len: 60,
        max_len: 160,
        learning_increment: 0.03,
        seed,
        ..SynthConfig::default()
    };
    let base = TrainConfig {
        embed_dim: 32, experts: 3, lambda1: 1.0, lambda2: 1.0, lr: 1e-3,
        epochs: 150, patience: 10, batch_size: 32, epsilon: 30, seed,
        candidate_activation: CandidateActivation::Tanh,
        ..TrainConfig::default()
    };
    run("long tanh E=3", &synth, &base);
    run("long tanh E=2", &synth, &TrainConfig { experts: 2, ..base.clone() });
    run("long sig E=3", &synth, &TrainConfig { candidate_activation: CandidateActivation::Sigmoid, ..base.clone() });
    run("long tanh E=3 nocl", &synth, &TrainConfig { no_cl: true, ..base.clone() });
}
