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
    let rare = sliced_eval(&targets, "rare", |q| outcome.stats.frequency[q as usize] < 20).unwrap();
    println!(
        "{tag:<20} oracle={:.4} val={:.4} test={:.4} acc={:.4} rare={:.4} ep={}/{} [{:.0?}]",
        data.oracle_auc().unwrap(), outcome.best_val_auc, all.auc, all.accuracy, rare.auc,
        outcome.best_epoch, outcome.epochs_run, t.elapsed()
    );
}

fn main() {
    let seed = 1u64;
    let synth = SynthConfig { seed, ..SynthConfig::default() };
    let base = TrainConfig {
        embed_dim: 32, experts: 2, lambda1: 1.0, lambda2: 1.0, lr: 1e-3,
        epochs: 150, patience: 10, batch_size: 32, epsilon: 20, seed,
        candidate_activation: CandidateActivation::Tanh,
        ..TrainConfig::default()
    };
    run("tanh d=64", &synth, &TrainConfig { embed_dim: 64, ..base.clone() });
    run("tanh bs=16", &synth, &TrainConfig { batch_size: 16, ..base.clone() });
    run("tanh E=3", &synth, &TrainConfig { experts: 3, ..base.clone() });
    let strong = SynthConfig { ability_std: 1.4, difficulty_std: 0.9, ..synth.clone() };
    run("strong tanh d=32", &strong, &base);
    run("strong sig d=32", &strong, &TrainConfig { candidate_activation: CandidateActivation::Sigmoid, ..base.clone() });
}
