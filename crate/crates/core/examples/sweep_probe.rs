use qmckt::acquisition::CandidateActivation;
use qmckt::dataio::{load_interactions_from, prepare_dataset, ColumnSpec};
use qmckt::evalsuite::{metric_report, sliced_eval};
use qmckt::synth::{generate_dataset, SynthConfig};
use qmckt::trainer::{evaluate_test, train, TrainConfig};
use std::time::Instant;

fn main() {
    let seed = 1u64;
    let data = generate_dataset(&SynthConfig { seed, ..SynthConfig::default() }).unwrap();
    let out = load_interactions_from(data.interactions_csv().as_bytes(), &ColumnSpec::default()).unwrap();
    let prepared = prepare_dataset(&out, 200, seed, 0.2, 5).unwrap();

    let base = TrainConfig {
        embed_dim: 32, experts: 2, lambda1: 1.0, lambda2: 1.0, lr: 1e-3,
        epochs: 150, patience: 10, batch_size: 32, epsilon: 20, seed,
        ..TrainConfig::default()
    };
    let variants: Vec<(&str, TrainConfig)> = vec![
        ("sig lr=1e-3", base.clone()),
        ("sig lr=3e-3", TrainConfig { lr: 3e-3, ..base.clone() }),
        ("tanh lr=1e-3", TrainConfig { candidate_activation: CandidateActivation::Tanh, ..base.clone() }),
        ("tanh lr=3e-3", TrainConfig { lr: 3e-3, candidate_activation: CandidateActivation::Tanh, ..base.clone() }),
        ("sig d=16", TrainConfig { embed_dim: 16, ..base.clone() }),
        ("sig lam1=2", TrainConfig { lambda1: 2.0, ..base.clone() }),
        ("sig lam1=0", TrainConfig { lambda1: 0.0, ..base.clone() }),
    ];
    for (name, cfg) in variants {
        let t = Instant::now();
        let outcome = train(&prepared, &cfg, None).unwrap();
        let targets = evaluate_test(&prepared, &outcome.model, 64).unwrap();
        let all = metric_report(&targets, "all").unwrap();
        let rare = sliced_eval(&targets, "rare", |q| outcome.stats.frequency[q as usize] < 20).unwrap();
        println!(
            "{name:<14} val={:.4} test={:.4} acc={:.4} rare={:.4} best_ep={} ran={} [{:.0?}]",
            outcome.best_val_auc, all.auc, all.accuracy, rare.auc, outcome.best_epoch, outcome.epochs_run, t.elapsed()
        );
    }
}
