use qmckt::acquisition::CandidateActivation;
use qmckt::contrastive::{ContrastiveConfig, NegativeMode};
use qmckt::dataio::{load_interactions_from, prepare_dataset, ColumnSpec, PreparedDataset};
use qmckt::evalsuite::{metric_report, sliced_eval};
use qmckt::synth::{generate_dataset, SynthConfig};
use qmckt::trainer::{evaluate_test, train, TrainConfig};

fn prep(seed: u64) -> PreparedDataset {
    let synth = SynthConfig { min_len: 60, max_len: 160, learning_increment: 0.03, seed, ..SynthConfig::default() };
    let data = generate_dataset(&synth).unwrap();
    let out = load_interactions_from(data.interactions_csv().as_bytes(), &ColumnSpec::default()).unwrap();
    prepare_dataset(&out, 200, seed, 0.2, 5).unwrap()
}

fn main() {
    let base = TrainConfig {
        embed_dim: 32, experts: 3, lambda1: 1.0, lambda2: 1.0, lr: 1e-3,
        epochs: 150, patience: 10, batch_size: 32, epsilon: 30, seed: 1,
        candidate_activation: CandidateActivation::Tanh,
        ..TrainConfig::default()
    };
    let margin_sets = [
        ("sp=.25 sn=1.0 l2=1", 0.25, 1.0, 1.0),
        ("sp=.1 sn=.75 l2=2", 0.10, 0.75, 2.0),
        ("sp=.5 sn=2 l2=2", 0.5, 2.0, 2.0),
    ];
    for seed in [1u64, 2] {
        let prepared = prep(seed);
        for (tag, sp, sn, l2) in margin_sets {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.lambda2 = l2;
            cfg.contrastive = ContrastiveConfig {
                margin_positive: sp,
                margin_negative: sn,
                temperature: 1.0,
                mode: NegativeMode::PushApart,
            };
            let with_cl = train(&prepared, &cfg, None).unwrap();
            let mut off = cfg.clone();
            off.no_cl = true;
            let without = train(&prepared, &off, None).unwrap();
            let t_on = evaluate_test(&prepared, &with_cl.model, 64).unwrap();
            let t_off = evaluate_test(&prepared, &without.model, 64).unwrap();
            let rare_on = sliced_eval(&t_on, "r", |q| with_cl.stats.frequency[q as usize] < cfg.epsilon).unwrap();
            let rare_off = sliced_eval(&t_off, "r", |q| without.stats.frequency[q as usize] < cfg.epsilon).unwrap();
            let all_on = metric_report(&t_on, "a").unwrap();
            let all_off = metric_report(&t_off, "a").unwrap();
            println!(
                "seed={seed} {tag:<20} all: {:.4} vs {:.4} | rare: {:.4} vs {:.4} (delta {:+.4})",
                all_on.auc, all_off.auc, rare_on.auc, rare_off.auc, rare_on.auc - rare_off.auc
            );
        }
    }
}
