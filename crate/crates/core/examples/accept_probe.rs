use qmckt::dataio::{load_interactions_from, prepare_dataset, ColumnSpec};
use qmckt::evalsuite::{baseline_train_eval, metric_report, sliced_eval};
use qmckt::synth::{generate_dataset, SynthConfig};
use qmckt::trainer::{evaluate_test, train, TrainConfig};
use std::time::Instant;

fn main() {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(1);
    let epochs: usize = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(40);
    let t0 = Instant::now();
    let data = generate_dataset(&SynthConfig { seed, ..SynthConfig::default() }).unwrap();
    let out = load_interactions_from(data.interactions_csv().as_bytes(), &ColumnSpec::default()).unwrap();
    let prepared = prepare_dataset(&out, 200, seed, 0.2, 5).unwrap();
    println!("prep: {:.1?} oracle={:.4}", t0.elapsed(), data.oracle_auc().unwrap());

    let cfg = TrainConfig {
        embed_dim: 32,
        experts: 2,
        lambda1: 0.5,
        lambda2: 1.0,
        lr: 1e-3,
        epochs,
        patience: 10,
        batch_size: 64,
        epsilon: 20,
        seed,
        ..TrainConfig::default()
    };

    let t1 = Instant::now();
    let full = train(&prepared, &cfg, None).unwrap();
    println!(
        "full: best_epoch={} epochs_run={} val_auc={:.4} [{:.1?}]",
        full.best_epoch, full.epochs_run, full.best_val_auc, t1.elapsed()
    );
    let targets = evaluate_test(&prepared, &full.model, 64).unwrap();
    let all = metric_report(&targets, "all").unwrap();
    let rare = sliced_eval(&targets, "rare", |q| full.stats.frequency[q as usize] < 20).unwrap();
    println!("full test: auc={:.4} acc={:.4} n={} | rare auc={:.4} n={}", all.auc, all.accuracy, all.count, rare.auc, rare.count);

    let t2 = Instant::now();
    let mut no_cl_cfg = cfg.clone();
    no_cl_cfg.no_cl = true;
    let no_cl = train(&prepared, &no_cl_cfg, None).unwrap();
    let targets2 = evaluate_test(&prepared, &no_cl.model, 64).unwrap();
    let all2 = metric_report(&targets2, "all").unwrap();
    let rare2 = sliced_eval(&targets2, "rare", |q| no_cl.stats.frequency[q as usize] < 20).unwrap();
    println!(
        "no-cl test: auc={:.4} rare auc={:.4} (epochs={}) [{:.1?}]",
        all2.auc, rare2.auc, no_cl.epochs_run, t2.elapsed()
    );

    let t3 = Instant::now();
    let (base_report, base_outcome) = baseline_train_eval(&prepared, &cfg).unwrap();
    println!(
        "baseline test: auc={:.4} acc={:.4} (epochs={}) [{:.1?}]",
        base_report.auc, base_report.accuracy, base_outcome.epochs_run, t3.elapsed()
    );
    println!("total {:.1?}", t0.elapsed());
}
