use qmckt::dataio::{load_interactions_from, prepare_dataset, ColumnSpec};
use qmckt::evalsuite::metric_report;
use qmckt::synth::{generate_dataset, SynthConfig};
use qmckt::trainer::{evaluate_test, train, TrainConfig};

fn main() {
    let seed = 1u64;
    let data = generate_dataset(&SynthConfig { seed, ..SynthConfig::default() }).unwrap();
    let out = load_interactions_from(data.interactions_csv().as_bytes(), &ColumnSpec::default()).unwrap();
    let prepared = prepare_dataset(&out, 200, seed, 0.2, 5).unwrap();
    let cfg = TrainConfig {
        embed_dim: 32, experts: 2, lambda1: 1.0, lambda2: 1.0, lr: 1e-3,
        epochs: 60, patience: 10, batch_size: 32, epsilon: 20, seed,
        ..TrainConfig::default()
    };
    let outcome = train(&prepared, &cfg, None).unwrap();
    let targets = evaluate_test(&prepared, &outcome.model, 64).unwrap();
    let all = metric_report(&targets, "all").unwrap();
    let below: usize = targets.iter().filter(|t| t.prediction < 0.5).count();
    let label_rate = targets.iter().filter(|t| t.response == 1).count() as f64 / targets.len() as f64;
    let mean_pred: f64 = targets.iter().map(|t| t.prediction).sum::<f64>() / targets.len() as f64;
    let mean_alpha: f64 = targets.iter().filter_map(|t| t.question_score).sum::<f64>() / targets.len() as f64;
    let mean_beta: f64 = targets.iter().filter_map(|t| t.concept_score).sum::<f64>() / targets.len() as f64;
    println!(
        "auc={:.4} acc={:.4} | preds<0.5: {below}/{} | base_rate={label_rate:.4} mean_pred={mean_pred:.4} mean_alpha={mean_alpha:.4} mean_beta={mean_beta:.4}",
        all.auc, all.accuracy, targets.len()
    );
    for name in ["mqka.expert0.scale", "mcka.expert0.scale"] {
        let t = outcome.model.store.tensor(name).unwrap();
        let neg = t.iter().filter(|v| **v < 0.0).count();
        let min = t.iter().cloned().fold(f32::INFINITY, f32::min);
        let max = t.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        println!("{name}: {} entries, {neg} negative, range [{min:.3}, {max:.3}]", t.len());
    }
    // alpha/beta histograms
    let mut a_hist = [0usize; 6];
    for t in &targets {
        let a = t.question_score.unwrap() + t.concept_score.unwrap();
        let b = ((a + 1.5) / 0.5).clamp(0.0, 5.0) as usize;
        a_hist[b] += 1;
    }
    println!("logit histogram (buckets of 0.5 from -1.5): {a_hist:?}");
}
