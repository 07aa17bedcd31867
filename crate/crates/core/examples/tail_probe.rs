use qmckt::contrastive::{build_pairs, compute_question_stats, DifficultyBanding, PairCaps};
use qmckt::dataio::{load_interactions_from, prepare_dataset, ColumnSpec};
use qmckt::synth::{generate_dataset, SynthConfig};

fn main() {
    for seed in 1..=4u64 {
        let data = generate_dataset(&SynthConfig { seed, ..SynthConfig::default() }).unwrap();
        let freq = data.question_frequencies();
        let rare = freq.iter().filter(|&&f| f < 20).count();
        let out = load_interactions_from(data.interactions_csv().as_bytes(), &ColumnSpec::default()).unwrap();
        let prepared = prepare_dataset(&out, 200, seed, 0.2, 5).unwrap();
        // training split = folds != 0
        let membership = prepared.folds.membership(&prepared.bank).unwrap();
        let train: Vec<_> = prepared
            .windows
            .iter()
            .filter(|w| matches!(membership[w.student_idx as usize], qmckt::dataio::SplitSlot::Fold(f) if f != 0))
            .collect();
        let stats = compute_question_stats(&train, prepared.bank.question_count);
        let pairs = build_pairs(&prepared.bank, &stats, &DifficultyBanding::default(), 20, PairCaps::default(), seed).unwrap();
        let pos: usize = pairs.anchors.iter().map(|a| a.positive_ids.len()).sum();
        let neg: usize = pairs.anchors.iter().map(|a| a.negative_ids.len()).sum();
        println!(
            "seed={seed} interactions={} rare={rare} oracle={:.4} anchors={} pos={pos} neg={neg}",
            data.interactions.len(),
            data.oracle_auc().unwrap(),
            pairs.anchors.len(),
        );
    }
}
