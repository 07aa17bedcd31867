//! Question-centric contrastive learning: difficulty banding, pair
//! construction for rarely seen questions, and the distance-margin loss.
//!
//! Anchors are the questions whose training-split interaction frequency sits
//! below a threshold `epsilon`. Candidate partners are the frequent
//! (`frequency >= epsilon`) questions with exactly the same concept set;
//! positives share the anchor's difficulty band, negatives sit at least
//! `min_band_gap` bands away. Anchor embeddings come from the live question
//! table, partner embeddings from the epoch-frozen snapshot.
//!
//! The loss hinges on Euclidean distances: positives pay `relu(d - margin_p)`.
//! For negatives the prose intent (push far) is `relu(margin_n - d)`, the
//! default `push-apart` mode; the `literal` mode keeps the printed
//! `relu(d - margin_n)` form. Both are selectable.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{QuestionBank, Window};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Real, Tensor};

/// Per-question interaction counts over the training split only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionStats {
    pub frequency: Vec<u64>,
    pub correct: Vec<u64>,
}

impl QuestionStats {
    pub fn global_accuracy(&self, question: usize) -> Option<f64> {
        let f = self.frequency[question];
        (f > 0).then(|| self.correct[question] as f64 / f as f64)
    }
}

/// Exact counts from the given (training) windows.
pub fn compute_question_stats(windows: &[&Window], question_count: usize) -> QuestionStats {
    let mut frequency = vec![0u64; question_count];
    let mut correct = vec![0u64; question_count];
    for window in windows {
        for step in &window.steps {
            frequency[step.question as usize] += 1;
            correct[step.question as usize] += u64::from(step.response);
        }
    }
    QuestionStats { frequency, correct }
}

/// Accuracy-interval difficulty classes. The first band is closed on both
/// ends, the rest are half-open `(lo, hi]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DifficultyBanding {
    pub edges: Vec<f64>,
    pub min_band_gap: usize,
}

impl Default for DifficultyBanding {
    fn default() -> Self {
        DifficultyBanding {
            edges: vec![0.0, 0.3, 0.4, 0.5, 0.6, 0.7, 1.0],
            min_band_gap: 2,
        }
    }
}

impl DifficultyBanding {
    pub fn band_count(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.edges.len() < 2 {
            return Err(Error::data("banding needs at least two edges"));
        }
        if self.edges.first() != Some(&0.0) || self.edges.last() != Some(&1.0) {
            return Err(Error::data("band edges must span [0, 1]"));
        }
        if !self.edges.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::data("band edges must be strictly increasing"));
        }
        if self.min_band_gap == 0 {
            return Err(Error::data("min band gap must be positive"));
        }
        Ok(())
    }

    pub fn band_of(&self, accuracy: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::data(format!(
                "accuracy {accuracy} outside [0, 1]"
            )));
        }
        for (band, pair) in self.edges.windows(2).enumerate() {
            if accuracy <= pair[1] {
                return Ok(band);
            }
        }
        Ok(self.band_count() - 1)
    }
}

/// Difficulty band per question; `None` for unobserved questions.
pub fn assign_bands(
    stats: &QuestionStats,
    banding: &DifficultyBanding,
) -> Result<Vec<Option<usize>>> {
    banding.validate()?;
    (0..stats.frequency.len())
        .map(|q| match stats.global_accuracy(q) {
            Some(acc) => Ok(Some(banding.band_of(acc)?)),
            None => Ok(None),
        })
        .collect()
}

/// Down-sampling caps per anchor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PairCaps {
    pub max_positives: usize,
    pub max_negatives: usize,
}

impl Default for PairCaps {
    fn default() -> Self {
        PairCaps {
            max_positives: 10,
            max_negatives: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorPairs {
    pub anchor_id: u32,
    pub band: usize,
    pub frequency: u64,
    pub positive_ids: Vec<u32>,
    pub negative_ids: Vec<u32>,
}

/// Anchor→(positives, negatives) collections plus the config that built them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairSet {
    pub epsilon: u64,
    pub banding: DifficultyBanding,
    pub caps: PairCaps,
    pub seed: u64,
    pub anchors: Vec<AnchorPairs>,
}

impl PairSet {
    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Build pairs: anchors are questions with `0 < frequency < epsilon`;
/// candidates share the exact concept set and have `frequency >= epsilon`;
/// positives share the anchor's band, negatives sit `min_band_gap` or more
/// bands away. Lists larger than the caps are down-sampled deterministically
/// from the seed. Anchors without positives are dropped.
pub fn build_pairs(
    bank: &QuestionBank,
    stats: &QuestionStats,
    banding: &DifficultyBanding,
    epsilon: u64,
    caps: PairCaps,
    seed: u64,
) -> Result<PairSet> {
    if epsilon == 0 {
        return Err(Error::data("epsilon must be positive"));
    }
    if stats.frequency.len() != bank.question_count {
        return Err(Error::data(format!(
            "stats cover {} questions, bank has {}",
            stats.frequency.len(),
            bank.question_count
        )));
    }
    let bands = assign_bands(stats, banding)?;

    // same-concept-set candidate pool, restricted to frequent questions
    let mut pool: std::collections::BTreeMap<&[u32], Vec<u32>> = std::collections::BTreeMap::new();
    for q in 0..bank.question_count {
        if stats.frequency[q] >= epsilon {
            pool.entry(bank.kc_map[q].as_slice())
                .or_default()
                .push(q as u32);
        }
    }

    let mut anchors = Vec::new();
    for q in 0..bank.question_count {
        let freq = stats.frequency[q];
        if freq == 0 || freq >= epsilon {
            continue;
        }
        let Some(anchor_band) = bands[q] else { continue };
        let Some(candidates) = pool.get(bank.kc_map[q].as_slice()) else {
            continue;
        };
        let mut positive_ids = Vec::new();
        let mut negative_ids = Vec::new();
        for &candidate in candidates {
            if candidate as usize == q {
                continue;
            }
            let band = bands[candidate as usize].expect("frequent questions are banded");
            if band == anchor_band {
                positive_ids.push(candidate);
            } else if band.abs_diff(anchor_band) >= banding.min_band_gap {
                negative_ids.push(candidate);
            }
        }
        if positive_ids.is_empty() {
            continue;
        }
        subsample(&mut positive_ids, caps.max_positives, seed, q as u64, 0);
        subsample(&mut negative_ids, caps.max_negatives, seed, q as u64, 1);
        anchors.push(AnchorPairs {
            anchor_id: q as u32,
            band: anchor_band,
            frequency: freq,
            positive_ids,
            negative_ids,
        });
    }
    if anchors.is_empty() {
        log::warn!("pair construction produced no anchors (epsilon={epsilon})");
    }
    Ok(PairSet {
        epsilon,
        banding: banding.clone(),
        caps,
        seed,
        anchors,
    })
}

fn subsample(ids: &mut Vec<u32>, cap: usize, seed: u64, anchor: u64, salt: u64) {
    if ids.len() <= cap {
        return;
    }
    let stream = seed
        ^ anchor.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    ids.shuffle(&mut rng);
    ids.truncate(cap);
    ids.sort_unstable();
}

/// Re-validate an emitted pair set against the constraints it was built
/// under. Used by tests and the pairs CLI.
pub fn validate_pairs(pairs: &PairSet, bank: &QuestionBank, stats: &QuestionStats) -> Result<()> {
    let bands = assign_bands(stats, &pairs.banding)?;
    for anchor in &pairs.anchors {
        let a = anchor.anchor_id as usize;
        if !(stats.frequency[a] > 0 && stats.frequency[a] < pairs.epsilon) {
            return Err(Error::data(format!(
                "anchor {a} frequency {} violates 0 < f < {}",
                stats.frequency[a], pairs.epsilon
            )));
        }
        for (kind, ids) in [("positive", &anchor.positive_ids), ("negative", &anchor.negative_ids)]
        {
            for &p in ids {
                let p = p as usize;
                if stats.frequency[p] < pairs.epsilon {
                    return Err(Error::data(format!("{kind} {p} is not frequent")));
                }
                if bank.kc_map[p] != bank.kc_map[a] {
                    return Err(Error::data(format!("{kind} {p} has a different kc set")));
                }
                let band = bands[p].expect("banded");
                let ok = match kind {
                    "positive" => band == anchor.band,
                    _ => band.abs_diff(anchor.band) >= pairs.banding.min_band_gap,
                };
                if !ok {
                    return Err(Error::data(format!(
                        "{kind} {p} band {band} incompatible with anchor band {}",
                        anchor.band
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Negative-hinge direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeMode {
    /// `relu(margin_n - d)`: penalize negatives that sit too close.
    PushApart,
    /// `relu(d - margin_n)`: the printed form; penalizes far negatives.
    Literal,
}

impl Default for NegativeMode {
    fn default() -> Self {
        NegativeMode::PushApart
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub margin_positive: f64,
    pub margin_negative: f64,
    pub temperature: f64,
    pub mode: NegativeMode,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            margin_positive: 0.5,
            margin_negative: 2.0,
            temperature: 1.0,
            mode: NegativeMode::PushApart,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin_positive <= 0.0 || self.margin_negative <= 0.0 {
            return Err(Error::numeric("contrastive margins must be positive"));
        }
        if self.margin_positive >= self.margin_negative {
            return Err(Error::numeric(format!(
                "positive margin {} must be below negative margin {}",
                self.margin_positive, self.margin_negative
            )));
        }
        if self.temperature <= 0.0 {
            return Err(Error::numeric("temperature must be positive"));
        }
        Ok(())
    }
}

/// Mean per-anchor hinge loss over the given anchors. `question_table`
/// carries gradients (anchor rows only); `snapshot` is the frozen copy used
/// for positives and negatives. Empty anchor lists yield a constant zero.
pub fn contrastive_loss<T: Real>(
    graph: &mut Graph<T>,
    question_table: Var,
    snapshot: Var,
    anchors: &[&AnchorPairs],
    config: &ContrastiveConfig,
) -> Result<Var> {
    config.validate()?;
    if anchors.is_empty() {
        log::warn!("contrastive loss over an empty pair set is zero");
        return Ok(graph.constant(Tensor::zeros(1, 1)));
    }
    let count = anchors.len();

    let mut pos_anchor_rows = Vec::new();
    let mut pos_partner_rows = Vec::new();
    let mut pos_segments = Vec::new();
    let mut neg_anchor_rows = Vec::new();
    let mut neg_partner_rows = Vec::new();
    let mut neg_segments = Vec::new();
    for (i, anchor) in anchors.iter().enumerate() {
        for &p in &anchor.positive_ids {
            pos_anchor_rows.push(anchor.anchor_id as usize);
            pos_partner_rows.push(p as usize);
            pos_segments.push(i);
        }
        for &n in &anchor.negative_ids {
            neg_anchor_rows.push(anchor.anchor_id as usize);
            neg_partner_rows.push(n as usize);
            neg_segments.push(i);
        }
    }

    let hinge_means = |graph: &mut Graph<T>,
                       anchor_rows: &[usize],
                       partner_rows: &[usize],
                       segments: &[usize],
                       scale: T,
                       shift: T|
     -> Result<Option<Var>> {
        if anchor_rows.is_empty() {
            return Ok(None);
        }
        let a = graph.gather_rows(question_table, anchor_rows)?;
        let p = graph.gather_rows(snapshot, partner_rows)?;
        let diff = graph.sub(a, p)?;
        let dist = graph.rows_norm(diff)?;
        let margined = graph.affine(dist, scale, shift)?;
        let hinge = graph.relu(margined)?;
        Ok(Some(graph.segment_mean_rows(hinge, segments, count)?))
    };

    let margin_p = T::from_f64(config.margin_positive);
    let margin_n = T::from_f64(config.margin_negative);
    let pos_term = hinge_means(
        graph,
        &pos_anchor_rows,
        &pos_partner_rows,
        &pos_segments,
        T::one(),
        -margin_p,
    )?;
    let (neg_scale, neg_shift) = match config.mode {
        NegativeMode::PushApart => (-T::one(), margin_n),
        NegativeMode::Literal => (T::one(), -margin_n),
    };
    let neg_term = hinge_means(
        graph,
        &neg_anchor_rows,
        &neg_partner_rows,
        &neg_segments,
        neg_scale,
        neg_shift,
    )?;

    let per_anchor = match (pos_term, neg_term) {
        (Some(p), Some(n)) => graph.add(p, n)?,
        (Some(p), None) => p,
        (None, Some(n)) => n,
        (None, None) => return Ok(graph.constant(Tensor::zeros(1, 1))),
    };
    let mean = graph.mean_all(per_anchor)?;
    graph.affine(mean, T::from_f64(1.0 / config.temperature), T::zero())
}

/// Deterministically sample an anchor mini-batch for one optimization step.
pub fn sample_anchors<'a>(
    pairs: &'a PairSet,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a AnchorPairs> {
    if pairs.anchors.len() <= batch_size {
        return pairs.anchors.iter().collect();
    }
    let mut indices: Vec<usize> = (0..pairs.anchors.len()).collect();
    indices.shuffle(rng);
    indices.truncate(batch_size);
    indices.sort_unstable();
    indices.into_iter().map(|i| &pairs.anchors[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::InteractionRecord;

    fn window_with(responses: &[(u32, u8)]) -> Window {
        Window {
            student_idx: 0,
            seq_index: 0,
            offset: 0,
            steps: responses
                .iter()
                .enumerate()
                .map(|(i, (q, r))| InteractionRecord {
                    question: *q,
                    kcs: vec![0],
                    response: *r,
                    timestamp: i as i64,
                })
                .collect(),
        }
    }

    #[test]
    fn stats_count_exactly() {
        let w = window_with(&[(0, 1), (0, 1), (0, 1), (0, 0), (1, 0)]);
        let stats = compute_question_stats(&[&w], 3);
        assert_eq!(stats.frequency, vec![4, 1, 0]);
        assert_eq!(stats.correct, vec![3, 0, 0]);
        assert_eq!(stats.global_accuracy(0), Some(0.75));
        assert_eq!(stats.global_accuracy(2), None);
    }

    #[test]
    fn band_boundaries() {
        let banding = DifficultyBanding::default();
        assert_eq!(banding.band_of(0.30).unwrap(), 0); // level A is closed
        assert_eq!(banding.band_of(0.35).unwrap(), 1); // level B
        assert_eq!(banding.band_of(1.0).unwrap(), 5); // level F
        assert_eq!(banding.band_of(0.0).unwrap(), 0);
        assert!(banding.band_of(1.5).is_err());
    }

    #[test]
    fn invalid_banding_rejected() {
        let bad = DifficultyBanding {
            edges: vec![0.0, 0.5, 0.4, 1.0],
            min_band_gap: 2,
        };
        assert!(bad.validate().is_err());
        let bad = DifficultyBanding {
            edges: vec![0.1, 0.5, 1.0],
            min_band_gap: 2,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn level_a_anchor_gets_c_through_f_negatives() {
        // bands: A=0 .. F=5; negatives need gap >= 2, so C, D, E, F qualify
        let banding = DifficultyBanding::default();
        let anchor_band = 0usize;
        let eligible: Vec<usize> = (0..banding.band_count())
            .filter(|b| b.abs_diff(anchor_band) >= banding.min_band_gap)
            .collect();
        assert_eq!(eligible, vec![2, 3, 4, 5]);
    }

    #[test]
    fn loss_zero_when_hinges_inactive() {
        // one anchor at origin, positive at distance 0.3, negative at 2.5
        let mut g = Graph::<f64>::new();
        let q = g.param(
            "q",
            Tensor::from_vec(3, 2, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap(),
            true,
        );
        let snap = g.constant(
            Tensor::from_vec(3, 2, vec![0.0, 0.0, 0.3, 0.0, 2.5, 0.0]).unwrap(),
        );
        let anchor = AnchorPairs {
            anchor_id: 0,
            band: 0,
            frequency: 1,
            positive_ids: vec![1],
            negative_ids: vec![2],
        };
        let config = ContrastiveConfig::default();
        let loss = contrastive_loss(&mut g, q, snap, &[&anchor], &config).unwrap();
        assert_eq!(g.value(loss).scalar_value(), 0.0);
    }

    #[test]
    fn loss_single_positive_arithmetic() {
        // positive at distance 1.5 with margin 0.5 and no negatives: loss 1.0
        let mut g = Graph::<f64>::new();
        let q = g.param("q", Tensor::zeros(2, 2), true);
        let snap = g.constant(Tensor::from_vec(2, 2, vec![0.0, 0.0, 1.5, 0.0]).unwrap());
        let anchor = AnchorPairs {
            anchor_id: 0,
            band: 0,
            frequency: 1,
            positive_ids: vec![1],
            negative_ids: vec![],
        };
        let config = ContrastiveConfig::default();
        let loss = contrastive_loss(&mut g, q, snap, &[&anchor], &config).unwrap();
        assert!((g.value(loss).scalar_value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_scalar_recomputation() {
        // two anchors, two positives and two negatives each, hand-set embeddings
        let d = 3;
        let embeddings: Vec<Vec<f64>> = vec![
            vec![0.1, 0.2, -0.3],  // anchor 0
            vec![0.4, -0.1, 0.2],  // anchor 1
            vec![0.0, 0.9, 0.1],   // partners ...
            vec![-0.5, 0.3, 0.8],
            vec![1.2, -0.7, 0.4],
            vec![0.6, 0.5, -0.9],
        ];
        let flat: Vec<f64> = embeddings.iter().flatten().copied().collect();
        let live = Tensor::from_vec(6, d, flat.clone()).unwrap();
        // snapshot deliberately differs from the live table
        let snap_t = Tensor::from_vec(6, d, flat.iter().map(|v| v * 0.8 + 0.05).collect()).unwrap();

        let anchors = vec![
            AnchorPairs {
                anchor_id: 0,
                band: 0,
                frequency: 2,
                positive_ids: vec![2, 3],
                negative_ids: vec![4, 5],
            },
            AnchorPairs {
                anchor_id: 1,
                band: 1,
                frequency: 3,
                positive_ids: vec![3, 4],
                negative_ids: vec![2, 5],
            },
        ];
        let config = ContrastiveConfig {
            margin_positive: 0.4,
            margin_negative: 1.1,
            temperature: 0.7,
            mode: NegativeMode::PushApart,
        };

        let mut g = Graph::<f64>::new();
        let q = g.param("q", live.clone(), true);
        let snap = g.constant(snap_t.clone());
        let refs: Vec<&AnchorPairs> = anchors.iter().collect();
        let loss = contrastive_loss(&mut g, q, snap, &refs, &config).unwrap();

        // independent scalar recomputation
        let dist = |a: usize, b: usize| -> f64 {
            (0..d)
                .map(|k| (live.get(a, k) - snap_t.get(b, k)).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let mut total = 0.0;
        for anchor in &anchors {
            let a = anchor.anchor_id as usize;
            let lp: f64 = anchor
                .positive_ids
                .iter()
                .map(|&p| (dist(a, p as usize) - config.margin_positive).max(0.0))
                .sum::<f64>()
                / anchor.positive_ids.len() as f64;
            let ln: f64 = anchor
                .negative_ids
                .iter()
                .map(|&n| (config.margin_negative - dist(a, n as usize)).max(0.0))
                .sum::<f64>()
                / anchor.negative_ids.len() as f64;
            total += lp + ln;
        }
        let expect = total / anchors.len() as f64 / config.temperature;
        assert!((g.value(loss).scalar_value() - expect).abs() < 1e-7);
    }

    #[test]
    fn temperature_scales_inversely() {
        let mut make = |tau: f64| -> f64 {
            let mut g = Graph::<f64>::new();
            let q = g.param("q", Tensor::zeros(2, 2), true);
            let snap = g.constant(Tensor::from_vec(2, 2, vec![0.0, 0.0, 1.5, 0.0]).unwrap());
            let anchor = AnchorPairs {
                anchor_id: 0,
                band: 0,
                frequency: 1,
                positive_ids: vec![1],
                negative_ids: vec![],
            };
            let config = ContrastiveConfig {
                temperature: tau,
                ..ContrastiveConfig::default()
            };
            let loss = contrastive_loss(&mut g, q, snap, &[&anchor], &config).unwrap();
            g.value(loss).scalar_value()
        };
        let base = make(1.0);
        for c in [0.5, 2.0, 4.0] {
            assert!((make(c) - base / c).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_confined_to_anchor_rows_of_live_table() {
        let mut g = Graph::<f64>::new();
        let live = Tensor::from_vec(4, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]).unwrap();
        let q = g.param("q", live.clone(), true);
        // snapshot registered exactly as the model wires it: non-trainable
        let snap = g.param("q_snapshot", live, false);
        let anchor = AnchorPairs {
            anchor_id: 1,
            band: 0,
            frequency: 1,
            positive_ids: vec![2],
            negative_ids: vec![3],
        };
        let config = ContrastiveConfig {
            margin_positive: 1e-6,
            margin_negative: 10.0,
            ..ContrastiveConfig::default()
        };
        let loss = contrastive_loss(&mut g, q, snap, &[&anchor], &config).unwrap();
        assert!(g.value(loss).scalar_value() > 0.0, "hinges must be active");
        let grads = g.backward(loss).unwrap();
        // frozen snapshot receives no gradient at all
        assert!(grads.get(snap).is_none());
        let gq = grads.get(q).unwrap();
        for row in 0..4 {
            let norm: f64 = (0..2).map(|c| gq.get(row, c).abs()).sum();
            if row == 1 {
                assert!(norm > 0.0, "anchor row must receive gradient");
            } else {
                assert_eq!(norm, 0.0, "non-anchor row {row} must stay unreached");
            }
        }
    }

    #[test]
    fn empty_pairset_is_zero_loss() {
        let mut g = Graph::<f64>::new();
        let q = g.param("q", Tensor::zeros(2, 2), true);
        let snap = g.constant(Tensor::zeros(2, 2));
        let loss =
            contrastive_loss(&mut g, q, snap, &[], &ContrastiveConfig::default()).unwrap();
        assert_eq!(g.value(loss).scalar_value(), 0.0);
    }

    #[test]
    fn invalid_margins_rejected() {
        let bad = ContrastiveConfig {
            margin_positive: 2.0,
            margin_negative: 1.0,
            ..ContrastiveConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
