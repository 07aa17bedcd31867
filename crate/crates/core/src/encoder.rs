//! Embedding tables and the question/concept interaction encodings.
//!
//! A step with question embedding `q`, averaged concept embedding `k` and
//! response `r` encodes as the `4d` vector `[q ⊕ k ⊕ 0 ⊕ 0]` when the answer
//! was correct and `[0 ⊕ 0 ⊕ q ⊕ k]` otherwise; the concept-level encoding is
//! the `3d` analogue `[k ⊕ 0 ⊕ 0]` / `[0 ⊕ 0 ⊕ k]`. The zero block is a
//! literal constant: the concatenation side carries the response.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{normal_init, ParamStore};
use crate::tensor::{Real, Tensor};

pub const QUESTION_TABLE: &str = "encoder.question_table";
pub const CONCEPT_TABLE: &str = "encoder.concept_table";
/// Epoch-frozen copy of the question table used to encode positive and
/// negative questions in the contrastive objective. Never trainable.
pub const QUESTION_SNAPSHOT: &str = "encoder.question_snapshot";

/// Standard deviation of embedding initialization.
pub const EMBED_INIT_STD: f64 = 0.02;

/// Insert question/concept tables (and the non-trainable snapshot) into a
/// fresh store.
pub fn init_tables<T: Real>(
    store: &mut ParamStore<T>,
    question_count: usize,
    concept_count: usize,
    embed_dim: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let q: Tensor<T> = normal_init(question_count, embed_dim, EMBED_INIT_STD, rng);
    store.insert(QUESTION_SNAPSHOT, q.clone(), false)?;
    store.insert(QUESTION_TABLE, q, true)?;
    store.insert(
        CONCEPT_TABLE,
        normal_init(concept_count, embed_dim, EMBED_INIT_STD, rng),
        true,
    )?;
    Ok(())
}

/// Convenience for tests: tables only, seeded.
pub fn init_tables_seeded<T: Real>(
    question_count: usize,
    concept_count: usize,
    embed_dim: usize,
    seed: u64,
) -> Result<ParamStore<T>> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_tables(&mut store, question_count, concept_count, embed_dim, &mut rng)?;
    Ok(store)
}

/// Refresh the frozen copy of the question table. Called at epoch
/// boundaries; the snapshot never carries gradients.
pub fn snapshot_question_table<T: Real>(store: &mut ParamStore<T>) -> Result<()> {
    store.copy_values(QUESTION_TABLE, QUESTION_SNAPSHOT)
}

/// Mean of the concept-table rows selected by `kc_ids`, as a `(d,1)` vector.
pub fn avg_kc_embedding<T: Real>(
    graph: &mut Graph<T>,
    concept_table: Var,
    kc_ids: &[u32],
) -> Result<Var> {
    if kc_ids.is_empty() {
        return Err(Error::data("avg_kc_embedding: empty kc set"));
    }
    let ids: Vec<usize> = kc_ids.iter().map(|&k| k as usize).collect();
    let rows = graph.gather_rows(concept_table, &ids)?;
    let mean = graph.segment_mean_rows(rows, &vec![0; ids.len()], 1)?;
    graph.transpose(mean)
}

/// Question-level interaction encoding, a `(4d,1)` vector.
pub fn encode_question_interaction<T: Real>(
    graph: &mut Graph<T>,
    question_table: Var,
    concept_table: Var,
    question: u32,
    kc_ids: &[u32],
    response: u8,
) -> Result<Var> {
    check_response(response)?;
    let d = graph.shape(question_table).1;
    let q_row = graph.gather_rows(question_table, &[question as usize])?;
    let q = graph.transpose(q_row)?;
    let k = avg_kc_embedding(graph, concept_table, kc_ids)?;
    let content = graph.concat_rows(&[q, k])?;
    let zeros = graph.constant(Tensor::zeros(2 * d, 1));
    if response == 1 {
        graph.concat_rows(&[content, zeros])
    } else {
        graph.concat_rows(&[zeros, content])
    }
}

/// Concept-level interaction encoding, a `(3d,1)` vector.
pub fn encode_concept_interaction<T: Real>(
    graph: &mut Graph<T>,
    concept_table: Var,
    kc_ids: &[u32],
    response: u8,
) -> Result<Var> {
    check_response(response)?;
    let d = graph.shape(concept_table).1;
    let k = avg_kc_embedding(graph, concept_table, kc_ids)?;
    let zeros = graph.constant(Tensor::zeros(2 * d, 1));
    if response == 1 {
        graph.concat_rows(&[k, zeros])
    } else {
        graph.concat_rows(&[zeros, k])
    }
}

fn check_response(response: u8) -> Result<()> {
    if response > 1 {
        return Err(Error::data(format!(
            "response must be 0 or 1, got {response}"
        )));
    }
    Ok(())
}
