//! Interaction-log ingestion, question bank construction, sequence
//! windowing, and deterministic train/validation/test splits.
//!
//! Input is delimiter-separated text with a header and the columns
//! `student_id,question_id,kc_ids,response,timestamp` where `kc_ids` is a
//! `|`-separated list of integers. Preparation writes three artifacts:
//!
//! - `bank.json` — dense id maps (students, questions, concepts) and the
//!   question→concept map.
//! - `windows.bin` — binary window records. Layout, all little-endian:
//!   magic `QKTW`, version `u32`, window count `u32`; then per window
//!   `student_idx u32, seq_index u32, offset u32, len u32` followed by
//!   `len` steps of `question u32, response u8`.
//! - `folds.json` — the seeded student-level test/fold assignment.
//!
//! Timestamps order records and are not persisted into windows.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"QKTW";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_MAX_LEN: usize = 200;
pub const MIN_SEQUENCE_LEN: usize = 3;

/// One student–question event with original (file) identifiers.
#[derive(Debug, Clone)]
pub struct RawRecord {
    pub question: u64,
    pub kcs: Vec<u64>,
    pub response: u8,
    pub timestamp: i64,
}

/// All interactions of one student, ordered by timestamp.
#[derive(Debug, Clone)]
pub struct RawSequence {
    pub student: String,
    pub records: Vec<RawRecord>,
}

/// One event after dense re-indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub question: u32,
    pub kcs: Vec<u32>,
    pub response: u8,
    pub timestamp: i64,
}

/// Dense-id sequence; `student_idx` indexes into [`QuestionBank::students`].
#[derive(Debug, Clone)]
pub struct StudentSequence {
    pub student_idx: u32,
    pub records: Vec<InteractionRecord>,
}

/// Dense id maps plus the question→concept relation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionBank {
    pub question_count: usize,
    pub concept_count: usize,
    /// Original student ids in dense order.
    pub students: Vec<String>,
    /// Original question ids in dense order.
    pub questions: Vec<u64>,
    /// Original concept ids in dense order.
    pub concepts: Vec<u64>,
    /// Dense concept ids per dense question id; sorted, duplicate-free.
    pub kc_map: Vec<Vec<u32>>,
}

impl QuestionBank {
    pub fn kcs_of(&self, question: u32) -> &[u32] {
        &self.kc_map[question as usize]
    }
}

/// Consecutive slice of one student's sequence, at most `max_len` steps.
#[derive(Debug, Clone)]
pub struct Window {
    pub student_idx: u32,
    pub seq_index: u32,
    pub offset: u32,
    pub steps: Vec<InteractionRecord>,
}

/// Seeded student-level split: one held-out test set plus `k` folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub seed: u64,
    pub test_fraction: f64,
    pub fold_count: usize,
    pub test: Vec<String>,
    pub folds: Vec<Vec<String>>,
}

/// Where a student landed in the split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSlot {
    Test,
    Fold(usize),
}

impl FoldAssignment {
    /// Per-student-index slot lookup for a bank's students.
    pub fn membership(&self, bank: &QuestionBank) -> Result<Vec<SplitSlot>> {
        let mut by_name: BTreeMap<&str, SplitSlot> = BTreeMap::new();
        for s in &self.test {
            by_name.insert(s.as_str(), SplitSlot::Test);
        }
        for (f, fold) in self.folds.iter().enumerate() {
            for s in fold {
                by_name.insert(s.as_str(), SplitSlot::Fold(f));
            }
        }
        bank.students
            .iter()
            .map(|s| {
                by_name
                    .get(s.as_str())
                    .copied()
                    .ok_or_else(|| Error::data(format!("student `{s}` missing from fold assignment")))
            })
            .collect()
    }
}

/// Fully prepared dataset: bank + windows + split, reproducible from seed.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub bank: QuestionBank,
    pub windows: Vec<Window>,
    pub folds: FoldAssignment,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStats {
    pub students: usize,
    pub interactions: usize,
    pub questions: usize,
    pub concepts: usize,
    /// Mean number of concepts attached to a question.
    pub avg_kcs_per_question: f64,
    /// Questions divided by concepts.
    pub avg_questions_per_kc: f64,
    /// Interactions divided by questions.
    pub avg_interactions_per_question: f64,
}

/// Parsing options for interaction logs.
#[derive(Debug, Clone)]
pub struct ColumnSpec {
    pub delimiter: u8,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec { delimiter: b',' }
    }
}

/// Loader output: kept sequences plus the students dropped by the
/// minimum-length rule, for reporting.
#[derive(Debug)]
pub struct LoadOutcome {
    pub sequences: Vec<RawSequence>,
    /// (student id, observed length) for sequences shorter than 3.
    pub dropped: Vec<(String, usize)>,
}

// ---- loading ----------------------------------------------------------------

/// Read an interaction log, group per student, sort by timestamp (stable on
/// ties), and drop students with fewer than 3 attempts.
pub fn load_interactions(path: &Path, spec: &ColumnSpec) -> Result<LoadOutcome> {
    let file = fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    load_interactions_from(file, spec)
}

pub fn load_interactions_from(reader: impl Read, spec: &ColumnSpec) -> Result<LoadOutcome> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .delimiter(spec.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = csv_reader
        .headers()
        .map_err(|e| Error::data(format!("cannot read header: {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data(format!("missing required column `{name}`")))
    };
    let c_student = col("student_id")?;
    let c_question = col("question_id")?;
    let c_kcs = col("kc_ids")?;
    let c_response = col("response")?;
    let c_timestamp = col("timestamp")?;

    // Students keyed by first appearance so output order is deterministic.
    let mut order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<String, Vec<RawRecord>> = BTreeMap::new();

    for (idx, row) in csv_reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let row = row.map_err(|e| Error::data(format!("line {line}: malformed row: {e}")))?;
        let field = |c: usize| -> Result<&str> {
            row.get(c)
                .ok_or_else(|| Error::data(format!("line {line}: missing field {c}")))
        };

        let student = field(c_student)?.to_string();
        if student.is_empty() {
            return Err(Error::data(format!("line {line}: empty student_id")));
        }
        let question: u64 = field(c_question)?
            .parse()
            .map_err(|_| Error::data(format!("line {line}: question_id is not an integer")))?;
        let kc_field = field(c_kcs)?;
        if kc_field.is_empty() {
            return Err(Error::data(format!("line {line}: empty kc_ids field")));
        }
        let mut kcs = Vec::new();
        for part in kc_field.split('|') {
            let kc: u64 = part.trim().parse().map_err(|_| {
                Error::data(format!("line {line}: kc id `{part}` is not an integer"))
            })?;
            if kcs.contains(&kc) {
                return Err(Error::data(format!("line {line}: duplicate kc id {kc}")));
            }
            kcs.push(kc);
        }
        let response: i64 = field(c_response)?
            .parse()
            .map_err(|_| Error::data(format!("line {line}: response is not an integer")))?;
        if response != 0 && response != 1 {
            return Err(Error::data(format!(
                "line {line}: response must be 0 or 1, got {response}"
            )));
        }
        let timestamp: i64 = field(c_timestamp)?
            .parse()
            .map_err(|_| Error::data(format!("line {line}: timestamp is not an integer")))?;

        if !grouped.contains_key(&student) {
            order.push(student.clone());
        }
        grouped.entry(student).or_default().push(RawRecord {
            question,
            kcs,
            response: response as u8,
            timestamp,
        });
    }

    let mut sequences = Vec::new();
    let mut dropped = Vec::new();
    for student in order {
        let mut records = grouped.remove(&student).expect("grouped");
        records.sort_by_key(|r| r.timestamp); // stable: input order on ties
        if records.len() < MIN_SEQUENCE_LEN {
            log::warn!(
                "dropping student `{student}`: only {} attempt(s), minimum is {MIN_SEQUENCE_LEN}",
                records.len()
            );
            dropped.push((student, records.len()));
            continue;
        }
        sequences.push(RawSequence { student, records });
    }
    Ok(LoadOutcome { sequences, dropped })
}

// ---- question bank -----------------------------------------------------------

/// Build dense id maps over the retained sequences. Ids are assigned in
/// first-appearance order (students in load order, records in time order).
/// A question seen with two different concept sets is a data error.
pub fn build_question_bank(sequences: &[RawSequence]) -> Result<QuestionBank> {
    if sequences.is_empty() {
        return Err(Error::data("no sequences to build a question bank from"));
    }
    let mut students = Vec::new();
    let mut questions: Vec<u64> = Vec::new();
    let mut q_index: BTreeMap<u64, u32> = BTreeMap::new();
    let mut concepts: Vec<u64> = Vec::new();
    let mut k_index: BTreeMap<u64, u32> = BTreeMap::new();
    let mut kc_map: Vec<Vec<u32>> = Vec::new();

    for seq in sequences {
        students.push(seq.student.clone());
        for rec in &seq.records {
            let mut dense_kcs: Vec<u32> = Vec::with_capacity(rec.kcs.len());
            for kc in &rec.kcs {
                let id = *k_index.entry(*kc).or_insert_with(|| {
                    concepts.push(*kc);
                    (concepts.len() - 1) as u32
                });
                dense_kcs.push(id);
            }
            dense_kcs.sort_unstable();
            match q_index.get(&rec.question) {
                Some(&dense_q) => {
                    if kc_map[dense_q as usize] != dense_kcs {
                        return Err(Error::data(format!(
                            "question {} observed with inconsistent kc sets",
                            rec.question
                        )));
                    }
                }
                None => {
                    let dense_q = questions.len() as u32;
                    q_index.insert(rec.question, dense_q);
                    questions.push(rec.question);
                    kc_map.push(dense_kcs);
                }
            }
        }
    }
    Ok(QuestionBank {
        question_count: questions.len(),
        concept_count: concepts.len(),
        students,
        questions,
        concepts,
        kc_map,
    })
}

/// Map raw sequences onto dense ids using the bank.
pub fn reindex_sequences(
    bank: &QuestionBank,
    sequences: &[RawSequence],
) -> Result<Vec<StudentSequence>> {
    let q_index: BTreeMap<u64, u32> = bank
        .questions
        .iter()
        .enumerate()
        .map(|(i, q)| (*q, i as u32))
        .collect();
    let s_index: BTreeMap<&str, u32> = bank
        .students
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();
    sequences
        .iter()
        .map(|seq| {
            let student_idx = *s_index
                .get(seq.student.as_str())
                .ok_or_else(|| Error::data(format!("student `{}` not in bank", seq.student)))?;
            let records = seq
                .records
                .iter()
                .map(|rec| {
                    let question = *q_index
                        .get(&rec.question)
                        .ok_or_else(|| Error::data(format!("question {} not in bank", rec.question)))?;
                    Ok(InteractionRecord {
                        question,
                        kcs: bank.kc_map[question as usize].clone(),
                        response: rec.response,
                        timestamp: rec.timestamp,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(StudentSequence {
                student_idx,
                records,
            })
        })
        .collect()
}

// ---- windowing ----------------------------------------------------------------

/// Split each sequence into consecutive non-overlapping windows of at most
/// `max_len` steps. A trailing fragment shorter than 3 is merged into the
/// previous window when the combined length fits, rebalanced from the
/// previous window's tail when it does not, and dropped (with a warning)
/// only when neither keeps every window within `[3, max_len]`.
pub fn window_sequences(sequences: &[StudentSequence], max_len: usize) -> Result<Vec<Window>> {
    if max_len < MIN_SEQUENCE_LEN {
        return Err(Error::data(format!(
            "max_len must be at least {MIN_SEQUENCE_LEN}, got {max_len}"
        )));
    }
    let mut windows = Vec::new();
    for (seq_index, seq) in sequences.iter().enumerate() {
        let mut bounds: Vec<(usize, usize)> = Vec::new();
        let mut at = 0;
        while at < seq.records.len() {
            let end = (at + max_len).min(seq.records.len());
            bounds.push((at, end));
            at = end;
        }
        if bounds.len() >= 2 {
            let (last_start, last_end) = *bounds.last().unwrap();
            let last_len = last_end - last_start;
            if last_len < MIN_SEQUENCE_LEN {
                let (prev_start, prev_end) = bounds[bounds.len() - 2];
                let prev_len = prev_end - prev_start;
                if prev_len + last_len <= max_len {
                    bounds.truncate(bounds.len() - 2);
                    bounds.push((prev_start, last_end));
                } else {
                    let need = MIN_SEQUENCE_LEN - last_len;
                    if prev_len - need >= MIN_SEQUENCE_LEN {
                        bounds.truncate(bounds.len() - 2);
                        bounds.push((prev_start, prev_end - need));
                        bounds.push((prev_end - need, last_end));
                    } else {
                        log::warn!(
                            "dropping trailing fragment of {last_len} record(s) for student index {}",
                            seq.student_idx
                        );
                        bounds.pop();
                    }
                }
            }
        }
        for (start, end) in bounds {
            windows.push(Window {
                student_idx: seq.student_idx,
                seq_index: seq_index as u32,
                offset: start as u32,
                steps: seq.records[start..end].to_vec(),
            });
        }
    }
    Ok(windows)
}

// ---- folds --------------------------------------------------------------------

/// Deterministic student-level split: `round(test_fraction * S)` students go
/// to the test set, the rest round-robin into `k` near-equal folds. A pure
/// function of the sorted student ids and the seed.
pub fn split_folds(
    student_ids: &[String],
    seed: u64,
    test_fraction: f64,
    k: usize,
) -> Result<FoldAssignment> {
    if k == 0 {
        return Err(Error::data("fold count must be positive"));
    }
    if student_ids.len() < k + 1 {
        return Err(Error::data(format!(
            "need at least {} students for {k}-fold cross validation, got {}",
            k + 1,
            student_ids.len()
        )));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::data(format!(
            "test fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let mut ids: Vec<String> = student_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != student_ids.len() {
        return Err(Error::data("duplicate student ids in fold split input"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n_test = (test_fraction * ids.len() as f64).round() as usize;
    let remaining = ids.len() - n_test;
    if remaining < k {
        return Err(Error::data(format!(
            "only {remaining} students left for {k} folds after the test split"
        )));
    }
    let test: Vec<String> = ids[..n_test].to_vec();
    let mut folds: Vec<Vec<String>> = vec![Vec::new(); k];
    for (i, id) in ids[n_test..].iter().enumerate() {
        folds[i % k].push(id.clone());
    }
    Ok(FoldAssignment {
        seed,
        test_fraction,
        fold_count: k,
        test,
        folds,
    })
}

// ---- stats --------------------------------------------------------------------

pub fn compute_dataset_stats(prepared: &PreparedDataset) -> DatasetStats {
    let interactions: usize = prepared.windows.iter().map(|w| w.steps.len()).sum();
    let bank = &prepared.bank;
    let kc_links: usize = bank.kc_map.iter().map(|k| k.len()).sum();
    let q = bank.question_count.max(1) as f64;
    let m = bank.concept_count.max(1) as f64;
    DatasetStats {
        students: bank.students.len(),
        interactions,
        questions: bank.question_count,
        concepts: bank.concept_count,
        avg_kcs_per_question: kc_links as f64 / q,
        avg_questions_per_kc: bank.question_count as f64 / m,
        avg_interactions_per_question: interactions as f64 / q,
    }
}

// ---- preparation pipeline -------------------------------------------------------

/// Full preparation: bank, dense windows, seeded split.
pub fn prepare_dataset(
    outcome: &LoadOutcome,
    max_len: usize,
    seed: u64,
    test_fraction: f64,
    k: usize,
) -> Result<PreparedDataset> {
    let bank = build_question_bank(&outcome.sequences)?;
    let dense = reindex_sequences(&bank, &outcome.sequences)?;
    let windows = window_sequences(&dense, max_len)?;
    let folds = split_folds(&bank.students, seed, test_fraction, k)?;
    Ok(PreparedDataset {
        bank,
        windows,
        folds,
        seed,
    })
}

pub fn save_prepared(dir: &Path, prepared: &PreparedDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("bank.json"),
        serde_json::to_vec_pretty(&prepared.bank)?,
    )?;
    fs::write(
        dir.join("folds.json"),
        serde_json::to_vec_pretty(&prepared.folds)?,
    )?;

    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(prepared.windows.len() as u32).to_le_bytes());
    for w in &prepared.windows {
        out.extend_from_slice(&w.student_idx.to_le_bytes());
        out.extend_from_slice(&w.seq_index.to_le_bytes());
        out.extend_from_slice(&w.offset.to_le_bytes());
        out.extend_from_slice(&(w.steps.len() as u32).to_le_bytes());
        for step in &w.steps {
            out.extend_from_slice(&step.question.to_le_bytes());
            out.push(step.response);
        }
    }
    let mut file = fs::File::create(dir.join("windows.bin"))?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load_prepared(dir: &Path) -> Result<PreparedDataset> {
    let bank: QuestionBank = serde_json::from_slice(&fs::read(dir.join("bank.json"))?)?;
    let folds: FoldAssignment = serde_json::from_slice(&fs::read(dir.join("folds.json"))?)?;
    let bytes = fs::read(dir.join("windows.bin"))?;

    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
        if *at + n > bytes.len() {
            return Err(Error::format("windows.bin truncated"));
        }
        let s = &bytes[*at..*at + n];
        *at += n;
        Ok(s)
    };
    let u32_at = |at: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(at, 4)?.try_into().unwrap()))
    };

    if take(&mut at, 4)? != MAGIC {
        return Err(Error::format("windows.bin: bad magic"));
    }
    let version = u32_at(&mut at)?;
    if version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "windows.bin: unsupported version {version}"
        )));
    }
    let count = u32_at(&mut at)? as usize;
    let mut windows = Vec::with_capacity(count);
    for _ in 0..count {
        let student_idx = u32_at(&mut at)?;
        let seq_index = u32_at(&mut at)?;
        let offset = u32_at(&mut at)?;
        let len = u32_at(&mut at)? as usize;
        let mut steps = Vec::with_capacity(len);
        for i in 0..len {
            let question = u32_at(&mut at)?;
            let response = take(&mut at, 1)?[0];
            if question as usize >= bank.question_count {
                return Err(Error::format(format!(
                    "windows.bin: question id {question} out of range"
                )));
            }
            steps.push(InteractionRecord {
                question,
                kcs: bank.kc_map[question as usize].clone(),
                response,
                timestamp: (offset as i64) + i as i64,
            });
        }
        windows.push(Window {
            student_idx,
            seq_index,
            offset,
            steps,
        });
    }
    if at != bytes.len() {
        return Err(Error::format("windows.bin: trailing bytes"));
    }
    let seed = folds.seed;
    Ok(PreparedDataset {
        bank,
        windows,
        folds,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_input(rows: &[&str]) -> String {
        let mut s = String::from("student_id,question_id,kc_ids,response,timestamp\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    fn load(rows: &[&str]) -> Result<LoadOutcome> {
        load_interactions_from(csv_input(rows).as_bytes(), &ColumnSpec::default())
    }

    #[test]
    fn records_sorted_by_timestamp() {
        let out = load(&[
            "s1,10,1,1,3",
            "s1,11,1,0,1",
            "s1,12,2,1,2",
            "s1,13,1|2,0,4",
        ])
        .unwrap();
        let seq = &out.sequences[0];
        let ts: Vec<i64> = seq.records.iter().map(|r| r.timestamp).collect();
        assert_eq!(ts, vec![1, 2, 3, 4]);
        let qs: Vec<u64> = seq.records.iter().map(|r| r.question).collect();
        assert_eq!(qs, vec![11, 12, 10, 13]);
    }

    #[test]
    fn short_sequences_dropped_with_report() {
        let out = load(&[
            "s1,1,1,1,1",
            "s1,2,1,0,2",
            "s2,1,1,1,1",
            "s2,2,1,0,2",
            "s2,3,1,1,3",
        ])
        .unwrap();
        assert_eq!(out.sequences.len(), 1);
        assert_eq!(out.sequences[0].student, "s2");
        assert_eq!(out.dropped, vec![("s1".to_string(), 2)]);
    }

    #[test]
    fn duplicate_timestamps_keep_input_order() {
        let out = load(&["s1,10,1,1,5", "s1,11,1,0,5", "s1,12,1,1,5"]).unwrap();
        let qs: Vec<u64> = out.sequences[0].records.iter().map(|r| r.question).collect();
        assert_eq!(qs, vec![10, 11, 12]);
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let err = load(&["s1,1,1,1,1", "s1,x,1,0,2"]).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");

        let err = load(&["s1,1,1,2,1"]).unwrap_err().to_string();
        assert!(err.contains("response"), "{err}");

        let err = load(&["s1,1,,1,1"]).unwrap_err().to_string();
        assert!(err.contains("kc_ids"), "{err}");
    }

    #[test]
    fn bank_counts_dense_ids() {
        let out = load(&["s1,100,7,1,1", "s1,200,7|9,0,2", "s1,100,7,1,3"]).unwrap();
        let bank = build_question_bank(&out.sequences).unwrap();
        assert_eq!(bank.question_count, 2);
        assert_eq!(bank.concept_count, 2);
        assert_eq!(bank.kc_map, vec![vec![0], vec![0, 1]]);
    }

    #[test]
    fn single_question_single_kc() {
        let out = load(&["s1,5,3,1,1", "s1,5,3,0,2", "s1,5,3,1,3"]).unwrap();
        let bank = build_question_bank(&out.sequences).unwrap();
        assert_eq!((bank.question_count, bank.concept_count), (1, 1));
    }

    #[test]
    fn inconsistent_kc_sets_rejected() {
        let out = load(&["s1,5,3,1,1", "s1,5,4,0,2", "s1,5,3,1,3"]).unwrap();
        let err = build_question_bank(&out.sequences).unwrap_err().to_string();
        assert!(err.contains("inconsistent"), "{err}");
    }

    fn seq_of_len(n: usize) -> StudentSequence {
        StudentSequence {
            student_idx: 0,
            records: (0..n)
                .map(|i| InteractionRecord {
                    question: (i % 7) as u32,
                    kcs: vec![0],
                    response: (i % 2) as u8,
                    timestamp: i as i64,
                })
                .collect(),
        }
    }

    fn window_lens(n: usize, max_len: usize) -> Vec<usize> {
        window_sequences(&[seq_of_len(n)], max_len)
            .unwrap()
            .iter()
            .map(|w| w.steps.len())
            .collect()
    }

    #[test]
    fn windowing_divides_evenly() {
        assert_eq!(window_lens(450, 200), vec![200, 200, 50]);
        assert_eq!(window_lens(200, 200), vec![200]);
    }

    #[test]
    fn windowing_rebalances_short_tail() {
        // 401 => 200,200,1 is illegal and 200+1 > 200, so rebalance the tail
        assert_eq!(window_lens(401, 200), vec![200, 198, 3]);
        // 202 => 200,2; move one record back
        assert_eq!(window_lens(202, 200), vec![199, 3]);
    }

    #[test]
    fn windowing_short_tail_edge_cases() {
        assert_eq!(window_lens(7, 5), vec![4, 3]);
        assert_eq!(window_lens(6, 5), vec![3, 3]);
        assert_eq!(window_lens(8, 6), vec![5, 3]);
        // need=2 but the previous window cannot spare it: fragment dropped
        assert_eq!(window_lens(5, 4), vec![4]);
    }

    #[test]
    fn windowing_covers_every_record_in_order() {
        for (n, max_len) in [(3, 3), (10, 3), (450, 200), (401, 200), (999, 10), (12, 5)] {
            let windows = window_sequences(&[seq_of_len(n)], max_len).unwrap();
            let mut covered = Vec::new();
            for w in &windows {
                assert!(w.steps.len() >= MIN_SEQUENCE_LEN && w.steps.len() <= max_len);
                for s in &w.steps {
                    covered.push(s.timestamp);
                }
            }
            // every record exactly once, in order, except a possibly dropped tail
            let expect: Vec<i64> = (0..covered.len() as i64).collect();
            assert_eq!(covered, expect, "n={n} max_len={max_len}");
            assert!(n - covered.len() < MIN_SEQUENCE_LEN);
        }
    }

    #[test]
    fn fold_split_sizes() {
        let ids: Vec<String> = (0..100).map(|i| format!("s{i:03}")).collect();
        let assignment = split_folds(&ids, 7, 0.2, 5).unwrap();
        assert_eq!(assignment.test.len(), 20);
        for fold in &assignment.folds {
            assert_eq!(fold.len(), 16);
        }
    }

    #[test]
    fn fold_split_eleven_students() {
        let ids: Vec<String> = (0..11).map(|i| format!("s{i}")).collect();
        let assignment = split_folds(&ids, 3, 0.2, 5).unwrap();
        assert_eq!(assignment.test.len(), 2);
        let mut sizes: Vec<usize> = assignment.folds.iter().map(|f| f.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 2, 2, 2, 2]);
    }

    #[test]
    fn fold_split_is_deterministic_and_partitioning() {
        let ids: Vec<String> = (0..37).map(|i| format!("s{i}")).collect();
        let a = split_folds(&ids, 11, 0.2, 5).unwrap();
        let b = split_folds(&ids, 11, 0.2, 5).unwrap();
        assert_eq!(a.test, b.test);
        assert_eq!(a.folds, b.folds);

        let mut all: Vec<String> = a.test.clone();
        for f in &a.folds {
            all.extend(f.iter().cloned());
        }
        all.sort();
        let mut expect = ids.clone();
        expect.sort();
        assert_eq!(all, expect);

        let c = split_folds(&ids, 12, 0.2, 5).unwrap();
        assert_ne!(a.test, c.test, "different seeds should differ");
    }

    #[test]
    fn too_few_students_rejected() {
        let ids: Vec<String> = (0..5).map(|i| format!("s{i}")).collect();
        assert!(split_folds(&ids, 0, 0.2, 5).is_err());
    }

    #[test]
    fn stats_on_tiny_dataset() {
        let rows = [
            "a,1,1,1,1", "a,2,2,0,2", "a,3,1|2,1,3",
            "b,1,1,0,1", "b,2,2,1,2", "b,3,1|2,0,3",
        ];
        let out = load(&rows).unwrap();
        let prepared = prepare_dataset(&out, 200, 0, 0.0, 1).unwrap();
        let stats = compute_dataset_stats(&prepared);
        assert_eq!(stats.students, 2);
        assert_eq!(stats.interactions, 6);
        assert_eq!(stats.questions, 3);
        assert_eq!(stats.concepts, 2);
        assert!((stats.avg_interactions_per_question - 2.0).abs() < 1e-12);
        assert!((stats.avg_kcs_per_question - 4.0 / 3.0).abs() < 1e-12);
        assert!((stats.avg_questions_per_kc - 1.5).abs() < 1e-12);
    }

    #[test]
    fn prepared_round_trip() {
        let rows = [
            "a,1,1,1,1", "a,2,2,0,2", "a,3,1|2,1,3", "a,1,1,1,4",
            "b,1,1,0,1", "b,2,2,1,2", "b,3,1|2,0,3",
            "c,2,2,1,1", "c,2,2,1,2", "c,1,1,0,3",
        ];
        let out = load(&rows).unwrap();
        let prepared = prepare_dataset(&out, 200, 5, 0.2, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_prepared(dir.path(), &prepared).unwrap();
        let loaded = load_prepared(dir.path()).unwrap();
        assert_eq!(loaded.bank.question_count, prepared.bank.question_count);
        assert_eq!(loaded.windows.len(), prepared.windows.len());
        for (a, b) in loaded.windows.iter().zip(prepared.windows.iter()) {
            assert_eq!(a.student_idx, b.student_idx);
            let qa: Vec<u32> = a.steps.iter().map(|s| s.question).collect();
            let qb: Vec<u32> = b.steps.iter().map(|s| s.question).collect();
            assert_eq!(qa, qb);
        }

        // byte-identical artifacts on re-preparation with the same seed
        let again = prepare_dataset(&out, 200, 5, 0.2, 2).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        save_prepared(dir2.path(), &again).unwrap();
        for f in ["bank.json", "windows.bin", "folds.json"] {
            let x = fs::read(dir.path().join(f)).unwrap();
            let y = fs::read(dir2.path().join(f)).unwrap();
            assert_eq!(x, y, "{f} differs between identical preparations");
        }
    }
}
