//! Synthetic interaction generator with ground-truth latent abilities.
//!
//! Responses follow a one-parameter logistic process with additive learning:
//! each student holds a per-concept ability, a question carries one
//! difficulty, and `P(correct) = sigmoid(mean ability over the question's
//! concepts - difficulty)`. Practicing a concept raises its ability by a
//! fixed increment. Question choice is popularity-weighted with a Zipf-like
//! tail so a controllable share of questions stays rarely seen.

use std::fmt::Write as _;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::stable_sigmoid;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub students: usize,
    pub questions: usize,
    pub concepts: usize,
    /// Concept-set sizes are drawn uniformly from `1..=max_kcs_per_question`.
    pub max_kcs_per_question: usize,
    pub difficulty_std: f64,
    pub ability_std: f64,
    /// Ability increment per practiced concept.
    pub learning_increment: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Zipf-like popularity exponent; 0 is uniform.
    pub popularity_exponent: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            students: 500,
            questions: 200,
            concepts: 10,
            max_kcs_per_question: 2,
            difficulty_std: 1.0,
            ability_std: 1.0,
            learning_increment: 0.02,
            min_len: 30,
            max_len: 90,
            popularity_exponent: 1.2,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.students == 0 || self.questions == 0 || self.concepts == 0 {
            return Err(Error::data("synth counts must be positive"));
        }
        if self.max_kcs_per_question == 0 || self.max_kcs_per_question > self.concepts {
            return Err(Error::data("kc set size must be in 1..=concepts"));
        }
        if self.min_len < 3 || self.min_len > self.max_len {
            return Err(Error::data("need 3 <= min_len <= max_len"));
        }
        if self.popularity_exponent < 0.0 {
            return Err(Error::data("popularity exponent must be non-negative"));
        }
        Ok(())
    }
}

/// One generated interaction.
#[derive(Debug, Clone)]
pub struct SynthInteraction {
    pub student: usize,
    pub question: usize,
    pub response: u8,
    pub step: usize,
    /// The true Bernoulli probability that produced the response.
    pub probability: f64,
}

/// Ability value after an interaction touched a concept.
#[derive(Debug, Clone, Serialize)]
pub struct ThetaRow {
    pub student: usize,
    /// 0 is the initial ability; interaction steps are 1-based.
    pub step: usize,
    pub concept: usize,
    pub theta: f64,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub difficulties: Vec<f64>,
    pub theta_rows: Vec<ThetaRow>,
    /// Final ability per student per concept.
    pub final_theta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub kc_sets: Vec<Vec<usize>>,
    pub interactions: Vec<SynthInteraction>,
    pub ground_truth: GroundTruth,
}

pub fn response_probability(mean_ability: f64, difficulty: f64) -> f64 {
    stable_sigmoid(mean_ability - difficulty)
}

/// Generate the full dataset. Per-student randomness comes from independent
/// seeded streams, so output is reproducible and per-student generation
/// order-independent.
pub fn generate_dataset(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);

    // question -> concept sets
    let kc_sets: Vec<Vec<usize>> = (0..config.questions)
        .map(|_| {
            let size = master.gen_range(1..=config.max_kcs_per_question);
            let mut set = Vec::with_capacity(size);
            while set.len() < size {
                let kc = master.gen_range(0..config.concepts);
                if !set.contains(&kc) {
                    set.push(kc);
                }
            }
            set.sort_unstable();
            set
        })
        .collect();

    let difficulty_dist = Normal::new(0.0, config.difficulty_std)
        .map_err(|e| Error::numeric(format!("difficulty distribution: {e}")))?;
    let difficulties: Vec<f64> = (0..config.questions)
        .map(|_| difficulty_dist.sample(&mut master))
        .collect();

    // popularity: random rank permutation, weight 1/(rank+1)^exponent
    let mut ranked: Vec<usize> = (0..config.questions).collect();
    use rand::seq::SliceRandom;
    ranked.shuffle(&mut master);
    let mut weights = vec![0.0f64; config.questions];
    for (rank, &q) in ranked.iter().enumerate() {
        weights[q] = 1.0 / ((rank + 1) as f64).powf(config.popularity_exponent);
    }
    let popularity = WeightedIndex::new(&weights)
        .map_err(|e| Error::numeric(format!("popularity weights: {e}")))?;

    let ability_dist = Normal::new(0.0, config.ability_std)
        .map_err(|e| Error::numeric(format!("ability distribution: {e}")))?;

    let mut interactions = Vec::new();
    let mut theta_rows = Vec::new();
    let mut final_theta = Vec::with_capacity(config.students);
    for student in 0..config.students {
        let mut rng = ChaCha8Rng::seed_from_u64(
            config
                .seed
                .wrapping_add((student as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        let mut theta: Vec<f64> = (0..config.concepts)
            .map(|_| ability_dist.sample(&mut rng))
            .collect();
        for (kc, value) in theta.iter().enumerate() {
            theta_rows.push(ThetaRow {
                student,
                step: 0,
                concept: kc,
                theta: *value,
            });
        }
        let len = rng.gen_range(config.min_len..=config.max_len);
        for step in 0..len {
            let question = popularity.sample(&mut rng);
            let kcs = &kc_sets[question];
            let mean: f64 = kcs.iter().map(|&k| theta[k]).sum::<f64>() / kcs.len() as f64;
            let probability = response_probability(mean, difficulties[question]);
            let response = u8::from(rng.gen_bool(probability));
            interactions.push(SynthInteraction {
                student,
                question,
                response,
                step,
                probability,
            });
            for &k in kcs {
                theta[k] += config.learning_increment;
                theta_rows.push(ThetaRow {
                    student,
                    step: step + 1,
                    concept: k,
                    theta: theta[k],
                });
            }
        }
        final_theta.push(theta);
    }

    Ok(SynthDataset {
        config: config.clone(),
        kc_sets,
        interactions,
        ground_truth: GroundTruth {
            difficulties,
            theta_rows,
            final_theta,
        },
    })
}

impl SynthDataset {
    pub fn student_id(student: usize) -> String {
        format!("s{student:05}")
    }

    /// Interaction log in the loader's column format.
    pub fn interactions_csv(&self) -> String {
        let mut out = String::from("student_id,question_id,kc_ids,response,timestamp\n");
        for i in &self.interactions {
            let kcs = self.kc_sets[i.question]
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join("|");
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                Self::student_id(i.student),
                i.question,
                kcs,
                i.response,
                i.step
            );
        }
        out
    }

    pub fn write_interactions(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.interactions_csv())?;
        Ok(())
    }

    /// Ground truth as two CSV files: ability trajectories and question
    /// difficulties.
    pub fn write_ground_truth(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut theta = String::from("student_id,step,kc_id,theta\n");
        for row in &self.ground_truth.theta_rows {
            let _ = writeln!(
                theta,
                "{},{},{},{}",
                Self::student_id(row.student),
                row.step,
                row.concept,
                row.theta
            );
        }
        std::fs::write(dir.join("theta.csv"), theta)?;
        let mut diff = String::from("question_id,b\n");
        for (q, b) in self.ground_truth.difficulties.iter().enumerate() {
            let _ = writeln!(diff, "{q},{b}");
        }
        std::fs::write(dir.join("difficulty.csv"), diff)?;
        Ok(())
    }

    /// Per-question interaction counts.
    pub fn question_frequencies(&self) -> Vec<usize> {
        let mut freq = vec![0usize; self.config.questions];
        for i in &self.interactions {
            freq[i.question] += 1;
        }
        freq
    }

    /// AUC of the true Bernoulli probabilities against the realized
    /// responses: the ceiling any model can approach on this data.
    pub fn oracle_auc(&self) -> Result<f64> {
        let preds: Vec<f64> = self.interactions.iter().map(|i| i.probability).collect();
        let labels: Vec<u8> = self.interactions.iter().map(|i| i.response).collect();
        crate::evalsuite::compute_auc(&preds, &labels)
    }
}
