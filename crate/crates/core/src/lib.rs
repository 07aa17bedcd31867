//! Knowledge tracing with question- and concept-level acquisition states.
//!
//! The model tracks a student's mastery at two granularities: a question
//! acquisition state produced by an LSTM over question-level interactions
//! (`mqka`) and a concept acquisition state produced by a second LSTM over
//! concept-level interactions (`mcka`). Each recurrent state feeds a bank of
//! expert heads combined by a softmax gate. Predictions come from a
//! parameter-free IRT combination of the two scores, and a question-centric
//! contrastive objective regularizes the embeddings of rarely seen questions.
//!
//! Crate layout:
//! - [`tensor`] / [`graph`] / [`optim`] / [`params`]: the differentiable
//!   substrate (dense 2-D tensors, a reverse-mode tape, Adam, checkpoints).
//! - [`dataio`]: interaction logs, question bank, windowing, fold splits.
//! - [`encoder`] / [`acquisition`] / [`predictor`]: the model itself.
//! - [`contrastive`]: difficulty banding, pair construction, margin loss.
//! - [`model`] / [`trainer`]: batched training graph and the fit loop.
//! - [`evalsuite`]: AUC/accuracy, sliced evaluation, state export, baseline.
//! - [`synth`]: synthetic interaction generator with ground-truth abilities.

pub mod acquisition;
pub mod contrastive;
pub mod dataio;
pub mod encoder;
pub mod error;
pub mod evalsuite;
pub mod graph;
pub mod model;
pub mod optim;
pub mod params;
pub mod predictor;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::{Real, Tensor};
