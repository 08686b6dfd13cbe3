//! Core algorithms for diffusion supervised fine-tuning (DSFT) of masked-diffusion
//! language models.
//!
//! Everything in this crate is pure computation over in-memory values: tokenization
//! with token-class tagging, composable mask plans, the (weighted) masked denoising
//! objective, a small bidirectional transformer denoiser with hand-written reverse-mode
//! gradients, an Adam optimizer, an iterative-unmasking sampler and evaluation metrics.
//! File formats, the command-line tool and threaded execution live in the `dsft` crate.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is disabled.
//! The `std` feature only enables runtime CPU feature detection for the matrix kernels
//! and the platform math library.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod corpus;
pub mod eval;
pub mod masking;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod tokenizer;
pub mod trainer;

mod numeric;

pub use corpus::{CorpusRecord, EntropyReport, GeneratorSettings};
pub use eval::{CompareTable, EvalReport};

pub use masking::{CurriculumSchedule, MaskConfig, MaskPlan, MaskSource, NoiseLevel};
pub use model::{DenoiserParams, ModelConfig};
pub use rng::{Domain, Seed};
pub use tokenizer::{TokenClass, TokenId, TokenizedSequence, Vocabulary};
pub use trainer::{Mode, TrainConfig, TrainStepReport, Trainer};

