//! Iterative-unmasking decoder.
//!
//! Generation starts from an all-MASK completion. Each of `steps` rounds runs the
//! denoiser once, proposes a token for every still-masked position (argmax at
//! temperature 0, a softmax sample otherwise) and commits the most confident proposals,
//! as many as the round's scheduled count. Committed tokens are never revisited.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

use crate::model::{forward, DenoiserParams, ModelError, Scalar};
use crate::tokenizer::{TokenId, BOS_ID, MASK_ID, PAD_ID, SEP_ID};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error("infeasible decode config: {0}")]
    Infeasible(String),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("prompt of {prompt} plus completion of {completion} exceeds max_len {max}")]
    TooLong { prompt: usize, completion: usize, max: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub steps: usize,
    pub completion_len: usize,
    pub temperature: f64,
    /// Explicit commits per step; defaults to an even split of `completion_len`.
    pub schedule: Option<Vec<usize>>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { steps: 16, completion_len: 32, temperature: 0.0, schedule: None }
    }
}

impl DecodeConfig {
    /// Commits per step. The even split front-loads the remainder.
    pub fn commit_schedule(&self) -> Result<Vec<usize>, SampleError> {
        let infeasible = |m: String| Err(SampleError::Infeasible(m));
        if self.steps == 0 || self.completion_len == 0 {
            return infeasible("steps and completion_len must be positive".into());
        }
        if !(self.temperature >= 0.0) {
            return infeasible(alloc::format!("temperature must be >= 0, got {}", self.temperature));
        }
        let schedule = match &self.schedule {
            Some(s) => s.clone(),
            None => {
                if self.steps > self.completion_len {
                    return infeasible(alloc::format!(
                        "{} steps cannot each commit a token of a {}-token completion",
                        self.steps, self.completion_len
                    ));
                }
                let (q, r) = (self.completion_len / self.steps, self.completion_len % self.steps);
                (0..self.steps).map(|i| q + usize::from(i < r)).collect()
            }
        };
        if schedule.len() != self.steps {
            return infeasible(alloc::format!("schedule has {} entries for {} steps", schedule.len(), self.steps));
        }
        let total: usize = schedule.iter().sum();
        if total != self.completion_len {
            return infeasible(alloc::format!("scheduled commits {total} != completion length {}", self.completion_len));
        }
        Ok(schedule)
    }
}

/// One committed position in a decode trace.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Commit {
    pub position: usize,
    pub token: TokenId,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceStep {
    pub step: usize,
    pub commits: Vec<Commit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Prompt followed by the generated completion.
    pub ids: Vec<TokenId>,
    pub prompt_len: usize,
    pub trace: Vec<TraceStep>,
    pub forward_passes: usize,
}

impl Generation {
    pub fn completion(&self) -> &[TokenId] {
        &self.ids[self.prompt_len..]
    }
}

fn never_generated(id: TokenId) -> bool {
    matches!(id, MASK_ID | PAD_ID | BOS_ID | SEP_ID)
}

/// Propose a token and its probability for one logit row.
fn propose<T: Scalar, R: Rng + ?Sized>(row: &[T], temperature: f64, rng: &mut R) -> (TokenId, f64) {
    let allowed = || row.iter().enumerate().filter(|(i, _)| !never_generated(*i as TokenId));
    let tau = if temperature > 0.0 { temperature } else { 1.0 };
    let max = allowed().map(|(_, x)| x.as_f64() / tau).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<(usize, f64)> = allowed().map(|(i, x)| (i, libm::exp(x.as_f64() / tau - max))).collect();
    let total: f64 = weights.iter().map(|w| w.1).sum();
    let (id, w) = if temperature > 0.0 {
        let mut u = rng.random::<f64>() * total;
        let mut pick = *weights.last().expect("vocabulary has generatable tokens");
        for &(i, w) in &weights {
            if u < w {
                pick = (i, w);
                break;
            }
            u -= w;
        }
        pick
    } else {
        // First maximum wins, so ties go to the lower id.
        weights.iter().copied().fold((usize::MAX, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best })
    };
    (id as TokenId, w / total)
}

/// Decode a completion for `prompt` (which must end with SEP).
pub fn generate<T: Scalar, R: Rng + ?Sized>(
    params: &DenoiserParams<T>,
    prompt: &[TokenId],
    config: &DecodeConfig,
    rng: &mut R,
) -> Result<Generation, SampleError> {
    let schedule = config.commit_schedule()?;
    if prompt.is_empty() {
        return Err(SampleError::EmptyPrompt);
    }
    let max = params.config().max_len;
    if prompt.len() + config.completion_len > max {
        return Err(SampleError::TooLong { prompt: prompt.len(), completion: config.completion_len, max });
    }
    let prompt_len = prompt.len();
    let mut ids = prompt.to_vec();
    ids.resize(prompt_len + config.completion_len, MASK_ID);
    let mut open: Vec<bool> = (0..ids.len()).map(|i| i >= prompt_len).collect();
    let mut trace = Vec::with_capacity(schedule.len());
    let mut forward_passes = 0;
    for (step, &count) in schedule.iter().enumerate() {
        let logits = forward(params, &ids)?;
        forward_passes += 1;
        let mut proposals: Vec<Commit> = (prompt_len..ids.len())
            .filter(|&p| open[p])
            .map(|p| {
                let (token, confidence) = propose(logits.row(p), config.temperature, rng);
                Commit { position: p, token, confidence }
            })
            .collect();
        proposals.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.position.cmp(&b.position)));
        proposals.truncate(count);
        for c in &proposals {
            ids[c.position] = c.token;
            open[c.position] = false;
        }
        trace.push(TraceStep { step, commits: proposals });
    }
    Ok(Generation { ids, prompt_len, trace, forward_passes })
}
