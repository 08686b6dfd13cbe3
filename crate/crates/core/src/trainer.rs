//! Masked denoising objectives, batch gradients, Adam and the training loop.
//!
//! Losses are computed in `f64` from the model's logits. The unweighted objective is the
//! mean cross-entropy over masked positions; the number-weighted objective divides the
//! weighted sum by the total weight. Both go through [`masked_ce_grad`], so unit weights
//! reproduce the unweighted loss bit for bit.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::masking::{apply_mask, compose_mask_plan, MaskConfig, MaskError, MaskPlan, StreamKey};
use crate::model::{backward, forward_with_cache, DenoiserParams, Gradients, Logits, ModelConfig, ModelError, Scalar};
use crate::rng::{Domain, Seed};
use crate::tokenizer::{TokenClass, TokenId, TokenizedSequence};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("mask plan is empty")]
    EmptyPlan,
    #[error("loss weight {weight} at position {position} must be positive")]
    NonPositiveWeight { position: usize, weight: f64 },
    #[error("loss weights must cover exactly the masked positions")]
    WeightsMismatch,
    #[error("target length {targets} does not match logits rows {rows}")]
    TargetShape { targets: usize, rows: usize },
    #[error("non-finite loss at step {}", .0.step)]
    NonFinite(TrainStepReport),
    #[error("loss diverged: {streak} consecutive steps above {factor}x the initial loss {initial} (step {})", .report.step)]
    Diverged { report: TrainStepReport, initial: f64, factor: f64, streak: u64 },
    #[error("gradient shape {grads} does not match parameter shape {params}")]
    ShapeMismatch { params: usize, grads: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training data is empty")]
    EmptyData,
    #[error("sequence {index}: {source}")]
    Sequence { index: usize, source: ModelError },
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Training objective family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Mode {
    /// Uniform masking at a sampled noise level, unweighted loss.
    Sft,
    /// All enabled techniques: curriculum band, number-first, spans, weighted loss.
    Dsft,
}

/// Normalization of the unweighted objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossNorm {
    /// Sum over masked positions divided by their count.
    Mean,
    /// Plain sum over masked positions.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Sft { norm: LossNorm },
    Weighted { w_num: f64 },
}

/// Per-position loss weights over the masked set.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    w: BTreeMap<usize, f64>,
}

impl LossWeights {
    pub fn new(w: BTreeMap<usize, f64>) -> Result<Self, TrainError> {
        if let Some((&position, &weight)) = w.iter().find(|(_, &x)| !(x > 0.0)) {
            return Err(TrainError::NonPositiveWeight { position, weight });
        }
        Ok(LossWeights { w })
    }

    /// `w_num` for numeric targets, 1 for everything else.
    pub fn for_plan(seq: &TokenizedSequence, plan: &MaskPlan, w_num: f64) -> Result<Self, TrainError> {
        Self::new(
            plan.masked()
                .map(|p| (p, if seq.classes()[p] == TokenClass::Numeric { w_num } else { 1.0 }))
                .collect(),
        )
    }

    pub fn get(&self, position: usize) -> Option<f64> {
        self.w.get(&position).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.w.iter().map(|(&p, &w)| (p, w))
    }
}

/// Cross-entropy `logsumexp(z) - z[target]` and the softmax of one logit row.
fn cross_entropy_row<T: Scalar>(row: &[T], target: TokenId) -> (f64, Vec<f64>) {
    let max = row.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| libm::exp(x.as_f64() - max)).collect();
    let sum: f64 = exps.iter().sum();
    let ce = libm::log(sum) + max - row[target as usize].as_f64();
    (ce, exps.into_iter().map(|e| e / sum).collect())
}

/// Cross-entropy at a single position.
pub fn position_cross_entropy<T: Scalar>(logits: &Logits<T>, targets: &[TokenId], position: usize) -> f64 {
    cross_entropy_row(logits.row(position), targets[position]).0
}

/// `sum_i c_i * CE_i` and, when `dlogits` is given, its gradient with respect to the logits.
fn weighted_ce<T: Scalar>(
    logits: &Logits<T>,
    targets: &[TokenId],
    coefs: &[(usize, f64)],
    mut dlogits: Option<&mut [T]>,
) -> f64 {
    let mut loss = 0.0;
    for &(p, c) in coefs {
        let (ce, probs) = cross_entropy_row(logits.row(p), targets[p]);
        loss += c * ce;
        if let Some(d) = dlogits.as_deref_mut() {
            let row = &mut d[p * logits.cols..(p + 1) * logits.cols];
            for (v, (dv, pv)) in row.iter_mut().zip(probs).enumerate() {
                let onehot = if v == targets[p] as usize { 1.0 } else { 0.0 };
                *dv = T::from_f64(c * (pv - onehot));
            }
        }
    }
    loss
}

fn check_targets<T: Scalar>(logits: &Logits<T>, targets: &[TokenId]) -> Result<(), TrainError> {
    if targets.len() != logits.rows {
        return Err(TrainError::TargetShape { targets: targets.len(), rows: logits.rows });
    }
    Ok(())
}

/// Coefficients `w_i / sum(w)` in masked-position order.
fn normalized(weights: impl Iterator<Item = (usize, f64)>) -> Vec<(usize, f64)> {
    let w: Vec<(usize, f64)> = weights.collect();
    let total: f64 = w.iter().map(|&(_, x)| x).sum();
    w.into_iter().map(|(p, x)| (p, x / total)).collect()
}

fn sft_coefs(plan: &MaskPlan, norm: LossNorm) -> Vec<(usize, f64)> {
    match norm {
        LossNorm::Mean => normalized(plan.masked().map(|p| (p, 1.0))),
        LossNorm::Sum => plan.masked().map(|p| (p, 1.0)).collect(),
    }
}

fn sum_loss(terms: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (w, ce) in terms {
        num += w * ce;
        den += w;
    }
    num / den
}

/// Mean cross-entropy over the masked positions of `plan`.
pub fn sft_loss<T: Scalar>(logits: &Logits<T>, targets: &[TokenId], plan: &MaskPlan) -> Result<f64, TrainError> {
    check_targets(logits, targets)?;
    if plan.is_empty() {
        return Err(TrainError::EmptyPlan);
    }
    Ok(sum_loss(plan.masked().map(|p| (1.0, position_cross_entropy(logits, targets, p)))))
}

/// `sum_i w_i CE_i / sum_i w_i` over the masked positions of `plan`.
pub fn weighted_loss<T: Scalar>(
    logits: &Logits<T>,
    targets: &[TokenId],
    plan: &MaskPlan,
    weights: &LossWeights,
) -> Result<f64, TrainError> {
    check_targets(logits, targets)?;
    if plan.is_empty() {
        return Err(TrainError::EmptyPlan);
    }
    if weights.w.len() != plan.len() || plan.masked().any(|p| !weights.w.contains_key(&p)) {
        return Err(TrainError::WeightsMismatch);
    }
    if let Some((position, weight)) = weights.iter().find(|&(_, w)| !(w > 0.0)) {
        return Err(TrainError::NonPositiveWeight { position, weight });
    }
    Ok(sum_loss(plan.masked().map(|p| (weights.w[&p], position_cross_entropy(logits, targets, p)))))
}

/// Loss coefficients for one plan under `objective`.
pub fn objective_coefficients(
    seq: &TokenizedSequence,
    plan: &MaskPlan,
    objective: Objective,
) -> Result<Vec<(usize, f64)>, TrainError> {
    if plan.is_empty() {
        return Err(TrainError::EmptyPlan);
    }
    Ok(match objective {
        Objective::Sft { norm } => sft_coefs(plan, norm),
        Objective::Weighted { w_num } => normalized(LossWeights::for_plan(seq, plan, w_num)?.iter()),
    })
}

/// `sum_i c_i CE(f(x_t)_i, x0_i)` and its exact gradient with respect to every parameter.
pub fn masked_ce_grad<T: Scalar>(
    params: &DenoiserParams<T>,
    corrupted: &[TokenId],
    targets: &[TokenId],
    coefs: &[(usize, f64)],
) -> Result<(f64, Gradients<T>), TrainError> {
    let (logits, cache) = forward_with_cache(params, corrupted)?;
    check_targets(&logits, targets)?;
    let mut dlogits = alloc::vec![T::zero(); logits.data.len()];
    let loss = weighted_ce(&logits, targets, coefs, Some(&mut dlogits));
    let mut grads = Gradients::zeros(params.layout().clone());
    backward(params, &cache, &dlogits, &mut grads);
    Ok((loss, grads))
}

/// Loss and gradient for one sequence under a given plan and objective.
pub fn loss_and_grad<T: Scalar>(
    params: &DenoiserParams<T>,
    seq: &TokenizedSequence,
    plan: &MaskPlan,
    objective: Objective,
) -> Result<(f64, Gradients<T>), TrainError> {
    let corrupted = apply_mask(seq, plan)?;
    let coefs = objective_coefficients(seq, plan, objective)?;
    masked_ce_grad(params, &corrupted, seq.ids(), &coefs)
}

/// Loss only (no backward pass) for one sequence.
pub fn loss_only<T: Scalar>(
    params: &DenoiserParams<T>,
    seq: &TokenizedSequence,
    plan: &MaskPlan,
    objective: Objective,
) -> Result<f64, TrainError> {
    let corrupted = apply_mask(seq, plan)?;
    let coefs = objective_coefficients(seq, plan, objective)?;
    let logits = crate::model::forward(params, &corrupted)?;
    Ok(weighted_ce(&logits, seq.ids(), &coefs, None))
}

/// Runs independent work items and returns their results in index order.
pub trait Executor: Sync {
    fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync;
}

/// Runs items one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync,
    {
        (0..n).map(f).collect()
    }
}

/// Mean loss over a batch and the gradient of that mean.
///
/// Per-item gradients are reduced in item order, so the result does not depend on how
/// the executor schedules the items.
pub fn batch_grad<T: Scalar, E: Executor>(
    params: &DenoiserParams<T>,
    batch: &[(&TokenizedSequence, &MaskPlan)],
    objective: Objective,
    exec: &E,
) -> Result<(f64, Gradients<T>), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let results = exec.map(batch.len(), |i| loss_and_grad(params, batch[i].0, batch[i].1, objective));
    let mut total = Gradients::zeros(params.layout().clone());
    let mut loss = 0.0;
    for r in results {
        let (l, g) = r?;
        loss += l;
        total.add_assign(&g);
    }
    let n = batch.len() as f64;
    total.scale(T::from_f64(1.0 / n));
    Ok((loss / n, total))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState { m: alloc::vec![T::zero(); len], v: alloc::vec![T::zero(); len], t: 0 }
    }
}

/// One bias-corrected Adam update.
pub fn optimizer_step<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(TrainError::ShapeMismatch { params: params.len(), grads: grads.len() });
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
    let c1 = T::from_f64(1.0 / (1.0 - libm::pow(cfg.beta1, t as f64)));
    let c2 = T::from_f64(1.0 / (1.0 - libm::pow(cfg.beta2, t as f64)));
    let (lr, eps) = (T::from_f64(cfg.lr), T::from_f64(cfg.eps));
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        let mhat = *m * c1;
        let vhat = *v * c2;
        *p = *p - lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

/// Every knob of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    /// Loss weight for numeric targets.
    pub w_num: f64,
    pub mask: MaskConfig,
    pub model: ModelConfig,
    pub seed: Seed,
    pub loss_norm: LossNorm,
    /// Pad every completion with EOS up to this many tokens (0 disables padding).
    pub pad_completion: usize,
    pub checkpoint_every: u64,
    /// Abort when the loss stays above `divergence_factor` x the first loss this long.
    pub divergence_factor: f64,
    pub divergence_patience: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Dsft,
            lr: 3e-4,
            batch_size: 16,
            steps: 2000,
            w_num: 2.0,
            mask: MaskConfig::default(),
            model: ModelConfig::default(),
            seed: Seed(0),
            loss_norm: LossNorm::Mean,
            pad_completion: 0,
            checkpoint_every: 500,
            divergence_factor: 10.0,
            divergence_patience: 50,
        }
    }
}

impl TrainConfig {
    /// The large-model hyperparameters: lr 1e-6, batch 64, sequence length 1024.
    /// `steps` must still be set to one epoch of the corpus, see [`TrainConfig::epoch_steps`].
    pub fn large_preset() -> Self {
        TrainConfig {
            lr: 1e-6,
            batch_size: 64,
            model: ModelConfig { max_len: 1024, ..ModelConfig::default() },
            ..TrainConfig::default()
        }
    }

    /// Optimizer steps for `epochs` passes over `corpus_len` sequences.
    pub fn epoch_steps(&self, corpus_len: usize, epochs: u64) -> u64 {
        (corpus_len as u64 * epochs).div_ceil(self.batch_size.max(1) as u64)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) {
            return Err(TrainError::Config(alloc::format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.w_num >= 1.0) {
            return Err(TrainError::Config(alloc::format!("w_num must be >= 1, got {}", self.w_num)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        self.mask.validate()?;
        Ok(())
    }

    /// Masking actually used under `mode`; SFT ignores every technique flag.
    pub fn effective_mask(&self) -> MaskConfig {
        match self.mode {
            Mode::Sft => self.mask.baseline(),
            Mode::Dsft => self.mask,
        }
    }

    pub fn objective(&self) -> Objective {
        match self.mode {
            Mode::Dsft if self.mask.enable.weighted_loss => Objective::Weighted { w_num: self.w_num },
            _ => Objective::Sft { norm: self.loss_norm },
        }
    }
}

/// What one optimizer step did.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainStepReport {
    pub step: u64,
    pub loss: f64,
    pub masked: usize,
    pub numeric_masked: usize,
    pub grad_norm: f64,
    pub curriculum_ratio: Option<f64>,
}

/// Loss-explosion detector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DivergenceMonitor {
    pub initial: Option<f64>,
    pub streak: u64,
}

/// Resumable training state.
#[derive(Debug, Clone)]
pub struct Trainer<T: Scalar = f32> {
    config: TrainConfig,
    data: Vec<TokenizedSequence>,
    params: DenoiserParams<T>,
    adam: AdamState<T>,
    step: u64,
    monitor: DivergenceMonitor,
    epoch_order: Option<(u64, Vec<usize>)>,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh run: parameters initialized from the config seed.
    pub fn new(config: TrainConfig, data: Vec<TokenizedSequence>) -> Result<Self, TrainError> {
        let params = DenoiserParams::init(config.model, config.seed)?;
        let adam = AdamState::new(params.as_slice().len());
        Self::resume(config, data, params, adam, 0, DivergenceMonitor::default())
    }

    /// Continue from saved state.
    pub fn resume(
        config: TrainConfig,
        data: Vec<TokenizedSequence>,
        params: DenoiserParams<T>,
        adam: AdamState<T>,
        step: u64,
        monitor: DivergenceMonitor,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if data.is_empty() {
            return Err(TrainError::EmptyData);
        }
        if params.config() != &config.model {
            return Err(TrainError::Config("parameters were built for a different model config".into()));
        }
        if adam.m.len() != params.as_slice().len() || adam.v.len() != params.as_slice().len() {
            return Err(TrainError::ShapeMismatch { params: params.as_slice().len(), grads: adam.m.len() });
        }
        let data: Vec<TokenizedSequence> = data.iter().map(|s| s.pad_completion(config.pad_completion)).collect();
        for (index, seq) in data.iter().enumerate() {
            if seq.prompt_len() >= seq.len() {
                return Err(MaskError::NoCompletion.into());
            }
            if seq.len() > config.model.max_len {
                return Err(TrainError::Sequence {
                    index,
                    source: ModelError::TooLong { len: seq.len(), max: config.model.max_len },
                });
            }
            if let Some(&id) = seq.ids().iter().find(|&&id| id as usize >= config.model.vocab_size) {
                return Err(TrainError::Sequence {
                    index,
                    source: ModelError::TokenOutOfRange { id, vocab: config.model.vocab_size },
                });
            }
        }
        Ok(Trainer { config, data, params, adam, step, monitor, epoch_order: None })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &DenoiserParams<T> {
        &self.params
    }

    pub fn into_params(self) -> DenoiserParams<T> {
        self.params
    }

    pub fn adam(&self) -> &AdamState<T> {
        &self.adam
    }

    /// Number of completed optimizer steps.
    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn monitor(&self) -> DivergenceMonitor {
        self.monitor
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.steps
    }

    pub fn data(&self) -> &[TokenizedSequence] {
        &self.data
    }

    /// Corpus indices of the sequences used at `step`.
    pub fn batch_indices(&mut self, step: u64) -> Vec<usize> {
        let n = self.data.len() as u64;
        let b = self.config.batch_size as u64;
        (0..b)
            .map(|j| {
                let g = step * b + j;
                let (epoch, pos) = (g / n, (g % n) as usize);
                let reuse = matches!(&self.epoch_order, Some((e, _)) if *e == epoch);
                if !reuse {
                    let mut order: Vec<usize> = (0..self.data.len()).collect();
                    order.shuffle(&mut self.config.seed.stream(Domain::BatchOrder, &[epoch]));
                    self.epoch_order = Some((epoch, order));
                }
                self.epoch_order.as_ref().expect("order just set").1[pos]
            })
            .collect()
    }

    /// Plans for one step, one per batch item.
    pub fn plans_for_step(&mut self, step: u64) -> Result<Vec<(usize, MaskPlan)>, TrainError> {
        let mask = self.config.effective_mask();
        self.batch_indices(step)
            .into_iter()
            .map(|i| {
                let key = StreamKey::new(self.config.seed, i as u64);
                Ok((i, compose_mask_plan(&self.data[i], &mask, step, key)?))
            })
            .collect()
    }

    /// One optimizer step.
    pub fn train_step<E: Executor>(&mut self, exec: &E) -> Result<TrainStepReport, TrainError> {
        let step = self.step;
        let plans = self.plans_for_step(step)?;
        let batch: Vec<(&TokenizedSequence, &MaskPlan)> = plans.iter().map(|(i, p)| (&self.data[*i], p)).collect();
        let (loss, grads) = batch_grad(&self.params, &batch, self.config.objective(), exec)?;
        let report = TrainStepReport {
            step,
            loss,
            masked: plans.iter().map(|(_, p)| p.len()).sum(),
            numeric_masked: plans.iter().map(|(i, p)| p.numeric_count(&self.data[*i])).sum(),
            grad_norm: grads.norm(),
            curriculum_ratio: self.config.effective_mask().enable.curriculum.then(|| self.config.mask.schedule.ratio(step)),
        };
        if !loss.is_finite() || !report.grad_norm.is_finite() {
            return Err(TrainError::NonFinite(report));
        }
        let initial = *self.monitor.initial.get_or_insert(loss);
        if loss > self.config.divergence_factor * initial {
            self.monitor.streak += 1;
            if self.monitor.streak >= self.config.divergence_patience {
                return Err(TrainError::Diverged {
                    report,
                    initial,
                    factor: self.config.divergence_factor,
                    streak: self.monitor.streak,
                });
            }
        } else {
            self.monitor.streak = 0;
        }
        optimizer_step(self.params.as_mut_slice(), grads.as_slice(), &mut self.adam, &AdamConfig::with_lr(self.config.lr))?;
        if !self.params.all_finite() {
            return Err(TrainError::NonFinite(report));
        }
        self.step += 1;
        Ok(report)
    }
}

/// Train from scratch to `config.steps` on a single thread.
pub fn train(
    config: TrainConfig,
    data: Vec<TokenizedSequence>,
) -> Result<(DenoiserParams<f32>, Vec<TrainStepReport>), TrainError> {
    let mut trainer = Trainer::<f32>::new(config, data)?;
    let mut reports = Vec::new();
    while !trainer.is_done() {
        reports.push(trainer.train_step(&Sequential)?);
    }
    Ok((trainer.into_params(), reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::{MaskSource, NoiseLevel};
    use alloc::vec;

    fn logits(rows: &[&[f64]]) -> Logits<f64> {
        Logits { rows: rows.len(), cols: rows[0].len(), data: rows.iter().flat_map(|r| r.iter().copied()).collect() }
    }

    fn plan(positions: &[usize]) -> MaskPlan {
        MaskPlan::from_positions(positions.iter().copied(), MaskSource::Base, NoiseLevel::new(0.5, 0.01).unwrap(), 0)
    }

    #[test]
    fn perfect_and_uniform_predictions() {
        let mut rows = vec![vec![0.0; 5]; 3];
        rows[1][2] = 30.0;
        rows[2][4] = 30.0;
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let l = sft_loss(&logits(&refs), &[0, 2, 4], &plan(&[1, 2])).unwrap();
        assert!(l <= 1e-6, "{l}");
        let uniform = logits(&[&[0.0; 5], &[0.0; 5]]);
        let l = sft_loss(&uniform, &[0, 3], &plan(&[0, 1])).unwrap();
        assert!((l - libm::log(5.0)).abs() < 1e-15);
    }

    #[test]
    fn unmasked_targets_do_not_matter() {
        let lg = logits(&[&[0.1, 0.2, 0.3], &[1.0, -1.0, 0.5], &[0.0, 0.0, 2.0]]);
        let a = sft_loss(&lg, &[0, 1, 2], &plan(&[1])).unwrap();
        let b = sft_loss(&lg, &[2, 1, 0], &plan(&[1])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weight_errors() {
        let lg = logits(&[&[0.1, 0.2], &[0.3, 0.4]]);
        let p = plan(&[0, 1]);
        assert!(matches!(LossWeights::new([(0, 0.0)].into()), Err(TrainError::NonPositiveWeight { .. })));
        let w = LossWeights::new([(0, 1.0)].into()).unwrap();
        assert_eq!(weighted_loss(&lg, &[0, 1], &p, &w), Err(TrainError::WeightsMismatch));
        assert_eq!(sft_loss(&lg, &[0], &p), Err(TrainError::TargetShape { targets: 1, rows: 2 }));
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![0.5f32, -1.25, 3.0];
        let before = p.clone();
        let mut s = AdamState::new(3);
        optimizer_step(&mut p, &[0.0; 3], &mut s, &AdamConfig::with_lr(1e-3)).unwrap();
        assert_eq!(p, before);
        assert!(optimizer_step(&mut p, &[0.0; 2], &mut s, &AdamConfig::with_lr(1e-3)).is_err());
    }

    #[test]
    fn adam_first_step_closed_form() {
        // m1 = 0.1 g, v1 = 0.001 g^2; bias correction gives mhat = g, vhat = g^2,
        // so the step is lr * g / (|g| + eps).
        let (g, lr, eps) = (0.37f64, 0.01, 1e-8);
        let mut p = vec![2.0f64];
        let mut s = AdamState::new(1);
        optimizer_step(&mut p, &[g], &mut s, &AdamConfig::with_lr(lr)).unwrap();
        let expect = 2.0 - lr * g / (g + eps);
        assert!((p[0] - expect).abs() < 1e-15, "{} vs {}", p[0], expect);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { w_num: 0.5, ..Default::default() }.validate().is_err());
        assert_eq!(TrainConfig::default().epoch_steps(100, 1), 7);
        let large = TrainConfig::large_preset();
        assert_eq!((large.lr, large.batch_size, large.model.max_len), (1e-6, 64, 1024));
    }
}
