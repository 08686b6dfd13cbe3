//! Mask-plan construction.
//!
//! A plan is built in a fixed order: noise level, base random masking, number-first
//! masking, span masking, curriculum top-up, and finally a forced mask if nothing was
//! selected. Each stage only adds positions, prompt positions are never eligible, and the
//! first stage to select a position owns its provenance. Every stage draws from its own
//! random stream, so switching one technique off does not perturb the others.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::numeric::{ceil_count, round_half_up_count};
use crate::rng::{Domain, Seed};
use crate::tokenizer::{TokenClass, TokenId, TokenizedSequence, MASK_ID};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("epsilon {0} must lie in (0, 0.5)")]
    Epsilon(f64),
    #[error("noise level {t} outside [{epsilon}, 1 - {epsilon}]")]
    NoiseOutOfRange { t: f64, epsilon: f64 },
    #[error("sequence has no completion positions to mask")]
    NoCompletion,
    #[error("masked position {position} out of range for length {len}")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("invalid mask configuration: {0}")]
    Config(String),
}

/// Noise level `t` in `[epsilon, 1 - epsilon]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NoiseLevel(f64);

impl NoiseLevel {
    pub fn new(t: f64, epsilon: f64) -> Result<Self, MaskError> {
        check_epsilon(epsilon)?;
        if !(epsilon..=1.0 - epsilon).contains(&t) {
            return Err(MaskError::NoiseOutOfRange { t, epsilon });
        }
        Ok(NoiseLevel(t))
    }

    pub fn t(self) -> f64 {
        self.0
    }
}

fn check_epsilon(epsilon: f64) -> Result<(), MaskError> {
    if epsilon > 0.0 && epsilon < 0.5 {
        Ok(())
    } else {
        Err(MaskError::Epsilon(epsilon))
    }
}

/// Draw `t ~ U[epsilon, 1 - epsilon]`.
pub fn sample_noise<R: Rng + ?Sized>(rng: &mut R, epsilon: f64) -> Result<NoiseLevel, MaskError> {
    check_epsilon(epsilon)?;
    Ok(NoiseLevel(rng.random_range(epsilon..=1.0 - epsilon)))
}

/// Which stage selected a masked position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MaskSource {
    Base,
    NumberFirst,
    Span,
    Curriculum,
    Forced,
}

impl MaskSource {
    pub fn name(self) -> &'static str {
        match self {
            MaskSource::Base => "base",
            MaskSource::NumberFirst => "number_first",
            MaskSource::Span => "span",
            MaskSource::Curriculum => "curriculum",
            MaskSource::Forced => "forced",
        }
    }
}

/// Linear mask-ratio ramp from `r_min` at step 0 to `r_max` at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumSchedule {
    r_min: f64,
    r_max: f64,
    total_steps: u64,
}

impl CurriculumSchedule {
    pub fn new(r_min: f64, r_max: f64, total_steps: u64) -> Result<Self, MaskError> {
        if !(r_min > 0.0 && r_min <= r_max && r_max < 1.0) {
            return Err(MaskError::Config(alloc::format!(
                "curriculum ratios must satisfy 0 < r_min <= r_max < 1, got {r_min}..{r_max}"
            )));
        }
        if total_steps == 0 {
            return Err(MaskError::Config("curriculum total_steps must be >= 1".into()));
        }
        Ok(CurriculumSchedule { r_min, r_max, total_steps })
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    /// Target mask ratio at `step`, clamped to `r_max` past the end of the ramp.
    pub fn ratio(&self, step: u64) -> f64 {
        if step == 0 {
            self.r_min
        } else if step >= self.total_steps {
            self.r_max
        } else {
            let (s, n) = (step as f64, self.total_steps as f64);
            (self.r_min * (n - s) + self.r_max * s) / n
        }
    }
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        CurriculumSchedule { r_min: 0.10, r_max: 0.20, total_steps: 2000 }
    }
}

/// `curriculum_ratio(schedule, step)`.
pub fn curriculum_ratio(schedule: &CurriculumSchedule, step: u64) -> f64 {
    schedule.ratio(step)
}

/// How the base stage picks its ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseRatio {
    /// Use the sampled noise level `t`.
    SampledT,
    /// Use the curriculum floor `r_min` when curriculum masking is enabled, `t` otherwise.
    CurriculumFloor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Techniques {
    pub number_first: bool,
    pub span: bool,
    pub curriculum: bool,
    pub weighted_loss: bool,
}

impl Techniques {
    pub const ALL: Techniques = Techniques { number_first: true, span: true, curriculum: true, weighted_loss: true };
    pub const NONE: Techniques = Techniques { number_first: false, span: false, curriculum: false, weighted_loss: false };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    pub epsilon: f64,
    /// Fraction of not-yet-masked numeric completion tokens masked by number-first.
    /// The 0.3 default is a chosen value, not a published one.
    pub number_fraction: f64,
    pub span_prob: f64,
    pub span_len: usize,
    pub schedule: CurriculumSchedule,
    pub enable: Techniques,
    pub base: BaseRatio,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            epsilon: 0.01,
            number_fraction: 0.3,
            span_prob: 0.1,
            span_len: 3,
            schedule: CurriculumSchedule::default(),
            enable: Techniques::ALL,
            base: BaseRatio::CurriculumFloor,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<(), MaskError> {
        check_epsilon(self.epsilon)?;
        for (name, v) in [("number_fraction", self.number_fraction), ("span_prob", self.span_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(MaskError::Config(alloc::format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.span_len == 0 {
            return Err(MaskError::Config("span_len must be >= 1".into()));
        }
        CurriculumSchedule::new(self.schedule.r_min, self.schedule.r_max, self.schedule.total_steps)?;
        Ok(())
    }

    /// The same configuration with every technique switched off (plain SFT masking).
    pub fn baseline(&self) -> MaskConfig {
        MaskConfig { enable: Techniques::NONE, ..*self }
    }
}

/// Masked positions with provenance. Keys of `provenance` are exactly the masked set.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    provenance: BTreeMap<usize, MaskSource>,
    noise: NoiseLevel,
    step: u64,
}

impl MaskPlan {
    /// Masked positions in increasing order.
    pub fn masked(&self) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.provenance.keys().copied()
    }

    pub fn provenance(&self) -> &BTreeMap<usize, MaskSource> {
        &self.provenance
    }

    pub fn source(&self, position: usize) -> Option<MaskSource> {
        self.provenance.get(&position).copied()
    }

    pub fn contains(&self, position: usize) -> bool {
        self.provenance.contains_key(&position)
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn noise(&self) -> NoiseLevel {
        self.noise
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn count_from(&self, source: MaskSource) -> usize {
        self.provenance.values().filter(|&&s| s == source).count()
    }

    /// Masked positions whose clean token is numeric.
    pub fn numeric_count(&self, seq: &TokenizedSequence) -> usize {
        self.masked().filter(|&p| seq.classes()[p] == TokenClass::Numeric).count()
    }

    /// Fraction of completion positions that are masked.
    pub fn realized_ratio(&self, seq: &TokenizedSequence) -> f64 {
        self.len() as f64 / seq.completion_len().max(1) as f64
    }

    /// Build a plan from explicit positions, for callers that construct masks by hand.
    pub fn from_positions<I>(positions: I, source: MaskSource, noise: NoiseLevel, step: u64) -> Self
    where
        I: IntoIterator<Item = usize>,
    {
        MaskPlan { provenance: positions.into_iter().map(|p| (p, source)).collect(), noise, step }
    }
}

fn eligible(seq: &TokenizedSequence) -> core::ops::Range<usize> {
    seq.prompt_len()..seq.len()
}

/// Mask `round(ratio * |E|)` completion positions chosen uniformly without replacement.
pub fn base_mask<R: Rng + ?Sized>(seq: &TokenizedSequence, ratio: f64, rng: &mut R) -> BTreeSet<usize> {
    let e = eligible(seq);
    let k = round_half_up_count(ratio, e.len());
    index::sample(rng, e.len(), k).into_iter().map(|i| e.start + i).collect()
}

/// Mask `ceil(fraction * |N|)` of the numeric completion positions `N` not already masked.
pub fn number_first_mask<R: Rng + ?Sized>(
    seq: &TokenizedSequence,
    existing: &BTreeSet<usize>,
    fraction: f64,
    rng: &mut R,
) -> BTreeSet<usize> {
    let candidates: Vec<usize> = eligible(seq)
        .filter(|&p| seq.classes()[p] == TokenClass::Numeric && !existing.contains(&p))
        .collect();
    let k = ceil_count(fraction, candidates.len());
    index::sample(rng, candidates.len(), k).into_iter().map(|i| candidates[i]).collect()
}

/// With probability `span_prob`, one contiguous run of `span_len` completion positions.
///
/// The start is uniform over completion positions whose span fits inside the sequence;
/// when the completion is shorter than `span_len` the whole completion is returned.
/// The result may overlap `existing`.
pub fn span_mask<R: Rng + ?Sized>(
    seq: &TokenizedSequence,
    _existing: &BTreeSet<usize>,
    span_prob: f64,
    span_len: usize,
    rng: &mut R,
) -> BTreeSet<usize> {
    let e = eligible(seq);
    if e.is_empty() || !rng.random_bool(span_prob.clamp(0.0, 1.0)) {
        return BTreeSet::new();
    }
    let span_len = span_len.max(1);
    let start = if e.len() >= span_len { rng.random_range(e.start..=e.end - span_len) } else { e.start };
    (start..(start + span_len).min(e.end)).collect()
}

/// Add uniformly chosen unmasked completion positions until the masked ratio first
/// reaches `target_ratio`. Never removes positions.
pub fn curriculum_topup<R: Rng + ?Sized>(
    seq: &TokenizedSequence,
    existing: &BTreeSet<usize>,
    target_ratio: f64,
    rng: &mut R,
) -> BTreeSet<usize> {
    let e = eligible(seq);
    let already = existing.iter().filter(|p| e.contains(p)).count();
    let needed = ceil_count(target_ratio, e.len()).saturating_sub(already);
    if needed == 0 {
        return BTreeSet::new();
    }
    let free: Vec<usize> = e.filter(|p| !existing.contains(p)).collect();
    index::sample(rng, free.len(), needed.min(free.len())).into_iter().map(|i| free[i]).collect()
}

/// Identifies the random streams for one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: Seed,
    pub sequence: u64,
}

impl StreamKey {
    pub fn new(seed: Seed, sequence: u64) -> Self {
        StreamKey { seed, sequence }
    }

    pub fn stream(self, domain: Domain, step: u64) -> crate::rng::StreamRng {
        self.seed.stream(domain, &[self.sequence, step])
    }
}

/// Force-mask one uniformly chosen completion position.
pub fn forced_position<R: Rng + ?Sized>(seq: &TokenizedSequence, rng: &mut R) -> usize {
    let e = eligible(seq);
    rng.random_range(e)
}

/// Compose all enabled stages into a plan for `seq` at training `step`.
pub fn compose_mask_plan(
    seq: &TokenizedSequence,
    config: &MaskConfig,
    step: u64,
    key: StreamKey,
) -> Result<MaskPlan, MaskError> {
    if seq.prompt_len() >= seq.len() {
        return Err(MaskError::NoCompletion);
    }
    let noise = sample_noise(&mut key.stream(Domain::MaskNoise, step), config.epsilon)?;
    let mut provenance = BTreeMap::new();
    let mut masked = BTreeSet::new();
    let mut add = |positions: BTreeSet<usize>, source: MaskSource, masked: &mut BTreeSet<usize>| {
        for p in positions {
            provenance.entry(p).or_insert(source);
            masked.insert(p);
        }
    };

    let base_ratio = match config.base {
        BaseRatio::CurriculumFloor if config.enable.curriculum => config.schedule.r_min(),
        _ => noise.t(),
    };
    add(base_mask(seq, base_ratio, &mut key.stream(Domain::MaskBase, step)), MaskSource::Base, &mut masked);

    if config.enable.number_first {
        let mut rng = key.stream(Domain::MaskNumberFirst, step);
        let picked = number_first_mask(seq, &masked, config.number_fraction, &mut rng);
        add(picked, MaskSource::NumberFirst, &mut masked);
    }
    if config.enable.span {
        let mut rng = key.stream(Domain::MaskSpan, step);
        let picked = span_mask(seq, &masked, config.span_prob, config.span_len, &mut rng);
        add(picked, MaskSource::Span, &mut masked);
    }
    if config.enable.curriculum {
        let mut rng = key.stream(Domain::MaskCurriculum, step);
        let picked = curriculum_topup(seq, &masked, config.schedule.ratio(step), &mut rng);
        add(picked, MaskSource::Curriculum, &mut masked);
    }
    if masked.is_empty() {
        let p = forced_position(seq, &mut key.stream(Domain::MaskForced, step));
        add(BTreeSet::from([p]), MaskSource::Forced, &mut masked);
    }
    Ok(MaskPlan { provenance, noise, step })
}

/// Produce the corrupted sequence `x_t`: the clean ids with MASK at every planned position.
pub fn apply_mask(seq: &TokenizedSequence, plan: &MaskPlan) -> Result<Vec<TokenId>, MaskError> {
    let mut ids = seq.ids().to_vec();
    for p in plan.masked() {
        let len = ids.len();
        *ids.get_mut(p).ok_or(MaskError::PositionOutOfRange { position: p, len })? = MASK_ID;
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{TokenClass::*, SEP_ID};
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Prompt of `p` words plus SEP, then the given completion classes.
    fn seq(prompt_words: usize, completion: &[TokenClass]) -> TokenizedSequence {
        let mut ids = vec![10; prompt_words];
        let mut classes = vec![Word; prompt_words];
        ids.push(SEP_ID);
        classes.push(Special);
        for &c in completion {
            ids.push(if c == Numeric { 7 } else { 30 });
            classes.push(c);
        }
        TokenizedSequence::new(ids, classes, prompt_words + 1).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn noise_bounds() {
        assert!(sample_noise(&mut rng(0), 0.0).is_err());
        assert!(sample_noise(&mut rng(0), 0.5).is_err());
        let d = 1e-3;
        for s in 0..100 {
            let t = sample_noise(&mut rng(s), 0.5 - d).unwrap().t();
            assert!((0.5 - d..=0.5 + d).contains(&t));
        }
        let a = sample_noise(&mut rng(9), 0.01).unwrap();
        assert_eq!(a, sample_noise(&mut rng(9), 0.01).unwrap());
    }

    #[test]
    fn base_mask_counts() {
        let s = seq(3, &[Word; 10]);
        assert!(base_mask(&s, 0.0, &mut rng(1)).is_empty());
        let m = base_mask(&s, 0.5, &mut rng(1));
        assert_eq!(m.len(), 5);
        assert!(m.iter().all(|&p| p >= s.prompt_len()));
    }

    #[test]
    fn number_first_counts() {
        let mut classes = vec![Word; 8];
        for p in [0, 3, 5] {
            classes[p] = Numeric;
        }
        let s = seq(3, &classes);
        let numeric: BTreeSet<usize> = [4, 7, 9].into();
        assert_eq!(number_first_mask(&s, &BTreeSet::new(), 1.0, &mut rng(2)), numeric);
        let half = number_first_mask(&s, &BTreeSet::new(), 0.5, &mut rng(2));
        assert_eq!(half.len(), 2);
        assert!(half.is_subset(&numeric));
        let existing: BTreeSet<usize> = [4].into();
        let rest = number_first_mask(&s, &existing, 1.0, &mut rng(2));
        assert_eq!(rest, [7, 9].into());
        assert!(number_first_mask(&seq(3, &[Word; 5]), &BTreeSet::new(), 1.0, &mut rng(2)).is_empty());
    }

    #[test]
    fn span_is_contiguous() {
        let s = seq(3, &[Word; 10]);
        assert!(span_mask(&s, &BTreeSet::new(), 0.0, 3, &mut rng(3)).is_empty());
        for seed in 0..200 {
            let sp = span_mask(&s, &BTreeSet::new(), 1.0, 3, &mut rng(seed));
            assert_eq!(sp.len(), 3);
            let start = *sp.first().unwrap();
            assert!(start >= 4 && start + 3 <= s.len());
            assert_eq!(sp, (start..start + 3).collect());
        }
        let short = seq(3, &[Word; 2]);
        assert_eq!(span_mask(&short, &BTreeSet::new(), 1.0, 3, &mut rng(4)), [4, 5].into());
    }

    #[test]
    fn curriculum_schedule_values() {
        let c = CurriculumSchedule::default();
        assert_eq!(c.ratio(0), 0.10);
        assert_eq!(c.ratio(1000), 0.15);
        assert_eq!(c.ratio(2000), 0.20);
        assert_eq!(c.ratio(4000), 0.20);
        assert!(CurriculumSchedule::new(0.0, 0.2, 10).is_err());
        assert!(CurriculumSchedule::new(0.3, 0.2, 10).is_err());
        assert!(CurriculumSchedule::new(0.1, 0.2, 0).is_err());
    }

    #[test]
    fn topup_counts() {
        let s = seq(2, &[Word; 20]);
        let existing: BTreeSet<usize> = (3..8).collect();
        assert!(curriculum_topup(&s, &existing, 0.20, &mut rng(5)).is_empty());
        let existing: BTreeSet<usize> = [3, 4].into();
        let add = curriculum_topup(&s, &existing, 0.2, &mut rng(5));
        assert_eq!(add.len(), 2);
        assert!(add.is_disjoint(&existing));
    }

    #[test]
    fn forced_mask_when_everything_is_off() {
        let s = seq(2, &[Word; 5]);
        let config = MaskConfig { epsilon: 0.01, ..MaskConfig::default().baseline() };
        // t <= 0.09 rounds to zero positions out of five.
        let mut found = false;
        for i in 0..500 {
            let key = StreamKey::new(Seed(11), i);
            let plan = compose_mask_plan(&s, &config, 0, key).unwrap();
            if plan.noise().t() < 0.09 {
                assert_eq!(plan.len(), 1);
                assert_eq!(plan.count_from(MaskSource::Forced), 1);
                found = true;
            }
            assert!(!plan.is_empty());
        }
        assert!(found);
    }

    #[test]
    fn compose_rejects_prompt_only() {
        let s = TokenizedSequence::new_unchecked(vec![10, SEP_ID], vec![Word, Special], 2);
        assert_eq!(
            compose_mask_plan(&s, &MaskConfig::default(), 0, StreamKey::new(Seed(0), 0)),
            Err(MaskError::NoCompletion)
        );
    }

    #[test]
    fn apply_mask_replaces_exactly_planned_positions() {
        let s = seq(2, &[Numeric, Word, Numeric, Word]);
        let noise = NoiseLevel::new(0.5, 0.01).unwrap();
        let plan = MaskPlan::from_positions([4], MaskSource::Forced, noise, 0);
        let xt = apply_mask(&s, &plan).unwrap();
        for (i, (&a, &b)) in xt.iter().zip(s.ids()).enumerate() {
            assert_eq!(a == b, i != 4);
        }
        assert_eq!(xt[4], MASK_ID);
        let bad = MaskPlan::from_positions([40], MaskSource::Forced, noise, 0);
        assert_eq!(apply_mask(&s, &bad), Err(MaskError::PositionOutOfRange { position: 40, len: 7 }));
    }

    #[test]
    fn config_validation() {
        assert!(MaskConfig::default().validate().is_ok());
        assert!(MaskConfig { span_len: 0, ..Default::default() }.validate().is_err());
        assert!(MaskConfig { number_fraction: 1.5, ..Default::default() }.validate().is_err());
        assert!(MaskConfig { epsilon: 0.6, ..Default::default() }.validate().is_err());
    }
}
