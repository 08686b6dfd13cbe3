//! Reconstruction accuracy by token class, exact-match answer accuracy, and run
//! comparison with relative deltas.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::masking::{base_mask, forced_position, MaskPlan, MaskSource, NoiseLevel, StreamKey};
use crate::model::{forward, DenoiserParams, ModelError, Scalar};
use crate::rng::{Domain, Seed};
use crate::sampler::{generate, DecodeConfig, SampleError};
use crate::tokenizer::{TokenClass, TokenId, TokenizedSequence, Vocabulary, EOS_ID, MASK_ID};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("reports are not comparable: fingerprint {a:?} vs {b:?}")]
    FingerprintMismatch { a: String, b: String },
    #[error("reports are not comparable: eval seed {a} vs {b}")]
    SeedMismatch { a: u64, b: u64 },
    #[error("record {0} has no answer")]
    MissingAnswer(usize),
    #[error("evaluation set is empty")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

/// Evaluation masking: a fixed ratio of uniformly chosen completion positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub ratio: f64,
    pub seed: Seed,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { ratio: 0.15, seed: Seed(20_240_601) }
    }
}

/// The evaluation plan for sequence `index`; depends only on the sequence, settings and index.
pub fn eval_mask_plan(seq: &TokenizedSequence, settings: &EvalSettings, index: u64) -> MaskPlan {
    let key = StreamKey::new(settings.seed, index);
    let mut positions = base_mask(seq, settings.ratio, &mut key.stream(Domain::EvalMask, 0));
    let source = if positions.is_empty() {
        positions.insert(forced_position(seq, &mut key.stream(Domain::EvalMask, 1)));
        MaskSource::Forced
    } else {
        MaskSource::Base
    };
    let noise = NoiseLevel::new(settings.ratio.clamp(0.01, 0.99), 0.01).expect("clamped into range");
    MaskPlan::from_positions(positions, source, noise, 0)
}

/// Correct/total counts per token class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassTally {
    pub correct: [u64; 4],
    pub total: [u64; 4],
}

impl ClassTally {
    fn slot(class: TokenClass) -> usize {
        TokenClass::ALL.iter().position(|&c| c == class).expect("known class")
    }

    pub fn record(&mut self, class: TokenClass, correct: bool) {
        let k = Self::slot(class);
        self.total[k] += 1;
        self.correct[k] += u64::from(correct);
    }

    pub fn total(&self, class: TokenClass) -> u64 {
        self.total[Self::slot(class)]
    }

    pub fn correct(&self, class: TokenClass) -> u64 {
        self.correct[Self::slot(class)]
    }

    pub fn overall_total(&self) -> u64 {
        self.total.iter().sum()
    }

    pub fn overall_correct(&self) -> u64 {
        self.correct.iter().sum()
    }

    pub fn accuracy(&self, class: TokenClass) -> Option<f64> {
        let t = self.total(class);
        (t > 0).then(|| self.correct(class) as f64 / t as f64)
    }

    pub fn overall_accuracy(&self) -> Option<f64> {
        let t = self.overall_total();
        (t > 0).then(|| self.overall_correct() as f64 / t as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub acc_overall: Option<f64>,
    pub acc_numeric: Option<f64>,
    pub acc_operator: Option<f64>,
    pub acc_word: Option<f64>,
    pub exact_match: Option<f64>,
    /// Number of evaluated sequences.
    pub n: usize,
    pub seed: u64,
    pub fingerprint: String,
    pub tally: ClassTally,
}

impl EvalReport {
    fn from_tally(tally: ClassTally, n: usize, seed: Seed, fingerprint: &str) -> Self {
        EvalReport {
            acc_overall: tally.overall_accuracy(),
            acc_numeric: tally.accuracy(TokenClass::Numeric),
            acc_operator: tally.accuracy(TokenClass::Operator),
            acc_word: tally.accuracy(TokenClass::Word),
            exact_match: None,
            n,
            seed: seed.0,
            fingerprint: fingerprint.to_string(),
            tally,
        }
    }

    /// `(metric name, value)` pairs in a fixed order.
    pub fn metrics(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("acc_overall", self.acc_overall),
            ("acc_numeric", self.acc_numeric),
            ("acc_operator", self.acc_operator),
            ("acc_word", self.acc_word),
            ("exact_match", self.exact_match),
        ]
    }
}

/// Mask every sequence with the frozen evaluation plan and score argmax predictions.
pub fn reconstruction_eval<T: Scalar>(
    params: &DenoiserParams<T>,
    sequences: &[TokenizedSequence],
    settings: &EvalSettings,
    fingerprint: &str,
) -> Result<EvalReport, EvalError> {
    let mut tally = ClassTally::default();
    for (index, seq) in sequences.iter().enumerate() {
        let plan = eval_mask_plan(seq, settings, index as u64);
        let mut corrupted = seq.ids().to_vec();
        for p in plan.masked() {
            corrupted[p] = MASK_ID;
        }
        let logits = forward(params, &corrupted)?;
        for p in plan.masked() {
            let row = logits.row(p);
            let pred = row
                .iter()
                .enumerate()
                .fold((0usize, T::neg_infinity()), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
                .0;
            tally.record(seq.classes()[p], pred as TokenId == seq.ids()[p]);
        }
    }
    Ok(EvalReport::from_tally(tally, sequences.len(), settings.seed, fingerprint))
}

/// Last maximal run of digits and decimal points, normalized.
pub fn extract_answer(text: &str) -> Option<String> {
    let is_num = |c: char| c.is_ascii_digit() || c == '.';
    let end = text.rfind(|c: char| c.is_ascii_digit())? + 1;
    let start = text[..end].rfind(|c: char| !is_num(c)).map_or(0, |i| i + 1);
    normalize_answer(&text[start..end])
}

/// Strip surrounding decimal points and leading zeros (`"07"` becomes `"7"`).
pub fn normalize_answer(answer: &str) -> Option<String> {
    let trimmed = answer.trim().trim_matches('.');
    if trimmed.is_empty() || !trimmed.chars().all(|c| c.is_ascii_digit() || c == '.') {
        return None;
    }
    let stripped = trimmed.trim_start_matches('0');
    Some(if stripped.is_empty() || stripped.starts_with('.') { format!("0{stripped}") } else { stripped.to_string() })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExactMatchRecord {
    pub index: usize,
    pub generated: String,
    pub extracted: Option<String>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExactMatch {
    pub rate: f64,
    pub records: Vec<ExactMatchRecord>,
}

/// Generate a completion for each `(prompt, answer)` and compare the extracted answer.
/// Prompts are plain text; decoding randomness is seeded per record from `seed`.
pub fn exact_match_eval<T: Scalar>(
    params: &DenoiserParams<T>,
    vocab: &Vocabulary,
    items: &[(String, String)],
    decode: &DecodeConfig,
    seed: Seed,
) -> Result<ExactMatch, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut records = Vec::with_capacity(items.len());
    for (index, (prompt, answer)) in items.iter().enumerate() {
        let canonical = normalize_answer(answer).ok_or(EvalError::MissingAnswer(index))?;
        let ids = vocab.encode_prompt(prompt).map_err(|_| EvalError::MissingAnswer(index))?;
        let g = generate(params, &ids, decode, &mut seed.stream(Domain::Decode, &[index as u64]))?;
        let completion = g.completion();
        let cut = completion.iter().position(|&t| t == EOS_ID).unwrap_or(completion.len());
        let generated = vocab.detokenize(&completion[..cut]).expect("generated ids come from the vocabulary");
        let extracted = extract_answer(&generated);
        let correct = extracted.as_deref() == Some(canonical.as_str());
        records.push(ExactMatchRecord { index, generated, extracted, correct });
    }
    let rate = records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64;
    Ok(ExactMatch { rate, records })
}

/// `(b - a) / a`, undefined for `a == 0`.
pub fn relative_delta(a: f64, b: f64) -> Option<f64> {
    (a != 0.0).then(|| (b - a) / a)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeltaRow {
    pub metric: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub abs_delta: Option<f64>,
    pub rel_delta: Option<f64>,
}

impl DeltaRow {
    pub fn new(metric: &str, a: Option<f64>, b: Option<f64>) -> Self {
        let (abs_delta, rel_delta) = match (a, b) {
            (Some(a), Some(b)) => (Some(b - a), relative_delta(a, b)),
            _ => (None, None),
        };
        DeltaRow { metric: metric.to_string(), a, b, abs_delta, rel_delta }
    }

    /// Relative delta as a percentage with a direction marker, e.g. `↑5.00%`.
    pub fn marker(&self) -> String {
        match self.rel_delta {
            None => "n/a".to_string(),
            Some(r) if r > 0.0 => format!("\u{2191}{:.2}%", r * 100.0),
            Some(r) if r < 0.0 => format!("\u{2193}{:.2}%", -r * 100.0),
            Some(_) => "-".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CompareTable {
    pub fingerprint: String,
    pub seed: u64,
    pub rows: Vec<DeltaRow>,
}

impl CompareTable {
    pub fn render(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let mut s = format!("{:<14} {:>10} {:>10} {:>10} {:>10}\n", "metric", "a", "b", "abs_delta", "rel_delta");
        for r in &self.rows {
            s.push_str(&format!(
                "{:<14} {:>10} {:>10} {:>10} {:>10}\n",
                r.metric,
                fmt(r.a),
                fmt(r.b),
                r.abs_delta.map_or_else(|| "-".to_string(), |x| format!("{x:+.4}")),
                r.marker()
            ));
        }
        s
    }
}

/// Per-metric deltas of `b` relative to the baseline `a`.
pub fn compare_runs(a: &EvalReport, b: &EvalReport) -> Result<CompareTable, EvalError> {
    if a.fingerprint != b.fingerprint {
        return Err(EvalError::FingerprintMismatch { a: a.fingerprint.clone(), b: b.fingerprint.clone() });
    }
    if a.seed != b.seed {
        return Err(EvalError::SeedMismatch { a: a.seed, b: b.seed });
    }
    let rows = a.metrics().iter().zip(b.metrics()).map(|(&(m, x), (_, y))| DeltaRow::new(m, x, y)).collect();
    Ok(CompareTable { fingerprint: a.fingerprint.clone(), seed: a.seed, rows })
}
