//! Synthetic arithmetic word problems and unigram information statistics.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::Rng;
use thiserror::Error;

use crate::rng::{Domain, Seed};
use crate::tokenizer::{TokenClass, TokenId, Vocabulary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("completion is empty")]
    EmptyCompletion,
    #[error("answer {answer:?} does not appear in the completion")]
    AnswerNotInCompletion { answer: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid generator settings: {0}")]
    Settings(String),
}

/// One prompt/completion pair.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorpusRecord {
    pub prompt: String,
    pub completion: String,
    /// Canonical numeric answer, empty when unknown.
    #[cfg_attr(feature = "serde", serde(default))]
    pub answer: String,
}

impl CorpusRecord {
    pub fn new(prompt: impl Into<String>, completion: impl Into<String>, answer: impl Into<String>) -> Result<Self, CorpusError> {
        let record = CorpusRecord { prompt: prompt.into(), completion: completion.into(), answer: answer.into() };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.prompt.trim().is_empty() {
            return Err(CorpusError::EmptyPrompt);
        }
        if self.completion.trim().is_empty() {
            return Err(CorpusError::EmptyCompletion);
        }
        if !self.answer.is_empty() && !self.completion.contains(self.answer.as_str()) {
            return Err(CorpusError::AnswerNotInCompletion { answer: self.answer.clone() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub const ALL: [ArithOp; 4] = [ArithOp::Add, ArithOp::Sub, ArithOp::Mul, ArithOp::Div];

    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "\u{d7}",
            ArithOp::Div => "/",
        }
    }

    pub fn from_symbol(s: &str) -> Option<ArithOp> {
        match s {
            "+" => Some(ArithOp::Add),
            "-" | "\u{2212}" => Some(ArithOp::Sub),
            "\u{d7}" | "*" | "x" => Some(ArithOp::Mul),
            "/" | "\u{f7}" => Some(ArithOp::Div),
            _ => None,
        }
    }

    /// Exact evaluation; `None` when the result leaves the non-negative integers.
    pub fn apply(self, a: u32, b: u32) -> Option<u32> {
        match self {
            ArithOp::Add => a.checked_add(b),
            ArithOp::Sub => a.checked_sub(b),
            ArithOp::Mul => a.checked_mul(b),
            ArithOp::Div => (b != 0 && a % b == 0).then(|| a / b),
        }
    }
}

/// Largest value any operand or intermediate result may take.
pub const MAX_VALUE: u32 = 999;
const MAX_FACTOR: u32 = 9;

/// Synthetic corpus generator settings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorSettings {
    pub count: usize,
    pub ops: Vec<ArithOp>,
    pub min_operand: u32,
    pub max_operand: u32,
    /// Reasoning steps per problem are drawn uniformly from `1..=max_steps`.
    pub max_steps: usize,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        GeneratorSettings { count: 5000, ops: ArithOp::ALL.to_vec(), min_operand: 1, max_operand: 99, max_steps: 3 }
    }
}

impl GeneratorSettings {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let err = |m: &str| Err(CorpusError::Settings(m.to_string()));
        if self.ops.is_empty() {
            return err("operator set is empty");
        }
        if self.min_operand < 1 || self.min_operand > self.max_operand || self.max_operand > MAX_VALUE {
            return err("operand range must satisfy 1 <= min <= max <= 999");
        }
        if !(1..=3).contains(&self.max_steps) {
            return err("max_steps must be between 1 and 3");
        }
        if !(self.min_operand..=self.max_operand).any(|v| self.feasible_ops(v).next().is_some()) {
            return err("no starting value admits any of the configured operators");
        }
        Ok(())
    }

    fn operand_range(&self, op: ArithOp, current: u32) -> Option<(u32, u32)> {
        let (lo, hi) = match op {
            ArithOp::Add => (self.min_operand, self.max_operand.min(MAX_VALUE.saturating_sub(current))),
            ArithOp::Sub => (self.min_operand, self.max_operand.min(current)),
            ArithOp::Mul => (2, MAX_FACTOR.min(MAX_VALUE / current.max(1))),
            ArithOp::Div => (2, MAX_FACTOR.min(current)),
        };
        (lo <= hi).then_some((lo, hi))
    }

    fn feasible_ops(&self, current: u32) -> impl Iterator<Item = ArithOp> + '_ {
        self.ops.iter().copied().filter(move |&op| match (op, self.operand_range(op, current)) {
            (ArithOp::Div, Some((lo, hi))) => current > 0 && (lo..=hi).any(|d| current % d == 0),
            (_, r) => r.is_some(),
        })
    }
}

const NAMES: [(&str, &str); 8] = [
    ("Tom", "He"),
    ("Anna", "She"),
    ("Ravi", "He"),
    ("Mia", "She"),
    ("Leo", "He"),
    ("Sara", "She"),
    ("Omar", "He"),
    ("Lena", "She"),
];
const ITEMS: [&str; 8] = ["apples", "pencils", "books", "marbles", "coins", "stickers", "cookies", "cards"];

fn step_sentence(op: ArithOp, operand: u32, pronoun: &str, items: &str, variant: bool) -> String {
    match (op, variant) {
        (ArithOp::Add, false) => format!("{pronoun} gets {operand} more."),
        (ArithOp::Add, true) => format!("Then {} finds {operand} more {items}.", pronoun.to_lowercase()),
        (ArithOp::Sub, false) => format!("{pronoun} gives away {operand}."),
        (ArithOp::Sub, true) => format!("Then {} loses {operand} {items}.", pronoun.to_lowercase()),
        (ArithOp::Mul, false) => format!("The number of {items} becomes {operand} times as large."),
        (ArithOp::Mul, true) => format!("Then {} multiplies the {items} by {operand}.", pronoun.to_lowercase()),
        (ArithOp::Div, false) => format!("{pronoun} splits the {items} into {operand} equal groups and keeps one group."),
        (ArithOp::Div, true) => format!("Then {} shares them equally with {operand} friends and keeps one share.", pronoun.to_lowercase()),
    }
}

/// Generate `settings.count` arithmetic word problems. Deterministic in `(settings, seed)`.
///
/// Every completion lists one equation per step (`a op b = c.`) and ends with
/// `The answer is c.`; operands and results stay within `0..=999` and division is exact.
pub fn generate_corpus(settings: &GeneratorSettings, seed: Seed) -> Result<Vec<CorpusRecord>, CorpusError> {
    settings.validate()?;
    let mut out = Vec::with_capacity(settings.count);
    for index in 0..settings.count {
        let mut rng = seed.stream(Domain::Corpus, &[index as u64]);
        let &(name, pronoun) = NAMES.choose(&mut rng).expect("names");
        let &items = ITEMS.choose(&mut rng).expect("items");
        let steps = rng.random_range(1..=settings.max_steps);
        let mut start;
        loop {
            start = rng.random_range(settings.min_operand..=settings.max_operand);
            if settings.feasible_ops(start).next().is_some() {
                break;
            }
        }
        let mut prompt = format!("{name} has {start} {items}.");
        let mut completion = String::new();
        let mut current = start;
        for _ in 0..steps {
            let feasible: Vec<ArithOp> = settings.feasible_ops(current).collect();
            let Some(&op) = feasible.choose(&mut rng) else { break };
            let (lo, hi) = settings.operand_range(op, current).expect("feasible op has a range");
            let operand = if op == ArithOp::Div {
                let divisors: Vec<u32> = (lo..=hi).filter(|d| current % d == 0).collect();
                *divisors.choose(&mut rng).expect("feasible division has a divisor")
            } else {
                rng.random_range(lo..=hi)
            };
            let result = op.apply(current, operand).expect("operands chosen within range");
            prompt.push(' ');
            prompt.push_str(&step_sentence(op, operand, pronoun, items, rng.random_bool(0.5)));
            if !completion.is_empty() {
                completion.push(' ');
            }
            completion.push_str(&format!("{current} {} {operand} = {result}.", op.symbol()));
            current = result;
        }
        prompt.push_str(&format!(" How many {items} does {name} have now?"));
        completion.push_str(&format!(" The answer is {current}."));
        out.push(CorpusRecord::new(prompt, completion, current.to_string())?);
    }
    Ok(out)
}

/// Statistics for one token class.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassStats {
    pub class: TokenClass,
    pub count: u64,
    pub p_mass: f64,
    /// Mean of `-ln p(x)` over occurrences of this class; `None` when the class is absent.
    pub mean_surprisal_nats: Option<f64>,
    /// `-sum p(x) ln p(x)` restricted to tokens of this class.
    pub entropy_nats: f64,
}

/// Unigram entropy breakdown of a tokenized corpus.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EntropyReport {
    pub per_class: Vec<ClassStats>,
    pub total_entropy_nats: f64,
    pub token_count: u64,
    pub vocab_size: usize,
    /// The most frequent Word tokens, most frequent first.
    pub stopwords: Vec<String>,
    pub stopword_mean_surprisal_nats: Option<f64>,
}

pub const STOPWORD_COUNT: usize = 10;

impl EntropyReport {
    pub fn class(&self, class: TokenClass) -> &ClassStats {
        self.per_class.iter().find(|c| c.class == class).expect("all classes are reported")
    }

    pub fn total_entropy_bits(&self) -> f64 {
        self.total_entropy_nats / core::f64::consts::LN_2
    }

    /// Whether Numeric tokens carry more information per occurrence than stopwords.
    pub fn numeric_exceeds_stopwords(&self) -> bool {
        match (self.class(TokenClass::Numeric).mean_surprisal_nats, self.stopword_mean_surprisal_nats) {
            (Some(n), Some(s)) => n > s,
            _ => false,
        }
    }

    /// Human-readable table.
    pub fn render_table(&self) -> String {
        let mut s = format!(
            "{:<9} {:>10} {:>10} {:>16} {:>13}\n",
            "class", "count", "p_mass", "mean_surprisal", "entropy_nats"
        );
        for c in &self.per_class {
            let ms = c.mean_surprisal_nats.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            s.push_str(&format!(
                "{:<9} {:>10} {:>10.4} {:>16} {:>13.4}\n",
                c.class.name(),
                c.count,
                c.p_mass,
                ms,
                c.entropy_nats
            ));
        }
        s.push_str(&format!(
            "total entropy: {:.4} nats ({:.4} bits) over {} tokens, vocab {}\n",
            self.total_entropy_nats,
            self.total_entropy_bits(),
            self.token_count,
            self.vocab_size
        ));
        if let Some(sw) = self.stopword_mean_surprisal_nats {
            s.push_str(&format!("stopwords ({}): mean surprisal {sw:.4} nats\n", self.stopwords.join(" ")));
        }
        s
    }
}

/// Empirical unigram entropy, per-class surprisal and stopword surprisal (natural log).
pub fn entropy_report<'a, I>(sequences: I, vocab: &Vocabulary) -> Result<EntropyReport, CorpusError>
where
    I: IntoIterator<Item = &'a [TokenId]>,
{
    let mut counts = vec![0u64; vocab.len()];
    let mut total = 0u64;
    for seq in sequences {
        for &id in seq {
            counts[id as usize] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(CorpusError::EmptyCorpus);
    }
    let n = total as f64;
    let surprisal = |c: u64| -libm::log(c as f64 / n);

    let mut total_entropy = 0.0;
    let mut class_count = [0u64; 4];
    let mut class_entropy = [0.0f64; 4];
    let mut class_surprisal = [0.0f64; 4];
    for (id, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let p = c as f64 / n;
        let h = -p * libm::log(p);
        total_entropy += h;
        let k = class_slot(vocab.class_of(id as TokenId).expect("id within vocab"));
        class_count[k] += c;
        class_entropy[k] += h;
        class_surprisal[k] += c as f64 * surprisal(c);
    }

    let per_class = TokenClass::ALL
        .iter()
        .map(|&class| {
            let k = class_slot(class);
            ClassStats {
                class,
                count: class_count[k],
                p_mass: class_count[k] as f64 / n,
                mean_surprisal_nats: (class_count[k] > 0).then(|| class_surprisal[k] / class_count[k] as f64),
                entropy_nats: class_entropy[k],
            }
        })
        .collect();

    let mut words: Vec<(TokenId, u64)> = counts
        .iter()
        .enumerate()
        .filter(|&(id, &c)| c > 0 && vocab.class_of(id as TokenId) == Some(TokenClass::Word))
        .map(|(id, &c)| (id as TokenId, c))
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    words.truncate(STOPWORD_COUNT);
    let sw_count: u64 = words.iter().map(|w| w.1).sum();
    let stopword_mean_surprisal_nats =
        (sw_count > 0).then(|| words.iter().map(|&(_, c)| c as f64 * surprisal(c)).sum::<f64>() / sw_count as f64);

    Ok(EntropyReport {
        per_class,
        total_entropy_nats: total_entropy,
        token_count: total,
        vocab_size: vocab.len(),
        stopwords: words.iter().map(|&(id, _)| vocab.token(id).expect("id").to_string()).collect(),
        stopword_mean_surprisal_nats,
    })
}

fn class_slot(class: TokenClass) -> usize {
    match class {
        TokenClass::Numeric => 0,
        TokenClass::Operator => 1,
        TokenClass::Word => 2,
        TokenClass::Special => 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::VocabSettings;

    #[test]
    fn single_addition_record_shape() {
        let settings = GeneratorSettings { count: 1, ops: vec![ArithOp::Add], min_operand: 1, max_operand: 9, max_steps: 1 };
        let recs = generate_corpus(&settings, Seed(7)).unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        let words: Vec<&str> = r.completion.split_whitespace().collect();
        assert_eq!(words.len(), 9, "{}", r.completion);
        let n: u32 = words[0].parse().unwrap();
        let m: u32 = words[2].parse().unwrap();
        let k: u32 = words[4].trim_end_matches('.').parse().unwrap();
        assert_eq!((words[1], words[3]), ("+", "="));
        assert_eq!(n + m, k);
        assert_eq!(r.completion, format!("{n} + {m} = {k}. The answer is {k}."));
        assert!(r.prompt.contains(&format!("{n} ")) && r.prompt.contains(&format!("{m} more")));
        assert!(r.prompt.ends_with('?'));
        assert_eq!(r.answer, k.to_string());
    }

    #[test]
    fn generation_is_deterministic() {
        let s = GeneratorSettings { count: 50, ..Default::default() };
        assert_eq!(generate_corpus(&s, Seed(3)).unwrap(), generate_corpus(&s, Seed(3)).unwrap());
        assert_ne!(generate_corpus(&s, Seed(3)).unwrap(), generate_corpus(&s, Seed(4)).unwrap());
    }

    #[test]
    fn invalid_settings() {
        let bad = GeneratorSettings { ops: vec![], ..Default::default() };
        assert!(generate_corpus(&bad, Seed(0)).is_err());
        let bad = GeneratorSettings { max_operand: 1000, ..Default::default() };
        assert!(generate_corpus(&bad, Seed(0)).is_err());
        let bad = GeneratorSettings { ops: vec![ArithOp::Mul], min_operand: 600, max_operand: 999, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn record_validation() {
        assert_eq!(CorpusRecord::new("", "4", "4"), Err(CorpusError::EmptyPrompt));
        assert_eq!(CorpusRecord::new("2+2=", " ", ""), Err(CorpusError::EmptyCompletion));
        assert!(matches!(CorpusRecord::new("2+2=", "5", "4"), Err(CorpusError::AnswerNotInCompletion { .. })));
        assert!(CorpusRecord::new("2+2=", "4", "4").is_ok());
    }

    fn report(texts: &[&str]) -> EntropyReport {
        let vocab = Vocabulary::build(texts.iter().copied(), VocabSettings { min_freq: 1 }).unwrap();
        let seqs: Vec<Vec<TokenId>> = texts.iter().map(|t| vocab.encode(t).unwrap()).collect();
        entropy_report(seqs.iter().map(Vec::as_slice), &vocab).unwrap()
    }

    #[test]
    fn degenerate_and_uniform_entropy() {
        let r = report(&["7 7 7 7"]);
        assert_eq!(r.total_entropy_nats, 0.0);
        let r = report(&["a b c d e"]);
        assert!((r.total_entropy_nats - libm::log(5.0)).abs() < 1e-12);
        let sum: f64 = r.per_class.iter().map(|c| c.p_mass).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_corpus_report_errors() {
        let vocab = Vocabulary::build(["a"], VocabSettings::default()).unwrap();
        assert_eq!(entropy_report(core::iter::empty(), &vocab), Err(CorpusError::EmptyCorpus));
    }
}
