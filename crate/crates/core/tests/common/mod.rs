#![allow(dead_code)]

use dsft_core::corpus::generate_corpus;
use dsft_core::tokenizer::{TokenClass, TokenizedSequence, VocabSettings, SEP_ID};
use dsft_core::{CorpusRecord, GeneratorSettings, Seed, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn corpus(count: usize, seed: u64) -> Vec<CorpusRecord> {
    generate_corpus(&GeneratorSettings { count, ..GeneratorSettings::default() }, Seed(seed)).unwrap()
}

pub fn vocab_for(records: &[CorpusRecord]) -> Vocabulary {
    let texts = records.iter().flat_map(|r| [r.prompt.as_str(), r.completion.as_str()]);
    Vocabulary::build(texts, VocabSettings::default()).unwrap()
}

pub fn tokenized(records: &[CorpusRecord], vocab: &Vocabulary) -> Vec<TokenizedSequence> {
    records.iter().map(|r| vocab.tokenize_pair(&r.prompt, &r.completion).unwrap()).collect()
}

/// The default 5,000-record synthetic corpus with its vocabulary.
pub fn default_corpus() -> (Vocabulary, Vec<TokenizedSequence>) {
    let records = corpus(GeneratorSettings::default().count, 0);
    let vocab = vocab_for(&records);
    let seqs = tokenized(&records, &vocab);
    (vocab, seqs)
}

/// A random well-formed sequence: prompt ending in SEP, non-empty completion,
/// classes drawn with a healthy share of numerics.
pub fn fuzz_sequence(rng: &mut ChaCha8Rng) -> TokenizedSequence {
    let prompt_len = rng.random_range(1..12usize);
    let completion_len = rng.random_range(1..40usize);
    let mut ids = Vec::new();
    let mut classes = Vec::new();
    for i in 0..prompt_len + completion_len {
        if i + 1 == prompt_len {
            ids.push(SEP_ID);
            classes.push(TokenClass::Special);
            continue;
        }
        let class = match rng.random_range(0..10) {
            0..=3 => TokenClass::Numeric,
            4 => TokenClass::Operator,
            _ => TokenClass::Word,
        };
        ids.push(rng.random_range(6..60));
        classes.push(class);
    }
    TokenizedSequence::new(ids, classes, prompt_len).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
