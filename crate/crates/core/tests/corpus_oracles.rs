mod common;

use std::collections::HashMap;

use dsft_core::corpus::{entropy_report, generate_corpus};
use dsft_core::tokenizer::{TokenClass, TokenId, VocabSettings};
use dsft_core::{GeneratorSettings, Seed, Vocabulary};
use rand::seq::SliceRandom;

/// Independent evaluator: re-parses every `a op b = c.` sentence and recomputes it.
fn recheck(prompt: &str, completion: &str, answer: &str) -> Result<(), String> {
    let sentences: Vec<&str> = completion.split(". ").map(|s| s.trim_end_matches('.')).collect();
    let (last, equations) = sentences.split_last().ok_or("empty completion")?;
    let stated = last.strip_prefix("The answer is ").ok_or_else(|| format!("bad ending {last:?}"))?;
    if stated != answer {
        return Err(format!("answer field {answer:?} vs stated {stated:?}"));
    }
    let mut carried: Option<i64> = None;
    for eq in equations {
        let parts: Vec<&str> = eq.split(' ').collect();
        let [a, op, b, "=", c] = parts[..] else { return Err(format!("unparsable equation {eq:?}")) };
        let (a, b, c): (i64, i64, i64) = (a.parse().unwrap(), b.parse().unwrap(), c.parse().unwrap());
        let value = match op {
            "+" => a + b,
            "-" => a - b,
            "\u{d7}" => a * b,
            "/" => {
                if b == 0 || a % b != 0 {
                    return Err(format!("inexact division {eq:?}"));
                }
                a / b
            }
            other => return Err(format!("unknown operator {other:?}")),
        };
        if value != c {
            return Err(format!("{eq:?} is false"));
        }
        if !(0..=999).contains(&c) || !(0..=999).contains(&a) || !(0..=999).contains(&b) {
            return Err(format!("{eq:?} leaves 0..=999"));
        }
        if let Some(prev) = carried {
            if prev != a {
                return Err(format!("chain broken at {eq:?}"));
            }
        } else if !prompt.contains(&format!(" has {a} ")) {
            return Err(format!("first operand {a} not in prompt"));
        }
        carried = Some(c);
    }
    match carried {
        Some(c) if c.to_string() == answer => Ok(()),
        _ => Err("final result does not match answer".into()),
    }
}

#[test]
fn ten_thousand_records_recheck_true() {
    let records = common::corpus(10_000, 2024);
    for (i, r) in records.iter().enumerate() {
        if let Err(e) = recheck(&r.prompt, &r.completion, &r.answer) {
            panic!("record {i}: {e}\n{r:?}");
        }
    }
}

#[test]
fn single_addition_record_shape() {
    use dsft_core::corpus::ArithOp;
    let settings =
        GeneratorSettings { count: 1, ops: vec![ArithOp::Add], min_operand: 1, max_operand: 9, max_steps: 1 };
    let r = &generate_corpus(&settings, Seed(7)).unwrap()[0];
    let parts: Vec<&str> = r.completion.split(' ').collect();
    let (n, m): (u32, u32) = (parts[0].parse().unwrap(), parts[2].parse().unwrap());
    assert_eq!(r.completion, format!("{n} + {m} = {}. The answer is {}.", n + m, n + m));
    assert!(r.prompt.contains(&format!(" {n} ")) && r.prompt.contains(&format!(" {m} ")));
    assert!(r.prompt.ends_with('?'));
    assert_eq!(generate_corpus(&settings, Seed(7)).unwrap()[0], *r);
}

/// Brute-force H(X) and per-class surprisal straight from token counts.
fn brute(seqs: &[Vec<TokenId>], vocab: &Vocabulary) -> (f64, HashMap<TokenClass, f64>) {
    let mut counts: HashMap<TokenId, f64> = HashMap::new();
    for s in seqs {
        for &t in s {
            *counts.entry(t).or_default() += 1.0;
        }
    }
    let n: f64 = counts.values().sum();
    let h = counts.values().map(|&c| -(c / n) * (c / n).ln()).sum();
    let mut surprisal: HashMap<TokenClass, (f64, f64)> = HashMap::new();
    for (&t, &c) in &counts {
        let e = surprisal.entry(vocab.class_of(t).unwrap()).or_default();
        e.0 += c * -(c / n).ln();
        e.1 += c;
    }
    (h, surprisal.into_iter().map(|(k, (s, c))| (k, s / c)).collect())
}

#[test]
fn entropy_matches_brute_force() {
    let records = common::corpus(1000, 9);
    let vocab = common::vocab_for(&records);
    let seqs: Vec<Vec<TokenId>> = common::tokenized(&records, &vocab).iter().map(|s| s.ids().to_vec()).collect();
    let report = entropy_report(seqs.iter().map(Vec::as_slice), &vocab).unwrap();
    let (h, surprisal) = brute(&seqs, &vocab);
    assert!((report.total_entropy_nats - h).abs() <= 1e-12, "{} vs {h}", report.total_entropy_nats);
    for (class, s) in surprisal {
        let got = report.class(class).mean_surprisal_nats.unwrap();
        assert!((got - s).abs() <= 1e-12, "{class:?}: {got} vs {s}");
    }
    let mass: f64 = report.per_class.iter().map(|c| c.p_mass).sum();
    assert!((mass - 1.0).abs() <= 1e-9);
    assert!(report.total_entropy_nats >= 0.0 && report.total_entropy_nats <= (vocab.len() as f64).ln());
    let class_sum: f64 = report.per_class.iter().map(|c| c.entropy_nats).sum();
    assert!((class_sum - report.total_entropy_nats).abs() <= 1e-12);
}

#[test]
fn degenerate_and_uniform_corpora() {
    let vocab = Vocabulary::build(["a b c d e"], VocabSettings { min_freq: 1 }).unwrap();
    let a = vocab.id("a").unwrap();
    let one = vec![a; 50];
    assert_eq!(entropy_report([one.as_slice()], &vocab).unwrap().total_entropy_nats, 0.0);
    let all: Vec<TokenId> = (0..vocab.len() as TokenId).collect();
    let r = entropy_report([all.as_slice()], &vocab).unwrap();
    assert!((r.total_entropy_nats - (vocab.len() as f64).ln()).abs() < 1e-12);
}

#[test]
fn entropy_report_is_permutation_invariant() {
    let records = common::corpus(300, 4);
    let vocab = common::vocab_for(&records);
    let mut seqs: Vec<Vec<TokenId>> = common::tokenized(&records, &vocab).iter().map(|s| s.ids().to_vec()).collect();
    let before = entropy_report(seqs.iter().map(Vec::as_slice), &vocab).unwrap();
    seqs.shuffle(&mut common::rng(1));
    let after = entropy_report(seqs.iter().map(Vec::as_slice), &vocab).unwrap();
    assert_eq!(before, after);
}

#[test]
fn numbers_carry_more_surprisal_than_stopwords_on_default_corpus() {
    let (vocab, seqs) = common::default_corpus();
    let report = entropy_report(seqs.iter().map(|s| s.ids()), &vocab).unwrap();
    assert_eq!(report.stopwords.len(), 10);
    let numeric = report.class(TokenClass::Numeric).mean_surprisal_nats.unwrap();
    let stop = report.stopword_mean_surprisal_nats.unwrap();
    assert!(numeric > stop, "numeric {numeric} vs stopwords {stop}");
    assert!(report.numeric_exceeds_stopwords());
}
