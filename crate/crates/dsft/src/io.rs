//! Corpus JSONL, vocabulary files and content hashes.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use dsft_core::tokenizer::{TokenizedSequence, VocabSettings};
use dsft_core::{CorpusRecord, Vocabulary};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    Ok(sha256_hex(&bytes))
}

/// One record per line, keys `prompt`, `completion`, `answer`.
pub fn records_to_jsonl(records: &[CorpusRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("records always serialize"));
        s.push('\n');
    }
    s
}

/// Parse JSONL text. Blank lines are skipped; every record is validated.
pub fn records_from_jsonl(text: &str, origin: &Path) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse { path: origin.to_path_buf(), line: i + 1, message };
        let r: CorpusRecord = serde_json::from_str(line).map_err(|e| perr(e.to_string()))?;
        r.validate().map_err(|e| perr(e.to_string()))?;
        out.push(r);
    }
    Ok(out)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<CorpusRecord>> {
    let file = fs::File::open(path).map_err(Error::io(path))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(Error::io(path))?);
        text.push('\n');
    }
    records_from_jsonl(&text, path)
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let mut f = fs::File::create(path).map_err(Error::io(path))?;
    f.write_all(contents).map_err(Error::io(path))
}

pub fn write_jsonl(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    write_file(path, records_to_jsonl(records).as_bytes())
}

/// Content hash of a corpus, independent of how its file was formatted.
pub fn corpus_fingerprint(records: &[CorpusRecord]) -> String {
    sha256_hex(records_to_jsonl(records).as_bytes())
}

pub fn vocab_hash(vocab: &Vocabulary) -> String {
    sha256_hex(vocab.to_text().as_bytes())
}

pub fn build_vocab(records: &[CorpusRecord], min_freq: usize) -> Result<Vocabulary> {
    let texts = records.iter().flat_map(|r| [r.prompt.as_str(), r.completion.as_str()]);
    Ok(Vocabulary::build(texts, VocabSettings { min_freq })?)
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    Vocabulary::from_text(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), line: 0, message: e.to_string() })
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    write_file(path, vocab.to_text().as_bytes())
}

/// Tokenize every record, naming the offending record on failure.
pub fn tokenize_records(records: &[CorpusRecord], vocab: &Vocabulary) -> Result<Vec<TokenizedSequence>> {
    records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            vocab.tokenize_pair(&r.prompt, &r.completion).map_err(|e| Error::Record { index, message: e.to_string() })
        })
        .collect()
}

/// Write any serializable value as pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), line: e.line(), message: e.to_string() })
}
