//! Word/digit tokenizer with per-token semantic classes.
//!
//! Text is split on whitespace; inside each chunk, ASCII digits become one token each,
//! a `.` between two digits becomes the decimal-point token, operator symbols are
//! atomic, and ASCII punctuation is split off. A word piece that continues a chunk
//! (for example the `.` in `19.`) carries a `##` prefix so that detokenization can
//! glue it back without a space. Consecutive numeric tokens are always glued, which
//! means whitespace between two adjacent numbers is not preserved.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

pub type TokenId = u32;

pub const MASK_ID: TokenId = 0;
pub const PAD_ID: TokenId = 1;
pub const BOS_ID: TokenId = 2;
pub const EOS_ID: TokenId = 3;
pub const SEP_ID: TokenId = 4;
pub const UNK_ID: TokenId = 5;

/// Special tokens in id order.
pub const SPECIAL_TOKENS: [&str; 5] = ["[MASK]", "[PAD]", "[BOS]", "[EOS]", "[SEP]"];
pub const UNK_TOKEN: &str = "[UNK]";
pub const DECIMAL_POINT: &str = ".";
pub const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
/// Operator symbols. ASCII `-` and `*` are accepted next to `−` and `×`.
pub const OPERATORS: [&str; 13] = [
    "+", "-", "\u{2212}", "*", "\u{d7}", "/", "=", "<", ">", "%", "(", ")", "\u{f7}",
];

pub const VOCAB_HEADER: &str = "DSFT-VOCAB v1";
const CONTINUATION: &str = "##";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("prompt region is empty")]
    EmptyPrompt,
    #[error("completion region is empty")]
    EmptyCompletion,
    #[error("prompt boundary {offset} is outside the text or not on a char boundary")]
    BoundaryOutOfRange { offset: usize },
    #[error("prompt boundary {offset} does not fall on whitespace")]
    BoundaryNotWhitespace { offset: usize },
    #[error("unmappable character {ch:?} at byte offset {offset}")]
    Unmappable { offset: usize, ch: char },
    #[error("token id {0} is not in the vocabulary")]
    UnknownId(TokenId),
    #[error("vocabulary format error at line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Semantic class of a token string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum TokenClass {
    Numeric,
    Operator,
    Word,
    Special,
}

impl TokenClass {
    pub const ALL: [TokenClass; 4] = [
        TokenClass::Numeric,
        TokenClass::Operator,
        TokenClass::Word,
        TokenClass::Special,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TokenClass::Numeric => "numeric",
            TokenClass::Operator => "operator",
            TokenClass::Word => "word",
            TokenClass::Special => "special",
        }
    }
}

/// Context-free classification of a token string.
pub fn classify_token(token: &str) -> TokenClass {
    if token == DECIMAL_POINT || DIGITS.contains(&token) {
        TokenClass::Numeric
    } else if OPERATORS.contains(&token) {
        TokenClass::Operator
    } else if SPECIAL_TOKENS.contains(&token) {
        TokenClass::Special
    } else {
        TokenClass::Word
    }
}

fn is_operator_char(c: char) -> bool {
    let mut buf = [0u8; 4];
    OPERATORS.contains(&&*c.encode_utf8(&mut buf))
}

/// One pre-tokenized unit with its byte offset in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Piece {
    text: String,
    offset: usize,
}

fn pretokenize(text: &str, base: usize) -> Result<Vec<Piece>, TokenizerError> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    let mut chunk_start = true;
    while i < chars.len() {
        let (off, c) = chars[i];
        if c.is_whitespace() {
            chunk_start = true;
            i += 1;
            continue;
        }
        if c.is_control() {
            return Err(TokenizerError::Unmappable { offset: base + off, ch: c });
        }
        let prev_digit = i > 0 && chars[i - 1].1.is_ascii_digit();
        let next_digit = chars.get(i + 1).is_some_and(|(_, n)| n.is_ascii_digit());
        let text = if c.is_ascii_digit() || is_operator_char(c) || (c == '.' && prev_digit && next_digit)
        {
            i += 1;
            c.to_string()
        } else {
            let word = if c.is_ascii_punctuation() {
                i += 1;
                c.to_string()
            } else {
                let mut w = String::new();
                while i < chars.len() {
                    let c = chars[i].1;
                    if c.is_whitespace() || c.is_ascii_digit() || c.is_ascii_punctuation() || is_operator_char(c)
                    {
                        break;
                    }
                    if c.is_control() {
                        return Err(TokenizerError::Unmappable { offset: base + chars[i].0, ch: c });
                    }
                    w.push(c);
                    i += 1;
                }
                w
            };
            // A bare word piece must never collide with the decimal-point token.
            if chunk_start && word != DECIMAL_POINT {
                word
            } else {
                format!("{CONTINUATION}{word}")
            }
        };
        out.push(Piece { text, offset: base + off });
        chunk_start = false;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabSettings {
    /// Minimum occurrence count for a word piece to get its own id.
    pub min_freq: usize,
}

impl Default for VocabSettings {
    fn default() -> Self {
        VocabSettings { min_freq: 2 }
    }
}

/// Immutable token table. Ids are dense `0..len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    classes: Vec<TokenClass>,
    index: BTreeMap<String, TokenId>,
}

impl Vocabulary {
    /// Build a vocabulary from raw text records.
    ///
    /// Word pieces are ordered by descending frequency, then lexicographically, so the
    /// result does not depend on record order.
    pub fn build<'a, I>(texts: I, settings: VocabSettings) -> Result<Self, TokenizerError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut any = false;
        for text in texts {
            any = true;
            for piece in pretokenize(text, 0)? {
                if classify_token(&piece.text) == TokenClass::Word {
                    *counts.entry(piece.text).or_default() += 1;
                }
            }
        }
        if !any {
            return Err(TokenizerError::EmptyCorpus);
        }
        let mut words: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, n)| *n >= settings.min_freq.max(1)).collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut tokens: Vec<String> = Self::fixed_tokens();
        tokens.extend(words.into_iter().map(|(w, _)| w).filter(|w| w != UNK_TOKEN));
        Self::from_tokens(tokens)
    }

    fn fixed_tokens() -> Vec<String> {
        SPECIAL_TOKENS
            .iter()
            .chain(core::iter::once(&UNK_TOKEN))
            .chain(DIGITS.iter())
            .chain(core::iter::once(&DECIMAL_POINT))
            .chain(OPERATORS.iter())
            .map(|s| s.to_string())
            .collect()
    }

    /// Construct from an explicit id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, TokenizerError> {
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*special) {
                return Err(TokenizerError::Format {
                    line: i + 2,
                    message: format!("expected special token {special} at id {i}"),
                });
            }
        }
        if tokens.get(UNK_ID as usize).map(String::as_str) != Some(UNK_TOKEN) {
            return Err(TokenizerError::Format {
                line: UNK_ID as usize + 2,
                message: format!("expected {UNK_TOKEN} at id {UNK_ID}"),
            });
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(TokenizerError::Format {
                    line: i + 2,
                    message: format!("invalid token {t:?}"),
                });
            }
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(TokenizerError::Format {
                    line: i + 2,
                    message: format!("duplicate token {t:?}"),
                });
            }
        }
        let classes = tokens
            .iter()
            .map(|t| if t == UNK_TOKEN { TokenClass::Word } else { classify_token(t) })
            .collect();
        Ok(Vocabulary { tokens, classes, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn class_of(&self, id: TokenId) -> Option<TokenClass> {
        self.classes.get(id as usize).copied()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    /// Serialized form: header line, then one token per line (line order = id order).
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.tokens.iter().map(|t| t.len() + 1).sum::<usize>() + 16);
        s.push_str(VOCAB_HEADER);
        s.push('\n');
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(VOCAB_HEADER) => {}
            other => {
                return Err(TokenizerError::Format {
                    line: 1,
                    message: format!("expected header {VOCAB_HEADER:?}, found {other:?}"),
                })
            }
        }
        Self::from_tokens(lines.map(str::to_string).collect())
    }

    fn encode_pieces(&self, pieces: Vec<Piece>, ids: &mut Vec<TokenId>) {
        for p in pieces {
            ids.push(self.id(&p.text).unwrap_or(UNK_ID));
        }
    }

    /// Tokenize `text` without any prompt/completion split.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, TokenizerError> {
        let mut ids = Vec::new();
        self.encode_pieces(pretokenize(text, 0)?, &mut ids);
        Ok(ids)
    }

    /// Tokenize a prompt for generation: the prompt tokens followed by SEP.
    pub fn encode_prompt(&self, prompt: &str) -> Result<Vec<TokenId>, TokenizerError> {
        let mut ids = self.encode(prompt)?;
        if ids.is_empty() {
            return Err(TokenizerError::EmptyPrompt);
        }
        ids.push(SEP_ID);
        Ok(ids)
    }

    /// Split `text` at `prompt_boundary` (a byte offset on whitespace) and tokenize both
    /// sides, inserting SEP between them.
    pub fn tokenize(&self, text: &str, prompt_boundary: usize) -> Result<TokenizedSequence, TokenizerError> {
        if prompt_boundary > text.len() || !text.is_char_boundary(prompt_boundary) {
            return Err(TokenizerError::BoundaryOutOfRange { offset: prompt_boundary });
        }
        let (prompt, completion) = text.split_at(prompt_boundary);
        let on_whitespace = prompt.is_empty()
            || completion.is_empty()
            || prompt.ends_with(char::is_whitespace)
            || completion.starts_with(char::is_whitespace);
        if !on_whitespace {
            return Err(TokenizerError::BoundaryNotWhitespace { offset: prompt_boundary });
        }
        let mut ids = Vec::new();
        self.encode_pieces(pretokenize(prompt, 0)?, &mut ids);
        if ids.is_empty() {
            return Err(TokenizerError::EmptyPrompt);
        }
        ids.push(SEP_ID);
        let prompt_len = ids.len();
        self.encode_pieces(pretokenize(completion, prompt_boundary)?, &mut ids);
        if ids.len() == prompt_len {
            return Err(TokenizerError::EmptyCompletion);
        }
        TokenizedSequence::from_ids(ids, prompt_len, self)
    }

    /// Tokenize a prompt/completion pair joined by a single space.
    pub fn tokenize_pair(&self, prompt: &str, completion: &str) -> Result<TokenizedSequence, TokenizerError> {
        let mut text = String::with_capacity(prompt.len() + completion.len() + 1);
        text.push_str(prompt);
        text.push(' ');
        text.push_str(completion);
        self.tokenize(&text, prompt.len())
    }

    /// Render ids back to text. Special tokens other than MASK and UNK are dropped;
    /// SEP renders as a word break.
    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        let mut prev_numeric = false;
        for &id in ids {
            let tok = self.token(id).ok_or(TokenizerError::UnknownId(id))?;
            match id {
                SEP_ID | PAD_ID | BOS_ID | EOS_ID => {
                    prev_numeric = false;
                    continue;
                }
                _ => {}
            }
            let numeric = self.classes[id as usize] == TokenClass::Numeric;
            if let Some(rest) = tok.strip_prefix(CONTINUATION).filter(|r| !r.is_empty()) {
                out.push_str(rest);
            } else {
                if !out.is_empty() && !(numeric && prev_numeric) {
                    out.push(' ');
                }
                out.push_str(tok);
            }
            prev_numeric = numeric;
        }
        Ok(out)
    }
}

/// A clean sequence: prompt tokens, SEP, completion tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSequence {
    ids: Vec<TokenId>,
    classes: Vec<TokenClass>,
    prompt_len: usize,
}

impl TokenizedSequence {
    pub fn from_ids(ids: Vec<TokenId>, prompt_len: usize, vocab: &Vocabulary) -> Result<Self, TokenizerError> {
        let classes = ids
            .iter()
            .map(|&id| vocab.class_of(id).ok_or(TokenizerError::UnknownId(id)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(ids, classes, prompt_len)
    }

    pub fn new(ids: Vec<TokenId>, classes: Vec<TokenClass>, prompt_len: usize) -> Result<Self, TokenizerError> {
        assert_eq!(ids.len(), classes.len(), "ids and classes must have equal length");
        if prompt_len == 0 || ids[prompt_len - 1] != SEP_ID {
            return Err(TokenizerError::EmptyPrompt);
        }
        if prompt_len >= ids.len() {
            return Err(TokenizerError::EmptyCompletion);
        }
        Ok(TokenizedSequence { ids, classes, prompt_len })
    }

    /// Build without validating the prompt/completion invariants. Used by callers that
    /// must report those violations themselves.
    pub fn new_unchecked(ids: Vec<TokenId>, classes: Vec<TokenClass>, prompt_len: usize) -> Self {
        assert_eq!(ids.len(), classes.len(), "ids and classes must have equal length");
        TokenizedSequence { ids, classes, prompt_len }
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn classes(&self) -> &[TokenClass] {
        &self.classes
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of completion (mask-eligible) positions.
    pub fn completion_len(&self) -> usize {
        self.ids.len().saturating_sub(self.prompt_len)
    }

    pub fn completion_ids(&self) -> &[TokenId] {
        &self.ids[self.prompt_len.min(self.ids.len())..]
    }

    pub fn prompt_ids(&self) -> &[TokenId] {
        &self.ids[..self.prompt_len.min(self.ids.len())]
    }

    /// Append EOS tokens until the completion has `completion_len` positions.
    /// Sequences that are already at least that long are returned unchanged.
    pub fn pad_completion(&self, completion_len: usize) -> TokenizedSequence {
        let mut seq = self.clone();
        while seq.completion_len() < completion_len {
            seq.ids.push(EOS_ID);
            seq.classes.push(TokenClass::Special);
        }
        seq
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn vocab(texts: &[&str]) -> Vocabulary {
        Vocabulary::build(texts.iter().copied(), VocabSettings { min_freq: 1 }).unwrap()
    }

    #[test]
    fn classification() {
        assert_eq!(classify_token("7"), TokenClass::Numeric);
        assert_eq!(classify_token("."), TokenClass::Numeric);
        assert_eq!(classify_token("="), TokenClass::Operator);
        assert_eq!(classify_token("-"), TokenClass::Operator);
        assert_eq!(classify_token("the"), TokenClass::Word);
        assert_eq!(classify_token("[SEP]"), TokenClass::Special);
        assert_eq!(classify_token("12"), TokenClass::Word);
    }

    #[test]
    fn digits_and_operators_are_atomic() {
        let v = vocab(&["3 + 4 = 7"]);
        for t in ["3", "+", "4", "=", "7"] {
            assert!(v.id(t).is_some(), "{t} missing");
        }
        assert_eq!(&v.tokens[..5], &SPECIAL_TOKENS.map(String::from));
    }

    #[test]
    fn frequency_floor() {
        let texts = ["apples apples apples apples apples"];
        let v = Vocabulary::build(texts, VocabSettings { min_freq: 3 }).unwrap();
        assert!(v.id("apples").is_some());
        let v = Vocabulary::build(texts, VocabSettings { min_freq: 10 }).unwrap();
        assert!(v.id("apples").is_none());
        assert_eq!(v.encode("apples").unwrap(), vec![UNK_ID]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert_eq!(
            Vocabulary::build(core::iter::empty(), VocabSettings::default()),
            Err(TokenizerError::EmptyCorpus)
        );
    }

    #[test]
    fn build_is_deterministic_and_order_free() {
        let a = vocab(&["b a a", "c c c 1"]);
        let b = vocab(&["c c c 1", "b a a"]);
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(Vocabulary::from_text(&a.to_text()).unwrap(), a);
    }

    #[test]
    fn tokenize_splits_digits_and_inserts_sep() {
        let v = vocab(&["x = 12"]);
        let seq = v.tokenize("x = 12", 3).unwrap();
        let expect: Vec<TokenId> = ["x", "=", "[SEP]", "1", "2"].iter().map(|t| v.id(t).unwrap()).collect();
        assert_eq!(seq.ids(), &expect[..]);
        assert_eq!(
            seq.classes(),
            &[TokenClass::Word, TokenClass::Operator, TokenClass::Special, TokenClass::Numeric, TokenClass::Numeric]
        );
        assert_eq!(seq.prompt_len(), 3);
        assert_eq!(v.detokenize(seq.ids()).unwrap(), "x = 12");
    }

    #[test]
    fn tokenize_errors() {
        let v = vocab(&["x = 12"]);
        assert_eq!(v.tokenize("x = 12", 0), Err(TokenizerError::EmptyPrompt));
        assert_eq!(v.tokenize("   x = 12", 2), Err(TokenizerError::EmptyPrompt));
        assert_eq!(v.tokenize("x = 12", 6), Err(TokenizerError::EmptyCompletion));
        assert_eq!(v.tokenize("x = 12", 5), Err(TokenizerError::BoundaryNotWhitespace { offset: 5 }));
        assert_eq!(v.tokenize("x = 12", 9), Err(TokenizerError::BoundaryOutOfRange { offset: 9 }));
        assert_eq!(
            v.tokenize("x = 1\u{7}2", 3),
            Err(TokenizerError::Unmappable { offset: 5, ch: '\u{7}' })
        );
    }

    #[test]
    fn punctuation_and_decimals() {
        let v = vocab(&["It costs 3.50 dollars. The answer is 19."]);
        let ids = v.encode("The answer is 19.").unwrap();
        let toks: Vec<&str> = ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(toks, ["The", "answer", "is", "1", "9", "##."]);
        let ids = v.encode("3.50").unwrap();
        assert!(ids.iter().all(|&i| v.class_of(i) == Some(TokenClass::Numeric)));
        assert_eq!(v.detokenize(&ids).unwrap(), "3.50");
        assert_eq!(
            v.detokenize(&v.encode("It costs 3.50 dollars.").unwrap()).unwrap(),
            "It costs 3.50 dollars."
        );
    }

    #[test]
    fn vocab_text_format() {
        let v = vocab(&["a b"]);
        let text = v.to_text();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(VOCAB_HEADER));
        assert_eq!(lines.next(), Some("[MASK]"));
        assert!(Vocabulary::from_text("nope\n[MASK]").is_err());
    }

    #[test]
    fn pad_completion_appends_eos() {
        let v = vocab(&["x = 12"]);
        let seq = v.tokenize("x = 12", 3).unwrap().pad_completion(4);
        assert_eq!(seq.completion_len(), 4);
        assert_eq!(&seq.ids()[5..], &[EOS_ID, EOS_ID]);
    }
}
