//! Whitespace tokenization, fixed-length slicing and corpus ingestion.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{HiclError, Result};

pub const CLS: usize = 0;
pub const SEP: usize = 1;
pub const PAD: usize = 2;
pub const UNK: usize = 3;
pub const MASK: usize = 4;
pub const SPECIAL_TOKENS: [&str; 5] = ["[CLS]", "[SEP]", "[PAD]", "[UNK]", "[MASK]"];

/// Longest sequence kept, specials included.
pub const MAX_SEQ_LEN: usize = 512;
pub const DEFAULT_SLICE_LEN: usize = 32;
pub const DEFAULT_VOCAB_LIMIT: usize = 30_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<String>())
    }
}

impl Vocab {
    /// Specials first, then `tokens` in order (duplicates and specials skipped).
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self { tokens: Vec::new(), index: HashMap::new() };
        for t in SPECIAL_TOKENS.iter().map(|s| s.to_string()).chain(tokens.into_iter().map(Into::into)) {
            if !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    /// The `limit` most frequent lowercased words; frequency ties break
    /// lexicographically.
    pub fn build<S: AsRef<str>>(lines: &[S], limit: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for line in lines {
            for w in words(line.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(ranked.into_iter().take(limit).map(|(w, _)| w))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Vocab file body: one non-special token per line; line `n` is id `5 + n`.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens[SPECIAL_TOKENS.len()..] {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() || line.contains(char::is_whitespace) || SPECIAL_TOKENS.contains(&line) {
                return Err(HiclError::Parse { line: n + 1, message: format!("invalid vocab token {line:?}") });
            }
            tokens.push(line.to_string());
        }
        let v = Self::from_tokens(tokens.iter().cloned());
        if v.len() != tokens.len() + SPECIAL_TOKENS.len() {
            return Err(HiclError::invalid("vocab file contains duplicate tokens"));
        }
        Ok(v)
    }
}

fn words(line: &str) -> impl Iterator<Item = String> + '_ {
    line.split_whitespace().map(str::to_lowercase)
}

/// A tokenized sequence: `[CLS] body.. [SEP]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<usize>,
    /// 1-based source line, 0 when not read from a file.
    pub line: usize,
}

impl TokenSeq {
    /// Wrap body ids with CLS/SEP, truncating the body to fit [`MAX_SEQ_LEN`].
    pub fn from_body(body: &[usize], line: usize) -> Self {
        let keep = body.len().min(MAX_SEQ_LEN - 2);
        let mut ids = Vec::with_capacity(keep + 2);
        ids.push(CLS);
        ids.extend_from_slice(&body[..keep]);
        ids.push(SEP);
        Self { ids, line }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn body(&self) -> &[usize] {
        &self.ids[1..self.ids.len() - 1]
    }
}

pub fn tokenize(line: &str, vocab: &Vocab) -> TokenSeq {
    tokenize_line(line, vocab, 0)
}

fn tokenize_line(line: &str, vocab: &Vocab, line_no: usize) -> TokenSeq {
    let body: Vec<usize> = words(line).map(|w| vocab.id(&w)).collect();
    TokenSeq::from_body(&body, line_no)
}

/// One slice `seg_{i,j}` of a parent sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentView {
    pub parent: usize,
    pub index: usize,
    pub ids: Vec<usize>,
}

impl SegmentView {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Number of segments `1 + floor((len - 1) / L)` for a sequence of `len >= 1` tokens.
pub fn segment_count(len: usize, slice_len: usize) -> usize {
    1 + (len.saturating_sub(1)) / slice_len
}

/// Cut `seq` into consecutive non-overlapping runs of `slice_len` tokens; the
/// remainder (between 1 and `slice_len` tokens) forms the last segment.
pub fn slice(seq: &TokenSeq, slice_len: usize, parent: usize) -> Result<Vec<SegmentView>> {
    if slice_len == 0 {
        return Err(HiclError::invalid("slice length must be at least 1"));
    }
    Ok(seq
        .ids
        .chunks(slice_len)
        .enumerate()
        .map(|(index, ids)| SegmentView { parent, index, ids: ids.to_vec() })
        .collect())
}

pub const LENGTH_BUCKETS: [(usize, usize); 6] = [(0, 32), (32, 64), (64, 96), (96, 128), (128, 256), (256, 512)];

/// Sequence-length distribution over [`LENGTH_BUCKETS`] (upper bounds
/// inclusive) plus an overflow bucket, and per-sequence segment counts.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats {
    pub slice_len: usize,
    pub counts: Vec<usize>,
    pub overflow: usize,
    /// Percentages for each bucket in [`LENGTH_BUCKETS`].
    pub proportions: Vec<f64>,
    pub overflow_proportion: f64,
    pub segment_counts: Vec<usize>,
}

impl CorpusStats {
    pub fn total(&self) -> usize {
        self.segment_counts.len()
    }

    /// `(segments per sequence, number of sequences)`, ascending.
    pub fn segment_histogram(&self) -> Vec<(usize, usize)> {
        let mut hist = std::collections::BTreeMap::new();
        for &c in &self.segment_counts {
            *hist.entry(c).or_insert(0usize) += 1;
        }
        hist.into_iter().collect()
    }

    /// Percentage of sequences that split into at most `k` segments.
    pub fn percent_within_segments(&self, k: usize) -> f64 {
        let n = self.segment_counts.iter().filter(|&&c| c <= k).count();
        100.0 * n as f64 / self.total() as f64
    }

    /// Tab-separated table: one bucket per line, then the segment histogram.
    pub fn to_table(&self) -> String {
        let mut out = String::from("bucket\tcount\tpercent\n");
        for ((lo, hi), (c, p)) in LENGTH_BUCKETS.iter().zip(self.counts.iter().zip(&self.proportions)) {
            let open = if *lo == 0 { '[' } else { '(' };
            out.push_str(&format!("{open}{lo},{hi}]\t{c}\t{p:.3}\n"));
        }
        out.push_str(&format!("(512,inf)\t{}\t{:.3}\n", self.overflow, self.overflow_proportion));
        out.push_str(&format!("\nsegments(L={})\tcount\n", self.slice_len));
        for (k, n) in self.segment_histogram() {
            out.push_str(&format!("{k}\t{n}\n"));
        }
        out.push_str(&format!("percent_le_3_segments\t{:.3}\n", self.percent_within_segments(3)));
        out
    }
}

pub fn corpus_stats(corpus: &[TokenSeq], slice_len: usize) -> Result<CorpusStats> {
    length_stats(corpus.iter().map(TokenSeq::len), slice_len)
}

/// [`corpus_stats`] over raw lengths, so over-length inputs can be bucketed
/// before truncation.
pub fn length_stats(lengths: impl IntoIterator<Item = usize>, slice_len: usize) -> Result<CorpusStats> {
    if slice_len == 0 {
        return Err(HiclError::invalid("slice length must be at least 1"));
    }
    let mut counts = vec![0usize; LENGTH_BUCKETS.len()];
    let mut overflow = 0;
    let mut segment_counts = Vec::new();
    for len in lengths {
        match LENGTH_BUCKETS.iter().position(|&(lo, hi)| (lo == 0 || len > lo) && len <= hi) {
            Some(b) => counts[b] += 1,
            None => overflow += 1,
        }
        segment_counts.push(segment_count(len, slice_len));
    }
    let total = segment_counts.len();
    if total == 0 {
        return Err(HiclError::invalid("corpus is empty"));
    }
    let pct = |c: usize| 100.0 * c as f64 / total as f64;
    Ok(CorpusStats {
        slice_len,
        proportions: counts.iter().map(|&c| pct(c)).collect(),
        overflow_proportion: pct(overflow),
        counts,
        overflow,
        segment_counts,
    })
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?.lines().map(str::to_string).collect())
}

/// One sequence per line, in file order.
pub fn load_corpus(path: &Path, vocab: &Vocab) -> Result<Vec<TokenSeq>> {
    Ok(read_lines(path)?
        .iter()
        .enumerate()
        .map(|(n, line)| tokenize_line(line, vocab, n + 1))
        .collect())
}

/// Parse one `sentence1 \t sentence2 \t score` line.
pub fn parse_sts_line(line: &str, line_no: usize) -> Result<(String, String, f64)> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(HiclError::Parse { line: line_no, message: format!("expected 3 tab-separated fields, found {}", fields.len()) });
    }
    let score: f64 = fields[2]
        .trim()
        .parse()
        .map_err(|_| HiclError::Parse { line: line_no, message: format!("unparsable score {:?}", fields[2]) })?;
    if !(0.0..=5.0).contains(&score) {
        return Err(HiclError::Parse { line: line_no, message: format!("score {score} outside [0, 5]") });
    }
    Ok((fields[0].to_string(), fields[1].to_string(), score))
}

pub fn load_sts(path: &Path, vocab: &Vocab) -> Result<Vec<(TokenSeq, TokenSeq, f64)>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(n, line)| {
            let (a, b, score) = parse_sts_line(line, n + 1)?;
            Ok((tokenize_line(&a, vocab, n + 1), tokenize_line(&b, vocab, n + 1), score))
        })
        .collect()
}
