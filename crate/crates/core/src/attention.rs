//! Group-averaged attention heatmaps over prompt slots.
//!
//! A sentence's attention is averaged over layers, heads and the rows of
//! the name's tokens, giving one value per key position. Key positions
//! inside the name collapse into a single `MASK` slot (their mean), the
//! other tokens map to the prompt word they fall in, and special tokens
//! keep their own slot.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::gateway::wire::{ItemResult, ScoreItem, ScoreRequest, Span, WireAttention};
use crate::gateway::{tokens_from_wire, RetryPolicy, ScoreBackend, Token};
use crate::names::PersonName;
use crate::prompts::{complete_text, MASK};

const ROW_SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum AttentionWeights {
    /// `[layer][head][query][key]`.
    Full(Vec<Vec<Vec<Vec<f64>>>>),
    /// `[query][key]`, already averaged over layers and heads.
    Reduced(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionExport {
    pub sentence: String,
    pub tokens: Vec<Token>,
    pub weights: AttentionWeights,
}

fn check_matrix(m: &[Vec<f64>], seq: usize, at: &str) -> Result<()> {
    if m.len() != seq {
        return Err(Error::Schema(format!("{at}: {} rows for {seq} tokens", m.len())));
    }
    for (q, row) in m.iter().enumerate() {
        if row.len() != seq {
            return Err(Error::Schema(format!("{at}: row {q} has {} columns for {seq} tokens", row.len())));
        }
        if row.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::Schema(format!("{at}: row {q} has a negative or NaN weight")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::Schema(format!("{at}: row {q} sums to {sum}")));
        }
    }
    Ok(())
}

impl AttentionExport {
    pub fn new(sentence: impl Into<String>, tokens: Vec<Token>, weights: AttentionWeights) -> Result<Self> {
        let seq = tokens.len();
        match &weights {
            AttentionWeights::Reduced(m) => check_matrix(m, seq, "attention")?,
            AttentionWeights::Full(t) => {
                let heads = t.first().map_or(0, Vec::len);
                if t.is_empty() || heads == 0 {
                    return Err(Error::Schema("attention tensor has no layers or heads".into()));
                }
                for (l, layer) in t.iter().enumerate() {
                    if layer.len() != heads {
                        return Err(Error::Schema(format!("layer {l} has {} heads, expected {heads}", layer.len())));
                    }
                    for (h, m) in layer.iter().enumerate() {
                        check_matrix(m, seq, &format!("layer {l} head {h}"))?;
                    }
                }
            }
        }
        Ok(AttentionExport {
            sentence: sentence.into(),
            tokens,
            weights,
        })
    }

    pub fn from_wire(sentence: &str, item: &ItemResult) -> Result<Self> {
        let tokens = tokens_from_wire(&item.tokens)?;
        let weights = match &item.attention {
            None => return Err(Error::Schema("response carries no attention".into())),
            Some(WireAttention::Reduced(m)) => AttentionWeights::Reduced(m.clone()),
            Some(WireAttention::Full(t)) => AttentionWeights::Full(t.clone()),
        };
        Self::new(sentence, tokens, weights)
    }

    pub fn seq_len(&self) -> usize {
        self.tokens.len()
    }

    /// Mean over layers and heads. Values are summed in sorted order so the
    /// result does not depend on how layers or heads are ordered.
    pub fn mean_matrix(&self) -> Vec<Vec<f64>> {
        match &self.weights {
            AttentionWeights::Reduced(m) => m.clone(),
            AttentionWeights::Full(t) => {
                let n = self.seq_len();
                let count = t.iter().map(Vec::len).sum::<usize>();
                let mut cell = Vec::with_capacity(count);
                (0..n)
                    .map(|q| {
                        (0..n)
                            .map(|k| {
                                cell.clear();
                                cell.extend(t.iter().flatten().map(|m| m[q][k]));
                                cell.sort_by(f64::total_cmp);
                                cell.iter().sum::<f64>() / count as f64
                            })
                            .collect()
                    })
                    .collect()
            }
        }
    }
}

/// Which side of the attention matrix the name's tokens index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Side {
    /// Average the name's rows: where the name looks.
    #[default]
    Query,
    /// Average the name's columns: who looks at the name.
    Key,
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "query" => Ok(Side::Query),
            "key" => Ok(Side::Key),
            _ => Err(Error::InvalidInput(format!("attention side must be query or key, got {s:?}"))),
        }
    }
}

/// Attention mass per slot of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotVector {
    pub slots: Vec<String>,
    pub values: Vec<f64>,
    /// Number of tokens averaged into each slot.
    pub token_counts: Vec<usize>,
}

enum SlotKey {
    Special,
    Name,
    Word(usize),
}

/// Index of the whitespace-delimited word holding each character.
fn word_index_of_chars(text: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut word = 0usize;
    let mut in_space = true;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !in_space {
                word += 1;
            }
            in_space = true;
        } else {
            in_space = false;
        }
        out.push(word);
    }
    out
}

/// Reduces one sentence to a vector over prompt slots.
pub fn reduce_sentence(export: &AttentionExport, name_span: (usize, usize), side: Side) -> Result<SlotVector> {
    let (start, end) = name_span;
    let words = word_index_of_chars(&export.sentence);
    let n_chars = words.len();
    let mut keys = Vec::with_capacity(export.seq_len());
    for t in &export.tokens {
        let key = match t.span {
            None => SlotKey::Special,
            Some((s, e)) if e > n_chars => {
                return Err(Error::Alignment(format!(
                    "token {:?} at {s}..{e} runs past the sentence ({n_chars} chars)",
                    t.text
                )))
            }
            Some((s, e)) if s >= start && e <= end && s < e => SlotKey::Name,
            Some((s, e)) if s < end && e > start => {
                return Err(Error::Alignment(format!(
                    "token {:?} at {s}..{e} straddles the name span {start}..{end}",
                    t.text
                )))
            }
            Some((s, _)) => SlotKey::Word(words.get(s).copied().unwrap_or(usize::MAX)),
        };
        keys.push(key);
    }
    let name_positions: Vec<usize> = keys
        .iter()
        .enumerate()
        .filter(|(_, k)| matches!(k, SlotKey::Name))
        .map(|(i, _)| i)
        .collect();
    if name_positions.is_empty() {
        return Err(Error::NoNameTokens { start, end });
    }

    let m = export.mean_matrix();
    let n = export.seq_len();
    let per_position: Vec<f64> = match side {
        Side::Query => (0..n)
            .map(|k| name_positions.iter().map(|&q| m[q][k]).sum::<f64>() / name_positions.len() as f64)
            .collect(),
        Side::Key => (0..n)
            .map(|q| name_positions.iter().map(|&k| m[q][k]).sum::<f64>() / name_positions.len() as f64)
            .collect(),
    };

    // consecutive tokens of the same word share a slot; the name is one slot
    let mut out = SlotVector {
        slots: Vec::new(),
        values: Vec::new(),
        token_counts: Vec::new(),
    };
    let mut current: Option<(String, usize)> = None;
    for (i, key) in keys.iter().enumerate() {
        let group = match key {
            SlotKey::Special => None,
            SlotKey::Name => Some(("name".to_owned(), usize::MAX)),
            SlotKey::Word(w) => Some(("word".to_owned(), *w)),
        };
        let joins = matches!((&current, &group), (Some(c), Some(g)) if c == g);
        if !joins {
            let label = match key {
                SlotKey::Special => export.tokens[i].text.clone(),
                SlotKey::Name => MASK.to_owned(),
                SlotKey::Word(_) => String::new(),
            };
            out.slots.push(label);
            out.values.push(0.0);
            out.token_counts.push(0);
        }
        let slot = out.slots.len() - 1;
        if let SlotKey::Word(_) = key {
            let (s, e) = export.tokens[i].span.expect("word token has a span");
            let piece: String = export.sentence.chars().skip(s).take(e - s).collect();
            out.slots[slot].push_str(&piece);
        }
        out.values[slot] += per_position[i];
        out.token_counts[slot] += 1;
        current = group;
    }
    for (v, c) in out.values.iter_mut().zip(&out.token_counts) {
        *v /= *c as f64;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    InTrain,
    OutTrain,
}

impl Group {
    pub fn label(self) -> &'static str {
        match self {
            Group::InTrain => "in_train",
            Group::OutTrain => "out_train",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSummary {
    pub prompt_id: String,
    pub group: Group,
    pub slots: Vec<String>,
    pub values: Vec<f64>,
}

/// Elementwise mean of the slot vectors of every name in a group.
pub fn summarize_group(prompt_id: &str, group: Group, vectors: &[(&str, SlotVector)]) -> Result<AttentionSummary> {
    let Some((_, first)) = vectors.first() else {
        return Err(Error::InvalidInput(format!(
            "no sentences for prompt {prompt_id} ({})",
            group.label()
        )));
    };
    let width = first.values.len();
    let mut sum = vec![0.0; width];
    for (name, v) in vectors {
        if v.values.len() != width {
            return Err(Error::Alignment(format!(
                "name {name:?} gives {} slots under prompt {prompt_id}, expected {width}",
                v.values.len()
            )));
        }
        for (s, x) in sum.iter_mut().zip(&v.values) {
            *s += x;
        }
    }
    let n = vectors.len() as f64;
    Ok(AttentionSummary {
        prompt_id: prompt_id.to_owned(),
        group,
        slots: first.slots.clone(),
        values: sum.into_iter().map(|s| s / n).collect(),
    })
}

/// Fetches attention for `template` completed with each name and reduces
/// it per sentence.
pub fn slot_vectors<'n>(
    backend: &dyn ScoreBackend,
    template: &str,
    names: &[&'n PersonName],
    side: Side,
    reduce_server_side: bool,
    retry: &RetryPolicy,
) -> Result<Vec<(&'n str, SlotVector)>> {
    let completed: Vec<_> = names.iter().map(|n| complete_text(template, n)).collect();
    let request = ScoreRequest::new(
        completed
            .iter()
            .map(|c| ScoreItem {
                text: c.text.clone(),
                span: Span {
                    start: c.name_span.0,
                    end: c.name_span.1,
                },
            })
            .collect(),
    )
    .with_attention(reduce_server_side);
    let response = retry.run(|| backend.score(&request))?;
    if response.results.len() != completed.len() {
        return Err(Error::Schema(format!(
            "{} results for {} items",
            response.results.len(),
            completed.len()
        )));
    }
    response
        .results
        .iter()
        .zip(&completed)
        .zip(names)
        .map(|((item, c), name)| {
            let export = AttentionExport::from_wire(&c.text, item)?;
            Ok((name.as_str(), reduce_sentence(&export, c.name_span, side)?))
        })
        .collect()
}

/// Heatmap data in long form for any number of summaries.
pub fn heatmap_tsv(summaries: &[AttentionSummary]) -> String {
    let mut out = String::from("prompt_id\tgroup\tslot_index\tslot\tvalue\n");
    for s in summaries {
        for (i, (slot, v)) in s.slots.iter().zip(&s.values).enumerate() {
            writeln!(out, "{}\t{}\t{i}\t{slot}\t{v}", s.prompt_id, s.group.label()).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(text: &str, span: Option<(usize, usize)>) -> Token {
        Token {
            text: text.into(),
            span,
        }
    }

    // "Hi Ada Love !" with [CLS]/[SEP]
    fn sentence_tokens() -> Vec<Token> {
        vec![
            tok("[CLS]", None),
            tok("Hi", Some((0, 2))),
            tok("Ada", Some((3, 6))),
            tok("Love", Some((7, 11))),
            tok("[SEP]", None),
        ]
    }

    #[test]
    fn uniform_attention_gives_uniform_slots() {
        let m = vec![vec![0.2; 5]; 5];
        let e = AttentionExport::new("Hi Ada Love", sentence_tokens(), AttentionWeights::Reduced(m)).unwrap();
        let v = reduce_sentence(&e, (3, 11), Side::Query).unwrap();
        assert_eq!(v.slots, ["[CLS]", "Hi", "MASK", "[SEP]"]);
        for x in &v.values {
            assert!((x - 0.2).abs() < 1e-15);
        }
        let mass: f64 = v.values.iter().zip(&v.token_counts).map(|(v, c)| v * *c as f64).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn subword_pieces_share_a_slot() {
        let tokens = vec![tok("Hel", Some((0, 3))), tok("lo", Some((3, 5))), tok("Ada", Some((6, 9)))];
        let m = vec![vec![0.5, 0.25, 0.25]; 3];
        let e = AttentionExport::new("Hello Ada", tokens, AttentionWeights::Reduced(m)).unwrap();
        let v = reduce_sentence(&e, (6, 9), Side::Query).unwrap();
        assert_eq!(v.slots, ["Hello", "MASK"]);
        assert_eq!(v.values, [0.375, 0.25]);
        assert_eq!(v.token_counts, [2, 1]);
    }

    #[test]
    fn key_side_reads_columns() {
        let tokens = vec![tok("Hi", Some((0, 2))), tok("Ada", Some((3, 6)))];
        let m = vec![vec![0.9, 0.1], vec![0.3, 0.7]];
        let e = AttentionExport::new("Hi Ada", tokens, AttentionWeights::Reduced(m)).unwrap();
        assert_eq!(reduce_sentence(&e, (3, 6), Side::Query).unwrap().values, [0.3, 0.7]);
        assert_eq!(reduce_sentence(&e, (3, 6), Side::Key).unwrap().values, [0.1, 0.7]);
    }

    #[test]
    fn bad_rows_rejected() {
        let tokens = vec![tok("Hi", Some((0, 2))), tok("Ada", Some((3, 6)))];
        let m = vec![vec![0.9, 0.2], vec![0.3, 0.7]];
        assert!(AttentionExport::new("Hi Ada", tokens.clone(), AttentionWeights::Reduced(m)).is_err());
        let m = vec![vec![1.0, 0.0]];
        assert!(AttentionExport::new("Hi Ada", tokens, AttentionWeights::Reduced(m)).is_err());
    }

    #[test]
    fn straddling_name_is_alignment_error() {
        let tokens = vec![tok("Hi", Some((0, 2))), tok("Ada's", Some((3, 8)))];
        let m = vec![vec![0.5, 0.5]; 2];
        let e = AttentionExport::new("Hi Ada's", tokens, AttentionWeights::Reduced(m)).unwrap();
        assert!(matches!(reduce_sentence(&e, (3, 6), Side::Query), Err(Error::Alignment(_))));
    }

    #[test]
    fn group_mean_and_mismatch() {
        let a = SlotVector { slots: vec!["x".into(), "MASK".into()], values: vec![0.2, 0.8], token_counts: vec![1, 1] };
        let b = SlotVector { slots: vec!["x".into(), "MASK".into()], values: vec![0.4, 0.6], token_counts: vec![1, 1] };
        let s = summarize_group("p", Group::InTrain, &[("a", a.clone())]).unwrap();
        assert_eq!(s.values, a.values);
        let s = summarize_group("p", Group::InTrain, &[("a", a.clone()), ("b", b)]).unwrap();
        assert!((s.values[0] - 0.3).abs() < 1e-15 && (s.values[1] - 0.7).abs() < 1e-15);
        let c = SlotVector { slots: vec!["x".into()], values: vec![1.0], token_counts: vec![1] };
        let err = summarize_group("p", Group::OutTrain, &[("a", a), ("Bob Smith", c)]).unwrap_err();
        assert!(err.to_string().contains("Bob Smith"));
        assert!(summarize_group("p", Group::OutTrain, &[]).is_err());
    }
}
