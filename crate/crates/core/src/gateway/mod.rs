//! Scoring completed sentences against a model backend and turning per-token
//! label probabilities into a name confidence.
//!
//! The confidence of a name in a sentence is the mean, over the model tokens
//! lying inside the name's character span, of `max(Pr(B-PER), Pr(I-PER))`.

mod http;
mod score;
mod store;
mod stub;
pub mod wire;

use crate::error::{BackendError, Error, Result};

pub use http::HttpBackend;
pub use score::{confidences_for, score_all, RetryPolicy, ScoreOptions};
pub use store::{ConfidenceStore, StoreMeta};
pub use stub::{StubBackend, STUB_LABELS};
pub use wire::{BackendMeta, ScoreItem, ScoreRequest, ScoreResponse, Span};

/// A model service that scores sentences.
///
/// Implementations must be deterministic per item: the same item yields the
/// same probabilities regardless of batching or request order.
pub trait ScoreBackend: Send + Sync {
    fn meta(&self) -> std::result::Result<BackendMeta, BackendError>;

    fn score(&self, request: &ScoreRequest) -> std::result::Result<ScoreResponse, BackendError>;
}

impl<B: ScoreBackend + ?Sized> ScoreBackend for &B {
    fn meta(&self) -> std::result::Result<BackendMeta, BackendError> {
        (**self).meta()
    }

    fn score(&self, request: &ScoreRequest) -> std::result::Result<ScoreResponse, BackendError> {
        (**self).score(request)
    }
}

impl<B: ScoreBackend + ?Sized> ScoreBackend for Box<B> {
    fn meta(&self) -> std::result::Result<BackendMeta, BackendError> {
        (**self).meta()
    }

    fn score(&self, request: &ScoreRequest) -> std::result::Result<ScoreResponse, BackendError> {
        (**self).score(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Character interval, `None` for special tokens.
    pub span: Option<(usize, usize)>,
}

/// Per-token label distribution for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenScores {
    pub tokens: Vec<Token>,
    pub label_names: Vec<String>,
    /// Row-major `[token][label]`.
    pub probs: Vec<Vec<f64>>,
}

const ROW_SUM_TOLERANCE: f64 = 1e-4;

pub(crate) fn tokens_from_wire(tokens: &[wire::WireToken]) -> Result<Vec<Token>> {
    let mut prev_end = 0usize;
    tokens
        .iter()
        .map(|t| {
            let span = match (t.start, t.end) {
                (-1, -1) => None,
                (s, e) if s >= 0 && e >= s => {
                    let (s, e) = (s as usize, e as usize);
                    if s < prev_end {
                        return Err(Error::Schema(format!(
                            "token {:?} at {s}..{e} overlaps or precedes the previous token",
                            t.text
                        )));
                    }
                    prev_end = e;
                    Some((s, e))
                }
                (s, e) => return Err(Error::Schema(format!("bad token interval {s}..{e}"))),
            };
            Ok(Token {
                text: t.text.clone(),
                span,
            })
        })
        .collect()
}

impl TokenScores {
    /// Validates a wire result: shapes, probability range, row sums and
    /// token ordering.
    pub fn from_wire(item: &wire::ItemResult) -> Result<Self> {
        let tokens = tokens_from_wire(&item.tokens)?;
        if item.probs.len() != tokens.len() {
            return Err(Error::Schema(format!(
                "{} probability rows for {} tokens",
                item.probs.len(),
                tokens.len()
            )));
        }
        for (i, row) in item.probs.iter().enumerate() {
            if row.len() != item.label_names.len() {
                return Err(Error::Schema(format!(
                    "row {i} has {} values for {} labels",
                    row.len(),
                    item.label_names.len()
                )));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Schema(format!("row {i} has a probability outside [0,1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Schema(format!("row {i} sums to {sum}")));
            }
        }
        Ok(TokenScores {
            tokens,
            label_names: item.label_names.clone(),
            probs: item.probs.clone(),
        })
    }

    fn label_index(&self, label: &str) -> Result<usize> {
        self.label_names
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Schema(format!("label {label} missing from {:?}", self.label_names)))
    }
}

/// Mean over in-span tokens of `max(Pr(B-PER), Pr(I-PER))`.
///
/// Tokens crossing a span boundary are an alignment error. Zero-width
/// tokens carry no characters and are skipped.
pub fn confidence(scores: &TokenScores, name_span: (usize, usize)) -> Result<f64> {
    let b = scores.label_index("B-PER")?;
    let i = scores.label_index("I-PER")?;
    let (start, end) = name_span;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (token, row) in scores.tokens.iter().zip(&scores.probs) {
        let Some((s, e)) = token.span else { continue };
        if s == e {
            continue;
        }
        if s >= start && e <= end {
            sum += row[b].max(row[i]);
            count += 1;
        } else if s < end && e > start {
            return Err(Error::Alignment(format!(
                "token {:?} at {s}..{e} straddles the name span {start}..{end}",
                token.text
            )));
        }
    }
    if count == 0 {
        return Err(Error::NoNameTokens { start, end });
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LABELS: [&str; 3] = ["O", "B-PER", "I-PER"];

    fn scores(tokens: &[(&str, i64, i64)], probs: &[[f64; 3]]) -> TokenScores {
        let item = wire::ItemResult {
            tokens: tokens
                .iter()
                .map(|&(text, start, end)| wire::WireToken {
                    text: text.into(),
                    start,
                    end,
                })
                .collect(),
            label_names: LABELS.iter().map(|s| s.to_string()).collect(),
            probs: probs.iter().map(|r| r.to_vec()).collect(),
            attention: None,
        };
        TokenScores::from_wire(&item).unwrap()
    }

    #[test]
    fn single_token_takes_max() {
        let s = scores(&[("Ada", 0, 3)], &[[0.1, 0.8, 0.1]]);
        assert_eq!(confidence(&s, (0, 3)).unwrap(), 0.8);
    }

    #[test]
    fn two_tokens_average() {
        let s = scores(
            &[("[CLS]", -1, -1), ("Hi", 0, 2), ("Ada", 3, 6), ("Love", 7, 11), ("[SEP]", -1, -1)],
            &[[1.0, 0.0, 0.0], [0.9, 0.05, 0.05], [0.1, 0.8, 0.1], [0.1, 0.3, 0.6], [1.0, 0.0, 0.0]],
        );
        assert!((confidence(&s, (3, 11)).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn all_mass_on_o() {
        let s = scores(&[("Ada", 0, 3), ("Love", 4, 8)], &[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(confidence(&s, (0, 8)).unwrap(), 0.0);
    }

    #[test]
    fn straddling_token_is_alignment_error() {
        let s = scores(&[("Ada", 0, 3), ("Love's", 4, 10)], &[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(matches!(confidence(&s, (0, 8)), Err(Error::Alignment(_))));
    }

    #[test]
    fn no_tokens_in_span() {
        let s = scores(&[("Hi", 0, 2)], &[[1.0, 0.0, 0.0]]);
        assert!(matches!(confidence(&s, (5, 8)), Err(Error::NoNameTokens { .. })));
    }

    #[test]
    fn missing_labels_is_schema_error() {
        let item = wire::ItemResult {
            tokens: vec![wire::WireToken { text: "Ada".into(), start: 0, end: 3 }],
            label_names: vec!["O".into(), "B-PER".into()],
            probs: vec![vec![0.5, 0.5]],
            attention: None,
        };
        let s = TokenScores::from_wire(&item).unwrap();
        assert!(matches!(confidence(&s, (0, 3)), Err(Error::Schema(_))));
    }

    #[test]
    fn wire_validation() {
        let mut item = wire::ItemResult {
            tokens: vec![wire::WireToken { text: "Ada".into(), start: 0, end: 3 }],
            label_names: LABELS.iter().map(|s| s.to_string()).collect(),
            probs: vec![vec![0.5, 0.6, 0.0]],
            attention: None,
        };
        assert!(TokenScores::from_wire(&item).is_err());
        item.probs = vec![vec![0.5, 0.5, 0.0], vec![1.0, 0.0, 0.0]];
        assert!(TokenScores::from_wire(&item).is_err());
        item.tokens.push(wire::WireToken { text: "x".into(), start: 1, end: 2 });
        assert!(TokenScores::from_wire(&item).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn row() -> impl Strategy<Value = [f64; 3]> {
            (0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b)| {
                let b = b * (1.0 - a);
                [1.0 - a - b, a, b]
            })
        }

        proptest! {
            #[test]
            fn context_tokens_do_not_matter(name in prop::collection::vec(row(), 1..4),
                                           ctx_a in prop::collection::vec(row(), 4),
                                           ctx_b in prop::collection::vec(row(), 4)) {
                // two context tokens before and two after the name
                let mut toks = vec![("a".to_string(), 0i64, 1i64), ("b".to_string(), 2, 3)];
                let mut pos = 4i64;
                let start = pos as usize;
                for _ in &name {
                    toks.push(("n".to_string(), pos, pos + 1));
                    pos += 2;
                }
                let end = (pos - 1) as usize;
                toks.push(("c".to_string(), pos, pos + 1));
                toks.push(("d".to_string(), pos + 2, pos + 3));
                let build = |ctx: &[[f64; 3]]| {
                    let mut probs = vec![ctx[0], ctx[1]];
                    probs.extend(name.iter().copied());
                    probs.extend([ctx[2], ctx[3]]);
                    let t: Vec<(&str, i64, i64)> = toks.iter().map(|(s, a, b)| (s.as_str(), *a, *b)).collect();
                    scores(&t, &probs)
                };
                let ca = confidence(&build(&ctx_a), (start, end)).unwrap();
                let cb = confidence(&build(&ctx_b), (start, end)).unwrap();
                prop_assert_eq!(ca, cb);
                let per: Vec<f64> = name.iter().map(|r| r[1].max(r[2])).collect();
                let lo = per.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = per.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(ca >= lo - 1e-12 && ca <= hi + 1e-12);
            }
        }
    }
}
