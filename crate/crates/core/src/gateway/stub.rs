use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::wire::{
    BackendMeta, ItemResult, ScoreItem, ScoreRequest, ScoreResponse, WireAttention, WireToken,
};
use super::ScoreBackend;
use crate::error::BackendError;

pub const STUB_LABELS: [&str; 9] = [
    "O", "B-PER", "I-PER", "B-ORG", "I-ORG", "B-LOC", "I-LOC", "B-MISC", "I-MISC",
];

const LAYERS: usize = 2;
const HEADS: usize = 2;
const MAX_SEQ_LEN: usize = 512;

/// Deterministic in-process backend for tests and desk-scale runs.
///
/// Text is split on whitespace and additionally at the name span
/// boundaries, so name tokens never straddle the span. For each
/// `(name, prompt context)` the stub draws a standard-normal logit `z` from
/// a seeded hash; names registered as In-train get `z + shift`. Every name
/// token then carries PER probability `sigmoid(z)` (B-PER on the first
/// token, I-PER on the rest), so the name confidence is exactly that value
/// and the expected pairwise score is `Phi(shift / sqrt(2))`.
///
/// Context and special tokens get hashed, mostly-`O` distributions.
#[derive(Debug, Clone)]
pub struct StubBackend {
    seed: u64,
    shift: f64,
    in_train: HashSet<String>,
}

fn hash64(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for part in parts {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("32-byte digest"))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

struct StubToken {
    text: String,
    span: Option<(usize, usize)>,
    in_name: bool,
}

impl StubBackend {
    pub fn new(seed: u64) -> Self {
        StubBackend {
            seed,
            shift: 0.0,
            in_train: HashSet::new(),
        }
    }

    /// Adds `shift` to the latent logit of every name in `in_train`.
    pub fn with_shift<I, S>(mut self, shift: f64, in_train: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.shift = shift;
        self.in_train = in_train.into_iter().map(Into::into).collect();
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn tokenize(item: &ScoreItem) -> Vec<StubToken> {
        let chars: Vec<char> = item.text.chars().collect();
        let (ns, ne) = (item.span.start, item.span.end);
        let mut tokens = vec![StubToken {
            text: "[CLS]".into(),
            span: None,
            in_name: false,
        }];
        let mut i = 0;
        while i < chars.len() {
            if chars[i].is_whitespace() {
                i += 1;
                continue;
            }
            let mut j = i;
            while j < chars.len() && !chars[j].is_whitespace() {
                j += 1;
            }
            // cut the word at the span boundaries
            let mut cuts = vec![i];
            for b in [ns, ne] {
                if b > i && b < j {
                    cuts.push(b);
                }
            }
            cuts.push(j);
            cuts.dedup();
            for w in cuts.windows(2) {
                let (s, e) = (w[0], w[1]);
                tokens.push(StubToken {
                    text: chars[s..e].iter().collect(),
                    span: Some((s, e)),
                    in_name: s >= ns && e <= ne,
                });
            }
            i = j;
        }
        tokens.push(StubToken {
            text: "[SEP]".into(),
            span: None,
            in_name: false,
        });
        tokens
    }

    fn context_key(item: &ScoreItem) -> (String, String) {
        let chars: Vec<char> = item.text.chars().collect();
        let (s, e) = (item.span.start.min(chars.len()), item.span.end.min(chars.len()));
        let mut context: String = chars[..s].iter().collect();
        context.push('\u{1f}');
        context.extend(&chars[e..]);
        (chars[s..e].iter().collect(), context)
    }

    /// PER probability shared by every token of the name.
    pub fn name_probability(&self, name: &str, context: &str) -> f64 {
        let h = hash64(self.seed, &[b"latent", name.as_bytes(), context.as_bytes()]);
        let z: f64 = ChaCha8Rng::seed_from_u64(h).sample(StandardNormal);
        let shift = if self.in_train.contains(name) { self.shift } else { 0.0 };
        sigmoid(z + shift)
    }

    fn score_item(&self, item: &ScoreItem, want_attention: bool, reduce: bool) -> ItemResult {
        let tokens = Self::tokenize(item);
        let (name, context) = Self::context_key(item);
        let p = self.name_probability(&name, &context);
        let mut first_name_token = true;

        let probs = tokens
            .iter()
            .map(|tok| {
                let h = hash64(self.seed, &[b"token", tok.text.as_bytes(), context.as_bytes()]);
                let mut rng = ChaCha8Rng::seed_from_u64(h);
                if tok.in_name {
                    let per = if first_name_token { 1 } else { 2 };
                    first_name_token = false;
                    // leftover mass goes to O and the non-PER labels
                    let weights: Vec<f64> = (0..STUB_LABELS.len())
                        .map(|l| if l == 1 || l == 2 { 0.0 } else { rng.random::<f64>() + 1e-3 })
                        .collect();
                    let total: f64 = weights.iter().sum();
                    let mut row: Vec<f64> = weights.iter().map(|w| (1.0 - p) * w / total).collect();
                    row[per] = p;
                    row
                } else {
                    let logits: Vec<f64> = (0..STUB_LABELS.len())
                        .map(|l| rng.random::<f64>() * 2.0 + if l == 0 { 4.0 } else { 0.0 })
                        .collect();
                    softmax(&logits)
                }
            })
            .collect();

        let attention = want_attention.then(|| self.attention(&tokens, &context, reduce));
        ItemResult {
            tokens: tokens
                .iter()
                .map(|t| {
                    let (start, end) = t.span.map_or((-1, -1), |(s, e)| (s as i64, e as i64));
                    WireToken {
                        text: t.text.clone(),
                        start,
                        end,
                    }
                })
                .collect(),
            label_names: STUB_LABELS.iter().map(|s| s.to_string()).collect(),
            probs,
            attention,
        }
    }

    fn attention(&self, tokens: &[StubToken], context: &str, reduce: bool) -> WireAttention {
        let n = tokens.len();
        let full: Vec<Vec<Vec<Vec<f64>>>> = (0..LAYERS)
            .map(|layer| {
                (0..HEADS)
                    .map(|head| {
                        (0..n)
                            .map(|q| {
                                let key = [layer as u8, head as u8];
                                let h = hash64(
                                    self.seed,
                                    &[b"attn", &key, context.as_bytes(), tokens[q].text.as_bytes(), &(q as u64).to_le_bytes()],
                                );
                                let mut rng = ChaCha8Rng::seed_from_u64(h);
                                let logits: Vec<f64> = (0..n)
                                    .map(|k| {
                                        // special tokens draw extra attention
                                        let bias = if tokens[k].span.is_none() { 1.0 } else { 0.0 };
                                        rng.random::<f64>() * 2.0 + bias
                                    })
                                    .collect();
                                softmax(&logits)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        if !reduce {
            return WireAttention::Full(full);
        }
        let scale = 1.0 / (LAYERS * HEADS) as f64;
        let mut mean = vec![vec![0.0; n]; n];
        for layer in &full {
            for head in layer {
                for (q, row) in head.iter().enumerate() {
                    for (k, v) in row.iter().enumerate() {
                        mean[q][k] += v * scale;
                    }
                }
            }
        }
        WireAttention::Reduced(mean)
    }
}

impl ScoreBackend for StubBackend {
    fn meta(&self) -> Result<BackendMeta, BackendError> {
        Ok(BackendMeta {
            model_id: format!("stub:{}:shift={}", self.seed, self.shift),
            label_names: STUB_LABELS.iter().map(|s| s.to_string()).collect(),
            num_layers: LAYERS,
            num_heads: HEADS,
            max_seq_len: MAX_SEQ_LEN,
        })
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        let results = request
            .items
            .iter()
            .map(|item| {
                let len = item.text.chars().count();
                if item.span.start > item.span.end || item.span.end > len {
                    return Err(BackendError::Permanent {
                        code: "bad-span".into(),
                        message: format!("span {:?} outside text of {len} chars", item.span),
                    });
                }
                Ok(self.score_item(item, request.want_attention, request.attention_reduce))
            })
            .collect::<Result<_, _>>()?;
        Ok(ScoreResponse { results })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{confidence, wire::Span, TokenScores};

    fn item(text: &str, start: usize, end: usize) -> ScoreItem {
        ScoreItem {
            text: text.into(),
            span: Span { start, end },
        }
    }

    #[test]
    fn deterministic_and_exact_confidence() {
        let stub = StubBackend::new(7);
        let req = ScoreRequest::new(vec![item("Are you going to Ada Lovelace's show?", 17, 29)]);
        let a = stub.score(&req).unwrap();
        let b = StubBackend::new(7).score(&req).unwrap();
        assert_eq!(a, b);
        let scores = TokenScores::from_wire(&a.results[0]).unwrap();
        let texts: Vec<&str> = scores.tokens.iter().map(|t| t.text.as_str()).collect();
        assert!(texts.contains(&"Lovelace") && texts.contains(&"'s"));
        let c = confidence(&scores, (17, 29)).unwrap();
        let p = stub.name_probability("Ada Lovelace", "Are you going to \u{1f}'s show?");
        assert_eq!(c, p);
    }

    #[test]
    fn shift_only_affects_in_train() {
        let base = StubBackend::new(3);
        let shifted = StubBackend::new(3).with_shift(1.0, ["Ada Lovelace"]);
        let ctx = "My name is \u{1f}.";
        assert!(shifted.name_probability("Ada Lovelace", ctx) > base.name_probability("Ada Lovelace", ctx));
        assert_eq!(
            shifted.name_probability("Alan Turing", ctx),
            base.name_probability("Alan Turing", ctx)
        );
    }

    #[test]
    fn attention_rows_are_distributions() {
        let stub = StubBackend::new(1);
        let req = ScoreRequest::new(vec![item("Hi Ada Lovelace!", 3, 15)]).with_attention(false);
        let res = stub.score(&req).unwrap();
        let Some(WireAttention::Full(t)) = &res.results[0].attention else { panic!() };
        assert_eq!((t.len(), t[0].len()), (LAYERS, HEADS));
        let n = res.results[0].tokens.len();
        for row in t.iter().flatten().flatten() {
            assert_eq!(row.len(), n);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_span_is_permanent() {
        let stub = StubBackend::new(1);
        let err = stub.score(&ScoreRequest::new(vec![item("Hi", 0, 9)])).unwrap_err();
        assert!(!err.is_transient());
    }
}
