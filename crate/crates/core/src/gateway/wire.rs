//! JSON bodies exchanged with a model sidecar over `POST /v1/score` and
//! `GET /v1/meta`.
//!
//! Offsets are character (Unicode scalar) indices into the request text.
//! Special tokens carry the sentinel interval `[-1, -1)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreItem {
    pub text: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    pub items: Vec<ScoreItem>,
    #[serde(default)]
    pub want_attention: bool,
    #[serde(default = "default_true")]
    pub attention_reduce: bool,
}

fn default_true() -> bool {
    true
}

impl ScoreRequest {
    pub fn new(items: Vec<ScoreItem>) -> Self {
        ScoreRequest {
            model_id: None,
            items,
            want_attention: false,
            attention_reduce: true,
        }
    }

    pub fn with_attention(mut self, reduce: bool) -> Self {
        self.want_attention = true;
        self.attention_reduce = reduce;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireToken {
    pub text: String,
    pub start: i64,
    pub end: i64,
}

/// Attention either as the full `[layer][head][query][key]` tensor or
/// pre-averaged over layers and heads to `[query][key]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireAttention {
    Reduced(Vec<Vec<f64>>),
    Full(Vec<Vec<Vec<Vec<f64>>>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub tokens: Vec<WireToken>,
    pub label_names: Vec<String>,
    pub probs: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<WireAttention>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub results: Vec<ItemResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendMeta {
    pub model_id: String,
    pub label_names: Vec<String>,
    pub num_layers: usize,
    pub num_heads: usize,
    pub max_seq_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_shapes_decode() {
        let reduced: WireAttention = serde_json::from_str("[[0.5,0.5],[1.0,0.0]]").unwrap();
        assert!(matches!(reduced, WireAttention::Reduced(ref m) if m.len() == 2));
        let full: WireAttention = serde_json::from_str("[[[[1.0]]]]").unwrap();
        assert!(matches!(full, WireAttention::Full(_)));
    }

    #[test]
    fn request_defaults() {
        let req: ScoreRequest =
            serde_json::from_str(r#"{"items":[{"text":"Ada Lovelace","span":{"start":0,"end":12}}]}"#).unwrap();
        assert!(!req.want_attention);
        assert!(req.attention_reduce);
        let text = serde_json::to_string(&ScoreRequest::new(vec![])).unwrap();
        assert_eq!(text, r#"{"items":[],"want_attention":false,"attention_reduce":true}"#);
    }
}
