use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;

use crate::attention::Side;
use crate::error::{Error, Result};

/// Environment variables that may override manifest keys.
pub const ENV_OVERRIDES: [(&str, &str); 2] = [("MEMPROBE_BACKEND", "backend"), ("MEMPROBE_CONCURRENCY", "concurrency")];

const KEYS: [&str; 22] = [
    "train_corpus",
    "entity_export",
    "prompt_set",
    "hand_prompts",
    "output_dir",
    "backend",
    "model_id",
    "stub_delta",
    "seed",
    "max_in",
    "forge_in",
    "forge_out",
    "concurrency",
    "batch_size",
    "checkpoint_every",
    "retries",
    "resume",
    "created_at",
    "attention_side",
    "attention_reduce",
    "attention_names",
    "compare_runs",
];

#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    /// In-process stub seeded with the given value.
    Stub { seed: u64 },
    Http { url: String },
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(seed) = s.strip_prefix("stub:") {
            let seed = seed
                .parse()
                .map_err(|_| Error::Manifest(format!("backend {s:?}: stub seed must be an integer")))?;
            Ok(BackendSpec::Stub { seed })
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(BackendSpec::Http { url: s.to_owned() })
        } else {
            Err(Error::Manifest(format!("backend {s:?} must be stub:<seed> or an http(s) URL")))
        }
    }
}

impl std::fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendSpec::Stub { seed } => write!(f, "stub:{seed}"),
            BackendSpec::Http { url } => f.write_str(url),
        }
    }
}

/// Settings for one run. Paths are resolved against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub train_corpus: PathBuf,
    pub entity_export: PathBuf,
    pub prompt_set: PathBuf,
    pub hand_prompts: PathBuf,
    pub output_dir: PathBuf,
    pub backend: BackendSpec,
    pub model_id: Option<String>,
    /// Logit shift the stub applies to In-train names.
    pub stub_delta: f64,
    pub seed: u64,
    pub max_in: Option<usize>,
    pub forge_in: usize,
    pub forge_out: usize,
    pub concurrency: usize,
    pub batch_size: usize,
    pub checkpoint_every: usize,
    pub retries: u32,
    pub resume: bool,
    pub created_at: String,
    pub attention_side: Side,
    pub attention_reduce: bool,
    pub attention_names: usize,
    /// Output directories of other runs to include in correlations and
    /// the report.
    pub compare_runs: Vec<PathBuf>,
}

/// Parses `key = value` lines. `#` starts a comment line.
pub fn parse_pairs(text: &str) -> Result<IndexMap<String, String>> {
    let mut out = IndexMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Manifest(format!("line {}: expected key = value", i + 1)));
        };
        let k = k.trim().to_owned();
        if out.insert(k.clone(), v.trim().to_owned()).is_some() {
            return Err(Error::Manifest(format!("line {}: {k} set twice", i + 1)));
        }
    }
    Ok(out)
}

/// `key=value` overrides from the environment.
pub fn env_overrides() -> Vec<(String, String)> {
    ENV_OVERRIDES
        .iter()
        .filter_map(|(var, key)| std::env::var(var).ok().map(|v| ((*key).to_owned(), v)))
        .collect()
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Manifest(format!("{key} = {v:?} is not a valid number")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Manifest(format!("{key} = {v:?} must be true or false"))),
    }
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with(path, &[])
    }

    /// Loads `path` and applies `overrides` in order (later wins).
    pub fn load_with(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, base, overrides)
    }

    pub fn from_text(text: &str, base: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = parse_pairs(text)?;
        for (k, v) in overrides {
            pairs.insert(k.clone(), v.clone());
        }
        Self::from_pairs(&pairs, base)
    }

    pub fn from_pairs(pairs: &IndexMap<String, String>, base: &Path) -> Result<Self> {
        if let Some(k) = pairs.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::Manifest(format!("unknown key {k:?}")));
        }
        let get = |k: &str| pairs.get(k).map(String::as_str);
        let required = |k: &str| get(k).ok_or_else(|| Error::Manifest(format!("missing required key {k}")));
        let path = |k: &str| -> Result<PathBuf> { Ok(base.join(required(k)?)) };
        let num_or = |k: &str, default: usize| -> Result<usize> { get(k).map_or(Ok(default), |v| parse_num(k, v)) };

        let m = RunManifest {
            train_corpus: path("train_corpus")?,
            entity_export: path("entity_export")?,
            prompt_set: path("prompt_set")?,
            hand_prompts: path("hand_prompts")?,
            output_dir: path("output_dir")?,
            backend: required("backend")?.parse()?,
            model_id: get("model_id").map(str::to_owned),
            stub_delta: get("stub_delta").map_or(Ok(1.0), |v| parse_num("stub_delta", v))?,
            seed: parse_num("seed", required("seed")?)?,
            max_in: get("max_in").map(|v| parse_num("max_in", v)).transpose()?,
            forge_in: num_or("forge_in", 64)?,
            forge_out: num_or("forge_out", 64)?,
            concurrency: num_or("concurrency", 4)?,
            batch_size: num_or("batch_size", 32)?,
            checkpoint_every: num_or("checkpoint_every", 16)?,
            retries: get("retries").map_or(Ok(5), |v| parse_num("retries", v))?,
            resume: get("resume").map_or(Ok(false), |v| parse_bool("resume", v))?,
            created_at: get("created_at").unwrap_or("unspecified").to_owned(),
            attention_side: get("attention_side")
                .unwrap_or("query")
                .parse()
                .map_err(|e: Error| Error::Manifest(e.to_string()))?,
            attention_reduce: get("attention_reduce").map_or(Ok(true), |v| parse_bool("attention_reduce", v))?,
            attention_names: num_or("attention_names", 64)?,
            compare_runs: get("compare_runs")
                .map(|v| {
                    v.split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| base.join(s))
                        .collect()
                })
                .unwrap_or_default(),
        };
        for (k, v) in [
            ("forge_in", m.forge_in),
            ("forge_out", m.forge_out),
            ("concurrency", m.concurrency),
            ("batch_size", m.batch_size),
            ("checkpoint_every", m.checkpoint_every),
            ("attention_names", m.attention_names),
        ] {
            if v == 0 {
                return Err(Error::Manifest(format!("{k} must be positive")));
            }
        }
        if !m.stub_delta.is_finite() {
            return Err(Error::Manifest("stub_delta must be finite".into()));
        }
        Ok(m)
    }

    /// Settings that change outputs, one `key=value` per line. Concurrency,
    /// batching and resume only affect how the work is done.
    pub fn fingerprint(&self) -> String {
        let mut s = String::new();
        let p = |p: &Path| p.display().to_string();
        let _ = writeln!(s, "backend={}", self.backend);
        let _ = writeln!(s, "model_id={}", self.model_id.as_deref().unwrap_or(""));
        let _ = writeln!(s, "stub_delta={}", self.stub_delta);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "max_in={}", self.max_in.map_or(String::new(), |v| v.to_string()));
        let _ = writeln!(s, "forge_in={}", self.forge_in);
        let _ = writeln!(s, "forge_out={}", self.forge_out);
        let _ = writeln!(s, "created_at={}", self.created_at);
        let _ = writeln!(s, "attention_side={:?}", self.attention_side);
        let _ = writeln!(s, "attention_reduce={}", self.attention_reduce);
        let _ = writeln!(s, "attention_names={}", self.attention_names);
        let runs: Vec<String> = self.compare_runs.iter().map(|r| p(r)).collect();
        let _ = writeln!(s, "compare_runs={}", runs.join(","));
        s
    }

    /// Every input file named by the manifest, with its key.
    pub fn input_files(&self) -> [(&'static str, &Path); 4] {
        [
            ("train_corpus", &self.train_corpus),
            ("entity_export", &self.entity_export),
            ("prompt_set", &self.prompt_set),
            ("hand_prompts", &self.hand_prompts),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
# comment
train_corpus = data/train.bio
entity_export = data/world.txt
prompt_set = prompts.tsv
hand_prompts = hand.tsv
output_dir = out
backend = stub:7
seed = 42
";

    #[test]
    fn defaults_and_paths() {
        let m = RunManifest::from_text(MINIMAL, Path::new("/runs/a"), &[]).unwrap();
        assert_eq!(m.train_corpus, Path::new("/runs/a/data/train.bio"));
        assert_eq!(m.backend, BackendSpec::Stub { seed: 7 });
        assert_eq!((m.seed, m.forge_in, m.concurrency, m.resume), (42, 64, 4, false));
        assert_eq!(m.attention_side, Side::Query);
        assert_eq!(m.created_at, "unspecified");
    }

    #[test]
    fn overrides_win() {
        let o = vec![("concurrency".to_owned(), "9".to_owned()), ("backend".to_owned(), "http://h:1".to_owned())];
        let m = RunManifest::from_text(MINIMAL, Path::new("."), &o).unwrap();
        assert_eq!(m.concurrency, 9);
        assert_eq!(m.backend, BackendSpec::Http { url: "http://h:1".into() });
    }

    #[test]
    fn fingerprint_ignores_execution_knobs() {
        let a = RunManifest::from_text(MINIMAL, Path::new("."), &[]).unwrap();
        let o = vec![("concurrency".to_owned(), "1".to_owned()), ("resume".to_owned(), "true".to_owned())];
        let b = RunManifest::from_text(MINIMAL, Path::new("."), &o).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let o = vec![("seed".to_owned(), "1".to_owned())];
        let c = RunManifest::from_text(MINIMAL, Path::new("."), &o).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn errors() {
        let bad = |extra: &str| RunManifest::from_text(&format!("{MINIMAL}{extra}\n"), Path::new("."), &[]).is_err();
        assert!(bad("colour = red"));
        assert!(bad("seed = 3"));
        assert!(bad("concurrency = 0"));
        assert!(bad("resume = maybe"));
        assert!(bad("attention_side = sideways"));
        assert!("ftp://x".parse::<BackendSpec>().is_err());
        assert!("stub:x".parse::<BackendSpec>().is_err());
        assert!(RunManifest::from_text("seed = 1", Path::new("."), &[]).is_err());
    }
}
