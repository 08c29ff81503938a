#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use memprobe::names::{PairwiseDataset, PersonName, SourceChecksums};
use memprobe::pipeline::{Pipeline, RunManifest};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn names(prefix: &str, n: usize) -> Vec<PersonName> {
    (0..n)
        .map(|i| PersonName::parse(&format!("{prefix}{i} Sample")).expect("two words"))
        .collect()
}

pub fn synthetic_dataset(n_dev: usize, n_test: usize) -> PairwiseDataset {
    PairwiseDataset {
        seed: 0,
        in_dev: names("Indev", n_dev),
        out_dev: names("Outdev", n_dev),
        in_test: names("Intest", n_test),
        out_test: names("Outtest", n_test),
        sources: SourceChecksums::default(),
    }
}

/// The tiny fixture manifest writing into `out`.
pub fn tiny_manifest(out: &Path, extra: &[(&str, &str)]) -> RunManifest {
    let mut overrides = vec![("output_dir".to_owned(), out.display().to_string())];
    overrides.extend(extra.iter().map(|(k, v)| (k.to_string(), v.to_string())));
    RunManifest::load_with(&fixture("tiny/run.manifest"), &overrides).expect("fixture manifest")
}

pub fn tiny_pipeline(out: &Path) -> Pipeline {
    Pipeline::new(tiny_manifest(out, &[]))
}

/// Relative path -> bytes of every file under `root`.
pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).expect("read dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
                out.insert(rel, fs::read(&path).expect("read file"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[derive(Debug, Clone)]
pub struct Seen {
    pub method: String,
    pub path: String,
    pub body: String,
}

pub type Handler = dyn Fn(usize, &Seen) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server, one request per connection.
pub struct FakeServer {
    pub url: String,
    pub seen: Arc<Mutex<Vec<Seen>>>,
}

impl FakeServer {
    pub fn start(handler: Box<Handler>) -> FakeServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let url = format!("http://{}", listener.local_addr().expect("addr"));
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        let count = AtomicUsize::new(0);
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let mut reader = BufReader::new(stream);
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    continue;
                }
                let mut length = 0;
                loop {
                    let mut h = String::new();
                    if reader.read_line(&mut h).unwrap_or(0) == 0 || h.trim().is_empty() {
                        break;
                    }
                    if let Some((k, v)) = h.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            length = v.trim().parse().unwrap_or(0);
                        }
                    }
                }
                let mut body = vec![0; length];
                let _ = reader.read_exact(&mut body);
                let mut parts = line.split_whitespace();
                let req = Seen {
                    method: parts.next().unwrap_or("").to_owned(),
                    path: parts.next().unwrap_or("").to_owned(),
                    body: String::from_utf8_lossy(&body).into_owned(),
                };
                let n = count.fetch_add(1, Ordering::SeqCst);
                let (status, payload) = handler(n, &req);
                log.lock().expect("lock").push(req);
                let mut stream = reader.into_inner();
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
            }
        });
        FakeServer { url, seen }
    }

    pub fn requests(&self) -> Vec<Seen> {
        self.seen.lock().expect("lock").clone()
    }
}

pub enum BioExpect {
    Names(&'static [&'static str]),
    ParseErrorAt(usize),
    Empty,
}

/// `(label, corpus text, expectation)`.
pub fn bio_cases() -> Vec<(&'static str, &'static str, BioExpect)> {
    use BioExpect::*;
    vec![
        ("b then i", "Ada NNP B-NP B-PER\nLovelace NNP I-NP I-PER\nwrote VBD B-VP O\n", Names(&["Ada Lovelace"])),
        (
            "duplicate names kept once",
            "Ada B-PER\nLovelace I-PER\n\nAda B-PER\nLovelace I-PER\nagain O\n",
            Names(&["Ada Lovelace"]),
        ),
        ("lone i-per opens an entity", "met O\nGrace I-PER\nHopper I-PER\n. O\n", Names(&["Grace Hopper"])),
        (
            "docstart closes an entity",
            "Alan B-PER\n-DOCSTART- -X- -X- O\nTuring I-PER\nMathison I-PER\n",
            Names(&["Turing Mathison"]),
        ),
        ("crlf endings", "Ada B-PER\r\nLovelace I-PER\r\n\r\nx O\r\n", Names(&["Ada Lovelace"])),
        ("single-word names dropped", "Plato B-PER\nsaid O\nSocrates B-PER\n", Names(&[])),
        ("blank line closes an entity", "Ada B-PER\n\nLovelace I-PER\nKing I-PER\n", Names(&["Lovelace King"])),
        (
            "b-per after b-per starts a new entity",
            "John B-PER\nPaul I-PER\nSmith B-PER\nJones I-PER\n",
            Names(&["John Paul", "Smith Jones"]),
        ),
        (
            "other entity tags close a person",
            "Ada B-PER\nLovelace I-PER\nLondon B-LOC\nBabbage I-PER\nCharles I-PER\nIBM B-ORG\n",
            Names(&["Ada Lovelace", "Babbage Charles"]),
        ),
        ("two-column format", "Marie B-PER\nCurie I-PER\n", Names(&["Marie Curie"])),
        ("too few columns", "Ada B-PER\nLovelace\n", ParseErrorAt(2)),
        ("docstart only", "-DOCSTART- -X- -X- O\n\n", Empty),
        (
            "nfc normalization merges spellings",
            "Zoe\u{301} B-PER\nSaldana I-PER\n\nZo\u{e9} B-PER\nSaldana I-PER\n",
            Names(&["Zo\u{e9} Saldana"]),
        ),
        ("entity at eof without newline", "x O\nRosalind B-PER\nFranklin I-PER", Names(&["Rosalind Franklin"])),
        (
            "case-sensitive identity, tab separated",
            "ada\tB-PER\nlovelace\tI-PER\n\nAda\tB-PER\nLovelace\tI-PER\n",
            Names(&["ada lovelace", "Ada Lovelace"]),
        ),
    ]
}

/// Known best and worst prompts with their word splits.
pub fn table2_tokenizations() -> Vec<(&'static str, Vec<&'static str>, usize)> {
    vec![
        ("Bravo, MASK, what an impressive performance!", vec!["Bravo,", "MASK,", "what", "an", "impressive", "performance", "!"], 1),
        (
            "Are you going to MASK's art gallery opening tonight?",
            vec!["Are", "you", "going", "to", "MASK's", "art", "gallery", "opening", "tonight", "?"],
            4,
        ),
        (
            "Oh, MASK, you're a true gem in our team.",
            vec!["Oh,", "MASK,", "you're", "a", "true", "gem", "in", "our", "team", "."],
            1,
        ),
        (
            "MASK, practice forgiveness towards yourself and others.",
            vec!["MASK,", "practice", "forgiveness", "towards", "yourself", "and", "others", "."],
            0,
        ),
        (
            "Did MASK give you any advice on starting something new?",
            vec!["Did", "MASK", "give", "you", "any", "advice", "on", "starting", "something", "new", "?"],
            1,
        ),
        ("What project is MASK working on?", vec!["What", "project", "is", "MASK", "working", "on", "?"], 3),
        (
            "I had a chance to meet MASK's family.",
            vec!["I", "had", "a", "chance", "to", "meet", "MASK's", "family", "."],
            6,
        ),
        (
            "MASK, can you recommend a good restaurant in town?",
            vec!["MASK,", "can", "you", "recommend", "a", "good", "restaurant", "in", "town", "?"],
            0,
        ),
        (
            "I had a great conversation with MASK at the party.",
            vec!["I", "had", "a", "great", "conversation", "with", "MASK", "at", "the", "party", "."],
            6,
        ),
        ("MASK, invest in meaningful relationships.", vec!["MASK,", "invest", "in", "meaningful", "relationships", "."], 0),
        ("MASK, practice playing the guitar.", vec!["MASK,", "practice", "playing", "the", "guitar", "."], 0),
    ]
}

/// Checks one BIO case, returning a description of any mismatch.
pub fn check_bio_case(text: &str, expect: &BioExpect) -> Result<(), String> {
    use memprobe::names::parse_bio_corpus;
    use memprobe::Error;
    let got = parse_bio_corpus(text.as_bytes());
    match (expect, got) {
        (BioExpect::Names(want), Ok(c)) => {
            let got: Vec<&str> = c.iter().map(PersonName::as_str).collect();
            if got == *want {
                Ok(())
            } else {
                Err(format!("got {got:?}, want {want:?}"))
            }
        }
        (BioExpect::ParseErrorAt(line), Err(Error::Parse { line: l, .. })) if l == *line => Ok(()),
        (BioExpect::Empty, Err(Error::EmptyCorpus)) => Ok(()),
        (_, got) => Err(format!("unexpected result {got:?}")),
    }
}

use memprobe::gateway::{BackendMeta, ScoreBackend, ScoreRequest, ScoreResponse};
use memprobe::BackendError;

/// Wraps a backend, counting score calls and failing permanently once
/// `budget` calls have been made.
pub struct Flaky<B> {
    pub inner: B,
    pub calls: Arc<AtomicUsize>,
    pub budget: usize,
}

impl<B: ScoreBackend> ScoreBackend for Flaky<B> {
    fn meta(&self) -> Result<BackendMeta, BackendError> {
        self.inner.meta()
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.budget {
            return Err(BackendError::Permanent {
                code: "killed".into(),
                message: "simulated crash".into(),
            });
        }
        self.inner.score(request)
    }
}
