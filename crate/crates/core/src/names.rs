//! Person-name ingestion and the In-train / Out-train pairwise dataset.
//!
//! Two sources feed the dataset: a CoNLL-style BIO corpus (the names a NER
//! model was fine-tuned on) and a plain export of real-world person names.
//! Names found in both are In-train; an equal number of names found only in
//! the export are sampled as Out-train. Each side is then split into dev and
//! test halves.
//!
//! Name matching is exact, case-sensitive string equality after NFC and
//! whitespace normalization.

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;

use indexmap::IndexSet;
use rand::seq::{index, SliceRandom};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::util::{lines_checksum, seeded_rng, sha256_hex};

/// A multi-word person name in normalized form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PersonName {
    surface: String,
    word_count: usize,
}

impl PersonName {
    /// Normalizes `raw` (NFC, single inner spaces, trimmed). Returns `None`
    /// for names with fewer than two words.
    pub fn parse(raw: &str) -> Option<Self> {
        let nfc: String = raw.nfc().collect();
        let mut surface = String::with_capacity(nfc.len());
        let mut word_count = 0;
        for word in nfc.split_whitespace() {
            if word_count > 0 {
                surface.push(' ');
            }
            surface.push_str(word);
            word_count += 1;
        }
        (word_count >= 2).then_some(PersonName {
            surface,
            word_count,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.surface
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }
}

impl fmt::Display for PersonName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceTag {
    TrainCorpus,
    WorldExport,
}

impl SourceTag {
    pub fn label(self) -> &'static str {
        match self {
            SourceTag::TrainCorpus => "train-corpus",
            SourceTag::WorldExport => "world-export",
        }
    }
}

/// Deduplicated names in order of first occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityCorpus {
    names: IndexSet<PersonName>,
    source: SourceTag,
}

impl EntityCorpus {
    pub fn new(source: SourceTag) -> Self {
        EntityCorpus {
            names: IndexSet::new(),
            source,
        }
    }

    /// Adds a raw name. Returns true if it was kept (multi-word and new).
    pub fn insert_raw(&mut self, raw: &str) -> bool {
        match PersonName::parse(raw) {
            Some(name) => self.names.insert(name),
            None => false,
        }
    }

    pub fn source(&self) -> SourceTag {
        self.source
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &PersonName) -> bool {
        self.names.contains(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PersonName> {
        self.names.iter()
    }

    pub fn checksum(&self) -> String {
        lines_checksum(self.names.iter().map(PersonName::as_str))
    }
}

/// Extracts every multi-word person entity from a CoNLL-2003-style corpus.
///
/// A `B-PER` opens an entity and following `I-PER` tokens extend it. An
/// `I-PER` with no open entity starts a new one. Blank lines and
/// `-DOCSTART-` markers close any open entity.
pub fn parse_bio_corpus<R: BufRead>(reader: R) -> Result<EntityCorpus> {
    let mut corpus = EntityCorpus::new(SourceTag::TrainCorpus);
    let mut current: Vec<String> = Vec::new();
    let mut tokens_seen = 0usize;

    let flush = |current: &mut Vec<String>, corpus: &mut EntityCorpus| {
        if !current.is_empty() {
            corpus.insert_raw(&current.join(" "));
            current.clear();
        }
    };

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with("-DOCSTART-") {
            flush(&mut current, &mut corpus);
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 2 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected at least 2 columns, found {}", cols.len()),
            });
        }
        tokens_seen += 1;
        let token = cols[0];
        match cols[cols.len() - 1] {
            "B-PER" => {
                flush(&mut current, &mut corpus);
                current.push(token.to_owned());
            }
            "I-PER" => current.push(token.to_owned()),
            _ => flush(&mut current, &mut corpus),
        }
    }
    flush(&mut current, &mut corpus);

    if tokens_seen == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(corpus)
}

/// Reads a one-name-per-line export, streaming line by line.
pub fn parse_entity_export<R: BufRead>(mut reader: R) -> Result<EntityCorpus> {
    let mut corpus = EntityCorpus::new(SourceTag::WorldExport);
    let mut buf = Vec::new();
    let mut offset = 0u64;
    loop {
        buf.clear();
        let read = reader.read_until(b'\n', &mut buf)?;
        if read == 0 {
            break;
        }
        let line = std::str::from_utf8(&buf).map_err(|e| Error::InvalidUtf8 {
            offset: offset + e.valid_up_to() as u64,
        })?;
        corpus.insert_raw(line);
        offset += read as u64;
    }
    Ok(corpus)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Dev, Split::Test];

    pub fn label(self) -> &'static str {
        match self {
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SourceChecksums {
    pub train: String,
    pub world: String,
}

/// In-train and Out-train names split into dev and test halves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairwiseDataset {
    pub seed: u64,
    pub in_dev: Vec<PersonName>,
    pub out_dev: Vec<PersonName>,
    pub in_test: Vec<PersonName>,
    pub out_test: Vec<PersonName>,
    pub sources: SourceChecksums,
}

const MANIFEST_MAGIC: &str = "memprobe-pairwise-dataset\t1";
const SECTIONS: [&str; 4] = ["in_dev", "out_dev", "in_test", "out_test"];

impl PairwiseDataset {
    pub fn n_dev(&self) -> usize {
        self.in_dev.len()
    }

    pub fn n_test(&self) -> usize {
        self.in_test.len()
    }

    /// Size of each side (In or Out) over both splits.
    pub fn n_total(&self) -> usize {
        self.n_dev() + self.n_test()
    }

    /// `(in_train, out_train)` names of one split.
    pub fn split(&self, split: Split) -> (&[PersonName], &[PersonName]) {
        match split {
            Split::Dev => (&self.in_dev, &self.out_dev),
            Split::Test => (&self.in_test, &self.out_test),
        }
    }

    pub fn in_train(&self) -> impl Iterator<Item = &PersonName> {
        self.in_dev.iter().chain(&self.in_test)
    }

    /// Every name in the dataset, in section order.
    pub fn all_names(&self) -> impl Iterator<Item = &PersonName> + Clone {
        self.in_dev
            .iter()
            .chain(&self.out_dev)
            .chain(&self.in_test)
            .chain(&self.out_test)
    }

    fn sections(&self) -> [&Vec<PersonName>; 4] {
        [&self.in_dev, &self.out_dev, &self.in_test, &self.out_test]
    }

    /// Checks the structural invariants: equal side sizes per split and no
    /// name appearing twice anywhere.
    pub fn validate(&self) -> Result<()> {
        if self.in_dev.len() != self.out_dev.len() || self.in_test.len() != self.out_test.len() {
            return Err(Error::InvalidInput(
                "In and Out sides differ in size within a split".into(),
            ));
        }
        let mut seen = HashSet::new();
        for name in self.all_names() {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "name {name:?} appears in more than one section"
                )));
            }
        }
        Ok(())
    }

    pub fn to_manifest_string(&self) -> String {
        let mut out = String::new();
        out.push_str(MANIFEST_MAGIC);
        out.push('\n');
        for (key, value) in [
            ("seed", self.seed.to_string()),
            ("n_total", self.n_total().to_string()),
            ("n_dev", self.n_dev().to_string()),
            ("n_test", self.n_test().to_string()),
            ("train_checksum", self.sources.train.clone()),
            ("world_checksum", self.sources.world.clone()),
        ] {
            out.push_str(key);
            out.push('\t');
            out.push_str(&value);
            out.push('\n');
        }
        for (label, names) in SECTIONS.iter().zip(self.sections()) {
            out.push('[');
            out.push_str(label);
            out.push_str("]\n");
            for name in names {
                out.push_str(name.as_str());
                out.push('\n');
            }
        }
        out
    }

    pub fn parse_manifest(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, message: String| Error::Parse {
            line: line + 1,
            message,
        };
        match lines.next() {
            Some((_, MANIFEST_MAGIC)) => {}
            Some((i, other)) => return Err(bad(i, format!("unknown header {other:?}"))),
            None => return Err(bad(0, "empty dataset manifest".into())),
        }

        let mut header = Vec::new();
        let mut sections: [Vec<PersonName>; 4] = Default::default();
        let mut section: Option<usize> = None;
        for (i, line) in lines {
            if let Some(label) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let pos = SECTIONS
                    .iter()
                    .position(|s| *s == label)
                    .ok_or_else(|| bad(i, format!("unknown section {label:?}")))?;
                section = Some(pos);
                continue;
            }
            match section {
                None => {
                    let (key, value) = line
                        .split_once('\t')
                        .ok_or_else(|| bad(i, "expected key<TAB>value".into()))?;
                    header.push((i, key.to_owned(), value.to_owned()));
                }
                Some(s) => {
                    let name = PersonName::parse(line)
                        .filter(|n| n.as_str() == line)
                        .ok_or_else(|| bad(i, format!("not a normalized multi-word name: {line:?}")))?;
                    sections[s].push(name);
                }
            }
        }

        let mut seed = None;
        let mut counts = [None; 3];
        let mut sources = SourceChecksums::default();
        for (i, key, value) in header {
            let num = || value.parse::<u64>().map_err(|e| bad(i, format!("{key}: {e}")));
            match key.as_str() {
                "seed" => seed = Some(num()?),
                "n_total" => counts[0] = Some(num()? as usize),
                "n_dev" => counts[1] = Some(num()? as usize),
                "n_test" => counts[2] = Some(num()? as usize),
                "train_checksum" => sources.train = value,
                "world_checksum" => sources.world = value,
                _ => return Err(bad(i, format!("unknown header key {key:?}"))),
            }
        }

        let [in_dev, out_dev, in_test, out_test] = sections;
        let dataset = PairwiseDataset {
            seed: seed.ok_or_else(|| bad(0, "missing seed".into()))?,
            in_dev,
            out_dev,
            in_test,
            out_test,
            sources,
        };
        let expected = [dataset.n_total(), dataset.n_dev(), dataset.n_test()];
        for (declared, actual) in counts.iter().zip(expected) {
            if *declared != Some(actual) {
                return Err(Error::InvalidInput(format!(
                    "dataset header counts {counts:?} do not match sections"
                )));
            }
        }
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn checksum(&self) -> String {
        sha256_hex(self.to_manifest_string().as_bytes())
    }
}

/// Builds the pairwise dataset using every name shared by both corpora.
pub fn build_pairwise(train: &EntityCorpus, world: &EntityCorpus, seed: u64) -> Result<PairwiseDataset> {
    build_pairwise_limited(train, world, seed, None)
}

/// Like [`build_pairwise`], optionally capping the In-train side at
/// `max_in` names sampled from the intersection.
pub fn build_pairwise_limited(
    train: &EntityCorpus,
    world: &EntityCorpus,
    seed: u64,
    max_in: Option<usize>,
) -> Result<PairwiseDataset> {
    let (mut in_pool, out_pool): (Vec<&PersonName>, Vec<&PersonName>) =
        world.iter().partition(|name| train.contains(name));
    if in_pool.len() < 2 {
        return Err(Error::TooFewInTrain(in_pool.len()));
    }

    let mut rng = seeded_rng(seed);
    if let Some(cap) = max_in.filter(|&cap| cap < in_pool.len()) {
        if cap < 2 {
            return Err(Error::TooFewInTrain(cap));
        }
        let mut picked = index::sample(&mut rng, in_pool.len(), cap).into_vec();
        picked.sort_unstable();
        in_pool = picked.into_iter().map(|i| in_pool[i]).collect();
    }
    let n = in_pool.len();
    if out_pool.len() < n {
        return Err(Error::InsufficientNegatives {
            needed: n,
            available: out_pool.len(),
        });
    }

    let mut out: Vec<PersonName> = index::sample(&mut rng, out_pool.len(), n)
        .into_iter()
        .map(|i| out_pool[i].clone())
        .collect();
    let mut inn: Vec<PersonName> = in_pool.into_iter().cloned().collect();
    inn.shuffle(&mut rng);
    out.shuffle(&mut rng);

    let n_dev = n.div_ceil(2);
    let in_test = inn.split_off(n_dev);
    let out_test = out.split_off(n_dev);
    Ok(PairwiseDataset {
        seed,
        in_dev: inn,
        out_dev: out,
        in_test,
        out_test,
        sources: SourceChecksums {
            train: train.checksum(),
            world: world.checksum(),
        },
    })
}

/// Intersection sizes under exact and case-insensitive matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntersectionReport {
    pub train: usize,
    pub world: usize,
    pub exact: usize,
    pub case_insensitive: usize,
}

pub fn intersection_report(train: &EntityCorpus, world: &EntityCorpus) -> IntersectionReport {
    let folded: HashSet<String> = train.iter().map(|n| n.as_str().to_lowercase()).collect();
    IntersectionReport {
        train: train.len(),
        world: world.len(),
        exact: world.iter().filter(|n| train.contains(n)).count(),
        case_insensitive: world
            .iter()
            .filter(|n| folded.contains(&n.as_str().to_lowercase()))
            .count(),
    }
}
