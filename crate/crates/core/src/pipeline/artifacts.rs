//! Reading and writing the tab-separated artifacts of a run.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::util::write_atomic;

/// Writes a TSV artifact led by a `# seed=` comment line.
pub(crate) fn write_tsv(path: &Path, seed: u64, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(write_atomic(path, format!("# seed={seed}\n{body}").as_bytes())?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column {name} missing")))
    }

    pub fn get<'a>(&self, row: &'a [String], name: &str) -> Result<&'a str> {
        Ok(&row[self.column(name)?])
    }

    pub fn get_f64(&self, row: &[String], name: &str) -> Result<f64> {
        let v = self.get(row, name)?;
        v.parse()
            .map_err(|_| Error::Schema(format!("column {name}: {v:?} is not a number")))
    }
}

/// Reads a TSV artifact, skipping `#` lines. A missing file is reported as
/// a missing artifact of `stage`.
pub fn read_tsv(path: &Path, stage: &'static str) -> Result<Table> {
    let text = read_artifact(path, stage)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Schema(format!("{} is empty", path.display())))?
        .split('\t')
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Vec<String> = line.split('\t').map(str::to_owned).collect();
        if row.len() != header.len() {
            return Err(Error::Schema(format!(
                "{} row {}: {} fields for {} columns",
                path.display(),
                i + 1,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}

pub(crate) fn read_artifact(path: &Path, stage: &'static str) -> Result<String> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(s),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            stage,
        }),
        Err(e) => Err(e.into()),
    }
}

/// Files of a run's output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn run_log(&self) -> PathBuf {
        self.root.join("run.log")
    }

    pub fn stamp(&self, stage: &str) -> PathBuf {
        self.root.join(".stamps").join(stage)
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset/pairwise.tsv")
    }

    pub fn intersection(&self) -> PathBuf {
        self.root.join("dataset/intersection.tsv")
    }

    pub fn store_dir(&self) -> PathBuf {
        self.root.join("score")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("score/checkpoint.log")
    }

    pub fn scored_prompt_set(&self) -> PathBuf {
        self.root.join("score/prompt_set.tsv")
    }

    pub fn scored_hand_prompts(&self) -> PathBuf {
        self.root.join("score/hand_prompts.tsv")
    }

    pub fn prompt_scores(&self) -> PathBuf {
        self.root.join("mmem/prompt_scores.tsv")
    }

    pub fn strategies(&self) -> PathBuf {
        self.root.join("strategies/strategies.tsv")
    }

    pub fn chain(&self, origin: &str) -> PathBuf {
        self.root.join(format!("engineer/chain_{origin}.tsv"))
    }

    pub fn selected(&self) -> PathBuf {
        self.root.join("engineer/selected.tsv")
    }

    pub fn cochran(&self) -> PathBuf {
        self.root.join("stats/cochran_q.tsv")
    }

    pub fn correlations(&self) -> PathBuf {
        self.root.join("stats/correlations.tsv")
    }

    pub fn groups(&self) -> PathBuf {
        self.root.join("stats/groups.tsv")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("stats/summary.tsv")
    }

    pub fn attention(&self) -> PathBuf {
        self.root.join("attention/heatmap.tsv")
    }

    pub fn table2(&self) -> PathBuf {
        self.root.join("report/table2.tsv")
    }

    pub fn table3(&self) -> PathBuf {
        self.root.join("report/table3.tsv")
    }

    pub fn gaps(&self) -> PathBuf {
        self.root.join("report/gaps.tsv")
    }
}
