//! The names x prompts confidence matrix and its on-disk form.
//!
//! On disk a store is a directory holding `meta.json` and
//! `confidences.tsv`. The TSV starts with a header row (`name` followed by
//! prompt ids), then one row per name: the name followed by decimal float64
//! values printed with round-trip precision, or `NA` for a missing cell.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{lines_checksum, write_atomic};

pub const META_FILE: &str = "meta.json";
pub const MATRIX_FILE: &str = "confidences.tsv";
const STORE_FORMAT: &str = "memprobe-confidence-store";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub format: String,
    pub version: u32,
    pub model_id: String,
    pub dataset_checksum: String,
    pub promptset_checksum: String,
    pub created_at: String,
    /// Seed of the run that produced the store.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub name_ids_checksum: String,
    pub prompt_ids_checksum: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceStore {
    name_ids: Vec<String>,
    prompt_ids: Vec<String>,
    /// Name-major cells.
    cells: Vec<Option<f64>>,
    meta: StoreMeta,
    name_index: HashMap<String, usize>,
    prompt_index: HashMap<String, usize>,
}

fn index_of(ids: &[String]) -> HashMap<String, usize> {
    ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()
}

impl ConfidenceStore {
    /// An all-missing store.
    pub fn new(
        name_ids: Vec<String>,
        prompt_ids: Vec<String>,
        model_id: String,
        dataset_checksum: String,
        promptset_checksum: String,
        created_at: String,
    ) -> Result<Self> {
        let name_index = index_of(&name_ids);
        let prompt_index = index_of(&prompt_ids);
        if name_index.len() != name_ids.len() || prompt_index.len() != prompt_ids.len() {
            return Err(Error::InvalidInput("duplicate name or prompt id in store".into()));
        }
        if let Some(bad) = prompt_ids
            .iter()
            .chain(&name_ids)
            .find(|id| id.is_empty() || id.contains(['\t', '\n', '\r']) || id.as_str() == "NA")
        {
            return Err(Error::InvalidInput(format!("id {bad:?} cannot be stored")));
        }
        let meta = StoreMeta {
            format: STORE_FORMAT.into(),
            version: 1,
            model_id,
            dataset_checksum,
            promptset_checksum,
            created_at,
            seed: None,
            name_ids_checksum: lines_checksum(name_ids.iter().map(String::as_str)),
            prompt_ids_checksum: lines_checksum(prompt_ids.iter().map(String::as_str)),
        };
        Ok(ConfidenceStore {
            cells: vec![None; name_ids.len() * prompt_ids.len()],
            name_ids,
            prompt_ids,
            meta,
            name_index,
            prompt_index,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.meta.seed = Some(seed);
        self
    }

    pub fn meta(&self) -> &StoreMeta {
        &self.meta
    }

    pub fn name_ids(&self) -> &[String] {
        &self.name_ids
    }

    pub fn prompt_ids(&self) -> &[String] {
        &self.prompt_ids
    }

    pub fn name_position(&self, name: &str) -> Option<usize> {
        self.name_index.get(name).copied()
    }

    pub fn prompt_position(&self, prompt: &str) -> Option<usize> {
        self.prompt_index.get(prompt).copied()
    }

    fn offset(&self, name: usize, prompt: usize) -> usize {
        name * self.prompt_ids.len() + prompt
    }

    pub fn get_at(&self, name: usize, prompt: usize) -> Option<f64> {
        self.cells[self.offset(name, prompt)]
    }

    pub fn get(&self, name: &str, prompt: &str) -> Option<f64> {
        self.get_at(self.name_position(name)?, self.prompt_position(prompt)?)
    }

    /// Sets a cell. Values must lie in `[0, 1]`.
    pub fn set_at(&mut self, name: usize, prompt: usize, value: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidInput(format!("confidence {value} outside [0,1]")));
        }
        let off = self.offset(name, prompt);
        self.cells[off] = Some(value);
        Ok(())
    }

    pub fn missing_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.missing_count() == 0
    }

    /// Confidences of `names` under `prompt`, erroring on any missing cell.
    pub fn column_for<'a, I>(&self, prompt: &str, names: I) -> Result<Vec<f64>>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let p = self
            .prompt_position(prompt)
            .ok_or_else(|| Error::InvalidInput(format!("prompt {prompt:?} not in store")))?;
        names
            .into_iter()
            .map(|name| {
                let n = self
                    .name_position(name)
                    .ok_or_else(|| Error::InvalidInput(format!("name {name:?} not in store")))?;
                self.get_at(n, p).ok_or_else(|| Error::MissingCells {
                    count: 1,
                    first: format!("{name} x {prompt}"),
                })
            })
            .collect()
    }

    /// Errors listing the missing cells among `prompts` x `names`.
    pub fn require<'a>(&self, prompts: &[&str], names: impl IntoIterator<Item = &'a str> + Clone) -> Result<()> {
        let mut missing = Vec::new();
        for &prompt in prompts {
            for name in names.clone() {
                if self.get(name, prompt).is_none() {
                    missing.push(format!("{name} x {prompt}"));
                }
            }
        }
        match missing.first() {
            None => Ok(()),
            Some(first) => Err(Error::MissingCells {
                count: missing.len(),
                first: first.clone(),
            }),
        }
    }

    pub fn matrix_string(&self) -> String {
        let mut out = String::from("name");
        for p in &self.prompt_ids {
            out.push('\t');
            out.push_str(p);
        }
        out.push('\n');
        for (n, name) in self.name_ids.iter().enumerate() {
            out.push_str(name);
            for p in 0..self.prompt_ids.len() {
                out.push('\t');
                match self.get_at(n, p) {
                    Some(v) => out.push_str(&v.to_string()),
                    None => out.push_str("NA"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join(MATRIX_FILE), self.matrix_string().as_bytes())?;
        let mut meta = serde_json::to_string_pretty(&self.meta)?;
        meta.push('\n');
        write_atomic(&dir.join(META_FILE), meta.as_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: StoreMeta = serde_json::from_str(&fs::read_to_string(dir.join(META_FILE))?)?;
        if meta.format != STORE_FORMAT || meta.version != 1 {
            return Err(Error::Schema(format!("unsupported store {} v{}", meta.format, meta.version)));
        }
        let text = fs::read_to_string(dir.join(MATRIX_FILE))?;
        let mut lines = text.lines().enumerate();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, message: "empty matrix".into() })?
            .1;
        let mut cols = header.split('\t');
        if cols.next() != Some("name") {
            return Err(Error::Parse { line: 1, message: "header must start with `name`".into() });
        }
        let prompt_ids: Vec<String> = cols.map(str::to_owned).collect();
        let mut name_ids = Vec::new();
        let mut cells = Vec::new();
        for (i, line) in lines {
            let mut fields = line.split('\t');
            let name = fields.next().unwrap_or_default().to_owned();
            let values: Vec<&str> = fields.collect();
            if values.len() != prompt_ids.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("{} values for {} prompts", values.len(), prompt_ids.len()),
                });
            }
            for v in values {
                cells.push(match v {
                    "NA" => None,
                    v => Some(v.parse::<f64>().map_err(|e| Error::Parse {
                        line: i + 1,
                        message: format!("{v:?}: {e}"),
                    })?),
                });
            }
            name_ids.push(name);
        }
        let mut store = ConfidenceStore::new(
            name_ids,
            prompt_ids,
            meta.model_id.clone(),
            meta.dataset_checksum.clone(),
            meta.promptset_checksum.clone(),
            meta.created_at.clone(),
        )?;
        store.meta.seed = meta.seed;
        if store.meta != meta {
            return Err(Error::Schema("matrix ids do not match the checksums in meta.json".into()));
        }
        if cells.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Schema("confidence outside [0,1]".into()));
        }
        store.cells = cells;
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ConfidenceStore {
        ConfidenceStore::new(
            vec!["Ada Lovelace".into(), "Alan Turing".into()],
            vec!["p1".into(), "p2".into()],
            "m".into(),
            "d".into(),
            "p".into(),
            "t".into(),
        )
        .unwrap()
    }

    #[test]
    fn save_load_round_trip_with_missing() {
        let mut s = store();
        s.set_at(0, 0, 0.1 + 0.2).unwrap();
        s.set_at(1, 1, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let back = ConfidenceStore::load(dir.path()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.get("Ada Lovelace", "p1"), Some(0.30000000000000004));
        assert_eq!(back.missing_count(), 2);
        let text = fs::read_to_string(dir.path().join(MATRIX_FILE)).unwrap();
        assert_eq!(text, "name\tp1\tp2\nAda Lovelace\t0.30000000000000004\tNA\nAlan Turing\tNA\t1\n");
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(store().set_at(0, 0, 1.5).is_err());
    }

    #[test]
    fn load_detects_tampered_ids() {
        let s = store();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let path = dir.path().join(MATRIX_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("Alan Turing", "Alan Turin");
        fs::write(&path, text).unwrap();
        assert!(matches!(ConfidenceStore::load(dir.path()), Err(Error::Schema(_))));
    }

    #[test]
    fn require_lists_missing() {
        let mut s = store();
        s.set_at(0, 0, 0.5).unwrap();
        match s.require(&["p1", "p2"], ["Ada Lovelace", "Alan Turing"]) {
            Err(Error::MissingCells { count, first }) => {
                assert_eq!(count, 3);
                assert_eq!(first, "Alan Turing x p1");
            }
            other => panic!("{other:?}"),
        }
    }
}
