use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use super::wire::{ScoreItem, ScoreRequest, Span};
use super::{confidence, ConfidenceStore, ScoreBackend, TokenScores};
use crate::error::{BackendError, Error, Result};
use crate::names::{PairwiseDataset, PersonName};
use crate::prompts::{complete_text, PromptTemplate, EMPTY_PROMPT_ID};
use crate::util::lines_checksum;

const CHECKPOINT_MAGIC: &str = "memprobe-checkpoint\t1";

/// Capped exponential backoff for transient backend failures.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_delay: Duration::from_millis(200),
            max_delay: Duration::from_secs(10),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Delay before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.min(31)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    pub fn run<T>(&self, mut op: impl FnMut() -> std::result::Result<T, BackendError>) -> std::result::Result<T, BackendError> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_transient() && attempt < self.max_retries => {
                    log::debug!("retrying after {e} (attempt {})", attempt + 1);
                    thread::sleep(self.delay(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScoreOptions {
    pub batch_size: usize,
    pub concurrency: usize,
    pub resume: bool,
    /// Append-only progress log; enables resume.
    pub checkpoint: Option<PathBuf>,
    /// Flush the checkpoint after this many completed batches.
    pub checkpoint_every: usize,
    pub retry: RetryPolicy,
    pub created_at: String,
    /// Recorded in the store metadata.
    pub seed: Option<u64>,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            batch_size: 32,
            concurrency: 4,
            resume: false,
            checkpoint: None,
            checkpoint_every: 16,
            retry: RetryPolicy::default(),
            created_at: "unspecified".into(),
            seed: None,
        }
    }
}

struct Unit {
    prompt: usize,
    start: usize,
    len: usize,
}

/// Checksum over `id<TAB>category<TAB>template` of each prompt.
pub(crate) fn promptset_checksum(prompts: &[PromptTemplate]) -> String {
    let lines: Vec<String> = prompts
        .iter()
        .map(|p| format!("{}\t{}\t{}", p.id(), p.category(), p.text()))
        .collect();
    lines_checksum(lines.iter().map(String::as_str))
}

/// Scores every name of `dataset` under every prompt plus the implicit
/// bare-name template.
///
/// Work is split into prompt-major batches sent by `concurrency` workers.
/// Completed batches are appended to the checkpoint log so an interrupted
/// run can resume; the final store does not depend on completion order.
pub fn score_all(
    dataset: &PairwiseDataset,
    prompts: &[PromptTemplate],
    backend: &dyn ScoreBackend,
    opts: &ScoreOptions,
) -> Result<ConfidenceStore> {
    let mut prompts = prompts.to_vec();
    if !prompts.iter().any(|p| p.id() == EMPTY_PROMPT_ID) {
        prompts.push(PromptTemplate::empty());
    }
    let names: Vec<&PersonName> = dataset.all_names().collect();
    let meta = opts.retry.run(|| backend.meta())?;
    let mut store = ConfidenceStore::new(
        names.iter().map(|n| n.as_str().to_owned()).collect(),
        prompts.iter().map(|p| p.id().to_owned()).collect(),
        meta.model_id,
        dataset.checksum(),
        promptset_checksum(&prompts),
        opts.created_at.clone(),
    )?;
    if let Some(seed) = opts.seed {
        store = store.with_seed(seed);
    }

    let header = format!(
        "{CHECKPOINT_MAGIC}\t{}\t{}\t{}",
        store.meta().dataset_checksum,
        store.meta().promptset_checksum,
        store.meta().model_id
    );
    let mut log = match &opts.checkpoint {
        None => None,
        Some(path) => {
            if opts.resume && path.exists() {
                replay_checkpoint(&mut store, &fs::read_to_string(path)?, &header)?;
            } else {
                fs::write(path, format!("{header}\n"))?;
            }
            Some(BufWriter::new(OpenOptions::new().append(true).open(path)?))
        }
    };

    let batch = opts.batch_size.max(1);
    let n_names = names.len();
    let units: Vec<Unit> = (0..prompts.len())
        .flat_map(|prompt| {
            (0..n_names).step_by(batch).map(move |start| Unit {
                prompt,
                start,
                len: batch.min(n_names - start),
            })
        })
        .filter(|u| (u.start..u.start + u.len).any(|n| store.get_at(n, u.prompt).is_none()))
        .collect();
    log::info!(
        "scoring {} batches ({} names x {} prompts, {} cells already present)",
        units.len(),
        names.len(),
        prompts.len(),
        names.len() * prompts.len() - store.missing_count()
    );

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let mut failure: Option<Error> = None;
    let mut done_batches = 0usize;
    thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::channel();
        for _ in 0..opts.concurrency.max(1) {
            let tx = tx.clone();
            let (units, names, prompts, next, stop) = (&units, &names, &prompts, &next, &stop);
            scope.spawn(move || loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(unit) = units.get(i) else { break };
                let result = score_unit(unit, names, &prompts[unit.prompt], backend, &opts.retry);
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        for (i, result) in rx {
            let unit = &units[i];
            match result {
                Ok(values) => {
                    for (k, v) in values.iter().enumerate() {
                        store.set_at(unit.start + k, unit.prompt, *v)?;
                    }
                    if let Some(log) = log.as_mut() {
                        let joined: Vec<String> = values.iter().map(f64::to_string).collect();
                        writeln!(log, "{}\t{}\t{}", prompts[unit.prompt].id(), unit.start, joined.join(" "))?;
                        done_batches += 1;
                        if done_batches.is_multiple_of(opts.checkpoint_every.max(1)) {
                            log.flush()?;
                        }
                    }
                }
                Err(e) => {
                    stop.store(true, Ordering::Relaxed);
                    failure.get_or_insert(e);
                }
            }
        }
        Ok(())
    })?;
    if let Some(log) = log.as_mut() {
        log.flush()?;
    }

    match failure {
        None => Ok(store),
        Some(Error::Backend(source)) => {
            let completed = store.name_ids().len() * store.prompt_ids().len() - store.missing_count();
            Err(Error::Aborted { completed, source })
        }
        Some(other) => Err(other),
    }
}

fn score_unit(
    unit: &Unit,
    names: &[&PersonName],
    prompt: &PromptTemplate,
    backend: &dyn ScoreBackend,
    retry: &RetryPolicy,
) -> Result<Vec<f64>> {
    confidences_for(backend, prompt.text(), &names[unit.start..unit.start + unit.len], retry)
}

/// Completes `template` (any text holding one `MASK`) with each name and
/// returns the name confidences in one request.
pub fn confidences_for(
    backend: &dyn ScoreBackend,
    template: &str,
    names: &[&PersonName],
    retry: &RetryPolicy,
) -> Result<Vec<f64>> {
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
    );
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
        .map(|(item, c)| confidence(&TokenScores::from_wire(item)?, c.name_span))
        .collect()
}

fn replay_checkpoint(store: &mut ConfidenceStore, text: &str, header: &str) -> Result<()> {
    let mut lines = text.split_inclusive('\n');
    match lines.next() {
        Some(first) if first.trim_end_matches('\n') == header => {}
        _ => {
            return Err(Error::InvalidInput(
                "checkpoint was written for different inputs; rerun without resume".into(),
            ))
        }
    }
    let mut replayed = 0usize;
    for (i, line) in lines.enumerate() {
        // a line without its newline was cut off mid-write
        let Some(line) = line.strip_suffix('\n') else { break };
        let bad = |message: String| Error::Parse { line: i + 2, message };
        let mut fields = line.splitn(3, '\t');
        let (Some(prompt), Some(start), Some(values)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(bad("malformed checkpoint record".into()));
        };
        let p = store
            .prompt_position(prompt)
            .ok_or_else(|| bad(format!("unknown prompt {prompt:?}")))?;
        let start: usize = start.parse().map_err(|e| bad(format!("{e}")))?;
        for (k, v) in values.split(' ').enumerate() {
            let v: f64 = v.parse().map_err(|e| bad(format!("{v:?}: {e}")))?;
            if start + k >= store.name_ids().len() {
                return Err(bad("record runs past the last name".into()));
            }
            store.set_at(start + k, p, v)?;
        }
        replayed += 1;
    }
    log::info!("resumed {replayed} batches from checkpoint");
    Ok(())
}
