//! Leave-one-word-out importance and greedy prompt shrinking.
//!
//! The importance of a word is how many percentage points the dev score
//! drops when that word is removed. Starting from the best prompt, the
//! least important word is removed at each step; starting from the worst
//! prompt, the most important one. Both chains run until a single word
//! besides `MASK` is left. Importances are recomputed on every shrunken
//! prompt.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::gateway::{confidences_for, RetryPolicy, ScoreBackend};
use crate::memorization::m_mem;
use crate::names::PersonName;
use crate::prompts::PromptWords;

/// Dev score of an arbitrary word sequence holding `MASK`.
pub trait PromptScorer: Sync {
    fn score(&self, prompt: &PromptWords) -> Result<f64>;
}

impl<F> PromptScorer for F
where
    F: Fn(&PromptWords) -> Result<f64> + Sync,
{
    fn score(&self, prompt: &PromptWords) -> Result<f64> {
        self(prompt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenImportance {
    pub word_index: usize,
    pub word: String,
    /// Score drop in percentage points when the word is removed.
    pub raw: f64,
    /// Softmax of the raw values over the prompt's removable words.
    pub normalized: f64,
}

fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Importances given the prompt's own score, plus the score of each
/// leave-one-out variant (aligned with the returned importances).
fn importances_from(prompt: &PromptWords, base: f64, scorer: &dyn PromptScorer) -> Result<(Vec<TokenImportance>, Vec<f64>)> {
    let indices: Vec<usize> = prompt.removable().collect();
    if indices.is_empty() {
        return Err(Error::InvalidInput(format!(
            "prompt {:?} has no removable words",
            prompt.display()
        )));
    }
    let variant_scores: Vec<f64> = indices
        .par_iter()
        .map(|&i| scorer.score(&prompt.without(i).expect("removable index")))
        .collect::<Result<_>>()?;
    let raw: Vec<f64> = variant_scores.iter().map(|v| base - v).collect();
    let normalized = softmax(&raw);
    let importances = indices
        .iter()
        .zip(raw.iter().zip(&normalized))
        .map(|(&i, (&raw, &normalized))| TokenImportance {
            word_index: i,
            word: prompt.words()[i].clone(),
            raw,
            normalized,
        })
        .collect();
    Ok((importances, variant_scores))
}

/// Leave-one-out importance of every word except `MASK`.
pub fn token_importance(prompt: &PromptWords, scorer: &dyn PromptScorer) -> Result<Vec<TokenImportance>> {
    let base = scorer.score(prompt)?;
    Ok(importances_from(prompt, base, scorer)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Best,
    Worst,
}

impl Origin {
    pub fn label(self) -> &'static str {
        match self {
            Origin::Best => "best",
            Origin::Worst => "worst",
        }
    }
}

/// One prompt in a chain with its dev score and word importances.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgeRow {
    pub prompt: PromptWords,
    pub dev_score: f64,
    pub importances: Vec<TokenImportance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgeStep {
    /// Index, in the previous prompt, of the word that was removed.
    pub removed_word_index: usize,
    pub removed_word: String,
    pub row: ForgeRow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgeChain {
    pub origin: Origin,
    pub initial: ForgeRow,
    pub steps: Vec<ForgeStep>,
}

impl ForgeChain {
    /// Rows from the original prompt to the last step.
    pub fn rows(&self) -> impl Iterator<Item = &ForgeRow> {
        std::iter::once(&self.initial).chain(self.steps.iter().map(|s| &s.row))
    }
}

/// A chain cut short by a scorer failure.
#[derive(Debug, Error)]
#[error("prompt engineering stopped after {} steps: {error}", partial.steps.len())]
pub struct ChainFailure {
    pub partial: Box<ForgeChain>,
    #[source]
    pub error: Error,
}

/// Greedily shrinks `start` one word at a time.
///
/// `Origin::Best` removes the word with the smallest raw importance,
/// `Origin::Worst` the largest. Ties go to the smallest word index.
pub fn run_chain(origin: Origin, start: &PromptWords, scorer: &dyn PromptScorer) -> std::result::Result<ForgeChain, ChainFailure> {
    let empty = |error| ChainFailure {
        partial: Box::new(ForgeChain {
            origin,
            initial: ForgeRow {
                prompt: start.clone(),
                dev_score: f64::NAN,
                importances: Vec::new(),
            },
            steps: Vec::new(),
        }),
        error,
    };
    if start.removable_count() < 2 {
        return Err(empty(Error::InvalidInput(format!(
            "prompt {:?} needs at least 2 removable words",
            start.display()
        ))));
    }
    let base = scorer.score(start).map_err(empty)?;
    let (importances, mut variants) = importances_from(start, base, scorer).map_err(empty)?;
    let mut chain = ForgeChain {
        origin,
        initial: ForgeRow {
            prompt: start.clone(),
            dev_score: base,
            importances,
        },
        steps: Vec::new(),
    };

    loop {
        let current = chain.steps.last().map_or(&chain.initial, |s| &s.row);
        if current.prompt.removable_count() < 2 {
            return Ok(chain);
        }
        let pick = current
            .importances
            .iter()
            .enumerate()
            .reduce(|a, b| {
                let better = match origin {
                    Origin::Best => b.1.raw < a.1.raw,
                    Origin::Worst => b.1.raw > a.1.raw,
                };
                if better { b } else { a }
            })
            .map(|(k, _)| k)
            .expect("at least two importances");
        let removed = &current.importances[pick];
        let prompt = current.prompt.without(removed.word_index).expect("removable index");
        let dev_score = variants[pick];
        let (removed_word_index, removed_word) = (removed.word_index, removed.word.clone());
        let (importances, next_variants) = match importances_from(&prompt, dev_score, scorer) {
            Ok(r) => r,
            Err(error) => return Err(ChainFailure { partial: Box::new(chain), error }),
        };
        variants = next_variants;
        chain.steps.push(ForgeStep {
            removed_word_index,
            removed_word,
            row: ForgeRow {
                prompt,
                dev_score,
                importances,
            },
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedPrompt {
    pub origin: Origin,
    /// 1-based step within its chain.
    pub step: usize,
    pub prompt: PromptWords,
    pub dev_score: f64,
}

/// `(BM-PT, WM-PT)`: the highest and lowest dev scores among every
/// modified prompt of both chains. The originals are excluded; ties go to
/// the earliest generated (best chain first).
pub fn select_modified(best: &ForgeChain, worst: &ForgeChain) -> Option<(ModifiedPrompt, ModifiedPrompt)> {
    let pool: Vec<ModifiedPrompt> = [best, worst]
        .iter()
        .flat_map(|chain| {
            chain.steps.iter().enumerate().map(|(i, s)| ModifiedPrompt {
                origin: chain.origin,
                step: i + 1,
                prompt: s.row.prompt.clone(),
                dev_score: s.row.dev_score,
            })
        })
        .collect();
    let mut hi = pool.first()?;
    let mut lo = hi;
    for cand in &pool[1..] {
        if cand.dev_score > hi.dev_score {
            hi = cand;
        }
        if cand.dev_score < lo.dev_score {
            lo = cand;
        }
    }
    Some((hi.clone(), lo.clone()))
}

/// Heatmap data for one chain in long form: one line per (step, word).
pub fn chain_heatmap_tsv(chain: &ForgeChain) -> String {
    let mut out = String::from("origin\tstep\tdev_score\tword_index\tword\traw\tnormalized\tremoved\n");
    let removed_next: Vec<Option<usize>> = chain
        .steps
        .iter()
        .map(|s| Some(s.removed_word_index))
        .chain(std::iter::once(None))
        .collect();
    for (step, (row, removed)) in chain.rows().zip(removed_next).enumerate() {
        for (i, word) in row.prompt.words().iter().enumerate() {
            let imp = row.importances.iter().find(|t| t.word_index == i);
            let (raw, norm) = match imp {
                Some(t) => (t.raw.to_string(), t.normalized.to_string()),
                None => ("NA".into(), "NA".into()),
            };
            let _ = writeln!(
                out,
                "{}\t{step}\t{}\t{i}\t{word}\t{raw}\t{norm}\t{}",
                chain.origin.label(),
                row.dev_score,
                u8::from(removed == Some(i))
            );
        }
    }
    out
}

/// Scores a word sequence by completing it with a fixed set of In-train and
/// Out-train names and computing their pairwise score.
pub struct BackendScorer<'a> {
    backend: &'a dyn ScoreBackend,
    in_names: Vec<&'a PersonName>,
    out_names: Vec<&'a PersonName>,
    retry: RetryPolicy,
}

impl<'a> BackendScorer<'a> {
    pub fn new(
        backend: &'a dyn ScoreBackend,
        in_names: Vec<&'a PersonName>,
        out_names: Vec<&'a PersonName>,
        retry: RetryPolicy,
    ) -> Self {
        BackendScorer {
            backend,
            in_names,
            out_names,
            retry,
        }
    }
}

impl PromptScorer for BackendScorer<'_> {
    fn score(&self, prompt: &PromptWords) -> Result<f64> {
        let text = prompt.render();
        let c_in = confidences_for(self.backend, &text, &self.in_names, &self.retry)?;
        let c_out = confidences_for(self.backend, &text, &self.out_names, &self.retry)?;
        Ok(m_mem(&c_in, &c_out)?.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::{words_of, Category, PromptTemplate};

    fn words(text: &str) -> PromptWords {
        words_of(&PromptTemplate::new("t", Category::Declarative, text).unwrap())
    }

    #[test]
    fn equal_deltas_split_evenly() {
        let scorer = |p: &PromptWords| Ok(p.len() as f64);
        let imp = token_importance(&words("Hello MASK there"), &scorer).unwrap();
        assert_eq!(imp.len(), 2);
        assert!((imp[0].normalized - 0.5).abs() < 1e-15);
        assert!((imp[1].normalized - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log3_gap_gives_3_to_1() {
        let scorer = |p: &PromptWords| {
            let mut s = 0.0;
            for w in p.words() {
                s += match w.as_str() {
                    "a" => 3f64.ln(),
                    _ => 0.0,
                };
            }
            Ok(s)
        };
        let imp = token_importance(&words("a MASK b"), &scorer).unwrap();
        assert!((imp[0].normalized / imp[1].normalized - 3.0).abs() < 1e-12);
        assert!((imp.iter().map(|t| t.normalized).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mask_only_has_no_importance() {
        let scorer = |_: &PromptWords| Ok(0.0);
        assert!(token_importance(&words("MASK"), &scorer).is_err());
    }

    #[test]
    fn two_removable_words_one_step() {
        let scorer = |p: &PromptWords| Ok(if p.words().iter().any(|w| w == "x") { 1.0 } else { 0.0 });
        let chain = run_chain(Origin::Best, &words("x MASK y"), &scorer).unwrap();
        assert_eq!(chain.steps.len(), 1);
        // removing y costs nothing, removing x costs 1
        assert_eq!(chain.steps[0].removed_word, "y");
        assert_eq!(chain.steps[0].row.prompt.removable_count(), 1);
    }

    #[test]
    fn too_short_prompt_rejected() {
        let scorer = |_: &PromptWords| Ok(0.0);
        assert!(run_chain(Origin::Best, &words("Hi MASK"), &scorer).is_err());
    }

    #[test]
    fn failure_keeps_partial_chain() {
        let scorer = |p: &PromptWords| {
            if p.removable_count() < 3 {
                Err(Error::InvalidInput("boom".into()))
            } else {
                Ok(p.len() as f64)
            }
        };
        let err = run_chain(Origin::Worst, &words("a b MASK c d"), &scorer).unwrap_err();
        assert_eq!(err.partial.initial.prompt.removable_count(), 4);
        assert!(err.partial.steps.is_empty());
        assert!(err.partial.initial.dev_score.is_finite());
    }

    #[test]
    fn ties_go_to_smallest_index() {
        let scorer = |_: &PromptWords| Ok(50.0);
        let chain = run_chain(Origin::Best, &words("a b MASK c"), &scorer).unwrap();
        let removed: Vec<&str> = chain.steps.iter().map(|s| s.removed_word.as_str()).collect();
        assert_eq!(removed, ["a", "b"]);
    }

    #[test]
    fn heatmap_marks_removed_words() {
        let scorer = |p: &PromptWords| Ok(p.len() as f64);
        let chain = run_chain(Origin::Best, &words("a MASK b!"), &scorer).unwrap();
        let tsv = chain_heatmap_tsv(&chain);
        assert!(tsv.lines().next().unwrap().starts_with("origin\tstep"));
        let removed = tsv.lines().skip(1).filter(|l| l.ends_with("\t1")).count();
        assert_eq!(removed, chain.steps.len());
        assert!(tsv.contains("\tMASK\tNA\tNA\t0"));
    }
}
