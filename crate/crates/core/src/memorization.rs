//! Pairwise memorization scores and the strategies built on them.
//!
//! A pair (In-train name, Out-train name) exposes memorization when the
//! model is more confident about the In-train name. The score of a prompt
//! is the percentage of all In x Out pairs that do so, with exact ties
//! counted as one half. That makes it the Mann-Whitney U statistic scaled
//! to `[0, 100]`, which is how [`m_mem_fast`] computes it.

use std::cmp::Ordering;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gateway::ConfidenceStore;
use crate::names::{PairwiseDataset, PersonName, Split};
use crate::util::{derive_seed, seeded_rng};

/// Pair outcome: 1 if the In-train confidence is higher, 0 if lower, 0.5 on
/// an exact tie.
pub fn s_mem(c_in: f64, c_out: f64) -> Result<f64> {
    match c_in.partial_cmp(&c_out) {
        Some(Ordering::Greater) => Ok(1.0),
        Some(Ordering::Less) => Ok(0.0),
        Some(Ordering::Equal) => Ok(0.5),
        None => Err(Error::InvalidInput("NaN confidence".into())),
    }
}

/// A pairwise score and the share of pairs that were exact ties, both in
/// percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MMem {
    pub value: f64,
    pub tie_mass: f64,
}

impl MMem {
    /// From `2 * (wins + ties / 2)` and the tie count over `pairs` pairs.
    fn from_counts(twice_u: u128, ties: u128, pairs: u128) -> Self {
        let denom = (2 * pairs) as f64;
        // the upper half is derived from the lower so that swapping the
        // groups sums to exactly 100
        let value = if twice_u <= pairs {
            twice_u as f64 / denom * 100.0
        } else {
            100.0 - (2 * pairs - twice_u) as f64 / denom * 100.0
        };
        MMem {
            value,
            tie_mass: (2 * ties) as f64 / denom * 100.0,
        }
    }
}

fn check(c_in: &[f64], c_out: &[f64]) -> Result<()> {
    if c_in.is_empty() || c_out.is_empty() {
        return Err(Error::InvalidInput("both confidence vectors must be non-empty".into()));
    }
    if c_in.iter().chain(c_out).any(|c| c.is_nan()) {
        return Err(Error::InvalidInput("NaN confidence".into()));
    }
    Ok(())
}

/// Direct evaluation over the full cross product, O(n_in * n_out).
pub fn m_mem_exact(c_in: &[f64], c_out: &[f64]) -> Result<MMem> {
    check(c_in, c_out)?;
    let (mut wins, mut ties) = (0u128, 0u128);
    for &a in c_in {
        for &b in c_out {
            if a > b {
                wins += 1;
            } else if a == b {
                ties += 1;
            }
        }
    }
    let pairs = (c_in.len() * c_out.len()) as u128;
    Ok(MMem::from_counts(2 * wins + ties, ties, pairs))
}

/// Same value as [`m_mem_exact`] via joint sorting and midranks,
/// O(n log n).
///
/// Midranks are kept doubled so every quantity stays an integer and the
/// result is bit-identical to the direct count.
pub fn m_mem_fast(c_in: &[f64], c_out: &[f64]) -> Result<MMem> {
    check(c_in, c_out)?;
    let mut joint: Vec<(f64, bool)> = c_in
        .iter()
        .map(|&c| (c, true))
        .chain(c_out.iter().map(|&c| (c, false)))
        .collect();
    joint.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    let (n_in, n_out) = (c_in.len() as u128, c_out.len() as u128);
    let mut twice_rank_sum = 0u128;
    let mut ties = 0u128;
    let mut start = 0usize;
    while start < joint.len() {
        let mut end = start;
        // -0.0 and 0.0 compare equal but sort apart under total_cmp
        while end < joint.len() && joint[end].0 == joint[start].0 {
            end += 1;
        }
        let group_in = joint[start..end].iter().filter(|(_, is_in)| *is_in).count() as u128;
        let group_out = (end - start) as u128 - group_in;
        // positions start..end hold 1-based ranks start+1..=end
        twice_rank_sum += group_in * (start as u128 + 1 + end as u128);
        ties += group_in * group_out;
        start = end;
    }
    let twice_u = twice_rank_sum - n_in * (n_in + 1);
    Ok(MMem::from_counts(twice_u, ties, n_in * n_out))
}

/// The default scoring path.
pub fn m_mem(c_in: &[f64], c_out: &[f64]) -> Result<MMem> {
    m_mem_fast(c_in, c_out)
}

/// Per-prompt scores on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct MMemScore {
    pub prompt_id: String,
    pub split: Split,
    pub value: f64,
    pub tie_mass: f64,
}

fn names_of(names: &[PersonName]) -> impl Iterator<Item = &str> + Clone {
    names.iter().map(PersonName::as_str)
}

/// `(In-train, Out-train)` confidences for one prompt and split.
pub fn split_confidences(
    store: &ConfidenceStore,
    dataset: &PairwiseDataset,
    prompt: &str,
    split: Split,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (inn, out) = dataset.split(split);
    Ok((store.column_for(prompt, names_of(inn))?, store.column_for(prompt, names_of(out))?))
}

pub fn prompt_score(store: &ConfidenceStore, dataset: &PairwiseDataset, prompt: &str, split: Split) -> Result<MMemScore> {
    let (c_in, c_out) = split_confidences(store, dataset, prompt, split)?;
    let m = m_mem(&c_in, &c_out)?;
    Ok(MMemScore {
        prompt_id: prompt.to_owned(),
        split,
        value: m.value,
        tie_mass: m.tie_mass,
    })
}

/// Scores of every prompt on one split, in the given order.
pub fn prompt_scores(
    store: &ConfidenceStore,
    dataset: &PairwiseDataset,
    prompts: &[&str],
    split: Split,
) -> Result<Vec<MMemScore>> {
    prompts
        .par_iter()
        .map(|p| prompt_score(store, dataset, p, split))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    EmptyPT,
    OnePT,
    MixPT,
    BPT,
    WPT,
    BMPT,
    WMPT,
    MV,
    AVGC,
    WEDC,
    MAXC,
    MINC,
}

impl Strategy {
    pub const ALL: [Strategy; 12] = [
        Strategy::EmptyPT,
        Strategy::OnePT,
        Strategy::MixPT,
        Strategy::BPT,
        Strategy::WPT,
        Strategy::BMPT,
        Strategy::WMPT,
        Strategy::MV,
        Strategy::AVGC,
        Strategy::WEDC,
        Strategy::MAXC,
        Strategy::MINC,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::EmptyPT => "Empty-PT",
            Strategy::OnePT => "One-PT",
            Strategy::MixPT => "Mix-PT",
            Strategy::BPT => "B-PT",
            Strategy::WPT => "W-PT",
            Strategy::BMPT => "BM-PT",
            Strategy::WMPT => "WM-PT",
            Strategy::MV => "MV",
            Strategy::AVGC => "AVG-C",
            Strategy::WEDC => "WED-C",
            Strategy::MAXC => "MAX-C",
            Strategy::MINC => "MIN-C",
        }
    }

    /// Row group in the strategy table.
    pub fn group(self) -> &'static str {
        match self {
            Strategy::EmptyPT | Strategy::OnePT | Strategy::MixPT => "BS",
            Strategy::BPT | Strategy::WPT => "OPT",
            Strategy::BMPT | Strategy::WMPT => "PTE",
            _ => "EPT",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Strategy::ALL.into_iter().find(|s| s.label() == label)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyResult {
    pub strategy: Strategy,
    pub dev: MMem,
    pub test: MMem,
    /// Free-form payload such as the selected prompt id or the seed.
    pub detail: String,
}

/// Single-prompt strategy (Empty-PT, One-PT, B-PT, ...).
pub fn single_prompt(
    store: &ConfidenceStore,
    dataset: &PairwiseDataset,
    strategy: Strategy,
    prompt: &str,
) -> Result<StrategyResult> {
    let score = |split| -> Result<MMem> {
        let (c_in, c_out) = split_confidences(store, dataset, prompt, split)?;
        m_mem(&c_in, &c_out)
    };
    Ok(StrategyResult {
        strategy,
        dev: score(Split::Dev)?,
        test: score(Split::Test)?,
        detail: prompt.to_owned(),
    })
}

/// Assigns each name one of the hand-written prompts at random and scores
/// with the assigned prompt's confidence.
pub fn baseline_mix_pt(
    store: &ConfidenceStore,
    dataset: &PairwiseDataset,
    hand_prompts: &[&str],
    seed: u64,
) -> Result<StrategyResult> {
    if hand_prompts.is_empty() {
        return Err(Error::InvalidInput("Mix-PT needs at least one prompt".into()));
    }
    store.require(hand_prompts, dataset.all_names().map(PersonName::as_str))?;
    let assignment = mix_assignment(dataset, hand_prompts.len(), seed);
    let conf = |names: &[PersonName], offset: usize| -> Vec<f64> {
        names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                store
                    .get(n.as_str(), hand_prompts[assignment[offset + i]])
                    .expect("cells checked above")
            })
            .collect()
    };
    let (nd, nt) = (dataset.n_dev(), dataset.n_test());
    // assignment follows all_names(): in_dev, out_dev, in_test, out_test
    let dev = m_mem(&conf(&dataset.in_dev, 0), &conf(&dataset.out_dev, nd))?;
    let test = m_mem(&conf(&dataset.in_test, 2 * nd), &conf(&dataset.out_test, 2 * nd + nt))?;
    Ok(StrategyResult {
        strategy: Strategy::MixPT,
        dev,
        test,
        detail: format!("seed={seed}"),
    })
}

/// Prompt index per name, in `PairwiseDataset::all_names` order.
pub fn mix_assignment(dataset: &PairwiseDataset, choices: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeded_rng(derive_seed(seed, "mix-pt"));
    dataset.all_names().map(|_| rng.random_range(0..choices)).collect()
}

/// `(best, worst)` prompt ids by value. Ties go to the lexicographically
/// smallest id.
pub fn select_best_worst(scores: &[MMemScore]) -> Option<(String, String)> {
    let better = |a: &&MMemScore, b: &&MMemScore| {
        a.value
            .total_cmp(&b.value)
            .then_with(|| b.prompt_id.cmp(&a.prompt_id))
    };
    let best = scores.iter().max_by(better)?;
    let worst = scores
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value).then_with(|| a.prompt_id.cmp(&b.prompt_id)))?;
    Some((best.prompt_id.clone(), worst.prompt_id.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleMethod {
    MajorityVote,
    Average,
    Weighted,
    Max,
    Min,
}

impl EnsembleMethod {
    pub const ALL: [EnsembleMethod; 5] = [
        EnsembleMethod::MajorityVote,
        EnsembleMethod::Average,
        EnsembleMethod::Weighted,
        EnsembleMethod::Max,
        EnsembleMethod::Min,
    ];

    pub fn strategy(self) -> Strategy {
        match self {
            EnsembleMethod::MajorityVote => Strategy::MV,
            EnsembleMethod::Average => Strategy::AVGC,
            EnsembleMethod::Weighted => Strategy::WEDC,
            EnsembleMethod::Max => Strategy::MAXC,
            EnsembleMethod::Min => Strategy::MINC,
        }
    }
}

/// Confidence rows (one per name, one column per prompt).
fn rows(store: &ConfidenceStore, names: &[PersonName], prompts: &[usize]) -> Vec<Vec<f64>> {
    names
        .iter()
        .map(|n| {
            let r = store.name_position(n.as_str()).expect("checked by require");
            prompts
                .iter()
                .map(|&p| store.get_at(r, p).expect("checked by require"))
                .collect()
        })
        .collect()
}

/// Prompt weights proportional to dev scores, normalized to sum 1.
pub fn dev_weights(store: &ConfidenceStore, dataset: &PairwiseDataset, prompts: &[&str]) -> Result<Vec<f64>> {
    let scores = prompt_scores(store, dataset, prompts, Split::Dev)?;
    let total = sorted_sum(scores.iter().map(|s| s.value).collect());
    if total <= 0.0 {
        return Err(Error::Degenerate("dev scores sum to zero".into()));
    }
    Ok(scores.iter().map(|s| s.value / total).collect())
}

fn majority_vote(c_in: &[Vec<f64>], c_out: &[Vec<f64>]) -> MMem {
    let m = c_in.first().map_or(0, Vec::len);
    let votes: u128 = c_in
        .par_iter()
        .map(|a| {
            c_out
                .iter()
                .filter(|b| {
                    let wins = a.iter().zip(b.iter()).filter(|(x, y)| x > y).count();
                    2 * wins > m
                })
                .count() as u128
        })
        .sum();
    let pairs = (c_in.len() * c_out.len()) as u128;
    MMem::from_counts(2 * votes, 0, pairs)
}

/// Sum in ascending order, so the result does not depend on prompt order.
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

fn reduce_rows(rows: &[Vec<f64>], method: EnsembleMethod, weights: &[f64]) -> Vec<f64> {
    rows.iter()
        .map(|r| match method {
            EnsembleMethod::Average => sorted_sum(r.clone()) / r.len() as f64,
            EnsembleMethod::Weighted => sorted_sum(r.iter().zip(weights).map(|(c, w)| c * w).collect()),
            EnsembleMethod::Max => r.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            EnsembleMethod::Min => r.iter().cloned().fold(f64::INFINITY, f64::min),
            EnsembleMethod::MajorityVote => unreachable!("voting does not reduce rows"),
        })
        .collect()
}

/// Combines all `prompts` into one score per split.
///
/// `weights` is only used by [`EnsembleMethod::Weighted`]; when absent the
/// weights are computed from dev scores. They are never derived from test.
pub fn ensemble(
    store: &ConfidenceStore,
    dataset: &PairwiseDataset,
    prompts: &[&str],
    method: EnsembleMethod,
    weights: Option<&[f64]>,
) -> Result<StrategyResult> {
    if prompts.is_empty() {
        return Err(Error::InvalidInput("ensemble over zero prompts".into()));
    }
    store.require(prompts, dataset.all_names().map(PersonName::as_str))?;
    let positions: Vec<usize> = prompts
        .iter()
        .map(|p| store.prompt_position(p).expect("checked by require"))
        .collect();
    let weights = match (method, weights) {
        (EnsembleMethod::Weighted, Some(w)) if w.len() != prompts.len() => {
            return Err(Error::InvalidInput(format!("{} weights for {} prompts", w.len(), prompts.len())))
        }
        (EnsembleMethod::Weighted, Some(w)) => w.to_vec(),
        (EnsembleMethod::Weighted, None) => dev_weights(store, dataset, prompts)?,
        _ => Vec::new(),
    };

    let score = |split| -> Result<MMem> {
        let (inn, out) = dataset.split(split);
        let (r_in, r_out) = (rows(store, inn, &positions), rows(store, out, &positions));
        match method {
            EnsembleMethod::MajorityVote => Ok(majority_vote(&r_in, &r_out)),
            _ => m_mem(&reduce_rows(&r_in, method, &weights), &reduce_rows(&r_out, method, &weights)),
        }
    };
    let detail = match method {
        EnsembleMethod::Weighted => format!(
            "weights={}",
            weights.iter().map(|w| format!("{w:.6}")).collect::<Vec<_>>().join(",")
        ),
        _ => format!("prompts={}", prompts.len()),
    };
    Ok(StrategyResult {
        strategy: method.strategy(),
        dev: score(Split::Dev)?,
        test: score(Split::Test)?,
        detail,
    })
}
