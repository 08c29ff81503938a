//! Significance tests, rank correlations, rankings and property groupings.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::gateway::ConfidenceStore;
use crate::memorization::{split_confidences, MMemScore};
use crate::names::{PairwiseDataset, Split};
use crate::prompts::{Category, PromptProperties};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QTestResult {
    pub q_statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub blocks_used: u64,
}

/// Streaming Cochran's Q over blocks of binary outcomes.
///
/// Blocks may be fed in any order and partial accumulators merged.
/// All sums are integers so the statistic does not depend on order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CochranQ {
    column_totals: Vec<u64>,
    sum_b: u128,
    sum_b2: u128,
    blocks: u64,
}

impl CochranQ {
    pub fn new(treatments: usize) -> Self {
        CochranQ {
            column_totals: vec![0; treatments],
            sum_b: 0,
            sum_b2: 0,
            blocks: 0,
        }
    }

    pub fn treatments(&self) -> usize {
        self.column_totals.len()
    }

    pub fn add_block(&mut self, row: &[bool]) {
        assert_eq!(row.len(), self.column_totals.len(), "block width");
        let mut b = 0u128;
        for (g, &x) in self.column_totals.iter_mut().zip(row) {
            if x {
                *g += 1;
                b += 1;
            }
        }
        self.add_total(b);
    }

    fn add_total(&mut self, b: u128) {
        self.sum_b += b;
        self.sum_b2 += b * b;
        self.blocks += 1;
    }

    pub fn merge(mut self, other: &CochranQ) -> CochranQ {
        assert_eq!(self.treatments(), other.treatments(), "treatment count");
        for (a, b) in self.column_totals.iter_mut().zip(&other.column_totals) {
            *a += b;
        }
        self.sum_b += other.sum_b;
        self.sum_b2 += other.sum_b2;
        self.blocks += other.blocks;
        self
    }

    /// `Q = (k-1)(k ΣG² - (ΣG)²) / (k ΣB - ΣB²)`, chi-square with `k-1`
    /// degrees of freedom. Tables where every block is all-0 or all-1 give
    /// `Q = 0, p = 1`.
    pub fn finish(&self) -> Result<QTestResult> {
        let k = self.treatments();
        if k < 2 {
            return Err(Error::InvalidInput(format!("Cochran's Q needs at least 2 treatments, got {k}")));
        }
        let k128 = k as u128;
        let denom = k128 * self.sum_b - self.sum_b2;
        let dof = k - 1;
        if denom == 0 {
            return Ok(QTestResult {
                q_statistic: 0.0,
                dof,
                p_value: 1.0,
                blocks_used: self.blocks,
            });
        }
        let sum_g2: u128 = self.column_totals.iter().map(|&g| (g as u128) * (g as u128)).sum();
        let num = (k128 - 1) * (k128 * sum_g2 - self.sum_b * self.sum_b);
        let q = num as f64 / denom as f64;
        Ok(QTestResult {
            q_statistic: q,
            dof,
            p_value: chi2_sf(q, dof as f64),
            blocks_used: self.blocks,
        })
    }
}

/// Cochran's Q of a whole table (rows are blocks).
pub fn cochran_q(table: &[Vec<bool>]) -> Result<QTestResult> {
    let k = table.first().map_or(0, Vec::len);
    let mut acc = CochranQ::new(k);
    for (i, row) in table.iter().enumerate() {
        if row.len() != k {
            return Err(Error::InvalidInput(format!("row {i} has {} entries, expected {k}", row.len())));
        }
        acc.add_block(row);
    }
    acc.finish()
}

/// Cochran's Q with blocks = In×Out name pairs of `split`, treatments =
/// `prompts`, entries = strict S-MEM (ties count as 0).
pub fn cochran_q_store(
    store: &ConfidenceStore,
    dataset: &PairwiseDataset,
    prompts: &[&str],
    split: Split,
) -> Result<QTestResult> {
    let columns: Vec<(Vec<f64>, Vec<f64>)> = prompts
        .iter()
        .map(|p| split_confidences(store, dataset, p, split))
        .collect::<Result<_>>()?;
    let (n_in, n_out) = match columns.first() {
        Some((a, b)) => (a.len(), b.len()),
        None => return CochranQ::new(0).finish(),
    };
    let k = prompts.len();
    let acc = (0..n_in)
        .into_par_iter()
        .fold(
            || CochranQ::new(k),
            |mut acc, i| {
                for o in 0..n_out {
                    let mut b = 0u128;
                    for (g, (c_in, c_out)) in acc.column_totals.iter_mut().zip(&columns) {
                        if c_in[i] > c_out[o] {
                            *g += 1;
                            b += 1;
                        }
                    }
                    acc.add_total(b);
                }
                acc
            },
        )
        .reduce(|| CochranQ::new(k), |a, b| a.merge(&b));
    acc.finish()
}

/// Upper-tail chi-square probability `P(χ²_dof > x)`.
pub fn chi2_sf(x: f64, dof: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(dof).map_or(f64::NAN, |d| d.sf(x))
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!("vectors differ in length: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 observations".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN in input".into()));
    }
    Ok(())
}

/// Number of tied pairs among runs of equal values in a sorted slice.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    sorted
        .chunk_by(|a, b| a == b)
        .map(|run| {
            let n = run.len() as u64;
            n * (n - 1) / 2
        })
        .sum()
}

/// Sorts `v` and returns the number of inversions swapped on the way.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall's τ-b in O(n log n).
///
/// Errors when either vector is constant.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as u64;
    let n0 = n * (n - 1) / 2;
    // adding +0.0 maps -0.0 to +0.0, which total_cmp would otherwise separate
    let mut pairs: Vec<(f64, f64)> = x.iter().zip(y).map(|(a, b)| (a + 0.0, b + 0.0)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n1: u64 = pairs
        .chunk_by(|a, b| a.0 == b.0)
        .map(|r| (r.len() as u64) * (r.len() as u64 - 1) / 2)
        .sum();
    let n3: u64 = pairs
        .chunk_by(|a, b| a.0 == b.0 && a.1 == b.1)
        .map(|r| (r.len() as u64) * (r.len() as u64 - 1) / 2)
        .sum();
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let swaps = merge_count(&mut ys, &mut buf);
    let n2 = tied_pairs(&ys);
    if n1 == n0 || n2 == n0 {
        return Err(Error::Degenerate("Kendall's tau is undefined for a constant vector".into()));
    }
    let concordant_minus_discordant = n0 as i128 - n1 as i128 - n2 as i128 + n3 as i128 - 2 * swaps as i128;
    let denom = (((n0 - n1) as u128 * (n0 - n2) as u128) as f64).sqrt();
    Ok(concordant_minus_discordant as f64 / denom)
}

/// Pearson's r. Errors when either vector is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("Pearson's r is undefined for a constant vector".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    /// Row-major, symmetric, unit diagonal. `None` where τ is undefined.
    pub values: Vec<Vec<Option<f64>>>,
}

impl CorrelationMatrix {
    /// Kendall τ-b between every pair of equally long score vectors.
    pub fn kendall(series: &[(String, Vec<f64>)]) -> Result<Self> {
        let m = series.len();
        let mut values = vec![vec![None; m]; m];
        for i in 0..m {
            values[i][i] = Some(1.0);
            for j in i + 1..m {
                let tau = match kendall_tau_b(&series[i].1, &series[j].1) {
                    Ok(t) => Some(t),
                    Err(Error::Degenerate(_)) => None,
                    Err(e) => return Err(e),
                };
                values[i][j] = tau;
                values[j][i] = tau;
            }
        }
        Ok(CorrelationMatrix {
            labels: series.iter().map(|s| s.0.clone()).collect(),
            values,
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("label");
        for l in &self.labels {
            out.push('\t');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.values) {
            out.push_str(l);
            for v in row {
                match v {
                    Some(v) => write!(out, "\t{v}").unwrap(),
                    None => out.push_str("\tNA"),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptRank {
    pub prompt_id: String,
    pub value: f64,
    /// 1 for the highest score.
    pub rank: usize,
    /// -1 for the lowest score.
    pub neg_rank: i64,
}

/// Competition ranks from the top and from the bottom. Tied scores share
/// the rank nearest their end of the list; the next rank is skipped.
pub fn rank_prompts(scores: &[MMemScore]) -> Vec<PromptRank> {
    let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
    scores
        .iter()
        .map(|s| {
            let above = values.iter().filter(|&&v| v > s.value).count();
            let below = values.iter().filter(|&&v| v < s.value).count();
            PromptRank {
                prompt_id: s.prompt_id.clone(),
                value: s.value,
                rank: above + 1,
                neg_rank: -(below as i64 + 1),
            }
        })
        .collect()
}

/// Box-plot summary with type-7 (linear interpolation) quartiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub n: usize,
}

/// Type-7 quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl BoxSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(BoxSummary {
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
            n: v.len(),
        })
    }
}

/// Mean and sample standard deviation (`n-1`; 0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Some((mean, (ss / (n - 1.0)).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Property {
    Category,
    MaskPosition,
    WordLength,
}

impl Property {
    pub fn label(self) -> &'static str {
        match self {
            Property::Category => "category",
            Property::MaskPosition => "mask_position",
            Property::WordLength => "word_length",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub property: Property,
    pub group: String,
    pub summary: BoxSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub groups: Vec<GroupSummary>,
    pub length_pearson: Option<f64>,
    pub length_kendall: Option<f64>,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Box summaries of scores grouped by category, mask position and word
/// length, the correlation of score with length, and overall mean/std.
///
/// `props` is aligned with `scores`. Groups appear in category order, then
/// numerically ascending.
pub fn group_by_property(scores: &[MMemScore], props: &[PromptProperties]) -> Result<PropertyReport> {
    if scores.len() != props.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores but {} property rows",
            scores.len(),
            props.len()
        )));
    }
    let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
    let Some((mean, std)) = mean_std(&values) else {
        return Err(Error::InvalidInput("no scores to group".into()));
    };
    let mut groups = Vec::new();
    for cat in Category::ALL {
        let v: Vec<f64> = values.iter().zip(props).filter(|(_, p)| p.category == cat).map(|(v, _)| *v).collect();
        if let Some(summary) = BoxSummary::of(&v) {
            groups.push(GroupSummary {
                property: Property::Category,
                group: cat.label().to_owned(),
                summary,
            });
        }
    }
    for (property, key) in [
        (Property::MaskPosition, (|p: &PromptProperties| p.mask_position) as fn(&PromptProperties) -> usize),
        (Property::WordLength, |p: &PromptProperties| p.word_length),
    ] {
        let mut by: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (v, p) in values.iter().zip(props) {
            by.entry(key(p)).or_default().push(*v);
        }
        for (k, v) in by {
            groups.push(GroupSummary {
                property,
                group: k.to_string(),
                summary: BoxSummary::of(&v).expect("non-empty group"),
            });
        }
    }
    let lengths: Vec<f64> = props.iter().map(|p| p.word_length as f64).collect();
    let defined = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(Error::InvalidInput(_)) if values.len() < 2 => Ok(None),
        Err(e) => Err(e),
    };
    Ok(PropertyReport {
        groups,
        length_pearson: defined(pearson(&lengths, &values))?,
        length_kendall: defined(kendall_tau_b(&lengths, &values))?,
        mean,
        std,
        n: values.len(),
    })
}

impl PropertyReport {
    pub fn groups_tsv(&self) -> String {
        let mut out = String::from("property\tgroup\tn\tmin\tq1\tmedian\tq3\tmax\tmean\n");
        for g in &self.groups {
            let s = &g.summary;
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                g.property.label(),
                g.group,
                s.n,
                s.min,
                s.q1,
                s.median,
                s.q3,
                s.max,
                s.mean
            )
            .unwrap();
        }
        out
    }

    pub fn summary_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("NA".to_owned(), |v| v.to_string());
        format!(
            "statistic\tvalue\nn\t{}\nmean\t{}\nstd\t{}\nlength_pearson\t{}\nlength_kendall\t{}\n",
            self.n,
            self.mean,
            self.std,
            opt(self.length_pearson),
            opt(self.length_kendall)
        )
    }
}

/// Orders scores by value, descending, with ids breaking ties.
pub fn descending(scores: &[MMemScore]) -> Vec<&MMemScore> {
    let mut v: Vec<&MMemScore> = scores.iter().collect();
    v.sort_by(|a, b| match b.value.total_cmp(&a.value) {
        Ordering::Equal => a.prompt_id.cmp(&b.prompt_id),
        o => o,
    });
    v
}
