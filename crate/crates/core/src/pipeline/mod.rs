//! The staged command-line workflow.
//!
//! Stages run in order `build-dataset`, `score`, `mmem`, `strategies`,
//! `engineer`, `stats`, `attention`, `report`. Each reads the artifacts of
//! earlier stages from the output directory and writes its own. A stage
//! whose inputs are unchanged since its last run is skipped unless forced.
//!
//! Exit codes used by the binary:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | internal error |
//! | 2 | usage or manifest error |
//! | 3 | missing upstream artifact (run the named stage) |
//! | 4 | invalid input data |
//! | 5 | backend failure |
//! | 6 | I/O failure |

mod artifacts;
mod manifest;

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write as _};
use std::path::Path;

use rand::seq::index;

pub use artifacts::{read_tsv, Layout, Table};
pub use manifest::{env_overrides, parse_pairs, BackendSpec, RunManifest, ENV_OVERRIDES};

use crate::attention::{heatmap_tsv, slot_vectors, summarize_group, Group};
use crate::error::{Error, Result};
use crate::forge::{chain_heatmap_tsv, run_chain, select_modified, BackendScorer, ForgeChain, Origin};
use crate::gateway::{
    confidences_for, score_all, ConfidenceStore, HttpBackend, RetryPolicy, ScoreBackend, ScoreOptions, StubBackend,
};
use crate::memorization::{
    baseline_mix_pt, ensemble, m_mem, prompt_scores, select_best_worst, single_prompt, EnsembleMethod, MMem,
    MMemScore, Strategy, StrategyResult,
};
use crate::names::{
    build_pairwise_limited, intersection_report, parse_bio_corpus, parse_entity_export, PairwiseDataset, PersonName,
    Split,
};
use crate::prompts::{load_prompt_set, properties, words_of, PromptTemplate, EMPTY_PROMPT_ID};
use crate::stats::{cochran_q_store, group_by_property, rank_prompts, CorrelationMatrix};
use crate::util::{derive_seed, sha256_hex, write_atomic};
use artifacts::{read_artifact, write_tsv};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    BuildDataset,
    Score,
    Mmem,
    Strategies,
    Engineer,
    Stats,
    Attention,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::BuildDataset,
        Stage::Score,
        Stage::Mmem,
        Stage::Strategies,
        Stage::Engineer,
        Stage::Stats,
        Stage::Attention,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::BuildDataset => "build-dataset",
            Stage::Score => "score",
            Stage::Mmem => "mmem",
            Stage::Strategies => "strategies",
            Stage::Engineer => "engineer",
            Stage::Stats => "stats",
            Stage::Attention => "attention",
            Stage::Report => "report",
        }
    }
}

/// Process exit code for an error, per the table in the module docs.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Manifest(_) => 2,
        Error::MissingArtifact { .. } => 3,
        Error::Parse { .. }
        | Error::InvalidUtf8 { .. }
        | Error::EmptyCorpus
        | Error::TooFewInTrain(_)
        | Error::InsufficientNegatives { .. }
        | Error::Prompt { .. }
        | Error::DuplicatePromptId(_)
        | Error::Alignment(_)
        | Error::NoNameTokens { .. }
        | Error::Schema(_)
        | Error::InvalidInput(_)
        | Error::MissingCells { .. }
        | Error::Degenerate(_) => 4,
        Error::Backend(_) | Error::Aborted { .. } => 5,
        Error::Io(_) => 6,
        Error::Json(_) => 4,
    }
}

/// Builds the scoring backend for a run once the dataset is known.
pub type BackendFactory = dyn Fn(&RunManifest, &PairwiseDataset) -> Result<Box<dyn ScoreBackend>> + Send + Sync;

/// The stub gets a logit shift on the dataset's In-train names; URLs get an
/// HTTP client.
pub fn default_backend(m: &RunManifest, dataset: &PairwiseDataset) -> Result<Box<dyn ScoreBackend>> {
    match &m.backend {
        BackendSpec::Stub { seed } => Ok(Box::new(
            StubBackend::new(*seed).with_shift(m.stub_delta, dataset.in_train().map(PersonName::as_str)),
        )),
        BackendSpec::Http { url } => {
            let b = HttpBackend::new(url)?;
            Ok(Box::new(match &m.model_id {
                Some(id) => b.with_model(id.clone()),
                None => b,
            }))
        }
    }
}

/// What a stage did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

pub struct Pipeline {
    manifest: RunManifest,
    layout: Layout,
    force: bool,
    backend: Box<BackendFactory>,
}

fn file_digest(path: &Path, stage: &'static str) -> Result<String> {
    match fs::read(path) {
        Ok(b) => Ok(sha256_hex(&b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            stage,
        }),
        Err(e) => Err(e.into()),
    }
}

fn input_file(path: &Path, key: &str) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Manifest(format!("{key} {}: {e}", path.display())))
}

fn prompt_file_text(prompts: &[PromptTemplate]) -> String {
    prompts
        .iter()
        .map(|p| format!("{}\t{}\t{}\n", p.id(), p.category(), p.text()))
        .collect()
}

fn mmem_cols(m: &MMem) -> String {
    format!("{}\t{}", m.value, m.tie_mass)
}

impl Pipeline {
    pub fn new(manifest: RunManifest) -> Self {
        let layout = Layout::new(&manifest.output_dir);
        Pipeline {
            manifest,
            layout,
            force: false,
            backend: Box::new(default_backend),
        }
    }

    /// Rerun stages even when their inputs are unchanged.
    pub fn force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    pub fn with_backend(mut self, factory: Box<BackendFactory>) -> Self {
        self.backend = factory;
        self
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn run(&self, stage: Stage) -> Result<Outcome> {
        fs::create_dir_all(&self.layout.root)?;
        let key = self.stage_key(stage)?;
        let stamp = self.layout.stamp(stage.name());
        if !self.force && fs::read_to_string(&stamp).ok().as_deref() == Some(key.as_str()) {
            log::info!("{}: up to date", stage.name());
            self.log_line(stage, &key, "up-to-date")?;
            return Ok(Outcome::UpToDate);
        }
        log::info!("{}: running", stage.name());
        match stage {
            Stage::BuildDataset => self.build_dataset()?,
            Stage::Score => self.score()?,
            Stage::Mmem => self.mmem()?,
            Stage::Strategies => self.strategies()?,
            Stage::Engineer => self.engineer()?,
            Stage::Stats => self.stats()?,
            Stage::Attention => self.attention()?,
            Stage::Report => self.report()?,
        }
        fs::create_dir_all(stamp.parent().expect("stamp has a parent"))?;
        write_atomic(&stamp, key.as_bytes())?;
        self.log_line(stage, &key, "ok")?;
        Ok(Outcome::Ran)
    }

    pub fn run_all(&self) -> Result<()> {
        for stage in Stage::ALL {
            self.run(stage)?;
        }
        Ok(())
    }

    fn log_line(&self, stage: Stage, key: &str, status: &str) -> Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.layout.run_log())?;
        writeln!(f, "stage={} status={status} inputs={key}", stage.name())?;
        Ok(())
    }

    /// Checksum over the settings and every file the stage reads.
    fn stage_key(&self, stage: Stage) -> Result<String> {
        let l = &self.layout;
        let mut parts = vec![stage.name().to_owned(), self.manifest.fingerprint()];
        let mut add = |path: &Path, from: &'static str| -> Result<()> {
            parts.push(file_digest(path, from)?);
            Ok(())
        };
        let store = |p: &str| l.store_dir().join(p);
        match stage {
            Stage::BuildDataset => {
                for (key, path) in self.manifest.input_files().into_iter().take(2) {
                    parts.push(sha256_hex(&fs::read(path).map_err(|e| Error::Manifest(format!("{key}: {e}")))?));
                }
            }
            Stage::Score => {
                add(&l.dataset(), "build-dataset")?;
                for (key, path) in self.manifest.input_files().into_iter().skip(2) {
                    parts.push(sha256_hex(&fs::read(path).map_err(|e| Error::Manifest(format!("{key}: {e}")))?));
                }
            }
            Stage::Mmem | Stage::Strategies | Stage::Engineer | Stage::Stats | Stage::Attention => {
                add(&l.dataset(), "build-dataset")?;
                add(&store("confidences.tsv"), "score")?;
                if stage != Stage::Mmem {
                    add(&l.prompt_scores(), "mmem")?;
                }
                if stage == Stage::Stats {
                    for run in &self.manifest.compare_runs {
                        add(&Layout::new(run).prompt_scores(), "mmem")?;
                    }
                }
            }
            Stage::Report => {
                add(&l.prompt_scores(), "mmem")?;
                add(&l.strategies(), "strategies")?;
                add(&l.selected(), "engineer")?;
                add(&l.summary(), "stats")?;
                for run in &self.manifest.compare_runs {
                    let other = Layout::new(run);
                    add(&other.prompt_scores(), "mmem")?;
                    add(&other.strategies(), "strategies")?;
                    add(&other.selected(), "engineer")?;
                }
            }
        }
        Ok(sha256_hex(parts.join("\n").as_bytes()))
    }

    fn seed(&self) -> u64 {
        self.manifest.seed
    }

    fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.manifest.retries,
            ..RetryPolicy::default()
        }
    }

    pub fn load_dataset(&self) -> Result<PairwiseDataset> {
        PairwiseDataset::parse_manifest(&read_artifact(&self.layout.dataset(), "build-dataset")?)
    }

    /// The complete confidence store written by `score`.
    pub fn load_store(&self) -> Result<ConfidenceStore> {
        let dir = self.layout.store_dir();
        if !dir.join("meta.json").exists() {
            return Err(Error::MissingArtifact {
                path: dir.join("meta.json"),
                stage: "score",
            });
        }
        let store = ConfidenceStore::load(&dir)?;
        if !store.is_complete() {
            return Err(Error::MissingCells {
                count: store.missing_count(),
                first: "run `score` with resume to finish".into(),
            });
        }
        Ok(store)
    }

    /// `(prompt set, hand-written prompts)` as scored.
    pub fn load_scored_prompts(&self) -> Result<(Vec<PromptTemplate>, Vec<PromptTemplate>)> {
        let set = read_artifact(&self.layout.scored_prompt_set(), "score")?;
        let hand = read_artifact(&self.layout.scored_hand_prompts(), "score")?;
        Ok((load_prompt_set(set.as_bytes())?, load_prompt_set(hand.as_bytes())?))
    }

    fn load_inputs(&self) -> Result<(Vec<PromptTemplate>, Vec<PromptTemplate>)> {
        let set = load_prompt_set(input_file(&self.manifest.prompt_set, "prompt_set")?)?;
        let hand = load_prompt_set(input_file(&self.manifest.hand_prompts, "hand_prompts")?)?;
        if hand.is_empty() {
            return Err(Error::InvalidInput("hand_prompts is empty".into()));
        }
        if set.is_empty() {
            return Err(Error::InvalidInput("prompt_set is empty".into()));
        }
        for p in &hand {
            if set.iter().any(|q| q.id() == p.id()) {
                return Err(Error::DuplicatePromptId(p.id().to_owned()));
            }
        }
        Ok((set, hand))
    }

    fn build_dataset(&self) -> Result<()> {
        let train = parse_bio_corpus(input_file(&self.manifest.train_corpus, "train_corpus")?)?;
        let world = parse_entity_export(input_file(&self.manifest.entity_export, "entity_export")?)?;
        let report = intersection_report(&train, &world);
        let dataset = build_pairwise_limited(&train, &world, self.seed(), self.manifest.max_in)?;
        fs::create_dir_all(self.layout.dataset().parent().expect("nested path"))?;
        write_atomic(&self.layout.dataset(), dataset.to_manifest_string().as_bytes())?;
        let body = format!(
            "statistic\tvalue\ntrain_names\t{}\nworld_names\t{}\nintersection_exact\t{}\nintersection_case_insensitive\t{}\nn_dev\t{}\nn_test\t{}\n",
            report.train,
            report.world,
            report.exact,
            report.case_insensitive,
            dataset.n_dev(),
            dataset.n_test()
        );
        write_tsv(&self.layout.intersection(), self.seed(), &body)?;
        log::info!(
            "{} In-train names ({} dev / {} test per side)",
            dataset.n_total(),
            dataset.n_dev(),
            dataset.n_test()
        );
        Ok(())
    }

    fn score(&self) -> Result<()> {
        let dataset = self.load_dataset()?;
        let (set, hand) = self.load_inputs()?;
        let backend = (self.backend)(&self.manifest, &dataset)?;
        let prompts: Vec<PromptTemplate> = set.iter().chain(&hand).cloned().collect();
        let opts = ScoreOptions {
            batch_size: self.manifest.batch_size,
            concurrency: self.manifest.concurrency,
            resume: self.manifest.resume,
            checkpoint: Some(self.layout.checkpoint()),
            checkpoint_every: self.manifest.checkpoint_every,
            retry: self.retry(),
            created_at: self.manifest.created_at.clone(),
            seed: Some(self.seed()),
        };
        fs::create_dir_all(self.layout.store_dir())?;
        let store = score_all(&dataset, &prompts, backend.as_ref(), &opts)?;
        store.save(&self.layout.store_dir())?;
        write_tsv(&self.layout.scored_prompt_set(), self.seed(), &prompt_file_text(&set))?;
        write_tsv(&self.layout.scored_hand_prompts(), self.seed(), &prompt_file_text(&hand))?;
        // the finished store supersedes the progress log
        fs::remove_file(self.layout.checkpoint())?;
        Ok(())
    }

    fn mmem(&self) -> Result<()> {
        let dataset = self.load_dataset()?;
        let store = self.load_store()?;
        let (set, _) = self.load_scored_prompts()?;
        let ids: Vec<&str> = set.iter().map(PromptTemplate::id).collect();
        let dev = prompt_scores(&store, &dataset, &ids, Split::Dev)?;
        let test = prompt_scores(&store, &dataset, &ids, Split::Test)?;
        let (dev_ranks, test_ranks) = (rank_prompts(&dev), rank_prompts(&test));
        let mut body = String::from(
            "prompt_id\tcategory\tword_length\tmask_position\tdev\tdev_tie_mass\tdev_rank\tdev_neg_rank\ttest\ttest_tie_mass\ttest_rank\ttest_neg_rank\ttemplate\n",
        );
        for (i, p) in set.iter().enumerate() {
            let props = properties(p);
            let _ = writeln!(
                body,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                p.id(),
                p.category(),
                props.word_length,
                props.mask_position,
                dev[i].value,
                dev[i].tie_mass,
                dev_ranks[i].rank,
                dev_ranks[i].neg_rank,
                test[i].value,
                test[i].tie_mass,
                test_ranks[i].rank,
                test_ranks[i].neg_rank,
                p.text()
            );
        }
        write_tsv(&self.layout.prompt_scores(), self.seed(), &body)
    }

    /// Per-prompt `(dev, test)` scores written by `mmem`.
    pub fn load_prompt_scores(&self) -> Result<(Vec<MMemScore>, Vec<MMemScore>)> {
        read_prompt_scores(&self.layout)
    }

    fn best_worst(&self) -> Result<(String, String)> {
        let (dev, _) = self.load_prompt_scores()?;
        select_best_worst(&dev).ok_or_else(|| Error::InvalidInput("no prompt scores".into()))
    }

    fn strategies(&self) -> Result<()> {
        let dataset = self.load_dataset()?;
        let store = self.load_store()?;
        let (set, hand) = self.load_scored_prompts()?;
        let (best, worst) = self.best_worst()?;
        let ids: Vec<&str> = set.iter().map(PromptTemplate::id).collect();
        let hand_ids: Vec<&str> = hand.iter().map(PromptTemplate::id).collect();

        let mut results = vec![
            single_prompt(&store, &dataset, Strategy::EmptyPT, EMPTY_PROMPT_ID)?,
            single_prompt(&store, &dataset, Strategy::OnePT, hand_ids[0])?,
            baseline_mix_pt(&store, &dataset, &hand_ids, self.seed())?,
            single_prompt(&store, &dataset, Strategy::BPT, &best)?,
            single_prompt(&store, &dataset, Strategy::WPT, &worst)?,
        ];
        for method in EnsembleMethod::ALL {
            results.push(ensemble(&store, &dataset, &ids, method, None)?);
        }
        write_tsv(&self.layout.strategies(), self.seed(), &strategy_table(&results))
    }

    fn engineer(&self) -> Result<()> {
        let dataset = self.load_dataset()?;
        let (set, _) = self.load_scored_prompts()?;
        let (best, worst) = self.best_worst()?;
        let find = |id: &str| {
            set.iter()
                .find(|p| p.id() == id)
                .ok_or_else(|| Error::InvalidInput(format!("prompt {id} not in the scored set")))
        };
        let backend = (self.backend)(&self.manifest, &dataset)?;
        let retry = self.retry();
        let subsample = |names: &[PersonName], n: usize, stream: &str| -> Vec<usize> {
            if n >= names.len() {
                return (0..names.len()).collect();
            }
            let mut rng = crate::util::seeded_rng(derive_seed(self.seed(), stream));
            let mut picked = index::sample(&mut rng, names.len(), n).into_vec();
            picked.sort_unstable();
            picked
        };
        let in_idx = subsample(&dataset.in_dev, self.manifest.forge_in, "forge-in");
        let out_idx = subsample(&dataset.out_dev, self.manifest.forge_out, "forge-out");
        let scorer = BackendScorer::new(
            backend.as_ref(),
            in_idx.iter().map(|&i| &dataset.in_dev[i]).collect(),
            out_idx.iter().map(|&i| &dataset.out_dev[i]).collect(),
            retry.clone(),
        );

        let mut chains: Vec<ForgeChain> = Vec::new();
        for (origin, id) in [(Origin::Best, &best), (Origin::Worst, &worst)] {
            let words = words_of(find(id)?);
            if words.removable_count() < 2 {
                log::warn!("prompt {id} has fewer than 2 removable words; no {} chain", origin.label());
                write_tsv(&self.layout.chain(origin.label()), self.seed(), "")?;
                continue;
            }
            match run_chain(origin, &words, &scorer) {
                Ok(chain) => {
                    write_tsv(&self.layout.chain(origin.label()), self.seed(), &chain_heatmap_tsv(&chain))?;
                    chains.push(chain);
                }
                Err(failure) => {
                    write_tsv(
                        &self.layout.chain(origin.label()),
                        self.seed(),
                        &chain_heatmap_tsv(&failure.partial),
                    )?;
                    return Err(failure.error);
                }
            }
        }

        let empty = |origin| ForgeChain {
            origin,
            initial: crate::forge::ForgeRow {
                prompt: words_of(&PromptTemplate::empty()),
                dev_score: f64::NAN,
                importances: Vec::new(),
            },
            steps: Vec::new(),
        };
        let best_chain = chains.iter().find(|c| c.origin == Origin::Best).cloned().unwrap_or_else(|| empty(Origin::Best));
        let worst_chain = chains.iter().find(|c| c.origin == Origin::Worst).cloned().unwrap_or_else(|| empty(Origin::Worst));
        let mut body = String::from(
            "strategy\torigin\tstep\tsubsample_dev\tdev\tdev_tie_mass\ttest\ttest_tie_mass\tprompt\n",
        );
        if let Some((bm, wm)) = select_modified(&best_chain, &worst_chain) {
            for (strategy, pick) in [(Strategy::BMPT, bm), (Strategy::WMPT, wm)] {
                let text = pick.prompt.render();
                let split_score = |split| -> Result<MMem> {
                    let (inn, out) = dataset.split(split);
                    let c_in = self.confidences(backend.as_ref(), &text, inn, &retry)?;
                    let c_out = self.confidences(backend.as_ref(), &text, out, &retry)?;
                    m_mem(&c_in, &c_out)
                };
                let (dev, test) = (split_score(Split::Dev)?, split_score(Split::Test)?);
                let _ = writeln!(
                    body,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    strategy.label(),
                    pick.origin.label(),
                    pick.step,
                    pick.dev_score,
                    mmem_cols(&dev),
                    mmem_cols(&test),
                    text
                );
            }
        }
        write_tsv(&self.layout.selected(), self.seed(), &body)
    }

    fn confidences(&self, backend: &dyn ScoreBackend, text: &str, names: &[PersonName], retry: &RetryPolicy) -> Result<Vec<f64>> {
        let refs: Vec<&PersonName> = names.iter().collect();
        let mut out = Vec::with_capacity(names.len());
        for chunk in refs.chunks(self.manifest.batch_size) {
            out.extend(confidences_for(backend, text, chunk, retry)?);
        }
        Ok(out)
    }

    fn stats(&self) -> Result<()> {
        let dataset = self.load_dataset()?;
        let store = self.load_store()?;
        let (set, _) = self.load_scored_prompts()?;
        let ids: Vec<&str> = set.iter().map(PromptTemplate::id).collect();
        let (dev, test) = self.load_prompt_scores()?;

        let mut q = String::from("split\tq_statistic\tdof\tp_value\tblocks\n");
        for split in Split::ALL {
            let r = cochran_q_store(&store, &dataset, &ids, split)?;
            let _ = writeln!(q, "{}\t{}\t{}\t{:e}\t{}", split.label(), r.q_statistic, r.dof, r.p_value, r.blocks_used);
        }
        write_tsv(&self.layout.cochran(), self.seed(), &q)?;

        let model = store.meta().model_id.clone();
        let mut series = vec![
            (format!("{model}:dev"), dev.iter().map(|s| s.value).collect::<Vec<_>>()),
            (format!("{model}:test"), test.iter().map(|s| s.value).collect()),
        ];
        for run in &self.manifest.compare_runs {
            let other = Layout::new(run);
            let (odev, otest) = read_prompt_scores(&other)?;
            let label = read_model_id(&other)?;
            series.push((format!("{label}:dev"), align(&dev, &odev, run)?));
            series.push((format!("{label}:test"), align(&test, &otest, run)?));
        }
        write_tsv(&self.layout.correlations(), self.seed(), &CorrelationMatrix::kendall(&series)?.to_tsv())?;

        let props: Vec<_> = set.iter().map(properties).collect();
        let mut groups = String::new();
        let mut summary = String::new();
        for (split, scores) in [(Split::Dev, &dev), (Split::Test, &test)] {
            let r = group_by_property(scores, &props)?;
            for (i, line) in r.groups_tsv().lines().enumerate() {
                if i == 0 && groups.is_empty() {
                    let _ = writeln!(groups, "split\t{line}");
                } else if i > 0 {
                    let _ = writeln!(groups, "{}\t{line}", split.label());
                }
            }
            let opt = |v: Option<f64>| v.map_or("NA".to_owned(), |v| v.to_string());
            if summary.is_empty() {
                summary.push_str("split\tn\tmean\tstd\tlength_pearson\tlength_kendall\n");
            }
            let _ = writeln!(
                summary,
                "{}\t{}\t{}\t{}\t{}\t{}",
                split.label(),
                r.n,
                r.mean,
                r.std,
                opt(r.length_pearson),
                opt(r.length_kendall)
            );
        }
        write_tsv(&self.layout.groups(), self.seed(), &groups)?;
        write_tsv(&self.layout.summary(), self.seed(), &summary)
    }

    fn attention(&self) -> Result<()> {
        let dataset = self.load_dataset()?;
        let (set, _) = self.load_scored_prompts()?;
        let (best, worst) = self.best_worst()?;
        let backend = (self.backend)(&self.manifest, &dataset)?;
        let retry = self.retry();
        let n = self.manifest.attention_names;
        let mut summaries = Vec::new();
        for id in [&best, &worst] {
            let template = set
                .iter()
                .find(|p| p.id() == id.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("prompt {id} not in the scored set")))?;
            for (group, names) in [(Group::InTrain, &dataset.in_dev), (Group::OutTrain, &dataset.out_dev)] {
                let refs: Vec<&PersonName> = names.iter().take(n).collect();
                let mut vectors = Vec::new();
                for chunk in refs.chunks(self.manifest.batch_size) {
                    vectors.extend(slot_vectors(
                        backend.as_ref(),
                        template.text(),
                        chunk,
                        self.manifest.attention_side,
                        self.manifest.attention_reduce,
                        &retry,
                    )?);
                }
                summaries.push(summarize_group(id, group, &vectors)?);
            }
        }
        write_tsv(&self.layout.attention(), self.seed(), &heatmap_tsv(&summaries))
    }

    fn report(&self) -> Result<()> {
        let mut runs = vec![self.layout.clone()];
        runs.extend(self.manifest.compare_runs.iter().map(Layout::new));

        let mut table2 = String::from("model\trole\tprompt_id\tdev_rank\tdev\ttest_rank\ttest\tprompt\n");
        let mut gaps = String::from("model\tdev_gap\ttest_gap_dev_selected\ttest_gap_oracle\n");
        let mut columns = Vec::new();
        for run in &runs {
            let model = read_model_id(run)?;
            let scores = read_tsv(&run.prompt_scores(), "mmem")?;
            let (dev, test) = read_prompt_scores(run)?;
            let (best, worst) = select_best_worst(&dev).ok_or_else(|| Error::InvalidInput("no prompt scores".into()))?;
            for (role, id) in [("best", &best), ("worst", &worst)] {
                let row = scores
                    .rows
                    .iter()
                    .find(|r| &r[0] == id)
                    .expect("selected prompt has a row");
                let (dev_rank, test_rank) = if role == "best" {
                    (scores.get(row, "dev_rank")?, scores.get(row, "test_rank")?)
                } else {
                    (scores.get(row, "dev_neg_rank")?, scores.get(row, "test_neg_rank")?)
                };
                let _ = writeln!(
                    table2,
                    "{model}\t{role}\t{id}\t{dev_rank}\t{:.2}\t{test_rank}\t{:.2}\t{}",
                    scores.get_f64(row, "dev")?,
                    scores.get_f64(row, "test")?,
                    scores.get(row, "template")?
                );
            }
            let value = |v: &[MMemScore], id: &str| v.iter().find(|s| s.prompt_id == id).map_or(f64::NAN, |s| s.value);
            let (test_best, test_worst) =
                select_best_worst(&test).ok_or_else(|| Error::InvalidInput("no prompt scores".into()))?;
            let _ = writeln!(
                gaps,
                "{model}\t{}\t{}\t{}",
                value(&dev, &best) - value(&dev, &worst),
                value(&test, &best) - value(&test, &worst),
                value(&test, &test_best) - value(&test, &test_worst)
            );

            let mut by_strategy = std::collections::HashMap::new();
            for table in [read_tsv(&run.strategies(), "strategies")?, read_tsv(&run.selected(), "engineer")?] {
                for row in &table.rows {
                    by_strategy.insert(
                        table.get(row, "strategy")?.to_owned(),
                        (table.get_f64(row, "dev")?, table.get_f64(row, "test")?),
                    );
                }
            }
            columns.push((model, by_strategy));
        }

        let mut table3 = String::from("group\tstrategy");
        for (model, _) in &columns {
            let _ = write!(table3, "\t{model} dev\t{model} test");
        }
        table3.push('\n');
        for s in Strategy::ALL {
            let _ = write!(table3, "{}\t{}", s.group(), s.label());
            for (_, by) in &columns {
                match by.get(s.label()) {
                    Some((d, t)) => {
                        let _ = write!(table3, "\t{d:.2}\t{t:.2}");
                    }
                    None => table3.push_str("\tNA\tNA"),
                }
            }
            table3.push('\n');
        }
        write_tsv(&self.layout.table2(), self.seed(), &table2)?;
        write_tsv(&self.layout.table3(), self.seed(), &table3)?;
        write_tsv(&self.layout.gaps(), self.seed(), &gaps)
    }

    /// Checks the manifest's inputs without contacting the backend or
    /// writing anything. Returns one line per check.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        let train = parse_bio_corpus(input_file(&self.manifest.train_corpus, "train_corpus")?)?;
        out.push(format!("train_corpus: {} names", train.len()));
        let world = parse_entity_export(input_file(&self.manifest.entity_export, "entity_export")?)?;
        out.push(format!("entity_export: {} names", world.len()));
        let r = intersection_report(&train, &world);
        out.push(format!(
            "intersection: {} exact, {} case-insensitive",
            r.exact, r.case_insensitive
        ));
        let dataset = build_pairwise_limited(&train, &world, self.seed(), self.manifest.max_in)?;
        out.push(format!(
            "dataset: {} In-train names, {} dev / {} test per side",
            dataset.n_total(),
            dataset.n_dev(),
            dataset.n_test()
        ));
        let (set, hand) = self.load_inputs()?;
        out.push(format!("prompt_set: {} prompts", set.len()));
        out.push(format!("hand_prompts: {} prompts", hand.len()));
        out.push(format!("backend: {}", self.manifest.backend));
        for run in &self.manifest.compare_runs {
            if !run.is_dir() {
                return Err(Error::Manifest(format!("compare run {} is not a directory", run.display())));
            }
        }
        Ok(out)
    }
}

fn strategy_table(results: &[StrategyResult]) -> String {
    let mut body = String::from("group\tstrategy\tdev\tdev_tie_mass\ttest\ttest_tie_mass\tdetail\n");
    for r in results {
        let _ = writeln!(
            body,
            "{}\t{}\t{}\t{}\t{}",
            r.strategy.group(),
            r.strategy.label(),
            mmem_cols(&r.dev),
            mmem_cols(&r.test),
            r.detail
        );
    }
    body
}

fn read_prompt_scores(layout: &Layout) -> Result<(Vec<MMemScore>, Vec<MMemScore>)> {
    let t = read_tsv(&layout.prompt_scores(), "mmem")?;
    let mut dev = Vec::new();
    let mut test = Vec::new();
    for row in &t.rows {
        let id = t.get(row, "prompt_id")?.to_owned();
        for (split, out) in [(Split::Dev, &mut dev), (Split::Test, &mut test)] {
            let l = split.label();
            out.push(MMemScore {
                prompt_id: id.clone(),
                split,
                value: t.get_f64(row, l)?,
                tie_mass: t.get_f64(row, &format!("{l}_tie_mass"))?,
            });
        }
    }
    Ok((dev, test))
}

fn read_model_id(layout: &Layout) -> Result<String> {
    let meta: crate::gateway::StoreMeta =
        serde_json::from_str(&read_artifact(&layout.store_dir().join("meta.json"), "score")?)?;
    Ok(meta.model_id)
}

/// `other`'s values in the prompt order of `base`.
fn align(base: &[MMemScore], other: &[MMemScore], run: &Path) -> Result<Vec<f64>> {
    base.iter()
        .map(|s| {
            other
                .iter()
                .find(|o| o.prompt_id == s.prompt_id)
                .map(|o| o.value)
                .ok_or_else(|| {
                    Error::InvalidInput(format!("run {} has no score for prompt {}", run.display(), s.prompt_id))
                })
        })
        .collect()
}
