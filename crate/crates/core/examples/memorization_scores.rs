//! Pairwise memorization scores on a synthetic dataset where the stub
//! backend shifts In-train logits by `delta`. The expected score is
//! `100 * Phi(delta / sqrt(2))`.
//!
//!     cargo run --release --example memorization_scores -- 1.0

use memprobe::gateway::{score_all, ScoreOptions, StubBackend};
use memprobe::memorization::{m_mem_exact, m_mem_fast, prompt_scores, s_mem};
use memprobe::names::{PairwiseDataset, PersonName, SourceChecksums, Split};
use memprobe::prompts::{Category, PromptTemplate};

fn names(prefix: &str, n: usize) -> Vec<PersonName> {
    (0..n)
        .map(|i| PersonName::parse(&format!("{prefix}{i} Example")).expect("two words"))
        .collect()
}

fn main() -> memprobe::Result<()> {
    let delta: f64 = std::env::args().nth(1).map_or(1.0, |s| s.parse().expect("delta"));

    println!("s_mem(0.9, 0.4) = {}", s_mem(0.9, 0.4)?);
    println!("s_mem(0.5, 0.5) = {}", s_mem(0.5, 0.5)?);
    let (a, b) = ([0.9, 0.7, 0.7, 0.2], [0.7, 0.3, 0.1]);
    println!("fast {:?}", m_mem_fast(&a, &b)?);
    println!("exact {:?}", m_mem_exact(&a, &b)?);

    let dataset = PairwiseDataset {
        seed: 0,
        in_dev: names("Indev", 826),
        out_dev: names("Outdev", 826),
        in_test: names("Intest", 825),
        out_test: names("Outtest", 825),
        sources: SourceChecksums::default(),
    };
    let prompts = vec![
        PromptTemplate::new("p1", Category::Declarative, "The award went to MASK.")?,
        PromptTemplate::new("p2", Category::Interrogative, "Have you met MASK?")?,
        PromptTemplate::new("p3", Category::Imperative, "Say hello to MASK.")?,
    ];
    let backend = StubBackend::new(3).with_shift(delta, dataset.in_train().map(PersonName::as_str));
    let store = score_all(&dataset, &prompts, &backend, &ScoreOptions::default())?;

    let ids: Vec<&str> = store.prompt_ids().iter().map(String::as_str).collect();
    for split in [Split::Dev, Split::Test] {
        for s in prompt_scores(&store, &dataset, &ids, split)? {
            println!("{:>5} {:<6} {:.2}", split.label(), s.prompt_id, s.value);
        }
    }
    Ok(())
}
