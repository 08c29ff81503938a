//! Baselines, dev-selected best/worst prompts and the five ensembles on the
//! bundled fixture, scored with the stub backend.

use std::fs::File;
use std::io::BufReader;

use memprobe::gateway::{score_all, ScoreOptions, StubBackend};
use memprobe::memorization::{
    baseline_mix_pt, ensemble, prompt_scores, select_best_worst, single_prompt, EnsembleMethod, Strategy,
};
use memprobe::names::{build_pairwise, parse_bio_corpus, parse_entity_export, PersonName, Split};
use memprobe::prompts::{load_prompt_set, EMPTY_PROMPT_ID};

fn main() -> memprobe::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let open = |p: &str| -> memprobe::Result<BufReader<File>> { Ok(BufReader::new(File::open(format!("{dir}/{p}"))?)) };
    let train = parse_bio_corpus(open("tiny/train.bio")?)?;
    let world = parse_entity_export(open("tiny/world.txt")?)?;
    let dataset = build_pairwise(&train, &world, 2024)?;
    let prompts = load_prompt_set(open("tiny/prompts.tsv")?)?;
    let hand = load_prompt_set(open("prompts/hand_written.tsv")?)?;

    let backend = StubBackend::new(11).with_shift(1.0, dataset.in_train().map(PersonName::as_str));
    let all: Vec<_> = prompts.iter().chain(&hand).cloned().collect();
    let store = score_all(&dataset, &all, &backend, &ScoreOptions::default())?;

    let ids: Vec<&str> = prompts.iter().map(|p| p.id()).collect();
    let hand_ids: Vec<&str> = hand.iter().map(|p| p.id()).collect();
    let dev = prompt_scores(&store, &dataset, &ids, Split::Dev)?;
    let (best, worst) = select_best_worst(&dev).expect("non-empty prompt set");

    let mut rows = vec![
        single_prompt(&store, &dataset, Strategy::EmptyPT, EMPTY_PROMPT_ID)?,
        single_prompt(&store, &dataset, Strategy::OnePT, hand_ids[0])?,
        baseline_mix_pt(&store, &dataset, &hand_ids, 2024)?,
        single_prompt(&store, &dataset, Strategy::BPT, &best)?,
        single_prompt(&store, &dataset, Strategy::WPT, &worst)?,
    ];
    for method in EnsembleMethod::ALL {
        rows.push(ensemble(&store, &dataset, &ids, method, None)?);
    }
    println!("{:<4} {:<8} {:>7} {:>7}  detail", "grp", "strategy", "dev", "test");
    for r in rows {
        println!(
            "{:<4} {:<8} {:>7.2} {:>7.2}  {}",
            r.strategy.group(),
            r.strategy.label(),
            r.dev.value,
            r.test.value,
            r.detail
        );
    }
    Ok(())
}
