//! Greedy word removal from a prompt, first with an additive toy scorer
//! whose optimum is known, then against the stub backend.

use memprobe::forge::{chain_heatmap_tsv, run_chain, select_modified, BackendScorer, Origin};
use memprobe::gateway::{RetryPolicy, StubBackend};
use memprobe::names::PersonName;
use memprobe::prompts::{words_of, Category, PromptTemplate, PromptWords};

fn weight(word: &str) -> f64 {
    match word {
        "Oh," => 4.0,
        "dear" => -3.0,
        "our" => 1.5,
        "friend" => -0.5,
        "!" => 2.0,
        _ => 0.0,
    }
}

fn main() -> memprobe::Result<()> {
    let template = PromptTemplate::new("toy", Category::Exclamatory, "Oh, dear MASK, our friend !")?;
    let start = words_of(&template);

    // score = 50 + sum of word weights
    let additive = |p: &PromptWords| -> memprobe::Result<f64> { Ok(50.0 + p.words().iter().map(|w| weight(w)).sum::<f64>()) };
    let best = run_chain(Origin::Best, &start, &additive).map_err(|f| f.error)?;
    let worst = run_chain(Origin::Worst, &start, &additive).map_err(|f| f.error)?;
    for chain in [&best, &worst] {
        let order: Vec<&str> = chain.steps.iter().map(|s| s.removed_word.as_str()).collect();
        println!("{} chain removes {:?}", chain.origin.label(), order);
    }
    let (hi, lo) = select_modified(&best, &worst).expect("chains have steps");
    println!("BM {:.2} {:?}", hi.dev_score, hi.prompt.render());
    println!("WM {:.2} {:?}", lo.dev_score, lo.prompt.render());

    let names: Vec<PersonName> = (0..30)
        .map(|i| PersonName::parse(&format!("Person{i} Sample")).expect("two words"))
        .collect();
    let (inn, out) = names.split_at(15);
    let backend = StubBackend::new(5).with_shift(1.0, inn.iter().map(PersonName::as_str));
    let scorer = BackendScorer::new(&backend, inn.iter().collect(), out.iter().collect(), RetryPolicy::default());
    let real = PromptTemplate::new("q", Category::Interrogative, "Did MASK enjoy the long trip to Rome?")?;
    let chain = run_chain(Origin::Best, &words_of(&real), &scorer).map_err(|f| f.error)?;
    print!("{}", chain_heatmap_tsv(&chain));
    Ok(())
}
