//! Score a few completed sentences against the in-process stub backend and
//! show the per-token label probabilities behind each name confidence.

use memprobe::gateway::{
    confidence, confidences_for, RetryPolicy, ScoreBackend, ScoreItem, ScoreRequest, Span, StubBackend, TokenScores,
};
use memprobe::names::PersonName;
use memprobe::prompts::complete_text;

fn main() -> memprobe::Result<()> {
    let names: Vec<PersonName> = ["Ada Lovelace", "Alan Mathison Turing", "Grace Hopper"]
        .iter()
        .filter_map(|n| PersonName::parse(n))
        .collect();
    // Ada is treated as a training name: her latent logit is shifted by +2
    let backend = StubBackend::new(11).with_shift(2.0, ["Ada Lovelace"]);
    println!("{:?}", backend.meta()?);

    let template = "Yesterday MASK gave a talk.";
    let c = complete_text(template, &names[0]);
    let request = ScoreRequest::new(vec![ScoreItem {
        text: c.text.clone(),
        span: Span { start: c.name_span.0, end: c.name_span.1 },
    }]);
    let response = backend.score(&request)?;
    let scores = TokenScores::from_wire(&response.results[0])?;
    let b = scores.label_names.iter().position(|l| l == "B-PER").expect("label");
    let i = scores.label_names.iter().position(|l| l == "I-PER").expect("label");
    for (tok, row) in scores.tokens.iter().zip(&scores.probs) {
        println!("{:>10} {:?}  B-PER {:.4}  I-PER {:.4}", tok.text, tok.span, row[b], row[i]);
    }
    println!("confidence of {:?}: {:.4}", c.name(), confidence(&scores, c.name_span)?);

    let refs: Vec<&PersonName> = names.iter().collect();
    for template in ["MASK", template, "Have you met MASK?"] {
        let conf = confidences_for(&backend, template, &refs, &RetryPolicy::default())?;
        println!("{template:<28} {conf:.4?}");
    }
    Ok(())
}
