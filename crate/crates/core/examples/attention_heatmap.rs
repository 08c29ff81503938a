//! Per-slot attention of a prompt completed with In-train and Out-train
//! names, averaged per group.

use memprobe::attention::{heatmap_tsv, slot_vectors, summarize_group, Group, Side};
use memprobe::gateway::{RetryPolicy, StubBackend};
use memprobe::names::PersonName;

fn main() -> memprobe::Result<()> {
    let inn: Vec<PersonName> = ["Ada Lovelace", "Charles Babbage"].iter().filter_map(|n| PersonName::parse(n)).collect();
    let out: Vec<PersonName> = ["Mary Somerville", "John Herschel"].iter().filter_map(|n| PersonName::parse(n)).collect();
    let backend = StubBackend::new(9).with_shift(1.0, inn.iter().map(PersonName::as_str));
    let template = "Oh, MASK, what a lovely evening!";
    let retry = RetryPolicy::default();

    let mut summaries = Vec::new();
    for (group, names) in [(Group::InTrain, &inn), (Group::OutTrain, &out)] {
        let refs: Vec<&PersonName> = names.iter().collect();
        // full tensors here; the reduction commutes with a server-side mean
        let vectors = slot_vectors(&backend, template, &refs, Side::Query, false, &retry)?;
        summaries.push(summarize_group("p1", group, &vectors)?);
    }
    print!("{}", heatmap_tsv(&summaries));
    Ok(())
}
