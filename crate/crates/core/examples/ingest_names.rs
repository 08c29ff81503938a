//! Parse a BIO training corpus and an entity export, then split the names
//! into the pairwise In-train/Out-train dataset.
//!
//!     cargo run --example ingest_names -- [train.bio] [world.txt]

use std::fs::File;
use std::io::BufReader;

use memprobe::names::{build_pairwise, intersection_report, parse_bio_corpus, parse_entity_export};

fn main() -> memprobe::Result<()> {
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/tiny");
    let mut args = std::env::args().skip(1);
    let train_path = args.next().unwrap_or(format!("{fixtures}/train.bio"));
    let world_path = args.next().unwrap_or(format!("{fixtures}/world.txt"));

    let train = parse_bio_corpus(BufReader::new(File::open(&train_path)?))?;
    let world = parse_entity_export(BufReader::new(File::open(&world_path)?))?;
    let overlap = intersection_report(&train, &world);
    println!("train names: {}", train.len());
    println!("world names: {}", world.len());
    println!("{overlap:?}");

    let dataset = build_pairwise(&train, &world, 7)?;
    println!("dev {} + {}, test {} + {}", dataset.in_dev.len(), dataset.out_dev.len(), dataset.in_test.len(), dataset.out_test.len());
    for (a, b) in dataset.in_dev.iter().zip(&dataset.out_dev).take(5) {
        println!("  {:<24} {}", a.as_str(), b.as_str());
    }
    Ok(())
}
