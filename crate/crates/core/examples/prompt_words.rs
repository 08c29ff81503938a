//! Load a prompt set, split templates into words and complete them with a
//! name.

use std::fs::File;
use std::io::BufReader;

use memprobe::names::PersonName;
use memprobe::prompts::{complete, load_prompt_set, properties, words_of};

fn main() -> memprobe::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/tiny/prompts.tsv").to_owned());
    let prompts = load_prompt_set(BufReader::new(File::open(path)?))?;
    let name = PersonName::parse("Ada Lovelace").expect("two words");

    for p in prompts.iter().take(8) {
        let words = words_of(p);
        let props = properties(p);
        let done = complete(p, &name);
        println!("{} [{}] {:?}", p.id(), p.category(), words.words());
        println!("    mask at {}, {} words, {:?}", props.mask_position, props.word_length, done.text);
        let first = words.removable().next();
        if let Some(shorter) = first.and_then(|i| words.without(i)) {
            println!("    minus first removable word: {}", shorter.render());
        }
    }
    Ok(())
}
