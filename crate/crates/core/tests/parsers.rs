mod common;

use std::io::BufReader;

use memprobe::names::{parse_entity_export, PersonName};
use memprobe::prompts::{load_prompt_set, words_of, Category, PromptTemplate};
use memprobe::Error;

use common::{bio_cases, check_bio_case, table2_tokenizations};

#[test]
fn bio_corpus_cases() {
    let cases = bio_cases();
    assert_eq!(cases.len(), 15);
    for (label, text, expect) in &cases {
        if let Err(e) = check_bio_case(text, expect) {
            panic!("{label}: {e}");
        }
    }
}

#[test]
fn bundled_training_corpus() {
    let f = std::fs::File::open(common::fixture("tiny/train.bio")).unwrap();
    let corpus = memprobe::names::parse_bio_corpus(BufReader::new(f)).unwrap();
    assert_eq!(corpus.len(), 48);
    assert!(corpus.iter().all(|n| n.word_count() >= 2));
}

#[test]
fn entity_export_normalizes_and_dedups() {
    let text = "  Ada   Lovelace \nAda Lovelace\nPlato\n\nada lovelace\r\n";
    let c = parse_entity_export(text.as_bytes()).unwrap();
    let got: Vec<&str> = c.iter().map(PersonName::as_str).collect();
    assert_eq!(got, ["Ada Lovelace", "ada lovelace"]);
}

#[test]
fn entity_export_reports_invalid_utf8_offset() {
    let bytes = b"Ada Lovelace\nGrace \xff Hopper\n";
    match parse_entity_export(&bytes[..]) {
        Err(Error::InvalidUtf8 { offset }) => assert_eq!(offset, 19),
        other => panic!("{other:?}"),
    }
}

#[test]
fn prompt_loader_rejects_mask_counts() {
    for text in ["p1\tdeclarative\tNo placeholder here.", "p1\tdeclarative\tMASK met MASK."] {
        match load_prompt_set(text.as_bytes()) {
            Err(Error::Prompt { id, .. }) => assert_eq!(id, "p1"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
    assert!(PromptTemplate::new("x", Category::Imperative, "Say hi to MASK.").is_ok());
}

#[test]
fn prompt_loader_errors() {
    assert!(matches!(
        load_prompt_set("a\tdeclarative\tHi MASK.\na\tdeclarative\tBye MASK.".as_bytes()),
        Err(Error::DuplicatePromptId(id)) if id == "a"
    ));
    assert!(matches!(
        load_prompt_set("# header\na\tpoetic\tHi MASK.".as_bytes()),
        Err(Error::Parse { line: 2, .. })
    ));
    assert!(matches!(load_prompt_set("a declarative Hi MASK.".as_bytes()), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(
        load_prompt_set("empty-pt\tdeclarative\tMASK".as_bytes()),
        Err(Error::Prompt { .. })
    ));
}

#[test]
fn bundled_prompt_sets_load() {
    let open = |p: &str| BufReader::new(std::fs::File::open(common::fixture(p)).unwrap());
    let full = load_prompt_set(open("prompts/prompt_set_400.tsv")).unwrap();
    assert_eq!(full.len(), 400);
    for cat in [Category::Declarative, Category::Exclamatory, Category::Imperative, Category::Interrogative] {
        assert_eq!(full.iter().filter(|p| p.category() == cat).count(), 100);
    }
    assert_eq!(load_prompt_set(open("tiny/prompts.tsv")).unwrap().len(), 20);
    assert_eq!(load_prompt_set(open("prompts/hand_written.tsv")).unwrap().len(), 5);
}

#[test]
fn table2_prompt_tokenizations() {
    for (text, words, mask) in table2_tokenizations() {
        let w = words_of(&PromptTemplate::new("t", Category::Declarative, text).unwrap());
        assert_eq!(w.words(), words.as_slice(), "{text}");
        assert_eq!(w.mask_index(), mask, "{text}");
        assert_eq!(w.render(), text);
    }
}

#[test]
fn removal_keeps_render_consistent() {
    let p = PromptTemplate::new("q", Category::Interrogative, "Did MASK give you any advice on starting something new?").unwrap();
    let mut w = words_of(&p);
    // reduce to the shape "MASK you something ?"
    for word in ["Did", "give", "any", "advice", "on", "starting", "new"] {
        let i = w.words().iter().position(|x| x == word).unwrap();
        w = w.without(i).unwrap();
    }
    assert_eq!(w.display(), "MASK you something ?");
    assert_eq!(w.render(), "MASK you something?");
    assert_eq!(w.mask_index(), 0);
}
