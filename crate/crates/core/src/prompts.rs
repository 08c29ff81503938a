//! Prompt templates: loading, word-level tokenization, completion with a
//! name, and the per-prompt properties used for grouping.
//!
//! A template holds the placeholder `MASK` exactly once. Clitics attached to
//! the placeholder (`MASK's`, `MASK,`) survive completion because only the
//! `MASK` substring is replaced.

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::names::PersonName;

pub const MASK: &str = "MASK";

/// Id of the implicit template that is just the name on its own.
pub const EMPTY_PROMPT_ID: &str = "empty-pt";

const TERMINAL_MARKS: [char; 3] = ['.', '!', '?'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Declarative,
    Exclamatory,
    Imperative,
    Interrogative,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Declarative,
        Category::Exclamatory,
        Category::Imperative,
        Category::Interrogative,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Category::Declarative => "declarative",
            Category::Exclamatory => "exclamatory",
            Category::Imperative => "imperative",
            Category::Interrogative => "interrogative",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    id: String,
    category: Category,
    text: String,
}

impl PromptTemplate {
    /// Validates and whitespace-normalizes a template.
    pub fn new(id: impl Into<String>, category: Category, template: &str) -> Result<Self> {
        let id = id.into();
        let err = |message: String| Error::Prompt {
            id: id.clone(),
            message,
        };
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(err("id must be non-empty and contain no whitespace".into()));
        }
        let text = normalize_ws(template);
        if text.is_empty() {
            return Err(err("template is empty".into()));
        }
        match text.matches(MASK).count() {
            1 => {}
            0 => return Err(err("template has no MASK placeholder".into())),
            n => return Err(err(format!("template has {n} MASK placeholders, expected 1"))),
        }
        Ok(PromptTemplate { id, category, text })
    }

    /// The bare `MASK` template used for the no-prompt baseline.
    pub fn empty() -> Self {
        PromptTemplate {
            id: EMPTY_PROMPT_ID.to_owned(),
            category: Category::Declarative,
            text: MASK.to_owned(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn category(&self) -> Category {
        self.category
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Reads `id<TAB>category<TAB>template` records. Lines starting with `#`
/// and blank lines are skipped.
pub fn load_prompt_set<R: BufRead>(reader: R) -> Result<Vec<PromptTemplate>> {
    let mut prompts = Vec::new();
    let mut ids = HashSet::new();
    let mut texts = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (Some(id), Some(category), Some(template)) = (fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::Parse {
                line: lineno,
                message: "expected id<TAB>category<TAB>template".into(),
            });
        };
        let id = id.trim();
        if id == EMPTY_PROMPT_ID {
            return Err(Error::Prompt {
                id: id.to_owned(),
                message: "id is reserved for the no-prompt baseline".into(),
            });
        }
        let category = category.trim().parse().map_err(|message| Error::Parse {
            line: lineno,
            message,
        })?;
        let prompt = PromptTemplate::new(id, category, template)?;
        if !ids.insert(prompt.id.clone()) {
            return Err(Error::DuplicatePromptId(prompt.id));
        }
        if !texts.insert(prompt.text.clone()) {
            log::warn!("prompt {} duplicates an earlier template: {:?}", prompt.id, prompt.text);
        }
        prompts.push(prompt);
    }
    Ok(prompts)
}

/// A template split into words, with the index of the word holding `MASK`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PromptWords {
    words: Vec<String>,
    mask_index: usize,
    /// The last word is a terminal mark split off the word before it.
    terminal_detached: bool,
}

impl PromptWords {
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn mask_index(&self) -> usize {
        self.mask_index
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Indices of every word except the one holding `MASK`.
    pub fn removable(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.words.len()).filter(move |&i| i != self.mask_index)
    }

    pub fn removable_count(&self) -> usize {
        self.words.len() - 1
    }

    /// The prompt with word `index` removed. `None` for the `MASK` word or
    /// an out-of-range index.
    pub fn without(&self, index: usize) -> Option<PromptWords> {
        if index == self.mask_index || index >= self.words.len() {
            return None;
        }
        let mut words = self.words.clone();
        words.remove(index);
        let last = self.words.len() - 1;
        Some(PromptWords {
            words,
            mask_index: if index < self.mask_index {
                self.mask_index - 1
            } else {
                self.mask_index
            },
            terminal_detached: self.terminal_detached && index != last,
        })
    }

    /// Text form of the words, re-attaching a detached terminal mark.
    pub fn render(&self) -> String {
        let body_len = if self.terminal_detached && self.words.len() > 1 {
            self.words.len() - 1
        } else {
            self.words.len()
        };
        let mut out = self.words[..body_len].join(" ");
        if body_len < self.words.len() {
            out.push_str(&self.words[body_len]);
        }
        out
    }

    /// Words as displayed in heatmaps: space separated, terminal mark included.
    pub fn display(&self) -> String {
        self.words.join(" ")
    }
}

/// Splits a template into words.
///
/// Words are whitespace separated. A `.`, `!` or `?` ending the final word
/// is split off as a word of its own; all other punctuation stays attached.
pub fn words_of(template: &PromptTemplate) -> PromptWords {
    words_of_text(template.text())
}

pub(crate) fn words_of_text(text: &str) -> PromptWords {
    let mut words: Vec<String> = text.split_whitespace().map(str::to_owned).collect();
    let mut terminal_detached = false;
    if let Some(last) = words.last_mut() {
        if let Some(mark) = last.chars().last().filter(|c| TERMINAL_MARKS.contains(c)) {
            if last.chars().count() > 1 {
                last.pop();
                words.push(mark.to_string());
                terminal_detached = true;
            }
        }
    }
    let mask_index = words
        .iter()
        .position(|w| w.contains(MASK))
        .expect("validated templates contain MASK");
    PromptWords {
        words,
        mask_index,
        terminal_detached,
    }
}

/// A template with the name substituted in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletedSentence {
    pub text: String,
    /// Half-open interval of the name, in characters (Unicode scalar values).
    pub name_span: (usize, usize),
}

impl CompletedSentence {
    pub fn name(&self) -> String {
        let (start, end) = self.name_span;
        self.text.chars().skip(start).take(end - start).collect()
    }
}

pub fn complete(template: &PromptTemplate, name: &PersonName) -> CompletedSentence {
    complete_text(template.text(), name)
}

/// Completes any text holding a single `MASK`, such as a rendered
/// [`PromptWords`].
pub fn complete_text(text: &str, name: &PersonName) -> CompletedSentence {
    let byte_pos = text.find(MASK).expect("template contains MASK");
    let start = text[..byte_pos].chars().count();
    let end = start + name.as_str().chars().count();
    let mut out = String::with_capacity(text.len() + name.as_str().len());
    out.push_str(&text[..byte_pos]);
    out.push_str(name.as_str());
    out.push_str(&text[byte_pos + MASK.len()..]);
    CompletedSentence {
        text: out,
        name_span: (start, end),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptProperties {
    pub category: Category,
    pub word_length: usize,
    /// 1-based position of the word holding `MASK`.
    pub mask_position: usize,
}

pub fn properties(template: &PromptTemplate) -> PromptProperties {
    let words = words_of(template);
    PromptProperties {
        category: template.category(),
        word_length: words.len(),
        mask_position: words.mask_index() + 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(text: &str) -> PromptTemplate {
        PromptTemplate::new("p", Category::Declarative, text).unwrap()
    }

    fn name(s: &str) -> PersonName {
        PersonName::parse(s).unwrap()
    }

    #[test]
    fn load_valid_and_invalid() {
        let ok = load_prompt_set("# comment\np1\tinterrogative\tWhat project is MASK working on?\n".as_bytes())
            .unwrap();
        assert_eq!(ok.len(), 1);
        assert_eq!(ok[0].category(), Category::Interrogative);

        let none = load_prompt_set("p2\tdeclarative\tHello world.\n".as_bytes());
        assert!(matches!(none, Err(Error::Prompt { ref id, .. }) if id == "p2"));
        let two = load_prompt_set("p3\tdeclarative\tMASK met MASK.\n".as_bytes());
        assert!(matches!(two, Err(Error::Prompt { ref id, .. }) if id == "p3"));
    }

    #[test]
    fn load_rejects_duplicate_ids_and_reserved_id() {
        let dup = "a\tdeclarative\tHi MASK.\na\tdeclarative\tBye MASK.\n";
        assert!(matches!(load_prompt_set(dup.as_bytes()), Err(Error::DuplicatePromptId(_))));
        let reserved = "empty-pt\tdeclarative\tHi MASK.\n";
        assert!(load_prompt_set(reserved.as_bytes()).is_err());
        let bad_cat = "a\tpoetic\tHi MASK.\n";
        assert!(matches!(load_prompt_set(bad_cat.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicate_templates_are_allowed() {
        let dup = "a\tdeclarative\tHi MASK.\nb\tdeclarative\tHi  MASK.\n";
        assert_eq!(load_prompt_set(dup.as_bytes()).unwrap().len(), 2);
    }

    #[test]
    fn words_detach_terminal_only() {
        let w = words_of(&t("Bravo, MASK, what an impressive performance!"));
        assert_eq!(
            w.words(),
            ["Bravo,", "MASK,", "what", "an", "impressive", "performance", "!"]
        );
        assert_eq!(w.mask_index(), 1);

        let w = words_of(&t("MASK"));
        assert_eq!((w.words().len(), w.mask_index()), (1, 0));

        let w = words_of(&t("Did MASK give you any advice on starting something new?"));
        assert_eq!((w.len(), w.mask_index()), (11, 1));
    }

    #[test]
    fn words_standalone_mark_not_split() {
        let w = words_of(&t("MASK you something ?"));
        assert_eq!(w.words(), ["MASK", "you", "something", "?"]);
        assert_eq!(w.render(), "MASK you something ?");
    }

    #[test]
    fn removal_tracks_mask_and_terminal() {
        let w = words_of(&t("Are you going to MASK's art gallery opening tonight?"));
        let w2 = w.without(0).unwrap();
        assert_eq!(w2.mask_index(), 3);
        assert_eq!(w2.render(), "you going to MASK's art gallery opening tonight?");
        assert!(w.without(w.mask_index()).is_none());
        let no_mark = w.without(w.len() - 1).unwrap();
        assert_eq!(no_mark.render(), "Are you going to MASK's art gallery opening tonight");
        let no_tonight = w.without(w.len() - 2).unwrap();
        assert_eq!(no_tonight.render(), "Are you going to MASK's art gallery opening?");
        assert_eq!(no_tonight.display(), "Are you going to MASK's art gallery opening ?");
    }

    #[test]
    fn complete_offsets() {
        let c = complete(&t("My name is MASK."), &name("Ada Lovelace"));
        assert_eq!(c.text, "My name is Ada Lovelace.");
        assert_eq!(c.name_span, (11, 23));

        let c = complete(
            &t("Are you going to MASK's art gallery opening tonight?"),
            &name("Ada Lovelace"),
        );
        assert_eq!(c.text, "Are you going to Ada Lovelace's art gallery opening tonight?");

        let c = complete(&PromptTemplate::empty(), &name("Ada Lovelace"));
        assert_eq!(c.text, "Ada Lovelace");
        assert_eq!(c.name_span, (0, 12));
    }

    #[test]
    fn complete_counts_characters_not_bytes() {
        let c = complete(&t("Ça va, MASK?"), &name("Zoë Ångström"));
        assert_eq!(c.name_span, (7, 19));
        assert_eq!(c.name(), "Zoë Ångström");
    }

    #[test]
    fn properties_from_words() {
        let p = properties(&t("Bravo, MASK, what an impressive performance!"));
        assert_eq!((p.word_length, p.mask_position), (7, 2));
        let p = properties(&t("MASK"));
        assert_eq!((p.word_length, p.mask_position), (1, 1));
        let p = properties(&t("Did MASK give you any advice on starting something new?"));
        assert_eq!((p.word_length, p.mask_position), (11, 2));
    }
}
