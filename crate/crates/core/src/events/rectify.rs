use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RectifyMode {
    #[default]
    None,
    /// Clause-initial articles become "The".
    Article,
    /// Person mentions become "The person", then article mode.
    Pronoun,
}

const ARTICLES: [&str; 6] = ["a", "an", "the", "A", "An", "The"];

/// Longest first.
const PERSON_MENTIONS: [&str; 16] = [
    "the person",
    "The person",
    "a person",
    "A person",
    "a woman",
    "A woman",
    "a figure",
    "A figure",
    "someone",
    "Someone",
    "a man",
    "A man",
    "she",
    "She",
    "he",
    "He",
];

/// Splits into clauses at ". " boundaries, keeping the separators attached
/// to the preceding clause.
fn clauses(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, _) in text.match_indices(". ") {
        out.push(&text[start..i + 2]);
        start = i + 2;
    }
    out.push(&text[start..]);
    out
}

fn fix_articles(text: &str) -> String {
    clauses(text)
        .into_iter()
        .map(|clause| {
            let lead = clause.len() - clause.trim_start().len();
            let body = &clause[lead..];
            let end = body.find(|c: char| !c.is_alphabetic()).unwrap_or(body.len());
            if ARTICLES.contains(&&body[..end]) && end > 0 {
                format!("{}The{}", &clause[..lead], &body[end..])
            } else {
                clause.to_string()
            }
        })
        .collect()
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(|c| c.is_alphanumeric() || c == '\'')
}

fn replace_people(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 16);
    let mut i = 0;
    while i < text.len() {
        let before = text[..i].chars().next_back();
        let mut matched = None;
        if !is_word_char(before) {
            for m in PERSON_MENTIONS {
                if text[i..].starts_with(m) && !is_word_char(text[i + m.len()..].chars().next()) {
                    matched = Some(m.len());
                    break;
                }
            }
        }
        match matched {
            Some(len) => {
                out.push_str("The person");
                i += len;
            }
            None => {
                let c = text[i..].chars().next().expect("in bounds");
                out.push(c);
                i += c.len_utf8();
            }
        }
    }
    out
}

/// Removes lexical cues to event position.
pub fn rectify(text: &str, mode: RectifyMode) -> String {
    match mode {
        RectifyMode::None => text.to_string(),
        RectifyMode::Article => fix_articles(text),
        RectifyMode::Pronoun => fix_articles(&replace_people(text)),
    }
}

/// Distinct first tokens of the text and of every ". "-delimited clause.
pub fn clause_initial_tokens(text: &str) -> BTreeSet<String> {
    clauses(text)
        .into_iter()
        .filter_map(|c| c.split_whitespace().next())
        .map(|t| t.trim_end_matches(['.', ',']).to_string())
        .collect()
}
