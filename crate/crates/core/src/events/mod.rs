//! Event decomposition, chronologically shuffled negatives and
//! article/pronoun rectification.

mod llm;
mod rectify;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use llm::{
    build_prompt, parse_event_lines, CacheRecord, HttpTransport, LlmClientConfig, LlmDecomposer, Transport,
};
pub use rectify::{clause_initial_tokens, rectify, RectifyMode};

use crate::rng::Rng;

/// Joins events when they are concatenated into one text.
pub const EVENT_JOIN: &str = ". ";
/// Sequencing connectives, longest first so that `" and then "` wins over
/// `" then "`.
pub const THEN_CONNECTIVES: [&str; 3] = [", then ", " and then ", " then "];
pub const BEFORE: &str = " before ";
pub const AFTER: &str = " after ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventList {
    pub events: Vec<String>,
    pub source_text: String,
}

impl EventList {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// A description whose events were permuted away from chronological order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShuffledNegative {
    /// `events[k]` of the negative is `original[permutation[k]]`.
    pub permutation: Vec<usize>,
    pub text: String,
    pub origin_id: String,
}

impl ShuffledNegative {
    /// Restores chronological order from the permuted clauses.
    pub fn unshuffle<T: Clone>(&self, permuted: &[T]) -> Vec<T> {
        let mut out = permuted.to_vec();
        for (k, &src) in self.permutation.iter().enumerate() {
            out[src] = permuted[k].clone();
        }
        out
    }
}

/// Concatenates event clauses into one text: `"e0. e1. e2."`.
pub fn join_events<S: AsRef<str>>(events: &[S]) -> String {
    let parts: Vec<&str> = events.iter().map(|e| e.as_ref()).collect();
    format!("{}.", parts.join(EVENT_JOIN))
}

fn clean_clause(s: &str) -> String {
    s.trim()
        .trim_start_matches([',', ';'])
        .trim_end_matches(['.', ',', ';', '!', '?'])
        .trim()
        .to_string()
}

fn find_ci(hay: &str, needle: &str) -> Option<usize> {
    hay.to_ascii_lowercase().find(needle)
}

fn decompose_sentence(s: &str, out: &mut Vec<String>) {
    if let Some(pos) = find_ci(s, BEFORE) {
        decompose_sentence(&s[..pos], out);
        decompose_sentence(&s[pos + BEFORE.len()..], out);
        return;
    }
    if let Some(pos) = find_ci(s, AFTER) {
        decompose_sentence(&s[pos + AFTER.len()..], out);
        decompose_sentence(&s[..pos], out);
        return;
    }
    let mut rest = s;
    loop {
        let lower = rest.to_ascii_lowercase();
        let hit = THEN_CONNECTIVES
            .iter()
            .filter_map(|c| lower.find(c).map(|p| (p, c.len())))
            .min_by_key(|&(p, len)| (p, std::cmp::Reverse(len)));
        match hit {
            Some((p, len)) => {
                push_clause(&rest[..p], out);
                rest = &rest[p + len..];
            }
            None => {
                push_clause(rest, out);
                break;
            }
        }
    }
}

fn push_clause(s: &str, out: &mut Vec<String>) {
    let c = clean_clause(s);
    if !c.is_empty() {
        out.push(c);
    }
}

/// Rule-based decomposition into chronologically ordered clauses.
///
/// Splits on sentence ends and on the sequencing connectives; `X before Y`
/// yields `[X, Y]` and `X after Y` yields `[Y, X]`.
pub fn decompose(text: &str) -> EventList {
    let mut events = Vec::new();
    for sentence in text.split(['.', '!', '?', ';']) {
        if !sentence.trim().is_empty() {
            decompose_sentence(sentence, &mut events);
        }
    }
    if events.is_empty() {
        let whole = clean_clause(text);
        events.push(if whole.is_empty() { text.trim().to_string() } else { whole });
    }
    EventList {
        events,
        source_text: text.to_string(),
    }
}

/// Draws a uniformly random non-identity permutation of the events; `None`
/// for a single event.
pub fn shuffle_events(events: &[String], origin_id: &str, rng: &mut Rng) -> Option<ShuffledNegative> {
    let n = events.len();
    if n < 2 {
        return None;
    }
    let mut perm: Vec<usize> = (0..n).collect();
    // rejection keeps the draw uniform over the n! - 1 non-identity orders
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().any(|(i, &p)| i != p) {
            break;
        }
    }
    let permuted: Vec<&str> = perm.iter().map(|&i| events[i].as_str()).collect();
    Some(ShuffledNegative {
        text: join_events(&permuted),
        permutation: perm,
        origin_id: origin_id.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchNegative {
    /// Index of the batch item the negative was built from.
    pub origin: usize,
    pub negative: ShuffledNegative,
}

/// One fresh negative per multi-event batch item, in batch order.
pub fn build_batch_negatives<S: AsRef<[String]>>(batch: &[S], rng: &mut Rng) -> Vec<BatchNegative> {
    batch
        .iter()
        .enumerate()
        .filter_map(|(i, events)| {
            shuffle_events(events.as_ref(), &i.to_string(), rng).map(|negative| BatchNegative { origin: i, negative })
        })
        .collect()
}
