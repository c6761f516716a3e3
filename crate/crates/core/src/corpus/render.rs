use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::primitives::ActionPrimitive;
use super::Description;
use crate::error::{Error, Result};
use crate::events::{AFTER, BEFORE, EVENT_JOIN, THEN_CONNECTIVES};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderStyle {
    /// Free-form caption: sampled connectives, sentence breaks and
    /// subject forms.
    Orig,
    /// Event clauses joined with ". " in chronological order.
    EventConcat,
}

/// How the actor is named on first mention and afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectForms {
    pub first: String,
    pub later: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderVocab {
    pub subjects: Vec<SubjectForms>,
    /// Connectives allowed between two clauses of one sentence.
    pub connectives: Vec<String>,
    pub sentence_break_prob: f64,
}

impl Default for RenderVocab {
    fn default() -> Self {
        let forms = |first: &str, later: &[&str]| SubjectForms {
            first: first.into(),
            later: later.iter().map(|s| s.to_string()).collect(),
        };
        Self {
            subjects: vec![
                forms("a person", &["the person", "he", "she"]),
                forms("a man", &["he"]),
                forms("a woman", &["she"]),
                forms("someone", &["the person"]),
                forms("the person", &["he", "she"]),
            ],
            connectives: [", then ", " then ", " and then ", " before ", " after "]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            sentence_break_prob: 0.35,
        }
    }
}

impl RenderVocab {
    pub fn validate(&self) -> Result<()> {
        if self.subjects.is_empty() || self.subjects.iter().any(|s| s.later.is_empty()) {
            return Err(Error::config("subjects", "every subject family needs a first and a later form"));
        }
        if self.connectives.is_empty() {
            return Err(Error::config("connectives", "at least one connective is required"));
        }
        for c in &self.connectives {
            if !THEN_CONNECTIVES.contains(&c.as_str()) && c != BEFORE && c != AFTER {
                return Err(Error::config("connectives", format!("`{c}` is not a recognised connective")));
            }
        }
        if !(0.0..=1.0).contains(&self.sentence_break_prob) {
            return Err(Error::config("sentence_break_prob", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

enum Sentence {
    Single(usize),
    /// Chronological clause indices with the connectives between them.
    Chain(Vec<usize>, Vec<String>),
}

pub fn render_description(
    library: &[ActionPrimitive],
    action_ids: &[usize],
    style: RenderStyle,
    vocab: &RenderVocab,
    rng: &mut Rng,
) -> Result<Description> {
    if action_ids.is_empty() {
        return Err(Error::EmptyInput("action list"));
    }
    let prims: Vec<&ActionPrimitive> = action_ids
        .iter()
        .map(|&id| library.get(id).ok_or_else(|| Error::config("action_ids", format!("unknown primitive {id}"))))
        .collect::<Result<_>>()?;
    let templates: Vec<usize> = prims.iter().map(|p| rng.random_range(0..p.phrase_templates.len())).collect();
    let family = vocab.subjects.choose(rng).expect("validated non-empty");
    let n = action_ids.len();

    let (sentences, narration): (Vec<Sentence>, Vec<usize>) = match style {
        RenderStyle::EventConcat => ((0..n).map(Sentence::Single).collect(), (0..n).collect()),
        RenderStyle::Orig => plan_sentences(n, vocab, rng),
    };

    let mut subjects = vec![String::new(); n];
    for (pos, &clause) in narration.iter().enumerate() {
        subjects[clause] = if pos == 0 {
            family.first.clone()
        } else {
            family.later.choose(rng).expect("validated non-empty").clone()
        };
    }
    let events: Vec<String> = (0..n).map(|i| prims[i].phrase(templates[i], &subjects[i])).collect();

    let rendered: Vec<String> = sentences
        .iter()
        .map(|s| match s {
            Sentence::Single(i) => events[*i].clone(),
            Sentence::Chain(ids, conns) => {
                if conns.len() == 1 && conns[0] == AFTER {
                    format!("{}{AFTER}{}", events[ids[1]], events[ids[0]])
                } else {
                    let mut out = events[ids[0]].clone();
                    for (c, &i) in conns.iter().zip(&ids[1..]) {
                        out.push_str(c);
                        out.push_str(&events[i]);
                    }
                    out
                }
            }
        })
        .collect();
    let text = format!("{}.", rendered.join(EVENT_JOIN));
    Ok(Description { text, events })
}

/// Groups chronological clauses into sentences and returns the narration
/// order (which differs from chronology only for "after" sentences).
fn plan_sentences(n: usize, vocab: &RenderVocab, rng: &mut Rng) -> (Vec<Sentence>, Vec<usize>) {
    let then_only: Vec<&String> = vocab
        .connectives
        .iter()
        .filter(|c| THEN_CONNECTIVES.contains(&c.as_str()))
        .collect();
    let max_group = if then_only.is_empty() { 2 } else { 3 };
    let mut sentences = Vec::new();
    let mut narration = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let mut group = vec![i];
        i += 1;
        while i < n && group.len() < max_group && rng.random::<f64>() >= vocab.sentence_break_prob {
            group.push(i);
            i += 1;
        }
        if group.len() == 1 {
            narration.push(group[0]);
            sentences.push(Sentence::Single(group[0]));
            continue;
        }
        let conns: Vec<String> = if group.len() == 2 {
            vec![vocab.connectives.choose(rng).expect("validated").clone()]
        } else {
            (1..group.len()).map(|_| (*then_only.choose(rng).expect("non-empty")).clone()).collect()
        };
        if conns.len() == 1 && conns[0] == AFTER {
            narration.extend([group[1], group[0]]);
        } else {
            narration.extend(group.iter().copied());
        }
        sentences.push(Sentence::Chain(group, conns));
    }
    (sentences, narration)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::primitives::build_library;
    use crate::rng;

    fn lib() -> Vec<ActionPrimitive> {
        build_library(1, 4, 10, (12, 24))
    }

    #[test]
    fn single_event_text_is_its_event() {
        let lib = lib();
        for seed in 0..20 {
            let d = render_description(&lib, &[2], RenderStyle::Orig, &RenderVocab::default(), &mut rng::seeded(seed, &[]))
                .unwrap();
            assert_eq!(d.events.len(), 1);
            assert_eq!(d.text, format!("{}.", d.events[0]));
        }
        // the wave primitive rendered with the default subject
        let p = &lib[2];
        assert_eq!(p.phrase(0, "a person"), "a person waves with their left hand");
    }

    #[test]
    fn event_concat_joins_with_period() {
        let lib = lib();
        let d = render_description(&lib, &[0, 1], RenderStyle::EventConcat, &RenderVocab::default(), &mut rng::seeded(3, &[]))
            .unwrap();
        assert_eq!(d.text, format!("{}. {}.", d.events[0], d.events[1]));
    }

    #[test]
    fn orig_events_follow_chronology() {
        let lib = lib();
        let walk: Vec<String> = lib[0].phrase_templates.iter().map(|t| t.replace("{subject} ", "")).collect();
        let sit: Vec<String> = lib[1].phrase_templates.iter().map(|t| t.replace("{subject} ", "")).collect();
        let mut r = rng::seeded(99, &[]);
        for _ in 0..1000 {
            let d = render_description(&lib, &[0, 1], RenderStyle::Orig, &RenderVocab::default(), &mut r).unwrap();
            assert_eq!(d.events.len(), 2);
            assert!(walk.iter().any(|w| d.events[0].ends_with(w.as_str())), "{:?}", d);
            assert!(sit.iter().any(|w| d.events[1].ends_with(w.as_str())), "{:?}", d);
        }
    }

    #[test]
    fn unknown_connective_rejected() {
        let mut v = RenderVocab::default();
        v.connectives.push(" while ".into());
        assert!(v.validate().is_err());
        assert!(RenderVocab::default().validate().is_ok());
    }
}
