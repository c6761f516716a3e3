//! Chronological-accuracy and retrieval evaluation: CAR, ranking metrics
//! under several candidate-pool protocols, corrupted-text retrieval and a
//! text-only order-leakage classifier.

pub mod leakage;
pub mod metrics;
pub mod subset;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

use crate::corpus::{AnnotatedCorpus, AnnotatedSample, Split};
use crate::error::{Error, Result};
use crate::events::{rectify, RectifyMode};
use crate::events::{join_events, shuffle_events};
use crate::model::Model;
use crate::par;
use crate::rng;
use crate::trainer::{scenario_text, Scenario};

pub use leakage::{leakage_classifier_train_eval, LeakageConfig};
pub use metrics::{car_from_similarities, median, rank_all, rank_of, report, RankSummary};
pub use subset::dissimilar_subset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    T2m,
    M2t,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::T2m => "t2m",
            Direction::M2t => "m2t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    All,
    Threshold,
    Dissimilar,
    Small,
    Car,
    Corrupted,
    Leakage,
}

impl Protocol {
    pub const ALL: [Protocol; 7] = [
        Protocol::All,
        Protocol::Threshold,
        Protocol::Dissimilar,
        Protocol::Small,
        Protocol::Car,
        Protocol::Corrupted,
        Protocol::Leakage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::All => "all",
            Protocol::Threshold => "threshold",
            Protocol::Dissimilar => "dissimilar",
            Protocol::Small => "small",
            Protocol::Car => "car",
            Protocol::Corrupted => "corrupted",
            Protocol::Leakage => "leakage",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub scenario: Scenario,
    pub rectify: RectifyMode,
    pub seed: u64,
    pub threshold: f64,
    pub subset_size: usize,
    pub subset_restarts: usize,
    pub small_batch: usize,
    pub trials: usize,
    pub leakage: LeakageConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::OrigToEvent,
            rectify: RectifyMode::None,
            seed: 0,
            threshold: 0.95,
            subset_size: 16,
            subset_restarts: 8,
            small_batch: 32,
            trials: 100,
            leakage: LeakageConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold.is_finite() && self.threshold <= 1.0 && self.threshold >= -1.0) {
            return Err(Error::config("threshold", "must lie in [-1, 1]"));
        }
        if self.small_batch < 1 {
            return Err(Error::config("small_batch", "must be positive"));
        }
        if self.trials < 1 {
            return Err(Error::config("trials", "must be positive"));
        }
        self.leakage.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub direction: Option<Direction>,
    #[serde(flatten)]
    pub recall: Option<RankSummary>,
    pub car: Option<f64>,
    pub accuracy: Option<f64>,
    pub n_queries: usize,
    pub seed: u64,
    pub config_digest: String,
    #[serde(default)]
    pub details: BTreeMap<String, f64>,
}

impl EvalReport {
    fn new(protocol: Protocol, direction: Option<Direction>, seed: u64) -> Self {
        Self {
            protocol,
            direction,
            recall: None,
            car: None,
            accuracy: None,
            n_queries: 0,
            seed,
            config_digest: String::new(),
            details: BTreeMap::new(),
        }
    }
}

/// Text and motion embeddings of a sample list, row-aligned.
#[derive(Debug, Clone)]
pub struct EmbeddedSet {
    pub texts: Vec<String>,
    pub text: Vec<Array1<f64>>,
    pub motion: Vec<Array1<f64>>,
}

impl EmbeddedSet {
    pub fn len(&self) -> usize {
        self.motion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motion.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            texts: idx.iter().map(|&i| self.texts[i].clone()).collect(),
            text: idx.iter().map(|&i| self.text[i].clone()).collect(),
            motion: idx.iter().map(|&i| self.motion[i].clone()).collect(),
        }
    }
}

/// Embeds the first description of each sample.
pub fn embed_samples(model: &Model, samples: &[&AnnotatedSample], scenario: Scenario, mode: RectifyMode) -> Result<EmbeddedSet> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("evaluation samples"));
    }
    let texts: Vec<String> = samples.iter().map(|s| rectify(&scenario_text(&s.descriptions[0], scenario), mode)).collect();
    let text = par::try_map(&texts, |t: &String| model.embed_text(t))?;
    let motion = par::try_map(samples, |s| model.embed_motion(s.motion.to_f64().view()))?;
    Ok(EmbeddedSet { texts, text, motion })
}

fn stack(v: &[Array1<f64>]) -> Array2<f64> {
    let d = v.first().map_or(0, |x| x.len());
    Array2::from_shape_fn((v.len(), d), |(i, j)| v[i][j])
}

/// `S[i][j] = <text_i, motion_j>` over unit embeddings.
pub fn similarity(text: &[Array1<f64>], motion: &[Array1<f64>]) -> Array2<f64> {
    stack(text).dot(&stack(motion).t())
}

fn oriented(set: &EmbeddedSet, direction: Direction) -> Array2<f64> {
    let s = similarity(&set.text, &set.motion);
    match direction {
        Direction::T2m => s,
        Direction::M2t => s.reversed_axes(),
    }
}

/// Protocol (a): every sample is one query against all counterparts.
pub fn protocol_all(set: &EmbeddedSet, direction: Direction) -> Result<Vec<usize>> {
    let sim = oriented(set, direction);
    rank_all(&sim, &(0..set.len()).collect::<Vec<_>>())
}

/// Protocol (b): any candidate whose text is at least `theta`-similar to the
/// query's ground-truth text counts as correct; the best such rank is kept.
pub fn protocol_threshold(set: &EmbeddedSet, direction: Direction, theta: f64) -> Result<Vec<usize>> {
    let sim = oriented(set, direction);
    let tt = similarity(&set.text, &set.text);
    Ok((0..set.len())
        .map(|q| {
            (0..set.len())
                .filter(|&c| c == q || tt[[q, c]] >= theta)
                .map(|c| rank_of(&sim, q, c))
                .min()
                .expect("self is always accepted")
        })
        .collect())
}

pub struct SmallBatchStats {
    pub mean: RankSummary,
    pub run_medrs: Vec<f64>,
    pub run_r1: Vec<f64>,
}

/// Protocol (d): metrics within random batches, averaged over trials.
pub fn protocol_small_batches(set: &EmbeddedSet, direction: Direction, batch: usize, trials: usize, seed: u64) -> Result<SmallBatchStats> {
    if trials == 0 {
        return Err(Error::config("trials", "must be positive"));
    }
    let n = set.len();
    let b = batch.min(n);
    let mut r = rng::seeded(seed, &[]);
    let mut runs = Vec::with_capacity(trials);
    let mut idx: Vec<usize> = (0..n).collect();
    for _ in 0..trials {
        idx.shuffle(&mut r);
        let mut pick = idx[..b].to_vec();
        pick.sort_unstable();
        runs.push(report(&protocol_all(&set.subset(&pick), direction)?)?);
    }
    let t = trials as f64;
    let mean_of = |f: fn(&RankSummary) -> f64| runs.iter().map(f).sum::<f64>() / t;
    Ok(SmallBatchStats {
        mean: RankSummary {
            r1: mean_of(|r| r.r1),
            r2: mean_of(|r| r.r2),
            r3: mean_of(|r| r.r3),
            r5: mean_of(|r| r.r5),
            r10: mean_of(|r| r.r10),
            medr: mean_of(|r| r.medr),
            n_queries: b,
        },
        run_medrs: runs.iter().map(|r| r.medr).collect(),
        run_r1: runs.iter().map(|r| r.r1).collect(),
    })
}

/// True text and one shuffled-event text per multi-event sample, each
/// rectified. Shuffles are drawn per sample position from `seed`.
pub fn negative_texts(samples: &[&AnnotatedSample], scenario: Scenario, mode: RectifyMode, seed: u64) -> Vec<(usize, String, String)> {
    samples
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let d = &s.descriptions[0];
            let mut r = rng::seeded(seed, &[i as u64]);
            shuffle_events(&d.events, &s.id, &mut r)
                .map(|neg| (i, rectify(&scenario_text(d, scenario), mode), rectify(&neg.text, mode)))
        })
        .collect()
}

pub struct CarResult {
    pub car: f64,
    pub n: usize,
}

/// Chronologically accurate retrieval rate over the multi-event samples.
pub fn car(model: &Model, samples: &[&AnnotatedSample], scenario: Scenario, mode: RectifyMode, seed: u64) -> Result<CarResult> {
    let triples = negative_texts(samples, scenario, mode, seed);
    if triples.is_empty() {
        return Err(Error::NoMultiEvent);
    }
    let pairs = par::try_map(&triples, |(i, t, c)| {
        let m = model.embed_motion(samples[*i].motion.to_f64().view())?;
        Ok((model.embed_text(t)?.dot(&m), model.embed_text(c)?.dot(&m)))
    })?;
    Ok(CarResult {
        car: car_from_similarities(&pairs)?,
        n: pairs.len(),
    })
}

pub struct CorruptedResult {
    pub ranks: Vec<usize>,
    pub pool_size: usize,
    pub sibling_win_rate: f64,
}

/// Motion-to-text retrieval over original texts plus one shuffled variant
/// per multi-event sample.
pub fn corrupted_m2t(model: &Model, samples: &[&AnnotatedSample], scenario: Scenario, mode: RectifyMode, seed: u64) -> Result<CorruptedResult> {
    let set = embed_samples(model, samples, scenario, mode)?;
    let negs = negative_texts(samples, scenario, mode, seed);
    let neg_emb = par::try_map(&negs, |(_, _, c)| model.embed_text(c))?;
    let mut pool = set.text.clone();
    pool.extend(neg_emb);
    let sim = similarity(&set.motion, &pool);
    let n = set.len();
    let ranks = rank_all(&sim, &(0..n).collect::<Vec<_>>())?;
    let wins = negs.iter().enumerate().filter(|(k, (i, _, _))| sim[[*i, *i]] > sim[[*i, n + k]]).count();
    Ok(CorruptedResult {
        ranks,
        pool_size: pool.len(),
        sibling_win_rate: if negs.is_empty() { 1.0 } else { wins as f64 / negs.len() as f64 },
    })
}

fn digest(model: &Model, config: &EvalConfig, split: Split, protocol: Protocol, direction: Option<Direction>) -> Result<String> {
    let mut h = Sha256::new();
    h.update(Sha256::digest(model.to_checkpoint().to_bytes()?));
    h.update(serde_json::to_vec(&(config, split, protocol, direction))?);
    Ok(hex::encode(h.finalize()))
}

/// Runs one protocol on one split.
pub fn evaluate(
    model: &Model,
    corpus: &AnnotatedCorpus,
    split: Split,
    protocol: Protocol,
    direction: Direction,
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let samples = corpus.split(split);
    if samples.is_empty() {
        return Err(Error::EmptyInput("evaluation split"));
    }
    let uses_direction = matches!(protocol, Protocol::All | Protocol::Threshold | Protocol::Dissimilar | Protocol::Small);
    let dir = uses_direction.then_some(direction).or((protocol == Protocol::Corrupted).then_some(Direction::M2t));
    let mut rep = EvalReport::new(protocol, dir, config.seed);
    let (sc, mode) = (config.scenario, config.rectify);
    match protocol {
        Protocol::All => {
            let set = embed_samples(model, &samples, sc, mode)?;
            rep.recall = Some(report(&protocol_all(&set, direction)?)?);
        }
        Protocol::Threshold => {
            let set = embed_samples(model, &samples, sc, mode)?;
            rep.recall = Some(report(&protocol_threshold(&set, direction, config.threshold)?)?);
            rep.details.insert("threshold".into(), config.threshold);
        }
        Protocol::Dissimilar => {
            let set = embed_samples(model, &samples, sc, mode)?;
            let m = config.subset_size.min(set.len());
            let idx = dissimilar_subset(&set.text, m, config.subset_restarts, config.seed)?;
            rep.recall = Some(report(&protocol_all(&set.subset(&idx), direction)?)?);
            rep.details.insert("subset_size".into(), m as f64);
        }
        Protocol::Small => {
            let set = embed_samples(model, &samples, sc, mode)?;
            let st = protocol_small_batches(&set, direction, config.small_batch, config.trials, config.seed)?;
            rep.recall = Some(st.mean);
            rep.details.insert("trials".into(), config.trials as f64);
            rep.details.insert("batch".into(), st.mean.n_queries as f64);
            rep.details.insert("medr_median_of_runs".into(), median(&st.run_medrs));
        }
        Protocol::Car => {
            let c = car(model, &samples, sc, mode, config.seed)?;
            rep.car = Some(c.car);
            rep.n_queries = c.n;
        }
        Protocol::Corrupted => {
            let c = corrupted_m2t(model, &samples, sc, mode, config.seed)?;
            rep.recall = Some(report(&c.ranks)?);
            rep.details.insert("pool_size".into(), c.pool_size as f64);
            rep.details.insert("sibling_win_rate".into(), c.sibling_win_rate);
        }
        Protocol::Leakage => {
            let acc = leakage_classifier_train_eval(corpus, &config.leakage, mode)?;
            rep.accuracy = Some(acc.accuracy);
            rep.n_queries = acc.n_test;
        }
    }
    if let Some(r) = &rep.recall {
        rep.n_queries = r.n_queries;
    }
    rep.config_digest = digest(model, config, split, protocol, dir)?;
    Ok(rep)
}

/// Flat CSV rows: one header line and one line per report.
pub fn reports_csv(reports: &[(String, EvalReport)]) -> String {
    let mut out = String::from("label,protocol,direction,r1,r2,r3,r5,r10,medr,car,accuracy,n_queries\n");
    let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    for (label, r) in reports {
        let rs = r.recall;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            label,
            r.protocol.as_str(),
            r.direction.map(Direction::as_str).unwrap_or(""),
            f(rs.map(|x| x.r1)),
            f(rs.map(|x| x.r2)),
            f(rs.map(|x| x.r3)),
            f(rs.map(|x| x.r5)),
            f(rs.map(|x| x.r10)),
            f(rs.map(|x| x.medr)),
            f(r.car),
            f(r.accuracy),
            r.n_queries
        ));
    }
    out
}

/// Markdown comparison table, one row per report.
pub fn reports_markdown(reports: &[(String, EvalReport)]) -> String {
    let mut out = String::from("| run | protocol | dir | R@1 | R@2 | R@3 | R@5 | R@10 | MedR | CAR | Acc |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|---|\n");
    let f = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
    for (label, r) in reports {
        let rs = r.recall;
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
            label,
            r.protocol.as_str(),
            r.direction.map(Direction::as_str).unwrap_or("-"),
            f(rs.map(|x| x.r1)),
            f(rs.map(|x| x.r2)),
            f(rs.map(|x| x.r3)),
            f(rs.map(|x| x.r5)),
            f(rs.map(|x| x.r10)),
            f(rs.map(|x| x.medr)),
            f(r.car.map(|c| 100.0 * c)),
            f(r.accuracy.map(|a| 100.0 * a)),
        ));
    }
    out
}

/// Event concatenation in chronological order.
pub fn ordered_concat(sample: &AnnotatedSample) -> String {
    join_events(&sample.descriptions[0].events)
}
