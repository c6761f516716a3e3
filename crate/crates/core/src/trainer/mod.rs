//! Seeded training: batch assembly, per-batch shuffled-event negatives,
//! AdamW updates and validation-based best-checkpoint retention.

pub mod optim;

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedCorpus, Description, Split};
use crate::error::{Error, Result};
use crate::evalsuite::{self, Direction};
use crate::events::{rectify, RectifyMode};
use crate::events::{build_batch_negatives, join_events};
use crate::model::{forward_backward, Checkpoint, EncoderParams, Model, ModelConfig, NegativeTokens, PairBatch, Vocabulary};
use crate::objective::LossConfig;
use crate::rng::{self, Rng};

pub use optim::AdamW;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Original captions as positives.
    #[default]
    OrigToEvent,
    /// Chronological event concatenations as positives.
    EventToEvent,
}

/// The positive text a description contributes under `scenario`.
pub fn scenario_text(d: &Description, scenario: Scenario) -> String {
    match scenario {
        Scenario::OrigToEvent => d.text.clone(),
        Scenario::EventToEvent => join_events(&d.events),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSeeds {
    /// Negative permutations, variational noise and validation shuffles.
    pub data: u64,
    pub init: u64,
    /// Description choice and batch order.
    pub shuffle: u64,
}

impl Default for TrainSeeds {
    fn default() -> Self {
        Self { data: 1, init: 2, shuffle: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Separate rate for the text tower; `None` uses `lr`.
    pub text_lr: Option<f64>,
    pub weight_decay: f64,
    /// `None` derives weights from the model flags.
    pub loss: Option<LossConfig>,
    pub scenario: Scenario,
    pub use_negatives: bool,
    pub rectify: RectifyMode,
    pub seeds: TrainSeeds,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 60,
            lr: 1e-4,
            text_lr: None,
            weight_decay: 0.0,
            loss: None,
            scenario: Scenario::OrigToEvent,
            use_negatives: true,
            rectify: RectifyMode::None,
            seeds: TrainSeeds::default(),
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be at least 2"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive and finite"));
        }
        if let Some(t) = self.text_lr {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config("text_lr", "must be positive and finite"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if let Some(l) = &self.loss {
            l.weights.validate()?;
        }
        Ok(())
    }

    pub fn loss_for(&self, model: &ModelConfig) -> LossConfig {
        self.loss.unwrap_or_else(|| LossConfig::for_flags(model.use_vae, model.use_reconstruction))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Indices into `corpus.samples`.
    pub samples: Vec<usize>,
    pub descriptions: Vec<usize>,
    pub texts: Vec<String>,
    pub events: Vec<Vec<String>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Training draws one description per sample and shuffles sample order;
/// other splits use description 0 in corpus order and ignore `rng`.
pub fn make_batches(
    corpus: &AnnotatedCorpus,
    split: Split,
    batch_size: usize,
    scenario: Scenario,
    mode: RectifyMode,
    rng: &mut Rng,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size", "must be positive"));
    }
    let mut items: Vec<(usize, usize)> = corpus
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.split == split)
        .map(|(i, s)| {
            let d = if split == Split::Train { rng.random_range(0..s.descriptions.len()) } else { 0 };
            (i, d)
        })
        .collect();
    if items.is_empty() {
        return Err(Error::EmptyInput("split"));
    }
    if split == Split::Train {
        items.shuffle(rng);
    }
    Ok(items
        .chunks(batch_size)
        .map(|chunk| {
            let descs: Vec<&Description> = chunk.iter().map(|&(i, d)| &corpus.samples[i].descriptions[d]).collect();
            Batch {
                samples: chunk.iter().map(|c| c.0).collect(),
                descriptions: chunk.iter().map(|c| c.1).collect(),
                texts: descs.iter().map(|d| rectify(&scenario_text(d, scenario), mode)).collect(),
                events: descs.iter().map(|d| d.events.clone()).collect(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_r1_m2t: f64,
    #[serde(rename = "val_CAR")]
    pub val_car: f64,
    pub wall_ms: u64,
}

/// Training state persisted alongside the best parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainState {
    next_epoch: usize,
    best_epoch: Option<usize>,
    best_val_r1_m2t: f64,
    optimizer: AdamW,
    train_config: TrainConfig,
}

const CURRENT: &str = "current.";
const MOMENT_M: &str = "adam.m.";
const MOMENT_V: &str = "adam.v.";

/// Every vocabulary item any scenario or rectification mode can produce on
/// the training split.
pub fn build_vocabulary(corpus: &AnnotatedCorpus) -> Vocabulary {
    let mut texts = Vec::new();
    for s in corpus.split(Split::Train) {
        for d in &s.descriptions {
            for sc in [Scenario::OrigToEvent, Scenario::EventToEvent] {
                let t = scenario_text(d, sc);
                for m in [RectifyMode::None, RectifyMode::Article, RectifyMode::Pronoun] {
                    texts.push(rectify(&t, m));
                }
            }
        }
    }
    Vocabulary::build(texts.iter().map(String::as_str))
}

pub struct TrainOutcome {
    /// Best parameters at the root prefix, plus resumable state.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn best_model(&self) -> Result<Model> {
        Model::from_checkpoint(&self.checkpoint)
    }
}

struct Trainer<'a> {
    corpus: &'a AnnotatedCorpus,
    features: Vec<Array2<f64>>,
    config: TrainConfig,
    model: Model,
    best: EncoderParams,
    state: TrainState,
}

impl<'a> Trainer<'a> {
    fn lrs(&self) -> Vec<f64> {
        let text = self.config.text_lr.unwrap_or(self.config.lr);
        self.model
            .params
            .tensors()
            .iter()
            .map(|(n, _)| if n.starts_with("text.") { text } else { self.config.lr })
            .collect()
    }

    fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::from_params(&self.model.config, &self.model.vocab, &self.best);
        ck.push_params(CURRENT, &self.model.params);
        for (prefix, moments) in [(MOMENT_M, &self.state.optimizer.m), (MOMENT_V, &self.state.optimizer.v)] {
            for ((name, _), t) in self.model.params.tensors().iter().zip(moments) {
                ck.tensors.push((format!("{prefix}{name}"), t.clone()));
            }
        }
        ck.extra = serde_json::to_value(&self.state)?;
        Ok(ck)
    }

    fn epoch(&mut self, epoch: usize) -> Result<f64> {
        let mut order = rng::seeded(self.config.seeds.shuffle, &[epoch as u64]);
        let mut neg_rng = rng::seeded(self.config.seeds.data, &[epoch as u64, 0]);
        let batches = make_batches(self.corpus, Split::Train, self.config.batch_size, self.config.scenario, self.config.rectify, &mut order)?;
        let loss_cfg = self.config.loss_for(&self.model.config);
        let lrs = self.lrs();
        let (mut total, mut count) = (0.0, 0usize);
        for (bi, batch) in batches.iter().enumerate() {
            if batch.len() < 2 {
                log::info!("epoch {epoch}: skipping single-sample batch {bi}");
                continue;
            }
            let negatives: Vec<NegativeTokens> = if self.config.use_negatives {
                build_batch_negatives(&batch.events, &mut neg_rng)
                    .into_iter()
                    .map(|bn| NegativeTokens {
                        tokens: self.model.tokens(&rectify(&bn.negative.text, self.config.rectify)),
                        origin: bn.origin,
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let pair = PairBatch {
                texts: batch.texts.iter().map(|t| self.model.tokens(t)).collect(),
                motions: batch.samples.iter().map(|&i| self.features[i].view()).collect::<Vec<ArrayView2<'_, f64>>>(),
            };
            let noise = rng::derive_seed(self.config.seeds.data, &[epoch as u64, bi as u64 + 1]);
            let out = forward_backward(&self.model.params, &self.model.config, &pair, &negatives, &loss_cfg, noise).map_err(|e| match e {
                Error::NonFinite(term) => Error::Diverged { epoch, batch: bi, term },
                other => other,
            })?;
            let grads: Vec<&Array2<f64>> = out.grads.tensors().into_iter().map(|(_, t)| t).collect();
            let mut params: Vec<&mut Array2<f64>> = self.model.params.tensors_mut().into_iter().map(|(_, t)| t).collect();
            self.state.optimizer.update(&mut params, &grads, &lrs, self.config.weight_decay)?;
            total += out.loss;
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyInput("no trainable batches"));
        }
        Ok(total / count as f64)
    }

    fn validate(&self) -> Result<(f64, f64)> {
        let val = self.corpus.split(Split::Val);
        if val.is_empty() {
            return Ok((0.0, 0.0));
        }
        let set = evalsuite::embed_samples(&self.model, &val, self.config.scenario, self.config.rectify)?;
        let r1 = evalsuite::report(&evalsuite::protocol_all(&set, Direction::M2t)?)?.r1;
        let car = match evalsuite::car(&self.model, &val, self.config.scenario, self.config.rectify, self.config.seeds.data) {
            Ok(c) => c.car,
            Err(Error::NoMultiEvent) => 0.0,
            Err(e) => return Err(e),
        };
        Ok((r1, car))
    }

    fn run(mut self) -> Result<TrainOutcome> {
        let mut log = Vec::new();
        let log_path = self.config.checkpoint_dir.as_ref().map(|d| d.join("train_log.jsonl"));
        if let Some(dir) = &self.config.checkpoint_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        if let (Some(lp), 0) = (&log_path, self.state.next_epoch) {
            fs::write(lp, b"").map_err(|e| Error::io(lp, e))?;
        }
        for epoch in self.state.next_epoch..self.config.epochs {
            let started = Instant::now();
            let mean_loss = self.epoch(epoch)?;
            let (val_r1_m2t, val_car) = self.validate()?;
            if self.state.best_epoch.is_none() || val_r1_m2t >= self.state.best_val_r1_m2t {
                self.state.best_epoch = Some(epoch);
                self.state.best_val_r1_m2t = val_r1_m2t;
                self.best = self.model.params.clone();
            }
            self.state.next_epoch = epoch + 1;
            let rec = EpochRecord {
                epoch,
                mean_loss,
                val_r1_m2t,
                val_car,
                wall_ms: started.elapsed().as_millis() as u64,
            };
            log::info!("epoch {epoch}: loss {mean_loss:.5} val R@1 {val_r1_m2t:.2} val CAR {val_car:.3}");
            if let (Some(dir), Some(lp)) = (&self.config.checkpoint_dir, &log_path) {
                self.checkpoint()?.save(&dir.join("checkpoint.carc"))?;
                let mut f = fs::OpenOptions::new().create(true).append(true).open(lp).map_err(|e| Error::io(lp, e))?;
                writeln!(f, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(lp, e))?;
            }
            log.push(rec);
        }
        Ok(TrainOutcome {
            checkpoint: self.checkpoint()?,
            log,
        })
    }
}

fn corpus_features(corpus: &AnnotatedCorpus) -> Result<(Vec<Array2<f64>>, usize)> {
    let first = corpus.samples.first().ok_or(Error::EmptyInput("corpus"))?;
    let dim = first.motion.dim();
    if let Some(bad) = corpus.samples.iter().find(|s| s.motion.dim() != dim) {
        return Err(Error::Sample {
            id: bad.id.clone(),
            reason: format!("feature width {} but corpus uses {dim}", bad.motion.dim()),
        });
    }
    Ok((corpus.samples.iter().map(|s| s.motion.to_f64()).collect(), dim))
}

/// Training configuration without the output location.
fn portable(config: &TrainConfig) -> TrainConfig {
    TrainConfig {
        checkpoint_dir: None,
        ..config.clone()
    }
}

pub fn train(corpus: &AnnotatedCorpus, model_config: &ModelConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let (features, dim) = corpus_features(corpus)?;
    let mut mc = model_config.clone();
    mc.seed = config.seeds.init;
    let model = Model::new(mc, build_vocabulary(corpus), dim)?;
    config.loss_for(&model.config);
    let state = TrainState {
        next_epoch: 0,
        best_epoch: None,
        best_val_r1_m2t: f64::NEG_INFINITY,
        optimizer: AdamW::new(model.params.tensors().iter().map(|(_, t)| t.dim())),
        train_config: portable(config),
    };
    Trainer {
        corpus,
        features,
        config: config.clone(),
        best: model.params.clone(),
        model,
        state,
    }
    .run()
}

/// Continues a run from a checkpoint written by [`train`] up to
/// `config.epochs`.
pub fn resume(corpus: &AnnotatedCorpus, checkpoint: &Checkpoint, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let (features, _) = corpus_features(corpus)?;
    let mut state: TrainState = serde_json::from_value(checkpoint.extra.clone()).map_err(|e| Error::config("checkpoint", format!("no training state: {e}")))?;
    let model = Model {
        config: checkpoint.config.clone(),
        vocab: checkpoint.vocab.clone(),
        params: checkpoint.params(CURRENT)?,
    };
    let names: Vec<&str> = model.params.tensors().iter().map(|(n, _)| *n).collect();
    let moment = |prefix: &str| -> Result<Vec<Array2<f64>>> {
        names
            .iter()
            .map(|n| checkpoint.tensor(&format!("{prefix}{n}")).cloned().ok_or_else(|| Error::config(format!("{prefix}{n}"), "missing optimizer moment")))
            .collect()
    };
    state.optimizer.m = moment(MOMENT_M)?;
    state.optimizer.v = moment(MOMENT_V)?;
    state.train_config = portable(config);
    Trainer {
        corpus,
        features,
        config: config.clone(),
        best: checkpoint.params("")?,
        model,
        state,
    }
    .run()
}
