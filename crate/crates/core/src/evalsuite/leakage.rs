use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedCorpus, AnnotatedSample, Split};
use crate::error::{Error, Result};
use crate::events::{rectify, RectifyMode};
use crate::events::{join_events, shuffle_events};
use crate::model::encoder::{backward_text, encode_text, OutputGrad};
use crate::model::{Model, ModelConfig, Vocabulary};
use crate::rng;
use crate::trainer::optim::AdamW;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeakageConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Randomise training labels (a no-signal control).
    pub shuffle_labels: bool,
}

impl Default for LeakageConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden_dim: 64,
            latent_dim: 32,
            epochs: 15,
            batch_size: 32,
            lr: 2e-3,
            seed: 0,
            shuffle_labels: false,
        }
    }
}

impl LeakageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("leakage.batch_size", "must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("leakage.lr", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakageResult {
    pub accuracy: f64,
    pub n_test: usize,
}

/// Ordered (label 0) and shuffled (label 1) event concatenations for every
/// multi-event sample, rectified.
fn labelled(samples: &[&AnnotatedSample], mode: RectifyMode, r: &mut rng::Rng) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for s in samples {
        let events = &s.descriptions[0].events;
        if let Some(neg) = shuffle_events(events, &s.id, r) {
            out.push((rectify(&join_events(events), mode), 0.0));
            out.push((rectify(&neg.text, mode), 1.0));
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Trains a text-only order classifier and returns held-out accuracy.
pub fn leakage_classifier_train_eval(corpus: &AnnotatedCorpus, config: &LeakageConfig, mode: RectifyMode) -> Result<LeakageResult> {
    config.validate()?;
    let train = corpus.split(Split::Train);
    let test = corpus.split(Split::Test);
    let test_set = labelled(&test, mode, &mut rng::seeded(config.seed, &[1]));
    if test_set.is_empty() || !train.iter().any(|s| s.is_multi_event()) {
        return Err(Error::NoMultiEvent);
    }
    let first = labelled(&train, mode, &mut rng::seeded(config.seed, &[2]));
    let vocab = Vocabulary::build(first.iter().map(|(t, _)| t.as_str()));
    let mc = ModelConfig {
        embed_dim: config.embed_dim,
        hidden_dim: config.hidden_dim,
        latent_dim: config.latent_dim,
        seed: config.seed,
        ..ModelConfig::default()
    };
    let mut model = Model::new(mc, vocab, train[0].motion.dim())?;
    let mut r = rng::seeded(config.seed, &[3]);
    let d = config.latent_dim;
    let bound = (6.0 / (d + 1) as f64).sqrt();
    let mut w = Array2::from_shape_simple_fn((d, 1), || r.random_range(-bound..bound));
    let mut b = Array2::<f64>::zeros((1, 1));
    let text_only = |name: &str| name.starts_with("text.");
    let mut shapes: Vec<(usize, usize)> = model.params.tensors().iter().filter(|(n, _)| text_only(n)).map(|(_, t)| t.dim()).collect();
    shapes.extend([w.dim(), b.dim()]);
    let mut opt = AdamW::new(shapes);

    for epoch in 0..config.epochs {
        let mut er = rng::seeded(config.seed, &[4, epoch as u64]);
        let mut data = labelled(&train, mode, &mut er);
        if config.shuffle_labels {
            for item in &mut data {
                item.1 = if er.random_bool(0.5) { 1.0 } else { 0.0 };
            }
        }
        data.shuffle(&mut er);
        for chunk in data.chunks(config.batch_size) {
            let mut g = model.params.zeros_like();
            let mut gw = Array2::zeros(w.dim());
            let mut gb = Array2::zeros((1, 1));
            let n = chunk.len() as f64;
            for (text, y) in chunk {
                let toks = model.tokens(text);
                let (enc, cache) = encode_text(&model.params, &model.config, &toks, None)?;
                let logit = enc.z.dot(&w.column(0)) + b[[0, 0]];
                let dlogit = (sigmoid(logit) - y) / n;
                gw.column_mut(0).scaled_add(dlogit, &enc.z);
                gb[[0, 0]] += dlogit;
                backward_text(&model.params, &cache, &OutputGrad::new(w.column(0).to_owned() * dlogit), &mut g);
            }
            let grads: Vec<Array2<f64>> = g.tensors().iter().filter(|(n, _)| text_only(n)).map(|(_, t)| (*t).clone()).collect();
            let mut params: Vec<&mut Array2<f64>> =
                model.params.tensors_mut().into_iter().filter(|(n, _)| text_only(n)).map(|(_, t)| t).collect();
            params.push(&mut w);
            params.push(&mut b);
            let mut grefs: Vec<&Array2<f64>> = grads.iter().collect();
            grefs.push(&gw);
            grefs.push(&gb);
            let lrs = vec![config.lr; grefs.len()];
            opt.update(&mut params, &grefs, &lrs, 0.0)?;
        }
    }

    let mut correct = 0;
    for (text, y) in &test_set {
        let toks = model.tokens(text);
        let (enc, _) = encode_text(&model.params, &model.config, &toks, None)?;
        let logit = enc.z.dot(&w.column(0)) + b[[0, 0]];
        if (logit > 0.0) == (*y > 0.5) {
            correct += 1;
        }
    }
    Ok(LeakageResult {
        accuracy: correct as f64 / test_set.len() as f64,
        n_test: test_set.len(),
    })
}
