//! Two-tower text/motion encoders with optional variational heads and a
//! per-frame motion decoder, plus the fused forward/backward pass used by
//! training.

pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod params;
pub mod vocab;

use ndarray::{Array1, Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::objective::{
    contrastive_loss, embedding_similarity_loss, kl_loss, reconstruction_loss, similarity_backward, similarity_block,
    total_loss, LossComponents, LossConfig,
};
use crate::rng;

pub use checkpoint::Checkpoint;
pub use decoder::decode_motion;
pub use encoder::{encode_motion, encode_text, Encoded, OutputGrad, VariationalStats};
pub use params::{init_params, EncoderParams, ModelConfig};
pub use vocab::Vocabulary;

/// Encoders bundled with the vocabulary they were built against.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: EncoderParams,
}

fn unit(z: Array1<f64>, what: &str) -> Result<Array1<f64>> {
    let n = z.dot(&z).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::ZeroNorm(what.to_string()));
    }
    Ok(z / n)
}

impl Model {
    pub fn new(mut config: ModelConfig, vocab: Vocabulary, feature_dim: usize) -> Result<Self> {
        config.vocab_size = vocab.len();
        config.feature_dim = feature_dim;
        let params = init_params(&config, config.seed)?;
        Ok(Self { config, vocab, params })
    }

    pub fn tokens(&self, text: &str) -> Vec<usize> {
        self.vocab.encode(text, self.config.max_tokens)
    }

    /// Unit-norm retrieval embedding of a text. Variational towers use the
    /// mean.
    pub fn embed_text(&self, text: &str) -> Result<Array1<f64>> {
        let (enc, _) = encode_text(&self.params, &self.config, &self.tokens(text), None)?;
        unit(enc.z, "text embedding")
    }

    pub fn embed_motion(&self, features: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let (enc, _) = encode_motion(&self.params, &self.config, features, None)?;
        unit(enc.z, "motion embedding")
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(&self.config, &self.vocab, &self.params)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(Self {
            config: ck.config.clone(),
            vocab: ck.vocab.clone(),
            params: ck.params("")?,
        })
    }
}

/// A negative text and the batch index of the sample it was shuffled from.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeTokens {
    pub tokens: Vec<usize>,
    pub origin: usize,
}

#[derive(Debug, Clone)]
pub struct PairBatch<'a> {
    pub texts: Vec<Vec<usize>>,
    pub motions: Vec<ArrayView2<'a, f64>>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: f64,
    pub components: LossComponents,
    pub grads: EncoderParams,
}

fn draw_eps(seed: u64, tower: u64, idx: usize, d: usize) -> Array1<f64> {
    let mut r = rng::seeded(seed, &[tower, idx as u64]);
    Array1::from_shape_simple_fn(d, || StandardNormal.sample(&mut r))
}

fn check_finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(name.to_string()))
    }
}

/// Total loss and its exact gradient for every parameter. Variational noise
/// is drawn from `noise_seed` and is therefore frozen for a fixed seed.
pub fn forward_backward(
    params: &EncoderParams,
    config: &ModelConfig,
    batch: &PairBatch<'_>,
    negatives: &[NegativeTokens],
    loss: &LossConfig,
    noise_seed: u64,
) -> Result<StepOutput> {
    let n = batch.motions.len();
    if n == 0 {
        return Err(Error::EmptyInput("batch"));
    }
    if batch.texts.len() != n {
        return Err(Error::shape("batch texts", n, batch.texts.len()));
    }
    if let Some(bad) = negatives.iter().find(|g| g.origin >= n) {
        return Err(Error::shape("negative origin", format!("< {n}"), bad.origin));
    }
    let w = &loss.weights;
    w.validate()?;
    let d = config.latent_dim;
    let eps = |tower: u64, idx: usize| config.use_vae.then(|| draw_eps(noise_seed, tower, idx, d));

    let mut text_enc = Vec::with_capacity(n + negatives.len());
    let mut text_cache = Vec::with_capacity(n + negatives.len());
    for (i, toks) in batch.texts.iter().chain(negatives.iter().map(|g| &g.tokens)).enumerate() {
        let (e, c) = encode_text(params, config, toks, eps(0, i).as_ref())?;
        text_enc.push(e);
        text_cache.push(c);
    }
    let mut motion_enc = Vec::with_capacity(n);
    let mut motion_cache = Vec::with_capacity(n);
    for (i, m) in batch.motions.iter().enumerate() {
        let (e, c) = encode_motion(params, config, m.view(), eps(1, i).as_ref())?;
        motion_enc.push(e);
        motion_cache.push(c);
    }

    let tz: Vec<Array1<f64>> = text_enc.iter().map(|e| e.z.clone()).collect();
    let mz: Vec<Array1<f64>> = motion_enc.iter().map(|e| e.z.clone()).collect();
    let block = similarity_block(&tz, &mz, negatives.iter().map(|g| g.origin).collect())?;
    let con = contrastive_loss(&block.s, w.temperature)?;
    let mut components = LossComponents {
        t2m: check_finite("t2m", con.t2m)?,
        m2t: check_finite("m2t", con.m2t)?,
        ..Default::default()
    };
    let (mut dtz, mut dmz) = similarity_backward(&tz, &mz, &(con.grad * w.contrastive))?;

    let (le, dte, dme) = embedding_similarity_loss(&tz[..n], &mz, loss.embedding_kind)?;
    components.embedding = Some(check_finite("embedding", le)?);
    for i in 0..n {
        dtz[i].scaled_add(w.embedding, &dte[i]);
        dmz[i].scaled_add(w.embedding, &dme[i]);
    }

    let mut grads = params.zeros_like();
    let mut text_stat_grads = vec![None; tz.len()];
    let mut motion_stat_grads = vec![None; n];
    if config.use_vae {
        fn stats(e: &Encoded) -> (&Array1<f64>, &Array1<f64>) {
            let s = e.stats.as_ref().expect("variational tower yields stats");
            (&s.mu, &s.logvar)
        }
        let tstats: Vec<_> = text_enc[..n].iter().map(stats).collect();
        let mstats: Vec<_> = motion_enc.iter().map(stats).collect();
        let (kt, gt) = kl_loss(&tstats)?;
        let (km, gm) = kl_loss(&mstats)?;
        components.kl = Some(check_finite("kl", kt + km)?);
        for (slot, (dmu, dlv)) in text_stat_grads.iter_mut().zip(gt) {
            *slot = Some((dmu * w.kl, dlv * w.kl));
        }
        for (slot, (dmu, dlv)) in motion_stat_grads.iter_mut().zip(gm) {
            *slot = Some((dmu * w.kl, dlv * w.kl));
        }
    }

    if config.use_reconstruction {
        let dec = params.decoder.as_ref().ok_or(Error::DecoderAbsent)?;
        let gdec = grads.decoder.as_mut().expect("gradient layout mirrors params");
        let mut total = 0.0;
        let scale = w.reconstruction / (2.0 * n as f64);
        for i in 0..n {
            let target = batch.motions[i].to_owned();
            for (z, dz) in [(&tz[i], &mut dtz[i]), (&mz[i], &mut dmz[i])] {
                let (out, cache) = decode_motion(params, config, z, target.nrows())?;
                let (v, g) = reconstruction_loss(&out, &target)?;
                total += v;
                let dl = decoder::backward_decoder(dec, &cache, &(g * scale), gdec);
                *dz += &dl;
            }
        }
        components.reconstruction = Some(check_finite("reconstruction", total / (2.0 * n as f64))?);
    }

    let value = check_finite("total", total_loss(&components, w)?)?;

    let with_stats = |dz: Array1<f64>, s: Option<(Array1<f64>, Array1<f64>)>| {
        let mut g = OutputGrad::new(dz);
        if let Some((dmu, dlv)) = s {
            g.dmu = Some(dmu);
            g.dlogvar = Some(dlv);
        }
        g
    };
    for ((cache, dz), s) in text_cache.iter().zip(dtz).zip(text_stat_grads) {
        encoder::backward_text(params, cache, &with_stats(dz, s), &mut grads);
    }
    for ((cache, dz), s) in motion_cache.iter().zip(dmz).zip(motion_stat_grads) {
        encoder::backward_motion(params, cache, &with_stats(dz, s), &mut grads);
    }
    Ok(StepOutput {
        loss: value,
        components,
        grads,
    })
}

/// Convenience for callers holding `f32` features.
pub fn features_f64(features: &ndarray::Array2<f32>) -> Array2<f64> {
    features.mapv(f64::from)
}
