use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub use_vae: bool,
    pub use_reconstruction: bool,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    /// Width of the decoder's positional code.
    pub pos_dim: usize,
    pub max_tokens: usize,
    /// Amplitude of the positional code added to token embeddings.
    pub text_position_scale: f64,
    pub seed: u64,
    /// Filled in from the data when the model is built.
    pub vocab_size: usize,
    pub feature_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            use_vae: false,
            use_reconstruction: false,
            embed_dim: 32,
            hidden_dim: 64,
            latent_dim: 32,
            pos_dim: 8,
            max_tokens: 77,
            text_position_scale: 0.35,
            seed: 0,
            vocab_size: 0,
            feature_dim: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("latent_dim", self.latent_dim),
            ("max_tokens", self.max_tokens),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if !self.embed_dim.is_multiple_of(2) {
            return Err(Error::config("embed_dim", "must be even (sin/cos positional pairs)"));
        }
        if self.use_reconstruction && (self.pos_dim == 0 || !self.pos_dim.is_multiple_of(2)) {
            return Err(Error::config("pos_dim", "must be positive and even when reconstruction is on"));
        }
        if !(self.text_position_scale >= 0.0 && self.text_position_scale.is_finite()) {
            return Err(Error::config("text_position_scale", "must be finite and non-negative"));
        }
        if self.vocab_size < 2 {
            return Err(Error::config("vocab_size", "vocabulary needs at least PAD and UNK"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim", "must be positive"));
        }
        Ok(())
    }
}

/// Variational mean / log-variance maps applied to a tower's output.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeHead {
    pub mu_w: Array2<f64>,
    pub mu_b: Array2<f64>,
    pub lv_w: Array2<f64>,
    pub lv_b: Array2<f64>,
}

/// Per-position layer `e -> h` with tanh, mean-pool, then `h -> d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
    pub vae: Option<VaeHead>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub token_embedding: Array2<f64>,
    pub text: Tower,
    pub motion_in_w: Array2<f64>,
    pub motion_in_b: Array2<f64>,
    pub motion: Tower,
    pub decoder: Option<Decoder>,
}

fn glorot(r: &mut rng::Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || r.random_range(-a..a))
}

fn bias(n: usize) -> Array2<f64> {
    Array2::zeros((1, n))
}

fn tower(r: &mut rng::Rng, e: usize, h: usize, d: usize, vae: bool) -> Tower {
    Tower {
        w1: glorot(r, e, h),
        b1: bias(h),
        w2: glorot(r, h, d),
        b2: bias(d),
        vae: vae.then(|| VaeHead {
            mu_w: glorot(r, d, d),
            mu_b: bias(d),
            lv_w: glorot(r, d, d),
            lv_b: bias(d),
        }),
    }
}

/// Glorot-uniform affine weights, zero biases, `N(0, 0.02^2)` token
/// embeddings.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    let mut r = rng::seeded(seed, &[0x1417]);
    let (e, h, d) = (config.embed_dim, config.hidden_dim, config.latent_dim);
    let normal = Normal::new(0.0, 0.02).expect("valid std");
    let token_embedding = Array2::from_shape_simple_fn((config.vocab_size, e), || normal.sample(&mut r));
    let text = tower(&mut r, e, h, d, config.use_vae);
    let motion_in_w = glorot(&mut r, config.feature_dim, e);
    let motion_in_b = bias(e);
    let motion = tower(&mut r, e, h, d, config.use_vae);
    let decoder = config.use_reconstruction.then(|| Decoder {
        w1: glorot(&mut r, d + config.pos_dim, h),
        b1: bias(h),
        w2: glorot(&mut r, h, config.feature_dim),
        b2: bias(config.feature_dim),
    });
    Ok(EncoderParams {
        token_embedding,
        text,
        motion_in_w,
        motion_in_b,
        motion,
        decoder,
    })
}

/// Half-width of the Glorot range for an affine weight of this shape.
pub fn glorot_bound(shape: (usize, usize)) -> f64 {
    (6.0 / (shape.0 + shape.1) as f64).sqrt()
}

macro_rules! tower_entries {
    ($t:expr, $prefix:literal, $out:ident) => {
        $out.push(concat!($prefix, ".w1"), &$t.w1);
        $out.push(concat!($prefix, ".b1"), &$t.b1);
        $out.push(concat!($prefix, ".w2"), &$t.w2);
        $out.push(concat!($prefix, ".b2"), &$t.b2);
        if let Some(v) = &$t.vae {
            $out.push(concat!($prefix, ".mu_w"), &v.mu_w);
            $out.push(concat!($prefix, ".mu_b"), &v.mu_b);
            $out.push(concat!($prefix, ".lv_w"), &v.lv_w);
            $out.push(concat!($prefix, ".lv_b"), &v.lv_b);
        }
    };
}

macro_rules! tower_entries_mut {
    ($t:expr, $prefix:literal, $out:ident) => {
        $out.push((concat!($prefix, ".w1"), &mut $t.w1));
        $out.push((concat!($prefix, ".b1"), &mut $t.b1));
        $out.push((concat!($prefix, ".w2"), &mut $t.w2));
        $out.push((concat!($prefix, ".b2"), &mut $t.b2));
        if let Some(v) = &mut $t.vae {
            $out.push((concat!($prefix, ".mu_w"), &mut v.mu_w));
            $out.push((concat!($prefix, ".mu_b"), &mut v.mu_b));
            $out.push((concat!($prefix, ".lv_w"), &mut v.lv_w));
            $out.push((concat!($prefix, ".lv_b"), &mut v.lv_b));
        }
    };
}

struct Entries<'a>(Vec<(&'static str, &'a Array2<f64>)>);

impl<'a> Entries<'a> {
    fn push(&mut self, name: &'static str, t: &'a Array2<f64>) {
        self.0.push((name, t));
    }
}

impl EncoderParams {
    /// Every tensor with its stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Array2<f64>)> {
        let mut out = Entries(Vec::new());
        out.push("text.token_embedding", &self.token_embedding);
        tower_entries!(self.text, "text", out);
        out.push("motion.in_w", &self.motion_in_w);
        out.push("motion.in_b", &self.motion_in_b);
        tower_entries!(self.motion, "motion", out);
        if let Some(d) = &self.decoder {
            out.push("decoder.w1", &d.w1);
            out.push("decoder.b1", &d.b1);
            out.push("decoder.w2", &d.w2);
            out.push("decoder.b2", &d.b2);
        }
        out.0
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Array2<f64>)> {
        let mut out: Vec<(&'static str, &mut Array2<f64>)> = Vec::new();
        out.push(("text.token_embedding", &mut self.token_embedding));
        tower_entries_mut!(self.text, "text", out);
        out.push(("motion.in_w", &mut self.motion_in_w));
        out.push(("motion.in_b", &mut self.motion_in_b));
        tower_entries_mut!(self.motion, "motion", out);
        if let Some(d) = &mut self.decoder {
            out.push(("decoder.w1", &mut d.w1));
            out.push(("decoder.b1", &mut d.b1));
            out.push(("decoder.w2", &mut d.w2));
            out.push(("decoder.b2", &mut d.b2));
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += other`, tensor-wise.
    pub fn add_assign(&mut self, other: &Self) {
        let theirs = other.tensors();
        for ((_, mine), (_, t)) in self.tensors_mut().into_iter().zip(theirs) {
            *mine += t;
        }
    }

    /// Rebuilds the parameter layout of `config` from named tensors.
    pub fn from_named(config: &ModelConfig, mut named: impl FnMut(&str) -> Option<Array2<f64>>) -> Result<Self> {
        let mut p = init_params(config, 0)?;
        for (name, t) in p.tensors_mut() {
            let loaded = named(name).ok_or_else(|| Error::config(name, "tensor missing from checkpoint"))?;
            if loaded.dim() != t.dim() {
                return Err(Error::shape(name, format!("{:?}", t.dim()), format!("{:?}", loaded.dim())));
            }
            *t = loaded;
        }
        Ok(p)
    }
}
