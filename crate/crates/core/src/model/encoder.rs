use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::params::{EncoderParams, ModelConfig, Tower};
use super::vocab::PAD;
use crate::error::{Error, Result};

/// Sinusoidal code of the fractional position `t / (len - 1)`, so a clause
/// at the start of a text and one at its end get distinct codes whatever
/// the text length. Column pairs are (sin, cos) at frequencies
/// `k * pi / 2`, `k = 1..=width/2`.
pub fn relative_positions(len: usize, width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((len, width));
    let denom = (len.max(2) - 1) as f64;
    for t in 0..len {
        let u = t as f64 / denom;
        for k in 0..width / 2 {
            let w = (k + 1) as f64 * std::f64::consts::FRAC_PI_2;
            out[[t, 2 * k]] = (w * u).sin();
            out[[t, 2 * k + 1]] = (w * u).cos();
        }
    }
    out
}

/// Standard absolute sinusoidal code for frame index `t`.
pub fn absolute_positions(len: usize, width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((len, width));
    for t in 0..len {
        for i in 0..width / 2 {
            let rate = 10000f64.powf(2.0 * i as f64 / width as f64);
            out[[t, 2 * i]] = (t as f64 / rate).sin();
            out[[t, 2 * i + 1]] = (t as f64 / rate).cos();
        }
    }
    out
}

/// Mean and log-variance of a variational embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalStats {
    pub mu: Array1<f64>,
    pub logvar: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    /// Unit-norm on the deterministic path; the sampled latent (or the mean
    /// when no noise is given) on the variational path.
    pub z: Array1<f64>,
    pub stats: Option<VariationalStats>,
}

#[derive(Debug, Clone)]
enum HeadCache {
    Normalized { norm: f64, z: Array1<f64> },
    Variational { logvar: Array1<f64>, eps: Option<Array1<f64>> },
}

#[derive(Debug, Clone)]
pub struct TowerCache {
    input: Array2<f64>,
    hidden: Array2<f64>,
    mask: Vec<bool>,
    count: usize,
    pooled: Array1<f64>,
    pre: Array1<f64>,
    head: HeadCache,
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

fn row(b: &Array2<f64>) -> ndarray::ArrayView1<'_, f64> {
    b.row(0)
}

fn tower_forward(t: &Tower, input: Array2<f64>, mask: Vec<bool>, eps: Option<&Array1<f64>>) -> Result<(Encoded, TowerCache)> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::EmptyInput("no non-PAD positions to pool"));
    }
    let mut hidden = input.dot(&t.w1);
    hidden += &row(&t.b1);
    hidden.mapv_inplace(f64::tanh);
    let mut pooled = Array1::zeros(hidden.ncols());
    for (r, &m) in hidden.outer_iter().zip(&mask) {
        if m {
            pooled += &r;
        }
    }
    pooled /= count as f64;
    let pre = pooled.dot(&t.w2) + row(&t.b2);
    let (encoded, head) = match &t.vae {
        None => {
            let norm = pre.dot(&pre).sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::ZeroNorm("encoder output".into()));
            }
            let z = &pre / norm;
            (Encoded { z: z.clone(), stats: None }, HeadCache::Normalized { norm, z })
        }
        Some(v) => {
            let mu = pre.dot(&v.mu_w) + row(&v.mu_b);
            let logvar = pre.dot(&v.lv_w) + row(&v.lv_b);
            let z = match eps {
                Some(e) => &mu + &(logvar.mapv(|l| (0.5 * l).exp()) * e),
                None => mu.clone(),
            };
            (
                Encoded {
                    z,
                    stats: Some(VariationalStats {
                        mu,
                        logvar: logvar.clone(),
                    }),
                },
                HeadCache::Variational {
                    logvar,
                    eps: eps.cloned(),
                },
            )
        }
    };
    Ok((
        encoded,
        TowerCache {
            input,
            hidden,
            mask,
            count,
            pooled,
            pre,
            head,
        },
    ))
}

/// Gradient of the upstream loss with respect to one encoder output.
#[derive(Debug, Clone)]
pub struct OutputGrad {
    pub dz: Array1<f64>,
    /// Extra terms from losses on the variational statistics (KL).
    pub dmu: Option<Array1<f64>>,
    pub dlogvar: Option<Array1<f64>>,
}

impl OutputGrad {
    pub fn new(dz: Array1<f64>) -> Self {
        Self { dz, dmu: None, dlogvar: None }
    }
}

fn tower_backward(t: &Tower, cache: &TowerCache, grad: &OutputGrad, g: &mut Tower) -> Array2<f64> {
    let dpre = match (&cache.head, &t.vae) {
        (HeadCache::Normalized { norm, z }, _) => {
            let proj = z.dot(&grad.dz);
            (&grad.dz - &(z * proj)) / *norm
        }
        (HeadCache::Variational { logvar, eps }, Some(v)) => {
            let mut dmu = grad.dz.clone();
            if let Some(extra) = &grad.dmu {
                dmu += extra;
            }
            let mut dlv = match eps {
                Some(e) => &grad.dz * e * &logvar.mapv(|l| 0.5 * (0.5 * l).exp()),
                None => Array1::zeros(logvar.len()),
            };
            if let Some(extra) = &grad.dlogvar {
                dlv += extra;
            }
            let gv = g.vae.as_mut().expect("gradient layout mirrors params");
            gv.mu_w += &outer(&cache.pre, &dmu);
            gv.mu_b.row_mut(0).scaled_add(1.0, &dmu);
            gv.lv_w += &outer(&cache.pre, &dlv);
            gv.lv_b.row_mut(0).scaled_add(1.0, &dlv);
            v.mu_w.dot(&dmu) + v.lv_w.dot(&dlv)
        }
        (HeadCache::Variational { .. }, None) => unreachable!("variational cache without head"),
    };
    g.w2 += &outer(&cache.pooled, &dpre);
    g.b2.row_mut(0).scaled_add(1.0, &dpre);
    let dpooled = t.w2.dot(&dpre) / cache.count as f64;
    let mut dact = Array2::zeros(cache.hidden.raw_dim());
    for ((mut d, h), &m) in dact.outer_iter_mut().zip(cache.hidden.outer_iter()).zip(&cache.mask) {
        if m {
            d.assign(&(&dpooled * &h.mapv(|v| 1.0 - v * v)));
        }
    }
    g.w1 += &cache.input.t().dot(&dact);
    g.b1.row_mut(0).scaled_add(1.0, &dact.sum_axis(Axis(0)));
    dact.dot(&t.w1.t())
}

#[derive(Debug, Clone)]
pub struct TextCache {
    tokens: Vec<usize>,
    tower: TowerCache,
}

#[derive(Debug, Clone)]
pub struct MotionCache {
    features: Array2<f64>,
    tower: TowerCache,
}

pub fn encode_text(
    params: &EncoderParams,
    config: &ModelConfig,
    tokens: &[usize],
    eps: Option<&Array1<f64>>,
) -> Result<(Encoded, TextCache)> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("token list"));
    }
    if tokens.len() > config.max_tokens {
        return Err(Error::shape("token list", format!("<= {}", config.max_tokens), tokens.len()));
    }
    let vocab = params.token_embedding.nrows();
    if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
        return Err(Error::UnknownToken { id: bad, vocab });
    }
    let mut input = relative_positions(tokens.len(), config.embed_dim) * config.text_position_scale;
    for (mut r, &tok) in input.outer_iter_mut().zip(tokens) {
        r += &params.token_embedding.row(tok);
    }
    let mask = tokens.iter().map(|&t| t != PAD).collect();
    let (enc, tower) = tower_forward(&params.text, input, mask, eps)?;
    Ok((
        enc,
        TextCache {
            tokens: tokens.to_vec(),
            tower,
        },
    ))
}

pub fn encode_motion(
    params: &EncoderParams,
    config: &ModelConfig,
    features: ArrayView2<'_, f64>,
    eps: Option<&Array1<f64>>,
) -> Result<(Encoded, MotionCache)> {
    if features.nrows() == 0 {
        return Err(Error::EmptyInput("motion frames"));
    }
    if features.ncols() != params.motion_in_w.nrows() {
        return Err(Error::shape("motion features", params.motion_in_w.nrows(), features.ncols()));
    }
    let mut input = features.dot(&params.motion_in_w);
    input += &row(&params.motion_in_b);
    input += &relative_positions(features.nrows(), config.embed_dim);
    let mask = vec![true; features.nrows()];
    let (enc, tower) = tower_forward(&params.motion, input, mask, eps)?;
    Ok((
        enc,
        MotionCache {
            features: features.to_owned(),
            tower,
        },
    ))
}

pub fn backward_text(params: &EncoderParams, cache: &TextCache, grad: &OutputGrad, g: &mut EncoderParams) {
    let dinput = tower_backward(&params.text, &cache.tower, grad, &mut g.text);
    for (r, &tok) in dinput.outer_iter().zip(&cache.tokens) {
        let mut dst = g.token_embedding.row_mut(tok);
        dst += &r;
    }
}

pub fn backward_motion(params: &EncoderParams, cache: &MotionCache, grad: &OutputGrad, g: &mut EncoderParams) {
    let dinput = tower_backward(&params.motion, &cache.tower, grad, &mut g.motion);
    g.motion_in_w += &cache.features.t().dot(&dinput);
    g.motion_in_b.row_mut(0).scaled_add(1.0, &dinput.sum_axis(Axis(0)));
}
