use ndarray::{s, Array1, Array2, Axis};

use super::encoder::absolute_positions;
use super::params::{Decoder, EncoderParams, ModelConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DecoderCache {
    input: Array2<f64>,
    hidden: Array2<f64>,
    latent_dim: usize,
}

/// Per-frame output `decoder(latent ++ code(t))` for `t = 0..n_frames`.
pub fn decode_motion(
    params: &EncoderParams,
    config: &ModelConfig,
    latent: &Array1<f64>,
    n_frames: usize,
) -> Result<(Array2<f64>, DecoderCache)> {
    let dec = params.decoder.as_ref().ok_or(Error::DecoderAbsent)?;
    if n_frames == 0 {
        return Err(Error::EmptyInput("n_frames"));
    }
    let d = latent.len();
    if d + config.pos_dim != dec.w1.nrows() {
        return Err(Error::shape("decoder input", dec.w1.nrows() - config.pos_dim, d));
    }
    let mut input = Array2::zeros((n_frames, d + config.pos_dim));
    input.slice_mut(s![.., ..d]).assign(&latent.view().insert_axis(Axis(0)).broadcast((n_frames, d)).expect("broadcast"));
    input.slice_mut(s![.., d..]).assign(&absolute_positions(n_frames, config.pos_dim));
    let mut hidden = input.dot(&dec.w1);
    hidden += &dec.b1.row(0);
    hidden.mapv_inplace(f64::tanh);
    let mut out = hidden.dot(&dec.w2);
    out += &dec.b2.row(0);
    Ok((
        out,
        DecoderCache {
            input,
            hidden,
            latent_dim: d,
        },
    ))
}

/// Accumulates decoder gradients and returns the gradient w.r.t. the latent.
pub fn backward_decoder(dec: &Decoder, cache: &DecoderCache, dout: &Array2<f64>, g: &mut Decoder) -> Array1<f64> {
    g.w2 += &cache.hidden.t().dot(dout);
    g.b2.row_mut(0).scaled_add(1.0, &dout.sum_axis(Axis(0)));
    let mut dact = dout.dot(&dec.w2.t());
    dact.zip_mut_with(&cache.hidden, |d, &h| *d *= 1.0 - h * h);
    g.w1 += &cache.input.t().dot(&dact);
    g.b1.row_mut(0).scaled_add(1.0, &dact.sum_axis(Axis(0)));
    let dinput = dact.dot(&dec.w1.t());
    dinput.slice(s![.., ..cache.latent_dim]).sum_axis(Axis(0))
}
