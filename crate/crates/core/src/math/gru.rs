//! Gated recurrent unit with hand-derived backward pass.
//!
//! Update rule (gate rows stacked as `[reset; update; candidate]`):
//!
//! ```text
//! r  = σ(W_r x + U_r h + b_r)
//! z  = σ(W_z x + U_z h + b_z)
//! n  = tanh(W_n x + U_n (r ⊙ h) + b_n)
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```

use super::activation::sigmoid;
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{
    matvec_rows, matvec_rows_t_acc, outer_acc_rows, Tensor,
};
use crate::error::{Error, Result};

/// Parameter handles of one GRU cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruParams {
    /// `3H x I` input weights.
    pub input: ParamId,
    /// `3H x H` recurrent weights.
    pub recurrent: ParamId,
    /// `3H` bias.
    pub bias: ParamId,
}

impl GruParams {
    pub fn register<R: rand::Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            input: store.add(
                format!("{prefix}.input"),
                Tensor::uniform(&[3 * hidden, input_dim], scale, rng),
            ),
            recurrent: store.add(
                format!("{prefix}.recurrent"),
                Tensor::uniform(&[3 * hidden, hidden], scale, rng),
            ),
            bias: store.add(
                format!("{prefix}.bias"),
                Tensor::uniform(&[3 * hidden], scale, rng),
            ),
        }
    }

    pub fn hidden(&self, store: &ParamStore) -> usize {
        store.value(self.recurrent).cols()
    }

    pub fn input_dim(&self, store: &ParamStore) -> usize {
        store.value(self.input).cols()
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Clone, Debug)]
pub struct GruCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub reset: Vec<f64>,
    pub update: Vec<f64>,
    pub candidate: Vec<f64>,
    pub reset_h: Vec<f64>,
    pub h: Vec<f64>,
}

/// One forward step, checking dimensions.
pub fn gru_step(store: &ParamStore, p: &GruParams, h_prev: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    let hidden = p.hidden(store);
    if h_prev.len() != hidden || input.len() != p.input_dim(store) {
        return Err(Error::Dimension(format!(
            "gru expects state {} / input {}, got {} / {}",
            hidden,
            p.input_dim(store),
            h_prev.len(),
            input.len()
        )));
    }
    Ok(gru_forward(store, p, h_prev, input).h)
}

pub fn gru_forward(store: &ParamStore, p: &GruParams, h_prev: &[f64], x: &[f64]) -> GruCache {
    let w = store.value(p.input);
    let u = store.value(p.recurrent);
    let b = store.value(p.bias).data();
    let hd = h_prev.len();

    let mut wx = vec![0.0; 3 * hd];
    matvec_rows(w, 0..3 * hd, x, &mut wx);
    let mut uh = vec![0.0; 2 * hd];
    matvec_rows(u, 0..2 * hd, h_prev, &mut uh);

    let mut reset = vec![0.0; hd];
    let mut update = vec![0.0; hd];
    for k in 0..hd {
        reset[k] = sigmoid(wx[k] + uh[k] + b[k]);
        update[k] = sigmoid(wx[hd + k] + uh[hd + k] + b[hd + k]);
    }
    let reset_h: Vec<f64> = reset.iter().zip(h_prev).map(|(r, h)| r * h).collect();
    let mut un = vec![0.0; hd];
    matvec_rows(u, 2 * hd..3 * hd, &reset_h, &mut un);
    let mut candidate = vec![0.0; hd];
    let mut h = vec![0.0; hd];
    for k in 0..hd {
        candidate[k] = (wx[2 * hd + k] + un[k] + b[2 * hd + k]).tanh();
        h[k] = (1.0 - update[k]) * candidate[k] + update[k] * h_prev[k];
    }
    GruCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        reset,
        update,
        candidate,
        reset_h,
        h,
    }
}

/// Backpropagates `dh` (gradient w.r.t. the new state) through one step,
/// accumulating parameter gradients and adding into `dx` and `dh_prev`.
pub fn gru_backward(
    store: &ParamStore,
    p: &GruParams,
    cache: &GruCache,
    dh: &[f64],
    grads: &mut Gradients,
    dx: &mut [f64],
    dh_prev: &mut [f64],
) {
    let hd = dh.len();
    let w = store.value(p.input);
    let u = store.value(p.recurrent);

    let mut da_n = vec![0.0; hd];
    let mut da_z = vec![0.0; hd];
    for k in 0..hd {
        let z = cache.update[k];
        let n = cache.candidate[k];
        dh_prev[k] += dh[k] * z;
        da_n[k] = dh[k] * (1.0 - z) * (1.0 - n * n);
        da_z[k] = dh[k] * (cache.h_prev[k] - n) * z * (1.0 - z);
    }

    // candidate path through r ⊙ h
    let mut d_reset_h = vec![0.0; hd];
    matvec_rows_t_acc(u, 2 * hd..3 * hd, &da_n, &mut d_reset_h);
    let mut da_r = vec![0.0; hd];
    for k in 0..hd {
        let r = cache.reset[k];
        dh_prev[k] += d_reset_h[k] * r;
        da_r[k] = d_reset_h[k] * cache.h_prev[k] * r * (1.0 - r);
    }

    let mut da = Vec::with_capacity(3 * hd);
    da.extend_from_slice(&da_r);
    da.extend_from_slice(&da_z);
    da.extend_from_slice(&da_n);

    matvec_rows_t_acc(w, 0..3 * hd, &da, dx);
    matvec_rows_t_acc(u, 0..2 * hd, &da[..2 * hd], dh_prev);

    outer_acc_rows(grads.get_mut(p.input), 0..3 * hd, &da, &cache.x);
    outer_acc_rows(grads.get_mut(p.recurrent), 0..2 * hd, &da[..2 * hd], &cache.h_prev);
    outer_acc_rows(grads.get_mut(p.recurrent), 2 * hd..3 * hd, &da_n, &cache.reset_h);
    let db = grads.get_mut(p.bias).data_mut();
    for (g, d) in db.iter_mut().zip(&da) {
        *g += d;
    }
}
