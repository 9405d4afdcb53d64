//! Reverse-mode gradients for the transformer, written out by hand.

use std::sync::Arc;

use super::transformer::{embed_rows, gelu_grad, layer_forward, rmsnorm, LayerCache, LayerWeights};
use super::{ModelError, TokenId, TransformerModel};
use crate::linalg::{axpy, dot, gemm_nn, gemm_nt, gemm_tn, Matrix};

/// Mean next-token cross-entropy over every position of every sequence, and
/// its gradient with respect to all weights.
///
/// Each sequence supplies inputs `seq[..len-1]` and targets `seq[1..]`.
pub fn loss_and_grad(
    model: &TransformerModel,
    sequences: &[Vec<TokenId>],
) -> Result<(f64, TransformerModel), ModelError> {
    let total: usize = sequences.iter().map(|s| s.len().saturating_sub(1)).sum();
    if total == 0 {
        return Err(ModelError::EmptySequence);
    }
    let mut grads = model.zeros_like();
    let mut loss = 0.0;
    for seq in sequences {
        if seq.len() < 2 {
            continue;
        }
        loss += sequence_backward(model, seq, total as f64, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Mean next-token cross-entropy without gradients.
pub fn loss(model: &TransformerModel, sequences: &[Vec<TokenId>]) -> Result<f64, ModelError> {
    let mut total = 0usize;
    let mut acc = 0.0;
    for seq in sequences {
        if seq.len() < 2 {
            continue;
        }
        let logits = model.forward(&seq[..seq.len() - 1])?.transpose();
        for (i, &target) in seq[1..].iter().enumerate() {
            acc += cross_entropy_row(logits.row(i), target as usize).0;
            total += 1;
        }
    }
    if total == 0 {
        return Err(ModelError::EmptySequence);
    }
    Ok(acc / total as f64)
}

/// Returns `(-log p[target], softmax)` for one row of logits.
fn cross_entropy_row(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    let nll = -(logits[target] - max - total.ln());
    (nll, p)
}

/// Forward and backward for one sequence; gradients are accumulated with
/// the loss divided by `norm`. Returns this sequence's share of the loss.
fn sequence_backward(
    model: &TransformerModel,
    seq: &[TokenId],
    norm: f64,
    grads: &mut TransformerModel,
) -> Result<f64, ModelError> {
    let cfg = &model.config;
    let inputs = &seq[..seq.len() - 1];
    let targets = &seq[1..];

    let mut x = embed_rows(cfg, &model.embedding, inputs)?;
    let mut caches = Vec::with_capacity(cfg.n_layers);
    for layer in &model.layers {
        let (y, cache) = layer_forward(cfg, layer, &x);
        caches.push(cache);
        x = y;
    }
    let (normed, inv_out) = rmsnorm(&x, &model.output.norm);
    let logits = gemm_nn(&normed, &model.output.lm_head);

    let mut loss = 0.0;
    let mut dlogits = Matrix::zeros(logits.rows(), logits.cols());
    for (i, &t) in targets.iter().enumerate() {
        let (nll, p) = cross_entropy_row(logits.row(i), t as usize);
        loss += nll / norm;
        let row = dlogits.row_mut(i);
        for (g, pj) in row.iter_mut().zip(p) {
            *g = pj / norm;
        }
        row[t as usize] -= 1.0 / norm;
    }

    let out_g = Arc::make_mut(&mut grads.output);
    add_into(&mut out_g.lm_head, &gemm_tn(&normed, &dlogits));
    let dnormed = gemm_nt(&dlogits, &model.output.lm_head);
    let mut dx = rmsnorm_backward(&x, &inv_out, &model.output.norm, &dnormed, &mut out_g.norm);

    for (l, cache) in caches.iter().enumerate().rev() {
        let g = Arc::make_mut(&mut grads.layers[l]);
        dx = layer_backward(cfg.n_heads, &model.layers[l], cache, &dx, g);
    }

    let emb_g = Arc::make_mut(&mut grads.embedding);
    for (i, &t) in inputs.iter().enumerate() {
        axpy(emb_g.tokens.row_mut(t as usize), 1.0, dx.row(i));
        axpy(emb_g.positions.row_mut(i), 1.0, dx.row(i));
    }
    Ok(loss)
}

fn add_into(acc: &mut Matrix, delta: &Matrix) {
    axpy(acc.as_mut_slice(), 1.0, delta.as_slice());
}

fn add_col_sums(acc: &mut [f64], m: &Matrix) {
    for i in 0..m.rows() {
        axpy(acc, 1.0, m.row(i));
    }
}

/// Backward through `y = g ⊙ x / rms(x)`; accumulates the gain gradient.
fn rmsnorm_backward(
    x: &Matrix,
    inv: &[f64],
    gain: &[f64],
    dy: &Matrix,
    dgain: &mut [f64],
) -> Matrix {
    let d = x.cols() as f64;
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    for (i, &r) in inv.iter().enumerate() {
        let (xr, dyr) = (x.row(i), dy.row(i));
        let mut weighted = 0.0;
        for j in 0..xr.len() {
            dgain[j] += dyr[j] * xr[j] * r;
            weighted += dyr[j] * gain[j] * xr[j];
        }
        let coef = r * r * r * weighted / d;
        for ((o, (&xj, &dyj)), &gj) in dx.row_mut(i).iter_mut().zip(xr.iter().zip(dyr)).zip(gain) {
            *o = r * gj * dyj - coef * xj;
        }
    }
    dx
}

fn layer_backward(
    n_heads: usize,
    w: &LayerWeights,
    c: &LayerCache,
    dy: &Matrix,
    g: &mut LayerWeights,
) -> Matrix {
    let n = dy.rows();
    let d = dy.cols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // Feed-forward branch: y = x_mid + gelu(b·w1 + b1)·w2 + b2.
    add_into(&mut g.w2, &gemm_tn(&c.act, dy));
    add_col_sums(&mut g.b2, dy);
    let mut dpre = gemm_nt(dy, &w.w2);
    for (dp, &z) in dpre.as_mut_slice().iter_mut().zip(c.pre.as_slice()) {
        *dp *= gelu_grad(z);
    }
    add_into(&mut g.w1, &gemm_tn(&c.b, &dpre));
    add_col_sums(&mut g.b1, &dpre);
    let db = gemm_nt(&dpre, &w.w1);
    let mut dx_mid = rmsnorm_backward(&c.x_mid, &c.inv2, &w.ffn_norm, &db, &mut g.ffn_norm);
    add_into(&mut dx_mid, dy);

    // Attention branch: x_mid = x + ctx·wo.
    add_into(&mut g.wo, &gemm_tn(&c.ctx, &dx_mid));
    let dctx = gemm_nt(&dx_mid, &w.wo);
    let mut dq = Matrix::zeros(n, d);
    let mut dk = Matrix::zeros(n, d);
    let mut dv = Matrix::zeros(n, d);
    for head in 0..n_heads {
        let cols = head * dh..(head + 1) * dh;
        let p = &c.probs[head];
        for i in 0..n {
            let dci = &dctx.row(i)[cols.clone()];
            let pi = &p.row(i)[..=i];
            // dp_ij = dctx_i · v_j, then softmax backward.
            let dp: Vec<f64> = (0..=i)
                .map(|j| dot(dci, &c.v.row(j)[cols.clone()]))
                .collect();
            let inner: f64 = pi.iter().zip(&dp).map(|(a, b)| a * b).sum();
            for j in 0..=i {
                let pij = pi[j];
                axpy(&mut dv.row_mut(j)[cols.clone()], pij, dci);
                let ds = pij * (dp[j] - inner) * scale;
                if ds != 0.0 {
                    axpy(
                        &mut dq.row_mut(i)[cols.clone()],
                        ds,
                        &c.k.row(j)[cols.clone()],
                    );
                    axpy(
                        &mut dk.row_mut(j)[cols.clone()],
                        ds,
                        &c.q.row(i)[cols.clone()],
                    );
                }
            }
        }
    }
    add_into(&mut g.wq, &gemm_tn(&c.a, &dq));
    add_into(&mut g.wk, &gemm_tn(&c.a, &dk));
    add_into(&mut g.wv, &gemm_tn(&c.a, &dv));
    let mut da = gemm_nt(&dq, &w.wq);
    add_into(&mut da, &gemm_nt(&dk, &w.wk));
    add_into(&mut da, &gemm_nt(&dv, &w.wv));
    let mut dx = rmsnorm_backward(&c.x, &c.inv1, &w.attn_norm, &da, &mut g.attn_norm);
    add_into(&mut dx, &dx_mid);
    dx
}
