// SPDX-License-Identifier: Apache-2.0

//! Forward pass with cached activations and the matching reverse pass.

use super::layers::{conv3x3, conv3x3_backward, dense, dense_backward, MapShape};
use super::{Gradients, ModelWeights, NnError};
use crate::features::{StateTensor, NUM_CHANNELS};
use crate::netlist::NodeFeatures;

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// One logit per grid cell, row-major.
    pub logits: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone)]
struct HeadCache {
    /// Projected features, `[self, neighbors...]` each of `gat_dim`.
    z: Vec<Vec<f64>>,
    /// Pre-activation attention scores.
    scores: Vec<f64>,
    alpha: Vec<f64>,
    out: Vec<f64>,
}

/// Activations retained for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    stem: Vec<f64>,
    /// (conv1 activation, block output) per residual block.
    res: Vec<(Vec<f64>, Vec<f64>)>,
    nodes: Vec<NodeFeatures>,
    heads: Vec<HeadCache>,
    fusion_in: Vec<f64>,
    embed: Vec<f64>,
    policy_hidden: Vec<f64>,
    value_hidden: Vec<f64>,
}

fn tanh_inplace(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.tanh());
}

/// `dy * (1 - y^2)` for `y = tanh(x)`.
fn tanh_grad(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(y, d)| d * (1.0 - y * y)).collect()
}

fn check_shapes(w: &ModelWeights, state: &StateTensor) -> Result<(), NnError> {
    let spec = &w.spec;
    if state.width != spec.width || state.height != spec.height {
        return Err(NnError::ShapeMismatch(format!(
            "state is {}x{}, network expects {}x{}",
            state.width, state.height, spec.width, spec.height
        )));
    }
    if state.channels.len() != NUM_CHANNELS * spec.cells() {
        return Err(NnError::ShapeMismatch(format!(
            "expected {} channel values, found {}",
            NUM_CHANNELS * spec.cells(),
            state.channels.len()
        )));
    }
    if state.current_mask.cells.len() != spec.cells() {
        return Err(NnError::ShapeMismatch("mask does not cover the grid".into()));
    }
    Ok(())
}

pub fn forward(w: &ModelWeights, state: &StateTensor) -> Result<ForwardOutput, NnError> {
    forward_cached(w, state).map(|(out, _)| out)
}

pub fn forward_cached(w: &ModelWeights, state: &StateTensor) -> Result<(ForwardOutput, ForwardCache), NnError> {
    check_shapes(w, state)?;
    let spec = &w.spec;
    let l = &w.layout;
    let p = |i: usize| w.params[i].data.as_slice();
    let c = spec.conv_channels;
    let shape = MapShape {
        width: spec.width,
        height: spec.height,
    };
    let n = shape.cells();

    // Board encoder.
    let mut stem = vec![0.0; c * n];
    conv3x3(shape, NUM_CHANNELS, c, p(l.stem_w), p(l.stem_b), &state.channels, &mut stem);
    tanh_inplace(&mut stem);
    let mut h = stem.clone();
    let mut res = Vec::with_capacity(l.res.len());
    for &[w1, b1, w2, b2] in &l.res {
        let mut t = vec![0.0; c * n];
        conv3x3(shape, c, c, p(w1), p(b1), &h, &mut t);
        tanh_inplace(&mut t);
        let mut v = vec![0.0; c * n];
        conv3x3(shape, c, c, p(w2), p(b2), &t, &mut v);
        for (vi, hi) in v.iter_mut().zip(&h) {
            *vi = (*vi + hi).tanh();
        }
        h = v.clone();
        res.push((t, v));
    }
    let pooled: Vec<f64> = h.chunks(n).map(|ch| ch.iter().sum::<f64>() / n as f64).collect();

    // Graph attention over the current block and its netlist neighbors.
    let mut nodes = Vec::with_capacity(1 + state.neighborhood.len());
    nodes.push(state.current_block);
    nodes.extend_from_slice(&state.neighborhood);
    let gd = spec.gat_dim;
    let zero_bias = vec![0.0; gd];
    let mut heads = Vec::with_capacity(l.heads.len());
    for &[hw, a_self, a_nb] in &l.heads {
        let z: Vec<Vec<f64>> = nodes
            .iter()
            .map(|f| {
                let mut out = vec![0.0; gd];
                dense(p(hw), &zero_bias, f.as_slice(), &mut out);
                out
            })
            .collect();
        let self_term: f64 = p(a_self).iter().zip(&z[0]).map(|(a, b)| a * b).sum();
        let scores: Vec<f64> = z
            .iter()
            .map(|zj| self_term + p(a_nb).iter().zip(zj).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let e: Vec<f64> = scores
            .iter()
            .map(|&s| if s > 0.0 { s } else { LEAKY_SLOPE * s })
            .collect();
        let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = e.iter().map(|v| (v - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        let alpha: Vec<f64> = exps.iter().map(|v| v / total).collect();
        let mut out = vec![0.0; gd];
        for (a, zj) in alpha.iter().zip(&z) {
            for (o, v) in out.iter_mut().zip(zj) {
                *o += a * v;
            }
        }
        tanh_inplace(&mut out);
        heads.push(HeadCache { z, scores, alpha, out });
    }

    // Fusion into the state embedding.
    let mut fusion_in = pooled;
    for head in &heads {
        fusion_in.extend_from_slice(&head.out);
    }
    fusion_in.extend_from_slice(state.current_block.as_slice());
    let mut embed = vec![0.0; spec.embed_dim];
    dense(p(l.fusion_w), p(l.fusion_b), &fusion_in, &mut embed);
    tanh_inplace(&mut embed);

    // Decision layers.
    let mut policy_hidden = vec![0.0; spec.hidden_dim];
    dense(p(l.policy_hidden_w), p(l.policy_hidden_b), &embed, &mut policy_hidden);
    tanh_inplace(&mut policy_hidden);
    let mut logits = vec![0.0; n];
    dense(p(l.policy_out_w), p(l.policy_out_b), &policy_hidden, &mut logits);
    for (ch, &ws) in h.chunks(n).zip(p(l.policy_spatial_w)) {
        for (lg, v) in logits.iter_mut().zip(ch) {
            *lg += ws * v;
        }
    }

    let mut value_hidden = vec![0.0; spec.hidden_dim];
    dense(p(l.value_hidden_w), p(l.value_hidden_b), &embed, &mut value_hidden);
    tanh_inplace(&mut value_hidden);
    let mut value = [0.0];
    dense(p(l.value_out_w), p(l.value_out_b), &value_hidden, &mut value);

    let cache = ForwardCache {
        input: state.channels.clone(),
        stem,
        res,
        nodes,
        heads,
        fusion_in,
        embed,
        policy_hidden,
        value_hidden,
    };
    Ok((ForwardOutput { logits, value: value[0] }, cache))
}

/// Accumulates into `grads` the gradient of a loss whose partials with respect to
/// the logits and the value are `dlogits` and `dvalue`.
pub fn backward(w: &ModelWeights, cache: &ForwardCache, dlogits: &[f64], dvalue: f64, grads: &mut Gradients) {
    let spec = &w.spec;
    let l = &w.layout;
    let p = |i: usize| w.params[i].data.as_slice();
    let c = spec.conv_channels;
    let shape = MapShape {
        width: spec.width,
        height: spec.height,
    };
    let n = shape.cells();
    let board_out: &[f64] = cache.res.last().map_or(&cache.stem, |(_, out)| out);

    // Split borrows of the gradient buffers by index.
    macro_rules! g {
        ($i:expr) => {
            grads.values[$i].as_mut_slice()
        };
    }

    // Policy head.
    let mut d_board = vec![0.0; c * n];
    let mut de = vec![0.0; spec.embed_dim];
    if dlogits.iter().any(|&v| v != 0.0) {
        {
            let dspatial = g!(l.policy_spatial_w);
            for (ci, ch) in board_out.chunks(n).enumerate() {
                dspatial[ci] += ch.iter().zip(dlogits).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        for (ci, &ws) in p(l.policy_spatial_w).iter().enumerate() {
            for (d, g) in d_board[ci * n..(ci + 1) * n].iter_mut().zip(dlogits) {
                *d += ws * g;
            }
        }
        let (mut dw, mut db) = take_pair(grads, l.policy_out_w, l.policy_out_b);
        let dh = dense_backward(p(l.policy_out_w), &cache.policy_hidden, dlogits, &mut dw, &mut db);
        put_pair(grads, l.policy_out_w, l.policy_out_b, dw, db);
        let da = tanh_grad(&cache.policy_hidden, &dh);
        let (mut dw, mut db) = take_pair(grads, l.policy_hidden_w, l.policy_hidden_b);
        let d = dense_backward(p(l.policy_hidden_w), &cache.embed, &da, &mut dw, &mut db);
        put_pair(grads, l.policy_hidden_w, l.policy_hidden_b, dw, db);
        de.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
    }

    // Value head.
    if dvalue != 0.0 {
        let (mut dw, mut db) = take_pair(grads, l.value_out_w, l.value_out_b);
        let dh = dense_backward(p(l.value_out_w), &cache.value_hidden, &[dvalue], &mut dw, &mut db);
        put_pair(grads, l.value_out_w, l.value_out_b, dw, db);
        let da = tanh_grad(&cache.value_hidden, &dh);
        let (mut dw, mut db) = take_pair(grads, l.value_hidden_w, l.value_hidden_b);
        let d = dense_backward(p(l.value_hidden_w), &cache.embed, &da, &mut dw, &mut db);
        put_pair(grads, l.value_hidden_w, l.value_hidden_b, dw, db);
        de.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
    }

    if de.iter().all(|&v| v == 0.0) && d_board.iter().all(|&v| v == 0.0) {
        return;
    }

    // Fusion.
    let da = tanh_grad(&cache.embed, &de);
    let (mut dw, mut db) = take_pair(grads, l.fusion_w, l.fusion_b);
    let d_in = dense_backward(p(l.fusion_w), &cache.fusion_in, &da, &mut dw, &mut db);
    put_pair(grads, l.fusion_w, l.fusion_b, dw, db);

    for (ci, &dp) in d_in[..c].iter().enumerate() {
        let share = dp / n as f64;
        d_board[ci * n..(ci + 1) * n].iter_mut().for_each(|v| *v += share);
    }

    // Graph attention heads.
    let gd = spec.gat_dim;
    for (k, (&[hw, a_self, a_nb], head)) in l.heads.iter().zip(&cache.heads).enumerate() {
        let d_out = &d_in[c + k * gd..c + (k + 1) * gd];
        let d_o = tanh_grad(&head.out, d_out);
        let m = head.z.len();
        let mut dz = vec![vec![0.0; gd]; m];
        let mut d_alpha = vec![0.0; m];
        for j in 0..m {
            for t in 0..gd {
                dz[j][t] += head.alpha[j] * d_o[t];
                d_alpha[j] += d_o[t] * head.z[j][t];
            }
        }
        let weighted: f64 = head.alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
        let d_score: Vec<f64> = (0..m)
            .map(|j| {
                let de = head.alpha[j] * (d_alpha[j] - weighted);
                if head.scores[j] > 0.0 {
                    de
                } else {
                    LEAKY_SLOPE * de
                }
            })
            .collect();
        let sum_ds: f64 = d_score.iter().sum();
        {
            let g_self = g!(a_self);
            for t in 0..gd {
                g_self[t] += sum_ds * head.z[0][t];
            }
        }
        {
            let g_nb = g!(a_nb);
            for j in 0..m {
                for t in 0..gd {
                    g_nb[t] += d_score[j] * head.z[j][t];
                }
            }
        }
        let w_self = p(a_self);
        let w_nb = p(a_nb);
        for t in 0..gd {
            dz[0][t] += sum_ds * w_self[t];
        }
        for j in 0..m {
            for t in 0..gd {
                dz[j][t] += d_score[j] * w_nb[t];
            }
        }
        let g_w = g!(hw);
        for (dzj, f) in dz.iter().zip(&cache.nodes) {
            for t in 0..gd {
                if dzj[t] == 0.0 {
                    continue;
                }
                for (i, &fv) in f.as_slice().iter().enumerate() {
                    g_w[t * NodeFeatures::LEN + i] += dzj[t] * fv;
                }
            }
        }
    }

    // Residual blocks in reverse.
    let mut dh = d_board;
    for (r, &[w1, b1, w2, b2]) in l.res.iter().enumerate().rev() {
        let (t, out) = &cache.res[r];
        let block_in: &[f64] = if r == 0 { &cache.stem } else { &cache.res[r - 1].1 };
        let d_pre = tanh_grad(out, &dh);
        let (mut dw, mut db) = take_pair(grads, w2, b2);
        let dt = conv3x3_backward(shape, c, c, p(w2), t, &d_pre, &mut dw, &mut db, true).unwrap();
        put_pair(grads, w2, b2, dw, db);
        let du = tanh_grad(t, &dt);
        let (mut dw, mut db) = take_pair(grads, w1, b1);
        let dx = conv3x3_backward(shape, c, c, p(w1), block_in, &du, &mut dw, &mut db, true).unwrap();
        put_pair(grads, w1, b1, dw, db);
        dh = d_pre.iter().zip(&dx).map(|(a, b)| a + b).collect();
    }

    let d_stem = tanh_grad(&cache.stem, &dh);
    let (mut dw, mut db) = take_pair(grads, l.stem_w, l.stem_b);
    conv3x3_backward(shape, NUM_CHANNELS, c, p(l.stem_w), &cache.input, &d_stem, &mut dw, &mut db, false);
    put_pair(grads, l.stem_w, l.stem_b, dw, db);
}

fn take_pair(g: &mut Gradients, a: usize, b: usize) -> (Vec<f64>, Vec<f64>) {
    (std::mem::take(&mut g.values[a]), std::mem::take(&mut g.values[b]))
}

fn put_pair(g: &mut Gradients, a: usize, b: usize, va: Vec<f64>, vb: Vec<f64>) {
    g.values[a] = va;
    g.values[b] = vb;
}
