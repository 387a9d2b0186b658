//! The gated recursive cell and the merge scorer.

use rand_chacha::ChaCha8Rng;

use super::{kaiming_uniform, ones_param, zeros_param, LN_EPS};
use crate::error::TensorError;
use crate::tensor::tape::Tape;
use crate::tensor::Tensor;

/// Parameters of the gated recursive cell.
///
/// A parent vector is built from two children as
/// `[l, r, g, h] = GeLU([left; right]·W1 + b1)·W2 + b2` followed by the gated
/// sum `p = LN(σ(l)⊙left + σ(r)⊙right + σ(g)⊙h)`.
pub struct GrcParams {
    pub w1: Tensor,      // [2d, d_cell]
    pub b1: Tensor,      // [d_cell]
    pub w2: Tensor,      // [d_cell, 4d]
    pub b2: Tensor,      // [4d]
    pub ln_gain: Tensor, // [d]
    pub ln_bias: Tensor, // [d]
    pub d: usize,
    pub d_cell: usize,
}

impl GrcParams {
    pub fn new(d: usize, d_cell: usize, rng: &mut ChaCha8Rng) -> Self {
        GrcParams {
            w1: kaiming_uniform(rng, 2 * d, d_cell),
            b1: zeros_param(&[d_cell]),
            w2: kaiming_uniform(rng, d_cell, 4 * d),
            b2: zeros_param(&[4 * d]),
            ln_gain: ones_param(&[d]),
            ln_bias: zeros_param(&[d]),
            d,
            d_cell,
        }
    }

    /// Composes `m` child pairs at once; `pairs` is `[m, 2d]` with each row
    /// `[left; right]`.
    pub fn compose_batch(&self, tape: &Tape, pairs: &Tensor) -> Result<Tensor, TensorError> {
        let d = self.d;
        if pairs.shape().len() != 2 || pairs.shape()[1] != 2 * d {
            return Err(TensorError::ShapeMismatch {
                op: "grc_compose",
                detail: format!("expected [m, {}], got {:?}", 2 * d, pairs.shape()),
            });
        }
        let hidden = tape.gelu(&tape.linear(pairs, &self.w1, &self.b1)?)?;
        let gates = tape.linear(&hidden, &self.w2, &self.b2)?; // [m, 4d]
        let l = tape.slice(&gates, 1, 0, d)?;
        let r = tape.slice(&gates, 1, d, 2 * d)?;
        let g = tape.slice(&gates, 1, 2 * d, 3 * d)?;
        let h = tape.slice(&gates, 1, 3 * d, 4 * d)?;
        let left = tape.slice(pairs, 1, 0, d)?;
        let right = tape.slice(pairs, 1, d, 2 * d)?;
        let lg = tape.mul(&tape.sigmoid(&l)?, &left)?;
        let rg = tape.mul(&tape.sigmoid(&r)?, &right)?;
        let hg = tape.mul(&tape.sigmoid(&g)?, &h)?;
        let p = tape.add(&tape.add(&lg, &rg)?, &hg)?;
        tape.layer_norm(&p, &self.ln_gain, &self.ln_bias, LN_EPS)
    }

    /// Composes a single `[d]` pair into a `[d]` parent.
    pub fn compose(&self, tape: &Tape, left: &Tensor, right: &Tensor) -> Result<Tensor, TensorError> {
        if left.shape() != [self.d] || right.shape() != [self.d] {
            return Err(TensorError::ShapeMismatch {
                op: "grc_compose",
                detail: format!(
                    "children must both be [{}], got {:?} and {:?}",
                    self.d,
                    left.shape(),
                    right.shape()
                ),
            });
        }
        let lr = tape.reshape(&left, &[1, self.d])?;
        let rr = tape.reshape(&right, &[1, self.d])?;
        let pair = tape.concat(&[&lr, &rr], 1)?;
        let out = self.compose_batch(tape, &pair)?;
        tape.reshape(&out, &[self.d])
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w1"), self.w1.clone()),
            (format!("{prefix}.b1"), self.b1.clone()),
            (format!("{prefix}.w2"), self.w2.clone()),
            (format!("{prefix}.b2"), self.b2.clone()),
            (format!("{prefix}.ln_gain"), self.ln_gain.clone()),
            (format!("{prefix}.ln_bias"), self.ln_bias.clone()),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln_gain,
            &mut self.ln_bias,
        ]
    }
}

/// Two-layer MLP assigning a scalar score to a candidate merge pair.
///
/// Inputs are only the first `d_s` coordinates of each node vector;
/// `e = GeLU([x; y]·W1 + b1)·W2 + b2`.
pub struct ScorerParams {
    pub w1: Tensor, // [2*d_s, d_s]
    pub b1: Tensor, // [d_s]
    pub w2: Tensor, // [d_s, 1]
    pub b2: Tensor, // [1]
    pub d_s: usize,
}

impl ScorerParams {
    pub fn new(d_s: usize, rng: &mut ChaCha8Rng) -> Self {
        ScorerParams {
            w1: kaiming_uniform(rng, 2 * d_s, d_s),
            b1: zeros_param(&[d_s]),
            w2: kaiming_uniform(rng, d_s, 1),
            b2: zeros_param(&[1]),
            d_s,
        }
    }

    /// Scores `m` pairs at once; `pairs` is `[m, 2*d_s]`, output is `[m]`.
    pub fn score_batch(&self, tape: &Tape, pairs: &Tensor) -> Result<Tensor, TensorError> {
        if pairs.shape().len() != 2 || pairs.shape()[1] != 2 * self.d_s {
            return Err(TensorError::ShapeMismatch {
                op: "score_pair",
                detail: format!("expected [m, {}], got {:?}", 2 * self.d_s, pairs.shape()),
            });
        }
        let m = pairs.shape()[0];
        let hidden = tape.gelu(&tape.linear(pairs, &self.w1, &self.b1)?)?;
        let e = tape.linear(&hidden, &self.w2, &self.b2)?; // [m, 1]
        tape.reshape(&e, &[m])
    }

    /// Scores one pair of `[d_s]` slices.
    pub fn score_pair(
        &self,
        tape: &Tape,
        left_slice: &Tensor,
        right_slice: &Tensor,
    ) -> Result<Tensor, TensorError> {
        if left_slice.shape() != [self.d_s] || right_slice.shape() != [self.d_s] {
            return Err(TensorError::ShapeMismatch {
                op: "score_pair",
                detail: format!(
                    "slices must both be [{}], got {:?} and {:?}",
                    self.d_s,
                    left_slice.shape(),
                    right_slice.shape()
                ),
            });
        }
        let l = tape.reshape(&left_slice, &[1, self.d_s])?;
        let r = tape.reshape(&right_slice, &[1, self.d_s])?;
        let pair = tape.concat(&[&l, &r], 1)?;
        let out = self.score_batch(tape, &pair)?;
        tape.reshape(&out, &[1])
    }

    /// All adjacent-pair scores for a `[L, d]` node sequence, reading the
    /// first `d_s` coordinates of each node. Output is `[L-1]`.
    pub fn adjacent_scores(&self, tape: &Tape, rep: &Tensor) -> Result<Tensor, TensorError> {
        let l = rep.shape()[0];
        let lefts = tape.slice(&tape.slice(rep, 0, 0, l - 1)?, 1, 0, self.d_s)?;
        let rights = tape.slice(&tape.slice(rep, 0, 1, l)?, 1, 0, self.d_s)?;
        let pairs = tape.concat(&[&lefts, &rights], 1)?;
        self.score_batch(tape, &pairs)
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w1"), self.w1.clone()),
            (format!("{prefix}.b1"), self.b1.clone()),
            (format!("{prefix}.w2"), self.w2.clone()),
            (format!("{prefix}.b2"), self.b2.clone()),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}
