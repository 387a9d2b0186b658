//! Pre-chunk processing: a bidirectional diagonal linear recurrence that
//! propagates information across future chunk boundaries, followed by a gated
//! linear unit with a residual and the leaf transformation layer.
//!
//! The recurrence is `s[t] = lambda ⊙ s[t-1] + gain ⊙ x[t]` per direction,
//! with learned per-channel decay `lambda ∈ (0,1)` (via a sigmoid squash).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{kaiming_uniform, ones_param, zeros_param, LN_EPS};
use crate::error::TensorError;
use crate::tensor::tape::Tape;
use crate::tensor::Tensor;

pub struct PrechunkParams {
    /// Pre-squash decay; the forward pass applies `sigmoid` to keep it in (0,1).
    pub lambda_f_raw: Tensor, // [d]
    pub lambda_b_raw: Tensor, // [d]
    pub gain_f: Tensor,       // [d]
    pub gain_b: Tensor,       // [d]
    pub w_u: Tensor,          // [2d, d]
    pub w_v: Tensor,          // [2d, d]
    pub w_init: Tensor,       // [d, d]
    pub ln_gain: Tensor,      // [d]
    pub ln_bias: Tensor,      // [d]
    pub d: usize,
}

impl PrechunkParams {
    pub fn new(d: usize, rng: &mut ChaCha8Rng) -> Self {
        // decay initialized log-uniform in [0.5, 0.999], input gain at 1 - lambda
        let mut raw_f = Vec::with_capacity(d);
        let mut raw_b = Vec::with_capacity(d);
        let mut gain_f = Vec::with_capacity(d);
        let mut gain_b = Vec::with_capacity(d);
        let (lo, hi) = (0.5_f64.ln(), 0.999_f64.ln());
        for _ in 0..d {
            let lam: f64 = (lo + rng.random::<f64>() * (hi - lo)).exp();
            raw_f.push((lam / (1.0 - lam)).ln());
            gain_f.push(1.0 - lam);
            let lam: f64 = (lo + rng.random::<f64>() * (hi - lo)).exp();
            raw_b.push((lam / (1.0 - lam)).ln());
            gain_b.push(1.0 - lam);
        }
        PrechunkParams {
            lambda_f_raw: Tensor::param(&[d], raw_f).unwrap(),
            lambda_b_raw: Tensor::param(&[d], raw_b).unwrap(),
            gain_f: Tensor::param(&[d], gain_f).unwrap(),
            gain_b: Tensor::param(&[d], gain_b).unwrap(),
            w_u: kaiming_uniform(rng, 2 * d, d),
            w_v: kaiming_uniform(rng, 2 * d, d),
            w_init: kaiming_uniform(rng, d, d),
            ln_gain: ones_param(&[d]),
            ln_bias: zeros_param(&[d]),
            d,
        }
    }

    /// `x` is `[n, d]`; returns `[n, d]`:
    /// forward/backward scans -> GeLU -> concat -> GLU with residual -> LN(out·W_init).
    pub fn forward(&self, tape: &Tape, x: &Tensor) -> Result<Tensor, TensorError> {
        if x.shape().len() != 2 || x.shape()[1] != self.d {
            return Err(TensorError::ShapeMismatch {
                op: "prechunk_forward",
                detail: format!("expected [n, {}], got {:?}", self.d, x.shape()),
            });
        }
        let lam_f = tape.sigmoid(&self.lambda_f_raw)?;
        let x_f = tape.gelu(&tape.diag_scan(x, &lam_f, &self.gain_f)?)?;
        let lam_b = tape.sigmoid(&self.lambda_b_raw)?;
        let rev = tape.reverse_rows(x)?;
        let x_b = tape.reverse_rows(&tape.gelu(&tape.diag_scan(&rev, &lam_b, &self.gain_b)?)?)?;
        let x_cat = tape.concat(&[&x_f, &x_b], 1)?; // [n, 2d]
        let gate = tape.sigmoid(&tape.matmul(&x_cat, &self.w_u)?)?;
        let value = tape.matmul(&x_cat, &self.w_v)?;
        let out = tape.add(&tape.mul(&gate, &value)?, x)?;
        let proj = tape.matmul(&out, &self.w_init)?;
        tape.layer_norm(&proj, &self.ln_gain, &self.ln_bias, LN_EPS)
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.lambda_f_raw"), self.lambda_f_raw.clone()),
            (format!("{prefix}.lambda_b_raw"), self.lambda_b_raw.clone()),
            (format!("{prefix}.gain_f"), self.gain_f.clone()),
            (format!("{prefix}.gain_b"), self.gain_b.clone()),
            (format!("{prefix}.w_u"), self.w_u.clone()),
            (format!("{prefix}.w_v"), self.w_v.clone()),
            (format!("{prefix}.w_init"), self.w_init.clone()),
            (format!("{prefix}.ln_gain"), self.ln_gain.clone()),
            (format!("{prefix}.ln_bias"), self.ln_bias.clone()),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.lambda_f_raw,
            &mut self.lambda_b_raw,
            &mut self.gain_f,
            &mut self.gain_b,
            &mut self.w_u,
            &mut self.w_v,
            &mut self.w_init,
            &mut self.ln_gain,
            &mut self.ln_bias,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::check_gradients;
    use rand::SeedableRng;

    #[test]
    fn decay_coefficients_live_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = PrechunkParams::new(16, &mut rng);
        let tape = Tape::inference();
        let lam = tape.sigmoid(&p.lambda_f_raw).unwrap();
        for &v in lam.data() {
            assert!(v > 0.0 && v < 1.0);
            assert!((0.4..1.0).contains(&v), "init decay {} outside [0.5, 0.999] band", v);
        }
    }

    /// Independent step-by-step recurrence evaluation at n=4, d=2.
    #[test]
    fn forward_matches_per_step_oracle() {
        let d = 2;
        let n = 4;
        let lam = [0.8_f64, 0.3];
        let gains = [0.2_f64, 0.7];
        let raw: Vec<f64> = lam.iter().map(|l| (l / (1.0 - l)).ln()).collect();
        let w_u: Vec<f64> = (0..2 * d * d).map(|i| 0.04 * i as f64 - 0.1).collect();
        let w_v: Vec<f64> = (0..2 * d * d).map(|i| -0.03 * i as f64 + 0.2).collect();
        let w_init: Vec<f64> = (0..d * d).map(|i| 0.5 - 0.2 * i as f64).collect();
        let p = PrechunkParams {
            lambda_f_raw: Tensor::from_vec(&[d], raw.clone()).unwrap(),
            lambda_b_raw: Tensor::from_vec(&[d], raw.clone()).unwrap(),
            gain_f: Tensor::from_vec(&[d], gains.to_vec()).unwrap(),
            gain_b: Tensor::from_vec(&[d], gains.to_vec()).unwrap(),
            w_u: Tensor::from_vec(&[2 * d, d], w_u.clone()).unwrap(),
            w_v: Tensor::from_vec(&[2 * d, d], w_v.clone()).unwrap(),
            w_init: Tensor::from_vec(&[d, d], w_init.clone()).unwrap(),
            ln_gain: Tensor::filled(&[d], 1.0),
            ln_bias: Tensor::zeros(&[d]),
            d,
        };
        let xv: Vec<f64> = vec![0.5, -0.2, 0.1, 0.9, -0.6, 0.3, 0.8, -0.8];
        let x = Tensor::from_vec(&[n, d], xv.clone()).unwrap();

        // oracle: plain loops
        let gelu = crate::tensor::ops::gelu_scalar;
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut xf = vec![0.0; n * d];
        let mut s = [0.0; 2];
        for t in 0..n {
            for j in 0..d {
                s[j] = lam[j] * s[j] + gains[j] * xv[t * d + j];
                xf[t * d + j] = gelu(s[j]);
            }
        }
        let mut xb = vec![0.0; n * d];
        let mut s = [0.0; 2];
        for t in (0..n).rev() {
            for j in 0..d {
                s[j] = lam[j] * s[j] + gains[j] * xv[t * d + j];
                xb[t * d + j] = gelu(s[j]);
            }
        }
        let mut expected = vec![0.0; n * d];
        for t in 0..n {
            let cat = [xf[t * d], xf[t * d + 1], xb[t * d], xb[t * d + 1]];
            let mut out = [0.0; 2];
            for j in 0..d {
                let mut u = 0.0;
                let mut v = 0.0;
                for (i, c) in cat.iter().enumerate() {
                    u += c * w_u[i * d + j];
                    v += c * w_v[i * d + j];
                }
                out[j] = sig(u) * v + xv[t * d + j];
            }
            let mut proj = [0.0; 2];
            for j in 0..d {
                for i in 0..d {
                    proj[j] += out[i] * w_init[i * d + j];
                }
            }
            let mu = (proj[0] + proj[1]) / 2.0;
            let var = ((proj[0] - mu).powi(2) + (proj[1] - mu).powi(2)) / 2.0;
            let std = (var + LN_EPS).sqrt();
            for j in 0..d {
                expected[t * d + j] = (proj[j] - mu) / std;
            }
        }

        let tape = Tape::inference();
        let got = p.forward(&tape, &x).unwrap();
        for i in 0..n * d {
            assert!(
                (got.data()[i] - expected[i]).abs() < 1e-12,
                "index {}: {} vs {}",
                i,
                got.data()[i],
                expected[i]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let d = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = PrechunkParams::new(d, &mut rng);
        let params: Vec<Tensor> = p.named("p").into_iter().map(|(_, t)| t).collect();
        let report = check_gradients(
            |tape, ps| {
                let p = PrechunkParams {
                    lambda_f_raw: ps[0].clone(),
                    lambda_b_raw: ps[1].clone(),
                    gain_f: ps[2].clone(),
                    gain_b: ps[3].clone(),
                    w_u: ps[4].clone(),
                    w_v: ps[5].clone(),
                    w_init: ps[6].clone(),
                    ln_gain: ps[7].clone(),
                    ln_bias: ps[8].clone(),
                    d,
                };
                let x = Tensor::from_vec(&[3, d], vec![0.4, -0.1, 0.2, 0.7, -0.5, 0.3]).unwrap();
                let out = p.forward(tape, &x).unwrap();
                let sq = tape.mul(&out, &out).unwrap();
                tape.sum(&sq).unwrap()
            },
            &params,
            1e-5,
        );
        assert!(report.passed(1e-4), "{:?}", report);
    }
}
