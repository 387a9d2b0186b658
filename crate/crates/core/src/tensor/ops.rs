//! Primitive tensor operations with forward values and backward rules.
//!
//! Broadcasting is deliberately narrow: two shapes combine elementwise when
//! they are equal, when one side is a scalar, or when the smaller shape is a
//! suffix of the larger (leading-axis expansion). That covers everything the
//! encoders need while keeping gradient reduction trivial.

use super::{outer_inner, Tensor};
use crate::error::TensorError;
use crate::tensor::tape::Tape;

pub(crate) const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
pub(crate) const GELU_C: f64 = 0.044715;

#[inline]
pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

#[inline]
fn gelu_grad_scalar(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

#[inline]
fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ── raw matmul kernels ───────────────────────────────────────────────

/// C += A[m,p] · B[p,q]
pub(crate) fn mm_nn(a: &[f64], b: &[f64], m: usize, p: usize, q: usize, c: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * p..(i + 1) * p];
        let c_row = &mut c[i * q..(i + 1) * q];
        for (l, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[l * q..(l + 1) * q];
            for j in 0..q {
                c_row[j] += av * b_row[j];
            }
        }
    }
}

/// C += A[m,q] · B[p,q]ᵀ  (used for dA = G · Bᵀ)
fn mm_nt(a: &[f64], b: &[f64], m: usize, q: usize, p: usize, c: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * q..(i + 1) * q];
        let c_row = &mut c[i * p..(i + 1) * p];
        for l in 0..p {
            let b_row = &b[l * q..(l + 1) * q];
            let mut acc = 0.0;
            for j in 0..q {
                acc += a_row[j] * b_row[j];
            }
            c_row[l] += acc;
        }
    }
}

/// C += A[m,p]ᵀ · B[m,q]  (used for dB = Aᵀ · G)
fn mm_tn(a: &[f64], b: &[f64], m: usize, p: usize, q: usize, c: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * p..(i + 1) * p];
        let b_row = &b[i * q..(i + 1) * q];
        for (l, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c[l * q..(l + 1) * q];
            for j in 0..q {
                c_row[j] += av * b_row[j];
            }
        }
    }
}

// ── broadcasting ─────────────────────────────────────────────────────

enum Bcast {
    Same,
    /// rhs repeats in blocks of the given length
    RhsSmall(usize),
    /// lhs repeats in blocks of the given length
    LhsSmall(usize),
}

fn broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Bcast, TensorError> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb {
        return Ok(Bcast::Same);
    }
    let suffix = |big: &[usize], small: &[usize]| {
        small.len() <= big.len() && big[big.len() - small.len()..] == *small
    };
    if b.numel() == 1 {
        return Ok(Bcast::RhsSmall(1));
    }
    if a.numel() == 1 {
        return Ok(Bcast::LhsSmall(1));
    }
    if suffix(sa, sb) {
        return Ok(Bcast::RhsSmall(b.numel()));
    }
    if suffix(sb, sa) {
        return Ok(Bcast::LhsSmall(a.numel()));
    }
    Err(TensorError::ShapeMismatch {
        op,
        detail: format!("cannot broadcast {:?} with {:?}", sa, sb),
    })
}

/// Sum `g` over leading axes down to `block` trailing elements.
fn reduce_to_block(g: &[f64], block: usize) -> Vec<f64> {
    let mut out = vec![0.0; block];
    for (i, &v) in g.iter().enumerate() {
        out[i % block] += v;
    }
    out
}

impl Tape {
    // ── binary ops ───────────────────────────────────────────────────

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", a.shape(), b.shape()),
            });
        }
        let (m, p, q) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * q];
        mm_nn(a.data(), b.data(), m, p, q, &mut out);
        let out = Tensor::from_vec(&[m, q], out)?;
        let (ac, bc) = (a.clone(), b.clone());
        self.record(
            &out,
            &[a, b],
            Box::new(move |g| {
                let mut da = vec![0.0; m * p];
                mm_nt(g, bc.data(), m, q, p, &mut da);
                let mut db = vec![0.0; p * q];
                mm_tn(ac.data(), g, m, p, q, &mut db);
                vec![da, db]
            }),
        );
        Ok(out)
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let bc = broadcast("add", a, b)?;
        let out = match &bc {
            Bcast::Same => {
                let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
                Tensor::from_vec(a.shape(), data)?
            }
            Bcast::RhsSmall(blk) => {
                let bd = b.data();
                let data = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x + bd[i % blk])
                    .collect();
                Tensor::from_vec(a.shape(), data)?
            }
            Bcast::LhsSmall(blk) => {
                let ad = a.data();
                let data = b
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, y)| ad[i % blk] + y)
                    .collect();
                Tensor::from_vec(b.shape(), data)?
            }
        };
        self.record(
            &out,
            &[a, b],
            Box::new(move |g| match &bc {
                Bcast::Same => vec![g.to_vec(), g.to_vec()],
                Bcast::RhsSmall(blk) => vec![g.to_vec(), reduce_to_block(g, *blk)],
                Bcast::LhsSmall(blk) => vec![reduce_to_block(g, *blk), g.to_vec()],
            }),
        );
        Ok(out)
    }

    /// Elementwise product with the same broadcasting rules as [`Tape::add`].
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let bc = broadcast("mul", a, b)?;
        let out = match &bc {
            Bcast::Same => {
                let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
                Tensor::from_vec(a.shape(), data)?
            }
            Bcast::RhsSmall(blk) => {
                let bd = b.data();
                let data = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x * bd[i % blk])
                    .collect();
                Tensor::from_vec(a.shape(), data)?
            }
            Bcast::LhsSmall(blk) => {
                let ad = a.data();
                let data = b
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, y)| ad[i % blk] * y)
                    .collect();
                Tensor::from_vec(b.shape(), data)?
            }
        };
        let (ac, bcl) = (a.clone(), b.clone());
        self.record(
            &out,
            &[a, b],
            Box::new(move |g| match &bc {
                Bcast::Same => {
                    let da = g.iter().zip(bcl.data()).map(|(gi, y)| gi * y).collect();
                    let db = g.iter().zip(ac.data()).map(|(gi, x)| gi * x).collect();
                    vec![da, db]
                }
                Bcast::RhsSmall(blk) => {
                    let bd = bcl.data();
                    let da = g.iter().enumerate().map(|(i, gi)| gi * bd[i % blk]).collect();
                    let mut db = vec![0.0; *blk];
                    for (i, gi) in g.iter().enumerate() {
                        db[i % blk] += gi * ac.data()[i];
                    }
                    vec![da, db]
                }
                Bcast::LhsSmall(blk) => {
                    let ad = ac.data();
                    let mut da = vec![0.0; *blk];
                    for (i, gi) in g.iter().enumerate() {
                        da[i % blk] += gi * bcl.data()[i];
                    }
                    let db = g.iter().enumerate().map(|(i, gi)| gi * ad[i % blk]).collect();
                    vec![da, db]
                }
            }),
        );
        Ok(out)
    }

    /// `a - b`, expressed through `add` and `scale`.
    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, &nb)
    }

    /// Multiplication by a compile-time constant (no gradient for the constant).
    pub fn scale(&self, x: &Tensor, c: f64) -> Result<Tensor, TensorError> {
        let data = x.data().iter().map(|v| v * c).collect();
        let out = Tensor::from_vec(x.shape(), data)?;
        self.record(
            &out,
            &[x],
            Box::new(move |g| vec![g.iter().map(|v| v * c).collect()]),
        );
        Ok(out)
    }

    // ── unary elementwise ────────────────────────────────────────────

    pub fn sigmoid(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let data: Vec<f64> = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
        let out = Tensor::from_vec(x.shape(), data)?;
        let oc = out.clone();
        self.record(
            &out,
            &[x],
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(oc.data())
                    .map(|(gi, s)| gi * s * (1.0 - s))
                    .collect()]
            }),
        );
        Ok(out)
    }

    pub fn tanh(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let data: Vec<f64> = x.data().iter().map(|v| v.tanh()).collect();
        let out = Tensor::from_vec(x.shape(), data)?;
        let oc = out.clone();
        self.record(
            &out,
            &[x],
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(oc.data())
                    .map(|(gi, t)| gi * (1.0 - t * t))
                    .collect()]
            }),
        );
        Ok(out)
    }

    /// GeLU in its tanh approximation:
    /// `0.5·x·(1 + tanh(sqrt(2/pi)·(x + 0.044715·x^3)))`.
    pub fn gelu(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let data: Vec<f64> = x.data().iter().map(|&v| gelu_scalar(v)).collect();
        let out = Tensor::from_vec(x.shape(), data)?;
        let xc = x.clone();
        self.record(
            &out,
            &[x],
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(xc.data())
                    .map(|(gi, &v)| gi * gelu_grad_scalar(v))
                    .collect()]
            }),
        );
        Ok(out)
    }

    pub fn exp(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let data: Vec<f64> = x.data().iter().map(|v| v.exp()).collect();
        let out = Tensor::from_vec(x.shape(), data)?;
        let oc = out.clone();
        self.record(
            &out,
            &[x],
            Box::new(move |g| vec![g.iter().zip(oc.data()).map(|(gi, e)| gi * e).collect()]),
        );
        Ok(out)
    }

    pub fn log(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let data: Vec<f64> = x.data().iter().map(|v| v.ln()).collect();
        let out = Tensor::from_vec(x.shape(), data)?;
        let xc = x.clone();
        self.record(
            &out,
            &[x],
            Box::new(move |g| vec![g.iter().zip(xc.data()).map(|(gi, v)| gi / v).collect()]),
        );
        Ok(out)
    }

    // ── reductions and normalizers ───────────────────────────────────

    /// Full reduction to a `[1]` tensor.
    pub fn sum(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let s: f64 = x.data().iter().sum();
        let out = Tensor::from_vec(&[1], vec![s])?;
        let n = x.numel();
        self.record(&out, &[x], Box::new(move |g| vec![vec![g[0]; n]]));
        Ok(out)
    }

    /// Numerically stabilized softmax along `axis`. `-inf` entries map to
    /// exact zeros; a slice with no finite entry is an error.
    pub fn softmax(&self, x: &Tensor, axis: usize) -> Result<Tensor, TensorError> {
        if axis >= x.shape().len() {
            return Err(TensorError::ShapeMismatch {
                op: "softmax",
                detail: format!("axis {} out of range for {:?}", axis, x.shape()),
            });
        }
        let (outer, n, inner) = outer_inner(x.shape(), axis);
        let xd = x.data();
        let mut data = vec![0.0; xd.len()];
        for o in 0..outer {
            for ii in 0..inner {
                let at = |i: usize| (o * n + i) * inner + ii;
                let mut mx = f64::NEG_INFINITY;
                for i in 0..n {
                    let v = xd[at(i)];
                    if v.is_finite() && v > mx {
                        mx = v;
                    }
                }
                if mx == f64::NEG_INFINITY {
                    return Err(TensorError::DegenerateDistribution);
                }
                let mut total = 0.0;
                for i in 0..n {
                    let v = xd[at(i)];
                    let e = if v == f64::NEG_INFINITY {
                        0.0
                    } else {
                        (v - mx).exp()
                    };
                    data[at(i)] = e;
                    total += e;
                }
                for i in 0..n {
                    data[at(i)] /= total;
                }
            }
        }
        let out = Tensor::from_vec(x.shape(), data)?;
        let oc = out.clone();
        self.record(
            &out,
            &[x],
            Box::new(move |g| {
                let y = oc.data();
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let at = |i: usize| (o * n + i) * inner + ii;
                        let mut dot = 0.0;
                        for i in 0..n {
                            dot += g[at(i)] * y[at(i)];
                        }
                        for i in 0..n {
                            dx[at(i)] = y[at(i)] * (g[at(i)] - dot);
                        }
                    }
                }
                vec![dx]
            }),
        );
        Ok(out)
    }

    /// Layer normalization over the last axis, with affine gain and bias.
    /// `eps` sits inside the square root and guards zero variance.
    pub fn layer_norm(
        &self,
        x: &Tensor,
        gain: &Tensor,
        bias: &Tensor,
        eps: f64,
    ) -> Result<Tensor, TensorError> {
        let d = *x.shape().last().ok_or(TensorError::ShapeMismatch {
            op: "layer_norm",
            detail: "rank-0 input".into(),
        })?;
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                detail: format!(
                    "input {:?} with gain {:?} / bias {:?}",
                    x.shape(),
                    gain.shape(),
                    bias.shape()
                ),
            });
        }
        let rows = x.numel() / d;
        let xd = x.data();
        let (gd, bd) = (gain.data(), bias.data());
        let mut data = vec![0.0; xd.len()];
        for r in 0..rows {
            let xs = &xd[r * d..(r + 1) * d];
            let mu = xs.iter().sum::<f64>() / d as f64;
            let var = xs.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let std = (var + eps).sqrt();
            for j in 0..d {
                data[r * d + j] = (xs[j] - mu) / std * gd[j] + bd[j];
            }
        }
        let out = Tensor::from_vec(x.shape(), data)?;
        let (xc, gc) = (x.clone(), gain.clone());
        self.record(
            &out,
            &[x, gain, bias],
            Box::new(move |g| {
                let xd = xc.data();
                let gd = gc.data();
                let mut dx = vec![0.0; xd.len()];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for r in 0..rows {
                    let xs = &xd[r * d..(r + 1) * d];
                    let gs = &g[r * d..(r + 1) * d];
                    let mu = xs.iter().sum::<f64>() / d as f64;
                    let var = xs.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
                    let std = (var + eps).sqrt();
                    let mut mean_dy = 0.0;
                    let mut mean_dyy = 0.0;
                    for j in 0..d {
                        let y = (xs[j] - mu) / std;
                        let dy = gs[j] * gd[j];
                        dgain[j] += gs[j] * y;
                        dbias[j] += gs[j];
                        mean_dy += dy;
                        mean_dyy += dy * y;
                    }
                    mean_dy /= d as f64;
                    mean_dyy /= d as f64;
                    for j in 0..d {
                        let y = (xs[j] - mu) / std;
                        let dy = gs[j] * gd[j];
                        dx[r * d + j] = (dy - mean_dy - y * mean_dyy) / std;
                    }
                }
                vec![dx, dgain, dbias]
            }),
        );
        Ok(out)
    }

    // ── structural ops ───────────────────────────────────────────────

    /// Concatenation along `axis`. Zero-extent parts are allowed and skipped.
    pub fn concat(&self, parts: &[&Tensor], axis: usize) -> Result<Tensor, TensorError> {
        let first = parts.first().ok_or(TensorError::ShapeMismatch {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                detail: format!("axis {} out of range for rank {}", axis, rank),
            });
        }
        let mut axis_total = 0;
        for p in parts {
            if p.shape().len() != rank {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    detail: format!("rank mismatch: {:?} vs {:?}", first.shape(), p.shape()),
                });
            }
            for a in 0..rank {
                if a != axis && p.shape()[a] != first.shape()[a] {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        detail: format!("{:?} vs {:?} on axis {}", first.shape(), p.shape(), a),
                    });
                }
            }
            axis_total += p.shape()[axis];
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = axis_total;
        let (outer, _, inner) = outer_inner(&shape, axis);
        let mut data = vec![0.0; shape.iter().product()];
        let row = axis_total * inner;
        let mut offset = 0;
        for p in parts {
            let pn = p.shape()[axis];
            let pd = p.data();
            for o in 0..outer {
                let src = &pd[o * pn * inner..(o + 1) * pn * inner];
                let dst = &mut data[o * row + offset..o * row + offset + pn * inner];
                dst.copy_from_slice(src);
            }
            offset += pn * inner;
        }
        let out = Tensor::from_vec(&shape, data)?;
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        self.record(
            &out,
            parts,
            Box::new(move |g| {
                let mut grads = Vec::with_capacity(extents.len());
                let mut offset = 0;
                for &pn in &extents {
                    let mut pg = vec![0.0; outer * pn * inner];
                    for o in 0..outer {
                        let src = &g[o * row + offset..o * row + offset + pn * inner];
                        pg[o * pn * inner..(o + 1) * pn * inner].copy_from_slice(src);
                    }
                    grads.push(pg);
                    offset += pn * inner;
                }
                grads
            }),
        );
        Ok(out)
    }

    /// Contiguous range `start..end` along `axis`. Empty ranges are allowed.
    pub fn slice(
        &self,
        x: &Tensor,
        axis: usize,
        start: usize,
        end: usize,
    ) -> Result<Tensor, TensorError> {
        if axis >= x.shape().len() {
            return Err(TensorError::ShapeMismatch {
                op: "slice",
                detail: format!("axis {} out of range for {:?}", axis, x.shape()),
            });
        }
        let extent = x.shape()[axis];
        if start > end || end > extent {
            return Err(TensorError::BadRange {
                axis,
                start,
                end,
                extent,
            });
        }
        let (outer, n, inner) = outer_inner(x.shape(), axis);
        let w = end - start;
        let mut shape = x.shape().to_vec();
        shape[axis] = w;
        let mut data = vec![0.0; outer * w * inner];
        let xd = x.data();
        for o in 0..outer {
            let src = &xd[(o * n + start) * inner..(o * n + end) * inner];
            data[o * w * inner..(o + 1) * w * inner].copy_from_slice(src);
        }
        let out = Tensor::from_vec(&shape, data)?;
        let full = x.numel();
        self.record(
            &out,
            &[x],
            Box::new(move |g| {
                let mut dx = vec![0.0; full];
                for o in 0..outer {
                    let dst = &mut dx[(o * n + start) * inner..(o * n + end) * inner];
                    dst.copy_from_slice(&g[o * w * inner..(o + 1) * w * inner]);
                }
                vec![dx]
            }),
        );
        Ok(out)
    }

    /// Row lookup into a `[rows, d]` table. Gradients accumulate per row, so a
    /// repeated index receives the sum of its occurrences.
    pub fn gather_rows(&self, table: &Tensor, ids: &[u32]) -> Result<Tensor, TensorError> {
        if table.shape().len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "gather_rows",
                detail: format!("table must be rank 2, got {:?}", table.shape()),
            });
        }
        let (rows, d) = (table.shape()[0], table.shape()[1]);
        let td = table.data();
        let mut data = vec![0.0; ids.len() * d];
        for (i, &id) in ids.iter().enumerate() {
            let id = id as usize;
            if id >= rows {
                return Err(TensorError::RowOutOfRange { index: id, rows });
            }
            data[i * d..(i + 1) * d].copy_from_slice(&td[id * d..(id + 1) * d]);
        }
        let out = Tensor::from_vec(&[ids.len(), d], data)?;
        let ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        self.record(
            &out,
            &[table],
            Box::new(move |g| {
                let mut dt = vec![0.0; rows * d];
                for (i, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[i * d + j];
                    }
                }
                vec![dt]
            }),
        );
        Ok(out)
    }

    /// Same buffer contents under a new shape (copying).
    pub fn reshape(&self, x: &Tensor, shape: &[usize]) -> Result<Tensor, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != x.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", x.shape(), shape),
            });
        }
        let out = Tensor::from_vec(shape, x.data().to_vec())?;
        self.record(&out, &[x], Box::new(move |g| vec![g.to_vec()]));
        Ok(out)
    }

    /// Reverses the order of rows (axis 0).
    pub fn reverse_rows(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        if x.shape().is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "reverse_rows",
                detail: "rank-0 input".into(),
            });
        }
        let n = x.shape()[0];
        let inner = x.numel() / n.max(1);
        let xd = x.data();
        let mut data = vec![0.0; xd.len()];
        for i in 0..n {
            data[i * inner..(i + 1) * inner]
                .copy_from_slice(&xd[(n - 1 - i) * inner..(n - i) * inner]);
        }
        let out = Tensor::from_vec(x.shape(), data)?;
        self.record(
            &out,
            &[x],
            Box::new(move |g| {
                let mut dx = vec![0.0; g.len()];
                for i in 0..n {
                    dx[i * inner..(i + 1) * inner]
                        .copy_from_slice(&g[(n - 1 - i) * inner..(n - i) * inner]);
                }
                vec![dx]
            }),
        );
        Ok(out)
    }

    /// Diagonal linear recurrence over rows:
    /// `s[t] = lambda ⊙ s[t-1] + gain ⊙ x[t]`, with `s[-1] = 0`.
    pub fn diag_scan(
        &self,
        x: &Tensor,
        lambda: &Tensor,
        gain: &Tensor,
    ) -> Result<Tensor, TensorError> {
        if x.shape().len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "diag_scan",
                detail: format!("input must be rank 2, got {:?}", x.shape()),
            });
        }
        let (n, d) = (x.shape()[0], x.shape()[1]);
        if lambda.shape() != [d] || gain.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "diag_scan",
                detail: format!(
                    "input {:?} with lambda {:?} / gain {:?}",
                    x.shape(),
                    lambda.shape(),
                    gain.shape()
                ),
            });
        }
        let (xd, ld, gd) = (x.data(), lambda.data(), gain.data());
        let mut data = vec![0.0; n * d];
        for t in 0..n {
            for j in 0..d {
                let prev = if t == 0 { 0.0 } else { data[(t - 1) * d + j] };
                data[t * d + j] = ld[j] * prev + gd[j] * xd[t * d + j];
            }
        }
        let out = Tensor::from_vec(&[n, d], data)?;
        let (xc, lc, gc, oc) = (x.clone(), lambda.clone(), gain.clone(), out.clone());
        self.record(
            &out,
            &[x, lambda, gain],
            Box::new(move |g| {
                let (xd, ld, gd, sd) = (xc.data(), lc.data(), gc.data(), oc.data());
                let mut dx = vec![0.0; n * d];
                let mut dl = vec![0.0; d];
                let mut dg = vec![0.0; d];
                let mut acc = vec![0.0; d];
                for t in (0..n).rev() {
                    for j in 0..d {
                        acc[j] = g[t * d + j] + if t + 1 < n { ld[j] * acc[j] } else { 0.0 };
                        dx[t * d + j] = gd[j] * acc[j];
                        dg[j] += acc[j] * xd[t * d + j];
                        if t > 0 {
                            dl[j] += acc[j] * sd[(t - 1) * d + j];
                        }
                    }
                }
                vec![dx, dl, dg]
            }),
        );
        Ok(out)
    }

    // ── compositions ─────────────────────────────────────────────────

    /// Log-softmax of a rank-1 tensor, stabilized by a detached max shift.
    pub fn log_softmax_1d(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        if x.shape().len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "log_softmax_1d",
                detail: format!("expected rank 1, got {:?}", x.shape()),
            });
        }
        let mx = x
            .data()
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        if mx == f64::NEG_INFINITY {
            return Err(TensorError::DegenerateDistribution);
        }
        let shifted = self.add(x, &Tensor::scalar(-mx))?;
        let e = self.exp(&shifted)?;
        let total = self.sum(&e)?;
        let log_total = self.log(&total)?;
        self.sub(&shifted, &log_total)
    }

    /// `x · w + b` for a rank-2 `x`, with `b` broadcast across rows.
    pub fn linear(&self, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
        let xw = self.matmul(x, w)?;
        self.add(&xw, b)
    }
}
