//! Central finite-difference gradient checking.
//!
//! The checker re-evaluates the forward pass at perturbed parameter values,
//! so it exercises none of the backward code it is used to validate.

use super::Tensor;
use crate::tensor::tape::Tape;

/// Outcome of a gradient check over a set of parameters.
#[derive(Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (parameter index, flat coordinate, analytic, numeric) of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

fn with_coord(t: &Tensor, coord: usize, delta: f64) -> Tensor {
    let mut data = t.data().to_vec();
    data[coord] += delta;
    Tensor::param(t.shape(), data).expect("shape preserved")
}

/// Checks the tape gradients of `forward` against central finite differences
/// with step `h`, for every coordinate of every tensor in `params`.
///
/// `forward` must build a scalar loss on the given tape from the given
/// parameter tensors (same order as `params`) and must be deterministic.
pub fn check_gradients<F>(forward: F, params: &[Tensor], h: f64) -> GradCheckReport
where
    F: Fn(&Tape, &[Tensor]) -> Tensor,
{
    let tape = Tape::new();
    let loss = forward(&tape, params);
    let grads = tape.backward(&loss).expect("scalar loss on tape");

    let eval = |replaced: &[Tensor]| -> f64 {
        let tape = Tape::inference();
        forward(&tape, replaced).item().expect("scalar loss")
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coords_checked: 0,
    };
    for (pi, p) in params.iter().enumerate() {
        let zero = vec![0.0; p.numel()];
        let analytic = grads.get(p).unwrap_or(&zero);
        for coord in 0..p.numel() {
            let mut plus: Vec<Tensor> = params.to_vec();
            plus[pi] = with_coord(p, coord, h);
            let mut minus: Vec<Tensor> = params.to_vec();
            minus[pi] = with_coord(p, coord, -h);
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let err = rel_err(analytic[coord], numeric);
            report.coords_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((pi, coord, analytic[coord], numeric));
            }
        }
    }
    report
}
