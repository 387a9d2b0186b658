//! Token embedding table.

use rand_chacha::ChaCha8Rng;

use super::embedding_init;
use crate::error::TensorError;
use crate::tensor::tape::Tape;
use crate::tensor::Tensor;

pub struct Embedding {
    pub table: Tensor, // [vocab, d]
    /// Reserved pad id, if the task uses one. ListOps sequences are processed
    /// at their natural length, so none is set by default.
    pub pad_id: Option<u32>,
}

impl Embedding {
    pub fn new(vocab: usize, d: usize, rng: &mut ChaCha8Rng) -> Self {
        Embedding {
            table: embedding_init(rng, vocab, d),
            pad_id: None,
        }
    }

    pub fn vocab(&self) -> usize {
        self.table.shape()[0]
    }

    /// Looks up rows for `ids`; gradients flow only to the looked-up rows.
    pub fn embed(&self, tape: &Tape, ids: &[u32]) -> Result<Tensor, TensorError> {
        tape.gather_rows(&self.table, ids)
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![(format!("{prefix}.table"), self.table.clone())]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.table]
    }
}
