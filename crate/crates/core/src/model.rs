//! Model assembly: embedding, optional pre-chunk layer, encoder, classifier.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::beam::{
    beam_encode, marginalize_roots, BeamState, Composer, EncodeStats, Mode, SearchOpts,
};
use crate::config::{InferenceMode, ModelConfig, ModelKind};
use crate::error::{EncodeError, TensorError};
use crate::listops::gen::mix_seed;
use crate::nn::cells::{GrcParams, ScorerParams};
use crate::nn::embedding::Embedding;
use crate::nn::prechunk::PrechunkParams;
use crate::nn::{kaiming_uniform, zeros_param};
use crate::rir::{rir_encode, RirOpts};
use crate::tensor::tape::Tape;
use crate::tensor::Tensor;
use crate::tree::TreeNode;

/// Two-layer classifier head over the sentence vector.
pub struct HeadParams {
    pub w1: Tensor, // [d, d]
    pub b1: Tensor, // [d]
    pub w2: Tensor, // [d, classes]
    pub b2: Tensor, // [classes]
}

impl HeadParams {
    fn new(d: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        HeadParams {
            w1: kaiming_uniform(rng, d, d),
            b1: zeros_param(&[d]),
            w2: kaiming_uniform(rng, d, classes),
            b2: zeros_param(&[classes]),
        }
    }

    fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w1"), self.w1.clone()),
            (format!("{prefix}.b1"), self.b1.clone()),
            (format!("{prefix}.w2"), self.w2.clone()),
            (format!("{prefix}.b2"), self.b2.clone()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Whether a pass is a training forward (stochastic search, outer recursion
/// always on) or an evaluation forward (deterministic, inference mode from
/// config).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RunMode {
    Train,
    Eval,
}

/// Everything `encode` produces besides gradients.
pub struct EncodeOutcome {
    pub root: Tensor,
    /// Final beams for the beam-search variants.
    pub state: Option<BeamState>,
    /// Composition tree of the top beam (or the fixed structure for
    /// baselines).
    pub tree: Option<Rc<TreeNode>>,
    pub stats: EncodeStats,
}

pub struct Model {
    pub cfg: ModelConfig,
    pub embedding: Embedding,
    pub prechunk: Option<PrechunkParams>,
    pub cell: GrcParams,
    pub scorer: Option<ScorerParams>,
    pub head: HeadParams,
}

impl Model {
    /// Fresh parameters from the config seed.
    pub fn new(cfg: ModelConfig) -> Result<Model, TensorError> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x1217));
        let embedding = Embedding::new(cfg.vocab, cfg.d, &mut rng);
        let prechunk = cfg.prechunk.then(|| PrechunkParams::new(cfg.d, &mut rng));
        let cell = GrcParams::new(cfg.d, cfg.d_cell, &mut rng);
        let scorer = matches!(cfg.model, ModelKind::RirEbt)
            .then(|| ScorerParams::new(cfg.d_s, &mut rng));
        let head = HeadParams::new(cfg.d, cfg.classes, &mut rng);
        Ok(Model {
            cfg,
            embedding,
            prechunk,
            cell,
            scorer,
            head,
        })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = self.embedding.named("embed");
        if let Some(p) = &self.prechunk {
            out.extend(p.named("prechunk"));
        }
        out.extend(self.cell.named("grc"));
        if let Some(s) = &self.scorer {
            out.extend(s.named("scorer"));
        }
        out.extend(self.head.named("head"));
        out
    }

    /// Mutable handles in the same order as [`Model::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.embedding.tensors_mut();
        if let Some(p) = &mut self.prechunk {
            out.extend(p.tensors_mut());
        }
        out.extend(self.cell.tensors_mut());
        if let Some(s) = &mut self.scorer {
            out.extend(s.tensors_mut());
        }
        out.extend(self.head.tensors_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Replaces every parameter with the same-named tensor from `values`.
    pub fn load_params(&mut self, values: &[(String, Tensor)]) -> Result<(), TensorError> {
        use std::collections::HashMap;
        let map: HashMap<&str, &Tensor> =
            values.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let names: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(self.params_mut()) {
            let Some(&t) = map.get(name.as_str()) else {
                return Err(TensorError::ShapeMismatch {
                    op: "load_params",
                    detail: format!("missing tensor {name:?}"),
                });
            };
            if t.shape() != slot.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "load_params",
                    detail: format!(
                        "tensor {name:?}: expected {:?}, got {:?}",
                        slot.shape(),
                        t.shape()
                    ),
                });
            }
            *slot = t.requires_grad(true);
        }
        Ok(())
    }

    fn leaf_reps(&self, tape: &Tape, ids: &[u32]) -> Result<Tensor, EncodeError> {
        let embedded = self.embedding.embed(tape, ids)?;
        match &self.prechunk {
            Some(p) => Ok(p.forward(tape, &embedded)?),
            None => Ok(embedded),
        }
    }

    /// Encodes a token sequence to a `[d]` sentence vector.
    ///
    /// Training always routes the beam variant through the outer recursion;
    /// evaluation follows `cfg.inference` (`Rir` keeps the chunked loop,
    /// `NonRir` runs the inner beam search over the whole sequence).
    pub fn encode(
        &self,
        tape: &Tape,
        ids: &[u32],
        mode: RunMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<EncodeOutcome, EncodeError> {
        if ids.is_empty() {
            return Err(EncodeError::EmptyInput);
        }
        let leaves = self.leaf_reps(tape, ids)?;
        let search = SearchOpts {
            beam_width: self.cfg.beam,
            mode: match mode {
                RunMode::Train => Mode::Stochastic,
                RunMode::Eval => Mode::Deterministic,
            },
            gumbel_temperature: self.cfg.gumbel_temperature,
        };
        match self.cfg.model {
            ModelKind::RirEbt => {
                let scorer = self.scorer.as_ref().expect("beam variant has a scorer");
                let use_rir = match mode {
                    RunMode::Train => true,
                    RunMode::Eval => self.cfg.inference == InferenceMode::Rir,
                };
                if use_rir {
                    let opts = RirOpts {
                        k: self.cfg.k,
                        search,
                        strategy: self.cfg.combine,
                        independent_beams: self.cfg.independent_beams,
                    };
                    let out = rir_encode(tape, &leaves, &opts, rng, &self.cell, scorer)?;
                    let tree = out.state.hyps[0].trees[0].clone();
                    Ok(EncodeOutcome {
                        root: out.root,
                        tree: Some(tree),
                        state: Some(out.state),
                        stats: out.stats,
                    })
                } else {
                    let mut stats = EncodeStats::default();
                    let state =
                        beam_encode(tape, &leaves, &search, rng, &self.cell, scorer, &mut stats)?;
                    stats.outer_iters = 1;
                    let root = marginalize_roots(tape, &state)?;
                    let tree = state.hyps[0].trees[0].clone();
                    Ok(EncodeOutcome {
                        root,
                        tree: Some(tree),
                        state: Some(state),
                        stats,
                    })
                }
            }
            ModelKind::Bbt => {
                let mut stats = EncodeStats::default();
                let (root, tree) = bbt_encode(tape, &leaves, &self.cell, &mut stats)?;
                Ok(EncodeOutcome {
                    root,
                    state: None,
                    tree: Some(tree),
                    stats,
                })
            }
            ModelKind::Chain => {
                let mut stats = EncodeStats::default();
                let (root, tree) = chain_encode(tape, &leaves, &self.cell, &mut stats)?;
                Ok(EncodeOutcome {
                    root,
                    state: None,
                    tree: Some(tree),
                    stats,
                })
            }
        }
    }

    /// Unnormalized class logits from a `[d]` sentence vector.
    pub fn classify(&self, tape: &Tape, root: &Tensor) -> Result<Tensor, TensorError> {
        let d = self.cfg.d;
        let x = tape.reshape(root, &[1, d])?;
        let h = tape.gelu(&tape.linear(&x, &self.head.w1, &self.head.b1)?)?;
        let logits = tape.linear(&h, &self.head.w2, &self.head.b2)?;
        tape.reshape(&logits, &[self.cfg.classes])
    }

    /// Cross-entropy loss and argmax prediction for one sample.
    pub fn loss(
        &self,
        tape: &Tape,
        ids: &[u32],
        label: usize,
        mode: RunMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor, usize, EncodeStats), EncodeError> {
        let out = self.encode(tape, ids, mode, rng)?;
        let logits = self.classify(tape, &out.root)?;
        let pred = crate::beam::topk_indices(logits.data(), 1)[0];
        let lsm = tape.log_softmax_1d(&logits)?;
        let picked = tape.slice(&lsm, 0, label, label + 1)?;
        let loss = tape.scale(&picked, -1.0)?;
        Ok((loss, pred, out.stats))
    }
}

/// Balanced-binary-tree encoding: each level composes adjacent pairs, an odd
/// trailing node passes through. Depth is `ceil(log2 n)`.
pub fn bbt_encode<C: Composer>(
    tape: &Tape,
    leaves: &Tensor,
    cell: &C,
    stats: &mut EncodeStats,
) -> Result<(Tensor, Rc<TreeNode>), EncodeError> {
    let n = leaves.shape()[0];
    if n == 0 {
        return Err(EncodeError::EmptyInput);
    }
    let d = cell.hidden_width();
    let mut rep = leaves.clone();
    let mut trees: Vec<Rc<TreeNode>> = (0..n).map(TreeNode::leaf).collect();
    let mut depths: Vec<u32> = vec![0; n];
    while rep.shape()[0] > 1 {
        stats.outer_iters += 1;
        let len = rep.shape()[0];
        let pairs = len / 2;
        // rows 0..2*pairs reshaped to [pairs, 2d] puts row 2i beside row 2i+1
        let paired = tape.reshape(&tape.slice(&rep, 0, 0, 2 * pairs)?, &[pairs, 2 * d])?;
        let parents = cell.compose_batch(tape, &paired)?;
        let mut next_trees = Vec::with_capacity(pairs + 1);
        let mut next_depths = Vec::with_capacity(pairs + 1);
        for i in 0..pairs {
            next_trees.push(TreeNode::branch(trees[2 * i].clone(), trees[2 * i + 1].clone()));
            let nd = depths[2 * i].max(depths[2 * i + 1]) + 1;
            next_depths.push(nd);
            stats.max_depth = stats.max_depth.max(nd);
            stats.composes += 1;
        }
        rep = if len % 2 == 1 {
            let last = tape.slice(&rep, 0, len - 1, len)?;
            next_trees.push(trees[len - 1].clone());
            next_depths.push(depths[len - 1]);
            tape.concat(&[&parents, &last], 0)?
        } else {
            parents
        };
        trees = next_trees;
        depths = next_depths;
    }
    Ok((tape.reshape(&rep, &[d])?, trees.pop().unwrap()))
}

/// Plain left-to-right recurrence; depth is `n - 1`.
pub fn chain_encode<C: Composer>(
    tape: &Tape,
    leaves: &Tensor,
    cell: &C,
    stats: &mut EncodeStats,
) -> Result<(Tensor, Rc<TreeNode>), EncodeError> {
    let n = leaves.shape()[0];
    if n == 0 {
        return Err(EncodeError::EmptyInput);
    }
    let d = cell.hidden_width();
    stats.outer_iters = 1;
    let mut state = tape.slice(leaves, 0, 0, 1)?;
    let mut tree = TreeNode::leaf(0);
    let mut depth = 0u32;
    for t in 1..n {
        let tok = tape.slice(leaves, 0, t, t + 1)?;
        let pair = tape.reshape(&tape.concat(&[&state, &tok], 1)?, &[1, 2 * d])?;
        state = cell.compose_batch(tape, &pair)?;
        tree = TreeNode::branch(tree, TreeNode::leaf(t));
        depth += 1;
        stats.max_depth = stats.max_depth.max(depth);
        stats.composes += 1;
    }
    Ok((tape.reshape(&state, &[d])?, tree))
}
