//! Greedy and beam-search latent-tree encoders.
//!
//! A hypothesis is a partially composed node sequence plus an accumulated
//! log-score. Each step scores every adjacent pair, expands candidates as
//! `parent score + log-softmax(pair scores)`, keeps the top `b` (perturbed by
//! Gumbel noise during training), and composes the chosen pairs with the
//! recursive cell. The search also drives the outer recursion: chunk inputs
//! arrive as several live hypotheses whose candidates compete in one pool.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{EncodeError, TensorError};
use crate::tensor::tape::Tape;
use crate::tensor::Tensor;
use crate::tree::TreeNode;

/// Anything that can merge `[m, 2d]` child pairs into `[m, d]` parents.
pub trait Composer {
    fn hidden_width(&self) -> usize;
    fn compose_batch(&self, tape: &Tape, pairs: &Tensor) -> Result<Tensor, TensorError>;
}

impl Composer for crate::nn::cells::GrcParams {
    fn hidden_width(&self) -> usize {
        self.d
    }
    fn compose_batch(&self, tape: &Tape, pairs: &Tensor) -> Result<Tensor, TensorError> {
        self.compose_batch(tape, pairs)
    }
}

/// Anything that scores the `L-1` adjacent pairs of an `[L, d]` sequence.
pub trait MergeScorer {
    fn adjacent_scores(&self, tape: &Tape, rep: &Tensor) -> Result<Tensor, TensorError>;
}

impl MergeScorer for crate::nn::cells::ScorerParams {
    fn adjacent_scores(&self, tape: &Tape, rep: &Tensor) -> Result<Tensor, TensorError> {
        self.adjacent_scores(tape, rep)
    }
}

/// Whether merge selection is perturbed (training) or exact (inference).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Stochastic,
    Deterministic,
}

/// Search settings threaded through the encoders.
#[derive(Clone, Copy, Debug)]
pub struct SearchOpts {
    pub beam_width: usize,
    pub mode: Mode,
    /// Scale on the Gumbel perturbation in stochastic mode; 0 disables noise.
    pub gumbel_temperature: f64,
}

impl SearchOpts {
    pub fn deterministic(beam_width: usize) -> Self {
        SearchOpts {
            beam_width,
            mode: Mode::Deterministic,
            gumbel_temperature: 1.0,
        }
    }

    pub fn stochastic(beam_width: usize) -> Self {
        SearchOpts {
            beam_width,
            mode: Mode::Stochastic,
            gumbel_temperature: 1.0,
        }
    }
}

/// Counters filled in by the encoders.
#[derive(Clone, Copy, Debug, Default)]
pub struct EncodeStats {
    /// Deepest chain of cell applications from any produced node down to a leaf.
    pub max_depth: u32,
    /// Outer-recursion iterations (1 for the plain beam encoder).
    pub outer_iters: u32,
    /// Total cell applications.
    pub composes: u64,
}

/// One live beam: a node sequence with score and bookkeeping.
#[derive(Clone)]
pub struct Hypothesis {
    /// Node representations, `[len, d]`.
    pub rep: Tensor,
    /// Accumulated log-score, `[1]`. Gradients flow through it.
    pub score: Tensor,
    /// Index of the input hypothesis this one descends from.
    pub origin: usize,
    /// Merge positions taken within the current search, in order.
    pub merges: Vec<usize>,
    /// Composition tree per node, over original token positions.
    pub trees: Vec<Rc<TreeNode>>,
    /// Cell-nesting depth per node.
    pub depths: Vec<u32>,
}

impl Hypothesis {
    /// Wraps a `[n, d]` leaf sequence with score 0 and leaf trees `0..n`.
    pub fn fresh(rep: Tensor) -> Self {
        let n = rep.shape()[0];
        Hypothesis {
            rep,
            score: Tensor::scalar(0.0),
            origin: 0,
            merges: Vec::new(),
            trees: (0..n).map(TreeNode::leaf).collect(),
            depths: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.rep.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn score_val(&self) -> f64 {
        self.score.data()[0]
    }

    /// The contiguous sub-hypothesis covering positions `start..end`, keeping
    /// the score as a seed for the next search.
    pub fn slice_range(
        &self,
        tape: &Tape,
        start: usize,
        end: usize,
        origin: usize,
    ) -> Result<Hypothesis, TensorError> {
        Ok(Hypothesis {
            rep: tape.slice(&self.rep, 0, start, end)?,
            score: self.score.clone(),
            origin,
            merges: Vec::new(),
            trees: self.trees[start..end].to_vec(),
            depths: self.depths[start..end].to_vec(),
        })
    }
}

/// A set of live hypotheses over the same current length.
pub struct BeamState {
    pub hyps: Vec<Hypothesis>,
}

impl BeamState {
    pub fn width(&self) -> usize {
        self.hyps.len()
    }

    /// Current sequence length shared by all hypotheses.
    pub fn len(&self) -> usize {
        self.hyps[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.hyps.is_empty()
    }

    pub fn score_vals(&self) -> Vec<f64> {
        self.hyps.iter().map(|h| h.score_val()).collect()
    }
}

/// One possible merge: extend `beam_index` by composing at `position`.
#[derive(Clone, Copy, Debug)]
pub struct MergeCandidate {
    pub beam_index: usize,
    pub position: usize,
    /// Parent beam score plus the log-softmax of the pair score.
    pub expanded_score: f64,
}

fn gumbel(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random::<f64>().max(1e-300);
    -(-u.ln()).ln()
}

/// Indices of the `min(k, #finite)` largest scores, ties broken toward the
/// lowest index. `-inf` entries are never selected.
pub fn topk_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut ix: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i] > f64::NEG_INFINITY)
        .collect();
    ix.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    ix.truncate(k);
    ix
}

/// Gumbel-perturbed top-k: adds independent Gumbel noise to every finite
/// score and takes the deterministic top-k of the perturbed values, which
/// samples without replacement proportionally to `softmax(scores)`.
pub fn stochastic_topk(scores: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    stochastic_topk_scaled(scores, k, 1.0, rng)
}

/// [`stochastic_topk`] with the noise scaled by `temperature`; 0 recovers the
/// deterministic top-k.
pub fn stochastic_topk_scaled(
    scores: &[f64],
    k: usize,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let perturbed: Vec<f64> = scores
        .iter()
        .map(|&s| {
            if s == f64::NEG_INFINITY {
                s
            } else {
                s + temperature * gumbel(rng)
            }
        })
        .collect();
    topk_indices(&perturbed, k)
}

/// The pooled search step shared by the plain beam encoder and the outer
/// recursion's chunk compressor: candidates from every live hypothesis
/// compete in one top-k. Runs until every hypothesis has length 1 and returns
/// them sorted by score, best first.
pub fn beam_search_pooled<C: Composer, S: MergeScorer>(
    tape: &Tape,
    inputs: Vec<Hypothesis>,
    opts: &SearchOpts,
    rng: &mut ChaCha8Rng,
    cell: &C,
    scorer: &S,
    stats: &mut EncodeStats,
) -> Result<Vec<Hypothesis>, EncodeError> {
    if opts.beam_width == 0 {
        return Err(EncodeError::ZeroBeam);
    }
    let Some(first) = inputs.first() else {
        return Err(EncodeError::EmptyInput);
    };
    if first.is_empty() {
        return Err(EncodeError::EmptyInput);
    }
    debug_assert!(inputs.iter().all(|h| h.len() == first.len()));

    let d = cell.hidden_width();
    let mut live = inputs;
    while live[0].len() > 1 {
        let len = live[0].len();
        let m = len - 1;

        // score all adjacent pairs of every live hypothesis
        let mut lsms: Vec<Tensor> = Vec::with_capacity(live.len());
        let mut cands: Vec<MergeCandidate> = Vec::with_capacity(live.len() * m);
        for (bi, h) in live.iter().enumerate() {
            let e = scorer.adjacent_scores(tape, &h.rep)?;
            let lsm = tape.log_softmax_1d(&e)?;
            let base = h.score_val();
            for (j, &l) in lsm.data().iter().enumerate() {
                cands.push(MergeCandidate {
                    beam_index: bi,
                    position: j,
                    expanded_score: base + l,
                });
            }
            lsms.push(lsm);
        }

        let vals: Vec<f64> = cands.iter().map(|c| c.expanded_score).collect();
        let chosen = match opts.mode {
            Mode::Deterministic => topk_indices(&vals, opts.beam_width),
            Mode::Stochastic => {
                stochastic_topk_scaled(&vals, opts.beam_width, opts.gumbel_temperature, rng)
            }
        };

        // compose all selected pairs in one batch
        let mut pair_rows: Vec<Tensor> = Vec::with_capacity(chosen.len());
        for &ci in &chosen {
            let c = &cands[ci];
            let h = &live[c.beam_index];
            let pair = tape.slice(&h.rep, 0, c.position, c.position + 2)?;
            pair_rows.push(tape.reshape(&pair, &[1, 2 * d])?);
        }
        let refs: Vec<&Tensor> = pair_rows.iter().collect();
        let batch = tape.concat(&refs, 0)?;
        let parents = cell.compose_batch(tape, &batch)?; // [sel, d]

        let mut next: Vec<Hypothesis> = Vec::with_capacity(chosen.len());
        for (si, &ci) in chosen.iter().enumerate() {
            let c = &cands[ci];
            let h = &live[c.beam_index];
            let j = c.position;
            let before = tape.slice(&h.rep, 0, 0, j)?;
            let parent = tape.slice(&parents, 0, si, si + 1)?;
            let after = tape.slice(&h.rep, 0, j + 2, len)?;
            let rep = tape.concat(&[&before, &parent, &after], 0)?;

            let step = tape.slice(&lsms[c.beam_index], 0, j, j + 1)?;
            let score = tape.add(&h.score, &step)?;

            let mut trees = h.trees.clone();
            let right = trees.remove(j + 1);
            let left = trees[j].clone();
            trees[j] = TreeNode::branch(left, right);

            let mut depths = h.depths.clone();
            let nd = depths[j].max(depths[j + 1]) + 1;
            depths.remove(j + 1);
            depths[j] = nd;
            stats.max_depth = stats.max_depth.max(nd);
            stats.composes += 1;

            let mut merges = h.merges.clone();
            merges.push(j);

            next.push(Hypothesis {
                rep,
                score,
                origin: h.origin,
                merges,
                trees,
                depths,
            });
        }
        live = next;
    }

    // best first; stable so equal scores keep selection order
    live.sort_by(|a, b| {
        b.score_val()
            .partial_cmp(&a.score_val())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(live)
}

/// One greedy merge: composes the best-scoring adjacent pair and returns the
/// shortened sequence together with the merge position.
pub fn greedy_step<C: Composer, S: MergeScorer>(
    tape: &Tape,
    seq: &Tensor,
    cell: &C,
    scorer: &S,
) -> Result<(Tensor, usize), EncodeError> {
    let n = seq.shape()[0];
    if n < 2 {
        return Err(EncodeError::TooShort { need: 2, got: n });
    }
    let d = cell.hidden_width();
    let e = scorer.adjacent_scores(tape, seq)?;
    let j = topk_indices(e.data(), 1)[0];
    let pair = tape.reshape(&tape.slice(seq, 0, j, j + 2)?, &[1, 2 * d])?;
    let parent = cell.compose_batch(tape, &pair)?;
    let before = tape.slice(seq, 0, 0, j)?;
    let after = tape.slice(seq, 0, j + 2, n)?;
    let out = tape.concat(&[&before, &parent, &after], 0)?;
    Ok((out, j))
}

/// Greedy encoding: repeated [`greedy_step`] down to a single root vector.
/// Returns the `[d]` root and the trace of `n-1` merge positions.
pub fn greedy_encode<C: Composer, S: MergeScorer>(
    tape: &Tape,
    seq: &Tensor,
    cell: &C,
    scorer: &S,
) -> Result<(Tensor, Vec<usize>), EncodeError> {
    let n = seq.shape()[0];
    if n == 0 {
        return Err(EncodeError::EmptyInput);
    }
    let mut cur = seq.clone();
    let mut trace = Vec::with_capacity(n - 1);
    while cur.shape()[0] > 1 {
        let (next, j) = greedy_step(tape, &cur, cell, scorer)?;
        trace.push(j);
        cur = next;
    }
    let d = cell.hidden_width();
    Ok((tape.reshape(&cur, &[d])?, trace))
}

/// Full beam-search encoding of a `[n, d]` sequence down to length 1.
pub fn beam_encode<C: Composer, S: MergeScorer>(
    tape: &Tape,
    seq: &Tensor,
    opts: &SearchOpts,
    rng: &mut ChaCha8Rng,
    cell: &C,
    scorer: &S,
    stats: &mut EncodeStats,
) -> Result<BeamState, EncodeError> {
    let hyps = beam_search_pooled(
        tape,
        vec![Hypothesis::fresh(seq.clone())],
        opts,
        rng,
        cell,
        scorer,
        stats,
    )?;
    Ok(BeamState { hyps })
}

/// Softmax-weighted mixture of the root vectors by accumulated scores.
pub fn marginalize_roots(tape: &Tape, state: &BeamState) -> Result<Tensor, EncodeError> {
    if state.is_empty() {
        return Err(EncodeError::EmptyInput);
    }
    for h in &state.hyps {
        if h.len() != 1 {
            return Err(EncodeError::NotReduced(h.len()));
        }
    }
    let w = state.width();
    let d = state.hyps[0].rep.shape()[1];
    let reps: Vec<&Tensor> = state.hyps.iter().map(|h| &h.rep).collect();
    let roots = tape.concat(&reps, 0)?; // [w, d]
    let scores: Vec<&Tensor> = state.hyps.iter().map(|h| &h.score).collect();
    let score_vec = tape.concat(&scores, 0)?; // [w]
    let weights = tape.softmax(&score_vec, 0)?;
    let weights_row = tape.reshape(&weights, &[1, w])?;
    let mixed = tape.matmul(&weights_row, &roots)?;
    Ok(tape.reshape(&mixed, &[d])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::cells::{GrcParams, ScorerParams};
    use crate::tree;
    use rand::SeedableRng;
    use std::cell::RefCell;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn seq(n: usize, d: usize, seed: u64) -> Tensor {
        let mut r = rng(seed);
        let data: Vec<f64> = (0..n * d).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
        Tensor::from_vec(&[n, d], data).unwrap()
    }

    /// Scorer that replays a script of per-step score vectors.
    struct ScriptScorer {
        script: RefCell<Vec<Vec<f64>>>,
    }

    impl ScriptScorer {
        fn new(steps: Vec<Vec<f64>>) -> Self {
            let mut script = steps;
            script.reverse();
            ScriptScorer {
                script: RefCell::new(script),
            }
        }
    }

    impl MergeScorer for ScriptScorer {
        fn adjacent_scores(&self, _tape: &Tape, rep: &Tensor) -> Result<Tensor, TensorError> {
            let step = self
                .script
                .borrow_mut()
                .pop()
                .expect("script exhausted");
            assert_eq!(step.len(), rep.shape()[0] - 1);
            Tensor::from_vec(&[step.len()], step)
        }
    }

    #[test]
    fn greedy_step_composes_the_only_pair_at_n2() {
        let d = 4;
        let cell = GrcParams::new(d, 2 * d, &mut rng(1));
        let scorer = ScriptScorer::new(vec![vec![-3.0]]);
        let tape = Tape::inference();
        let s = seq(2, d, 2);
        let (out, j) = greedy_step(&tape, &s, &cell, &scorer).unwrap();
        assert_eq!(j, 0);
        assert_eq!(out.shape(), &[1, d]);
        let pair = tape.reshape(&s, &[1, 2 * d]).unwrap();
        let direct = cell.compose_batch(&tape, &pair).unwrap();
        assert_eq!(out.data(), direct.data());
    }

    #[test]
    fn greedy_step_merges_argmax_position() {
        let d = 4;
        let cell = GrcParams::new(d, 2 * d, &mut rng(3));
        let scorer = ScriptScorer::new(vec![vec![-1.0, 1.0]]);
        let tape = Tape::inference();
        let s = seq(3, d, 4);
        let (out, j) = greedy_step(&tape, &s, &cell, &scorer).unwrap();
        assert_eq!(j, 1);
        assert_eq!(out.shape(), &[2, d]);
        // first item unchanged, second is R(h2, h3)
        assert_eq!(out.row(0), s.row(0));
        let pair = tape
            .reshape(&tape.slice(&s, 0, 1, 3).unwrap(), &[1, 2 * d])
            .unwrap();
        let direct = cell.compose_batch(&tape, &pair).unwrap();
        assert_eq!(out.row(1), direct.row(0));
    }

    #[test]
    fn greedy_step_rejects_single_node() {
        let d = 2;
        let cell = GrcParams::new(d, 2 * d, &mut rng(5));
        let scorer = ScriptScorer::new(vec![]);
        let tape = Tape::inference();
        let s = seq(1, d, 6);
        assert!(matches!(
            greedy_step(&tape, &s, &cell, &scorer),
            Err(EncodeError::TooShort { .. })
        ));
    }

    #[test]
    fn rigged_scorer_reproduces_arithmetic_parse_order() {
        // tokens 7 + 9 x 5 - 2; target composition
        // (((7 +) ((9 x) 5)) (- 2)) via merges [2, 2, 0, 0, 1, 0]
        let d = 4;
        let cell = GrcParams::new(d, 2 * d, &mut rng(7));
        let peak = |m: usize, j: usize| {
            let mut v = vec![0.0; m];
            v[j] = 10.0;
            v
        };
        let scorer = ScriptScorer::new(vec![
            peak(6, 2),
            peak(5, 2),
            peak(4, 0),
            peak(3, 0),
            peak(2, 1),
            peak(1, 0),
        ]);
        let tape = Tape::inference();
        let s = seq(7, d, 8);
        let (_, trace) = greedy_encode(&tape, &s, &cell, &scorer).unwrap();
        assert_eq!(trace, vec![2, 2, 0, 0, 1, 0]);
        let tree = tree::from_trace(7, &trace).unwrap();
        let labels: Vec<String> = ["7", "+", "9", "x", "5", "-", "2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(tree.bracketed(&labels), "(((7 +) ((9 x) 5)) (- 2))");
    }

    #[test]
    fn greedy_encode_trivial_and_merge_count() {
        let d = 3;
        let cell = GrcParams::new(d, 2 * d, &mut rng(9));
        let scorer = ScorerParams::new(d, &mut rng(10));
        let tape = Tape::inference();

        let one = seq(1, d, 11);
        let (root, trace) = greedy_encode(&tape, &one, &cell, &scorer).unwrap();
        assert!(trace.is_empty());
        assert_eq!(root.data(), one.data());

        let four = seq(4, d, 12);
        let (_, trace) = greedy_encode(&tape, &four, &cell, &scorer).unwrap();
        assert_eq!(trace.len(), 3);
        let t = tree::from_trace(4, &trace).expect("trace must describe a valid tree");
        assert_eq!(t.leaves(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn beam_one_deterministic_equals_greedy() {
        let d = 5;
        let cell = GrcParams::new(d, 2 * d, &mut rng(13));
        let scorer = ScorerParams::new(d, &mut rng(14));
        for n in 1..=32 {
            let s = seq(n, d, 100 + n as u64);
            let tape = Tape::inference();
            let (root, trace) = greedy_encode(&tape, &s, &cell, &scorer).unwrap();
            let mut stats = EncodeStats::default();
            let mut r = rng(0);
            let state = beam_encode(
                &tape,
                &s,
                &SearchOpts::deterministic(1),
                &mut r,
                &cell,
                &scorer,
                &mut stats,
            )
            .unwrap();
            assert_eq!(state.width(), 1);
            let h = &state.hyps[0];
            assert_eq!(h.merges, trace, "n={}", n);
            let bits_equal = h
                .rep
                .data()
                .iter()
                .zip(root.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(bits_equal, "n={}", n);
        }
    }

    #[test]
    fn two_tokens_only_one_candidate_and_zero_score() {
        let d = 4;
        let cell = GrcParams::new(d, 2 * d, &mut rng(15));
        let scorer = ScorerParams::new(d, &mut rng(16));
        let tape = Tape::inference();
        let s = seq(2, d, 17);
        let mut stats = EncodeStats::default();
        for b in [1usize, 3, 7] {
            let mut r = rng(b as u64);
            let state = beam_encode(
                &tape,
                &s,
                &SearchOpts::deterministic(b),
                &mut r,
                &cell,
                &scorer,
                &mut stats,
            )
            .unwrap();
            assert_eq!(state.width(), 1);
            assert_eq!(state.hyps[0].score_val(), 0.0);
        }
    }

    /// Exhaustively enumerates every merge sequence with its exact score.
    fn enumerate_paths<C: Composer, S: MergeScorer>(
        tape: &Tape,
        seq: &Tensor,
        cell: &C,
        scorer: &S,
    ) -> Vec<(Vec<usize>, f64)> {
        fn recurse<C: Composer, S: MergeScorer>(
            tape: &Tape,
            cur: &Tensor,
            cell: &C,
            scorer: &S,
            prefix: &mut Vec<usize>,
            score: f64,
            out: &mut Vec<(Vec<usize>, f64)>,
        ) {
            let n = cur.shape()[0];
            if n == 1 {
                out.push((prefix.clone(), score));
                return;
            }
            let d = cell.hidden_width();
            let e = scorer.adjacent_scores(tape, cur).unwrap();
            let lsm = tape.log_softmax_1d(&e).unwrap();
            for j in 0..n - 1 {
                let pair = tape
                    .reshape(&tape.slice(cur, 0, j, j + 2).unwrap(), &[1, 2 * d])
                    .unwrap();
                let parent = cell.compose_batch(tape, &pair).unwrap();
                let before = tape.slice(cur, 0, 0, j).unwrap();
                let after = tape.slice(cur, 0, j + 2, n).unwrap();
                let next = tape.concat(&[&before, &parent, &after], 0).unwrap();
                prefix.push(j);
                recurse(tape, &next, cell, scorer, prefix, score + lsm.data()[j], out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        recurse(tape, seq, cell, scorer, &mut Vec::new(), 0.0, &mut out);
        out
    }

    #[test]
    fn beam_scores_match_exhaustive_enumeration() {
        let d = 4;
        let cell = GrcParams::new(d, 2 * d, &mut rng(19));
        let scorer = ScorerParams::new(d, &mut rng(20));
        let tape = Tape::inference();
        let s = seq(4, d, 21);
        let paths = enumerate_paths(&tape, &s, &cell, &scorer);
        let mut stats = EncodeStats::default();
        let mut r = rng(22);
        let state = beam_encode(
            &tape,
            &s,
            &SearchOpts::deterministic(2),
            &mut r,
            &cell,
            &scorer,
            &mut stats,
        )
        .unwrap();
        for h in &state.hyps {
            let (_, expected) = paths
                .iter()
                .find(|(t, _)| *t == h.merges)
                .expect("trace must appear in the enumeration");
            assert!(
                (h.score_val() - expected).abs() < 1e-12,
                "trace {:?}: {} vs {}",
                h.merges,
                h.score_val(),
                expected
            );
        }
    }

    #[test]
    fn beam_scores_are_replayable_from_traces() {
        let d = 4;
        let cell = GrcParams::new(d, 2 * d, &mut rng(23));
        let scorer = ScorerParams::new(d, &mut rng(24));
        let tape = Tape::inference();
        let s = seq(6, d, 25);
        let mut stats = EncodeStats::default();
        let mut r = rng(26);
        let state = beam_encode(
            &tape,
            &s,
            &SearchOpts::stochastic(3),
            &mut r,
            &cell,
            &scorer,
            &mut stats,
        )
        .unwrap();
        for h in &state.hyps {
            // replay the trace step by step
            let mut cur = s.clone();
            let mut total = 0.0;
            for &j in &h.merges {
                let n = cur.shape()[0];
                let e = scorer.adjacent_scores(&tape, &cur).unwrap();
                let lsm = tape.log_softmax_1d(&e).unwrap();
                total += lsm.data()[j];
                let pair = tape
                    .reshape(&tape.slice(&cur, 0, j, j + 2).unwrap(), &[1, 2 * d])
                    .unwrap();
                let parent = cell.compose_batch(&tape, &pair).unwrap();
                let before = tape.slice(&cur, 0, 0, j).unwrap();
                let after = tape.slice(&cur, 0, j + 2, n).unwrap();
                cur = tape.concat(&[&before, &parent, &after], 0).unwrap();
            }
            assert!((h.score_val() - total).abs() < 1e-12);
            // projectivity: the trace reconstructs a tree over the input order
            let t = tree::from_trace(6, &h.merges).unwrap();
            assert_eq!(t.leaves(), (0..6).collect::<Vec<_>>());
        }
        // sorted descending
        let vals = state.score_vals();
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn topk_basics() {
        assert_eq!(topk_indices(&[0.3, 0.1, 0.7], 5), vec![2, 0, 1]);
        assert_eq!(topk_indices(&[1.0, 1.0, 0.5], 2), vec![0, 1]);
        let ninf = f64::NEG_INFINITY;
        assert_eq!(topk_indices(&[ninf, 0.5, ninf], 3), vec![1]);
    }

    #[test]
    fn stochastic_topk_returns_everything_when_k_covers() {
        let mut r = rng(31);
        let mut got = stochastic_topk(&[0.1, 0.9, -0.5], 3, &mut r);
        got.sort_unstable();
        assert_eq!(got, vec![0, 1, 2]);
    }

    #[test]
    fn stochastic_topk_never_selects_neg_inf() {
        let ninf = f64::NEG_INFINITY;
        let mut r = rng(32);
        for _ in 0..200 {
            let got = stochastic_topk(&[ninf, 2.0, ninf], 2, &mut r);
            assert_eq!(got, vec![1]);
        }
    }

    #[test]
    fn stochastic_topk_samples_proportional_to_softmax() {
        // scores [0, ln 3] -> p(index 1) = 0.75
        let mut r = rng(33);
        let trials = 100_000;
        let mut hits = 0usize;
        for _ in 0..trials {
            if stochastic_topk(&[0.0, 3.0_f64.ln()], 1, &mut r)[0] == 1 {
                hits += 1;
            }
        }
        let freq = hits as f64 / trials as f64;
        assert!((freq - 0.75).abs() < 0.01, "frequency {}", freq);
    }

    #[test]
    fn marginalize_identity_mean_and_analytic_mix() {
        let d = 3;
        let tape = Tape::inference();
        let mk = |vals: &[f64], score: f64| Hypothesis {
            rep: Tensor::from_vec(&[1, d], vals.to_vec()).unwrap(),
            score: Tensor::scalar(score),
            origin: 0,
            merges: vec![],
            trees: vec![TreeNode::leaf(0)],
            depths: vec![0],
        };

        // width 1: identity
        let one = BeamState {
            hyps: vec![mk(&[1.0, 2.0, 3.0], -0.3)],
        };
        let root = marginalize_roots(&tape, &one).unwrap();
        assert_eq!(root.data(), &[1.0, 2.0, 3.0]);

        // equal scores: arithmetic mean
        let eq = BeamState {
            hyps: vec![mk(&[2.0, 0.0, 4.0], 1.0), mk(&[0.0, 2.0, 0.0], 1.0)],
        };
        let root = marginalize_roots(&tape, &eq).unwrap();
        for (got, want) in root.data().iter().zip([1.0, 1.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }

        // scores [0, ln 3]: 0.25/0.75 mixture
        let mix = BeamState {
            hyps: vec![mk(&[4.0, 0.0, 0.0], 0.0), mk(&[0.0, 4.0, 0.0], 3.0_f64.ln())],
        };
        let root = marginalize_roots(&tape, &mix).unwrap();
        assert!((root.data()[0] - 1.0).abs() < 1e-12);
        assert!((root.data()[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn marginalize_rejects_unreduced_state() {
        let d = 2;
        let tape = Tape::inference();
        let state = BeamState {
            hyps: vec![Hypothesis::fresh(seq(3, d, 40))],
        };
        assert!(matches!(
            marginalize_roots(&tape, &state),
            Err(EncodeError::NotReduced(3))
        ));
    }

    #[test]
    fn marginalization_weights_form_probability_vector() {
        let tape = Tape::inference();
        let scores = Tensor::from_vec(&[4], vec![0.2, -1.5, 3.0, 0.0]).unwrap();
        let w = tape.softmax(&scores, 0).unwrap();
        let total: f64 = w.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(w.data().iter().all(|&v| v >= 0.0));
    }
}
