//! The outer balanced k-ary recursion.
//!
//! Each outer iteration partitions the live beam state into contiguous
//! chunks of size `k`, compresses every chunk to a single vector per beam
//! with the inner beam search ([`rk_apply`]), and recombines the per-chunk
//! beams into one state for the next iteration. Recombination is where beam
//! alignment happens: per-chunk beams are resampled in proportion to their
//! scores before being strung together, so high-scoring cross-chunk
//! combinations survive; slot 0 always keeps the concatenation of every
//! chunk's top beam.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::beam::{
    beam_search_pooled, marginalize_roots, BeamState, Composer, EncodeStats, MergeScorer, Mode,
    SearchOpts,
};
use crate::error::EncodeError;
use crate::tensor::tape::Tape;
use crate::tensor::Tensor;

/// How per-chunk beams are recombined between outer iterations.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CombineStrategy {
    /// Score-proportional resampling per chunk, then concatenation.
    BeamAlign,
    /// Positional concatenation of same-rank beams.
    StringIt,
    /// Uniform resampling per chunk (control for BeamAlign).
    RandomAlign,
}

impl std::str::FromStr for CombineStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "align" | "beam_align" => Ok(CombineStrategy::BeamAlign),
            "string" | "string_it" => Ok(CombineStrategy::StringIt),
            "random" | "random_align" => Ok(CombineStrategy::RandomAlign),
            other => Err(format!("unknown combine strategy {other:?}")),
        }
    }
}

/// A partition of a beam state into contiguous chunks along the sequence axis.
pub struct ChunkSet {
    pub chunks: Vec<BeamState>,
    /// `(start, end)` spans of each chunk in the source state.
    pub bounds: Vec<(usize, usize)>,
    pub source_len: usize,
    pub k: usize,
}

/// Splits `state` into `ceil(n/k)` contiguous chunks; the last one may be
/// short. Chunk hypotheses keep their scores as seeds for the inner search.
pub fn chunk(tape: &Tape, state: &BeamState, k: usize) -> Result<ChunkSet, EncodeError> {
    if k < 2 {
        return Err(EncodeError::BadChunkSize(k));
    }
    if state.is_empty() || state.len() == 0 {
        return Err(EncodeError::EmptyInput);
    }
    let n = state.len();
    let mut bounds = Vec::with_capacity(n.div_ceil(k));
    let mut chunks = Vec::with_capacity(bounds.capacity());
    let mut start = 0;
    while start < n {
        let end = (start + k).min(n);
        let hyps = state
            .hyps
            .iter()
            .enumerate()
            .map(|(i, h)| h.slice_range(tape, start, end, i))
            .collect::<Result<Vec<_>, _>>()?;
        chunks.push(BeamState { hyps });
        bounds.push((start, end));
        start = end;
    }
    Ok(ChunkSet {
        chunks,
        bounds,
        source_len: n,
        k,
    })
}

/// Compresses one chunk to a single vector per beam.
///
/// Candidates from all input beams compete in one pooled top-k, with expanded
/// scores seeded from the input beam scores. A length-1 chunk passes through
/// unchanged. With `independent_beams` each input beam runs its own width-1
/// search instead of the pooled expansion.
#[allow(clippy::too_many_arguments)]
pub fn rk_apply<C: Composer, S: MergeScorer>(
    tape: &Tape,
    chunk: BeamState,
    opts: &SearchOpts,
    independent_beams: bool,
    rng: &mut ChaCha8Rng,
    cell: &C,
    scorer: &S,
    stats: &mut EncodeStats,
) -> Result<BeamState, EncodeError> {
    if chunk.is_empty() {
        return Err(EncodeError::EmptyInput);
    }
    if chunk.len() == 1 {
        return Ok(chunk);
    }
    if independent_beams {
        let mut hyps = Vec::with_capacity(chunk.hyps.len());
        let solo = SearchOpts {
            beam_width: 1,
            ..*opts
        };
        for h in chunk.hyps {
            let out = beam_search_pooled(tape, vec![h], &solo, rng, cell, scorer, stats)?;
            hyps.extend(out);
        }
        hyps.sort_by(|a, b| {
            b.score_val()
                .partial_cmp(&a.score_val())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        return Ok(BeamState { hyps });
    }
    let hyps = beam_search_pooled(tape, chunk.hyps, opts, rng, cell, scorer, stats)?;
    Ok(BeamState { hyps })
}

/// Recombined state plus the per-slot, per-chunk beam picks that formed it.
pub struct CombineOutput {
    pub state: BeamState,
    /// `picks[slot][chunk]` is the chunk-beam index strung into that slot.
    pub picks: Vec<Vec<usize>>,
}

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

fn softmax_vals(scores: &[f64]) -> Vec<f64> {
    let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - mx).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Generalized recombination. Chunk outputs may carry fewer than `target`
/// beams (short chunks early on); positional picks clamp to the available
/// width and sampling draws from whatever is there. The output width is
/// `min(target, product of chunk widths)` and slot 0 is always the string of
/// per-chunk top beams with score `sum of per-chunk maxima`.
pub fn combine(
    tape: &Tape,
    outs: &[BeamState],
    target: usize,
    strategy: CombineStrategy,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<CombineOutput, EncodeError> {
    if outs.is_empty() {
        return Err(EncodeError::EmptyInput);
    }
    if target == 0 {
        return Err(EncodeError::ZeroBeam);
    }
    for s in outs {
        for h in &s.hyps {
            if h.len() != 1 {
                return Err(EncodeError::NotReduced(h.len()));
            }
        }
    }
    let widths: Vec<usize> = outs.iter().map(|s| s.width()).collect();
    let mut reachable: usize = 1;
    for &w in &widths {
        reachable = reachable.saturating_mul(w).min(target);
    }
    let b_out = reachable;

    // picks are drawn chunk-major so each chunk consumes its own run of rng draws
    let mut picks_by_chunk: Vec<Vec<usize>> = Vec::with_capacity(outs.len());
    for (l, s) in outs.iter().enumerate() {
        let w = widths[l];
        let mut picks = Vec::with_capacity(b_out);
        match (strategy, mode) {
            (CombineStrategy::StringIt, _) | (CombineStrategy::BeamAlign, Mode::Deterministic) => {
                // hypotheses come out of the inner search rank-ordered, so
                // positional pairing is rank-order alignment
                for slot in 0..b_out {
                    picks.push(slot.min(w - 1));
                }
            }
            (CombineStrategy::BeamAlign, Mode::Stochastic) => {
                let weights = softmax_vals(&s.score_vals());
                for _ in 0..b_out {
                    picks.push(sample_index(&weights, rng));
                }
            }
            (CombineStrategy::RandomAlign, _) => {
                for _ in 0..b_out {
                    picks.push(rng.random_range(0..w));
                }
            }
        }
        picks[0] = 0; // slot-0 guarantee: the top beam of every chunk
        picks_by_chunk.push(picks);
    }

    let mut hyps = Vec::with_capacity(b_out);
    let mut picks = Vec::with_capacity(b_out);
    for slot in 0..b_out {
        let slot_picks: Vec<usize> = picks_by_chunk.iter().map(|p| p[slot]).collect();
        let parts: Vec<&crate::beam::Hypothesis> = outs
            .iter()
            .zip(&slot_picks)
            .map(|(s, &i)| &s.hyps[i])
            .collect();
        let reps: Vec<&Tensor> = parts.iter().map(|h| &h.rep).collect();
        let rep = tape.concat(&reps, 0)?;
        let mut score = parts[0].score.clone();
        for p in &parts[1..] {
            score = tape.add(&score, &p.score)?;
        }
        let trees = parts.iter().map(|h| h.trees[0].clone()).collect();
        let depths = parts.iter().map(|h| h.depths[0]).collect();
        hyps.push(crate::beam::Hypothesis {
            rep,
            score,
            origin: slot,
            merges: Vec::new(),
            trees,
            depths,
        });
        picks.push(slot_picks);
    }
    Ok(CombineOutput {
        state: BeamState { hyps },
        picks,
    })
}

fn check_uniform_width(outs: &[BeamState]) -> Result<(), EncodeError> {
    let widths: Vec<usize> = outs.iter().map(|s| s.width()).collect();
    if widths.windows(2).any(|w| w[0] != w[1]) {
        return Err(EncodeError::WidthMismatch(widths));
    }
    Ok(())
}

/// Score-proportional beam alignment across chunk outputs (sampled in
/// stochastic mode, rank-order in deterministic mode).
pub fn beam_align(
    tape: &Tape,
    outs: &[BeamState],
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<CombineOutput, EncodeError> {
    check_uniform_width(outs)?;
    let b = outs.first().map(|s| s.width()).unwrap_or(0);
    combine(tape, outs, b.max(1), CombineStrategy::BeamAlign, mode, rng)
}

/// Positional concatenation: slot `i` strings together every chunk's beam `i`
/// and sums their scores.
pub fn string_it(tape: &Tape, outs: &[BeamState]) -> Result<CombineOutput, EncodeError> {
    check_uniform_width(outs)?;
    let b = outs.first().map(|s| s.width()).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    combine(
        tape,
        outs,
        b.max(1),
        CombineStrategy::StringIt,
        Mode::Deterministic,
        &mut rng,
    )
}

/// Like [`beam_align`] but sampling uniformly instead of by score.
pub fn random_align(
    tape: &Tape,
    outs: &[BeamState],
    rng: &mut ChaCha8Rng,
) -> Result<CombineOutput, EncodeError> {
    check_uniform_width(outs)?;
    let b = outs.first().map(|s| s.width()).unwrap_or(0);
    combine(
        tape,
        outs,
        b.max(1),
        CombineStrategy::RandomAlign,
        Mode::Stochastic,
        rng,
    )
}

use rand::SeedableRng;

/// Settings for one outer-recursion encode.
#[derive(Clone, Copy, Debug)]
pub struct RirOpts {
    pub k: usize,
    pub search: SearchOpts,
    pub strategy: CombineStrategy,
    /// Run chunk beams independently instead of pooling their candidates.
    pub independent_beams: bool,
}

/// Result of a full encode: the mixed root, the final beam state, and counters.
pub struct RirOutput {
    pub root: Tensor,
    pub state: BeamState,
    pub stats: EncodeStats,
}

/// Runs the outer recursion over a `[n, d]` leaf sequence: chunk, compress
/// each chunk with the inner search, recombine; repeat until one position is
/// left, then marginalize the roots. A single-chunk iteration feeds its
/// output straight to the next round, so `k >= n` reduces to the plain beam
/// encoder.
pub fn rir_encode<C: Composer, S: MergeScorer>(
    tape: &Tape,
    leaves: &Tensor,
    opts: &RirOpts,
    rng: &mut ChaCha8Rng,
    cell: &C,
    scorer: &S,
) -> Result<RirOutput, EncodeError> {
    if leaves.shape()[0] == 0 {
        return Err(EncodeError::EmptyInput);
    }
    let mut stats = EncodeStats::default();
    let mut state = BeamState {
        hyps: vec![crate::beam::Hypothesis::fresh(leaves.clone())],
    };
    while state.len() > 1 {
        stats.outer_iters += 1;
        let parts = chunk(tape, &state, opts.k)?;
        let mut outs = Vec::with_capacity(parts.chunks.len());
        for c in parts.chunks {
            outs.push(rk_apply(
                tape,
                c,
                &opts.search,
                opts.independent_beams,
                rng,
                cell,
                scorer,
                &mut stats,
            )?);
        }
        state = if outs.len() == 1 {
            outs.pop().unwrap()
        } else {
            combine(
                tape,
                &outs,
                opts.search.beam_width,
                opts.strategy,
                opts.search.mode,
                rng,
            )?
            .state
        };
    }
    let root = marginalize_roots(tape, &state)?;
    Ok(RirOutput { root, state, stats })
}
