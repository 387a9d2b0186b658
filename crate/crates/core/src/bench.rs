//! Scaling benchmarks: wall time, peak tensor memory, cell-nesting depth,
//! and outer-iteration counts across encoder variants and length buckets.
//!
//! Memory is the high-water mark of the crate's own tensor allocations, not
//! OS resident size, so runs are portable and repeatable. Benchmarks run
//! single-threaded for timing stability.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::beam::EncodeStats;
use crate::config::{InferenceMode, ModelConfig, ModelKind};
use crate::error::TrainError;
use crate::listops::gen::{generate_in_range, mix_seed, GenConfig};
use crate::model::{Model, RunMode};
use crate::tensor::tape::Tape;
use crate::tensor::{peak_tensor_bytes, reset_peak_tensor_bytes};
use crate::train::Sample;

/// One row of the benchmark report.
#[derive(Clone, Debug)]
pub struct BenchRecord {
    pub variant: String,
    pub bucket: String,
    pub k: usize,
    pub beam: usize,
    /// Wall-clock seconds for the whole bucket (100 samples by default).
    pub seconds: f64,
    pub peak_bytes: usize,
    pub max_depth: u32,
    pub max_outer_iters: u32,
    pub samples: usize,
    /// "ok" or "oom" (soft memory budget exceeded; row keeps partial counts).
    pub status: String,
}

impl BenchRecord {
    fn depth_bound_ok(&self) -> bool {
        self.max_depth <= (self.k.max(2) as u32 - 1) * self.max_outer_iters.max(1)
    }
}

/// Encoder variants measured by the suite.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Variant {
    Chain,
    Bbt,
    /// Beam model evaluated with the outer recursion kept on.
    RirEbt,
    /// Same weights, full-sequence beam search at evaluation.
    Ebt,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Chain, Variant::Bbt, Variant::RirEbt, Variant::Ebt];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Chain => "chain",
            Variant::Bbt => "bbt",
            Variant::RirEbt => "rir_ebt",
            Variant::Ebt => "ebt",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chain" => Ok(Variant::Chain),
            "bbt" => Ok(Variant::Bbt),
            "rir_ebt" | "rir-ebt" => Ok(Variant::RirEbt),
            "ebt" => Ok(Variant::Ebt),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

/// Benchmark settings. The default buckets mirror the scaling study:
/// 200-250, 500-600, 900-1000, 1500-2000 tokens at batch size 1.
#[derive(Clone, Debug)]
pub struct BenchOpts {
    pub buckets: Vec<(usize, usize)>,
    pub samples_per_bucket: usize,
    pub seed: u64,
    /// Abort a variant/bucket cell once live tensor bytes pass this.
    pub memory_budget_bytes: usize,
    /// Record gradients during the timed pass (adds tape cost).
    pub with_tape: bool,
}

impl Default for BenchOpts {
    fn default() -> Self {
        BenchOpts {
            buckets: vec![(200, 250), (500, 600), (900, 1000), (1500, 2000)],
            samples_per_bucket: 100,
            seed: 0,
            memory_budget_bytes: 4 << 30,
            with_tape: false,
        }
    }
}

/// A compact model config for benchmarking; the trend, not the accuracy,
/// is what the suite measures.
pub fn bench_model_config(seed: u64) -> ModelConfig {
    ModelConfig {
        model: ModelKind::RirEbt,
        d: 32,
        d_s: 8,
        d_cell: 64,
        k: 30,
        beam: 3,
        seed,
        ..ModelConfig::default()
    }
}

/// Max cell-nesting depth and other counters for one deterministic encode.
pub fn depth_probe(model: &Model, ids: &[u32]) -> Result<EncodeStats, TrainError> {
    let tape = Tape::inference();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.encode(&tape, ids, RunMode::Eval, &mut rng)?;
    Ok(out.stats)
}

fn bucket_data(lo: usize, hi: usize, count: usize, seed: u64) -> Result<Vec<Sample>, TrainError> {
    let cfg = GenConfig {
        max_length: hi,
        recursion_prob: 0.55,
        ..GenConfig::default()
    };
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, 0xB1), i as u64));
        let s = generate_in_range(&cfg, lo, &mut rng)
            .map_err(|e| TrainError::EmptyDataset(e.to_string()))?;
        out.push(Sample::from_listops(&s).map_err(|e| TrainError::EmptyDataset(e.to_string()))?);
    }
    Ok(out)
}

fn model_for(variant: Variant, seed: u64) -> Result<Model, TrainError> {
    let mut cfg = bench_model_config(seed);
    match variant {
        Variant::Chain => {
            cfg.model = ModelKind::Chain;
            cfg.prechunk = false;
        }
        Variant::Bbt => {
            cfg.model = ModelKind::Bbt;
            cfg.prechunk = false;
        }
        Variant::RirEbt => cfg.inference = InferenceMode::Rir,
        Variant::Ebt => cfg.inference = InferenceMode::NonRir,
    }
    Model::new(cfg).map_err(|e| TrainError::Tensor(e))
}

/// Runs every variant over every bucket and returns one record per cell.
pub fn bench(variants: &[Variant], opts: &BenchOpts) -> Result<Vec<BenchRecord>, TrainError> {
    let mut records = Vec::new();
    for &(lo, hi) in &opts.buckets {
        let data = bucket_data(lo, hi, opts.samples_per_bucket, opts.seed)?;
        for &variant in variants {
            let model = model_for(variant, opts.seed)?;
            let mut max_depth = 0u32;
            let mut max_outer = 0u32;
            let mut status = "ok";
            let mut done = 0usize;
            reset_peak_tensor_bytes();
            let start = Instant::now();
            for (i, s) in data.iter().enumerate() {
                let tape = if opts.with_tape {
                    Tape::new()
                } else {
                    Tape::inference()
                };
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, i as u64));
                let out = model.encode(&tape, &s.ids, RunMode::Eval, &mut rng)?;
                max_depth = max_depth.max(out.stats.max_depth);
                max_outer = max_outer.max(out.stats.outer_iters);
                done += 1;
                if crate::tensor::live_tensor_bytes() > opts.memory_budget_bytes {
                    status = "oom";
                    break;
                }
            }
            let seconds = start.elapsed().as_secs_f64();
            let record = BenchRecord {
                variant: variant.name().to_string(),
                bucket: format!("{lo}-{hi}"),
                k: model.cfg.k,
                beam: model.cfg.beam,
                seconds,
                peak_bytes: peak_tensor_bytes(),
                max_depth,
                max_outer_iters: max_outer,
                samples: done,
                status: status.to_string(),
            };
            debug_assert!(
                variant == Variant::Chain || variant == Variant::Ebt || record.depth_bound_ok()
            );
            records.push(record);
        }
    }
    Ok(records)
}

pub fn write_csv(path: &Path, records: &[BenchRecord]) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "variant,bucket,k,beam,seconds,peak_mb,max_depth,max_outer_iters,samples,status"
    )?;
    for r in records {
        writeln!(
            f,
            "{},{},{},{},{:.4},{:.2},{},{},{},{}",
            r.variant,
            r.bucket,
            r.k,
            r.beam,
            r.seconds,
            r.peak_bytes as f64 / (1024.0 * 1024.0),
            r.max_depth,
            r.max_outer_iters,
            r.samples,
            r.status
        )?;
    }
    Ok(())
}
