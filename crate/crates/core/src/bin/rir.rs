//! Command-line front end: dataset generation, training, evaluation,
//! tree export, and the scaling benchmark.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rir_core::bench::{bench, write_csv, BenchOpts, Variant};
use rir_core::checkpoint;
use rir_core::config::ConfigOverlay;
use rir_core::listops::gen::{make_splits, mix_seed, read_jsonl, write_jsonl, SplitCounts};
use rir_core::listops::{self, eval::evaluate as listops_evaluate};
use rir_core::model::{Model, RunMode};
use rir_core::tensor::tape::Tape;
use rir_core::train::{evaluate, to_samples, train};

#[derive(Parser)]
#[command(name = "rir", about = "Nested-recursion sequence encoder toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Plain-text `key = value` config file (flags below override it).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Outer-recursion chunk size.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Beam width.
    #[arg(long, global = true)]
    beam: Option<usize>,
    /// Beam recombination: align | string | random.
    #[arg(long, global = true)]
    combine: Option<String>,
    /// Evaluation-time encoder route: rir | non-rir.
    #[arg(long, global = true)]
    inference: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the ListOps dataset bundle as JSONL files.
    Generate {
        #[arg(long, default_value_t = 8000)]
        train: usize,
        #[arg(long, default_value_t = 1000)]
        dev: usize,
        #[arg(long, default_value_t = 1000)]
        test: usize,
        /// Samples per generalization split.
        #[arg(long = "gen", default_value_t = 500)]
        generalization: usize,
    },
    /// Train a model on a generated dataset directory.
    Train {
        /// Directory holding train.jsonl and dev.jsonl.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Encoder kind: rir_ebt | bbt | chain.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        d: Option<usize>,
    },
    /// Evaluate a checkpoint on a JSONL split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// JSONL file to evaluate.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 100)]
        bucket_width: usize,
    },
    /// Print the induced bracketed tree for one expression.
    Parse {
        /// Expression text, e.g. "[MAX 1 [SM 2 3 ] ]".
        #[arg(long)]
        expr: String,
        /// Checkpoint to parse with; omitted means fresh seeded parameters.
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Run the scaling benchmark and emit CSV.
    Bench {
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Comma-separated subset of chain,bbt,rir_ebt,ebt.
        #[arg(long)]
        variants: Option<String>,
        /// Length buckets as lo-hi pairs, comma separated.
        #[arg(long, default_value = "200-250,500-600,900-1000,1500-2000")]
        buckets: String,
    },
}

fn overlay_from(cli: &Cli) -> Result<ConfigOverlay> {
    let mut overlay = match &cli.config {
        Some(path) => ConfigOverlay::from_file(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => ConfigOverlay::default(),
    };
    if let Some(s) = cli.seed {
        overlay.set("seed", s.to_string());
    }
    if let Some(k) = cli.k {
        overlay.set("k", k.to_string());
    }
    if let Some(b) = cli.beam {
        overlay.set("beam", b.to_string());
    }
    if let Some(c) = &cli.combine {
        overlay.set("combine", c.clone());
    }
    if let Some(i) = &cli.inference {
        overlay.set("inference", i.clone());
    }
    Ok(overlay)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Generate {
            train,
            dev,
            test,
            generalization,
        } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("data"));
            std::fs::create_dir_all(&out)?;
            let seed = cli.seed.unwrap_or(0);
            let counts = SplitCounts {
                train: *train,
                dev: *dev,
                test: *test,
                generalization: *generalization,
            };
            eprintln!("generating splits with seed {seed} into {}", out.display());
            for (name, samples) in make_splits(seed, counts)? {
                let path = out.join(format!("{name}.jsonl"));
                write_jsonl(&path, &samples)?;
                println!("{}: {} samples", path.display(), samples.len());
            }
        }
        Cmd::Train {
            data,
            epochs,
            batch,
            lr,
            model,
            d,
        } => {
            let mut overlay = overlay_from(&cli)?;
            if let Some(e) = epochs {
                overlay.set("epochs", e.to_string());
            }
            if let Some(b) = batch {
                overlay.set("batch", b.to_string());
            }
            if let Some(l) = lr {
                overlay.set("lr", l.to_string());
            }
            if let Some(m) = model {
                overlay.set("model", m.clone());
            }
            if let Some(d) = d {
                overlay.set("d", d.to_string());
            }
            let cfg = overlay.finalize()?;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("run"));
            let train_data = to_samples(&read_jsonl(&data.join("train.jsonl"))?)?;
            let dev_data = to_samples(&read_jsonl(&data.join("dev.jsonl"))?)?;
            eprintln!(
                "training {:?} (d={}, k={}, beam={}) on {} samples",
                cfg.model,
                cfg.d,
                cfg.k,
                cfg.beam,
                train_data.len()
            );
            let mut m = Model::new(cfg)?;
            let report = train(&mut m, &train_data, &dev_data, Some(&out))?;
            println!(
                "best dev accuracy {:.4} at epoch {} ({} steps); checkpoint in {}",
                report.best_val_acc,
                report.best_epoch,
                report.steps,
                out.display()
            );
            let test_path = data.join("test.jsonl");
            if test_path.exists() {
                let test_data = to_samples(&read_jsonl(&test_path)?)?;
                let r = evaluate(&m, &test_data, 100)?;
                println!("test accuracy {:.4} ({}/{})", r.accuracy, r.correct, r.total);
            }
        }
        Cmd::Eval {
            ckpt,
            data,
            bucket_width,
        } => {
            let ck = checkpoint::load(ckpt)?;
            let mut model = checkpoint::restore_model(&ck)?;
            if let Some(inf) = &cli.inference {
                model.cfg.inference = inf.parse().map_err(|e: String| anyhow::anyhow!(e))?;
            }
            if let Some(k) = cli.k {
                model.cfg.k = k;
            }
            let samples = to_samples(&read_jsonl(data)?)?;
            let r = evaluate(&model, &samples, *bucket_width)?;
            println!(
                "accuracy {:.4} ({}/{}) on {}",
                r.accuracy,
                r.correct,
                r.total,
                data.display()
            );
            for b in &r.per_bucket {
                println!(
                    "  len {:>4}-{:<4} acc {:.4} ({}/{})",
                    b.lo,
                    b.hi,
                    b.correct as f64 / b.total as f64,
                    b.correct,
                    b.total
                );
            }
        }
        Cmd::Parse { expr, ckpt } => {
            let ids = listops::tokenize(expr)?;
            if ids.is_empty() {
                bail!("empty expression");
            }
            let model = match ckpt {
                Some(path) => checkpoint::restore_model(&checkpoint::load(path)?)?,
                None => {
                    let cfg = overlay_from(&cli)?.finalize()?;
                    Model::new(cfg)?
                }
            };
            let tape = Tape::inference();
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(model.cfg.seed, 0x9A53));
            let out = model.encode(&tape, &ids, RunMode::Eval, &mut rng)?;
            let labels: Vec<String> = expr.split_whitespace().map(str::to_string).collect();
            let tree = out.tree.expect("encode always yields a tree");
            println!("{}", tree.bracketed(&labels));
            let logits = model.classify(&tape, &out.root)?;
            let pred = rir_core::beam::topk_indices(logits.data(), 1)[0];
            match listops_evaluate(&ids) {
                Ok(value) => println!("predicted {pred}, exact value {value}"),
                Err(_) => println!("predicted {pred}"),
            }
        }
        Cmd::Bench {
            samples,
            variants,
            buckets,
        } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&out)?;
            let chosen: Vec<Variant> = match variants {
                Some(list) => list
                    .split(',')
                    .map(|v| v.trim().parse().map_err(|e: String| anyhow::anyhow!(e)))
                    .collect::<Result<_>>()?,
                None => Variant::ALL.to_vec(),
            };
            let parsed_buckets: Vec<(usize, usize)> = buckets
                .split(',')
                .map(|b| {
                    let (lo, hi) = b
                        .trim()
                        .split_once('-')
                        .with_context(|| format!("bucket {b:?} is not lo-hi"))?;
                    Ok((lo.parse()?, hi.parse()?))
                })
                .collect::<Result<_>>()?;
            let opts = BenchOpts {
                buckets: parsed_buckets,
                samples_per_bucket: *samples,
                seed: cli.seed.unwrap_or(0),
                ..BenchOpts::default()
            };
            eprintln!(
                "benchmarking {:?} over {:?} ({} samples each)",
                chosen.iter().map(|v| v.name()).collect::<Vec<_>>(),
                opts.buckets,
                opts.samples_per_bucket
            );
            let records = bench(&chosen, &opts)?;
            let csv = out.join("bench.csv");
            write_csv(&csv, &records)?;
            for r in &records {
                println!(
                    "{:>8} {:>10}  {:>8.2}s  peak {:>8.2} MB  depth {:>4}  outer {:>2}  [{}]",
                    r.variant,
                    r.bucket,
                    r.seconds,
                    r.peak_bytes as f64 / (1024.0 * 1024.0),
                    r.max_depth,
                    r.max_outer_iters,
                    r.status
                );
            }
            println!("wrote {}", csv.display());
        }
    }
    Ok(())
}
