//! Training and evaluation loops.
//!
//! Batches are built from length-sorted buckets so samples of similar length
//! land together. Within a batch, samples run in parallel (each worker builds
//! its own tape over the shared read-only parameters); gradient accumulation
//! happens serially afterwards in sample order, so results are bit-identical
//! regardless of worker scheduling.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::TrainError;
use crate::listops::gen::{mix_seed, ListOpsSample};
use crate::model::{Model, RunMode};
use crate::tensor::tape::Tape;
use crate::tensor::Tensor;

/// A tokenized training/eval sample.
#[derive(Clone, Debug)]
pub struct Sample {
    pub ids: Vec<u32>,
    pub label: u8,
}

impl Sample {
    pub fn from_listops(s: &ListOpsSample) -> Result<Sample, crate::error::ListOpsError> {
        Ok(Sample {
            ids: s.token_ids()?,
            label: s.label,
        })
    }
}

pub fn to_samples(data: &[ListOpsSample]) -> Result<Vec<Sample>, crate::error::ListOpsError> {
    data.iter().map(Sample::from_listops).collect()
}

// ── optimizer ────────────────────────────────────────────────────────

/// Adam moment estimates, keyed by parameter name.
pub struct Adam {
    pub m: HashMap<String, Vec<f64>>,
    pub v: HashMap<String, Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            m: HashMap::new(),
            v: HashMap::new(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// One update over `(name, tensor)` slots with gradients keyed by name.
    /// Parameters without a gradient this step are treated as zero-gradient.
    pub fn step(
        &mut self,
        params: Vec<(String, &mut Tensor)>,
        grads: &HashMap<String, Vec<f64>>,
        lr: f64,
    ) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, slot) in params {
            let n = slot.numel();
            let g = grads.get(&name);
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name).or_insert_with(|| vec![0.0; n]);
            let mut data = slot.data().to_vec();
            for i in 0..n {
                let gi = g.map(|g| g[i]).unwrap_or(0.0);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                data[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
            *slot = Tensor::param(slot.shape(), data).expect("shape unchanged");
        }
    }
}

/// L2 norm over all gradient buffers, summed in sorted-name order so the
/// result is bit-reproducible.
pub fn global_grad_norm(grads: &HashMap<String, Vec<f64>>) -> f64 {
    let mut names: Vec<&String> = grads.keys().collect();
    names.sort();
    names
        .iter()
        .flat_map(|n| grads[*n].iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Scales gradients in place so the global norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut HashMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let norm = global_grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Cosine decay from `lr` to 0 over `total` steps.
pub fn cosine_lr(lr: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return lr;
    }
    let frac = (step as f64 / total as f64).min(1.0);
    lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

// ── batching ─────────────────────────────────────────────────────────

/// Length-bucketed batch plan for one epoch: indices are length-sorted,
/// grouped into buckets of `bucket` samples, shuffled within each bucket,
/// cut into batches, and the batch order is shuffled.
pub fn epoch_batches(
    lengths: &[usize],
    bucket: usize,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..lengths.len()).collect();
    idx.sort_by_key(|&i| lengths[i]);
    for chunk in idx.chunks_mut(bucket.max(1)) {
        chunk.shuffle(rng);
    }
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch.max(1)).map(|c| c.to_vec()).collect();
    batches.shuffle(rng);
    batches
}

// ── training ─────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

#[derive(Debug, Default)]
pub struct TrainReport {
    /// Mean loss of every optimization step, in order.
    pub batch_losses: Vec<f64>,
    pub epochs: Vec<EpochLog>,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub steps: u64,
}

fn check_vocab(model: &Model, data: &[Sample]) -> Result<(), TrainError> {
    for s in data {
        for &id in &s.ids {
            if id as usize >= model.cfg.vocab {
                return Err(TrainError::VocabMismatch {
                    model: model.cfg.vocab,
                    data: id,
                });
            }
        }
    }
    Ok(())
}

/// Per-sample rng for training-time search noise, namespaced so runs are
/// reproducible regardless of worker scheduling.
fn step_rng(seed: u64, epoch: usize, sample_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(
        mix_seed(seed, 0x7EA1_0000 + epoch as u64),
        sample_index as u64,
    ))
}

/// Trains `model` in place. The best-by-validation parameters are restored
/// into the model before returning (and written to `<out>/best.ckpt` when an
/// output directory is given, along with `metrics.csv` and `last.ckpt`).
pub fn train(
    model: &mut Model,
    train_data: &[Sample],
    dev_data: &[Sample],
    out_dir: Option<&Path>,
) -> Result<TrainReport, TrainError> {
    if train_data.is_empty() {
        return Err(TrainError::EmptyDataset("train".into()));
    }
    if dev_data.is_empty() {
        return Err(TrainError::EmptyDataset("dev".into()));
    }
    check_vocab(model, train_data)?;
    check_vocab(model, dev_data)?;

    let cfg = model.cfg.clone();
    let mut optimizer = Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps);
    let lengths: Vec<usize> = train_data.iter().map(|s| s.ids.len()).collect();
    let steps_per_epoch = lengths.len().div_ceil(cfg.batch) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;

    let mut metrics = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut f = std::fs::File::create(dir.join("metrics.csv"))?;
            writeln!(f, "epoch,step,loss,val_acc,lr,grad_norm")?;
            Some(f)
        }
        None => None,
    };

    let mut report = TrainReport {
        best_val_acc: f64::NEG_INFINITY,
        ..TrainReport::default()
    };
    let mut best_params: Option<Vec<(String, Tensor)>> = None;
    let mut step: u64 = 0;

    for epoch in 0..cfg.epochs {
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xBA7C_0000 + epoch as u64));
        let batches = epoch_batches(&lengths, cfg.bucket, cfg.batch, &mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_lr = cfg.lr;

        for batch in batches {
            let lr = cosine_lr(cfg.lr, step, total_steps);
            epoch_lr = lr;
            let named = model.named_params();

            // parallel forward/backward, deterministic per-sample rng
            let results: Vec<Result<(f64, crate::tensor::tape::GradMap), TrainError>> = batch
                .par_iter()
                .map(|&i| {
                    let s = &train_data[i];
                    let tape = Tape::new();
                    let mut rng = step_rng(cfg.seed, epoch, i);
                    let (loss, _pred, _stats) =
                        model.loss(&tape, &s.ids, s.label as usize, RunMode::Train, &mut rng)?;
                    let lv = loss.item().map_err(crate::error::EncodeError::from)?;
                    let grads = tape.backward(&loss).map_err(crate::error::EncodeError::from)?;
                    Ok((lv, grads))
                })
                .collect();

            // serialized accumulation in sample order
            let mut accum: HashMap<String, Vec<f64>> = HashMap::new();
            let mut batch_loss = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for r in results {
                let (lv, grads) = match r {
                    Ok(x) => x,
                    // a score/logit vector with no finite entry is the
                    // tape-level face of a NaN loss
                    Err(TrainError::Encode(crate::error::EncodeError::Tensor(
                        crate::error::TensorError::DegenerateDistribution,
                    ))) => {
                        return Err(TrainError::NonFiniteLoss {
                            epoch,
                            step: step as usize,
                            lr,
                            grad_norm: f64::NAN,
                            loss: f64::NAN,
                        })
                    }
                    Err(e) => return Err(e),
                };
                if !lv.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        step: step as usize,
                        lr,
                        grad_norm: f64::NAN,
                        loss: lv,
                    });
                }
                batch_loss += lv * scale;
                for (name, t) in &named {
                    if let Some(g) = grads.get(t) {
                        let acc = accum
                            .entry(name.clone())
                            .or_insert_with(|| vec![0.0; t.numel()]);
                        for (a, &b) in acc.iter_mut().zip(g) {
                            *a += b * scale;
                        }
                    }
                }
            }
            let grad_norm = clip_global_norm(&mut accum, cfg.clip_norm);
            if !batch_loss.is_finite() || !grad_norm.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    step: step as usize,
                    lr,
                    grad_norm,
                    loss: batch_loss,
                });
            }

            let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
            let slots = model.params_mut();
            optimizer.step(names.into_iter().zip(slots).collect(), &accum, lr);

            epoch_loss += batch_loss;
            report.batch_losses.push(batch_loss);
            if let Some(f) = &mut metrics {
                writeln!(
                    f,
                    "{},{},{:.6},,{:.6e},{:.6e}",
                    epoch, step, batch_loss, lr, grad_norm
                )?;
            }
            step += 1;
        }

        let val = evaluate(model, dev_data, 100)?;
        let mean_loss = epoch_loss / steps_per_epoch as f64;
        report.epochs.push(EpochLog {
            epoch,
            mean_loss,
            val_acc: val.accuracy,
            lr: epoch_lr,
        });
        if let Some(f) = &mut metrics {
            writeln!(
                f,
                "{},{},{:.6},{:.6},{:.6e},",
                epoch, step, mean_loss, val.accuracy, epoch_lr
            )?;
        }
        if val.accuracy > report.best_val_acc {
            report.best_val_acc = val.accuracy;
            report.best_epoch = epoch;
            best_params = Some(model.named_params());
        }
    }
    report.steps = step;

    if let Some(best) = &best_params {
        model
            .load_params(best)
            .map_err(crate::error::EncodeError::from)?;
    }
    if let Some(dir) = out_dir {
        let ck = crate::checkpoint::Checkpoint {
            cfg: model.cfg.clone(),
            params: model.named_params(),
            opt: Some(crate::checkpoint::AdamState {
                t: optimizer.t,
                m: optimizer.m.clone(),
                v: optimizer.v.clone(),
            }),
            epoch: cfg.epochs as u64,
            step,
            best_val: report.best_val_acc,
        };
        crate::checkpoint::save(&dir.join("best.ckpt"), &ck).map_err(|e| {
            TrainError::Io(std::io::Error::other(e.to_string()))
        })?;
    }
    Ok(report)
}

// ── evaluation ───────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct BucketAcc {
    pub lo: usize,
    pub hi: usize,
    pub correct: usize,
    pub total: usize,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub per_bucket: Vec<BucketAcc>,
}

/// Deterministic exact-match accuracy with a per-length-bucket breakdown.
/// Repeat runs give identical numbers: inference search is deterministic and
/// any sampling-based recombination draws from a per-sample fixed stream.
pub fn evaluate(
    model: &Model,
    data: &[Sample],
    bucket_width: usize,
) -> Result<EvalReport, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset("eval".into()));
    }
    check_vocab(model, data)?;
    let outcomes: Vec<Result<(usize, bool), TrainError>> = data
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let tape = Tape::inference();
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(0xE7A1, i as u64));
            let (_, pred, _) =
                model.loss(&tape, &s.ids, s.label as usize, RunMode::Eval, &mut rng)?;
            Ok((s.ids.len(), pred == s.label as usize))
        })
        .collect();

    let mut buckets: HashMap<usize, (usize, usize)> = HashMap::new();
    let mut correct = 0;
    for r in outcomes {
        let (len, ok) = r?;
        let b = len / bucket_width.max(1);
        let e = buckets.entry(b).or_insert((0, 0));
        e.1 += 1;
        if ok {
            e.0 += 1;
            correct += 1;
        }
    }
    let mut per_bucket: Vec<BucketAcc> = buckets
        .into_iter()
        .map(|(b, (c, t))| BucketAcc {
            lo: b * bucket_width,
            hi: (b + 1) * bucket_width,
            correct: c,
            total: t,
        })
        .collect();
    per_bucket.sort_by_key(|b| b.lo);
    Ok(EvalReport {
        accuracy: correct as f64 / data.len() as f64,
        correct,
        total: data.len(),
        per_bucket,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelConfig, ModelKind};
    use crate::listops::gen::{generate, sample_rng, GenConfig};

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            model: ModelKind::RirEbt,
            d: 16,
            d_s: 8,
            d_cell: 32,
            k: 4,
            beam: 2,
            seed: 3,
            epochs: 1,
            batch: 4,
            lr: 1e-3,
            ..ModelConfig::default()
        }
    }

    fn tiny_data(count: usize, seed: u64) -> Vec<Sample> {
        let cfg = GenConfig {
            max_length: 20,
            max_depth: 3,
            max_args: 3,
            ..GenConfig::default()
        };
        (0..count)
            .map(|i| {
                let mut rng = sample_rng(seed, "tiny", i as u64);
                Sample::from_listops(&generate(&cfg, &mut rng).unwrap()).unwrap()
            })
            .collect()
    }

    #[test]
    fn adam_with_zero_lr_keeps_parameters() {
        let mut model = Model::new(tiny_cfg()).unwrap();
        let before: Vec<Vec<f64>> = model
            .named_params()
            .iter()
            .map(|(_, t)| t.data().to_vec())
            .collect();
        model.cfg.lr = 0.0;
        let data = tiny_data(8, 1);
        train(&mut model, &data, &data, None).unwrap();
        let after: Vec<Vec<f64>> = model
            .named_params()
            .iter()
            .map(|(_, t)| t.data().to_vec())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let mut grads = HashMap::new();
        grads.insert("a".to_string(), vec![3.0, 4.0]);
        grads.insert("b".to_string(), vec![12.0]);
        let pre = clip_global_norm(&mut grads, 1.0);
        assert!((pre - 13.0).abs() < 1e-12);
        let post = global_grad_norm(&grads);
        assert!(post <= 1.0 + 1e-9);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 100), 0.1);
        assert!((cosine_lr(0.1, 50, 100) - 0.05).abs() < 1e-12);
        assert!(cosine_lr(0.1, 100, 100).abs() < 1e-12);
    }

    #[test]
    fn bucketed_batches_cover_every_index_once() {
        let lengths: Vec<usize> = (0..37).map(|i| (i * 13) % 50).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batches = epoch_batches(&lengths, 8, 4, &mut rng);
        let mut seen: Vec<usize> = batches.into_iter().flatten().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_replay_same_seed_same_losses() {
        let data = tiny_data(12, 2);
        let run = || {
            let mut model = Model::new(tiny_cfg()).unwrap();
            train(&mut model, &data, &data, None).unwrap().batch_losses
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let mut model = Model::new(tiny_cfg()).unwrap();
        // poison the closing-bracket embedding row, present in every sample
        let mut data = model.embedding.table.data().to_vec();
        let d = model.cfg.d;
        data[14 * d] = f64::NAN;
        model.embedding.table = Tensor::param(model.embedding.table.shape(), data).unwrap();
        let samples = tiny_data(4, 3);
        let err = train(&mut model, &samples, &samples, None).unwrap_err();
        match err {
            TrainError::NonFiniteLoss { loss, .. } => assert!(!loss.is_finite()),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn evaluate_is_repeatable_and_bucketed() {
        let model = Model::new(tiny_cfg()).unwrap();
        let data = tiny_data(20, 4);
        let a = evaluate(&model, &data, 10).unwrap();
        let b = evaluate(&model, &data, 10).unwrap();
        assert_eq!(a.accuracy, b.accuracy);
        assert_eq!(a.total, 20);
        let bucket_total: usize = a.per_bucket.iter().map(|b| b.total).sum();
        assert_eq!(bucket_total, 20);
    }

    #[test]
    fn evaluate_rejects_vocab_mismatch() {
        let model = Model::new(tiny_cfg()).unwrap();
        let data = vec![Sample {
            ids: vec![0, 99],
            label: 0,
        }];
        assert!(matches!(
            evaluate(&model, &data, 100),
            Err(TrainError::VocabMismatch { .. })
        ));
    }
}
