//! Scratch learning probe (not part of the suite; run explicitly with --ignored).

use rir_core::config::{InferenceMode, ModelConfig, ModelKind};
use rir_core::listops::gen::{generate, generate_in_range, sample_rng, GenConfig};
use rir_core::model::Model;
use rir_core::train::{evaluate, train, Sample};

fn reduced(count: usize, tag: &str, p_rec: f64) -> Vec<Sample> {
    let cfg = GenConfig {
        max_length: 60,
        max_depth: 8,
        max_args: 3,
        recursion_prob: p_rec,
        arg_extend_prob: 0.4,
        ..GenConfig::default()
    };
    // stratified lengths: a quarter unconstrained, the rest pushed longer
    (0..count)
        .map(|i| {
            let mut rng = sample_rng(0xAC, tag, i as u64);
            let min_len = match i % 4 {
                0 => 0,
                1 => 12,
                2 => 25,
                _ => 40,
            };
            let s = if min_len == 0 {
                generate(&cfg, &mut rng).unwrap()
            } else {
                generate_in_range(&cfg, min_len, &mut rng).unwrap()
            };
            Sample::from_listops(&s).unwrap()
        })
        .collect()
}

fn lengen(count: usize, tag: &str) -> Vec<Sample> {
    let cfg = GenConfig {
        max_length: 120,
        max_depth: 8,
        max_args: 3,
        recursion_prob: 0.6,
        arg_extend_prob: 0.4,
        ..GenConfig::default()
    };
    (0..count)
        .map(|i| {
            let mut rng = sample_rng(0xAD, tag, i as u64);
            Sample::from_listops(&generate_in_range(&cfg, 100, &mut rng).unwrap()).unwrap()
        })
        .collect()
}

#[test]
#[ignore]
fn probe_learning() {
    let p_rec: f64 = std::env::var("PROBE_PREC")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0.55);
    let epochs: usize = std::env::var("PROBE_EPOCHS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(4);
    let ntrain: usize = std::env::var("PROBE_NTRAIN")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(8000);
    let dcell: usize = std::env::var("PROBE_DCELL")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(128);
    let ds: usize = std::env::var("PROBE_DS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(32);
    let lr: f64 = std::env::var("PROBE_LR")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1e-3);
    let with_baseline = std::env::var("PROBE_BASELINE").is_ok();

    let train_data = reduced(ntrain, "train", p_rec);
    let dev = reduced(300, "dev", p_rec);
    let test = reduced(500, "test", p_rec);
    let gen = lengen(300, "gen");
    let mut hist = [0usize; 7];
    for s in &train_data {
        hist[(s.ids.len() / 10).min(6)] += 1;
    }
    println!("length histogram (by 10s): {:?}", hist);

    let cfg = ModelConfig {
        model: ModelKind::RirEbt,
        d: 64,
        d_s: ds,
        d_cell: dcell,
        k: 10,
        beam: 5,
        inference: InferenceMode::NonRir,
        seed: 1,
        epochs,
        batch: 16,
        lr,
        ..ModelConfig::default()
    };
    let mut model = Model::new(cfg).unwrap();
    let t0 = std::time::Instant::now();
    let report = train(&mut model, &train_data, &dev, None).unwrap();
    println!("trained in {:.0}s", t0.elapsed().as_secs_f64());
    for e in &report.epochs {
        println!(
            "epoch {:>2}: loss {:.4}  val {:.4}  lr {:.2e}",
            e.epoch, e.mean_loss, e.val_acc, e.lr
        );
    }
    let iid = evaluate(&model, &test, 100).unwrap();
    println!("IID test acc: {:.4}", iid.accuracy);
    let lg = evaluate(&model, &gen, 100).unwrap();
    println!("lengen (100-120) acc: {:.4}", lg.accuracy);

    if with_baseline {
        let bcfg = ModelConfig {
            model: ModelKind::Bbt,
            prechunk: false,
            ..model.cfg.clone()
        };
        let mut bbt = Model::new(bcfg).unwrap();
        let t0 = std::time::Instant::now();
        train(&mut bbt, &train_data, &dev, None).unwrap();
        println!("bbt trained in {:.0}s", t0.elapsed().as_secs_f64());
        let biid = evaluate(&bbt, &test, 100).unwrap();
        let blg = evaluate(&bbt, &gen, 100).unwrap();
        println!("bbt IID {:.4}, lengen {:.4}", biid.accuracy, blg.accuracy);
    }
}
