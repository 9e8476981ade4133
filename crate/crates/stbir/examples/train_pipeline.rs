//! End-to-end staged training on the default synthetic dataset, with a
//! fused vs. single-modality Recall@K comparison at the end.
//!
//! Usage: cargo run --release --example train_pipeline [learning_rate] [epochs_per_stage]

use std::time::Instant;

use stbir::config::RunConfig;
use stbir::datamodel::{split, synthesize_dataset};
use stbir::mcfa::{evaluate_split, run_pipeline, QueryMask};

fn main() -> stbir::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = RunConfig::default();
    // The library default rate assumes a warm start; from random init the
    // encoders need a bigger step.
    cfg.pipeline.optimizer.learning_rate = 1e-3;
    if let Some(lr) = args.get(1) {
        cfg.pipeline.optimizer.learning_rate = lr.parse().expect("learning rate");
    }
    if let Some(ep) = args.get(2) {
        cfg.pipeline.epochs_per_stage = ep.parse().expect("epochs");
    }

    let table = synthesize_dataset(&cfg.synth)?;
    let (train, test) = split(&table, cfg.test_fraction, cfg.pipeline.seed)?;
    println!(
        "train {} / test {} samples, {} categories, lr={}, epochs/stage={}",
        train.len(),
        test.len(),
        table.num_categories,
        cfg.pipeline.optimizer.learning_rate,
        cfg.pipeline.epochs_per_stage
    );

    let start = Instant::now();
    let (encoders, _, reports) = run_pipeline(&cfg.pipeline, &train, Some(&test))?;
    let elapsed = start.elapsed();

    for (i, report) in reports.iter().enumerate() {
        let first = report.epochs.first().unwrap();
        let last = report.epochs.last().unwrap();
        println!(
            "stage {i} ({}): loss {:.4} -> {:.4}, eval R@1 {:.4}",
            report.active_modality.tag(),
            first.l_total,
            last.l_total,
            report.eval.map(|e| e.r1).unwrap_or(f64::NAN)
        );
    }

    for (label, mask) in [
        ("fused", QueryMask::Fused),
        ("sketch-only", QueryMask::SketchOnly),
        ("text-only", QueryMask::TextOnly),
    ] {
        let r = evaluate_split(&encoders, &test, mask)?;
        println!("{label}: R@1={:.4} R@5={:.4} R@10={:.4}", r.r1, r.r5, r.r10);
    }
    println!("wall time: {:.1}s", elapsed.as_secs_f64());
    Ok(())
}
