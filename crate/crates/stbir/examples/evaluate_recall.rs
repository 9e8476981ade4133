//! Trains a small pipeline and compares fused vs. single-modality queries
//! with Recall@K on the held-out split.

use stbir::config::RunConfig;
use stbir::datamodel::{split, synthesize_dataset};
use stbir::mcfa::{evaluate_split, run_pipeline, QueryMask};

fn main() -> stbir::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.synth.num_categories = 24;
    cfg.synth.instances_per_category = 6;
    cfg.pipeline.optimizer.learning_rate = 1e-3;
    cfg.pipeline.epochs_per_stage = 8;

    let table = synthesize_dataset(&cfg.synth)?;
    let (train, test) = split(&table, cfg.test_fraction, cfg.pipeline.seed)?;
    let (encoders, _, _) = run_pipeline(&cfg.pipeline, &train, None)?;

    println!("query,r@1,r@5,r@10");
    for (label, mask) in [
        ("fused", QueryMask::Fused),
        ("sketch-only", QueryMask::SketchOnly),
        ("text-only", QueryMask::TextOnly),
    ] {
        let r = evaluate_split(&encoders, &test, mask)?;
        println!("{label},{:.4},{:.4},{:.4}", r.r1, r.r5, r.r10);
    }
    Ok(())
}
