//! Trains briefly, then runs one ad-hoc composite query (a held-out sample's
//! own sketch and text views) against the test gallery.

use ndarray::Array2;

use stbir::config::RunConfig;
use stbir::datamodel::{split, synthesize_dataset};
use stbir::encoders::encode;
use stbir::mcfa::run_pipeline;
use stbir::retrieval::{fuse, score, top_k, GalleryIndex};

fn main() -> stbir::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.synth.num_categories = 16;
    cfg.synth.instances_per_category = 6;
    cfg.pipeline.optimizer.learning_rate = 1e-3;
    cfg.pipeline.epochs_per_stage = 8;

    let table = synthesize_dataset(&cfg.synth)?;
    let (train, test) = split(&table, cfg.test_fraction, cfg.pipeline.seed)?;
    let (encoders, _, _) = run_pipeline(&cfg.pipeline, &train, None)?;

    // gallery: image embeddings of the whole test split
    let mut images = Array2::zeros((test.len(), test.dims.2));
    for (r, s) in test.samples.iter().enumerate() {
        for (c, &v) in s.image.iter().enumerate() {
            images[[r, c]] = v;
        }
    }
    let gallery = encode(&encoders.image, &images)?;
    let ids: Vec<u64> = test.samples.iter().map(|s| s.instance_id).collect();
    let index = GalleryIndex::build(&gallery.values, ids)?;

    // query: sketch + text views of one held-out sample
    let target = &test.samples[3];
    let sketch = Array2::from_shape_vec((1, target.sketch.len()), target.sketch.clone())
        .expect("shape");
    let text = Array2::from_shape_vec((1, target.text.len()), target.text.clone()).expect("shape");
    let query = fuse(&encode(&encoders.sketch, &sketch)?, &encode(&encoders.text, &text)?)?;

    let sims = score(&query, &index)?;
    let results = top_k(&sims, &index, 5)?;
    println!("target instance: {}", target.instance_id);
    println!("rank,instance_id,score");
    for (rank, (id, s)) in results.ranked_ids[0].iter().zip(&results.scores[0]).enumerate() {
        println!("{},{},{:.4}", rank + 1, id, s);
    }
    Ok(())
}
