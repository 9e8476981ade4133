//! Exports image-gallery embeddings to the binary format and reads them back.

use ndarray::Array2;

use stbir::checkpoint::{export_embeddings, import_embeddings};
use stbir::config::RunConfig;
use stbir::datamodel::synthesize_dataset;
use stbir::encoders::encode;
use stbir::mcfa::init_pipeline;

fn main() -> stbir::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.synth.num_categories = 8;
    cfg.synth.instances_per_category = 4;
    let table = synthesize_dataset(&cfg.synth)?;
    let (encoders, _) = init_pipeline(&cfg.pipeline, &table)?;

    let mut images = Array2::zeros((table.len(), table.dims.2));
    for (r, s) in table.samples.iter().enumerate() {
        for (c, &v) in s.image.iter().enumerate() {
            images[[r, c]] = v;
        }
    }
    let features = encode(&encoders.image, &images)?;
    let ids: Vec<u64> = table.samples.iter().map(|s| s.instance_id).collect();

    let path = std::env::temp_dir().join("stbir_example_embeddings.bin");
    export_embeddings(&path, &features.values, &ids)?;
    let (loaded, loaded_ids) = import_embeddings(&path)?;
    println!(
        "exported and re-imported {} embeddings of dim {} ({} bytes on disk)",
        loaded.nrows(),
        loaded.ncols(),
        std::fs::metadata(&path)?.len()
    );
    assert_eq!(loaded_ids, ids);
    Ok(())
}
