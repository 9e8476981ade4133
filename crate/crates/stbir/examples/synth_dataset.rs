//! Generates a synthetic tri-modal dataset, writes it as a manifest, and
//! loads it back to show the round trip.

use stbir::datamodel::{load_manifest, save_manifest, synthesize_dataset, SynthConfig};

fn main() -> stbir::Result<()> {
    let cfg = SynthConfig {
        num_categories: 16,
        instances_per_category: 4,
        seed: 42,
        ..Default::default()
    };
    let table = synthesize_dataset(&cfg)?;
    println!(
        "generated {} samples across {} categories, view dims {:?}",
        table.len(),
        table.num_categories,
        table.dims
    );

    let path = std::env::temp_dir().join("stbir_example_manifest.jsonl");
    save_manifest(&table, &path)?;
    let loaded = load_manifest(&path)?;
    assert_eq!(loaded, table);
    println!("manifest round trip ok: {}", path.display());

    let first = &table.samples[0];
    println!(
        "first sample: instance {} category {} sketch[0..4] = {:?}",
        first.instance_id,
        first.category,
        &first.sketch[..4]
    );
    Ok(())
}
