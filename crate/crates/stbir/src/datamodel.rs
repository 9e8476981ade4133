//! Tri-modal triplet dataset: manifest I/O, stratified splitting, batching,
//! and a synthetic generator that encodes sketch/text complementarity.
//!
//! Each sample pairs a sketch view, a text view, and an image view of one
//! instance. Views are precomputed numeric vectors; raw media decoding is out
//! of scope. The synthetic generator splits the instance latent into a
//! structure half (visible to sketches) and an appearance half (visible to
//! text), while images see the full latent.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StbirError};

/// Which dataset partition a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One (sketch, text, image) triplet with its category and instance identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriModalSample {
    pub instance_id: u64,
    pub category: usize,
    pub split: Split,
    pub sketch: Vec<f64>,
    pub text: Vec<f64>,
    pub image: Vec<f64>,
}

/// An ordered collection of triplets sharing consistent view dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTable {
    pub samples: Vec<TriModalSample>,
    pub num_categories: usize,
    /// (sketch, text, image) view dimensions.
    pub dims: (usize, usize, usize),
}

impl DatasetTable {
    /// Builds a table from samples, inferring dims from the first record and
    /// `num_categories` as max(category)+1. Validates consistency.
    pub fn from_samples(samples: Vec<TriModalSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(StbirError::Schema("dataset is empty".into()));
        }
        let dims = (
            samples[0].sketch.len(),
            samples[0].text.len(),
            samples[0].image.len(),
        );
        let mut max_cat = 0usize;
        let mut seen_ids = std::collections::HashSet::new();
        for (i, s) in samples.iter().enumerate() {
            let got = (s.sketch.len(), s.text.len(), s.image.len());
            if got != dims {
                return Err(StbirError::Schema(format!(
                    "record {i}: view dims {got:?} differ from first record {dims:?}"
                )));
            }
            if !seen_ids.insert(s.instance_id) {
                return Err(StbirError::Schema(format!(
                    "record {i}: duplicate instance_id {}",
                    s.instance_id
                )));
            }
            max_cat = max_cat.max(s.category);
        }
        Ok(DatasetTable {
            samples,
            num_categories: max_cat + 1,
            dims,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples belonging to one split, preserving order.
    pub fn subset(&self, split: Split) -> Vec<&TriModalSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }
}

/// Serialized manifest record. Field names are the on-disk contract.
#[derive(Serialize, Deserialize)]
struct ManifestRecord {
    instance_id: u64,
    category: i64,
    split: Split,
    sketch: Vec<f64>,
    text: Vec<f64>,
    image: Vec<f64>,
}

/// Loads a line-delimited manifest (one JSON record per line).
pub fn load_manifest(path: &Path) -> Result<DatasetTable> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| StbirError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        if rec.category < 0 {
            return Err(StbirError::Schema(format!(
                "line {}: category {} is negative",
                i + 1,
                rec.category
            )));
        }
        samples.push(TriModalSample {
            instance_id: rec.instance_id,
            category: rec.category as usize,
            split: rec.split,
            sketch: rec.sketch,
            text: rec.text,
            image: rec.image,
        });
    }
    DatasetTable::from_samples(samples)
}

/// Writes a table as a line-delimited manifest.
pub fn save_manifest(table: &DatasetTable, path: &Path) -> Result<()> {
    // Write to a temp file in the same directory, then rename.
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "manifest".into())
    ));
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        for s in &table.samples {
            let rec = ManifestRecord {
                instance_id: s.instance_id,
                category: s.category as i64,
                split: s.split,
                sketch: s.sketch.clone(),
                text: s.text.clone(),
                image: s.image.clone(),
            };
            serde_json::to_writer(&mut f, &rec)
                .map_err(|e| StbirError::Data(e.to_string()))?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Configuration for the synthetic dataset generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_categories: usize,
    pub instances_per_category: usize,
    pub latent_struct_dim: usize,
    pub latent_app_dim: usize,
    /// (sketch, text, image) view dimensions.
    pub view_dims: (usize, usize, usize),
    pub intra_class_spread: f64,
    pub view_noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_categories: 64,
            instances_per_category: 8,
            latent_struct_dim: 8,
            latent_app_dim: 8,
            view_dims: (32, 32, 32),
            intra_class_spread: 0.3,
            view_noise_std: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_categories < 1
            || self.instances_per_category < 1
            || self.latent_struct_dim < 1
            || self.latent_app_dim < 1
            || self.view_dims.0 < 1
            || self.view_dims.1 < 1
            || self.view_dims.2 < 1
        {
            return Err(StbirError::Config("all dims must be >= 1".into()));
        }
        if self.intra_class_spread <= 0.0 {
            return Err(StbirError::Config("intra_class_spread must be > 0".into()));
        }
        if self.view_noise_std < 0.0 {
            return Err(StbirError::Config("view_noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

fn randn_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(rng);
                    v * scale
                })
                .collect()
        })
        .collect()
}

fn lift(mat: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    mat.iter()
        .map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum())
        .collect()
}

/// Generates a deterministic synthetic dataset.
///
/// Per category a latent prototype is drawn; each instance perturbs it by
/// `intra_class_spread`. Sketch views see only the structure half of the
/// latent, text views only the appearance half, image views the full latent.
/// Each view is a fixed seeded random linear lift of its (masked) latent plus
/// optional observation noise.
pub fn synthesize_dataset(cfg: &SynthConfig) -> Result<DatasetTable> {
    cfg.validate()?;
    let latent_dim = cfg.latent_struct_dim + cfg.latent_app_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = 1.0 / (latent_dim as f64).sqrt();
    let lift_s = randn_matrix(&mut rng, cfg.view_dims.0, latent_dim, scale);
    let lift_t = randn_matrix(&mut rng, cfg.view_dims.1, latent_dim, scale);
    let lift_i = randn_matrix(&mut rng, cfg.view_dims.2, latent_dim, scale);

    let mut samples = Vec::with_capacity(cfg.num_categories * cfg.instances_per_category);
    let mut next_id = 0u64;
    for cat in 0..cfg.num_categories {
        let proto: Vec<f64> = (0..latent_dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        for _ in 0..cfg.instances_per_category {
            let z: Vec<f64> = proto
                .iter()
                .map(|p| {
                    let eta: f64 = StandardNormal.sample(&mut rng);
                    p + cfg.intra_class_spread * eta
                })
                .collect();
            let mut z_struct = z.clone();
            for v in z_struct.iter_mut().skip(cfg.latent_struct_dim) {
                *v = 0.0;
            }
            let mut z_app = z.clone();
            for v in z_app.iter_mut().take(cfg.latent_struct_dim) {
                *v = 0.0;
            }
            let mut sketch = lift(&lift_s, &z_struct);
            let mut text = lift(&lift_t, &z_app);
            let mut image = lift(&lift_i, &z);
            for view in [&mut sketch, &mut text, &mut image] {
                for v in view.iter_mut() {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    *v += cfg.view_noise_std * eps;
                }
            }
            samples.push(TriModalSample {
                instance_id: next_id,
                category: cat,
                split: Split::Train,
                sketch,
                text,
                image,
            });
            next_id += 1;
        }
    }
    DatasetTable::from_samples(samples)
}

/// Stratified split into train and test tables. Split tags on the returned
/// samples are rewritten to match their partition. Per-category proportions
/// are preserved within one sample.
pub fn split(
    table: &DatasetTable,
    test_fraction: f64,
    seed: u64,
) -> Result<(DatasetTable, DatasetTable)> {
    if table.is_empty() {
        return Err(StbirError::Schema("cannot split an empty table".into()));
    }
    if !(0.0..1.0).contains(&test_fraction) || test_fraction <= 0.0 {
        return Err(StbirError::Config(format!(
            "test_fraction must be in (0,1), got {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_cat: Vec<Vec<usize>> = vec![Vec::new(); table.num_categories];
    for (i, s) in table.samples.iter().enumerate() {
        by_cat[s.category].push(i);
    }
    let mut test_idx = std::collections::HashSet::new();
    for idxs in by_cat.iter_mut() {
        idxs.shuffle(&mut rng);
        let n_test = ((idxs.len() as f64) * test_fraction).round() as usize;
        if n_test == idxs.len() && !idxs.is_empty() {
            eprintln!("warning: split leaves a category empty in train");
        }
        for &i in idxs.iter().take(n_test) {
            test_idx.insert(i);
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, s) in table.samples.iter().enumerate() {
        let mut s = s.clone();
        if test_idx.contains(&i) {
            s.split = Split::Test;
            test.push(s);
        } else {
            s.split = Split::Train;
            train.push(s);
        }
    }
    Ok((
        DatasetTable::from_samples(train)?,
        DatasetTable::from_samples(test)?,
    ))
}

/// Indices into a `DatasetTable`, at most `batch_size` of them, all unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
}

/// Shuffled batches for one epoch. The permutation depends on (seed, epoch).
/// A trailing partial batch of size < 2 is dropped: contrastive losses need
/// at least one in-batch negative.
pub fn make_batches(
    table: &DatasetTable,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(StbirError::Config(format!(
            "batch_size must be >= 2, got {batch_size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e3779b97f4a7c15));
    let mut order: Vec<usize> = (0..table.len()).collect();
    order.shuffle(&mut rng);
    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        if chunk.len() < 2 {
            break;
        }
        batches.push(Batch {
            indices: chunk.to_vec(),
        });
    }
    Ok(batches)
}
