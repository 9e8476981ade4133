//! On-disk formats: encoder/center-bank checkpoints and embedding exports.
//!
//! Checkpoint layout: a magic line, a JSON descriptor line, then row-major
//! little-endian f64 parameter blocks in fixed order (sketch, text, image;
//! per encoder W1, b1, W2, b2; then the center rows).
//!
//! Embedding export layout: a JSON header line {dim, count, dtype, ids}
//! followed by a contiguous row-major block of little-endian f32 values.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::ckfso::CenterBank;
use crate::encoders::{init_encoder, EncoderState, Modality};
use crate::error::{Result, StbirError};
use crate::mcfa::EncoderSet;

const CKPT_MAGIC: &str = "STBIR-CKPT 1";
const EMB_MAGIC: &str = "STBIR-EMB 1";

#[derive(Serialize, Deserialize)]
struct EncoderDescriptor {
    modality: String,
    input_dim: usize,
    hidden_dim: usize,
    embed_dim: usize,
    step_count: u64,
}

#[derive(Serialize, Deserialize)]
struct CenterDescriptor {
    num_categories: usize,
    dim: usize,
    step_count: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    encoders: Vec<EncoderDescriptor>,
    centers: CenterDescriptor,
}

fn write_f64_block<W: Write>(w: &mut W, values: impl Iterator<Item = f64>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64_block<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes encoders and the center bank to a checkpoint file atomically.
pub fn save_checkpoint(path: &Path, encoders: &EncoderSet, bank: &CenterBank) -> Result<()> {
    let header = CheckpointHeader {
        encoders: [&encoders.sketch, &encoders.text, &encoders.image]
            .iter()
            .map(|e| EncoderDescriptor {
                modality: e.modality.tag().to_string(),
                input_dim: e.input_dim(),
                hidden_dim: e.hidden_dim(),
                embed_dim: e.embed_dim(),
                step_count: e.step_count,
            })
            .collect(),
        centers: CenterDescriptor {
            num_categories: bank.num_categories(),
            dim: bank.dim(),
            step_count: bank.step_count,
        },
    };
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "ckpt".into())
    ));
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        writeln!(w, "{CKPT_MAGIC}")?;
        writeln!(
            w,
            "{}",
            serde_json::to_string(&header).map_err(|e| StbirError::Data(e.to_string()))?
        )?;
        for enc in [&encoders.sketch, &encoders.text, &encoders.image] {
            write_f64_block(&mut w, enc.w1.iter().copied())?;
            write_f64_block(&mut w, enc.b1.iter().copied())?;
            write_f64_block(&mut w, enc.w2.iter().copied())?;
            write_f64_block(&mut w, enc.b2.iter().copied())?;
        }
        write_f64_block(&mut w, bank.centers.iter().copied())?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn read_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    Ok(line.trim_end().to_string())
}

/// Loads a checkpoint. Moment buffers come back zeroed; step counts are
/// restored from the descriptor.
pub fn load_checkpoint(path: &Path) -> Result<(EncoderSet, CenterBank)> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let magic = read_line(&mut r)?;
    if magic != CKPT_MAGIC {
        return Err(StbirError::Data(format!(
            "bad checkpoint magic '{magic}'"
        )));
    }
    let header: CheckpointHeader = serde_json::from_str(&read_line(&mut r)?)
        .map_err(|e| StbirError::Data(format!("bad checkpoint header: {e}")))?;
    if header.encoders.len() != 3 {
        return Err(StbirError::Data(format!(
            "expected 3 encoder descriptors, got {}",
            header.encoders.len()
        )));
    }
    let mut loaded: Vec<EncoderState> = Vec::with_capacity(3);
    for desc in &header.encoders {
        let modality = Modality::from_tag(&desc.modality)?;
        let mut enc = init_encoder(modality, desc.input_dim, desc.hidden_dim, desc.embed_dim, 0);
        let w1 = read_f64_block(&mut r, desc.hidden_dim * desc.input_dim)?;
        let b1 = read_f64_block(&mut r, desc.hidden_dim)?;
        let w2 = read_f64_block(&mut r, desc.embed_dim * desc.hidden_dim)?;
        let b2 = read_f64_block(&mut r, desc.embed_dim)?;
        enc.w1 = Array2::from_shape_vec((desc.hidden_dim, desc.input_dim), w1)
            .map_err(|e| StbirError::Data(e.to_string()))?;
        enc.b1 = Array1::from_vec(b1);
        enc.w2 = Array2::from_shape_vec((desc.embed_dim, desc.hidden_dim), w2)
            .map_err(|e| StbirError::Data(e.to_string()))?;
        enc.b2 = Array1::from_vec(b2);
        enc.step_count = desc.step_count;
        loaded.push(enc);
    }
    let centers = read_f64_block(&mut r, header.centers.num_categories * header.centers.dim)?;
    let centers = Array2::from_shape_vec((header.centers.num_categories, header.centers.dim), centers)
        .map_err(|e| StbirError::Data(e.to_string()))?;
    let mut bank = CenterBank::from_centers(centers);
    bank.step_count = header.centers.step_count;

    let mut set = None;
    let mut by_modality = std::collections::HashMap::new();
    for enc in loaded {
        by_modality.insert(enc.modality, enc);
    }
    if let (Some(sketch), Some(text), Some(image)) = (
        by_modality.remove(&Modality::Sketch),
        by_modality.remove(&Modality::Text),
        by_modality.remove(&Modality::Image),
    ) {
        set = Some(EncoderSet {
            sketch,
            text,
            image,
        });
    }
    let encoders = set.ok_or_else(|| {
        StbirError::Data("checkpoint must contain one encoder per modality".into())
    })?;
    Ok((encoders, bank))
}

#[derive(Serialize, Deserialize)]
struct EmbeddingHeader {
    dim: usize,
    count: usize,
    dtype: String,
    ids: Vec<u64>,
}

/// Exports embeddings as an f32 little-endian payload with a JSON header.
pub fn export_embeddings(path: &Path, embeddings: &Array2<f64>, ids: &[u64]) -> Result<()> {
    if embeddings.nrows() != ids.len() {
        return Err(StbirError::Shape {
            expected: format!("{} ids", embeddings.nrows()),
            got: format!("{}", ids.len()),
        });
    }
    let header = EmbeddingHeader {
        dim: embeddings.ncols(),
        count: embeddings.nrows(),
        dtype: "f32le".into(),
        ids: ids.to_vec(),
    };
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "emb".into())
    ));
    {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        writeln!(w, "{EMB_MAGIC}")?;
        writeln!(
            w,
            "{}",
            serde_json::to_string(&header).map_err(|e| StbirError::Data(e.to_string()))?
        )?;
        for v in embeddings.iter() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads an embedding export back; values widen from f32 to f64.
pub fn import_embeddings(path: &Path) -> Result<(Array2<f64>, Vec<u64>)> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let magic = read_line(&mut r)?;
    if magic != EMB_MAGIC {
        return Err(StbirError::Data(format!("bad embedding magic '{magic}'")));
    }
    let header: EmbeddingHeader = serde_json::from_str(&read_line(&mut r)?)
        .map_err(|e| StbirError::Data(format!("bad embedding header: {e}")))?;
    if header.dtype != "f32le" {
        return Err(StbirError::Data(format!("unsupported dtype {}", header.dtype)));
    }
    let mut buf = vec![0u8; header.count * header.dim * 4];
    r.read_exact(&mut buf)?;
    let values: Vec<f64> = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let arr = Array2::from_shape_vec((header.count, header.dim), values)
        .map_err(|e| StbirError::Data(e.to_string()))?;
    Ok((arr, header.ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{synthesize_dataset, SynthConfig};
    use crate::mcfa::{init_pipeline, PipelineConfig};

    fn fixture() -> (EncoderSet, CenterBank) {
        let data = synthesize_dataset(&SynthConfig {
            num_categories: 4,
            instances_per_category: 3,
            view_dims: (6, 6, 6),
            latent_struct_dim: 2,
            latent_app_dim: 2,
            ..Default::default()
        })
        .unwrap();
        let cfg = PipelineConfig {
            hidden_dim: 8,
            embed_dim: 5,
            ..Default::default()
        };
        init_pipeline(&cfg, &data).unwrap()
    }

    #[test]
    fn checkpoint_roundtrip_preserves_checksums() {
        let (encoders, bank) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &encoders, &bank).unwrap();
        let (loaded_enc, loaded_bank) = load_checkpoint(&path).unwrap();
        for ((m, a), (_, b)) in encoders.checksums().iter().zip(loaded_enc.checksums().iter()) {
            assert_eq!(a, b, "{}", m.tag());
        }
        assert_eq!(bank.checksum(), loaded_bank.checksum());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, "NOT-A-CHECKPOINT\n").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn embeddings_roundtrip_within_f32() {
        let emb = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 * 0.125 - 0.7);
        let ids = vec![5, 9, 11];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        export_embeddings(&path, &emb, &ids).unwrap();
        let (loaded, loaded_ids) = import_embeddings(&path).unwrap();
        assert_eq!(loaded_ids, ids);
        for (a, b) in emb.iter().zip(loaded.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
