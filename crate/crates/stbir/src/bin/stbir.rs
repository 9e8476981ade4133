//! Command-line entry point: dataset synthesis, training, evaluation,
//! ablation sweeps, ad-hoc retrieval, and embedding export.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use stbir::checkpoint::{export_embeddings, load_checkpoint, save_checkpoint};
use stbir::config::RunConfig;
use stbir::datamodel::{load_manifest, save_manifest, split, synthesize_dataset, DatasetTable};
use stbir::encoders::encode;
use stbir::mcfa::{run_pipeline_with, QueryMask, Recalls};
use stbir::report::{write_loss_curves, write_recall_table};
use stbir::retrieval::{fuse, score, top_k, GalleryIndex};

#[derive(Parser)]
#[command(name = "stbir", about = "Sketch+text -> image retrieval training pipeline")]
struct Cli {
    /// Flat key=value config file with dotted keys
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the pipeline and synthesis seeds
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for reports, checkpoints, and manifests
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MaskArg {
    Fused,
    SketchOnly,
    TextOnly,
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepArg {
    Order,
    Modules,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tri-modal dataset manifest
    Synth {
        /// Output manifest path (default <out>/manifest.jsonl)
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train the staged pipeline and emit checkpoints plus loss curves
    Train,
    /// Evaluate a checkpoint on a manifest's test split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        mask: MaskArg,
    },
    /// Sweep stage orders or module toggles and emit a comparison table
    Ablate {
        #[arg(long, value_enum)]
        sweep: SweepArg,
    },
    /// Rank gallery images for one ad-hoc sketch+text query
    Retrieve {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Gallery manifest whose image views form the candidates
        #[arg(long)]
        gallery: PathBuf,
        /// Comma-separated sketch view values
        #[arg(long)]
        sketch: String,
        /// Comma-separated text view values
        #[arg(long)]
        text: String,
        #[arg(short, default_value = "5")]
        k: usize,
    },
    /// Export image-gallery embeddings to the binary embedding format
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output file (default <out>/embeddings.bin)
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        let mut map = BTreeMap::new();
        map.insert("seed".to_string(), seed.to_string());
        map.insert("synth.seed".to_string(), seed.to_string());
        cfg.apply_kv(&map)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(cfg: &RunConfig) -> anyhow::Result<(DatasetTable, DatasetTable)> {
    let table = match &cfg.manifest {
        Some(path) => {
            load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))?
        }
        None => synthesize_dataset(&cfg.synth)?,
    };
    let (train, test) = split(&table, cfg.test_fraction, cfg.pipeline.seed)?;
    Ok((train, test))
}

fn cmd_synth(cli: &Cli, manifest: Option<PathBuf>) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let table = synthesize_dataset(&cfg.synth)?;
    let path = manifest.unwrap_or_else(|| cli.out.join("manifest.jsonl"));
    save_manifest(&table, &path)?;
    println!(
        "wrote {} samples ({} categories) to {}",
        table.len(),
        table.num_categories,
        path.display()
    );
    Ok(())
}

fn cmd_train(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let (train, test) = load_dataset(&cfg)?;
    let out = cli.out.clone();
    std::fs::create_dir_all(&out)?;
    let (encoders, bank, reports) =
        run_pipeline_with(&cfg.pipeline, &train, Some(&test), |stage_idx, enc, bank, report| {
            let path = out.join(format!("stage{stage_idx}.ckpt"));
            save_checkpoint(&path, enc, bank)?;
            if let Some(eval) = &report.eval {
                println!(
                    "stage {stage_idx} ({}): R@1={:.4} R@5={:.4} R@10={:.4}",
                    report.active_modality.tag(),
                    eval.r1,
                    eval.r5,
                    eval.r10
                );
            }
            Ok(())
        })?;
    save_checkpoint(&out.join("final.ckpt"), &encoders, &bank)?;
    write_loss_curves(&out.join("loss_curves.csv"), &reports)?;
    let rows: Vec<(String, Recalls)> = reports
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            r.eval
                .map(|e| (format!("stage{}_{}", i, r.active_modality.tag()), e))
        })
        .collect();
    write_recall_table(&out.join("recall_by_stage.csv"), &rows)?;
    println!("training complete; outputs in {}", out.display());
    Ok(())
}

fn cmd_eval(
    cli: &Cli,
    checkpoint: &Path,
    manifest: &Path,
    mask: MaskArg,
) -> anyhow::Result<()> {
    let (encoders, _) = load_checkpoint(checkpoint)?;
    let table = load_manifest(manifest)?;
    let masks: Vec<(String, QueryMask)> = match mask {
        MaskArg::Fused => vec![("fused".into(), QueryMask::Fused)],
        MaskArg::SketchOnly => vec![("sketch-only".into(), QueryMask::SketchOnly)],
        MaskArg::TextOnly => vec![("text-only".into(), QueryMask::TextOnly)],
        MaskArg::All => vec![
            ("fused".into(), QueryMask::Fused),
            ("sketch-only".into(), QueryMask::SketchOnly),
            ("text-only".into(), QueryMask::TextOnly),
        ],
    };
    let mut rows = Vec::new();
    for (label, m) in masks {
        let recalls = stbir::mcfa::evaluate_split(&encoders, &table, m)?;
        println!(
            "{label}: R@1={:.4} R@5={:.4} R@10={:.4}",
            recalls.r1, recalls.r5, recalls.r10
        );
        rows.push((label, recalls));
    }
    write_recall_table(&cli.out.join("eval.csv"), &rows)?;
    Ok(())
}

fn cmd_ablate(cli: &Cli, sweep: SweepArg) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let (train, test) = load_dataset(&cfg)?;
    let mut rows = Vec::new();
    match sweep {
        SweepArg::Order => {
            for order in ["SIT", "STI", "IST", "ITS", "TSI", "TIS"] {
                let mut variant = cfg.pipeline.clone();
                variant.order = order.to_string();
                let (encoders, _, _) = stbir::mcfa::run_pipeline(&variant, &train, None)?;
                let recalls = stbir::mcfa::evaluate_split(&encoders, &test, QueryMask::Fused)?;
                let label: String = order.chars().map(|c| c.to_string()).collect::<Vec<_>>().join("->");
                println!(
                    "{label}: R@1={:.4} R@5={:.4} R@10={:.4}",
                    recalls.r1, recalls.r5, recalls.r10
                );
                rows.push((label, recalls));
            }
            write_recall_table(&cli.out.join("ablate_order.csv"), &rows)?;
        }
        SweepArg::Modules => {
            let variants: Vec<(&str, Box<dyn Fn(&mut stbir::mcfa::PipelineConfig)>)> = vec![
                ("full", Box::new(|_| {})),
                ("no-cldre", Box::new(|p| p.cldre_enabled = false)),
                ("no-ckfso", Box::new(|p| p.ckfso_enabled = false)),
                ("no-mcfa-joint", Box::new(|p| p.staged = false)),
                ("no-sketch-input", Box::new(|p| p.use_sketch = false)),
                ("no-text-input", Box::new(|p| p.use_text = false)),
            ];
            for (label, mutate) in variants {
                let mut variant = cfg.pipeline.clone();
                mutate(&mut variant);
                let (encoders, _, _) = stbir::mcfa::run_pipeline(&variant, &train, None)?;
                let mask = match (variant.use_sketch, variant.use_text) {
                    (true, true) => QueryMask::Fused,
                    (true, false) => QueryMask::SketchOnly,
                    (false, true) => QueryMask::TextOnly,
                    (false, false) => unreachable!(),
                };
                let recalls = stbir::mcfa::evaluate_split(&encoders, &test, mask)?;
                println!(
                    "{label}: R@1={:.4} R@5={:.4} R@10={:.4}",
                    recalls.r1, recalls.r5, recalls.r10
                );
                rows.push((label.to_string(), recalls));
            }
            write_recall_table(&cli.out.join("ablate_modules.csv"), &rows)?;
        }
    }
    Ok(())
}

fn parse_vector(text: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("invalid vector component '{v}'"))
        })
        .collect()
}

fn cmd_retrieve(
    checkpoint: &Path,
    gallery: &Path,
    sketch: &str,
    text: &str,
    k: usize,
) -> anyhow::Result<()> {
    let (encoders, _) = load_checkpoint(checkpoint)?;
    let table = load_manifest(gallery)?;
    let sketch = parse_vector(sketch)?;
    let text = parse_vector(text)?;
    if sketch.len() != encoders.sketch.input_dim() {
        bail!(
            "sketch vector has {} components, encoder expects {}",
            sketch.len(),
            encoders.sketch.input_dim()
        );
    }
    if text.len() != encoders.text.input_dim() {
        bail!(
            "text vector has {} components, encoder expects {}",
            text.len(),
            encoders.text.input_dim()
        );
    }
    let n = table.len();
    let mut images = Array2::zeros((n, table.dims.2));
    for (r, s) in table.samples.iter().enumerate() {
        for (c, &v) in s.image.iter().enumerate() {
            images[[r, c]] = v;
        }
    }
    let gallery_features = encode(&encoders.image, &images)?;
    let ids: Vec<u64> = table.samples.iter().map(|s| s.instance_id).collect();
    let index = GalleryIndex::build(&gallery_features.values, ids)?;

    let sketch_mat = Array2::from_shape_vec((1, sketch.len()), sketch)?;
    let text_mat = Array2::from_shape_vec((1, text.len()), text)?;
    let f_s = encode(&encoders.sketch, &sketch_mat)?;
    let f_t = encode(&encoders.text, &text_mat)?;
    let query = fuse(&f_s, &f_t)?;
    let sims = score(&query, &index)?;
    let results = top_k(&sims, &index, k.min(index.len()))?;
    println!("rank,instance_id,score");
    for (rank, (id, s)) in results.ranked_ids[0]
        .iter()
        .zip(&results.scores[0])
        .enumerate()
    {
        println!("{},{},{:.6}", rank + 1, id, s);
    }
    Ok(())
}

fn cmd_export_embeddings(
    cli: &Cli,
    checkpoint: &Path,
    manifest: &Path,
    file: Option<PathBuf>,
) -> anyhow::Result<()> {
    let (encoders, _) = load_checkpoint(checkpoint)?;
    let table = load_manifest(manifest)?;
    let n = table.len();
    let mut images = Array2::zeros((n, table.dims.2));
    for (r, s) in table.samples.iter().enumerate() {
        for (c, &v) in s.image.iter().enumerate() {
            images[[r, c]] = v;
        }
    }
    let features = encode(&encoders.image, &images)?;
    let ids: Vec<u64> = table.samples.iter().map(|s| s.instance_id).collect();
    let path = file.unwrap_or_else(|| cli.out.join("embeddings.bin"));
    export_embeddings(&path, &features.values, &ids)?;
    println!("exported {} embeddings (dim {}) to {}", n, features.dim(), path.display());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Synth { manifest } => cmd_synth(&cli, manifest.clone()),
        Command::Train => cmd_train(&cli),
        Command::Eval {
            checkpoint,
            manifest,
            mask,
        } => cmd_eval(&cli, checkpoint, manifest, *mask),
        Command::Ablate { sweep } => cmd_ablate(&cli, *sweep),
        Command::Retrieve {
            checkpoint,
            gallery,
            sketch,
            text,
            k,
        } => cmd_retrieve(checkpoint, gallery, sketch, text, *k),
        Command::ExportEmbeddings {
            checkpoint,
            manifest,
            file,
        } => cmd_export_embeddings(&cli, checkpoint, manifest, file.clone()),
    }
}
