//! Multi-stage cross-modal feature alignment: a staged freeze/unfreeze
//! training schedule where exactly one modality encoder trains per stage,
//! with curriculum noise and the angular-margin loss targeting that stage's
//! modality, and the contrastive terms active throughout.

use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ckfso::{aaml_loss, normalize_centers, AamlConfig, CenterBank};
use crate::cldre::{inject, progress, CurriculumState};
use crate::datamodel::{make_batches, DatasetTable};
use crate::encoders::{backward, encode, init_encoder, EncoderState, FeatureBatch, Modality};
use crate::error::{Result, StbirError};
use crate::losses::{info_nce, total_loss, triplet, ContrastiveConfig, LossWeights};
use crate::retrieval::{fuse, recall_at_k, score, top_k, GalleryIndex};

/// One stage of the schedule: which encoder trains, for how long. Curriculum
/// noise and the margin loss target the same modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSpec {
    pub active_modality: Modality,
    pub epochs: usize,
}

/// Ordered stages covering each modality exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePlan {
    pub stages: Vec<StageSpec>,
}

/// Parses an order string like "SIT" into a stage plan.
pub fn build_plan(order: &str, epochs_per_stage: usize) -> Result<StagePlan> {
    if epochs_per_stage < 1 {
        return Err(StbirError::Config("epochs_per_stage must be >= 1".into()));
    }
    let mut stages = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for ch in order.chars() {
        let modality = match ch.to_ascii_uppercase() {
            'S' => Modality::Sketch,
            'I' => Modality::Image,
            'T' => Modality::Text,
            other => {
                return Err(StbirError::Config(format!(
                    "invalid modality character '{other}' in order '{order}'"
                )))
            }
        };
        if !seen.insert(modality) {
            return Err(StbirError::Config(format!(
                "modality repeated in order '{order}'"
            )));
        }
        stages.push(StageSpec {
            active_modality: modality,
            epochs: epochs_per_stage,
        });
    }
    if stages.len() != 3 {
        return Err(StbirError::Config(format!(
            "order '{order}' must name all three of S, I, T"
        )));
    }
    Ok(StagePlan { stages })
}

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 2e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(StbirError::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || self.beta1 <= 0.0 {
            return Err(StbirError::Config("beta1 must be in (0,1)".into()));
        }
        if !(0.0..1.0).contains(&self.beta2) || self.beta2 <= 0.0 {
            return Err(StbirError::Config("beta2 must be in (0,1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(StbirError::Config("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// One bias-corrected AdamW update with decoupled weight decay. `step_count`
/// is the value after incrementing (>= 1).
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step_count: u64,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != m.len() || params.len() != v.len() {
        return Err(StbirError::Shape {
            expected: format!("{} elements", params.len()),
            got: format!("{}/{}/{}", grads.len(), m.len(), v.len()),
        });
    }
    if step_count < 1 {
        return Err(StbirError::State("step_count must be >= 1".into()));
    }
    let bc1 = 1.0 - cfg.beta1.powi(step_count as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step_count as i32);
    for i in 0..params.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grads[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        params[i] -= cfg.learning_rate * cfg.weight_decay * params[i];
    }
    Ok(())
}

fn adamw_encoder_step(
    enc: &mut EncoderState,
    grads: &crate::encoders::ParamGrads,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if !enc.trainable {
        return Ok(());
    }
    enc.step_count += 1;
    let t = enc.step_count;
    let pairs: [(&mut [f64], &[f64], &mut [f64], &mut [f64]); 4] = [
        (
            enc.w1.as_slice_mut().unwrap(),
            grads.w1.as_slice().unwrap(),
            enc.moments.m_w1.as_slice_mut().unwrap(),
            enc.moments.v_w1.as_slice_mut().unwrap(),
        ),
        (
            enc.b1.as_slice_mut().unwrap(),
            grads.b1.as_slice().unwrap(),
            enc.moments.m_b1.as_slice_mut().unwrap(),
            enc.moments.v_b1.as_slice_mut().unwrap(),
        ),
        (
            enc.w2.as_slice_mut().unwrap(),
            grads.w2.as_slice().unwrap(),
            enc.moments.m_w2.as_slice_mut().unwrap(),
            enc.moments.v_w2.as_slice_mut().unwrap(),
        ),
        (
            enc.b2.as_slice_mut().unwrap(),
            grads.b2.as_slice().unwrap(),
            enc.moments.m_b2.as_slice_mut().unwrap(),
            enc.moments.v_b2.as_slice_mut().unwrap(),
        ),
    ];
    for (p, g, m, v) in pairs {
        adamw_step(p, g, m, v, t, cfg)?;
    }
    Ok(())
}

/// The three per-modality encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSet {
    pub sketch: EncoderState,
    pub text: EncoderState,
    pub image: EncoderState,
}

impl EncoderSet {
    pub fn get(&self, m: Modality) -> &EncoderState {
        match m {
            Modality::Sketch => &self.sketch,
            Modality::Text => &self.text,
            Modality::Image => &self.image,
        }
    }

    pub fn get_mut(&mut self, m: Modality) -> &mut EncoderState {
        match m {
            Modality::Sketch => &mut self.sketch,
            Modality::Text => &mut self.text,
            Modality::Image => &mut self.image,
        }
    }

    pub fn checksums(&self) -> [(Modality, String); 3] {
        [
            (Modality::Sketch, self.sketch.checksum()),
            (Modality::Text, self.text.checksum()),
            (Modality::Image, self.image.checksum()),
        ]
    }
}

/// Full pipeline configuration.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub order: String,
    pub epochs_per_stage: usize,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub optimizer: OptimizerConfig,
    pub aaml: AamlConfig,
    pub contrastive: ContrastiveConfig,
    pub weights: LossWeights,
    pub cldre_alpha: f64,
    pub cldre_enabled: bool,
    pub ckfso_enabled: bool,
    /// When false, all encoders train jointly with noise and margin loss on
    /// every modality (the schedule-removed ablation baseline).
    pub staged: bool,
    pub use_sketch: bool,
    pub use_text: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            order: "SIT".into(),
            epochs_per_stage: 16,
            batch_size: 32,
            hidden_dim: 128,
            embed_dim: 64,
            optimizer: OptimizerConfig::default(),
            aaml: AamlConfig::default(),
            contrastive: ContrastiveConfig::default(),
            weights: LossWeights::default(),
            cldre_alpha: 0.2,
            cldre_enabled: true,
            ckfso_enabled: true,
            staged: true,
            use_sketch: true,
            use_text: true,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Validates every field, reporting all failures together.
    pub fn validate(&self) -> Result<()> {
        let mut errors: Vec<String> = [
            self.optimizer.validate(),
            self.aaml.validate(),
            self.contrastive.validate(),
            self.weights.validate(),
            build_plan(&self.order, self.epochs_per_stage).map(|_| ()),
        ]
        .into_iter()
        .filter_map(|r| r.err().map(|e| e.to_string()))
        .collect();
        if self.batch_size < 2 {
            errors.push("batch_size must be >= 2".into());
        }
        if self.cldre_alpha < 0.0 {
            errors.push("cldre.alpha must be >= 0".into());
        }
        if !self.use_sketch && !self.use_text {
            errors.push("at least one query modality must be enabled".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(StbirError::Config(errors.join("; ")))
        }
    }
}

/// Loss components for one epoch.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_aaml: f64,
    pub l_infonce: f64,
    pub l_triplet: f64,
    pub l_total: f64,
    pub elapsed_secs: f64,
}

/// Recall at 1, 5, 10.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recalls {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
}

/// Per-stage training record.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub active_modality: Modality,
    pub epochs: Vec<EpochRecord>,
    pub final_checksums: [(Modality, String); 3],
    pub eval: Option<Recalls>,
}

/// Which features form the query at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryMask {
    Fused,
    SketchOnly,
    TextOnly,
}

fn views_matrix(table: &DatasetTable, indices: &[usize], pick: fn(&crate::datamodel::TriModalSample) -> &Vec<f64>) -> Array2<f64> {
    let dim = pick(&table.samples[indices[0]]).len();
    let mut out = Array2::zeros((indices.len(), dim));
    for (r, &i) in indices.iter().enumerate() {
        for (c, &v) in pick(&table.samples[i]).iter().enumerate() {
            out[[r, c]] = v;
        }
    }
    out
}

fn all_indices(table: &DatasetTable) -> Vec<usize> {
    (0..table.len()).collect()
}

/// Noise-free evaluation on a held-out table: queries are built per the mask,
/// the gallery is the table's own image embeddings, ground truth is the
/// matching instance.
pub fn evaluate_split(
    encoders: &EncoderSet,
    table: &DatasetTable,
    mask: QueryMask,
) -> Result<Recalls> {
    if table.is_empty() {
        return Err(StbirError::Data("evaluation table is empty".into()));
    }
    let idx = all_indices(table);
    let x_img = views_matrix(table, &idx, |s| &s.image);
    let f_img = encode(&encoders.image, &x_img)?;
    let ids: Vec<u64> = table.samples.iter().map(|s| s.instance_id).collect();
    let index = GalleryIndex::build(&f_img.values, ids.clone())?;

    let queries = match mask {
        QueryMask::Fused => {
            let f_s = encode(&encoders.sketch, &views_matrix(table, &idx, |s| &s.sketch))?;
            let f_t = encode(&encoders.text, &views_matrix(table, &idx, |s| &s.text))?;
            fuse(&f_s, &f_t)?
        }
        QueryMask::SketchOnly => {
            encode(&encoders.sketch, &views_matrix(table, &idx, |s| &s.sketch))?
        }
        QueryMask::TextOnly => encode(&encoders.text, &views_matrix(table, &idx, |s| &s.text))?,
    };
    let sims = score(&queries, &index)?;
    let k_max = 10.min(index.len());
    let results = top_k(&sims, &index, k_max)?;
    Ok(Recalls {
        r1: recall_at_k(&results, &ids, 1)?,
        r5: recall_at_k(&results, &ids, 5.min(k_max))?,
        r10: recall_at_k(&results, &ids, k_max)?,
    })
}

struct BatchLoss {
    l_aaml: f64,
    l_infonce: f64,
    l_triplet: f64,
    l_total: f64,
}

/// Runs one training stage. Exactly the active encoder (and the center bank)
/// updates; frozen encoders are bit-identical before and after.
#[allow(clippy::too_many_arguments)]
pub fn run_stage(
    stage: &StageSpec,
    train: &DatasetTable,
    encoders: &mut EncoderSet,
    bank: &mut CenterBank,
    cfg: &PipelineConfig,
    seed: u64,
    eval_table: Option<&DatasetTable>,
) -> Result<TrainReport> {
    for m in [Modality::Sketch, Modality::Text, Modality::Image] {
        let want = m == stage.active_modality;
        if encoders.get(m).trainable != want {
            return Err(StbirError::State(format!(
                "encoder {} trainable={} but stage expects {}",
                m.tag(),
                encoders.get(m).trainable,
                want
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batches_per_epoch = make_batches(train, cfg.batch_size, seed, 0)?.len();
    let total_batches = batches_per_epoch * stage.epochs;
    // Frozen image encoder: gallery features are constant through the stage,
    // encode the whole train split once.
    let cached_images = if stage.active_modality != Modality::Image {
        let idx = all_indices(train);
        Some(encode(&encoders.image, &views_matrix(train, &idx, |s| &s.image))?)
    } else {
        None
    };

    let mut epochs = Vec::with_capacity(stage.epochs);
    let mut step = 0usize;
    for epoch in 0..stage.epochs {
        let start = Instant::now();
        let batches = make_batches(train, cfg.batch_size, seed, epoch)?;
        let mut sums = BatchLoss {
            l_aaml: 0.0,
            l_infonce: 0.0,
            l_triplet: 0.0,
            l_total: 0.0,
        };
        for batch in &batches {
            let t = if total_batches > 1 {
                progress(step, total_batches - 1)?
            } else {
                1.0
            };
            let losses = train_batch(
                stage.active_modality,
                t,
                batch,
                train,
                encoders,
                bank,
                cfg,
                cached_images.as_ref(),
                &mut rng,
            )?;
            sums.l_aaml += losses.l_aaml;
            sums.l_infonce += losses.l_infonce;
            sums.l_triplet += losses.l_triplet;
            sums.l_total += losses.l_total;
            step += 1;
        }
        let nb = batches.len() as f64;
        epochs.push(EpochRecord {
            epoch,
            l_aaml: sums.l_aaml / nb,
            l_infonce: sums.l_infonce / nb,
            l_triplet: sums.l_triplet / nb,
            l_total: sums.l_total / nb,
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
    }
    let eval = match eval_table {
        Some(table) => Some(evaluate_split(encoders, table, QueryMask::Fused)?),
        None => None,
    };
    Ok(TrainReport {
        active_modality: stage.active_modality,
        epochs,
        final_checksums: encoders.checksums(),
        eval,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_batch(
    active: Modality,
    t: f64,
    batch: &crate::datamodel::Batch,
    train: &DatasetTable,
    encoders: &mut EncoderSet,
    bank: &mut CenterBank,
    cfg: &PipelineConfig,
    cached_images: Option<&FeatureBatch>,
    rng: &mut ChaCha8Rng,
) -> Result<BatchLoss> {
    let n = batch.indices.len();
    let labels: Vec<usize> = batch
        .indices
        .iter()
        .map(|&i| train.samples[i].category)
        .collect();
    let x_sketch = views_matrix(train, &batch.indices, |s| &s.sketch);
    let x_text = views_matrix(train, &batch.indices, |s| &s.text);
    let f_sketch = encode(&encoders.sketch, &x_sketch)?;
    let f_text = encode(&encoders.text, &x_text)?;
    let (x_image, f_image) = match cached_images {
        Some(cache) => {
            let mut rows = Array2::zeros((n, cache.dim()));
            for (r, &i) in batch.indices.iter().enumerate() {
                rows.row_mut(r).assign(&cache.values.row(i));
            }
            (None, FeatureBatch::new(rows, Modality::Image))
        }
        None => {
            let x = views_matrix(train, &batch.indices, |s| &s.image);
            let f = encode(&encoders.image, &x)?;
            (Some(x), f)
        }
    };

    // curriculum noise on the active modality only
    let curriculum = CurriculumState::new(t, if cfg.cldre_enabled { cfg.cldre_alpha } else { 0.0 })?;
    let noise_on = |m: Modality| if cfg.staged { m == active } else { true };
    let hat = |f: &FeatureBatch, m: Modality, rng: &mut ChaCha8Rng| {
        if noise_on(m) {
            inject(f, &curriculum, rng)
        } else {
            f.clone()
        }
    };
    let f_sketch_hat = hat(&f_sketch, Modality::Sketch, rng);
    let f_text_hat = hat(&f_text, Modality::Text, rng);
    let f_image_hat = hat(&f_image, Modality::Image, rng);

    // margin loss on the active modality's (noised) features
    let aaml_targets: Vec<Modality> = if !cfg.ckfso_enabled {
        Vec::new()
    } else if cfg.staged {
        vec![active]
    } else {
        let mut v = Vec::new();
        if cfg.use_sketch {
            v.push(Modality::Sketch);
        }
        if cfg.use_text {
            v.push(Modality::Text);
        }
        v.push(Modality::Image);
        v
    };
    let mut l_aaml = 0.0;
    let mut aaml_feat_grads: Vec<(Modality, Array2<f64>)> = Vec::new();
    let mut grad_centers = Array2::<f64>::zeros(bank.centers.dim());
    for &m in &aaml_targets {
        let feats = match m {
            Modality::Sketch => &f_sketch_hat,
            Modality::Text => &f_text_hat,
            Modality::Image => &f_image_hat,
        };
        let out = aaml_loss(feats, &labels, bank, &cfg.aaml)?;
        l_aaml += out.loss;
        aaml_feat_grads.push((m, out.grad_features));
        grad_centers += &out.grad_centers;
    }

    // composite query and contrastive terms against the image features
    let f_composite = match (cfg.use_sketch, cfg.use_text) {
        (true, true) => fuse(&f_sketch_hat, &f_text_hat)?,
        (true, false) => f_sketch_hat.clone(),
        (false, true) => f_text_hat.clone(),
        (false, false) => unreachable!("validated in PipelineConfig"),
    };
    let nce = info_nce(&f_composite, &f_image_hat, cfg.contrastive.temperature)?;
    let trip = triplet(&f_composite, &f_image_hat, cfg.contrastive.triplet_margin)?;
    let l_total = total_loss(l_aaml, nce.loss, trip.loss, &cfg.weights)?;

    // upstream gradient per modality's features; fusion is addition so the
    // composite gradient passes to each query modality unchanged
    let w = &cfg.weights;
    let query_grad =
        nce.grad_queries.mapv(|v| v * w.lambda2) + trip.grad_queries.mapv(|v| v * w.lambda3);
    let gallery_grad =
        nce.grad_gallery.mapv(|v| v * w.lambda2) + trip.grad_gallery.mapv(|v| v * w.lambda3);

    let upstream_for = |m: Modality| -> Array2<f64> {
        let mut g = match m {
            Modality::Sketch if cfg.use_sketch => query_grad.clone(),
            Modality::Text if cfg.use_text => query_grad.clone(),
            Modality::Image => gallery_grad.clone(),
            _ => Array2::zeros(query_grad.dim()),
        };
        for (gm, ag) in &aaml_feat_grads {
            if *gm == m {
                g += &ag.mapv(|v| v * w.lambda1);
            }
        }
        g
    };

    // parameter updates: active encoder(s) plus the center bank
    let trainable: Vec<Modality> = if cfg.staged {
        vec![active]
    } else {
        vec![Modality::Sketch, Modality::Text, Modality::Image]
    };
    for m in trainable {
        let upstream = upstream_for(m);
        let views = match m {
            Modality::Sketch => x_sketch.clone(),
            Modality::Text => x_text.clone(),
            Modality::Image => match &x_image {
                Some(x) => x.clone(),
                None => views_matrix(train, &batch.indices, |s| &s.image),
            },
        };
        let enc = encoders.get_mut(m);
        if enc.trainable {
            let grads = backward(enc, &views, &upstream)?;
            adamw_encoder_step(enc, &grads, &cfg.optimizer)?;
        }
    }
    if !aaml_targets.is_empty() {
        grad_centers.mapv_inplace(|v| v * w.lambda1);
        bank.step_count += 1;
        adamw_step(
            bank.centers.as_slice_mut().unwrap(),
            grad_centers.as_slice().unwrap(),
            bank.m.as_slice_mut().unwrap(),
            bank.v.as_slice_mut().unwrap(),
            bank.step_count,
            &cfg.optimizer,
        )?;
        normalize_centers(bank)?;
    }

    Ok(BatchLoss {
        l_aaml,
        l_infonce: nce.loss,
        l_triplet: trip.loss,
        l_total,
    })
}

/// Initializes encoders and the center bank deterministically from the
/// pipeline seed and the dataset's declared dimensions.
pub fn init_pipeline(cfg: &PipelineConfig, train: &DatasetTable) -> Result<(EncoderSet, CenterBank)> {
    cfg.validate()?;
    let (v_s, v_t, v_i) = train.dims;
    let encoders = EncoderSet {
        sketch: init_encoder(Modality::Sketch, v_s, cfg.hidden_dim, cfg.embed_dim, cfg.seed ^ 0x51),
        text: init_encoder(Modality::Text, v_t, cfg.hidden_dim, cfg.embed_dim, cfg.seed ^ 0x52),
        image: init_encoder(Modality::Image, v_i, cfg.hidden_dim, cfg.embed_dim, cfg.seed ^ 0x53),
    };
    let bank = CenterBank::init(train.num_categories.max(2), cfg.embed_dim, cfg.seed ^ 0x54)?;
    Ok((encoders, bank))
}

/// Executes the full schedule: staged (one encoder per stage, frozen others)
/// or joint (all encoders every batch) when `cfg.staged` is false.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    train: &DatasetTable,
    eval_table: Option<&DatasetTable>,
) -> Result<(EncoderSet, CenterBank, Vec<TrainReport>)> {
    run_pipeline_with(cfg, train, eval_table, |_, _, _, _| Ok(()))
}

/// `run_pipeline` with a hook invoked after every completed stage, e.g. to
/// emit per-stage checkpoints.
pub fn run_pipeline_with(
    cfg: &PipelineConfig,
    train: &DatasetTable,
    eval_table: Option<&DatasetTable>,
    mut on_stage: impl FnMut(usize, &EncoderSet, &CenterBank, &TrainReport) -> Result<()>,
) -> Result<(EncoderSet, CenterBank, Vec<TrainReport>)> {
    cfg.validate()?;
    let (mut encoders, mut bank) = init_pipeline(cfg, train)?;
    let plan = build_plan(&cfg.order, cfg.epochs_per_stage)?;
    let mut reports = Vec::new();

    if cfg.staged {
        for (stage_idx, stage) in plan.stages.iter().enumerate() {
            // skip stages for disabled query modalities
            if (stage.active_modality == Modality::Sketch && !cfg.use_sketch)
                || (stage.active_modality == Modality::Text && !cfg.use_text)
            {
                continue;
            }
            for m in [Modality::Sketch, Modality::Text, Modality::Image] {
                encoders.get_mut(m).set_trainable(m == stage.active_modality);
            }
            let report = run_stage(
                stage,
                train,
                &mut encoders,
                &mut bank,
                cfg,
                cfg.seed.wrapping_add(1000 + stage_idx as u64),
                eval_table,
            )?;
            on_stage(stage_idx, &encoders, &bank, &report)?;
            reports.push(report);
        }
    } else {
        // joint baseline: one pseudo-stage per scheduled stage so the total
        // optimization budget matches the staged run
        for m in [Modality::Sketch, Modality::Text, Modality::Image] {
            encoders.get_mut(m).set_trainable(true);
        }
        for (stage_idx, stage) in plan.stages.iter().enumerate() {
            let report = run_joint_block(
                stage.epochs,
                train,
                &mut encoders,
                &mut bank,
                cfg,
                cfg.seed.wrapping_add(1000 + stage_idx as u64),
                eval_table,
            )?;
            on_stage(stage_idx, &encoders, &bank, &report)?;
            reports.push(report);
        }
    }
    Ok((encoders, bank, reports))
}

#[allow(clippy::too_many_arguments)]
fn run_joint_block(
    epochs: usize,
    train: &DatasetTable,
    encoders: &mut EncoderSet,
    bank: &mut CenterBank,
    cfg: &PipelineConfig,
    seed: u64,
    eval_table: Option<&DatasetTable>,
) -> Result<TrainReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batches_per_epoch = make_batches(train, cfg.batch_size, seed, 0)?.len();
    let total_batches = batches_per_epoch * epochs;
    let mut records = Vec::with_capacity(epochs);
    let mut step = 0usize;
    for epoch in 0..epochs {
        let start = Instant::now();
        let batches = make_batches(train, cfg.batch_size, seed, epoch)?;
        let mut sums = BatchLoss {
            l_aaml: 0.0,
            l_infonce: 0.0,
            l_triplet: 0.0,
            l_total: 0.0,
        };
        for batch in &batches {
            let t = if total_batches > 1 {
                progress(step, total_batches - 1)?
            } else {
                1.0
            };
            let losses = train_batch(
                Modality::Sketch, // unused in joint mode
                t,
                batch,
                train,
                encoders,
                bank,
                cfg,
                None,
                &mut rng,
            )?;
            sums.l_aaml += losses.l_aaml;
            sums.l_infonce += losses.l_infonce;
            sums.l_triplet += losses.l_triplet;
            sums.l_total += losses.l_total;
            step += 1;
        }
        let nb = batches.len() as f64;
        records.push(EpochRecord {
            epoch,
            l_aaml: sums.l_aaml / nb,
            l_infonce: sums.l_infonce / nb,
            l_triplet: sums.l_triplet / nb,
            l_total: sums.l_total / nb,
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
    }
    let eval = match eval_table {
        Some(table) => Some(evaluate_split(encoders, table, QueryMask::Fused)?),
        None => None,
    };
    Ok(TrainReport {
        active_modality: Modality::Sketch,
        epochs: records,
        final_checksums: encoders.checksums(),
        eval,
    })
}
