//! Episodic meta-training across source domains.
//!
//! Each step samples a batch of query-reference episodes (sequentially, from
//! one seeded generator), evaluates the combined objective per episode in
//! parallel, and merges gradients in episode order — so runs are bitwise
//! reproducible regardless of worker count, and a resumed checkpoint
//! continues the identical stream.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{attention_loss_var, attention_matrix_var, guidance_scores_var};
use crate::autograd::{Graph, Scalar, Var};
use crate::checkpoint::{Checkpoint, RngState, FORMAT_VERSION};
use crate::comparer::{
    classification_loss_var, patch_scores_var, ranking_loss_var, sample_rank_pairs,
    PooledPatchesVar, RankPairBatch,
};
use crate::data::{sample_episode, DomainDataset, Episode};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::{clip_global_norm, Adam, Optimizer, SgdMomentum};
use crate::params::Gradients;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub att: f64,
    pub rank: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cls: 1.0,
            att: 1.0,
            rank: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "adam-like")]
    AdamLike,
    #[serde(rename = "sgd-momentum")]
    SgdMomentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss_weights: LossWeights,
    pub steps: u64,
    pub batch_episodes: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Normal reference images per training episode.
    pub n_ref: usize,
    /// Probability that an episode query is abnormal.
    pub abnormal_prob: f64,
    /// Rank pairs sampled per query image.
    pub rank_pairs: usize,
    /// Scaling factor of the ranking-pair weight.
    pub lambda: f64,
    pub grad_clip: f64,
    pub log_every: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_weights: LossWeights::default(),
            steps: 2000,
            batch_episodes: 8,
            learning_rate: 1e-4,
            seed: 0,
            optimizer: OptimizerKind::AdamLike,
            n_ref: 1,
            abnormal_prob: 0.5,
            rank_pairs: 32,
            lambda: 1.0,
            grad_clip: 5.0,
            log_every: 50,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.loss_weights;
        if w.cls < 0.0 || w.att < 0.0 || w.rank < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if w.cls == 0.0 && w.att == 0.0 && w.rank == 0.0 {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        if self.steps < 1 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.batch_episodes < 1 {
            return Err(Error::Config("batch_episodes must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.n_ref < 1 {
            return Err(Error::Config("n_ref must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.abnormal_prob) {
            return Err(Error::Config("abnormal_prob must lie in [0, 1]".into()));
        }
        if self.rank_pairs < 1 {
            return Err(Error::Config("rank_pairs must be >= 1".into()));
        }
        if self.lambda <= 0.0 {
            return Err(Error::Config("lambda must be positive".into()));
        }
        if self.grad_clip <= 0.0 {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub att: f64,
    pub rank: f64,
    pub total: f64,
}

/// One training-log record, serialized as a JSON line per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub l_cls: f64,
    pub l_att: f64,
    pub l_rank: f64,
    pub total: f64,
}

/// Config echo embedded in checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Build the per-episode combined objective on the tape.
pub fn episode_loss_var<F: Scalar>(
    g: &mut Graph<F>,
    model: &Model<F>,
    episode: &Episode,
    pairs: &RankPairBatch,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let query_sets = model.forward_patchsets(g, &episode.query.pixels)?;
    let levels = query_sets.len();

    // Pool reference patches per scale across all reference images.
    let mut per_ref: Vec<Vec<Var>> = vec![Vec::new(); levels];
    let mut rows: Vec<usize> = vec![0; levels];
    for r in &episode.reference {
        let sets = model.forward_patchsets(g, &r.pixels)?;
        for (i, s) in sets.into_iter().enumerate() {
            rows[i] += g.value(s.var).shape()[0];
            per_ref[i].push(s.var);
        }
    }
    let pooled: Vec<PooledPatchesVar> = per_ref
        .iter()
        .enumerate()
        .map(|(i, parts)| PooledPatchesVar {
            var: g.concat_rows(parts),
            scale_index: i,
            count: rows[i],
        })
        .collect();

    let label = episode.query.label;
    let mut matrices = Vec::with_capacity(levels);
    let mut guidance = Vec::with_capacity(levels);
    let mut scores = Vec::with_capacity(levels);
    for (q, r) in query_sets.iter().zip(pooled.iter()) {
        let a = attention_matrix_var(g, model, q, r.var, r.scale_index)?;
        matrices.push(a);
        guidance.push(guidance_scores_var(g, a));
        scores.push(patch_scores_var(g, model, q, r)?);
    }

    let l_cls = classification_loss_var(g, &scores, label)?;
    let l_att = attention_loss_var(g, &matrices, label)?;
    let l_rank = ranking_loss_var(g, &scores, &guidance, pairs)?;

    let terms = [
        g.mul_scalar(l_cls, F::from_f64(weights.cls)),
        g.mul_scalar(l_att, F::from_f64(weights.att)),
        g.mul_scalar(l_rank, F::from_f64(weights.rank)),
    ];
    let total = g.add_n(&terms);

    let breakdown = LossBreakdown {
        cls: g.scalar(l_cls).as_f64(),
        att: g.scalar(l_att).as_f64(),
        rank: g.scalar(l_rank).as_f64(),
        total: g.scalar(total).as_f64(),
    };
    Ok((total, breakdown))
}

/// Combined objective of one episode (value level); samples the rank pairs
/// from `rng` exactly as the training loop does.
pub fn total_loss(
    model: &Model<f32>,
    episode: &Episode,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, LossBreakdown)> {
    let counts: Vec<usize> = model
        .config
        .extractor
        .grids(model.config.input_size)
        .iter()
        .map(|(h, w, _)| h * w)
        .collect();
    let pairs = sample_rank_pairs(&counts, config.rank_pairs, config.lambda, rng)?;
    let mut g = Graph::<f32>::new();
    let (_, breakdown) = episode_loss_var(&mut g, model, episode, &pairs, &config.loss_weights)?;
    Ok((breakdown.total, breakdown))
}

pub struct TrainOptions {
    pub model_config: ModelConfig,
    pub train: TrainConfig,
    /// JSONL step log destination.
    pub log_path: Option<PathBuf>,
    /// Directory for periodic and final checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    /// Records of the steps executed in this call.
    pub records: Vec<StepRecord>,
    /// Every query path that entered a training episode.
    pub seen_query_paths: BTreeSet<String>,
    pub checkpoint: Checkpoint,
}

fn make_checkpoint(
    model: &Model<f32>,
    optimizer: &Optimizer<f32>,
    echo: &ConfigEcho,
    step: u64,
    rng: &ChaCha8Rng,
) -> Checkpoint {
    Checkpoint {
        version: FORMAT_VERSION,
        config_json: serde_json::to_string(echo).expect("config echo serializes"),
        step,
        rng: RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        },
        params: model
            .params
            .entries()
            .iter()
            .map(|e| (e.name.clone(), e.value.clone()))
            .collect(),
        optimizer: Some(optimizer.to_state(&model.params)),
    }
}

fn restore_rng(state: &RngState) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(state.seed);
    rng.set_stream(state.stream);
    rng.set_word_pos(state.word_pos);
    rng
}

/// Run episodic training over the source domains.
pub fn train(sources: &[DomainDataset], opts: &TrainOptions) -> Result<TrainOutcome> {
    opts.model_config.validate()?;
    opts.train.validate()?;
    if sources.is_empty() {
        return Err(Error::Data("training needs at least one source domain".into()));
    }

    let cfg = &opts.train;
    let echo = ConfigEcho {
        model: opts.model_config.clone(),
        train: cfg.clone(),
    };

    let (mut model, mut optimizer, mut rng, start_step) = match &opts.resume {
        None => {
            let model = Model::<f32>::new(opts.model_config.clone(), cfg.seed)?;
            let optimizer = match cfg.optimizer {
                OptimizerKind::AdamLike => {
                    Optimizer::Adam(Adam::new(cfg.learning_rate, &model.params))
                }
                OptimizerKind::SgdMomentum => {
                    Optimizer::Sgd(SgdMomentum::new(cfg.learning_rate, &model.params))
                }
            };
            let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (model, optimizer, rng, 0u64)
        }
        Some(ckpt) => {
            let saved: ConfigEcho = serde_json::from_str(&ckpt.config_json)
                .map_err(|e| Error::Checkpoint(format!("bad config echo: {e}")))?;
            if saved.model != opts.model_config || saved.train != *cfg {
                return Err(Error::Config(
                    "resume requires the identical model and training configuration".into(),
                ));
            }
            let mut params = crate::params::ParamSet::<f32>::new();
            for (name, value) in &ckpt.params {
                params.register(name.clone(), value.clone());
            }
            let model = Model::<f32>::from_parts(opts.model_config.clone(), params)?;
            let state = ckpt
                .optimizer
                .as_ref()
                .ok_or_else(|| Error::Checkpoint("checkpoint lacks optimizer state".into()))?;
            let optimizer = Optimizer::from_state(state, cfg.learning_rate, &model.params)?;
            (model, optimizer, restore_rng(&ckpt.rng), ckpt.step)
        }
    };

    if start_step >= cfg.steps {
        return Err(Error::Config(format!(
            "checkpoint is already at step {start_step} of {}",
            cfg.steps
        )));
    }

    let patch_counts: Vec<usize> = opts
        .model_config
        .extractor
        .grids(opts.model_config.input_size)
        .iter()
        .map(|(h, w, _)| h * w)
        .collect();

    let mut log_file = match &opts.log_path {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
            }
            let file = if start_step == 0 {
                std::fs::File::create(path)
            } else {
                std::fs::OpenOptions::new().append(true).create(true).open(path)
            };
            Some(std::io::BufWriter::new(file.map_err(|e| Error::io(path, e))?))
        }
        None => None,
    };

    let mut records = Vec::with_capacity((cfg.steps - start_step) as usize);
    let mut seen_query_paths = BTreeSet::new();

    for step in start_step..cfg.steps {
        // Sequential sampling keeps the generator position well defined.
        let mut batch: Vec<(Episode, RankPairBatch)> = Vec::with_capacity(cfg.batch_episodes);
        for _ in 0..cfg.batch_episodes {
            let episode = sample_episode(sources, cfg.n_ref, cfg.abnormal_prob, &mut rng)?;
            let pairs = sample_rank_pairs(&patch_counts, cfg.rank_pairs, cfg.lambda, &mut rng)?;
            seen_query_paths.insert(episode.query.path.clone());
            batch.push((episode, pairs));
        }

        let results: Vec<Result<(LossBreakdown, Gradients<f32>)>> = batch
            .par_iter()
            .map(|(episode, pairs)| {
                let mut g = Graph::<f32>::new();
                let (total, breakdown) =
                    episode_loss_var(&mut g, &model, episode, pairs, &cfg.loss_weights)?;
                let grads = g.backward(total, model.params.len());
                Ok((breakdown, grads))
            })
            .collect();

        let mut sum = LossBreakdown {
            cls: 0.0,
            att: 0.0,
            rank: 0.0,
            total: 0.0,
        };
        let mut merged: Gradients<f32> = vec![None; model.params.len()];
        for (i, res) in results.into_iter().enumerate() {
            let (breakdown, grads) = res?;
            if !breakdown.total.is_finite() {
                return Err(Error::NonFinite {
                    step: step + 1,
                    queries: batch.iter().map(|(e, _)| e.query.path.clone()).collect(),
                });
            }
            let _ = i;
            sum.cls += breakdown.cls;
            sum.att += breakdown.att;
            sum.rank += breakdown.rank;
            sum.total += breakdown.total;
            for (slot, g) in merged.iter_mut().zip(grads.into_iter()) {
                match (slot.as_mut(), g) {
                    (Some(acc), Some(g)) => *acc += &g,
                    (None, Some(g)) => *slot = Some(g),
                    _ => {}
                }
            }
        }
        let scale = 1.0 / cfg.batch_episodes as f64;
        for g in merged.iter_mut().flatten() {
            g.mapv_inplace(|v| v * scale as f32);
        }
        clip_global_norm(&mut merged, cfg.grad_clip);
        optimizer.step(&mut model.params, &merged);

        let record = StepRecord {
            step: step + 1,
            l_cls: sum.cls * scale,
            l_att: sum.att * scale,
            l_rank: sum.rank * scale,
            total: sum.total * scale,
        };
        if let Some(f) = log_file.as_mut() {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(f, "{line}").map_err(|e| {
                Error::io(opts.log_path.clone().unwrap_or_default(), e)
            })?;
        }
        if cfg.log_every > 0 && record.step % cfg.log_every == 0 {
            eprintln!(
                "step {:>6}/{}: total {:.4} (cls {:.4}, att {:.4}, rank {:.4})",
                record.step, cfg.steps, record.total, record.l_cls, record.l_att, record.l_rank
            );
        }
        records.push(record);

        if cfg.checkpoint_every > 0
            && record.step % cfg.checkpoint_every == 0
            && record.step != cfg.steps
        {
            if let Some(dir) = &opts.checkpoint_dir {
                let ckpt = make_checkpoint(&model, &optimizer, &echo, record.step, &rng);
                ckpt.save(&dir.join(format!("step-{:06}.ckpt", record.step)))?;
            }
        }
    }

    if let Some(f) = log_file.as_mut() {
        f.flush()
            .map_err(|e| Error::io(opts.log_path.clone().unwrap_or_default(), e))?;
    }

    let checkpoint = make_checkpoint(&model, &optimizer, &echo, cfg.steps, &rng);
    if let Some(dir) = &opts.checkpoint_dir {
        checkpoint.save(&dir.join("final.ckpt"))?;
    }

    Ok(TrainOutcome {
        model,
        records,
        seen_query_paths,
        checkpoint,
    })
}

/// Restore a model (evaluation use) from a checkpoint.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<(Model<f32>, ConfigEcho)> {
    let echo: ConfigEcho = serde_json::from_str(&ckpt.config_json)
        .map_err(|e| Error::Checkpoint(format!("bad config echo: {e}")))?;
    let mut params = crate::params::ParamSet::<f32>::new();
    for (name, value) in &ckpt.params {
        params.register(name.clone(), value.clone());
    }
    let model = Model::<f32>::from_parts(echo.model.clone(), params)?;
    Ok((model, echo))
}
