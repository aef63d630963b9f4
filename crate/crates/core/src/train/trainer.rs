//! Mini-batch training with deterministic shuffling and reduction.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, OptimizerState};
use super::losses::{compute_losses, LossBreakdown, LossContext, LossWeights};
use crate::body::TrainingSample;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::net::{write_checkpoint, BodyModel, NetConfig, NetworkParams};
use crate::prior::GmmPrior;
use crate::render::SoftRenderConfig;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    #[serde(flatten)]
    pub adam: AdamConfig,
    pub weights: LossWeights,
    /// Fraction of `steps` over which `λ_lap` ramps linearly from 0.
    pub lap_warmup: f64,
    pub net: NetConfig,
    pub render: SoftRenderConfig,
    /// Write `checkpoints/step_XXXXXX` every this many steps (0: final only).
    pub checkpoint_every: usize,
    /// Evaluate on the held-out set every this many epochs (0: never).
    pub eval_every_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 2000,
            batch_size: 32,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            lap_warmup: 0.1,
            net: NetConfig::default(),
            render: SoftRenderConfig::default(),
            checkpoint_every: 0,
            eval_every_epochs: 1,
        }
    }
}

impl TrainConfig {
    /// `λ_lap` at a zero-based step.
    pub fn lap_weight(&self, step: usize) -> f64 {
        let warm = (self.lap_warmup * self.steps as f64).ceil();
        if warm <= 0.0 {
            self.weights.lap
        } else {
            self.weights.lap * ((step + 1) as f64 / warm).min(1.0)
        }
    }
}

/// Sample order for one epoch, a pure function of `(seed, epoch)`.
pub fn epoch_order(seed: u64, epoch: usize, count: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1B5_4A32_D192_ED03);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng);
    order
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lambda_lap: f64,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub eval: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogRecord {
    Step(StepRecord),
    Epoch(EpochRecord),
}

pub struct TrainOutcome<T> {
    pub params: NetworkParams<T>,
    pub history: Vec<StepRecord>,
    pub evals: Vec<EpochRecord>,
    pub checkpoint: Option<PathBuf>,
}

/// Where the run writes; `None` keeps everything in memory.
#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

fn mean_breakdown(parts: &[LossBreakdown], weights: LossWeights) -> LossBreakdown {
    let n = parts.len() as f64;
    let avg = |f: fn(&LossBreakdown) -> f64| parts.iter().map(f).sum::<f64>() / n;
    LossBreakdown {
        lap: avg(|b| b.lap),
        pose3d: avg(|b| b.pose3d),
        pose2d: avg(|b| b.pose2d),
        part2d: avg(|b| b.part2d),
        total: avg(|b| b.total),
        weights,
    }
}

struct Log {
    file: Option<std::io::BufWriter<std::fs::File>>,
}

impl Log {
    fn open(dir: Option<&Path>) -> Result<Self> {
        let file = match dir {
            Some(d) => {
                std::fs::create_dir_all(d)?;
                Some(std::io::BufWriter::new(std::fs::File::create(d.join("metrics.jsonl"))?))
            }
            None => None,
        };
        Ok(Self { file })
    }

    fn write(&mut self, record: &LogRecord) -> Result<()> {
        if let Some(f) = &mut self.file {
            serde_json::to_writer(&mut *f, record)?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(f) = &mut self.file {
            f.flush()?;
        }
        Ok(())
    }
}

/// Batch gradient: per-sample gradients in parallel, summed in index order.
fn batch_gradients<T: Real>(
    params: &NetworkParams<T>,
    batch: &[&TrainingSample<T>],
    ctx: &LossContext<'_, T>,
) -> Result<(Vec<LossBreakdown>, Vec<Tensor<T>>)> {
    let per_sample = batch
        .par_iter()
        .map(|s| {
            let rec = compute_losses(params, s, ctx)?;
            let g = rec.gradients()?;
            Ok((rec.breakdown, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sum: Vec<Tensor<T>> = params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut losses = Vec::with_capacity(batch.len());
    for (b, g) in per_sample {
        losses.push(b);
        for (acc, slot) in sum.iter_mut().zip(g.slots.iter().chain(std::iter::repeat(&None))) {
            if let Some(t) = slot {
                acc.add_assign(t);
            }
        }
    }
    let inv = T::one() / T::c(batch.len() as f64);
    sum.iter_mut().for_each(|t| t.scale(inv));
    Ok((losses, sum))
}

/// Trains from a fresh initialisation seeded by `config.seed`. The training
/// samples' evaluation-only meshes are never read; `eval_set` (if any) is
/// scored every `eval_every_epochs` epochs.
pub fn train<T: Real>(
    config: &TrainConfig,
    dataset: &[TrainingSample<T>],
    eval_set: Option<&[TrainingSample<T>]>,
    prior: Arc<GmmPrior>,
    model: &BodyModel<T>,
    output: &TrainOutput,
) -> Result<TrainOutcome<T>> {
    if dataset.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    config.render.validate()?;
    let mut params = NetworkParams::<T>::init(&config.net, config.seed)?;
    let mut opt = OptimizerState::new(config.adam, &params.tensors);
    let dir = output.dir.as_deref();
    let mut log = Log::open(dir)?;
    let mut history = Vec::with_capacity(config.steps);
    let mut evals = Vec::new();
    let mut order = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0;
    for step in 0..config.steps {
        if cursor == order.len() {
            if step > 0 {
                maybe_eval(config, epoch, step, eval_set, &params, model, &mut evals, &mut log)?;
                epoch += 1;
            }
            order = epoch_order(config.seed, epoch, dataset.len());
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(order.len());
        let batch: Vec<&TrainingSample<T>> = order[cursor..end].iter().map(|&i| &dataset[i]).collect();
        cursor = end;
        let weights = LossWeights {
            lap: config.lap_weight(step),
            ..config.weights
        };
        let ctx = LossContext {
            model,
            prior: prior.clone(),
            render: config.render,
            weights,
        };
        let (losses, grads) = batch_gradients(&params, &batch, &ctx).map_err(|e| {
            log::error!("step {step} failed: {e}");
            e
        })?;
        adam_step(&mut opt, &mut params.tensors, &grads)?;
        let record = StepRecord {
            step,
            epoch,
            lambda_lap: weights.lap,
            loss: mean_breakdown(&losses, weights),
        };
        log.write(&LogRecord::Step(record.clone()))?;
        history.push(record);
        if let Some(d) = dir {
            if config.checkpoint_every > 0 && (step + 1).is_multiple_of(config.checkpoint_every) {
                write_checkpoint(&d.join("checkpoints").join(format!("step_{:06}", step + 1)), &params, step + 1)?;
            }
        }
    }
    if config.steps > 0 && cursor == order.len() {
        maybe_eval(config, epoch, config.steps, eval_set, &params, model, &mut evals, &mut log)?;
    }
    log.flush()?;
    let checkpoint = match dir {
        Some(d) => {
            let path = d.join("checkpoint");
            write_checkpoint(&path, &params, config.steps)?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainOutcome {
        params,
        history,
        evals,
        checkpoint,
    })
}

#[allow(clippy::too_many_arguments)]
fn maybe_eval<T: Real>(
    config: &TrainConfig,
    epoch: usize,
    step: usize,
    eval_set: Option<&[TrainingSample<T>]>,
    params: &NetworkParams<T>,
    model: &BodyModel<T>,
    evals: &mut Vec<EpochRecord>,
    log: &mut Log,
) -> Result<()> {
    let Some(set) = eval_set.filter(|s| !s.is_empty()) else {
        return Ok(());
    };
    if config.eval_every_epochs == 0 || !(epoch + 1).is_multiple_of(config.eval_every_epochs) {
        return Ok(());
    }
    let record = EpochRecord {
        epoch,
        step,
        eval: evaluate(params, model, set, &config.render)?,
    };
    log::info!("epoch {epoch}: mPVE {:.1} mm", record.eval.mpve_mm);
    log.write(&LogRecord::Epoch(record.clone()))?;
    evals.push(record);
    Ok(())
}
