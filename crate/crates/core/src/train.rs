//! Loss, optimisation loop and training log.
//!
//! Each step draws one batch of fresh sequences, picks teaching or
//! free-running mode at random, predicts `output_len` frames after
//! `input_len` conditioning frames and takes one Adam step on
//! `mean((x̂ − x)²) + λ·moment_loss`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::{BouncingDataset, DataConfig, Split, VideoBatch};
use crate::error::{Error, Result};
use crate::model::{frame_constants, ModelConfig, TaylorNet};
use crate::optim::{clip_global_norm, Adam};
use crate::params::{Bound, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TeacherSchedule {
    /// Same teaching probability every epoch.
    Constant { p: f64 },
    /// Probability moves linearly from `start` (first epoch) to `end` (last).
    Linear { start: f64, end: f64 },
}

impl TeacherSchedule {
    pub fn probability(&self, epoch: usize, epochs: usize) -> f64 {
        match *self {
            TeacherSchedule::Constant { p } => p,
            TeacherSchedule::Linear { start, end } => {
                if epochs <= 1 {
                    start
                } else {
                    start + (end - start) * epoch as f64 / (epochs - 1) as f64
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        let valid = match *self {
            TeacherSchedule::Constant { p } => ok(p),
            TeacherSchedule::Linear { start, end } => ok(start) && ok(end),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::invalid("teacher probability must lie in [0, 1]"))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Sequences per epoch.
    pub epoch_size: usize,
    /// Weight of the moment loss.
    pub lambda: f64,
    pub teacher: TeacherSchedule,
    pub seed: u64,
    /// Draw training sequences cyclically from the first `n` indices only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_pool: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    /// Write a checkpoint every this many epochs (0: final only).
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Desk-scale run on the 32×32 preset.
    pub fn tiny() -> Self {
        Self {
            model: ModelConfig::tiny(),
            data: DataConfig::tiny(),
            lr: 1e-3,
            epochs: 30,
            batch_size: 8,
            epoch_size: 256,
            lambda: 1.0,
            teacher: TeacherSchedule::Constant { p: 0.5 },
            seed: 0,
            train_pool: None,
            grad_clip: None,
            checkpoint_every: 10,
        }
    }

    /// 64×64 frames, 10 000 sequences per epoch, batch 16, 1000 epochs.
    pub fn full() -> Self {
        Self {
            model: ModelConfig::full(),
            data: DataConfig::full(),
            epochs: 1000,
            batch_size: 16,
            epoch_size: 10_000,
            checkpoint_every: 50,
            ..Self::tiny()
        }
    }

    /// One fixed batch of four tiny sequences, 500 free-running steps.
    pub fn overfit() -> Self {
        Self {
            lr: 2e-3,
            teacher: TeacherSchedule::Constant { p: 0.0 },
            epochs: 500,
            batch_size: 4,
            epoch_size: 4,
            train_pool: Some(4),
            checkpoint_every: 0,
            ..Self::tiny()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "full" => Ok(Self::full()),
            "overfit" => Ok(Self::overfit()),
            other => Err(Error::invalid(format!(
                "unknown preset `{}` (expected tiny, full or overfit)",
                other
            ))),
        }
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.epoch_size.div_ceil(self.batch_size)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.batch_size == 0 || self.epoch_size == 0 {
            return Err(Error::invalid("batch_size and epoch_size must be positive"));
        }
        if self.train_pool == Some(0) {
            return Err(Error::invalid("train_pool must be positive"));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::invalid("grad_clip must be positive"));
            }
        }
        if self.model.output_len == 0 {
            return Err(Error::invalid("training needs at least one predicted frame"));
        }
        if self.data.canvas != self.model.frame_height || self.data.canvas != self.model.frame_width {
            return Err(Error::invalid(format!(
                "data canvas {} does not match model frames {}x{}",
                self.data.canvas, self.model.frame_height, self.model.frame_width
            )));
        }
        if self.model.frame_channels != 1 {
            return Err(Error::invalid("bouncing-digit data is single-channel"));
        }
        self.teacher.validate()
    }
}

/// Graph handles of the three loss terms.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub image: Var,
    pub moment: Var,
}

/// `image + λ·moment`; `image` is the mean squared error over every pixel
/// of every frame, `moment` the derivative-bank moment loss (zero without
/// a Taylor branch).
pub fn compute_loss<T: Scalar>(
    g: &mut Graph<T>,
    net: &TaylorNet,
    vars: &Bound,
    predictions: &[Var],
    targets: &[Var],
    lambda: f64,
) -> Result<LossTerms> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::shape(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let p = g.concat1(predictions)?;
    let t = g.concat1(targets)?;
    if g.shape(p) != g.shape(t) {
        return Err(Error::shape(format!("prediction {:?} vs target {:?}", g.shape(p), g.shape(t))));
    }
    let d = g.sub(p, t)?;
    let sq = g.square(d);
    let image = g.mean(sq);
    let moment = if net.config().taylor_branch_enabled {
        net.cell().pde().moment_loss(g, vars)?
    } else {
        g.constant(Tensor::scalar(T::zero()))
    };
    let weighted = g.scale(moment, lambda);
    let total = g.add(image, weighted)?;
    Ok(LossTerms { total, image, moment })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Teacher,
    Free,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Teacher => "teacher",
            Mode::Free => "free",
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub total: f64,
    pub image: f64,
    pub moment: f64,
    pub mode: Mode,
    /// Seconds since training started; the only non-deterministic column.
    pub wall_time: f64,
}

pub struct Trainer {
    config: TrainConfig,
    net: TaylorNet,
    params: ParamStore<f32>,
    adam: Adam<f32>,
    data: BouncingDataset,
    mode_rng: ChaCha8Rng,
    step: usize,
    started: Instant,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let net = TaylorNet::new(config.model.clone())?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = net.init(&mut init_rng);
        Self::with_params(config, params)
    }

    /// Continue from existing parameters (fresh optimiser state).
    pub fn with_params(config: TrainConfig, params: ParamStore<f32>) -> Result<Self> {
        config.validate()?;
        let net = TaylorNet::new(config.model.clone())?;
        net.check_params(&params)?;
        let seq_len = config.model.input_len + config.model.output_len;
        let data = BouncingDataset::new(&config.data, seq_len, config.seed, Split::Train)?;
        Ok(Self {
            adam: Adam::new(config.lr),
            mode_rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x6d6f_6465),
            net,
            params,
            data,
            config,
            step: 0,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn net(&self) -> &TaylorNet {
        &self.net
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.config.epochs * self.config.steps_per_epoch()
    }

    /// The batch used by global step `step`.
    pub fn batch_for_step(&self, step: usize) -> Result<VideoBatch> {
        let b = self.config.batch_size;
        let start = match self.config.train_pool {
            Some(pool) => ((step * b) % pool) as u64,
            None => (step * b) as u64,
        };
        match self.config.train_pool {
            Some(pool) if start as usize + b > pool => {
                let first = self.data.batch(start, pool - start as usize)?;
                let rest = self.data.batch(0, b - (pool - start as usize))?;
                concat_batches(&first, &rest)
            }
            _ => self.data.batch(start, b),
        }
    }

    /// Loss and gradients for one batch, without updating parameters.
    pub fn loss_and_grads(
        &self,
        batch: &VideoBatch,
        mode: Mode,
    ) -> Result<((f64, f64, f64), std::collections::BTreeMap<String, Tensor<f32>>)> {
        let m = &self.config.model;
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g);
        let inputs = frame_constants(&mut g, &batch.time_slice(0, m.input_len)?)?;
        let targets = frame_constants(&mut g, &batch.time_slice(m.input_len, m.output_len)?)?;
        let teacher = match mode {
            Mode::Teacher => Some(&targets[..]),
            Mode::Free => None,
        };
        let out = self
            .net
            .forward_sequence(&mut g, &vars, &inputs, m.output_len, teacher)?;
        let loss = compute_loss(&mut g, &self.net, &vars, &out.predictions, &targets, self.config.lambda)?;
        let grads = g.backward(loss.total)?;
        let values = (
            g.value(loss.total).data()[0].as_f64(),
            g.value(loss.image).data()[0].as_f64(),
            g.value(loss.moment).data()[0].as_f64(),
        );
        Ok((values, vars.collect_grads(&g, &grads)))
    }

    /// One optimisation step on `batch`.
    pub fn step_on(&mut self, batch: &VideoBatch, mode: Mode) -> Result<LogRow> {
        let step = self.step;
        let ((total, image, moment), mut grads) = self.loss_and_grads(batch, mode)?;
        if !(total.is_finite() && image.is_finite() && moment.is_finite()) {
            return Err(Error::Diverged {
                step,
                detail: format!("loss is {} (image {}, moment {})", total, image, moment),
            });
        }
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
            return Err(Error::Diverged {
                step,
                detail: format!("gradient of `{}` is not finite", name),
            });
        }
        if let Some(c) = self.config.grad_clip {
            clip_global_norm(&mut grads, c);
        }
        self.adam.step(&mut self.params, &grads)?;
        if !self.params.all_finite() {
            return Err(Error::Diverged {
                step,
                detail: "parameters became non-finite after the update".into(),
            });
        }
        self.step += 1;
        Ok(LogRow {
            epoch: step / self.config.steps_per_epoch(),
            step,
            total,
            image,
            moment,
            mode,
            wall_time: self.started.elapsed().as_secs_f64(),
        })
    }

    /// Draw the next batch and mode, then step.
    pub fn step(&mut self) -> Result<LogRow> {
        let epoch = self.step / self.config.steps_per_epoch();
        let p = self.config.teacher.probability(epoch, self.config.epochs);
        let mode = if self.mode_rng.random_bool(p) {
            Mode::Teacher
        } else {
            Mode::Free
        };
        let batch = self.batch_for_step(self.step)?;
        self.step_on(&batch, mode)
    }

    /// Train to completion. `on_step` sees every row; `on_epoch` is called
    /// with the finished epoch index and may write checkpoints.
    pub fn run(
        &mut self,
        mut on_step: impl FnMut(&LogRow) -> Result<()>,
        mut on_epoch: impl FnMut(usize, &Self) -> Result<()>,
    ) -> Result<()> {
        let per_epoch = self.config.steps_per_epoch();
        while self.step < self.total_steps() {
            let row = self.step()?;
            on_step(&row)?;
            if self.step % per_epoch == 0 {
                on_epoch(self.step / per_epoch - 1, self)?;
            }
        }
        Ok(())
    }
}

fn concat_batches(a: &VideoBatch, b: &VideoBatch) -> Result<VideoBatch> {
    let mut shape = a.frames.shape().to_vec();
    shape[0] += b.frames.shape()[0];
    let mut data = a.frames.data().to_vec();
    data.extend_from_slice(b.frames.data());
    let mut seeds = a.seeds.clone();
    seeds.extend_from_slice(&b.seeds);
    VideoBatch::new(Tensor::new(shape, data)?, seeds)
}

pub const LOG_HEADER: [&str; 7] = ["epoch", "step", "total", "image", "moment", "mode", "wall_time"];

/// Append-only CSV sink for [`LogRow`]s.
pub struct LossLog {
    writer: csv::Writer<std::fs::File>,
    path: std::path::PathBuf,
}

impl LossLog {
    pub fn create(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer
            .write_record(LOG_HEADER)
            .map_err(|e| csv_err(path, e))?;
        Ok(Self {
            writer,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, row: &LogRow) -> Result<()> {
        self.writer
            .write_record([
                row.epoch.to_string(),
                row.step.to_string(),
                format!("{:e}", row.total),
                format!("{:e}", row.image),
                format!("{:e}", row.moment),
                row.mode.as_str().to_string(),
                format!("{:.3}", row.wall_time),
            ])
            .map_err(|e| csv_err(&self.path, e))?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn csv_err(path: &std::path::Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Rows of a loss CSV without the wall-time column.
pub fn read_log_without_time(path: &std::path::Path) -> Result<Vec<Vec<String>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        rows.push(rec.iter().take(LOG_HEADER.len() - 1).map(str::to_string).collect());
    }
    Ok(rows)
}
