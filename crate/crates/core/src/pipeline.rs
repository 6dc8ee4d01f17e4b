//! Train-to-directory and evaluate-checkpoint building blocks shared by the
//! command-line tool and the ablation harness.

use std::path::{Path, PathBuf};

use crate::checkpoint::{short_hash, Checkpoint, CheckpointMeta};
use crate::config::train_config_to_toml;
use crate::data::{BouncingDataset, Split, VideoBatch};
use crate::error::Result;
use crate::eval::rollout::{persistence_eval, rollout_eval, MetricsReport};
use crate::model::TaylorNet;
use crate::train::{LogRow, LossLog, TrainConfig, Trainer};

pub const LOSS_CSV: &str = "loss.csv";
pub const MODEL_FILE: &str = "model.tnck";

/// Hash of the canonical TOML form of a config.
pub fn config_hash(cfg: &TrainConfig) -> Result<String> {
    Ok(short_hash(train_config_to_toml(cfg)?.as_bytes()))
}

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("ckpt_epoch_{:04}.tnck", epoch)
}

/// The first `count` held-out sequences, long enough for `horizon` predictions.
pub fn test_videos(cfg: &TrainConfig, count: usize, horizon: usize) -> Result<VideoBatch> {
    let seq_len = cfg.model.input_len + horizon;
    BouncingDataset::new(&cfg.data, seq_len, cfg.seed, Split::Test)?.batch(0, count)
}

/// Train from scratch, writing `loss.csv`, periodic epoch checkpoints and
/// the final `model.tnck` into `dir` (which must exist).
pub fn train_to_dir(
    cfg: &TrainConfig,
    variant: Option<&str>,
    dir: &Path,
    mut progress: impl FnMut(&LogRow),
) -> Result<Checkpoint> {
    let mut trainer = Trainer::new(cfg.clone())?;
    let mut log = LossLog::create(&dir.join(LOSS_CSV))?;
    let meta = |trainer: &Trainer, epoch: usize| CheckpointMeta {
        step: trainer.steps_done(),
        epoch,
        variant: variant.map(str::to_string),
        train: Some(cfg.clone()),
    };
    trainer.run(
        |row| {
            progress(row);
            log.append(row)
        },
        |epoch, t| {
            let done = epoch + 1;
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.epochs {
                let ck = Checkpoint::new(cfg.model.clone(), meta(t, done), t.params().clone())?;
                ck.save(&dir.join(epoch_checkpoint_name(done)))?;
            }
            Ok(())
        },
    )?;
    let ck = Checkpoint::new(cfg.model.clone(), meta(&trainer, cfg.epochs), trainer.params().clone())?;
    ck.save(&dir.join(MODEL_FILE))?;
    Ok(ck)
}

/// Model path inside a run directory, or the path itself if it is a file.
pub fn resolve_checkpoint(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MODEL_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Rollout metrics of `ck` on `videos`, optionally with the persistence baseline.
pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    label: &str,
    videos: &VideoBatch,
    data_seed: u64,
    horizons: &[usize],
    batch_size: usize,
    with_persistence: bool,
) -> Result<MetricsReport> {
    let net = TaylorNet::new(ck.model.clone())?;
    let results = rollout_eval(&net, &ck.params, videos, horizons, batch_size)?;
    let persistence = if with_persistence {
        Some(persistence_eval(videos, ck.model.input_len, horizons)?)
    } else {
        None
    };
    let config_hash = match &ck.meta.train {
        Some(t) => config_hash(t)?,
        None => short_hash(&serde_json::to_vec(&ck.model).unwrap_or_default()),
    };
    Ok(MetricsReport {
        label: label.to_string(),
        config_hash,
        checkpoint_id: ck.id()?,
        data_seed,
        input_len: ck.model.input_len,
        results,
        persistence,
    })
}
