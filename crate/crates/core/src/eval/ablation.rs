//! Ablation harness: train (or reuse) each variant from the same seed and
//! data, evaluate all of them on the same held-out sequences and report
//! them side by side.
//!
//! Variants whose resolved config is identical (for instance `full` and
//! `order3` when the base order is 3) are trained once and share a row
//! source. A variant directory that already holds a finished `model.tnck`
//! for exactly the same config is loaded instead of retrained.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::plot::{line_plot, Series};
use super::rollout::HorizonSummary;
use crate::checkpoint::Checkpoint;
use crate::config::Variant;
use crate::data::seqfile::atomic_write;
use crate::error::{Error, Result};
use crate::eval::rollout::persistence_eval;
use crate::pipeline::{config_hash, evaluate_checkpoint, test_videos, train_to_dir, MODEL_FILE};
use crate::train::{LogRow, TrainConfig};

#[derive(Clone, Debug)]
pub struct AblationOptions {
    pub base: TrainConfig,
    pub variants: Vec<Variant>,
    /// Predicted frames in the comparison (10 → `horizon`).
    pub horizon: usize,
    pub test_sequences: usize,
    pub eval_batch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub order: usize,
    pub config_hash: String,
    pub checkpoint_id: String,
    pub train_seed: u64,
    pub data_seed: u64,
    /// Variant whose trained weights this row reuses, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub same_as: Option<String>,
    pub reused_checkpoint: bool,
    pub metrics: HorizonSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub horizon: usize,
    pub rows: Vec<AblationRow>,
    pub persistence: HorizonSummary,
}

impl AblationReport {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        let name = v.name();
        self.rows.iter().find(|r| r.variant == name)
    }

    /// `(order, mse_frame)` for every `orderN` variant, sorted by order.
    pub fn order_sweep(&self) -> Vec<(usize, f64)> {
        let mut pts: Vec<(usize, f64)> = self
            .rows
            .iter()
            .filter(|r| r.variant.starts_with("order"))
            .map(|r| (r.order, r.metrics.mse_frame))
            .collect();
        pts.sort_by_key(|p| p.0);
        pts
    }

    /// Whether `full` scored no worse than `taylorcell_only`, if both ran.
    /// This is an expectation to record, not a pass/fail gate.
    pub fn full_beats_taylorcell_only(&self) -> Option<bool> {
        let full = self.row(Variant::Full)?;
        let tc = self.row(Variant::TaylorCellOnly)?;
        Some(full.metrics.mse_frame <= tc.metrics.mse_frame)
    }

    pub fn markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Ablation, 10 → {} rollout\n", self.horizon);
        let _ = writeln!(
            s,
            "MSE and MAE are per-frame pixel sums averaged over predicted frames and test sequences.\n"
        );
        let _ = writeln!(s, "| variant | order | MSE/frame | MSE (sum) | MAE/frame | SSIM | PSNR | BCE/frame | checkpoint |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
        for r in &self.rows {
            let m = &r.metrics;
            let ck = match &r.same_as {
                Some(o) => format!("{} (= {})", r.checkpoint_id, o),
                None => r.checkpoint_id.clone(),
            };
            let _ = writeln!(
                s,
                "| {} | {} | {:.3} | {:.3} | {:.3} | {:.4} | {:.2} | {:.3} | {} |",
                r.variant, r.order, m.mse_frame, m.mse_sum, m.mae_frame, m.ssim, m.psnr, m.bce_frame, ck
            );
        }
        let p = &self.persistence;
        let _ = writeln!(
            s,
            "| persistence | - | {:.3} | {:.3} | {:.3} | {:.4} | {:.2} | {:.3} | - |",
            p.mse_frame, p.mse_sum, p.mae_frame, p.ssim, p.psnr, p.bce_frame
        );
        if let Some(first) = self.rows.first() {
            let _ = writeln!(
                s,
                "\nAll variants: train seed {}, test data seed {}.",
                first.train_seed, first.data_seed
            );
        }
        let _ = writeln!(s);
        match self.full_beats_taylorcell_only() {
            Some(true) => {
                let _ = writeln!(s, "Expectation full ≤ taylorcell_only (MSE/frame): holds.");
            }
            Some(false) => {
                let _ = writeln!(
                    s,
                    "Expectation full ≤ taylorcell_only (MSE/frame): does NOT hold in this run (recorded, not gated)."
                );
            }
            None => {}
        }
        s
    }

    /// `ablation.csv`, `ablation.md`, `ablation.json`, and `order_sweep.{csv,png}`
    /// when order variants are present.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let err = |e: csv::Error| Error::format("ablation csv", e.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "variant", "order", "mse_frame", "mse_sum", "mae_frame", "mae_sum", "ssim", "psnr", "bce_frame",
            "bce_sum", "mse_pixel", "config_hash", "checkpoint_id", "same_as", "train_seed", "data_seed",
        ])
        .map_err(err)?;
        for r in &self.rows {
            let m = &r.metrics;
            w.serialize((
                &r.variant,
                r.order,
                m.mse_frame,
                m.mse_sum,
                m.mae_frame,
                m.mae_sum,
                m.ssim,
                m.psnr,
                m.bce_frame,
                m.bce_sum,
                m.mse_pixel,
                &r.config_hash,
                &r.checkpoint_id,
                r.same_as.clone().unwrap_or_default(),
                r.train_seed,
                r.data_seed,
            ))
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::format("ablation csv", e.to_string()))?;
        atomic_write(&dir.join("ablation.csv"), &bytes)?;
        atomic_write(&dir.join("ablation.md"), self.markdown().as_bytes())?;
        let json = serde_json::to_vec_pretty(self).map_err(|e| Error::format("ablation report", e.to_string()))?;
        atomic_write(&dir.join("ablation.json"), &json)?;

        let sweep = self.order_sweep();
        if !sweep.is_empty() {
            let mut text = String::from("order,mse_frame\n");
            for (o, m) in &sweep {
                let _ = writeln!(text, "{},{}", o, m);
            }
            atomic_write(&dir.join("order_sweep.csv"), text.as_bytes())?;
            let series = Series {
                label: "mse_frame".into(),
                points: sweep.iter().map(|&(o, m)| (o as f64, m)).collect(),
            };
            line_plot(&dir.join("order_sweep.png"), &[series], false)?;
        }
        Ok(())
    }
}

fn reusable(path: &Path, cfg: &TrainConfig) -> Option<Checkpoint> {
    let ck = Checkpoint::load(path).ok()?;
    (ck.meta.train.as_ref() == Some(cfg) && ck.meta.epoch == cfg.epochs).then_some(ck)
}

/// Run every variant; `progress(variant, row)` sees each training step.
pub fn run_ablation(
    opts: &AblationOptions,
    dir: &Path,
    mut progress: impl FnMut(&str, &LogRow),
) -> Result<AblationReport> {
    if opts.variants.is_empty() {
        return Err(Error::invalid("no variants to compare"));
    }
    let videos = test_videos(&opts.base, opts.test_sequences, opts.horizon)?;
    let horizons = [opts.horizon];
    let mut done: Vec<(TrainConfig, String, AblationRow)> = Vec::new();
    for &v in &opts.variants {
        let mut cfg = opts.base.clone();
        v.apply(&mut cfg.model)?;
        cfg.validate()?;
        let name = v.name();
        if let Some((_, first, row)) = done.iter().find(|(c, _, _)| *c == cfg) {
            let row = AblationRow {
                variant: name.clone(),
                same_as: Some(first.clone()),
                ..row.clone()
            };
            done.push((cfg, name, row));
            continue;
        }
        let vdir = dir.join(&name);
        std::fs::create_dir_all(&vdir).map_err(|e| Error::io(&vdir, e))?;
        let (ck, reused) = match reusable(&vdir.join(MODEL_FILE), &cfg) {
            Some(ck) => (ck, true),
            None => (train_to_dir(&cfg, Some(&name), &vdir, |r| progress(&name, r))?, false),
        };
        let report = evaluate_checkpoint(&ck, &name, &videos, cfg.seed, &horizons, opts.eval_batch, false)?;
        report.write(&vdir)?;
        let row = AblationRow {
            variant: name.clone(),
            order: cfg.model.order,
            config_hash: config_hash(&cfg)?,
            checkpoint_id: report.checkpoint_id.clone(),
            train_seed: cfg.seed,
            data_seed: cfg.seed,
            same_as: None,
            reused_checkpoint: reused,
            metrics: report.results[0].summary.clone(),
        };
        done.push((cfg, name, row));
    }
    let persistence = persistence_eval(&videos, opts.base.model.input_len, &horizons)?.remove(0).summary;
    let report = AblationReport {
        horizon: opts.horizon,
        rows: done.into_iter().map(|(_, _, r)| r).collect(),
        persistence,
    };
    report.write(dir)?;
    Ok(report)
}
