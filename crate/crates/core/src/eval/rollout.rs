//! Free-running rollout evaluation over several horizons.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{frame_metrics, FrameMetrics, FrameShape, MetricAccumulator};
use crate::data::seqfile::atomic_write;
use crate::data::VideoBatch;
use crate::error::{Error, Result};
use crate::model::TaylorNet;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Aggregates for one horizon. `*_frame` fields are means over sequences
/// and predicted frames; `*_sum` fields add the per-frame means over the
/// horizon (both conventions appear in the literature).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummary {
    pub horizon: usize,
    pub sequences: usize,
    pub mse_frame: f64,
    pub mse_sum: f64,
    pub mae_frame: f64,
    pub mae_sum: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub bce_frame: f64,
    pub bce_sum: f64,
    pub mse_pixel: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonResult {
    pub summary: HorizonSummary,
    /// Per-frame means over sequences.
    pub curve: Vec<FrameMetrics>,
}

impl HorizonResult {
    pub fn from_accumulator(horizon: usize, acc: &MetricAccumulator) -> Self {
        let curve = acc.curve();
        let total = curve.iter().fold(FrameMetrics::default(), |a, m| a.add(m));
        let mean = total.scale(1.0 / horizon.max(1) as f64);
        Self {
            summary: HorizonSummary {
                horizon,
                sequences: acc.count(),
                mse_frame: mean.mse,
                mse_sum: total.mse,
                mae_frame: mean.mae,
                mae_sum: total.mae,
                ssim: mean.ssim,
                psnr: mean.psnr,
                bce_frame: mean.bce,
                bce_sum: total.bce,
                mse_pixel: mean.mse_pixel,
            },
            curve,
        }
    }
}

/// Evaluation output with enough provenance to trace it back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub config_hash: String,
    pub checkpoint_id: String,
    pub data_seed: u64,
    pub input_len: usize,
    pub results: Vec<HorizonResult>,
    /// Copy-last-frame baseline on the same sequences.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persistence: Option<Vec<HorizonResult>>,
}

fn check_horizons(horizons: &[usize]) -> Result<usize> {
    if horizons.is_empty() {
        return Err(Error::invalid("no horizons given"));
    }
    if let Some(&h) = horizons.iter().find(|&&h| h < 1) {
        return Err(Error::invalid(format!("horizon must be at least 1, got {}", h)));
    }
    Ok(*horizons.iter().max().expect("non-empty"))
}

fn frame_shape(frames: &Tensor<f32>) -> FrameShape {
    let s = frames.shape();
    FrameShape::new(s[2], s[3], s[4])
}

/// Score `predict(inputs, horizon)` on every sequence of `videos` for each
/// horizon, `batch_size` sequences at a time.
pub fn evaluate_rollouts(
    videos: &VideoBatch,
    input_len: usize,
    horizons: &[usize],
    batch_size: usize,
    mut predict: impl FnMut(&Tensor<f32>, usize) -> Result<Tensor<f32>>,
) -> Result<Vec<HorizonResult>> {
    let max_h = check_horizons(horizons)?;
    let s = videos.frames.shape().to_vec();
    if input_len < 1 || input_len + max_h > s[1] {
        return Err(Error::invalid(format!(
            "{} input + {} predicted frames need longer sequences than {}",
            input_len, max_h, s[1]
        )));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let shape = frame_shape(&videos.frames);
    let n = shape.len();
    let mut out = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let mut acc = MetricAccumulator::new(h);
        let mut start = 0;
        while start < videos.len() {
            let count = batch_size.min(videos.len() - start);
            let chunk = VideoBatch::new(
                videos.frames.narrow0(start, count)?,
                videos.seeds[start..start + count].to_vec(),
            )?;
            let inputs = chunk.time_slice(0, input_len)?;
            let targets = chunk.time_slice(input_len, h)?;
            let preds = predict(&inputs, h)?;
            if preds.shape() != targets.shape() {
                return Err(Error::shape(format!(
                    "predictions {:?} vs targets {:?}",
                    preds.shape(),
                    targets.shape()
                )));
            }
            for b in 0..count {
                let per_frame = (0..h)
                    .map(|t| {
                        let o = (b * h + t) * n;
                        frame_metrics(&preds.data()[o..o + n], &targets.data()[o..o + n], shape)
                    })
                    .collect::<Result<Vec<_>>>()?;
                acc.push(&per_frame)?;
            }
            start += count;
        }
        out.push(HorizonResult::from_accumulator(h, &acc));
    }
    Ok(out)
}

/// Free-running model rollouts (no teacher frames).
pub fn rollout_eval(
    net: &TaylorNet,
    params: &ParamStore<f32>,
    videos: &VideoBatch,
    horizons: &[usize],
    batch_size: usize,
) -> Result<Vec<HorizonResult>> {
    let input_len = net.config().input_len;
    evaluate_rollouts(videos, input_len, horizons, batch_size, |inputs, h| {
        let p = net.predict(params, inputs, h)?;
        if !p.all_finite() {
            return Err(Error::NonFinite(format!("rollout of {} frames", h)));
        }
        Ok(p)
    })
}

/// Repeat the last input frame `h` times.
pub fn persistence_predict(inputs: &Tensor<f32>, h: usize) -> Result<Tensor<f32>> {
    let s = inputs.shape();
    let last = inputs.select1(s[1] - 1)?;
    Tensor::stack1(&vec![last; h])
}

pub fn persistence_eval(
    videos: &VideoBatch,
    input_len: usize,
    horizons: &[usize],
) -> Result<Vec<HorizonResult>> {
    evaluate_rollouts(videos, input_len, horizons, videos.len().max(1), persistence_predict)
}

impl MetricsReport {
    pub fn result(&self, horizon: usize) -> Option<&HorizonResult> {
        self.results.iter().find(|r| r.summary.horizon == horizon)
    }

    /// `metrics.csv`, `curves.csv`, `summary.txt` and `report.json` in `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut rows = Vec::new();
        for (source, results) in [("model", Some(&self.results)), ("persistence", self.persistence.as_ref())] {
            for r in results.into_iter().flatten() {
                rows.push((source, r));
            }
        }
        let mut m = csv::Writer::from_writer(Vec::new());
        let mut c = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::format("metrics csv", e.to_string());
        m.write_record([
            "source", "horizon", "sequences", "mse_frame", "mse_sum", "mae_frame", "mae_sum", "ssim", "psnr",
            "bce_frame", "bce_sum", "mse_pixel",
        ])
        .map_err(csv_err)?;
        c.write_record(["source", "horizon", "frame", "mse", "mae", "ssim", "psnr", "bce", "mse_pixel"])
            .map_err(csv_err)?;
        for (source, r) in &rows {
            let s = &r.summary;
            m.serialize((
                source, s.horizon, s.sequences, s.mse_frame, s.mse_sum, s.mae_frame, s.mae_sum, s.ssim, s.psnr,
                s.bce_frame, s.bce_sum, s.mse_pixel,
            ))
            .map_err(csv_err)?;
            for (i, f) in r.curve.iter().enumerate() {
                c.serialize((source, s.horizon, i + 1, f.mse, f.mae, f.ssim, f.psnr, f.bce, f.mse_pixel))
                    .map_err(csv_err)?;
            }
        }
        let inner = |w: csv::Writer<Vec<u8>>| w.into_inner().map_err(|e| Error::format("metrics csv", e.to_string()));
        atomic_write(&dir.join("metrics.csv"), &inner(m)?)?;
        atomic_write(&dir.join("curves.csv"), &inner(c)?)?;
        atomic_write(&dir.join("summary.txt"), self.summary_text().as_bytes())?;
        let json = serde_json::to_vec_pretty(self).map_err(|e| Error::format("report", e.to_string()))?;
        atomic_write(&dir.join("report.json"), &json)
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model: {}", self.label);
        let _ = writeln!(s, "checkpoint: {}  config: {}", self.checkpoint_id, self.config_hash);
        let _ = writeln!(s, "data seed: {}  conditioning frames: {}", self.data_seed, self.input_len);
        let _ = writeln!(s, "MSE/MAE/BCE are per-frame pixel sums; *_sum adds them over the horizon.");
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<12} {:>7} {:>10} {:>11} {:>10} {:>7} {:>7} {:>10}",
            "source", "horizon", "MSE/frame", "MSE(sum)", "MAE/frame", "SSIM", "PSNR", "BCE/frame"
        );
        for (source, results) in [("model", Some(&self.results)), ("persistence", self.persistence.as_ref())] {
            for r in results.into_iter().flatten() {
                let m = &r.summary;
                let _ = writeln!(
                    s,
                    "{:<12} {:>7} {:>10.3} {:>11.3} {:>10.3} {:>7.4} {:>7.2} {:>10.3}",
                    source, m.horizon, m.mse_frame, m.mse_sum, m.mae_frame, m.ssim, m.psnr, m.bce_frame
                );
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn videos() -> VideoBatch {
        let frames = Tensor::from_fn([3, 6, 1, 12, 12], |i| ((i * 37) % 101) as f32 / 100.0);
        VideoBatch::new(frames, vec![1, 2, 3]).unwrap()
    }

    #[test]
    fn oracle_predictor_scores_perfectly() {
        let v = videos();
        // Chunks arrive in order, so an offset tracks which sequences are asked for.
        let mut offset = 0;
        let res = evaluate_rollouts(&v, 2, &[1, 4], 2, |inputs, h| {
            let b = inputs.shape()[0];
            let truth = v.time_slice(2, h)?.narrow0(offset, b)?;
            offset = (offset + b) % v.len();
            Ok(truth)
        })
        .unwrap();
        for r in &res {
            assert_eq!(r.summary.mse_sum, 0.0);
            assert!((r.summary.ssim - 1.0).abs() < 1e-12);
            assert_eq!(r.curve.len(), r.summary.horizon);
            assert_eq!(r.summary.sequences, 3);
        }
    }

    #[test]
    fn persistence_shapes_and_prefix_consistency() {
        let v = videos();
        let res = persistence_eval(&v, 2, &[2, 4]).unwrap();
        assert_eq!(res[0].curve[..], res[1].curve[..2]);
        let sum: f64 = res[1].curve.iter().map(|f| f.mse).sum();
        assert!((res[1].summary.mse_sum - sum).abs() < 1e-9);
        assert!((res[1].summary.mse_frame - sum / 4.0).abs() < 1e-9);
    }

    #[test]
    fn bad_horizons_are_rejected() {
        let v = videos();
        assert!(persistence_eval(&v, 2, &[]).is_err());
        assert!(persistence_eval(&v, 2, &[0]).is_err());
        assert!(persistence_eval(&v, 2, &[5]).is_err());
    }
}
