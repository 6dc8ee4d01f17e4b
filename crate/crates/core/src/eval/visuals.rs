//! Figure and animation export.
//!
//! One grid per sequence with six rows, one column per time step
//! (`input_len + n_future` columns):
//!
//! | row | contents |
//! |-----|----------|
//! | 0   | conditioning frames (blank over the prediction span) |
//! | 1   | ground truth, every step |
//! | 2   | prediction: one-step estimates during warm-up, then the free rollout |
//! | 3   | Taylor feature, the decoded Taylor-branch state alone |
//! | 4   | residual feature, the decoded residual-branch state alone |
//! | 5   | `|prediction − target| × 10`, clamped to `[0, 1]` |
//!
//! Rows 3 and 4 are min-max normalized over the whole row for display.
//! Column 0 has no prediction because nothing precedes the first frame.
//! Empty cells are mid grey. The GIF shows ground truth next to the
//! prediction, one frame per time step.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, Frame, Rgb, RgbImage, Rgba, RgbaImage};

use super::metrics::FrameShape;
use crate::autodiff::Graph;
use crate::data::VideoBatch;
use crate::error::{Error, Result};
use crate::model::{frame_constants, TaylorNet};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const ROWS: usize = 6;
pub const ROW_NAMES: [&str; ROWS] = ["input", "target", "prediction", "taylor", "residual", "diff_x10"];
const GAP: u32 = 1;
const EMPTY: u8 = 128;
const GIF_DELAY_MS: u32 = 250;

/// Display values in `[0, 1]` for each cell, `None` for blank cells.
#[derive(Clone, Debug, PartialEq)]
pub struct GridRows {
    pub shape: FrameShape,
    pub input_len: usize,
    pub rows: [Vec<Option<Vec<f32>>>; ROWS],
}

impl GridRows {
    pub fn columns(&self) -> usize {
        self.rows[0].len()
    }
}

/// Rescale every present cell of a row jointly to `[0, 1]`.
pub fn normalize_row(row: &mut [Option<Vec<f32>>]) {
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for v in row.iter().flatten().flatten() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let span = hi - lo;
    for v in row.iter_mut().flatten().flatten() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.5 };
    }
}

/// `|a − b| × 10`, clamped to `[0, 1]`.
pub fn diff_x10(a: &[f32], b: &[f32]) -> Vec<f32> {
    a.iter().zip(b).map(|(p, t)| ((p - t).abs() * 10.0).min(1.0)).collect()
}

/// Run the model on one sequence `[1, T, C, H, W]` and gather the grid rows.
pub fn collect_rows(
    net: &TaylorNet,
    params: &ParamStore<f32>,
    video: &Tensor<f32>,
    n_future: usize,
) -> Result<GridRows> {
    let s = video.shape().to_vec();
    let input_len = net.config().input_len;
    if s.len() != 5 || s[0] != 1 {
        return Err(Error::shape(format!("expected one sequence [1, T, C, H, W], got {:?}", s)));
    }
    if n_future < 1 || input_len + n_future > s[1] {
        return Err(Error::invalid(format!(
            "{} + {} frames requested from a {}-frame sequence",
            input_len, n_future, s[1]
        )));
    }
    let shape = FrameShape::new(s[2], s[3], s[4]);
    let cols = input_len + n_future;
    let truth: Vec<Vec<f32>> = (0..cols)
        .map(|t| video.select1(t).map(|f| f.into_data()))
        .collect::<Result<_>>()?;

    let mut g = Graph::new();
    let vars = params.bind_frozen(&mut g);
    let cond = (0..input_len).map(|t| video.select1(t)).collect::<Result<Vec<_>>>()?;
    let inputs = frame_constants(&mut g, &Tensor::stack1(&cond)?)?;
    let out = net.forward_sequence(&mut g, &vars, &inputs, n_future, None)?;

    let blank = || vec![None; cols];
    let mut rows: [Vec<Option<Vec<f32>>>; ROWS] = [blank(), blank(), blank(), blank(), blank(), blank()];
    for t in 0..cols {
        if t < input_len {
            rows[0][t] = Some(truth[t].clone());
        }
        rows[1][t] = Some(truth[t].clone());
    }
    // Probe i processed frame i and estimates frame i + 1.
    for (i, p) in out.probes.iter().enumerate() {
        let col = i + 1;
        let frame = match p.frame {
            Some(f) => f,
            None => net.merge_decode(&mut g, &vars, p.h_hat_t, p.h_hat_r)?,
        };
        rows[2][col] = Some(g.value(frame).data().to_vec());
        if let Some(h) = p.h_hat_t {
            let v = net.merge_decode(&mut g, &vars, Some(h), None)?;
            rows[3][col] = Some(g.value(v).data().to_vec());
        }
        if let Some(h) = p.h_hat_r {
            let v = net.merge_decode(&mut g, &vars, None, Some(h))?;
            rows[4][col] = Some(g.value(v).data().to_vec());
        }
    }
    for t in 0..cols {
        if let Some(p) = &rows[2][t] {
            rows[5][t] = Some(diff_x10(p, &truth[t]));
        }
    }
    normalize_row(&mut rows[3]);
    normalize_row(&mut rows[4]);
    Ok(GridRows {
        shape,
        input_len,
        rows,
    })
}

fn pixel(shape: FrameShape, v: &[f32], y: usize, x: usize) -> [u8; 3] {
    let plane = shape.height * shape.width;
    let at = |c: usize| (v[c * plane + y * shape.width + x].clamp(0.0, 1.0) * 255.0).round() as u8;
    if shape.channels == 3 {
        [at(0), at(1), at(2)]
    } else {
        let g = at(0);
        [g, g, g]
    }
}

fn draw_cell(img: &mut RgbImage, shape: FrameShape, cell: Option<&Vec<f32>>, x0: u32, y0: u32, scale: u32) {
    for y in 0..shape.height as u32 * scale {
        for x in 0..shape.width as u32 * scale {
            let c = match cell {
                Some(v) => pixel(shape, v, (y / scale) as usize, (x / scale) as usize),
                None => [EMPTY; 3],
            };
            img.put_pixel(x0 + x, y0 + y, Rgb(c));
        }
    }
}

/// Lay the rows out as an image; `scale` is a nearest-neighbour zoom.
pub fn render_grid(grid: &GridRows, scale: u32) -> RgbImage {
    let scale = scale.max(1);
    let (cw, ch) = (grid.shape.width as u32 * scale, grid.shape.height as u32 * scale);
    let cols = grid.columns() as u32;
    let w = cols * cw + (cols + 1) * GAP;
    let h = ROWS as u32 * ch + (ROWS as u32 + 1) * GAP;
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    for (r, row) in grid.rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let x0 = GAP + c as u32 * (cw + GAP);
            let y0 = GAP + r as u32 * (ch + GAP);
            draw_cell(&mut img, grid.shape, cell.as_ref(), x0, y0, scale);
        }
    }
    img
}

/// Ground truth (left) beside the prediction (right), one frame per step.
pub fn write_gif(grid: &GridRows, scale: u32, path: &Path) -> Result<()> {
    let scale = scale.max(1);
    let (cw, ch) = (grid.shape.width as u32 * scale, grid.shape.height as u32 * scale);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = GifEncoder::new(BufWriter::new(file));
    let gif_err = |e: image::ImageError| Error::format("gif", e.to_string());
    enc.set_repeat(Repeat::Infinite).map_err(gif_err)?;
    for t in 0..grid.columns() {
        let mut rgb = RgbImage::from_pixel(2 * cw + 3 * GAP, ch + 2 * GAP, Rgb([255, 255, 255]));
        draw_cell(&mut rgb, grid.shape, grid.rows[1][t].as_ref(), GAP, GAP, scale);
        // Conditioning frames are shown as-is on the prediction side.
        let right = if t < grid.input_len { &grid.rows[0][t] } else { &grid.rows[2][t] };
        draw_cell(&mut rgb, grid.shape, right.as_ref(), 2 * GAP + cw, GAP, scale);
        let rgba = RgbaImage::from_fn(rgb.width(), rgb.height(), |x, y| {
            let p = rgb.get_pixel(x, y).0;
            Rgba([p[0], p[1], p[2], 255])
        });
        let frame = Frame::from_parts(rgba, 0, 0, Delay::from_numer_denom_ms(GIF_DELAY_MS, 1));
        enc.encode_frame(frame).map_err(gif_err)?;
    }
    Ok(())
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format("png", other.to_string()),
    })
}

/// Write `seq_XXX_grid.png` and `seq_XXX.gif` for every sequence in `videos`.
pub fn export_visuals(
    net: &TaylorNet,
    params: &ParamStore<f32>,
    videos: &VideoBatch,
    n_future: usize,
    scale: u32,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for i in 0..videos.len() {
        let video = videos.frames.narrow0(i, 1)?;
        let grid = collect_rows(net, params, &video, n_future)?;
        let png = dir.join(format!("seq_{:03}_grid.png", i));
        save_png(&render_grid(&grid, scale), &png)?;
        let gif = dir.join(format!("seq_{:03}.gif", i));
        write_gif(&grid, scale, &gif)?;
        written.push(png);
        written.push(gif);
    }
    Ok(written)
}
