//! Digit sprites: a procedural glyph set and an IDX (MNIST) loader.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const GLYPH_SIZE: usize = 28;

/// Square grayscale sprites in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SpriteSet {
    size: usize,
    sprites: Vec<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SpriteSource {
    Builtin,
    /// Uncompressed `idx3-ubyte` image file; `fallback` substitutes the
    /// built-in glyphs when the file is missing.
    Idx { path: PathBuf, fallback: bool },
}

impl SpriteSet {
    pub fn new(size: usize, sprites: Vec<Vec<f32>>) -> Result<Self> {
        if size == 0 || sprites.is_empty() {
            return Err(Error::invalid("sprite set must be non-empty"));
        }
        for (i, s) in sprites.iter().enumerate() {
            if s.len() != size * size {
                return Err(Error::shape(format!(
                    "sprite {} has {} pixels, expected {}",
                    i,
                    s.len(),
                    size * size
                )));
            }
            if s.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("sprite {} has values outside [0, 1]", i)));
            }
        }
        Ok(Self { size, sprites })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        self.sprites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sprites.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f32] {
        &self.sprites[i]
    }

    /// Box-filter downsampling by an integer factor.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.size % factor != 0 {
            return Err(Error::invalid(format!(
                "cannot downsample {}px sprites by {}",
                self.size, factor
            )));
        }
        let n = self.size / factor;
        let norm = (factor * factor) as f32;
        let sprites = self
            .sprites
            .iter()
            .map(|s| {
                let mut out = vec![0.0f32; n * n];
                for (r, row) in s.chunks(self.size).enumerate() {
                    for (c, &v) in row.iter().enumerate() {
                        out[(r / factor) * n + c / factor] += v / norm;
                    }
                }
                out.iter().map(|v| v.clamp(0.0, 1.0)).collect()
            })
            .collect();
        Self::new(n, sprites)
    }
}

type Pt = (f32, f32);

const TL: Pt = (0.27, 0.18);
const TR: Pt = (0.73, 0.18);
const ML: Pt = (0.27, 0.5);
const MR: Pt = (0.73, 0.5);
const BL: Pt = (0.27, 0.82);
const BR: Pt = (0.73, 0.82);

fn strokes(digit: usize) -> Vec<(Pt, Pt)> {
    match digit {
        0 => vec![(TL, TR), (TR, BR), (BR, BL), (BL, TL), (BL, TR)],
        1 => vec![((0.52, 0.18), (0.52, 0.82)), ((0.36, 0.32), (0.52, 0.18)), ((0.38, 0.82), (0.66, 0.82))],
        2 => vec![(TL, TR), (TR, MR), (MR, BL), (BL, BR)],
        3 => vec![(TL, TR), (TR, BR), (BR, BL), ((0.4, 0.5), MR)],
        4 => vec![(TL, ML), (ML, MR), ((0.64, 0.18), (0.64, 0.82))],
        5 => vec![(TR, TL), (TL, ML), (ML, MR), (MR, BR), (BR, BL)],
        6 => vec![(TR, TL), (TL, BL), (BL, BR), (BR, MR), (MR, ML)],
        7 => vec![(TL, TR), (TR, (0.42, 0.82))],
        8 => vec![(TL, TR), (TR, BR), (BR, BL), (BL, TL), (ML, MR)],
        9 => vec![(MR, ML), (ML, TL), (TL, TR), (TR, BR), (BR, BL)],
        _ => unreachable!("ten glyphs"),
    }
}

fn segment_distance(p: Pt, a: Pt, b: Pt) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Ten anti-aliased stroke digits, 28×28.
pub fn builtin_glyphs() -> SpriteSet {
    let n = GLYPH_SIZE;
    let half_width = 1.6f32;
    let sprites = (0..10)
        .map(|d| {
            let segs = strokes(d);
            (0..n * n)
                .map(|i| {
                    let p = (((i % n) as f32 + 0.5) / n as f32, ((i / n) as f32 + 0.5) / n as f32);
                    let dist = segs
                        .iter()
                        .map(|&(a, b)| segment_distance(p, a, b))
                        .fold(f32::INFINITY, f32::min)
                        * n as f32;
                    (half_width + 0.5 - dist).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();
    SpriteSet::new(n, sprites).expect("glyphs are valid")
}

/// Parse an `idx3-ubyte` image file.
pub fn read_idx_images(path: &Path) -> Result<SpriteSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes)
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<SpriteSet> {
    let word = |i: usize| -> Result<usize> {
        bytes
            .get(i * 4..i * 4 + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
            .ok_or_else(|| Error::format("idx file", "truncated header"))
    };
    if word(0)? != 0x0803 {
        return Err(Error::format("idx file", "expected magic 0x00000803 (u8, 3 dims)"));
    }
    let (count, rows, cols) = (word(1)?, word(2)?, word(3)?);
    if rows != cols || rows == 0 {
        return Err(Error::format("idx file", format!("images are {}x{}, need square", rows, cols)));
    }
    let px = rows * cols;
    let body = &bytes[16..];
    if body.len() != count * px {
        return Err(Error::format(
            "idx file",
            format!("{} bytes of pixels for {} images of {}", body.len(), count, px),
        ));
    }
    let sprites = body
        .chunks(px)
        .map(|c| c.iter().map(|&b| b as f32 / 255.0).collect())
        .collect();
    SpriteSet::new(rows, sprites)
}

pub fn load_digit_sprites(source: &SpriteSource) -> Result<SpriteSet> {
    match source {
        SpriteSource::Builtin => Ok(builtin_glyphs()),
        SpriteSource::Idx { path, fallback } => {
            if !path.exists() && *fallback {
                return Ok(builtin_glyphs());
            }
            let set = read_idx_images(path)?;
            if set.len() < 10 {
                return Err(Error::format(
                    "idx file",
                    format!("{} images, need at least 10", set.len()),
                ));
            }
            Ok(set)
        }
    }
}
