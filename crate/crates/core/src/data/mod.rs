//! Synthetic video: bouncing digit sprites, an analytic translating bump,
//! and file formats for storing or importing sequences.

pub mod bouncing;
pub mod bump;
pub mod npy;
pub mod seqfile;
pub mod sprites;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use bouncing::{reflect, BounceSpec, ObjectTrack};
pub use bump::generate_translating_bump;
pub use sprites::{builtin_glyphs, load_digit_sprites, SpriteSet, SpriteSource};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A `[B, T, C, H, W]` batch in `[0, 1]` with the seed of every sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoBatch {
    pub frames: Tensor<f32>,
    pub seeds: Vec<u64>,
}

impl VideoBatch {
    pub fn new(frames: Tensor<f32>, seeds: Vec<u64>) -> Result<Self> {
        let s = frames.shape();
        if s.len() != 5 {
            return Err(Error::shape(format!("video batch must be [B, T, C, H, W], got {:?}", s)));
        }
        if seeds.len() != s[0] {
            return Err(Error::invalid(format!("{} seeds for {} sequences", seeds.len(), s[0])));
        }
        if frames.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("video values must lie in [0, 1]"));
        }
        Ok(Self { frames, seeds })
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    /// Frames `start..start+len` of every sequence.
    pub fn time_slice(&self, start: usize, len: usize) -> Result<Tensor<f32>> {
        let s = self.frames.shape();
        if start + len > s[1] {
            return Err(Error::shape(format!("frames {}..{} of {}", start, start + len, s[1])));
        }
        let inner: usize = s[2..].iter().product();
        let mut data = Vec::with_capacity(s[0] * len * inner);
        for b in 0..s[0] {
            let base = (b * s[1] + start) * inner;
            data.extend_from_slice(&self.frames.data()[base..base + len * inner]);
        }
        Tensor::new(vec![s[0], len, s[2], s[3], s[4]], data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn salt(self) -> u64 {
        match self {
            Split::Train => 0x7261_696e,
            Split::Test => 0x7465_7374,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of sequence `index` of a split; train and test never share seeds in practice.
pub fn sequence_seed(base: u64, split: Split, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ split.salt()).wrapping_add(index))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub canvas: usize,
    /// Glyphs are box-downsampled by this factor (28px → 28/factor px).
    pub sprite_downsample: usize,
    pub num_objects: usize,
    pub max_speed: f64,
    /// IDX image file; `None` uses the built-in glyphs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sprite_file: Option<PathBuf>,
    /// Fall back to built-in glyphs when `sprite_file` is missing.
    #[serde(default = "yes")]
    pub sprite_fallback: bool,
}

fn yes() -> bool {
    true
}

impl DataConfig {
    /// 32×32 canvas, 14px glyphs, speeds up to 2 px/frame.
    pub fn tiny() -> Self {
        Self {
            canvas: 32,
            sprite_downsample: 2,
            num_objects: 2,
            max_speed: 2.0,
            sprite_file: None,
            sprite_fallback: true,
        }
    }

    /// 64×64 canvas, 28px glyphs, speeds up to 4 px/frame.
    pub fn full() -> Self {
        Self {
            canvas: 64,
            sprite_downsample: 1,
            max_speed: 4.0,
            ..Self::tiny()
        }
    }

    pub fn source(&self) -> SpriteSource {
        match &self.sprite_file {
            None => SpriteSource::Builtin,
            Some(p) => SpriteSource::Idx {
                path: p.clone(),
                fallback: self.sprite_fallback,
            },
        }
    }
}

/// Deterministic stream of bouncing-digit sequences.
#[derive(Clone, Debug)]
pub struct BouncingDataset {
    spec: BounceSpec,
    sprites: SpriteSet,
    base_seed: u64,
    split: Split,
}

impl BouncingDataset {
    pub fn new(config: &DataConfig, seq_len: usize, base_seed: u64, split: Split) -> Result<Self> {
        let sprites = load_digit_sprites(&config.source())?;
        let sprites = if config.sprite_downsample > 1 {
            sprites.downsample(config.sprite_downsample)?
        } else {
            sprites
        };
        let spec = BounceSpec {
            height: config.canvas,
            width: config.canvas,
            seq_len,
            num_objects: config.num_objects,
            max_speed: config.max_speed,
        };
        spec.generate(&sprites, 0)?;
        Ok(Self {
            spec,
            sprites,
            base_seed,
            split,
        })
    }

    pub fn spec(&self) -> &BounceSpec {
        &self.spec
    }

    pub fn sprites(&self) -> &SpriteSet {
        &self.sprites
    }

    pub fn sequence(&self, index: u64) -> Result<(Tensor<f32>, u64)> {
        let seed = sequence_seed(self.base_seed, self.split, index);
        Ok((self.spec.generate(&self.sprites, seed)?, seed))
    }

    /// Sequences `start..start+count`.
    pub fn batch(&self, start: u64, count: usize) -> Result<VideoBatch> {
        let mut seqs = Vec::with_capacity(count);
        let mut seeds = Vec::with_capacity(count);
        for i in 0..count as u64 {
            let (t, s) = self.sequence(start + i)?;
            seqs.push(t);
            seeds.push(s);
        }
        let t = self.spec.seq_len;
        let (h, w) = (self.spec.height, self.spec.width);
        let data: Vec<f32> = seqs.into_iter().flat_map(Tensor::into_data).collect();
        VideoBatch::new(Tensor::new([count, t, 1, h, w], data)?, seeds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_are_deterministic_and_split_dependent() {
        let cfg = DataConfig::tiny();
        let a = BouncingDataset::new(&cfg, 6, 11, Split::Train).unwrap();
        let b = BouncingDataset::new(&cfg, 6, 11, Split::Train).unwrap();
        let c = BouncingDataset::new(&cfg, 6, 11, Split::Test).unwrap();
        let ba = a.batch(3, 4).unwrap();
        assert_eq!(ba, b.batch(3, 4).unwrap());
        assert_eq!(ba.frames.shape(), &[4, 6, 1, 32, 32]);
        assert_ne!(ba.seeds, c.batch(3, 4).unwrap().seeds);
        assert_eq!(a.batch(4, 1).unwrap().seeds[0], ba.seeds[1]);
    }

    #[test]
    fn time_slice_picks_frames() {
        let ds = BouncingDataset::new(&DataConfig::tiny(), 5, 1, Split::Train).unwrap();
        let b = ds.batch(0, 2).unwrap();
        let s = b.time_slice(3, 2).unwrap();
        assert_eq!(s.shape(), &[2, 2, 1, 32, 32]);
        assert_eq!(s.select1(0).unwrap(), b.frames.select1(3).unwrap());
        assert!(b.time_slice(4, 2).is_err());
    }

    #[test]
    fn full_preset_uses_whole_glyphs() {
        let ds = BouncingDataset::new(&DataConfig::full(), 3, 0, Split::Test).unwrap();
        assert_eq!(ds.sprites().size(), 28);
        assert_eq!(ds.spec().height, 64);
    }
}
