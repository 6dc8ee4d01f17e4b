//! Bouncing-sprite sequences: constant velocity, elastic reflection at the
//! canvas walls, per-pixel maximum where sprites overlap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sprites::SpriteSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct BounceSpec {
    pub height: usize,
    pub width: usize,
    pub seq_len: usize,
    pub num_objects: usize,
    /// Velocity components are uniform in `[-max_speed, max_speed]`.
    pub max_speed: f64,
}

/// One sprite's motion. `pos` is the sprite's top-left corner as `(row, col)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectTrack {
    pub sprite: usize,
    pub pos: (f64, f64),
    pub vel: (f64, f64),
}

/// Advance one axis by `v` and reflect off `[0, max]`.
pub fn reflect(p: f64, v: f64, max: f64) -> (f64, f64) {
    if max <= 0.0 {
        return (0.0, v);
    }
    let (mut p, mut v) = (p + v, v);
    loop {
        if p > max {
            p = 2.0 * max - p;
            v = -v;
        } else if p < 0.0 {
            p = -p;
            v = -v;
        } else {
            return (p, v);
        }
    }
}

impl ObjectTrack {
    pub fn advance(&mut self, max: (f64, f64)) {
        let (r, vr) = reflect(self.pos.0, self.vel.0, max.0);
        let (c, vc) = reflect(self.pos.1, self.vel.1, max.1);
        self.pos = (r, c);
        self.vel = (vr, vc);
    }
}

impl BounceSpec {
    fn check(&self, sprite: usize) -> Result<(f64, f64)> {
        if sprite > self.height || sprite > self.width {
            return Err(Error::invalid(format!(
                "{}px sprite does not fit a {}x{} canvas",
                sprite, self.height, self.width
            )));
        }
        if !(self.max_speed.is_finite() && self.max_speed >= 0.0) {
            return Err(Error::invalid("max_speed must be finite and non-negative"));
        }
        Ok(((self.height - sprite) as f64, (self.width - sprite) as f64))
    }

    pub fn sample_objects<R: Rng + ?Sized>(&self, sprites: &SpriteSet, rng: &mut R) -> Result<Vec<ObjectTrack>> {
        let max = self.check(sprites.size())?;
        let s = self.max_speed;
        Ok((0..self.num_objects)
            .map(|_| ObjectTrack {
                sprite: rng.random_range(0..sprites.len()),
                pos: (rng.random_range(0.0..=max.0), rng.random_range(0.0..=max.1)),
                vel: (rng.random_range(-s..=s), rng.random_range(-s..=s)),
            })
            .collect())
    }

    /// Render `objects` over `seq_len` frames: `[T, 1, H, W]`.
    pub fn render(&self, sprites: &SpriteSet, objects: &[ObjectTrack]) -> Result<Tensor<f32>> {
        let max = self.check(sprites.size())?;
        let (h, w, n) = (self.height, self.width, sprites.size());
        let mut data = vec![0.0f32; self.seq_len * h * w];
        let mut tracks = objects.to_vec();
        for t in 0..self.seq_len {
            let frame = &mut data[t * h * w..(t + 1) * h * w];
            for obj in &tracks {
                let sprite = sprites.get(obj.sprite);
                let (r0, c0) = (obj.pos.0 as usize, obj.pos.1 as usize);
                for r in 0..n {
                    let row = &mut frame[(r0 + r) * w + c0..(r0 + r) * w + c0 + n];
                    for (dst, &src) in row.iter_mut().zip(&sprite[r * n..(r + 1) * n]) {
                        *dst = dst.max(src);
                    }
                }
            }
            for obj in &mut tracks {
                obj.advance(max);
            }
        }
        Tensor::new([self.seq_len, 1, h, w], data)
    }

    /// One sequence, a pure function of `seed`.
    pub fn generate(&self, sprites: &SpriteSet, seed: u64) -> Result<Tensor<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let objects = self.sample_objects(sprites, &mut rng)?;
        self.render(sprites, &objects)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sprites::builtin_glyphs;

    #[test]
    fn scalar_reflection() {
        let (p, v) = reflect(5.0, 3.0, 8.0);
        assert_eq!((p, v), (8.0, 3.0));
        let (p, v) = reflect(p, v, 8.0);
        assert_eq!((p, v), (5.0, -3.0));
        assert_eq!(reflect(1.0, -3.0, 8.0), (2.0, 3.0));
        assert_eq!(reflect(0.0, 2.0, 0.0), (0.0, 2.0));
    }

    #[test]
    fn static_sequence() {
        let spec = BounceSpec {
            height: 32,
            width: 32,
            seq_len: 5,
            num_objects: 2,
            max_speed: 0.0,
        };
        let v = spec.generate(&builtin_glyphs().downsample(2).unwrap(), 3).unwrap();
        let frames = v.reshape([5, 32 * 32]).unwrap();
        let f0 = frames.narrow0(0, 1).unwrap();
        assert!(f0.sum() > 0.0);
        for t in 1..5 {
            assert_eq!(frames.narrow0(t, 1).unwrap(), f0);
        }
    }

    #[test]
    fn sprite_too_large() {
        let spec = BounceSpec {
            height: 20,
            width: 40,
            seq_len: 2,
            num_objects: 1,
            max_speed: 1.0,
        };
        assert!(spec.generate(&builtin_glyphs(), 0).is_err());
    }
}
