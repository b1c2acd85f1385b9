use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::SliceSample;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Maximum translation in pixels along each axis.
    pub max_shift: usize,
    /// Maximum rotation in degrees, either direction.
    pub max_rotation: f64,
    /// Probability of each of the horizontal and vertical flips.
    pub flip_probability: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            max_shift: 20,
            max_rotation: 20.0,
            flip_probability: 0.5,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self, canvas: usize) -> Result<()> {
        if 2 * self.max_shift >= canvas {
            return Err(Error::Config(format!(
                "max_shift {} must be below half the canvas ({canvas})",
                self.max_shift
            )));
        }
        if !(0.0..=180.0).contains(&self.max_rotation) {
            return Err(Error::Config(format!(
                "max_rotation {} outside [0, 180]",
                self.max_rotation
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::Config(format!(
                "flip probability {} outside [0, 1]",
                self.flip_probability
            )));
        }
        Ok(())
    }

    /// Draw one geometric transform.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> AugmentDraw {
        let s = self.max_shift as i32;
        let dx = rng.gen_range(-s..=s);
        let dy = rng.gen_range(-s..=s);
        let angle = if self.max_rotation > 0.0 {
            rng.gen_range(-self.max_rotation..=self.max_rotation)
        } else {
            0.0
        };
        let flip_h = rng.gen_bool(self.flip_probability);
        let flip_v = rng.gen_bool(self.flip_probability);
        AugmentDraw {
            dx,
            dy,
            angle,
            flip_h,
            flip_v,
        }
    }
}

/// One concrete transform: rotate by `angle` degrees about the canvas
/// center, shift by `(dx, dy)` pixels (columns, rows), then mirror.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub dx: i32,
    pub dy: i32,
    pub angle: f64,
    pub flip_h: bool,
    pub flip_v: bool,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        dx: 0,
        dy: 0,
        angle: 0.0,
        flip_h: false,
        flip_v: false,
    };
}

fn rotate(plane: &[f32], h: usize, w: usize, degrees: f64) -> Vec<f32> {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            plane[r as usize * w + c as usize] as f64
        }
    };
    let mut out = vec![0.0f32; h * w];
    for r in 0..h {
        let y = r as f64 - cy;
        for c in 0..w {
            let x = c as f64 - cx;
            // inverse mapping: where does this output pixel come from
            let sx = cos * x + sin * y + cx;
            let sy = -sin * x + cos * y + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let top = (1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1);
            let bottom = (1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1);
            out[r * w + c] = ((1.0 - fy) * top + fy * bottom) as f32;
        }
    }
    out
}

fn transform_plane(plane: &[f32], h: usize, w: usize, d: &AugmentDraw) -> Vec<f32> {
    let rotated;
    let src = if d.angle != 0.0 {
        rotated = rotate(plane, h, w, d.angle);
        &rotated[..]
    } else {
        plane
    };
    let mut out = vec![0.0f32; h * w];
    for r in 0..h {
        let sr = r as i64 - d.dy as i64;
        if sr < 0 || sr >= h as i64 {
            continue;
        }
        let tr = if d.flip_v { h - 1 - r } else { r };
        for c in 0..w {
            let sc = c as i64 - d.dx as i64;
            if sc < 0 || sc >= w as i64 {
                continue;
            }
            let tc = if d.flip_h { w - 1 - c } else { c };
            out[tr * w + tc] = src[sr as usize * w + sc as usize];
        }
    }
    out
}

/// Apply `draw` to every channel of a `[C, H, W]` (or `[H, W]`) image.
pub fn apply_draw(image: &Tensor, draw: &AugmentDraw) -> Tensor {
    let shape = image.shape();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let data: Vec<f32> = image
        .data()
        .chunks_exact(h * w)
        .flat_map(|p| transform_plane(p, h, w, draw))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape unchanged")
}

/// A randomly transformed copy of `sample`, tagged with `copy`.
pub fn augment_sample<R: Rng>(
    sample: &SliceSample,
    params: &AugmentParams,
    rng: &mut R,
    copy: u32,
) -> SliceSample {
    let draw = params.draw(rng);
    let mut out = sample.clone();
    out.image = apply_draw(&sample.image, &draw);
    out.provenance.copy = Some(copy);
    out
}

/// The epoch's training set: the samples themselves for `k = 0`, otherwise
/// `k` augmented copies of each; shuffled either way.
pub fn build_epoch_training_set(
    samples: &[SliceSample],
    k: usize,
    epoch: usize,
    master_seed: u64,
    params: &AugmentParams,
) -> Vec<SliceSample> {
    let mut set: Vec<SliceSample> = if k == 0 {
        samples.to_vec()
    } else {
        samples
            .par_iter()
            .enumerate()
            .flat_map_iter(|(i, s)| {
                (0..k).map(move |c| {
                    let mut rng = stream(
                        master_seed,
                        Stream::Augment,
                        &[epoch as u64, i as u64, c as u64],
                    );
                    augment_sample(s, params, &mut rng, c as u32)
                })
            })
            .collect()
    };
    set.shuffle(&mut stream(master_seed, Stream::Shuffle, &[epoch as u64]));
    set
}
