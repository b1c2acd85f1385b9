//! Synthetic two-channel, two-class tumor slices.
//!
//! Each patient gets an elliptical lesion on a noisy tissue patch. Codeleted
//! patients carry a banded interior texture and a lobulated boundary, both
//! scaled by `signal`; nondeleted lesions are smooth. The cue is textural, so
//! the mean intensity carries almost no class information.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{write_tensor_file, Label, Manifest, SliceRecord};
use crate::error::{Error, Result};
use crate::preprocess::MASK_DILATION;
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

/// Relative amplitude of the boundary lobes at full signal.
const LOBE_DEPTH: f64 = 0.2;
const LOBES: f64 = 5.0;
/// Per-slice jitter of the patient's semi-axes.
const AXIS_JITTER: f64 = 0.05;

/// Interior texture of codeleted lesions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Texture {
    /// Concentric bands following the lesion outline.
    #[default]
    Rings,
    /// Parallel bands with a random orientation per patient.
    Stripes,
}

impl std::fmt::Display for Texture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            Texture::Rings => "rings",
            Texture::Stripes => "stripes",
        })
    }
}

impl std::str::FromStr for Texture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rings" => Ok(Texture::Rings),
            "stripes" => Ok(Texture::Stripes),
            other => Err(Error::Config(format!(
                "unknown texture `{other}` (rings|stripes)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub patients_per_class: usize,
    pub slices_per_patient: usize,
    /// Side of the square source slices.
    pub size: usize,
    /// Range of the lesion semi-axes in pixels.
    pub radius: (f64, f64),
    /// Class-cue strength in [0, 1].
    pub signal: f64,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
    pub texture: Texture,
    /// Band period of the codeleted texture, pixels.
    pub stripe_period: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            patients_per_class: 30,
            slices_per_patient: 3,
            size: 64,
            radius: (7.0, 12.0),
            signal: 1.0,
            noise: 0.15,
            texture: Texture::Rings,
            stripe_period: 4.0,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    /// Largest extent of a dilated lesion mask.
    fn max_extent(&self) -> usize {
        let r = self.radius.1 * (1.0 + LOBE_DEPTH * self.signal) * (1.0 + AXIS_JITTER);
        2 * (r.ceil() as usize + 1 + MASK_DILATION) + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.patients_per_class == 0 || self.slices_per_patient == 0 {
            return Err(Error::Config(
                "phantom needs at least one patient and slice".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.signal)
            || !(self.noise >= 0.0)
            || !(self.stripe_period > 0.0)
        {
            return Err(Error::Config(
                "phantom signal must lie in [0, 1], noise and period positive".into(),
            ));
        }
        if !(self.radius.0 > 0.0 && self.radius.0 <= self.radius.1) {
            return Err(Error::Config(format!("bad radius range {:?}", self.radius)));
        }
        // two pixels of center jitter on either side
        if self.max_extent() + 4 > self.size {
            return Err(Error::Config(format!(
                "lesion radius {} needs a {}px slice, got {}",
                self.radius.1,
                self.max_extent() + 4,
                self.size
            )));
        }
        Ok(())
    }
}

/// Patient-level geometry shared by its slices.
struct Patient {
    label: Label,
    axes: (f64, f64),
    tilt: f64,
    center: (f64, f64),
    lobe_phase: f64,
    stripe_angle: f64,
    stripe_phase: f64,
}

/// Images of one slice: `(t1c, t2, mask)`.
type SliceImages = (Tensor, Tensor, Tensor);

fn draw_patient(cfg: &PhantomConfig, index: usize) -> Patient {
    let mut rng = stream(cfg.seed, Stream::Phantom, &[index as u64]);
    let (lo, hi) = cfg.radius;
    let mut axis = || if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let axes = (axis(), axis());
    let c = (cfg.size as f64 - 1.0) / 2.0;
    Patient {
        label: Label::from_index(index % 2).expect("two classes"),
        axes,
        tilt: rng.gen_range(0.0..PI),
        center: (c + rng.gen_range(-1.0..=1.0), c + rng.gen_range(-1.0..=1.0)),
        lobe_phase: rng.gen_range(0.0..2.0 * PI),
        stripe_angle: rng.gen_range(0.0..PI),
        stripe_phase: rng.gen_range(0.0..2.0 * PI),
    }
}

fn render_slice(
    cfg: &PhantomConfig,
    p: &Patient,
    patient: usize,
    slice: usize,
) -> Result<SliceImages> {
    let mut rng = stream(
        cfg.seed,
        Stream::Phantom,
        &[patient as u64, slice as u64 + 1],
    );
    let n = cfg.size;
    let mut jitter = || 1.0 + rng.gen_range(-AXIS_JITTER..=AXIS_JITTER);
    let (a, b) = (p.axes.0 * jitter(), p.axes.1 * jitter());
    let coded = p.label == Label::Codeleted;
    let s = if coded { cfg.signal } else { 0.0 };
    let (ct, st) = (p.tilt.cos(), p.tilt.sin());
    let (cs, ss) = (p.stripe_angle.cos(), p.stripe_angle.sin());

    let mut mask = vec![0.0f32; n * n];
    for r in 0..n {
        for c in 0..n {
            let (y, x) = (r as f64 - p.center.0, c as f64 - p.center.1);
            let (u, v) = (ct * x + st * y, -st * x + ct * y);
            let rho = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
            let theta = v.atan2(u);
            let bound = 1.0 + LOBE_DEPTH * s * (LOBES * theta + p.lobe_phase).sin();
            if rho <= bound {
                mask[r * n + c] = 1.0;
            }
        }
    }
    let mask = Tensor::new(vec![n, n], mask)?;
    let support = crate::preprocess::dilate_mask(&mask, MASK_DILATION)?;

    let mut t1c = vec![0.0f32; n * n];
    let mut t2 = vec![0.0f32; n * n];
    for i in 0..n * n {
        if support.data()[i] == 0.0 {
            continue;
        }
        let (y, x) = ((i / n) as f64 - p.center.0, (i % n) as f64 - p.center.1);
        let stripe = match cfg.texture {
            Texture::Rings => {
                let (u, v) = (ct * x + st * y, -st * x + ct * y);
                let rho = ((u / a).powi(2) + (v / b).powi(2)).sqrt() * (a + b) / 2.0;
                (2.0 * PI * rho / cfg.stripe_period).sin()
            }
            Texture::Stripes => {
                (2.0 * PI * (cs * x + ss * y) / cfg.stripe_period + p.stripe_phase).sin()
            }
        };
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        let (base1, base2) = if mask.data()[i] == 1.0 {
            (1.0, 0.8)
        } else {
            (0.3, 0.4)
        };
        let tex = if mask.data()[i] == 1.0 {
            s * stripe
        } else {
            0.0
        };
        t1c[i] = (base1 + 0.5 * tex + cfg.noise * e1) as f32;
        t2[i] = (base2 + 0.4 * tex + cfg.noise * e2) as f32;
    }
    Ok((
        Tensor::new(vec![n, n], t1c)?,
        Tensor::new(vec![n, n], t2)?,
        mask,
    ))
}

/// Render slice `slice` of patient `patient` without touching the disk.
pub fn render(cfg: &PhantomConfig, patient: usize, slice: usize) -> Result<(Label, SliceImages)> {
    cfg.validate()?;
    let p = draw_patient(cfg, patient);
    Ok((p.label, render_slice(cfg, &p, patient, slice)?))
}

/// Write the dataset under `out` (tensor files in `out/tensors`, manifest
/// at `out/manifest.csv`). Patients alternate between the two classes.
pub fn generate_phantom(cfg: &PhantomConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let tensors = out.join("tensors");
    fs::create_dir_all(&tensors).map_err(|e| Error::io(&tensors, e))?;
    let patients = 2 * cfg.patients_per_class;
    let records: Vec<Vec<SliceRecord>> = (0..patients)
        .into_par_iter()
        .map(|i| {
            let p = draw_patient(cfg, i);
            let pid = format!("P{i:03}");
            (0..cfg.slices_per_patient)
                .map(|s| {
                    let (t1c, t2, mask) = render_slice(cfg, &p, i, s)?;
                    let rel =
                        |kind: &str| PathBuf::from("tensors").join(format!("{pid}_{s}_{kind}.tsr"));
                    for (kind, t) in [("t1c", &t1c), ("t2", &t2), ("mask", &mask)] {
                        write_tensor_file(t, out.join(rel(kind)))?;
                    }
                    Ok(SliceRecord {
                        patient_id: pid.clone(),
                        slice_index: s as u32,
                        label: p.label,
                        t1c: rel("t1c"),
                        t2: rel("t2"),
                        mask: rel("mask"),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest::new(out, records.into_iter().flatten().collect());
    manifest.write(out.join("manifest.csv"))?;
    Ok(manifest)
}
