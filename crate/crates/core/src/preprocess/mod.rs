//! Per-slice preprocessing: z-scoring, mask dilation and embedding of the
//! masked tumor crop on a fixed zero canvas, plus training-time augmentation.

mod augment;

use std::fmt;
use std::str::FromStr;

use crate::data::{read_tensor_file, Label, Labeled, SliceRecord};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{
    apply_draw, augment_sample, build_epoch_training_set, AugmentDraw, AugmentParams,
};

/// Dilation radius applied to segmentation masks before embedding.
pub const MASK_DILATION: usize = 5;

/// Image channels fed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChannelSelection {
    T1c,
    T2,
    #[default]
    Both,
}

impl ChannelSelection {
    pub fn count(self) -> usize {
        match self {
            ChannelSelection::Both => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for ChannelSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            ChannelSelection::T1c => "t1c",
            ChannelSelection::T2 => "t2",
            ChannelSelection::Both => "both",
        })
    }
}

impl FromStr for ChannelSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t1c" => Ok(ChannelSelection::T1c),
            "t2" => Ok(ChannelSelection::T2),
            "both" => Ok(ChannelSelection::Both),
            other => Err(Error::Config(format!(
                "unknown channels `{other}` (t1c|t2|both)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub patient_id: String,
    pub slice_index: u32,
    /// Augmentation copy index; `None` for the canonical sample.
    pub copy: Option<u32>,
}

/// A canvas-embedded `[C, canvas, canvas]` image ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample {
    pub image: Tensor,
    pub label: Label,
    pub provenance: Provenance,
}

impl Labeled for SliceSample {
    fn label(&self) -> Label {
        self.label
    }
}

/// Standard score over the whole image with the population deviation.
pub fn zscore(image: &Tensor) -> Result<Tensor> {
    let n = image.len() as f64;
    let mean = image.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = image
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let sigma = var.sqrt();
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Degenerate(format!(
            "cannot z-score an image with standard deviation {sigma}"
        )));
    }
    Ok(image.map(|v| ((v as f64 - mean) / sigma) as f32))
}

fn plane_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        &[h, w] => Ok((h, w)),
        s => Err(Error::dim(
            op,
            format!("expected a 2D image, got shape {s:?}"),
        )),
    }
}

/// `radius` passes of 3×3 (8-connected) binary dilation, clipped at the
/// borders. The result is the Chebyshev ball of `radius` around the mask.
pub fn dilate_mask(mask: &Tensor, radius: usize) -> Result<Tensor> {
    let (h, w) = plane_dims("dilate_mask", mask)?;
    if let Some(v) = mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Degenerate(format!("mask is not binary (found {v})")));
    }
    let mut cur: Vec<bool> = mask.data().iter().map(|&v| v == 1.0).collect();
    for _ in 0..radius {
        let mut next = cur.clone();
        for r in 0..h {
            for c in 0..w {
                if cur[r * w + c] {
                    continue;
                }
                let hit = (r.saturating_sub(1)..=(r + 1).min(h - 1)).any(|rr| {
                    (c.saturating_sub(1)..=(c + 1).min(w - 1)).any(|cc| cur[rr * w + cc])
                });
                next[r * w + c] = hit;
            }
        }
        cur = next;
    }
    Tensor::new(
        vec![h, w],
        cur.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect(),
    )
}

/// Inclusive bounding box `(row0, row1, col0, col1)` of the nonzero mask pixels.
pub fn bounding_box(mask: &Tensor) -> Option<(usize, usize, usize, usize)> {
    let w = *mask.shape().last()?;
    let mut bbox: Option<(usize, usize, usize, usize)> = None;
    for (i, _) in mask.data().iter().enumerate().filter(|(_, &v)| v != 0.0) {
        let (r, c) = (i / w, i % w);
        bbox = Some(match bbox {
            None => (r, r, c, c),
            Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
        });
    }
    bbox
}

/// Zero each channel outside `mask`, crop to the mask's bounding box and
/// center the crop on a zero `canvas × canvas` background. Every channel
/// gets the same placement.
pub fn mask_and_embed(channels: &[Tensor], mask: &Tensor, canvas: usize) -> Result<Tensor> {
    const OP: &str = "mask_and_embed";
    let (_, w) = plane_dims(OP, mask)?;
    if channels.is_empty() {
        return Err(Error::dim(OP, "no channels"));
    }
    for (i, ch) in channels.iter().enumerate() {
        if ch.shape() != mask.shape() {
            return Err(Error::dim(
                OP,
                format!(
                    "channel {i} shape {:?} differs from mask {:?}",
                    ch.shape(),
                    mask.shape()
                ),
            ));
        }
    }
    let (r0, r1, c0, c1) =
        bounding_box(mask).ok_or_else(|| Error::Degenerate("mask is empty".into()))?;
    let (eh, ew) = (r1 - r0 + 1, c1 - c0 + 1);
    if eh > canvas || ew > canvas {
        return Err(Error::dim(
            OP,
            format!("tumor extent {eh}x{ew} exceeds canvas {canvas}x{canvas}"),
        ));
    }
    let (oy, ox) = ((canvas - eh) / 2, (canvas - ew) / 2);
    let mut out = vec![0.0f32; channels.len() * canvas * canvas];
    let m = mask.data();
    for (ci, ch) in channels.iter().enumerate() {
        let plane = &mut out[ci * canvas * canvas..(ci + 1) * canvas * canvas];
        for r in r0..=r1 {
            for c in c0..=c1 {
                if m[r * w + c] != 0.0 {
                    plane[(oy + r - r0) * canvas + ox + c - c0] = ch.data()[r * w + c];
                }
            }
        }
    }
    Tensor::new(vec![channels.len(), canvas, canvas], out)
}

/// Load a record's tensors and turn them into a canonical sample.
/// `record` paths must already be resolved.
pub fn prepare_sample(
    record: &SliceRecord,
    channels: ChannelSelection,
    canvas: usize,
) -> Result<SliceSample> {
    let mut planes = Vec::with_capacity(2);
    if channels != ChannelSelection::T2 {
        planes.push(zscore(&read_tensor_file(&record.t1c)?)?);
    }
    if channels != ChannelSelection::T1c {
        planes.push(zscore(&read_tensor_file(&record.t2)?)?);
    }
    let mask = dilate_mask(&read_tensor_file(&record.mask)?, MASK_DILATION)?;
    let image = mask_and_embed(&planes, &mask, canvas).map_err(|e| match e {
        Error::Dimension { op, detail } => Error::Dimension {
            op,
            detail: format!("record {}: {detail}", record.id()),
        },
        other => other,
    })?;
    Ok(SliceSample {
        image,
        label: record.label,
        provenance: Provenance {
            patient_id: record.patient_id.clone(),
            slice_index: record.slice_index,
            copy: None,
        },
    })
}
