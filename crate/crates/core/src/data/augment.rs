//! Frame-level augmentation for `T×C×H×W` count frames.
//!
//! Geometric warps move whole pixel values to their nearest target pixel
//! and drop whatever lands outside the image, so the total mass never grows.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub flip_prob: f64,
    /// Beta(a, a) parameter of the mixup factor; `None` disables mixup.
    pub mixup_alpha: Option<f64>,
    pub roll_max: i64,
    pub rotate_deg: f64,
    pub cutout_min: usize,
    pub cutout_max: usize,
    pub shear_deg: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            flip_prob: 0.5,
            mixup_alpha: Some(0.5),
            roll_max: 5,
            rotate_deg: 15.0,
            cutout_min: 1,
            cutout_max: 8,
            shear_deg: 8.0,
        }
    }
}

/// Frames with a probability vector over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSample<F> {
    pub frames: Tensor<F>,
    pub label: Vec<F>,
}

pub fn one_hot<F: Scalar>(label: usize, classes: usize) -> Vec<F> {
    (0..classes)
        .map(|c| if c == label { F::one() } else { F::zero() })
        .collect()
}

fn dims<F: Scalar>(frames: &Tensor<F>) -> (usize, usize, usize) {
    let s = frames.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    (frames.numel() / (h * w).max(1), h, w)
}

/// Moves every pixel `(x, y)` of every plane to `map(x, y)` if it lands
/// inside the image, adding on collision.
fn remap<F: Scalar>(frames: &Tensor<F>, map: impl Fn(isize, isize) -> (isize, isize)) -> Tensor<F> {
    let (planes, h, w) = dims(frames);
    let mut targets = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (tx, ty) = map(x, y);
            let inside = tx >= 0 && ty >= 0 && (tx as usize) < w && (ty as usize) < h;
            targets.push(inside.then(|| ty as usize * w + tx as usize));
        }
    }
    let mut out = Tensor::zeros(frames.shape());
    let (src, dst) = (frames.data(), out.data_mut());
    for p in 0..planes {
        let base = p * h * w;
        for (k, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                dst[base + t] += src[base + k];
            }
        }
    }
    out
}

pub fn hflip<F: Scalar>(frames: &Tensor<F>) -> Tensor<F> {
    let w = dims(frames).2 as isize;
    remap(frames, |x, y| (w - 1 - x, y))
}

/// Shifts by `(dx, dy)`; vacated pixels become zero.
pub fn roll<F: Scalar>(frames: &Tensor<F>, dx: isize, dy: isize) -> Tensor<F> {
    remap(frames, |x, y| (x + dx, y + dy))
}

/// Rotation about the image centre, nearest neighbour.
pub fn rotate<F: Scalar>(frames: &Tensor<F>, degrees: f64) -> Tensor<F> {
    let (_, h, w) = dims(frames);
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    remap(frames, |x, y| {
        let (u, v) = (x as f64 - cx, y as f64 - cy);
        (
            (cx + cos * u - sin * v).round() as isize,
            (cy + sin * u + cos * v).round() as isize,
        )
    })
}

/// Horizontal shear `x' = x + tan(θ)·(y − cy)`, nearest neighbour.
pub fn shear<F: Scalar>(frames: &Tensor<F>, degrees: f64) -> Tensor<F> {
    let (_, h, _) = dims(frames);
    let cy = (h as f64 - 1.0) / 2.0;
    let k = degrees.to_radians().tan();
    remap(frames, |x, y| {
        ((x as f64 + k * (y as f64 - cy)).round() as isize, y)
    })
}

/// Zeros a `side×side` square with top-left corner `(x0, y0)`, clamped to
/// the image.
pub fn cutout<F: Scalar>(frames: &Tensor<F>, x0: usize, y0: usize, side: usize) -> Tensor<F> {
    let (planes, h, w) = dims(frames);
    let mut out = frames.clone();
    let data = out.data_mut();
    for p in 0..planes {
        for y in y0.min(h)..(y0 + side).min(h) {
            for x in x0.min(w)..(x0 + side).min(w) {
                data[(p * h + y) * w + x] = F::zero();
            }
        }
    }
    out
}

/// `λ·a + (1−λ)·b` on frames and labels.
pub fn mixup<F: Scalar>(
    a: &SoftSample<F>,
    b: &SoftSample<F>,
    lambda: f64,
) -> Result<SoftSample<F>> {
    if a.frames.shape() != b.frames.shape() || a.label.len() != b.label.len() {
        return Err(Error::ShapeMismatch {
            op: "mixup",
            lhs: a.frames.shape().to_vec(),
            rhs: b.frames.shape().to_vec(),
        });
    }
    if lambda == 1.0 {
        return Ok(a.clone());
    }
    let (l, m) = (F::lit(lambda), F::lit(1.0 - lambda));
    let mix = |x: &[F], y: &[F]| {
        x.iter()
            .zip(y)
            .map(|(&p, &q)| l * p + m * q)
            .collect::<Vec<F>>()
    };
    Ok(SoftSample {
        frames: Tensor::new(
            a.frames.shape().to_vec(),
            mix(a.frames.data(), b.frames.data()),
        )?,
        label: mix(&a.label, &b.label),
    })
}

/// Flip, optional mixup with `partner`, then one of roll, rotate, cutout,
/// shear chosen uniformly.
pub fn augment<F: Scalar>(
    sample: &SoftSample<F>,
    partner: Option<&SoftSample<F>>,
    policy: &AugmentPolicy,
    rng: &mut impl Rng,
) -> Result<SoftSample<F>> {
    let maybe_flip = |s: &SoftSample<F>, rng: &mut dyn rand::RngCore| SoftSample {
        frames: if rng.gen_bool(policy.flip_prob.clamp(0.0, 1.0)) {
            hflip(&s.frames)
        } else {
            s.frames.clone()
        },
        label: s.label.clone(),
    };
    let mut out = maybe_flip(sample, rng);
    if let (Some(alpha), Some(other)) = (policy.mixup_alpha, partner) {
        let beta = Beta::new(alpha, alpha).map_err(|e| Error::invalid(format!("mixup: {e}")))?;
        let lambda = beta.sample(rng);
        let other = maybe_flip(other, rng);
        out = mixup(&out, &other, lambda)?;
    }
    let (_, h, w) = dims(&out.frames);
    out.frames = match rng.gen_range(0..4) {
        0 => {
            let r = policy.roll_max;
            let dx = rng.gen_range(-r..=r) as isize;
            let dy = rng.gen_range(-r..=r) as isize;
            roll(&out.frames, dx, dy)
        }
        1 => rotate(
            &out.frames,
            rng.gen_range(-policy.rotate_deg..=policy.rotate_deg),
        ),
        2 => {
            let side = rng.gen_range(policy.cutout_min..=policy.cutout_max.max(policy.cutout_min));
            let x0 = rng.gen_range(0..w.max(1));
            let y0 = rng.gen_range(0..h.max(1));
            cutout(&out.frames, x0, y0, side)
        }
        _ => shear(
            &out.frames,
            rng.gen_range(-policy.shear_deg..=policy.shear_deg),
        ),
    };
    Ok(out)
}
