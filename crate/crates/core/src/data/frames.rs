//! Event-to-frame integration.
//!
//! The `N` events of a stream are cut into `T` slices by index:
//! slice `j` spans `[⌊N/T⌋·j, ⌊N/T⌋·(j+1))`, except the last slice which
//! runs to `N`. Frame `(j, p, y, x)` counts the events of slice `j` with
//! polarity `p` at pixel `(x, y)`.

use super::events::EventStream;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Half-open index ranges of the `t_steps` slices.
pub fn slice_bounds(n: usize, t_steps: usize) -> Result<Vec<(usize, usize)>> {
    if t_steps == 0 || n < t_steps {
        return Err(Error::Dataset(format!(
            "cannot cut {n} events into {t_steps} slices"
        )));
    }
    let step = n / t_steps;
    Ok((0..t_steps)
        .map(|j| {
            let right = if j + 1 == t_steps { n } else { step * (j + 1) };
            (step * j, right)
        })
        .collect())
}

/// `T×2×H×W` count frames.
pub fn integrate_frames<F: Scalar>(stream: &EventStream, t_steps: usize) -> Result<Tensor<F>> {
    let bounds = slice_bounds(stream.len(), t_steps)?;
    let (h, w) = (stream.height as usize, stream.width as usize);
    let mut frames = Tensor::zeros(&[t_steps, 2, h, w]);
    let data = frames.data_mut();
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        for e in &stream.events[lo..hi] {
            let idx = ((j * 2 + e.p as usize) * h + e.y as usize) * w + e.x as usize;
            data[idx] += F::one();
        }
    }
    Ok(frames)
}

/// Repeats a static `C×H×W` image over `t_steps` frames.
pub fn replicate_static<F: Scalar>(image: &Tensor<F>, t_steps: usize) -> Result<Tensor<F>> {
    if image.rank() != 3 {
        return Err(Error::invalid(format!(
            "static image must be C×H×W, got {:?}",
            image.shape()
        )));
    }
    let mut shape = vec![t_steps];
    shape.extend_from_slice(image.shape());
    let n = image.numel();
    Tensor::new(
        shape,
        (0..t_steps * n).map(|i| image.data()[i % n]).collect(),
    )
}
