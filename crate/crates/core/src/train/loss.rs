use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Spike mean squared error: the mean of `(s − g)²` over time steps,
/// samples and classes. `outputs` is `T×B×K` (or `T×K`), `target` is
/// `B×K` (or `K`) and is compared against every time step.
pub fn smse_loss<F: Scalar>(tape: &mut Tape<F>, outputs: Var, target: &Tensor<F>) -> Result<Var> {
    let s = tape.shape(outputs).to_vec();
    if s.len() != target.rank() + 1 || s[1..] != *target.shape() {
        return Err(Error::ShapeMismatch {
            op: "smse_loss",
            lhs: s,
            rhs: target.shape().to_vec(),
        });
    }
    let mut shape = vec![1];
    shape.extend_from_slice(target.shape());
    let g = tape.constant(target.clone().reshape(&shape)?);
    let diff = tape.sub(outputs, g)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean(sq))
}

/// Index of the largest rate; the lowest index wins ties.
pub fn predict_label<F: Scalar>(rates: &[F]) -> usize {
    let mut best = 0;
    for (i, &r) in rates.iter().enumerate() {
        if r > rates[best] {
            best = i;
        }
    }
    best
}

/// Mean over time of a `T×K` output, then [`predict_label`].
pub fn predict_from_outputs<F: Scalar>(outputs: &Tensor<F>) -> Result<usize> {
    let &[t, k] = outputs.shape() else {
        return Err(Error::invalid(format!(
            "expected T×K outputs, got {:?}",
            outputs.shape()
        )));
    };
    if t == 0 {
        return Err(Error::invalid("no time steps"));
    }
    let rates: Vec<F> = (0..k)
        .map(|i| (0..t).map(|j| outputs.data()[j * k + i]).sum::<F>() / F::lit(t as f64))
        .collect();
    Ok(predict_label(&rates))
}
