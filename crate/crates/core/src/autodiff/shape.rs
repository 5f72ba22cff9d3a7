use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, strides, Tensor};

fn check_perm(perm: &[usize], rank: usize) -> bool {
    let mut seen = vec![false; rank];
    perm.len() == rank
        && perm
            .iter()
            .all(|&p| p < rank && !std::mem::replace(&mut seen[p], true))
}

/// Out-of-place axis permutation: output axis `i` is input axis `perm[i]`.
fn permute_values<F: Copy>(data: &[F], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<F>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = shape.len();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0; rank];
    let mut cur = 0;
    for _ in 0..n {
        out.push(data[cur]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            cur += step[d];
            if idx[d] < out_shape[d] {
                break;
            }
            cur -= step[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

pub(super) fn permute_backward<F: Scalar>(
    g: &[F],
    in_shape: &[usize],
    perm: &[usize],
    gx: &mut [F],
) {
    let mut inverse = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let (_, back) = permute_values(g, &out_shape, &inverse);
    gx.iter_mut().zip(back).for_each(|(d, s)| *d += s);
}

pub(super) fn block_mean_backward<F: Scalar>(g: &[F], block: usize, gx: &mut [F]) {
    let inv = F::one() / F::lit(block as f64);
    for (chunk, &s) in gx.chunks_mut(block).zip(g) {
        let v = s * inv;
        chunk.iter_mut().for_each(|d| *d += v);
    }
}

impl<F: Scalar> Tape<F> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(x) == shape {
            return Ok(x);
        }
        if numel(shape) != self.value(x).numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }))
    }

    /// Sub-tensor `x[index]` along the leading axis.
    pub fn index_first(&mut self, x: Var, index: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some((&lead, rest)) = shape.split_first() else {
            return Err(Error::invalid("index_first: scalar input"));
        };
        if index >= lead {
            return Err(Error::invalid(format!(
                "index_first: index {index} out of range for axis of size {lead}"
            )));
        }
        let len = numel(rest);
        let offset = index * len;
        let data = self.value(x).data()[offset..offset + len].to_vec();
        let value = Tensor::new(rest.to_vec(), data)?;
        Ok(self.push(value, Op::Index { x, offset }))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if !check_perm(perm, shape.len()) {
            return Err(Error::invalid(format!(
                "permute: {perm:?} is not a permutation of {} axes",
                shape.len()
            )));
        }
        let (out_shape, data) = permute_values(self.value(x).data(), &shape, perm);
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(
            value,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        ))
    }

    /// Mean over the trailing `axes` axes.
    pub fn mean_trailing(&mut self, x: Var, axes: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axes > shape.len() {
            return Err(Error::invalid(format!(
                "mean_trailing: {axes} axes requested from rank {}",
                shape.len()
            )));
        }
        let split = shape.len() - axes;
        let block = numel(&shape[split..]);
        if block == 0 {
            return Err(Error::invalid("mean_trailing: empty reduction"));
        }
        self.block_mean(x, block, shape[..split].to_vec())
    }

    /// Average pooling over consecutive windows of the last axis.
    pub fn window_mean_last(&mut self, x: Var, window: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let last = *shape
            .last()
            .ok_or_else(|| Error::invalid("window_mean_last: scalar input"))?;
        if window == 0 || last % window != 0 {
            return Err(Error::NotDivisible {
                op: "window_mean_last",
                dim: last,
                by: window,
            });
        }
        let mut out = shape.clone();
        *out.last_mut().unwrap() = last / window;
        self.block_mean(x, window, out)
    }

    fn block_mean(&mut self, x: Var, block: usize, out_shape: Vec<usize>) -> Result<Var> {
        let inv = F::one() / F::lit(block as f64);
        let data: Vec<F> = self
            .value(x)
            .data()
            .chunks(block)
            .map(|c| c.iter().copied().sum::<F>() * inv)
            .collect();
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::BlockMean { x, block }))
    }
}
