use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::neuron::Surrogate;
use crate::scalar::Scalar;
use crate::tensor::{numel, strides, Tensor};

/// Elementwise operation selector for [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Scale(f64),
    Sigmoid,
}

/// Numpy-style broadcast of two shapes (right-aligned, size-1 axes stretch).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Flat index into `input` for every flat index of `out`, or `None` when no
/// broadcasting is needed.
fn broadcast_map(out: &[usize], input: &[usize]) -> Option<Vec<usize>> {
    if out == input {
        return None;
    }
    let rank = out.len();
    let lead = rank - input.len();
    let in_strides = strides(input);
    let mut step = vec![0; rank];
    for (k, &d) in input.iter().enumerate() {
        if d != 1 {
            step[lead + k] = in_strides[k];
        }
    }
    let n = numel(out);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0; rank];
    let mut cur = 0;
    for _ in 0..n {
        map.push(cur);
        for d in (0..rank).rev() {
            idx[d] += 1;
            cur += step[d];
            if idx[d] < out[d] {
                break;
            }
            cur -= step[d] * out[d];
            idx[d] = 0;
        }
    }
    Some(map)
}

#[inline]
pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }
}

impl<F: Scalar> Tape<F> {
    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out = broadcast_shape(&sa, &sb).ok_or_else(|| Error::ShapeMismatch {
            op: kind.name(),
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let map_a = broadcast_map(&out, &sa);
        let map_b = broadcast_map(&out, &sb);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let f: fn(F, F) -> F = match kind {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
        };
        let data: Vec<F> = (0..numel(&out))
            .map(|k| f(super::at(av, &map_a, k), super::at(bv, &map_b, k)))
            .collect();
        let value = Tensor::new(out, data)?;
        let op = match kind {
            Binary::Add => Op::Add { a, b, map_a, map_b },
            Binary::Sub => Op::Sub { a, b, map_a, map_b },
            Binary::Mul => Op::Mul { a, b, map_a, map_b },
        };
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: F, shift: F) -> Var {
        let value = self.value(x).map(|v| v * scale + shift);
        self.push(value, Op::Affine { x, scale })
    }

    pub fn scale(&mut self, x: Var, scale: F) -> Var {
        self.affine(x, scale, F::zero())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid { x })
    }

    /// Step function Θ(x) (1 where x ≥ 0) whose backward pass uses the
    /// surrogate derivative evaluated at `x`.
    pub fn heaviside(&mut self, x: Var, surrogate: Surrogate) -> Var {
        self.heaviside_offset(x, surrogate, 0.0)
    }

    /// Like [`Tape::heaviside`] but the surrogate is evaluated at `x + offset`.
    pub(crate) fn heaviside_offset(&mut self, x: Var, surrogate: Surrogate, offset: f64) -> Var {
        let value = self
            .value(x)
            .map(|v| if v >= F::zero() { F::one() } else { F::zero() });
        self.push(
            value,
            Op::Heaviside {
                x,
                surrogate,
                offset,
            },
        )
    }

    pub fn elementwise(&mut self, op: ElementwiseOp, a: Var, b: Option<Var>) -> Result<Var> {
        let need = |b: Option<Var>| {
            b.ok_or_else(|| Error::invalid(format!("{op:?} needs a second operand")))
        };
        match op {
            ElementwiseOp::Add => self.add(a, need(b)?),
            ElementwiseOp::Sub => self.sub(a, need(b)?),
            ElementwiseOp::Mul => self.mul(a, need(b)?),
            ElementwiseOp::Scale(s) => Ok(self.scale(a, F::lit(s))),
            ElementwiseOp::Sigmoid => Ok(self.sigmoid(a)),
        }
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum { x })
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum(x);
        self.scale(s, F::one() / F::lit(n as f64))
    }
}
