use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolGeom {
    planes: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl PoolGeom {
    fn new(shape: &[usize], k: usize) -> Result<Self> {
        if shape.len() != 4 {
            return Err(Error::invalid(format!(
                "pool2d expects N×C×H×W input, got {shape:?}"
            )));
        }
        if k == 0 {
            return Err(Error::invalid("pool2d: window must be positive"));
        }
        for &d in &shape[2..] {
            if d % k != 0 {
                return Err(Error::NotDivisible {
                    op: "pool2d",
                    dim: d,
                    by: k,
                });
            }
        }
        Ok(PoolGeom {
            planes: shape[0] * shape[1],
            h: shape[2],
            w: shape[3],
            k,
        })
    }

    fn out_dims(&self) -> (usize, usize) {
        (self.h / self.k, self.w / self.k)
    }
}

/// Max pooling; returns values and, for every output, the flat input index
/// of the first maximum in row-major window order.
fn max_pool<F: Scalar>(x: &[F], g: &PoolGeom) -> (Vec<F>, Vec<usize>) {
    let (oh, ow) = g.out_dims();
    let n = g.planes * oh * ow;
    let mut out = Vec::with_capacity(n);
    let mut arg = Vec::with_capacity(n);
    for p in 0..g.planes {
        let base = p * g.h * g.w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * g.k * g.w + ox * g.k;
                for a in 0..g.k {
                    for b in 0..g.k {
                        let i = base + (oy * g.k + a) * g.w + ox * g.k + b;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

fn avg_pool<F: Scalar>(x: &[F], g: &PoolGeom) -> Vec<F> {
    let (oh, ow) = g.out_dims();
    let inv = F::one() / F::lit((g.k * g.k) as f64);
    let mut out = vec![F::zero(); g.planes * oh * ow];
    for p in 0..g.planes {
        let base = p * g.h * g.w;
        let obase = p * oh * ow;
        for iy in 0..g.h {
            let row = &x[base + iy * g.w..base + (iy + 1) * g.w];
            let orow = &mut out[obase + (iy / g.k) * ow..obase + (iy / g.k + 1) * ow];
            for (ix, &v) in row.iter().enumerate() {
                orow[ix / g.k] += v;
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

pub(super) fn avg_pool_backward<F: Scalar>(g: &[F], geom: &PoolGeom, gx: &mut [F]) {
    let (oh, ow) = geom.out_dims();
    let inv = F::one() / F::lit((geom.k * geom.k) as f64);
    for p in 0..geom.planes {
        let base = p * geom.h * geom.w;
        let obase = p * oh * ow;
        for iy in 0..geom.h {
            let orow = &g[obase + (iy / geom.k) * ow..obase + (iy / geom.k + 1) * ow];
            for ix in 0..geom.w {
                gx[base + iy * geom.w + ix] += orow[ix / geom.k] * inv;
            }
        }
    }
}

impl<F: Scalar> Tape<F> {
    /// Non-overlapping `k×k` pooling over the last two axes of `N×C×H×W`.
    pub fn pool2d(&mut self, x: Var, kind: PoolKind, k: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let geom = PoolGeom::new(&shape, k)?;
        let (oh, ow) = geom.out_dims();
        let out_shape = vec![shape[0], shape[1], oh, ow];
        let xv = self.value(x).data();
        Ok(match kind {
            PoolKind::Max => {
                let (data, argmax) = max_pool(xv, &geom);
                self.push(Tensor::new(out_shape, data)?, Op::MaxPool { x, argmax })
            }
            PoolKind::Avg => {
                let data = avg_pool(xv, &geom);
                self.push(Tensor::new(out_shape, data)?, Op::AvgPool { x, geom })
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pool_one(kind: PoolKind, v: &[f64]) -> Vec<f64> {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[1, 1, 2, 2], v).unwrap());
        let y = tape.pool2d(x, kind, 2).unwrap();
        tape.value(y).data().to_vec()
    }

    #[test]
    fn avg_and_max_of_small_window() {
        assert_eq!(pool_one(PoolKind::Avg, &[1.0, 3.0, 5.0, 7.0]), vec![4.0]);
        assert_eq!(pool_one(PoolKind::Max, &[1.0, 3.0, 5.0, 7.0]), vec![7.0]);
    }

    #[test]
    fn rejects_non_divisible() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 3, 4]));
        assert!(matches!(
            tape.pool2d(x, PoolKind::Max, 2),
            Err(Error::NotDivisible { dim: 3, by: 2, .. })
        ));
    }

    #[test]
    fn max_ties_route_to_first_index() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_f64(&[1, 1, 2, 2], &[2.0, 5.0, 5.0, 5.0]).unwrap());
        let y = tape.pool2d(x, PoolKind::Max, 2).unwrap();
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn forward_matches_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::from_fn(&[2, 3, 6, 6], |_| rng.gen_range(-1.0..1.0));
        for kind in [PoolKind::Max, PoolKind::Avg] {
            for k in [1, 2, 3] {
                let mut tape = Tape::<f64>::new();
                let xv = tape.constant(x.clone());
                let y = tape.pool2d(xv, kind, k).unwrap();
                let y = tape.value(y);
                for n in 0..2 {
                    for c in 0..3 {
                        for oy in 0..6 / k {
                            for ox in 0..6 / k {
                                let window: Vec<f64> = (0..k * k)
                                    .map(|i| x.get(&[n, c, oy * k + i / k, ox * k + i % k]))
                                    .collect();
                                let expect = match kind {
                                    PoolKind::Max => {
                                        window.iter().cloned().fold(f64::MIN, f64::max)
                                    }
                                    PoolKind::Avg => window.iter().sum::<f64>() / (k * k) as f64,
                                };
                                let got = y.get(&[n, c, oy, ox]);
                                assert!((got - expect).abs() < 1e-12);
                            }
                        }
                    }
                }
            }
        }
    }
}
