use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub(super) struct Dims {
    pub rows: usize,
    pub fin: usize,
    pub fout: usize,
}

fn forward<F: Scalar>(x: &[F], w: &[F], b: &[F], d: Dims) -> Vec<F> {
    let mut out = Vec::with_capacity(d.rows * d.fout);
    for r in 0..d.rows {
        let mut row = b.to_vec();
        for (f, &xv) in x[r * d.fin..(r + 1) * d.fin].iter().enumerate() {
            if xv == F::zero() {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&w[f * d.fout..(f + 1) * d.fout]) {
                *o += xv * wv;
            }
        }
        out.extend(row);
    }
    out
}

pub(super) fn backward_input<F: Scalar>(g: &[F], w: &[F], d: Dims, gx: &mut [F]) {
    for r in 0..d.rows {
        let grow = &g[r * d.fout..(r + 1) * d.fout];
        for f in 0..d.fin {
            let acc: F = grow
                .iter()
                .zip(&w[f * d.fout..(f + 1) * d.fout])
                .map(|(&a, &b)| a * b)
                .sum();
            gx[r * d.fin + f] += acc;
        }
    }
}

pub(super) fn backward_weight<F: Scalar>(g: &[F], x: &[F], d: Dims, gw: &mut [F]) {
    for r in 0..d.rows {
        let grow = &g[r * d.fout..(r + 1) * d.fout];
        for f in 0..d.fin {
            let xv = x[r * d.fin + f];
            if xv == F::zero() {
                continue;
            }
            for (o, &gv) in gw[f * d.fout..(f + 1) * d.fout].iter_mut().zip(grow) {
                *o += xv * gv;
            }
        }
    }
}

pub(super) fn backward_bias<F: Scalar>(g: &[F], d: Dims, gb: &mut [F]) {
    for r in 0..d.rows {
        for (o, &gv) in gb.iter_mut().zip(&g[r * d.fout..(r + 1) * d.fout]) {
            *o += gv;
        }
    }
}

impl<F: Scalar> Tape<F> {
    /// Affine map `input · weight + bias` for `input: B×F`, `weight: F×G`,
    /// `bias: G`.
    pub fn fully_connected(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (si, sw, sb) = (self.shape(input), self.shape(weight), self.shape(bias));
        if si.len() != 2 || sw.len() != 2 || si[1] != sw[0] {
            return Err(Error::ShapeMismatch {
                op: "fully_connected",
                lhs: si.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        if sb != [sw[1]] {
            return Err(Error::ShapeMismatch {
                op: "fully_connected bias",
                lhs: sw.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let d = Dims {
            rows: si[0],
            fin: si[1],
            fout: sw[1],
        };
        let data = forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            d,
        );
        let value = Tensor::new(vec![d.rows, d.fout], data)?;
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn run(x: Tensor<f64>, w: Tensor<f64>, b: Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let (x, w, b) = (tape.constant(x), tape.constant(w), tape.constant(b));
        let y = tape.fully_connected(x, w, b).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn identity_weight_zero_bias() {
        let x = Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5);
        let w = Tensor::from_fn(&[3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
        assert_eq!(run(x.clone(), w, Tensor::zeros(&[3])), x);
    }

    #[test]
    fn zero_weight_gives_bias_rows() {
        let x = Tensor::from_fn(&[3, 2], |i| i as f64);
        let b = Tensor::from_f64(&[4], &[1.0, -2.0, 0.5, 3.0]).unwrap();
        let y = run(x, Tensor::zeros(&[2, 4]), b.clone());
        for r in 0..3 {
            assert_eq!(&y.data()[r * 4..r * 4 + 4], b.data());
        }
    }

    #[test]
    fn matches_matmul_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::from_fn(&[4, 5], |_| rng.gen_range(-1.0..1.0));
        let w = Tensor::<f64>::from_fn(&[5, 3], |_| rng.gen_range(-1.0..1.0));
        let b = Tensor::<f64>::from_fn(&[3], |_| rng.gen_range(-1.0..1.0));
        let y = run(x.clone(), w.clone(), b.clone());
        for r in 0..4 {
            for o in 0..3 {
                let mut acc = b.get(&[o]);
                for f in 0..5 {
                    acc += x.get(&[r, f]) * w.get(&[f, o]);
                }
                assert!((y.get(&[r, o]) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inner_dimension_mismatch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let w = tape.constant(Tensor::zeros(&[4, 2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(
            tape.fully_connected(x, w, b),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
