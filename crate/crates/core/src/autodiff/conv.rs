use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Conv2dOptions {
            stride: 1,
            padding: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv2dGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Conv2dGeom {
    fn new(input: &[usize], kernel: &[usize], opts: Conv2dOptions) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 || input[1] != kernel[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: kernel.to_vec(),
            });
        }
        if opts.stride == 0 {
            return Err(Error::invalid("conv2d: stride must be positive"));
        }
        let (h, w, kh, kw) = (input[2], input[3], kernel[2], kernel[3]);
        let underflow = || Error::DimensionUnderflow {
            op: "conv2d",
            input: input.to_vec(),
            kernel: kh.max(kw),
            padding: opts.padding,
            stride: opts.stride,
        };
        if kh == 0 || kw == 0 || kh > h + 2 * opts.padding || kw > w + 2 * opts.padding {
            return Err(underflow());
        }
        let oh = (h + 2 * opts.padding - kh) / opts.stride + 1;
        let ow = (w + 2 * opts.padding - kw) / opts.stride + 1;
        Ok(Conv2dGeom {
            n: input[0],
            cin: input[1],
            h,
            w,
            cout: kernel[0],
            kh,
            kw,
            stride: opts.stride,
            pad: opts.padding,
            oh,
            ow,
        })
    }

    /// Output positions along one axis that read in-bounds input for kernel
    /// offset `k`: `o` with `0 <= o*stride + k - pad < len`.
    fn valid(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > k {
            (self.pad - k).div_ceil(s)
        } else {
            0
        };
        let hi = if len + self.pad > k {
            ((len + self.pad - k - 1) / s + 1).min(out_len)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// Calls `f(x_offset, k_offset, out_offset)` for every in-bounds
    /// (output row, kernel tap) pair; `f` handles a contiguous run of `len`
    /// output columns with input stride `stride`.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        for n in 0..self.n {
            for co in 0..self.cout {
                for ci in 0..self.cin {
                    for a in 0..self.kh {
                        let (y0, y1) = self.valid(a, self.h, self.oh);
                        for b in 0..self.kw {
                            let (x0, x1) = self.valid(b, self.w, self.ow);
                            if x1 <= x0 {
                                continue;
                            }
                            let k_off = ((co * self.cin + ci) * self.kh + a) * self.kw + b;
                            for oy in y0..y1 {
                                let iy = oy * self.stride + a - self.pad;
                                let x_off = ((n * self.cin + ci) * self.h + iy) * self.w
                                    + x0 * self.stride
                                    + b
                                    - self.pad;
                                let o_off = ((n * self.cout + co) * self.oh + oy) * self.ow + x0;
                                f(x_off, k_off, o_off, x1 - x0);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_forward<F: Scalar>(x: &[F], k: &[F], g: &Conv2dGeom) -> Vec<F> {
    let mut out = vec![F::zero(); g.n * g.cout * g.oh * g.ow];
    let s = g.stride;
    g.for_each_run(|xo, ko, oo, len| {
        let wv = k[ko];
        if wv == F::zero() {
            return;
        }
        let dst = &mut out[oo..oo + len];
        if s == 1 {
            for (d, &xv) in dst.iter_mut().zip(&x[xo..xo + len]) {
                *d += wv * xv;
            }
        } else {
            for (j, d) in dst.iter_mut().enumerate() {
                *d += wv * x[xo + j * s];
            }
        }
    });
    out
}

pub(super) fn conv2d_backward_input<F: Scalar>(g: &[F], k: &[F], geom: &Conv2dGeom, gx: &mut [F]) {
    let s = geom.stride;
    geom.for_each_run(|xo, ko, oo, len| {
        let wv = k[ko];
        if s == 1 {
            for (d, &gv) in gx[xo..xo + len].iter_mut().zip(&g[oo..oo + len]) {
                *d += wv * gv;
            }
        } else {
            for j in 0..len {
                gx[xo + j * s] += wv * g[oo + j];
            }
        }
    });
}

pub(super) fn conv2d_backward_kernel<F: Scalar>(g: &[F], x: &[F], geom: &Conv2dGeom, gk: &mut [F]) {
    let s = geom.stride;
    geom.for_each_run(|xo, ko, oo, len| {
        let mut acc = F::zero();
        for j in 0..len {
            acc += g[oo + j] * x[xo + j * s];
        }
        gk[ko] += acc;
    });
}

/// Forward 2-D cross-correlation without gradient tracking.
pub fn conv2d_values<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    opts: Conv2dOptions,
) -> Result<Tensor<F>> {
    let geom = Conv2dGeom::new(input.shape(), kernel.shape(), opts)?;
    let data = conv2d_forward(input.data(), kernel.data(), &geom);
    Tensor::new(vec![geom.n, geom.cout, geom.oh, geom.ow], data)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv1dGeom {
    batch: usize,
    cin: usize,
    len: usize,
    cout: usize,
    k: usize,
    out_len: usize,
}

impl Conv1dGeom {
    fn new(input: &[usize], kernel: &[usize], pad_right: usize) -> Result<Self> {
        let (batch, cin, len) = match *input {
            [c, l] => (1, c, l),
            [b, c, l] => (b, c, l),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "conv1d",
                    lhs: input.to_vec(),
                    rhs: kernel.to_vec(),
                })
            }
        };
        if kernel.len() != 3 || kernel[1] != cin {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: input.to_vec(),
                rhs: kernel.to_vec(),
            });
        }
        let k = kernel[2];
        if k == 0 || k > len + pad_right {
            return Err(Error::KernelTooLong {
                op: "conv1d",
                kernel: k,
                padded: len + pad_right,
            });
        }
        Ok(Conv1dGeom {
            batch,
            cin,
            len,
            cout: kernel[0],
            k,
            out_len: len + pad_right - k + 1,
        })
    }

    /// `f(x_offset, k_offset, out_offset, run)` over every in-bounds run.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        for b in 0..self.batch {
            for i in 0..self.cout {
                for n in 0..self.cin {
                    for m in 0..self.k {
                        // output j reads input j + m, valid while j + m < len
                        let run = self.out_len.min(self.len.saturating_sub(m));
                        if run == 0 {
                            continue;
                        }
                        let x_off = (b * self.cin + n) * self.len + m;
                        let k_off = (i * self.cin + n) * self.k + m;
                        let o_off = (b * self.cout + i) * self.out_len;
                        f(x_off, k_off, o_off, run);
                    }
                }
            }
        }
    }
}

fn conv1d_forward<F: Scalar>(x: &[F], k: &[F], g: &Conv1dGeom) -> Vec<F> {
    let mut out = vec![F::zero(); g.batch * g.cout * g.out_len];
    g.for_each_run(|xo, ko, oo, run| {
        let wv = k[ko];
        for (d, &xv) in out[oo..oo + run].iter_mut().zip(&x[xo..xo + run]) {
            *d += wv * xv;
        }
    });
    out
}

pub(super) fn conv1d_backward_input<F: Scalar>(g: &[F], k: &[F], geom: &Conv1dGeom, gx: &mut [F]) {
    geom.for_each_run(|xo, ko, oo, run| {
        let wv = k[ko];
        for (d, &gv) in gx[xo..xo + run].iter_mut().zip(&g[oo..oo + run]) {
            *d += wv * gv;
        }
    });
}

pub(super) fn conv1d_backward_kernel<F: Scalar>(g: &[F], x: &[F], geom: &Conv1dGeom, gk: &mut [F]) {
    geom.for_each_run(|xo, ko, oo, run| {
        let acc: F = g[oo..oo + run]
            .iter()
            .zip(&x[xo..xo + run])
            .map(|(&a, &b)| a * b)
            .sum();
        gk[ko] += acc;
    });
}

fn conv1d_out_shape(input: &[usize], g: &Conv1dGeom) -> Vec<usize> {
    if input.len() == 2 {
        vec![g.cout, g.out_len]
    } else {
        vec![g.batch, g.cout, g.out_len]
    }
}

/// Forward multichannel 1-D convolution with right zero-padding, no gradient
/// tracking. `input` is `Cin×L` or `B×Cin×L`, `kernel` is `Cout×Cin×K`.
pub fn conv1d_values<F: Scalar>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    pad_right: usize,
) -> Result<Tensor<F>> {
    let geom = Conv1dGeom::new(input.shape(), kernel.shape(), pad_right)?;
    let data = conv1d_forward(input.data(), kernel.data(), &geom);
    Tensor::new(conv1d_out_shape(input.shape(), &geom), data)
}

impl<F: Scalar> Tape<F> {
    /// 2-D cross-correlation of `input` (`N×Cin×H×W`) with `kernel`
    /// (`Cout×Cin×kh×kw`), no bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, opts: Conv2dOptions) -> Result<Var> {
        let geom = Conv2dGeom::new(self.shape(input), self.shape(kernel), opts)?;
        let data = conv2d_forward(self.value(input).data(), self.value(kernel).data(), &geom);
        let value = Tensor::new(vec![geom.n, geom.cout, geom.oh, geom.ow], data)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                geom,
            },
        ))
    }

    /// `out[i][j] = Σ_n Σ_m kernel[i][n][m] · input[n][j+m]`, reading zeros
    /// past the right edge. Output length is `L + pad_right - K + 1`.
    pub fn conv1d(&mut self, input: Var, kernel: Var, pad_right: usize) -> Result<Var> {
        let geom = Conv1dGeom::new(self.shape(input), self.shape(kernel), pad_right)?;
        let data = conv1d_forward(self.value(input).data(), self.value(kernel).data(), &geom);
        let value = Tensor::new(conv1d_out_shape(self.shape(input), &geom), data)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                kernel,
                geom,
            },
        ))
    }
}
