//! Temporal-channel joint attention.
//!
//! Pipeline for a `T×C×H×W` frame stack `X`:
//!
//! 1. squeeze: `Z[c][t]` is the spatial mean of frame `(c, t)`, a `C×T` matrix;
//! 2. temporal local attention (TLA):
//!    `𝒯[i][j] = Σ_n Σ_m W[i][n][m] · Z[n][j+m]` (a `C`-channel 1-D
//!    convolution along time, kernel `C×C×K_T`);
//! 3. channel local attention (CLA):
//!    `𝒞[i][j] = Σ_n Σ_m E[j][n][m] · Z[i+m][n]` (a `T`-channel 1-D
//!    convolution along channels, kernel `T×T×K_C`);
//! 4. cross convolutional fusion: `ℱ = σ(𝒯 ⊙ 𝒞)`, or `σ(𝒯 + 𝒞)` for the
//!    additive variant;
//! 5. recalibration: `X'[t][c] = X[t][c] · ℱ[c][t]`, broadcast over `H×W`.
//!
//! Indices past the end of an axis read as zero (right zero padding of
//! length `K − 1`), so both maps keep the `C×T` shape. TLA and CLA read the
//! same `Z` in parallel. Because `𝒯[i][j]` sees columns `j..j+K_T` and
//! `𝒞[i][j]` sees rows `i..i+K_C`, every fused score depends on a cross-shaped
//! region of `Z`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{conv1d_values, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How the temporal and channel maps are combined before the sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    #[default]
    Multiply,
    Add,
}

/// Kernel size used when none is configured.
pub const DEFAULT_KERNEL: usize = 4;

/// `min(DEFAULT_KERNEL, dim - 1)`; zero when `dim < 2`.
pub fn default_kernel(dim: usize) -> usize {
    DEFAULT_KERNEL.min(dim.saturating_sub(1))
}

/// The `C×T` average matrix of a frame stack.
#[derive(Debug, Clone, PartialEq)]
pub struct AverageMatrix<F> {
    z: Tensor<F>,
}

impl<F: Scalar> AverageMatrix<F> {
    /// Squeezes a `T×C×H×W` tensor.
    pub fn from_frames(x: &Tensor<F>) -> Result<Self> {
        let &[t, c, h, w] = x.shape() else {
            return Err(Error::invalid(format!(
                "squeeze expects T×C×H×W, got {:?}",
                x.shape()
            )));
        };
        if h == 0 || w == 0 {
            return Err(Error::invalid("squeeze: empty spatial dimensions"));
        }
        let hw = h * w;
        let inv = F::one() / F::lit(hw as f64);
        let mut z = Tensor::zeros(&[c, t]);
        for (k, frame) in x.data().chunks(hw).enumerate() {
            let (ti, ci) = (k / c, k % c);
            z.set(&[ci, ti], frame.iter().copied().sum::<F>() * inv);
        }
        Ok(AverageMatrix { z })
    }

    pub fn from_matrix(z: Tensor<F>) -> Result<Self> {
        if z.rank() != 2 {
            return Err(Error::invalid(format!(
                "average matrix must be C×T, got {:?}",
                z.shape()
            )));
        }
        Ok(AverageMatrix { z })
    }

    pub fn channels(&self) -> usize {
        self.z.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.z.shape()[1]
    }

    pub fn matrix(&self) -> &Tensor<F> {
        &self.z
    }
}

/// Learnable TLA/CLA kernels of one attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct TcjaParams<F> {
    /// TLA kernel, `C×C×K_T` (output channel, input row, tap).
    pub w: Tensor<F>,
    /// CLA kernel, `T×T×K_C` (output column, input column, tap).
    pub e: Tensor<F>,
    pub fusion: Fusion,
}

fn check_kernels(c: usize, t: usize, k_t: usize, k_c: usize) -> Result<()> {
    if k_t == 0 || k_t >= t {
        return Err(Error::invalid(format!(
            "tcja: temporal kernel K_T={k_t} must satisfy 1 <= K_T < T={t}"
        )));
    }
    if k_c == 0 || k_c >= c {
        return Err(Error::invalid(format!(
            "tcja: channel kernel K_C={k_c} must satisfy 1 <= K_C < C={c}"
        )));
    }
    Ok(())
}

impl<F: Scalar> TcjaParams<F> {
    pub fn new(w: Tensor<F>, e: Tensor<F>, fusion: Fusion) -> Result<Self> {
        let (&[c, c2, k_t], &[t, t2, k_c]) = (w.shape(), e.shape()) else {
            return Err(Error::invalid(format!(
                "tcja kernels must be C×C×K_T and T×T×K_C, got {:?} and {:?}",
                w.shape(),
                e.shape()
            )));
        };
        if c != c2 || t != t2 {
            return Err(Error::ShapeMismatch {
                op: "tcja kernels",
                lhs: w.shape().to_vec(),
                rhs: e.shape().to_vec(),
            });
        }
        check_kernels(c, t, k_t, k_c)?;
        Ok(TcjaParams { w, e, fusion })
    }

    pub fn zeros(c: usize, t: usize, k_t: usize, k_c: usize, fusion: Fusion) -> Result<Self> {
        check_kernels(c, t, k_t, k_c)?;
        Ok(TcjaParams {
            w: Tensor::zeros(&[c, c, k_t]),
            e: Tensor::zeros(&[t, t, k_c]),
            fusion,
        })
    }

    /// Uniform in `±1/√fan_in`, `fan_in = rows · K`.
    pub fn init(
        c: usize,
        t: usize,
        k_t: usize,
        k_c: usize,
        fusion: Fusion,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        check_kernels(c, t, k_t, k_c)?;
        Ok(TcjaParams {
            w: uniform_fan_in(&[c, c, k_t], c * k_t, rng),
            e: uniform_fan_in(&[t, t, k_c], t * k_c, rng),
            fusion,
        })
    }

    pub fn channels(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.e.shape()[0]
    }

    pub fn k_t(&self) -> usize {
        self.w.shape()[2]
    }

    pub fn k_c(&self) -> usize {
        self.e.shape()[2]
    }

    pub fn param_count(&self) -> usize {
        self.w.numel() + self.e.numel()
    }

    /// Attention maps for one average matrix, without gradient tracking.
    pub fn attention(&self, z: &AverageMatrix<F>) -> Result<AttentionMaps<F>> {
        let t_map = tla_values(z.matrix(), &self.w)?;
        let c_map = cla_values(z.matrix(), &self.e)?;
        let f_map = ccf_values(&t_map, &c_map, self.fusion)?;
        Ok(AttentionMaps {
            t_map,
            c_map,
            f_map,
        })
    }
}

pub(crate) fn uniform_fan_in<F: Scalar>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut impl Rng,
) -> Tensor<F> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| F::lit(rng.gen_range(-bound..bound)))
}

/// `𝒯`, `𝒞` and `ℱ` for one sample, each `C×T`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps<F> {
    pub t_map: Tensor<F>,
    pub c_map: Tensor<F>,
    pub f_map: Tensor<F>,
}

/// Parameter counts of the two local attentions against a dense
/// `(C·T)×(C·T)` fully connected mixing layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub tla: usize,
    pub cla: usize,
    pub fc_baseline: usize,
}

impl ParamCount {
    pub fn tcja(&self) -> usize {
        self.tla + self.cla
    }

    /// Ratio of the attention block to the dense baseline.
    pub fn ratio(&self) -> f64 {
        self.tcja() as f64 / self.fc_baseline as f64
    }
}

pub fn param_count(c: usize, t: usize, k_t: usize, k_c: usize) -> ParamCount {
    ParamCount {
        tla: c * c * k_t,
        cla: t * t * k_c,
        fc_baseline: t * t * c * c,
    }
}

fn transpose<F: Scalar>(m: &Tensor<F>) -> Tensor<F> {
    let (r, c) = (m.shape()[0], m.shape()[1]);
    Tensor::from_fn(&[c, r], |k| m.data()[(k % r) * c + k / r])
}

/// TLA without gradient tracking; `z` is `C×T`.
pub fn tla_values<F: Scalar>(z: &Tensor<F>, w: &Tensor<F>) -> Result<Tensor<F>> {
    let (c, t) = matrix_dims(z)?;
    check_tla(w.shape(), c, t)?;
    conv1d_values(z, w, w.shape()[2] - 1)
}

/// CLA without gradient tracking; `z` is `C×T`.
pub fn cla_values<F: Scalar>(z: &Tensor<F>, e: &Tensor<F>) -> Result<Tensor<F>> {
    let (c, t) = matrix_dims(z)?;
    check_cla(e.shape(), c, t)?;
    let out = conv1d_values(&transpose(z), e, e.shape()[2] - 1)?;
    Ok(transpose(&out))
}

/// CCF without gradient tracking.
pub fn ccf_values<F: Scalar>(
    t_map: &Tensor<F>,
    c_map: &Tensor<F>,
    fusion: Fusion,
) -> Result<Tensor<F>> {
    if t_map.shape() != c_map.shape() {
        return Err(Error::ShapeMismatch {
            op: "ccf",
            lhs: t_map.shape().to_vec(),
            rhs: c_map.shape().to_vec(),
        });
    }
    let data = t_map
        .data()
        .iter()
        .zip(c_map.data())
        .map(|(&a, &b)| {
            let pre = match fusion {
                Fusion::Multiply => a * b,
                Fusion::Add => a + b,
            };
            crate::autodiff::sigmoid_value(pre)
        })
        .collect();
    Tensor::new(t_map.shape().to_vec(), data)
}

fn matrix_dims<F: Scalar>(z: &Tensor<F>) -> Result<(usize, usize)> {
    match *z.shape() {
        [c, t] => Ok((c, t)),
        _ => Err(Error::invalid(format!(
            "average matrix must be C×T, got {:?}",
            z.shape()
        ))),
    }
}

fn check_tla(w: &[usize], c: usize, t: usize) -> Result<()> {
    match *w {
        [o, i, k] if o == c && i == c => {
            if k == 0 || k >= t {
                Err(Error::invalid(format!(
                    "tla: kernel size K_T={k} must satisfy 1 <= K_T < T={t}"
                )))
            } else {
                Ok(())
            }
        }
        _ => Err(Error::ShapeMismatch {
            op: "tla kernel",
            lhs: vec![c, t],
            rhs: w.to_vec(),
        }),
    }
}

fn check_cla(e: &[usize], c: usize, t: usize) -> Result<()> {
    match *e {
        [o, i, k] if o == t && i == t => {
            if k == 0 || k >= c {
                Err(Error::invalid(format!(
                    "cla: kernel size K_C={k} must satisfy 1 <= K_C < C={c}"
                )))
            } else {
                Ok(())
            }
        }
        _ => Err(Error::ShapeMismatch {
            op: "cla kernel",
            lhs: vec![c, t],
            rhs: e.to_vec(),
        }),
    }
}

/// Trailing `(C, T)` of a `C×T` or `B×C×T` average matrix.
fn z_dims<F: Scalar>(tape: &Tape<F>, z: Var) -> Result<(usize, usize)> {
    match *tape.shape(z) {
        [c, t] | [_, c, t] => Ok((c, t)),
        ref s => Err(Error::invalid(format!(
            "average matrix must be C×T or B×C×T, got {s:?}"
        ))),
    }
}

/// Spatial mean: `T×C×H×W → C×T`, or batched `T×B×C×H×W → B×C×T`.
pub fn squeeze<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let perm: &[usize] = match shape.len() {
        4 => &[1, 0],
        5 => &[1, 2, 0],
        _ => {
            return Err(Error::invalid(format!(
                "squeeze expects T×C×H×W or T×B×C×H×W, got {shape:?}"
            )))
        }
    };
    if shape[shape.len() - 2] == 0 || shape[shape.len() - 1] == 0 {
        return Err(Error::invalid("squeeze: empty spatial dimensions"));
    }
    let means = tape.mean_trailing(x, 2)?;
    tape.permute(means, perm)
}

/// Temporal local attention over a `C×T` (or `B×C×T`) average matrix.
pub fn tla<F: Scalar>(tape: &mut Tape<F>, z: Var, w: Var) -> Result<Var> {
    let (c, t) = z_dims(tape, z)?;
    check_tla(tape.shape(w), c, t)?;
    let k = tape.shape(w)[2];
    tape.conv1d(z, w, k - 1)
}

/// Channel local attention over a `C×T` (or `B×C×T`) average matrix.
pub fn cla<F: Scalar>(tape: &mut Tape<F>, z: Var, e: Var) -> Result<Var> {
    let (c, t) = z_dims(tape, z)?;
    check_cla(tape.shape(e), c, t)?;
    let k = tape.shape(e)[2];
    let perm: &[usize] = if tape.shape(z).len() == 2 {
        &[1, 0]
    } else {
        &[0, 2, 1]
    };
    let zt = tape.permute(z, perm)?;
    let out = tape.conv1d(zt, e, k - 1)?;
    tape.permute(out, perm)
}

/// Cross convolutional fusion `σ(𝒯 ⊙ 𝒞)` or `σ(𝒯 + 𝒞)`.
pub fn ccf<F: Scalar>(tape: &mut Tape<F>, t_map: Var, c_map: Var, fusion: Fusion) -> Result<Var> {
    if tape.shape(t_map) != tape.shape(c_map) {
        return Err(Error::ShapeMismatch {
            op: "ccf",
            lhs: tape.shape(t_map).to_vec(),
            rhs: tape.shape(c_map).to_vec(),
        });
    }
    let pre = match fusion {
        Fusion::Multiply => tape.mul(t_map, c_map)?,
        Fusion::Add => tape.add(t_map, c_map)?,
    };
    Ok(tape.sigmoid(pre))
}

/// Scales every frame `(t, c)` of `x` by `f[c][t]`.
pub fn recalibrate<F: Scalar>(tape: &mut Tape<F>, x: Var, f: Var) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let fs = tape.shape(f).to_vec();
    let mismatch = || Error::ShapeMismatch {
        op: "recalibrate",
        lhs: xs.clone(),
        rhs: fs.clone(),
    };
    let (perm, scale_shape): (&[usize], Vec<usize>) = match (xs.len(), fs.len()) {
        (4, 2) if fs == [xs[1], xs[0]] => (&[1, 0], vec![xs[0], xs[1], 1, 1]),
        (5, 3) if fs == [xs[1], xs[2], xs[0]] => (&[2, 0, 1], vec![xs[0], xs[1], xs[2], 1, 1]),
        _ => return Err(mismatch()),
    };
    let ft = tape.permute(f, perm)?;
    let scale = tape.reshape(ft, &scale_shape)?;
    tape.mul(x, scale)
}

/// Tape handles for one block's kernels.
#[derive(Debug, Clone, Copy)]
pub struct TcjaVars {
    pub w: Var,
    pub e: Var,
    pub fusion: Fusion,
}

impl TcjaVars {
    pub fn register<F: Scalar>(
        tape: &mut Tape<F>,
        params: &TcjaParams<F>,
        trainable: bool,
    ) -> Self {
        TcjaVars {
            w: tape.leaf(params.w.clone(), trainable),
            e: tape.leaf(params.e.clone(), trainable),
            fusion: params.fusion,
        }
    }
}

/// Tape handles of the intermediate maps of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub z: Var,
    pub t_map: Var,
    pub c_map: Var,
    pub f_map: Var,
}

/// squeeze → (TLA ∥ CLA) → CCF → recalibrate. Output has the shape of `x`.
pub fn tcja_forward<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    params: &TcjaVars,
) -> Result<(Var, AttentionVars)> {
    let z = squeeze(tape, x)?;
    let t_map = tla(tape, z, params.w)?;
    let c_map = cla(tape, z, params.e)?;
    let f_map = ccf(tape, t_map, c_map, params.fusion)?;
    let out = recalibrate(tape, x, f_map)?;
    Ok((
        out,
        AttentionVars {
            z,
            t_map,
            c_map,
            f_map,
        },
    ))
}
