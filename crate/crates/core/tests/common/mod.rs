#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcja_core::autodiff::{Tape, Var};
use tcja_core::{Result, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so entries that are zero on
/// both sides compare by absolute error.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Worst relative error between reverse-mode and central-difference
/// gradients of `Σ coeff ⊙ build(inputs)` over every input element.
pub fn gradcheck<B>(build: B, inputs: &[Tensor<f64>], seed: u64) -> Result<f64>
where
    B: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>],
                coeff: Option<&Tensor<f64>>|
     -> Result<(f64, Vec<Vec<f64>>, Tensor<f64>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let shape = tape.shape(out).to_vec();
        let c = match coeff {
            Some(c) => c.clone(),
            None => uniform(&shape, -1.0, 1.0, &mut rng(seed)),
        };
        let cv = tape.constant(c.clone());
        let weighted = tape.mul(out, cv)?;
        let loss = tape.sum(weighted);
        let value = tape.value(loss).data()[0];
        tape.backward(loss)?;
        let grads = vars
            .iter()
            .map(|&v| {
                tape.grad(v)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; tape.value(v).numel()])
            })
            .collect();
        Ok((value, grads, c))
    };
    let (_, analytic, coeff) = eval(inputs, None)?;
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        for k in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= FD_STEP;
            let fp = eval(&plus, Some(&coeff))?.0;
            let fm = eval(&minus, Some(&coeff))?.0;
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let a = analytic[i][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// `Z[c][t]`: spatial mean of frame `(t, c)` of a `T×C×H×W` tensor.
pub fn squeeze_oracle(x: &Tensor<f64>) -> Vec<Vec<f64>> {
    let s = x.shape();
    let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut z = vec![vec![0.0; t]; c];
    for ci in 0..c {
        for ti in 0..t {
            let mut acc = 0.0;
            for y in 0..h {
                for xi in 0..w {
                    acc += x.get(&[ti, ci, y, xi]);
                }
            }
            z[ci][ti] = acc / (h * w) as f64;
        }
    }
    z
}

/// `𝒯[i][j] = Σ_n Σ_m W[i][n][m] · Z[n][j+m]`, zero past the last column.
pub fn tla_oracle(z: &[Vec<f64>], w: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (c, t, k) = (z.len(), z[0].len(), w.shape()[2]);
    let mut out = vec![vec![0.0; t]; c];
    for i in 0..c {
        for j in 0..t {
            for n in 0..c {
                for m in 0..k {
                    if j + m < t {
                        out[i][j] += w.get(&[i, n, m]) * z[n][j + m];
                    }
                }
            }
        }
    }
    out
}

/// `𝒞[i][j] = Σ_n Σ_m E[j][n][m] · Z[i+m][n]`, zero past the last row.
pub fn cla_oracle(z: &[Vec<f64>], e: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (c, t, k) = (z.len(), z[0].len(), e.shape()[2]);
    let mut out = vec![vec![0.0; t]; c];
    for i in 0..c {
        for j in 0..t {
            for n in 0..t {
                for m in 0..k {
                    if i + m < c {
                        out[i][j] += e.get(&[j, n, m]) * z[i + m][n];
                    }
                }
            }
        }
    }
    out
}

pub fn ccf_oracle(t_map: &[Vec<f64>], c_map: &[Vec<f64>], additive: bool) -> Vec<Vec<f64>> {
    t_map
        .iter()
        .zip(c_map)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(&x, &y)| sigmoid(if additive { x + y } else { x * y }))
                .collect()
        })
        .collect()
}

pub fn flat(m: &[Vec<f64>]) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Prints the criterion line and fails the test when `pass` is false.
pub fn report(id: u32, name: &str, pass: bool, detail: &str) {
    print_criterion(id, name, pass, detail);
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

/// Writes straight to the process stdout so the line shows up even when the
/// test harness captures output.
pub fn print_criterion(id: u32, name: &str, pass: bool, detail: &str) {
    use std::io::Write;
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {id:>2} {verdict:<4} {name}: {detail}");
    let _ = out.flush();
}

pub type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

pub const SMOOTH_OPS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "affine",
    "sigmoid",
    "sum",
    "mean",
    "reshape",
    "permute",
    "mean_trailing",
    "window_mean_last",
    "index_first",
    "conv2d",
    "conv1d",
    "max_pool",
    "avg_pool",
    "fully_connected",
    "squeeze",
    "tla",
    "cla",
    "ccf_multiply",
    "ccf_add",
    "recalibrate",
    "tcja_forward",
    "smse_loss",
];

/// Distinct values, so max pooling has no ties within a finite-difference step.
fn distinct(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    v.shuffle(r);
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// Random inputs and a graph builder for one smooth operation.
pub fn smooth_case(op: &str, r: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Build) {
    use tcja_core::attention::{
        ccf, cla, recalibrate, squeeze, tcja_forward, tla, Fusion, TcjaVars,
    };
    use tcja_core::autodiff::{Conv2dOptions, PoolKind};
    use tcja_core::train::smse_loss;

    let mut u = |shape: &[usize]| uniform(shape, -1.0, 1.0, r);
    match op {
        "add" | "sub" | "mul" => {
            let a = u(&[2, 3, 4]);
            let b = u(&[3, 1]);
            let op = op.to_string();
            (
                vec![a, b],
                Box::new(move |t, v| match op.as_str() {
                    "add" => t.add(v[0], v[1]),
                    "sub" => t.sub(v[1], v[0]),
                    _ => t.mul(v[0], v[1]),
                }),
            )
        }
        "affine" => (
            vec![u(&[5])],
            Box::new(|t, v| Ok(t.affine(v[0], -1.7, 0.3))),
        ),
        "sigmoid" => (
            vec![u(&[6]).map(|x| 3.0 * x)],
            Box::new(|t, v| Ok(t.sigmoid(v[0]))),
        ),
        "sum" => (vec![u(&[2, 3])], Box::new(|t, v| Ok(t.sum(v[0])))),
        "mean" => (vec![u(&[2, 3])], Box::new(|t, v| Ok(t.mean(v[0])))),
        "reshape" => (vec![u(&[2, 3])], Box::new(|t, v| t.reshape(v[0], &[3, 2]))),
        "permute" => (
            vec![u(&[2, 3, 4])],
            Box::new(|t, v| t.permute(v[0], &[2, 0, 1])),
        ),
        "mean_trailing" => (
            vec![u(&[2, 3, 4])],
            Box::new(|t, v| t.mean_trailing(v[0], 2)),
        ),
        "window_mean_last" => (
            vec![u(&[2, 6])],
            Box::new(|t, v| t.window_mean_last(v[0], 3)),
        ),
        "index_first" => (vec![u(&[3, 2, 2])], Box::new(|t, v| t.index_first(v[0], 1))),
        "conv2d" => {
            let stride = 1 + (u(&[1]).data()[0] > 0.0) as usize;
            let padding = (u(&[1]).data()[0] > 0.0) as usize;
            let x = u(&[2, 2, 5, 5]);
            let k = u(&[3, 2, 3, 3]);
            (
                vec![x, k],
                Box::new(move |t, v| t.conv2d(v[0], v[1], Conv2dOptions { stride, padding })),
            )
        }
        "conv1d" => (
            vec![u(&[2, 3, 5]), u(&[4, 3, 2])],
            Box::new(|t, v| t.conv1d(v[0], v[1], 1)),
        ),
        "max_pool" => (
            vec![distinct(&[2, 2, 4, 4], r)],
            Box::new(|t, v| t.pool2d(v[0], PoolKind::Max, 2)),
        ),
        "avg_pool" => (
            vec![u(&[2, 2, 4, 4])],
            Box::new(|t, v| t.pool2d(v[0], PoolKind::Avg, 2)),
        ),
        "fully_connected" => (
            vec![u(&[3, 4]), u(&[4, 2]), u(&[2])],
            Box::new(|t, v| t.fully_connected(v[0], v[1], v[2])),
        ),
        "squeeze" => (vec![u(&[3, 2, 2, 3])], Box::new(|t, v| squeeze(t, v[0]))),
        "tla" => (
            vec![u(&[4, 5]), u(&[4, 4, 3])],
            Box::new(|t, v| tla(t, v[0], v[1])),
        ),
        "cla" => (
            vec![u(&[4, 5]), u(&[5, 5, 3])],
            Box::new(|t, v| cla(t, v[0], v[1])),
        ),
        "ccf_multiply" => (
            vec![u(&[3, 4]), u(&[3, 4])],
            Box::new(|t, v| ccf(t, v[0], v[1], Fusion::Multiply)),
        ),
        "ccf_add" => (
            vec![u(&[3, 4]), u(&[3, 4])],
            Box::new(|t, v| ccf(t, v[0], v[1], Fusion::Add)),
        ),
        "recalibrate" => (
            vec![u(&[3, 2, 2, 2]), u(&[2, 3])],
            Box::new(|t, v| recalibrate(t, v[0], v[1])),
        ),
        "tcja_forward" => {
            let x = u(&[4, 3, 2, 2]);
            let w = u(&[3, 3, 2]);
            let e = u(&[4, 4, 2]);
            (
                vec![x, w, e],
                Box::new(|t, v| {
                    let vars = TcjaVars {
                        w: v[1],
                        e: v[2],
                        fusion: Fusion::Multiply,
                    };
                    Ok(tcja_forward(t, v[0], &vars)?.0)
                }),
            )
        }
        "smse_loss" => {
            let target = u(&[2, 3]);
            (
                vec![u(&[4, 2, 3])],
                Box::new(move |t, v| smse_loss(t, v[0], &target)),
            )
        }
        other => panic!("unknown op {other}"),
    }
}
