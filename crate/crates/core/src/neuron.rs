//! Leaky integrate-and-fire neurons with surrogate-gradient spiking.
//!
//! The membrane update is the explicit iterative form
//!
//! ```text
//! V_t = H_{t-1} + (I_t - (H_{t-1} - V_reset)) / tau
//! S_t = Θ(V_t - V_threshold)
//! H_t = V_t (1 - S_t) + V_reset S_t
//! ```
//!
//! Two routes produce the same numbers: [`lif_step`] composes primitive tape
//! ops one time step at a time, while [`lif_sequence`] runs the whole
//! sequence as a single fused op with a hand-written BPTT backward.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    #[default]
    Atan,
    Triangle,
}

/// Surrogate derivative used in place of the Heaviside derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surrogate {
    /// `α / (2 (1 + (π/2 · α · x)²))`
    ATan { alpha: f64 },
    /// `(1/γ²) · max(0, γ − |x − 1|)`
    Triangle { gamma: f64 },
}

impl Surrogate {
    pub fn derivative<F: Scalar>(&self, x: F) -> F {
        match *self {
            Surrogate::ATan { alpha } => {
                let a = F::lit(alpha);
                let u = F::lit(std::f64::consts::FRAC_PI_2) * a * x;
                a / (F::lit(2.0) * (F::one() + u * u))
            }
            Surrogate::Triangle { gamma } => {
                let g = F::lit(gamma);
                let tri = (g - (x - F::one()).abs()).max(F::zero());
                tri / (g * g)
            }
        }
    }

    /// Shift applied to `V - V_threshold` before evaluating the surrogate
    /// inside a neuron. The triangle formula is written in membrane
    /// coordinates with a unit threshold (peak at `x = 1`), so the neuron
    /// evaluates it at `V - V_threshold + 1`; ATan is centred on zero.
    pub fn membrane_offset(&self) -> f64 {
        match self {
            Surrogate::ATan { .. } => 0.0,
            Surrogate::Triangle { .. } => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifConfig {
    pub tau: f64,
    pub v_reset: f64,
    pub v_threshold: f64,
    pub surrogate: SurrogateKind,
    /// ATan sharpness.
    pub alpha: f64,
    /// Triangle half-width.
    pub gamma: f64,
    /// Keep the reset factor out of the gradient graph.
    pub detach_reset: bool,
}

impl Default for LifConfig {
    fn default() -> Self {
        LifConfig {
            tau: 2.0,
            v_reset: 0.0,
            v_threshold: 1.0,
            surrogate: SurrogateKind::Atan,
            alpha: 2.0,
            gamma: 1.0,
            detach_reset: true,
        }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::invalid(format!(
                "lif: tau must be > 0, got {}",
                self.tau
            )));
        }
        if !(self.v_threshold > self.v_reset) {
            return Err(Error::invalid(format!(
                "lif: v_threshold ({}) must exceed v_reset ({})",
                self.v_threshold, self.v_reset
            )));
        }
        if !(self.alpha > 0.0) || !(self.gamma > 0.0) {
            return Err(Error::invalid("lif: surrogate alpha and gamma must be > 0"));
        }
        Ok(())
    }

    pub fn surrogate(&self) -> Surrogate {
        match self.surrogate {
            SurrogateKind::Atan => Surrogate::ATan { alpha: self.alpha },
            SurrogateKind::Triangle => Surrogate::Triangle { gamma: self.gamma },
        }
    }
}

/// Post-reset membrane potential `H` carried between steps.
#[derive(Debug, Clone, Copy)]
pub struct LifState {
    pub h: Var,
}

impl LifState {
    /// Fresh state at `v_reset` for activations of `shape`.
    pub fn rest<F: Scalar>(tape: &mut Tape<F>, shape: &[usize], cfg: &LifConfig) -> Self {
        LifState {
            h: tape.constant(Tensor::full(shape, F::lit(cfg.v_reset))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LifStep {
    pub membrane: Var,
    pub spikes: Var,
    pub state: LifState,
}

/// Θ(x) forward with the configured surrogate evaluated at `x` in backward.
pub fn heaviside_surrogate<F: Scalar>(tape: &mut Tape<F>, x: Var, cfg: &LifConfig) -> Var {
    tape.heaviside(x, cfg.surrogate())
}

/// One LIF update built from primitive tape ops.
pub fn lif_step<F: Scalar>(
    tape: &mut Tape<F>,
    state: LifState,
    input: Var,
    cfg: &LifConfig,
) -> Result<LifStep> {
    if tape.shape(state.h) != tape.shape(input) {
        return Err(Error::ShapeMismatch {
            op: "lif_step",
            lhs: tape.shape(state.h).to_vec(),
            rhs: tape.shape(input).to_vec(),
        });
    }
    let inv_tau = F::lit(1.0 / cfg.tau);
    let leak = tape.affine(state.h, F::one(), F::lit(-cfg.v_reset));
    let drive = tape.sub(input, leak)?;
    let drive = tape.scale(drive, inv_tau);
    let membrane = tape.add(state.h, drive)?;

    let over = tape.affine(membrane, F::one(), F::lit(-cfg.v_threshold));
    let surrogate = cfg.surrogate();
    let spikes = tape.heaviside_offset(over, surrogate, surrogate.membrane_offset());

    let gate = if cfg.detach_reset {
        tape.detach(spikes)
    } else {
        spikes
    };
    let keep = tape.affine(gate, -F::one(), F::one());
    let kept = tape.mul(membrane, keep)?;
    let reset = tape.scale(gate, F::lit(cfg.v_reset));
    let h = tape.add(kept, reset)?;
    Ok(LifStep {
        membrane,
        spikes,
        state: LifState { h },
    })
}

pub(crate) fn lif_forward<F: Scalar>(
    input: &[F],
    steps: usize,
    cfg: &LifConfig,
) -> (Vec<F>, Vec<F>) {
    let m = input.len() / steps;
    let (vr, vth) = (F::lit(cfg.v_reset), F::lit(cfg.v_threshold));
    let inv_tau = F::lit(1.0 / cfg.tau);
    let mut h = vec![vr; m];
    let mut spikes = Vec::with_capacity(input.len());
    let mut membrane = Vec::with_capacity(input.len());
    for frame in input.chunks(m) {
        for (hk, &i) in h.iter_mut().zip(frame) {
            let v = *hk + (i - (*hk - vr)) * inv_tau;
            let s = if v - vth >= F::zero() {
                F::one()
            } else {
                F::zero()
            };
            *hk = v * (F::one() - s) + vr * s;
            spikes.push(s);
            membrane.push(v);
        }
    }
    (spikes, membrane)
}

pub(crate) fn lif_backward<F: Scalar>(
    g: &[F],
    v: &[F],
    s: &[F],
    steps: usize,
    cfg: &LifConfig,
    gx: &mut [F],
) {
    let m = g.len() / steps;
    let (vr, vth) = (F::lit(cfg.v_reset), F::lit(cfg.v_threshold));
    let inv_tau = F::lit(1.0 / cfg.tau);
    let surrogate = cfg.surrogate();
    let off = F::lit(surrogate.membrane_offset());
    // dL/dH_t flowing back from step t+1
    let mut gh = vec![F::zero(); m];
    for t in (0..steps).rev() {
        for k in 0..m {
            let i = t * m + k;
            let mut gs = g[i];
            if !cfg.detach_reset {
                gs += gh[k] * (vr - v[i]);
            }
            let gv = gs * surrogate.derivative(v[i] - vth + off) + gh[k] * (F::one() - s[i]);
            gx[i] += gv * inv_tau;
            gh[k] = gv * (F::one() - inv_tau);
        }
    }
}

/// Runs LIF dynamics over the leading (time) axis of `input` from a fresh
/// resting state, as one fused op. Output has the shape of `input`.
pub fn lif_sequence<F: Scalar>(tape: &mut Tape<F>, input: Var, cfg: &LifConfig) -> Result<Var> {
    let shape = tape.shape(input).to_vec();
    let steps = *shape.first().unwrap_or(&0);
    if steps == 0 {
        return Err(Error::invalid("lif_sequence: empty time dimension"));
    }
    let (s, v) = lif_forward(tape.value(input).data(), steps, cfg);
    let value = Tensor::new(shape, s.clone())?;
    Ok(tape.push(
        value,
        Op::Lif {
            input,
            steps,
            v,
            s,
            cfg: *cfg,
        },
    ))
}

/// Membrane potentials recorded by a fused [`lif_sequence`] node.
pub fn membrane_trace<F: Scalar>(tape: &Tape<F>, spikes: Var) -> Option<Tensor<F>> {
    tape.lif_membrane(spikes)
}

impl<F: Scalar> Tape<F> {
    fn lif_membrane(&self, v: Var) -> Option<Tensor<F>> {
        match &self.node(v).op {
            Op::Lif { v: mem, .. } => {
                Some(Tensor::new(self.shape(v).to_vec(), mem.clone()).expect("membrane shape"))
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(values: &[f64], cfg: &LifConfig) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[values.len(), 1], values).unwrap());
        let s = lif_sequence(&mut tape, x, cfg).unwrap();
        let v = membrane_trace(&tape, s).unwrap();
        (tape.value(s).data().to_vec(), v.into_data())
    }

    #[test]
    fn constant_drive_trace() {
        let (s, v) = seq(&[1.5; 4], &LifConfig::default());
        assert_eq!(v, vec![0.75, 1.125, 0.75, 1.125]);
        assert_eq!(s, vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn strong_pulse_spikes_immediately() {
        let (s, v) = seq(&[4.0], &LifConfig::default());
        assert_eq!(v, vec![2.0]);
        assert_eq!(s, vec![1.0]);
    }

    #[test]
    fn silent_without_input() {
        let (s, v) = seq(&[0.0; 6], &LifConfig::default());
        assert!(s.iter().all(|&x| x == 0.0));
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn threshold_is_inclusive() {
        // V = 1 exactly after one step from rest with I = 2
        let (s, _) = seq(&[2.0], &LifConfig::default());
        assert_eq!(s, vec![1.0]);
    }

    #[test]
    fn empty_sequence_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[0, 3]));
        assert!(lif_sequence(&mut tape, x, &LifConfig::default()).is_err());
    }

    #[test]
    fn step_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let cfg = LifConfig::default();
        let st = LifState::rest(&mut tape, &[2], &cfg);
        let x = tape.constant(Tensor::zeros(&[3]));
        assert!(lif_step(&mut tape, st, x, &cfg).is_err());
    }

    #[test]
    fn surrogate_peaks() {
        let atan = Surrogate::ATan { alpha: 2.0 };
        assert_eq!(atan.derivative(0.0f64), 1.0);
        let tri = Surrogate::Triangle { gamma: 1.0 };
        assert_eq!(tri.derivative(1.0f64), 1.0);
        assert_eq!(tri.derivative(2.0f64), 0.0);
        assert_eq!(tri.derivative(0.0f64), 0.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = LifConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.tau = 0.0;
        assert!(cfg.validate().is_err());
        cfg = LifConfig {
            v_threshold: -1.0,
            ..LifConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    /// Steps the composed route over T and returns (membranes, spikes, H).
    fn composed(
        tape: &mut Tape<f64>,
        x: Var,
        steps: usize,
        width: usize,
        cfg: &LifConfig,
    ) -> (Vec<Var>, Vec<Var>, Vec<Var>) {
        let mut state = LifState::rest(tape, &[width], cfg);
        let (mut vs, mut ss, mut hs) = (vec![], vec![], vec![]);
        for t in 0..steps {
            let it = tape.index_first(x, t).unwrap();
            let out = lif_step(tape, state, it, cfg).unwrap();
            vs.push(out.membrane);
            ss.push(out.spikes);
            hs.push(out.state.h);
            state = out.state;
        }
        (vs, ss, hs)
    }

    #[test]
    fn fused_and_composed_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for detach in [true, false] {
            for kind in [SurrogateKind::Atan, SurrogateKind::Triangle] {
                let cfg = LifConfig {
                    detach_reset: detach,
                    surrogate: kind,
                    ..LifConfig::default()
                };
                let (steps, width) = (6, 5);
                let x = Tensor::<f64>::from_fn(&[steps, width], |_| rng.gen_range(-0.5..2.5));
                let w = Tensor::<f64>::from_fn(&[steps, width], |_| rng.gen_range(-1.0..1.0));

                let mut fused = Tape::new();
                let xf = fused.param(x.clone());
                let s = lif_sequence(&mut fused, xf, &cfg).unwrap();
                let wf = fused.constant(w.clone());
                let l = fused.mul(s, wf).unwrap();
                let l = fused.sum(l);
                fused.backward(l).unwrap();

                let mut comp = Tape::new();
                let xc = comp.param(x.clone());
                let (vs, ss, _) = composed(&mut comp, xc, steps, width, &cfg);
                let mut total = None;
                for (t, &st) in ss.iter().enumerate() {
                    let wt =
                        Tensor::new(vec![width], w.data()[t * width..(t + 1) * width].to_vec())
                            .unwrap();
                    let wt = comp.constant(wt);
                    let p = comp.mul(st, wt).unwrap();
                    let p = comp.sum(p);
                    total = Some(match total {
                        None => p,
                        Some(acc) => comp.add(acc, p).unwrap(),
                    });
                }
                let l = total.unwrap();
                comp.backward(l).unwrap();

                let mem = membrane_trace(&fused, s).unwrap();
                for t in 0..steps {
                    assert_eq!(
                        comp.value(vs[t]).data(),
                        &mem.data()[t * width..(t + 1) * width]
                    );
                    assert_eq!(
                        comp.value(ss[t]).data(),
                        &fused.value(s).data()[t * width..(t + 1) * width]
                    );
                }
                let gf = fused.grad(xf).unwrap();
                let gc = comp.grad(xc).unwrap();
                for (a, b) in gf.iter().zip(gc) {
                    assert!(
                        (a - b).abs() < 1e-12,
                        "detach {detach} {kind:?}: {a} vs {b}"
                    );
                }
            }
        }
    }
}
