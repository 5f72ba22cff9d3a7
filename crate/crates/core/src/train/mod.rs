//! Loss, optimisers, the training loop, evaluation and checkpoints.

pub mod checkpoint;
pub mod loss;
pub mod optim;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointMeta, Record, TensorData};
pub use loss::{predict_from_outputs, predict_label, smse_loss};
pub use optim::{Optimizer, OptimizerKind};

use crate::arch::parse_arch;
use crate::autodiff::Tape;
use crate::data::augment::{augment, one_hot, AugmentPolicy, SoftSample};
use crate::data::{stack_batch, Dataset};
use crate::error::{Error, Result};
use crate::network::{time_mean, Mode, Network};
use crate::scalar::{Precision, Scalar};
use crate::tensor::Tensor;

pub const METRICS_FILE: &str = "metrics.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const METRICS_HEADER: &str = "epoch,train_loss,test_acc,wall_seconds";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
    pub optimizer: OptimizerKind,
    /// Training-time augmentation; `None` trains on raw frames.
    pub augment: Option<AugmentPolicy>,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 16,
            epochs: 50,
            seed: 0,
            precision: Precision::F32,
            optimizer: OptimizerKind::Adam,
            augment: None,
            eval_batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::invalid("batch sizes must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_acc: f64,
    pub wall_seconds: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.3}",
            self.epoch, self.train_loss, self.test_acc, self.wall_seconds
        )
    }
}

/// Metrics CSV text for a history.
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in history {
        out.push_str(&m.csv_row());
        out.push('\n');
    }
    out
}

/// Network, optimiser state, generator and epoch counter: everything a
/// checkpoint holds.
#[derive(Debug, Clone)]
pub struct TrainState<F> {
    pub net: Network<F>,
    pub optimizer: Optimizer<F>,
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
}

fn rng_words(rng: &ChaCha8Rng) -> Vec<u64> {
    let mut words: Vec<u64> = rng
        .get_seed()
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let pos = rng.get_word_pos();
    words.extend([rng.get_stream(), pos as u64, (pos >> 64) as u64]);
    words
}

fn rng_from_words(words: &[u64]) -> Result<ChaCha8Rng> {
    if words.len() != 7 {
        return Err(Error::Checkpoint(format!(
            "state.rng holds {} words, expected 7",
            words.len()
        )));
    }
    let mut seed = [0u8; 32];
    for (chunk, w) in seed.chunks_exact_mut(8).zip(&words[..4]) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(words[4]);
    rng.set_word_pos(words[5] as u128 | (words[6] as u128) << 64);
    Ok(rng)
}

impl<F: Scalar> TrainState<F> {
    pub fn new(net: Network<F>, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let optimizer = Optimizer::new(cfg.optimizer, cfg.lr, net.params())?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(TrainState {
            net,
            optimizer,
            rng,
            epoch: 0,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let params = self.net.params();
        let mut records: Vec<Record> = params
            .iter()
            .map(|p| Record::tensor(&p.name, &p.value))
            .collect();
        for (p, m) in params.iter().zip(&self.optimizer.m) {
            records.push(Record::tensor(format!("adam.m.{}", p.name), m));
        }
        for (p, v) in params.iter().zip(&self.optimizer.v) {
            records.push(Record::tensor(format!("adam.v.{}", p.name), v));
        }
        let words = rng_words(&self.rng);
        records.push(Record {
            name: "state.rng".into(),
            shape: vec![words.len()],
            data: TensorData::U64(words),
        });
        Checkpoint {
            arch: self.net.arch().render(),
            meta: CheckpointMeta {
                network: self.net.config().clone(),
                precision: F::PRECISION,
                epoch: self.epoch,
                optimizer: self.optimizer.kind,
                lr: self.optimizer.lr,
                step: self.optimizer.step,
            },
            records,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let net = network_from_checkpoint::<F>(ck)?;
        let find = |name: &str| {
            ck.record(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing record {name}")))
        };
        let mut optimizer = Optimizer::new(ck.meta.optimizer, ck.meta.lr, net.params())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        optimizer.step = ck.meta.step;
        for (i, p) in net.params().iter().enumerate() {
            for (prefix, slot) in [
                ("adam.m.", &mut optimizer.m[i]),
                ("adam.v.", &mut optimizer.v[i]),
            ] {
                let t = find(&format!("{prefix}{}", p.name))?.to_tensor::<F>()?;
                if t.shape() != p.value.shape() {
                    return Err(Error::Checkpoint(format!(
                        "{prefix}{} has the wrong shape",
                        p.name
                    )));
                }
                *slot = t;
            }
        }
        let rng = match &find("state.rng")?.data {
            TensorData::U64(words) => rng_from_words(words)?,
            _ => return Err(Error::Checkpoint("state.rng must be u64".into())),
        };
        Ok(TrainState {
            net,
            optimizer,
            rng,
            epoch: ck.meta.epoch,
        })
    }
}

/// Rebuilds the network stored in a checkpoint. Every parameter must be
/// present with the shape the architecture implies.
pub fn network_from_checkpoint<F: Scalar>(ck: &Checkpoint) -> Result<Network<F>> {
    if ck.meta.precision != F::PRECISION {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} parameters, requested {}",
            ck.meta.precision.name(),
            F::PRECISION.name()
        )));
    }
    let arch = parse_arch(&ck.arch).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut net = Network::<F>::build(&arch, &ck.meta.network, 0)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let names: Vec<String> = net.params().iter().map(|p| p.name.clone()).collect();
    for name in &names {
        let rec = ck.record(name).ok_or_else(|| {
            Error::Checkpoint(format!("architecture expects {name}, not in checkpoint"))
        })?;
        net.set_param(name, rec.to_tensor()?)
            .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
    }
    let extra = ck.records.iter().find(|r| {
        !(r.name.starts_with("adam.") || r.name.starts_with("state.") || names.contains(&r.name))
    });
    if let Some(r) = extra {
        return Err(Error::Checkpoint(format!(
            "checkpoint tensor {} not used by the architecture",
            r.name
        )));
    }
    Ok(net)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassStats {
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassStats>,
    /// Mean spike rate of each LIF layer over all samples, steps and neurons.
    pub firing_rates: Vec<f64>,
    pub predictions: Vec<usize>,
    /// Time-averaged output per sample.
    pub rates: Vec<Vec<f64>>,
}

struct ChunkResult {
    rates: Vec<Vec<f64>>,
    spike_sums: Vec<(f64, usize)>,
}

/// Classifies every sample in eval mode. Chunks run in parallel; results
/// are combined in sample order.
pub fn evaluate<F: Scalar>(
    net: &Network<F>,
    data: &Dataset<F>,
    batch_size: usize,
) -> Result<EvalReport> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let chunks: Vec<ChunkResult> = indices
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let samples: Vec<&Tensor<F>> = chunk.iter().map(|&i| &data.frames[i]).collect();
            let input = stack_batch(&samples)?;
            let mut tape = Tape::new();
            let pass = net.forward(&mut tape, &input, Mode::Eval, false)?;
            let mean = time_mean(tape.value(pass.output));
            let k = mean.shape()[1];
            let rates = mean
                .data()
                .chunks(k)
                .map(|r| r.iter().map(|v| v.as_f64()).collect())
                .collect();
            let spike_sums = pass
                .spikes
                .iter()
                .map(|&s| {
                    let v = tape.value(s);
                    (v.data().iter().map(|x| x.as_f64()).sum(), v.numel())
                })
                .collect();
            Ok(ChunkResult { rates, spike_sums })
        })
        .collect::<Result<_>>()?;
    let mut rates = Vec::with_capacity(data.len());
    let mut totals: Vec<(f64, usize)> = Vec::new();
    for c in chunks {
        rates.extend(c.rates);
        if totals.is_empty() {
            totals = vec![(0.0, 0); c.spike_sums.len()];
        }
        for (t, s) in totals.iter_mut().zip(c.spike_sums) {
            t.0 += s.0;
            t.1 += s.1;
        }
    }
    let predictions: Vec<usize> = rates.iter().map(|r| predict_label(r)).collect();
    let mut per_class = vec![ClassStats::default(); data.num_classes];
    for (&p, &l) in predictions.iter().zip(&data.labels) {
        per_class[l].total += 1;
        if p == l {
            per_class[l].correct += 1;
        }
    }
    let correct: usize = per_class.iter().map(|c| c.correct).sum();
    Ok(EvalReport {
        accuracy: if data.is_empty() {
            0.0
        } else {
            correct as f64 / data.len() as f64
        },
        per_class,
        firing_rates: totals
            .iter()
            .map(|&(s, n)| if n == 0 { 0.0 } else { s / n as f64 })
            .collect(),
        predictions,
        rates,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub history: Vec<EpochMetrics>,
    /// Epoch of the best test accuracy (0 is the initial state).
    pub best_epoch: usize,
    pub best_acc: Option<f64>,
}

/// Where the loop writes its artifacts.
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub metrics: PathBuf,
    pub best: PathBuf,
    pub last: PathBuf,
}

impl OutputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        OutputPaths {
            metrics: dir.join(METRICS_FILE),
            best: dir.join(BEST_CHECKPOINT),
            last: dir.join(LAST_CHECKPOINT),
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One optimisation step on a batch; returns the batch loss.
pub fn train_step<F: Scalar>(
    state: &mut TrainState<F>,
    data: &Dataset<F>,
    batch: &[usize],
    policy: Option<&AugmentPolicy>,
) -> Result<f64> {
    let k = data.num_classes;
    let mut samples: Vec<SoftSample<F>> = batch
        .iter()
        .map(|&i| SoftSample {
            frames: data.frames[i].clone(),
            label: one_hot(data.labels[i], k),
        })
        .collect();
    if let Some(policy) = policy {
        let originals = samples.clone();
        for (j, s) in samples.iter_mut().enumerate() {
            let partner = &originals[(j + 1) % originals.len()];
            *s = augment(s, Some(partner), policy, &mut state.rng)?;
        }
    }
    let frames: Vec<&Tensor<F>> = samples.iter().map(|s| &s.frames).collect();
    let input = stack_batch(&frames)?;
    let target = Tensor::new(
        vec![batch.len(), k],
        samples
            .iter()
            .flat_map(|s| s.label.iter().copied())
            .collect(),
    )?;
    let mut tape = Tape::new();
    let pass = state
        .net
        .forward(&mut tape, &input, Mode::Train(&mut state.rng), true)?;
    let loss = smse_loss(&mut tape, pass.output, &target)?;
    let value = tape.value(loss).data()[0].as_f64();
    if !value.is_finite() {
        return Err(Error::NanLoss {
            epoch: state.epoch + 1,
            batch: 0,
        });
    }
    tape.backward(loss)?;
    let grads: Vec<Option<&[F]>> = pass.params.iter().map(|&v| tape.grad(v)).collect();
    state.optimizer.apply(state.net.params_mut(), &grads)?;
    Ok(value)
}

/// Trains from `state.epoch` up to `cfg.epochs`, evaluating on `test`
/// after every epoch. With `out`, rewrites the metrics CSV and the last
/// checkpoint every epoch and the best checkpoint whenever test accuracy
/// improves; the initial state is saved before the first epoch.
pub fn train<F: Scalar>(
    state: &mut TrainState<F>,
    train_set: &Dataset<F>,
    test_set: &Dataset<F>,
    cfg: &TrainConfig,
    out: Option<&OutputPaths>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutput> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let start = Instant::now();
    let mut history = Vec::new();
    let mut best_epoch = state.epoch;
    let mut best_acc = None;
    if let Some(out) = out {
        write_text(&out.metrics, &metrics_csv(&history))?;
        let ck = state.to_checkpoint();
        ck.save(&out.last)?;
        ck.save(&out.best)?;
    }
    while state.epoch < cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut state.rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let loss =
                train_step(state, train_set, batch, cfg.augment.as_ref()).map_err(|e| match e {
                    Error::NanLoss { epoch, .. } => Error::NanLoss { epoch, batch: b },
                    other => other,
                })?;
            loss_sum += loss * batch.len() as f64;
        }
        state.epoch += 1;
        let test_acc = if test_set.is_empty() {
            0.0
        } else {
            evaluate(&state.net, test_set, cfg.eval_batch_size)?.accuracy
        };
        let m = EpochMetrics {
            epoch: state.epoch,
            train_loss: loss_sum / train_set.len() as f64,
            test_acc,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        history.push(m);
        on_epoch(&m);
        let improved = best_acc.map_or(true, |b| test_acc > b);
        if improved {
            best_acc = Some(test_acc);
            best_epoch = state.epoch;
        }
        if let Some(out) = out {
            write_text(&out.metrics, &metrics_csv(&history))?;
            let ck = state.to_checkpoint();
            ck.save(&out.last)?;
            if improved {
                ck.save(&out.best)?;
            }
        }
    }
    Ok(TrainOutput {
        history,
        best_epoch,
        best_acc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;

    fn tiny() -> (Network<f64>, Dataset<f64>) {
        let arch = parse_arch("4FC-LIF-2FC").unwrap();
        let cfg = NetworkConfig {
            channels: 1,
            height: 2,
            width: 2,
            time_steps: 3,
            num_classes: 2,
            ..NetworkConfig::default()
        };
        let net = Network::build(&arch, &cfg, 1).unwrap();
        let frames = (0..6)
            .map(|i| Tensor::from_fn(&[3, 1, 2, 2], |k| ((i + k) % 3) as f64))
            .collect();
        let data = Dataset::new(frames, (0..6).map(|i| i % 2).collect(), 2).unwrap();
        (net, data)
    }

    #[test]
    fn zero_epochs_keep_initial_state() {
        let (net, data) = tiny();
        let cfg = TrainConfig {
            epochs: 0,
            precision: Precision::F64,
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(net.clone(), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = OutputPaths::in_dir(dir.path());
        let out = train(&mut state, &data, &data, &cfg, Some(&paths), |_| {}).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(
            fs::read_to_string(&paths.metrics).unwrap(),
            format!("{METRICS_HEADER}\n")
        );
        let back = network_from_checkpoint::<f64>(&Checkpoint::load(&paths.best).unwrap()).unwrap();
        assert_eq!(back.params(), net.params());
    }

    #[test]
    fn state_round_trip() {
        let (net, data) = tiny();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            precision: Precision::F64,
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(net, &cfg).unwrap();
        train(&mut state, &data, &data, &cfg, None, |_| {}).unwrap();
        let ck = state.to_checkpoint();
        let bytes = ck.encode().unwrap();
        let back =
            TrainState::<f64>::from_checkpoint(&Checkpoint::decode(&bytes).unwrap()).unwrap();
        assert_eq!(back.to_checkpoint().encode().unwrap(), bytes);
        assert_eq!(back.rng, state.rng);
        assert_eq!(back.epoch, 2);
    }

    #[test]
    fn wrong_precision_rejected() {
        let (net, _) = tiny();
        let state = TrainState::new(net, &TrainConfig::default()).unwrap();
        let ck = state.to_checkpoint();
        assert!(network_from_checkpoint::<f32>(&ck).is_err());
    }

    #[test]
    fn evaluation_matches_recount() {
        let (net, data) = tiny();
        let a = evaluate(&net, &data, 4).unwrap();
        let b = evaluate(&net, &data, 1).unwrap();
        assert_eq!(a, b);
        let mut correct = 0;
        for (i, f) in data.frames.iter().enumerate() {
            let x = f.clone().reshape(&[3, 1, 1, 2, 2]).unwrap();
            let rates = net.rates(&x).unwrap();
            if predict_label(rates.data()) == data.labels[i] {
                correct += 1;
            }
        }
        assert_eq!(a.accuracy, correct as f64 / data.len() as f64);
    }

    #[test]
    fn metrics_rows() {
        let m = EpochMetrics {
            epoch: 1,
            train_loss: 0.25,
            test_acc: 0.5,
            wall_seconds: 1.23456,
        };
        assert_eq!(m.csv_row(), "1,0.25,0.5,1.235");
    }
}
