//! Moving-bar event streams.
//!
//! Class `k` of `K` sweeps a bar across the sensor in direction
//! `θ = 2πk/K`. Pixels the bar's leading edge enters emit ON events, pixels
//! its trailing edge leaves emit OFF events. Every sample draws its own
//! start offset, speed jitter and uniform noise events from a generator
//! seeded by `(seed, sample index)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::events::{Event, EventStream};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub height: u16,
    pub width: u16,
    pub samples: usize,
    pub seed: u64,
    /// Bar thickness in pixels.
    pub bar_width: f64,
    /// Sweep positions per sample.
    pub ticks: usize,
    /// Microseconds per tick.
    pub tick_us: u32,
    /// Probability that an edge pixel actually fires.
    pub edge_prob: f64,
    /// Noise events per pixel per sample.
    pub noise_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            classes: 4,
            height: 16,
            width: 16,
            samples: 100,
            seed: 0,
            bar_width: 2.0,
            ticks: 32,
            tick_us: 1000,
            edge_prob: 0.8,
            noise_rate: 0.2,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if ![2, 4, 8].contains(&self.classes) {
            return Err(Error::invalid(format!(
                "synthetic data supports 2, 4 or 8 classes, got {}",
                self.classes
            )));
        }
        if self.height < 2 || self.width < 2 || self.ticks < 2 {
            return Err(Error::invalid(
                "synthetic sensor and tick count must be at least 2",
            ));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) || self.noise_rate < 0.0 || self.bar_width <= 0.0
        {
            return Err(Error::invalid(
                "synthetic probabilities and rates out of range",
            ));
        }
        Ok(())
    }
}

/// Label of sample `index`.
pub fn synthetic_label(index: usize, classes: usize) -> usize {
    index % classes
}

/// One sample. Deterministic in `(cfg.seed, index)`.
pub fn synthetic_sample(cfg: &SyntheticConfig, index: usize) -> Result<(EventStream, usize)> {
    cfg.validate()?;
    let label = synthetic_label(index, cfg.classes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let theta = 2.0 * PI * label as f64 / cfg.classes as f64;
    let (dx, dy) = (theta.cos(), theta.sin());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let proj: Vec<f64> = (0..h * w)
        .map(|i| ((i % w) as f64 - cx) * dx + ((i / w) as f64 - cy) * dy)
        .collect();
    let reach = proj.iter().fold(0.0f64, |m, &s| m.max(s.abs())) + cfg.bar_width;
    let start = -reach + rng.gen_range(0.0..reach * 0.25);
    let speed = (2.0 * reach / cfg.ticks as f64) * rng.gen_range(0.85..1.15);
    let covered = |pos: f64, s: f64| s >= pos - cfg.bar_width && s < pos;

    let mut events = Vec::new();
    let mut prev = start;
    for k in 1..=cfg.ticks {
        let pos = start + speed * k as f64;
        let t0 = (k - 1) as u32 * cfg.tick_us;
        for (i, &s) in proj.iter().enumerate() {
            let (was, is) = (covered(prev, s), covered(pos, s));
            if was == is || !rng.gen_bool(cfg.edge_prob) {
                continue;
            }
            events.push(Event {
                t: t0 + rng.gen_range(0..cfg.tick_us.max(1)),
                x: (i % w) as u16,
                y: (i / w) as u16,
                p: is as u8,
            });
        }
        prev = pos;
    }
    let duration = cfg.ticks as u32 * cfg.tick_us;
    let noise = (cfg.noise_rate * (w * h) as f64).round() as usize;
    for _ in 0..noise {
        events.push(Event {
            t: rng.gen_range(0..duration.max(1)),
            x: rng.gen_range(0..cfg.width),
            y: rng.gen_range(0..cfg.height),
            p: rng.gen_range(0..2),
        });
    }
    events.sort_by_key(|e| (e.t, e.y, e.x, e.p));
    Ok((EventStream::new(cfg.width, cfg.height, events)?, label))
}

/// `cfg.samples` streams with labels `i % classes`.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<Vec<(EventStream, usize)>> {
    cfg.validate()?;
    (0..cfg.samples).map(|i| synthetic_sample(cfg, i)).collect()
}
