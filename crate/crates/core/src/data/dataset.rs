//! In-memory frame datasets and the on-disk manifest layout.
//!
//! A dataset directory holds one event file per sample and a manifest of
//! `path,label` lines; paths are relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use super::events::{read_events, write_events, EventFormat, EventStream};
use super::frames::integrate_frames;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (path, label) = line.rsplit_once(',').ok_or_else(|| {
            Error::Dataset(format!("manifest line {}: expected path,label", i + 1))
        })?;
        let label = label
            .trim()
            .parse()
            .map_err(|_| Error::Dataset(format!("manifest line {}: bad label {label:?}", i + 1)))?;
        out.push(ManifestEntry {
            path: base.join(path.trim()),
            label,
        });
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Loads every stream named by a manifest. `sensor` applies to CSV files
/// without a sensor line.
pub fn load_streams(
    manifest: &Path,
    sensor: Option<(u16, u16)>,
) -> Result<Vec<(EventStream, usize)>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let format = EventFormat::from_path(&e.path);
            Ok((read_events(&e.path, format, sensor)?, e.label))
        })
        .collect()
}

/// Writes `sample_NNNNN.<ext>` files plus a manifest into `dir`.
pub fn write_dataset(
    dir: &Path,
    streams: &[(EventStream, usize)],
    format: EventFormat,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (i, (stream, label)) in streams.iter().enumerate() {
        let name = format!("sample_{i:05}.{}", format.extension());
        write_events(&dir.join(&name), stream, format)?;
        manifest.push_str(&format!("{name},{label}\n"));
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Integrated `T×C×H×W` frames with hard labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F> {
    pub frames: Vec<Tensor<F>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<F: Scalar> Dataset<F> {
    pub fn new(frames: Vec<Tensor<F>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if frames.len() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} samples but {} labels",
                frames.len(),
                labels.len()
            )));
        }
        if let Some(first) = frames.first() {
            if first.rank() != 4 {
                return Err(Error::Dataset(format!(
                    "samples must be T×C×H×W, got {:?}",
                    first.shape()
                )));
            }
            if let Some(i) = frames.iter().position(|f| f.shape() != first.shape()) {
                return Err(Error::Dataset(format!(
                    "sample {i} has shape {:?}, expected {:?}",
                    frames[i].shape(),
                    first.shape()
                )));
            }
        }
        if let Some(i) = labels.iter().position(|&l| l >= num_classes) {
            return Err(Error::Dataset(format!(
                "sample {i} has label {} but there are {num_classes} classes",
                labels[i]
            )));
        }
        Ok(Dataset {
            frames,
            labels,
            num_classes,
        })
    }

    pub fn from_streams(
        streams: &[(EventStream, usize)],
        t_steps: usize,
        num_classes: usize,
    ) -> Result<Self> {
        let frames = streams
            .iter()
            .enumerate()
            .map(|(i, (s, _))| {
                integrate_frames(s, t_steps).map_err(|e| Error::Dataset(format!("sample {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            frames,
            streams.iter().map(|(_, l)| *l).collect(),
            num_classes,
        )
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `T×C×H×W` of every sample.
    pub fn sample_shape(&self) -> Option<&[usize]> {
        self.frames.first().map(|f| f.shape())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Dataset {
            frames: indices.iter().map(|&i| self.frames[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

/// Stacks `T×C×H×W` samples into a `T×B×C×H×W` batch.
pub fn stack_batch<F: Scalar>(samples: &[&Tensor<F>]) -> Result<Tensor<F>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("empty batch"))?;
    let s = first.shape();
    let t = s[0];
    let per_step = first.numel() / t.max(1);
    let b = samples.len();
    let mut data = Vec::with_capacity(first.numel() * b);
    for step in 0..t {
        for x in samples {
            if x.shape() != s {
                return Err(Error::ShapeMismatch {
                    op: "stack_batch",
                    lhs: s.to_vec(),
                    rhs: x.shape().to_vec(),
                });
            }
            data.extend_from_slice(&x.data()[step * per_step..(step + 1) * per_step]);
        }
    }
    let mut shape = vec![t, b];
    shape.extend_from_slice(&s[1..]);
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{gen_synthetic, SyntheticConfig};

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig {
            samples: 6,
            ..Default::default()
        };
        let streams = gen_synthetic(&cfg).unwrap();
        for format in [EventFormat::Bin, EventFormat::Csv] {
            let sub = dir.path().join(format.extension());
            let manifest = write_dataset(&sub, &streams, format).unwrap();
            assert_eq!(load_streams(&manifest, None).unwrap(), streams);
        }
    }

    #[test]
    fn bad_manifest_lines() {
        assert!(parse_manifest("a.bin\n", Path::new(".")).is_err());
        assert!(parse_manifest("a.bin,x\n", Path::new(".")).is_err());
        let ok = parse_manifest("# comment\n\na.bin, 3\n", Path::new("d")).unwrap();
        assert_eq!(
            ok,
            vec![ManifestEntry {
                path: PathBuf::from("d/a.bin"),
                label: 3
            }]
        );
    }

    #[test]
    fn stacking_interleaves_time() {
        let a = Tensor::<f64>::from_fn(&[2, 1, 1, 2], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[2, 1, 1, 2], |i| 10.0 + i as f64);
        let s = stack_batch(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 1, 1, 2]);
        assert_eq!(s.data(), &[0.0, 1.0, 10.0, 11.0, 2.0, 3.0, 12.0, 13.0]);
    }

    #[test]
    fn labels_checked() {
        let f = vec![Tensor::<f64>::zeros(&[1, 1, 1, 1])];
        assert!(Dataset::new(f.clone(), vec![2], 2).is_err());
        assert!(Dataset::new(f, vec![], 2).is_err());
    }
}
