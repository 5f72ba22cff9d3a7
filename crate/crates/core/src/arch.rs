//! Architecture strings.
//!
//! An architecture string is a dash-separated token list:
//!
//! | token          | layer                                  |
//! |----------------|----------------------------------------|
//! | `128C3`        | 3×3 convolution with 128 output maps   |
//! | `MP2` / `AP2`  | 2×2 max / average pooling              |
//! | `LIF`          | spiking neurons                        |
//! | `0.5DP`        | spiking dropout with ratio 0.5         |
//! | `512FC`        | fully connected, 512 outputs           |
//! | `Voting`       | average-pool voting onto the classes   |
//! | `TCJA`         | temporal-channel joint attention       |
//!
//! `TCJA` optionally carries kernel sizes and a fusion mode:
//! `TCJA2x3` sets `K_T = 2`, `K_C = 3`; a trailing `M` or `A` picks
//! multiplicative or additive fusion (`TCJA2x3A`, `TCJAA`).

use std::fmt;
use std::str::FromStr;

use crate::attention::Fusion;
use crate::error::{Error, Result};

/// Small DVS-style network used for the synthetic-data runs.
pub const DEFAULT_ARCH: &str = "16C3-LIF-MP2-TCJA-16C3-LIF-MP2-40FC-LIF-Voting";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv {
        out: usize,
        k: usize,
    },
    Lif,
    MaxPool(usize),
    AvgPool(usize),
    Dropout(f64),
    Fc(usize),
    Voting,
    Tcja {
        kernels: Option<(usize, usize)>,
        fusion: Option<Fusion>,
    },
}

impl LayerSpec {
    pub fn is_pool(&self) -> bool {
        matches!(self, LayerSpec::MaxPool(_) | LayerSpec::AvgPool(_))
    }

    pub fn is_tcja(&self) -> bool {
        matches!(self, LayerSpec::Tcja { .. })
    }

    /// Short name used in error messages and parameter names.
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Lif => "lif",
            LayerSpec::MaxPool(_) => "maxpool",
            LayerSpec::AvgPool(_) => "avgpool",
            LayerSpec::Dropout(_) => "dropout",
            LayerSpec::Fc(_) => "fc",
            LayerSpec::Voting => "voting",
            LayerSpec::Tcja { .. } => "tcja",
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv { out, k } => write!(f, "{out}C{k}"),
            LayerSpec::Lif => f.write_str("LIF"),
            LayerSpec::MaxPool(k) => write!(f, "MP{k}"),
            LayerSpec::AvgPool(k) => write!(f, "AP{k}"),
            LayerSpec::Dropout(p) => write!(f, "{p}DP"),
            LayerSpec::Fc(n) => write!(f, "{n}FC"),
            LayerSpec::Voting => f.write_str("Voting"),
            LayerSpec::Tcja { kernels, fusion } => {
                f.write_str("TCJA")?;
                if let Some((kt, kc)) = kernels {
                    write!(f, "{kt}x{kc}")?;
                }
                match fusion {
                    Some(Fusion::Multiply) => f.write_str("M"),
                    Some(Fusion::Add) => f.write_str("A"),
                    None => Ok(()),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchSpec {
    pub layers: Vec<LayerSpec>,
}

fn positive(digits: &str, token: &str, pos: usize) -> Result<usize> {
    match digits.parse::<usize>() {
        Ok(n) if n > 0 && digits.bytes().all(|b| b.is_ascii_digit()) => Ok(n),
        _ => Err(Error::Arch(format!(
            "malformed number {digits:?} in token {token:?} at position {pos}"
        ))),
    }
}

fn parse_tcja(rest: &str, token: &str, pos: usize) -> Result<LayerSpec> {
    let (body, fusion) = match rest.as_bytes().last() {
        Some(b'M') => (&rest[..rest.len() - 1], Some(Fusion::Multiply)),
        Some(b'A') => (&rest[..rest.len() - 1], Some(Fusion::Add)),
        _ => (rest, None),
    };
    let kernels = if body.is_empty() {
        None
    } else {
        let (kt, kc) = body.split_once('x').ok_or_else(|| {
            Error::Arch(format!(
                "malformed kernel sizes in token {token:?} at position {pos}, expected TCJA<kt>x<kc>"
            ))
        })?;
        Some((positive(kt, token, pos)?, positive(kc, token, pos)?))
    };
    Ok(LayerSpec::Tcja { kernels, fusion })
}

fn parse_token(token: &str, pos: usize) -> Result<LayerSpec> {
    match token {
        "LIF" => return Ok(LayerSpec::Lif),
        "Voting" => return Ok(LayerSpec::Voting),
        _ => {}
    }
    if let Some(rest) = token.strip_prefix("TCJA") {
        return parse_tcja(rest, token, pos);
    }
    if let Some(k) = token.strip_prefix("MP") {
        return Ok(LayerSpec::MaxPool(positive(k, token, pos)?));
    }
    if let Some(k) = token.strip_prefix("AP") {
        return Ok(LayerSpec::AvgPool(positive(k, token, pos)?));
    }
    if let Some(p) = token.strip_suffix("DP") {
        return match p.parse::<f64>() {
            Ok(v) if p.starts_with(|c: char| c.is_ascii_digit()) && (0.0..1.0).contains(&v) => {
                Ok(LayerSpec::Dropout(v))
            }
            _ => Err(Error::Arch(format!(
                "malformed dropout ratio {p:?} in token {token:?} at position {pos}, expected 0 <= p < 1"
            ))),
        };
    }
    if let Some(n) = token.strip_suffix("FC") {
        return Ok(LayerSpec::Fc(positive(n, token, pos)?));
    }
    if let Some((out, k)) = token.split_once('C') {
        if !out.is_empty() && out.bytes().all(|b| b.is_ascii_digit()) {
            return Ok(LayerSpec::Conv {
                out: positive(out, token, pos)?,
                k: positive(k, token, pos)?,
            });
        }
    }
    Err(Error::Arch(format!(
        "unknown token {token:?} at position {pos}"
    )))
}

/// Parses an architecture string. Positions in errors are 1-based token indices.
pub fn parse_arch(spec: &str) -> Result<ArchSpec> {
    let spec = spec.trim();
    if spec.is_empty() {
        return Err(Error::Arch("empty architecture spec".into()));
    }
    let mut layers = Vec::new();
    for (i, token) in spec.split('-').enumerate() {
        let pos = i + 1;
        let layer = parse_token(token.trim(), pos)?;
        if layer == LayerSpec::Lif
            && !matches!(
                layers.last(),
                Some(LayerSpec::Conv { .. } | LayerSpec::Fc(_))
            )
        {
            return Err(Error::Arch(format!(
                "LIF at position {pos} must follow a convolution or fully connected layer"
            )));
        }
        layers.push(layer);
    }
    Ok(ArchSpec { layers })
}

impl ArchSpec {
    pub fn render(&self) -> String {
        self.to_string()
    }

    pub fn tcja_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_tcja()).count()
    }

    /// The same stack with every TCJA block removed.
    pub fn without_tcja(&self) -> ArchSpec {
        ArchSpec {
            layers: self
                .layers
                .iter()
                .copied()
                .filter(|l| !l.is_tcja())
                .collect(),
        }
    }

    /// Removes existing TCJA blocks and inserts one immediately before each
    /// of the last two pooling layers.
    pub fn with_tcja_before_last_two_pools(&self) -> ArchSpec {
        let base = self.without_tcja();
        let pools: Vec<usize> = base
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_pool())
            .map(|(i, _)| i)
            .collect();
        let targets = &pools[pools.len().saturating_sub(2)..];
        let mut layers = Vec::with_capacity(base.layers.len() + 2);
        for (i, l) in base.layers.iter().enumerate() {
            if targets.contains(&i) {
                layers.push(LayerSpec::Tcja {
                    kernels: None,
                    fusion: None,
                });
            }
            layers.push(*l);
        }
        ArchSpec { layers }
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

impl FromStr for ArchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_arch(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_examples() {
        assert_eq!(
            parse_arch("128C3-LIF-MP2").unwrap().layers,
            vec![
                LayerSpec::Conv { out: 128, k: 3 },
                LayerSpec::Lif,
                LayerSpec::MaxPool(2)
            ]
        );
        assert_eq!(
            parse_arch("0.5DP-512FC-LIF").unwrap().layers,
            vec![LayerSpec::Dropout(0.5), LayerSpec::Fc(512), LayerSpec::Lif]
        );
    }

    #[test]
    fn empty_is_error() {
        assert!(parse_arch("").is_err());
        assert!(parse_arch("   ").is_err());
    }

    #[test]
    fn unknown_token_reports_position() {
        let err = parse_arch("16C3-LIF-XX2").unwrap_err().to_string();
        assert!(err.contains("XX2") && err.contains("position 3"), "{err}");
    }

    #[test]
    fn malformed_numbers() {
        for bad in [
            "C3",
            "16C",
            "16C0",
            "MPx",
            "1.5DP-4FC",
            "FC",
            "-1DP",
            "TCJA2x",
            "TCJA2y3",
            "16C3-LIF-MP2-TCJA0x1",
        ] {
            assert!(parse_arch(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn lif_needs_parameterized_predecessor() {
        assert!(parse_arch("LIF").is_err());
        assert!(parse_arch("16C3-MP2-LIF").is_err());
    }

    #[test]
    fn tcja_tokens_round_trip() {
        for s in ["TCJA", "TCJA2x3", "TCJAA", "TCJA1x1M"] {
            let spec = parse_arch(&format!("4C3-LIF-{s}")).unwrap();
            assert_eq!(spec.layers[2].to_string(), s);
        }
        assert_eq!(
            parse_arch("4C3-LIF-TCJA2x3A").unwrap().layers[2],
            LayerSpec::Tcja {
                kernels: Some((2, 3)),
                fusion: Some(Fusion::Add)
            }
        );
    }

    #[test]
    fn insertion_before_last_two_pools() {
        let spec = parse_arch("8C3-LIF-MP2-8C3-LIF-MP2-8C3-LIF-AP2-10FC-LIF").unwrap();
        assert_eq!(
            spec.with_tcja_before_last_two_pools().render(),
            "8C3-LIF-MP2-8C3-LIF-TCJA-MP2-8C3-LIF-TCJA-AP2-10FC-LIF"
        );
        let default = parse_arch(DEFAULT_ARCH).unwrap();
        assert_eq!(default.tcja_count(), 1);
        assert_eq!(default.without_tcja().tcja_count(), 0);
    }
}
