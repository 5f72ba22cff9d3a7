//! JSON run configuration with `--key value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tcja_core::arch::DEFAULT_ARCH;
use tcja_core::data::SyntheticConfig;
use tcja_core::network::NetworkConfig;
use tcja_core::train::TrainConfig;

use crate::error::{CliError, CliResult};

pub const RESOLVED_CONFIG: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub arch: String,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            arch: DEFAULT_ARCH.to_string(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            out_dir: PathBuf::from("runs/latest"),
        }
    }
}

/// Where samples come from. Without `manifest` both sets are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training samples, or all samples when `test_manifest` is absent (a
    /// stratified split is then taken with the training seed).
    pub manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    /// Sensor `[width, height]` for CSV files without a `# sensor` line.
    pub sensor: Option<(u16, u16)>,
    /// Training set generator.
    pub synthetic: SyntheticConfig,
    pub test_samples: usize,
    pub test_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            manifest: None,
            test_manifest: None,
            sensor: None,
            synthetic: SyntheticConfig {
                samples: 400,
                ..SyntheticConfig::default()
            },
            test_samples: 100,
            test_seed: 1,
        }
    }
}

/// Splits `--key value` pairs into those named in `own` and the rest.
pub fn split_flags(
    args: &[String],
    own: &[&str],
) -> CliResult<(Vec<(String, String)>, Vec<(String, String)>)> {
    if args.len() % 2 != 0 {
        return Err(CliError::Config(format!(
            "flags come in `--key value` pairs; `{}` has no value",
            args.last().unwrap()
        )));
    }
    let mut mine = Vec::new();
    let mut rest = Vec::new();
    for pair in args.chunks(2) {
        let key = pair[0]
            .strip_prefix("--")
            .filter(|k| !k.is_empty())
            .ok_or_else(|| CliError::Config(format!("expected `--key`, got `{}`", pair[0])))?
            .replace('-', "_");
        if own.contains(&key.as_str()) {
            mine.push((key, pair[1].clone()));
        } else {
            rest.push((key, pair[1].clone()));
        }
    }
    Ok((mine, rest))
}

pub fn flag<'a>(flags: &'a [(String, String)], key: &str) -> Option<&'a str> {
    flags
        .iter()
        .rev()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}

pub fn parse_flag<T: std::str::FromStr>(
    flags: &[(String, String)],
    key: &str,
) -> CliResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    flag(flags, key)
        .map(|v| {
            v.parse()
                .map_err(|e| CliError::Config(format!("--{key} {v}: {e}")))
        })
        .transpose()
}

/// Every path in `root` that ends with `suffix`.
fn find_key(root: &Value, suffix: &[&str], prefix: &mut Vec<String>, found: &mut Vec<Vec<String>>) {
    if let Value::Object(map) = root {
        for (k, v) in map {
            prefix.push(k.clone());
            if prefix.len() >= suffix.len()
                && prefix[prefix.len() - suffix.len()..]
                    .iter()
                    .zip(suffix)
                    .all(|(a, b)| a == b)
            {
                found.push(prefix.clone());
            }
            find_key(v, suffix, prefix, found);
            prefix.pop();
        }
    }
}

/// Sets one field. The key names a unique field anywhere in the
/// configuration, either bare (`epochs`) or by a dotted path suffix
/// (`train.seed`); a dotted key matching nothing is taken as a full path,
/// which creates optional sections. The value is read as JSON and falls
/// back to a plain string.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut found = Vec::new();
    find_key(root, &parts, &mut Vec::new(), &mut found);
    let path = match found.len() {
        0 if parts.len() > 1 => parts.iter().map(|p| p.to_string()).collect(),
        0 => return Err(CliError::Config(format!("unknown option --{key}"))),
        1 => found.pop().unwrap(),
        _ => {
            let names: Vec<String> = found.iter().map(|p| p.join(".")).collect();
            return Err(CliError::Config(format!(
                "--{key} is ambiguous; use one of --{}",
                names.join(", --")
            )));
        }
    };
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for part in &path {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("--{key}: `{part}` is not inside an object")))?
            .entry(part.clone())
            .or_insert(Value::Null);
    }
    *node = value;
    Ok(())
}

/// Reads `path` (or starts from defaults) and applies overrides. Unknown
/// keys in either place are rejected.
pub fn resolve<T>(path: Option<&Path>, overrides: &[(String, String)]) -> CliResult<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let base: T = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => T::default(),
    };
    let mut value = serde_json::to_value(&base).map_err(|e| CliError::Config(e.to_string()))?;
    for (k, v) in overrides {
        apply_override(&mut value, k, v)?;
    }
    serde_json::from_value(value).map_err(|e| CliError::Config(format!("after overrides: {e}")))
}

pub fn to_json<T: Serialize>(cfg: &T) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("configuration serialises");
    s.push('\n');
    s
}
