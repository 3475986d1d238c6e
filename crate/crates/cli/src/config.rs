//! Run configuration: one TOML file of flat dotted keys plus `--set` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use aestylegan::eval::EvalConfig;
use aestylegan::trainer::TrainConfig;
use aestylegan::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { rows: 4, cols: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub trainer: TrainConfig,
    /// Image directory or `synthetic://blobs?...` URI.
    pub data: String,
    pub out_dir: PathBuf,
    /// Metrics-log cadence in iterations.
    pub log_every: u64,
    /// Include per-iteration wall time in the metrics log (makes it non-reproducible).
    pub log_timing: bool,
    /// 0 disables periodic checkpoints; a final one is always written.
    pub checkpoint_every: u64,
    /// Cadence of sample and reconstruction grids, 0 disables.
    pub sample_every: u64,
    /// Cadence of full evaluations during training, 0 disables.
    pub metric_every: u64,
    pub grid: GridConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            trainer: TrainConfig::default(),
            data: "synthetic://blobs?n=1024&seed=0".into(),
            out_dir: PathBuf::from("runs/aestylegan"),
            log_every: 1,
            log_timing: false,
            checkpoint_every: 500,
            sample_every: 500,
            metric_every: 0,
            grid: GridConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.trainer.validate()?;
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        if self.grid.rows == 0 || self.grid.cols == 0 {
            return Err(Error::Config("grid rows and cols must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(config_err)
    }

    /// Flat `a.b.c = value` lines, sorted by key.
    pub fn to_toml(&self) -> Result<String> {
        let tree = toml::Value::try_from(self).map_err(config_err)?;
        let mut lines = Vec::new();
        flatten("", &tree, &mut lines);
        let mut out = lines.join("\n");
        out.push('\n');
        Ok(out)
    }

    /// Defaults, then the file at `path` (if any), then each `key=value` override.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        let cfg = base.with_overrides(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut tree = toml::Value::try_from(self).map_err(config_err)?;
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| Error::Config(format!("override {o:?} is not KEY=VALUE")))?;
            set_path(&mut tree, key.trim(), parse_value(raw.trim()))?;
        }
        tree.try_into().map_err(config_err)
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, child) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        leaf => out.push(format!("{prefix} = {leaf}")),
    }
}

/// A TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(tree: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        let child = table.get_mut(*part).ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        if i + 1 == parts.len() {
            if child.is_table() {
                return Err(Error::Config(format!("{key:?} is a section, not a value")));
            }
            *child = value;
            return Ok(());
        }
        node = child;
    }
    Err(Error::Config("empty config key".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use aestylegan::trainer::TrainMode;

    #[test]
    fn default_round_trip_is_fixed_point() {
        let c = RunConfig::default();
        let s = c.to_toml().unwrap();
        let back = RunConfig::from_toml(&s).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml().unwrap(), s);
        assert!(s.lines().all(|l| !l.starts_with('[')));
    }

    #[test]
    fn overrides_apply_with_types() {
        let c = RunConfig::default()
            .with_overrides(&["trainer.mode=DECOUPLED".into(), "trainer.batch_size=4".into(), "data=/tmp/x".into()])
            .unwrap();
        assert_eq!(c.trainer.mode, TrainMode::Decoupled);
        assert_eq!(c.trainer.batch_size, 4);
        assert_eq!(c.data, "/tmp/x");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::default().with_overrides(&["trainer.nope=1".into()]), Err(Error::Config(_))));
        assert!(matches!(RunConfig::default().with_overrides(&["trainer=1".into()]), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("bogus = 1\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("trainer.net.bogus = 1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn type_mismatch_rejected() {
        assert!(RunConfig::default().with_overrides(&["trainer.batch_size=many".into()]).is_err());
    }
}
