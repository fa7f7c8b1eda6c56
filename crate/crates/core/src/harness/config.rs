use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{BlobSpec, ClassOrder};
use crate::error::{LnmError, Result};
use crate::methods::{MethodConfig, TrainSettings};
use crate::noise::{NoiseKind, NoiseSpec};

/// Where samples come from and how they are shaped before noise injection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blobs: Option<BlobSpec>,
    /// A flat binary file. Its split tags are kept when it already has val
    /// and test samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Imbalance ratio applied to the train split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub long_tail: Option<f64>,
    #[serde(default)]
    pub class_order: ClassOrder,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
}

fn default_fractions() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

impl DatasetConfig {
    pub fn blobs(spec: BlobSpec) -> Self {
        Self {
            blobs: Some(spec),
            path: None,
            long_tail: None,
            class_order: ClassOrder::default(),
            fractions: default_fractions(),
        }
    }
}

/// Methods and noise settings crossed by a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub methods: Vec<MethodConfig>,
    pub noise: Vec<NoiseSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default = "NoiseSpec::none")]
    pub noise: NoiseSpec,
    pub method: MethodConfig,
    #[serde(default)]
    pub train: TrainSettings,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Keep validation labels clean instead of drawing noise for them.
    #[serde(default)]
    pub clean_validation: bool,
    #[serde(default = "default_last_window")]
    pub last_window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid>,
}

fn default_last_window() -> usize {
    crate::eval::DEFAULT_LAST_WINDOW
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetConfig, noise: NoiseSpec, method: MethodConfig, epochs: usize, seeds: Vec<u64>) -> Self {
        Self {
            dataset,
            noise,
            method,
            train: TrainSettings::default(),
            epochs,
            seeds,
            out_dir: None,
            clean_validation: false,
            last_window: default_last_window(),
            grid: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Parses `text` after applying `key=value` overrides on dotted paths.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Ok(table.try_into()?)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LnmError::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        match (&d.blobs, &d.path) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(LnmError::config("dataset needs exactly one of `blobs` or `path`")),
        }
        if let Some(r) = d.long_tail {
            if !(r >= 1.0 && r.is_finite()) {
                return Err(LnmError::config(format!("long_tail ratio must be >= 1, got {r}")));
            }
        }
        self.noise.validate()?;
        self.method.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(LnmError::config("seeds must be nonempty"));
        }
        if self.epochs == 0 {
            return Err(LnmError::config("epochs must be positive"));
        }
        if self.last_window == 0 || self.last_window > self.epochs {
            return Err(LnmError::config(format!(
                "last_window {} must lie in [1, epochs = {}]",
                self.last_window, self.epochs
            )));
        }
        if let Some(g) = &self.grid {
            if g.methods.is_empty() || g.noise.is_empty() {
                return Err(LnmError::config("grid needs at least one method and one noise setting"));
            }
        }
        Ok(())
    }

    /// The method config with its assumed noise rate filled from the spec.
    pub fn effective_method(&self) -> MethodConfig {
        let mut m = self.method.clone();
        if m.assumed_noise_rate.is_none() {
            m.assumed_noise_rate = Some(match self.noise.kind {
                NoiseKind::None => 0.0,
                _ => self.noise.rate,
            });
        }
        m
    }

    /// One config per (method, noise) cell of the grid, method-major. A
    /// config without a grid is its own single cell.
    pub fn cells(&self) -> Vec<ExperimentConfig> {
        let Some(grid) = &self.grid else {
            return vec![self.clone()];
        };
        let mut out = Vec::new();
        for m in &grid.methods {
            for n in &grid.noise {
                let mut c = self.clone();
                c.grid = None;
                c.method = m.clone();
                c.noise = n.clone();
                out.push(c);
            }
        }
        out
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `a.b.c=value` inside `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| LnmError::config(format!("override `{spec}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(LnmError::config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| LnmError::config(format!("override path `{key}` crosses a non-table at `{p}`")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::methods::MethodKind;

    const BASIC: &str = r#"
epochs = 10
seeds = [1, 2]

[dataset.blobs]
classes = 3
per_class = 50
dim = 4
spread = 1.0

[noise]
kind = "symmetric"
rate = 0.2

[method]
kind = "coteaching"
"#;

    #[test]
    fn parses_and_validates() {
        let cfg = ExperimentConfig::from_toml_str(BASIC).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.method.kind, MethodKind::CoTeaching);
        assert_eq!(cfg.effective_method().noise_rate(), 0.2);
        assert_eq!(cfg.train.batch_size, 128);
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = format!("{BASIC}\nbogus = 1\n");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
        let text = BASIC.replace("kind = \"coteaching\"", "kind = \"coteaching\"\nfoo = 2");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn overrides() {
        let cfg = ExperimentConfig::from_toml_with_overrides(
            BASIC,
            &[
                "noise.rate=0.5".into(),
                "method.hyper.lambda_u=3".into(),
                "method.kind=ce".into(),
                "train.hidden=[8]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.noise.rate, 0.5);
        assert_eq!(cfg.method.hyper.lambda_u, 3.0);
        assert_eq!(cfg.method.kind, MethodKind::Ce);
        assert_eq!(cfg.train.hidden, vec![8]);
        assert!(ExperimentConfig::from_toml_with_overrides(BASIC, &["noise.nope=1".into()]).is_err());
        assert!(ExperimentConfig::from_toml_with_overrides(BASIC, &["noise".into()]).is_err());
    }

    #[test]
    fn validation_failures() {
        let mut cfg = ExperimentConfig::from_toml_str(BASIC).unwrap();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::from_toml_str(BASIC).unwrap();
        cfg.dataset.path = Some("x.lnmb".into());
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::from_toml_str(BASIC).unwrap();
        cfg.epochs = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::from_toml_str(BASIC).unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }
}
