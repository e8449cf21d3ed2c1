//! Run configuration: one TOML file, optionally patched with `key=value`
//! overrides before it is parsed.

use std::path::{Path, PathBuf};

use adtn_core::adtn::Activation;
use adtn_core::compress::{CompressionConfig, CompressionOrder, FinetuneConfig, PretrainConfig};
use adtn_core::nn::{ModelId, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding the four MNIST IDX files.
    pub dir: PathBuf,
    /// Use a seeded random subset of this many training samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_subset: Option<usize>,
}

/// The `[compression]` table: which layers, in what order, and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressionSection {
    pub layers: Vec<String>,
    pub order: CompressionOrder,
    pub m: usize,
    pub d: usize,
    pub activation: Activation,
    pub min_chunk: usize,
    /// Cap on ADTNs per layer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_chunks: Option<usize>,
    pub init_noise: f64,
    pub continue_on_error: bool,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
}

impl Default for CompressionSection {
    fn default() -> Self {
        let c = CompressionConfig::default();
        CompressionSection {
            layers: Vec::new(),
            order: CompressionOrder::default(),
            m: c.m,
            d: c.d,
            activation: c.activation,
            min_chunk: c.min_chunk,
            max_chunks: c.max_chunks,
            init_noise: c.init_noise,
            continue_on_error: c.continue_on_error,
            pretrain: c.pretrain,
            finetune: c.finetune,
        }
    }
}

impl CompressionSection {
    pub fn settings(&self) -> CompressionConfig {
        CompressionConfig {
            d: self.d,
            m: self.m,
            activation: self.activation,
            min_chunk: self.min_chunk,
            max_chunks: self.max_chunks,
            init_noise: self.init_noise,
            pretrain: self.pretrain,
            finetune: self.finetune,
            continue_on_error: self.continue_on_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelId,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub compression: CompressionSection,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.train.batch_size == 0 || self.train.eval_batch_size == 0 {
            return bad("train.batch_size and train.eval_batch_size must be positive");
        }
        if !(self.train.optimizer.lr >= 0.0 && self.train.optimizer.lr.is_finite()) {
            return bad("train.optimizer.lr must be finite and non-negative");
        }
        if self.data.train_subset == Some(0) {
            return bad("data.train_subset must be positive");
        }
        self.compression.settings().validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Canonical TOML rendering; its hash identifies the run.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }
}

/// Sets `dotted.key` in `doc` to `raw`, read as a TOML value when it parses
/// as one and as a bare string otherwise.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut table = doc;
    for p in parents {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?}: {p:?} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let config: RunConfig = doc.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse(&text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
model = "fc2"
seed = 3
output_dir = "out"
[data]
dir = "data/mnist"
"#;

    #[test]
    fn defaults_fill_missing_tables() {
        let c = parse(MINIMAL, &[]).unwrap();
        assert_eq!(c.model, ModelId::FC2);
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.compression.settings(), CompressionConfig::default());
        assert!(c.compression.layers.is_empty());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for extra in ["colour = 1", "[train]\nepochz = 2", "[compression.pretrain]\nsteps = 1", "[data]\nx = 1"] {
            let text = if extra.starts_with("[data]") {
                MINIMAL.replace("[data]", &format!("{extra}\n"))
            } else {
                format!("{MINIMAL}\n{extra}")
            };
            assert!(matches!(parse(&text, &[]), Err(CliError::Config(_))), "{extra}");
        }
    }

    #[test]
    fn overrides_patch_nested_keys() {
        let c = parse(
            MINIMAL,
            &[
                "compression.m=2".into(),
                "compression.layers=[\"fc1\"]".into(),
                "compression.order=forward".into(),
                "train.optimizer.lr = 0.01".into(),
                "model=lenet5-mnist".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.compression.m, 2);
        assert_eq!(c.compression.layers, ["fc1"]);
        assert_eq!(c.compression.order, CompressionOrder::Forward);
        assert_eq!(c.train.optimizer.lr, 0.01);
        assert_eq!(c.model, ModelId::LENET5_MNIST);
        assert!(parse(MINIMAL, &["nokey".into()]).is_err());
        assert!(parse(MINIMAL, &["seed.x=1".into()]).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for o in ["model=vgg16", "compression.m=0", "train.batch_size=0", "compression.max_chunks=0", "data.train_subset=0"] {
            assert!(matches!(parse(MINIMAL, &[o.into()]), Err(CliError::Config(_))), "{o}");
        }
    }

    #[test]
    fn toml_round_trip() {
        let c = parse(MINIMAL, &["compression.layers=[\"fc1\",\"fc2\"]".into(), "compression.max_chunks=1".into()]).unwrap();
        assert_eq!(parse(&c.to_toml(), &[]).unwrap(), c);
    }
}
