use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datasets::{GroupConfig, Split};
use crate::error::{Error, Result};
use crate::models::{Architecture, ModelSpec};
use crate::training::TrainConfig;
use crate::warping::{DtwParams, SoftDtwParams};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "WARPNET_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    GenData,
    TrainDistance,
    TrainSingle,
    TrainMtl,
    Eval,
    Importance,
    Rank,
}

/// Random-walk pair counts for the distance experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkSection {
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub test_pairs: usize,
    pub length: usize,
    #[serde(default = "yes")]
    pub normalize: bool,
}

fn yes() -> bool {
    true
}

/// A named warping constraint: a band given as a fraction of the series
/// length or in samples, or neither for unconstrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_radius: Option<usize>,
}

impl ConstraintSpec {
    pub fn params(&self, length: usize, base: &DtwParams) -> Result<DtwParams> {
        let band_radius = match (self.band_fraction, self.band_radius) {
            (Some(_), Some(_)) => {
                return Err(Error::Schema {
                    key: format!("constraints.{}", self.name),
                    message: "give band_fraction or band_radius, not both".into(),
                })
            }
            (Some(f), None) => {
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::Schema {
                        key: format!("constraints.{}.band_fraction", self.name),
                        message: format!("{f} is outside [0, 1]"),
                    });
                }
                Some(DtwParams::banded_fraction(f, length).band_radius.unwrap_or(0))
            }
            (None, r) => r,
        };
        Ok(DtwParams { band_radius, ..*base })
    }
}

pub fn default_constraints() -> Vec<ConstraintSpec> {
    let band = |name: &str, f: f64| ConstraintSpec {
        name: name.into(),
        band_fraction: Some(f),
        band_radius: None,
    };
    vec![
        ConstraintSpec {
            name: "unconstrained".into(),
            band_fraction: None,
            band_radius: None,
        },
        band("band05", 0.05),
        band("band10", 0.10),
        band("band20", 0.20),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceSection {
    #[serde(default = "both_architectures")]
    pub architectures: Vec<Architecture>,
    #[serde(default = "default_constraints")]
    pub constraints: Vec<ConstraintSpec>,
}

fn both_architectures() -> Vec<Architecture> {
    vec![Architecture::Resnet1d, Architecture::Resnet2d]
}

impl Default for DistanceSection {
    fn default() -> Self {
        Self {
            architectures: both_architectures(),
            constraints: default_constraints(),
        }
    }
}

/// Per-architecture overrides of the shared model spec for distance runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportanceSection {
    /// Number of test pairs to map.
    pub pairs: usize,
    #[serde(default = "one")]
    pub patch: usize,
    #[serde(default = "three")]
    pub tube_radius: usize,
    /// Constraint whose ResNet2D model is probed (distance runs) or whose
    /// targets define the reference path (standalone runs).
    #[serde(default = "unconstrained")]
    pub constraint: String,
    /// Standalone runs: the ResNet2D distance checkpoint to probe.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Minimum tube ratio counted as a hit.
    #[serde(default = "ratio")]
    pub min_ratio: f64,
}

fn one() -> usize {
    1
}

fn three() -> usize {
    3
}

fn ratio() -> f64 {
    1.5
}

fn unconstrained() -> String {
    "unconstrained".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    /// Score 1NN-DTW on each task's test split.
    #[serde(default = "yes")]
    pub onenn: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub checkpoint: PathBuf,
    #[serde(default = "test_split")]
    pub split: Split,
    /// Distance checkpoints: the constraint defining the targets.
    #[serde(default = "unconstrained")]
    pub constraint: String,
}

fn test_split() -> Split {
    Split::Test
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankSection {
    /// CSV with columns `task,method,accuracy`; the built-in reference
    /// accuracies are used when absent.
    #[serde(default)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub dtw: DtwParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_dtw: Option<SoftDtwParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walks: Option<WalkSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<DistanceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<GroupConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance: Option<ImportanceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<RankSection>,
    /// Directory relative dataset paths resolve against; set to the config
    /// file's directory when loading from disk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_dir: Option<PathBuf>,
}

fn missing(key: &str, kind: ExperimentKind) -> Error {
    Error::Schema {
        key: key.into(),
        message: format!("required for kind `{}`", kind_name(kind)),
    }
}

pub fn kind_name(kind: ExperimentKind) -> String {
    serde_json::to_value(kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

impl ExperimentConfig {
    /// Cross-field checks that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema {
                key: "schema_version".into(),
                message: format!(
                    "version {} is not supported; this build reads version {SCHEMA_VERSION}",
                    self.schema_version
                ),
            });
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Schema {
                key: "name".into(),
                message: "must be a non-empty plain file name".into(),
            });
        }
        self.train.validate().map_err(|e| Error::Schema {
            key: "train".into(),
            message: e.to_string(),
        })?;
        if let Some(m) = &self.model {
            m.validate().map_err(|e| Error::Schema {
                key: "model".into(),
                message: e.to_string(),
            })?;
        }
        let kind = self.kind;
        match kind {
            ExperimentKind::GenData => {
                self.walks.as_ref().ok_or_else(|| missing("walks", kind))?;
            }
            ExperimentKind::TrainDistance => {
                self.walks.as_ref().ok_or_else(|| missing("walks", kind))?;
                self.model.as_ref().ok_or_else(|| missing("model", kind))?;
            }
            ExperimentKind::TrainSingle | ExperimentKind::TrainMtl => {
                self.group.as_ref().ok_or_else(|| missing("group", kind))?;
                self.model.as_ref().ok_or_else(|| missing("model", kind))?;
            }
            ExperimentKind::Eval => {
                self.eval.as_ref().ok_or_else(|| missing("eval", kind))?;
            }
            ExperimentKind::Importance => {
                self.walks.as_ref().ok_or_else(|| missing("walks", kind))?;
                let imp = self.importance.as_ref().ok_or_else(|| missing("importance", kind))?;
                if imp.checkpoint.is_none() {
                    return Err(missing("importance.checkpoint", kind));
                }
            }
            ExperimentKind::Rank => {}
        }
        if let Some(imp) = &self.importance {
            if imp.pairs == 0 || imp.patch == 0 {
                return Err(Error::Schema {
                    key: "importance".into(),
                    message: "pairs and patch must be positive".into(),
                });
            }
        }
        if let Some(d) = &self.distance {
            let length = self.walks.as_ref().map_or(1, |w| w.length);
            for c in &d.constraints {
                c.params(length, &self.dtw)?;
            }
            if d.architectures.is_empty() || d.constraints.is_empty() {
                return Err(Error::Schema {
                    key: "distance".into(),
                    message: "needs at least one architecture and one constraint".into(),
                });
            }
        }
        Ok(())
    }

    pub fn distance_section(&self) -> DistanceSection {
        self.distance.clone().unwrap_or_default()
    }

    /// `--output`, else `output_dir`, else `$WARPNET_OUTPUT_ROOT/<name>`,
    /// else `runs/<name>`.
    pub fn resolve_output(&self, cli_output: Option<&Path>) -> PathBuf {
        if let Some(p) = cli_output {
            return p.to_path_buf();
        }
        if let Some(p) = &self.output_dir {
            return p.clone();
        }
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) => PathBuf::from(root).join(&self.name),
            None => PathBuf::from("runs").join(&self.name),
        }
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }
}

/// Parses TOML (or JSON, by extension or leading `{`) into a JSON value.
pub fn parse_document(text: &str, path: &Path) -> Result<Value> {
    let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
    if is_json {
        serde_json::from_str(text).map_err(|e| Error::Schema {
            key: "<document>".into(),
            message: e.to_string(),
        })
    } else {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Schema {
            key: "<document>".into(),
            message: e.to_string(),
        })?;
        serde_json::to_value(table).map_err(|e| Error::Schema {
            key: "<document>".into(),
            message: e.to_string(),
        })
    }
}

/// Parses an override value as a TOML literal, falling back to a bare
/// string.
fn parse_override_value(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .and_then(|v| serde_json::to_value(v).ok())
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies `a.b.c=value` to the document, creating tables as needed.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| Error::Schema {
        key: assignment.into(),
        message: "override must look like key.path=value".into(),
    })?;
    let keys: Vec<&str> = path.trim().trim_start_matches("--").split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Schema {
            key: path.into(),
            message: "empty key segment".into(),
        });
    }
    let mut node = doc;
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        // numeric segments index into arrays of tables
        if let Value::Array(items) = node {
            let len = items.len();
            let slot = key.parse::<usize>().ok().and_then(|k| items.get_mut(k)).ok_or_else(|| Error::Schema {
                key: keys[..=i].join("."),
                message: format!("no such element (array has {len})"),
            })?;
            if last {
                *slot = parse_override_value(raw.trim());
                return Ok(());
            }
            node = slot;
            continue;
        }
        let Value::Object(map) = node else {
            return Err(Error::Schema {
                key: keys[..i].join("."),
                message: "is not a table".into(),
            });
        };
        if last {
            map.insert(key.to_string(), parse_override_value(raw.trim()));
            return Ok(());
        }
        node = map
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Strict deserialization; the error names the offending key path.
pub fn from_document(doc: Value) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let key = e.path().to_string();
        Error::Schema {
            key,
            message: e.into_inner().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a config file, applies overrides, validates it.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut doc = parse_document(&text, path)?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    if let Value::Object(map) = &mut doc {
        if !map.contains_key("base_dir") {
            let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let dir = std::path::absolute(dir).map_err(|e| Error::io(dir, e))?;
            map.insert("base_dir".into(), Value::String(dir.display().to_string()));
        }
    }
    from_document(doc)
}
