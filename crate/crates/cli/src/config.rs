use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use slicegru::baselines::SvmBaselineConfig;
use slicegru::data::PreprocessConfig;
use slicegru::eval::{HeadConfig, SynthConfig};
use slicegru::features::ExtractorSpec;
use slicegru::train::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Candidate sizes for both recurrent layers.
    pub gru_sizes: Vec<usize>,
    pub dropouts: Vec<f64>,
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Fold whose train/validation split is used for every grid point.
    pub fold: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            gru_sizes: vec![512, 256, 128],
            dropouts: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            alphas: vec![0.2, 0.3, 0.4, 0.5],
            gammas: vec![0.0, 2.0, 5.0],
            fold: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainConfig {
    pub volume_id: Option<String>,
    /// 1-based slices to render.
    pub slices: Vec<usize>,
    /// Slice whose extractor features are exported for every volume.
    pub embedding_slice: usize,
    /// Trained head; when set, its pooled vectors are exported too.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            volume_id: None,
            slices: vec![1, 32, 64],
            embedding_slice: 32,
            checkpoint: None,
        }
    }
}

/// Everything a command needs. Every output directory gets a copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Defaults to `<data_dir>/manifest.csv`.
    pub manifest: Option<PathBuf>,
    pub data_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Defaults to `<command>-seed<seed>`.
    pub run_id: Option<String>,
    pub seed: u64,
    pub k: usize,
    pub extractor: ExtractorSpec,
    pub preprocess: PreprocessConfig,
    pub head: HeadConfig,
    pub train: TrainConfig,
    pub svm: SvmBaselineConfig,
    pub synth: SynthConfig,
    pub sweep: SweepConfig,
    pub explain: ExplainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            data_dir: PathBuf::from("data"),
            cache_dir: None,
            out_dir: PathBuf::from("runs"),
            run_id: None,
            seed: 0,
            k: 5,
            extractor: ExtractorSpec::vit_large(),
            preprocess: PreprocessConfig::default(),
            head: HeadConfig::default(),
            train: TrainConfig::default(),
            svm: SvmBaselineConfig::default(),
            synth: SynthConfig::default(),
            sweep: SweepConfig::default(),
            explain: ExplainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn manifest_path(&self) -> PathBuf {
        self.manifest
            .clone()
            .unwrap_or_else(|| self.data_dir.join("manifest.csv"))
    }

    pub fn run_dir(&self, default_id: &str) -> PathBuf {
        let id = self
            .run_id
            .clone()
            .unwrap_or_else(|| format!("{default_id}-seed{}", self.seed));
        self.out_dir.join(id)
    }
}

/// Objects merge key by key; anything else replaces.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `a.b.c=value`; the value is read as JSON and falls back to a string.
fn apply_set(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {assignment:?}")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Usage(format!("empty key segment in {key:?}")));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("{key:?}: {:?} is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields one part")
}

/// Defaults, then the optional config file, then `--set` overrides.
pub fn resolve(file: Option<&Path>, sets: &[String]) -> Result<RunConfig, CliError> {
    let mut root = serde_json::to_value(RunConfig::default()).expect("default config serializes");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let user: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        if !user.is_object() {
            return Err(CliError::Usage(format!("config {} must be a JSON object", path.display())));
        }
        merge(&mut root, user);
    }
    for s in sets {
        apply_set(&mut root, s)?;
    }
    let cfg: RunConfig =
        serde_json::from_value(root).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
    cfg.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.preprocess.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}
