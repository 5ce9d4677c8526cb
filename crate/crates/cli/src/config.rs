//! Run configuration: one JSON tree with a section per subcommand, read
//! from the config file and patched by `--set` overrides and flags.

use std::path::{Path, PathBuf};

use lapool_core::attribution::{IgConfig, Target};
use lapool_core::gradcheck::GradcheckConfig;
use lapool_core::lapool::PoolConfig;
use lapool_core::pipeline::{MotifTask, TrainConfig};
use lapool_core::signal::DemoConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, replaces the seed of every section.
    pub seed: Option<u64>,
    /// Dataset directory read by `train` and `eval`.
    pub dataset: Option<PathBuf>,
    /// Checkpoint read by `eval` and `explain`.
    pub checkpoint: Option<PathBuf>,
    /// Graph file read by `pool` and `explain`.
    pub graph: Option<PathBuf>,
    pub gen_data: GenDataConfig,
    pub train: TrainConfig,
    pub pool: PoolSection,
    pub explain: ExplainSection,
    pub signal_demo: DemoConfig,
    pub gradcheck: GradcheckConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenDataConfig {
    pub count: usize,
    pub task: MotifTask,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self { count: 500, task: MotifTask::default() }
    }
}

/// Initialization of the pooled-feature map for a standalone pool run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PsiInit {
    /// `W = I`, `b = 0`.
    #[default]
    Identity,
    /// Glorot weights from `seed`, zero bias.
    Glorot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PoolSection {
    pub layer: PoolConfig,
    pub psi: PsiInit,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainSection {
    pub target: Target,
    pub ig: IgConfig,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self { target: Target::Logit { label: 0 }, ig: IgConfig::new(256, true) }
    }
}

/// Command-line values layered over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub graph: Option<PathBuf>,
}

/// Applies `a.b.c=value`. The value is parsed as JSON, falling back to a
/// plain string.
pub fn apply_set(tree: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{assignment}`")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("malformed key `{path}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = tree;
    for key in &keys[..keys.len() - 1] {
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("`{path}`: `{key}` is inside a non-object value")))?;
        node = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    if node.is_null() {
        *node = Value::Object(Map::new());
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| CliError::Config(format!("`{path}` is inside a non-object value")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Objects merge key by key; anything else replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn read_tree(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let tree: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if !tree.is_object() {
        return Err(CliError::Config(format!("{}: top level must be an object", path.display())));
    }
    Ok(tree)
}

impl RunConfig {
    /// Builds the config from the defaults, an optional file and overrides,
    /// merged in that order. Unknown keys anywhere in the tree are errors.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut tree = serde_json::to_value(RunConfig::default())?;
        if let Some(p) = file {
            merge(&mut tree, read_tree(p)?);
        }
        for s in &overrides.sets {
            apply_set(&mut tree, s)?;
        }
        let mut config: RunConfig =
            serde_json::from_value(tree).map_err(|e| CliError::Config(e.to_string()))?;
        if overrides.seed.is_some() {
            config.seed = overrides.seed;
        }
        for (slot, value) in [
            (&mut config.dataset, &overrides.dataset),
            (&mut config.checkpoint, &overrides.checkpoint),
            (&mut config.graph, &overrides.graph),
        ] {
            if value.is_some() {
                slot.clone_from(value);
            }
        }
        if let Some(seed) = config.seed {
            config.gen_data.task.seed = seed;
            config.train.seed = seed;
            config.pool.seed = seed;
            config.signal_demo.first_seed = seed;
            config.gradcheck.seed = seed;
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
