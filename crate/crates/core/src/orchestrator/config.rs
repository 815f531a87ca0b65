use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::ephemerality::DEFAULT_PP_RADIUS;
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::filtering::FilterConfig;
use crate::gt_database::AugmentConfig;
use crate::rng::derive_seed;
use crate::seed::{ClusterParams, SeedHeuristics};
use crate::sim::{SimDetectorParams, WorldConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Registered detector backend: `simulate` or `external`.
    pub mode: String,
    pub sim: SimDetectorParams,
    /// Shell command templates for the external backend. Placeholders:
    /// `{round}`, `{points_dir}`, `{labels_dir}`, `{db_dir}`, `{out_dir}`.
    pub train_cmd: Option<String>,
    pub infer_cmd: Option<String>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            mode: "simulate".into(),
            sim: SimDetectorParams::default(),
            train_cmd: None,
            infer_cmd: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfTrainConfig {
    pub data_root: PathBuf,
    pub max_rounds: usize,
    pub seed: u64,
    pub pp_radius: f64,
    pub filter: FilterConfig,
    pub augment: AugmentConfig,
    pub cluster: ClusterParams,
    pub seed_heuristics: SeedHeuristics,
    pub eval: EvalConfig,
    pub detector: DetectorConfig,
    pub world: WorldConfig,
    /// BEV IoU used when auditing labels against ground truth.
    pub audit_iou: f64,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            data_root: PathBuf::from("data"),
            max_rounds: 2,
            seed: 42,
            pp_radius: DEFAULT_PP_RADIUS,
            filter: FilterConfig::default(),
            augment: AugmentConfig::default(),
            cluster: ClusterParams::default(),
            seed_heuristics: SeedHeuristics::default(),
            eval: EvalConfig::default(),
            detector: DetectorConfig::default(),
            world: WorldConfig::default(),
            audit_iou: 0.25,
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pp_radius > 0.0) {
            return Err(Error::Config(format!("pp_radius must be positive, got {}", self.pp_radius)));
        }
        if !(self.audit_iou > 0.0 && self.audit_iou <= 1.0) {
            return Err(Error::Config(format!("audit_iou {} outside (0, 1]", self.audit_iou)));
        }
        self.filter.validate()?;
        self.augment.validate()?;
        self.cluster.validate()?;
        self.seed_heuristics.validate()?;
        self.eval.validate()?;
        self.detector.sim.validate()?;
        self.world.validate()
    }
}

/// Child generators seeded from the master seed unless set explicitly.
const DERIVED_SEEDS: [&[&str]; 3] = [&["world", "rng_seed"], &["augment", "rng_seed"], &["detector", "sim", "rng_seed"]];

fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn object_at<'a>(root: &'a mut Value, path: &[&str]) -> Result<&'a mut Map<String, Value>> {
    let mut cur = root;
    for key in path {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("cannot set a field inside non-object {key:?}")))?;
        cur = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    cur.as_object_mut()
        .ok_or_else(|| Error::Config(format!("{} is not an object", path.join("."))))
}

/// Applies one `dotted.key=value` override; the value is read as JSON when
/// it parses, otherwise as a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not KEY=VALUE")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let (last, parents) = path.split_last().expect("non-empty path");
    object_at(root, parents)?.insert(last.to_string(), parse_scalar(raw.trim()));
    Ok(())
}

/// Config file (if any), then `--set` overrides, then `--seed`. Every field
/// not given takes its default; the result is validated.
pub fn resolve_config(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<SelfTrainConfig> {
    let mut root = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => Value::Object(Map::new()),
    };
    if !root.is_object() {
        return Err(Error::Config("configuration must be a JSON object".into()));
    }
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    if let Some(s) = seed {
        object_at(&mut root, &[])?.insert("seed".into(), Value::from(s));
    }
    let master = match root.get("seed") {
        None => SelfTrainConfig::default().seed,
        Some(v) => v
            .as_u64()
            .ok_or_else(|| Error::Config(format!("seed must be an unsigned integer, got {v}")))?,
    };
    for path in DERIVED_SEEDS {
        let (last, parents) = path.split_last().expect("non-empty path");
        let parent = object_at(&mut root, parents)?;
        if !parent.contains_key(*last) {
            parent.insert(last.to_string(), Value::from(derive_seed(master, parents)));
        }
    }
    let cfg: SelfTrainConfig = serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Writes the fully resolved configuration unless an identical file is
/// already there. Returns whether the file was written.
pub fn write_config_echo(path: &Path, cfg: &SelfTrainConfig) -> Result<bool> {
    let mut text = serde_json::to_string_pretty(cfg).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    if fs::read_to_string(path).is_ok_and(|old| old == text) {
        return Ok(false);
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(true)
}
