//! On-disk formats and directory layout.
//!
//! ```text
//! <root>/points/<id>.bin            reference scan, f32 x y z intensity
//! <root>/pp/<id>.bin                PP sidecar, one f32 per reference point
//! <root>/poses/<id>.txt             traversal k -> reference frame, one 4x4 per line
//! <root>/traversals/<id>/<k>.bin    past traversal k in its own frame
//! <root>/<stage>/<id>.txt           label files (gt/, seed_labels/, ...)
//! <root>/rounds/round_<j>/          pseudo_labels/ db/ detections/ manifest.json
//! ```

mod labels;
mod points;
mod poses;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::ephemerality::{PpScores, TraversalSet};
use crate::error::{Error, Result};
use crate::evaluation::{EvalRow, LabelQuality};
use crate::filtering::{LabelSet, RoundCounts, Threshold};
use crate::geometry::apply_pose;

pub use labels::{format_label_line, parse_label_line, read_label_file, write_label_file};
pub use points::{read_point_bin, read_pp_bin, write_point_bin, write_pp_bin};
pub use poses::{read_pose_file, write_pose_file};

pub const SAMPLE_ID_WIDTH: usize = 6;

pub fn sample_id(index: usize) -> String {
    format!("{index:0width$}", width = SAMPLE_ID_WIDTH)
}

pub fn is_sample_id(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

pub fn create_dir_all(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, Some(e.line()), e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, None, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// File stems with the given extension, sorted.
fn stems_with_extension(dir: &Path, ext: &str) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

/// Reads every `<id>.txt` in `dir`.
pub fn read_label_dir(dir: &Path, round: usize) -> Result<LabelSet> {
    let mut set = LabelSet::new(round);
    for id in stems_with_extension(dir, "txt")? {
        let boxes = read_label_file(&dir.join(format!("{id}.txt")))?;
        set.samples.insert(id, boxes);
    }
    Ok(set)
}

/// Writes one file per sample, including empty ones.
pub fn write_label_dir(dir: &Path, labels: &LabelSet) -> Result<()> {
    create_dir_all(dir)?;
    for (id, boxes) in &labels.samples {
        write_label_file(&dir.join(format!("{id}.txt")), boxes)?;
    }
    Ok(())
}

/// Paths of a data root.
#[derive(Debug, Clone)]
pub struct SampleLayout {
    root: PathBuf,
}

impl SampleLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn points_dir(&self) -> PathBuf {
        self.root.join("points")
    }

    pub fn point_file(&self, id: &str) -> PathBuf {
        self.points_dir().join(format!("{id}.bin"))
    }

    pub fn pp_dir(&self) -> PathBuf {
        self.root.join("pp")
    }

    pub fn pp_file(&self, id: &str) -> PathBuf {
        self.pp_dir().join(format!("{id}.bin"))
    }

    pub fn poses_dir(&self) -> PathBuf {
        self.root.join("poses")
    }

    pub fn pose_file(&self, id: &str) -> PathBuf {
        self.poses_dir().join(format!("{id}.txt"))
    }

    pub fn traversal_dir(&self, id: &str) -> PathBuf {
        self.root.join("traversals").join(id)
    }

    pub fn traversal_file(&self, id: &str, k: usize) -> PathBuf {
        self.traversal_dir(id).join(format!("{k}.bin"))
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    pub fn rounds_dir(&self) -> PathBuf {
        self.root.join("rounds")
    }

    /// Sample ids present under `points/`, sorted.
    pub fn sample_ids(&self) -> Result<Vec<String>> {
        let dir = self.points_dir();
        if !dir.is_dir() {
            return Err(Error::MissingData(format!("no point directory at {}", dir.display())));
        }
        let ids = stems_with_extension(&dir, "bin")?;
        if let Some(bad) = ids.iter().find(|id| !is_sample_id(id)) {
            return Err(Error::format(self.point_file(bad), None, "sample ids must be decimal"));
        }
        Ok(ids)
    }

    /// Reference scan plus every past traversal moved into the reference frame.
    pub fn load_traversal_set(&self, id: &str) -> Result<TraversalSet> {
        let reference = read_point_bin(&self.point_file(id))?;
        let pose_path = self.pose_file(id);
        if !pose_path.is_file() {
            return Err(Error::MissingData(format!("sample {id}: no pose file {}", pose_path.display())));
        }
        let poses = read_pose_file(&pose_path)?;
        let traversals = poses
            .iter()
            .enumerate()
            .map(|(k, pose)| {
                let path = self.traversal_file(id, k);
                if !path.is_file() {
                    return Err(Error::MissingData(format!(
                        "sample {id}: traversal {k} missing at {}",
                        path.display()
                    )));
                }
                Ok(apply_pose(&read_point_bin(&path)?, pose))
            })
            .collect::<Result<Vec<_>>>()?;
        TraversalSet::new(id, reference, traversals)
    }

    pub fn load_pp(&self, id: &str) -> Result<PpScores> {
        let path = self.pp_file(id);
        if !path.is_file() {
            return Err(Error::MissingData(format!("sample {id}: no PP sidecar at {}", path.display())));
        }
        read_pp_bin(&path)
    }
}

/// Directories of one self-training round.
#[derive(Debug, Clone)]
pub struct RoundDirs {
    pub round: usize,
    pub dir: PathBuf,
}

impl RoundDirs {
    pub fn path(rounds_root: &Path, round: usize) -> RoundDirs {
        RoundDirs {
            round,
            dir: rounds_root.join(format!("round_{round}")),
        }
    }

    pub fn pseudo_labels(&self) -> PathBuf {
        self.dir.join("pseudo_labels")
    }

    pub fn db(&self) -> PathBuf {
        self.dir.join("db")
    }

    pub fn detections(&self) -> PathBuf {
        self.dir.join("detections")
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }

    pub fn exists(&self) -> bool {
        self.dir.is_dir()
    }
}

/// Makes `dir` an empty directory. An existing non-empty directory is an
/// error unless `force`, in which case it is cleared.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.is_dir() {
        let non_empty = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if non_empty {
            if !force {
                return Err(Error::AlreadyExists(dir.to_path_buf()));
            }
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    create_dir_all(dir)
}

/// Creates `round_<j>/{pseudo_labels,db,detections}` under the rules of
/// [`prepare_output_dir`].
pub fn round_layout(rounds_root: &Path, round: usize, force: bool) -> Result<RoundDirs> {
    let dirs = RoundDirs::path(rounds_root, round);
    prepare_output_dir(&dirs.dir, force)?;
    for d in [dirs.pseudo_labels(), dirs.db(), dirs.detections()] {
        create_dir_all(&d)?;
    }
    Ok(dirs)
}

/// Precision/recall of a round's labels against ground truth (simulation only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundAudit {
    pub iou: f64,
    pub pseudo_labels: LabelQuality,
    pub database: LabelQuality,
    pub pseudo_label_ap: Vec<EvalRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundManifest {
    pub round: usize,
    pub algorithm: String,
    pub detector: String,
    pub rho: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub high_threshold: f64,
    /// `null` when no box was thresholded out.
    pub threshold: Threshold,
    pub counts: RoundCounts,
    pub db_entries: usize,
    pub db_skipped: usize,
    pub seed: u64,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<RoundAudit>,
}

impl RoundManifest {
    pub fn write(&self, dirs: &RoundDirs) -> Result<()> {
        write_json(&dirs.manifest(), self)
    }

    pub fn read(dirs: &RoundDirs) -> Result<Self> {
        read_json(&dirs.manifest())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    GroundTruth,
    Seed,
}

impl Stage {
    pub fn dir_name(&self) -> &'static str {
        match self {
            Stage::GroundTruth => "gt",
            Stage::Seed => "seed_labels",
        }
    }
}
