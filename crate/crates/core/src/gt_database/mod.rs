//! Pseudo ground-truth database: object crops in their box frame, used only
//! for ground-truth sampling augmentation.

mod augment;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ephemerality::TraversalSet;
use crate::error::{Error, Result};
use crate::filtering::{LabelSet, PpScenes};
use crate::geometry::{points_in_box, Box3D, LabeledBox, Point3, PointCloud};
use crate::kitti_io::{create_dir_all, read_json, read_point_bin, write_json, write_point_bin};

pub use augment::{global_augment, sample_insert, AugmentConfig, AugmentedScene, Insertion};

/// Crops with fewer interior points are not stored.
pub const MIN_ENTRY_POINTS: usize = 5;

/// Source of reference clouds by sample id.
pub trait SceneClouds {
    fn cloud(&self, sample_id: &str) -> Option<&PointCloud>;
}

impl SceneClouds for BTreeMap<String, PointCloud> {
    fn cloud(&self, sample_id: &str) -> Option<&PointCloud> {
        self.get(sample_id)
    }
}

impl SceneClouds for PpScenes {
    fn cloud(&self, sample_id: &str) -> Option<&PointCloud> {
        self.get(sample_id).map(|s| &s.cloud)
    }
}

impl SceneClouds for [TraversalSet] {
    fn cloud(&self, sample_id: &str) -> Option<&PointCloud> {
        self.iter().find(|t| t.sample_id == sample_id).map(|t| &t.reference)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbEntry {
    pub entry_id: String,
    pub source_sample_id: String,
    /// Original pose in the source sample's frame.
    pub bbox: Box3D,
    pub score: Option<f64>,
    /// Points in the box frame: centered, x along the box length.
    pub points: PointCloud,
}

impl DbEntry {
    pub fn label(&self) -> LabeledBox {
        LabeledBox {
            bbox: self.bbox,
            score: self.score,
        }
    }

    /// Entry points moved back to the original pose.
    pub fn world_points(&self) -> impl Iterator<Item = Point3> + '_ {
        self.points.iter().map(|p| {
            let [x, y, z] = self.bbox.local_to_world(p.x, p.y, p.z);
            Point3::new(x, y, z, p.intensity)
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DbProvenance {
    pub round: usize,
    /// Manifest of the round that selected the labels, if any.
    pub manifest: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GtDatabase {
    pub entries: Vec<DbEntry>,
    pub provenance: DbProvenance,
}

impl GtDatabase {
    pub fn new(entries: Vec<DbEntry>, provenance: DbProvenance) -> Result<Self> {
        let mut seen = BTreeSet::new();
        if let Some(dup) = entries.iter().find(|e| !seen.insert(e.entry_id.as_str())) {
            return Err(Error::InvalidInput(format!("duplicate database entry id {}", dup.entry_id)));
        }
        Ok(Self { entries, provenance })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry boxes grouped by source sample, for auditing.
    pub fn as_label_set(&self) -> LabelSet {
        let mut set = LabelSet::new(self.provenance.round);
        for e in &self.entries {
            set.samples.entry(e.source_sample_id.clone()).or_default().push(e.label());
        }
        set
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub entries: usize,
    /// Labels with fewer than [`MIN_ENTRY_POINTS`] interior points.
    pub skipped: usize,
}

pub fn entry_id(sample_id: &str, label_index: usize) -> String {
    format!("{sample_id}_{label_index:04}")
}

/// One entry per label with at least [`MIN_ENTRY_POINTS`] points inside its
/// box, cropped from the sample's reference cloud.
pub fn build_database<S: SceneClouds + ?Sized>(
    scenes: &S,
    labels: &LabelSet,
    provenance: DbProvenance,
) -> Result<(GtDatabase, BuildStats)> {
    let mut entries = Vec::new();
    let mut stats = BuildStats::default();
    for (id, boxes) in &labels.samples {
        let cloud = scenes
            .cloud(id)
            .ok_or_else(|| Error::MissingData(format!("no point cloud for sample {id}")))?;
        for (k, label) in boxes.iter().enumerate() {
            let inside = points_in_box(cloud, &label.bbox);
            if inside.len() < MIN_ENTRY_POINTS {
                stats.skipped += 1;
                continue;
            }
            let points = inside
                .iter()
                .map(|&i| {
                    let p = &cloud.points[i];
                    let [x, y, z] = label.bbox.world_to_local(p.x, p.y, p.z);
                    Point3::new(x, y, z, p.intensity)
                })
                .collect();
            entries.push(DbEntry {
                entry_id: entry_id(id, k),
                source_sample_id: id.clone(),
                bbox: label.bbox,
                score: label.score,
                points,
            });
        }
    }
    stats.entries = entries.len();
    Ok((GtDatabase::new(entries, provenance)?, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexEntry {
    entry_id: String,
    source_sample_id: String,
    #[serde(rename = "box")]
    bbox: Box3D,
    score: Option<f64>,
    point_file: String,
    num_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DbIndex {
    provenance: DbProvenance,
    entries: Vec<IndexEntry>,
}

pub const DB_INDEX_FILE: &str = "index.json";

/// `index.json` plus one canonical-frame `.bin` per entry.
pub fn write_database(dir: &Path, db: &GtDatabase) -> Result<()> {
    create_dir_all(dir)?;
    let mut index = DbIndex {
        provenance: db.provenance.clone(),
        entries: Vec::with_capacity(db.len()),
    };
    for e in &db.entries {
        let point_file = format!("{}.bin", e.entry_id);
        write_point_bin(&dir.join(&point_file), &e.points)?;
        index.entries.push(IndexEntry {
            entry_id: e.entry_id.clone(),
            source_sample_id: e.source_sample_id.clone(),
            bbox: e.bbox,
            score: e.score,
            point_file,
            num_points: e.points.len(),
        });
    }
    write_json(&dir.join(DB_INDEX_FILE), &index)
}

pub fn read_database(dir: &Path) -> Result<GtDatabase> {
    let index_path = dir.join(DB_INDEX_FILE);
    if !index_path.is_file() {
        return Err(Error::MissingData(format!("no database index at {}", index_path.display())));
    }
    let index: DbIndex = read_json(&index_path)?;
    let entries = index
        .entries
        .into_iter()
        .map(|ie| {
            let path = dir.join(&ie.point_file);
            let points = read_point_bin(&path)?;
            if points.len() != ie.num_points {
                return Err(Error::format(
                    &path,
                    None,
                    format!("index lists {} points, file has {}", ie.num_points, points.len()),
                ));
            }
            Ok(DbEntry {
                entry_id: ie.entry_id,
                source_sample_id: ie.source_sample_id,
                bbox: ie.bbox,
                score: ie.score,
                points,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    GtDatabase::new(entries, index.provenance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_cloud(n: usize) -> PointCloud {
        (0..n)
            .map(|i| Point3::new((i % 10) as f64 * 0.1, (i / 10) as f64 * 0.1, 0.5, 0.2))
            .collect()
    }

    #[test]
    fn sparse_labels_skipped() {
        let mut scenes = BTreeMap::new();
        scenes.insert("000000".to_string(), grid_cloud(100));
        let mut labels = LabelSet::new(1);
        let dense = Box3D::new([0.45, 0.45, 0.5], 2.0, 2.0, 1.0, 0.3).unwrap();
        let empty = Box3D::new([40.0, 0.0, 0.5], 2.0, 2.0, 1.0, 0.0).unwrap();
        labels.samples.insert(
            "000000".into(),
            vec![LabeledBox::scored(dense, 0.9).unwrap(), LabeledBox::scored(empty, 0.9).unwrap()],
        );
        let (db, stats) = build_database(&scenes, &labels, DbProvenance::default()).unwrap();
        assert_eq!(stats, BuildStats { entries: 1, skipped: 1 });
        let e = &db.entries[0];
        assert_eq!(e.points.len(), 100);
        assert!(e.points.iter().all(|p| e.bbox.contains_local([p.x, p.y, p.z])));
        for (w, orig) in e.world_points().zip(scenes["000000"].iter()) {
            assert!(w.dist_sq(orig) < 1e-20);
        }
    }

    #[test]
    fn missing_cloud_is_error() {
        let mut labels = LabelSet::new(0);
        labels.samples.insert("000009".into(), vec![]);
        let scenes: BTreeMap<String, PointCloud> = BTreeMap::new();
        assert!(build_database(&scenes, &labels, DbProvenance::default()).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let e = DbEntry {
            entry_id: "a".into(),
            source_sample_id: "0".into(),
            bbox: Box3D::new([0.0; 3], 1.0, 1.0, 1.0, 0.0).unwrap(),
            score: None,
            points: grid_cloud(5),
        };
        assert!(GtDatabase::new(vec![e.clone(), e], DbProvenance::default()).is_err());
    }
}
