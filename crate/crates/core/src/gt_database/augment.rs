use std::f64::consts::FRAC_PI_4;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GtDatabase;
use crate::error::{Error, Result};
use crate::geometry::{iou_bev, normalize_angle, Box3D, LabeledBox, Point3, PointCloud};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Ground-truth sampling fills each scene up to this many labels.
    pub target_labels_per_sample: usize,
    pub flip_probability: f64,
    /// Global yaw rotation drawn uniformly from this interval (radians).
    pub rotation_range: (f64, f64),
    pub scale_range: (f64, f64),
    /// Inserted boxes must have their BEV center within this distance.
    pub perception_range: f64,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            target_labels_per_sample: 40,
            flip_probability: 0.5,
            rotation_range: (-FRAC_PI_4, FRAC_PI_4),
            scale_range: (0.95, 1.05),
            perception_range: 70.0,
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let (s0, s1) = self.scale_range;
        let (r0, r1) = self.rotation_range;
        let ok = (0.0..=1.0).contains(&self.flip_probability)
            && s0 > 0.0
            && s0 <= s1
            && r0 <= r1
            && self.perception_range > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid augmentation config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedScene {
    pub cloud: PointCloud,
    pub labels: Vec<LabeledBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Insertion {
    pub scene: AugmentedScene,
    /// Database indices of the inserted entries, in insertion order.
    pub inserted: Vec<usize>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Ground-truth sampling. Entries are drawn uniformly without replacement
/// and placed at their original pose; an entry is rejected if its footprint
/// overlaps any current box (BEV IoU > 0) or its center lies beyond the
/// perception range. Accepted entries replace the scene points inside their
/// box. Stops at the target count or when the database is exhausted.
pub fn sample_insert<R: Rng + ?Sized>(
    scene: &AugmentedScene,
    db: &GtDatabase,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Insertion {
    let target = cfg.target_labels_per_sample;
    let mut labels = scene.labels.clone();
    let mut removed = vec![false; scene.cloud.len()];
    let mut added: Vec<Point3> = Vec::new();
    let mut inserted = Vec::new();

    let mut pool: Vec<usize> = (0..db.len()).collect();
    let mut next = 0;
    while labels.len() < target && next < pool.len() {
        let pick = rng.random_range(next..pool.len());
        pool.swap(next, pick);
        let idx = pool[next];
        next += 1;

        let entry = &db.entries[idx];
        if entry.bbox.bev_range() > cfg.perception_range {
            continue;
        }
        if labels.iter().any(|l| iou_bev(&l.bbox, &entry.bbox) > 0.0) {
            continue;
        }
        for (i, p) in scene.cloud.iter().enumerate() {
            if !removed[i] && entry.bbox.contains(p) {
                removed[i] = true;
            }
        }
        // Points added by earlier insertions cannot fall in this box: the
        // footprints are disjoint.
        added.extend(entry.world_points());
        labels.push(entry.label());
        inserted.push(idx);
    }

    let cloud = if inserted.is_empty() {
        scene.cloud.clone()
    } else {
        scene
            .cloud
            .iter()
            .zip(&removed)
            .filter(|(_, r)| !**r)
            .map(|(p, _)| *p)
            .chain(added)
            .collect()
    };
    Insertion {
        scene: AugmentedScene { cloud, labels },
        inserted,
    }
}

#[derive(Debug, Clone, Copy)]
struct GlobalTransform {
    flip: bool,
    rotation: f64,
    scale: f64,
}

impl GlobalTransform {
    fn point(&self, x: f64, y: f64, z: f64) -> [f64; 3] {
        let y = if self.flip { -y } else { y };
        let (s, c) = self.rotation.sin_cos();
        let (xr, yr) = (c * x - s * y, s * x + c * y);
        [self.scale * xr, self.scale * yr, self.scale * z]
    }

    fn bbox(&self, b: &Box3D) -> Box3D {
        let [cx, cy, cz] = self.point(b.cx, b.cy, b.cz);
        let yaw = if self.flip { -b.yaw } else { b.yaw };
        Box3D {
            cx,
            cy,
            cz,
            length: self.scale * b.length,
            width: self.scale * b.width,
            height: self.scale * b.height,
            yaw: normalize_angle(yaw + self.rotation),
        }
    }
}

/// Random mirror about the x axis, yaw rotation about the origin and uniform
/// scaling, applied identically to points and boxes. Always consumes three
/// draws from `rng`.
pub fn global_augment<R: Rng + ?Sized>(
    scene: &AugmentedScene,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> AugmentedScene {
    let flip_draw: f64 = rng.random();
    let t = GlobalTransform {
        flip: flip_draw < cfg.flip_probability,
        rotation: uniform(rng, cfg.rotation_range),
        scale: uniform(rng, cfg.scale_range),
    };
    AugmentedScene {
        cloud: scene
            .cloud
            .iter()
            .map(|p| {
                let [x, y, z] = t.point(p.x, p.y, p.z);
                Point3::new(x, y, z, p.intensity)
            })
            .collect(),
        labels: scene
            .labels
            .iter()
            .map(|l| LabeledBox {
                bbox: t.bbox(&l.bbox),
                score: l.score,
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::points_in_box;
    use crate::gt_database::{DbEntry, DbProvenance};
    use crate::rng::stream;

    fn unit_entry(id: usize, x: f64, y: f64) -> DbEntry {
        let points = (0..8)
            .map(|i| Point3::new(0.2 * (i % 2) as f64 - 0.1, 0.1 * (i / 4) as f64, -0.2, 0.5))
            .collect();
        DbEntry {
            entry_id: format!("e{id}"),
            source_sample_id: "000000".into(),
            bbox: Box3D::new([x, y, 0.5], 1.0, 1.0, 1.0, 0.0).unwrap(),
            score: Some(0.9),
            points,
        }
    }

    fn scene_with(n: usize) -> AugmentedScene {
        let labels = (0..n)
            .map(|i| LabeledBox::ground_truth(Box3D::new([3.0 * i as f64, -30.0, 0.5], 1.0, 1.0, 1.0, 0.0).unwrap()))
            .collect();
        AugmentedScene {
            cloud: PointCloud::default(),
            labels,
        }
    }

    #[test]
    fn full_scene_untouched() {
        let db = GtDatabase::new(vec![unit_entry(0, 0.0, 0.0)], DbProvenance::default()).unwrap();
        let cfg = AugmentConfig {
            target_labels_per_sample: 3,
            ..Default::default()
        };
        let scene = scene_with(3);
        let out = sample_insert(&scene, &db, &cfg, &mut stream(1, &[]));
        assert_eq!(out.scene, scene);
        assert!(out.inserted.is_empty());
    }

    #[test]
    fn colliding_database_inserts_nothing() {
        let scene = scene_with(2);
        let entries = (0..5).map(|i| unit_entry(i, 0.1 * i as f64, -30.0)).collect();
        let db = GtDatabase::new(entries, DbProvenance::default()).unwrap();
        let out = sample_insert(&scene, &db, &AugmentConfig::default(), &mut stream(1, &[]));
        assert_eq!(out.scene, scene);
    }

    #[test]
    fn inserted_points_replace_background() {
        let background: PointCloud = (0..100)
            .map(|i| Point3::new((i % 10) as f64 * 0.1 - 0.45, (i / 10) as f64 * 0.1 - 0.45, 0.3, 0.0))
            .collect();
        let scene = AugmentedScene {
            cloud: background,
            labels: vec![],
        };
        let db = GtDatabase::new(vec![unit_entry(0, 0.0, 0.0)], DbProvenance::default()).unwrap();
        let out = sample_insert(&scene, &db, &AugmentConfig::default(), &mut stream(1, &[]));
        assert_eq!(out.inserted, vec![0]);
        assert_eq!(points_in_box(&out.scene.cloud, &db.entries[0].bbox).len(), 8);
    }

    #[test]
    fn identity_global_augment() {
        let cfg = AugmentConfig {
            flip_probability: 0.0,
            rotation_range: (0.0, 0.0),
            scale_range: (1.0, 1.0),
            ..Default::default()
        };
        let scene = AugmentedScene {
            cloud: PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0, 0.5)]),
            labels: scene_with(2).labels,
        };
        assert_eq!(global_augment(&scene, &cfg, &mut stream(3, &[])), scene);
    }

    #[test]
    fn flip_preserves_membership_and_scale_volume() {
        let b = Box3D::new([5.0, 2.0, 0.8], 4.0, 2.0, 1.6, 0.4).unwrap();
        let cloud: PointCloud = (0..200)
            .map(|i| {
                let t = i as f64;
                Point3::new(5.0 + 3.0 * (t * 0.37).sin(), 2.0 + 2.0 * (t * 0.91).cos(), 0.8 + (t * 0.13).sin(), 0.0)
            })
            .collect();
        let scene = AugmentedScene {
            cloud,
            labels: vec![LabeledBox::ground_truth(b)],
        };
        let flip = AugmentConfig {
            flip_probability: 1.0,
            rotation_range: (0.0, 0.0),
            scale_range: (1.0, 1.0),
            ..Default::default()
        };
        let out = global_augment(&scene, &flip, &mut stream(3, &[]));
        assert_eq!(points_in_box(&scene.cloud, &b), points_in_box(&out.cloud, &out.labels[0].bbox));

        let scale = AugmentConfig {
            flip_probability: 0.0,
            rotation_range: (0.0, 0.0),
            scale_range: (1.05, 1.05),
            ..Default::default()
        };
        let out = global_augment(&scene, &scale, &mut stream(3, &[]));
        assert!((out.labels[0].bbox.volume() - b.volume() * 1.05f64.powi(3)).abs() < 1e-9);
    }
}
