//! Seed boxes from PP-scored reference scans: remove ground, cluster on
//! position plus ephemerality, keep the clusters that look like mobile
//! objects and fit a box to each.

mod dbscan;
mod ground;
mod hull;

use serde::{Deserialize, Serialize};

use crate::ephemerality::{PpScores, TraversalSet};
use crate::error::{Error, Result};
use crate::geometry::{iou_bev, points_in_box, Box3D, LabeledBox, PointCloud, Vec2};
use crate::quantile::nearest_rank;

pub use dbscan::{dbscan, ClusterParams, Feature};
pub use ground::{estimate_ground_z, GroundMap};
pub use hull::{convex_hull, min_area_rect, OrientedRect};

/// Padding on each side of a box fitted to a degenerate cluster.
pub const DEGENERATE_PAD: f64 = 0.05;
/// Tiny margin so hull vertices never sit exactly on a fitted face.
const FIT_MARGIN: f64 = 1e-6;
const DUPLICATE_IOU: f64 = 0.7;
const SEED_SCORE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedHeuristics {
    pub min_cluster_points: usize,
    /// Largest allowed gap between the cluster bottom and the local ground.
    pub max_bottom_above_ground: f64,
    pub min_bev_diagonal: f64,
    pub max_bev_diagonal: f64,
    /// Percentile of in-cluster PP compared against `cluster_pp_max`.
    pub cluster_pp_percentile: f64,
    pub cluster_pp_max: f64,
    /// Points within this height of the local ground are dropped before clustering.
    pub ground_band: f64,
    pub ground_cell: f64,
}

impl Default for SeedHeuristics {
    fn default() -> Self {
        Self {
            min_cluster_points: 10,
            max_bottom_above_ground: 1.0,
            min_bev_diagonal: 0.5,
            max_bev_diagonal: 15.0,
            cluster_pp_percentile: 0.5,
            cluster_pp_max: 0.3,
            ground_band: 0.2,
            ground_cell: 1.0,
        }
    }
}

impl SeedHeuristics {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.cluster_pp_percentile)
            && self.min_bev_diagonal <= self.max_bev_diagonal
            && self.max_bottom_above_ground >= 0.0
            && self.ground_band >= 0.0
            && self.ground_cell > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid seed heuristics {self:?}")));
        }
        Ok(())
    }
}

/// Box around a cluster: BEV footprint from the minimum-area rectangle of the
/// convex hull, vertical extent from the ground (or the lowest point, if
/// lower) to the highest point. Collinear clusters get an axis-aligned box
/// padded by [`DEGENERATE_PAD`].
pub fn fit_box(cluster: &PointCloud, ground_z: f64) -> Result<Box3D> {
    if cluster.is_empty() {
        return Err(Error::InvalidInput("cannot fit a box to an empty cluster".into()));
    }
    let bev: Vec<Vec2> = cluster.iter().map(|p| Vec2::new(p.x, p.y)).collect();
    let z_min = cluster.iter().map(|p| p.z).fold(f64::MAX, f64::min);
    let z_max = cluster.iter().map(|p| p.z).fold(f64::MIN, f64::max);
    let bottom = ground_z.min(z_min);
    let height = z_max - bottom;

    match min_area_rect(&convex_hull(&bev)) {
        Some(rect) => {
            let height = if height > 0.0 {
                height + 2.0 * FIT_MARGIN
            } else {
                2.0 * DEGENERATE_PAD
            };
            let cz = if z_max > bottom { 0.5 * (bottom + z_max) } else { bottom };
            Box3D::new(
                [rect.center.x, rect.center.y, cz],
                rect.length + 2.0 * FIT_MARGIN,
                rect.width + 2.0 * FIT_MARGIN,
                height,
                rect.yaw,
            )
        }
        None => {
            let (x0, x1) = min_max(bev.iter().map(|p| p.x));
            let (y0, y1) = min_max(bev.iter().map(|p| p.y));
            let top = z_max + DEGENERATE_PAD;
            let low = bottom - DEGENERATE_PAD;
            Box3D::new(
                [0.5 * (x0 + x1), 0.5 * (y0 + y1), 0.5 * (low + top)],
                x1 - x0 + 2.0 * DEGENERATE_PAD,
                y1 - y0 + 2.0 * DEGENERATE_PAD,
                top - low,
                0.0,
            )
        }
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Reference points more than `ground_band` above the local ground, as
/// indices into the reference cloud.
pub fn non_ground_indices(cloud: &PointCloud, ground: &GroundMap, ground_band: f64) -> Vec<usize> {
    cloud
        .iter()
        .enumerate()
        .filter(|(_, p)| p.z - ground.height_at(p.x, p.y) > ground_band)
        .map(|(i, _)| i)
        .collect()
}

struct Candidate {
    bbox: Box3D,
    support: usize,
}

pub fn generate_seed_labels(
    ts: &TraversalSet,
    pp: &PpScores,
    cp: &ClusterParams,
    h: &SeedHeuristics,
) -> Result<Vec<LabeledBox>> {
    cp.validate()?;
    h.validate()?;
    let reference = &ts.reference;
    if pp.len() != reference.len() {
        return Err(Error::InvalidInput(format!(
            "sample {}: {} PP scores for {} points",
            ts.sample_id,
            pp.len(),
            reference.len()
        )));
    }
    let ground = estimate_ground_z(reference, h.ground_cell)?;
    let kept = non_ground_indices(reference, &ground, h.ground_band);
    let features: Vec<Feature> = kept
        .iter()
        .map(|&i| {
            let p = &reference.points[i];
            [p.x, p.y, p.z, cp.pp_weight * f64::from(pp.values[i])]
        })
        .collect();
    let labels = dbscan(&features, cp);

    let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (k, label) in labels.iter().enumerate() {
        if let Some(c) = label {
            members[*c].push(kept[k]);
        }
    }
    let above_ground = reference.select(&kept);

    let mut candidates = Vec::new();
    for idx in members {
        if idx.len() < h.min_cluster_points {
            continue;
        }
        let cluster_pp: Vec<f64> = idx.iter().map(|&i| f64::from(pp.values[i])).collect();
        let pp_level = nearest_rank(&cluster_pp, h.cluster_pp_percentile).unwrap_or(1.0);
        if pp_level > h.cluster_pp_max {
            continue;
        }
        let cluster = reference.select(&idx);
        let n = cluster.len() as f64;
        let (mx, my) = cluster
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x / n, sy + p.y / n));
        let ground_z = ground.height_at(mx, my);
        let bottom = cluster.iter().map(|p| p.z).fold(f64::MAX, f64::min);
        if bottom - ground_z > h.max_bottom_above_ground {
            continue;
        }
        let bbox = fit_box(&cluster, ground_z)?;
        let diag = bbox.bev_diagonal();
        if diag < h.min_bev_diagonal || diag > h.max_bev_diagonal {
            continue;
        }
        let support = points_in_box(&above_ground, &bbox).len();
        if support < h.min_cluster_points {
            continue;
        }
        candidates.push(Candidate { bbox, support });
    }

    // Near-duplicate suppression: best-supported box wins.
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[b].support.cmp(&candidates[a].support).then(a.cmp(&b)));
    let mut keep = vec![false; candidates.len()];
    for &i in &order {
        let clash = (0..candidates.len())
            .any(|j| keep[j] && iou_bev(&candidates[i].bbox, &candidates[j].bbox) > DUPLICATE_IOU);
        if !clash {
            keep[i] = true;
        }
    }
    Ok(candidates
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(c, _)| LabeledBox {
            bbox: c.bbox,
            score: Some(SEED_SCORE),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use std::f64::consts::PI;

    fn rect_corners(yaw: f64) -> PointCloud {
        let (s, c) = yaw.sin_cos();
        let mut pts = Vec::new();
        for &(x, y) in &[(2.0, 1.0), (-2.0, 1.0), (-2.0, -1.0), (2.0, -1.0)] {
            for &z in &[0.0, 1.5] {
                pts.push(Point3::new(c * x - s * y, s * x + c * y, z, 0.0));
            }
        }
        PointCloud::new(pts)
    }

    #[test]
    fn fit_axis_aligned_rectangle() {
        let b = fit_box(&rect_corners(0.0), 0.0).unwrap();
        assert!((b.length - 4.0).abs() < 1e-4);
        assert!((b.width - 2.0).abs() < 1e-4);
        assert!((b.height - 1.5).abs() < 1e-4);
        assert!(b.yaw.abs() < 1e-9);
        assert!(b.cx.abs() < 1e-9 && b.cy.abs() < 1e-9 && (b.cz - 0.75).abs() < 1e-4);
    }

    #[test]
    fn fit_rotated_rectangle() {
        let yaw = 30f64.to_radians();
        let b = fit_box(&rect_corners(yaw), 0.0).unwrap();
        assert!((b.length - 4.0).abs() < 1e-4 && (b.width - 2.0).abs() < 1e-4);
        let diff = (b.yaw - yaw).rem_euclid(PI / 2.0);
        assert!(diff < 1e-9 || (PI / 2.0 - diff) < 1e-9);
    }

    #[test]
    fn fit_degenerate_line() {
        let line: PointCloud = (0..10).map(|i| Point3::new(i as f64, 0.0, 1.0, 0.0)).collect();
        let b = fit_box(&line, 0.0).unwrap();
        assert!((b.length - (9.0 + 2.0 * DEGENERATE_PAD)).abs() < 1e-9);
        assert!((b.width - 2.0 * DEGENERATE_PAD).abs() < 1e-9);
        assert!(line.iter().all(|p| b.contains(p)));
    }

    #[test]
    fn fitted_box_contains_cluster() {
        let pts: PointCloud = (0..50)
            .map(|i| {
                let t = i as f64 * 0.37;
                Point3::new(t.cos() * 2.0 + 0.1 * t, t.sin(), 0.3 + (i % 7) as f64 * 0.2, 0.0)
            })
            .collect();
        let b = fit_box(&pts, 0.0).unwrap();
        assert_eq!(points_in_box(&pts, &b).len(), pts.len());
    }

    #[test]
    fn small_cluster_rejected() {
        let mut reference: Vec<Point3> = Vec::new();
        for i in 0..30 {
            for j in 0..30 {
                reference.push(Point3::new(i as f64 * 0.3, j as f64 * 0.3, 0.0, 0.0));
            }
        }
        let ground_pts = reference.len();
        for k in 0..3 {
            reference.push(Point3::new(4.0 + 0.1 * k as f64, 4.0, 1.0, 0.0));
        }
        let reference = PointCloud::new(reference);
        let mut pp = vec![1.0f32; ground_pts];
        pp.extend([0.0; 3]);
        let ts = TraversalSet::new("0", reference.clone(), vec![reference]).unwrap();
        let cp = ClusterParams {
            min_pts: 2,
            ..Default::default()
        };
        let seeds =
            generate_seed_labels(&ts, &PpScores::new(pp).unwrap(), &cp, &SeedHeuristics::default())
                .unwrap();
        assert!(seeds.is_empty());
    }
}
