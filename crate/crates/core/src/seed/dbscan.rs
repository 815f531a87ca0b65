//! Density-based clustering over (x, y, z, weighted PP) feature vectors.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::VoxelGrid;

pub type Feature = [f64; 4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    /// Neighborhood radius in feature space (meters).
    pub eps: f64,
    /// Neighbors (the point itself included) needed for a core point.
    pub min_pts: usize,
    /// Meters of feature distance per unit of PP score.
    pub pp_weight: f64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            eps: 1.0,
            min_pts: 10,
            pp_weight: 5.0,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || self.min_pts < 1 || !(self.pp_weight >= 0.0) {
            return Err(Error::Config(format!("invalid cluster params {self:?}")));
        }
        Ok(())
    }
}

fn dist_sq(a: &Feature, b: &Feature) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct Neighborhoods<'a> {
    features: &'a [Feature],
    grid: VoxelGrid,
    eps_sq: f64,
}

impl Neighborhoods<'_> {
    // The spatial part of the distance never exceeds the full 4D distance,
    // so the xyz grid yields a superset of the true neighbors.
    fn of(&self, i: usize) -> Vec<usize> {
        let f = &self.features[i];
        let mut out = Vec::new();
        self.grid.for_each_candidate([f[0], f[1], f[2]], |j| {
            if dist_sq(f, &self.features[j]) <= self.eps_sq {
                out.push(j);
            }
        });
        out
    }
}

/// Cluster id per input point, `None` for noise. Clusters are numbered in
/// the order their lowest-index core point appears; a border point reachable
/// from several clusters belongs to the earliest.
pub fn dbscan(features: &[Feature], params: &ClusterParams) -> Vec<Option<usize>> {
    let n = features.len();
    let hood = Neighborhoods {
        features,
        grid: VoxelGrid::build(features.iter().map(|f| [f[0], f[1], f[2]]), params.eps),
        eps_sq: params.eps * params.eps,
    };
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next_cluster = 0;

    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let seeds = hood.of(i);
        if seeds.len() < params.min_pts {
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[i] = Some(cluster);
        let mut queue: VecDeque<usize> = seeds.into();
        while let Some(j) = queue.pop_front() {
            if labels[j].is_none() {
                labels[j] = Some(cluster);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let reach = hood.of(j);
            if reach.len() >= params.min_pts {
                queue.extend(reach);
            }
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(cx: f64, n: usize) -> Vec<Feature> {
        (0..n)
            .map(|i| [cx + 0.05 * i as f64, 0.01 * (i % 3) as f64, 0.0, 0.0])
            .collect()
    }

    #[test]
    fn separated_blobs_make_two_clusters() {
        let params = ClusterParams {
            eps: 1.0,
            min_pts: 5,
            pp_weight: 1.0,
        };
        let mut features = blob(0.0, 8);
        features.extend(blob(10.0, 8));
        let labels = dbscan(&features, &params);
        assert!(labels[..8].iter().all(|l| *l == Some(0)));
        assert!(labels[8..].iter().all(|l| *l == Some(1)));
    }

    #[test]
    fn isolated_point_is_noise() {
        let params = ClusterParams {
            eps: 1.0,
            min_pts: 3,
            pp_weight: 1.0,
        };
        assert_eq!(dbscan(&[[0.0; 4]], &params), vec![None]);
    }

    #[test]
    fn pp_dimension_separates_coincident_points() {
        let params = ClusterParams {
            eps: 1.0,
            min_pts: 3,
            pp_weight: 5.0,
        };
        let mut features: Vec<Feature> = (0..5).map(|i| [0.1 * i as f64, 0.0, 0.0, 0.0]).collect();
        features.extend((0..5).map(|i| [0.1 * i as f64, 0.0, 0.0, 5.0]));
        let labels = dbscan(&features, &params);
        assert_eq!(labels[0], Some(0));
        assert_eq!(labels[5], Some(1));
    }
}
