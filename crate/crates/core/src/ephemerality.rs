//! Per-point persistence (PP) scores from repeated traversals.
//!
//! For a reference point, count the traversal points within `radius` in each
//! past traversal. The score is the normalized Shannon entropy of those
//! counts: a neighborhood populated evenly in every traversal scores 1
//! (persistent background), one seen in a single traversal or in none scores
//! 0 (ephemeral).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Point3};
use crate::spatial::VoxelGrid;

pub const DEFAULT_PP_RADIUS: f64 = 0.3;

/// A reference scan and its aligned past traversals, all in one world frame.
#[derive(Debug, Clone)]
pub struct TraversalSet {
    pub sample_id: String,
    pub reference: PointCloud,
    pub traversals: Vec<PointCloud>,
}

impl TraversalSet {
    pub fn new(
        sample_id: impl Into<String>,
        reference: PointCloud,
        traversals: Vec<PointCloud>,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        if traversals.is_empty() {
            return Err(Error::InvalidInput(format!(
                "sample {sample_id}: at least one past traversal is required"
            )));
        }
        if reference.is_empty() || traversals.iter().any(PointCloud::is_empty) {
            return Err(Error::InvalidInput(format!(
                "sample {sample_id}: empty point cloud in traversal set"
            )));
        }
        Ok(Self {
            sample_id,
            reference,
            traversals,
        })
    }
}

/// One score in [0, 1] per reference point, in point-file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PpScores {
    pub values: Vec<f32>,
}

impl PpScores {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("PP score {bad} outside [0, 1]")));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn position(p: &Point3) -> [f64; 3] {
    [p.x, p.y, p.z]
}

/// Number of `traversal` points within `radius` (inclusive) of each
/// reference point.
pub fn neighbor_counts(reference: &PointCloud, traversal: &PointCloud, radius: f64) -> Vec<u32> {
    assert!(radius > 0.0, "radius must be positive");
    let grid = VoxelGrid::build(traversal.iter().map(position), radius);
    let r2 = radius * radius;
    reference
        .points
        .par_iter()
        .map(|p| {
            let mut n = 0u32;
            grid.for_each_candidate(position(p), |j| {
                if traversal.points[j].dist_sq(p) <= r2 {
                    n += 1;
                }
            });
            n
        })
        .collect()
}

/// Normalized entropy of per-traversal neighbor counts.
pub fn pp_from_counts(counts: &[u32]) -> f64 {
    let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    if total == 0 {
        return 0.0;
    }
    if counts.len() == 1 {
        return 1.0;
    }
    let total = total as f64;
    let entropy: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let q = f64::from(c) / total;
            -q * q.ln()
        })
        .sum();
    (entropy / (counts.len() as f64).ln()).clamp(0.0, 1.0)
}

pub fn compute_pp_scores(ts: &TraversalSet, radius: f64) -> PpScores {
    let per_traversal: Vec<Vec<u32>> = ts
        .traversals
        .iter()
        .map(|t| neighbor_counts(&ts.reference, t, radius))
        .collect();
    let values = (0..ts.reference.len())
        .into_par_iter()
        .map(|i| {
            let counts: Vec<u32> = per_traversal.iter().map(|c| c[i]).collect();
            pp_from_counts(&counts) as f32
        })
        .collect();
    PpScores { values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn entropy_examples() {
        assert!((pp_from_counts(&[3, 3, 3, 3]) - 1.0).abs() < 1e-12);
        assert_eq!(pp_from_counts(&[0, 9, 0, 0]), 0.0);
        assert!((pp_from_counts(&[1, 1, 0, 0]) - 0.5).abs() < 1e-12);
        assert_eq!(pp_from_counts(&[0, 0, 0]), 0.0);
        assert_eq!(pp_from_counts(&[4]), 1.0);
        assert_eq!(pp_from_counts(&[0]), 0.0);
    }

    #[test]
    fn self_neighborhood_and_empty_region() {
        let cloud: PointCloud = (0..20)
            .map(|i| Point3::new(i as f64 * 0.5, 0.0, 0.0, 0.0))
            .collect();
        assert!(neighbor_counts(&cloud, &cloud, 0.3).iter().all(|&c| c >= 1));
        let far = PointCloud::new(vec![Point3::new(100.0, 0.0, 0.0, 0.0)]);
        assert!(neighbor_counts(&cloud, &far, 0.3).iter().all(|&c| c == 0));
    }

    #[test]
    fn traversal_set_validation() {
        let c = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0, 0.0)]);
        assert!(TraversalSet::new("0", c.clone(), vec![]).is_err());
        assert!(TraversalSet::new("0", c.clone(), vec![PointCloud::default()]).is_err());
        assert!(TraversalSet::new("0", c.clone(), vec![c]).is_ok());
    }

    proptest! {
        #[test]
        fn pp_in_unit_interval_and_scale_invariant(
            counts in prop::collection::vec(0u32..50, 1..8),
            k in 1u32..20,
        ) {
            let pp = pp_from_counts(&counts);
            prop_assert!((0.0..=1.0).contains(&pp));
            let scaled: Vec<u32> = counts.iter().map(|c| c * k).collect();
            prop_assert!((pp_from_counts(&scaled) - pp).abs() < 1e-12);
        }

        #[test]
        fn empty_extra_traversal_never_increases_pp(
            counts in prop::collection::vec(0u32..50, 2..8),
        ) {
            let mut extended = counts.clone();
            extended.push(0);
            prop_assert!(pp_from_counts(&extended) <= pp_from_counts(&counts) + 1e-12);
        }
    }
}
