use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Beta, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Box3D, LabeledBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    fn dist(&self) -> Beta<f64> {
        Beta::new(self.a, self.b).expect("validated beta parameters")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimDetectorParams {
    /// Detection probability with an empty memory.
    pub p0: f64,
    /// Gain per similar box in memory.
    pub eta: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub fp_per_scene: f64,
    /// Share of false positives placed next to a real object.
    pub fp_near_object_fraction: f64,
    /// Center offset range of those near-miss boxes (meters).
    pub fp_near_offset: (f64, f64),
    /// Half-extent of the square where the remaining false positives land.
    pub fp_extent: f64,
    pub fp_length_range: (f64, f64),
    pub fp_width_range: (f64, f64),
    pub fp_height_range: (f64, f64),
    pub tp_score: BetaParams,
    pub fp_score: BetaParams,
    /// Relative tolerance on each of length, width and height.
    pub size_tolerance: f64,
    /// Center jitter standard deviation at score 0 (meters).
    pub jitter_sigma: f64,
    /// Dimension jitter relative to the center jitter.
    pub dim_jitter_ratio: f64,
    /// Yaw jitter standard deviation at score 0 (radians).
    pub yaw_jitter: f64,
    pub rng_seed: u64,
}

impl Default for SimDetectorParams {
    fn default() -> Self {
        Self {
            p0: 0.1,
            eta: 0.002,
            p_min: 0.0,
            p_max: 0.95,
            fp_per_scene: 4.0,
            fp_near_object_fraction: 0.5,
            fp_near_offset: (2.5, 4.0),
            fp_extent: 36.0,
            fp_length_range: (1.0, 6.0),
            fp_width_range: (0.6, 2.5),
            fp_height_range: (0.8, 2.2),
            tp_score: BetaParams { a: 5.0, b: 2.0 },
            fp_score: BetaParams { a: 2.0, b: 5.0 },
            size_tolerance: 0.15,
            jitter_sigma: 0.5,
            dim_jitter_ratio: 0.3,
            yaw_jitter: 0.3,
            rng_seed: 0,
        }
    }
}

impl SimDetectorParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi;
        let ok = unit(self.p0)
            && unit(self.p_min)
            && unit(self.p_max)
            && self.p_min <= self.p_max
            && self.eta >= 0.0
            && self.fp_per_scene >= 0.0
            && unit(self.fp_near_object_fraction)
            && self.fp_near_offset.0 >= 0.0
            && self.fp_near_offset.0 <= self.fp_near_offset.1
            && self.fp_extent > 0.0
            && range_ok(self.fp_length_range)
            && range_ok(self.fp_width_range)
            && range_ok(self.fp_height_range)
            && [self.tp_score, self.fp_score].iter().all(|d| d.a > 0.0 && d.b > 0.0)
            && self.size_tolerance >= 0.0
            && self.jitter_sigma >= 0.0
            && self.dim_jitter_ratio >= 0.0
            && self.yaw_jitter >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid simulated detector parameters {self:?}")));
        }
        Ok(())
    }
}

/// Similarity memory of every box seen in training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimDetectorModel {
    pub memory: Vec<LabeledBox>,
}

impl SimDetectorModel {
    /// Memory boxes whose length, width and height are each within `tol`
    /// (relative) of `target`'s.
    pub fn similar_count(&self, target: &Box3D, tol: f64) -> usize {
        let close = |m: f64, t: f64| (m - t).abs() <= tol * t;
        self.memory
            .iter()
            .filter(|m| {
                close(m.bbox.length, target.length)
                    && close(m.bbox.width, target.width)
                    && close(m.bbox.height, target.height)
            })
            .count()
    }
}

/// Memorizes the labels of every (augmented) training scene.
pub fn sim_train<'a>(scenes: impl IntoIterator<Item = &'a [LabeledBox]>) -> SimDetectorModel {
    SimDetectorModel {
        memory: scenes.into_iter().flat_map(|s| s.iter().copied()).collect(),
    }
}

pub fn detection_probability(n_sim: usize, params: &SimDetectorParams) -> f64 {
    (params.p0 + params.eta * n_sim as f64).clamp(params.p_min, params.p_max)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Detections for one scene. Every object consumes the same random draws
/// whether or not it is detected, so two models differing only in memory
/// see identical scores, jitter and false positives.
pub fn sim_infer<R: Rng + ?Sized>(
    model: &SimDetectorModel,
    gt: &[Box3D],
    params: &SimDetectorParams,
    rng: &mut R,
) -> Vec<LabeledBox> {
    let tp_dist = params.tp_score.dist();
    let fp_dist = params.fp_score.dist();
    let mut out = Vec::new();

    for b in gt {
        let p = detection_probability(model.similar_count(b, params.size_tolerance), params);
        let u: f64 = rng.random();
        let score = tp_dist.sample(rng);
        let draws: [f64; 7] = std::array::from_fn(|_| normal(rng));
        if u >= p {
            continue;
        }
        let s = params.jitter_sigma * (1.0 - score);
        let d = s * params.dim_jitter_ratio;
        let dim = |v: f64, n: f64| (v + d * n).max(0.1);
        let jittered = Box3D {
            cx: b.cx + s * draws[0],
            cy: b.cy + s * draws[1],
            cz: b.cz + s * draws[2],
            length: dim(b.length, draws[3]),
            width: dim(b.width, draws[4]),
            height: dim(b.height, draws[5]),
            yaw: normalize_angle(b.yaw + params.yaw_jitter * (1.0 - score) * draws[6]),
        };
        out.push(LabeledBox {
            bbox: jittered,
            score: Some(score),
        });
    }

    let n_fp = if params.fp_per_scene > 0.0 {
        Poisson::new(params.fp_per_scene).expect("positive rate").sample(rng) as usize
    } else {
        0
    };
    for _ in 0..n_fp {
        let near: f64 = rng.random();
        let pick: f64 = rng.random();
        let offset = uniform(rng, params.fp_near_offset);
        let dir = uniform(rng, (-PI, PI));
        let free = [
            uniform(rng, (-params.fp_extent, params.fp_extent)),
            uniform(rng, (-params.fp_extent, params.fp_extent)),
        ];
        let l = uniform(rng, params.fp_length_range);
        let w = uniform(rng, params.fp_width_range);
        let h = uniform(rng, params.fp_height_range);
        let yaw = uniform(rng, (-PI, PI));
        let score = fp_dist.sample(rng);

        let (x, y) = if near < params.fp_near_object_fraction && !gt.is_empty() {
            let anchor = &gt[((pick * gt.len() as f64) as usize).min(gt.len() - 1)];
            (anchor.cx + offset * dir.cos(), anchor.cy + offset * dir.sin())
        } else {
            (free[0], free[1])
        };
        let (l, w) = if l >= w { (l, w) } else { (w, l) };
        let bbox = Box3D::new([x, y, h / 2.0], l, w, h, yaw).expect("positive dims");
        out.push(LabeledBox {
            bbox,
            score: Some(score),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn gt() -> Vec<Box3D> {
        (0..6)
            .map(|i| Box3D::new([8.0 * i as f64, 3.0, 0.8], 4.0 + 0.1 * i as f64, 1.8, 1.6, 0.2).unwrap())
            .collect()
    }

    #[test]
    fn perfect_detector_returns_ground_truth() {
        let params = SimDetectorParams {
            p0: 1.0,
            p_max: 1.0,
            eta: 0.0,
            fp_per_scene: 0.0,
            jitter_sigma: 0.0,
            yaw_jitter: 0.0,
            ..Default::default()
        };
        let dets = sim_infer(&SimDetectorModel::default(), &gt(), &params, &mut stream(1, &[]));
        assert_eq!(dets.len(), 6);
        for (d, g) in dets.iter().zip(gt()) {
            assert_eq!(d.bbox, g);
            assert!(d.score.unwrap() > 0.0 && d.score.unwrap() < 1.0);
        }
    }

    #[test]
    fn blind_detector_only_false_positives() {
        let params = SimDetectorParams {
            p0: 0.0,
            eta: 0.0,
            fp_per_scene: 20.0,
            ..Default::default()
        };
        let dets = sim_infer(&SimDetectorModel::default(), &gt(), &params, &mut stream(1, &[]));
        assert!(!dets.is_empty());
        for d in &dets {
            assert!(gt().iter().all(|g| d.bbox != *g));
        }
    }

    #[test]
    fn empty_training_gives_empty_memory() {
        let model = sim_train(std::iter::empty::<&[LabeledBox]>());
        assert!(model.memory.is_empty());
    }

    #[test]
    fn paired_runs_nest() {
        let params = SimDetectorParams::default();
        let small = SimDetectorModel::default();
        let big = sim_train([gt().into_iter().map(LabeledBox::ground_truth).collect::<Vec<_>>().as_slice()]);
        let a = sim_infer(&small, &gt(), &params, &mut stream(9, &[]));
        let b = sim_infer(&big, &gt(), &params, &mut stream(9, &[]));
        assert!(a.iter().all(|d| b.contains(d)));
    }
}
