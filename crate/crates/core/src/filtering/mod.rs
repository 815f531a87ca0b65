//! Confidence-score and persistence filtering of a round's detections.
//!
//! A round starts from the detector's output `B_j`. A single score threshold
//! `t` is taken over all samples before anything else is removed, then the
//! selected [`FilterStrategy`] decides which boxes become the next pseudo
//! labels and which feed the ground-truth sampling database.

mod strategy;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ephemerality::PpScores;
use crate::error::{Error, Result};
use crate::geometry::{points_in_box, LabeledBox, PointCloud};
use crate::quantile::nearest_rank;

pub use strategy::{
    FilterAndKeepStatic, FilterDataAugmentation, FilterPseudoLabels, FilterRegistry,
    FilterStrategy, NoScoreFilter,
};

/// Boxes grouped by sample id, for one round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub round: usize,
    pub samples: BTreeMap<String, Vec<LabeledBox>>,
}

impl LabelSet {
    pub fn new(round: usize) -> Self {
        Self {
            round,
            samples: BTreeMap::new(),
        }
    }

    pub fn total(&self) -> usize {
        self.samples.values().map(Vec::len).sum()
    }

    pub fn get(&self, sample_id: &str) -> &[LabeledBox] {
        self.samples.get(sample_id).map_or(&[], Vec::as_slice)
    }

    pub fn scores(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        self.samples.values().flatten().map(|b| b.score)
    }

    /// Same sample keys, boxes kept where `keep` holds.
    pub fn retain_boxes(&self, keep: impl Fn(&LabeledBox) -> bool) -> LabelSet {
        LabelSet {
            round: self.round,
            samples: self
                .samples
                .iter()
                .map(|(id, boxes)| (id.clone(), boxes.iter().copied().filter(|b| keep(b)).collect()))
                .collect(),
        }
    }

    /// True when every sample's boxes appear, in order, among `other`'s boxes
    /// for the same sample.
    pub fn is_subset_of(&self, other: &LabelSet) -> bool {
        self.samples.iter().all(|(id, boxes)| {
            let mut theirs = other.get(id).iter();
            boxes.iter().all(|b| theirs.any(|o| o == b))
        })
    }

    fn require_scores(&self) -> Result<Vec<f64>> {
        self.samples
            .iter()
            .flat_map(|(id, boxes)| boxes.iter().map(move |b| (id, b)))
            .map(|(id, b)| match b.score {
                Some(s) if (0.0..=1.0).contains(&s) => Ok(s),
                Some(s) => Err(Error::InvalidInput(format!("sample {id}: score {s} outside [0, 1]"))),
                None => Err(Error::InvalidInput(format!("sample {id}: detection without a score"))),
            })
            .collect()
    }
}

/// Confidence threshold for a round. `KeepAll` is the sentinel produced when
/// the percentile rank is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "Option<f64>", into = "Option<f64>")]
pub enum Threshold {
    KeepAll,
    Above(f64),
}

impl Threshold {
    /// Strictly-greater test; a score equal to the threshold is dropped.
    pub fn passes(&self, score: f64) -> bool {
        match self {
            Threshold::KeepAll => true,
            Threshold::Above(t) => score > *t,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Threshold::KeepAll => None,
            Threshold::Above(t) => Some(*t),
        }
    }
}

impl From<Option<f64>> for Threshold {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Threshold::KeepAll, Threshold::Above)
    }
}

impl From<Threshold> for Option<f64> {
    fn from(t: Threshold) -> Self {
        t.value()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Fraction of lowest-confidence boxes targeted by the score threshold.
    pub rho: f64,
    /// Percentile of in-box PP scores tested against `gamma`.
    pub alpha: f64,
    pub gamma: f64,
    /// PP-rejected boxes above this confidence survive static retention.
    pub high_threshold: f64,
    pub algorithm: String,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            rho: 0.2,
            alpha: 0.2,
            gamma: 0.5,
            high_threshold: 0.8,
            algorithm: FilterDataAugmentation::NAME.to_string(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.rho)
            && (0.0..=1.0).contains(&self.alpha)
            && (0.0..=1.0).contains(&self.gamma)
            && (0.0..=1.0).contains(&self.high_threshold);
        if !ok {
            return Err(Error::Config(format!(
                "filter fractions out of range: rho={} alpha={} gamma={} high_threshold={}",
                self.rho, self.alpha, self.gamma, self.high_threshold
            )));
        }
        Ok(())
    }
}

/// A sample's reference cloud with its PP sidecar.
#[derive(Debug, Clone)]
pub struct PpScene {
    pub cloud: PointCloud,
    pub pp: PpScores,
}

#[derive(Debug, Clone, Default)]
pub struct PpScenes {
    scenes: BTreeMap<String, PpScene>,
}

impl PpScenes {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sample_id: impl Into<String>, cloud: PointCloud, pp: PpScores) -> Result<()> {
        let sample_id = sample_id.into();
        if cloud.len() != pp.len() {
            return Err(Error::InvalidInput(format!(
                "sample {sample_id}: {} PP scores for {} points",
                pp.len(),
                cloud.len()
            )));
        }
        self.scenes.insert(sample_id, PpScene { cloud, pp });
        Ok(())
    }

    pub fn get(&self, sample_id: &str) -> Option<&PpScene> {
        self.scenes.get(sample_id)
    }

    pub fn sample_ids(&self) -> impl Iterator<Item = &str> {
        self.scenes.keys().map(String::as_str)
    }
}

/// Global score threshold: with the scores ascending and `k = floor(rho * n)`,
/// the k-th smallest score, or [`Threshold::KeepAll`] when `k = 0`.
pub fn percentile_threshold(scores: &[f64], rho: f64) -> Result<Threshold> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("cannot take a percentile of no scores".into()));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!("rho must be in [0, 1), got {rho}")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
    let k = (rho * sorted.len() as f64 + 1e-9).floor() as usize;
    Ok(if k == 0 {
        Threshold::KeepAll
    } else {
        Threshold::Above(sorted[k - 1])
    })
}

pub fn filter_by_confidence(labels: &LabelSet, t: Threshold) -> LabelSet {
    labels.retain_boxes(|b| b.score.is_some_and(|s| t.passes(s)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpSplit {
    pub kept: LabelSet,
    pub removed: LabelSet,
}

/// Per-box outcome of the PP test, aligned with the input label set.
#[derive(Debug, Clone, PartialEq)]
pub struct PpVerdicts {
    labels: LabelSet,
    keep: BTreeMap<String, Vec<bool>>,
}

impl PpVerdicts {
    fn select(&self, pick: impl Fn(&LabeledBox, bool) -> bool) -> LabelSet {
        LabelSet {
            round: self.labels.round,
            samples: self
                .labels
                .samples
                .iter()
                .map(|(id, boxes)| {
                    let keep = &self.keep[id];
                    let chosen = boxes
                        .iter()
                        .zip(keep)
                        .filter(|(b, k)| pick(b, **k))
                        .map(|(b, _)| *b)
                        .collect();
                    (id.clone(), chosen)
                })
                .collect(),
        }
    }

    pub fn kept(&self) -> LabelSet {
        self.select(|_, k| k)
    }

    pub fn removed(&self) -> LabelSet {
        self.select(|_, k| !k)
    }

    /// PP-kept boxes plus PP-removed boxes scoring above `high_threshold`.
    pub fn kept_or_confident(&self, high_threshold: f64) -> LabelSet {
        self.select(|b, k| k || b.score.is_some_and(|s| s > high_threshold))
    }

    pub fn split(&self) -> PpSplit {
        PpSplit {
            kept: self.kept(),
            removed: self.removed(),
        }
    }
}

/// Evaluates the PP test for every box: a box fails when the `alpha`
/// nearest-rank percentile of the PP scores of the reference points inside
/// it exceeds `gamma`, or when no point lies inside it.
pub fn pp_verdicts(labels: &LabelSet, pp: &PpScenes, alpha: f64, gamma: f64) -> Result<PpVerdicts> {
    let keep = labels
        .samples
        .par_iter()
        .map(|(id, boxes)| {
            let scene = pp
                .get(id)
                .ok_or_else(|| Error::MissingData(format!("no PP scores for sample {id}")))?;
            let verdicts = boxes
                .iter()
                .map(|b| {
                    let inside: Vec<f64> = points_in_box(&scene.cloud, &b.bbox)
                        .into_iter()
                        .map(|i| f64::from(scene.pp.values[i]))
                        .collect();
                    nearest_rank(&inside, alpha).is_some_and(|level| level <= gamma)
                })
                .collect();
            Ok((id.clone(), verdicts))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(PpVerdicts {
        labels: labels.clone(),
        keep,
    })
}

pub fn filter_by_pp(labels: &LabelSet, pp: &PpScenes, alpha: f64, gamma: f64) -> Result<PpSplit> {
    Ok(pp_verdicts(labels, pp, alpha, gamma)?.split())
}

/// [`filter_by_pp`] kept set, plus PP-removed boxes with score above
/// `high_threshold` (parked objects the detector is sure of). Per-sample
/// order is preserved.
pub fn filter_by_pp_keep_static(
    labels: &LabelSet,
    pp: &PpScenes,
    alpha: f64,
    gamma: f64,
    high_threshold: f64,
) -> Result<LabelSet> {
    Ok(pp_verdicts(labels, pp, alpha, gamma)?.kept_or_confident(high_threshold))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundCounts {
    pub detections: usize,
    pub after_pp: usize,
    pub pseudo_labels: usize,
    pub augmentation_labels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundArtifacts {
    /// `B_j`, the next round's training labels.
    pub pseudo_labels: LabelSet,
    /// Labels the ground-truth database is built from.
    pub augmentation_labels: LabelSet,
    pub threshold_used: Threshold,
    pub counts: RoundCounts,
}

pub fn round_step(detections: &LabelSet, pp: &PpScenes, cfg: &FilterConfig) -> Result<RoundArtifacts> {
    round_step_with(&FilterRegistry::builtin(), detections, pp, cfg)
}

pub fn round_step_with(
    registry: &FilterRegistry,
    detections: &LabelSet,
    pp: &PpScenes,
    cfg: &FilterConfig,
) -> Result<RoundArtifacts> {
    cfg.validate()?;
    let strategy = registry.get(&cfg.algorithm)?;
    let scores = detections.require_scores()?;
    // The threshold is taken over the raw detections, before PP filtering.
    let t = if scores.is_empty() || !strategy.uses_threshold() {
        Threshold::KeepAll
    } else {
        percentile_threshold(&scores, cfg.rho)?
    };
    let verdicts = pp_verdicts(detections, pp, cfg.alpha, cfg.gamma)?;
    let (pseudo_labels, augmentation_labels) = strategy.apply(&verdicts, cfg, t);
    let counts = RoundCounts {
        detections: detections.total(),
        after_pp: verdicts.kept().total(),
        pseudo_labels: pseudo_labels.total(),
        augmentation_labels: augmentation_labels.total(),
    };
    Ok(RoundArtifacts {
        pseudo_labels,
        augmentation_labels,
        threshold_used: t,
        counts,
    })
}
