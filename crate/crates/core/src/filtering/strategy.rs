//! The interchangeable round filters, selected by name at run time.

use super::{filter_by_confidence, FilterConfig, LabelSet, PpVerdicts, Threshold};
use crate::error::{Error, Result};

pub trait FilterStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn description(&self) -> &'static str;

    /// Whether the round's confidence threshold is computed at all.
    fn uses_threshold(&self) -> bool {
        true
    }

    /// Returns `(pseudo_labels, augmentation_labels)` from the PP verdicts
    /// over the raw detections and the pooled threshold.
    fn apply(&self, verdicts: &PpVerdicts, cfg: &FilterConfig, t: Threshold) -> (LabelSet, LabelSet);
}

/// PP filter, then confidence filter; the database uses the same labels.
pub struct FilterPseudoLabels;

impl FilterPseudoLabels {
    pub const NAME: &'static str = "filter_pseudo_labels";
}

impl FilterStrategy for FilterPseudoLabels {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn description(&self) -> &'static str {
        "drop low-confidence pseudo-labels after the PP filter; database = pseudo-labels"
    }

    fn apply(&self, verdicts: &PpVerdicts, _cfg: &FilterConfig, t: Threshold) -> (LabelSet, LabelSet) {
        let labels = filter_by_confidence(&verdicts.kept(), t);
        (labels.clone(), labels)
    }
}

/// As [`FilterPseudoLabels`], but confident PP-rejected boxes are kept.
pub struct FilterAndKeepStatic;

impl FilterAndKeepStatic {
    pub const NAME: &'static str = "filter_and_keep_static";
}

impl FilterStrategy for FilterAndKeepStatic {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn description(&self) -> &'static str {
        "like filter_pseudo_labels, but PP-rejected boxes above high_threshold are retained"
    }

    fn apply(&self, verdicts: &PpVerdicts, cfg: &FilterConfig, t: Threshold) -> (LabelSet, LabelSet) {
        let labels = filter_by_confidence(&verdicts.kept_or_confident(cfg.high_threshold), t);
        (labels.clone(), labels)
    }
}

/// Pseudo-labels keep every PP-accepted box; only the augmentation database
/// is confidence filtered.
pub struct FilterDataAugmentation;

impl FilterDataAugmentation {
    pub const NAME: &'static str = "filter_data_augmentation";
}

impl FilterStrategy for FilterDataAugmentation {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn description(&self) -> &'static str {
        "keep all PP-accepted pseudo-labels; confidence filter only the augmentation database"
    }

    fn apply(&self, verdicts: &PpVerdicts, _cfg: &FilterConfig, t: Threshold) -> (LabelSet, LabelSet) {
        let labels = verdicts.kept();
        let database = filter_by_confidence(&labels, t);
        (labels, database)
    }
}

/// Baseline without any confidence filtering (PP filter only).
pub struct NoScoreFilter;

impl NoScoreFilter {
    pub const NAME: &'static str = "none";
}

impl FilterStrategy for NoScoreFilter {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn description(&self) -> &'static str {
        "baseline: PP filter only, no confidence threshold"
    }

    fn uses_threshold(&self) -> bool {
        false
    }

    fn apply(&self, verdicts: &PpVerdicts, _cfg: &FilterConfig, _t: Threshold) -> (LabelSet, LabelSet) {
        let labels = verdicts.kept();
        (labels.clone(), labels)
    }
}

pub struct FilterRegistry {
    strategies: Vec<Box<dyn FilterStrategy>>,
}

impl FilterRegistry {
    pub fn empty() -> Self {
        Self {
            strategies: Vec::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut registry = Self::empty();
        registry.register(Box::new(FilterPseudoLabels));
        registry.register(Box::new(FilterAndKeepStatic));
        registry.register(Box::new(FilterDataAugmentation));
        registry.register(Box::new(NoScoreFilter));
        registry
    }

    /// Adds a strategy, replacing any existing one with the same name.
    pub fn register(&mut self, strategy: Box<dyn FilterStrategy>) {
        self.strategies.retain(|s| s.name() != strategy.name());
        self.strategies.push(strategy);
    }

    pub fn get(&self, name: &str) -> Result<&dyn FilterStrategy> {
        self.strategies
            .iter()
            .find(|s| s.name() == name)
            .map(|s| s.as_ref())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown filter algorithm {name:?}; known: {}",
                    self.names().join(", ")
                ))
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.strategies.iter().map(|s| s.name()).collect()
    }
}

impl Default for FilterRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_name_lists_known() {
        let registry = FilterRegistry::builtin();
        let err = registry.get("bogus").err().unwrap().to_string();
        assert!(err.contains("filter_data_augmentation"));
        assert_eq!(registry.names().len(), 4);
    }
}
