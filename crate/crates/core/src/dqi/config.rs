use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::DqiError;

/// The seven quality components. Higher component values mean higher quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Component {
    /// Vocabulary richness and length dispersion.
    C1,
    /// Normalized n-gram, POS and sentence entropy.
    C2,
    /// Inter-sample word overlap.
    C3,
    /// Intra-sample field overlap versus label.
    C4,
    /// Intra-sample field similarity versus label.
    C5,
    /// Label-conditioned feature leakage.
    C6,
    /// Train/eval split overlap.
    C7,
}

impl Component {
    pub const ALL: [Component; 7] = [
        Component::C1,
        Component::C2,
        Component::C3,
        Component::C4,
        Component::C5,
        Component::C6,
        Component::C7,
    ];

    pub fn describe(self) -> &'static str {
        match self {
            Component::C1 => "vocabulary richness and length spread",
            Component::C2 => "n-gram and sentence diversity",
            Component::C3 => "overlap with other samples",
            Component::C4 => "word overlap between fields as a label cue",
            Component::C5 => "field similarity as a label cue",
            Component::C6 => "words that give away the label",
            Component::C7 => "overlap between evaluation and training samples",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Impact percentiles strictly below this are red.
    pub red_below: f64,
    /// Impact percentiles at or above this are green.
    pub green_at_or_above: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            red_below: 0.25,
            green_at_or_above: 0.60,
        }
    }
}

/// Where C5 gets its per-field vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilaritySource {
    /// Embeddings when every sample has a row per field, bag-of-words otherwise.
    #[default]
    Auto,
    Embeddings,
    BagOfWords,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqiConfig {
    pub weights: BTreeMap<Component, f64>,
    /// Components whose impacts rank samples for deletion.
    pub sort_components: Vec<Component>,
    pub ngram_max: usize,
    pub pmi_alpha: f64,
    pub mi_bins: usize,
    pub thresholds: Thresholds,
    /// Rank by a sample's own summand where a component has one, instead of
    /// its leave-one-out impact.
    pub standalone_scores: bool,
    pub c5_source: SimilaritySource,
}

impl Default for DqiConfig {
    fn default() -> Self {
        Self {
            weights: Component::ALL.iter().map(|&c| (c, 1.0)).collect(),
            sort_components: vec![Component::C1],
            ngram_max: 3,
            pmi_alpha: 1.0,
            mi_bins: 10,
            thresholds: Thresholds::default(),
            standalone_scores: false,
            c5_source: SimilaritySource::Auto,
        }
    }
}

const BUNDLED_DEFAULT: &str = include_str!("../../data/default-dqi.json");

impl DqiConfig {
    /// The configuration shipped as `default-dqi.json`.
    pub fn bundled_default() -> Self {
        serde_json::from_str(BUNDLED_DEFAULT).expect("bundled default-dqi.json parses")
    }

    pub fn weight(&self, c: Component) -> f64 {
        self.weights.get(&c).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<(), DqiError> {
        let bad = |msg: &str| Err(DqiError::InvalidConfig(msg.to_owned()));
        if self.weights.values().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("weights must be finite and non-negative");
        }
        if self.weights.values().all(|&w| w == 0.0) {
            return bad("weights must not all be zero");
        }
        if self.sort_components.is_empty() {
            return bad("sort_components must not be empty");
        }
        let t = self.thresholds;
        if !(0.0 <= t.red_below && t.red_below < t.green_at_or_above && t.green_at_or_above <= 1.0) {
            return bad("thresholds need 0 <= red_below < green_at_or_above <= 1");
        }
        if self.mi_bins < 2 {
            return bad("mi_bins must be at least 2");
        }
        if self.ngram_max < 1 {
            return bad("ngram_max must be at least 1");
        }
        if !(self.pmi_alpha.is_finite() && self.pmi_alpha >= 0.0) {
            return bad("pmi_alpha must be finite and non-negative");
        }
        Ok(())
    }
}
