use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{Component, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Yellow,
    Green,
}

/// Red strictly below `red_below`, green at or above `green_at_or_above`.
pub fn traffic_color(percentile: f64, t: &Thresholds) -> Color {
    if percentile < t.red_below {
        Color::Red
    } else if percentile >= t.green_at_or_above {
        Color::Green
    } else {
        Color::Yellow
    }
}

/// Fraction of `reference` strictly below `value`.
pub fn percentile_of(value: f64, reference: &[f64]) -> f64 {
    if reference.is_empty() {
        return 0.5;
    }
    reference.iter().filter(|&&r| r < value).count() as f64 / reference.len() as f64
}

/// A flagged feature with a suggested action. The recommender never rewrites text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    pub kind: String,
    pub detail: String,
    /// The offending token, n-gram or sample id, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

impl Recommendation {
    pub fn new(kind: &str, detail: String, target: Option<String>) -> Self {
        Self {
            kind: kind.to_owned(),
            detail,
            target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermFeedback {
    pub name: String,
    pub score: f64,
    pub percentile: f64,
    pub color: Color,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFeedback {
    /// Leave-one-out impact of the draft on this component.
    pub score: f64,
    pub percentile: f64,
    pub color: Color,
    pub feedback: String,
    pub recommendations: Vec<Recommendation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terms: Vec<TermFeedback>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqiReport {
    pub components: BTreeMap<Component, ComponentFeedback>,
    /// Weighted mean impact over every defined component.
    pub composite: f64,
    pub dataset_size_at_eval: usize,
}

impl DqiReport {
    /// Drops term-level detail, leaving component-level feedback only.
    pub fn component_level(mut self) -> Self {
        for fb in self.components.values_mut() {
            fb.terms.clear();
        }
        self
    }

    pub fn color(&self, c: Component) -> Option<Color> {
        self.components.get(&c).map(|fb| fb.color)
    }
}

pub(crate) fn feedback_text(c: Component, impact: f64, percentile: f64, color: Color) -> String {
    let direction = if impact < 0.0 {
        "lowers"
    } else if impact > 0.0 {
        "raises"
    } else {
        "does not change"
    };
    let verdict = match color {
        Color::Red => "revise before submitting",
        Color::Yellow => "acceptable, could be improved",
        Color::Green => "good",
    };
    format!(
        "{c} ({}): this sample {direction} the dataset score by {:.2e}; {:.0}% of current samples contribute less. {verdict}.",
        c.describe(),
        impact.abs(),
        percentile * 100.0
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_percentiles() {
        let t = Thresholds::default();
        let colors: Vec<Color> = [0.0, 0.25, 0.59, 0.60, 1.0]
            .iter()
            .map(|&p| traffic_color(p, &t))
            .collect();
        assert_eq!(
            colors,
            [Color::Red, Color::Yellow, Color::Yellow, Color::Green, Color::Green]
        );
    }

    #[test]
    fn percentile_counts_strictly_lower() {
        assert_eq!(percentile_of(1.0, &[0.0, 1.0, 2.0, 3.0]), 0.25);
        assert_eq!(percentile_of(-1.0, &[0.0, 1.0]), 0.0);
        assert_eq!(percentile_of(9.0, &[0.0, 1.0]), 1.0);
    }
}
