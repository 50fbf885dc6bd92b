//! Data-quality scoring: dataset-level component scores, per-sample
//! leave-one-out impacts, composite ranking scores and creator feedback.
//!
//! Each of the seven components is realized by one representative term:
//!
//! | component | term |
//! |-----------|------|
//! | C1 | harmonic mean of vocabulary richness and per-field length spread |
//! | C2 | mean normalized entropy over unigram..`ngram_max`-gram, POS and sentence frequencies |
//! | C3 | mean of `1 - max Jaccard` to any other sample |
//! | C4 | `1 - NMI(binned field overlap; label)` (needs two or more fields) |
//! | C5 | `1 - NMI(binned field similarity; label)` (needs two or more fields) |
//! | C6 | mean of `1 / (1 + max(0, mean PMI(word, own label)))` |
//! | C7 | mean over eval-split samples of `1 - max Jaccard` to the train split |
//!
//! C1 here is a stand-in: it is one plausible "first term" of the lexical
//! component, not a reproduction of any published inventory.
//!
//! A sample's impact on a component is `term(D) - term(D without s)`; negative
//! means the dataset scores better without it.

mod config;
mod prepare;
mod report;
mod terms;

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{Component, DqiConfig, SimilaritySource, Thresholds};
pub use report::{percentile_of, traffic_color, Color, ComponentFeedback, DqiReport, Recommendation, TermFeedback};

use crate::corpus::{CorpusError, Dataset, Sample};
use crate::embeddings::EmbeddingMatrix;
use prepare::Prepared;
use terms::{BinnedLabelCue, Diversity, Leakage, Lexical, Overlap, QualityTerm, SplitLeakage, TermValue};

#[derive(Debug, thiserror::Error)]
pub enum DqiError {
    #[error("dataset has {size} samples, need at least {need}")]
    DatasetTooSmall { size: usize, need: usize },
    #[error("unknown sample id {0:?}")]
    UnknownId(String),
    #[error("C5 is configured to use embeddings but per-field rows are missing")]
    MissingEmbeddings,
    #[error("none of the ranking components is defined for this dataset")]
    NoDefinedComponents,
    #[error("invalid DQI config: {0}")]
    InvalidConfig(String),
    #[error("draft does not match the schema: {0}")]
    SchemaMismatch(#[from] CorpusError),
    #[error("dataset state is empty")]
    EmptyState,
}

/// Dataset-level component scores, each in `[0, 1]`. Components that are
/// undefined for the dataset shape are absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DqiVector(BTreeMap<Component, f64>);

impl DqiVector {
    pub fn get(&self, c: Component) -> Option<f64> {
        self.0.get(&c).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Component, f64)> + '_ {
        self.0.iter().map(|(&c, &v)| (c, v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Leave-one-out impacts of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactVector {
    pub id: String,
    pub impacts: BTreeMap<Component, f64>,
    /// Sub-term impacts keyed like `"C2.bigram"`.
    pub terms: BTreeMap<String, f64>,
}

impl ImpactVector {
    pub fn get(&self, c: Component) -> Option<f64> {
        self.impacts.get(&c).copied()
    }
}

/// Sufficient statistics of one dataset snapshot for the selected components.
pub struct DqiState {
    prep: Arc<Prepared>,
    terms: Vec<Box<dyn QualityTerm>>,
    full: Vec<Option<TermValue>>,
}

impl DqiState {
    /// Builds every component.
    pub fn build(d: &Dataset, emb: Option<&EmbeddingMatrix>, cfg: &DqiConfig) -> Result<Self, DqiError> {
        Self::build_for(d, emb, cfg, &Component::ALL)
    }

    /// Builds only `components`; the rest are treated as absent.
    pub fn build_for(
        d: &Dataset,
        emb: Option<&EmbeddingMatrix>,
        cfg: &DqiConfig,
        components: &[Component],
    ) -> Result<Self, DqiError> {
        cfg.validate()?;
        if d.len() < 2 {
            return Err(DqiError::DatasetTooSmall { size: d.len(), need: 2 });
        }
        let prep = Arc::new(Prepared::new(d));
        let wanted = |c| components.contains(&c);
        let multi_field = prep.n_fields >= 2;
        let mut terms: Vec<Box<dyn QualityTerm>> = Vec::new();
        if wanted(Component::C1) {
            terms.push(Box::new(Lexical::new(prep.clone())));
        }
        if wanted(Component::C2) {
            terms.push(Box::new(Diversity::new(prep.clone(), cfg.ngram_max)));
        }
        if wanted(Component::C3) {
            terms.push(Box::new(Overlap::new(prep.clone())));
        }
        if wanted(Component::C4) && multi_field {
            terms.push(Box::new(BinnedLabelCue::field_overlap(prep.clone(), cfg.mi_bins)));
        }
        if wanted(Component::C5) && multi_field {
            let rows = emb.and_then(|m| terms::field_rows(&prep, &d.schema.field_names, m));
            let term = match (cfg.c5_source, rows) {
                (SimilaritySource::Embeddings, None) => return Err(DqiError::MissingEmbeddings),
                (SimilaritySource::Embeddings | SimilaritySource::Auto, Some(rows)) => {
                    BinnedLabelCue::field_similarity_embedded(prep.clone(), rows, cfg.mi_bins)
                }
                _ => BinnedLabelCue::field_similarity_bow(prep.clone(), cfg.mi_bins),
            };
            terms.push(Box::new(term));
        }
        if wanted(Component::C6) {
            terms.push(Box::new(Leakage::new(prep.clone(), cfg.pmi_alpha)));
        }
        if wanted(Component::C7) {
            if let Some(term) = SplitLeakage::new(prep.clone()) {
                terms.push(Box::new(term));
            }
        }
        let full = terms.iter().map(|t| t.evaluate(None)).collect();
        Ok(Self { prep, terms, full })
    }

    pub fn len(&self) -> usize {
        self.prep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prep.len() == 0
    }

    pub fn ids(&self) -> &[String] {
        &self.prep.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.prep.ids.iter().position(|x| x == id)
    }

    pub fn scores(&self) -> DqiVector {
        DqiVector(
            self.terms
                .iter()
                .zip(&self.full)
                .filter_map(|(t, v)| v.as_ref().map(|v| (t.component(), v.value.clamp(0.0, 1.0))))
                .collect(),
        )
    }

    /// Sub-term values on the full dataset.
    pub fn term_scores(&self) -> BTreeMap<String, f64> {
        self.full
            .iter()
            .flatten()
            .flat_map(|v| v.parts.iter().cloned())
            .collect()
    }

    /// Leave-one-out impacts of the sample at `idx`.
    pub fn impact(&self, idx: usize) -> Result<ImpactVector, DqiError> {
        if self.len() < 3 {
            return Err(DqiError::DatasetTooSmall {
                size: self.len(),
                need: 3,
            });
        }
        let mut impacts = BTreeMap::new();
        let mut terms = BTreeMap::new();
        for (term, full) in self.terms.iter().zip(&self.full) {
            let (Some(full), Some(without)) = (full, term.evaluate(Some(idx))) else {
                continue;
            };
            impacts.insert(term.component(), full.value - without.value);
            // A part can drop out when removal empties it (e.g. the only bigram).
            let without: BTreeMap<&str, f64> = without.parts.iter().map(|(n, v)| (n.as_str(), *v)).collect();
            for (name, a) in &full.parts {
                if let Some(b) = without.get(name.as_str()) {
                    terms.insert(name.clone(), a - b);
                }
            }
        }
        Ok(ImpactVector {
            id: self.prep.ids[idx].clone(),
            impacts,
            terms,
        })
    }

    /// Impacts of every sample, in dataset order.
    pub fn all_impacts(&self) -> Result<Vec<ImpactVector>, DqiError> {
        (0..self.len()).into_par_iter().map(|i| self.impact(i)).collect()
    }

    /// The scalar used to rank a sample for deletion (lower is deleted first).
    pub fn ranking_score(&self, idx: usize, cfg: &DqiConfig) -> Result<f64, DqiError> {
        let mut iv = self.impact(idx)?;
        if cfg.standalone_scores {
            for term in &self.terms {
                if let Some(v) = term.sample_term(idx) {
                    iv.impacts.insert(term.component(), v);
                }
            }
        }
        composite_dqi(&iv, cfg)
    }

    fn term_for(&self, c: Component) -> Option<&dyn QualityTerm> {
        self.terms.iter().find(|t| t.component() == c).map(|t| t.as_ref())
    }

    pub fn recommendations(&self, c: Component, idx: usize) -> Vec<Recommendation> {
        self.term_for(c).map(|t| t.recommend(idx)).unwrap_or_default()
    }
}

/// Dataset-level scores for every defined component.
pub fn component_scores(d: &Dataset, emb: Option<&EmbeddingMatrix>, cfg: &DqiConfig) -> Result<DqiVector, DqiError> {
    Ok(DqiState::build(d, emb, cfg)?.scores())
}

pub fn sample_impact(
    d: &Dataset,
    id: &str,
    emb: Option<&EmbeddingMatrix>,
    cfg: &DqiConfig,
) -> Result<ImpactVector, DqiError> {
    if d.len() < 3 {
        return Err(DqiError::DatasetTooSmall { size: d.len(), need: 3 });
    }
    let idx = d.position(id).ok_or_else(|| DqiError::UnknownId(id.to_owned()))?;
    DqiState::build(d, emb, cfg)?.impact(idx)
}

/// Weighted mean of the impacts over `cfg.sort_components`, renormalized over
/// the components that are present.
pub fn composite_dqi(iv: &ImpactVector, cfg: &DqiConfig) -> Result<f64, DqiError> {
    weighted_mean(iv, cfg, &cfg.sort_components)
}

fn weighted_mean(iv: &ImpactVector, cfg: &DqiConfig, components: &[Component]) -> Result<f64, DqiError> {
    let (mut num, mut den) = (0.0, 0.0);
    for &c in components {
        if let Some(q) = iv.get(c) {
            let w = cfg.weight(c);
            num += w * q;
            den += w;
        }
    }
    if den == 0.0 {
        return Err(DqiError::NoDefinedComponents);
    }
    Ok(num / den)
}

/// Feedback for a draft sample measured against the current dataset state.
///
/// The draft's impacts are computed on `state ∪ {draft}`; each component's
/// color comes from the percentile of the draft's impact among the impacts
/// of the state's own samples in that same dataset.
pub fn quality_report(
    state: &Dataset,
    emb: Option<&EmbeddingMatrix>,
    draft: &Sample,
    cfg: &DqiConfig,
) -> Result<DqiReport, DqiError> {
    cfg.validate()?;
    if state.is_empty() {
        return Err(DqiError::EmptyState);
    }
    let mut combined = state.clone();
    combined.push(draft.clone())?;
    let st = DqiState::build(&combined, emb, cfg)?;
    let impacts = st.all_impacts()?;
    let (draft_iv, reference) = impacts.split_last().expect("non-empty");
    let draft_idx = combined.len() - 1;

    let mut components = BTreeMap::new();
    for (&c, &q) in &draft_iv.impacts {
        let ref_values: Vec<f64> = reference.iter().filter_map(|iv| iv.get(c)).collect();
        let percentile = percentile_of(q, &ref_values);
        let color = traffic_color(percentile, &cfg.thresholds);
        let recommendations = if color == Color::Red {
            st.recommendations(c, draft_idx)
        } else {
            Vec::new()
        };
        let prefix = format!("{c}.");
        let terms = draft_iv
            .terms
            .iter()
            .filter(|(name, _)| name.starts_with(&prefix))
            .map(|(name, &score)| {
                let ref_values: Vec<f64> = reference.iter().filter_map(|iv| iv.terms.get(name).copied()).collect();
                let percentile = percentile_of(score, &ref_values);
                TermFeedback {
                    name: name.clone(),
                    score,
                    percentile,
                    color: traffic_color(percentile, &cfg.thresholds),
                }
            })
            .collect();
        components.insert(
            c,
            ComponentFeedback {
                score: q,
                percentile,
                color,
                feedback: report::feedback_text(c, q, percentile, color),
                recommendations,
                terms,
            },
        );
    }
    let present: Vec<Component> = draft_iv.impacts.keys().copied().collect();
    let composite = weighted_mean(draft_iv, cfg, &present).unwrap_or(0.0);
    Ok(DqiReport {
        components,
        composite,
        dataset_size_at_eval: state.len(),
    })
}

/// `I(X;Y) / min(H(X), H(Y))` for two aligned discrete variables; 0 when
/// either variable is constant.
pub fn normalized_mutual_information(xs: &[usize], ys: &[usize]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "variables must be aligned");
    let nx = xs.iter().max().map_or(0, |m| m + 1);
    let ny = ys.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; ny]; nx];
    for (&x, &y) in xs.iter().zip(ys) {
        table[x][y] += 1;
    }
    terms::nmi_from_table(&table)
}
