//! The full selection loop: optional coarse subset growth, burned-id
//! exclusion, repeated ensemble scoring, and deletion of the lowest-DQI
//! samples among the highly predictable ones.

use std::collections::{HashMap, HashSet};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aflite::{self, AfliteError, EnsembleConfig, LedgerEntry};
use crate::corpus::Dataset;
use crate::dqi::{DqiConfig, DqiError, DqiState};
use crate::embeddings::{EmbManifest, EmbeddingMatrix};
use crate::linmodels::{self, ModelError, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum PruneError {
    #[error("invalid prune config: {0}")]
    InvalidConfig(String),
    #[error("{missing} sample ids have no embedding row (first: {first:?})")]
    EmbeddingCoverageGap { missing: usize, first: String },
    #[error("target size {n} exceeds the {available} prunable samples")]
    TargetTooLarge { n: usize, available: usize },
    #[error("coarse selection is disabled")]
    CoarseDisabled,
    #[error("dataset has {size} samples, need at least {need}")]
    DatasetTooSmall { size: usize, need: usize },
    #[error(transparent)]
    Ensemble(#[from] AfliteError),
    #[error(transparent)]
    Dqi(#[from] DqiError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl PruneError {
    /// True for errors caused by the configuration rather than the data.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            PruneError::InvalidConfig(_)
                | PruneError::TargetTooLarge { .. }
                | PruneError::CoarseDisabled
                | PruneError::Dqi(DqiError::InvalidConfig(_))
                | PruneError::Model(ModelError::InvalidConfig(_))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoarseUnits {
    /// `b` is a sample count.
    #[default]
    Samples,
    /// `b` is a percentage of the pool; growth stops at 100.
    Percent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    /// Coarse growth step.
    pub b: usize,
    /// Minimum coarse accuracy gain that counts as an improvement.
    pub epsilon: f64,
    /// Ensemble members per iteration.
    pub m: usize,
    /// Train partition size as a fraction of the current set.
    pub t: f64,
    /// Predictability threshold for the shortlist.
    pub tau: f64,
    /// Target size.
    pub n: usize,
    /// Deletions per iteration.
    pub k: usize,
    pub seed: u64,
    pub dqi: DqiConfig,
    pub probe: TrainConfig,
    pub coarse_enabled: bool,
    pub coarse_units: CoarseUnits,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            b: 1000,
            epsilon: 0.002,
            m: 16,
            t: 0.5,
            tau: 0.75,
            n: 1,
            k: 500,
            seed: 0,
            dqi: DqiConfig::default(),
            probe: TrainConfig::default(),
            coarse_enabled: true,
            coarse_units: CoarseUnits::Samples,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<(), PruneError> {
        let bad = |msg: &str| Err(PruneError::InvalidConfig(msg.to_owned()));
        if self.b == 0 {
            return bad("b must be positive");
        }
        if self.coarse_units == CoarseUnits::Percent && self.b > 100 {
            return bad("b in percent units must be at most 100");
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad("epsilon must be non-negative");
        }
        if self.m == 0 {
            return bad("m must be at least 1");
        }
        if !(self.t > 0.0 && self.t < 1.0) {
            return bad("t must be a fraction in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must be in (0, 1]");
        }
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        self.dqi.validate()?;
        self.probe.validate()?;
        Ok(())
    }

    /// Train partition size for a set of `size` samples, in `1..size`.
    pub fn train_size(&self, size: usize) -> usize {
        ((self.t * size as f64).round() as usize).clamp(1, size.saturating_sub(1).max(1))
    }
}

/// Seed of the ensemble run in outer iteration `iteration`.
pub fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    seed ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// RNG used to draw coarse subsets: `seed` on the last ChaCha stream, which
/// ensemble members never use.
pub fn coarse_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarseStep {
    pub a: usize,
    pub accuracy: f64,
}

/// Scores one coarse candidate subset (positions into the pool).
pub trait SubsetScorer: Sync {
    fn score(&self, subset: &[usize]) -> Result<f64, PruneError>;
}

/// Trains both probes on the first half of the subset (in draw order) and
/// returns their mean accuracy on the second half.
pub struct ProbeScorer<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: &'a [usize],
    pub labels: &'a [String],
    pub probe: &'a TrainConfig,
}

impl SubsetScorer for ProbeScorer<'_> {
    fn score(&self, subset: &[usize]) -> Result<f64, PruneError> {
        let half = subset.len() / 2;
        let (train, test) = subset.split_at(half);
        if train.is_empty() || test.is_empty() {
            return Ok(0.0);
        }
        let train_y: Vec<usize> = train.iter().map(|&i| self.y[i]).collect();
        let test_y: Vec<usize> = test.iter().map(|&i| self.y[i]).collect();
        if train_y.iter().all(|&l| l == train_y[0]) {
            let predicted = vec![train_y[0]; test_y.len()];
            return Ok(linmodels::accuracy(&predicted, &test_y));
        }
        let train_x = self.x.select(Axis(0), train);
        let test_x = self.x.select(Axis(0), test);
        let mut total = 0.0;
        for kind in aflite::PROBES {
            let model = linmodels::train(kind, train_x.view(), &train_y, self.labels, self.probe)?;
            total += linmodels::accuracy(&linmodels::predict(&model, test_x.view())?, &test_y);
        }
        Ok(total / aflite::PROBES.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseOutcome {
    /// Sorted positions into the pool.
    pub selected: Vec<usize>,
    pub steps: Vec<CoarseStep>,
}

/// Grows a random subset by `b` until the scorer's accuracy stops improving
/// by more than `epsilon`, returning the last improving subset.
pub fn coarse_select(
    pool_size: usize,
    scorer: &dyn SubsetScorer,
    cfg: &PruneConfig,
) -> Result<CoarseOutcome, PruneError> {
    if !cfg.coarse_enabled {
        return Err(PruneError::CoarseDisabled);
    }
    if pool_size < 2 {
        return Err(PruneError::DatasetTooSmall {
            size: pool_size,
            need: 2,
        });
    }
    let step_size = match cfg.coarse_units {
        CoarseUnits::Samples => cfg.b,
        CoarseUnits::Percent => ((cfg.b as f64 / 100.0) * pool_size as f64).ceil().max(1.0) as usize,
    };
    let mut rng = coarse_rng(cfg.seed);
    let mut steps = Vec::new();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut a = step_size;
    loop {
        let size = a.min(pool_size);
        let subset = index::sample(&mut rng, pool_size, size).into_vec();
        let accuracy = scorer.score(&subset)?;
        steps.push(CoarseStep { a: size, accuracy });
        let improving = best.as_ref().is_none_or(|(_, prev)| accuracy > prev + cfg.epsilon);
        if !improving {
            break;
        }
        best = Some((subset, accuracy));
        if size >= pool_size {
            break;
        }
        a += step_size;
    }
    let mut selected = best.expect("first step always improves").0;
    selected.sort_unstable();
    Ok(CoarseOutcome { selected, steps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseTrace {
    pub enabled: bool,
    /// Samples left after removing burned ids.
    pub pool_size: usize,
    pub selected_size: usize,
    pub steps: Vec<CoarseStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: String,
    pub p: f64,
    pub dqi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub size_before: usize,
    pub shortlist_size: usize,
    /// In deletion order (ascending composite DQI).
    pub deleted_ids: Vec<String>,
    pub min_p: f64,
    pub max_p: f64,
    /// Largest composite DQI among deleted samples.
    pub dqi_cutoff: f64,
    /// The whole shortlist in rank order; deleted samples come first.
    pub shortlist: Vec<RankedEntry>,
    pub skipped_members: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetReached,
    EmptyShortlist,
    ShortlistBelowK,
    SingleLabel,
    TooSmall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Coarse(CoarseTrace),
    Iteration(IterationRecord),
    Stop { reason: StopReason, final_size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneTrace {
    pub coarse: CoarseTrace,
    pub iterations: Vec<IterationRecord>,
    pub stop: StopReason,
    pub final_size: usize,
}

impl PruneTrace {
    pub fn records(&self) -> Vec<TraceRecord> {
        let mut out = vec![TraceRecord::Coarse(self.coarse.clone())];
        out.extend(self.iterations.iter().cloned().map(TraceRecord::Iteration));
        out.push(TraceRecord::Stop {
            reason: self.stop,
            final_size: self.final_size,
        });
        out
    }

    /// One JSON object per line: the coarse record, each iteration, then the stop record.
    pub fn to_jsonl(&self) -> String {
        self.records()
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace serializes") + "\n")
            .collect()
    }

    /// Every deleted id, in deletion order.
    pub fn deleted(&self) -> impl Iterator<Item = &str> {
        self.iterations
            .iter()
            .flat_map(|it| it.deleted_ids.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone)]
pub struct PruneResult {
    pub kept: Dataset,
    pub trace: PruneTrace,
}

/// Feature rows for every sample of `d`, in dataset order.
pub fn feature_matrix(d: &Dataset, emb: &EmbeddingMatrix) -> Result<Array2<f64>, PruneError> {
    let mut missing = d.ids().filter(|id| emb.position(id).is_none());
    if let Some(first) = missing.next() {
        return Err(PruneError::EmbeddingCoverageGap {
            missing: 1 + missing.count(),
            first: first.to_owned(),
        });
    }
    let dim = emb.dim();
    let mut x = Array2::<f64>::zeros((d.len(), dim));
    for (mut row, id) in x.axis_iter_mut(Axis(0)).zip(d.ids()) {
        let src = emb.get(id).expect("coverage checked");
        row.iter_mut().zip(src).for_each(|(dst, &v)| *dst = f64::from(v));
    }
    Ok(x)
}

/// Runs the selection loop on `d` minus `manifest.burned`.
pub fn prune(
    d: &Dataset,
    emb: &EmbeddingMatrix,
    manifest: &EmbManifest,
    cfg: &PruneConfig,
) -> Result<PruneResult, PruneError> {
    prune_with_scorer(d, emb, manifest, cfg, None)
}

/// [`prune`] with an injectable coarse scorer; `None` uses [`ProbeScorer`].
pub fn prune_with_scorer(
    d: &Dataset,
    emb: &EmbeddingMatrix,
    manifest: &EmbManifest,
    cfg: &PruneConfig,
    scorer: Option<&dyn SubsetScorer>,
) -> Result<PruneResult, PruneError> {
    cfg.validate()?;
    let burned: HashSet<&str> = manifest.burned.iter().map(String::as_str).collect();
    let pool = d.filtered(|s| !burned.contains(s.id.as_str()));
    if cfg.n > pool.len() {
        return Err(PruneError::TargetTooLarge {
            n: cfg.n,
            available: pool.len(),
        });
    }
    let x = feature_matrix(&pool, emb)?;
    let y = pool.label_indices();
    let labels = &pool.schema.labels;

    let (mut alive, coarse) = if cfg.coarse_enabled && pool.len() >= 2 {
        let probe_scorer = ProbeScorer {
            x: x.view(),
            y: &y,
            labels,
            probe: &cfg.probe,
        };
        let outcome = coarse_select(pool.len(), scorer.unwrap_or(&probe_scorer), cfg)?;
        let trace = CoarseTrace {
            enabled: true,
            pool_size: pool.len(),
            selected_size: outcome.selected.len(),
            steps: outcome.steps,
        };
        (outcome.selected, trace)
    } else {
        let trace = CoarseTrace {
            enabled: false,
            pool_size: pool.len(),
            selected_size: pool.len(),
            steps: Vec::new(),
        };
        ((0..pool.len()).collect(), trace)
    };

    let mut cumulative: HashMap<String, LedgerEntry> = HashMap::new();
    let mut iterations = Vec::new();
    let stop = loop {
        if alive.len() <= cfg.n {
            break StopReason::TargetReached;
        }
        if alive.len() < 3 {
            break StopReason::TooSmall;
        }
        let s_y: Vec<usize> = alive.iter().map(|&i| y[i]).collect();
        if s_y.iter().all(|&l| l == s_y[0]) {
            break StopReason::SingleLabel;
        }
        let iteration = iterations.len();
        let s_ids: Vec<String> = alive.iter().map(|&i| pool.samples()[i].id.clone()).collect();
        let s_x = x.select(Axis(0), &alive);
        let ens = EnsembleConfig {
            m: cfg.m,
            t: cfg.train_size(alive.len()),
            seed: iteration_seed(cfg.seed, iteration),
            probe: cfg.probe.clone(),
        };
        let outcome = aflite::run_ensemble(&s_ids, s_x.view(), &s_y, labels, &ens)?;
        for (idx, id) in s_ids.iter().enumerate() {
            let add = outcome.ledger.entry_at(idx);
            let entry = cumulative.entry(id.clone()).or_default();
            entry.e += add.e;
            entry.c += add.c;
        }

        let shortlist: Vec<(usize, f64)> = s_ids
            .iter()
            .enumerate()
            .filter_map(|(idx, id)| {
                let p = cumulative[id].predictability()?;
                (p > cfg.tau).then_some((idx, p))
            })
            .collect();
        if shortlist.is_empty() {
            break StopReason::EmptyShortlist;
        }

        let s_data = pool.select(&alive);
        let state = DqiState::build_for(&s_data, Some(emb), &cfg.dqi, &cfg.dqi.sort_components)?;
        let scores: Vec<f64> = shortlist
            .par_iter()
            .map(|&(idx, _)| state.ranking_score(idx, &cfg.dqi))
            .collect::<Result<_, _>>()?;
        let mut ranked: Vec<RankedEntry> = shortlist
            .iter()
            .zip(&scores)
            .map(|(&(idx, p), &dqi)| RankedEntry {
                id: s_ids[idx].clone(),
                p,
                dqi,
            })
            .collect();
        ranked.sort_by(|a, b| a.dqi.total_cmp(&b.dqi).then_with(|| a.id.cmp(&b.id)));

        let n_delete = cfg.k.min(ranked.len());
        let deleted_ids: Vec<String> = ranked[..n_delete].iter().map(|r| r.id.clone()).collect();
        let deleted: HashSet<&str> = deleted_ids.iter().map(String::as_str).collect();
        let size_before = alive.len();
        alive.retain(|&i| !deleted.contains(pool.samples()[i].id.as_str()));
        for id in &deleted_ids {
            cumulative.remove(id);
        }
        log::info!(
            "iteration {iteration}: |S| {size_before} -> {}, shortlist {}",
            alive.len(),
            ranked.len()
        );
        let shortlist_size = ranked.len();
        iterations.push(IterationRecord {
            iteration,
            size_before,
            shortlist_size,
            min_p: ranked.iter().map(|r| r.p).fold(f64::INFINITY, f64::min),
            max_p: ranked.iter().map(|r| r.p).fold(f64::NEG_INFINITY, f64::max),
            dqi_cutoff: ranked[n_delete - 1].dqi,
            deleted_ids,
            shortlist: ranked,
            skipped_members: outcome.skipped,
        });
        if shortlist_size < cfg.k {
            break StopReason::ShortlistBelowK;
        }
    };

    let kept = pool.select(&alive);
    let trace = PruneTrace {
        coarse,
        iterations,
        stop,
        final_size: kept.len(),
    };
    Ok(PruneResult { kept, trace })
}
