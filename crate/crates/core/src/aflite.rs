//! Ensemble predictability scoring: repeated random train/held-out splits,
//! two linear probes per split, and per-sample evaluation/correct counts.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linmodels::{self, ModelError, ModelKind, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum AfliteError {
    #[error("train size {t} must be in 1..{n}")]
    TrainTooLarge { t: usize, n: usize },
    #[error("need at least two labels among the samples")]
    TooFewLabels,
    #[error("unknown sample id {0:?}")]
    UnknownId(String),
    #[error("ensemble needs at least one member")]
    NoMembers,
    #[error("{0} feature rows for {1} samples")]
    ShapeMismatch(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub m: usize,
    pub t: usize,
    pub seed: u64,
    #[serde(default)]
    pub probe: TrainConfig,
}

/// Models trained per member, in training order.
pub const PROBES: [ModelKind; 2] = [ModelKind::Logreg, ModelKind::Svm];

/// The RNG of member `i`: a ChaCha8 generator seeded with `seed` on stream `i`.
///
/// A member first draws its train subset with `rand::seq::index::sample`
/// (indices sorted ascending afterwards), then one `u64` that seeds the SVM
/// traversal order.
pub fn member_rng(seed: u64, member: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(member as u64);
    rng
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    #[serde(rename = "E")]
    pub e: u64,
    #[serde(rename = "C")]
    pub c: u64,
}

impl LedgerEntry {
    /// `C / E`, or `None` when the sample was never held out.
    pub fn predictability(self) -> Option<f64> {
        (self.e > 0).then(|| self.c as f64 / self.e as f64)
    }
}

/// Per-sample evaluation and correct counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictabilityLedger {
    ids: Vec<String>,
    entries: Vec<LedgerEntry>,
}

impl PredictabilityLedger {
    pub fn new(ids: Vec<String>) -> Self {
        let entries = vec![LedgerEntry::default(); ids.len()];
        Self { ids, entries }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn entry_at(&self, idx: usize) -> LedgerEntry {
        self.entries[idx]
    }

    pub fn entry(&self, id: &str) -> Option<LedgerEntry> {
        self.ids.iter().position(|x| x == id).map(|i| self.entries[i])
    }

    pub fn predictability(&self, id: &str) -> Result<Option<f64>, AfliteError> {
        self.entry(id)
            .map(LedgerEntry::predictability)
            .ok_or_else(|| AfliteError::UnknownId(id.to_owned()))
    }

    pub fn total_evaluations(&self) -> u64 {
        self.entries.iter().map(|e| e.e).sum()
    }

    pub fn absorb(&mut self, member: &MemberOutcome) {
        for (&i, &hits) in member.held_out.iter().zip(&member.correct) {
            let entry = &mut self.entries[i];
            entry.e += PROBES.len() as u64;
            entry.c += u64::from(hits);
        }
    }

    pub fn to_map(&self) -> BTreeMap<String, LedgerEntry> {
        self.ids.iter().cloned().zip(self.entries.iter().copied()).collect()
    }

    /// `{id: {"E": .., "C": ..}}`
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_map()).expect("ledger serializes")
    }
}

/// What one member contributes: held-out positions and how many of the
/// probes got each one right.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberOutcome {
    pub member: usize,
    pub held_out: Vec<usize>,
    pub correct: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct EnsembleOutcome {
    pub ledger: PredictabilityLedger,
    /// Members whose train draw had a single label.
    pub skipped: Vec<usize>,
    /// Sum of held-out set sizes over members that ran.
    pub held_out_total: usize,
}

fn check(n: usize, x: ArrayView2<f64>, y: &[usize], cfg: &EnsembleConfig) -> Result<(), AfliteError> {
    if x.nrows() != n || y.len() != n {
        return Err(AfliteError::ShapeMismatch(x.nrows(), n));
    }
    if cfg.m == 0 {
        return Err(AfliteError::NoMembers);
    }
    if cfg.t == 0 || cfg.t >= n {
        return Err(AfliteError::TrainTooLarge { t: cfg.t, n });
    }
    if y.iter().all(|&l| l == y[0]) {
        return Err(AfliteError::TooFewLabels);
    }
    Ok(())
}

fn gather(x: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

/// Runs member `member`; `None` when its train draw holds a single label.
pub fn run_member(
    x: ArrayView2<f64>,
    y: &[usize],
    labels: &[String],
    cfg: &EnsembleConfig,
    member: usize,
) -> Result<Option<MemberOutcome>, AfliteError> {
    let n = x.nrows();
    let mut rng = member_rng(cfg.seed, member);
    let mut train = index::sample(&mut rng, n, cfg.t).into_vec();
    train.sort_unstable();
    let probe = TrainConfig {
        seed: rng.next_u64(),
        ..cfg.probe.clone()
    };

    let train_y: Vec<usize> = train.iter().map(|&i| y[i]).collect();
    if train_y.iter().all(|&l| l == train_y[0]) {
        log::warn!("ensemble member {member} drew a single-label train set; skipped");
        return Ok(None);
    }
    let mut in_train = vec![false; n];
    for &i in &train {
        in_train[i] = true;
    }
    let held_out: Vec<usize> = (0..n).filter(|&i| !in_train[i]).collect();
    let train_x = gather(x, &train);
    let held_x = gather(x, &held_out);

    let mut correct = vec![0u8; held_out.len()];
    for kind in PROBES {
        let model = linmodels::train(kind, train_x.view(), &train_y, labels, &probe)?;
        let predicted = linmodels::predict(&model, held_x.view())?;
        for ((hits, &p), &i) in correct.iter_mut().zip(&predicted).zip(&held_out) {
            *hits += u8::from(p == y[i]);
        }
    }
    Ok(Some(MemberOutcome {
        member,
        held_out,
        correct,
    }))
}

/// Runs all `cfg.m` members concurrently and accumulates their counts.
pub fn run_ensemble(
    ids: &[String],
    x: ArrayView2<f64>,
    y: &[usize],
    labels: &[String],
    cfg: &EnsembleConfig,
) -> Result<EnsembleOutcome, AfliteError> {
    check(ids.len(), x, y, cfg)?;
    cfg.probe.validate()?;
    let members: Vec<Option<MemberOutcome>> = (0..cfg.m)
        .into_par_iter()
        .map(|i| run_member(x, y, labels, cfg, i))
        .collect::<Result<_, _>>()?;

    let mut ledger = PredictabilityLedger::new(ids.to_vec());
    let mut skipped = Vec::new();
    let mut held_out_total = 0;
    for (i, outcome) in members.iter().enumerate() {
        match outcome {
            Some(o) => {
                held_out_total += o.held_out.len();
                ledger.absorb(o);
            }
            None => skipped.push(i),
        }
    }
    assert_eq!(
        ledger.total_evaluations(),
        (PROBES.len() * held_out_total) as u64,
        "every held-out sample gains one evaluation per probe"
    );
    Ok(EnsembleOutcome {
        ledger,
        skipped,
        held_out_total,
    })
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("l{i}")).collect()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    fn random_problem(seed: u64, n: usize, d: usize) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let y = (0..n).map(|i| i % 2).collect();
        (x, y)
    }

    fn cfg(m: usize, t: usize) -> EnsembleConfig {
        EnsembleConfig {
            m,
            t,
            seed: 11,
            probe: TrainConfig::default(),
        }
    }

    #[test]
    fn one_member_leave_one_out() {
        let (x, y) = random_problem(1, 10, 2);
        let out = run_ensemble(&ids(10), x.view(), &y, &labels(2), &cfg(1, 9)).unwrap();
        let evaluated: Vec<u64> = (0..10).map(|i| out.ledger.entry_at(i).e).collect();
        assert_eq!(evaluated.iter().filter(|&&e| e == 2).count(), 1);
        assert_eq!(evaluated.iter().filter(|&&e| e == 0).count(), 9);
    }

    #[test]
    fn member_order_does_not_matter() {
        let (x, y) = random_problem(2, 30, 3);
        let c = cfg(6, 15);
        let l = labels(2);
        let outcomes: Vec<MemberOutcome> = (0..6)
            .filter_map(|i| run_member(x.view(), &y, &l, &c, i).unwrap())
            .collect();
        let mut forward = PredictabilityLedger::new(ids(30));
        let mut backward = PredictabilityLedger::new(ids(30));
        outcomes.iter().for_each(|o| forward.absorb(o));
        outcomes.iter().rev().for_each(|o| backward.absorb(o));
        assert_eq!(forward, backward);
        let parallel = run_ensemble(&ids(30), x.view(), &y, &l, &c).unwrap().ledger;
        assert_eq!(forward, parallel);
    }

    #[test]
    fn counts_respect_bounds_and_identity() {
        let (x, y) = random_problem(3, 40, 4);
        let out = run_ensemble(&ids(40), x.view(), &y, &labels(2), &cfg(8, 20)).unwrap();
        assert_eq!(out.ledger.total_evaluations(), 2 * out.held_out_total as u64);
        for i in 0..40 {
            let e = out.ledger.entry_at(i);
            assert!(e.c <= e.e);
            if let Some(p) = e.predictability() {
                assert!((0.0..=1.0).contains(&p));
            }
        }
    }

    #[test]
    fn predictability_ratio_and_guard() {
        assert_eq!(LedgerEntry { e: 4, c: 3 }.predictability(), Some(0.75));
        assert_eq!(LedgerEntry { e: 0, c: 0 }.predictability(), None);
        assert_eq!(LedgerEntry { e: 6, c: 6 }.predictability(), Some(1.0));
        let ledger = PredictabilityLedger::new(ids(2));
        assert!(matches!(ledger.predictability("zz"), Err(AfliteError::UnknownId(_))));
        assert_eq!(ledger.predictability("s0").unwrap(), None);
    }

    #[test]
    fn config_errors() {
        let (x, y) = random_problem(4, 8, 2);
        let l = labels(2);
        assert!(matches!(
            run_ensemble(&ids(8), x.view(), &y, &l, &cfg(2, 8)),
            Err(AfliteError::TrainTooLarge { t: 8, n: 8 })
        ));
        let one_label = vec![0; 8];
        assert!(matches!(
            run_ensemble(&ids(8), x.view(), &one_label, &l, &cfg(2, 4)),
            Err(AfliteError::TooFewLabels)
        ));
    }

    #[test]
    fn single_label_draws_are_skipped() {
        // Only one sample of label 1: any draw of size 1 that misses it is single-label.
        let (x, _) = random_problem(5, 12, 2);
        let mut y = vec![0; 12];
        y[7] = 1;
        let out = run_ensemble(&ids(12), x.view(), &y, &labels(2), &cfg(10, 1)).unwrap();
        assert_eq!(out.skipped.len(), 10);
        assert_eq!(out.ledger.total_evaluations(), 0);
    }

    #[test]
    fn json_dump_shape() {
        let mut ledger = PredictabilityLedger::new(ids(2));
        ledger.absorb(&MemberOutcome {
            member: 0,
            held_out: vec![1],
            correct: vec![1],
        });
        assert_eq!(ledger.to_json(), r#"{"s0":{"E":0,"C":0},"s1":{"E":2,"C":1}}"#);
    }

    #[test]
    fn planted_cluster_is_predictable() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let n = 300;
        let planted = 60;
        let mut x = Array2::from_shape_fn((n, 8), |_| noise.sample(&mut rng));
        let mut y: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        for i in 0..planted {
            x[[i, 0]] = 6.0 + 0.5 * noise.sample(&mut rng);
            y[i] = 2;
        }
        let out = run_ensemble(&ids(n), x.view(), &y, &labels(3), &cfg(16, 150)).unwrap();
        let p: Vec<f64> = (0..n)
            .map(|i| out.ledger.entry_at(i).predictability().unwrap_or(0.0))
            .collect();
        assert!(p[..planted].iter().all(|&v| v >= 0.9), "{:?}", &p[..planted]);
        let rest = p[planted..].iter().sum::<f64>() / (n - planted) as f64;
        assert!(rest <= 0.6, "{rest}");
    }
}
