//! One representative term per component.
//!
//! Every term keeps the sufficient statistics of the full dataset and can
//! evaluate itself either on the full dataset or with one sample removed,
//! without rebuilding those statistics.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use super::config::Component;
use super::prepare::{count_sorted, Prepared, SplitRole};
use super::report::Recommendation;
use crate::embeddings::{cosine_unchecked, EmbeddingMatrix};
use crate::textstats::{jaccard_sorted, pmi_from_counts};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TermValue {
    pub value: f64,
    /// Named sub-terms, prefixed by the component name.
    pub parts: Vec<(String, f64)>,
}

impl TermValue {
    fn single(component: Component, name: &str, value: f64) -> Self {
        Self {
            value,
            parts: vec![(format!("{component}.{name}"), value)],
        }
    }
}

pub(crate) trait QualityTerm: Send + Sync {
    fn component(&self) -> Component;

    /// Term value on the dataset, or on the dataset minus sample `removed`.
    /// `None` when the term is undefined for that dataset.
    fn evaluate(&self, removed: Option<usize>) -> Option<TermValue>;

    /// The sample's own summand, for terms that average per-sample values.
    fn sample_term(&self, _idx: usize) -> Option<f64> {
        None
    }

    fn recommend(&self, idx: usize) -> Vec<Recommendation>;
}

fn xlogx(c: u64) -> f64 {
    if c == 0 {
        0.0
    } else {
        let c = c as f64;
        c * c.ln()
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Shannon entropy (nats) of a count vector.
pub(crate) fn entropy(counts: impl IntoIterator<Item = u64>) -> f64 {
    let counts: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    -counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            p * p.ln()
        })
        .sum::<f64>()
}

/// `I(X;Y) / min(H(X), H(Y))` from a contingency table, 0 when either
/// marginal entropy is 0, clamped to `[0, 1]`.
pub(crate) fn nmi_from_table(table: &[Vec<u64>]) -> f64 {
    let rows = table.iter().map(|r| r.iter().sum::<u64>());
    let n_cols = table.first().map_or(0, Vec::len);
    let cols = (0..n_cols).map(|j| table.iter().map(|r| r[j]).sum::<u64>());
    let hx = entropy(rows);
    let hy = entropy(cols);
    let min = hx.min(hy);
    if min <= 0.0 {
        return 0.0;
    }
    let hxy = entropy(table.iter().flatten().copied());
    ((hx + hy - hxy) / min).clamp(0.0, 1.0)
}

// ---------------------------------------------------------------- C1

/// Harmonic mean of vocabulary richness `|V| / tokens` and length spread
/// `sd / (sd + mean)` over per-field token counts.
pub(crate) struct Lexical {
    prep: Arc<Prepared>,
    counts: Vec<u32>,
    distinct: u64,
    total: u64,
    n_lengths: u64,
    len_sum: u64,
    len_sumsq: u64,
    sample_counts: Vec<Vec<(u32, u32)>>,
}

impl Lexical {
    pub fn new(prep: Arc<Prepared>) -> Self {
        let mut counts = vec![0u32; prep.vocab.len()];
        let (mut total, mut n_lengths, mut len_sum, mut len_sumsq) = (0u64, 0u64, 0u64, 0u64);
        let mut sample_counts = Vec::with_capacity(prep.len());
        for fields in &prep.field_tokens {
            let all: Vec<u32> = fields.iter().flatten().copied().collect();
            for &t in &all {
                counts[t as usize] += 1;
            }
            total += all.len() as u64;
            for f in fields {
                let l = f.len() as u64;
                n_lengths += 1;
                len_sum += l;
                len_sumsq += l * l;
            }
            sample_counts.push(count_sorted(&all));
        }
        let distinct = counts.iter().filter(|&&c| c > 0).count() as u64;
        Self {
            prep,
            counts,
            distinct,
            total,
            n_lengths,
            len_sum,
            len_sumsq,
            sample_counts,
        }
    }

    fn dispersion(n: u64, sum: u64, sumsq: u64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let numer = u128::from(n) * u128::from(sumsq) - u128::from(sum) * u128::from(sum);
        let var = numer as f64 / (n as f64 * n as f64);
        let sd = var.max(0.0).sqrt();
        let mean = sum as f64 / n as f64;
        if sd + mean == 0.0 {
            0.0
        } else {
            sd / (sd + mean)
        }
    }
}

impl QualityTerm for Lexical {
    fn component(&self) -> Component {
        Component::C1
    }

    fn evaluate(&self, removed: Option<usize>) -> Option<TermValue> {
        let (mut distinct, mut total) = (self.distinct, self.total);
        let (mut n, mut sum, mut sumsq) = (self.n_lengths, self.len_sum, self.len_sumsq);
        if let Some(i) = removed {
            let own = &self.sample_counts[i];
            distinct -= own.iter().filter(|(t, c)| self.counts[*t as usize] == *c).count() as u64;
            total -= own.iter().map(|&(_, c)| u64::from(c)).sum::<u64>();
            for f in &self.prep.field_tokens[i] {
                let l = f.len() as u64;
                n -= 1;
                sum -= l;
                sumsq -= l * l;
            }
        }
        let richness = if total == 0 {
            0.0
        } else {
            distinct as f64 / total as f64
        };
        let spread = Self::dispersion(n, sum, sumsq);
        Some(TermValue {
            value: harmonic(richness, spread),
            parts: vec![("C1.richness".into(), richness), ("C1.dispersion".into(), spread)],
        })
    }

    fn recommend(&self, idx: usize) -> Vec<Recommendation> {
        let mut out = Vec::new();
        let mut common: Vec<(u32, u32)> = self.sample_counts[idx]
            .iter()
            .map(|&(t, _)| (t, self.counts[t as usize]))
            .collect();
        common.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        if let Some(&(top, _)) = common.first() {
            let words: Vec<&str> = common.iter().take(3).map(|&(t, _)| self.prep.token(t)).collect();
            out.push(Recommendation::new(
                "common_words",
                format!("replace frequent corpus words: {}", words.join(", ")),
                Some(self.prep.token(top).to_owned()),
            ));
        }
        let len = self.prep.sample_len(idx) as f64;
        let mean_len = self.total as f64 / self.prep.len() as f64;
        if len > 2.0 * mean_len || len < 0.5 * mean_len {
            out.push(Recommendation::new(
                "length_outlier",
                format!("sample has {len} tokens against a mean of {mean_len:.1}"),
                None,
            ));
        }
        out
    }
}

// ---------------------------------------------------------------- C2

struct FeatureCounts {
    name: String,
    counts: Vec<u32>,
    z: u64,
    s: f64,
    k: u64,
    per_sample: Vec<Vec<(u32, u32)>>,
}

impl FeatureCounts {
    fn new(name: String, per_sample_items: Vec<Vec<u32>>, n_features: usize) -> Self {
        let mut counts = vec![0u32; n_features];
        let per_sample: Vec<Vec<(u32, u32)>> = per_sample_items.iter().map(|v| count_sorted(v)).collect();
        for sample in &per_sample {
            for &(f, c) in sample {
                counts[f as usize] += c;
            }
        }
        let z = counts.iter().map(|&c| u64::from(c)).sum();
        let s = counts.iter().map(|&c| xlogx(u64::from(c))).sum();
        let k = counts.iter().filter(|&&c| c > 0).count() as u64;
        Self {
            name,
            counts,
            z,
            s,
            k,
            per_sample,
        }
    }

    fn normalized_entropy(&self, removed: Option<usize>) -> Option<f64> {
        let (mut z, mut s, mut k) = (self.z, self.s, self.k);
        if let Some(i) = removed {
            for &(f, r) in &self.per_sample[i] {
                let c = u64::from(self.counts[f as usize]);
                let r = u64::from(r);
                s += xlogx(c - r) - xlogx(c);
                z -= r;
                if c == r {
                    k -= 1;
                }
            }
        }
        match k {
            0 => None,
            1 => Some(1.0),
            _ => {
                let z = z as f64;
                let h = z.ln() - s / z;
                Some((h / (k as f64).ln()).clamp(0.0, 1.0))
            }
        }
    }
}

/// Mean normalized entropy over n-gram, POS and sentence granularities.
pub(crate) struct Diversity {
    prep: Arc<Prepared>,
    granularities: Vec<FeatureCounts>,
    bigram_names: Vec<String>,
}

fn intern(index: &mut HashMap<Vec<u32>, u32>, key: &[u32], names: Option<(&mut Vec<String>, &Prepared)>) -> u32 {
    if let Some(&id) = index.get(key) {
        return id;
    }
    let id = index.len() as u32;
    index.insert(key.to_vec(), id);
    if let Some((names, prep)) = names {
        names.push(key.iter().map(|&t| prep.token(t)).collect::<Vec<_>>().join(" "));
    }
    id
}

impl Diversity {
    pub fn new(prep: Arc<Prepared>, ngram_max: usize) -> Self {
        let mut granularities = Vec::new();
        let mut bigram_names = Vec::new();

        let unigrams = prep
            .field_tokens
            .iter()
            .map(|fields| fields.iter().flatten().copied().collect())
            .collect();
        granularities.push(FeatureCounts::new("C2.unigram".into(), unigrams, prep.vocab.len()));

        for n in 2..=ngram_max {
            let mut index = HashMap::new();
            let per_sample = prep
                .field_tokens
                .iter()
                .map(|fields| {
                    fields
                        .iter()
                        .flat_map(|f| f.windows(n))
                        .map(|w| {
                            let names = (n == 2).then_some((&mut bigram_names, &*prep));
                            intern(&mut index, w, names)
                        })
                        .collect::<Vec<u32>>()
                })
                .collect();
            let name = match n {
                2 => "C2.bigram".to_owned(),
                3 => "C2.trigram".to_owned(),
                _ => format!("C2.{n}gram"),
            };
            granularities.push(FeatureCounts::new(name, per_sample, index.len()));
        }

        let tags = prep
            .field_tags
            .iter()
            .map(|fields| fields.iter().flatten().copied().collect())
            .collect();
        granularities.push(FeatureCounts::new("C2.pos".into(), tags, 5));

        let mut index = HashMap::new();
        let sentences = prep
            .field_tokens
            .iter()
            .map(|fields| fields.iter().map(|f| intern(&mut index, f, None)).collect())
            .collect();
        granularities.push(FeatureCounts::new("C2.sentence".into(), sentences, index.len()));

        Self {
            prep,
            granularities,
            bigram_names,
        }
    }
}

impl QualityTerm for Diversity {
    fn component(&self) -> Component {
        Component::C2
    }

    fn evaluate(&self, removed: Option<usize>) -> Option<TermValue> {
        let parts: Vec<(String, f64)> = self
            .granularities
            .iter()
            .filter_map(|g| g.normalized_entropy(removed).map(|v| (g.name.clone(), v)))
            .collect();
        if parts.is_empty() {
            return None;
        }
        let value = parts.iter().map(|p| p.1).sum::<f64>() / parts.len() as f64;
        Some(TermValue { value, parts })
    }

    fn recommend(&self, idx: usize) -> Vec<Recommendation> {
        // Prefer the most repeated bigram, fall back to unigrams.
        let pick = |g: &FeatureCounts| {
            g.per_sample[idx]
                .iter()
                .map(|&(f, _)| (f, g.counts[f as usize]))
                .filter(|&(_, c)| c > 1)
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        };
        let found = self
            .granularities
            .get(1)
            .filter(|g| g.name == "C2.bigram")
            .and_then(|g| pick(g).map(|(f, c)| (self.bigram_names[f as usize].clone(), c)))
            .or_else(|| pick(&self.granularities[0]).map(|(f, c)| (self.prep.token(f).to_owned(), c)));
        match found {
            Some((text, count)) => vec![Recommendation::new(
                "frequent_ngram",
                format!("\"{text}\" already occurs {count} times in the dataset; rephrase it"),
                Some(text),
            )],
            None => Vec::new(),
        }
    }
}

// ---------------------------------------------------------------- C3

#[derive(Debug, Clone, Copy)]
struct TopTwo {
    best: f64,
    best_idx: Option<usize>,
    second: f64,
}

impl TopTwo {
    const EMPTY: TopTwo = TopTwo {
        best: f64::NEG_INFINITY,
        best_idx: None,
        second: f64::NEG_INFINITY,
    };

    fn offer(&mut self, value: f64, idx: usize) {
        if value > self.best {
            self.second = self.best;
            self.best = value;
            self.best_idx = Some(idx);
        } else if value > self.second {
            self.second = value;
        }
    }

    /// Max similarity once `removed` is gone; 0 when nothing is left.
    fn max_without(&self, removed: Option<usize>) -> f64 {
        let v = if removed.is_some() && self.best_idx == removed {
            self.second
        } else {
            self.best
        };
        v.max(0.0)
    }
}

/// Mean over samples of `1 - max Jaccard to any other sample`.
pub(crate) struct Overlap {
    prep: Arc<Prepared>,
    top: Vec<TopTwo>,
}

impl Overlap {
    pub fn new(prep: Arc<Prepared>) -> Self {
        let n = prep.len();
        let top = (0..n)
            .into_par_iter()
            .map(|u| {
                let mut t = TopTwo::EMPTY;
                for v in (0..n).filter(|&v| v != u) {
                    t.offer(jaccard_sorted(&prep.token_sets[u], &prep.token_sets[v]), v);
                }
                t
            })
            .collect();
        Self { prep, top }
    }
}

impl QualityTerm for Overlap {
    fn component(&self) -> Component {
        Component::C3
    }

    fn evaluate(&self, removed: Option<usize>) -> Option<TermValue> {
        let terms: Vec<f64> = (0..self.prep.len())
            .filter(|&u| Some(u) != removed)
            .map(|u| 1.0 - self.top[u].max_without(removed))
            .collect();
        if terms.is_empty() {
            return None;
        }
        Some(TermValue::single(Component::C3, "max_jaccard", mean(&terms)))
    }

    fn sample_term(&self, idx: usize) -> Option<f64> {
        Some(1.0 - self.top[idx].max_without(None))
    }

    fn recommend(&self, idx: usize) -> Vec<Recommendation> {
        let t = self.top[idx];
        match t.best_idx {
            Some(j) => vec![Recommendation::new(
                "near_duplicate",
                format!(
                    "shares {:.0}% of its words with sample {}; make it more distinct",
                    t.best * 100.0,
                    self.prep.ids[j]
                ),
                Some(self.prep.ids[j].clone()),
            )],
            None => Vec::new(),
        }
    }
}

// ---------------------------------------------------------------- C4 / C5

/// `1 - NMI(binned per-sample value; label)`.
pub(crate) struct BinnedLabelCue {
    component: Component,
    part: &'static str,
    prep: Arc<Prepared>,
    values: Vec<f64>,
    bins: Vec<usize>,
    table: Vec<Vec<u64>>,
}

pub(crate) fn bin_of(value: f64, n_bins: usize) -> usize {
    ((value * n_bins as f64).floor().max(0.0) as usize).min(n_bins - 1)
}

impl BinnedLabelCue {
    fn new(component: Component, part: &'static str, prep: Arc<Prepared>, values: Vec<f64>, n_bins: usize) -> Self {
        let bins: Vec<usize> = values.iter().map(|&v| bin_of(v, n_bins)).collect();
        let mut table = vec![vec![0u64; prep.n_labels]; n_bins];
        for (i, &b) in bins.iter().enumerate() {
            table[b][prep.labels[i]] += 1;
        }
        Self {
            component,
            part,
            prep,
            values,
            bins,
            table,
        }
    }

    /// Mean pairwise Jaccard between field token sets.
    pub fn field_overlap(prep: Arc<Prepared>, n_bins: usize) -> Self {
        let values = prep
            .field_sets
            .iter()
            .map(|fields| mean_over_pairs(fields, |a, b| jaccard_sorted(a, b)))
            .collect();
        Self::new(Component::C4, "field_overlap_nmi", prep, values, n_bins)
    }

    /// Mean pairwise bag-of-words cosine between fields.
    pub fn field_similarity_bow(prep: Arc<Prepared>, n_bins: usize) -> Self {
        let values = prep
            .field_tokens
            .iter()
            .map(|fields| {
                let bags: Vec<Vec<(u32, u32)>> = fields.iter().map(|f| count_sorted(f)).collect();
                mean_over_pairs(&bags, |a, b| bow_cosine(a, b))
            })
            .collect();
        Self::new(Component::C5, "field_similarity_nmi", prep, values, n_bins)
    }

    /// Mean pairwise embedding cosine between per-field rows `"{id}#{field}"`,
    /// mapped from `[-1, 1]` onto `[0, 1]`.
    pub fn field_similarity_embedded(prep: Arc<Prepared>, rows: Vec<Vec<&[f32]>>, n_bins: usize) -> Self {
        let values = rows
            .iter()
            .map(|fields| mean_over_pairs(fields, |a, b| (cosine_unchecked(a, b) + 1.0) / 2.0))
            .collect();
        Self::new(Component::C5, "field_similarity_nmi", prep, values, n_bins)
    }
}

fn mean_over_pairs<T>(items: &[T], f: impl Fn(&T, &T) -> f64) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            total += f(&items[i], &items[j]);
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

fn bow_cosine(a: &[(u32, u32)], b: &[(u32, u32)]) -> f64 {
    let norm = |v: &[(u32, u32)]| v.iter().map(|&(_, c)| f64::from(c).powi(2)).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += f64::from(a[i].1) * f64::from(b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    (dot / (na * nb)).clamp(0.0, 1.0)
}

impl QualityTerm for BinnedLabelCue {
    fn component(&self) -> Component {
        self.component
    }

    fn evaluate(&self, removed: Option<usize>) -> Option<TermValue> {
        let value = match removed {
            None => 1.0 - nmi_from_table(&self.table),
            Some(i) => {
                let mut table = self.table.clone();
                table[self.bins[i]][self.prep.labels[i]] -= 1;
                1.0 - nmi_from_table(&table)
            }
        };
        Some(TermValue::single(self.component, self.part, value))
    }

    fn recommend(&self, idx: usize) -> Vec<Recommendation> {
        let fields = &self.prep.field_sets[idx];
        let mut shared: Vec<u32> = Vec::new();
        for i in 0..fields.len() {
            for j in i + 1..fields.len() {
                shared.extend(fields[i].iter().filter(|t| fields[j].binary_search(t).is_ok()));
            }
        }
        shared.sort_unstable();
        shared.dedup();
        let kind = if self.component == Component::C4 {
            "field_overlap"
        } else {
            "field_similarity"
        };
        let words: Vec<&str> = shared.iter().take(5).map(|&t| self.prep.token(t)).collect();
        let detail = if words.is_empty() {
            format!(
                "field similarity {:.2} falls in a bin that predicts the label; vary how closely the fields match",
                self.values[idx]
            )
        } else {
            format!(
                "fields overlap ({:.2}) on: {}; this overlap level correlates with the label",
                self.values[idx],
                words.join(", ")
            )
        };
        vec![Recommendation::new(
            kind,
            detail,
            words.first().map(|w| (*w).to_owned()),
        )]
    }
}

// ---------------------------------------------------------------- C6

/// Mean over samples of `1 / (1 + max(0, mean PMI of the sample's words with
/// its own label))`.
pub(crate) struct Leakage {
    prep: Arc<Prepared>,
    alpha: f64,
    n_labels: usize,
    // [token * n_labels + label]
    joint: Vec<u32>,
    feature: Vec<u32>,
    label: Vec<u32>,
}

impl Leakage {
    pub fn new(prep: Arc<Prepared>, alpha: f64) -> Self {
        let n_labels = prep.n_labels;
        let mut joint = vec![0u32; prep.vocab.len() * n_labels];
        let mut feature = vec![0u32; prep.vocab.len()];
        let mut label = vec![0u32; n_labels];
        for (set, &l) in prep.token_sets.iter().zip(&prep.labels) {
            label[l] += 1;
            for &t in set {
                joint[t as usize * n_labels + l] += 1;
                feature[t as usize] += 1;
            }
        }
        Self {
            prep,
            alpha,
            n_labels,
            joint,
            feature,
            label,
        }
    }

    fn pmi(&self, token: u32, l: usize, removed: Option<usize>) -> f64 {
        let t = token as usize;
        let (mut n_fl, mut n_f, mut n_l, mut n) = (
            self.joint[t * self.n_labels + l] as usize,
            self.feature[t] as usize,
            self.label[l] as usize,
            self.prep.len(),
        );
        if let Some(r) = removed {
            let rl = self.prep.labels[r];
            n -= 1;
            if rl == l {
                n_l -= 1;
            }
            if self.prep.token_sets[r].binary_search(&token).is_ok() {
                n_f -= 1;
                if rl == l {
                    n_fl -= 1;
                }
            }
        }
        pmi_from_counts(n_fl, n_f, n_l, n, self.n_labels, self.alpha)
    }

    fn term(&self, u: usize, removed: Option<usize>) -> f64 {
        let set = &self.prep.token_sets[u];
        if set.is_empty() {
            return 1.0;
        }
        let l = self.prep.labels[u];
        let mean_pmi = set.iter().map(|&t| self.pmi(t, l, removed)).sum::<f64>() / set.len() as f64;
        1.0 / (1.0 + mean_pmi.max(0.0))
    }
}

impl QualityTerm for Leakage {
    fn component(&self) -> Component {
        Component::C6
    }

    fn evaluate(&self, removed: Option<usize>) -> Option<TermValue> {
        let terms: Vec<f64> = (0..self.prep.len())
            .into_par_iter()
            .filter(|&u| Some(u) != removed)
            .map(|u| self.term(u, removed))
            .collect();
        if terms.is_empty() {
            return None;
        }
        Some(TermValue::single(Component::C6, "label_pmi", mean(&terms)))
    }

    fn sample_term(&self, idx: usize) -> Option<f64> {
        Some(self.term(idx, None))
    }

    fn recommend(&self, idx: usize) -> Vec<Recommendation> {
        let l = self.prep.labels[idx];
        let mut scored: Vec<(u32, f64)> = self.prep.token_sets[idx]
            .iter()
            .map(|&t| (t, self.pmi(t, l, None)))
            .filter(|&(_, p)| p > 0.0)
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let Some(&(top, _)) = scored.first() else {
            return Vec::new();
        };
        let listed: Vec<String> = scored
            .iter()
            .take(3)
            .map(|&(t, p)| format!("{} ({p:.2} bits)", self.prep.token(t)))
            .collect();
        vec![Recommendation::new(
            "label_leakage",
            format!("these words are associated with the label: {}", listed.join(", ")),
            Some(self.prep.token(top).to_owned()),
        )]
    }
}

// ---------------------------------------------------------------- C7

/// Mean over eval-split samples of `1 - max Jaccard to any train sample`.
pub(crate) struct SplitLeakage {
    prep: Arc<Prepared>,
    evals: Vec<usize>,
    n_train: usize,
    top: HashMap<usize, TopTwo>,
}

impl SplitLeakage {
    pub fn new(prep: Arc<Prepared>) -> Option<Self> {
        let evals: Vec<usize> = (0..prep.len()).filter(|&i| prep.roles[i] == SplitRole::Eval).collect();
        let trains: Vec<usize> = (0..prep.len()).filter(|&i| prep.roles[i] == SplitRole::Train).collect();
        if evals.is_empty() || trains.is_empty() {
            return None;
        }
        let top = evals
            .par_iter()
            .map(|&e| {
                let mut t = TopTwo::EMPTY;
                for &tr in &trains {
                    t.offer(jaccard_sorted(&prep.token_sets[e], &prep.token_sets[tr]), tr);
                }
                (e, t)
            })
            .collect();
        Some(Self {
            n_train: trains.len(),
            prep,
            evals,
            top,
        })
    }
}

impl QualityTerm for SplitLeakage {
    fn component(&self) -> Component {
        Component::C7
    }

    fn evaluate(&self, removed: Option<usize>) -> Option<TermValue> {
        let removed_role = removed.map(|r| self.prep.roles[r]);
        let n_train = self.n_train - usize::from(removed_role == Some(SplitRole::Train));
        if n_train == 0 {
            return None;
        }
        let terms: Vec<f64> = self
            .evals
            .iter()
            .filter(|&&e| Some(e) != removed)
            .map(|e| 1.0 - self.top[e].max_without(removed))
            .collect();
        if terms.is_empty() {
            return None;
        }
        Some(TermValue::single(Component::C7, "train_overlap", mean(&terms)))
    }

    fn sample_term(&self, idx: usize) -> Option<f64> {
        self.top.get(&idx).map(|t| 1.0 - t.max_without(None))
    }

    fn recommend(&self, idx: usize) -> Vec<Recommendation> {
        if let Some(t) = self.top.get(&idx) {
            if let Some(j) = t.best_idx {
                return vec![Recommendation::new(
                    "split_leakage",
                    format!(
                        "overlaps training sample {} ({:.0}% shared words)",
                        self.prep.ids[j],
                        t.best * 100.0
                    ),
                    Some(self.prep.ids[j].clone()),
                )];
            }
        }
        // A training sample: name the eval samples it leaks into.
        let leaked: Vec<&str> = self
            .evals
            .iter()
            .filter(|e| self.top[*e].best_idx == Some(idx))
            .map(|&e| self.prep.ids[e].as_str())
            .collect();
        if leaked.is_empty() {
            return Vec::new();
        }
        vec![Recommendation::new(
            "split_leakage",
            format!("closest training match for evaluation samples: {}", leaked.join(", ")),
            Some(leaked[0].to_owned()),
        )]
    }
}

/// Per-field rows `"{id}#{field}"` for every sample, if all are present.
pub(crate) fn field_rows<'a>(
    prep: &Prepared,
    field_names: &[String],
    emb: &'a EmbeddingMatrix,
) -> Option<Vec<Vec<&'a [f32]>>> {
    prep.ids
        .iter()
        .map(|id| {
            field_names
                .iter()
                .map(|f| emb.get(&format!("{id}#{f}")))
                .collect::<Option<Vec<_>>>()
        })
        .collect()
}
