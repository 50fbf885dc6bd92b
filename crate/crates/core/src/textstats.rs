//! Text primitives: tokenization, coarse POS tags, n-grams, set overlap and
//! label-conditioned PMI.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::hash::Hash;
use std::ops::Deref;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Sample, TaskSchema};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TextError {
    #[error("n-gram order must be at least 1, got {0}")]
    InvalidOrder(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("smoothing constant must be finite and non-negative, got {0}")]
    InvalidAlpha(f64),
}

/// Lowercased tokens; never contains an empty string.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    pub fn join(&self, sep: &str) -> String {
        self.0.join(sep)
    }

    pub fn to_set(&self) -> HashSet<&str> {
        self.0.iter().map(String::as_str).collect()
    }
}

impl Deref for TokenSeq {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

/// Lowercases and splits on every maximal run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> TokenSeq {
    TokenSeq(
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|piece| !piece.is_empty())
            .map(str::to_lowercase)
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosClass {
    Adj,
    Adv,
    Noun,
    Verb,
    Other,
}

impl PosClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PosClass::Adj => "ADJ",
            PosClass::Adv => "ADV",
            PosClass::Noun => "NOUN",
            PosClass::Verb => "VERB",
            PosClass::Other => "OTHER",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "ADJ" => PosClass::Adj,
            "ADV" => PosClass::Adv,
            "NOUN" => PosClass::Noun,
            "VERB" => PosClass::Verb,
            "OTHER" => PosClass::Other,
            _ => return None,
        })
    }
}

/// Assigns one coarse class per token.
pub trait PosTagger: Sync {
    fn tag(&self, tokens: &[String]) -> Vec<PosClass>;
}

/// Lexicon lookup with suffix fallbacks.
#[derive(Debug, Clone)]
pub struct LexiconTagger {
    lexicon: HashMap<String, PosClass>,
}

const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.tsv");

// Checked in order; a token must be at least two characters longer than the suffix.
const SUFFIX_RULES: &[(&str, PosClass)] = &[
    ("ly", PosClass::Adv),
    ("ing", PosClass::Verb),
    ("ed", PosClass::Verb),
    ("ness", PosClass::Noun),
    ("tion", PosClass::Noun),
    ("ity", PosClass::Noun),
    ("ous", PosClass::Adj),
    ("ful", PosClass::Adj),
    ("ive", PosClass::Adj),
];

impl LexiconTagger {
    /// Parses `word<TAB>CLASS` lines; `#` starts a comment line.
    pub fn from_tsv(text: &str) -> Self {
        let lexicon = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .filter_map(|l| {
                let (word, class) = l.split_once('\t')?;
                Some((word.trim().to_lowercase(), PosClass::parse(class.trim())?))
            })
            .collect();
        Self { lexicon }
    }

    pub fn bundled() -> &'static LexiconTagger {
        static TAGGER: OnceLock<LexiconTagger> = OnceLock::new();
        TAGGER.get_or_init(|| LexiconTagger::from_tsv(BUNDLED_LEXICON))
    }

    pub fn len(&self) -> usize {
        self.lexicon.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lexicon.is_empty()
    }

    pub fn tag_token(&self, token: &str) -> PosClass {
        if let Some(&class) = self.lexicon.get(token) {
            return class;
        }
        let chars = token.chars().count();
        SUFFIX_RULES
            .iter()
            .find(|(suffix, _)| chars >= suffix.len() + 2 && token.ends_with(suffix))
            .map_or(PosClass::Other, |&(_, class)| class)
    }
}

impl PosTagger for LexiconTagger {
    fn tag(&self, tokens: &[String]) -> Vec<PosClass> {
        tokens.iter().map(|t| self.tag_token(t)).collect()
    }
}

pub fn tag_coarse(tokens: &[String]) -> Vec<PosClass> {
    LexiconTagger::bundled().tag(tokens)
}

/// All in-order windows of length `n`, multiplicity preserved.
pub fn extract_ngrams<T>(tokens: &[T], n: usize) -> Result<Vec<&[T]>, TextError> {
    if n < 1 {
        return Err(TextError::InvalidOrder(n));
    }
    Ok(tokens.windows(n).collect())
}

/// `|a ∩ b| / |a ∪ b|`, with two empty sets counting as identical.
pub fn jaccard<T: Eq + Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let inter = small.iter().filter(|x| large.contains(x)).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Jaccard over sorted, deduplicated slices.
pub fn jaccard_sorted<T: Ord>(a: &[T], b: &[T]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = sorted_intersection_len(a, b);
    inter as f64 / (a.len() + b.len() - inter) as f64
}

pub(crate) fn sorted_intersection_len<T: Ord>(a: &[T], b: &[T]) -> usize {
    let (mut i, mut j, mut inter) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Unigram,
    Bigram,
    Trigram,
    Pos,
}

/// Distinct features of one sample at `granularity`. N-grams never cross
/// field boundaries; n-gram parts are joined with a single space.
pub fn sample_features(sample: &Sample, schema: &TaskSchema, granularity: Granularity) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for text in sample.texts(schema) {
        let tokens = tokenize(text);
        match granularity {
            Granularity::Unigram => out.extend(tokens.iter().cloned()),
            Granularity::Bigram | Granularity::Trigram => {
                let n = if granularity == Granularity::Bigram { 2 } else { 3 };
                out.extend(tokens.windows(n).map(|w| w.join(" ")));
            }
            Granularity::Pos => out.extend(tag_coarse(&tokens).into_iter().map(|c| c.as_str().to_owned())),
        }
    }
    out
}

/// Base-2 PMI from presence counts with add-`alpha` smoothing.
///
/// The smoothed table is the per-feature `present/absent × label` table with
/// `alpha` added to each of its `2 * n_labels` cells; the marginals are taken
/// from that same table.
pub fn pmi_from_counts(
    n_feature_label: usize,
    n_feature: usize,
    n_label: usize,
    n_samples: usize,
    n_labels: usize,
    alpha: f64,
) -> f64 {
    let total = n_samples as f64 + 2.0 * n_labels as f64 * alpha;
    let joint = (n_feature_label as f64 + alpha) / total;
    let p_feature = (n_feature as f64 + n_labels as f64 * alpha) / total;
    let p_label = (n_label as f64 + 2.0 * alpha) / total;
    (joint / (p_feature * p_label)).log2()
}

/// Feature-by-label presence counts with PMI evaluation.
#[derive(Debug, Clone)]
pub struct PmiTable {
    pub granularity: Granularity,
    pub alpha: f64,
    labels: Vec<String>,
    n_samples: usize,
    label_counts: Vec<usize>,
    // feature -> presence count per label
    counts: HashMap<String, Vec<usize>>,
}

impl PmiTable {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn feature_count(&self) -> usize {
        self.counts.len()
    }

    /// PMI of `(feature, label)`. `None` for an unseen feature or label, and for
    /// a pair that never co-occurs when `alpha == 0` (the value would be -inf).
    pub fn pmi(&self, feature: &str, label: &str) -> Option<f64> {
        let li = self.labels.iter().position(|l| l == label)?;
        let per_label = self.counts.get(feature)?;
        self.pmi_at(per_label, li)
    }

    fn pmi_at(&self, per_label: &[usize], li: usize) -> Option<f64> {
        if self.alpha == 0.0 && per_label[li] == 0 {
            return None;
        }
        Some(pmi_from_counts(
            per_label[li],
            per_label.iter().sum(),
            self.label_counts[li],
            self.n_samples,
            self.labels.len(),
            self.alpha,
        ))
    }

    /// Every defined `((feature, label), pmi)` entry, sorted by feature then label order.
    pub fn entries(&self) -> Vec<((String, String), f64)> {
        let mut features: Vec<&String> = self.counts.keys().collect();
        features.sort();
        let mut out = Vec::new();
        for f in features {
            let per_label = &self.counts[f];
            for (li, label) in self.labels.iter().enumerate() {
                if let Some(v) = self.pmi_at(per_label, li) {
                    out.push(((f.clone(), label.clone()), v));
                }
            }
        }
        out
    }
}

/// Label-conditioned PMI over sample-level feature presence.
pub fn label_pmi(d: &Dataset, granularity: Granularity, alpha: f64) -> Result<PmiTable, TextError> {
    if d.is_empty() {
        return Err(TextError::EmptyDataset);
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(TextError::InvalidAlpha(alpha));
    }
    let labels = d.schema.labels.clone();
    let mut label_counts = vec![0usize; labels.len()];
    let mut counts: HashMap<String, Vec<usize>> = HashMap::new();
    for (sample, li) in d.samples().iter().zip(d.label_indices()) {
        label_counts[li] += 1;
        for f in sample_features(sample, &d.schema, granularity) {
            counts.entry(f).or_insert_with(|| vec![0; labels.len()])[li] += 1;
        }
    }
    Ok(PmiTable {
        granularity,
        alpha,
        labels,
        n_samples: d.len(),
        label_counts,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(&*tokenize("A man, walking."), toks(&["a", "man", "walking"]).as_slice());
        assert!(tokenize("").is_empty());
        assert_eq!(&*tokenize("Don't stop"), toks(&["don", "t", "stop"]).as_slice());
        assert_eq!(
            &*tokenize("  Ünïcode--ÉTÉ 42 "),
            toks(&["ünïcode", "été", "42"]).as_slice()
        );
    }

    #[test]
    fn tagger_rules() {
        let tags = tag_coarse(&toks(&[
            "quickly",
            "running",
            "zzz",
            "happiness",
            "dog",
            "famous",
            "red",
        ]));
        assert_eq!(
            tags,
            [
                PosClass::Adv,
                PosClass::Verb,
                PosClass::Other,
                PosClass::Noun,
                PosClass::Noun,
                PosClass::Adj,
                PosClass::Adj
            ]
        );
        // Too short for the suffix rule.
        assert_eq!(LexiconTagger::bundled().tag_token("fly"), PosClass::Other);
        assert!(LexiconTagger::bundled().len() >= 300);
    }

    #[test]
    fn ngram_examples() {
        let abc = toks(&["a", "b", "c"]);
        let bigrams = extract_ngrams(&abc, 2).unwrap();
        assert_eq!(bigrams, vec![&abc[0..2], &abc[1..3]]);
        assert!(extract_ngrams(&abc[..2], 3).unwrap().is_empty());
        let aaa = toks(&["a", "a", "a"]);
        assert_eq!(extract_ngrams(&aaa, 1).unwrap().len(), 3);
        assert_eq!(extract_ngrams(&aaa, 0), Err(TextError::InvalidOrder(0)));
    }

    #[test]
    fn jaccard_examples() {
        let set = |xs: &[&'static str]| xs.iter().copied().collect::<HashSet<_>>();
        assert_eq!(jaccard(&set(&["a", "b"]), &set(&["a", "b"])), 1.0);
        assert_eq!(jaccard(&set(&["a"]), &set(&["b"])), 0.0);
        assert_eq!(jaccard(&set(&["a", "b", "c"]), &set(&["b", "c", "d"])), 0.5);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 1.0);
        assert_eq!(jaccard_sorted(&[1, 2, 3], &[2, 3, 4]), 0.5);
    }

    fn leakage_fixture() -> Dataset {
        let schema = TaskSchema::new("nli2", ["premise", "hypothesis"], ["entailment", "contradiction"]).unwrap();
        let rows = [
            ("s1", "A man walks a dog.", "The man does not walk.", "contradiction"),
            (
                "s2",
                "Two kids play soccer.",
                "The kids are not playing.",
                "contradiction",
            ),
            ("s3", "A woman reads a book.", "A woman is reading.", "entailment"),
            ("s4", "The cat sleeps on a mat.", "A pet rests.", "entailment"),
        ];
        let samples = rows
            .iter()
            .map(|(id, p, h, l)| Sample::new(*id, [("premise", *p), ("hypothesis", *h)], *l))
            .collect();
        Dataset::new(schema, samples).unwrap()
    }

    #[test]
    fn pmi_leakage_token() {
        let d = leakage_fixture();
        let raw = label_pmi(&d, Granularity::Unigram, 0.0).unwrap();
        assert_eq!(raw.pmi("not", "contradiction"), Some(1.0));
        assert_eq!(raw.pmi("not", "entailment"), None);
        let smoothed = label_pmi(&d, Granularity::Unigram, 1.0).unwrap();
        let s = smoothed.pmi("not", "contradiction").unwrap();
        assert!(s.abs() < 1.0);
        assert!((s - 1.5f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn pmi_independent_feature_is_zero() {
        // "a" occurs in every sample.
        let schema = TaskSchema::new("t", ["text"], ["x", "y"]).unwrap();
        let samples = ["a b", "a c", "a d", "a b c"]
            .iter()
            .enumerate()
            .map(|(i, t)| Sample::new(format!("s{i}"), [("text", *t)], if i % 2 == 0 { "x" } else { "y" }))
            .collect();
        let d = Dataset::new(schema, samples).unwrap();
        let t = label_pmi(&d, Granularity::Unigram, 0.0).unwrap();
        assert!(t.pmi("a", "x").unwrap().abs() < 1e-12);
        assert!(t.pmi("a", "y").unwrap().abs() < 1e-12);
    }

    #[test]
    fn pmi_errors_and_other_granularities() {
        let d = leakage_fixture();
        assert!(matches!(
            label_pmi(&Dataset::empty(d.schema.clone()), Granularity::Unigram, 1.0),
            Err(TextError::EmptyDataset)
        ));
        let bigrams = label_pmi(&d, Granularity::Bigram, 0.0).unwrap();
        assert!(bigrams.pmi("does not", "contradiction").is_some());
        let pos = label_pmi(&d, Granularity::Pos, 0.0).unwrap();
        assert!(pos.pmi("NOUN", "entailment").is_some());
        assert!(!bigrams.entries().is_empty());
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(text in "\\PC{0,60}") {
            let once = tokenize(&text);
            prop_assert_eq!(tokenize(&once.join(" ")), once);
        }

        #[test]
        fn ngram_count_formula(len in 0usize..=100, n in 1usize..=5, seed in any::<u64>()) {
            let tokens: Vec<String> = (0..len).map(|i| format!("t{}", (seed as usize + i * 7) % 5)).collect();
            let grams = extract_ngrams(&tokens, n).unwrap();
            prop_assert_eq!(grams.len(), (len + 1).saturating_sub(n));
            for (i, g) in grams.iter().enumerate() {
                prop_assert_eq!(*g, &tokens[i..i + n]);
            }
        }

        #[test]
        fn jaccard_symmetric_and_bounded(
            a in proptest::collection::hash_set(0u8..20, 0..10),
            b in proptest::collection::hash_set(0u8..20, 0..10),
        ) {
            let ab = jaccard(&a, &b);
            prop_assert_eq!(ab, jaccard(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            if !a.is_empty() {
                prop_assert_eq!(jaccard(&a, &a), 1.0);
            }
            let mut sa: Vec<_> = a.iter().copied().collect();
            let mut sb: Vec<_> = b.iter().copied().collect();
            sa.sort_unstable();
            sb.sort_unstable();
            prop_assert_eq!(jaccard_sorted(&sa, &sb), ab);
        }
    }
}
