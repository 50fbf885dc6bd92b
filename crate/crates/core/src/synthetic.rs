//! Small generated datasets with known structure, used by tests, benches and
//! the `synth` CLI command.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{split_dataset, Dataset, Sample, TaskSchema};
use crate::embeddings::{EmbManifest, EmbeddingMatrix};

/// The token every planted sample carries in its hypothesis.
pub const GIVEAWAY: &str = "never";

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "p", "r", "s", "t", "v", "z", "ch", "sh",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const CODAS: &[&str] = &["n", "m", "l", "r"];

fn base_vocabulary() -> Vec<String> {
    let mut out = Vec::new();
    for o in ONSETS {
        for v in VOWELS {
            for c in CODAS {
                out.push(format!("{o}{v}{c}"));
            }
        }
    }
    out
}

/// A unique pseudo-word for sample `i`, field `f`.
fn rare_word(i: usize, f: usize) -> String {
    let mut s = String::from("q");
    let mut v = i * 2 + f;
    loop {
        s.push(char::from(b'a' + (v % 26) as u8));
        v /= 26;
        if v == 0 {
            break;
        }
    }
    s + "x"
}

/// Four premise/hypothesis pairs over a two-label schema.
pub fn micro_corpus() -> Dataset {
    let schema =
        TaskSchema::new("nli2", ["premise", "hypothesis"], ["entailment", "contradiction"]).expect("valid schema");
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
    Dataset::new(schema, samples).expect("valid fixture")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub size: usize,
    pub dim: usize,
    pub planted: usize,
    /// Copies of each planted text.
    pub copies: usize,
    /// Mean of the first feature coordinate for planted samples.
    pub offset: f64,
    pub burn_fraction: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            size: 2000,
            dim: 16,
            planted: 200,
            copies: 5,
            offset: 5.0,
            burn_fraction: 0.10,
            seed: 7,
        }
    }
}

/// An NLI dataset in which a block of samples is predictable from one
/// feature coordinate, made of exact text duplicates, and always labeled
/// `contradiction` with the give-away token [`GIVEAWAY`] in the hypothesis.
/// The remaining samples have random features and balanced-overall labels
/// unrelated to them, and each carries its own rare words.
#[derive(Debug, Clone)]
pub struct PlantedFixture {
    pub dataset: Dataset,
    pub embeddings: EmbeddingMatrix,
    pub manifest: EmbManifest,
    /// Planted ids, burned ones included.
    pub planted_ids: Vec<String>,
}

impl PlantedFixture {
    pub fn is_planted(&self, id: &str) -> bool {
        self.planted_ids.binary_search_by(|p| p.as_str().cmp(id)).is_ok()
    }
}

pub fn planted(cfg: &PlantedConfig) -> PlantedFixture {
    assert!(cfg.planted < cfg.size && cfg.copies >= 1 && cfg.dim >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = base_vocabulary();
    let schema = TaskSchema::nli();
    let noise = Normal::new(0.0, 1.0).expect("valid normal");

    let phrase = |rng: &mut ChaCha8Rng, len: usize| -> Vec<String> {
        (0..len)
            .map(|_| vocab[rng.random_range(0..vocab.len())].clone())
            .collect()
    };

    let distinct = cfg.planted.div_ceil(cfg.copies);
    let planted_texts: Vec<(String, String)> = (0..distinct)
        .map(|_| {
            let premise = phrase(&mut rng, 5).join(" ");
            let mut hyp = phrase(&mut rng, 3);
            hyp.insert(1, GIVEAWAY.to_owned());
            (premise + ".", hyp.join(" ") + ".")
        })
        .collect();

    // Overall label counts are as even as possible; planted samples take
    // their share of contradictions first.
    let n_labels = schema.labels.len();
    let mut per_label = vec![cfg.size / n_labels; n_labels];
    for c in per_label.iter_mut().take(cfg.size % n_labels) {
        *c += 1;
    }
    let contradiction = n_labels - 1;
    per_label[contradiction] = per_label[contradiction].saturating_sub(cfg.planted);
    let mut rest_labels: Vec<usize> = per_label
        .iter()
        .enumerate()
        .flat_map(|(l, &c)| std::iter::repeat_n(l, c))
        .collect();
    while rest_labels.len() < cfg.size - cfg.planted {
        rest_labels.push(rng.random_range(0..n_labels));
    }
    rest_labels.shuffle(&mut rng);

    let mut is_planted = vec![false; cfg.size];
    for i in rand::seq::index::sample(&mut rng, cfg.size, cfg.planted) {
        is_planted[i] = true;
    }

    let mut samples = Vec::with_capacity(cfg.size);
    let mut rows = Vec::with_capacity(cfg.size);
    let mut planted_ids = Vec::with_capacity(cfg.planted);
    let (mut next_planted, mut next_rest) = (0, 0);
    for (i, &planted) in is_planted.iter().enumerate() {
        let id = format!("syn-{i:05}");
        let mut row: Vec<f32> = (0..cfg.dim).map(|_| noise.sample(&mut rng) as f32).collect();
        let sample = if planted {
            let (p, h) = &planted_texts[next_planted / cfg.copies];
            next_planted += 1;
            row[0] = (cfg.offset + 0.5 * noise.sample(&mut rng)) as f32;
            planted_ids.push(id.clone());
            Sample::new(
                &id,
                [("premise", p.clone()), ("hypothesis", h.clone())],
                &schema.labels[contradiction],
            )
        } else {
            let label = rest_labels[next_rest];
            next_rest += 1;
            let p_len = rng.random_range(4..8);
            let mut p = phrase(&mut rng, p_len);
            p.insert(rng.random_range(0..p.len()), rare_word(i, 0));
            let h_len = rng.random_range(2..5);
            let mut h = phrase(&mut rng, h_len);
            h.insert(rng.random_range(0..h.len()), rare_word(i, 1));
            Sample::new(
                &id,
                [("premise", p.join(" ") + "."), ("hypothesis", h.join(" ") + ".")],
                &schema.labels[label],
            )
        };
        samples.push(sample);
        rows.push(row);
    }
    let dataset = Dataset::new(schema, samples).expect("generated ids are unique");

    let (burned, _) = split_dataset(&dataset, cfg.burn_fraction, cfg.seed).expect("valid burn fraction");
    let burned_ids: Vec<String> = burned.ids().map(str::to_owned).collect();
    let (order, kept_rows): (Vec<String>, Vec<Vec<f32>>) = dataset
        .ids()
        .zip(rows)
        .filter(|(id, _)| burned.get(id).is_none())
        .map(|(id, r)| (id.to_owned(), r))
        .unzip();
    let embeddings = EmbeddingMatrix::from_rows(order, &kept_rows).expect("consistent rows");
    let manifest = EmbManifest::for_matrix(&embeddings, burned_ids, "synthetic-planted");
    planted_ids.sort();
    PlantedFixture {
        dataset,
        embeddings,
        manifest,
        planted_ids,
    }
}

/// Mean-pooled bag-of-hash features: a cheap stand-in encoder for
/// experiments without a real one.
pub fn hashed_features(d: &Dataset, dim: usize) -> EmbeddingMatrix {
    use std::hash::{Hash, Hasher};
    let mut rows = Vec::with_capacity(d.len());
    for s in d.samples() {
        let mut row = vec![0f32; dim];
        let mut count = 0;
        for (f, text) in s.texts(&d.schema).enumerate() {
            for tok in crate::textstats::tokenize(text).iter() {
                let mut h = std::collections::hash_map::DefaultHasher::new();
                (f, tok).hash(&mut h);
                row[(h.finish() % dim as u64) as usize] += 1.0;
                count += 1;
            }
        }
        if count > 0 {
            row.iter_mut().for_each(|v| *v /= count as f32);
        }
        rows.push(row);
    }
    EmbeddingMatrix::from_rows(d.ids().map(str::to_owned).collect(), &rows).expect("consistent rows")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_fixture_shape() {
        let f = planted(&PlantedConfig::default());
        assert_eq!(f.dataset.len(), 2000);
        assert_eq!(f.planted_ids.len(), 200);
        assert_eq!(f.manifest.burned.len(), 200);
        assert_eq!(f.embeddings.rows(), 1800);
        assert_eq!(f.embeddings.dim(), 16);
        let mut counts = [0; 3];
        for l in f.dataset.label_indices() {
            counts[l] += 1;
        }
        assert_eq!(counts, [667, 667, 666]);
        for s in f.dataset.samples() {
            let has = s.fields["hypothesis"]
                .split(|c: char| !c.is_alphanumeric())
                .any(|t| t == GIVEAWAY);
            assert_eq!(has, f.is_planted(&s.id), "{}", s.id);
        }
    }

    #[test]
    fn planted_fixture_is_deterministic() {
        let a = planted(&PlantedConfig::default());
        let b = planted(&PlantedConfig::default());
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.embeddings, b.embeddings);
    }

    #[test]
    fn rare_words_are_unique() {
        let words: std::collections::HashSet<String> =
            (0..5000).flat_map(|i| [rare_word(i, 0), rare_word(i, 1)]).collect();
        assert_eq!(words.len(), 10_000);
        assert!(!base_vocabulary().iter().any(|w| w == GIVEAWAY));
    }
}
