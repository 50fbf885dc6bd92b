//! Tokenized, interned view of a dataset shared by every quality term.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::corpus::Dataset;
use crate::textstats::{tag_coarse, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SplitRole {
    Train,
    Eval,
    Untagged,
}

pub(crate) struct Prepared {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub n_labels: usize,
    pub n_fields: usize,
    pub vocab: Vec<String>,
    /// sample -> field -> token ids in text order
    pub field_tokens: Vec<Vec<Vec<u32>>>,
    /// sample -> field -> coarse POS class ids in text order
    pub field_tags: Vec<Vec<Vec<u32>>>,
    /// sample -> field -> sorted distinct token ids
    pub field_sets: Vec<Vec<Vec<u32>>>,
    /// sample -> sorted distinct token ids over all fields
    pub token_sets: Vec<Vec<u32>>,
    pub roles: Vec<SplitRole>,
}

impl Prepared {
    pub fn new(d: &Dataset) -> Self {
        let schema = &d.schema;
        let tokenized: Vec<Vec<Vec<String>>> = d
            .samples()
            .par_iter()
            .map(|s| s.texts(schema).map(|t| tokenize(t).into_inner()).collect())
            .collect();

        let mut index: HashMap<String, u32> = HashMap::new();
        let mut vocab = Vec::new();
        let mut field_tokens = Vec::with_capacity(d.len());
        let mut field_tags = Vec::with_capacity(d.len());
        for fields in &tokenized {
            let mut ids_per_field = Vec::with_capacity(fields.len());
            let mut tags_per_field = Vec::with_capacity(fields.len());
            for tokens in fields {
                let ids = tokens
                    .iter()
                    .map(|t| {
                        *index.entry(t.clone()).or_insert_with(|| {
                            vocab.push(t.clone());
                            (vocab.len() - 1) as u32
                        })
                    })
                    .collect();
                ids_per_field.push(ids);
                tags_per_field.push(tag_coarse(tokens).into_iter().map(|c| c as u32).collect());
            }
            field_tokens.push(ids_per_field);
            field_tags.push(tags_per_field);
        }

        let field_sets: Vec<Vec<Vec<u32>>> = field_tokens
            .iter()
            .map(|fields: &Vec<Vec<u32>>| fields.iter().map(|f| sorted_set(f.iter().copied())).collect())
            .collect();
        let token_sets = field_tokens
            .iter()
            .map(|fields| sorted_set(fields.iter().flatten().copied()))
            .collect();

        let roles = d
            .samples()
            .iter()
            .map(|s| match s.split.as_deref() {
                None => SplitRole::Untagged,
                Some("train") => SplitRole::Train,
                Some(_) => SplitRole::Eval,
            })
            .collect();

        Self {
            ids: d.ids().map(str::to_owned).collect(),
            labels: d.label_indices(),
            n_labels: schema.labels.len(),
            n_fields: schema.field_names.len(),
            vocab,
            field_tokens,
            field_tags,
            field_sets,
            token_sets,
            roles,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.vocab[id as usize]
    }

    pub fn sample_len(&self, i: usize) -> usize {
        self.field_tokens[i].iter().map(Vec::len).sum()
    }
}

pub(crate) fn sorted_set(items: impl Iterator<Item = u32>) -> Vec<u32> {
    let mut v: Vec<u32> = items.collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Counts of each value in a slice, as sorted `(value, count)` pairs.
pub(crate) fn count_sorted<T: Ord + Clone>(items: &[T]) -> Vec<(T, u32)> {
    let mut sorted = items.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<(T, u32)> = Vec::new();
    for item in sorted {
        match out.last_mut() {
            Some((last, c)) if *last == item => *c += 1,
            _ => out.push((item, 1)),
        }
    }
    out
}
