//! Task datasets: schema, samples, JSONL persistence and seeded splits.
//!
//! On disk a dataset is line-delimited JSON, one record per line:
//!
//! ```text
//! {"id":"s1","fields":{"premise":"...","hypothesis":"..."},"label":"entailment","split":"train"}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("malformed record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("sample {id:?} has label {label:?} which is not in the schema")]
    UnknownLabel { id: String, label: String },
    #[error("sample {id:?} does not match the schema: {reason}")]
    SchemaMismatch { id: String, reason: String },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("dataset has {size} samples, need at least {need}")]
    DatasetTooSmall { size: usize, need: usize },
    #[error("split fraction {0} is outside (0, 1)")]
    InvalidFraction(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Field layout and label vocabulary of a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSchema {
    pub name: String,
    pub field_names: Vec<String>,
    pub labels: Vec<String>,
}

impl TaskSchema {
    pub fn new(
        name: impl Into<String>,
        field_names: impl IntoIterator<Item = impl Into<String>>,
        labels: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self, CorpusError> {
        let schema = Self {
            name: name.into(),
            field_names: field_names.into_iter().map(Into::into).collect(),
            labels: labels.into_iter().map(Into::into).collect(),
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Three-way natural language inference over premise/hypothesis pairs.
    pub fn nli() -> Self {
        Self::new(
            "nli",
            ["premise", "hypothesis"],
            ["entailment", "neutral", "contradiction"],
        )
        .expect("static schema is valid")
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.field_names.is_empty() {
            return Err(CorpusError::InvalidSchema("no field names".into()));
        }
        if self.labels.is_empty() {
            return Err(CorpusError::InvalidSchema("no labels".into()));
        }
        if has_duplicates(&self.field_names) {
            return Err(CorpusError::InvalidSchema("repeated field name".into()));
        }
        if has_duplicates(&self.labels) {
            return Err(CorpusError::InvalidSchema("repeated label".into()));
        }
        Ok(())
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Checks a sample's fields and label against this schema.
    pub fn check(&self, sample: &Sample) -> Result<(), CorpusError> {
        if sample.id.is_empty() {
            return Err(CorpusError::SchemaMismatch {
                id: String::new(),
                reason: "empty id".into(),
            });
        }
        for name in &self.field_names {
            if !sample.fields.contains_key(name) {
                return Err(CorpusError::SchemaMismatch {
                    id: sample.id.clone(),
                    reason: format!("missing field {name:?}"),
                });
            }
        }
        if let Some(extra) = sample.fields.keys().find(|k| !self.field_names.iter().any(|n| n == *k)) {
            return Err(CorpusError::SchemaMismatch {
                id: sample.id.clone(),
                reason: format!("unexpected field {extra:?}"),
            });
        }
        if self.label_index(&sample.label).is_none() {
            return Err(CorpusError::UnknownLabel {
                id: sample.id.clone(),
                label: sample.label.clone(),
            });
        }
        Ok(())
    }
}

fn has_duplicates(items: &[String]) -> bool {
    let mut seen = HashSet::new();
    items.iter().any(|item| !seen.insert(item))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub fields: BTreeMap<String, String>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        fields: impl IntoIterator<Item = (impl Into<String>, impl Into<String>)>,
        label: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            fields: fields.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
            label: label.into(),
            split: None,
        }
    }

    pub fn with_split(mut self, split: impl Into<String>) -> Self {
        self.split = Some(split.into());
        self
    }

    /// Field texts in schema order.
    pub fn texts<'a>(&'a self, schema: &'a TaskSchema) -> impl Iterator<Item = &'a str> + 'a {
        schema
            .field_names
            .iter()
            .map(move |name| self.fields.get(name).map_or("", String::as_str))
    }
}

/// An ordered, id-unique collection of samples sharing one schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: TaskSchema,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn empty(schema: TaskSchema) -> Self {
        Self {
            schema,
            samples: Vec::new(),
        }
    }

    /// Builds a dataset, enforcing schema conformance and id uniqueness.
    pub fn new(schema: TaskSchema, samples: Vec<Sample>) -> Result<Self, CorpusError> {
        schema.validate()?;
        let mut seen = HashSet::with_capacity(samples.len());
        for sample in &samples {
            schema.check(sample)?;
            if !seen.insert(sample.id.as_str()) {
                return Err(CorpusError::DuplicateId(sample.id.clone()));
            }
        }
        Ok(Self { schema, samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.id.as_str())
    }

    /// Appends a sample, enforcing the same invariants as [`Dataset::new`].
    pub fn push(&mut self, sample: Sample) -> Result<(), CorpusError> {
        self.schema.check(&sample)?;
        if self.get(&sample.id).is_some() {
            return Err(CorpusError::DuplicateId(sample.id));
        }
        self.samples.push(sample);
        Ok(())
    }

    /// Keeps the samples for which `keep` returns true, preserving order.
    pub fn filtered(&self, mut keep: impl FnMut(&Sample) -> bool) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }

    /// Samples at the given positions, in the given order.
    pub fn select(&self, positions: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            samples: positions.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn without(&self, id: &str) -> Dataset {
        self.filtered(|s| s.id != id)
    }

    pub fn label_indices(&self) -> Vec<usize> {
        self.samples
            .iter()
            .map(|s| self.schema.label_index(&s.label).expect("validated label"))
            .collect()
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    fields: BTreeMap<String, String>,
    label: String,
    #[serde(default)]
    split: Option<String>,
}

/// Reads a JSONL dataset, validating every record against `schema`.
///
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn load_dataset(path: impl AsRef<Path>, schema: TaskSchema) -> Result<Dataset, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    read_dataset(reader, schema)
}

pub fn read_dataset(reader: impl BufRead, schema: TaskSchema) -> Result<Dataset, CorpusError> {
    schema.validate()?;
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        let sample = Sample {
            id: raw.id,
            fields: raw.fields,
            label: raw.label,
            split: raw.split,
        };
        match schema.check(&sample) {
            Ok(()) => {}
            Err(CorpusError::SchemaMismatch { reason, .. }) => {
                return Err(CorpusError::MalformedRecord { line: line_no, reason })
            }
            Err(e) => return Err(e),
        }
        if !seen.insert(sample.id.clone()) {
            return Err(CorpusError::DuplicateId(sample.id));
        }
        samples.push(sample);
    }
    Ok(Dataset { schema, samples })
}

/// Loads a dataset whose schema is inferred from the records: field names from
/// the first record (sorted), labels in order of first appearance.
pub fn load_dataset_inferred(path: impl AsRef<Path>) -> Result<Dataset, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    let schema = infer_schema(&text)?;
    read_dataset(text.as_bytes(), schema)
}

fn infer_schema(text: &str) -> Result<TaskSchema, CorpusError> {
    let mut fields: Option<Vec<String>> = None;
    let mut labels: Vec<String> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        if fields.is_none() {
            fields = Some(raw.fields.keys().cloned().collect());
        }
        if !labels.contains(&raw.label) {
            labels.push(raw.label);
        }
    }
    let fields = fields.ok_or(CorpusError::DatasetTooSmall { size: 0, need: 1 })?;
    TaskSchema::new("inferred", fields, labels)
}

pub fn write_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_records(d, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_records(d: &Dataset, out: &mut impl Write) -> Result<(), CorpusError> {
    for sample in &d.samples {
        serde_json::to_writer(&mut *out, sample).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Seeded partition of `d` into parts of size `floor(fraction * |d|)` and the
/// remainder. Each part keeps the original sample order.
pub fn split_dataset(d: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), CorpusError> {
    if d.len() < 2 {
        return Err(CorpusError::DatasetTooSmall { size: d.len(), need: 2 });
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(fraction));
    }
    let size_a = (fraction * d.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_a = vec![false; d.len()];
    for &i in &order[..size_a] {
        in_a[i] = true;
    }
    let mut a = Vec::with_capacity(size_a);
    let mut b = Vec::with_capacity(d.len() - size_a);
    for (i, sample) in d.samples.iter().enumerate() {
        if in_a[i] {
            a.push(sample.clone());
        } else {
            b.push(sample.clone());
        }
    }
    Ok((
        Dataset {
            schema: d.schema.clone(),
            samples: a,
        },
        Dataset {
            schema: d.schema.clone(),
            samples: b,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nli_line(id: &str, label: &str) -> String {
        format!(r#"{{"id":"{id}","fields":{{"premise":"p {id}","hypothesis":"h {id}"}},"label":"{label}"}}"#)
    }

    fn toy(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                Sample::new(
                    format!("s{i}"),
                    [("premise", format!("p{i}")), ("hypothesis", format!("h{i}"))],
                    "neutral",
                )
            })
            .collect();
        Dataset::new(TaskSchema::nli(), samples).unwrap()
    }

    #[test]
    fn loads_in_file_order() {
        let text = [
            nli_line("a", "entailment"),
            nli_line("b", "neutral"),
            nli_line("c", "contradiction"),
        ]
        .join("\n");
        let d = read_dataset(text.as_bytes(), TaskSchema::nli()).unwrap();
        assert_eq!(d.ids().collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn missing_label_reports_line() {
        let text = format!(
            "{}\n{}\n",
            nli_line("a", "neutral"),
            r#"{"id":"b","fields":{"premise":"x","hypothesis":"y"}}"#
        );
        let err = read_dataset(text.as_bytes(), TaskSchema::nli()).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedRecord { line: 2, .. }), "{err}");
    }

    #[test]
    fn missing_field_reports_line() {
        let text = r#"{"id":"b","fields":{"premise":"x"},"label":"neutral"}"#;
        let err = read_dataset(text.as_bytes(), TaskSchema::nli()).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedRecord { line: 1, .. }));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = format!("{}\n{}", nli_line("s1", "neutral"), nli_line("s1", "entailment"));
        let err = read_dataset(text.as_bytes(), TaskSchema::nli()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId(id) if id == "s1"));
    }

    #[test]
    fn unknown_label_rejected() {
        let err = read_dataset(nli_line("s1", "maybe").as_bytes(), TaskSchema::nli()).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownLabel { ref id, ref label } if id == "s1" && label == "maybe"));
    }

    #[test]
    fn schema_invariants() {
        assert!(TaskSchema::new("x", Vec::<String>::new(), ["a"]).is_err());
        assert!(TaskSchema::new("x", ["f"], Vec::<String>::new()).is_err());
        assert!(TaskSchema::new("x", ["f", "f"], ["a"]).is_err());
        assert!(TaskSchema::new("x", ["f"], ["a", "a"]).is_err());
    }

    #[test]
    fn split_sizes_use_floor() {
        let (a, b) = split_dataset(&toy(10), 0.9, 3).unwrap();
        assert_eq!((a.len(), b.len()), (9, 1));
        let (a, b) = split_dataset(&toy(10), 0.15, 3).unwrap();
        assert_eq!((a.len(), b.len()), (1, 9));
    }

    #[test]
    fn split_is_deterministic_partition() {
        let d = toy(10);
        let first = split_dataset(&d, 0.3, 11).unwrap();
        let second = split_dataset(&d, 0.3, 11).unwrap();
        assert_eq!(first, second);
        let mut ids: Vec<&str> = first.0.ids().chain(first.1.ids()).collect();
        ids.sort_unstable();
        let mut all: Vec<&str> = d.ids().collect();
        all.sort_unstable();
        assert_eq!(ids, all);
    }

    #[test]
    fn split_varies_with_seed() {
        let d = toy(10);
        let parts: HashSet<Vec<String>> = (0..10)
            .map(|seed| {
                let (a, _) = split_dataset(&d, 0.5, seed).unwrap();
                a.ids().map(str::to_owned).collect()
            })
            .collect();
        assert!(parts.len() >= 2);
    }

    #[test]
    fn split_preconditions() {
        assert!(matches!(
            split_dataset(&toy(1), 0.5, 0),
            Err(CorpusError::DatasetTooSmall { .. })
        ));
        assert!(matches!(
            split_dataset(&toy(4), 1.0, 0),
            Err(CorpusError::InvalidFraction(_))
        ));
    }

    #[test]
    fn round_trip_including_empty_and_unicode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");

        let empty = Dataset::empty(TaskSchema::nli());
        write_dataset(&empty, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"");
        assert_eq!(load_dataset(&path, TaskSchema::nli()).unwrap(), empty);

        let d = Dataset::new(
            TaskSchema::nli(),
            vec![
                Sample::new(
                    "u1",
                    [("premise", "Café crème für Zoë"), ("hypothesis", "日本語 \"quoted\"")],
                    "neutral",
                )
                .with_split("train"),
                Sample::new(
                    "u2",
                    [("premise", "emoji 🙂"), ("hypothesis", "tab\there")],
                    "entailment",
                ),
            ],
        )
        .unwrap();
        write_dataset(&d, &path).unwrap();
        let back = load_dataset(&path, TaskSchema::nli()).unwrap();
        assert_eq!(back, d);
        assert_eq!(
            back.samples()[0].fields["hypothesis"].as_bytes(),
            "日本語 \"quoted\"".as_bytes()
        );
    }

    #[test]
    fn inferred_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(
            &path,
            format!("{}\n{}\n", nli_line("a", "neutral"), nli_line("b", "entailment")),
        )
        .unwrap();
        let d = load_dataset_inferred(&path).unwrap();
        assert_eq!(d.schema.field_names, ["hypothesis", "premise"]);
        assert_eq!(d.schema.labels, ["neutral", "entailment"]);
    }
}
