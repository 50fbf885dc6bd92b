//! Per-sample feature vectors and the `EMB1` on-disk format.
//!
//! Layout of the binary file, all integers little-endian:
//!
//! | offset | size | content                 |
//! |--------|------|-------------------------|
//! | 0      | 4    | magic `EMB1`            |
//! | 4      | 4    | u32 version (= 1)       |
//! | 8      | 8    | u64 row count           |
//! | 16     | 4    | u32 dim                 |
//! | 20     | ...  | rows × dim f32, row-major |
//!
//! Sample ids live only in the JSON manifest written next to the binary as
//! `<path>.manifest.json`.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum EmbError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    VersionMismatch(u32),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("file truncated: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("unknown sample id {0:?}")]
    UnknownId(String),
    #[error("k = {k} outside 1..{rows}")]
    KOutOfRange { k: usize, rows: usize },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense row-major `f32` vectors aligned to sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
    order: Vec<String>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, data: Vec<f32>, order: Vec<String>) -> Result<Self, EmbError> {
        if dim == 0 {
            return Err(EmbError::InvariantViolation("dim must be at least 1".into()));
        }
        if data.len() != dim * order.len() {
            return Err(EmbError::InvariantViolation(format!(
                "{} values for {} rows of dim {dim}",
                data.len(),
                order.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(EmbError::InvariantViolation(format!(
                "non-finite value in row {}",
                pos / dim
            )));
        }
        let mut index = HashMap::with_capacity(order.len());
        for (i, id) in order.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(EmbError::InvariantViolation(format!("duplicate id {id:?}")));
            }
        }
        Ok(Self {
            dim,
            data,
            order,
            index,
        })
    }

    pub fn from_rows(order: Vec<String>, rows: &[Vec<f32>]) -> Result<Self, EmbError> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(EmbError::DimMismatch(dim, bad.len()));
        }
        Self::new(dim, rows.concat(), order)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.order.len()
    }

    pub fn order(&self) -> &[String] {
        &self.order
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|i| self.row(i))
    }
}

/// Sidecar metadata for an `EMB1` file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbManifest {
    pub order: Vec<String>,
    /// Ids used to fine-tune the encoder; they never re-enter a pruned set.
    pub burned: Vec<String>,
    pub source: String,
    pub dim: usize,
}

impl EmbManifest {
    pub fn for_matrix(m: &EmbeddingMatrix, burned: Vec<String>, source: impl Into<String>) -> Self {
        Self {
            order: m.order().to_vec(),
            burned,
            source: source.into(),
            dim: m.dim(),
        }
    }

    fn validate_against(&self, m: &EmbeddingMatrix) -> Result<(), EmbError> {
        if self.dim != m.dim() {
            return Err(EmbError::DimMismatch(self.dim, m.dim()));
        }
        if self.order != m.order() {
            return Err(EmbError::InvariantViolation(
                "manifest order differs from matrix order".into(),
            ));
        }
        let order: HashSet<&str> = self.order.iter().map(String::as_str).collect();
        if let Some(id) = self.burned.iter().find(|id| order.contains(id.as_str())) {
            return Err(EmbError::InvariantViolation(format!(
                "burned id {id:?} also has an embedding row"
            )));
        }
        Ok(())
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub fn encode(m: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.dim as u32).to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses the binary part, returning `(dim, row count, values)`.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>), EmbError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(EmbError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(EmbError::TruncatedFile {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(EmbError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(EmbError::VersionMismatch(version));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| EmbError::InvariantViolation("header sizes overflow".into()))?;
    if bytes.len() < expected {
        return Err(EmbError::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(EmbError::InvariantViolation(format!(
            "{} trailing bytes after the last row",
            bytes.len() - expected
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dim, rows, data))
}

/// Writes `<path>` (binary) and `<path>.manifest.json`.
pub fn write_emb(m: &EmbeddingMatrix, manifest: &EmbManifest, path: impl AsRef<Path>) -> Result<(), EmbError> {
    let path = path.as_ref();
    manifest.validate_against(m)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&encode(m))?;
    out.flush()?;
    let mut mf = BufWriter::new(File::create(manifest_path(path))?);
    serde_json::to_writer_pretty(&mut mf, manifest)?;
    mf.write_all(b"\n")?;
    mf.flush()?;
    Ok(())
}

pub fn read_emb(path: impl AsRef<Path>) -> Result<(EmbeddingMatrix, EmbManifest), EmbError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let (dim, rows, data) = decode(&bytes)?;
    let manifest: EmbManifest = serde_json::from_slice(&std::fs::read(manifest_path(path))?)?;
    if manifest.dim != dim {
        return Err(EmbError::DimMismatch(manifest.dim, dim));
    }
    if manifest.order.len() != rows {
        return Err(EmbError::InvariantViolation(format!(
            "manifest lists {} ids for {rows} rows",
            manifest.order.len()
        )));
    }
    let m = EmbeddingMatrix::new(dim, data, manifest.order.clone())?;
    manifest.validate_against(&m)?;
    Ok((m, manifest))
}

/// Cosine similarity; zero vectors have similarity 0 with everything.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64, EmbError> {
    if u.len() != v.len() {
        return Err(EmbError::DimMismatch(u.len(), v.len()));
    }
    Ok(cosine_unchecked(u, v))
}

pub(crate) fn cosine_unchecked(u: &[f32], v: &[f32]) -> f64 {
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0)
}

/// Exact top-`k` scan by cosine, excluding the query row. Ties go to the
/// lexicographically smaller id.
pub fn nearest(m: &EmbeddingMatrix, id: &str, k: usize) -> Result<Vec<(String, f64)>, EmbError> {
    let q = m.position(id).ok_or_else(|| EmbError::UnknownId(id.to_owned()))?;
    if k < 1 || k >= m.rows() {
        return Err(EmbError::KOutOfRange { k, rows: m.rows() });
    }
    let query = m.row(q);
    let mut scored: Vec<(usize, f64)> = (0..m.rows())
        .into_par_iter()
        .filter(|&i| i != q)
        .map(|i| (i, cosine_unchecked(query, m.row(i))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| m.order[a.0].cmp(&m.order[b.0])));
    scored.truncate(k);
    Ok(scored.into_iter().map(|(i, s)| (m.order[i].clone(), s)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    fn fixture() -> EmbeddingMatrix {
        EmbeddingMatrix::new(4, (0..12).map(|v| v as f32 * 0.5 - 2.0).collect(), ids(3)).unwrap()
    }

    #[test]
    fn round_trip_with_empty_burned() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.emb");
        let m = fixture();
        let manifest = EmbManifest::for_matrix(&m, vec![], "test");
        write_emb(&m, &manifest, &path).unwrap();
        let text = std::fs::read_to_string(manifest_path(&path)).unwrap();
        assert!(text.contains("\"burned\": []"));
        let (back, back_manifest) = read_emb(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back_manifest, manifest);
    }

    #[test]
    fn nan_rejected() {
        let err = EmbeddingMatrix::new(2, vec![0.0, f32::NAN], ids(1)).unwrap_err();
        assert!(matches!(err, EmbError::InvariantViolation(_)));
    }

    #[test]
    fn burned_overlap_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture();
        let manifest = EmbManifest::for_matrix(&m, vec!["s1".into()], "t");
        assert!(matches!(
            write_emb(&m, &manifest, dir.path().join("x.emb")),
            Err(EmbError::InvariantViolation(_))
        ));
    }

    #[test]
    fn header_errors() {
        let m = fixture();
        let good = encode(&m);

        let mut bad_magic = good.clone();
        bad_magic[..4].copy_from_slice(b"EMB2");
        assert!(matches!(decode(&bad_magic), Err(EmbError::BadMagic(_))));

        let mut bad_version = good.clone();
        bad_version[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(decode(&bad_version), Err(EmbError::VersionMismatch(7))));

        assert!(matches!(
            decode(&good[..good.len() - 3]),
            Err(EmbError::TruncatedFile { .. })
        ));
        assert!(matches!(decode(&good[..10]), Err(EmbError::TruncatedFile { .. })));
    }

    #[test]
    fn manifest_dim_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.emb");
        let m = fixture();
        write_emb(&m, &EmbManifest::for_matrix(&m, vec![], "t"), &path).unwrap();
        let mut manifest: EmbManifest = serde_json::from_slice(&std::fs::read(manifest_path(&path)).unwrap()).unwrap();
        manifest.dim = 8;
        std::fs::write(manifest_path(&path), serde_json::to_vec(&manifest).unwrap()).unwrap();
        assert!(matches!(read_emb(&path), Err(EmbError::DimMismatch(8, 4))));
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(EmbError::DimMismatch(1, 2))));
    }

    #[test]
    fn nearest_examples() {
        let rows = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![-1.0, 0.2],
        ];
        let m = EmbeddingMatrix::from_rows(ids(5), &rows).unwrap();
        let top = nearest(&m, "s0", 1).unwrap();
        assert_eq!(top, vec![("s2".to_string(), 1.0)]);

        let all = nearest(&m, "s0", 4).unwrap();
        // Brute-force table.
        let mut expected: Vec<(String, f64)> = (1..5)
            .map(|i| (format!("s{i}"), cosine(&rows[0], &rows[i]).unwrap()))
            .collect();
        expected.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        assert_eq!(all, expected);

        assert!(matches!(nearest(&m, "s0", 5), Err(EmbError::KOutOfRange { .. })));
        assert!(matches!(nearest(&m, "s0", 0), Err(EmbError::KOutOfRange { .. })));
        assert!(matches!(nearest(&m, "nope", 1), Err(EmbError::UnknownId(_))));
    }

    #[test]
    fn nearest_breaks_ties_by_id() {
        let rows = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]];
        let m = EmbeddingMatrix::from_rows(vec!["q".into(), "b".into(), "a".into()], &rows).unwrap();
        let out: Vec<String> = nearest(&m, "q", 2).unwrap().into_iter().map(|p| p.0).collect();
        assert_eq!(out, ["a", "b"]);
    }
}
