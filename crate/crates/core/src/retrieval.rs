//! Exact cosine top-K search over cached how-to video features.
//!
//! The index is a flat list scanned in full on every query. Ranking is by
//! cosine descending with `video_id` ascending as tie-break, which makes
//! results a total, deterministic order.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec;
use crate::gateway::{AdapterError, TextEmbedder};

pub const DEFAULT_K: usize = 3;

/// Unit-norm tolerance for stored vectors.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("vectors have different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("cosine of a zero vector is undefined")]
    ZeroVector,
    #[error("manifest row {row}: feature has dimension {found}, index dimension is {expected}")]
    DimMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("manifest row {row}: duplicate video_id {video_id:?}")]
    DuplicateId { row: usize, video_id: String },
    #[error("manifest row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error("manifest io on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("k must be at least 1")]
    BadK,
    #[error("index is empty")]
    EmptyIndex,
    #[error("text encoder: {0}")]
    EncoderUnreachable(#[from] AdapterError),
}

impl RetrievalError {
    pub fn code(&self) -> &'static str {
        match self {
            RetrievalError::DimensionMismatch(..) | RetrievalError::DimMismatch { .. } => "dim_mismatch",
            RetrievalError::ZeroVector => "zero_vector",
            RetrievalError::DuplicateId { .. } => "duplicate_id",
            RetrievalError::BadRow { .. } => "bad_row",
            RetrievalError::Io { .. } => "io_error",
            RetrievalError::BadK => "bad_k",
            RetrievalError::EmptyIndex => "empty_index",
            RetrievalError::EncoderUnreachable(e) => e.code(),
        }
    }
}

pub(crate) fn sq_norm(v: &[f32]) -> f64 {
    v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum()
}

pub(crate) fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum()
}

/// `dot(u, v) / (|u| |v|)`, clamped into `[-1, 1]`.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64, RetrievalError> {
    if u.len() != v.len() {
        return Err(RetrievalError::DimensionMismatch(u.len(), v.len()));
    }
    let (nu, nv) = (sq_norm(u).sqrt(), sq_norm(v).sqrt());
    if nu == 0.0 || nv == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// L2-normalises in place. Returns the original norm.
pub fn normalize_in_place(v: &mut [f32]) -> f64 {
    let n = sq_norm(v).sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x = (f64::from(*x) / n) as f32;
        }
    }
    n
}

pub fn is_unit(v: &[f32]) -> bool {
    (sq_norm(v).sqrt() - 1.0).abs() <= UNIT_NORM_TOL
}

/// Keeps the best `k` items under `better`, which must be a total order.
pub(crate) struct TopK<T> {
    k: usize,
    items: Vec<T>,
}

impl<T> TopK<T> {
    pub(crate) fn new(k: usize) -> Self {
        TopK {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    /// `cmp(a, b) == Less` means `a` ranks before `b`.
    pub(crate) fn offer(&mut self, item: T, cmp: impl Fn(&T, &T) -> Ordering) {
        if self.k == 0 {
            return;
        }
        if self.items.len() == self.k {
            let last = self.items.last().expect("k > 0");
            if cmp(&item, last) != Ordering::Less {
                return;
            }
            self.items.pop();
        }
        let pos = self
            .items
            .partition_point(|probe| cmp(probe, &item) == Ordering::Less);
        self.items.insert(pos, item);
    }

    pub(crate) fn into_sorted(self) -> Vec<T> {
        self.items
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub video_id: String,
    pub title: String,
    pub source_uri: String,
    pub duration_s: f64,
    #[serde(skip)]
    pub feature: Vec<f32>,
}

/// One manifest line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRow {
    pub video_id: String,
    pub title: String,
    pub source_uri: String,
    pub duration_s: f64,
    /// base64 of little-endian f32
    pub feature: String,
}

impl ManifestRow {
    pub fn new(video_id: &str, title: &str, source_uri: &str, duration_s: f64, feature: &[f32]) -> Self {
        ManifestRow {
            video_id: video_id.into(),
            title: title.into(),
            source_uri: source_uri.into(),
            duration_s,
            feature: codec::encode_f32_le(feature),
        }
    }
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<(), RetrievalError> {
    let io = |source| RetrievalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for row in rows {
        let line = serde_json::to_string(row).expect("manifest rows serialize");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalHit {
    pub video_id: String,
    pub title: String,
    pub source_uri: String,
    pub duration_s: f64,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    records: Vec<RetrievalRecord>,
    norms: Vec<f64>,
    dim: usize,
    built_at: SystemTime,
    normalized_on_load: usize,
}

impl RetrievalIndex {
    pub fn empty(dim: usize) -> Self {
        RetrievalIndex {
            records: Vec::new(),
            norms: Vec::new(),
            dim,
            built_at: SystemTime::now(),
            normalized_on_load: 0,
        }
    }

    /// Builds from in-memory records, normalising features that are not unit-norm.
    pub fn from_records(dim: usize, records: Vec<RetrievalRecord>) -> Result<Self, RetrievalError> {
        let mut index = RetrievalIndex::empty(dim);
        let mut seen = HashSet::new();
        for (row, mut rec) in records.into_iter().enumerate() {
            if rec.feature.len() != dim {
                return Err(RetrievalError::DimMismatch {
                    row,
                    expected: dim,
                    found: rec.feature.len(),
                });
            }
            if !seen.insert(rec.video_id.clone()) {
                return Err(RetrievalError::DuplicateId {
                    row,
                    video_id: rec.video_id,
                });
            }
            if !is_unit(&rec.feature) {
                if normalize_in_place(&mut rec.feature) == 0.0 {
                    return Err(RetrievalError::BadRow {
                        row,
                        message: "zero feature vector".into(),
                    });
                }
                index.normalized_on_load += 1;
            }
            index.norms.push(sq_norm(&rec.feature).sqrt());
            index.records.push(rec);
        }
        Ok(index)
    }

    /// Loads a JSON Lines manifest. Row numbers in errors are 0-based line
    /// indices. With `expected_dim = None` the first row fixes the dimension.
    pub fn build(manifest: &Path, expected_dim: Option<usize>) -> Result<Self, RetrievalError> {
        let io = |source| RetrievalError::Io {
            path: manifest.to_path_buf(),
            source,
        };
        let reader = BufReader::new(std::fs::File::open(manifest).map_err(io)?);
        let mut records = Vec::new();
        let mut dim = expected_dim;
        for (row, line) in reader.lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ManifestRow = serde_json::from_str(&line).map_err(|e| RetrievalError::BadRow {
                row,
                message: e.to_string(),
            })?;
            let feature = codec::decode_f32_le(&parsed.feature)
                .map_err(|message| RetrievalError::BadRow { row, message })?;
            let expected = *dim.get_or_insert(feature.len());
            if feature.len() != expected {
                return Err(RetrievalError::DimMismatch {
                    row,
                    expected,
                    found: feature.len(),
                });
            }
            records.push((
                row,
                RetrievalRecord {
                    video_id: parsed.video_id,
                    title: parsed.title,
                    source_uri: parsed.source_uri,
                    duration_s: parsed.duration_s,
                    feature,
                },
            ));
        }
        let dim = dim.unwrap_or(0);
        // Re-map errors from positional to manifest line numbers.
        let rows: Vec<usize> = records.iter().map(|(r, _)| *r).collect();
        RetrievalIndex::from_records(dim, records.into_iter().map(|(_, r)| r).collect()).map_err(|e| match e {
            RetrievalError::DuplicateId { row, video_id } => RetrievalError::DuplicateId {
                row: rows[row],
                video_id,
            },
            RetrievalError::BadRow { row, message } => RetrievalError::BadRow {
                row: rows[row],
                message,
            },
            other => other,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn built_at(&self) -> SystemTime {
        self.built_at
    }

    /// How many manifest features were not unit-norm and got normalised.
    pub fn normalized_on_load(&self) -> usize {
        self.normalized_on_load
    }

    pub fn records(&self) -> &[RetrievalRecord] {
        &self.records
    }

    /// Exact top-`k` by cosine against a query vector.
    pub fn search_vector(&self, query: &[f32], k: usize) -> Result<Vec<RetrievalHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::BadK);
        }
        if self.records.is_empty() {
            return Ok(Vec::new());
        }
        if query.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch(query.len(), self.dim));
        }
        let qn = sq_norm(query).sqrt();
        if qn == 0.0 {
            return Err(RetrievalError::ZeroVector);
        }
        let mut top = TopK::new(k);
        for (i, rec) in self.records.iter().enumerate() {
            let score = (dot(query, &rec.feature) / (qn * self.norms[i])).clamp(-1.0, 1.0);
            top.offer((score, i), |a, b| {
                b.0.total_cmp(&a.0)
                    .then_with(|| self.records[a.1].video_id.cmp(&self.records[b.1].video_id))
            });
        }
        Ok(top
            .into_sorted()
            .into_iter()
            .map(|(score, i)| {
                let r = &self.records[i];
                RetrievalHit {
                    video_id: r.video_id.clone(),
                    title: r.title.clone(),
                    source_uri: r.source_uri.clone(),
                    duration_s: r.duration_s,
                    score,
                }
            })
            .collect())
    }

    /// Encodes `query_text` and runs [`search_vector`](Self::search_vector).
    pub fn search(
        &self,
        query_text: &str,
        encoder: &dyn TextEmbedder,
        k: usize,
    ) -> Result<Vec<RetrievalHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::BadK);
        }
        if self.records.is_empty() {
            return Ok(Vec::new());
        }
        let q = encoder.embed(query_text)?;
        self.search_vector(&q, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, feature: Vec<f32>) -> RetrievalRecord {
        RetrievalRecord {
            video_id: id.into(),
            title: id.into(),
            source_uri: format!("howto://{id}"),
            duration_s: 30.0,
            feature,
        }
    }

    #[test]
    fn cosine_examples() {
        let u = [1.0f32, 2.0, 3.0];
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // 32 / (sqrt(14) * sqrt(77))
        let expected = 32.0 / (14f64.sqrt() * 77f64.sqrt());
        let got = cosine(&u, &[4.0, 5.0, 6.0]).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.974_631_846).abs() < 1e-6);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(RetrievalError::ZeroVector)));
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(RetrievalError::DimensionMismatch(1, 2))));
    }

    #[test]
    fn ties_break_by_video_id() {
        let idx = RetrievalIndex::from_records(
            2,
            vec![rec("c", vec![1.0, 0.0]), rec("a", vec![1.0, 0.0]), rec("b", vec![0.0, 1.0])],
        )
        .unwrap();
        let hits = idx.search_vector(&[1.0, 0.0], 3).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.video_id.as_str()).collect();
        assert_eq!(ids, ["a", "c", "b"]);
    }

    #[test]
    fn returns_min_k_len() {
        let idx = RetrievalIndex::from_records(2, vec![rec("a", vec![1.0, 0.0])]).unwrap();
        assert_eq!(idx.search_vector(&[0.0, 1.0], 3).unwrap().len(), 1);
        assert!(matches!(idx.search_vector(&[0.0, 1.0], 0), Err(RetrievalError::BadK)));
        assert!(RetrievalIndex::empty(2).search_vector(&[1.0, 0.0], 3).unwrap().is_empty());
    }

    #[test]
    fn non_unit_features_are_normalised_and_counted() {
        let idx = RetrievalIndex::from_records(2, vec![rec("a", vec![3.0, 4.0]), rec("b", vec![0.6, 0.8])]).unwrap();
        assert_eq!(idx.normalized_on_load(), 1);
        assert!(idx.records().iter().all(|r| is_unit(&r.feature)));
    }

    #[test]
    fn duplicate_and_dim_errors() {
        let dup = RetrievalIndex::from_records(1, vec![rec("a", vec![1.0]), rec("a", vec![1.0])]);
        assert!(matches!(dup, Err(RetrievalError::DuplicateId { row: 1, .. })));
        let dim = RetrievalIndex::from_records(2, vec![rec("a", vec![1.0, 0.0]), rec("b", vec![1.0])]);
        assert!(matches!(dim, Err(RetrievalError::DimMismatch { row: 1, expected: 2, found: 1 })));
    }

    #[test]
    fn topk_keeps_best() {
        let mut t = TopK::new(2);
        for x in [5, 1, 9, 3, 7] {
            t.offer(x, |a: &i32, b: &i32| b.cmp(a));
        }
        assert_eq!(t.into_sorted(), vec![9, 7]);
    }
}
