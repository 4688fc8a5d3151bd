//! Entity embedding tables: file IO, a clustered synthetic generator, and
//! cosine similarity.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kg::EntityId;
use crate::matrix_io::{self, EMBEDDING_MAGIC};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("embedding dimension must be positive".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} values is not a multiple of dim {dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("row {}, column {}", i / dim, i % dim)));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Shape(format!("row {i} has length {}", rows[i].len())));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, e: EntityId) -> Option<&[f64]> {
        let start = e.index() * self.dim;
        self.data.get(start..start + self.dim)
    }

    pub fn get(&self, e: EntityId) -> Result<&[f64]> {
        self.row(e).ok_or(Error::MissingEntity(e.0))
    }

    /// Row-major `len x dim` values.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn save<W: Write>(&self, out: W) -> Result<()> {
        matrix_io::write_matrix(out, EMBEDDING_MAGIC, self.len(), self.dim, &self.data)
    }

    pub fn save_tsv<W: Write>(&self, out: W) -> Result<()> {
        matrix_io::write_tsv(out, self.dim, &self.data)
    }
}

/// Loads a binary embedding matrix. `expected_rows`, when given, is the
/// vocabulary size the table must cover.
pub fn load_embeddings<R: Read>(input: R, expected_rows: Option<usize>) -> Result<EmbeddingTable> {
    let (rows, cols, data) = matrix_io::read_matrix(input, EMBEDDING_MAGIC)?;
    check_rows(rows, expected_rows)?;
    EmbeddingTable::new(cols, data)
}

pub fn load_embeddings_tsv<R: BufRead>(
    input: R,
    expected_rows: Option<usize>,
) -> Result<EmbeddingTable> {
    let (rows, cols, data) = matrix_io::read_tsv(input)?;
    check_rows(rows, expected_rows)?;
    EmbeddingTable::new(cols, data)
}

fn check_rows(rows: usize, expected: Option<usize>) -> Result<()> {
    match expected {
        Some(n) if n != rows => Err(Error::Shape(format!(
            "embedding file has {rows} rows, vocabulary has {n}"
        ))),
        _ => Ok(()),
    }
}

/// Named tables for one run, e.g. the table used to generate preference
/// data and the one fed to the reranker.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    tables: BTreeMap<String, EmbeddingTable>,
}

impl EmbeddingStore {
    pub fn insert(&mut self, name: impl Into<String>, table: EmbeddingTable) {
        self.tables.insert(name.into(), table);
    }

    pub fn get(&self, name: &str) -> Result<&EmbeddingTable> {
        self.tables.get(name).ok_or_else(|| Error::Vocabulary {
            kind: "embedding table",
            label: name.to_owned(),
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthEmbeddingConfig {
    pub n_clusters: usize,
    pub dim: usize,
    pub spread: f64,
    pub seed: u64,
}

/// Generates unit-norm embeddings around `n_clusters` centroids.
///
/// Centroids are orthonormal whenever `n_clusters <= dim`. Entities are
/// dealt to clusters round-robin after a seeded shuffle, so cluster sizes
/// differ by at most one. Values are rounded through f32 so that a save/load
/// cycle is exact.
pub fn synthesize_embeddings(
    num_entities: usize,
    cfg: &SynthEmbeddingConfig,
) -> Result<(EmbeddingTable, Vec<usize>)> {
    if cfg.n_clusters < 2 || cfg.dim < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 clusters and 2 dimensions".into(),
        ));
    }
    if !(cfg.spread >= 0.0) {
        return Err(Error::InvalidArgument("spread must be non-negative".into()));
    }
    if cfg.n_clusters > num_entities {
        return Err(Error::InvalidArgument(format!(
            "{} clusters for {num_entities} entities",
            cfg.n_clusters
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centroids = random_centroids(cfg.n_clusters, cfg.dim, &mut rng);

    let mut order: Vec<usize> = (0..num_entities).collect();
    order.shuffle(&mut rng);
    let mut assignment = vec![0usize; num_entities];
    for (slot, &e) in order.iter().enumerate() {
        assignment[e] = slot % cfg.n_clusters;
    }

    let mut data = Vec::with_capacity(num_entities * cfg.dim);
    for &c in &assignment {
        let mut v: Vec<f64> = centroids[c]
            .iter()
            .map(|&x| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x + cfg.spread * z
            })
            .collect();
        normalize(&mut v);
        data.extend(v.into_iter().map(|x| x as f32 as f64));
    }
    Ok((EmbeddingTable::new(cfg.dim, data)?, assignment))
}

fn random_centroids(k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    while out.len() < k {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
        if k <= dim {
            for u in &out {
                let p = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
            }
        }
        if norm(&v) > 1e-6 {
            normalize(&mut v);
            out.push(v);
        }
    }
    out
}

#[inline]
pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

#[inline]
pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// `u.v / (|u| |v|)`, clamped to [-1, 1] against rounding.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "cosine of lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    cosine_from_parts(dot(u, v), dot(u, u), dot(v, v))
}

/// Cosine from a dot product and the two squared norms. Identical vectors
/// give exactly 1.
#[inline]
pub fn cosine_from_parts(uv: f64, uu: f64, vv: f64) -> Result<f64> {
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((uv / (uu * vv).sqrt()).clamp(-1.0, 1.0))
}
