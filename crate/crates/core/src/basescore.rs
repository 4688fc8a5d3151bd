//! Base score vectors: the upstream query-answering model's output that the
//! rerankers adjust.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::EntityId;
use crate::matrix_io::{self, SCORE_MAGIC};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub query: u64,
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn new(query: u64, scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("query {query}, entity {i}")));
        }
        Ok(Self { query, scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, e: EntityId) -> Result<f64> {
        self.scores.get(e.index()).copied().ok_or(Error::MissingEntity(e.0))
    }

    /// Rescales to [0, 1]. A constant vector maps to all zeros.
    pub fn normalize_min_max(&mut self) {
        normalize_min_max(&mut self.scores);
    }

    /// Rounds every score through f32, the on-disk precision.
    pub fn round_to_f32(&mut self) {
        self.scores.iter_mut().for_each(|s| *s = *s as f32 as f64);
    }
}

pub fn normalize_min_max(scores: &mut [f64]) {
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
    let range = hi - lo;
    for s in scores.iter_mut() {
        *s = if range > 0.0 { (*s - lo) / range } else { 0.0 };
    }
}

/// Score vectors for a set of queries over one entity vocabulary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    num_entities: usize,
    vectors: BTreeMap<u64, ScoreVector>,
}

impl ScoreTable {
    pub fn new(num_entities: usize) -> Self {
        Self {
            num_entities,
            vectors: BTreeMap::new(),
        }
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn insert(&mut self, v: ScoreVector) -> Result<()> {
        if v.len() != self.num_entities {
            return Err(Error::Shape(format!(
                "query {} has {} scores, expected {}",
                v.query,
                v.len(),
                self.num_entities
            )));
        }
        self.vectors.insert(v.query, v);
        Ok(())
    }

    pub fn get(&self, query: u64) -> Option<&ScoreVector> {
        self.vectors.get(&query)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ScoreVector> {
        self.vectors.values()
    }

    /// Writes the binary matrix (rows in ascending query id) and the sidecar
    /// listing one query id per line in row order.
    pub fn save<W: Write, S: Write>(&self, matrix: W, mut sidecar: S) -> Result<()> {
        let mut data = Vec::with_capacity(self.vectors.len() * self.num_entities);
        for v in self.vectors.values() {
            data.extend_from_slice(&v.scores);
            writeln!(sidecar, "{}", v.query)?;
        }
        sidecar.flush()?;
        matrix_io::write_matrix(matrix, SCORE_MAGIC, self.vectors.len(), self.num_entities, &data)
    }
}

/// Loads a score matrix and its query-id sidecar. With `normalize`, each
/// vector is min-max rescaled to [0, 1].
pub fn load_scores<R: Read, S: BufRead>(
    matrix: R,
    sidecar: S,
    expected_entities: Option<usize>,
    normalize: bool,
) -> Result<ScoreTable> {
    let mut ids = Vec::new();
    for (i, line) in sidecar.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        ids.push(t.parse::<u64>().map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("bad query id `{t}`: {e}"),
        })?);
    }
    let (rows, cols, data) = matrix_io::read_matrix_unchecked(matrix, SCORE_MAGIC)?;
    if rows != ids.len() {
        return Err(Error::Shape(format!(
            "score matrix has {rows} rows but sidecar lists {} queries",
            ids.len()
        )));
    }
    if let Some(n) = expected_entities {
        if n != cols {
            return Err(Error::Shape(format!(
                "score rows have length {cols}, vocabulary has {n}"
            )));
        }
    }
    let mut table = ScoreTable::new(cols);
    for (row, &q) in data.chunks(cols.max(1)).zip(&ids) {
        let mut v = ScoreVector::new(q, row.to_vec())?;
        if normalize {
            v.normalize_min_max();
        }
        table.insert(v)?;
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScoreConfig {
    pub mu_true: f64,
    pub mu_false: f64,
    pub sigma: f64,
    pub seed: u64,
}

/// Answers draw `N(mu_true, sigma^2)`, everything else `N(mu_false, sigma^2)`.
/// Raw (unnormalized) scores; `answers` must be sorted.
pub fn synthetic_scores(
    query: u64,
    num_entities: usize,
    answers: &[EntityId],
    cfg: &SyntheticScoreConfig,
) -> Result<ScoreVector> {
    if cfg.mu_true < cfg.mu_false {
        return Err(Error::InvalidArgument("mu_true must not be below mu_false".into()));
    }
    if !(cfg.sigma >= 0.0) {
        return Err(Error::InvalidArgument("sigma must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut is_answer = vec![false; num_entities];
    for a in answers {
        *is_answer
            .get_mut(a.index())
            .ok_or(Error::MissingEntity(a.0))? = true;
    }
    let scores = is_answer
        .iter()
        .map(|&ans| {
            let mu = if ans { cfg.mu_true } else { cfg.mu_false };
            mu + noise.sample(&mut rng)
        })
        .collect();
    ScoreVector::new(query, scores)
}
