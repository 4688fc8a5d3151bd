//! The common reranker interface and its three implementations.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor2;
use crate::embed::{cosine_from_parts, dot, EmbeddingTable};
use crate::error::{Error, Result};
use crate::model::{NqrParameters, PreparedNqr};
use crate::preference::Preference;

/// Maps base scores and the preferences revealed so far to adjusted scores.
/// With no preferences every reranker returns the base scores.
pub trait Reranker: Send + Sync {
    fn name(&self) -> String;

    fn rerank(&self, base: &[f64], pairs: &[Preference]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityReranker;

impl Reranker for IdentityReranker {
    fn name(&self) -> String {
        "identity".into()
    }

    fn rerank(&self, base: &[f64], _pairs: &[Preference]) -> Result<Vec<f64>> {
        Ok(base.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineConfig {
    pub alpha_p: f64,
    pub alpha_n: f64,
}

impl CosineConfig {
    pub fn new(alpha_p: f64, alpha_n: f64) -> Result<Self> {
        let ok = |a: f64| a > 0.0 && a < 1.0;
        if !ok(alpha_p) || !ok(alpha_n) {
            return Err(Error::InvalidArgument(format!(
                "cosine weights must lie in (0, 1), got ({alpha_p}, {alpha_n})"
            )));
        }
        Ok(Self { alpha_p, alpha_n })
    }
}

/// `a[e] = base[e] + alpha_p sum_{P+} sim(e_i, e) - alpha_n sum_{P-} sim(e_i, e)`
pub fn cosine_rerank(
    base: &[f64],
    pairs: &[Preference],
    table: &EmbeddingTable,
    cfg: &CosineConfig,
) -> Result<Vec<f64>> {
    let sq: Vec<f64> = (0..table.len())
        .map(|e| {
            let r = &table.as_slice()[e * table.dim()..(e + 1) * table.dim()];
            dot(r, r)
        })
        .collect();
    cosine_with_norms(base, pairs, table, &sq, cfg)
}

fn cosine_with_norms(
    base: &[f64],
    pairs: &[Preference],
    table: &EmbeddingTable,
    sq_norms: &[f64],
    cfg: &CosineConfig,
) -> Result<Vec<f64>> {
    if base.len() != table.len() {
        return Err(Error::Shape(format!(
            "base vector has {} scores, table has {} entities",
            base.len(),
            table.len()
        )));
    }
    let mut out = base.to_vec();
    let d = table.dim();
    let all = table.as_slice();
    for p in pairs {
        let u = table.get(p.entity)?;
        let uu = sq_norms[p.entity.index()];
        let w = if p.label.is_preferred() {
            cfg.alpha_p
        } else {
            -cfg.alpha_n
        };
        for (e, a) in out.iter_mut().enumerate() {
            let v = &all[e * d..(e + 1) * d];
            *a += w * cosine_from_parts(dot(u, v), uu, sq_norms[e])?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CosineReranker {
    cfg: CosineConfig,
    table: Arc<EmbeddingTable>,
    sq_norms: Vec<f64>,
}

impl CosineReranker {
    pub fn new(cfg: CosineConfig, table: Arc<EmbeddingTable>) -> Self {
        let d = table.dim();
        let sq_norms = table
            .as_slice()
            .chunks(d)
            .map(|r| dot(r, r))
            .collect();
        Self {
            cfg,
            table,
            sq_norms,
        }
    }

    pub fn config(&self) -> CosineConfig {
        self.cfg
    }
}

impl Reranker for CosineReranker {
    fn name(&self) -> String {
        format!("cosine({},{})", self.cfg.alpha_p, self.cfg.alpha_n)
    }

    fn rerank(&self, base: &[f64], pairs: &[Preference]) -> Result<Vec<f64>> {
        cosine_with_norms(base, pairs, &self.table, &self.sq_norms, &self.cfg)
    }
}

/// A trained model bound to its embedding table.
#[derive(Debug, Clone)]
pub struct NqrReranker {
    label: String,
    params: Arc<NqrParameters>,
    table: Arc<EmbeddingTable>,
    projected: Tensor2,
}

impl NqrReranker {
    pub fn new(params: Arc<NqrParameters>, table: Arc<EmbeddingTable>) -> Result<Self> {
        let projected = PreparedNqr::new(&params, &table)?.into_projected();
        Ok(Self {
            label: "nqr".into(),
            params,
            table,
            projected,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn params(&self) -> &NqrParameters {
        &self.params
    }
}

impl Reranker for NqrReranker {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn rerank(&self, base: &[f64], pairs: &[Preference]) -> Result<Vec<f64>> {
        if pairs.is_empty() {
            if base.len() != self.table.len() {
                return Err(Error::Shape("base vector length".into()));
            }
            return Ok(base.to_vec());
        }
        PreparedNqr::with_projection(&self.params, &self.table, &self.projected).rerank(base, pairs)
    }
}
