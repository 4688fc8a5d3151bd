//! Validation tuning for the cosine-similarity baseline.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basescore::ScoreTable;
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::evaluation::{aggregate, evaluate, DEFAULT_STEPS};
use crate::prefgen::QueryInstance;
use crate::rerank::{CosineConfig, CosineReranker};

pub const COSINE_GRID: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineRow {
    pub alpha_p: f64,
    pub alpha_n: f64,
    pub av_pa: f64,
    pub av_mrr: f64,
    pub objective: f64,
}

/// Evaluates every `(alpha_p, alpha_n)` in `grid x grid` on `instances` and
/// returns the configuration with the largest AvPA + AvMRR (first wins ties)
/// together with one report row per point.
pub fn tune_cosine(
    instances: &[&QueryInstance],
    scores: &ScoreTable,
    table: Arc<EmbeddingTable>,
    grid: &[f64],
) -> Result<(CosineConfig, Vec<CosineRow>)> {
    if instances.is_empty() || grid.is_empty() {
        return Err(Error::InvalidArgument("cosine tuning needs data and a grid".into()));
    }
    let mut rows = Vec::with_capacity(grid.len() * grid.len());
    let mut best: Option<(usize, CosineConfig)> = None;
    for &alpha_p in grid {
        for &alpha_n in grid {
            let cfg = CosineConfig::new(alpha_p, alpha_n)?;
            let reranker = CosineReranker::new(cfg, table.clone());
            let traces = evaluate(&reranker, instances.iter().copied(), scores, DEFAULT_STEPS)?;
            let agg = aggregate(&traces)?;
            rows.push(CosineRow {
                alpha_p,
                alpha_n,
                av_pa: agg.av_pa,
                av_mrr: agg.av_mrr,
                objective: agg.objective(),
            });
            let i = rows.len() - 1;
            if best.is_none_or(|(b, _)| rows[i].objective > rows[b].objective) {
                best = Some((i, cfg));
            }
        }
    }
    Ok((best.expect("nonempty grid").1, rows))
}

pub fn write_cosine_csv<W: Write>(rows: &[CosineRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
