//! Everything a session can refer to: the entity vocabulary, known queries
//! with their base scores, trained checkpoints, and optionally a graph for
//! scoring ad-hoc queries.

use std::collections::BTreeMap;
use std::sync::Arc;

use nqr_core::basescore::{synthetic_scores, ScoreTable, SyntheticScoreConfig};
use nqr_core::embed::EmbeddingTable;
use nqr_core::model::NqrParameters;
use nqr_core::prefgen::{Dataset, QueryInstance, Split};
use nqr_core::query::{evaluate_query, QueryGraph, Structure};
use nqr_core::rerank::{CosineConfig, CosineReranker, IdentityReranker, NqrReranker, Reranker};
use nqr_core::seed::derive_seed;
use nqr_core::{EntityId, KnowledgeGraph};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, ServiceError};

pub const DEFAULT_CHECKPOINT: &str = "default";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RerankerChoice {
    Identity,
    Cosine {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha_p: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha_n: Option<f64>,
    },
    Nqr {
        #[serde(default = "default_checkpoint")]
        checkpoint: String,
    },
}

fn default_checkpoint() -> String {
    DEFAULT_CHECKPOINT.into()
}

/// A session's query: a known benchmark query or a graph posed directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryRef {
    Known { query_id: u64 },
    AdHoc { query: QueryGraph },
}

/// Base scores plus the ground-truth answers, when known.
#[derive(Debug, Clone)]
pub struct ResolvedQuery {
    pub structure: Structure,
    pub base: Arc<Vec<f64>>,
    pub answers: Option<Arc<Vec<EntityId>>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuerySummary {
    pub id: u64,
    pub split: Split,
    pub structure: Structure,
    pub num_answers: usize,
    pub preference_sets: usize,
}

#[derive(Debug, Clone)]
struct AdHocScoring {
    graph: KnowledgeGraph,
    scores: SyntheticScoreConfig,
}

pub struct Catalog {
    table: Arc<EmbeddingTable>,
    labels: Vec<String>,
    queries: BTreeMap<u64, QueryInstance>,
    scores: ScoreTable,
    checkpoints: BTreeMap<String, Arc<NqrReranker>>,
    default_cosine: CosineConfig,
    adhoc: Option<AdHocScoring>,
}

impl Catalog {
    pub fn new(table: Arc<EmbeddingTable>, dataset: Dataset, scores: ScoreTable) -> Result<Self> {
        if scores.num_entities() != table.len() {
            return Err(ServiceError::BadRequest(format!(
                "score vectors cover {} entities, embedding table has {}",
                scores.num_entities(),
                table.len()
            )));
        }
        let labels = (0..table.len()).map(|i| EntityId(i as u32).to_string()).collect();
        Ok(Self {
            table,
            labels,
            queries: dataset.instances.into_iter().map(|q| (q.id, q)).collect(),
            scores,
            checkpoints: BTreeMap::new(),
            default_cosine: CosineConfig::new(0.5, 0.5)?,
            adhoc: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.table.len() {
            return Err(ServiceError::BadRequest(format!(
                "{} entity labels for {} entities",
                labels.len(),
                self.table.len()
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn with_checkpoint(mut self, name: impl Into<String>, params: NqrParameters) -> Result<Self> {
        if params.dim() != self.table.dim() {
            return Err(ServiceError::BadRequest(format!(
                "checkpoint dimension {} does not match embeddings ({})",
                params.dim(),
                self.table.dim()
            )));
        }
        let name = name.into();
        let reranker = NqrReranker::new(Arc::new(params), self.table.clone())?.with_label(format!("nqr:{name}"));
        self.checkpoints.insert(name, Arc::new(reranker));
        Ok(self)
    }

    pub fn with_default_cosine(mut self, cfg: CosineConfig) -> Self {
        self.default_cosine = cfg;
        self
    }

    /// Enables ad-hoc query graphs: answers come from `graph`, base scores
    /// are planted around them.
    pub fn with_graph(mut self, graph: KnowledgeGraph, scores: SyntheticScoreConfig) -> Result<Self> {
        if graph.num_entities() != self.table.len() {
            return Err(ServiceError::BadRequest(format!(
                "graph has {} entities, embedding table has {}",
                graph.num_entities(),
                self.table.len()
            )));
        }
        self.adhoc = Some(AdHocScoring { graph, scores });
        Ok(self)
    }

    pub fn num_entities(&self) -> usize {
        self.table.len()
    }

    pub fn entity_label(&self, e: EntityId) -> &str {
        &self.labels[e.index()]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn queries(&self) -> impl Iterator<Item = QuerySummary> + '_ {
        self.queries.values().map(|q| QuerySummary {
            id: q.id,
            split: q.split,
            structure: q.structure(),
            num_answers: q.answers.len(),
            preference_sets: q.preference_sets.len(),
        })
    }

    pub fn query(&self, id: u64) -> Option<&QueryInstance> {
        self.queries.get(&id)
    }

    pub fn resolve_query(&self, q: &QueryRef) -> Result<ResolvedQuery> {
        match q {
            QueryRef::Known { query_id } => {
                let inst = self
                    .queries
                    .get(query_id)
                    .ok_or_else(|| ServiceError::NotFound(format!("unknown query {query_id}")))?;
                let base = self
                    .scores
                    .get(*query_id)
                    .ok_or_else(|| ServiceError::NotFound(format!("no base scores for query {query_id}")))?;
                Ok(ResolvedQuery {
                    structure: inst.structure(),
                    base: Arc::new(base.scores.clone()),
                    answers: Some(Arc::new(inst.answers.answers.clone())),
                })
            }
            QueryRef::AdHoc { query } => {
                let adhoc = self.adhoc.as_ref().ok_or_else(|| {
                    ServiceError::BadRequest("this server has no graph for ad-hoc queries".into())
                })?;
                query.validate_against(&adhoc.graph)?;
                let answers = evaluate_query(&adhoc.graph, query)?.answers;
                let cfg = SyntheticScoreConfig {
                    seed: derive_seed(adhoc.scores.seed, query_fingerprint(query)),
                    ..adhoc.scores
                };
                let v = synthetic_scores(0, self.table.len(), &answers, &cfg)?;
                let answers = (!answers.is_empty()).then(|| Arc::new(answers));
                Ok(ResolvedQuery {
                    structure: query.structure(),
                    base: Arc::new(v.scores),
                    answers,
                })
            }
        }
    }

    /// Fills in defaults so the stored choice is self-contained.
    pub fn resolve_choice(&self, choice: &RerankerChoice) -> Result<RerankerChoice> {
        match choice {
            RerankerChoice::Identity => Ok(RerankerChoice::Identity),
            RerankerChoice::Cosine { alpha_p, alpha_n } => {
                let cfg = CosineConfig::new(
                    alpha_p.unwrap_or(self.default_cosine.alpha_p),
                    alpha_n.unwrap_or(self.default_cosine.alpha_n),
                )?;
                Ok(RerankerChoice::Cosine {
                    alpha_p: Some(cfg.alpha_p),
                    alpha_n: Some(cfg.alpha_n),
                })
            }
            RerankerChoice::Nqr { checkpoint } => {
                if !self.checkpoints.contains_key(checkpoint) {
                    return Err(ServiceError::NotFound(format!("unknown checkpoint `{checkpoint}`")));
                }
                Ok(choice.clone())
            }
        }
    }

    pub fn reranker(&self, choice: &RerankerChoice) -> Result<Arc<dyn Reranker>> {
        Ok(match self.resolve_choice(choice)? {
            RerankerChoice::Identity => Arc::new(IdentityReranker),
            RerankerChoice::Cosine { alpha_p, alpha_n } => {
                let cfg = CosineConfig::new(alpha_p.unwrap_or_default(), alpha_n.unwrap_or_default())?;
                Arc::new(CosineReranker::new(cfg, self.table.clone()))
            }
            RerankerChoice::Nqr { checkpoint } => self.checkpoints[&checkpoint].clone(),
        })
    }
}

fn query_fingerprint(q: &QueryGraph) -> u64 {
    let json = serde_json::to_vec(q).unwrap_or_default();
    let digest = Sha256::digest(&json);
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}
