//! Session state as a fold over an append-only event log.

use std::collections::HashSet;
use std::sync::Arc;

use nqr_core::evaluation::{pairwise_accuracy, ranking_metrics};
use nqr_core::preference::split_sides;
use nqr_core::query::Structure;
use nqr_core::rerank::Reranker;
use nqr_core::{EntityId, Label, Preference};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{Catalog, QueryRef, RerankerChoice};
use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        session: String,
        query: QueryRef,
        reranker: RerankerChoice,
        at_ms: u64,
    },
    Preference {
        entity: EntityId,
        label: Label,
        at_ms: u64,
    },
    Undo {
        at_ms: u64,
    },
}

impl Event {
    pub fn at_ms(&self) -> u64 {
        match self {
            Event::Created { at_ms, .. } | Event::Preference { at_ms, .. } | Event::Undo { at_ms } => *at_ms,
        }
    }
}

/// An immutable picture of a session at one revision.
#[derive(Debug, Clone)]
pub struct View {
    pub id: String,
    pub query: QueryRef,
    pub structure: Structure,
    pub reranker: RerankerChoice,
    pub pairs: Vec<Preference>,
    pub created_ms: u64,
    pub updated_ms: u64,
    pub base: Arc<Vec<f64>>,
    pub answers: Option<Arc<Vec<EntityId>>>,
    pub adjusted: Vec<f64>,
    /// Entities best first.
    pub order: Vec<EntityId>,
    /// 1-based rank of every entity now and one revision earlier.
    pub rank: Vec<u32>,
    pub previous_rank: Vec<u32>,
}

impl View {
    pub fn revision(&self) -> u64 {
        self.pairs.len() as u64
    }

    pub fn label_of(&self, e: EntityId) -> Option<Label> {
        self.pairs.iter().find(|p| p.entity == e).map(|p| p.label)
    }

    /// SHA-256 over the little-endian bytes of the adjusted scores.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.adjusted {
            h.update(s.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn page(&self, catalog: &Catalog, top_k: usize, offset: usize) -> RankingPage {
        let rows = self
            .order
            .iter()
            .skip(offset)
            .take(top_k)
            .map(|&e| {
                let i = e.index();
                RankedRow {
                    rank: self.rank[i],
                    entity: e,
                    label: catalog.entity_label(e).to_string(),
                    base: self.base[i],
                    adjusted: self.adjusted[i],
                    rank_delta: self.previous_rank[i] as i64 - self.rank[i] as i64,
                    labelled: self.label_of(e),
                }
            })
            .collect();
        RankingPage {
            session: self.id.clone(),
            revision: self.revision(),
            total: self.order.len(),
            offset,
            rows,
        }
    }

    /// Metrics after each prefix of the labelled entities. Pairwise accuracy
    /// is measured against all labels given so far.
    pub fn trace(&self, reranker: &dyn Reranker) -> Result<Option<Vec<TracePoint>>> {
        let Some(answers) = &self.answers else {
            return Ok(None);
        };
        let (pos, neg) = split_sides(&self.pairs);
        let mut out = Vec::with_capacity(self.pairs.len() + 1);
        for t in 0..=self.pairs.len() {
            let scores = reranker.rerank(&self.base, &self.pairs[..t])?;
            let pa = if pos.is_empty() || neg.is_empty() {
                None
            } else {
                Some(pairwise_accuracy(&scores, &pos, &neg)?)
            };
            let m = ranking_metrics(&scores, answers)?;
            out.push(TracePoint {
                t,
                pa,
                mrr: m.mrr,
                hits1: m.hits1,
                hits3: m.hits3,
                hits10: m.hits10,
            });
        }
        Ok(Some(out))
    }

    pub fn metadata(&self, trace: Option<Vec<TracePoint>>) -> SessionMetadata {
        SessionMetadata {
            session: self.id.clone(),
            query: self.query.clone(),
            structure: self.structure,
            reranker: self.reranker.clone(),
            revision: self.revision(),
            num_answers: self.answers.as_ref().map(|a| a.len()),
            created_ms: self.created_ms,
            updated_ms: self.updated_ms,
            preferences: self.pairs.clone(),
            digest: self.digest(),
            trace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRow {
    pub rank: u32,
    pub entity: EntityId,
    pub label: String,
    pub base: f64,
    pub adjusted: f64,
    /// Positive when the entity moved up since the previous revision.
    pub rank_delta: i64,
    pub labelled: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingPage {
    pub session: String,
    pub revision: u64,
    pub total: usize,
    pub offset: usize,
    pub rows: Vec<RankedRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: usize,
    pub pa: Option<f64>,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetadata {
    pub session: String,
    pub query: QueryRef,
    pub structure: Structure,
    pub reranker: RerankerChoice,
    pub revision: u64,
    pub num_answers: Option<usize>,
    pub created_ms: u64,
    pub updated_ms: u64,
    pub preferences: Vec<Preference>,
    pub digest: String,
    pub trace: Option<Vec<TracePoint>>,
}

/// Writer-side state: the log so far plus everything needed to apply more.
#[derive(Clone)]
pub struct Session {
    pub events: Vec<Event>,
    pub view: Arc<View>,
    pub reranker: Arc<dyn Reranker>,
}

impl Session {
    pub fn create(catalog: &Catalog, id: String, query: QueryRef, choice: &RerankerChoice, at_ms: u64) -> Result<Self> {
        let reranker_choice = catalog.resolve_choice(choice)?;
        let event = Event::Created {
            session: id,
            query,
            reranker: reranker_choice,
            at_ms,
        };
        Self::replay(catalog, std::slice::from_ref(&event))
    }

    /// Rebuilds a session from its log. The result depends only on the
    /// events and the catalog.
    pub fn replay(catalog: &Catalog, events: &[Event]) -> Result<Self> {
        let Some(Event::Created {
            session,
            query,
            reranker: choice,
            at_ms,
        }) = events.first()
        else {
            return Err(ServiceError::BadRequest("event log must start with a creation event".into()));
        };
        let resolved = catalog.resolve_query(query)?;
        let reranker = catalog.reranker(choice)?;
        let mut pairs = Vec::new();
        let mut updated_ms = *at_ms;
        for ev in &events[1..] {
            apply(&mut pairs, ev, catalog.num_entities())?;
            updated_ms = ev.at_ms();
        }
        let view = build_view(
            ViewSeed {
                id: session.clone(),
                query: query.clone(),
                structure: resolved.structure,
                reranker: choice.clone(),
                created_ms: *at_ms,
                base: resolved.base,
                answers: resolved.answers,
            },
            pairs,
            updated_ms,
            reranker.as_ref(),
        )?;
        Ok(Self {
            events: events.to_vec(),
            view: Arc::new(view),
            reranker,
        })
    }

    /// Validates `event` against the current state and returns the session
    /// that results from it; `self` is untouched on error.
    pub fn with_event(&self, catalog: &Catalog, event: Event) -> Result<Self> {
        let mut pairs = self.view.pairs.clone();
        apply(&mut pairs, &event, catalog.num_entities())?;
        let v = &self.view;
        let view = build_view(
            ViewSeed {
                id: v.id.clone(),
                query: v.query.clone(),
                structure: v.structure,
                reranker: v.reranker.clone(),
                created_ms: v.created_ms,
                base: v.base.clone(),
                answers: v.answers.clone(),
            },
            pairs,
            event.at_ms(),
            self.reranker.as_ref(),
        )?;
        let mut events = self.events.clone();
        events.push(event);
        Ok(Self {
            events,
            view: Arc::new(view),
            reranker: self.reranker.clone(),
        })
    }
}

fn apply(pairs: &mut Vec<Preference>, event: &Event, num_entities: usize) -> Result<()> {
    match event {
        Event::Created { .. } => Err(ServiceError::BadRequest("session already created".into())),
        Event::Preference { entity, label, .. } => {
            if entity.index() >= num_entities {
                return Err(ServiceError::BadRequest(format!(
                    "entity {} outside vocabulary of {num_entities}",
                    entity.0
                )));
            }
            if pairs.iter().any(|p| p.entity == *entity) {
                return Err(ServiceError::DuplicateEntity(entity.0));
            }
            pairs.push(Preference::new(*entity, *label));
            Ok(())
        }
        Event::Undo { .. } => pairs.pop().map(|_| ()).ok_or(ServiceError::NothingToUndo),
    }
}

struct ViewSeed {
    id: String,
    query: QueryRef,
    structure: Structure,
    reranker: RerankerChoice,
    created_ms: u64,
    base: Arc<Vec<f64>>,
    answers: Option<Arc<Vec<EntityId>>>,
}

fn build_view(seed: ViewSeed, pairs: Vec<Preference>, updated_ms: u64, reranker: &dyn Reranker) -> Result<View> {
    debug_assert_eq!(pairs.iter().map(|p| p.entity).collect::<HashSet<_>>().len(), pairs.len());
    let adjusted = reranker.rerank(&seed.base, &pairs)?;
    let (order, rank) = ranking(&adjusted);
    let previous_rank = match pairs.len() {
        0 => rank.clone(),
        n => ranking(&reranker.rerank(&seed.base, &pairs[..n - 1])?).1,
    };
    Ok(View {
        id: seed.id,
        query: seed.query,
        structure: seed.structure,
        reranker: seed.reranker,
        pairs,
        created_ms: seed.created_ms,
        updated_ms,
        base: seed.base,
        answers: seed.answers,
        adjusted,
        order,
        rank,
        previous_rank,
    })
}

/// Descending score, ties by ascending entity id.
pub fn ranking(scores: &[f64]) -> (Vec<EntityId>, Vec<u32>) {
    let mut order: Vec<EntityId> = (0..scores.len() as u32).map(EntityId).collect();
    order.sort_by(|a, b| scores[b.index()].total_cmp(&scores[a.index()]).then(a.cmp(b)));
    let mut rank = vec![0u32; scores.len()];
    for (i, e) in order.iter().enumerate() {
        rank[e.index()] = i as u32 + 1;
    }
    (order, rank)
}
