//! Knowledge graph storage with head- and tail-indexed adjacency.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: u32, relation: u32, tail: u32) -> Self {
        Self {
            head: EntityId(head),
            relation: RelationId(relation),
            tail: EntityId(tail),
        }
    }
}

/// Bidirectional label <-> dense id mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    labels: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab::default();
        for label in labels {
            vocab.intern(&label.into());
        }
        vocab
    }

    /// Returns the id for `label`, allocating the next dense id if unseen.
    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rebuilds the lookup index; needed after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i as u32))
            .collect();
    }

    pub fn read_lines<R: BufRead>(reader: R) -> Result<Self> {
        let mut vocab = Vocab::default();
        for line in reader.lines() {
            let line = line?;
            let label = line.trim_end_matches(['\r', '\n']);
            if !label.is_empty() {
                vocab.intern(label);
            }
        }
        Ok(vocab)
    }
}

/// How labels in a triples file are resolved to ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    /// Unseen labels extend the vocabulary.
    Open,
    /// Every label must already be present in the supplied vocabulary.
    Strict,
    /// Fields are decimal ids.
    Numeric,
}

/// Immutable triple store. Both adjacency indices hold sorted, deduplicated
/// neighbour lists.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    num_entities: usize,
    num_relations: usize,
    triples: Vec<Triple>,
    by_head_rel: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    by_tail_rel: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    entities: Option<Vocab>,
    relations: Option<Vocab>,
}

impl KnowledgeGraph {
    pub fn new(
        num_entities: usize,
        num_relations: usize,
        triples: impl IntoIterator<Item = Triple>,
    ) -> Result<Self> {
        let set: BTreeSet<Triple> = triples.into_iter().collect();
        let mut by_head_rel: HashMap<_, Vec<EntityId>> = HashMap::new();
        let mut by_tail_rel: HashMap<_, Vec<EntityId>> = HashMap::new();
        for t in &set {
            if t.head.index() >= num_entities || t.tail.index() >= num_entities {
                return Err(Error::InvalidArgument(format!(
                    "triple {:?} references entity outside 0..{num_entities}",
                    t
                )));
            }
            if t.relation.index() >= num_relations {
                return Err(Error::InvalidArgument(format!(
                    "triple {:?} references relation outside 0..{num_relations}",
                    t
                )));
            }
            by_head_rel.entry((t.head, t.relation)).or_default().push(t.tail);
            by_tail_rel.entry((t.tail, t.relation)).or_default().push(t.head);
        }
        // BTreeSet order sorts tails within (head, rel); heads need sorting.
        for heads in by_tail_rel.values_mut() {
            heads.sort_unstable();
        }
        Ok(Self {
            num_entities,
            num_relations,
            triples: set.into_iter().collect(),
            by_head_rel,
            by_tail_rel,
            entities: None,
            relations: None,
        })
    }

    pub fn with_vocab(mut self, entities: Vocab, relations: Vocab) -> Result<Self> {
        if entities.len() != self.num_entities || relations.len() != self.num_relations {
            return Err(Error::InvalidArgument(format!(
                "vocabulary sizes ({}, {}) do not match graph ({}, {})",
                entities.len(),
                relations.len(),
                self.num_entities,
                self.num_relations
            )));
        }
        self.entities = Some(entities);
        self.relations = Some(relations);
        Ok(self)
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_vocab(&self) -> Option<&Vocab> {
        self.entities.as_ref()
    }

    pub fn relation_vocab(&self) -> Option<&Vocab> {
        self.relations.as_ref()
    }

    pub fn entity_label(&self, e: EntityId) -> String {
        self.entities
            .as_ref()
            .and_then(|v| v.label(e.0))
            .map(str::to_owned)
            .unwrap_or_else(|| e.to_string())
    }

    pub fn tails(&self, head: EntityId, rel: RelationId) -> &[EntityId] {
        self.by_head_rel
            .get(&(head, rel))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn heads(&self, tail: EntityId, rel: RelationId) -> &[EntityId] {
        self.by_tail_rel
            .get(&(tail, rel))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn contains(&self, head: EntityId, rel: RelationId, tail: EntityId) -> bool {
        self.tails(head, rel).binary_search(&tail).is_ok()
    }

    /// Relations with at least one outgoing edge from `head`.
    pub fn out_relations(&self, head: EntityId) -> Vec<RelationId> {
        let mut rels: Vec<RelationId> = (0..self.num_relations as u32)
            .map(RelationId)
            .filter(|&r| !self.tails(head, r).is_empty())
            .collect();
        rels.sort_unstable();
        rels
    }

    /// Subgraph keeping only triples accepted by `keep`; entity and relation
    /// id spaces are unchanged.
    pub fn filter_triples(&self, mut keep: impl FnMut(&Triple) -> bool) -> Self {
        let triples: Vec<Triple> = self.triples.iter().copied().filter(|t| keep(t)).collect();
        let mut g = Self::new(self.num_entities, self.num_relations, triples)
            .expect("subset of a valid graph is valid");
        g.entities = self.entities.clone();
        g.relations = self.relations.clone();
        g
    }

    /// Checks that both indices agree exactly with the triple list.
    pub fn indices_consistent(&self) -> bool {
        let from_head: usize = self.by_head_rel.values().map(Vec::len).sum();
        let from_tail: usize = self.by_tail_rel.values().map(Vec::len).sum();
        if from_head != self.triples.len() || from_tail != self.triples.len() {
            return false;
        }
        self.triples.iter().all(|t| {
            self.tails(t.head, t.relation).binary_search(&t.tail).is_ok()
                && self.heads(t.tail, t.relation).binary_search(&t.head).is_ok()
        })
    }
}

/// Parses a tab-separated triples file (whitespace is accepted when a line
/// has no tabs). Duplicate triples are dropped.
pub fn load_graph<R: BufRead>(
    reader: R,
    mode: LabelMode,
    entities: Option<Vocab>,
    relations: Option<Vocab>,
) -> Result<KnowledgeGraph> {
    let mut ents = entities.unwrap_or_default();
    let mut rels = relations.unwrap_or_default();
    let mut triples = Vec::new();
    let mut max_entity = 0usize;
    let mut max_relation = 0usize;

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split_whitespace().collect()
        };
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let (h, r, t) = match mode {
            LabelMode::Numeric => {
                let parse = |s: &str| {
                    s.trim().parse::<u32>().map_err(|e| Error::Parse {
                        line: lineno,
                        message: format!("bad id `{s}`: {e}"),
                    })
                };
                let (h, r, t) = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
                max_entity = max_entity.max(h as usize + 1).max(t as usize + 1);
                max_relation = max_relation.max(r as usize + 1);
                (h, r, t)
            }
            LabelMode::Open => (
                ents.intern(fields[0]),
                rels.intern(fields[1]),
                ents.intern(fields[2]),
            ),
            LabelMode::Strict => {
                let ent = |s: &str| {
                    ents.get(s).ok_or_else(|| Error::Vocabulary {
                        kind: "entity",
                        label: s.to_owned(),
                    })
                };
                let rel = rels.get(fields[1]).ok_or_else(|| Error::Vocabulary {
                    kind: "relation",
                    label: fields[1].to_owned(),
                })?;
                (ent(fields[0])?, rel, ent(fields[2])?)
            }
        };
        triples.push(Triple::new(h, r, t));
    }

    match mode {
        LabelMode::Numeric => {
            let n_ent = max_entity.max(ents.len());
            let n_rel = max_relation.max(rels.len());
            let g = KnowledgeGraph::new(n_ent, n_rel, triples)?;
            if ents.len() == n_ent && rels.len() == n_rel {
                g.with_vocab(ents, rels)
            } else {
                Ok(g)
            }
        }
        _ => KnowledgeGraph::new(ents.len(), rels.len(), triples)?.with_vocab(ents, rels),
    }
}

/// Writes triples as `head\trelation\ttail` using labels when available.
pub fn write_graph<W: std::io::Write>(kg: &KnowledgeGraph, mut out: W) -> Result<()> {
    for t in kg.triples() {
        match (kg.entity_vocab(), kg.relation_vocab()) {
            (Some(ev), Some(rv)) => writeln!(
                out,
                "{}\t{}\t{}",
                ev.label(t.head.0).unwrap_or_default(),
                rv.label(t.relation.0).unwrap_or_default(),
                ev.label(t.tail.0).unwrap_or_default()
            )?,
            _ => writeln!(out, "{}\t{}\t{}", t.head.0, t.relation.0, t.tail.0)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open(text: &str) -> Result<KnowledgeGraph> {
        load_graph(text.as_bytes(), LabelMode::Open, None, None)
    }

    #[test]
    fn counts_two_line_file() {
        let kg = open("a\tr\tb\nb\ts\tc\n").unwrap();
        assert_eq!(kg.num_entities(), 3);
        assert_eq!(kg.num_relations(), 2);
        assert_eq!(kg.num_triples(), 2);
        assert!(kg.indices_consistent());
    }

    #[test]
    fn empty_file_is_empty_graph() {
        let kg = open("").unwrap();
        assert_eq!(kg.num_triples(), 0);
        assert_eq!(kg.num_entities(), 0);
    }

    #[test]
    fn duplicates_are_dropped() {
        let kg = open("a\tr\tb\na\tr\tb\n").unwrap();
        assert_eq!(kg.num_triples(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        match open("a\tr\tb\na\tr\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn strict_mode_rejects_unknown_label() {
        let ents = Vocab::from_labels(["a", "b"]);
        let rels = Vocab::from_labels(["r"]);
        let err = load_graph("a\tr\tz\n".as_bytes(), LabelMode::Strict, Some(ents), Some(rels))
            .unwrap_err();
        assert!(matches!(err, Error::Vocabulary { kind: "entity", .. }));
    }

    #[test]
    fn numeric_mode_sizes_from_max_id() {
        let kg = load_graph("0 1 5\n".as_bytes(), LabelMode::Numeric, None, None).unwrap();
        assert_eq!(kg.num_entities(), 6);
        assert_eq!(kg.num_relations(), 2);
    }

    #[test]
    fn rejects_out_of_range_ids() {
        assert!(KnowledgeGraph::new(2, 1, [Triple::new(0, 0, 2)]).is_err());
        assert!(KnowledgeGraph::new(2, 1, [Triple::new(0, 1, 1)]).is_err());
    }

    #[test]
    fn write_then_load_roundtrips() {
        let kg = open("a\tr\tb\nb\ts\tc\nc\tr\ta\n").unwrap();
        let mut buf = Vec::new();
        write_graph(&kg, &mut buf).unwrap();
        let back = open(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.num_triples(), kg.num_triples());
        assert_eq!(back.num_entities(), kg.num_entities());
    }
}
