//! Preference pairs and ordered preference sets.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::EntityId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    NonPreferred,
    Preferred,
}

impl Label {
    pub fn is_preferred(self) -> bool {
        self == Label::Preferred
    }

    pub fn value(self) -> f64 {
        match self {
            Label::Preferred => 1.0,
            Label::NonPreferred => 0.0,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::NonPreferred),
            1 => Ok(Label::Preferred),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::NonPreferred => 0,
            Label::Preferred => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Preference {
    pub entity: EntityId,
    pub label: Label,
}

impl Preference {
    pub fn new(entity: EntityId, label: Label) -> Self {
        Self { entity, label }
    }

    pub fn preferred(entity: u32) -> Self {
        Self::new(EntityId(entity), Label::Preferred)
    }

    pub fn non_preferred(entity: u32) -> Self {
        Self::new(EntityId(entity), Label::NonPreferred)
    }
}

/// An ordered, duplicate-free list of labelled entities. The order is the
/// order in which an interactive user would reveal them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SetRepr")]
pub struct PreferenceSet {
    pairs: Vec<Preference>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_cluster: Option<usize>,
}

#[derive(Deserialize)]
struct SetRepr {
    pairs: Vec<Preference>,
    #[serde(default)]
    source_cluster: Option<usize>,
}

impl TryFrom<SetRepr> for PreferenceSet {
    type Error = Error;

    fn try_from(r: SetRepr) -> Result<Self> {
        let mut s = PreferenceSet::new(r.pairs)?;
        s.source_cluster = r.source_cluster;
        Ok(s)
    }
}

impl PreferenceSet {
    pub fn new(pairs: Vec<Preference>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyPreferences);
        }
        let mut seen = HashSet::with_capacity(pairs.len());
        if let Some(dup) = pairs.iter().find(|p| !seen.insert(p.entity)) {
            return Err(Error::InvalidArgument(format!(
                "entity {} appears twice in a preference set",
                dup.entity
            )));
        }
        Ok(Self {
            pairs,
            source_cluster: None,
        })
    }

    pub fn with_source(mut self, node: usize) -> Self {
        self.source_cluster = Some(node);
        self
    }

    pub fn source_cluster(&self) -> Option<usize> {
        self.source_cluster
    }

    pub fn pairs(&self) -> &[Preference] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> Vec<EntityId> {
        split_sides(&self.pairs).0
    }

    pub fn negatives(&self) -> Vec<EntityId> {
        split_sides(&self.pairs).1
    }

    pub fn has_both_sides(&self) -> bool {
        has_both_sides(&self.pairs)
    }

    /// Reorders the pairs with a permutation given as indices into the
    /// current order.
    pub fn reordered(&self, order: &[usize]) -> Self {
        Self {
            pairs: order.iter().map(|&i| self.pairs[i]).collect(),
            source_cluster: self.source_cluster,
        }
    }
}

/// Preferred and non-preferred entities, each in pair order.
pub fn split_sides(pairs: &[Preference]) -> (Vec<EntityId>, Vec<EntityId>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for p in pairs {
        if p.label.is_preferred() {
            pos.push(p.entity);
        } else {
            neg.push(p.entity);
        }
    }
    (pos, neg)
}

pub fn has_both_sides(pairs: &[Preference]) -> bool {
    pairs.iter().any(|p| p.label.is_preferred()) && pairs.iter().any(|p| !p.label.is_preferred())
}
