//! The fourteen complex-query structures and their exact evaluation.
//!
//! A query is a disjunction of conjunctive branches. Inside a branch every
//! variable other than the target appears as the subject of exactly one atom,
//! so the atoms form a tree rooted at the target. Evaluation walks that tree
//! bottom-up; negated atoms only ever filter candidates that positive atoms
//! produced.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Structure {
    #[serde(rename = "1p")]
    P1,
    #[serde(rename = "2p")]
    P2,
    #[serde(rename = "3p")]
    P3,
    #[serde(rename = "2i")]
    I2,
    #[serde(rename = "3i")]
    I3,
    #[serde(rename = "ip")]
    Ip,
    #[serde(rename = "pi")]
    Pi,
    #[serde(rename = "2in")]
    In2,
    #[serde(rename = "3in")]
    In3,
    #[serde(rename = "inp")]
    Inp,
    #[serde(rename = "pin")]
    Pin,
    #[serde(rename = "pni")]
    Pni,
    #[serde(rename = "2u")]
    U2,
    #[serde(rename = "up")]
    Up,
}

impl Structure {
    pub const ALL: [Structure; 14] = [
        Structure::P1,
        Structure::P2,
        Structure::P3,
        Structure::I2,
        Structure::I3,
        Structure::Ip,
        Structure::Pi,
        Structure::In2,
        Structure::In3,
        Structure::Inp,
        Structure::Pin,
        Structure::Pni,
        Structure::U2,
        Structure::Up,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Structure::P1 => "1p",
            Structure::P2 => "2p",
            Structure::P3 => "3p",
            Structure::I2 => "2i",
            Structure::I3 => "3i",
            Structure::Ip => "ip",
            Structure::Pi => "pi",
            Structure::In2 => "2in",
            Structure::In3 => "3in",
            Structure::Inp => "inp",
            Structure::Pin => "pin",
            Structure::Pni => "pni",
            Structure::U2 => "2u",
            Structure::Up => "up",
        }
    }

    pub fn num_anchors(self) -> usize {
        match self {
            Structure::P1 | Structure::P2 | Structure::P3 => 1,
            Structure::I3 | Structure::In3 => 3,
            _ => 2,
        }
    }

    pub fn num_relations(self) -> usize {
        match self {
            Structure::P1 => 1,
            Structure::P2 | Structure::I2 | Structure::In2 | Structure::U2 => 2,
            _ => 3,
        }
    }

    pub fn has_negation(self) -> bool {
        matches!(
            self,
            Structure::In2 | Structure::In3 | Structure::Inp | Structure::Pin | Structure::Pni
        )
    }

    /// Canonical DNF for this structure over the given anchors and relations.
    fn build(self, a: &[EntityId], r: &[RelationId]) -> Vec<Vec<Atom>> {
        use Term::{Anchor, Var as V};
        let t = Var::TARGET;
        let v1 = Var(1);
        let v2 = Var(2);
        let pos = Atom::positive;
        let neg = Atom::negated;
        match self {
            Structure::P1 => vec![vec![pos(Anchor(a[0]), r[0], t)]],
            Structure::P2 => vec![vec![pos(Anchor(a[0]), r[0], v1), pos(V(v1), r[1], t)]],
            Structure::P3 => vec![vec![
                pos(Anchor(a[0]), r[0], v1),
                pos(V(v1), r[1], v2),
                pos(V(v2), r[2], t),
            ]],
            Structure::I2 => vec![vec![pos(Anchor(a[0]), r[0], t), pos(Anchor(a[1]), r[1], t)]],
            Structure::I3 => vec![vec![
                pos(Anchor(a[0]), r[0], t),
                pos(Anchor(a[1]), r[1], t),
                pos(Anchor(a[2]), r[2], t),
            ]],
            Structure::Ip => vec![vec![
                pos(Anchor(a[0]), r[0], v1),
                pos(Anchor(a[1]), r[1], v1),
                pos(V(v1), r[2], t),
            ]],
            Structure::Pi => vec![vec![
                pos(Anchor(a[0]), r[0], v1),
                pos(V(v1), r[1], t),
                pos(Anchor(a[1]), r[2], t),
            ]],
            Structure::In2 => vec![vec![pos(Anchor(a[0]), r[0], t), neg(Anchor(a[1]), r[1], t)]],
            Structure::In3 => vec![vec![
                pos(Anchor(a[0]), r[0], t),
                pos(Anchor(a[1]), r[1], t),
                neg(Anchor(a[2]), r[2], t),
            ]],
            Structure::Inp => vec![vec![
                pos(Anchor(a[0]), r[0], v1),
                neg(Anchor(a[1]), r[1], v1),
                pos(V(v1), r[2], t),
            ]],
            Structure::Pin => vec![vec![
                pos(Anchor(a[0]), r[0], v1),
                pos(V(v1), r[1], t),
                neg(Anchor(a[1]), r[2], t),
            ]],
            Structure::Pni => vec![vec![
                pos(Anchor(a[0]), r[0], v1),
                neg(V(v1), r[1], t),
                pos(Anchor(a[1]), r[2], t),
            ]],
            Structure::U2 => vec![
                vec![pos(Anchor(a[0]), r[0], t)],
                vec![pos(Anchor(a[1]), r[1], t)],
            ],
            Structure::Up => vec![
                vec![pos(Anchor(a[0]), r[0], v1), pos(V(v1), r[2], t)],
                vec![pos(Anchor(a[1]), r[1], v1), pos(V(v1), r[2], t)],
            ],
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Structure::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidQuery(format!("unknown structure `{s}`")))
    }
}

/// Query variable; `Var(0)` is always the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Var(pub u8);

impl Var {
    pub const TARGET: Var = Var(0);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    Anchor(EntityId),
    Var(Var),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub subject: Term,
    pub relation: RelationId,
    pub object: Var,
    #[serde(default)]
    pub negated: bool,
}

impl Atom {
    pub fn positive(subject: Term, relation: RelationId, object: Var) -> Self {
        Self {
            subject,
            relation,
            object,
            negated: false,
        }
    }

    pub fn negated(subject: Term, relation: RelationId, object: Var) -> Self {
        Self {
            subject,
            relation,
            object,
            negated: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "QueryRepr", into = "QueryRepr")]
pub struct QueryGraph {
    structure: Structure,
    anchors: Vec<EntityId>,
    relations: Vec<RelationId>,
    dnf: Vec<Vec<Atom>>,
}

#[derive(Serialize, Deserialize)]
struct QueryRepr {
    structure: Structure,
    anchors: Vec<EntityId>,
    relations: Vec<RelationId>,
    #[serde(default)]
    target: Option<Var>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dnf: Option<Vec<Vec<Atom>>>,
}

impl TryFrom<QueryRepr> for QueryGraph {
    type Error = Error;

    fn try_from(repr: QueryRepr) -> Result<Self> {
        if repr.target.is_some_and(|t| t != Var::TARGET) {
            return Err(Error::InvalidQuery("target variable must be 0".into()));
        }
        let q = QueryGraph::new(repr.structure, repr.anchors, repr.relations)?;
        if let Some(dnf) = repr.dnf {
            if dnf != q.dnf {
                return Err(Error::InvalidQuery(format!(
                    "atom list does not match the `{}` pattern",
                    q.structure
                )));
            }
        }
        Ok(q)
    }
}

impl From<QueryGraph> for QueryRepr {
    fn from(q: QueryGraph) -> Self {
        QueryRepr {
            structure: q.structure,
            anchors: q.anchors,
            relations: q.relations,
            target: Some(Var::TARGET),
            dnf: Some(q.dnf),
        }
    }
}

impl QueryGraph {
    pub fn new(
        structure: Structure,
        anchors: Vec<EntityId>,
        relations: Vec<RelationId>,
    ) -> Result<Self> {
        if anchors.len() != structure.num_anchors() {
            return Err(Error::InvalidQuery(format!(
                "`{structure}` takes {} anchors, got {}",
                structure.num_anchors(),
                anchors.len()
            )));
        }
        if relations.len() != structure.num_relations() {
            return Err(Error::InvalidQuery(format!(
                "`{structure}` takes {} relations, got {}",
                structure.num_relations(),
                relations.len()
            )));
        }
        let dnf = structure.build(&anchors, &relations);
        Ok(Self {
            structure,
            anchors,
            relations,
            dnf,
        })
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn anchors(&self) -> &[EntityId] {
        &self.anchors
    }

    pub fn relations(&self) -> &[RelationId] {
        &self.relations
    }

    pub fn dnf(&self) -> &[Vec<Atom>] {
        &self.dnf
    }

    pub fn target(&self) -> Var {
        Var::TARGET
    }

    /// Checks that every id in the query exists in `kg`.
    pub fn validate_against(&self, kg: &KnowledgeGraph) -> Result<()> {
        if let Some(a) = self.anchors.iter().find(|a| a.index() >= kg.num_entities()) {
            return Err(Error::InvalidQuery(format!("anchor {a} not in graph")));
        }
        if let Some(r) = self.relations.iter().find(|r| r.index() >= kg.num_relations()) {
            return Err(Error::InvalidQuery(format!("relation {} not in graph", r.0)));
        }
        Ok(())
    }
}

/// Answers of a query, split by reachability on a training subgraph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSet {
    pub answers: Vec<EntityId>,
    pub easy: Vec<EntityId>,
    pub hard: Vec<EntityId>,
}

impl AnswerSet {
    /// All answers treated as easy (the graph is its own training graph).
    pub fn all_easy(answers: Vec<EntityId>) -> Self {
        Self {
            easy: answers.clone(),
            answers,
            hard: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn contains(&self, e: EntityId) -> bool {
        self.answers.binary_search(&e).is_ok()
    }
}

/// Exact answers of `q` over `kg`.
pub fn evaluate_query(kg: &KnowledgeGraph, q: &QueryGraph) -> Result<AnswerSet> {
    Ok(AnswerSet::all_easy(answer_entities(kg, q.dnf())?))
}

/// Answers over `full`, with those also derivable on `train` marked easy.
pub fn evaluate_with_split(
    train: &KnowledgeGraph,
    full: &KnowledgeGraph,
    q: &QueryGraph,
) -> Result<AnswerSet> {
    let answers = answer_entities(full, q.dnf())?;
    let on_train = answer_entities(train, q.dnf())?;
    let (easy, hard) = answers
        .iter()
        .partition(|e| on_train.binary_search(e).is_ok());
    Ok(AnswerSet {
        answers,
        easy,
        hard,
    })
}

/// Evaluates an arbitrary tree-shaped DNF. Returns sorted entity ids.
pub fn answer_entities(kg: &KnowledgeGraph, dnf: &[Vec<Atom>]) -> Result<Vec<EntityId>> {
    let n = kg.num_entities();
    let mut hit = vec![false; n];
    for branch in dnf {
        check_branch(branch)?;
        let cands = candidates(kg, branch, Var::TARGET)?;
        for (e, keep) in cands.iter().enumerate() {
            if *keep {
                hit[e] = true;
            }
        }
    }
    Ok(mask_to_ids(&hit))
}

fn mask_to_ids(mask: &[bool]) -> Vec<EntityId> {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| EntityId(i as u32))
        .collect()
}

fn check_branch(branch: &[Atom]) -> Result<()> {
    let mut vars: Vec<Var> = branch
        .iter()
        .flat_map(|a| {
            let s = match a.subject {
                Term::Var(v) => Some(v),
                Term::Anchor(_) => None,
            };
            s.into_iter().chain(std::iter::once(a.object))
        })
        .collect();
    vars.sort_unstable();
    vars.dedup();
    if !vars.contains(&Var::TARGET) {
        return Err(Error::InvalidQuery("branch never binds the target".into()));
    }
    for &v in &vars {
        let outgoing = branch
            .iter()
            .filter(|a| a.subject == Term::Var(v))
            .count();
        match (v == Var::TARGET, outgoing) {
            (true, 0) | (false, 1) => {}
            (true, _) => {
                return Err(Error::InvalidQuery("target variable used as a subject".into()))
            }
            (false, _) => {
                return Err(Error::UnsupportedQuery(format!(
                    "variable {} must feed exactly one atom",
                    v.0
                )))
            }
        }
        if !branch.iter().any(|a| a.object == v && !a.negated) {
            return Err(Error::UnsupportedQuery(format!(
                "variable {} has no positive atom constraining it",
                v.0
            )));
        }
    }
    // Every variable feeds exactly one atom and the target feeds none, so a
    // cycle would leave some variable unable to reach the target.
    for &v in &vars {
        let mut cur = v;
        let mut steps = 0;
        while cur != Var::TARGET {
            let next = branch
                .iter()
                .find(|a| a.subject == Term::Var(cur))
                .map(|a| a.object)
                .expect("checked above");
            cur = next;
            steps += 1;
            if steps > vars.len() {
                return Err(Error::InvalidQuery("atom graph has a cycle".into()));
            }
        }
    }
    Ok(())
}

/// Mask of entities that can bind `var` given the sub-tree of atoms feeding it.
fn candidates(kg: &KnowledgeGraph, branch: &[Atom], var: Var) -> Result<Vec<bool>> {
    let n = kg.num_entities();
    let incoming: Vec<&Atom> = branch.iter().filter(|a| a.object == var).collect();
    let mut mask: Option<Vec<bool>> = None;

    for atom in incoming.iter().filter(|a| !a.negated) {
        let mut reach = vec![false; n];
        match atom.subject {
            Term::Anchor(e) => {
                for &t in kg.tails(e, atom.relation) {
                    reach[t.index()] = true;
                }
            }
            Term::Var(u) => {
                let from = candidates(kg, branch, u)?;
                for (x, _) in from.iter().enumerate().filter(|(_, &m)| m) {
                    for &t in kg.tails(EntityId(x as u32), atom.relation) {
                        reach[t.index()] = true;
                    }
                }
            }
        }
        mask = Some(match mask {
            None => reach,
            Some(m) => m.iter().zip(&reach).map(|(a, b)| *a && *b).collect(),
        });
    }
    let mut mask = mask.ok_or_else(|| {
        Error::UnsupportedQuery(format!("variable {} has no positive atom", var.0))
    })?;

    for atom in incoming.iter().filter(|a| a.negated) {
        match atom.subject {
            Term::Anchor(e) => {
                for &t in kg.tails(e, atom.relation) {
                    mask[t.index()] = false;
                }
            }
            Term::Var(u) => {
                // y survives iff some binding x of u lacks the edge (x, r, y).
                let from: Vec<EntityId> = mask_to_ids(&candidates(kg, branch, u)?);
                for (y, keep) in mask.iter_mut().enumerate() {
                    if !*keep {
                        continue;
                    }
                    let heads = kg.heads(EntityId(y as u32), atom.relation);
                    let all_linked =
                        from.len() <= heads.len() && from.iter().all(|x| heads.binary_search(x).is_ok());
                    if all_linked {
                        *keep = false;
                    }
                }
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Triple;

    fn ent(i: u32) -> EntityId {
        EntityId(i)
    }

    fn rel(i: u32) -> RelationId {
        RelationId(i)
    }

    #[test]
    fn two_hop_single_path() {
        // a=0 r=0 b=1, b s=1 c=2
        let kg = KnowledgeGraph::new(3, 2, [Triple::new(0, 0, 1), Triple::new(1, 1, 2)]).unwrap();
        let q = QueryGraph::new(Structure::P2, vec![ent(0)], vec![rel(0), rel(1)]).unwrap();
        assert_eq!(evaluate_query(&kg, &q).unwrap().answers, vec![ent(2)]);
    }

    #[test]
    fn negation_excludes_candidate() {
        // a=0, b=1, c=2, d=3; (a,r,b) (a,r,c) (d,s,c)
        let kg = KnowledgeGraph::new(
            4,
            2,
            [Triple::new(0, 0, 1), Triple::new(0, 0, 2), Triple::new(3, 1, 2)],
        )
        .unwrap();
        let q = QueryGraph::new(Structure::In2, vec![ent(0), ent(3)], vec![rel(0), rel(1)]).unwrap();
        assert_eq!(evaluate_query(&kg, &q).unwrap().answers, vec![ent(1)]);
    }

    #[test]
    fn negated_variable_atom_is_existential() {
        // pni: r0(a0, v1) & !r1(v1, T) & r2(a1, T)
        // a0=0 -> {1, 2}; a1=3 -> {4, 5}; 1 and 2 both link to 4, only 1 links to 5.
        let kg = KnowledgeGraph::new(
            6,
            3,
            [
                Triple::new(0, 0, 1),
                Triple::new(0, 0, 2),
                Triple::new(3, 2, 4),
                Triple::new(3, 2, 5),
                Triple::new(1, 1, 4),
                Triple::new(2, 1, 4),
                Triple::new(1, 1, 5),
            ],
        )
        .unwrap();
        let q = QueryGraph::new(Structure::Pni, vec![ent(0), ent(3)], vec![rel(0), rel(1), rel(2)])
            .unwrap();
        assert_eq!(evaluate_query(&kg, &q).unwrap().answers, vec![ent(5)]);
    }

    #[test]
    fn arity_is_checked() {
        assert!(QueryGraph::new(Structure::I2, vec![ent(0)], vec![rel(0), rel(1)]).is_err());
        assert!(QueryGraph::new(Structure::P1, vec![ent(0)], vec![rel(0), rel(1)]).is_err());
    }

    #[test]
    fn negation_only_target_is_unsupported() {
        let kg = KnowledgeGraph::new(2, 1, [Triple::new(0, 0, 1)]).unwrap();
        let dnf = vec![vec![Atom::negated(Term::Anchor(ent(0)), rel(0), Var::TARGET)]];
        assert!(matches!(
            answer_entities(&kg, &dnf),
            Err(Error::UnsupportedQuery(_))
        ));
    }

    #[test]
    fn negation_only_on_structures_that_declare_it() {
        for s in Structure::ALL {
            let q = QueryGraph::new(
                s,
                (0..s.num_anchors() as u32).map(EntityId).collect(),
                (0..s.num_relations() as u32).map(RelationId).collect(),
            )
            .unwrap();
            let has_neg = q.dnf().iter().flatten().any(|a| a.negated);
            assert_eq!(has_neg, s.has_negation(), "{s}");
        }
    }

    #[test]
    fn json_roundtrip_and_tamper_detection() {
        let q = QueryGraph::new(Structure::Up, vec![ent(1), ent(2)], vec![rel(0), rel(1), rel(2)])
            .unwrap();
        let text = serde_json::to_string(&q).unwrap();
        let back: QueryGraph = serde_json::from_str(&text).unwrap();
        assert_eq!(back, q);

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["dnf"][0][0]["negated"] = serde_json::Value::Bool(true);
        assert!(serde_json::from_value::<QueryGraph>(v).is_err());

        // atoms are optional on input
        let short = r#"{"structure":"1p","anchors":[3],"relations":[0]}"#;
        let q1: QueryGraph = serde_json::from_str(short).unwrap();
        assert_eq!(q1.structure(), Structure::P1);
    }

    #[test]
    fn split_partitions_answers() {
        let full = KnowledgeGraph::new(3, 1, [Triple::new(0, 0, 1), Triple::new(0, 0, 2)]).unwrap();
        let train = full.filter_triples(|t| t.tail != ent(2));
        let q = QueryGraph::new(Structure::P1, vec![ent(0)], vec![rel(0)]).unwrap();
        let split = evaluate_with_split(&train, &full, &q).unwrap();
        assert_eq!(split.easy, vec![ent(1)]);
        assert_eq!(split.hard, vec![ent(2)]);
    }
}
