//! Benchmark datasets: queries with exact answers and generated preference
//! sets, stored as JSON lines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::preference::PreferenceSet;
use crate::query::{evaluate_with_split, AnswerSet, QueryGraph, Structure};
use crate::seed::rng_for;

use super::partition::preference_sets_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryInstance {
    pub id: u64,
    pub split: Split,
    pub query: QueryGraph,
    pub answers: AnswerSet,
    pub preference_sets: Vec<PreferenceSet>,
}

impl QueryInstance {
    pub fn structure(&self) -> Structure {
        self.query.structure()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub instances: Vec<QueryInstance>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &QueryInstance> {
        self.instances.iter().filter(move |q| q.split == split)
    }

    pub fn get(&self, id: u64) -> Option<&QueryInstance> {
        self.instances.iter().find(|q| q.id == id)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for inst in &self.instances {
            serde_json::to_writer(&mut out, inst)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut instances = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let inst = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            instances.push(inst);
        }
        Ok(Self { instances })
    }

    /// Query and preference-set counts per split and structure.
    pub fn stats(&self) -> DatasetStats {
        let mut stats = DatasetStats::default();
        for inst in &self.instances {
            let cell = stats
                .cells
                .entry((inst.split, inst.structure()))
                .or_default();
            cell.0 += 1;
            cell.1 += inst.preference_sets.len();
        }
        stats
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetStats {
    /// (split, structure) -> (queries, preference sets)
    pub cells: BTreeMap<(Split, Structure), (usize, usize)>,
}

impl DatasetStats {
    pub fn queries(&self, split: Split) -> usize {
        self.split_totals(split).0
    }

    pub fn preference_sets(&self, split: Split) -> usize {
        self.split_totals(split).1
    }

    fn split_totals(&self, split: Split) -> (usize, usize) {
        self.cells
            .iter()
            .filter(|((s, _), _)| *s == split)
            .fold((0, 0), |acc, (_, c)| (acc.0 + c.0, acc.1 + c.1))
    }

    /// Tab-separated table: one "Queries" and one "Preferences" row per
    /// split, one column per structure, then the total.
    pub fn render(&self) -> String {
        let mut out = String::from("split\trow");
        for s in Structure::ALL {
            let _ = write!(out, "\t{s}");
        }
        out.push_str("\ttotal\n");
        for split in Split::ALL {
            for (label, pick) in [("queries", 0usize), ("preferences", 1)] {
                let _ = write!(out, "{}\t{label}", split.name());
                let mut total = 0;
                for s in Structure::ALL {
                    let c = self.cells.get(&(split, s)).copied().unwrap_or((0, 0));
                    let v = if pick == 0 { c.0 } else { c.1 };
                    total += v;
                    let _ = write!(out, "\t{v}");
                }
                let _ = writeln!(out, "\t{total}");
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub min_answers: usize,
    pub max_answers: usize,
    pub per_query: usize,
    pub min_fraction: f64,
    /// Share of 1p queries assigned to the training split.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            min_answers: 10,
            max_answers: 100,
            per_query: 5,
            min_fraction: 0.2,
            train_fraction: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub considered: usize,
    pub kept: usize,
    pub too_few_answers: usize,
    pub too_many_answers: usize,
    /// Queries whose dendrogram yielded fewer than `per_query` distinct sets.
    pub too_few_partitions: usize,
}

/// Builds a dataset from candidate queries.
///
/// Queries keep their index in `queries` as id. Answers come from `full`;
/// those also derivable on `train_graph` are marked easy. Only 1p queries can
/// land in the training split. A query is kept only if it has between
/// `min_answers` and `max_answers` answers and yields exactly `per_query`
/// preference sets.
pub fn generate_benchmark(
    full: &KnowledgeGraph,
    train_graph: &KnowledgeGraph,
    queries: &[QueryGraph],
    table: &EmbeddingTable,
    cfg: &BenchmarkConfig,
) -> Result<(Dataset, GenerationReport)> {
    let mut report = GenerationReport::default();
    let mut instances = Vec::new();
    for (idx, q) in queries.iter().enumerate() {
        report.considered += 1;
        q.validate_against(full)?;
        let answers = evaluate_with_split(train_graph, full, q)?;
        if answers.len() < cfg.min_answers {
            report.too_few_answers += 1;
            continue;
        }
        if answers.len() > cfg.max_answers {
            report.too_many_answers += 1;
            continue;
        }
        let sets = preference_sets_for(&answers.answers, table, cfg.min_fraction, cfg.per_query)?;
        if sets.len() < cfg.per_query {
            report.too_few_partitions += 1;
            continue;
        }
        let id = idx as u64;
        let mut rng = rng_for(cfg.seed, id);
        let split = if q.structure() == Structure::P1 && rng.random::<f64>() < cfg.train_fraction {
            Split::Train
        } else if rng.random::<bool>() {
            Split::Valid
        } else {
            Split::Test
        };
        let preference_sets = sets
            .into_iter()
            .map(|s| {
                let mut order: Vec<usize> = (0..s.len()).collect();
                order.shuffle(&mut rng);
                s.reordered(&order)
            })
            .collect();
        instances.push(QueryInstance {
            id,
            split,
            query: q.clone(),
            answers,
            preference_sets,
        });
        report.kept += 1;
    }
    Ok((Dataset { instances }, report))
}
