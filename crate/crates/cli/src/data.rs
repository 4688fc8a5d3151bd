//! The on-disk layout of a data directory.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nqr_core::basescore::{load_scores, ScoreTable};
use nqr_core::embed::{load_embeddings, EmbeddingTable};
use nqr_core::kg::{load_graph, write_graph, LabelMode};
use nqr_core::prefgen::Dataset;
use nqr_core::query::QueryGraph;
use nqr_core::KnowledgeGraph;

pub const GRAPH_FULL: &str = "graph_full.tsv";
pub const GRAPH_TRAIN: &str = "graph_train.tsv";
pub const EMBEDDINGS: &str = "embeddings.bin";
pub const ENTITY_LABELS: &str = "entities.txt";
pub const QUERIES: &str = "queries.jsonl";
pub const DATASET: &str = "dataset.jsonl";
pub const SCORES: &str = "scores.bin";
pub const SCORE_IDS: &str = "scores.ids";
pub const STATS: &str = "stats.tsv";

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

#[derive(Debug, Clone)]
pub struct DataDir {
    pub root: PathBuf,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn has(&self, name: &str) -> bool {
        self.path(name).exists()
    }

    /// Graphs use decimal entity and relation ids.
    pub fn graph(&self, name: &str) -> Result<KnowledgeGraph> {
        let p = self.path(name);
        load_graph(open(&p)?, LabelMode::Numeric, None, None).with_context(|| format!("reading {}", p.display()))
    }

    pub fn write_graph(&self, name: &str, kg: &KnowledgeGraph) -> Result<PathBuf> {
        let p = self.path(name);
        let mut w = create(&p)?;
        write_graph(kg, &mut w)?;
        w.flush()?;
        Ok(p)
    }

    pub fn embeddings(&self) -> Result<EmbeddingTable> {
        let p = self.path(EMBEDDINGS);
        load_embeddings(open(&p)?, None).with_context(|| format!("reading {}", p.display()))
    }

    pub fn write_embeddings(&self, table: &EmbeddingTable) -> Result<PathBuf> {
        let p = self.path(EMBEDDINGS);
        let mut w = create(&p)?;
        table.save(&mut w)?;
        w.flush()?;
        Ok(p)
    }

    /// One label per line, line `i` naming entity `i`; ids when absent.
    pub fn entity_labels(&self, n: usize) -> Result<Option<Vec<String>>> {
        if !self.has(ENTITY_LABELS) {
            return Ok(None);
        }
        let labels: Vec<String> = open(&self.path(ENTITY_LABELS))?.lines().collect::<std::io::Result<_>>()?;
        anyhow::ensure!(labels.len() == n, "{ENTITY_LABELS} has {} lines for {n} entities", labels.len());
        Ok(Some(labels))
    }

    pub fn queries(&self) -> Result<Vec<QueryGraph>> {
        let p = self.path(QUERIES);
        let mut out = Vec::new();
        for (i, line) in open(&p)?.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", p.display(), i + 1))?);
        }
        Ok(out)
    }

    pub fn write_queries(&self, queries: &[QueryGraph]) -> Result<PathBuf> {
        let p = self.path(QUERIES);
        let mut w = create(&p)?;
        for q in queries {
            serde_json::to_writer(&mut w, q)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(p)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let p = self.path(DATASET);
        Dataset::read_jsonl(open(&p)?).with_context(|| format!("reading {}", p.display()))
    }

    pub fn write_dataset(&self, ds: &Dataset) -> Result<PathBuf> {
        let p = self.path(DATASET);
        let mut w = create(&p)?;
        ds.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(p)
    }

    pub fn scores(&self, num_entities: usize) -> Result<ScoreTable> {
        load_scores(
            open(&self.path(SCORES))?,
            open(&self.path(SCORE_IDS))?,
            Some(num_entities),
            false,
        )
        .context("reading base scores")
    }

    pub fn write_scores(&self, scores: &ScoreTable) -> Result<Vec<PathBuf>> {
        let (m, s) = (self.path(SCORES), self.path(SCORE_IDS));
        let mut mw = create(&m)?;
        let mut sw = create(&s)?;
        scores.save(&mut mw, &mut sw)?;
        mw.flush()?;
        sw.flush()?;
        Ok(vec![m, s])
    }
}
