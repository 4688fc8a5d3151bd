//! Pairwise accuracy, filtered ranking metrics, the alternating interactive
//! protocol and its aggregates.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::basescore::ScoreTable;
use crate::error::{Error, Result};
use crate::kg::EntityId;
use crate::preference::{split_sides, Preference, PreferenceSet};
use crate::prefgen::QueryInstance;
use crate::query::Structure;
use crate::ranking::filtered_ranks;
use crate::rerank::Reranker;

pub const DEFAULT_STEPS: usize = 10;

/// Fraction of (preferred, non-preferred) pairs whose preferred entity
/// scores strictly higher. Ties count as failures.
pub fn pairwise_accuracy(scores: &[f64], pos: &[EntityId], neg: &[EntityId]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::UndefinedMetric("pairwise accuracy needs both sides"));
    }
    let get = |e: &EntityId| scores.get(e.index()).copied().ok_or(Error::MissingEntity(e.0));
    let neg_scores = neg.iter().map(get).collect::<Result<Vec<_>>>()?;
    let mut wins = 0usize;
    for e in pos {
        let s = get(e)?;
        wins += neg_scores.iter().filter(|&&n| s > n).count();
    }
    Ok(wins as f64 / (pos.len() * neg.len()) as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl RankingMetrics {
    fn add(&mut self, o: &RankingMetrics) {
        self.mrr += o.mrr;
        self.hits1 += o.hits1;
        self.hits3 += o.hits3;
        self.hits10 += o.hits10;
    }

    fn scaled(mut self, k: f64) -> Self {
        self.mrr *= k;
        self.hits1 *= k;
        self.hits3 *= k;
        self.hits10 *= k;
        self
    }
}

/// Mean filtered reciprocal rank and hits over the answers of one query.
/// `answers` must be sorted.
pub fn ranking_metrics(scores: &[f64], answers: &[EntityId]) -> Result<RankingMetrics> {
    if answers.is_empty() {
        return Err(Error::UndefinedMetric("ranking metrics need an answer"));
    }
    let ranks = filtered_ranks(scores, answers)?;
    let mut m = RankingMetrics::default();
    for r in ranks {
        m.mrr += 1.0 / r as f64;
        m.hits1 += (r <= 1) as u8 as f64;
        m.hits3 += (r <= 3) as u8 as f64;
        m.hits10 += (r <= 10) as u8 as f64;
    }
    Ok(m.scaled(1.0 / answers.len() as f64))
}

/// Reveal order: preferred first, then alternating; once one side runs out
/// the other continues in stored order.
pub fn reveal_order(pairs: &[Preference]) -> Vec<Preference> {
    let (pos, neg): (Vec<&Preference>, Vec<&Preference>) =
        pairs.iter().partition(|p| p.label.is_preferred());
    let mut out = Vec::with_capacity(pairs.len());
    let (mut i, mut j) = (0, 0);
    while i < pos.len() || j < neg.len() {
        let want_pos = out.len() % 2 == 0;
        if (want_pos && i < pos.len()) || j >= neg.len() {
            out.push(*pos[i]);
            i += 1;
        } else {
            out.push(*neg[j]);
            j += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub revealed: Preference,
    /// `None` when the preference set lacks one side.
    pub pa: Option<f64>,
    #[serde(flatten)]
    pub metrics: RankingMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionTrace {
    pub query: u64,
    pub structure: Structure,
    pub set_index: usize,
    pub reranker: String,
    pub base_pa: Option<f64>,
    pub base: RankingMetrics,
    pub steps: Vec<StepRecord>,
}

impl InteractionTrace {
    /// Mean PA over the steps, if defined.
    pub fn av_pa(&self) -> Option<f64> {
        let pas: Vec<f64> = self.steps.iter().filter_map(|s| s.pa).collect();
        (!pas.is_empty()).then(|| pas.iter().sum::<f64>() / pas.len() as f64)
    }

    pub fn av_mrr(&self) -> f64 {
        if self.steps.is_empty() {
            return self.base.mrr;
        }
        self.steps.iter().map(|s| s.metrics.mrr).sum::<f64>() / self.steps.len() as f64
    }
}

/// Reveals up to `max_steps` pairs of `set` and records metrics after each,
/// always reranking from `base`. PA is measured over the whole set.
pub fn run_protocol(
    reranker: &dyn Reranker,
    instance: &QueryInstance,
    set_index: usize,
    base: &[f64],
    max_steps: usize,
) -> Result<InteractionTrace> {
    let set: &PreferenceSet = instance
        .preference_sets
        .get(set_index)
        .ok_or_else(|| Error::InvalidArgument(format!("query {} has no set {set_index}", instance.id)))?;
    let (pos, neg) = split_sides(set.pairs());
    let answers = &instance.answers.answers;
    let pa_of = |scores: &[f64]| -> Result<Option<f64>> {
        if pos.is_empty() || neg.is_empty() {
            Ok(None)
        } else {
            pairwise_accuracy(scores, &pos, &neg).map(Some)
        }
    };
    let order = reveal_order(set.pairs());
    let steps_to_run = max_steps.min(order.len());
    let mut steps = Vec::with_capacity(steps_to_run);
    for t in 1..=steps_to_run {
        let scores = reranker.rerank(base, &order[..t])?;
        steps.push(StepRecord {
            t,
            revealed: order[t - 1],
            pa: pa_of(&scores)?,
            metrics: ranking_metrics(&scores, answers)?,
        });
    }
    Ok(InteractionTrace {
        query: instance.id,
        structure: instance.structure(),
        set_index,
        reranker: reranker.name(),
        base_pa: pa_of(base)?,
        base: ranking_metrics(base, answers)?,
        steps,
    })
}

/// Runs the protocol on every preference set of every instance.
pub fn evaluate<'a>(
    reranker: &dyn Reranker,
    instances: impl IntoIterator<Item = &'a QueryInstance>,
    scores: &ScoreTable,
    max_steps: usize,
) -> Result<Vec<InteractionTrace>> {
    let mut traces = Vec::new();
    for inst in instances {
        let base = scores
            .get(inst.id)
            .ok_or_else(|| Error::InvalidArgument(format!("no base scores for query {}", inst.id)))?;
        for k in 0..inst.preference_sets.len() {
            traces.push(run_protocol(reranker, inst, k, &base.scores, max_steps)?);
        }
    }
    Ok(traces)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: usize,
    pub traces: usize,
    pub pa: f64,
    #[serde(flatten)]
    pub metrics: RankingMetrics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StructureRow {
    pub traces: usize,
    pub av_pa: f64,
    pub av_mrr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub traces: usize,
    pub av_pa: f64,
    pub av_mrr: f64,
    pub base_pa: f64,
    pub base: RankingMetrics,
    pub per_structure: BTreeMap<Structure, StructureRow>,
    /// Index `t - 1` holds the mean over traces that reached step `t`.
    pub curve: Vec<CurvePoint>,
}

impl Aggregate {
    pub fn at(&self, t: usize) -> Option<&CurvePoint> {
        self.curve.get(t.checked_sub(1)?)
    }

    /// Validation objective: AvPA + AvMRR.
    pub fn objective(&self) -> f64 {
        self.av_pa + self.av_mrr
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Per-trace means first, then means over traces. Traces without a defined
/// PA are left out of the PA means only.
pub fn aggregate(traces: &[InteractionTrace]) -> Result<Aggregate> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("no traces to aggregate".into()));
    }
    let pa_of = |ts: &[&InteractionTrace]| mean(&ts.iter().filter_map(|t| t.av_pa()).collect::<Vec<_>>());
    let mrr_of = |ts: &[&InteractionTrace]| mean(&ts.iter().map(|t| t.av_mrr()).collect::<Vec<_>>());
    let all: Vec<&InteractionTrace> = traces.iter().collect();

    let mut by_structure: BTreeMap<Structure, Vec<&InteractionTrace>> = BTreeMap::new();
    for t in traces {
        by_structure.entry(t.structure).or_default().push(t);
    }
    let per_structure = by_structure
        .iter()
        .map(|(s, ts)| {
            (
                *s,
                StructureRow {
                    traces: ts.len(),
                    av_pa: pa_of(ts),
                    av_mrr: mrr_of(ts),
                },
            )
        })
        .collect();

    let longest = traces.iter().map(|t| t.steps.len()).max().unwrap_or(0);
    let mut curve = Vec::with_capacity(longest);
    for t in 1..=longest {
        let steps: Vec<&StepRecord> = traces.iter().filter_map(|tr| tr.steps.get(t - 1)).collect();
        let mut m = RankingMetrics::default();
        steps.iter().for_each(|s| m.add(&s.metrics));
        curve.push(CurvePoint {
            t,
            traces: steps.len(),
            pa: mean(&steps.iter().filter_map(|s| s.pa).collect::<Vec<_>>()),
            metrics: m.scaled(1.0 / steps.len() as f64),
        });
    }
    let mut base = RankingMetrics::default();
    traces.iter().for_each(|t| base.add(&t.base));
    Ok(Aggregate {
        traces: traces.len(),
        av_pa: pa_of(&all),
        av_mrr: mrr_of(&all),
        base_pa: mean(&traces.iter().filter_map(|t| t.base_pa).collect::<Vec<_>>()),
        base: base.scaled(1.0 / traces.len() as f64),
        per_structure,
        curve,
    })
}

pub fn write_traces<W: Write>(traces: &[InteractionTrace], mut out: W) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_traces<R: BufRead>(input: R) -> Result<Vec<InteractionTrace>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// One row per metric (AvPA, AvMRR), one column per query structure present,
/// then the overall mean.
pub fn write_structure_csv<W: Write>(agg: &Aggregate, label: &str, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["method".to_string(), "metric".to_string()];
    header.extend(agg.per_structure.keys().map(|s| s.to_string()));
    header.push("avg".into());
    w.write_record(&header).map_err(csv_err)?;
    for (metric, overall) in [("AvPA", agg.av_pa), ("AvMRR", agg.av_mrr)] {
        let mut row = vec![label.to_string(), metric.to_string()];
        for r in agg.per_structure.values() {
            let v = if metric == "AvPA" { r.av_pa } else { r.av_mrr };
            row.push(format!("{v:.6}"));
        }
        row.push(format!("{overall:.6}"));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-step means; the `t = 0` row holds base-score metrics.
pub fn write_curve_csv<W: Write>(agg: &Aggregate, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "traces", "pa", "mrr", "hits1", "hits3", "hits10"])
        .map_err(csv_err)?;
    let fmt = |v: f64| format!("{v:.6}");
    w.write_record([
        "0".to_string(),
        agg.traces.to_string(),
        fmt(agg.base_pa),
        fmt(agg.base.mrr),
        fmt(agg.base.hits1),
        fmt(agg.base.hits3),
        fmt(agg.base.hits10),
    ])
    .map_err(csv_err)?;
    for p in &agg.curve {
        w.write_record([
            p.t.to_string(),
            p.traces.to_string(),
            fmt(p.pa),
            fmt(p.metrics.mrr),
            fmt(p.metrics.hits1),
            fmt(p.metrics.hits3),
            fmt(p.metrics.hits10),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
