//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use nqr_core::basescore::{ScoreTable, ScoreVector, SyntheticScoreConfig};
use nqr_core::baselines::{tune_cosine, write_cosine_csv, COSINE_GRID};
use nqr_core::embed::{load_embeddings, EmbeddingTable};
use nqr_core::evaluation::{aggregate, evaluate, write_curve_csv, write_structure_csv, write_traces, Aggregate, DEFAULT_STEPS};
use nqr_core::model::{table_hash, NqrParameters};
use nqr_core::prefgen::{generate_benchmark, BenchmarkConfig, Dataset, GenerationReport, Split};
use nqr_core::rerank::{CosineConfig, CosineReranker, IdentityReranker, NqrReranker, Reranker};
use nqr_core::synth::{synthesize_base_scores, synthesize_world, SynthConfig, SynthGraphConfig};
use nqr_core::training::{grid_search, train, write_grid_csv, Grid, LossKind, SubsetMode, TrainConfig};
use nqr_core::Preference;
use nqr_service::{Catalog, SessionService, Store};
use serde::Serialize;
use serde_json::Value;

use crate::args::*;
use crate::config::{load_section, merge};
use crate::data::{self, DataDir};
use crate::manifest::Recorder;
use crate::svg::{line_chart, Series};

/// Planted score settings of a data directory, read by `serve` for ad-hoc queries.
pub const SCORE_CONFIG: &str = "scores.json";

pub fn run(cli: Cli) -> Result<()> {
    let name = cli.command.name();
    let file = match &cli.config {
        Some(p) => load_section(p, name)?,
        None => Default::default(),
    };
    let manifest = cli.manifest;
    match cli.command {
        Command::SynthKg(a) => synth_kg(merge(&a, file)?, manifest),
        Command::GenData(a) => gen_data(merge(&a, file)?, manifest),
        Command::Train(a) => train_cmd(merge(&a, file)?, manifest),
        Command::Grid(a) => grid(merge(&a, file)?, manifest),
        Command::TuneCosine(a) => tune_cosine_cmd(merge(&a, file)?, manifest),
        Command::Eval(a) => eval(merge(&a, file)?, manifest),
        Command::Rerank(a) => rerank(merge(&a, file)?, manifest),
        Command::Serve(a) => serve(merge(&a, file)?),
    }
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T> {
    v.clone().with_context(|| format!("--{flag} is required"))
}

fn to_config(v: &impl Serialize) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<PathBuf> {
    let mut w = data::create(path)?;
    serde_json::to_writer_pretty(&mut w, v)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    std::io::Write::flush(&mut w)?;
    Ok(path.to_path_buf())
}

fn write_with(path: &Path, f: impl FnOnce(&mut dyn std::io::Write) -> nqr_core::Result<()>) -> Result<PathBuf> {
    let mut w = data::create(path)?;
    f(&mut w).with_context(|| format!("writing {}", path.display()))?;
    std::io::Write::flush(&mut w)?;
    Ok(path.to_path_buf())
}

fn manifest_path(given: Option<PathBuf>, dir: &Path, command: &str) -> PathBuf {
    given.unwrap_or_else(|| dir.join(format!("{command}.manifest.json")))
}

fn benchmark_config(a: &BenchmarkArgs, seed: u64) -> BenchmarkConfig {
    let d = BenchmarkConfig::default();
    BenchmarkConfig {
        min_answers: a.min_answers.unwrap_or(d.min_answers),
        max_answers: a.max_answers.unwrap_or(d.max_answers),
        per_query: a.per_query.unwrap_or(d.per_query),
        min_fraction: a.min_fraction.unwrap_or(d.min_fraction),
        train_fraction: a.train_fraction.unwrap_or(d.train_fraction),
        seed,
    }
}

fn apply_scores(cfg: &mut SynthConfig, a: &ScoreArgs) {
    cfg.mu_true = a.mu_true.unwrap_or(cfg.mu_true);
    cfg.mu_false = a.mu_false.unwrap_or(cfg.mu_false);
    cfg.sigma = a.sigma.unwrap_or(cfg.sigma);
    cfg.normalize |= a.normalize;
}

fn score_config(cfg: &SynthConfig, seed: u64) -> SyntheticScoreConfig {
    SyntheticScoreConfig {
        mu_true: cfg.mu_true,
        mu_false: cfg.mu_false,
        sigma: cfg.sigma,
        seed,
    }
}

fn write_benchmark(dir: &DataDir, ds: &Dataset, report: &GenerationReport, rec: &mut Recorder) -> Result<()> {
    rec.output(dir.write_dataset(ds)?);
    let stats = dir.path(data::STATS);
    std::fs::write(&stats, ds.stats().render()).with_context(|| format!("writing {}", stats.display()))?;
    rec.output(stats);
    tracing::info!(
        considered = report.considered,
        kept = report.kept,
        too_few_answers = report.too_few_answers,
        too_many_answers = report.too_many_answers,
        too_few_partitions = report.too_few_partitions,
        "benchmark generated"
    );
    print!("{}", ds.stats().render());
    Ok(())
}

fn synth_kg(a: SynthKgArgs, manifest: Option<PathBuf>) -> Result<()> {
    let out = DataDir::new(required(&a.out, "out")?);
    let seed = a.seed.unwrap_or(0);
    let d = SynthConfig::default();
    let g = &d.graph;
    let mut cfg = SynthConfig {
        graph: SynthGraphConfig {
            num_entities: a.entities.unwrap_or(g.num_entities),
            num_relations: a.relations.unwrap_or(g.num_relations),
            num_communities: a.communities.unwrap_or(g.num_communities),
            heads_per_relation: a.heads_per_relation.unwrap_or(g.heads_per_relation),
            min_fanout: a.min_fanout.unwrap_or(g.min_fanout),
            max_fanout: a.max_fanout.unwrap_or(g.max_fanout),
            holdout_fraction: a.holdout.unwrap_or(g.holdout_fraction),
            seed,
        },
        clusters: a.clusters.unwrap_or(d.clusters),
        dim: a.dim.unwrap_or(d.dim),
        spread: a.spread.unwrap_or(d.spread),
        queries_1p: a.queries_1p.unwrap_or(d.queries_1p),
        queries_per_structure: a.queries_per_structure.unwrap_or(d.queries_per_structure),
        seed,
        ..d.clone()
    };
    apply_scores(&mut cfg, &a.scores);
    let bench = benchmark_config(&a.bench, seed);
    cfg.min_answers = bench.min_answers;
    cfg.max_answers = bench.max_answers;
    let score_seed = a.scores.score_seed.unwrap_or(seed);

    let mut rec = Recorder::new("synth-kg", serde_json::json!({ "world": cfg, "benchmark": bench }));
    rec.seed("seed", seed);
    rec.seed("score_seed", score_seed);
    let world = synthesize_world(&cfg)?;
    rec.output(out.write_graph(data::GRAPH_FULL, &world.full)?);
    rec.output(out.write_graph(data::GRAPH_TRAIN, &world.train)?);
    rec.output(out.write_embeddings(&world.table)?);
    rec.output(out.write_queries(&world.queries)?);
    let (ds, report) = generate_benchmark(&world.full, &world.train, &world.queries, &world.table, &bench)?;
    write_benchmark(&out, &ds, &report, &mut rec)?;
    let scores = synthesize_base_scores(&ds, world.table.len(), &cfg, score_seed)?;
    rec.outputs(out.write_scores(&scores)?);
    rec.output(write_json(&out.path(SCORE_CONFIG), &score_config(&cfg, score_seed))?);
    rec.finish(&manifest_path(manifest, &out.root, "synth-kg"))?;
    Ok(())
}

fn gen_data(a: GenDataArgs, manifest: Option<PathBuf>) -> Result<()> {
    let input = DataDir::new(required(&a.data, "data")?);
    let out = DataDir::new(a.out.clone().unwrap_or_else(|| input.root.clone()));
    let seed = a.seed.unwrap_or(0);
    let bench = benchmark_config(&a.bench, seed);
    let mut cfg = SynthConfig::default();
    apply_scores(&mut cfg, &a.scores);
    let score_seed = a.scores.score_seed.unwrap_or(seed);

    let mut rec = Recorder::new("gen-data", serde_json::json!({ "args": to_config(&a), "benchmark": bench }));
    rec.seed("seed", seed);
    let full = input.graph(data::GRAPH_FULL)?;
    let train_graph = if input.has(data::GRAPH_TRAIN) {
        rec.input(input.path(data::GRAPH_TRAIN));
        input.graph(data::GRAPH_TRAIN)?
    } else {
        full.clone()
    };
    let table = input.embeddings()?;
    let queries = input.queries()?;
    for f in [data::GRAPH_FULL, data::EMBEDDINGS, data::QUERIES] {
        rec.input(input.path(f));
    }
    let (ds, report) = generate_benchmark(&full, &train_graph, &queries, &table, &bench)?;
    write_benchmark(&out, &ds, &report, &mut rec)?;
    if a.synthetic_scores {
        rec.seed("score_seed", score_seed);
        let scores = synthesize_base_scores(&ds, table.len(), &cfg, score_seed)?;
        rec.outputs(out.write_scores(&scores)?);
        rec.output(write_json(&out.path(SCORE_CONFIG), &score_config(&cfg, score_seed))?);
    }
    rec.finish(&manifest_path(manifest, &out.root, "gen-data"))?;
    Ok(())
}

/// Embeddings, dataset and base scores of a data directory.
struct Loaded {
    table: Arc<EmbeddingTable>,
    dataset: Dataset,
    scores: ScoreTable,
}

fn load(dir: &DataDir, rec: &mut Recorder) -> Result<Loaded> {
    let table = dir.embeddings()?;
    let dataset = dir.dataset()?;
    let scores = dir.scores(table.len())?;
    for f in [data::EMBEDDINGS, data::DATASET, data::SCORES, data::SCORE_IDS] {
        rec.input(dir.path(f));
    }
    Ok(Loaded {
        table: Arc::new(table),
        dataset,
        scores,
    })
}

fn train_config(o: &OptimArgs, lr: Option<f64>, margin: Option<f64>, kl: Option<f64>) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        learning_rate: lr.unwrap_or(d.learning_rate),
        margin: margin.unwrap_or(d.margin),
        kl_weight: kl.unwrap_or(d.kl_weight),
        epochs: o.epochs.unwrap_or(d.epochs),
        batch_size: o.batch_size.unwrap_or(d.batch_size),
        seed: o.seed.unwrap_or(d.seed),
        loss: match o.loss {
            Some(LossArg::Ranknet) => LossKind::RankNet,
            Some(LossArg::MarginKl) | None => LossKind::MarginKl,
        },
        subset_mode: if o.prefix_subsets {
            SubsetMode::Prefix
        } else {
            SubsetMode::Subset
        },
    }
}

fn save_checkpoint(path: &Path, params: &NqrParameters, table: &EmbeddingTable) -> Result<PathBuf> {
    let hash = table_hash(table);
    write_with(path, |w| params.save(w, &hash))
}

fn train_cmd(a: TrainArgs, manifest: Option<PathBuf>) -> Result<()> {
    let dir = DataDir::new(required(&a.data, "data")?);
    let out = required(&a.out, "out")?;
    let cfg = train_config(&a.optim, a.learning_rate, a.margin, a.kl_weight);
    let mut rec = Recorder::new("train", to_config(&cfg));
    rec.seed("seed", cfg.seed);
    let l = load(&dir, &mut rec)?;
    let outcome = train(&l.dataset, &l.scores, &l.table, &cfg)?;
    if outcome.skipped_non_1p > 0 {
        tracing::warn!(skipped = outcome.skipped_non_1p, "non-1p training queries skipped");
    }
    rec.output(save_checkpoint(&out, &outcome.params, &l.table)?);
    let curve = write_json(&out.with_extension("loss.json"), &outcome.loss_curve)?;
    rec.output(curve);
    println!(
        "trained on {} examples; final loss {:.6}",
        outcome.examples,
        outcome.loss_curve.last().copied().unwrap_or(f64::NAN)
    );
    let dir_of = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("train");
    rec.finish(&manifest.unwrap_or_else(|| dir_of.join(format!("{stem}.manifest.json"))))?;
    Ok(())
}

fn grid(a: GridArgs, manifest: Option<PathBuf>) -> Result<()> {
    let dir = DataDir::new(required(&a.data, "data")?);
    let out = required(&a.out, "out")?;
    let base = train_config(&a.optim, None, None, None);
    let d = Grid::default();
    let grid = Grid {
        learning_rates: a.learning_rates.clone().unwrap_or(d.learning_rates),
        margins: a.margins.clone().unwrap_or(d.margins),
        kl_weights: a.kl_weights.clone().unwrap_or(d.kl_weights),
    };
    let mut rec = Recorder::new("grid", serde_json::json!({ "base": base, "grid": grid }));
    rec.seed("seed", base.seed);
    let l = load(&dir, &mut rec)?;
    let outcome = grid_search(&l.dataset, &l.scores, l.table.clone(), &base, &grid)?;
    rec.output(write_with(&out.join("grid.csv"), |w| write_grid_csv(&outcome.rows, w))?);
    rec.output(save_checkpoint(&out.join("best.ckpt"), &outcome.best_params, &l.table)?);
    rec.output(write_json(&out.join("best.json"), &outcome.best)?);
    println!(
        "{} configurations; best lr {} margin {} kl {}",
        outcome.rows.len(),
        outcome.best.learning_rate,
        outcome.best.margin,
        outcome.best.kl_weight
    );
    rec.finish(&manifest_path(manifest, &out, "grid"))?;
    Ok(())
}

fn split_of(s: Option<SplitArg>, default: Split) -> Split {
    match s {
        Some(SplitArg::Train) => Split::Train,
        Some(SplitArg::Valid) => Split::Valid,
        Some(SplitArg::Test) => Split::Test,
        None => default,
    }
}

fn tune_cosine_cmd(a: TuneCosineArgs, manifest: Option<PathBuf>) -> Result<()> {
    let dir = DataDir::new(required(&a.data, "data")?);
    let out = required(&a.out, "out")?;
    let split = split_of(a.split, Split::Valid);
    let grid = a.grid.clone().unwrap_or(COSINE_GRID.to_vec());
    let mut rec = Recorder::new("tune-cosine", serde_json::json!({ "split": split, "grid": grid }));
    let l = load(&dir, &mut rec)?;
    let instances: Vec<_> = l.dataset.split(split).collect();
    let (best, rows) = tune_cosine(&instances, &l.scores, l.table.clone(), &grid)?;
    rec.output(write_with(&out.join("cosine.csv"), |w| write_cosine_csv(&rows, w))?);
    rec.output(write_json(&out.join("best.json"), &best)?);
    println!("best alpha_p {} alpha_n {}", best.alpha_p, best.alpha_n);
    rec.finish(&manifest_path(manifest, &out, "tune-cosine"))?;
    Ok(())
}

fn cosine_config(ap: Option<f64>, an: Option<f64>, file: Option<&Path>) -> Result<Option<CosineConfig>> {
    let from_file = match file {
        Some(p) => Some(serde_json::from_reader::<_, CosineConfig>(data::open(p)?).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    Ok(match (ap.or(from_file.map(|c| c.alpha_p)), an.or(from_file.map(|c| c.alpha_n))) {
        (Some(p), Some(n)) => Some(CosineConfig::new(p, n)?),
        (None, None) => None,
        _ => bail!("the cosine baseline needs both --alpha-p and --alpha-n"),
    })
}

fn build_reranker(a: &RerankerArgs, table: Arc<EmbeddingTable>, rec: &mut Recorder) -> Result<Box<dyn Reranker>> {
    Ok(match a.reranker.unwrap_or(RerankerArg::Identity) {
        RerankerArg::Identity => Box::new(IdentityReranker),
        RerankerArg::Cosine => {
            if let Some(p) = &a.cosine_config {
                rec.input(p);
            }
            let cfg = cosine_config(a.alpha_p, a.alpha_n, a.cosine_config.as_deref())?
                .context("--reranker cosine needs --alpha-p/--alpha-n or --cosine-config")?;
            Box::new(CosineReranker::new(cfg, table))
        }
        RerankerArg::Nqr => {
            let p = required(&a.checkpoint, "checkpoint")?;
            let params = NqrParameters::load(data::open(&p)?, &table).with_context(|| format!("loading {}", p.display()))?;
            rec.input(&p);
            Box::new(NqrReranker::new(Arc::new(params), table)?)
        }
    })
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    reranker: String,
    split: Split,
    steps: usize,
    #[serde(flatten)]
    aggregate: &'a Aggregate,
}

fn eval(a: EvalArgs, manifest: Option<PathBuf>) -> Result<()> {
    let dir = DataDir::new(required(&a.data, "data")?);
    let out = required(&a.out, "out")?;
    let split = split_of(a.split, Split::Test);
    let steps = a.steps.unwrap_or(DEFAULT_STEPS);
    let mut rec = Recorder::new("eval", to_config(&a));
    let l = load(&dir, &mut rec)?;
    let reranker = build_reranker(&a.reranker, l.table.clone(), &mut rec)?;
    let traces = evaluate(reranker.as_ref(), l.dataset.split(split), &l.scores, steps)?;
    let agg = aggregate(&traces)?;
    let name = reranker.name();
    rec.output(write_with(&out.join("traces.jsonl"), |w| write_traces(&traces, w))?);
    rec.output(write_with(&out.join("structures.csv"), |w| write_structure_csv(&agg, &name, w))?);
    rec.output(write_with(&out.join("curve.csv"), |w| write_curve_csv(&agg, w))?);
    let summary = EvalSummary {
        reranker: name.clone(),
        split,
        steps,
        aggregate: &agg,
    };
    rec.output(write_json(&out.join("summary.json"), &summary)?);
    if a.svg {
        let pa: Vec<(f64, f64)> = agg.curve.iter().map(|c| (c.t as f64, c.pa)).collect();
        let mrr: Vec<(f64, f64)> = agg.curve.iter().map(|c| (c.t as f64, c.metrics.mrr)).collect();
        let chart = line_chart(
            &name,
            "t",
            &[
                Series { name: "PA", color: "#1f77b4", points: pa },
                Series { name: "MRR", color: "#d62728", points: mrr },
            ],
        );
        let p = out.join("curve.svg");
        std::fs::write(&p, chart).with_context(|| format!("writing {}", p.display()))?;
        rec.output(p);
    }
    println!(
        "{name}: {} traces; AvPA {:.4} AvMRR {:.4} (base PA {:.4} MRR {:.4})",
        agg.traces, agg.av_pa, agg.av_mrr, agg.base_pa, agg.base.mrr
    );
    rec.finish(&manifest_path(manifest, &out, "eval"))?;
    Ok(())
}

fn rerank(a: RerankArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut rec = Recorder::new("rerank", to_config(&a));
    let data_dir = a.data.clone().map(DataDir::new);
    let emb_path = match (&a.embeddings, &data_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(d)) => d.path(data::EMBEDDINGS),
        (None, None) => bail!("--embeddings or --data is required"),
    };
    let table = Arc::new(load_embeddings(data::open(&emb_path)?, None).with_context(|| format!("reading {}", emb_path.display()))?);
    rec.input(&emb_path);
    let base: Vec<f64> = match (&a.base, &data_dir, a.query) {
        (Some(p), _, _) => {
            rec.input(p);
            serde_json::from_reader(data::open(p)?).with_context(|| format!("reading {}", p.display()))?
        }
        (None, Some(d), Some(q)) => {
            let scores = d.scores(table.len())?;
            scores.get(q).with_context(|| format!("no base scores for query {q}"))?.scores.clone()
        }
        _ => bail!("--base, or --data with --query, is required"),
    };
    ScoreVector::new(0, base.clone())?;
    anyhow::ensure!(base.len() == table.len(), "{} base scores for {} entities", base.len(), table.len());
    let pairs: Vec<Preference> = match &a.preferences {
        Some(p) => {
            rec.input(p);
            serde_json::from_reader(data::open(p)?).with_context(|| format!("reading {}", p.display()))?
        }
        None => Vec::new(),
    };
    let reranker = build_reranker(&a.reranker, table, &mut rec)?;
    let adjusted = reranker.rerank(&base, &pairs)?;
    match &a.out {
        Some(p) => {
            let mut w = data::create(p)?;
            serde_json::to_writer(&mut w, &adjusted)?;
            std::io::Write::write_all(&mut w, b"\n")?;
            std::io::Write::flush(&mut w)?;
            rec.output(p);
            let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
            rec.finish(&manifest.unwrap_or_else(|| dir.join("rerank.manifest.json")))?;
        }
        None => {
            println!("{}", serde_json::to_string(&adjusted)?);
            if let Some(m) = manifest {
                rec.finish(&m)?;
            }
        }
    }
    Ok(())
}

fn parse_checkpoint(spec: &str) -> (&str, &str) {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name, path),
        _ => (nqr_service::catalog::DEFAULT_CHECKPOINT, spec),
    }
}

fn serve(a: ServeArgs) -> Result<()> {
    let dir = DataDir::new(required(&a.data, "data")?);
    let table = Arc::new(dir.embeddings()?);
    let dataset = dir.dataset()?;
    let scores = dir.scores(table.len())?;
    let mut catalog = Catalog::new(table.clone(), dataset, scores)?;
    if let Some(labels) = dir.entity_labels(table.len())? {
        catalog = catalog.with_labels(labels)?;
    }
    if dir.has(data::GRAPH_FULL) {
        let score_cfg: SyntheticScoreConfig = if dir.has(SCORE_CONFIG) {
            serde_json::from_reader(data::open(&dir.path(SCORE_CONFIG))?)?
        } else {
            score_config(&SynthConfig::default(), 0)
        };
        catalog = catalog.with_graph(dir.graph(data::GRAPH_FULL)?, score_cfg)?;
    }
    for spec in a.checkpoint.iter().flatten() {
        let (name, path) = parse_checkpoint(spec);
        let params = NqrParameters::load(data::open(Path::new(path))?, &table).with_context(|| format!("loading {path}"))?;
        catalog = catalog.with_checkpoint(name, params)?;
    }
    if let Some(cfg) = cosine_config(a.alpha_p, a.alpha_n, a.cosine_config.as_deref())? {
        catalog = catalog.with_default_cosine(cfg);
    }
    let catalog = Arc::new(catalog);
    let service = match &a.store {
        Some(p) => SessionService::open(catalog, Store::open(p)?)?,
        None => SessionService::in_memory(catalog),
    };
    let addr: std::net::SocketAddr = a
        .addr
        .as_deref()
        .unwrap_or("127.0.0.1:8080")
        .parse()
        .context("invalid --addr")?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(nqr_service::serve(Arc::new(service), addr))?;
    Ok(())
}
