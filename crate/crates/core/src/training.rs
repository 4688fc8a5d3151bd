//! Training objectives, interaction-subset sampling, the training loop and
//! hyperparameter grid search.

use std::io::Write;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basescore::ScoreTable;
use crate::diffcore::{Adam, AdamConfig, Tensor2};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::evaluation::{aggregate, evaluate, Aggregate, DEFAULT_STEPS};
use crate::kg::EntityId;
use crate::model::{NqrParameters, PreparedNqr};
use crate::preference::{has_both_sides, split_sides, Preference};
use crate::prefgen::{Dataset, QueryInstance, Split};
use crate::query::Structure;
use crate::rerank::NqrReranker;
use crate::seed::derive_seed;

fn score(adjusted: &[f64], e: EntityId) -> Result<f64> {
    adjusted.get(e.index()).copied().ok_or(Error::MissingEntity(e.0))
}

fn check_sides(pos: &[EntityId], neg: &[EntityId]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument(
            "preference loss needs preferred and non-preferred entities".into(),
        ));
    }
    Ok(())
}

/// `sum_{e+} sum_{e-} max(0, gamma + a[e-] - a[e+])`
pub fn margin_preference_loss(
    adjusted: &[f64],
    pos: &[EntityId],
    neg: &[EntityId],
    gamma: f64,
) -> Result<f64> {
    Ok(margin_with_grad(adjusted, pos, neg, gamma, None)?)
}

fn margin_with_grad(
    adjusted: &[f64],
    pos: &[EntityId],
    neg: &[EntityId],
    gamma: f64,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    check_sides(pos, neg)?;
    let mut loss = 0.0;
    for &p in pos {
        let ap = score(adjusted, p)?;
        for &n in neg {
            let h = gamma + score(adjusted, n)? - ap;
            if h > 0.0 {
                loss += h;
                if let Some(g) = grad.as_deref_mut() {
                    g[p.index()] -= 1.0;
                    g[n.index()] += 1.0;
                }
            }
        }
    }
    Ok(loss)
}

/// `sum_{e+} sum_{e-} -log sigmoid(a[e+] - a[e-])`
pub fn ranknet_loss(adjusted: &[f64], pos: &[EntityId], neg: &[EntityId]) -> Result<f64> {
    ranknet_with_grad(adjusted, pos, neg, None)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn ranknet_with_grad(
    adjusted: &[f64],
    pos: &[EntityId],
    neg: &[EntityId],
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    check_sides(pos, neg)?;
    let mut loss = 0.0;
    for &p in pos {
        let ap = score(adjusted, p)?;
        for &n in neg {
            let x = ap - score(adjusted, n)?;
            loss += softplus(-x);
            if let Some(g) = grad.as_deref_mut() {
                let s = sigmoid(-x);
                g[p.index()] -= s;
                g[n.index()] += s;
            }
        }
    }
    Ok(loss)
}

fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

/// `KL(softmax(base) || softmax(adjusted))`, in log space.
pub fn kl_answer_loss(base: &[f64], adjusted: &[f64]) -> Result<f64> {
    Ok(kl_with_grad(base, adjusted, false)?.0)
}

/// Returns the loss and, if requested, gradients with respect to the
/// adjusted and the base scores.
fn kl_with_grad(base: &[f64], adjusted: &[f64], grads: bool) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if base.len() != adjusted.len() {
        return Err(Error::Shape(format!(
            "KL between vectors of length {} and {}",
            base.len(),
            adjusted.len()
        )));
    }
    let lu = log_softmax(base);
    let lv = log_softmax(adjusted);
    let mut loss = 0.0;
    for (a, b) in lu.iter().zip(&lv) {
        loss += a.exp() * (a - b);
    }
    if !grads {
        return Ok((loss.max(0.0), vec![], vec![]));
    }
    let grad_adj: Vec<f64> = lu.iter().zip(&lv).map(|(a, b)| b.exp() - a.exp()).collect();
    let grad_base: Vec<f64> = lu
        .iter()
        .zip(&lv)
        .map(|(a, b)| a.exp() * ((a - b) - loss))
        .collect();
    Ok((loss.max(0.0), grad_adj, grad_base))
}

/// Margin preference loss plus `lambda` times the KL answer loss.
pub fn total_loss(
    adjusted: &[f64],
    base: &[f64],
    pos: &[EntityId],
    neg: &[EntityId],
    gamma: f64,
    lambda: f64,
) -> Result<f64> {
    Ok(margin_preference_loss(adjusted, pos, neg, gamma)? + lambda * kl_answer_loss(base, adjusted)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "margin+kl")]
    MarginKl,
    #[serde(rename = "ranknet")]
    RankNet,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "margin+kl" | "margin-kl" | "nqr" => Ok(LossKind::MarginKl),
            "ranknet" => Ok(LossKind::RankNet),
            other => Err(Error::InvalidArgument(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub kind: LossKind,
    pub margin: f64,
    pub kl_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_adjusted: Vec<f64>,
    pub grad_base: Vec<f64>,
}

impl Objective {
    /// Loss for one sampled preference subset, with gradients with respect
    /// to the adjusted scores and (through the KL term) the base scores.
    pub fn evaluate(&self, adjusted: &[f64], base: &[f64], pairs: &[Preference]) -> Result<LossGrad> {
        let (pos, neg) = split_sides(pairs);
        let n = adjusted.len();
        let mut grad_adjusted = vec![0.0; n];
        let mut grad_base = vec![0.0; n];
        let loss = match self.kind {
            LossKind::RankNet => ranknet_with_grad(adjusted, &pos, &neg, Some(&mut grad_adjusted))?,
            LossKind::MarginKl => {
                let pref = margin_with_grad(adjusted, &pos, &neg, self.margin, Some(&mut grad_adjusted))?;
                if self.kl_weight == 0.0 {
                    pref
                } else {
                    let (kl, ga, gb) = kl_with_grad(base, adjusted, true)?;
                    for i in 0..n {
                        grad_adjusted[i] += self.kl_weight * ga[i];
                        grad_base[i] += self.kl_weight * gb[i];
                    }
                    pref + self.kl_weight * kl
                }
            }
        };
        Ok(LossGrad {
            loss,
            grad_adjusted,
            grad_base,
        })
    }
}

/// Loss and complete gradients for one preference subset: parameter
/// gradients in `tensors()` order and the gradient with respect to `base`.
pub fn loss_and_grad(
    params: &NqrParameters,
    table: &EmbeddingTable,
    base: &[f64],
    pairs: &[Preference],
    objective: &Objective,
) -> Result<(f64, Vec<Tensor2>, Vec<f64>)> {
    let prepared = PreparedNqr::new(params, table)?;
    let mut grads = params.zero_grads();
    let mut grad_projected = prepared.zero_projected_grad();
    let (loss, grad_base) =
        accumulate(&prepared, base, pairs, objective, &mut grads, &mut grad_projected)?;
    prepared.finish_grads(&grad_projected, &mut grads)?;
    Ok((loss, grads, grad_base))
}

fn accumulate(
    prepared: &PreparedNqr<'_>,
    base: &[f64],
    pairs: &[Preference],
    objective: &Objective,
    grads: &mut [Tensor2],
    grad_projected: &mut Tensor2,
) -> Result<(f64, Vec<f64>)> {
    let fwd = prepared.forward(base, pairs)?;
    let lg = objective.evaluate(&fwd.adjusted, base, pairs)?;
    let mut grad_base =
        prepared.backward(&fwd, base, &lg.grad_adjusted, grads, grad_projected)?;
    grad_base.iter_mut().zip(&lg.grad_base).for_each(|(a, b)| *a += b);
    Ok((lg.loss, grad_base))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetMode {
    /// Uniformly drawn subsets, kept in stored order.
    #[default]
    Subset,
    /// The first `t` pairs.
    Prefix,
}

/// Draws `t ~ U{1..T}` and returns `t` pairs in stored order.
pub fn sample_interaction_subset<R: Rng + ?Sized>(
    pairs: &[Preference],
    mode: SubsetMode,
    rng: &mut R,
) -> Result<Vec<Preference>> {
    if pairs.is_empty() {
        return Err(Error::EmptyPreferences);
    }
    let t = rng.random_range(1..=pairs.len());
    Ok(match mode {
        SubsetMode::Prefix => pairs[..t].to_vec(),
        SubsetMode::Subset => {
            let mut idx = index::sample(rng, pairs.len(), t).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| pairs[i]).collect()
        }
    })
}

const MAX_RESAMPLES: usize = 1000;

/// Resamples until both labels are present; falls back to the full set.
pub fn sample_training_subset<R: Rng + ?Sized>(
    pairs: &[Preference],
    mode: SubsetMode,
    rng: &mut R,
) -> Result<Vec<Preference>> {
    for _ in 0..MAX_RESAMPLES {
        let s = sample_interaction_subset(pairs, mode, rng)?;
        if has_both_sides(&s) {
            return Ok(s);
        }
    }
    Ok(pairs.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub margin: f64,
    pub kl_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossKind,
    #[serde(default)]
    pub subset_mode: SubsetMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            margin: 0.1,
            kl_weight: 1.0,
            epochs: 300,
            batch_size: 32,
            seed: 0,
            loss: LossKind::MarginKl,
            subset_mode: SubsetMode::Subset,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.loss == LossKind::MarginKl && !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if !(self.kl_weight >= 0.0) {
            return bad("KL weight must be non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning rate must be non-negative");
        }
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        Objective {
            kind: self.loss,
            margin: self.margin,
            kl_weight: self.kl_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: NqrParameters,
    /// Mean sampled loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Training instances that were not 1p queries and were skipped.
    pub skipped_non_1p: usize,
    /// (query, preference set) pairs used per epoch.
    pub examples: usize,
}

/// Trains on the 1p queries of the training split. Each epoch visits every
/// (query, preference set) pair once in shuffled order, sampling a fresh
/// interaction subset for each.
pub fn train(
    dataset: &Dataset,
    scores: &ScoreTable,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut skipped_non_1p = 0;
    let mut instances: Vec<&QueryInstance> = Vec::new();
    for inst in dataset.split(Split::Train) {
        if inst.structure() == Structure::P1 {
            instances.push(inst);
        } else {
            skipped_non_1p += 1;
        }
    }
    let mut examples: Vec<(&[f64], &[Preference])> = Vec::new();
    for inst in &instances {
        let base = scores
            .get(inst.id)
            .ok_or_else(|| Error::InvalidArgument(format!("no base scores for query {}", inst.id)))?;
        if base.len() != table.len() {
            return Err(Error::Shape(format!(
                "query {} has {} scores, table has {} entities",
                inst.id,
                base.len(),
                table.len()
            )));
        }
        for set in &inst.preference_sets {
            if set.has_both_sides() {
                examples.push((&base.scores, set.pairs()));
            }
        }
    }
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no usable training examples".into()));
    }

    let mut params = NqrParameters::init(table.dim(), derive_seed(cfg.seed, 0));
    let mut adam = Adam::new(AdamConfig::new(cfg.learning_rate), params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let objective = cfg.objective();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let subsets = batch
                .iter()
                .map(|&i| sample_training_subset(examples[i].1, cfg.subset_mode, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let (grads, batch_loss) = {
                let prepared = PreparedNqr::new(&params, table)?;
                let mut grads = params.zero_grads();
                let mut grad_projected = prepared.zero_projected_grad();
                let mut batch_loss = 0.0;
                for (&i, subset) in batch.iter().zip(&subsets) {
                    let (loss, _) = accumulate(
                        &prepared,
                        examples[i].0,
                        subset,
                        &objective,
                        &mut grads,
                        &mut grad_projected,
                    )?;
                    batch_loss += loss;
                }
                prepared.finish_grads(&grad_projected, &mut grads)?;
                let k = 1.0 / batch.len() as f64;
                grads.iter_mut().for_each(|g| g.scale(k));
                (grads, batch_loss)
            };
            adam.step(params.tensors_mut(), &grads)?;
            epoch_loss += batch_loss;
        }
        loss_curve.push(epoch_loss / examples.len() as f64);
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("trained parameters".into()));
    }
    Ok(TrainOutcome {
        params,
        loss_curve,
        skipped_non_1p,
        examples: examples.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub learning_rates: Vec<f64>,
    pub margins: Vec<f64>,
    pub kl_weights: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-5, 1e-4],
            margins: vec![0.05, 0.1, 0.25],
            kl_weights: vec![0.1, 1.0, 10.0],
        }
    }
}

impl Grid {
    pub fn configs(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rates {
            for &margin in &self.margins {
                for &kl_weight in &self.kl_weights {
                    out.push(TrainConfig {
                        learning_rate,
                        margin,
                        kl_weight,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub learning_rate: f64,
    pub margin: f64,
    pub kl_weight: f64,
    pub av_pa: f64,
    pub av_mrr: f64,
    pub objective: f64,
    pub final_loss: f64,
}

/// Picks the row with the largest objective; the first one wins ties.
pub fn select_best(rows: &[GridRow]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if best.is_none_or(|b| r.objective > rows[b].objective) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub best: TrainConfig,
    pub best_params: NqrParameters,
    pub rows: Vec<GridRow>,
}

/// Trains one model per grid point and scores it on the validation split
/// by AvPA + AvMRR.
pub fn grid_search(
    dataset: &Dataset,
    scores: &ScoreTable,
    table: Arc<EmbeddingTable>,
    base: &TrainConfig,
    grid: &Grid,
) -> Result<GridOutcome> {
    let configs = grid.configs(base);
    if configs.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    let mut rows = Vec::with_capacity(configs.len());
    let mut models = Vec::with_capacity(configs.len());
    for cfg in &configs {
        let outcome = train(dataset, scores, &table, cfg)?;
        let agg = validation_aggregate(dataset, scores, table.clone(), &outcome.params)?;
        rows.push(GridRow {
            learning_rate: cfg.learning_rate,
            margin: cfg.margin,
            kl_weight: cfg.kl_weight,
            av_pa: agg.av_pa,
            av_mrr: agg.av_mrr,
            objective: agg.objective(),
            final_loss: outcome.loss_curve.last().copied().unwrap_or(f64::NAN),
        });
        models.push(outcome.params);
    }
    let best = select_best(&rows).expect("nonempty");
    Ok(GridOutcome {
        best: configs[best].clone(),
        best_params: models.swap_remove(best),
        rows,
    })
}

pub fn validation_aggregate(
    dataset: &Dataset,
    scores: &ScoreTable,
    table: Arc<EmbeddingTable>,
    params: &NqrParameters,
) -> Result<Aggregate> {
    let reranker = NqrReranker::new(Arc::new(params.clone()), table)?;
    let traces = evaluate(&reranker, dataset.split(Split::Valid), scores, DEFAULT_STEPS)?;
    aggregate(&traces)
}

pub fn write_grid_csv<W: Write>(rows: &[GridRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
