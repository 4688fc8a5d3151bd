//! The neural query reranker.
//!
//! A set encoder turns the labelled preference rows `[emb(e) || label]` into
//! a vector `m` (self-attention, layer norm, a ReLU projection, mean pool).
//! An MLP on `[m || emb(e) || base(e)]` with a tanh head then produces an
//! additive adjustment in (-1, 1) for every entity.

use std::borrow::Cow;
use std::cell::Cell;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::diffcore::layers::{mean_pool, mean_pool_backward};
use crate::diffcore::{Activation, Cache, Checkpoint, LayerNorm, Linear, SelfAttention, Tensor2};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::kg::EntityId;
use crate::preference::Preference;

pub const TENSOR_NAMES: [&str; 11] = [
    "attention.wq",
    "attention.wk",
    "attention.wv",
    "norm.gain",
    "norm.bias",
    "fc1.weight",
    "fc1.bias",
    "adjust1.weight",
    "adjust1.bias",
    "adjust2.weight",
    "adjust2.bias",
];

const ADJUST1_WEIGHT: usize = 7;
const ADJUST1_BIAS: usize = 8;
const ADJUST2_WEIGHT: usize = 9;
const ADJUST2_BIAS: usize = 10;

thread_local! {
    static ATTENTION_PASSES: Cell<usize> = const { Cell::new(0) };
}

/// Number of preference-encoder passes run on this thread so far.
pub fn attention_passes() -> usize {
    ATTENTION_PASSES.with(Cell::get)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NqrParameters {
    dim: usize,
    pub attention: SelfAttention,
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub adjust1: Linear,
    pub adjust2: Linear,
}

impl NqrParameters {
    pub fn init(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            dim,
            attention: SelfAttention::init(dim + 1, &mut rng),
            norm: LayerNorm::new(dim + 1),
            fc1: Linear::init(dim + 1, dim, Activation::Relu, &mut rng),
            adjust1: Linear::init(2 * dim + 1, dim, Activation::Relu, &mut rng),
            adjust2: Linear::init(dim, 1, Activation::Tanh, &mut rng),
        }
    }

    /// Zeroes the output head so the model leaves every score untouched.
    pub fn with_zero_head(mut self) -> Self {
        self.adjust2.weight.fill(0.0);
        self.adjust2.bias.fill(0.0);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tensors(&self) -> Vec<&Tensor2> {
        vec![
            &self.attention.wq,
            &self.attention.wk,
            &self.attention.wv,
            &self.norm.gain,
            &self.norm.bias,
            &self.fc1.weight,
            &self.fc1.bias,
            &self.adjust1.weight,
            &self.adjust1.bias,
            &self.adjust2.weight,
            &self.adjust2.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        vec![
            &mut self.attention.wq,
            &mut self.attention.wk,
            &mut self.attention.wv,
            &mut self.norm.gain,
            &mut self.norm.bias,
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.adjust1.weight,
            &mut self.adjust1.bias,
            &mut self.adjust2.weight,
            &mut self.adjust2.bias,
        ]
    }

    /// Zero tensors shaped like the parameters, in `tensors()` order.
    pub fn zero_grads(&self) -> Vec<Tensor2> {
        self.tensors()
            .iter()
            .map(|t| Tensor2::zeros(t.rows(), t.cols()))
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data().len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn unflatten(&mut self, values: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.data().len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn to_checkpoint(&self, vocab_hash: &str) -> Checkpoint {
        Checkpoint {
            dim: self.dim,
            vocab_hash: vocab_hash.to_string(),
            tensors: TENSOR_NAMES
                .iter()
                .zip(self.tensors())
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut params = Self::init(ck.dim, 0);
        for (name, slot) in TENSOR_NAMES.iter().zip(params.tensors_mut()) {
            let t = ck.tensor(name)?;
            if !t.same_shape(slot) {
                return Err(Error::Shape(format!(
                    "checkpoint tensor `{name}` is {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(params)
    }

    pub fn save<W: Write>(&self, out: W, vocab_hash: &str) -> Result<()> {
        self.to_checkpoint(vocab_hash).write(out)
    }

    /// Loads a checkpoint and checks it was trained against `table`.
    pub fn load<R: Read>(input: R, table: &EmbeddingTable) -> Result<Self> {
        let ck = Checkpoint::read(input)?;
        if ck.dim != table.dim() {
            return Err(Error::Shape(format!(
                "checkpoint dimension {} does not match embedding dimension {}",
                ck.dim,
                table.dim()
            )));
        }
        let expected = table_hash(table);
        if ck.vocab_hash != expected {
            return Err(Error::Format(format!(
                "checkpoint was trained on embedding table {}, not {expected}",
                ck.vocab_hash
            )));
        }
        Self::from_checkpoint(&ck)
    }
}

/// Fingerprint of an embedding table: shape plus the f32 image of its values.
pub fn table_hash(table: &EmbeddingTable) -> String {
    let mut h = Sha256::new();
    h.update((table.len() as u64).to_le_bytes());
    h.update((table.dim() as u64).to_le_bytes());
    for v in table.as_slice() {
        h.update((*v as f32).to_le_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

/// The `t x (d + 1)` matrix of rows `[emb(e_i) || l_i]`.
pub fn preference_matrix(table: &EmbeddingTable, pairs: &[Preference]) -> Result<Tensor2> {
    if pairs.is_empty() {
        return Err(Error::EmptyPreferences);
    }
    let d = table.dim();
    let mut m = Tensor2::zeros(pairs.len(), d + 1);
    for (i, p) in pairs.iter().enumerate() {
        let row = m.row_mut(i);
        row[..d].copy_from_slice(table.get(p.entity)?);
        row[d] = p.label.value();
    }
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct EmbedCache {
    attention: Cache,
    norm: Cache,
    fc1: Cache,
    pool: Cache,
}

fn embed_forward(params: &NqrParameters, m: &Tensor2) -> Result<(Vec<f64>, EmbedCache)> {
    if m.cols() != params.dim + 1 {
        return Err(Error::Shape(format!(
            "preference rows have width {}, model expects {}",
            m.cols(),
            params.dim + 1
        )));
    }
    ATTENTION_PASSES.with(|c| c.set(c.get() + 1));
    let (x, attention) = params.attention.forward(m)?;
    let (x, norm) = params.norm.forward(&x)?;
    let (x, fc1) = params.fc1.forward(&x)?;
    let (x, pool) = mean_pool(&x)?;
    Ok((
        x.into_data(),
        EmbedCache {
            attention,
            norm,
            fc1,
            pool,
        },
    ))
}

/// Adds the encoder's parameter gradients into `grads[0..7]` and returns
/// the gradient with respect to the preference matrix.
fn embed_backward(
    params: &NqrParameters,
    cache: &EmbedCache,
    grad_m: &[f64],
    grads: &mut [Tensor2],
) -> Result<Tensor2> {
    let g = Tensor2::row_vector(grad_m.to_vec());
    let g = mean_pool_backward(&cache.pool, &g)?;
    let (g, fc1) = params.fc1.backward(&cache.fc1, &g)?;
    let (g, norm) = params.norm.backward(&cache.norm, &g)?;
    let (g, attention) = params.attention.backward(&cache.attention, &g)?;
    for (slot, grad) in grads[..7].iter_mut().zip(attention.iter().chain(&norm).chain(&fc1)) {
        slot.add_assign(grad);
    }
    Ok(g)
}

/// The preference embedding `m` (length d).
pub fn embed_preferences(
    params: &NqrParameters,
    table: &EmbeddingTable,
    pairs: &[Preference],
) -> Result<Vec<f64>> {
    let m = preference_matrix(table, pairs)?;
    Ok(embed_forward(params, &m)?.0)
}

/// Adjusted score of a single entity given a precomputed preference
/// embedding. Runs the adjustment MLP on the concatenated input row.
pub fn adjust_score(
    params: &NqrParameters,
    e: EntityId,
    base: f64,
    m: &[f64],
    table: &EmbeddingTable,
) -> Result<f64> {
    if m.len() != params.dim {
        return Err(Error::Shape(format!("preference embedding has length {}", m.len())));
    }
    let mut row = Vec::with_capacity(2 * params.dim + 1);
    row.extend_from_slice(m);
    row.extend_from_slice(table.get(e)?);
    row.push(base);
    let (h, _) = params.adjust1.forward(&Tensor2::row_vector(row))?;
    let (y, _) = params.adjust2.forward(&h)?;
    Ok(base + y.get(0, 0))
}

/// Adjusted score vector for `base` under the preference pairs.
pub fn rerank(
    params: &NqrParameters,
    base: &[f64],
    pairs: &[Preference],
    table: &EmbeddingTable,
) -> Result<Vec<f64>> {
    PreparedNqr::new(params, table)?.rerank(base, pairs)
}

/// A model bound to an embedding table with the entity half of the first
/// adjustment layer precomputed, so each rerank costs O(|V| d + t^2 d).
#[derive(Debug, Clone)]
pub struct PreparedNqr<'a> {
    params: &'a NqrParameters,
    table: &'a EmbeddingTable,
    /// `E W_e^T`, one row per entity.
    projected: Cow<'a, Tensor2>,
}

/// Intermediates of one adjusted-score computation.
#[derive(Debug, Clone)]
pub struct Forward {
    pub m: Vec<f64>,
    embed: EmbedCache,
    /// Post-ReLU hidden activations, one row per entity.
    hidden: Tensor2,
    /// tanh head outputs.
    head: Vec<f64>,
    pub adjusted: Vec<f64>,
}

impl<'a> PreparedNqr<'a> {
    pub fn new(params: &'a NqrParameters, table: &'a EmbeddingTable) -> Result<Self> {
        if table.dim() != params.dim {
            return Err(Error::Shape(format!(
                "embedding dimension {} does not match model dimension {}",
                table.dim(),
                params.dim
            )));
        }
        let d = params.dim;
        let entities = Tensor2::from_vec(table.len(), d, table.as_slice().to_vec())?;
        let w_e = params.adjust1.weight.columns(d, 2 * d);
        let projected = Cow::Owned(entities.matmul_nt(&w_e)?);
        Ok(Self {
            params,
            table,
            projected,
        })
    }

    /// Reuses a projection computed earlier for the same parameters.
    pub fn with_projection(
        params: &'a NqrParameters,
        table: &'a EmbeddingTable,
        projected: &'a Tensor2,
    ) -> Self {
        Self {
            params,
            table,
            projected: Cow::Borrowed(projected),
        }
    }

    pub fn into_projected(self) -> Tensor2 {
        self.projected.into_owned()
    }

    pub fn params(&self) -> &NqrParameters {
        self.params
    }

    pub fn rerank(&self, base: &[f64], pairs: &[Preference]) -> Result<Vec<f64>> {
        Ok(self.forward(base, pairs)?.adjusted)
    }

    pub fn forward(&self, base: &[f64], pairs: &[Preference]) -> Result<Forward> {
        let n = self.table.len();
        if base.len() != n {
            return Err(Error::Shape(format!(
                "base vector has {} scores, table has {n} entities",
                base.len()
            )));
        }
        let d = self.params.dim;
        let pm = preference_matrix(self.table, pairs)?;
        let (m, embed) = embed_forward(self.params, &pm)?;
        let w1 = &self.params.adjust1.weight;
        // shared part of the first adjustment layer: W_m m + b
        let mut shared = self.params.adjust1.bias.row(0).to_vec();
        for (k, s) in shared.iter_mut().enumerate() {
            *s += crate::diffcore::tensor::dot(&w1.row(k)[..d], &m);
        }
        let w_base: Vec<f64> = (0..d).map(|k| w1.get(k, 2 * d)).collect();
        let w2 = self.params.adjust2.weight.row(0);
        let b2 = self.params.adjust2.bias.get(0, 0);
        let mut hidden = Tensor2::zeros(n, d);
        let mut head = Vec::with_capacity(n);
        let mut adjusted = Vec::with_capacity(n);
        for e in 0..n {
            let p = self.projected.row(e);
            let h = hidden.row_mut(e);
            let mut z = b2;
            for k in 0..d {
                let v = (shared[k] + p[k] + w_base[k] * base[e]).max(0.0);
                h[k] = v;
                z += w2[k] * v;
            }
            let y = z.tanh();
            head.push(y);
            adjusted.push(base[e] + y);
        }
        Ok(Forward {
            m,
            embed,
            hidden,
            head,
            adjusted,
        })
    }

    /// Backpropagates `grad_adjusted` (dL/d adjusted scores).
    ///
    /// Parameter gradients are added into `grads` (in `tensors()` order),
    /// except the entity block of the first adjustment layer, whose gradient
    /// is `grad_projected^T E`: rows of `grad_projected` are accumulated here
    /// and folded in by [`finish_grads`] once per batch. Returns dL/d base.
    pub fn backward(
        &self,
        fwd: &Forward,
        base: &[f64],
        grad_adjusted: &[f64],
        grads: &mut [Tensor2],
        grad_projected: &mut Tensor2,
    ) -> Result<Vec<f64>> {
        let n = self.table.len();
        let d = self.params.dim;
        if grad_adjusted.len() != n || grads.len() != TENSOR_NAMES.len() {
            return Err(Error::Shape("backward inputs".into()));
        }
        let w1 = &self.params.adjust1.weight;
        let w_base: Vec<f64> = (0..d).map(|k| w1.get(k, 2 * d)).collect();
        let w2 = self.params.adjust2.weight.row(0).to_vec();
        let mut grad_base = grad_adjusted.to_vec();
        let mut grad_shared = vec![0.0; d];
        let mut grad_w_base = vec![0.0; d];
        let mut grad_pre = vec![0.0; d];
        for e in 0..n {
            let g = grad_adjusted[e];
            if g == 0.0 {
                continue;
            }
            let dz = g * (1.0 - fwd.head[e] * fwd.head[e]);
            let h = fwd.hidden.row(e);
            {
                let gw2 = grads[ADJUST2_WEIGHT].row_mut(0);
                for k in 0..d {
                    gw2[k] += dz * h[k];
                }
            }
            grads[ADJUST2_BIAS].data_mut()[0] += dz;
            let mut gb = 0.0;
            for k in 0..d {
                grad_pre[k] = if h[k] > 0.0 { dz * w2[k] } else { 0.0 };
                grad_shared[k] += grad_pre[k];
                grad_w_base[k] += grad_pre[k] * base[e];
                gb += grad_pre[k] * w_base[k];
            }
            grad_base[e] += gb;
            grad_projected
                .row_mut(e)
                .iter_mut()
                .zip(&grad_pre)
                .for_each(|(a, &b)| *a += b);
        }
        let mut grad_m = vec![0.0; d];
        {
            let gw1 = &mut grads[ADJUST1_WEIGHT];
            for k in 0..d {
                let row = gw1.row_mut(k);
                for j in 0..d {
                    row[j] += grad_shared[k] * fwd.m[j];
                }
                row[2 * d] += grad_w_base[k];
            }
        }
        for k in 0..d {
            grads[ADJUST1_BIAS].data_mut()[k] += grad_shared[k];
            let row = w1.row(k);
            for j in 0..d {
                grad_m[j] += grad_shared[k] * row[j];
            }
        }
        embed_backward(self.params, &fwd.embed, &grad_m, grads)?;
        Ok(grad_base)
    }

    /// Folds the accumulated entity-block gradient into `grads`.
    pub fn finish_grads(&self, grad_projected: &Tensor2, grads: &mut [Tensor2]) -> Result<()> {
        let d = self.params.dim;
        let entities = Tensor2::from_vec(self.table.len(), d, self.table.as_slice().to_vec())?;
        let block = grad_projected.matmul_tn(&entities)?;
        let gw1 = &mut grads[ADJUST1_WEIGHT];
        for k in 0..d {
            let row = gw1.row_mut(k);
            row[d..2 * d]
                .iter_mut()
                .zip(block.row(k))
                .for_each(|(a, &b)| *a += b);
        }
        Ok(())
    }

    pub fn zero_projected_grad(&self) -> Tensor2 {
        Tensor2::zeros(self.table.len(), self.params.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{synthesize_embeddings, SynthEmbeddingConfig};

    fn table(n: usize, dim: usize) -> EmbeddingTable {
        let cfg = SynthEmbeddingConfig {
            n_clusters: 3,
            dim,
            spread: 0.3,
            seed: 5,
        };
        synthesize_embeddings(n, &cfg).unwrap().0
    }

    fn pairs() -> Vec<Preference> {
        vec![
            Preference::preferred(1),
            Preference::non_preferred(4),
            Preference::preferred(7),
        ]
    }

    #[test]
    fn zero_head_is_identity() {
        let t = table(12, 8);
        let p = NqrParameters::init(8, 1).with_zero_head();
        let base: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(rerank(&p, &base, &pairs(), &t).unwrap(), base);
    }

    #[test]
    fn shapes_follow_dim() {
        let t = table(10, 6);
        let p = NqrParameters::init(6, 2);
        assert_eq!(p.attention.dim(), 7);
        assert_eq!(p.fc1.input_dim(), 7);
        assert_eq!(p.adjust1.input_dim(), 13);
        assert_eq!(preference_matrix(&t, &pairs()).unwrap().shape(), (3, 7));
        assert_eq!(embed_preferences(&p, &t, &pairs()).unwrap().len(), 6);
    }

    #[test]
    fn batch_matches_single_entity_path() {
        let t = table(15, 8);
        let p = NqrParameters::init(8, 3);
        let base: Vec<f64> = (0..15).map(|i| i as f64 / 15.0).collect();
        let m = embed_preferences(&p, &t, &pairs()).unwrap();
        let all = rerank(&p, &base, &pairs(), &t).unwrap();
        for e in 0..15 {
            let single = adjust_score(&p, EntityId(e as u32), base[e], &m, &t).unwrap();
            assert!((single - all[e]).abs() < 1e-12);
            assert!((all[e] - base[e]).abs() < 1.0);
        }
    }

    #[test]
    fn one_encoder_pass_per_rerank() {
        let t = table(20, 4);
        let p = NqrParameters::init(4, 4);
        let base = vec![0.5; 20];
        let before = attention_passes();
        rerank(&p, &base, &pairs(), &t).unwrap();
        assert_eq!(attention_passes() - before, 1);
    }

    #[test]
    fn errors_on_bad_inputs() {
        let t = table(10, 4);
        let p = NqrParameters::init(4, 0);
        assert!(matches!(
            rerank(&p, &[0.0; 10], &[], &t),
            Err(Error::EmptyPreferences)
        ));
        assert!(rerank(&p, &[0.0; 10], &[Preference::preferred(99)], &t).is_err());
        assert!(rerank(&p, &[0.0; 9], &pairs(), &t).is_err());
        let wrong = NqrParameters::init(5, 0);
        assert!(rerank(&wrong, &[0.0; 10], &pairs(), &t).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_checks_table() {
        let t = table(10, 4);
        let p = NqrParameters::init(4, 9);
        let mut buf = Vec::new();
        p.save(&mut buf, &table_hash(&t)).unwrap();
        assert_eq!(NqrParameters::load(buf.as_slice(), &t).unwrap(), p);
        let other = table(11, 4);
        assert!(NqrParameters::load(buf.as_slice(), &other).is_err());
    }

    #[test]
    fn flatten_roundtrip() {
        let p = NqrParameters::init(3, 1);
        let mut q = NqrParameters::init(3, 2);
        q.unflatten(&p.flatten());
        assert_eq!(p, q);
        assert_eq!(p.flatten().len(), p.num_parameters());
    }
}
