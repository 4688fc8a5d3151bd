//! Slow, obviously-correct reference implementations used as test oracles.

#![allow(dead_code)]

use nqr_core::kg::{EntityId, KnowledgeGraph};
use nqr_core::query::{Atom, QueryGraph, Term, Var};
use nqr_core::{Label, Preference};

/// Answers by enumerating every binding of every variable in each branch.
/// A target value is an answer iff some binding of the remaining variables
/// satisfies all positive atoms and falsifies all negated ones.
pub fn brute_force_answers(kg: &KnowledgeGraph, q: &QueryGraph) -> Vec<EntityId> {
    let n = kg.num_entities() as u32;
    let mut out = Vec::new();
    for target in 0..n {
        let hit = q.dnf().iter().any(|branch| {
            let mut vars: Vec<u8> = branch
                .iter()
                .flat_map(|a| {
                    let mut v = vec![a.object.0];
                    if let Term::Var(s) = a.subject {
                        v.push(s.0);
                    }
                    v
                })
                .filter(|&v| v != 0)
                .collect();
            vars.sort_unstable();
            vars.dedup();
            any_binding(kg, branch, target, &vars, &mut vec![None; 8], 0)
        });
        if hit {
            out.push(EntityId(target));
        }
    }
    out
}

fn any_binding(
    kg: &KnowledgeGraph,
    branch: &[Atom],
    target: u32,
    vars: &[u8],
    binding: &mut Vec<Option<u32>>,
    depth: usize,
) -> bool {
    if depth == vars.len() {
        let value = |v: Var| if v.0 == 0 { target } else { binding[v.0 as usize].unwrap() };
        return branch.iter().all(|a| {
            let s = match a.subject {
                Term::Anchor(e) => e.0,
                Term::Var(v) => value(v),
            };
            let holds = kg
                .triples()
                .iter()
                .any(|t| t.head.0 == s && t.relation == a.relation && t.tail.0 == value(a.object));
            holds != a.negated
        });
    }
    for x in 0..kg.num_entities() as u32 {
        binding[vars[depth] as usize] = Some(x);
        if any_binding(kg, branch, target, vars, binding, depth + 1) {
            return true;
        }
    }
    false
}

/// One merge of the naive clustering: member sets of both sides as node ids
/// plus the linkage distance.
#[derive(Debug, Clone)]
pub struct NaiveMerge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
}

fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let uv: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let uu: f64 = u.iter().map(|a| a * a).sum();
    let vv: f64 = v.iter().map(|a| a * a).sum();
    (1.0 - uv / (uu.sqrt() * vv.sqrt())).clamp(0.0, 2.0)
}

/// Average linkage recomputed from scratch at every step: O(n^3) pairs of
/// clusters, each averaging all member pairs. Ties within `tol` go to the
/// smallest `(left, right)` node ids.
pub fn naive_hac(vectors: &[Vec<f64>], tol: f64) -> Vec<NaiveMerge> {
    let n = vectors.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::new();
    while clusters.len() > 1 {
        let mut cands = Vec::new();
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let (ma, mb) = (&clusters[a].1, &clusters[b].1);
                let mut sum = 0.0;
                for &i in ma {
                    for &j in mb {
                        sum += cosine_distance(&vectors[i], &vectors[j]);
                    }
                }
                let d = sum / (ma.len() * mb.len()) as f64;
                let (l, r) = (clusters[a].0.min(clusters[b].0), clusters[a].0.max(clusters[b].0));
                cands.push((d, l, r, a, b));
            }
        }
        let best = cands.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        let &(d, l, r, a, b) = cands
            .iter()
            .filter(|c| c.0 <= best + tol)
            .min_by_key(|c| (c.1, c.2))
            .unwrap();
        let mut members = clusters[a].1.clone();
        members.extend(&clusters[b].1);
        let id = n + merges.len();
        clusters.remove(b);
        clusters.remove(a);
        clusters.push((id, members));
        merges.push(NaiveMerge { left: l, right: r, distance: d });
    }
    merges
}

/// Positions after a stable descending sort; equal scores share the worst
/// position of their group.
fn pessimistic_positions(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut pos = vec![0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &e in &order[i..=j] {
            pos[e] = j;
        }
        i = j + 1;
    }
    pos
}

/// Pairwise accuracy from sorted positions: a pair counts when the preferred
/// entity sits strictly above the other.
pub fn pa_by_sort(scores: &[f64], pos: &[EntityId], neg: &[EntityId]) -> f64 {
    let p = pessimistic_positions(scores);
    let mut wins = 0;
    for a in pos {
        for b in neg {
            if p[a.index()] < p[b.index()] {
                wins += 1;
            }
        }
    }
    wins as f64 / (pos.len() * neg.len()) as f64
}

/// Filtered MRR: each answer is ranked after deleting every other answer,
/// ties counted against it.
pub fn mrr_by_enumeration(scores: &[f64], answers: &[EntityId]) -> f64 {
    let mut total = 0.0;
    for a in answers {
        let kept: Vec<usize> = (0..scores.len())
            .filter(|i| *i == a.index() || !answers.iter().any(|b| b.index() == *i))
            .collect();
        let sub: Vec<f64> = kept.iter().map(|&i| scores[i]).collect();
        let at = kept.iter().position(|&i| i == a.index()).unwrap();
        total += 1.0 / (pessimistic_positions(&sub)[at] + 1) as f64;
    }
    total / answers.len() as f64
}

pub fn sides(pairs: &[Preference]) -> (Vec<EntityId>, Vec<EntityId>) {
    let pos = pairs.iter().filter(|p| p.label == Label::Preferred).map(|p| p.entity).collect();
    let neg = pairs.iter().filter(|p| p.label == Label::NonPreferred).map(|p| p.entity).collect();
    (pos, neg)
}

pub fn margin_by_enumeration(a: &[f64], pos: &[EntityId], neg: &[EntityId], gamma: f64) -> f64 {
    let mut terms = Vec::new();
    for p in pos {
        for n in neg {
            terms.push((gamma + a[n.index()] - a[p.index()]).max(0.0));
        }
    }
    terms.iter().sum()
}

pub fn ranknet_by_enumeration(a: &[f64], pos: &[EntityId], neg: &[EntityId]) -> f64 {
    let mut total = 0.0;
    for p in pos {
        for n in neg {
            let x = a[p.index()] - a[n.index()];
            total += -(1.0 / (1.0 + (-x).exp())).ln();
        }
    }
    total
}

fn naive_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// `sum u_i ln(u_i / v_i)` with both distributions formed explicitly.
pub fn kl_direct(base: &[f64], adjusted: &[f64]) -> f64 {
    let u = naive_softmax(base);
    let v = naive_softmax(adjusted);
    u.iter().zip(&v).map(|(a, b)| if *a == 0.0 { 0.0 } else { a * (a / b).ln() }).sum()
}

/// The cosine baseline as a double loop over entities and revealed pairs.
pub fn cosine_double_loop(base: &[f64], pairs: &[Preference], rows: &[Vec<f64>], ap: f64, an: f64) -> Vec<f64> {
    let mut out = base.to_vec();
    for (e, slot) in out.iter_mut().enumerate() {
        for p in pairs {
            let s = 1.0 - cosine_distance_unclamped(&rows[p.entity.index()], &rows[e]);
            *slot += if p.label == Label::Preferred { ap * s } else { -an * s };
        }
    }
    out
}

fn cosine_distance_unclamped(u: &[f64], v: &[f64]) -> f64 {
    let uv: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let uu: f64 = u.iter().map(|a| a * a).sum();
    let vv: f64 = v.iter().map(|a| a * a).sum();
    1.0 - uv / (uu.sqrt() * vv.sqrt())
}

fn mat(t: &nqr_core::diffcore::Tensor2) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// `x W` with plain loops.
fn times(x: &[Vec<f64>], w: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            (0..w[0].len())
                .map(|j| row.iter().enumerate().map(|(k, v)| v * w[k][j]).sum())
                .collect()
        })
        .collect()
}

/// The whole model written out as one straight-line computation over the
/// full concatenated input `[m || emb(e) || base(e)]` of every entity.
pub fn nqr_straight_line(
    params: &nqr_core::model::NqrParameters,
    rows: &[Vec<f64>],
    base: &[f64],
    pairs: &[Preference],
) -> Vec<f64> {
    let x: Vec<Vec<f64>> = pairs
        .iter()
        .map(|p| {
            let mut r = rows[p.entity.index()].clone();
            r.push(if p.label == Label::Preferred { 1.0 } else { 0.0 });
            r
        })
        .collect();
    let width = x[0].len();
    let q = times(&x, &mat(&params.attention.wq));
    let k = times(&x, &mat(&params.attention.wk));
    let v = times(&x, &mat(&params.attention.wv));
    let mut att = Vec::new();
    for qi in &q {
        let s: Vec<f64> = k
            .iter()
            .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / (width as f64).sqrt())
            .collect();
        let w = naive_softmax(&s);
        att.push((0..width).map(|c| w.iter().zip(&v).map(|(a, vr)| a * vr[c]).sum()).collect::<Vec<f64>>());
    }
    let gain = params.norm.gain.row(0);
    let bias = params.norm.bias.row(0);
    let normed: Vec<Vec<f64>> = att
        .iter()
        .map(|r| {
            let mean = r.iter().sum::<f64>() / width as f64;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            r.iter()
                .enumerate()
                .map(|(c, v)| gain[c] * (v - mean) / (var + 1e-5).sqrt() + bias[c])
                .collect()
        })
        .collect();
    let dense = |input: &[f64], l: &nqr_core::diffcore::Linear| -> Vec<f64> {
        (0..l.weight.rows())
            .map(|o| l.weight.row(o).iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + l.bias.get(0, o))
            .collect()
    };
    let hidden: Vec<Vec<f64>> = normed
        .iter()
        .map(|r| dense(r, &params.fc1).into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    let d = hidden[0].len();
    let m: Vec<f64> = (0..d).map(|c| hidden.iter().map(|h| h[c]).sum::<f64>() / hidden.len() as f64).collect();
    base.iter()
        .enumerate()
        .map(|(e, &b)| {
            let mut input = m.clone();
            input.extend(&rows[e]);
            input.push(b);
            let h: Vec<f64> = dense(&input, &params.adjust1).into_iter().map(|v| v.max(0.0)).collect();
            b + dense(&h, &params.adjust2)[0].tanh()
        })
        .collect()
}
