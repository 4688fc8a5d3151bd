//! Average-linkage agglomerative clustering under cosine distance.

use serde::{Deserialize, Serialize};

use crate::embed::cosine_similarity;
use crate::error::{Error, Result};

/// Linkage distances closer than this are treated as tied, and the tie goes
/// to the pair with the smallest `(left, right)` node ids.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

/// Binary merge tree. Leaves are nodes `0..n`; merge `k` creates node `n + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    num_leaves: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn num_leaves(&self) -> usize {
        self.num_leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn root(&self) -> usize {
        self.num_leaves + self.merges.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.num_leaves + self.merges.len()
    }

    pub fn size(&self, node: usize) -> usize {
        if node < self.num_leaves {
            1
        } else {
            self.merges[node - self.num_leaves].size
        }
    }

    pub fn children(&self, node: usize) -> Option<(usize, usize)> {
        (node >= self.num_leaves).then(|| {
            let m = &self.merges[node - self.num_leaves];
            (m.left, m.right)
        })
    }

    /// Leaf indices under `node`, ascending.
    pub fn members(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.size(node));
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            match self.children(x) {
                Some((l, r)) => {
                    stack.push(l);
                    stack.push(r);
                }
                None => out.push(x),
            }
        }
        out.sort_unstable();
        out
    }

    /// Merge distances never decrease (beyond rounding) and sizes add up.
    pub fn is_well_formed(&self) -> bool {
        let monotone = self
            .merges
            .windows(2)
            .all(|w| w[1].distance >= w[0].distance - 1e-12);
        let sizes = self
            .merges
            .iter()
            .all(|m| m.size == self.size(m.left) + self.size(m.right));
        let root = self.merges.last().map_or(true, |m| m.size == self.num_leaves);
        monotone && sizes && root && self.merges.len() + 1 == self.num_leaves
    }
}

/// Pairwise cosine distances `1 - sim`, clamped to `[0, 2]`.
pub fn cosine_distance_matrix(vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = vectors.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s = cosine_similarity(&vectors[i], &vectors[j])?;
            let v = (1.0 - s).clamp(0.0, 2.0);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    Ok(d)
}

/// Clusters `vectors` bottom-up, always merging the pair of clusters with the
/// smallest mean pairwise cosine distance. Cluster distances are updated with
/// the Lance-Williams recurrence for average linkage.
pub fn hac_average_linkage(vectors: &[Vec<f64>]) -> Result<Dendrogram> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "clustering needs at least 2 vectors, got {n}"
        )));
    }
    let mut dist = cosine_distance_matrix(vectors)?;

    // slot i holds node_of[i]; merged slots are deactivated.
    let mut node_of: Vec<usize> = (0..n).collect();
    let mut size: Vec<usize> = vec![1; n];
    let mut active: Vec<bool> = vec![true; n];
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut best_d = f64::INFINITY;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if active[j] && dist[i][j] < best_d {
                    best_d = dist[i][j];
                }
            }
        }
        let mut best: Option<(usize, usize, usize, usize)> = None; // (left node, right node, slot a, slot b)
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if !active[j] || dist[i][j] > best_d + TIE_TOLERANCE {
                    continue;
                }
                let (l, r) = ordered(node_of[i], node_of[j]);
                if best.map_or(true, |(bl, br, _, _)| (l, r) < (bl, br)) {
                    best = Some((l, r, i, j));
                }
            }
        }
        let (left, right, a, b) = best.expect("at least two active clusters");
        let distance = dist[a][b];
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if active[k] && k != a && k != b {
                let v = (na * dist[a][k] + nb * dist[b][k]) / (na + nb);
                dist[a][k] = v;
                dist[k][a] = v;
            }
        }
        active[b] = false;
        size[a] += size[b];
        node_of[a] = n + step;
        merges.push(Merge {
            left,
            right,
            distance,
            size: size[a],
        });
    }

    let dend = Dendrogram {
        num_leaves: n,
        merges,
    };
    debug_assert!(dend.is_well_formed());
    Ok(dend)
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}
