//! Bipartite interaction graph and per-edge intent scores.
//!
//! Edges are numbered densely in user-major order, so the user adjacency of
//! user `u` covers a contiguous edge-ID range. Intent scores are stored per
//! edge as `edge * K + k`.

use std::io::Write;

use rayon::prelude::*;

use crate::dataset::InteractionDataset;
use crate::error::{DgcfError, Result};

/// Added under the degree square root of the Laplacian weight.
pub const DEGREE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub node: usize,
    pub edge: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub user: usize,
    pub item: usize,
}

/// User-item graph with CSR neighbor lists on both sides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    edges: Vec<Edge>,
    user_offsets: Vec<usize>,
    user_adj: Vec<Neighbor>,
    item_offsets: Vec<usize>,
    item_adj: Vec<Neighbor>,
}

impl InteractionGraph {
    /// Build the training graph of `ds`.
    pub fn build(ds: &InteractionDataset) -> Self {
        let mut edges = Vec::with_capacity(ds.num_train_edges);
        for (user, items) in ds.train.iter().enumerate() {
            edges.extend(items.iter().map(|&item| Edge { user, item }));
        }
        Self::from_edges(ds.num_users, ds.num_items, edges)
    }

    /// Edges must be grouped by user; IDs are their positions.
    pub fn from_edges(num_users: usize, num_items: usize, edges: Vec<Edge>) -> Self {
        let mut user_deg = vec![0usize; num_users];
        let mut item_deg = vec![0usize; num_items];
        for e in &edges {
            user_deg[e.user] += 1;
            item_deg[e.item] += 1;
        }
        let offsets = |deg: &[usize]| {
            let mut off = Vec::with_capacity(deg.len() + 1);
            off.push(0);
            let mut acc = 0;
            for d in deg {
                acc += d;
                off.push(acc);
            }
            off
        };
        let user_offsets = offsets(&user_deg);
        let item_offsets = offsets(&item_deg);
        let mut user_fill = user_offsets[..num_users].to_vec();
        let mut item_fill = item_offsets[..num_items].to_vec();
        let blank = Neighbor { node: 0, edge: 0 };
        let mut user_adj = vec![blank; edges.len()];
        let mut item_adj = vec![blank; edges.len()];
        for (id, e) in edges.iter().enumerate() {
            user_adj[user_fill[e.user]] = Neighbor {
                node: e.item,
                edge: id,
            };
            user_fill[e.user] += 1;
            item_adj[item_fill[e.item]] = Neighbor {
                node: e.user,
                edge: id,
            };
            item_fill[e.item] += 1;
        }
        InteractionGraph {
            num_users,
            num_items,
            edges,
            user_offsets,
            user_adj,
            item_offsets,
            item_adj,
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> Edge {
        self.edges[id]
    }

    pub fn user_neighbors(&self, user: usize) -> &[Neighbor] {
        &self.user_adj[self.user_offsets[user]..self.user_offsets[user + 1]]
    }

    pub fn item_neighbors(&self, item: usize) -> &[Neighbor] {
        &self.item_adj[self.item_offsets[item]..self.item_offsets[item + 1]]
    }

    /// Neighbors of a node in the joint `users ++ items` numbering; the
    /// returned `node` fields are joint IDs as well.
    pub fn node_neighbors(&self, node: usize) -> impl Iterator<Item = Neighbor> + '_ {
        let (slice, shift) = if node < self.num_users {
            (self.user_neighbors(node), self.num_users)
        } else {
            (self.item_neighbors(node - self.num_users), 0)
        };
        slice.iter().map(move |n| Neighbor {
            node: n.node + shift,
            edge: n.edge,
        })
    }

    pub fn user_degree(&self, user: usize) -> usize {
        self.user_offsets[user + 1] - self.user_offsets[user]
    }

    pub fn item_degree(&self, item: usize) -> usize {
        self.item_offsets[item + 1] - self.item_offsets[item]
    }
}

/// Convenience alias matching the operation name.
pub fn build_bipartite(ds: &InteractionDataset) -> InteractionGraph {
    InteractionGraph::build(ds)
}

/// Per-edge, per-intent routing scores and the quantities derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentScoreTensor {
    k: usize,
    /// Unnormalized scores, `edge * K + k`.
    pub raw: Vec<f64>,
    /// Softmax over intents of `raw`; `None` until refreshed.
    pub normalized: Option<Vec<f64>>,
    pub laplacian: Option<Vec<f64>>,
    /// Weighted degrees `user * K + k`.
    pub user_degree: Option<Vec<f64>>,
    pub item_degree: Option<Vec<f64>>,
}

impl IntentScoreTensor {
    /// All-ones raw scores: every intent contributes equally.
    pub fn init(g: &InteractionGraph, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(DgcfError::config("K", "number of intents must be at least 1"));
        }
        Ok(IntentScoreTensor {
            k,
            raw: vec![1.0; g.num_edges() * k],
            normalized: None,
            laplacian: None,
            user_degree: None,
            item_degree: None,
        })
    }

    pub fn num_intents(&self) -> usize {
        self.k
    }

    pub fn num_edges(&self) -> usize {
        self.raw.len() / self.k
    }

    pub fn raw_row(&self, edge: usize) -> &[f64] {
        &self.raw[edge * self.k..(edge + 1) * self.k]
    }

    pub fn normalized_row(&self, edge: usize) -> Option<&[f64]> {
        self.normalized
            .as_deref()
            .map(|n| &n[edge * self.k..(edge + 1) * self.k])
    }

    fn invalidate(&mut self) {
        self.normalized = None;
        self.laplacian = None;
        self.user_degree = None;
        self.item_degree = None;
    }

    /// Replace the raw scores, clearing everything derived from them.
    pub fn set_raw(&mut self, raw: Vec<f64>) {
        assert_eq!(raw.len(), self.raw.len());
        self.raw = raw;
        self.invalidate();
    }

    /// Row-wise softmax of the raw scores, with max subtraction.
    pub fn normalize(&mut self) -> Result<()> {
        let k = self.k;
        if let Some(pos) = self.raw.iter().position(|v| !v.is_finite()) {
            return Err(DgcfError::numeric(format!(
                "raw score of edge {} intent {}",
                pos / k,
                pos % k
            )));
        }
        let mut out = vec![0.0; self.raw.len()];
        out.par_chunks_mut(k)
            .zip(self.raw.par_chunks(k))
            .for_each(|(dst, src)| softmax_into(src, dst));
        self.invalidate();
        self.normalized = Some(out);
        Ok(())
    }

    /// Overwrite the normalized scores directly (used by the temperature
    /// probe); clears derived Laplacian state.
    pub fn set_normalized(&mut self, normalized: Vec<f64>) {
        assert_eq!(normalized.len(), self.raw.len());
        self.normalized = Some(normalized);
        self.laplacian = None;
        self.user_degree = None;
        self.item_degree = None;
    }

    /// Intent-specific degrees and `S̃ / sqrt(D(u) D(i) + eps)` per edge.
    pub fn compute_laplacian(&mut self, g: &InteractionGraph) -> Result<()> {
        let k = self.k;
        let norm = self
            .normalized
            .as_deref()
            .ok_or_else(|| DgcfError::Contract("laplacian requested before normalize".into()))?;
        if norm.len() != g.num_edges() * k {
            return Err(DgcfError::Contract(format!(
                "score tensor has {} edges, graph has {}",
                norm.len() / k,
                g.num_edges()
            )));
        }
        let user_degree = weighted_degrees(norm, k, g.num_users(), |u| g.user_neighbors(u));
        let item_degree = weighted_degrees(norm, k, g.num_items(), |i| g.item_neighbors(i));
        let mut lap = vec![0.0; norm.len()];
        lap.par_chunks_mut(k)
            .enumerate()
            .for_each(|(e, row)| {
                let Edge { user, item } = g.edge(e);
                for (c, w) in row.iter_mut().enumerate() {
                    let q = user_degree[user * k + c] * item_degree[item * k + c] + DEGREE_EPS;
                    *w = norm[e * k + c] / q.sqrt();
                }
            });
        self.laplacian = Some(lap);
        self.user_degree = Some(user_degree);
        self.item_degree = Some(item_degree);
        Ok(())
    }

    pub fn laplacian(&self) -> Result<&[f64]> {
        self.laplacian
            .as_deref()
            .ok_or_else(|| DgcfError::Contract("laplacian weights not computed".into()))
    }

    /// Write `(user, item, intent, weight)` rows of the normalized scores.
    /// When `layer` is given it becomes a leading column.
    pub fn write_csv<W: Write>(
        &self,
        g: &InteractionGraph,
        layer: Option<usize>,
        mut out: W,
    ) -> Result<()> {
        let norm = self
            .normalized
            .as_deref()
            .ok_or_else(|| DgcfError::Contract("scores are not normalized".into()))?;
        let io = |e| DgcfError::io("<intent csv>", e);
        match layer {
            Some(_) => writeln!(out, "layer,user,item,intent,weight").map_err(io)?,
            None => writeln!(out, "user,item,intent,weight").map_err(io)?,
        }
        for (e, edge) in g.edges().iter().enumerate() {
            for c in 0..self.k {
                let w = norm[e * self.k + c];
                match layer {
                    Some(l) => writeln!(out, "{l},{},{},{c},{w}", edge.user, edge.item),
                    None => writeln!(out, "{},{},{c},{w}", edge.user, edge.item),
                }
                .map_err(io)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn softmax_into(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (d, s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        total += *d;
    }
    for d in dst.iter_mut() {
        *d /= total;
    }
}

fn weighted_degrees<'g, F>(norm: &[f64], k: usize, count: usize, adj: F) -> Vec<f64>
where
    F: Fn(usize) -> &'g [Neighbor] + Sync,
{
    let mut deg = vec![0.0; count * k];
    deg.par_chunks_mut(k).enumerate().for_each(|(n, row)| {
        for nb in adj(n) {
            for (c, d) in row.iter_mut().enumerate() {
                *d += norm[nb.edge * k + c];
            }
        }
    });
    deg
}

/// Initialize scores for `g` (operation form).
pub fn init_scores(g: &InteractionGraph, k: usize) -> Result<IntentScoreTensor> {
    IntentScoreTensor::init(g, k)
}

pub fn normalize_scores(mut t: IntentScoreTensor) -> Result<IntentScoreTensor> {
    t.normalize()?;
    Ok(t)
}

pub fn laplacian_weights(
    mut t: IntentScoreTensor,
    g: &InteractionGraph,
) -> Result<IntentScoreTensor> {
    t.compute_laplacian(g)?;
    Ok(t)
}
