//! Full-ranking top-N evaluation, the temperature probe, and intent-graph
//! export.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;

use crate::dataset::InteractionDataset;
use crate::disentangler::{stack_layers, LayerState, RoutingOptions};
use crate::embedding::ChunkedEmbeddingTable;
use crate::error::{DgcfError, Result};
use crate::graph::InteractionGraph;
use crate::trainer::{predict, TrainingConfig};

/// Default ranking cutoff.
pub const DEFAULT_TOP_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankingMetrics {
    pub recall_at_n: f64,
    pub ndcg_at_n: f64,
    pub n: usize,
    pub users_evaluated: usize,
}

impl RankingMetrics {
    pub const CSV_HEADER: &'static str = "n,recall,ndcg,users_evaluated";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.6},{:.6},{}",
            self.n, self.recall_at_n, self.ndcg_at_n, self.users_evaluated
        )
    }
}

/// Descending score, ties by ascending item ID.
fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

fn candidate_scores(user: usize, emb: &ChunkedEmbeddingTable, ds: &InteractionDataset) -> Vec<(usize, f64)> {
    let u = emb.user_row(user);
    let train = &ds.train[user];
    (0..ds.num_items)
        .filter(|i| train.binary_search(i).is_err())
        .map(|i| (i, predict(u, emb.item_row(i))))
        .collect()
}

/// Every non-training item of `user`, best first.
pub fn rank_items(user: usize, final_emb: &ChunkedEmbeddingTable, ds: &InteractionDataset) -> Vec<usize> {
    let mut scored = candidate_scores(user, final_emb, ds);
    scored.sort_by(rank_order);
    scored.into_iter().map(|(i, _)| i).collect()
}

/// The first `n` entries of [`rank_items`], without a full sort.
pub fn top_n_items(
    user: usize,
    final_emb: &ChunkedEmbeddingTable,
    ds: &InteractionDataset,
    n: usize,
) -> Vec<usize> {
    let mut scored = candidate_scores(user, final_emb, ds);
    if n < scored.len() {
        scored.select_nth_unstable_by(n, rank_order);
        scored.truncate(n);
    }
    scored.sort_by(rank_order);
    scored.into_iter().map(|(i, _)| i).collect()
}

fn is_hit(test_items: &[usize], item: usize) -> bool {
    test_items.contains(&item)
}

/// `|top-n ∩ test| / |test|`.
pub fn recall_at_n(ranking: &[usize], test_items: &[usize], n: usize) -> f64 {
    if test_items.is_empty() {
        return 0.0;
    }
    let hits = ranking
        .iter()
        .take(n)
        .filter(|&&i| is_hit(test_items, i))
        .count();
    hits as f64 / test_items.len() as f64
}

/// Binary-relevance NDCG with ideal DCG over `min(|test|, n)` positions.
pub fn ndcg_at_n(ranking: &[usize], test_items: &[usize], n: usize) -> f64 {
    if test_items.is_empty() {
        return 0.0;
    }
    let dcg: f64 = ranking
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, &i)| is_hit(test_items, i))
        .map(|(p, _)| 1.0 / ((p + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..test_items.len().min(n))
        .map(|p| 1.0 / ((p + 2) as f64).log2())
        .sum();
    dcg / ideal
}

/// Users with at least one test item (and at least one candidate).
pub fn evaluable_users(ds: &InteractionDataset) -> Vec<usize> {
    (0..ds.num_users)
        .filter(|&u| !ds.test[u].is_empty() && ds.train[u].len() < ds.num_items)
        .collect()
}

/// Mean recall@n and ndcg@n over users with non-empty test lists.
pub fn evaluate(ds: &InteractionDataset, final_emb: &ChunkedEmbeddingTable, n: usize) -> RankingMetrics {
    let users = evaluable_users(ds);
    let per_user: Vec<(f64, f64)> = users
        .par_iter()
        .map(|&u| {
            let top = top_n_items(u, final_emb, ds, n);
            let test = &ds.test[u];
            (recall_at_n(&top, test, n), ndcg_at_n(&top, test, n))
        })
        .collect();
    let count = per_user.len();
    let (r, g) = per_user
        .iter()
        .fold((0.0, 0.0), |(r, g), (a, b)| (r + a, g + b));
    RankingMetrics {
        recall_at_n: if count > 0 { r / count as f64 } else { 0.0 },
        ndcg_at_n: if count > 0 { g / count as f64 } else { 0.0 },
        n,
        users_evaluated: count,
    }
}

/// Expected recall@n of a uniformly random ranking over each user's
/// candidate pool: `min(n, M_u) / M_u`, averaged like [`evaluate`].
pub fn random_recall_expectation(ds: &InteractionDataset, n: usize) -> f64 {
    let users = evaluable_users(ds);
    if users.is_empty() {
        return 0.0;
    }
    let total: f64 = users
        .iter()
        .map(|&u| {
            let pool = (ds.num_items - ds.train[u].len()) as f64;
            (n as f64).min(pool) / pool
        })
        .sum();
    total / users.len() as f64
}

/// Rebuild the final representations with each edge's weakest intent
/// divided by `tau` in the last routing iteration of every layer, then
/// evaluate.
pub fn temperature_probe(
    params: &ChunkedEmbeddingTable,
    g: &InteractionGraph,
    ds: &InteractionDataset,
    config: &TrainingConfig,
    tau: f64,
    n: usize,
) -> Result<RankingMetrics> {
    if config.intents < 2 {
        return Err(DgcfError::config(
            "K",
            "the temperature probe needs at least two intents",
        ));
    }
    if !(tau >= 1.0 && tau.is_finite()) {
        return Err(DgcfError::config("tau", format!("must be >= 1, got {tau}")));
    }
    let opts = RoutingOptions {
        temperature: Some(tau),
        ..config.routing()
    };
    let (final_emb, _) = stack_layers(params, g, config.layers, &opts)?;
    Ok(evaluate(ds, &final_emb, n))
}

/// Default probe grid `10^0 .. 10^10`.
pub fn default_temperatures() -> Vec<f64> {
    (0..=10).map(|e| 10f64.powi(e)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntentRow {
    pub layer: usize,
    pub user: usize,
    pub item: usize,
    pub intent: usize,
    pub weight: f64,
}

impl IntentRow {
    pub const CSV_HEADER: &'static str = "layer,user,item,intent,weight";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.layer, self.user, self.item, self.intent, self.weight
        )
    }
}

/// For each intent, `user`'s training edges ordered by their weight in
/// the layer's intent-aware graph, strongest first.
pub fn export_intent_graph(
    states: &LayerState,
    g: &InteractionGraph,
    user: usize,
    layer: usize,
) -> Result<Vec<IntentRow>> {
    if user >= g.num_users() {
        return Err(DgcfError::Lookup(format!(
            "user {user} not in graph ({} users)",
            g.num_users()
        )));
    }
    let scores = states.intent_graph(layer).ok_or_else(|| {
        DgcfError::Lookup(format!(
            "layer {layer} has no intent graph (model has {} layers)",
            states.num_layers()
        ))
    })?;
    let k = scores.num_intents();
    let norm = scores
        .normalized
        .as_deref()
        .ok_or_else(|| DgcfError::Contract("intent graph is not normalized".into()))?;
    let edges = g.user_neighbors(user);
    let mut rows = Vec::with_capacity(edges.len() * k);
    for intent in 0..k {
        let mut block: Vec<IntentRow> = edges
            .iter()
            .map(|nb| IntentRow {
                layer,
                user,
                item: nb.node,
                intent,
                weight: norm[nb.edge * k + intent],
            })
            .collect();
        block.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.item.cmp(&b.item)));
        rows.extend(block);
    }
    Ok(rows)
}

pub fn write_intent_rows<W: Write>(rows: &[IntentRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", IntentRow::CSV_HEADER)?;
    for r in rows {
        writeln!(out, "{}", r.to_csv())?;
    }
    Ok(())
}
