//! Prediction, the two training objectives, and their exact gradients
//! w.r.t. the layer-0 parameter table.

use std::collections::HashSet;

use crate::dataset::TripletBatch;
use crate::disentangler::{stack_backward, stack_layers};
use crate::embedding::ChunkedEmbeddingTable;
use crate::error::{DgcfError, Result};
use crate::graph::InteractionGraph;
use crate::independence::{independence_loss_with_grad, ChunkSampleMatrix};

use super::config::{CorTarget, TrainingConfig};

/// Inner product over the full concatenated chunks.
pub fn predict(user: &[f64], item: &[f64]) -> f64 {
    debug_assert_eq!(user.len(), item.len());
    user.iter().zip(item).map(|(a, b)| a * b).sum()
}

/// `-ln sigmoid(x)`, stable for large `|x|`.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
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

fn l2_penalty(batch: &TripletBatch, params: &ChunkedEmbeddingTable, l2: f64) -> f64 {
    if l2 == 0.0 || batch.is_empty() {
        return 0.0;
    }
    let sq = |row: &[f64]| row.iter().map(|v| v * v).sum::<f64>();
    let total: f64 = batch
        .triplets
        .iter()
        .map(|t| sq(params.user_row(t.user)) + sq(params.item_row(t.pos)) + sq(params.item_row(t.neg)))
        .sum();
    l2 * total / batch.len() as f64
}

/// Summed pairwise ranking loss plus `l2 * sum ||row||^2 / B` over the
/// layer-0 rows each triplet touches.
pub fn bpr_loss(
    batch: &TripletBatch,
    final_emb: &ChunkedEmbeddingTable,
    params: &ChunkedEmbeddingTable,
    l2: f64,
) -> f64 {
    let ranking: f64 = batch
        .triplets
        .iter()
        .map(|t| {
            let u = final_emb.user_row(t.user);
            let margin = predict(u, final_emb.item_row(t.pos)) - predict(u, final_emb.item_row(t.neg));
            neg_log_sigmoid(margin)
        })
        .sum();
    ranking + l2_penalty(batch, params, l2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Bpr,
    Independence,
    /// `bpr + cor_weight * independence`
    Combined,
}

/// Distinct node IDs of a batch in first-appearance order (users, then
/// positive item, then negative item per triplet), capped at `limit`.
pub fn batch_nodes(batch: &TripletBatch, num_users: usize, limit: usize) -> Vec<usize> {
    let mut seen = HashSet::new();
    let mut nodes = Vec::new();
    for t in &batch.triplets {
        for n in [t.user, num_users + t.pos, num_users + t.neg] {
            if nodes.len() == limit {
                return nodes;
            }
            if seen.insert(n) {
                nodes.push(n);
            }
        }
    }
    nodes
}

/// Gradient of the summed BPR term w.r.t. the final representations.
fn bpr_final_grad(
    batch: &TripletBatch,
    final_emb: &ChunkedEmbeddingTable,
    grad: &mut ChunkedEmbeddingTable,
) {
    for t in &batch.triplets {
        let u = final_emb.user_row(t.user).to_vec();
        let pos = final_emb.item_row(t.pos).to_vec();
        let neg = final_emb.item_row(t.neg).to_vec();
        let margin = predict(&u, &pos) - predict(&u, &neg);
        // d(-ln sigmoid(m))/dm
        let coef = -sigmoid(-margin);
        let ui = t.user;
        let pi = final_emb.item_node(t.pos);
        let ni = final_emb.item_node(t.neg);
        for j in 0..u.len() {
            grad.row_mut(ui)[j] += coef * (pos[j] - neg[j]);
            grad.row_mut(pi)[j] += coef * u[j];
            grad.row_mut(ni)[j] -= coef * u[j];
        }
    }
}

fn add_l2_grad(
    batch: &TripletBatch,
    params: &ChunkedEmbeddingTable,
    l2: f64,
    grad: &mut ChunkedEmbeddingTable,
) {
    if l2 == 0.0 || batch.is_empty() {
        return;
    }
    let scale = 2.0 * l2 / batch.len() as f64;
    for t in &batch.triplets {
        for node in [t.user, params.item_node(t.pos), params.item_node(t.neg)] {
            let src = params.row(node).to_vec();
            for (g, p) in grad.row_mut(node).iter_mut().zip(src) {
                *g += scale * p;
            }
        }
    }
}

/// Independence loss on the rows `nodes` of `table` and its gradient
/// scattered back into a table-shaped buffer (scaled by `weight`).
fn independence_on_rows(
    table: &ChunkedEmbeddingTable,
    nodes: &[usize],
    weight: f64,
    grad: &mut ChunkedEmbeddingTable,
) -> Result<f64> {
    let k = table.intents();
    if k < 2 || nodes.len() < 2 {
        return Ok(0.0);
    }
    let chunks = (0..k)
        .map(|c| ChunkSampleMatrix::from_table(table, nodes, c))
        .collect::<Result<Vec<_>>>()?;
    let (loss, chunk_grads) = independence_loss_with_grad(&chunks)?;
    let cd = table.chunk_dim();
    for (c, cg) in chunk_grads.iter().enumerate() {
        for (r, &node) in nodes.iter().enumerate() {
            for (g, v) in grad.chunk_mut(node, c).iter_mut().zip(&cg[r * cd..(r + 1) * cd]) {
                *g += weight * v;
            }
        }
    }
    Ok(loss)
}

/// Loss value, gradient w.r.t. the parameters, and the forward state.
#[derive(Debug, Clone)]
pub struct GradientResult {
    /// BPR part (summed ranking term plus L2), 0 when not requested.
    pub bpr: f64,
    /// Unweighted independence loss, 0 when not requested.
    pub independence: f64,
    pub grad: ChunkedEmbeddingTable,
    pub final_emb: ChunkedEmbeddingTable,
}

/// Exact gradient of the chosen objective w.r.t. the layer-0 table under
/// the configured routing-gradient mode.
pub fn gradients(
    objective: Objective,
    batch: &TripletBatch,
    params: &ChunkedEmbeddingTable,
    g: &InteractionGraph,
    config: &TrainingConfig,
) -> Result<GradientResult> {
    if let Some(node) = params.first_non_finite() {
        return Err(DgcfError::numeric(format!("parameter row of node {node}")));
    }
    let (final_emb, state) = stack_layers(params, g, config.layers, &config.routing())?;
    let mut grad_final = final_emb.zeros_like();
    let mut grad_ego = params.zeros_like();

    let want_bpr = matches!(objective, Objective::Bpr | Objective::Combined);
    let cor_scale = match objective {
        Objective::Bpr => None,
        Objective::Independence => Some(1.0),
        Objective::Combined => Some(config.cor_weight),
    };

    let mut bpr = 0.0;
    if want_bpr {
        bpr = bpr_loss(batch, &final_emb, params, config.l2);
        bpr_final_grad(batch, &final_emb, &mut grad_final);
        add_l2_grad(batch, params, config.l2, &mut grad_ego);
    }

    let mut independence = 0.0;
    if let Some(weight) = cor_scale {
        let nodes = batch_nodes(batch, params.num_users(), config.cor_sample);
        independence = match config.cor_target {
            CorTarget::Final => independence_on_rows(&final_emb, &nodes, weight, &mut grad_final)?,
            CorTarget::Ego => independence_on_rows(params, &nodes, weight, &mut grad_ego)?,
        };
    }

    let mut grad = stack_backward(&state, g, &grad_final, config.affinity, config.routing_grad);
    grad.add_assign(&grad_ego);
    if let Some(node) = grad.first_non_finite() {
        return Err(DgcfError::numeric(format!("gradient row of node {node}")));
    }
    Ok(GradientResult {
        bpr,
        independence,
        grad,
        final_emb,
    })
}
