//! Graph disentangling layers.
//!
//! One layer routes the interaction graph into `K` intent-aware graphs by
//! alternating softmax normalization of per-edge intent scores, Laplacian
//! weighting, propagation of the layer-input chunks, and an affinity update
//! of the scores. Layers are stacked and their outputs summed.
//!
//! Every forward pass keeps the intermediate tensors it needs so that
//! [`stack_backward`] can return exact gradients with respect to the
//! layer-0 table, either through the whole routing unroll or with the
//! routing weights treated as constants.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::embedding::ChunkedEmbeddingTable;
use crate::error::{DgcfError, Result};
use crate::graph::{IntentScoreTensor, InteractionGraph, DEGREE_EPS};

/// Which side's centroid drives the score update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Affinity {
    /// `<u^t_k, tanh(i^0_k)> + <i^t_k, tanh(u^0_k)>`
    #[default]
    Both,
    /// `<u^t_k, tanh(i^0_k)>` only.
    UserOnly,
}

/// How gradients treat the routing scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoutingGradient {
    /// Differentiate through every routing iteration.
    #[default]
    Full,
    /// Treat the final Laplacian weights of each layer as constants.
    Stop,
}

impl FromStr for Affinity {
    type Err = DgcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Affinity::Both),
            "user_only" => Ok(Affinity::UserOnly),
            other => Err(DgcfError::config(
                "affinity",
                format!("expected `both` or `user_only`, got `{other}`"),
            )),
        }
    }
}

impl fmt::Display for Affinity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Affinity::Both => "both",
            Affinity::UserOnly => "user_only",
        })
    }
}

impl FromStr for RoutingGradient {
    type Err = DgcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(RoutingGradient::Full),
            "stop" => Ok(RoutingGradient::Stop),
            other => Err(DgcfError::config(
                "routing_grad",
                format!("expected `full` or `stop`, got `{other}`"),
            )),
        }
    }
}

impl fmt::Display for RoutingGradient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoutingGradient::Full => "full",
            RoutingGradient::Stop => "stop",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutingOptions {
    /// Routing iterations per layer (T).
    pub iterations: usize,
    pub affinity: Affinity,
    /// Evaluation-time down-weighting of each edge's weakest intent in the
    /// final iteration of every layer. `None` for training.
    pub temperature: Option<f64>,
}

impl RoutingOptions {
    pub fn new(iterations: usize) -> Self {
        RoutingOptions {
            iterations,
            affinity: Affinity::Both,
            temperature: None,
        }
    }
}

/// Tensors of one routing iteration.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    /// Scores with normalized weights, degrees and Laplacian populated.
    pub scores: IntentScoreTensor,
    /// Users aggregated from items and items from users, both from the
    /// layer input.
    pub propagated: ChunkedEmbeddingTable,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub iterations: Vec<IterationTrace>,
}

impl LayerTrace {
    pub fn output(&self) -> &ChunkedEmbeddingTable {
        &self.iterations.last().expect("at least one iteration").propagated
    }

    /// The layer's intent-aware graph (normalized scores of the last
    /// iteration).
    pub fn final_scores(&self) -> &IntentScoreTensor {
        &self.iterations.last().expect("at least one iteration").scores
    }
}

/// Per-layer embeddings `e^(0..=L)` and intent graphs `A^(1..=L)`.
#[derive(Debug, Clone)]
pub struct LayerState {
    params: ChunkedEmbeddingTable,
    layers: Vec<LayerTrace>,
}

impl LayerState {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// `e^(l)`; `l = 0` is the parameter table.
    pub fn embedding(&self, layer: usize) -> &ChunkedEmbeddingTable {
        if layer == 0 {
            &self.params
        } else {
            self.layers[layer - 1].output()
        }
    }

    /// `A^(l)` for `l` in `1..=L`.
    pub fn intent_graph(&self, layer: usize) -> Option<&IntentScoreTensor> {
        layer
            .checked_sub(1)
            .and_then(|l| self.layers.get(l))
            .map(LayerTrace::final_scores)
    }

    pub fn layer(&self, layer: usize) -> Option<&LayerTrace> {
        layer.checked_sub(1).and_then(|l| self.layers.get(l))
    }
}

fn check_shapes(emb: &ChunkedEmbeddingTable, g: &InteractionGraph) -> Result<()> {
    if emb.num_users() != g.num_users() || emb.num_items() != g.num_items() {
        return Err(DgcfError::Contract(format!(
            "embedding table covers {}+{} nodes, graph has {}+{}",
            emb.num_users(),
            emb.num_items(),
            g.num_users(),
            g.num_items()
        )));
    }
    Ok(())
}

/// Weighted neighbor sum with per-edge, per-intent weights `weights[e*K+k]`.
///
/// The bipartite operator is symmetric, so the same routine is its own
/// adjoint in the backward pass.
pub(crate) fn propagate_weights(
    weights: &[f64],
    source: &ChunkedEmbeddingTable,
    g: &InteractionGraph,
) -> ChunkedEmbeddingTable {
    let k = source.intents();
    let c = source.chunk_dim();
    let d = source.dim();
    let mut out = source.zeros_like();
    out.values_mut()
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(n, row)| {
            for nb in g.node_neighbors(n) {
                let src = source.row(nb.node);
                for intent in 0..k {
                    let w = weights[nb.edge * k + intent];
                    let span = intent * c..(intent + 1) * c;
                    for (o, s) in row[span.clone()].iter_mut().zip(&src[span]) {
                        *o += w * s;
                    }
                }
            }
        });
    out
}

/// `out_u,k = sum_i L_k(u,i) in_i,k` and symmetrically for items.
pub fn propagate(
    scores: &IntentScoreTensor,
    source: &ChunkedEmbeddingTable,
    g: &InteractionGraph,
) -> Result<ChunkedEmbeddingTable> {
    check_shapes(source, g)?;
    if scores.num_intents() != source.intents() || scores.num_edges() != g.num_edges() {
        return Err(DgcfError::Contract(format!(
            "score tensor is {} edges x {} intents; graph has {} edges, table has {} intents",
            scores.num_edges(),
            scores.num_intents(),
            g.num_edges(),
            source.intents()
        )));
    }
    Ok(propagate_weights(scores.laplacian()?, source, g))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn tanh_table(t: &ChunkedEmbeddingTable) -> ChunkedEmbeddingTable {
    let mut out = t.clone();
    out.values_mut().par_iter_mut().for_each(|v| *v = v.tanh());
    out
}

/// Per-edge affinity increments given precomputed `tanh(layer_input)`.
fn affinity_increments(
    propagated: &ChunkedEmbeddingTable,
    input_tanh: &ChunkedEmbeddingTable,
    g: &InteractionGraph,
    affinity: Affinity,
) -> Vec<f64> {
    let k = propagated.intents();
    let mut inc = vec![0.0; g.num_edges() * k];
    inc.par_chunks_mut(k).enumerate().for_each(|(e, row)| {
        let edge = g.edge(e);
        let user = edge.user;
        let item = propagated.item_node(edge.item);
        for (intent, v) in row.iter_mut().enumerate() {
            *v = dot(propagated.chunk(user, intent), input_tanh.chunk(item, intent));
            if affinity == Affinity::Both {
                *v += dot(propagated.chunk(item, intent), input_tanh.chunk(user, intent));
            }
        }
    });
    inc
}

/// `raw_k += <u^t_k, tanh(i^0_k)> (+ <i^t_k, tanh(u^0_k)>)` on every edge.
pub fn update_scores(
    scores: &mut IntentScoreTensor,
    propagated: &ChunkedEmbeddingTable,
    layer_input: &ChunkedEmbeddingTable,
    g: &InteractionGraph,
    affinity: Affinity,
) -> Result<()> {
    check_shapes(propagated, g)?;
    check_shapes(layer_input, g)?;
    let inc = affinity_increments(propagated, &tanh_table(layer_input), g, affinity);
    let raw: Vec<f64> = scores.raw.iter().zip(&inc).map(|(r, d)| r + d).collect();
    if let Some(pos) = raw.iter().position(|v| !v.is_finite()) {
        let k = scores.num_intents();
        return Err(DgcfError::numeric(format!(
            "score update of edge {} intent {}",
            pos / k,
            pos % k
        )));
    }
    scores.set_raw(raw);
    Ok(())
}

/// Divide each edge's smallest normalized weight by `tau`, leaving the
/// other intents unchanged.
pub(crate) fn apply_temperature(scores: &mut IntentScoreTensor, tau: f64) {
    let k = scores.num_intents();
    let mut norm = scores
        .normalized
        .clone()
        .expect("temperature applies to normalized scores");
    for row in norm.chunks_mut(k) {
        let (min_k, _) = row
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bk, bv), (i, &v)| {
                if v < bv {
                    (i, v)
                } else {
                    (bk, bv)
                }
            });
        row[min_k] /= tau;
    }
    scores.set_normalized(norm);
}

fn non_finite_location(t: &ChunkedEmbeddingTable) -> Option<(usize, usize)> {
    let d = t.dim();
    t.values()
        .iter()
        .position(|v| !v.is_finite())
        .map(|pos| (pos / d, (pos % d) / t.chunk_dim()))
}

/// Run one disentangling layer and keep all iteration tensors.
pub fn route_layer_traced(
    input: &ChunkedEmbeddingTable,
    g: &InteractionGraph,
    opts: &RoutingOptions,
    layer_index: usize,
) -> Result<LayerTrace> {
    if opts.iterations == 0 {
        return Err(DgcfError::config("T", "routing iterations must be at least 1"));
    }
    check_shapes(input, g)?;
    if let Some((node, intent)) = non_finite_location(input) {
        return Err(DgcfError::numeric(format!(
            "layer {layer_index} input node {node} intent {intent}"
        )));
    }
    let input_tanh = tanh_table(input);
    let mut scores = IntentScoreTensor::init(g, input.intents())?;
    let mut iterations = Vec::with_capacity(opts.iterations);
    for t in 1..=opts.iterations {
        let context = |e: DgcfError| match e {
            DgcfError::Numeric { location } => DgcfError::numeric(format!(
                "layer {layer_index} iteration {t}: {location}"
            )),
            other => other,
        };
        scores.normalize().map_err(context)?;
        if t == opts.iterations {
            if let Some(tau) = opts.temperature {
                apply_temperature(&mut scores, tau);
            }
        }
        scores.compute_laplacian(g)?;
        let propagated = propagate_weights(scores.laplacian()?, input, g);
        if let Some((node, intent)) = non_finite_location(&propagated) {
            return Err(DgcfError::numeric(format!(
                "layer {layer_index} iteration {t} intent {intent} (node {node})"
            )));
        }
        let next = if t < opts.iterations {
            let inc = affinity_increments(&propagated, &input_tanh, g, opts.affinity);
            let raw: Vec<f64> = scores.raw.iter().zip(&inc).map(|(r, d)| r + d).collect();
            let mut next = scores.clone();
            next.set_raw(raw);
            Some(next)
        } else {
            None
        };
        iterations.push(IterationTrace {
            scores: scores.clone(),
            propagated,
        });
        if let Some(next) = next {
            scores = next;
        }
    }
    Ok(LayerTrace { iterations })
}

/// One layer: returns the layer output and its intent-aware graph.
pub fn route_layer(
    input: &ChunkedEmbeddingTable,
    g: &InteractionGraph,
    opts: &RoutingOptions,
) -> Result<(ChunkedEmbeddingTable, IntentScoreTensor)> {
    let mut trace = route_layer_traced(input, g, opts, 1)?;
    let last = trace.iterations.pop().expect("at least one iteration");
    Ok((last.propagated, last.scores))
}

/// Stack `layers` disentangling layers on `params` and sum all layer
/// outputs including `params` itself. With zero layers this is plain MF.
pub fn stack_layers(
    params: &ChunkedEmbeddingTable,
    g: &InteractionGraph,
    layers: usize,
    opts: &RoutingOptions,
) -> Result<(ChunkedEmbeddingTable, LayerState)> {
    check_shapes(params, g)?;
    let mut traces: Vec<LayerTrace> = Vec::with_capacity(layers);
    let mut final_emb = params.clone();
    for l in 1..=layers {
        let input = traces.last().map_or(params, LayerTrace::output);
        let trace = route_layer_traced(input, g, opts, l)?;
        final_emb.add_assign(trace.output());
        traces.push(trace);
    }
    Ok((
        final_emb,
        LayerState {
            params: params.clone(),
            layers: traces,
        },
    ))
}

/// `dL/de^(0)` given `dL/d(final)` for the layer-summed representation.
pub fn stack_backward(
    state: &LayerState,
    g: &InteractionGraph,
    grad_final: &ChunkedEmbeddingTable,
    affinity: Affinity,
    mode: RoutingGradient,
) -> ChunkedEmbeddingTable {
    let mut grad_out = grad_final.clone();
    for l in (1..=state.num_layers()).rev() {
        let input = state.embedding(l - 1);
        let trace = &state.layers[l - 1];
        let mut grad_in = match mode {
            RoutingGradient::Stop => {
                let lap = trace
                    .final_scores()
                    .laplacian()
                    .expect("traced layers carry Laplacian weights");
                propagate_weights(lap, &grad_out, g)
            }
            RoutingGradient::Full => layer_backward(trace, input, &grad_out, g, affinity),
        };
        grad_in.add_assign(grad_final);
        grad_out = grad_in;
    }
    grad_out
}

/// Exact gradient of one layer with respect to its input, through all
/// routing iterations.
fn layer_backward(
    trace: &LayerTrace,
    input: &ChunkedEmbeddingTable,
    grad_output: &ChunkedEmbeddingTable,
    g: &InteractionGraph,
    affinity: Affinity,
) -> ChunkedEmbeddingTable {
    let k = input.intents();
    let input_tanh = tanh_table(input);
    let mut grad_input = input.zeros_like();
    // Gradient w.r.t. the raw scores entering the iteration after the
    // current one.
    let mut grad_next_raw: Option<Vec<f64>> = None;

    for (idx, it) in trace.iterations.iter().enumerate().rev() {
        let is_last = idx + 1 == trace.iterations.len();
        let mut grad_prop = if is_last {
            grad_output.clone()
        } else {
            input.zeros_like()
        };
        if let Some(grad_raw) = grad_next_raw.as_deref() {
            let (gp, gi) =
                affinity_backward(grad_raw, &it.propagated, input, &input_tanh, g, affinity);
            grad_prop.add_assign(&gp);
            grad_input.add_assign(&gi);
        }

        let scores = &it.scores;
        let lap = scores.laplacian().expect("traced Laplacian");
        grad_input.add_assign(&propagate_weights(lap, &grad_prop, g));

        if idx == 0 {
            // First-iteration scores are the constant all-ones init.
            break;
        }
        let grad_lap = edge_inner(&grad_prop, input, g);
        let grad_norm = laplacian_backward(&grad_lap, scores, g);
        let norm = scores.normalized.as_deref().expect("traced normalized");
        let mut grad_raw = softmax_backward(norm, &grad_norm, k);
        if let Some(prev) = grad_next_raw.as_deref() {
            for (a, b) in grad_raw.iter_mut().zip(prev) {
                *a += b;
            }
        }
        grad_next_raw = Some(grad_raw);
    }
    grad_input
}

/// `g_e,k = <G_u,k, X_i,k> + <G_i,k, X_u,k>`: the gradient of a propagation
/// with output gradient `G` and source `X` w.r.t. its per-edge weights.
fn edge_inner(
    grad_prop: &ChunkedEmbeddingTable,
    source: &ChunkedEmbeddingTable,
    g: &InteractionGraph,
) -> Vec<f64> {
    let k = source.intents();
    let mut out = vec![0.0; g.num_edges() * k];
    out.par_chunks_mut(k).enumerate().for_each(|(e, row)| {
        let edge = g.edge(e);
        let item = source.item_node(edge.item);
        for (intent, v) in row.iter_mut().enumerate() {
            *v = dot(grad_prop.chunk(edge.user, intent), source.chunk(item, intent))
                + dot(grad_prop.chunk(item, intent), source.chunk(edge.user, intent));
        }
    });
    out
}

/// Back through `L = P / sqrt(D_u D_i + eps)` with `D` summing `P` over
/// each endpoint's edges.
fn laplacian_backward(
    grad_lap: &[f64],
    scores: &IntentScoreTensor,
    g: &InteractionGraph,
) -> Vec<f64> {
    let k = scores.num_intents();
    let norm = scores.normalized.as_deref().expect("normalized");
    let du = scores.user_degree.as_deref().expect("user degrees");
    let di = scores.item_degree.as_deref().expect("item degrees");

    let mut grad_norm = vec![0.0; grad_lap.len()];
    // d/dQ of P * Q^(-1/2), per edge and intent
    let mut grad_q = vec![0.0; grad_lap.len()];
    grad_norm
        .par_chunks_mut(k)
        .zip(grad_q.par_chunks_mut(k))
        .enumerate()
        .for_each(|(e, (gn, gq))| {
            let edge = g.edge(e);
            for c in 0..k {
                let idx = e * k + c;
                let q = du[edge.user * k + c] * di[edge.item * k + c] + DEGREE_EPS;
                let inv_sqrt = 1.0 / q.sqrt();
                gn[c] = grad_lap[idx] * inv_sqrt;
                gq[c] = -0.5 * grad_lap[idx] * norm[idx] * inv_sqrt / q;
            }
        });

    let mut grad_du = vec![0.0; du.len()];
    grad_du.par_chunks_mut(k).enumerate().for_each(|(u, row)| {
        for nb in g.user_neighbors(u) {
            for (c, v) in row.iter_mut().enumerate() {
                *v += grad_q[nb.edge * k + c] * di[nb.node * k + c];
            }
        }
    });
    let mut grad_di = vec![0.0; di.len()];
    grad_di.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        for nb in g.item_neighbors(i) {
            for (c, v) in row.iter_mut().enumerate() {
                *v += grad_q[nb.edge * k + c] * du[nb.node * k + c];
            }
        }
    });

    grad_norm.par_chunks_mut(k).enumerate().for_each(|(e, gn)| {
        let edge = g.edge(e);
        for (c, v) in gn.iter_mut().enumerate() {
            *v += grad_du[edge.user * k + c] + grad_di[edge.item * k + c];
        }
    });
    grad_norm
}

fn softmax_backward(norm: &[f64], grad_norm: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; norm.len()];
    out.par_chunks_mut(k)
        .zip(norm.par_chunks(k).zip(grad_norm.par_chunks(k)))
        .for_each(|(o, (p, gp))| {
            let inner = dot(p, gp);
            for c in 0..k {
                o[c] = p[c] * (gp[c] - inner);
            }
        });
    out
}

/// Back through the score increments. Returns the gradients w.r.t. the
/// propagated table of that iteration and w.r.t. the layer input.
fn affinity_backward(
    grad_raw: &[f64],
    propagated: &ChunkedEmbeddingTable,
    input: &ChunkedEmbeddingTable,
    input_tanh: &ChunkedEmbeddingTable,
    g: &InteractionGraph,
    affinity: Affinity,
) -> (ChunkedEmbeddingTable, ChunkedEmbeddingTable) {
    let k = input.intents();
    let c = input.chunk_dim();
    let d = input.dim();
    let num_users = g.num_users();
    let mut grad_prop = input.zeros_like();
    let mut grad_input = input.zeros_like();
    grad_prop
        .values_mut()
        .par_chunks_mut(d)
        .zip(grad_input.values_mut().par_chunks_mut(d))
        .enumerate()
        .for_each(|(n, (gp_row, gi_row))| {
            let is_user = n < num_users;
            // user centroid term feeds gp on users and gi on items; the item
            // centroid term the other way round
            let feeds_prop = is_user || affinity == Affinity::Both;
            let feeds_input = !is_user || affinity == Affinity::Both;
            let own_tanh = input_tanh.row(n);
            for nb in g.node_neighbors(n) {
                let other_tanh = input_tanh.row(nb.node);
                let other_prop = propagated.row(nb.node);
                for intent in 0..k {
                    let gr = grad_raw[nb.edge * k + intent];
                    if gr == 0.0 {
                        continue;
                    }
                    for j in intent * c..(intent + 1) * c {
                        if feeds_prop {
                            gp_row[j] += gr * other_tanh[j];
                        }
                        if feeds_input {
                            gi_row[j] += gr * other_prop[j] * (1.0 - own_tanh[j] * own_tanh[j]);
                        }
                    }
                }
            }
        });
    (grad_prop, grad_input)
}
