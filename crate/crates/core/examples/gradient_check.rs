//! Compare the analytic gradient of the ranking loss against central
//! differences on a small random graph, in both routing-gradient modes.

use dgcf::dataset::{Triplet, TripletBatch};
use dgcf::graph::Edge;
use dgcf::trainer::{bpr_loss, gradients, init_params};
use dgcf::{stack_layers, InteractionGraph, InteractionDataset, Objective, RoutingGradient, TrainingConfig};

fn main() -> dgcf::Result<()> {
    let ds = InteractionDataset::parse("0 0 1\n1 1 2\n2 0 3\n", "")?;
    let g = InteractionGraph::build(&ds);
    let edges: Vec<Edge> = g.edges().to_vec();
    println!("{} users, {} items, {} edges", ds.num_users, ds.num_items, edges.len());
    let batch = TripletBatch {
        triplets: vec![
            Triplet { user: 0, pos: 1, neg: 3 },
            Triplet { user: 1, pos: 2, neg: 0 },
            Triplet { user: 2, pos: 3, neg: 1 },
        ],
    };
    let config = TrainingConfig {
        intents: 2,
        layers: 2,
        dim: 4,
        ..TrainingConfig::default()
    };
    let p = init_params(ds.num_users, ds.num_items, 4, 2, 5)?;
    let loss = |p: &dgcf::ChunkedEmbeddingTable| -> f64 {
        let (fin, _) = stack_layers(p, &g, config.layers, &config.routing()).unwrap();
        bpr_loss(&batch, &fin, p, config.l2)
    };
    for mode in [RoutingGradient::Full, RoutingGradient::Stop] {
        let cfg = TrainingConfig { routing_grad: mode, ..config.clone() };
        let grad = gradients(Objective::Bpr, &batch, &p, &g, &cfg)?.grad;
        let mut worst: f64 = 0.0;
        for idx in 0..p.values().len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a.values_mut()[idx] += 1e-6;
            b.values_mut()[idx] -= 1e-6;
            let fd = (loss(&a) - loss(&b)) / 2e-6;
            worst = worst.max((fd - grad.values()[idx]).abs());
        }
        // stop mode drops the routing path, so it differs from the true gradient
        println!("{mode}: max |analytic - numeric| = {worst:.2e}");
    }
    Ok(())
}
