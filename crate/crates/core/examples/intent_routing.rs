//! Route a tiny hand-made graph through one layer and print how each
//! interaction's weight is spread over the intents, iteration by iteration.

use dgcf::disentangler::route_layer_traced;
use dgcf::graph::Edge;
use dgcf::{ChunkedEmbeddingTable, InteractionGraph, RoutingOptions};

fn main() -> dgcf::Result<()> {
    // users 0,1; items 0,1,2
    let g = InteractionGraph::from_edges(
        2,
        3,
        vec![
            Edge { user: 0, item: 0 },
            Edge { user: 0, item: 1 },
            Edge { user: 1, item: 1 },
            Edge { user: 1, item: 2 },
        ],
    );
    // two intents, two dims each: item 0 lives in intent 0, item 2 in intent 1
    #[rustfmt::skip]
    let values = vec![
        1.0, 0.0,  0.2, 0.1, // user 0
        0.1, 0.2,  1.0, 0.0, // user 1
        1.0, 0.5,  0.0, 0.0, // item 0
        0.5, 0.5,  0.5, 0.5, // item 1
        0.0, 0.0,  1.0, 0.5, // item 2
    ];
    let input = ChunkedEmbeddingTable::from_values(2, 3, 4, 2, values)?;
    let trace = route_layer_traced(&input, &g, &RoutingOptions::new(3), 1)?;
    for (t, it) in trace.iterations.iter().enumerate() {
        println!("iteration {}", t + 1);
        for (e, edge) in g.edges().iter().enumerate() {
            let w = it.scores.normalized_row(e).expect("normalized");
            println!("  user {} item {}: {:.3} {:.3}", edge.user, edge.item, w[0], w[1]);
        }
    }
    println!("user 0 after the layer: {:?}", trace.output().user_row(0));
    Ok(())
}
