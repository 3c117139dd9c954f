//! Dump one user's learned intent-aware graph as CSV.

use dgcf::evaluator::{export_intent_graph, write_intent_rows};
use dgcf::{planted_intents, InteractionGraph, PlantedConfig, Trainer, TrainingConfig};

fn main() -> dgcf::Result<()> {
    let ds = planted_intents(&PlantedConfig::default());
    let g = InteractionGraph::build(&ds);
    let config = TrainingConfig {
        intents: 2,
        layers: 2,
        dim: 32,
        lr: 0.01,
        batch_size: 512,
        ..TrainingConfig::default()
    };
    let mut trainer = Trainer::new(&ds, &g, config)?;
    for _ in 0..10 {
        trainer.train_epoch()?;
    }
    let (_, state) = trainer.forward()?;
    let rows = export_intent_graph(&state, &g, 0, 2)?;
    write_intent_rows(&rows, std::io::stdout().lock()).map_err(|e| dgcf::error::DgcfError::io("<stdout>", e))
}
