//! Train briefly on the planted dataset, then down-weight each edge's
//! weakest intent by growing temperatures and watch recall@20.

use dgcf::evaluator::default_temperatures;
use dgcf::{planted_intents, temperature_probe, InteractionGraph, PlantedConfig, Trainer, TrainingConfig};

fn main() -> dgcf::Result<()> {
    let ds = planted_intents(&PlantedConfig::default());
    let g = InteractionGraph::build(&ds);
    let config = TrainingConfig {
        intents: 2,
        dim: 32,
        lr: 0.01,
        batch_size: 512,
        ..TrainingConfig::default()
    };
    let mut trainer = Trainer::new(&ds, &g, config.clone())?;
    for _ in 0..20 {
        trainer.train_epoch()?;
    }
    println!("tau,recall,ndcg");
    for tau in default_temperatures() {
        let m = temperature_probe(&trainer.state.params, &g, &ds, &config, tau, 20)?;
        println!("{tau:e},{:.4},{:.4}", m.recall_at_n, m.ndcg_at_n);
    }
    Ok(())
}
