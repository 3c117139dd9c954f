//! Train on the built-in planted-intent dataset and report recall@20.
//!
//! cargo run --release --example quickstart -- [K] [L] [epochs] [lr] [batch] [cor-weight]

use dgcf::evaluator::{evaluate, random_recall_expectation};
use dgcf::{planted_intents, InteractionGraph, PlantedConfig, Trainer, TrainingConfig};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args()
        .nth(i)
        .and_then(|s| s.parse().ok())
        .unwrap_or(default)
}

fn main() -> dgcf::Result<()> {
    let ds = planted_intents(&PlantedConfig::default());
    let graph = InteractionGraph::build(&ds);
    let config = TrainingConfig {
        intents: arg(1, 2),
        layers: arg(2, 1),
        dim: 64,
        epochs: arg(3, 50),
        lr: arg(4, 0.01),
        batch_size: arg(5, 512),
        cor_weight: arg(6, 0.01),
        seed: 2020,
        ..TrainingConfig::default()
    };
    println!("{} run: {}", config.label(), config.to_kv().replace('\n', " "));
    let epochs = config.epochs;
    let mut trainer = Trainer::new(&ds, &graph, config)?;
    for epoch in 1..=epochs {
        let report = trainer.train_epoch()?;
        if epoch % 10 == 0 || epoch == epochs {
            let (final_emb, _) = trainer.forward()?;
            let m = evaluate(&ds, &final_emb, 20);
            println!(
                "epoch {epoch:3}  bpr {:.4}  ind {:.4}  recall@20 {:.4}  ndcg@20 {:.4}",
                report.bpr_loss, report.ind_loss, m.recall_at_n, m.ndcg_at_n
            );
        }
    }
    println!("random-ranking recall@20: {:.4}", random_recall_expectation(&ds, 20));
    Ok(())
}
