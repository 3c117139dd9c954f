//! Disentangled graph collaborative filtering.
//!
//! User and item embeddings are split into `K` intent chunks. Each layer
//! routes every interaction edge softly across intents, propagates chunk
//! by chunk over per-intent normalized graphs, and refines the routing by
//! agreement. Training combines pairwise ranking loss with a distance
//! correlation penalty that keeps the chunks independent.
//!
//! ```no_run
//! use dgcf::{planted_intents, InteractionGraph, PlantedConfig, Trainer, TrainingConfig};
//!
//! let ds = planted_intents(&PlantedConfig::default());
//! let graph = InteractionGraph::build(&ds);
//! let config = TrainingConfig { intents: 2, dim: 16, epochs: 5, ..Default::default() };
//! let mut trainer = Trainer::new(&ds, &graph, config).unwrap();
//! for _ in 0..5 {
//!     let report = trainer.train_epoch().unwrap();
//!     println!("{}", report.to_csv());
//! }
//! ```

pub mod checkpoint;
pub mod dataset;
pub mod disentangler;
pub mod embedding;
pub mod error;
pub mod evaluator;
pub mod graph;
pub mod independence;
pub mod run;
pub mod synthetic;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use dataset::{DatasetStats, InteractionDataset, Triplet, TripletBatch, TripletSampler};
pub use disentangler::{
    route_layer, stack_backward, stack_layers, Affinity, LayerState, RoutingGradient,
    RoutingOptions,
};
pub use embedding::ChunkedEmbeddingTable;
pub use error::{DgcfError, Result};
pub use evaluator::{evaluate, temperature_probe, RankingMetrics};
pub use graph::{IntentScoreTensor, InteractionGraph};
pub use independence::{distance_correlation, independence_loss, independence_loss_with_grad};
pub use synthetic::{planted_intents, PlantedConfig};
pub use trainer::{EpochReport, Objective, TrainState, Trainer, TrainingConfig};
