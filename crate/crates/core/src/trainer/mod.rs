//! Optimization of the layer-0 embedding table.
//!
//! Each batch takes one Adam step on the BPR objective and then, when
//! enabled, one step on the weighted independence loss over the same
//! batch's nodes. The two objectives keep separate Adam moments.

mod config;
mod objective;
mod optimizer;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{parse_kv, parse_kv_map, Alternation, CorTarget, TrainingConfig, CONFIG_KEYS};
pub use objective::{
    batch_nodes, bpr_loss, gradients, neg_log_sigmoid, predict, GradientResult, Objective,
};
pub use optimizer::{adam_step, OptimizerState, ADAM_EPS, BETA1, BETA2};

use crate::dataset::{InteractionDataset, TripletBatch, TripletSampler};
use crate::disentangler::{stack_layers, LayerState};
use crate::embedding::ChunkedEmbeddingTable;
use crate::error::{DgcfError, Result};
use crate::graph::InteractionGraph;

/// Xavier-uniform layer-0 table.
pub fn init_params(
    num_users: usize,
    num_items: usize,
    dim: usize,
    intents: usize,
    seed: u64,
) -> Result<ChunkedEmbeddingTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ChunkedEmbeddingTable::xavier(num_users, num_items, dim, intents, &mut rng)
}

/// Losses of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    /// 1-based epoch index.
    pub epoch: usize,
    /// BPR objective per triplet, averaged over batches.
    pub bpr_loss: f64,
    /// Unweighted independence loss averaged over independence steps.
    pub ind_loss: f64,
    pub seconds: f64,
}

impl EpochReport {
    pub const CSV_HEADER: &'static str = "epoch,bpr_loss,ind_loss,seconds";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.8},{:.8},{:.3}",
            self.epoch, self.bpr_loss, self.ind_loss, self.seconds
        )
    }

    /// Equal up to wall-clock time.
    pub fn same_losses(&self, other: &EpochReport) -> bool {
        self.epoch == other.epoch
            && self.bpr_loss.to_bits() == other.bpr_loss.to_bits()
            && self.ind_loss.to_bits() == other.ind_loss.to_bits()
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ChunkedEmbeddingTable,
    pub bpr_opt: OptimizerState,
    pub cor_opt: OptimizerState,
    /// Completed epochs.
    pub epoch: usize,
}

impl TrainState {
    pub fn new(params: ChunkedEmbeddingTable) -> Self {
        let n = params.parameter_count();
        TrainState {
            params,
            bpr_opt: OptimizerState::new(n),
            cor_opt: OptimizerState::new(n),
            epoch: 0,
        }
    }
}

/// Dataset, graph and config bundled with the mutable training state.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    pub ds: &'a InteractionDataset,
    pub graph: &'a InteractionGraph,
    pub config: TrainingConfig,
    pub state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(
        ds: &'a InteractionDataset,
        graph: &'a InteractionGraph,
        config: TrainingConfig,
    ) -> Result<Self> {
        config.validate()?;
        let params = init_params(
            ds.num_users,
            ds.num_items,
            config.dim,
            config.intents,
            config.seed,
        )?;
        Self::with_state(ds, graph, config, TrainState::new(params))
    }

    pub fn with_state(
        ds: &'a InteractionDataset,
        graph: &'a InteractionGraph,
        config: TrainingConfig,
        state: TrainState,
    ) -> Result<Self> {
        config.validate()?;
        let p = &state.params;
        if p.num_users() != ds.num_users || p.num_items() != ds.num_items {
            return Err(DgcfError::Contract(format!(
                "parameters cover {} users / {} items, dataset has {} / {}",
                p.num_users(),
                p.num_items(),
                ds.num_users,
                ds.num_items
            )));
        }
        if p.dim() != config.dim || p.intents() != config.intents {
            return Err(DgcfError::Contract(format!(
                "parameters are d={} K={}, config says d={} K={}",
                p.dim(),
                p.intents(),
                config.dim,
                config.intents
            )));
        }
        // the only trainables are the layer-0 rows
        assert_eq!(
            p.parameter_count(),
            (ds.num_users + ds.num_items) * config.dim
        );
        Ok(Trainer {
            ds,
            graph,
            config,
            state,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.ds.num_train_edges.div_ceil(self.config.batch_size).max(1)
    }

    fn epoch_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.state.epoch as u64 + 1);
        rng
    }

    fn bpr_step(&mut self, batch: &TripletBatch) -> Result<f64> {
        let res = gradients(
            Objective::Bpr,
            batch,
            &self.state.params,
            self.graph,
            &self.config,
        )?;
        adam_step(
            self.state.params.values_mut(),
            res.grad.values(),
            &mut self.state.bpr_opt,
            self.config.lr,
        )?;
        Ok(res.bpr / batch.len() as f64)
    }

    fn independence_step(&mut self, batch: &TripletBatch) -> Result<f64> {
        let mut res = gradients(
            Objective::Independence,
            batch,
            &self.state.params,
            self.graph,
            &self.config,
        )?;
        res.grad.scale(self.config.cor_weight);
        adam_step(
            self.state.params.values_mut(),
            res.grad.values(),
            &mut self.state.cor_opt,
            self.config.lr,
        )?;
        Ok(res.independence)
    }

    /// One pass of `ceil(edges / batch_size)` batches.
    ///
    /// A numeric error aborts the epoch; the parameters then hold the last
    /// completed step.
    pub fn train_epoch(&mut self) -> Result<EpochReport> {
        let start = Instant::now();
        let sampler = TripletSampler::new(self.ds)?;
        let mut rng = self.epoch_rng();
        let batches = self.batches_per_epoch();
        let use_ind = self.config.uses_independence();
        let mut bpr_sum = 0.0;
        let mut ind_sum = 0.0;
        let mut ind_steps = 0usize;

        match self.config.alternation {
            Alternation::Batch => {
                for _ in 0..batches {
                    let batch = sampler.sample(self.config.batch_size, &mut rng);
                    bpr_sum += self.bpr_step(&batch)?;
                    if use_ind {
                        ind_sum += self.independence_step(&batch)?;
                        ind_steps += 1;
                    }
                }
            }
            Alternation::Epoch => {
                let drawn: Vec<TripletBatch> = (0..batches)
                    .map(|_| sampler.sample(self.config.batch_size, &mut rng))
                    .collect();
                for batch in &drawn {
                    bpr_sum += self.bpr_step(batch)?;
                }
                if use_ind {
                    for batch in &drawn {
                        ind_sum += self.independence_step(batch)?;
                        ind_steps += 1;
                    }
                }
            }
        }

        self.state.epoch += 1;
        Ok(EpochReport {
            epoch: self.state.epoch,
            bpr_loss: bpr_sum / batches as f64,
            ind_loss: if ind_steps > 0 {
                ind_sum / ind_steps as f64
            } else {
                0.0
            },
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Final representations and per-layer state for the current parameters.
    pub fn forward(&self) -> Result<(ChunkedEmbeddingTable, LayerState)> {
        stack_layers(
            &self.state.params,
            self.graph,
            self.config.layers,
            &self.config.routing(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{planted_intents, PlantedConfig};

    fn small() -> InteractionDataset {
        planted_intents(&PlantedConfig {
            users: 40,
            items: 60,
            per_user: 12,
            ..PlantedConfig::default()
        })
    }

    #[test]
    fn cor_weight_zero_reports_zero_and_matches_bpr_only() {
        let ds = small();
        let g = InteractionGraph::build(&ds);
        let cfg = TrainingConfig {
            intents: 2,
            dim: 8,
            batch_size: 64,
            cor_weight: 0.0,
            ..TrainingConfig::default()
        };
        let mut a = Trainer::new(&ds, &g, cfg.clone()).unwrap();
        let r = a.train_epoch().unwrap();
        assert_eq!(r.ind_loss, 0.0);

        let mut b = Trainer::new(&ds, &g, cfg).unwrap();
        let sampler = TripletSampler::new(&ds).unwrap();
        let mut rng = b.epoch_rng();
        for _ in 0..b.batches_per_epoch() {
            let batch = sampler.sample(64, &mut rng);
            b.bpr_step(&batch).unwrap();
        }
        assert_eq!(a.state.params, b.state.params);
    }

    #[test]
    fn same_seed_same_reports() {
        let ds = small();
        let g = InteractionGraph::build(&ds);
        let cfg = TrainingConfig {
            intents: 2,
            dim: 8,
            batch_size: 64,
            ..TrainingConfig::default()
        };
        let mut a = Trainer::new(&ds, &g, cfg.clone()).unwrap();
        let mut b = Trainer::new(&ds, &g, cfg).unwrap();
        for _ in 0..3 {
            let ra = a.train_epoch().unwrap();
            let rb = b.train_epoch().unwrap();
            assert!(ra.same_losses(&rb));
            assert!(ra.ind_loss > 0.0);
        }
        assert_eq!(a.state.params, b.state.params);
    }

    #[test]
    fn mf_loss_decreases() {
        let ds = small();
        let g = InteractionGraph::build(&ds);
        let cfg = TrainingConfig {
            intents: 1,
            layers: 0,
            dim: 8,
            batch_size: 64,
            lr: 0.01,
            cor_weight: 0.0,
            ..TrainingConfig::default()
        };
        let mut t = Trainer::new(&ds, &g, cfg).unwrap();
        let losses: Vec<f64> = (0..30).map(|_| t.train_epoch().unwrap().bpr_loss).collect();
        let block = |r: std::ops::Range<usize>| losses[r].iter().sum::<f64>() / 10.0;
        assert!(block(10..20) < block(0..10), "{losses:?}");
        assert!(block(20..30) < block(10..20), "{losses:?}");
    }

    #[test]
    fn epoch_alternation_runs_both_passes() {
        let ds = small();
        let g = InteractionGraph::build(&ds);
        let cfg = TrainingConfig {
            intents: 2,
            dim: 8,
            batch_size: 64,
            alternation: Alternation::Epoch,
            ..TrainingConfig::default()
        };
        let mut t = Trainer::new(&ds, &g, cfg).unwrap();
        let r = t.train_epoch().unwrap();
        assert!(r.bpr_loss > 0.0 && r.ind_loss > 0.0);
        assert_eq!(t.state.bpr_opt.step, t.state.cor_opt.step);
    }

    #[test]
    fn state_shape_checked() {
        let ds = small();
        let g = InteractionGraph::build(&ds);
        let params = ChunkedEmbeddingTable::zeros(3, 3, 8, 2).unwrap();
        let cfg = TrainingConfig {
            intents: 2,
            dim: 8,
            ..TrainingConfig::default()
        };
        assert!(Trainer::with_state(&ds, &g, cfg, TrainState::new(params)).is_err());
    }
}
