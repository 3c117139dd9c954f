//! Seeded synthetic interaction data with planted intent structure.
//!
//! Items are split into `blocks` contiguous intent blocks, each block into
//! `clusters_per_block` taste clusters. Every user picks one cluster per
//! block and a mixing weight over blocks, then draws distinct items from
//! those clusters, with a `noise` fraction drawn uniformly from all items.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::InteractionDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub users: usize,
    pub items: usize,
    /// Distinct interactions per user, before the split.
    pub per_user: usize,
    pub blocks: usize,
    pub clusters_per_block: usize,
    pub noise: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            users: 200,
            items: 300,
            per_user: 30,
            blocks: 2,
            clusters_per_block: 5,
            noise: 0.1,
            test_fraction: 0.2,
            seed: 7,
        }
    }
}

/// Generate a train/test split with planted intents.
pub fn planted_intents(cfg: &PlantedConfig) -> InteractionDataset {
    assert!(cfg.blocks >= 1 && cfg.clusters_per_block >= 1);
    let groups = cfg.blocks * cfg.clusters_per_block;
    assert!(cfg.items >= groups, "need at least one item per cluster");
    assert!(cfg.per_user < cfg.items, "users must leave negatives");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // item range of cluster c in block b
    let cluster_range = |b: usize, c: usize| {
        let g = b * cfg.clusters_per_block + c;
        let lo = g * cfg.items / groups;
        let hi = (g + 1) * cfg.items / groups;
        lo..hi
    };

    let mut train = Vec::with_capacity(cfg.users);
    let mut test = Vec::with_capacity(cfg.users);
    for _ in 0..cfg.users {
        let clusters: Vec<usize> = (0..cfg.blocks)
            .map(|_| rng.gen_range(0..cfg.clusters_per_block))
            .collect();
        let mix: Vec<f64> = {
            let raw: Vec<f64> = (0..cfg.blocks).map(|_| rng.gen_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|w| w / total).collect()
        };
        let capacity: usize = (0..cfg.blocks)
            .map(|b| cluster_range(b, clusters[b]).len())
            .sum();
        let mut chosen = Vec::with_capacity(cfg.per_user);
        let mut attempts = 0usize;
        while chosen.len() < cfg.per_user {
            attempts += 1;
            // fall back to uniform draws once the user's clusters are exhausted
            let uniform = rng.gen_bool(cfg.noise) || attempts > 50 * capacity.max(1);
            let item = if uniform {
                rng.gen_range(0..cfg.items)
            } else {
                let mut r: f64 = rng.gen();
                let mut block = cfg.blocks - 1;
                for (b, w) in mix.iter().enumerate() {
                    if r < *w {
                        block = b;
                        break;
                    }
                    r -= w;
                }
                let range = cluster_range(block, clusters[block]);
                rng.gen_range(range)
            };
            if !chosen.contains(&item) {
                chosen.push(item);
            }
        }
        chosen.shuffle(&mut rng);
        let held = ((cfg.per_user as f64) * cfg.test_fraction).round() as usize;
        let held = held.min(cfg.per_user.saturating_sub(1));
        let test_items = chosen.split_off(cfg.per_user - held);
        train.push(chosen);
        test.push(test_items);
    }
    InteractionDataset::from_lists(cfg.users, cfg.items, train, test)
        .expect("generated lists are in range")
}
