use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::disentangler::{Affinity, RoutingGradient, RoutingOptions};
use crate::error::{DgcfError, Result};

/// How the BPR and independence steps alternate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alternation {
    /// BPR step then independence step on every batch.
    #[default]
    Batch,
    /// A full pass of BPR steps, then a full pass of independence steps.
    Epoch,
}

/// Which representation the independence loss is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorTarget {
    /// Layer-summed final representations.
    #[default]
    Final,
    /// The layer-0 parameter table.
    Ego,
}

macro_rules! keyword_enum {
    ($ty:ty, $field:literal, $($variant:path => $name:literal),+) => {
        impl FromStr for $ty {
            type Err = DgcfError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(DgcfError::config(
                        $field,
                        format!("unknown value `{other}`"),
                    )),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name,)+ })
            }
        }
    };
}

keyword_enum!(Alternation, "alternation", Alternation::Batch => "batch", Alternation::Epoch => "epoch");
keyword_enum!(CorTarget, "cor-target", CorTarget::Final => "final", CorTarget::Ego => "ego");

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Number of intents (K).
    pub intents: usize,
    /// Disentangling layers (L); 0 is plain MF.
    pub layers: usize,
    /// Routing iterations per layer (T).
    pub iterations: usize,
    /// Total embedding size (d).
    pub dim: usize,
    pub lr: f64,
    /// L2 coefficient on batch-touched layer-0 rows.
    pub l2: f64,
    pub cor_weight: f64,
    /// Upper bound on the node sample used by the independence loss.
    pub cor_sample: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub threads: usize,
    pub affinity: Affinity,
    pub routing_grad: RoutingGradient,
    pub alternation: Alternation,
    pub cor_target: CorTarget,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            intents: 4,
            layers: 1,
            iterations: 2,
            dim: 64,
            lr: 0.001,
            l2: 1e-4,
            cor_weight: 0.01,
            cor_sample: 1000,
            batch_size: 1024,
            epochs: 100,
            seed: 2020,
            eval_every: 10,
            threads: 1,
            affinity: Affinity::Both,
            routing_grad: RoutingGradient::Full,
            alternation: Alternation::Batch,
            cor_target: CorTarget::Final,
        }
    }
}

/// Config keys, in manifest order. They double as the long flag names.
pub const CONFIG_KEYS: &[&str] = &[
    "K",
    "L",
    "T",
    "d",
    "lr",
    "l2",
    "cor-weight",
    "cor-sample",
    "batch-size",
    "epochs",
    "seed",
    "eval-every",
    "threads",
    "affinity",
    "routing-grad",
    "alternation",
    "cor-target",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| DgcfError::config(key, format!("cannot parse `{value}`")))
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.intents == 0 {
            return Err(DgcfError::config("K", "must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(DgcfError::config("T", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(DgcfError::config("d", "must be at least 1"));
        }
        if !self.dim.is_multiple_of(self.intents) {
            return Err(DgcfError::config(
                "d",
                format!("{} is not divisible by K={}", self.dim, self.intents),
            ));
        }
        if self.batch_size == 0 {
            return Err(DgcfError::config("batch-size", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(DgcfError::config("lr", "must be positive"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(DgcfError::config("l2", "must be non-negative"));
        }
        if !(self.cor_weight >= 0.0 && self.cor_weight.is_finite()) {
            return Err(DgcfError::config("cor-weight", "must be non-negative"));
        }
        if self.cor_sample < 2 {
            return Err(DgcfError::config("cor-sample", "must be at least 2"));
        }
        if self.eval_every == 0 {
            return Err(DgcfError::config("eval-every", "must be at least 1"));
        }
        if self.threads == 0 {
            return Err(DgcfError::config("threads", "must be at least 1"));
        }
        Ok(())
    }

    pub fn routing(&self) -> RoutingOptions {
        RoutingOptions {
            iterations: self.iterations,
            affinity: self.affinity,
            temperature: None,
        }
    }

    /// Whether the independence sub-step runs at all.
    pub fn uses_independence(&self) -> bool {
        self.intents > 1 && self.cor_weight > 0.0
    }

    /// Short label for degenerate configurations.
    pub fn label(&self) -> &'static str {
        match (self.layers, self.intents) {
            (0, 1) if self.cor_weight == 0.0 => "MF-equivalent",
            (0, _) => "MF-chunked",
            (_, 1) => "LightGCN-equivalent",
            _ => "DGCF",
        }
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "K" => self.intents.to_string(),
            "L" => self.layers.to_string(),
            "T" => self.iterations.to_string(),
            "d" => self.dim.to_string(),
            "lr" => self.lr.to_string(),
            "l2" => self.l2.to_string(),
            "cor-weight" => self.cor_weight.to_string(),
            "cor-sample" => self.cor_sample.to_string(),
            "batch-size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "seed" => self.seed.to_string(),
            "eval-every" => self.eval_every.to_string(),
            "threads" => self.threads.to_string(),
            "affinity" => self.affinity.to_string(),
            "routing-grad" => self.routing_grad.to_string(),
            "alternation" => self.alternation.to_string(),
            "cor-target" => self.cor_target.to_string(),
            _ => return None,
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "K" => self.intents = parse_num(key, v)?,
            "L" => self.layers = parse_num(key, v)?,
            "T" => self.iterations = parse_num(key, v)?,
            "d" => self.dim = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "l2" => self.l2 = parse_num(key, v)?,
            "cor-weight" => self.cor_weight = parse_num(key, v)?,
            "cor-sample" => self.cor_sample = parse_num(key, v)?,
            "batch-size" => self.batch_size = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "eval-every" => self.eval_every = parse_num(key, v)?,
            "threads" => self.threads = parse_num(key, v)?,
            "affinity" => self.affinity = v.parse()?,
            "routing-grad" => self.routing_grad = v.parse()?,
            "alternation" => self.alternation = v.parse()?,
            "cor-target" => self.cor_target = v.parse()?,
            other => return Err(DgcfError::config(other, "unknown configuration key")),
        }
        Ok(())
    }

    /// `key = value` lines for every field.
    pub fn to_kv(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// Apply `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored; unknown keys are rejected.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for entry in parse_kv(text)? {
            self.set(&entry.0, &entry.1)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = TrainingConfig::default();
        cfg.apply_kv(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parse flat `key = value` text, keeping order.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            DgcfError::config(format!("line {}", n + 1), "expected `key = value`")
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parse into a map, last value wins.
pub fn parse_kv_map(text: &str) -> Result<BTreeMap<String, String>> {
    Ok(parse_kv(text)?.into_iter().collect())
}
