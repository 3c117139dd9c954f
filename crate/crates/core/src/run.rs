//! Reproducible command pipelines behind the `dgcf` binary.
//!
//! Each command resolves its configuration, runs, writes its CSV outputs
//! and a `manifest.txt` into the output directory, and returns the
//! computed values so the same pipelines can be driven from code.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::dataset::{DatasetStats, InteractionDataset};
use crate::disentangler::stack_layers;
use crate::error::{DgcfError, Result};
use crate::evaluator::{
    evaluate, export_intent_graph, temperature_probe, write_intent_rows, IntentRow, RankingMetrics,
};
use crate::graph::InteractionGraph;
use crate::independence::measure_table_dcor;
use crate::synthetic::{planted_intents, PlantedConfig};
use crate::trainer::{parse_kv, EpochReport, TrainState, Trainer, TrainingConfig, CONFIG_KEYS};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const EVAL_LOG_FILE: &str = "eval_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const INTENTS_FILE: &str = "intents.csv";
pub const PROBE_FILE: &str = "probe.csv";
pub const DCOR_FILE: &str = "dcor.csv";

/// Where interactions come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// The built-in planted-intent dataset (200 users, 300 items).
    Toy,
    /// A directory holding `train.txt` and `test.txt`.
    Dir(PathBuf),
}

impl DataSource {
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(DataSource::Toy),
            other => Err(DgcfError::config(
                "dataset",
                format!("unknown built-in dataset `{other}` (use `toy` or --dataset-dir)"),
            )),
        }
    }

    pub fn load(&self) -> Result<InteractionDataset> {
        match self {
            DataSource::Toy => Ok(planted_intents(&PlantedConfig::default())),
            DataSource::Dir(dir) => {
                InteractionDataset::load(dir.join("train.txt"), dir.join("test.txt"))
            }
        }
    }

    fn manifest_entry(&self) -> (&'static str, String) {
        match self {
            DataSource::Toy => ("dataset", "toy".into()),
            DataSource::Dir(d) => ("dataset-dir", d.display().to_string()),
        }
    }
}

/// Resolved configuration plus data source.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub source: Option<DataSource>,
    pub config: TrainingConfig,
}

/// Merge a config file (or a previous manifest) with flag overrides.
/// Overrides win. Keys prefixed `manifest.` are run metadata and ignored.
pub fn resolve_settings(
    config_file: Option<&Path>,
    overrides: &[(String, String)],
    source: Option<DataSource>,
) -> Result<RunSettings> {
    let mut config = TrainingConfig::default();
    let mut file_source = None;
    if let Some(path) = config_file {
        let text = fs::read_to_string(path).map_err(|e| DgcfError::io(path, e))?;
        for (k, v) in parse_kv(&text)? {
            match k.as_str() {
                "dataset" => file_source = Some(DataSource::named(&v)?),
                "dataset-dir" => file_source = Some(DataSource::Dir(PathBuf::from(v))),
                key if key.starts_with("manifest.") => {}
                key => config.set(key, &v)?,
            }
        }
    }
    for (k, v) in overrides {
        config.set(k, v)?;
    }
    config.validate()?;
    Ok(RunSettings {
        source: source.or(file_source),
        config,
    })
}

/// Everything needed to reproduce a command's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config: TrainingConfig,
    pub source: DataSource,
    pub stats: DatasetStats,
    pub artifacts: Vec<(String, PathBuf)>,
    pub extra: Vec<(String, String)>,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "manifest.command = {}", self.command);
        let _ = writeln!(out, "manifest.engine-version = {ENGINE_VERSION}");
        let _ = writeln!(out, "manifest.label = {}", self.config.label());
        let (k, v) = self.source.manifest_entry();
        let _ = writeln!(out, "{k} = {v}");
        let s = &self.stats;
        let _ = writeln!(out, "manifest.users = {}", s.users);
        let _ = writeln!(out, "manifest.items = {}", s.items);
        let _ = writeln!(out, "manifest.interactions = {}", s.interactions);
        let _ = writeln!(out, "manifest.density = {:.6}", s.density);
        for (name, path) in &self.artifacts {
            let _ = writeln!(out, "manifest.artifact.{name} = {}", path.display());
        }
        for (k, v) in &self.extra {
            let _ = writeln!(out, "manifest.{k} = {v}");
        }
        out.push_str(&self.config.to_kv());
        out
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.render()).map_err(|e| DgcfError::io(&path, e))?;
        Ok(path)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DgcfError::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| DgcfError::io(path, e))
}

fn require_source(source: Option<DataSource>) -> Result<DataSource> {
    source.ok_or_else(|| {
        DgcfError::config("dataset-dir", "no dataset given (use --dataset-dir or --dataset toy)")
    })
}

pub fn cmd_stats(source: &DataSource) -> Result<DatasetStats> {
    Ok(source.load()?.stats())
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub reports: Vec<EpochReport>,
    /// `(epoch, metrics)` for every evaluation.
    pub evaluations: Vec<(usize, RankingMetrics)>,
    /// Best evaluation by recall; its parameters are in the checkpoint.
    pub best: (usize, RankingMetrics),
    pub checkpoint: PathBuf,
}

/// Train for the configured epochs, evaluating every `eval-every` epochs
/// and after the last one, and checkpoint the best-recall state.
///
/// On a numeric abort the best state so far is still written before the
/// error is returned.
pub fn cmd_train(settings: &RunSettings, out_dir: &Path, n: usize) -> Result<TrainOutcome> {
    let config = settings.config.clone();
    config.validate()?;
    let source = require_source(settings.source.clone())?;
    let ds = source.load()?;
    let graph = InteractionGraph::build(&ds);
    ensure_dir(out_dir)?;

    let mut trainer = Trainer::new(&ds, &graph, config.clone())?;
    let mut reports = Vec::new();
    let mut evaluations = Vec::new();
    let mut best: Option<(usize, RankingMetrics, TrainState)> = None;
    let mut train_log = format!("{}\n", EpochReport::CSV_HEADER);
    let mut eval_log = format!("epoch,{}\n", RankingMetrics::CSV_HEADER);
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);

    let evaluate_now = |trainer: &Trainer, best: &mut Option<(usize, RankingMetrics, TrainState)>| -> Result<RankingMetrics> {
        let (final_emb, _) = trainer.forward()?;
        let m = evaluate(&ds, &final_emb, n);
        let epoch = trainer.state.epoch;
        log::info!(
            "epoch {epoch}: recall@{n} {:.4} ndcg@{n} {:.4}",
            m.recall_at_n,
            m.ndcg_at_n
        );
        if best.as_ref().is_none_or(|(_, b, _)| m.recall_at_n > b.recall_at_n) {
            *best = Some((epoch, m, trainer.state.clone()));
        }
        Ok(m)
    };

    let mut failure = None;
    if config.epochs == 0 {
        let m = evaluate_now(&trainer, &mut best)?;
        evaluations.push((0, m));
    }
    for epoch in 1..=config.epochs {
        let step = trainer.train_epoch().and_then(|report| {
            log::info!(
                "epoch {epoch}: bpr {:.5} ind {:.5} ({:.2}s)",
                report.bpr_loss,
                report.ind_loss,
                report.seconds
            );
            train_log.push_str(&report.to_csv());
            train_log.push('\n');
            reports.push(report);
            if epoch % config.eval_every == 0 || epoch == config.epochs {
                let m = evaluate_now(&trainer, &mut best)?;
                evaluations.push((epoch, m));
            }
            Ok(())
        });
        if let Err(e) = step {
            failure = Some(e);
            break;
        }
    }
    for (epoch, m) in &evaluations {
        let _ = writeln!(eval_log, "{epoch},{}", m.to_csv());
    }
    write_file(&out_dir.join(TRAIN_LOG_FILE), &train_log)?;
    write_file(&out_dir.join(EVAL_LOG_FILE), &eval_log)?;

    let (best_epoch, best_metrics, best_state) = match best {
        Some(b) => b,
        None => {
            // aborted before the first evaluation: keep the last good state
            let (final_emb, _) = trainer.forward()?;
            (trainer.state.epoch, evaluate(&ds, &final_emb, n), trainer.state.clone())
        }
    };
    Checkpoint {
        config: config.clone(),
        state: best_state,
    }
    .save(&checkpoint_path)?;
    write_file(
        &out_dir.join(METRICS_FILE),
        &format!("{}\n{}\n", RankingMetrics::CSV_HEADER, best_metrics.to_csv()),
    )?;
    RunManifest {
        command: "train".into(),
        config,
        source,
        stats: ds.stats(),
        artifacts: vec![
            ("checkpoint".into(), checkpoint_path.clone()),
            ("train-log".into(), out_dir.join(TRAIN_LOG_FILE)),
            ("eval-log".into(), out_dir.join(EVAL_LOG_FILE)),
            ("metrics".into(), out_dir.join(METRICS_FILE)),
        ],
        extra: vec![
            ("best-epoch".into(), best_epoch.to_string()),
            ("top-n".into(), n.to_string()),
        ],
    }
    .write(out_dir)?;

    if let Some(e) = failure {
        return Err(e);
    }
    Ok(TrainOutcome {
        reports,
        evaluations,
        best: (best_epoch, best_metrics),
        checkpoint: checkpoint_path,
    })
}

/// Checkpoint plus the dataset it was trained on.
pub struct LoadedModel {
    pub checkpoint: Checkpoint,
    pub source: DataSource,
    pub ds: InteractionDataset,
    pub graph: InteractionGraph,
}

/// Load a checkpoint and its dataset. Without an explicit source the
/// manifest next to the checkpoint is consulted.
pub fn load_model(checkpoint: &Path, source: Option<DataSource>) -> Result<LoadedModel> {
    let ck = Checkpoint::load(checkpoint)?;
    let source = match source {
        Some(s) => s,
        None => {
            let manifest = checkpoint
                .parent()
                .map(|p| p.join(MANIFEST_FILE))
                .filter(|p| p.exists());
            let from_manifest = match manifest {
                Some(path) => resolve_settings(Some(&path), &[], None)?.source,
                None => None,
            };
            require_source(from_manifest)?
        }
    };
    let ds = source.load()?;
    let p = &ck.state.params;
    if p.num_users() != ds.num_users || p.num_items() != ds.num_items {
        return Err(DgcfError::Checkpoint {
            path: checkpoint.to_path_buf(),
            message: format!(
                "checkpoint has {} users / {} items but the dataset has {} / {}",
                p.num_users(),
                p.num_items(),
                ds.num_users,
                ds.num_items
            ),
        });
    }
    let graph = InteractionGraph::build(&ds);
    Ok(LoadedModel {
        checkpoint: ck,
        source,
        ds,
        graph,
    })
}

impl LoadedModel {
    fn manifest(&self, command: &str, artifacts: Vec<(String, PathBuf)>, extra: Vec<(String, String)>) -> RunManifest {
        RunManifest {
            command: command.into(),
            config: self.checkpoint.config.clone(),
            source: self.source.clone(),
            stats: self.ds.stats(),
            artifacts,
            extra,
        }
    }

    pub fn final_embeddings(&self) -> Result<crate::embedding::ChunkedEmbeddingTable> {
        let cfg = &self.checkpoint.config;
        Ok(stack_layers(&self.checkpoint.state.params, &self.graph, cfg.layers, &cfg.routing())?.0)
    }
}

pub fn cmd_evaluate(model: &LoadedModel, n: usize, out_dir: &Path, checkpoint: &Path) -> Result<RankingMetrics> {
    ensure_dir(out_dir)?;
    let m = evaluate(&model.ds, &model.final_embeddings()?, n);
    let path = out_dir.join(METRICS_FILE);
    write_file(&path, &format!("{}\n{}\n", RankingMetrics::CSV_HEADER, m.to_csv()))?;
    model
        .manifest(
            "evaluate",
            vec![("checkpoint".into(), checkpoint.to_path_buf()), ("metrics".into(), path)],
            vec![("top-n".into(), n.to_string())],
        )
        .write(out_dir)?;
    Ok(m)
}

pub fn cmd_probe(
    model: &LoadedModel,
    temperatures: &[f64],
    n: usize,
    out_dir: &Path,
    checkpoint: &Path,
) -> Result<Vec<(f64, RankingMetrics)>> {
    let cfg = &model.checkpoint.config;
    if cfg.intents < 2 {
        return Err(DgcfError::config(
            "K",
            "the checkpoint has a single intent; there is no weaker intent to down-weight",
        ));
    }
    ensure_dir(out_dir)?;
    let mut rows = Vec::with_capacity(temperatures.len());
    let mut csv = String::from("tau,recall,ndcg\n");
    for &tau in temperatures {
        let m = temperature_probe(
            &model.checkpoint.state.params,
            &model.graph,
            &model.ds,
            cfg,
            tau,
            n,
        )?;
        let _ = writeln!(csv, "{tau:e},{:.6},{:.6}", m.recall_at_n, m.ndcg_at_n);
        rows.push((tau, m));
    }
    let path = out_dir.join(PROBE_FILE);
    write_file(&path, &csv)?;
    model
        .manifest(
            "probe",
            vec![("checkpoint".into(), checkpoint.to_path_buf()), ("probe".into(), path)],
            vec![("top-n".into(), n.to_string())],
        )
        .write(out_dir)?;
    Ok(rows)
}

/// Export intent weights for `users` at `layer`; unknown users are skipped
/// with a warning.
pub fn cmd_export_intents(
    model: &LoadedModel,
    users: &[usize],
    layer: usize,
    out_dir: &Path,
    checkpoint: &Path,
) -> Result<Vec<IntentRow>> {
    ensure_dir(out_dir)?;
    let cfg = &model.checkpoint.config;
    let (_, state) = stack_layers(&model.checkpoint.state.params, &model.graph, cfg.layers, &cfg.routing())?;
    let mut rows = Vec::new();
    for &u in users {
        match export_intent_graph(&state, &model.graph, u, layer) {
            Ok(r) => rows.extend(r),
            Err(DgcfError::Lookup(msg)) if u >= model.graph.num_users() => {
                log::warn!("skipping user {u}: {msg}");
            }
            Err(e) => return Err(e),
        }
    }
    let path = out_dir.join(INTENTS_FILE);
    let mut buf = Vec::new();
    write_intent_rows(&rows, &mut buf).map_err(|e| DgcfError::io(&path, e))?;
    fs::write(&path, buf).map_err(|e| DgcfError::io(&path, e))?;
    model
        .manifest(
            "export-intents",
            vec![("checkpoint".into(), checkpoint.to_path_buf()), ("intents".into(), path)],
            vec![("layer".into(), layer.to_string())],
        )
        .write(out_dir)?;
    Ok(rows)
}

/// Seeded sample of node IDs drawn without replacement.
pub fn sample_nodes(num_nodes: usize, size: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = rand::seq::index::sample(&mut rng, num_nodes, size.min(num_nodes)).into_vec();
    nodes.sort_unstable();
    nodes
}

pub fn cmd_dcor(
    model: &LoadedModel,
    sample_size: usize,
    seed: u64,
    out_dir: &Path,
    checkpoint: &Path,
) -> Result<f64> {
    if model.checkpoint.config.intents < 2 {
        return Err(DgcfError::config(
            "K",
            "distance correlation between intents needs at least two intents",
        ));
    }
    ensure_dir(out_dir)?;
    let final_emb = model.final_embeddings()?;
    let nodes = sample_nodes(final_emb.num_nodes(), sample_size, seed);
    let value = measure_table_dcor(&final_emb, &nodes)?;
    let path = out_dir.join(DCOR_FILE);
    write_file(
        &path,
        &format!("sample_size,seed,mean_dcor\n{},{seed},{value:.6}\n", nodes.len()),
    )?;
    model
        .manifest(
            "dcor",
            vec![("checkpoint".into(), checkpoint.to_path_buf()), ("dcor".into(), path)],
            vec![],
        )
        .write(out_dir)?;
    Ok(value)
}

/// Every config key, for flag-to-override plumbing.
pub fn config_keys() -> &'static [&'static str] {
    CONFIG_KEYS
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        fs::write(&path, "K = 2\nd = 8\nlr = 0.5\ndataset = toy\nmanifest.command = train\n").unwrap();
        let s = resolve_settings(Some(&path), &[("lr".into(), "0.25".into())], None).unwrap();
        assert_eq!(s.config.intents, 2);
        assert_eq!(s.config.lr, 0.25);
        assert_eq!(s.source, Some(DataSource::Toy));
    }

    #[test]
    fn manifest_reloads_as_config() {
        let cfg = TrainingConfig {
            intents: 2,
            dim: 8,
            ..TrainingConfig::default()
        };
        let m = RunManifest {
            command: "train".into(),
            config: cfg.clone(),
            source: DataSource::Dir("/data/x".into()),
            stats: DatasetStats {
                users: 1,
                items: 2,
                interactions: 1,
                density: 0.5,
            },
            artifacts: vec![("checkpoint".into(), "/tmp/c.bin".into())],
            extra: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = m.write(dir.path()).unwrap();
        let s = resolve_settings(Some(&path), &[], None).unwrap();
        assert_eq!(s.config, cfg);
        assert_eq!(s.source, Some(DataSource::Dir("/data/x".into())));
    }

    #[test]
    fn sample_nodes_seeded() {
        assert_eq!(sample_nodes(100, 10, 3), sample_nodes(100, 10, 3));
        assert_eq!(sample_nodes(5, 10, 3), vec![0, 1, 2, 3, 4]);
    }
}
