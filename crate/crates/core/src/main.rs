use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dgcf::evaluator::{default_temperatures, DEFAULT_TOP_N};
use dgcf::run::{self, DataSource, LoadedModel};
use dgcf::synthetic::{planted_intents, PlantedConfig};
use dgcf::{DgcfError, Result};

#[derive(Parser)]
#[command(name = "dgcf", version, about = "Disentangled graph collaborative filtering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print `users,items,interactions,density` for a dataset.
    Stats(DataArgs),
    /// Train a model and checkpoint the best recall@20 state.
    Train(Box<TrainArgs>),
    /// Full-ranking recall@N / ndcg@N of a checkpoint.
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = DEFAULT_TOP_N)]
        n: usize,
    },
    /// Down-weight the weakest intent per edge by each temperature.
    Probe {
        #[command(flatten)]
        model: ModelArgs,
        /// Comma-separated temperatures; defaults to 1e0..1e10.
        #[arg(long, value_delimiter = ',')]
        tau: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_TOP_N)]
        n: usize,
    },
    /// Write per-edge intent weights for the given users.
    ExportIntents {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        users: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        layer: usize,
    },
    /// Mean pairwise distance correlation between intent chunks.
    Dcor {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1000)]
        sample_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the built-in planted-intent dataset as train.txt / test.txt.
    Synth {
        #[arg(long, default_value = "toy-data")]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, conflicts_with = "dataset")]
    dataset_dir: Option<PathBuf>,
    /// Built-in dataset name (`toy`).
    #[arg(long)]
    dataset: Option<String>,
}

impl DataArgs {
    fn source(&self) -> Result<Option<DataSource>> {
        match (&self.dataset_dir, &self.dataset) {
            (Some(dir), _) => Ok(Some(DataSource::Dir(dir.clone()))),
            (None, Some(name)) => DataSource::named(name).map(Some),
            (None, None) => Ok(None),
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "dgcf-out")]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
#[allow(non_snake_case)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Flat `key = value` config file (a previous manifest works too).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "dgcf-out")]
    out: PathBuf,
    #[arg(long = "K")]
    K: Option<String>,
    #[arg(long = "L")]
    L: Option<String>,
    #[arg(long = "T")]
    T: Option<String>,
    #[arg(long = "d")]
    d: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    l2: Option<String>,
    #[arg(long)]
    cor_weight: Option<String>,
    #[arg(long)]
    cor_sample: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    eval_every: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    /// both | user_only
    #[arg(long)]
    affinity: Option<String>,
    /// full | stop
    #[arg(long)]
    routing_grad: Option<String>,
    /// batch | epoch
    #[arg(long)]
    alternation: Option<String>,
    /// final | ego
    #[arg(long)]
    cor_target: Option<String>,
}

impl TrainArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        [
            ("K", &self.K),
            ("L", &self.L),
            ("T", &self.T),
            ("d", &self.d),
            ("lr", &self.lr),
            ("l2", &self.l2),
            ("cor-weight", &self.cor_weight),
            ("cor-sample", &self.cor_sample),
            ("batch-size", &self.batch_size),
            ("epochs", &self.epochs),
            ("seed", &self.seed),
            ("eval-every", &self.eval_every),
            ("threads", &self.threads),
            ("affinity", &self.affinity),
            ("routing-grad", &self.routing_grad),
            ("alternation", &self.alternation),
            ("cor-target", &self.cor_target),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
        .collect()
    }
}

fn set_threads(threads: usize) {
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        log::warn!("thread pool already configured: {e}");
    }
}

fn open_model(args: &ModelArgs) -> Result<LoadedModel> {
    let mut model = run::load_model(&args.checkpoint, args.data.source()?)?;
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(DgcfError::config("threads", "must be at least 1"));
        }
        model.checkpoint.config.threads = t;
    }
    set_threads(model.checkpoint.config.threads);
    Ok(model)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats(data) => {
            let source = data
                .source()?
                .ok_or_else(|| DgcfError::config("dataset-dir", "no dataset given"))?;
            let s = run::cmd_stats(&source)?;
            println!("{}", dgcf::DatasetStats::CSV_HEADER);
            println!("{}", s.to_csv());
        }
        Command::Train(args) => {
            let settings =
                run::resolve_settings(args.config.as_deref(), &args.overrides(), args.data.source()?)?;
            set_threads(settings.config.threads);
            let outcome = run::cmd_train(&settings, &args.out, DEFAULT_TOP_N)?;
            let (epoch, m) = outcome.best;
            println!("best_epoch,{}", dgcf::RankingMetrics::CSV_HEADER);
            println!("{epoch},{}", m.to_csv());
        }
        Command::Evaluate { model, n } => {
            let loaded = open_model(&model)?;
            let m = run::cmd_evaluate(&loaded, n, &model.out, &model.checkpoint)?;
            println!("{}", dgcf::RankingMetrics::CSV_HEADER);
            println!("{}", m.to_csv());
        }
        Command::Probe { model, tau, n } => {
            let loaded = open_model(&model)?;
            let taus = if tau.is_empty() { default_temperatures() } else { tau };
            let rows = run::cmd_probe(&loaded, &taus, n, &model.out, &model.checkpoint)?;
            println!("tau,recall,ndcg");
            for (t, m) in rows {
                println!("{t:e},{:.6},{:.6}", m.recall_at_n, m.ndcg_at_n);
            }
        }
        Command::ExportIntents { model, users, layer } => {
            let loaded = open_model(&model)?;
            let rows = run::cmd_export_intents(&loaded, &users, layer, &model.out, &model.checkpoint)?;
            eprintln!("wrote {} rows to {}", rows.len(), model.out.join(run::INTENTS_FILE).display());
        }
        Command::Dcor { model, sample_size, seed } => {
            let loaded = open_model(&model)?;
            let value = run::cmd_dcor(&loaded, sample_size, seed, &model.out, &model.checkpoint)?;
            println!("sample_size,seed,mean_dcor");
            let used = sample_size.min(loaded.graph.num_nodes());
            println!("{used},{seed},{value:.6}");
        }
        Command::Synth { out, seed } => {
            let ds = planted_intents(&PlantedConfig {
                seed,
                ..PlantedConfig::default()
            });
            ds.save(&out)?;
            eprintln!("wrote {}", Path::new(&out).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
