use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nucleus_core::corpus::CorpusConfig;
use nucleus_core::curation::Strategy;
use nucleus_core::sns::Direction;
use nucleus_core::Modality;
use nucleus_engine::ablate::{self, AblateOptions, Grid};
use nucleus_engine::commands::{self, Context, CurateOptions, EvalOptions, SnsOverrides, TrainOverrides};
use nucleus_engine::config::EngineConfig;
use nucleus_engine::synth::SynthOptions;
use nucleus_engine::{EngineError, Result};

#[derive(Parser, Debug)]
#[command(
    name = "nucleus",
    version,
    about = "Curate paired multimodal data with nucleus subsampling and fused expert embeddings"
)]
struct Cli {
    /// Engine configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training and curation seeds (the corpus seed for synth).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads and in-flight remote requests.
    #[arg(long, global = true, default_value_t = 4)]
    jobs: usize,
    /// Output directory (defaults to the config's output_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic paired corpus and a matching engine config.
    Synth(SynthArgs),
    /// Populate the embedding caches for every expert.
    Embed(DatasetArg),
    /// Apply nucleus subsampling; writes the nucleus log and trimmed corpus.
    Sns(SnsArgs),
    /// Fit the projection network.
    Train(TrainArgs),
    /// Recall tables, modality gaps and the clustering diagnostic.
    Eval(EvalArgs),
    /// Build a datablend with one strategy.
    Curate(CurateArgs),
    /// Sweep the rho, direction, tau or projection grids.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct DatasetArg {
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    samples_per_modality: usize,
    #[arg(long, default_value_t = 4)]
    pools: usize,
    #[arg(long, default_value_t = 16)]
    clusters: usize,
    #[arg(long, value_delimiter = ',', default_value = "text,image,audio,video")]
    modalities: Vec<Modality>,
    #[arg(long, default_value_t = 0.0)]
    annotation_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    filler_rate: f64,
    #[arg(long, default_value_t = 3)]
    experts: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 28)]
    semantic_dim: usize,
    /// Modality offset scale of the synthetic experts.
    #[arg(long, default_value_t = 1.0)]
    gap: f64,
    /// Gaussian noise of the synthetic experts.
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
}

#[derive(Args, Debug)]
struct SnsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    tau_alpha: Option<f64>,
    #[arg(long)]
    tau_beta: Option<f64>,
    #[arg(long, value_parser = parse_direction)]
    direction: Option<Direction>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    lambda_task: Option<f64>,
    #[arg(long)]
    lambda_cluster: Option<f64>,
    #[arg(long)]
    lambda_scale: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Trained projection; without it only the experts are evaluated.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,10")]
    ks: Vec<usize>,
    /// Evaluate on every sample instead of the holdout.
    #[arg(long)]
    all: bool,
}

#[derive(Args, Debug)]
struct CurateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// projection, uniform, stratified or traditional.
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    query: Option<String>,
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// rho, direction, tau, projection or all.
    #[arg(long, default_value = "all")]
    grid: String,
    /// Training steps per projection cell.
    #[arg(long)]
    steps: Option<usize>,
}

fn parse_direction(s: &str) -> std::result::Result<Direction, String> {
    s.parse().map_err(|e: nucleus_core::sns::SnsError| e.to_string())
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: nucleus_core::curation::CurationError| e.to_string())
}

fn context(cli: &Cli) -> Result<Context> {
    let path =
        cli.config.clone().ok_or_else(|| EngineError::Validation("--config is required for this command".into()))?;
    let mut cfg = EngineConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        cfg.curation.seed = seed;
    }
    Ok(Context::new(cfg, Some(path), cli.out.clone(), cli.jobs))
}

fn run(cli: &Cli) -> Result<commands::Run> {
    match &cli.command {
        Command::Synth(a) => {
            let opts = SynthOptions {
                corpus: CorpusConfig {
                    seed: cli.seed.unwrap_or(0),
                    pools: a.pools,
                    modalities: a.modalities.clone(),
                    samples_per_modality: a.samples_per_modality,
                    clusters: a.clusters,
                    annotation_noise: a.annotation_noise,
                    filler_rate: a.filler_rate,
                    ..Default::default()
                },
                experts: a.experts,
                dim: a.dim,
                semantic_dim: a.semantic_dim,
                gap_magnitude: a.gap,
                noise_sigma: a.noise,
                ..Default::default()
            };
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            commands::synth(&opts, &out)
        }
        Command::Embed(a) => commands::embed(&context(cli)?, &a.dataset),
        Command::Sns(a) => {
            let o = SnsOverrides { rho: a.rho, tau_alpha: a.tau_alpha, tau_beta: a.tau_beta, direction: a.direction };
            commands::sns(&context(cli)?, &a.dataset, &o)
        }
        Command::Train(a) => {
            let o = TrainOverrides {
                layers: a.layers,
                lambda_task: a.lambda_task,
                lambda_cluster: a.lambda_cluster,
                lambda_scale: a.lambda_scale,
                temperature: a.temperature,
                steps: a.steps,
            };
            commands::train_cmd(&context(cli)?, &a.dataset, &o)
        }
        Command::Eval(a) => {
            let o = EvalOptions { model: a.model.clone(), ks: a.ks.clone(), all: a.all };
            commands::eval(&context(cli)?, &a.dataset, &o)
        }
        Command::Curate(a) => {
            let o = CurateOptions { strategy: a.strategy, n: a.n, query: a.query.clone(), model: a.model.clone() };
            commands::curate(&context(cli)?, &a.dataset, &o)
        }
        Command::Ablate(a) => {
            let grids = if a.grid == "all" { Grid::ALL.to_vec() } else { vec![a.grid.parse()?] };
            ablate::ablate(&context(cli)?, &a.dataset, &AblateOptions { grids, steps: a.steps })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.max(1)).build_global() {
        log::warn!("could not size the worker pool: {e}");
    }
    match run(&cli) {
        Ok(r) => {
            // a closed pipe (`nucleus eval ... | head`) is not an error
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{}", r.summary.trim_end());
            let _ = writeln!(out, "wrote {} ({})", r.outputs.join(", "), display(&r.manifest));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
