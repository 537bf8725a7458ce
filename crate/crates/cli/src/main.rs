use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use synthjudge::backend::{BackendConfig, BackendKind, MockSettings};
use synthjudge::prompt::ShotMode;
use synthjudge::run::{
    cmd_ablate_pq, cmd_correlate, cmd_rank, cmd_rate, CorrelateConfig, RankConfig, RowStatus, RunConfig, RunError,
    CACHE_DIR,
};
use synthjudge::synth::{write_synthetic, SynthError, SynthSpec};
use synthjudge::TaskKind;

/// Rate synthetic images with a multimodal model and compare the ratings with human ones.
#[derive(Parser)]
#[command(name = "synthjudge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rate every instance and write scores/scores.tsv.
    Rate(RateArgs),
    /// Same as `rate --backend replay`: answer every request from the cache.
    Replay(RateArgs),
    /// Correlate score tables (and baseline metrics) with human ratings.
    Correlate(CorrelateArgs),
    /// Compare model rankings by mean Overall with the human ranking.
    Rank(RankArgs),
    /// Rate PQ with and without the condition images and compare correlations.
    AblatePq(RateArgs),
    /// Write a synthetic dataset and latent table for the mock backend.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Live,
    Replay,
    Mock,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Live => BackendKind::LiveHttp,
            BackendArg::Replay => BackendKind::Replay,
            BackendArg::Mock => BackendKind::SyntheticMock,
        }
    }
}

#[derive(Args)]
struct RateArgs {
    /// Manifest file; repeat for several tasks.
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "live")]
    backend: BackendArg,
    /// Model name sent to the endpoint; also keys the replay cache.
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
    shots: u8,
    /// JSON file with one-shot examples (needed for --shots 1).
    #[arg(long)]
    examples: Option<PathBuf>,
    #[arg(long)]
    pq_with_inputs: bool,
    /// Merge all images of a request into one horizontal panel.
    #[arg(long)]
    concat_images: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    #[arg(long, default_value_t = 3)]
    retry_limit: u32,
    /// Per-attempt timeout in seconds.
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    /// Reply cache; defaults to <out>/cache.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Refusal phrase; repeat to replace the default list.
    #[arg(long = "refusal-keyword")]
    refusal_keywords: Vec<String>,
    /// Template directory with checksums.sha256; built-in templates otherwise.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Latent table for --backend mock.
    #[arg(long)]
    mock_latents: Option<PathBuf>,
    /// Mock noise standard deviation, in score points.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Extra mock noise per image beyond the aspect's usual count.
    #[arg(long, default_value_t = 0.0)]
    extra_image_noise: f64,
    /// Mock noise seed; defaults to --seed.
    #[arg(long)]
    mock_seed: Option<u64>,
}

#[derive(Args)]
struct CorrelateArgs {
    /// Score table from a rating run; repeat for several backends.
    #[arg(long = "scores")]
    scores: Vec<PathBuf>,
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    /// Baseline metric file; repeat for several metrics.
    #[arg(long = "baseline")]
    baselines: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    /// CSV with task,model_name,score; manifest human ratings otherwise.
    #[arg(long)]
    leaderboard: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated task names or aliases.
    #[arg(long, value_delimiter = ',', default_value = "tie,sdig")]
    tasks: Vec<TaskKind>,
    #[arg(long, value_delimiter = ',', default_value = "model-a,model-b,model-c")]
    models: Vec<String>,
    #[arg(long, default_value_t = 5)]
    per_model: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RateArgs {
    fn into_config(self, kind: BackendKind) -> RunConfig {
        let cache_dir = self.cache_dir.unwrap_or_else(|| self.out.join(CACHE_DIR));
        let mut backend = BackendConfig::new(kind, self.model, cache_dir);
        backend.endpoint_url = self.endpoint;
        backend.api_key_env = self.api_key_env;
        backend.max_in_flight = self.max_in_flight;
        backend.retry_limit = self.retry_limit;
        backend.timeout_secs = self.timeout;
        if !self.refusal_keywords.is_empty() {
            backend.refusal_keywords = self.refusal_keywords;
        }
        let mut cfg = RunConfig::new(self.manifests, backend, self.out);
        cfg.shot_mode = ShotMode::from_shots(self.shots).expect("clap limits --shots to 0 or 1");
        cfg.examples = self.examples;
        cfg.pq_with_inputs = self.pq_with_inputs;
        cfg.concat_images = self.concat_images;
        cfg.seed = self.seed;
        cfg.templates = self.templates;
        cfg.mock_latents = self.mock_latents;
        cfg.mock_settings = MockSettings {
            noise_level: self.noise,
            extra_image_noise: self.extra_image_noise,
            seed: self.mock_seed.unwrap_or(self.seed),
        };
        cfg
    }
}

async fn rate(cfg: RunConfig) -> Result<(), RunError> {
    let out = cmd_rate(&cfg).await?;
    let t = &out.table;
    println!(
        "wrote {} ({} instances: {} scored, {} dropped, {} error; {} penalty-filled aspects)",
        out.scores_path.display(),
        t.rows.len(),
        t.count(RowStatus::Scored),
        t.count(RowStatus::Dropped),
        t.count(RowStatus::Error),
        out.penalty_filled
    );
    Ok(())
}

async fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Rate(a) => {
            let kind = a.backend.into();
            rate(a.into_config(kind)).await
        }
        Command::Replay(a) => rate(a.into_config(BackendKind::Replay)).await,
        Command::AblatePq(a) => {
            let kind = a.backend.into();
            let report = cmd_ablate_pq(&a.into_config(kind)).await?;
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Correlate(a) => {
            let out = cmd_correlate(&CorrelateConfig {
                scores: a.scores,
                manifests: a.manifests,
                baselines: a.baselines,
                output_dir: a.out,
            })?;
            for r in &out.metric_reports {
                print!("{}", r.to_table());
            }
            print!("{}", out.human_report.to_table());
            for r in &out.baseline_reports {
                print!("{}", r.to_table());
            }
            Ok(())
        }
        Command::Rank(a) => {
            let report = cmd_rank(&RankConfig {
                scores: a.scores,
                manifests: a.manifests,
                leaderboard: a.leaderboard,
                output_dir: a.out,
            })?;
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Synth(_) => unreachable!("handled before the runtime starts"),
    }
}

fn synth(a: SynthArgs) -> ExitCode {
    let spec = SynthSpec {
        tasks: a.tasks,
        models: a.models,
        per_model: a.per_model,
        seed: a.seed,
    };
    match write_synthetic(&spec, &a.out) {
        Ok(out) => {
            for m in &out.manifests {
                println!("manifest {}", m.display());
            }
            println!("latents {}", out.latents.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, SynthError::Spec(_)) { 2 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    if let Command::Synth(a) = cli.command {
        return synth(a);
    }
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime starts");
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
