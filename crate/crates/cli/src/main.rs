mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use g3_core::rag::PromptSpec;
use g3_core::Error;

#[derive(Parser, Debug)]
#[command(name = "g3", version, about = "Geolocalize images with aligned retrieval, LMM candidates and verification")]
pub struct Cli {
    /// More logging on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic world: metadata and embedding files.
    Synth(SynthArgs),
    /// Train the alignment model on image/text embeddings and coordinates.
    Train(TrainArgs),
    /// Vectorize a database and write a searchable index.
    BuildIndex(BuildIndexArgs),
    /// Predict coordinates for query embeddings.
    Predict(PredictArgs),
    /// Score a predictions file against ground truth.
    Evaluate(EvaluateArgs),
    /// Distance statistics of retrieved neighbours, raw versus aligned.
    CompareRetrieval(CompareArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration; its values override flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where to write the JSON report; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_clusters: Option<usize>,
    #[arg(long)]
    pub points_per_cluster: Option<usize>,
    #[arg(long)]
    pub embedding_noise_sigma: Option<f64>,
    #[arg(long)]
    pub cluster_radius_km: Option<f64>,
    #[arg(long)]
    pub image_dim: Option<usize>,
    #[arg(long)]
    pub text_dim: Option<usize>,
    #[arg(long)]
    pub lookalike_group_size: Option<usize>,
    #[arg(long)]
    pub lookalike_similarity: Option<f64>,
    #[arg(long)]
    pub min_center_separation_km: Option<f64>,
    /// Held-out queries drawn per cluster.
    #[arg(long)]
    pub queries_per_cluster: Option<usize>,
    /// RNG stream of the held-out queries (at least 1).
    #[arg(long)]
    pub query_stream: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct DatabaseArgs {
    /// Metadata table (.csv or .jsonl).
    #[arg(long)]
    pub metadata: PathBuf,
    /// Image embeddings (G3EM).
    #[arg(long)]
    pub image_embeddings: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub db: DatabaseArgs,
    /// Text embeddings (G3EM), same ids as the image embeddings.
    #[arg(long)]
    pub text_embeddings: PathBuf,
    /// Checkpoint to write (G3NN).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<u32>,
    /// Learning-rate decay per epoch.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Initial value of both temperatures.
    #[arg(long)]
    pub t_init: Option<f64>,
    #[arg(long)]
    pub temperature_lr: Option<f64>,
    /// `sum` or `mean` over the batch.
    #[arg(long)]
    pub reduction: Option<String>,
    #[arg(long)]
    pub head_hidden_dim: Option<usize>,
    #[arg(long)]
    pub text_space_dim: Option<usize>,
}

#[derive(Args, Debug)]
pub struct BuildIndexArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub db: DatabaseArgs,
    /// Alignment checkpoint used to vectorize the database.
    #[arg(long, required_unless_present = "raw")]
    pub model: Option<PathBuf>,
    /// Index unit-normalized raw embeddings instead of aligned vectors.
    #[arg(long, conflicts_with = "model")]
    pub raw: bool,
    /// Index file to write (G3IX).
    #[arg(long)]
    pub out: PathBuf,
    /// Build an IVF section with this many lists.
    #[arg(long)]
    pub ivf_clusters: Option<usize>,
    #[arg(long)]
    pub kmeans_iters: Option<usize>,
    #[arg(long)]
    pub nprobe: Option<usize>,
    /// k-means seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    /// Query image embeddings (G3EM).
    #[arg(long)]
    pub query_embeddings: PathBuf,
    /// Ground truth for the queries; enables the accuracy report.
    #[arg(long)]
    pub query_metadata: Option<PathBuf>,
    /// Directory holding the query images, named by id; sent to HTTP models.
    #[arg(long)]
    pub images_dir: Option<PathBuf>,
    /// Predictions file (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Base seed for LMM sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Prompt reference counts, e.g. `0:0,5:5,10:10,15:15`.
    #[arg(long, value_parser = parse_prompt_specs)]
    pub prompts: Option<PromptSpecs>,
    /// Generations per prompt (N).
    #[arg(long)]
    pub n_generations: Option<usize>,
    /// Top retrieved coordinates added to each pool (S).
    #[arg(long)]
    pub s_retrieved: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Concurrent LMM requests per query.
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Queries processed concurrently.
    #[arg(long)]
    pub query_workers: Option<usize>,
    #[arg(long)]
    pub negative_seed: Option<u64>,
    /// Count failed queries as misses instead of leaving them out.
    #[arg(long)]
    pub include_failed: bool,
    /// `mock-centroid`, `mock-echo` or `http`.
    #[arg(long)]
    pub lmm: Option<String>,
    /// Noise of the centroid mock.
    #[arg(long)]
    pub mock_sigma_km: Option<f64>,
    #[arg(long)]
    pub lmm_url: Option<String>,
    #[arg(long)]
    pub lmm_model: Option<String>,
    /// Environment variable holding the bearer token.
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub timeout_secs: Option<f64>,
    #[arg(long)]
    pub retries: Option<u32>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Where to write the JSON report; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Predictions (JSON lines).
    #[arg(long)]
    pub predictions: PathBuf,
    /// Ground-truth metadata (.csv or .jsonl).
    #[arg(long)]
    pub metadata: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Where to write the JSON report; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub db: DatabaseArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub query_embeddings: PathBuf,
    #[arg(long)]
    pub query_metadata: PathBuf,
    /// Neighbour counts to report.
    #[arg(long, value_delimiter = ',', default_values_t = [5usize, 10, 15])]
    pub top_n: Vec<usize>,
}

/// A comma-separated prompt list as one flag value.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSpecs(pub Vec<PromptSpec>);

fn parse_prompt_specs(s: &str) -> Result<PromptSpecs, String> {
    s.split(',')
        .map(|item| {
            let (p, n) = item.trim().split_once(':').ok_or_else(|| format!("expected pos:neg, got {item:?}"))?;
            let p = p.trim().parse().map_err(|_| format!("bad positive count {p:?}"))?;
            let n = n.trim().parse().map_err(|_| format!("bad negative count {n:?}"))?;
            Ok(PromptSpec::new(p, n))
        })
        .collect::<Result<_, _>>()
        .map(PromptSpecs)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) => 1,
        Error::Transport(_) => 3,
        Error::InvalidCoordinate(_) | Error::Format(_) | Error::Data(_) | Error::Coordinate(_) | Error::Io(_) => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_specs_parse() {
        assert_eq!(
            parse_prompt_specs("0:0, 5:5,10:10").unwrap().0,
            vec![PromptSpec::new(0, 0), PromptSpec::new(5, 5), PromptSpec::new(10, 10)]
        );
        assert!(parse_prompt_specs("5").is_err());
        assert!(parse_prompt_specs("a:1").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Usage("x".into())), 1);
        assert_eq!(exit_code(&Error::Data("x".into())), 2);
        assert_eq!(exit_code(&Error::Format("x".into())), 2);
        assert_eq!(exit_code(&Error::Transport("x".into())), 3);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
