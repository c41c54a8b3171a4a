use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nnmf::config::ExperimentConfig;
use nnmf::pipeline::{
    cmd_evaluate, cmd_preprocess, cmd_report, cmd_search, cmd_stability, cmd_train, Pipeline,
};
use nnmf::Error;

#[derive(Parser, Debug)]
#[command(
    name = "nnmf",
    version,
    about = "Nearest-neighbors matrix factorization experiments"
)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, default_value = "experiment.toml")]
    config: PathBuf,

    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true, env = "NNMF_OUT_DIR")]
    out: Option<PathBuf>,

    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load, binarize, filter and split the dataset.
    Preprocess,
    /// Train every configured model and baseline.
    Train,
    /// Long-tail MAP/Recall of every trained model.
    Evaluate,
    /// Multi-seed recommendation and representation stability.
    Stability {
        /// Comma-separated initialization seeds.
        #[arg(long, value_delimiter = ',')]
        seed_list: Option<Vec<u64>>,
    },
    /// Random hyperparameter search on the validation split.
    Search {
        /// Models to search (default: all).
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        /// Search one shared parameter set for all selected models.
        #[arg(long)]
        matched: bool,
    },
    /// Collect result tables into a Markdown/JSON report.
    Report,
}

fn run(cli: Cli) -> nnmf::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let config = ExperimentConfig::load(&cli.config)?;
    let p = Pipeline::new(config, cli.out);
    match cli.command {
        Command::Preprocess => {
            let s = cmd_preprocess(&p)?;
            println!(
                "users={} items={} interactions={} density={:.2}%",
                s.users, s.items, s.interactions, s.density_percent
            );
        }
        Command::Train => {
            for path in cmd_train(&p)? {
                println!("{}", path.display());
            }
        }
        Command::Evaluate => {
            for row in cmd_evaluate(&p)? {
                let cells: Vec<String> = row.values.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
                println!("{} {}", row.model, cells.join(" "));
            }
        }
        Command::Stability { seed_list } => {
            let out = cmd_stability(&p, seed_list.as_deref())?;
            for r in &out.rows {
                println!("{} {}@{} {:.4}", r.model, r.kind.as_str(), r.cutoff, r.overall);
            }
            for f in &out.failures {
                eprintln!("seed {} of {} failed: {}", f.seed, f.model, f.error);
            }
        }
        Command::Search { models, matched } => {
            for (name, c) in cmd_search(&p, &models, matched)? {
                println!(
                    "{name}: lr={} reg={} f={} k={}/{}",
                    c.learning_rate, c.reg_p, c.f, c.user_k, c.item_k
                );
            }
        }
        Command::Report => println!("{}", cmd_report(&p)?.display()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
