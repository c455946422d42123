use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use indoor_poi_cli::config::{Overrides, PipelineConfig, STORE_ENV};
use indoor_poi_cli::{commands, report, CliError, CliResult};

#[derive(Parser)]
#[command(name = "indoor-poi", version, about = "Indoor POI extraction from Wi-Fi scan logs")]
struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Store directory (overrides the config file and the environment).
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Store `.scan` / `.scan.gz` logs in the raw store.
    Ingest {
        /// User for every file; defaults to the file name without extension.
        #[arg(long)]
        user: Option<String>,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Cluster one user-day and print its POI summary as CSV.
    Extract {
        #[arg(long)]
        user: String,
        /// Local date, YYYY-MM-DD.
        #[arg(long)]
        day: String,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        min_pts: Option<usize>,
        #[arg(long)]
        match_threshold: Option<f64>,
        /// Ground-truth CSV used to label the user's POI.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Write the CSV here instead of stdout.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Group POI of all users into communities.
    Communities {
        /// Comma-separated sweep thresholds.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        /// Threshold for the written community assignment.
        #[arg(long)]
        threshold: Option<f64>,
        /// Directory for sweep.csv and communities.csv.
        #[arg(long, short, default_value = ".")]
        out: PathBuf,
        /// Also write the graph as an `i j weight` edge list.
        #[arg(long)]
        graph_out: Option<PathBuf>,
    },
    /// Generate scan logs and ground truth from a scenario.
    Simulate(SimulateArgs),
    /// Compare summary CSVs with a ground-truth CSV.
    Score {
        #[arg(long = "summary", required = true, num_args = 1..)]
        summaries: Vec<PathBuf>,
        #[arg(long)]
        truth: PathBuf,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// Bundled scenario name or path to a scenario file.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, short, default_value = ".")]
    out: PathBuf,
}

fn run(cli: Cli) -> CliResult<String> {
    let env_store = std::env::var_os(STORE_ENV).map(PathBuf::from);
    let mut flags = Overrides {
        store: cli.store.clone(),
        ..Overrides::default()
    };
    match &cli.command {
        Command::Extract {
            epsilon,
            min_pts,
            match_threshold,
            ..
        } => {
            flags.epsilon = *epsilon;
            flags.min_pts = *min_pts;
            flags.match_threshold = *match_threshold;
        }
        Command::Communities {
            thresholds, threshold, ..
        } => {
            flags.thresholds = thresholds.clone();
            flags.community_threshold = *threshold;
        }
        _ => {}
    }
    let config = PipelineConfig::resolve(cli.config.as_deref(), env_store, &flags)?;

    match cli.command {
        Command::Ingest { user, files } => commands::ingest(&config, &files, user.as_deref()),
        Command::Extract {
            user, day, truth, out, ..
        } => {
            let date = report::parse_date(&day)?;
            commands::extract(&config, &user, date, truth.as_deref(), out.as_deref())
        }
        Command::Communities { out, graph_out, .. } => commands::communities(&config, &out, graph_out.as_deref()),
        Command::Simulate(args) => commands::simulate(&args.scenario, args.seed, &args.out, config.utc_offset()),
        Command::Score { summaries, truth } => {
            commands::score_files(&summaries, &truth, config.utc_offset()).map(|s| format!("{s}\n"))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(CliError { kind, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(kind.code() as u8)
        }
    }
}
