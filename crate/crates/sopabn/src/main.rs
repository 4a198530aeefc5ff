use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sopabn::config::{ExperimentConfig, OutputFormat};
use sopabn::experiments::{
    run_ablation, run_comparison, run_dependence_study, run_estimate, run_oracle, RunContext, RunError,
};
use sopabn::output::{write_artifacts, Artifact};

#[derive(Parser)]
#[command(name = "sopabn", version, about = "Shapley-Owen interaction effects of PABN process models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate every pairwise interaction with the configured algorithm.
    Estimate(Common),
    /// Exact posterior-averaged indices of a linear model.
    Oracle(Common),
    /// Algorithm 1 MSE across level ratios at a fixed budget.
    Ablation(Common),
    /// Algorithm 1 vs Algorithm 2 (MC and QMC) at matched simulation budgets.
    Compare(Common),
    /// Feedback-model interactions across PH dependence levels.
    Dependence(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Both,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Both => OutputFormat::Both,
        }
    }
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long, env = "SOPABN_SEED")]
    seed: Option<u64>,
    /// Output directory; defaults to the config's output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Worker threads for macro-replications.
    #[arg(long, env = "SOPABN_THREADS")]
    threads: Option<usize>,
}

fn run(name: &str, args: &Common, execute: impl Fn(&RunContext) -> Result<Vec<Artifact>, RunError>) -> Result<(), RunError> {
    if let Some(t) = args.threads {
        // Fails only if a pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let config = ExperimentConfig::load(&args.config)?;
    let ctx = RunContext::new(config, args.seed)?;
    let artifacts = execute(&ctx)?;
    let out = &ctx.config.output;
    let dir = args.out.clone().unwrap_or_else(|| out.dir.clone());
    let format = args.format.map(OutputFormat::from).unwrap_or(out.format);
    let stem = out.stem.clone().unwrap_or_else(|| name.to_string());
    for path in write_artifacts(&dir, &stem, format, &artifacts)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Estimate(a) => run("estimate", a, |c| Ok(run_estimate(c)?.artifacts()?)),
        Command::Oracle(a) => run("oracle", a, |c| Ok(run_oracle(c)?.artifacts()?)),
        Command::Ablation(a) => run("ablation", a, |c| Ok(run_ablation(c)?.artifacts()?)),
        Command::Compare(a) => run("compare", a, |c| Ok(run_comparison(c)?.artifacts()?)),
        Command::Dependence(a) => run("dependence", a, |c| Ok(run_dependence_study(c)?.artifacts()?)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
