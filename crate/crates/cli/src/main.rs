use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use pfmab_cli::{run_experiment, CliError, Command, ExperimentSpec};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CommandArg {
    Run,
    Sweep,
    CompareEnhanced,
    Bounds,
    Ingest,
}

impl From<CommandArg> for Command {
    fn from(c: CommandArg) -> Self {
        match c {
            CommandArg::Run => Command::Run,
            CommandArg::Sweep => Command::Sweep,
            CommandArg::CompareEnhanced => Command::CompareEnhanced,
            CommandArg::Bounds => Command::Bounds,
            CommandArg::Ingest => Command::Ingest,
        }
    }
}

/// Simulate personalized federated bandits and compute their regret bounds.
///
/// Flags override values read from --spec; the resolved spec is written to
/// spec.txt in the output directory so the run can be repeated exactly.
#[derive(Debug, Parser)]
#[command(name = "pfmab", version)]
struct Args {
    /// Subcommand; may instead come from the spec file's `command` key.
    command: Option<CommandArg>,
    /// Flat key=value experiment file.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// paper9, random:M:K:seed[:lo:hi], or a path to an M x K instance CSV.
    #[arg(long)]
    model: Option<String>,
    /// Personalization degree for run, bounds and compare-enhanced.
    #[arg(long, conflicts_with = "alphas")]
    alpha: Option<String>,
    /// Comma-separated personalization degrees.
    #[arg(long)]
    alphas: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long)]
    comm_cost: Option<String>,
    /// const:L, logT:L, exp or explogT.
    #[arg(long)]
    schedule: Option<String>,
    /// Number of independent replications.
    #[arg(long)]
    seeds: Option<String>,
    /// Master seed from which replication seeds are derived.
    #[arg(long)]
    seed: Option<String>,
    /// Use the gap-adaptive exploration lengths.
    #[arg(long)]
    enhanced: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Ratings CSV (user_id,item_id,rating) for ingest.
    #[arg(long)]
    ratings: Option<String>,
    #[arg(long)]
    client_groups: Option<String>,
    #[arg(long)]
    arm_groups: Option<String>,
    #[arg(long)]
    partition_seed: Option<String>,
    #[arg(long)]
    rating_scale: Option<String>,
}

fn resolve(args: Args) -> Result<ExperimentSpec, CliError> {
    let mut spec = match (&args.spec, args.command) {
        (Some(path), command) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            let mut spec = ExperimentSpec::parse(&text)?;
            if let Some(c) = command {
                spec.command = c.into();
            }
            spec
        }
        (None, Some(c)) => ExperimentSpec::new(c.into()),
        (None, None) => return Err(CliError::MissingField("command")),
    };
    let overrides = [
        ("model", args.model),
        ("alphas", args.alpha.or(args.alphas)),
        ("horizon", args.horizon),
        ("comm_cost", args.comm_cost),
        ("schedule", args.schedule),
        ("seeds", args.seeds),
        ("seed", args.seed),
        ("out", args.out),
        ("ratings", args.ratings),
        ("client_groups", args.client_groups),
        ("arm_groups", args.arm_groups),
        ("partition_seed", args.partition_seed),
        ("rating_scale", args.rating_scale),
    ];
    for (key, value) in overrides {
        if let Some(value) = value {
            spec.set(key, &value)?;
        }
    }
    if args.enhanced {
        spec.enhanced = true;
    }
    Ok(spec)
}

fn main() -> ExitCode {
    let result = resolve(Args::parse()).and_then(|spec| run_experiment(&spec));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
