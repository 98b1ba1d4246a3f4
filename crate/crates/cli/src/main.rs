use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coupled_diffusion::experiment::{
    compare, presets, run_experiment, ExperimentConfig, ExperimentError, ExperimentSummary,
    Overrides,
};
use coupled_diffusion::solver::Form;

/// Dual coupled diffusion experiment runner.
///
/// Exit codes: 0 success, 1 output error, 2 configuration error,
/// 3 a run hit the divergence guard, 4 the reference oracle failed.
#[derive(Parser)]
#[command(name = "cdiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every variant and form of an experiment and write its artifacts.
    Run(RunArgs),
    /// Run an experiment with at least two variants and print the comparison table.
    Compare(RunArgs),
    /// Parse and check a config, and build its problem, without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// List the registered preset instances.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Run a preset with default settings instead of a config file.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    form: Option<FormArg>,
    #[arg(long)]
    rounds: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Agent,
    Network,
    Xform,
    All,
}

impl FormArg {
    fn forms(self) -> Vec<Form> {
        match self {
            FormArg::Agent => vec![Form::Agent],
            FormArg::Network => vec![Form::Network],
            FormArg::Xform => vec![Form::XForm],
            FormArg::All => Form::ALL.to_vec(),
        }
    }
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, ExperimentError> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::from_path(path),
        (None, Some(name)) => ExperimentConfig::for_preset(name, 0),
        (None, None) => unreachable!("clap requires --config or --preset"),
    }
    .map_err(ExperimentError::Config)?;
    config
        .apply(&Overrides {
            seed: args.seed,
            // Relative to the working directory, not the config file.
            out: args
                .out
                .as_ref()
                .map(|o| std::path::absolute(o).unwrap_or_else(|_| o.clone())),
            forms: args.form.map(FormArg::forms),
            rounds: args.rounds,
        })
        .map_err(ExperimentError::Config)?;
    Ok(config)
}

fn report(summary: &ExperimentSummary, out: &std::path::Path) -> ExitCode {
    print!("{}", summary.comparison_table());
    println!("artifacts written to {}", out.display());
    if summary.diverged() {
        for r in summary.runs.iter().filter(|r| r.diverged.is_some()) {
            eprintln!(
                "{} / {} diverged at {}",
                r.variant,
                r.form.name(),
                r.diverged.as_deref().unwrap_or("")
            );
        }
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    }
}

fn fail(e: ExperimentError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn execute(
    args: &RunArgs,
    runner: fn(&ExperimentConfig) -> Result<ExperimentSummary, ExperimentError>,
) -> ExitCode {
    match load(args).and_then(|c| runner(&c).map(|s| (c, s))) {
        Ok((c, s)) => report(&s, &c.output_dir()),
        Err(e) => fail(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => execute(&args, run_experiment),
        Command::Compare(args) => execute(&args, compare),
        Command::ValidateConfig { config } => {
            let checked = ExperimentConfig::from_path(&config)
                .and_then(|c| c.build_problem().map(|p| (c, p)));
            match checked {
                Ok((c, p)) => {
                    println!(
                        "ok: {} agents, {} constraints, {} variant(s), {} form(s), {} rounds",
                        p.agent_count(),
                        p.constraint_count(),
                        c.variants().len(),
                        c.forms.len(),
                        c.rounds
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(ExperimentError::Config(e)),
            }
        }
        Command::Presets => {
            for p in presets() {
                let steps = p
                    .steps
                    .map_or("auto".to_string(), |(w, v)| format!("{w}/{v}"));
                println!("{:<22} steps {:<10} {}", p.name, steps, p.description);
            }
            ExitCode::SUCCESS
        }
    }
}
