use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use msde_cli::{config::SCHEMA, list_models, run, ExperimentConfig};

#[derive(Parser)]
#[command(name = "msde", about = "Experiments for multivalued SDEs", version)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Artifact directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Print the built-in model catalogue.
    ListModels,
    /// Print the config file schema.
    Schema,
    /// Print the version.
    Version,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match cli.command {
        Command::ListModels => print!("{}", list_models()),
        Command::Schema => print!("{SCHEMA}"),
        Command::Version => println!("msde {}", env!("CARGO_PKG_VERSION")),
        Command::Run { config } => {
            let outcome = ExperimentConfig::load(&config).and_then(|cfg| run(&cfg, cli.output.as_deref()));
            match outcome {
                Ok(o) => {
                    if !cli.quiet {
                        for line in &o.summary {
                            println!("{line}");
                        }
                        println!("wrote {}", o.csv_path.display());
                        println!("wrote {}", o.json_path.display());
                    }
                    return ExitCode::from(o.exit_code() as u8);
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(1);
                }
            }
        }
    }
    ExitCode::SUCCESS
}
