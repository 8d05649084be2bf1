use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mvlov_cli::{load_config, run, schema, RunError, EXIT_OK, EXIT_VALIDATION};

/// Experiments on McKean-Vlasov particle systems and their Fokker-Planck limits.
#[derive(Parser)]
#[command(name = "mvlov", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Print an annotated reference config.
    Schema,
}

/// Worker threads come from `MVLOV_THREADS`; results do not depend on it.
fn init_threads() -> Result<(), RunError> {
    if let Ok(v) = std::env::var("MVLOV_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| RunError::Config(format!("MVLOV_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| RunError::Config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Schema => {
            print!("{}", schema::REFERENCE);
            Ok(())
        }
        Command::Validate { config } => load_config(&config).map(|c| {
            println!("ok: {} ({})", c.experiment.name(), c.config_hash());
        }),
        Command::Run { config } => {
            let cfg = load_config(&config)?;
            let outcome = run(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&outcome.manifest.summary).unwrap_or_default());
            eprintln!("artifacts in {}", outcome.output_dir.display());
            Ok(())
        }
    });
    match result {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            debug_assert!(code != EXIT_OK);
            ExitCode::from(if code == 0 { EXIT_VALIDATION as u8 } else { code as u8 })
        }
    }
}
