use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vtp_cli::commands::{self, RunOutputs};

#[derive(Parser)]
#[command(name = "vtp", version, about = "Deterministic verify-then-pay runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full lifecycle for a config file or shipped scenario name.
    RunFlow {
        #[arg(long)]
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the canonical transcript here.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Export the audit ledger as JSON Lines here.
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Run a threat scenario and report whether it was blocked.
    Attack {
        name: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Classify an amount in minor units.
    Tier {
        #[arg(long)]
        amount: u64,
        #[arg(long, default_value = "USD")]
        currency: String,
    },
    Audit {
        #[command(subcommand)]
        command: AuditCommand,
    },
    Explorer {
        #[command(subcommand)]
        command: ExplorerCommand,
    },
    /// Serve the HTTP JSON API on localhost.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Subcommand)]
enum AuditCommand {
    /// Recompute the hash chain of an exported ledger.
    Verify {
        #[arg(long)]
        file: PathBuf,
    },
}

#[derive(Subcommand)]
enum ExplorerCommand {
    /// Look up a transaction after running a config.
    Tx {
        #[arg(long)]
        rail: String,
        #[arg(long)]
        tx: String,
        #[arg(long, default_value = "ecommerce_shopper")]
        config: String,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<bool> {
    match command {
        Command::RunFlow { config, seed, transcript, audit } => {
            let config = commands::load_config(&config, seed)?;
            let (summary, settled) = commands::run_flow(config, &RunOutputs { transcript, audit })?;
            println!("{summary}");
            Ok(settled)
        }
        Command::Attack { name, seed } => {
            let report = commands::attack(&name, seed)?;
            println!("{}", commands::canonical_line(&serde_json::to_value(&report)?)?);
            Ok(report.blocked)
        }
        Command::Tier { amount, currency } => {
            println!("{}", commands::tier(amount, &currency)?);
            Ok(true)
        }
        Command::Audit { command: AuditCommand::Verify { file } } => {
            let valid = commands::audit_verify(&file)?;
            println!("{}", if valid { "valid" } else { "invalid" });
            Ok(valid)
        }
        Command::Explorer { command: ExplorerCommand::Tx { rail, tx, config } } => {
            let rows = commands::explorer_tx(commands::load_config(&config, None)?, &rail, &tx)?;
            for row in &rows {
                println!("{}", commands::canonical_line(&serde_json::to_value(row)?)?);
            }
            Ok(!rows.is_empty())
        }
        Command::Serve { port } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(vtp_cli::api::serve(port))?;
            Ok(true)
        }
    }
}
