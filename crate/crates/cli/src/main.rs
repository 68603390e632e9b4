//! `chor`: parse, validate and compile choreographies, evaluate decisions,
//! run environments kept in a local store, check conformance and serve the
//! HTTP interface.
//!
//! Exit status is 0 on success, 1 when the operation itself fails (an invalid
//! model, a rejected transaction, a broken log) and 2 on bad usage.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "chor", version, about = "Blockchain-style execution of BPMN choreographies")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,

    /// Directory holding environments, consortiums and stored content.
    #[arg(long, global = true, env = "CHOR_STORE_DIR", default_value = ".chor")]
    store: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a BPMN choreography and print the model.
    Parse { file: PathBuf },
    /// Check a choreography against the modelling rules.
    Validate { file: PathBuf },
    /// Compile a choreography into a contract program.
    Compile {
        file: PathBuf,
        /// Print the contract interface only.
        #[arg(long)]
        interface: bool,
    },
    /// Decision models.
    #[command(subcommand)]
    Dmn(DmnCommand),
    /// Environments in the store.
    #[command(subcommand)]
    Env(EnvCommand),
    /// Compile a choreography and deploy it to an environment.
    Deploy {
        env: String,
        /// A `.bpmn` file or a scenario directory.
        model: PathBuf,
    },
    /// Process instances.
    #[command(subcommand)]
    Instance(InstanceCommand),
    /// Invoke one operation of an instance.
    Invoke {
        env: String,
        instance: String,
        element: String,
        op: InvokeOp,
        #[command(flatten)]
        who: Who,
        /// Message payload as a JSON object, or `@file`.
        #[arg(long)]
        payload: Option<String>,
    },
    /// Run one trace against a fresh environment and the reference oracle.
    RunTrace {
        scenario: PathBuf,
        /// Trace JSON, as found in conformance reports.
        trace: PathBuf,
    },
    /// Generate labelled traces for a scenario and check the engine against them.
    Conformance {
        scenario: PathBuf,
        /// Number of mutated traces on top of the basic paths.
        #[arg(long, default_value_t = 400)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// What an added step is.
        #[arg(long, value_enum, default_value_t = AddArg::Duplicate)]
        add: AddArg,
        /// Also write the full report, with every trace, here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Query an environment's committed transactions.
    Audit {
        env: String,
        #[arg(long)]
        instance: Option<String>,
        #[arg(long)]
        element: Option<String>,
        #[arg(long)]
        op: Option<String>,
        /// Membership of the invoker.
        #[arg(long)]
        invoker: Option<String>,
    },
    /// Verify the digest chain of an exported log.
    ChainVerify { file: PathBuf },
    /// Serve the HTTP interface and the participant console.
    Serve {
        #[arg(long, env = "CHOR_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "CHOR_BIND", default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
        /// Scenario bundles that can be deployed by name.
        #[arg(long, env = "CHOR_SCENARIO_DIR")]
        scenarios: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum DmnCommand {
    /// Evaluate a decision model.
    Eval {
        file: PathBuf,
        /// Input data as a JSON object, or `@file`.
        #[arg(long)]
        inputs: String,
    },
}

#[derive(Debug, Subcommand)]
enum EnvCommand {
    /// Create an environment for a consortium.
    Create {
        id: String,
        /// Consortium JSON, or a scenario `bindings.json` containing one.
        #[arg(long)]
        consortium: PathBuf,
    },
    /// List stored environments.
    List,
    /// Write an environment's log as JSON lines.
    Export { id: String, out: PathBuf },
}

#[derive(Debug, Subcommand)]
enum InstanceCommand {
    /// Create an instance of a deployed contract.
    Create {
        env: String,
        contract: String,
        #[command(flatten)]
        who: Who,
        /// Take role bindings and decision models from a scenario directory.
        #[arg(long, conflicts_with_all = ["bindings", "dmn"])]
        scenario: Option<PathBuf>,
        /// Role bindings JSON, or a scenario `bindings.json`.
        #[arg(long)]
        bindings: Option<PathBuf>,
        /// Decision model for a business rule task, as `TASK=FILE`.
        #[arg(long, value_parser = parse_assignment)]
        dmn: Vec<(String, PathBuf)>,
    },
    /// Show an instance.
    Show {
        env: String,
        instance: String,
    },
}

#[derive(Debug, Clone, Args)]
struct Who {
    /// Membership of the caller.
    #[arg(long)]
    member: String,
    /// User within the membership.
    #[arg(long)]
    user: String,
    /// Attributes as a JSON object, replacing the enrolled ones.
    #[arg(long)]
    attributes: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InvokeOp {
    Message,
    Confirm,
    Brt,
    /// Read the message payload and compare it with the recorded hash.
    Fetch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AddArg {
    Duplicate,
    Graft,
}

fn parse_assignment(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), PathBuf::from(v))),
        _ => Err(format!("expected TASK=FILE, got `{s}`")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    let name = cli.command_name();
    match commands::run(cli) {
        Ok(out) => {
            out.print(json);
            ExitCode::from(out.status)
        }
        Err(e) => {
            e.report(name, json);
            ExitCode::from(e.status())
        }
    }
}

impl Cli {
    fn command_name(&self) -> &'static str {
        match &self.command {
            Command::Parse { .. } => "parse",
            Command::Validate { .. } => "validate",
            Command::Compile { .. } => "compile",
            Command::Dmn(_) => "dmn",
            Command::Env(_) => "env",
            Command::Deploy { .. } => "deploy",
            Command::Instance(_) => "instance",
            Command::Invoke { .. } => "invoke",
            Command::RunTrace { .. } => "run-trace",
            Command::Conformance { .. } => "conformance",
            Command::Audit { .. } => "audit",
            Command::ChainVerify { .. } => "chain-verify",
            Command::Serve { .. } => "serve",
        }
    }
}
