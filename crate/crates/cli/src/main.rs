use std::path::{Path, PathBuf};
use std::process::ExitCode;

use airo_core::audit::AuditStatus;
use airo_core::invoke::ModelConfig;
use airo_core::provenance::InteractionLog;
use airo_core::redact::Tier;
use airo_core::rocrate::CrateArchive;
use airo_core::run::{ErrorClass, RunDir, RunError};
use airo_core::verify::{verify_against_source, verify_crate};
use clap::{Parser, Subcommand};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_TRANSPORT: u8 = 3;

/// Staged, inspectable model-assisted drafting over a run directory.
#[derive(Parser)]
#[command(name = "airo", version)]
struct Cli {
    /// Run directory to operate on.
    #[arg(long, global = true, default_value = ".")]
    run_dir: PathBuf,
    /// Model config file, instead of the run's config.json.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replay fixtures/<FIXTURE>.txt instead of calling a model.
    #[arg(long, global = true, value_name = "FIXTURE")]
    stub: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a run directory with demo inputs and default templates.
    Init { label: String },
    /// Check bundle, templates, config and card narrative.
    Validate,
    /// Stage 1: group the notes into a taxonomy.
    Taxonomy,
    /// Stage 2: draft the related-work section.
    Draft,
    /// Audit the draft's claims against the bundle.
    Audit,
    /// Attach a resolver note to an audit row.
    Resolve {
        /// Row number as shown in outputs/audit.md.
        #[arg(long)]
        row: usize,
        #[arg(long)]
        note: String,
    },
    /// Write a redacted copy of the interaction log.
    Redact {
        #[arg(long)]
        tier: Tier,
    },
    /// Build the inspection card.
    Card,
    /// Package the run as a crate.
    Pack {
        #[arg(long)]
        tier: Tier,
        /// Output path; defaults to crates/<run_id>-<tier>.zip in the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify a packed crate.
    Verify {
        #[arg(value_name = "CRATE")]
        crate_path: PathBuf,
        /// Unredacted log to compare against (auditor escrow check).
        #[arg(long)]
        source_log: Option<PathBuf>,
        /// Print the report as JSON instead of Markdown.
        #[arg(long)]
        json: bool,
    },
}

enum Failure {
    Run(RunError),
    Message(u8, String),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure::Run(e)
    }
}

fn effective_config(dir: &RunDir, cli: &Cli) -> Result<ModelConfig, RunError> {
    let config = dir.config(cli.config.as_deref())?.with_env_endpoint();
    Ok(match &cli.stub {
        Some(fixture) => config.stubbed(fixture.clone()),
        None => config,
    })
}

fn verify(crate_path: &Path, source_log: Option<&Path>, json: bool) -> Result<(), Failure> {
    let archive = CrateArchive::read_from(crate_path).map_err(|e| {
        Failure::Message(EXIT_FAILURE, format!("{}: crate unreadable: {e}", crate_path.display()))
    })?;
    let mut report = verify_crate(&archive);
    if let Some(path) = source_log {
        let raw = std::fs::read(path)
            .map_err(|e| Failure::Message(EXIT_FAILURE, format!("{}: {e}", path.display())))?;
        let log = InteractionLog::from_json(&raw)
            .map_err(|e| Failure::Message(EXIT_FAILURE, format!("{}: {e}", path.display())))?;
        let source = verify_against_source(&archive, &log)
            .map_err(|e| Failure::Message(EXIT_FAILURE, e.to_string()))?;
        report = report.with_source(source);
    }
    if json {
        print!("{}", report.to_pretty_json());
    } else {
        print!("{}", report.to_markdown());
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Message(EXIT_FAILURE, "verification failed".into()))
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let open = || RunDir::open(&cli.run_dir);
    match &cli.command {
        Command::Init { label } => {
            let dir = RunDir::init(&cli.run_dir, label)?;
            let state = dir.state()?;
            println!("initialized {} in {}", state.run_id, dir.root().display());
        }
        Command::Validate => {
            let report = open()?.validate();
            for item in &report.items {
                if item.problems.is_empty() {
                    println!("ok    {}", item.subject);
                }
                for p in &item.problems {
                    println!("FAIL  {}: {p}", item.subject);
                }
            }
            if !report.passed() {
                return Err(Failure::Message(EXIT_FAILURE, "validation failed".into()));
            }
        }
        Command::Taxonomy => {
            let dir = open()?;
            let summary = dir.run_taxonomy(&dir.client(), &effective_config(&dir, cli)?)?;
            println!(
                "taxonomy written to {} ({} attempt(s))",
                summary.output.display(),
                summary.attempts
            );
            if summary.budget_exceeded {
                eprintln!("warning: reply stopped at the max_tokens budget");
            }
        }
        Command::Draft => {
            let dir = open()?;
            let summary = dir.run_draft(&dir.client(), &effective_config(&dir, cli)?)?;
            println!(
                "draft written to {} ({} attempt(s))",
                summary.output.display(),
                summary.attempts
            );
            if summary.budget_exceeded {
                eprintln!("warning: reply stopped at the max_tokens budget");
            }
            if let Some(problem) = summary.draft_problem {
                eprintln!("warning: draft does not have the expected structure: {problem}");
            }
        }
        Command::Audit => {
            let summary = open()?.audit()?;
            println!(
                "{} claims: {} supported, {} need human check, {} unsupported, {} invented citations",
                summary.rows.len(),
                summary.count(AuditStatus::Supported),
                summary.count(AuditStatus::NeedsHumanCheck),
                summary.count(AuditStatus::Unsupported),
                summary.count(AuditStatus::InventedCitation),
            );
            for f in &summary.findings {
                println!("note: {f}");
            }
            if summary.reapplied_notes > 0 {
                println!("{} resolver note(s) carried over", summary.reapplied_notes);
            }
        }
        Command::Resolve { row, note } => {
            let r = open()?.resolve(*row, note)?;
            println!("row {} ({}) resolved: {}", r.row + 1, r.status, r.note);
        }
        Command::Redact { tier } => {
            let log = open()?.redact(*tier)?;
            println!(
                "{} records redacted at the {} tier",
                log.records.len(),
                log.policy.tier
            );
        }
        Command::Card => {
            let card = open()?.card()?;
            println!("card written for {}", card.run_id);
        }
        Command::Pack { tier, out } => {
            let summary = open()?.pack(*tier, out.as_deref())?;
            println!(
                "{} ({} members, sha256 {})",
                summary.path.display(),
                summary.members,
                summary.sha256
            );
        }
        Command::Verify {
            crate_path,
            source_log,
            json,
        } => verify(crate_path, source_log.as_deref(), *json)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Failure => EXIT_FAILURE,
                ErrorClass::Usage => EXIT_USAGE,
                ErrorClass::Transport => EXIT_TRANSPORT,
            })
        }
        Err(Failure::Message(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
