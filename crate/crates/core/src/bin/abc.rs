//! Command-line front end: run scenarios, verify certificates, cut
//! checkpoints and replay the worked examples.
//!
//! Exit codes: 0 success, 1 expectation or verification failure, 2 parse,
//! configuration or input error, 3 internal invariant violation.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use abc_core::builder::key_for;
use abc_core::checkpoint::{bootstrap, confirm_checkpoint, make_checkpoint, pruning_mismatches};
use abc_core::message::DecodeError;
use abc_core::scenario::{render_text, run_scenario, RunOptions, Scenario, ScenarioError, FIGURES};
use abc_core::{Checker, ConfirmationCertificate, DagStore, Ingest, Message, MessageId, TestScheme};

#[derive(Parser)]
#[command(name = "abc", version, about = "Consensus-relaxed proof-of-stake ledger and simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and check its expectations.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<u64>,
        /// fifo, random or scripted
        #[arg(long)]
        policy: Option<String>,
        #[arg(long, value_enum, default_value = "text")]
        report: ReportFormat,
        /// Write every certificate and the message log (dag.bin) here.
        #[arg(long)]
        emit_certificates: Option<PathBuf>,
        /// Cross-check with the partitioned stake bounds.
        #[arg(long)]
        partitions: Option<usize>,
        /// Write the event log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Check a certificate against a message log.
    Verify { dag: PathBuf, certificate: PathBuf },
    /// Make or bootstrap from a checkpoint.
    #[command(subcommand)]
    Checkpoint(CheckpointCommand),
    /// Run every shipped worked example.
    ReplayFigures {
        #[arg(long, value_enum, default_value = "text")]
        report: ReportFormat,
    },
}

#[derive(Subcommand)]
enum CheckpointCommand {
    /// Summarise past(frontier) of a message log into a signed checkpoint.
    Make {
        dag: PathBuf,
        /// Comma-separated message ids (hex, or unique prefixes).
        #[arg(long, value_delimiter = ',', required = true)]
        frontier: Vec<String>,
        /// Name of the validator signing the checkpoint.
        #[arg(long)]
        creator: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Confirm a checkpoint in a message log, bootstrap a fresh store from
    /// it and the messages after it, and compare statuses.
    Bootstrap {
        dag: PathBuf,
        /// Checkpoint id (hex, or a unique prefix).
        #[arg(long)]
        checkpoint: String,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}: {1}")]
    Decode(String, DecodeError),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            _ => 2,
        }
    }
}

fn read(p: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(p).map_err(|e| CliError::Io(p.to_path_buf(), e))
}

fn write(p: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(p, bytes).map_err(|e| CliError::Io(p.to_path_buf(), e))
}

/// Messages as a sequence of big-endian u32 length prefixes and encodings.
fn encode_log(messages: &[Message]) -> Vec<u8> {
    let mut out = Vec::new();
    for m in messages {
        let e = m.encode();
        out.extend_from_slice(&(e.len() as u32).to_be_bytes());
        out.extend_from_slice(&e);
    }
    out
}

fn decode_log(bytes: &[u8]) -> Result<Vec<Message>, CliError> {
    let mut out = Vec::new();
    let mut rest = bytes;
    while !rest.is_empty() {
        if rest.len() < 4 {
            return Err(CliError::Input("message log ends inside a length prefix".into()));
        }
        let n = u32::from_be_bytes(rest[..4].try_into().expect("four bytes")) as usize;
        rest = &rest[4..];
        if rest.len() < n {
            return Err(CliError::Input("message log ends inside a message".into()));
        }
        let m = Message::decode(&rest[..n]).map_err(|e| CliError::Decode(format!("message {}", out.len()), e))?;
        out.push(m);
        rest = &rest[n..];
    }
    Ok(out)
}

/// A store holding the log's messages; the first must be the genesis.
fn load_store(path: &Path) -> Result<(DagStore, Vec<Message>), CliError> {
    let messages = decode_log(&read(path)?)?;
    let Some(Message::Genesis(g)) = messages.first() else {
        return Err(CliError::Input("message log must start with the genesis".into()));
    };
    let mut s = DagStore::new(g.clone()).map_err(|e| CliError::Input(format!("genesis rejected: {e}")))?;
    for m in &messages[1..] {
        if let Ingest::Rejected(r) = s.ingest(m.clone()) {
            return Err(CliError::Input(format!("message {} rejected: {r}", m.id().short())));
        }
    }
    Ok((s, messages))
}

/// A full id, or a prefix naming exactly one message of the log.
fn resolve(messages: &[Message], s: &str) -> Result<MessageId, CliError> {
    if let Some(id) = MessageId::from_hex(s) {
        return Ok(id);
    }
    let p = s.to_ascii_lowercase();
    let hits: BTreeSet<MessageId> = messages.iter().map(Message::id).filter(|id| id.to_string().starts_with(&p)).collect();
    match hits.len() {
        1 => Ok(*hits.first().expect("one")),
        0 => Err(CliError::Input(format!("no message id starts with `{s}`"))),
        _ => Err(CliError::Input(format!("`{s}` names {} messages", hits.len()))),
    }
}

fn run(
    path: &Path,
    opts: RunOptions,
    format: ReportFormat,
    emit: Option<&Path>,
    log: Option<&Path>,
) -> Result<u8, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    let sc = Scenario::parse(&text)?;
    let out = run_scenario(&sc, &opts)?;
    match format {
        ReportFormat::Text => print!("{}", render_text(&out.report)),
        ReportFormat::Json => println!(
            "{}",
            serde_json::to_string_pretty(&out.report).map_err(|e| CliError::Input(e.to_string()))?
        ),
    }
    if let Some(p) = log {
        write(p, out.log.as_bytes())?;
    }
    if let Some(dir) = emit {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))?;
        write(&dir.join("dag.bin"), &encode_log(&out.messages))?;
        for (label, cert) in &out.certificates {
            write(&dir.join(format!("{label}.cert")), &cert.encode())?;
        }
    }
    Ok(out.report.exit_code() as u8)
}

fn verify(dag: &Path, cert: &Path) -> Result<u8, CliError> {
    let cert = ConfirmationCertificate::decode(&read(cert)?).map_err(|e| CliError::Decode("certificate".into(), e))?;
    let messages = decode_log(&read(dag)?)?;
    let Some(Message::Genesis(g)) = messages.first() else {
        return Err(CliError::Input("message log must start with the genesis".into()));
    };
    let mut s = DagStore::new(g.clone()).map_err(|e| CliError::Input(format!("genesis rejected: {e}")))?;
    for m in &messages[1..] {
        s.ingest(m.clone());
    }
    let wanted: BTreeSet<MessageId> =
        std::iter::once(cert.tx).chain(cert.acks.iter().copied()).chain(cert.support.iter().copied()).collect();
    let mut missing: BTreeSet<MessageId> = wanted.iter().filter(|id| !s.contains(id)).copied().collect();
    if !missing.is_empty() {
        // Name the ancestors the buffered messages are waiting for, too.
        for m in &messages {
            if !s.contains(&m.id()) {
                missing.extend(m.references().into_iter().filter(|r| !s.contains(r) && !messages.iter().any(|x| x.id() == *r)));
            }
        }
        let list: Vec<String> = missing.iter().map(|id| id.to_string()).collect();
        return Err(CliError::Input(format!("store is missing {}", list.join(", "))));
    }
    match Checker::default().verify_certificate(&s, &cert) {
        Ok(()) => {
            println!("certificate for {} verifies: {} of {}", cert.tx, cert.signed_sum, cert.total);
            Ok(0)
        }
        Err(e) => Err(CliError::Failed(format!("certificate rejected: {e}"))),
    }
}

fn checkpoint_make(dag: &Path, frontier: &[String], creator: &str, out: &Path) -> Result<u8, CliError> {
    let (s, messages) = load_store(dag)?;
    let frontier = frontier.iter().map(|f| resolve(&messages, f)).collect::<Result<BTreeSet<_>, _>>()?;
    let (_, sk) = key_for(&TestScheme, creator);
    let mut c = Checker::default();
    let cp = make_checkpoint(&s, &mut c, frontier, &sk).map_err(|e| CliError::Input(e.to_string()))?;
    let msg = Message::Checkpoint(cp.clone());
    write(out, &msg.encode())?;
    println!("checkpoint {}", msg.id());
    for e in &cp.summary {
        println!("output {} value={} validator={}", e.output_ref.tx.short(), e.output.value, e.validator.short());
    }
    Ok(0)
}

fn checkpoint_bootstrap(dag: &Path, checkpoint: &str) -> Result<u8, CliError> {
    let (full, messages) = load_store(dag)?;
    let id = resolve(&messages, checkpoint)?;
    let Some(Message::Checkpoint(cp)) = full.get(&id).cloned() else {
        return Err(CliError::Input(format!("{checkpoint} is not a checkpoint in the log")));
    };
    let mut fc = Checker::default();
    let cert = match confirm_checkpoint(&full, &mut fc, &id).map_err(|e| CliError::Input(e.to_string()))? {
        Some(c) => c,
        None => return Err(CliError::Failed("checkpoint is not confirmed".into())),
    };
    let frontier: Vec<MessageId> = cp.frontier.iter().copied().collect();
    let before = full.past(&frontier).map_err(|e| CliError::Input(e.to_string()))?;
    let post: Vec<Message> = messages[1..].iter().filter(|m| !before.contains(&m.id())).cloned().collect();
    let pruned = bootstrap(cp, &cert, &post, full.scheme().clone()).map_err(|e| CliError::Failed(e.to_string()))?;
    let mut pc = Checker::default();
    let mismatches = pruning_mismatches(&full, &mut fc, &pruned, &mut pc).map_err(|e| CliError::Input(e.to_string()))?;
    println!("bootstrapped store holds {} messages ({} after the checkpoint)", pruned.len(), post.len());
    if mismatches.is_empty() {
        println!("statuses agree with the full history");
        Ok(0)
    } else {
        for (t, a, b) in &mismatches {
            println!("mismatch {}: full {a:?}, bootstrapped {b:?}", t.short());
        }
        Ok(3)
    }
}

fn replay_figures(format: ReportFormat) -> Result<u8, CliError> {
    let mut worst = 0u8;
    let mut reports = Vec::new();
    for (name, text) in FIGURES {
        let sc = Scenario::parse(text)?;
        let start = Instant::now();
        let out = run_scenario(&sc, &RunOptions::default())?;
        let code = out.report.exit_code() as u8;
        worst = worst.max(code);
        match format {
            ReportFormat::Text => {
                let verdict = if code == 0 { "PASS" } else { "FAIL" };
                println!("{verdict} {name} ({:.1} ms)", start.elapsed().as_secs_f64() * 1e3);
                for e in out.report.expectations.iter().filter(|e| !e.passed) {
                    println!("  line {}: {} ({})", e.line, e.description, e.detail);
                }
            }
            ReportFormat::Json => reports.push(out.report),
        }
    }
    if let ReportFormat::Json = format {
        println!("{}", serde_json::to_string_pretty(&reports).map_err(|e| CliError::Input(e.to_string()))?);
    }
    Ok(worst)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, seed, horizon, policy, report, emit_certificates, partitions, log } => {
            let opts = RunOptions { seed, horizon, policy, partitions, checker: None };
            run(&scenario, opts, report, emit_certificates.as_deref(), log.as_deref())
        }
        Command::Verify { dag, certificate } => verify(&dag, &certificate),
        Command::Checkpoint(CheckpointCommand::Make { dag, frontier, creator, out }) => {
            checkpoint_make(&dag, &frontier, &creator, &out)
        }
        Command::Checkpoint(CheckpointCommand::Bootstrap { dag, checkpoint }) => checkpoint_bootstrap(&dag, &checkpoint),
        Command::ReplayFigures { report } => replay_figures(report),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
