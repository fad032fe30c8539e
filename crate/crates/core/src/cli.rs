//! Command-line entry points. Exit codes: 0 success, 1 failed verification
//! or golden mismatch, 2 input or engine error, 3 governed abort (loop bound).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::audit::{check_trace_properties, compute_metrics, parse_audit, serialize_audit, AuditLog, STATUS_COMPLETED};
use crate::cognition::{CognitionEngine, MockEngine, RemoteConfig, RemoteEngine};
use crate::memory::MemoryStore;
use crate::metaprompt::{parse_policy_file, serialize_policies};
use crate::orchestrator::{run, RunError, RunOptions, TaskSpec};
use crate::tools::{Fixtures, ToolRegistry};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ABORTED: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineKind {
    Mock,
    Remote,
}

#[derive(Debug, Parser)]
#[command(
    name = "scl",
    version,
    about = "Governed agent loop with a policy gate and audit trail"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings for one `run` invocation.
#[derive(Debug, Clone, clap::Args)]
pub struct RunConfig {
    /// Task spec file (TOML).
    #[arg(long)]
    pub task: PathBuf,
    /// Extra policy file added to the task's policies.
    #[arg(long)]
    pub policies: Option<PathBuf>,
    /// Tool fixture overrides (TOML).
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Append-only memory journal; omitted means in-process only.
    #[arg(long)]
    pub memory: Option<PathBuf>,
    /// Where to write the audit document; `-` for stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mock")]
    pub engine: EngineKind,
    #[arg(long)]
    pub max_loops: Option<u32>,
    /// Expected audit document. Compared on the compact view unless
    /// `--strict-golden` is set.
    #[arg(long)]
    pub golden: Option<PathBuf>,
    /// Byte-compare against the golden file (default
    /// `<task dir>/golden/<task id>.audit.json`).
    #[arg(long)]
    pub strict_golden: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute a task and write its audit log.
    Run(RunConfig),
    /// Recompute reliability metrics from an audit log.
    Metrics { audit: PathBuf },
    /// Check trace properties P1–P3 on an audit log.
    Verify { audit: PathBuf },
    /// Parse and print a policy file.
    PolicyCheck { policies: PathBuf },
}

/// Runs the CLI with explicit arguments and output streams; returns the exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_INPUT;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    let result = match cli.command {
        Command::Run(cfg) => cmd_run(&cfg, out, err),
        Command::Metrics { audit } => cmd_metrics(&audit, out),
        Command::Verify { audit } => cmd_verify(&audit, out),
        Command::PolicyCheck { policies } => cmd_policy_check(&policies, out),
    };
    match result {
        Ok(code) => code,
        Err((code, message)) => {
            let _ = writeln!(err, "error: {message}");
            code
        }
    }
}

type CmdResult = Result<i32, (i32, String)>;

fn input_err(e: impl std::fmt::Display) -> (i32, String) {
    (EXIT_INPUT, e.to_string())
}

fn read(path: &Path) -> Result<String, (i32, String)> {
    std::fs::read_to_string(path).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn load_audit(path: &Path) -> Result<AuditLog, (i32, String)> {
    parse_audit(&read(path)?).map_err(input_err)
}

fn summary_line(log: &AuditLog) -> String {
    let s = &log.summary;
    format!(
        "status={} loops={} final_action={} policy_violations={} preventions={}",
        s.status, s.loops, s.final_action, s.policy_violations, s.preventions
    )
}

pub fn default_golden_path(task_path: &Path, task_id: &str) -> PathBuf {
    task_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("golden")
        .join(format!("{task_id}.audit.json"))
}

pub fn cmd_run(cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let mut spec = TaskSpec::load(&cfg.task).map_err(input_err)?;
    if let Some(p) = &cfg.policies {
        let extra = parse_policy_file(&read(p)?).map_err(|e| input_err(format!("{}: {e}", p.display())))?;
        spec.policies = spec.policies.union(extra);
        spec.validate().map_err(input_err)?;
    }
    let fixtures = match &cfg.fixtures {
        Some(p) => Fixtures::load(p).map_err(input_err)?,
        None => Fixtures::default(),
    };
    let registry = ToolRegistry::mock(&fixtures);
    let mut memory = match &cfg.memory {
        Some(p) => MemoryStore::open(p).map_err(input_err)?,
        None => MemoryStore::in_memory(),
    };
    let mut engine: Box<dyn CognitionEngine> = match cfg.engine {
        EngineKind::Mock => Box::new(MockEngine),
        EngineKind::Remote => {
            let config = RemoteConfig::from_env(|k| std::env::var(k).ok()).map_err(input_err)?;
            let specs: Vec<_> = registry
                .names()
                .iter()
                .filter_map(|n| registry.spec(n))
                .cloned()
                .collect();
            Box::new(RemoteEngine::new(config).with_tools(specs))
        }
    };
    let options = RunOptions {
        max_loops: cfg.max_loops,
        ..RunOptions::default()
    };

    let (log, engine_error) = match run(&spec, engine.as_mut(), &registry, &mut memory, &options) {
        Ok(log) => (log, None),
        Err(RunError::EngineFailure { error, log }) => (*log, Some(error)),
        Err(e) => return Err(input_err(e)),
    };
    let text = serialize_audit(&log);
    let to_stdout = cfg.out.as_deref() == Some(Path::new("-"));
    match &cfg.out {
        Some(_) if to_stdout => out.write_all(text.as_bytes()).map_err(input_err)?,
        Some(p) => std::fs::write(p, &text).map_err(|e| input_err(format!("{}: {e}", p.display())))?,
        None => {}
    }
    let line = summary_line(&log);
    let _ = if to_stdout {
        writeln!(err, "{line}")
    } else {
        writeln!(out, "{line}")
    };
    if let Some(e) = engine_error {
        return Err(input_err(e));
    }

    if cfg.strict_golden || cfg.golden.is_some() {
        let path = cfg
            .golden
            .clone()
            .unwrap_or_else(|| default_golden_path(&cfg.task, &spec.id));
        let expected = read(&path)?;
        let matches = if cfg.strict_golden {
            expected == text
        } else {
            parse_audit(&expected).map_err(input_err)?.compact_view() == log.compact_view()
        };
        let _ = writeln!(
            out,
            "golden={} path={}",
            if matches { "match" } else { "mismatch" },
            path.display()
        );
        if !matches {
            return Ok(EXIT_CHECK_FAILED);
        }
    }

    Ok(if log.summary.status != STATUS_COMPLETED {
        EXIT_ABORTED
    } else if log.summary.policy_violations > 0 {
        EXIT_CHECK_FAILED
    } else {
        EXIT_OK
    })
}

pub fn cmd_metrics(path: &Path, out: &mut dyn Write) -> CmdResult {
    let metrics = compute_metrics(&load_audit(path)?).map_err(input_err)?;
    writeln!(out, "{metrics}").map_err(input_err)?;
    Ok(EXIT_OK)
}

pub fn cmd_verify(path: &Path, out: &mut dyn Write) -> CmdResult {
    let results = check_trace_properties(&load_audit(path)?).map_err(input_err)?;
    for r in &results {
        writeln!(out, "{r}").map_err(input_err)?;
    }
    Ok(if results.iter().all(|r| r.holds) {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}

pub fn cmd_policy_check(path: &Path, out: &mut dyn Write) -> CmdResult {
    let policies = parse_policy_file(&read(path)?).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    writeln!(out, "policies={}", policies.len()).map_err(input_err)?;
    write!(out, "{}", serialize_policies(&policies)).map_err(input_err)?;
    Ok(EXIT_OK)
}
