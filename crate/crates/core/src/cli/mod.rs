//! Command-line front end: config loading, experiment drivers, the oracle
//! suite and exit-code mapping.

pub mod config;
pub mod run;
pub mod verify;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::Value;

pub use config::{load_config, ExperimentConfig, ExperimentKind};
pub use run::{run_experiment, RunManifest, MANIFEST_FILE, METRICS_FILE};

use crate::datasets::Split;
use crate::error::{Error, ErrorKind, Result};

#[derive(Debug, Parser)]
#[command(name = "warpnet", version, about = "DTW, learned warping distances and multitask time series classification")]
struct Cli {
    /// Worker threads; results are only guaranteed bit-exact with 1.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment from a config file (TOML or JSON) or a manifest.
    ///
    /// Extra `--section.key=value` arguments override config entries; values
    /// are read as TOML literals, falling back to plain strings.
    Run {
        config: PathBuf,
        /// Output directory (default: `output_dir`, else
        /// `$WARPNET_OUTPUT_ROOT/<name>`, else `runs/<name>`).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the embedded oracle suite and print one line per property.
    Verify {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Evaluate a checkpoint on the data described by a config.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Constraint defining distance targets.
        #[arg(long, default_value = "unconstrained")]
        constraint: String,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Rank methods per task and average the ranks.
    Rank {
        /// CSV with `task,method,accuracy` rows; built-in reference table
        /// when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

const KNOWN_FLAGS: [&str; 10] = [
    "threads", "verbose", "output", "set", "inject-fault", "config", "split", "constraint", "input", "help",
];

/// Rewrites `--section.key=value` into `--set section.key=value` so clap
/// can collect overrides next to ordinary flags.
fn lift_overrides(args: Vec<OsString>) -> Vec<OsString> {
    let mut out = Vec::with_capacity(args.len());
    for a in args {
        match a.to_str().and_then(|s| s.strip_prefix("--")) {
            Some(rest) if rest.contains('=') && !KNOWN_FLAGS.contains(&rest.split('=').next().unwrap_or("")) => {
                out.push(OsString::from("--set"));
                out.push(OsString::from(rest));
            }
            _ => out.push(a),
        }
    }
    out
}

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Usage => 1,
        ErrorKind::Schema => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn is_manifest(doc: &Value) -> bool {
    doc.get("toolkit_version").is_some() && doc.get("config").is_some()
}

/// Loads a config or manifest, applies overrides and validates.
pub fn load_run_input(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc = config::parse_document(&text, path)?;
    if !is_manifest(&doc) {
        return load_config(path, overrides);
    }
    let manifest = RunManifest::load(path)?;
    let mut doc = serde_json::to_value(&manifest.config)?;
    for o in overrides {
        config::apply_override(&mut doc, o)?;
    }
    config::from_document(doc)
}

fn init_logging(verbose: bool) {
    let level = if verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

fn execute(cli: Cli) -> Result<i32> {
    if cli.threads == 0 {
        return Err(Error::Usage("--threads must be at least 1".into()));
    }
    match cli.command {
        Command::Run { config, output, overrides } => {
            let cfg = load_run_input(&config, &overrides)?;
            let out = cfg.resolve_output(output.as_deref());
            log::info!("running {} into {}", run::describe(&cfg), out.display());
            let manifest = run_experiment(&cfg, &out, cli.threads)?;
            println!("{} -> {}", run::describe(&cfg), out.display());
            for (artifact, digest) in &manifest.artifacts {
                println!("  {artifact}  {}", &digest[..16]);
            }
            Ok(0)
        }
        Command::Verify { inject_fault } => {
            let results = verify::run_suite(inject_fault)?;
            for r in &results {
                println!("{}", r.line());
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} properties, {failed} failed", results.len());
            Ok(i32::from(failed > 0))
        }
        Command::Eval {
            checkpoint,
            config,
            split,
            constraint,
            output,
            mut overrides,
        } => {
            let split: Split = split.into();
            overrides.extend([
                "kind=\"eval\"".to_string(),
                format!("eval.checkpoint={}", toml_string(&checkpoint.display().to_string())),
                format!("eval.split=\"{}\"", split.as_str()),
                format!("eval.constraint={}", toml_string(&constraint)),
            ]);
            let mut cfg = load_run_input(&config, &overrides)?;
            // the checkpoint path is relative to the caller, not the config
            if let Some(e) = cfg.eval.as_mut() {
                e.checkpoint = std::path::absolute(&checkpoint).map_err(|e| Error::io(&checkpoint, e))?;
            }
            let out = output.unwrap_or_else(|| cfg.resolve_output(None).join("eval"));
            run_experiment(&cfg, &out, cli.threads)?;
            print!("{}", std::fs::read_to_string(out.join(METRICS_FILE)).map_err(|e| Error::io(&out, e))?);
            Ok(0)
        }
        Command::Rank { input, output } => {
            let mut doc = serde_json::json!({
                "schema_version": config::SCHEMA_VERSION,
                "kind": "rank",
                "name": "rank",
                "rank": {},
            });
            if let Some(p) = &input {
                let abs = std::path::absolute(p).map_err(|e| Error::io(p, e))?;
                doc["rank"]["input"] = Value::String(abs.display().to_string());
            }
            let cfg = config::from_document(doc)?;
            let table = run::load_rank_input(&cfg)?;
            print!("{}", table.to_text());
            if let Some(out) = output {
                run_experiment(&cfg, &out, cli.threads)?;
            }
            Ok(0)
        }
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Entry point for the `warpnet` binary; returns the process exit code.
pub fn main_with_args(args: impl IntoIterator<Item = OsString>) -> i32 {
    let cli = match Cli::try_parse_from(lift_overrides(args.into_iter().collect())) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_lifted() {
        let args: Vec<OsString> = ["warpnet", "run", "c.toml", "--train.num_epochs=1", "--output=x", "--threads", "1"]
            .iter()
            .map(OsString::from)
            .collect();
        let lifted: Vec<String> = lift_overrides(args).into_iter().map(|s| s.into_string().unwrap()).collect();
        assert_eq!(lifted[3..5], ["--set".to_string(), "train.num_epochs=1".to_string()]);
        assert_eq!(lifted[5], "--output=x");
    }

    #[test]
    fn error_kinds_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Schema { key: "a".into(), message: "b".into() }), 2);
        assert_eq!(exit_code(&Error::Data("x".into())), 3);
        assert_eq!(exit_code(&Error::NonFinite("x".into())), 4);
        assert_eq!(exit_code(&Error::Usage("x".into())), 1);
    }
}
