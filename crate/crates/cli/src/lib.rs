//! Command-line front end: `build`, `query`, `eval` and `analyze`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
//! error. Errors go to standard error as `error[CODE]: message`.

pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use groundmem::domain::{Condition, Dialogue, SpeakerId};
use groundmem::eval::{load_qa, load_results, load_transcripts, run_benchmark, write_outputs, EvalCondition};
use groundmem::gateway::{connect, Backend, Mode};
use groundmem::memory::MemoryBank;
use groundmem::pipeline::build_memory;
use groundmem::reasoner::answer_question;

use config::{Config, Overrides};

#[derive(Debug, Parser)]
#[command(name = "groundmem", version, about = "Build and query grounded dialogue memories")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// image, text, both or full-dialog.
    #[arg(long, global = true)]
    pub condition: Option<EvalCondition>,
    /// Dialogues processed at once.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build one memory bank per dialogue.
    Build {
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer a question against a saved bank.
    Query {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long)]
        asker: SpeakerId,
        /// Write the execution trace as JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run the benchmark and write reports and traces.
    Eval {
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-aggregate an eval directory and fit the faithfulness regression.
    Analyze {
        /// Output directory of a previous `eval`.
        #[arg(long)]
        run: PathBuf,
        /// Defaults to `<run>/analysis`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failed command: exit status, stable code and cause.
#[derive(Debug)]
pub struct Failure {
    pub exit: u8,
    pub code: &'static str,
    pub error: anyhow::Error,
}

impl Failure {
    fn usage(code: &'static str, error: anyhow::Error) -> Self {
        Failure { exit: 2, code, error }
    }

    fn runtime(code: &'static str, error: anyhow::Error) -> Self {
        Failure { exit: 1, code, error }
    }
}

type Outcome = Result<u8, Failure>;

pub struct Io<'a> {
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
    pub env: &'a dyn Fn(&str) -> Option<String>,
}

/// Parses `args` and runs the command; returns the exit code.
pub fn run<I, T>(args: I, io: &mut Io<'_>) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(io.err, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli, io) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(io.err, "error[{}]: {:#}", f.code, f.error);
            f.exit
        }
    }
}

pub fn execute(cli: Cli, io: &mut Io<'_>) -> Outcome {
    let flags = Overrides {
        mode: cli.global.mode,
        seed: cli.global.seed,
        condition: cli.global.condition,
        jobs: cli.global.jobs,
    };
    let config =
        Config::resolve(cli.global.config.as_deref(), io.env, &flags).map_err(|e| Failure::usage("E_CONFIG", e))?;
    match cli.command {
        Command::Build { transcripts, out } => cmd_build(&config, &transcripts, &out, io),
        Command::Query { bank, question, asker, trace } => {
            cmd_query(&config, &bank, &question, asker, trace.as_deref(), io)
        }
        Command::Eval { transcripts, qa, out } => cmd_eval(&config, &transcripts, &qa, &out, io),
        Command::Analyze { run, out } => {
            let out = out.unwrap_or_else(|| run.join("analysis"));
            cmd_analyze(&run, &out, io)
        }
    }
}

fn require(path: &Path, what: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::usage("E_INPUT", anyhow!("{what} {} does not exist", path.display())))
    }
}

fn backend(config: &Config) -> Result<Backend, Failure> {
    connect(&config.backend).map_err(|e| Failure::usage("E_CONFIG", e.into()))
}

fn write_err(e: std::io::Error) -> Failure {
    Failure::runtime("E_OUTPUT", e.into())
}

fn memory_condition(config: &Config, command: &str) -> Result<Condition, Failure> {
    config
        .condition()
        .memory()
        .ok_or_else(|| Failure::usage("E_USAGE", anyhow!("{command} needs a memory condition (image, text or both)")))
}

fn with_pool<T: Send>(jobs: usize, work: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    }
}

fn cmd_build(config: &Config, transcripts: &Path, out: &Path, io: &mut Io<'_>) -> Outcome {
    require(transcripts, "transcripts file")?;
    memory_condition(config, "build")?;
    let dialogues = load_transcripts(transcripts).map_err(|e| Failure::usage("E_INPUT", e.into()))?;
    let backend = backend(config)?;
    let pipeline = config.pipeline();
    let build_one = |d: &Dialogue| -> anyhow::Result<(usize, usize, usize)> {
        let built = build_memory(d, &pipeline, backend.as_ref())?;
        let dir = out.join(&d.dialogue_id);
        built.bank.save(&dir).with_context(|| format!("saving {}", dir.display()))?;
        let versions: usize = built.bank.frames().map(|f| built.bank.versions_of(f).count()).sum();
        Ok((built.bank.frame_count(), versions, built.bank.graph().len()))
    };
    let results: Vec<_> = with_pool(config.run.jobs.unwrap_or(1), || dialogues.par_iter().map(build_one).collect());
    let mut failed = 0;
    for (d, r) in dialogues.iter().zip(results) {
        match r {
            Ok((frames, versions, triplets)) => {
                writeln!(io.out, "{}: ok frames={frames} versions={versions} triplets={triplets}", d.dialogue_id)
                    .map_err(write_err)?
            }
            Err(e) => {
                failed += 1;
                writeln!(io.out, "{}: failed", d.dialogue_id).map_err(write_err)?;
                writeln!(io.err, "error[E_BUILD]: {}: {e:#}", d.dialogue_id).map_err(write_err)?;
            }
        }
    }
    Ok(if failed == 0 { 0 } else { 1 })
}

/// Condition implied by what the bank stores.
fn stored_condition(bank: &MemoryBank) -> Condition {
    let latest: Vec<_> = bank.frames().filter_map(|f| bank.latest(f)).collect();
    let canvas = latest.iter().any(|s| s.version.canvas.is_some());
    let summary = latest.iter().any(|s| s.version.summary.is_some());
    match (canvas, summary) {
        (true, true) => Condition::Both,
        (false, true) => Condition::Textual,
        _ => Condition::Visual,
    }
}

fn cmd_query(
    config: &Config,
    bank_dir: &Path,
    question: &str,
    asker: SpeakerId,
    trace_path: Option<&Path>,
    io: &mut Io<'_>,
) -> Outcome {
    require(bank_dir, "bank directory")?;
    let mut reasoner = config.reasoner();
    if config.run.condition.is_some() {
        reasoner.condition = memory_condition(config, "query")?;
    }
    let backend = backend(config)?;
    let bank = MemoryBank::load(bank_dir).map_err(|e| Failure::runtime("E_BANK", e.into()))?;
    if config.run.condition.is_none() {
        reasoner.condition = stored_condition(&bank);
    }
    let trace = answer_question(question, asker, &bank, &reasoner, backend.as_ref())
        .map_err(|e| Failure::runtime("E_QUERY", e.into()))?;
    if let Some(p) = trace_path {
        let text = serde_json::to_string_pretty(&trace).map_err(|e| Failure::runtime("E_OUTPUT", e.into()))?;
        std::fs::write(p, text + "\n")
            .with_context(|| format!("writing {}", p.display()))
            .map_err(|e| Failure::runtime("E_OUTPUT", e))?;
    }
    writeln!(io.out, "{}", trace.answer).map_err(write_err)?;
    Ok(0)
}

fn cmd_eval(config: &Config, transcripts: &Path, qa: &Path, out: &Path, io: &mut Io<'_>) -> Outcome {
    require(transcripts, "transcripts file")?;
    require(qa, "QA file")?;
    let dialogues = load_transcripts(transcripts).map_err(|e| Failure::usage("E_INPUT", e.into()))?;
    let items = load_qa(qa).map_err(|e| Failure::usage("E_INPUT", e.into()))?;
    let backend = backend(config)?;
    let run = run_benchmark(&dialogues, &items, &config.benchmark(), backend.as_ref());
    write_outputs(&run, out).map_err(|e| Failure::runtime("E_OUTPUT", e.into()))?;
    write!(io.out, "{}", run.report.render_text()).map_err(write_err)?;
    for r in run.items.iter().filter(|r| r.error.is_some()) {
        let msg = r.error.as_deref().unwrap_or_default();
        writeln!(io.err, "warning: {} #{}: {msg}", r.dialogue_id, r.qa_index).map_err(write_err)?;
    }
    Ok(0)
}

fn cmd_analyze(run_dir: &Path, out: &Path, io: &mut Io<'_>) -> Outcome {
    require(run_dir, "run directory")?;
    let run = load_results(run_dir).map_err(|e| Failure::runtime("E_INPUT", e.into()))?;
    let save = |name: &str, text: String| -> Result<(), Failure> {
        std::fs::create_dir_all(out)
            .and_then(|_| std::fs::write(out.join(name), text))
            .with_context(|| format!("writing {}", out.join(name).display()))
            .map_err(|e| Failure::runtime("E_OUTPUT", e))
    };
    let logit = serde_json::to_string_pretty(&run.logit).map_err(|e| Failure::runtime("E_OUTPUT", e.into()))?;
    save("logit.json", logit + "\n")?;
    save("scope.txt", format!("{}\n{}", run.report.framework, run.report.render_scope_text()))?;
    let fit = &run.logit;
    writeln!(
        io.out,
        "logit: intercept={:.4} slope={:.4} converged={} n={}",
        fit.intercept, fit.slope, fit.converged, fit.n
    )
    .map_err(write_err)?;
    if let Some(d) = &fit.diagnostic {
        writeln!(io.out, "note: {d}").map_err(write_err)?;
    }
    write!(io.out, "{}", run.report.render_scope_text()).map_err(write_err)?;
    Ok(0)
}
