//! `corpus-audit`: measure how well essay text predicts author demographics.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal error.

mod config;

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use corpus_audit::corpus::{self, AuditTask, Cohort, InputFormat, RawRecord};
use corpus_audit::eval::{self, ModelKind};
use corpus_audit::report::{self, AuditReport, ReportFormat};
use corpus_audit::{synth, AuditError};

use crate::config::RunConfig;

const THREADS_ENV: &str = "CORPUS_AUDIT_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<AuditError> for CliError {
    fn from(e: AuditError) -> Self {
        match e {
            AuditError::InvalidParameter(_) => CliError::Usage(e.to_string()),
            AuditError::Divergence(_)
            | AuditError::LengthMismatch { .. }
            | AuditError::EmptyInput(_)
            | AuditError::Serialization(_) => CliError::Internal(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "corpus-audit", version, about = "Audit an essay corpus for demographic signal")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cross-validate every model on every task and write report.json and report.md
    Audit(AuditArgs),
    /// Print student and essay counts per cohort
    Stats(InputArgs),
    /// Write a synthetic JSONL corpus with a planted signal
    Synth(SynthArgs),
}

#[derive(Args, Debug, Default)]
struct InputArgs {
    /// JSON run configuration; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    input_format: Option<InputFormat>,
    /// Extra year mappings, e.g. 2017=Y2
    #[arg(long, value_parser = parse_year_entry)]
    year_map: Vec<(String, Cohort)>,
}

#[derive(Args, Debug)]
struct AuditArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Comma-separated subset of: gender, income
    #[arg(long, value_delimiter = ',', value_parser = parse_task)]
    tasks: Option<Vec<AuditTask>>,
    /// Comma-separated subset of: zerorule, nb, lr, mlp
    #[arg(long, value_delimiter = ',', value_parser = parse_model)]
    models: Option<Vec<ModelKind>>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    min_chars: Option<usize>,
    #[arg(long)]
    income_floor: Option<u64>,
    #[arg(long)]
    min_doc_freq: Option<usize>,
    #[arg(long)]
    nb_alpha: Option<f64>,
    #[arg(long)]
    top_n_fr: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Also write out-of-fold predictions for every essay
    #[arg(long)]
    emit_per_essay: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// JSON synthetic corpus specification
    #[arg(long)]
    spec: PathBuf,
    /// Output JSONL path
    #[arg(long)]
    out: PathBuf,
    /// Overrides the spec's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo trials for the Bayes-optimal accuracy estimate
    #[arg(long, default_value_t = 100_000)]
    bayes_trials: usize,
}

fn parse_format(s: &str) -> Result<InputFormat, String> {
    match s.to_ascii_lowercase().as_str() {
        "jsonl" => Ok(InputFormat::Jsonl),
        "csv" => Ok(InputFormat::Csv),
        _ => Err(format!("unknown input format {s:?} (expected jsonl or csv)")),
    }
}

fn parse_task(s: &str) -> Result<AuditTask, String> {
    match s.to_ascii_lowercase().as_str() {
        "gender" => Ok(AuditTask::Gender),
        "income" => Ok(AuditTask::Income),
        _ => Err(format!("unknown task {s:?} (expected gender or income)")),
    }
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "zerorule" => Ok(ModelKind::ZeroRule),
        "nb" => Ok(ModelKind::Nb),
        "lr" => Ok(ModelKind::Lr),
        "mlp" => Ok(ModelKind::Mlp),
        _ => Err(format!("unknown model {s:?} (expected zerorule, nb, lr or mlp)")),
    }
}

fn parse_year_entry(s: &str) -> Result<(String, Cohort), String> {
    let (year, tag) = s.split_once('=').ok_or_else(|| format!("expected YEAR=Y1 or YEAR=Y2, got {s:?}"))?;
    let cohort = match tag {
        "Y1" => Cohort::Y1,
        "Y2" => Cohort::Y2,
        _ => return Err(format!("unknown cohort {tag:?}")),
    };
    Ok((year.to_string(), cohort))
}

impl InputArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.input {
            config.input_path = Some(p.clone());
        }
        if let Some(f) = self.input_format {
            config.input_format = f;
        }
        for (year, cohort) in &self.year_map {
            config.year_map.0.insert(year.clone(), *cohort);
        }
        Ok(config)
    }
}

impl AuditArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = self.input.resolve()?;
        if let Some(v) = &self.tasks {
            c.tasks = v.clone();
        }
        if let Some(v) = &self.models {
            c.models = v.clone();
        }
        c.k = self.k.unwrap_or(c.k);
        c.seed = self.seed.unwrap_or(c.seed);
        c.min_chars = self.min_chars.unwrap_or(c.min_chars);
        c.income_floor = self.income_floor.unwrap_or(c.income_floor);
        c.min_doc_freq = self.min_doc_freq.unwrap_or(c.min_doc_freq);
        c.nb_alpha = self.nb_alpha.unwrap_or(c.nb_alpha);
        c.top_n_fr = self.top_n_fr.unwrap_or(c.top_n_fr);
        if let Some(dir) = &self.output_dir {
            c.output_dir = dir.clone();
        }
        c.emit_per_essay |= self.emit_per_essay;
        c.validate()?;
        Ok(c)
    }
}

fn read_records(config: &RunConfig) -> Result<Vec<RawRecord>, CliError> {
    let path = config
        .input_path
        .as_ref()
        .ok_or_else(|| CliError::Usage("no input given (use --input or input_path in the config)".into()))?;
    let file = File::open(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let ingested = corpus::ingest(BufReader::new(file), config.input_format, &config.year_map)
        .map_err(|e| CliError::Data(format!("{}: {}", path.display(), CliError::from(e))))?;
    for err in &ingested.errors {
        log::warn!("{}: skipped {err}", path.display());
    }
    Ok(ingested.records)
}

/// Writes every file to a temporary sibling first so that a failure leaves
/// no partial outputs behind.
fn write_atomically(dir: &Path, files: &[(&str, String)]) -> Result<(), CliError> {
    let io = |what: &str, e: std::io::Error| CliError::Data(format!("cannot write {what} in {}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(|e| io("output directory", e))?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, content) in files {
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io(name, e))?;
        tmp.write_all(content.as_bytes()).map_err(|e| io(name, e))?;
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, target) in staged {
        tmp.persist(&target).map_err(|e| io(&target.display().to_string(), e.error))?;
    }
    Ok(())
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Internal(format!("cannot start worker threads: {e}")))
}

fn predictions_jsonl(output: &eval::GridOutput) -> Result<String, CliError> {
    let mut out = String::new();
    for r in &output.results {
        for p in r.predictions.iter().flatten() {
            let line = serde_json::json!({
                "task": r.task,
                "year_scope": r.year_scope,
                "model": r.model_kind,
                "essay_id": p.essay_id,
                "fold": p.fold,
                "gold": p.gold,
                "predicted": p.predicted,
            });
            out.push_str(&serde_json::to_string(&line).map_err(|e| CliError::Internal(e.to_string()))?);
            out.push('\n');
        }
    }
    Ok(out)
}

fn cmd_audit(args: &AuditArgs) -> Result<(), CliError> {
    let config = args.resolve()?;
    let records = read_records(&config)?;
    let grid_config = config.grid_config();
    let output = thread_pool()?.install(|| eval::run_grid(&records, &grid_config))?;
    let echo = serde_json::to_value(&config).map_err(|e| CliError::Internal(e.to_string()))?;
    let report = AuditReport::assemble(&output, &grid_config, echo);
    let mut files = vec![
        ("report.json", report::render_report(&report, ReportFormat::Json)?),
        ("report.md", report::render_report(&report, ReportFormat::Markdown)?),
    ];
    if config.emit_per_essay {
        files.push(("predictions.jsonl", predictions_jsonl(&output)?));
    }
    write_atomically(&config.output_dir, &files)?;
    log::info!("wrote report to {}", config.output_dir.display());
    Ok(())
}

fn cmd_stats(args: &InputArgs) -> Result<(), CliError> {
    let config = args.resolve()?;
    let records = read_records(&config)?;
    print!("{}", report::render_scope_counts(&report::scope_counts(&records)));
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.spec)
        .map_err(|e| CliError::Usage(format!("cannot read spec {}: {e}", args.spec.display())))?;
    let mut spec: synth::SynthSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid spec {}: {e}", args.spec.display())))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let records = synth::generate(&spec)?;
    let mut body = String::new();
    for r in &records {
        body.push_str(&r.to_jsonl());
        body.push('\n');
    }
    let (dir, name) = split_path(&args.out)?;
    write_atomically(&dir, &[(&name, body)])?;
    let est = synth::bayes_optimal_accuracy(&spec, args.bayes_trials)?;
    println!(
        "bayes_optimal_accuracy {:.6} (standard error {:.6}, {} trials)",
        est.accuracy, est.std_error, est.n_trials
    );
    Ok(())
}

fn split_path(path: &Path) -> Result<(PathBuf, String), CliError> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::Usage(format!("invalid output path {}", path.display())))?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    Ok((dir, name.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();

    let result = match &cli.command {
        Command::Audit(args) => cmd_audit(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
