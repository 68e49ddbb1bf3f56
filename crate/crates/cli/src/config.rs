use std::fs;
use std::path::{Path, PathBuf};

use corpus_audit::corpus::{AuditTask, InputFormat, YearMap, DEFAULT_INCOME_FLOOR, DEFAULT_MIN_CHARS};
use corpus_audit::eval::{GridConfig, ModelKind, DEFAULT_K};
use corpus_audit::mlp::MlpConfig;
use corpus_audit::nb::DEFAULT_ALPHA;
use corpus_audit::report::DEFAULT_TOP_N;
use corpus_audit::training::EarlyStopPolicy;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything an audit run depends on. Loaded from a JSON file, then
/// overridden by command-line flags, then echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input_path: Option<PathBuf>,
    pub input_format: InputFormat,
    pub year_map: YearMap,
    pub tasks: Vec<AuditTask>,
    pub models: Vec<ModelKind>,
    pub k: usize,
    pub seed: u64,
    pub min_chars: usize,
    pub income_floor: u64,
    pub min_doc_freq: usize,
    pub nb_alpha: f64,
    pub lr_policy: EarlyStopPolicy,
    pub mlp_policy: MlpConfig,
    pub top_n_fr: usize,
    pub output_dir: PathBuf,
    pub emit_per_essay: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input_path: None,
            input_format: InputFormat::Jsonl,
            year_map: YearMap::default(),
            tasks: AuditTask::ALL.to_vec(),
            models: vec![ModelKind::Nb, ModelKind::Lr, ModelKind::Mlp],
            k: DEFAULT_K,
            seed: 0,
            min_chars: DEFAULT_MIN_CHARS,
            income_floor: DEFAULT_INCOME_FLOOR,
            min_doc_freq: 1,
            nb_alpha: DEFAULT_ALPHA,
            lr_policy: EarlyStopPolicy::default(),
            mlp_policy: MlpConfig::default(),
            top_n_fr: DEFAULT_TOP_N,
            output_dir: PathBuf::from("."),
            emit_per_essay: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.tasks.is_empty() {
            return usage("at least one task is required".into());
        }
        if self.k < 2 {
            return usage(format!("k must be at least 2, got {}", self.k));
        }
        if self.min_doc_freq == 0 {
            return usage("min_doc_freq must be at least 1".into());
        }
        if !(self.nb_alpha.is_finite() && self.nb_alpha > 0.0) {
            return usage(format!("nb_alpha must be positive, got {}", self.nb_alpha));
        }
        self.lr_policy.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.mlp_policy.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    pub fn grid_config(&self) -> GridConfig {
        GridConfig {
            tasks: self.tasks.clone(),
            models: self.models.clone(),
            k: self.k,
            seed: self.seed,
            min_chars: self.min_chars,
            income_floor: self.income_floor,
            min_doc_freq: self.min_doc_freq,
            nb_alpha: self.nb_alpha,
            lr_policy: self.lr_policy.clone(),
            mlp: self.mlp_policy.clone(),
            top_n_fr: self.top_n_fr,
            collect_predictions: self.emit_per_essay,
        }
    }
}
