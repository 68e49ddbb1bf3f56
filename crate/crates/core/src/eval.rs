//! Student-level stratified k-fold cross-validation and the task grid.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, AuditTask, Cohort, CorpusStats, LabeledCorpus, RawRecord, YearScope};
use crate::linear::{LrModel, ZeroRuleModel};
use crate::mlp::{MlpConfig, MlpModel};
use crate::nb::{FrequencyRatioEntry, NbModel};
use crate::tokenizer::{tokenize, TokenSeq, Vocabulary};
use crate::training::{EarlyStopPolicy, TrainSet};
use crate::vectorizer::{vectorize, CountVector};
use crate::{rng, AuditError, Label, Result};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[serde(rename = "zerorule")]
    ZeroRule,
    Nb,
    Lr,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::ZeroRule, ModelKind::Nb, ModelKind::Lr, ModelKind::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ZeroRule => "ZeroRule",
            ModelKind::Nb => "NB",
            ModelKind::Lr => "LR",
            ModelKind::Mlp => "MLP",
        }
    }

    fn tag(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

// ---------------------------------------------------------------------------
// Folds

/// Assignment of every student in a corpus to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, student_id: &str) -> Option<usize> {
        self.assignment.get(student_id).copied()
    }

    /// Student counts per fold and class.
    pub fn class_counts(&self, corpus: &LabeledCorpus) -> Vec<[usize; 2]> {
        let mut counts = vec![[0usize; 2]; self.k];
        for (student, label) in corpus.student_labels() {
            if let Some(f) = self.fold_of(student) {
                counts[f][label as usize] += 1;
            }
        }
        counts
    }

    fn check_covers(&self, corpus: &LabeledCorpus) -> Result<()> {
        for e in &corpus.entries {
            match self.fold_of(&e.student_id) {
                Some(f) if f < self.k => {}
                _ => {
                    return Err(AuditError::InvalidParameter(format!(
                        "fold plan does not assign student {:?}",
                        e.student_id
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Shuffles each class's students and deals them round-robin into `k` folds.
///
/// The dealing position carries over from class 0 to class 1 so total fold
/// sizes also differ by at most one.
pub fn make_folds(corpus: &LabeledCorpus, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(AuditError::InvalidParameter(format!("k must be at least 2, got {k}")));
    }
    let labels = corpus.student_labels();
    let mut assignment = BTreeMap::new();
    let mut next = 0usize;
    for class in 0..2u8 {
        let mut students: Vec<&str> = labels.iter().filter(|&(_, &l)| l == class).map(|(&s, _)| s).collect();
        if students.len() < k {
            return Err(AuditError::DegenerateCorpus(format!(
                "{} corpus for scope {} has {} {} students, fewer than k = {k}",
                corpus.task,
                corpus.year_scope,
                students.len(),
                corpus.task.class_name(class)
            )));
        }
        students.shuffle(&mut rng::stream(seed, &[u64::from(class)]));
        for s in students {
            assignment.insert(s.to_string(), next % k);
            next += 1;
        }
    }
    Ok(FoldPlan { k, seed, assignment })
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// F1 of `positive_class`.
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    /// `confusion[gold][predicted]`.
    pub confusion: [[u64; 2]; 2],
    pub positive_class: Label,
    pub f1_per_class: [f64; 2],
    pub macro_f1: f64,
    /// Per-class F1 weighted by gold support.
    pub weighted_f1: f64,
    /// Set when nothing was predicted positive; precision is then reported as 0.
    pub precision_undefined: bool,
    /// Set when no gold label is positive; recall is then reported as 0.
    pub recall_undefined: bool,
}

fn prf(confusion: &[[u64; 2]; 2], positive: usize) -> (f64, f64, f64, bool, bool) {
    let tp = confusion[positive][positive] as f64;
    let fp = confusion[1 - positive][positive] as f64;
    let fn_ = confusion[positive][1 - positive] as f64;
    let (precision, p_undef) = if tp + fp > 0.0 { (tp / (tp + fp), false) } else { (0.0, true) };
    let (recall, r_undef) = if tp + fn_ > 0.0 { (tp / (tp + fn_), false) } else { (0.0, true) };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1, p_undef, r_undef)
}

pub fn compute_metrics(predictions: &[Label], gold: &[Label], positive_class: Label) -> Result<Metrics> {
    if predictions.len() != gold.len() {
        return Err(AuditError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    if gold.is_empty() {
        return Err(AuditError::EmptyInput("metrics over zero documents"));
    }
    let mut confusion = [[0u64; 2]; 2];
    for (&p, &g) in predictions.iter().zip(gold) {
        if p > 1 || g > 1 {
            return Err(AuditError::InvalidParameter("labels must be 0 or 1".into()));
        }
        confusion[g as usize][p as usize] += 1;
    }
    let pos = positive_class as usize;
    let (precision, recall, f1, precision_undefined, recall_undefined) = prf(&confusion, pos);
    let f1_per_class = [prf(&confusion, 0).2, prf(&confusion, 1).2];
    let n = gold.len() as f64;
    let support = [
        (confusion[0][0] + confusion[0][1]) as f64,
        (confusion[1][0] + confusion[1][1]) as f64,
    ];
    Ok(Metrics {
        f1,
        precision,
        recall,
        accuracy: (confusion[0][0] + confusion[1][1]) as f64 / n,
        confusion,
        positive_class,
        f1_per_class,
        macro_f1: (f1_per_class[0] + f1_per_class[1]) / 2.0,
        weighted_f1: (f1_per_class[0] * support[0] + f1_per_class[1] * support[1]) / n,
        precision_undefined,
        recall_undefined,
    })
}

// ---------------------------------------------------------------------------
// Task runs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub tasks: Vec<AuditTask>,
    /// Models to evaluate; the zero-rule baseline is always added.
    pub models: Vec<ModelKind>,
    pub k: usize,
    pub seed: u64,
    /// Essays shorter than this many characters are dropped before labeling.
    pub min_chars: usize,
    pub income_floor: u64,
    pub min_doc_freq: usize,
    pub nb_alpha: f64,
    pub lr_policy: EarlyStopPolicy,
    pub mlp: MlpConfig,
    pub top_n_fr: usize,
    pub collect_predictions: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            tasks: AuditTask::ALL.to_vec(),
            models: vec![ModelKind::Nb, ModelKind::Lr, ModelKind::Mlp],
            k: DEFAULT_K,
            seed: 0,
            min_chars: corpus::DEFAULT_MIN_CHARS,
            income_floor: corpus::DEFAULT_INCOME_FLOOR,
            min_doc_freq: 1,
            nb_alpha: crate::nb::DEFAULT_ALPHA,
            lr_policy: EarlyStopPolicy::default(),
            mlp: MlpConfig::default(),
            top_n_fr: 10,
            collect_predictions: false,
        }
    }
}

impl GridConfig {
    /// Configured models plus the zero-rule baseline, in canonical order.
    pub fn effective_models(&self) -> Vec<ModelKind> {
        let chosen: BTreeSet<ModelKind> = self.models.iter().copied().chain([ModelKind::ZeroRule]).collect();
        chosen.into_iter().collect()
    }
}

/// Out-of-fold prediction for one essay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssayPrediction {
    pub essay_id: String,
    pub fold: usize,
    pub gold: Label,
    pub predicted: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub model_kind: ModelKind,
    pub task: AuditTask,
    pub year_scope: YearScope,
    pub per_fold: Vec<Metrics>,
    pub mean_f1: f64,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
    pub mean_weighted_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub predictions: Option<Vec<EssayPrediction>>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

struct FoldData {
    train: Vec<usize>,
    test: Vec<usize>,
    vocab_size: usize,
    train_vectors: Vec<CountVector>,
    train_labels: Vec<Label>,
    train_groups: Vec<u32>,
    test_vectors: Vec<CountVector>,
}

fn fold_data(
    corpus: &LabeledCorpus,
    tokens: &[TokenSeq],
    groups: &[u32],
    plan: &FoldPlan,
    fold: usize,
    min_doc_freq: usize,
    need_vectors: bool,
) -> Result<FoldData> {
    let (test, train): (Vec<usize>, Vec<usize>) = (0..corpus.entries.len())
        .partition(|&i| plan.fold_of(&corpus.entries[i].student_id) == Some(fold));
    let train_labels: Vec<Label> = train.iter().map(|&i| corpus.entries[i].label).collect();
    if !train_labels.contains(&0) || !train_labels.contains(&1) {
        return Err(AuditError::DegenerateCorpus(format!(
            "training side of fold {fold} for {} {} contains a single class",
            corpus.task, corpus.year_scope
        )));
    }
    let mut data = FoldData {
        train_groups: train.iter().map(|&i| groups[i]).collect(),
        train_labels,
        train,
        test,
        vocab_size: 0,
        train_vectors: Vec::new(),
        test_vectors: Vec::new(),
    };
    if need_vectors {
        let vocab = Vocabulary::build(data.train.iter().map(|&i| &tokens[i]), min_doc_freq)?;
        data.vocab_size = vocab.len();
        data.train_vectors = data.train.iter().map(|&i| vectorize(&tokens[i], &vocab)).collect();
        data.test_vectors = data.test.iter().map(|&i| vectorize(&tokens[i], &vocab)).collect();
    }
    Ok(data)
}

fn predict_fold(model: ModelKind, data: &FoldData, config: &GridConfig, seed: u64) -> Result<Vec<Label>> {
    let n_test = data.test.len();
    let set = TrainSet::new(&data.train_vectors, &data.train_labels).with_groups(&data.train_groups);
    Ok(match model {
        ModelKind::ZeroRule => vec![ZeroRuleModel::train(&data.train_labels)?.predict(); n_test],
        ModelKind::Nb => {
            let m = NbModel::train(&data.train_vectors, &data.train_labels, data.vocab_size, config.nb_alpha)?;
            data.test_vectors.iter().map(|v| m.predict(v).0).collect()
        }
        ModelKind::Lr => {
            let m = LrModel::train(&set, data.vocab_size, &config.lr_policy, seed)?;
            data.test_vectors.iter().map(|v| m.predict(v).0).collect()
        }
        ModelKind::Mlp => {
            let m = MlpModel::train(&set, data.vocab_size, &config.mlp, seed)?;
            data.test_vectors.iter().map(|v| m.predict(v).0).collect()
        }
    })
}

fn task_tag(task: AuditTask) -> u64 {
    task as u64
}

fn scope_tag(scope: YearScope) -> u64 {
    scope as u64
}

/// Cross-validates several models over one shared set of folds.
pub fn run_models(
    corpus: &LabeledCorpus,
    models: &[ModelKind],
    plan: &FoldPlan,
    config: &GridConfig,
) -> Result<Vec<TaskResult>> {
    plan.check_covers(corpus)?;
    let tokens: Vec<TokenSeq> = corpus.entries.par_iter().map(|e| tokenize(&e.text)).collect();
    let mut group_ids: HashMap<&str, u32> = HashMap::new();
    let groups: Vec<u32> = corpus
        .entries
        .iter()
        .map(|e| {
            let next = group_ids.len() as u32;
            *group_ids.entry(&e.student_id).or_insert(next)
        })
        .collect();
    let need_vectors = models.iter().any(|&m| m != ModelKind::ZeroRule);

    // per fold: per model: predictions
    let per_fold: Vec<(FoldData, Vec<Vec<Label>>)> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let data = fold_data(corpus, &tokens, &groups, plan, fold, config.min_doc_freq, need_vectors)?;
            let preds = models
                .iter()
                .map(|&m| {
                    let seed = rng::derive_seed(
                        config.seed,
                        &[task_tag(corpus.task), scope_tag(corpus.year_scope), m.tag(), fold as u64],
                    );
                    predict_fold(m, &data, config, seed)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((data, preds))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut results = Vec::with_capacity(models.len());
    for (mi, &model) in models.iter().enumerate() {
        let mut metrics = Vec::with_capacity(plan.k);
        let mut predictions = config.collect_predictions.then(Vec::new);
        for (fold, (data, preds)) in per_fold.iter().enumerate() {
            let gold: Vec<Label> = data.test.iter().map(|&i| corpus.entries[i].label).collect();
            metrics.push(compute_metrics(&preds[mi], &gold, 1)?);
            if let Some(out) = predictions.as_mut() {
                for (&i, &p) in data.test.iter().zip(&preds[mi]) {
                    out.push(EssayPrediction {
                        essay_id: corpus.entries[i].essay_id.clone(),
                        fold,
                        gold: corpus.entries[i].label,
                        predicted: p,
                    });
                }
            }
        }
        let result = TaskResult {
            model_kind: model,
            task: corpus.task,
            year_scope: corpus.year_scope,
            mean_f1: mean(metrics.iter().map(|m| m.f1)),
            mean_accuracy: mean(metrics.iter().map(|m| m.accuracy)),
            mean_macro_f1: mean(metrics.iter().map(|m| m.macro_f1)),
            mean_weighted_f1: mean(metrics.iter().map(|m| m.weighted_f1)),
            per_fold: metrics,
            predictions,
        };
        log::info!(
            "{} {} {}: mean f1 {:.4}, mean accuracy {:.4}",
            result.task,
            result.year_scope,
            result.model_kind,
            result.mean_f1,
            result.mean_accuracy
        );
        results.push(result);
    }
    Ok(results)
}

/// Cross-validates one model: per fold, vocabulary and model come from the other k-1 folds.
pub fn run_task(corpus: &LabeledCorpus, model: ModelKind, plan: &FoldPlan, config: &GridConfig) -> Result<TaskResult> {
    Ok(run_models(corpus, &[model], plan, config)?.remove(0))
}

// ---------------------------------------------------------------------------
// Grid

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedTask {
    pub task: AuditTask,
    pub year_scope: YearScope,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub task: AuditTask,
    pub year_scope: YearScope,
    pub stats: CorpusStats,
    pub median_used: Option<u64>,
}

/// Top frequency-ratio words per class from Naive Bayes fit on a whole corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrTable {
    pub task: AuditTask,
    pub year_scope: YearScope,
    pub vocab_size: usize,
    /// Index `c` lists the words most indicative of class `c` (numerator class `c`).
    pub per_class: [Vec<FrequencyRatioEntry>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutput {
    pub corpora: Vec<CorpusSummary>,
    pub results: Vec<TaskResult>,
    pub skipped: Vec<SkippedTask>,
    pub fr_tables: Vec<FrTable>,
}

/// Fits Naive Bayes on every document of `corpus` and ranks words by frequency ratio.
pub fn fr_table(corpus: &LabeledCorpus, config: &GridConfig) -> Result<FrTable> {
    let tokens: Vec<TokenSeq> = corpus.entries.iter().map(|e| tokenize(&e.text)).collect();
    let vocab = Vocabulary::build(tokens.iter(), config.min_doc_freq)?;
    let vectors: Vec<CountVector> = tokens.iter().map(|t| vectorize(t, &vocab)).collect();
    let model = NbModel::train(&vectors, &corpus.labels(), vocab.len(), config.nb_alpha)?;
    let top = |c: Label| {
        let mut all = model.frequency_ratios(c, &vocab);
        all.truncate(config.top_n_fr);
        all
    };
    Ok(FrTable {
        task: corpus.task,
        year_scope: corpus.year_scope,
        vocab_size: vocab.len(),
        per_class: [top(0), top(1)],
    })
}

fn skip_reason(scope: YearScope, cohorts: &BTreeSet<Cohort>) -> Option<String> {
    let missing: Vec<&str> = [Cohort::Y1, Cohort::Y2]
        .into_iter()
        .filter(|c| scope.contains(*c) && !cohorts.contains(c))
        .map(Cohort::tag)
        .collect();
    if missing.is_empty() {
        None
    } else {
        Some(format!("no {} records", missing.join(" or ")))
    }
}

/// Builds every configured (task, scope) corpus and cross-validates every model on it.
///
/// A scope is skipped, not failed, when the input lacks one of its cohorts;
/// Combined needs both.
pub fn run_grid(records: &[RawRecord], config: &GridConfig) -> Result<GridOutput> {
    let records = &corpus::filter_min_length(records.to_vec(), config.min_chars)[..];
    let cohorts: BTreeSet<Cohort> = records.iter().map(|r| r.year).collect();
    let models = config.effective_models();
    let tasks: BTreeSet<AuditTask> = config.tasks.iter().copied().collect();

    let mut out = GridOutput {
        corpora: Vec::new(),
        results: Vec::new(),
        skipped: Vec::new(),
        fr_tables: Vec::new(),
    };
    for task in tasks {
        for scope in YearScope::ALL {
            if let Some(reason) = skip_reason(scope, &cohorts) {
                log::info!("{task} {scope}: skipped ({reason})");
                out.skipped.push(SkippedTask { task, year_scope: scope, reason });
                continue;
            }
            let corpus = corpus::build_corpus(records, task, scope, config.income_floor)?;
            out.corpora.push(CorpusSummary {
                task,
                year_scope: scope,
                stats: corpus::stats(&corpus),
                median_used: corpus.median_used,
            });
            let plan = make_folds(&corpus, config.k, config.seed)?;
            out.results.extend(run_models(&corpus, &models, &plan, config)?);
            out.fr_tables.push(fr_table(&corpus, config)?);
        }
    }
    Ok(out)
}
