//! Audit report assembly and rendering (canonical JSON and Markdown).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{AuditTask, RawRecord, YearScope};
use crate::eval::{CorpusSummary, FrTable, GridConfig, GridOutput, Metrics, ModelKind};
use crate::nb::FrequencyRatioEntry;
use crate::{json, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const DEFAULT_TOP_N: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Skipped,
}

/// One model × task × scope entry of the accuracy grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub model: ModelKind,
    pub task: AuditTask,
    pub year_scope: YearScope,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub mean_f1: Option<f64>,
    pub mean_accuracy: Option<f64>,
    pub mean_macro_f1: Option<f64>,
    pub mean_weighted_f1: Option<f64>,
    pub per_fold: Vec<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub tool_version: String,
    pub seed: u64,
    pub config_echo: serde_json::Value,
    pub corpus_stats: Vec<CorpusSummary>,
    pub grid: Vec<GridCell>,
    pub fr_tables: Vec<FrTable>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl AuditReport {
    /// Collects one `run_grid` output into a report. `config_echo` should be the
    /// fully resolved configuration the run was started with.
    pub fn assemble(output: &GridOutput, config: &GridConfig, config_echo: serde_json::Value) -> Self {
        let mut grid: Vec<GridCell> = output
            .results
            .iter()
            .map(|r| GridCell {
                model: r.model_kind,
                task: r.task,
                year_scope: r.year_scope,
                status: CellStatus::Ok,
                reason: None,
                mean_f1: Some(r.mean_f1),
                mean_accuracy: Some(r.mean_accuracy),
                mean_macro_f1: Some(r.mean_macro_f1),
                mean_weighted_f1: Some(r.mean_weighted_f1),
                per_fold: r.per_fold.clone(),
            })
            .collect();
        for s in &output.skipped {
            for model in config.effective_models() {
                grid.push(GridCell {
                    model,
                    task: s.task,
                    year_scope: s.year_scope,
                    status: CellStatus::Skipped,
                    reason: Some(s.reason.clone()),
                    mean_f1: None,
                    mean_accuracy: None,
                    mean_macro_f1: None,
                    mean_weighted_f1: None,
                    per_fold: Vec::new(),
                });
            }
        }
        grid.sort_by_key(|c| (c.task, c.year_scope, c.model));
        AuditReport {
            tool_version: TOOL_VERSION.to_string(),
            seed: config.seed,
            config_echo,
            corpus_stats: output.corpora.clone(),
            grid,
            fr_tables: output.fr_tables.clone(),
        }
    }

    pub fn cell(&self, model: ModelKind, task: AuditTask, scope: YearScope) -> Option<&GridCell> {
        self.grid
            .iter()
            .find(|c| c.model == model && c.task == task && c.year_scope == scope)
    }
}

pub fn render_report(report: &AuditReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => json::to_canonical_string(report),
        ReportFormat::Markdown => Ok(render_markdown(report)),
    }
}

// ---------------------------------------------------------------------------
// Frequency-ratio tables

#[derive(Debug, Clone, PartialEq)]
pub struct FrRow {
    pub rank: usize,
    pub word: String,
    /// Rounded half-up to one decimal.
    pub fr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFr {
    pub rows: Vec<FrRow>,
    /// Present when fewer than `top_n` entries were available.
    pub shortfall: Option<String>,
}

/// Rounds a positive value half-up to one decimal place.
pub fn round_fr(fr: f64) -> f64 {
    (fr * 10.0).round() / 10.0
}

/// Top `top_n` rows of an already sorted frequency-ratio list.
pub fn render_fr_table(entries: &[FrequencyRatioEntry], top_n: usize) -> RenderedFr {
    let rows = entries
        .iter()
        .take(top_n)
        .enumerate()
        .map(|(i, e)| FrRow {
            rank: i + 1,
            word: e.token.clone(),
            fr: round_fr(e.fr),
        })
        .collect::<Vec<_>>();
    let shortfall = (rows.len() < top_n)
        .then(|| format!("only {} of {top_n} requested words available", rows.len()));
    RenderedFr { rows, shortfall }
}

// ---------------------------------------------------------------------------
// Corpus statistics

/// Student and essay counts per scope, before any filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeCounts {
    pub year_scope: YearScope,
    pub students: usize,
    pub female: usize,
    pub male: usize,
    pub essays: usize,
}

/// Counts per scope of raw records; students who never report a gender
/// count toward `students` only.
pub fn scope_counts(records: &[RawRecord]) -> Vec<ScopeCounts> {
    use crate::corpus::Gender;
    YearScope::ALL
        .into_iter()
        .map(|scope| {
            let scoped: Vec<&RawRecord> = records.iter().filter(|r| scope.contains(r.year)).collect();
            let students: BTreeSet<&str> = scoped.iter().map(|r| r.student_id.as_str()).collect();
            let genders: BTreeMap<&str, Gender> = scoped
                .iter()
                .filter_map(|r| r.reported_gender.map(|g| (r.student_id.as_str(), g)))
                .collect();
            ScopeCounts {
                year_scope: scope,
                students: students.len(),
                female: genders.values().filter(|&&g| g == Gender::Female).count(),
                male: genders.values().filter(|&&g| g == Gender::Male).count(),
                essays: scoped.len(),
            }
        })
        .collect()
}

pub fn render_scope_counts(counts: &[ScopeCounts]) -> String {
    let mut out = String::from("| Scope | Students | Female | Male | Essays |\n|---|---:|---:|---:|---:|\n");
    for c in counts {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            c.year_scope, c.students, c.female, c.male, c.essays
        );
    }
    out
}

// ---------------------------------------------------------------------------
// Markdown

fn percent(v: Option<f64>) -> String {
    v.map_or_else(|| "skipped".to_string(), |x| format!("{:.2}%", 100.0 * x))
}

fn render_grid(out: &mut String, report: &AuditReport, title: &str, value: impl Fn(&GridCell) -> Option<f64>) {
    let _ = writeln!(out, "### {title}\n");
    out.push_str("| Model |");
    for task in [AuditTask::Income, AuditTask::Gender] {
        for scope in YearScope::ALL {
            let _ = write!(out, " {task} {scope} |");
        }
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(6));
    out.push('\n');
    let models: BTreeSet<ModelKind> = report.grid.iter().map(|c| c.model).collect();
    for model in models {
        let _ = write!(out, "| {model} |");
        for task in [AuditTask::Income, AuditTask::Gender] {
            for scope in YearScope::ALL {
                let text = match report.cell(model, task, scope) {
                    Some(c) => percent(value(c)),
                    None => "n/a".to_string(),
                };
                let _ = write!(out, " {text} |");
            }
        }
        out.push('\n');
    }
    out.push('\n');
}

fn render_markdown(report: &AuditReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Corpus audit report\n");
    let _ = writeln!(out, "Tool version {}, seed {}.\n", report.tool_version, report.seed);

    out.push_str("## Corpus statistics\n\n");
    if report.corpus_stats.is_empty() {
        out.push_str("No corpora were built.\n\n");
    } else {
        out.push_str("| Task | Scope | Students | Class 0 students | Class 1 students | Essays | Median |\n");
        out.push_str("|---|---|---:|---:|---:|---:|---:|\n");
        for c in &report.corpus_stats {
            let [n0, n1] = c.task.class_names();
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} {} | {} {} | {} | {} |",
                c.task,
                c.year_scope,
                c.stats.students,
                c.stats.per_class_students[0],
                n0,
                c.stats.per_class_students[1],
                n1,
                c.stats.essays,
                c.median_used.map_or_else(|| "-".to_string(), |m| m.to_string())
            );
        }
        out.push('\n');
    }

    out.push_str("## Classification results\n\n");
    out.push_str("Means over cross-validation folds. F1 is for class 1 (AboveMedian, Female).\n\n");
    render_grid(&mut out, report, "Mean F1", |c| c.mean_f1);
    render_grid(&mut out, report, "Mean accuracy", |c| c.mean_accuracy);
    render_grid(&mut out, report, "Mean macro F1", |c| c.mean_macro_f1);

    let skipped: Vec<&GridCell> = report
        .grid
        .iter()
        .filter(|c| c.status == CellStatus::Skipped && c.model == ModelKind::ZeroRule)
        .collect();
    if !skipped.is_empty() {
        out.push_str("Skipped tasks:\n\n");
        for c in skipped {
            let _ = writeln!(out, "- {} {}: {}", c.task, c.year_scope, c.reason.as_deref().unwrap_or(""));
        }
        out.push('\n');
    }

    out.push_str("## Most indicative words (Naive Bayes frequency ratios)\n\n");
    let top_n = report
        .config_echo
        .get("top_n_fr")
        .and_then(serde_json::Value::as_u64)
        .map_or(DEFAULT_TOP_N, |n| n as usize);
    for table in &report.fr_tables {
        let [n0, n1] = table.task.class_names();
        let _ = writeln!(out, "### {} {}\n", table.task, table.year_scope);
        let cols = [
            render_fr_table(&table.per_class[0], top_n),
            render_fr_table(&table.per_class[1], top_n),
        ];
        let _ = writeln!(out, "| Rank | {n0} | FR | {n1} | FR |\n|---:|---|---:|---|---:|");
        let depth = cols[0].rows.len().max(cols[1].rows.len());
        for i in 0..depth {
            let _ = write!(out, "| {} |", i + 1);
            for col in &cols {
                match col.rows.get(i) {
                    Some(r) => {
                        let _ = write!(out, " {} | {:.1} |", r.word, r.fr);
                    }
                    None => out.push_str(" | |"),
                }
            }
            out.push('\n');
        }
        for (name, col) in [n0, n1].iter().zip(&cols) {
            if let Some(note) = &col.shortfall {
                let _ = writeln!(out, "\n{name}: {note}.");
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Cohort, CorpusStats, Gender};
    use crate::eval::{compute_metrics, SkippedTask, TaskResult};

    fn entry(token: &str, fr: f64) -> FrequencyRatioEntry {
        FrequencyRatioEntry {
            token: token.into(),
            fr,
            numerator_class: 1,
        }
    }

    #[test]
    fn fr_rows_round_half_up() {
        let t = render_fr_table(&[entry("softball", 41.5), entry("x", 6.499_999_999), entry("y", 6.45)], 3);
        assert_eq!(t.rows[0], FrRow { rank: 1, word: "softball".into(), fr: 41.5 });
        assert_eq!(format!("{:.1}", t.rows[1].fr), "6.5");
        assert_eq!(format!("{:.1}", t.rows[2].fr), "6.5");
        assert!(t.shortfall.is_none());
    }

    #[test]
    fn fr_shortfall() {
        let t = render_fr_table(&[entry("a", 1.0)], 10);
        assert_eq!(t.rows.len(), 1);
        assert!(t.shortfall.unwrap().contains("only 1 of 10"));
    }

    fn sample_output() -> (GridOutput, GridConfig) {
        let config = GridConfig { models: vec![ModelKind::Nb], ..GridConfig::default() };
        let m = compute_metrics(&[0, 1, 1, 0], &[0, 1, 0, 0], 1).unwrap();
        let result = TaskResult {
            model_kind: ModelKind::Nb,
            task: AuditTask::Gender,
            year_scope: YearScope::Y1,
            per_fold: vec![m.clone(), m.clone()],
            mean_f1: m.f1,
            mean_accuracy: m.accuracy,
            mean_macro_f1: m.macro_f1,
            mean_weighted_f1: m.weighted_f1,
            predictions: None,
        };
        let output = GridOutput {
            corpora: vec![CorpusSummary {
                task: AuditTask::Gender,
                year_scope: YearScope::Y1,
                stats: CorpusStats { students: 4, essays: 4, per_class_students: [2, 2], per_class_essays: [2, 2] },
                median_used: None,
            }],
            results: vec![result],
            skipped: vec![SkippedTask { task: AuditTask::Income, year_scope: YearScope::Y2, reason: "no Y2 records".into() }],
            fr_tables: vec![FrTable {
                task: AuditTask::Gender,
                year_scope: YearScope::Y1,
                vocab_size: 3,
                per_class: [vec![entry("b", 1.0 / 3.0)], vec![entry("a", 2.0 / 3.0 * 4.5), entry("c", 1.1)]],
            }],
        };
        (output, config)
    }

    #[test]
    fn rendering_is_deterministic_and_round_trips() {
        let (output, config) = sample_output();
        let echo = serde_json::to_value(&config).unwrap();
        let report = AuditReport::assemble(&output, &config, echo.clone());
        let a = render_report(&report, ReportFormat::Json).unwrap();
        let b = render_report(&AuditReport::assemble(&output, &config, echo), ReportFormat::Json).unwrap();
        assert_eq!(a, b);
        let parsed: AuditReport = serde_json::from_str(&a).unwrap();
        assert_eq!(parsed, report);
        assert_eq!(
            render_report(&report, ReportFormat::Markdown).unwrap(),
            render_report(&parsed, ReportFormat::Markdown).unwrap()
        );
    }

    #[test]
    fn skipped_cells_are_explicit() {
        let (output, config) = sample_output();
        let report = AuditReport::assemble(&output, &config, serde_json::Value::Null);
        let cell = report.cell(ModelKind::ZeroRule, AuditTask::Income, YearScope::Y2).unwrap();
        assert_eq!(cell.status, CellStatus::Skipped);
        assert_eq!(report.grid.len(), 1 + 2);
        let md = render_report(&report, ReportFormat::Markdown).unwrap();
        assert!(md.contains("skipped"));
        assert!(md.contains("Income Y2: no Y2 records"));
    }

    #[test]
    fn empty_grid_renders() {
        let output = GridOutput { corpora: vec![], results: vec![], skipped: vec![], fr_tables: vec![] };
        let report = AuditReport::assemble(&output, &GridConfig::default(), serde_json::Value::Null);
        let json = render_report(&report, ReportFormat::Json).unwrap();
        let _: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(render_report(&report, ReportFormat::Markdown).unwrap().contains("No corpora"));
    }

    #[test]
    fn markdown_fr_matches_json() {
        let (output, config) = sample_output();
        let report = AuditReport::assemble(&output, &config, serde_json::to_value(&config).unwrap());
        let md = render_report(&report, ReportFormat::Markdown).unwrap();
        for e in report.fr_tables[0].per_class.iter().flatten() {
            assert!(md.contains(&format!(" {} | {:.1} |", e.token, round_fr(e.fr))), "{}", e.token);
        }
        assert!(md.contains("| 1 | b | 0.3 | a | 3.0 |"));
    }

    #[test]
    fn scope_counts_hand_count() {
        let rec = |s: &str, e: &str, g: Option<Gender>| RawRecord {
            student_id: s.into(),
            essay_id: e.into(),
            year: Cohort::Y1,
            text: String::new(),
            reported_income: None,
            reported_gender: g,
        };
        let records = vec![
            rec("a", "a1", Some(Gender::Female)),
            rec("a", "a2", Some(Gender::Female)),
            rec("b", "b1", Some(Gender::Female)),
            rec("b", "b2", Some(Gender::Female)),
            rec("c", "c1", Some(Gender::Male)),
            rec("c", "c2", None),
        ];
        let counts = scope_counts(&records);
        assert_eq!(
            counts[0],
            ScopeCounts { year_scope: YearScope::Y1, students: 3, female: 2, male: 1, essays: 6 }
        );
        assert_eq!(counts[1].students, 0);
        assert!(render_scope_counts(&counts).contains("| Y1 | 3 | 2 | 1 | 6 |"));
    }
}
