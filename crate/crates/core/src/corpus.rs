//! Essay records, ingestion, and per-task label construction.
//!
//! Demographic fields are stored per record. Records with a missing value
//! are excluded from the task that needs it, and all non-missing values of
//! one student must agree; a conflict is a fatal data error. This keeps the
//! length and income filters plain per-record predicates, so they commute.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::{AuditError, Label, Result};

pub const DEFAULT_MIN_CHARS: usize = 100;
pub const DEFAULT_INCOME_FLOOR: u64 = 10_000;

/// Application cycle a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cohort {
    Y1,
    Y2,
}

impl Cohort {
    pub fn tag(self) -> &'static str {
        match self {
            Cohort::Y1 => "Y1",
            Cohort::Y2 => "Y2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum YearScope {
    Y1,
    Y2,
    Combined,
}

impl YearScope {
    pub const ALL: [YearScope; 3] = [YearScope::Y1, YearScope::Y2, YearScope::Combined];

    pub fn contains(self, cohort: Cohort) -> bool {
        match self {
            YearScope::Y1 => cohort == Cohort::Y1,
            YearScope::Y2 => cohort == Cohort::Y2,
            YearScope::Combined => true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            YearScope::Y1 => "Y1",
            YearScope::Y2 => "Y2",
            YearScope::Combined => "Combined",
        }
    }
}

impl fmt::Display for YearScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn label(self) -> Label {
        match self {
            Gender::Male => 0,
            Gender::Female => 1,
        }
    }

    fn parse(s: &str) -> Option<Gender> {
        match s {
            "Male" => Some(Gender::Male),
            "Female" => Some(Gender::Female),
            _ => None,
        }
    }
}

/// One essay together with its author's self-reported demographics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub student_id: String,
    pub essay_id: String,
    pub year: Cohort,
    pub text: String,
    pub reported_income: Option<u64>,
    pub reported_gender: Option<Gender>,
}

impl RawRecord {
    /// Serializes the record as one line of the ingest JSONL format (no trailing newline).
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            student_id: &'a str,
            essay_id: &'a str,
            year: &'a str,
            text: &'a str,
            gender: Option<Gender>,
            income: Option<u64>,
        }
        serde_json::to_string(&Line {
            student_id: &self.student_id,
            essay_id: &self.essay_id,
            year: self.year.tag(),
            text: &self.text,
            gender: self.reported_gender,
            income: self.reported_income,
        })
        .expect("record serialization is infallible")
    }
}

/// The two demographic classification tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditTask {
    Gender,
    Income,
}

impl AuditTask {
    pub const ALL: [AuditTask; 2] = [AuditTask::Gender, AuditTask::Income];

    /// Class names indexed by label.
    pub fn class_names(self) -> [&'static str; 2] {
        match self {
            AuditTask::Gender => ["Male", "Female"],
            AuditTask::Income => ["BelowMedian", "AboveMedian"],
        }
    }

    pub fn class_name(self, label: Label) -> &'static str {
        self.class_names()[label as usize]
    }

    pub fn name(self) -> &'static str {
        match self {
            AuditTask::Gender => "Gender",
            AuditTask::Income => "Income",
        }
    }
}

impl fmt::Display for AuditTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub student_id: String,
    pub essay_id: String,
    pub text: String,
    pub label: Label,
}

/// Filtered, task-labeled essays for one task and year scope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledCorpus {
    pub task: AuditTask,
    pub year_scope: YearScope,
    pub entries: Vec<CorpusEntry>,
    /// Income task only: the median income the split was made at.
    pub median_used: Option<u64>,
}

impl LabeledCorpus {
    /// Label of every student in the corpus, keyed by student id.
    pub fn student_labels(&self) -> BTreeMap<&str, Label> {
        self.entries
            .iter()
            .map(|e| (e.student_id.as_str(), e.label))
            .collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.entries.iter().map(|e| e.label).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub students: usize,
    pub essays: usize,
    pub per_class_students: [usize; 2],
    pub per_class_essays: [usize; 2],
}

// ---------------------------------------------------------------------------
// Ingestion

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Csv,
}

/// Maps dataset-specific year strings onto the two cohorts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct YearMap(pub BTreeMap<String, Cohort>);

impl Default for YearMap {
    fn default() -> Self {
        YearMap(
            [
                ("Y1", Cohort::Y1),
                ("Y2", Cohort::Y2),
                ("2015", Cohort::Y1),
                ("2016", Cohort::Y2),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        )
    }
}

impl YearMap {
    pub fn cohort(&self, year: &str) -> Option<Cohort> {
        self.0.get(year).copied()
    }
}

/// A skipped input row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// 1-based line number in the input.
    pub line: u64,
    pub essay_id: Option<String>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}", self.line)?;
        if let Some(id) = &self.essay_id {
            write!(f, " (essay_id {id:?})")?;
        }
        if let Some(field) = &self.field {
            write!(f, " field {field:?}")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub records: Vec<RawRecord>,
    pub errors: Vec<RowError>,
}

const COLUMNS: [&str; 6] = ["student_id", "essay_id", "year", "text", "gender", "income"];

/// Reads every record from `source`.
///
/// Rows that fail to parse are reported in [`Ingested::errors`] and skipped;
/// an undecodable stream or a repeated `essay_id` aborts the whole read.
pub fn ingest<R: Read>(mut source: R, format: InputFormat, years: &YearMap) -> Result<Ingested> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let text = String::from_utf8(bytes).map_err(|e| AuditError::Encoding(e.to_string()))?;

    let rows = match format {
        InputFormat::Jsonl => parse_jsonl(&text, years),
        InputFormat::Csv => parse_csv(&text, years)?,
    };

    let mut out = Ingested::default();
    let mut seen = HashSet::new();
    for row in rows {
        match row {
            Ok(record) => {
                if !seen.insert(record.essay_id.clone()) {
                    return Err(AuditError::DuplicateEssayId(record.essay_id));
                }
                out.records.push(record);
            }
            Err(e) => out.errors.push(e),
        }
    }
    Ok(out)
}

struct RowContext {
    line: u64,
    essay_id: Option<String>,
}

impl RowContext {
    fn error(&self, field: Option<&str>, message: impl Into<String>) -> RowError {
        RowError {
            line: self.line,
            essay_id: self.essay_id.clone(),
            field: field.map(str::to_string),
            message: message.into(),
        }
    }
}

fn parse_jsonl(text: &str, years: &YearMap) -> Vec<std::result::Result<RawRecord, RowError>> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| parse_json_row(i as u64 + 1, line, years))
        .collect()
}

fn parse_json_row(line_no: u64, line: &str, years: &YearMap) -> std::result::Result<RawRecord, RowError> {
    let mut ctx = RowContext { line: line_no, essay_id: None };
    let obj: Map<String, Value> = match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(obj)) => obj,
        Ok(_) => return Err(ctx.error(None, "row is not a JSON object")),
        Err(e) => return Err(ctx.error(None, format!("invalid JSON: {e}"))),
    };
    if let Some(Value::String(id)) = obj.get("essay_id") {
        ctx.essay_id = Some(id.clone());
    }
    if let Some(key) = obj.keys().find(|k| !COLUMNS.contains(&k.as_str())) {
        return Err(ctx.error(Some(key), "unexpected key"));
    }

    let required = |field: &str| -> std::result::Result<String, RowError> {
        match obj.get(field) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(ctx.error(Some(field), "expected a string")),
            None => Err(ctx.error(Some(field), "missing")),
        }
    };
    let essay_id = required("essay_id")?;
    let student_id = required("student_id")?;
    let year = parse_year(&ctx, &required("year")?, years)?;
    let text = required("text")?;

    let reported_gender = match obj.get("gender") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(parse_gender(&ctx, s)?),
        Some(_) => return Err(ctx.error(Some("gender"), "expected \"Male\", \"Female\", or null")),
    };
    let reported_income = match obj.get("income") {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) => match n.as_u64() {
            Some(v) => Some(v),
            None => return Err(ctx.error(Some("income"), format!("{n} is not a non-negative integer"))),
        },
        Some(other) => {
            return Err(ctx.error(Some("income"), format!("{other} is not a non-negative integer")))
        }
    };

    Ok(RawRecord {
        student_id,
        essay_id,
        year,
        text,
        reported_income,
        reported_gender,
    })
}

fn parse_csv(text: &str, years: &YearMap) -> Result<Vec<std::result::Result<RawRecord, RowError>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let headers = reader
        .headers()
        .map_err(|e| AuditError::Malformed(format!("CSV header: {e}")))?
        .clone();
    let mut index = [0usize; 6];
    for (slot, column) in index.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| AuditError::Malformed(format!("CSV header lacks column {column:?}")))?;
    }
    if let Some(extra) = headers.iter().find(|h| !COLUMNS.contains(h)) {
        return Err(AuditError::Malformed(format!("CSV header has unexpected column {extra:?}")));
    }

    let mut rows = Vec::new();
    for result in reader.records() {
        let record = match result {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                rows.push(Err(RowError {
                    line,
                    essay_id: None,
                    field: None,
                    message: format!("unparseable CSV row: {e}"),
                }));
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        let cell = |i: usize| record.get(index[i]).unwrap_or("");
        let mut ctx = RowContext { line, essay_id: None };
        if record.len() != headers.len() {
            rows.push(Err(ctx.error(
                None,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            )));
            continue;
        }
        rows.push((|| {
            let essay_id = cell(1).to_string();
            if essay_id.is_empty() {
                return Err(ctx.error(Some("essay_id"), "missing"));
            }
            ctx.essay_id = Some(essay_id.clone());
            let student_id = cell(0).to_string();
            if student_id.is_empty() {
                return Err(ctx.error(Some("student_id"), "missing"));
            }
            let year = parse_year(&ctx, cell(2), years)?;
            let reported_gender = match cell(4) {
                "" => None,
                s => Some(parse_gender(&ctx, s)?),
            };
            let reported_income = match cell(5).trim() {
                "" => None,
                s => Some(s.parse::<u64>().map_err(|_| {
                    ctx.error(Some("income"), format!("{s:?} is not a non-negative integer"))
                })?),
            };
            Ok(RawRecord {
                student_id,
                essay_id,
                year,
                text: cell(3).to_string(),
                reported_income,
                reported_gender,
            })
        })());
    }
    Ok(rows)
}

fn parse_year(ctx: &RowContext, year: &str, years: &YearMap) -> std::result::Result<Cohort, RowError> {
    years
        .cohort(year)
        .ok_or_else(|| ctx.error(Some("year"), format!("year {year:?} is not in the year map")))
}

fn parse_gender(ctx: &RowContext, s: &str) -> std::result::Result<Gender, RowError> {
    Gender::parse(s).ok_or_else(|| ctx.error(Some("gender"), format!("{s:?} is not \"Male\" or \"Female\"")))
}

// ---------------------------------------------------------------------------
// Filters

/// Keeps records whose text has at least `min_chars` Unicode scalar values.
pub fn filter_min_length(records: Vec<RawRecord>, min_chars: usize) -> Vec<RawRecord> {
    records
        .into_iter()
        .filter(|r| r.text.chars().count() >= min_chars)
        .collect()
}

/// Keeps records with a reported income of at least `floor`.
pub fn filter_income_floor(records: Vec<RawRecord>, floor: u64) -> Vec<RawRecord> {
    records
        .into_iter()
        .filter(|r| r.reported_income.is_some_and(|i| i >= floor))
        .collect()
}

/// Checks that a student never reports two different values for one field.
fn check_consistent<T: PartialEq + Copy>(
    records: &[&RawRecord],
    field: &'static str,
    value: impl Fn(&RawRecord) -> Option<T>,
) -> Result<()> {
    let mut seen: HashMap<&str, T> = HashMap::new();
    for r in records {
        if let Some(v) = value(r) {
            match seen.get(r.student_id.as_str()) {
                Some(prev) if *prev != v => {
                    return Err(AuditError::InconsistentStudent {
                        student_id: r.student_id.clone(),
                        field,
                    })
                }
                Some(_) => {}
                None => {
                    seen.insert(&r.student_id, v);
                }
            }
        }
    }
    Ok(())
}

fn in_scope(records: &[RawRecord], scope: YearScope) -> Vec<&RawRecord> {
    records.iter().filter(|r| scope.contains(r.year)).collect()
}

fn entry(r: &RawRecord, label: Label) -> CorpusEntry {
    CorpusEntry {
        student_id: r.student_id.clone(),
        essay_id: r.essay_id.clone(),
        text: r.text.clone(),
        label,
    }
}

fn ensure_both_classes(corpus: &LabeledCorpus) -> Result<()> {
    let stats = stats(corpus);
    for label in 0..2u8 {
        if stats.per_class_students[label as usize] == 0 {
            return Err(AuditError::DegenerateCorpus(format!(
                "{} corpus for scope {} has no {} students",
                corpus.task,
                corpus.year_scope,
                corpus.task.class_name(label)
            )));
        }
    }
    Ok(())
}

/// Labels the in-scope records that report a gender, without the degeneracy check.
pub fn label_gender(records: &[RawRecord], scope: YearScope) -> Result<LabeledCorpus> {
    let scoped = in_scope(records, scope);
    check_consistent(&scoped, "gender", |r| r.reported_gender)?;
    let entries = scoped
        .iter()
        .filter_map(|r| r.reported_gender.map(|g| entry(r, g.label())))
        .collect();
    Ok(LabeledCorpus {
        task: AuditTask::Gender,
        year_scope: scope,
        entries,
        median_used: None,
    })
}

/// Gender corpus: label 0 = Male, 1 = Female; records without a gender are excluded.
pub fn build_gender_corpus(records: &[RawRecord], scope: YearScope) -> Result<LabeledCorpus> {
    let corpus = label_gender(records, scope)?;
    ensure_both_classes(&corpus)?;
    Ok(corpus)
}

/// Lower median: element `(n - 1) / 2` of the sorted values.
pub fn lower_median(values: &mut [u64]) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable();
    Some(values[(values.len() - 1) / 2])
}

/// Income corpus split at the lower median of per-student incomes in scope.
///
/// Students below `income_floor` or without an income are dropped first.
/// A student exactly at the median is labeled BelowMedian (0).
pub fn build_income_corpus(
    records: &[RawRecord],
    scope: YearScope,
    income_floor: u64,
) -> Result<LabeledCorpus> {
    let scoped: Vec<&RawRecord> = in_scope(records, scope)
        .into_iter()
        .filter(|r| r.reported_income.is_some_and(|i| i >= income_floor))
        .collect();
    check_consistent(&scoped, "income", |r| r.reported_income)?;

    let per_student: HashMap<&str, u64> = scoped
        .iter()
        .filter_map(|r| r.reported_income.map(|i| (r.student_id.as_str(), i)))
        .collect();
    let mut incomes: Vec<u64> = per_student.values().copied().collect();
    let median = lower_median(&mut incomes).ok_or_else(|| {
        AuditError::DegenerateCorpus(format!(
            "Income corpus for scope {scope} has no students at or above the floor"
        ))
    })?;

    let entries = scoped
        .iter()
        .filter_map(|r| {
            r.reported_income
                .map(|i| entry(r, if i <= median { 0 } else { 1 }))
        })
        .collect();
    let corpus = LabeledCorpus {
        task: AuditTask::Income,
        year_scope: scope,
        entries,
        median_used: Some(median),
    };
    ensure_both_classes(&corpus)?;
    Ok(corpus)
}

pub fn build_corpus(
    records: &[RawRecord],
    task: AuditTask,
    scope: YearScope,
    income_floor: u64,
) -> Result<LabeledCorpus> {
    match task {
        AuditTask::Gender => build_gender_corpus(records, scope),
        AuditTask::Income => build_income_corpus(records, scope, income_floor),
    }
}

pub fn stats(corpus: &LabeledCorpus) -> CorpusStats {
    let mut out = CorpusStats {
        essays: corpus.entries.len(),
        ..CorpusStats::default()
    };
    for e in &corpus.entries {
        out.per_class_essays[e.label as usize] += 1;
    }
    for label in corpus.student_labels().values() {
        out.students += 1;
        out.per_class_students[*label as usize] += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(student: &str, essay: &str, year: Cohort, income: Option<u64>, gender: Option<Gender>) -> RawRecord {
        RawRecord {
            student_id: student.into(),
            essay_id: essay.into(),
            year,
            text: "x".repeat(120),
            reported_income: income,
            reported_gender: gender,
        }
    }

    fn ingest_str(s: &str, format: InputFormat) -> Result<Ingested> {
        ingest(s.as_bytes(), format, &YearMap::default())
    }

    #[test]
    fn empty_input_yields_nothing() {
        for format in [InputFormat::Jsonl, InputFormat::Csv] {
            let out = ingest_str("", format).unwrap();
            assert!(out.records.is_empty());
            assert!(out.errors.is_empty());
        }
    }

    #[test]
    fn jsonl_row_with_all_fields() {
        let line = r#"{"student_id":"s1","essay_id":"e1","year":"2015","text":"hello","gender":"Female","income":42000}"#;
        let out = ingest_str(line, InputFormat::Jsonl).unwrap();
        assert_eq!(
            out.records,
            vec![RawRecord {
                student_id: "s1".into(),
                essay_id: "e1".into(),
                year: Cohort::Y1,
                text: "hello".into(),
                reported_income: Some(42000),
                reported_gender: Some(Gender::Female),
            }]
        );
        assert_eq!(out.records[0].to_jsonl(), line.replace("2015", "Y1"));
    }

    #[test]
    fn bad_income_skips_row_and_names_it() {
        let input = concat!(
            r#"{"student_id":"s1","essay_id":"e1","year":"Y1","text":"a","gender":null,"income":"abc"}"#,
            "\n",
            r#"{"student_id":"s2","essay_id":"e2","year":"Y2","text":"b","gender":"Male","income":null}"#,
            "\n"
        );
        let out = ingest_str(input, InputFormat::Jsonl).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].essay_id, "e2");
        assert_eq!(out.errors.len(), 1);
        let err = &out.errors[0];
        assert_eq!(err.essay_id.as_deref(), Some("e1"));
        assert_eq!(err.field.as_deref(), Some("income"));
        assert_eq!(err.line, 1);
    }

    #[test]
    fn jsonl_row_level_failures() {
        let cases = [
            ("not json", None),
            (r#"[1,2]"#, None),
            (r#"{"student_id":"s","essay_id":"e","year":"Y9","text":"t"}"#, Some("year")),
            (r#"{"student_id":"s","essay_id":"e","year":"Y1","text":"t","gender":"Other"}"#, Some("gender")),
            (r#"{"student_id":"s","essay_id":"e","year":"Y1","text":"t","income":-5}"#, Some("income")),
            (r#"{"student_id":"s","essay_id":"e","year":"Y1","text":"t","income":1.5}"#, Some("income")),
            (r#"{"student_id":"s","essay_id":"e","year":"Y1"}"#, Some("text")),
            (r#"{"student_id":"s","essay_id":"e","year":"Y1","text":"t","zip":"1"}"#, Some("zip")),
        ];
        for (line, field) in cases {
            let out = ingest_str(line, InputFormat::Jsonl).unwrap();
            assert!(out.records.is_empty(), "{line}");
            assert_eq!(out.errors[0].field.as_deref(), field, "{line}");
        }
    }

    #[test]
    fn duplicate_essay_id_is_fatal() {
        let input = concat!(
            r#"{"student_id":"s1","essay_id":"e1","year":"Y1","text":"a"}"#,
            "\n",
            r#"{"student_id":"s2","essay_id":"e1","year":"Y1","text":"b"}"#
        );
        match ingest_str(input, InputFormat::Jsonl) {
            Err(AuditError::DuplicateEssayId(id)) => assert_eq!(id, "e1"),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_utf8_is_fatal() {
        let bytes: &[u8] = &[0xff, 0xfe, b'{'];
        assert!(matches!(
            ingest(bytes, InputFormat::Jsonl, &YearMap::default()),
            Err(AuditError::Encoding(_))
        ));
    }

    #[test]
    fn csv_rows_and_empty_cells() {
        let input = "essay_id,student_id,year,text,gender,income\n\
                     e1,s1,2016,\"hello, world\",,\n\
                     e2,s2,Y1,text,Male,12000\n\
                     e3,s3,Y1,text,Male,12k\n";
        let out = ingest_str(input, InputFormat::Csv).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[0].text, "hello, world");
        assert_eq!(out.records[0].year, Cohort::Y2);
        assert_eq!(out.records[0].reported_gender, None);
        assert_eq!(out.records[0].reported_income, None);
        assert_eq!(out.records[1].reported_income, Some(12000));
        assert_eq!(out.errors.len(), 1);
        assert_eq!(out.errors[0].essay_id.as_deref(), Some("e3"));
        assert_eq!(out.errors[0].field.as_deref(), Some("income"));
        assert_eq!(out.errors[0].line, 4);
    }

    #[test]
    fn csv_missing_column_is_fatal() {
        let input = "essay_id,student_id,year,text,gender\ne1,s1,Y1,t,Male\n";
        assert!(matches!(ingest_str(input, InputFormat::Csv), Err(AuditError::Malformed(_))));
    }

    #[test]
    fn min_length_boundary() {
        let mut r = rec("s", "e", Cohort::Y1, None, None);
        r.text = "a".repeat(99);
        assert!(filter_min_length(vec![r.clone()], 100).is_empty());
        r.text = "a".repeat(100);
        assert_eq!(filter_min_length(vec![r.clone()], 100).len(), 1);
        r.text = String::new();
        assert_eq!(filter_min_length(vec![r], 0).len(), 1);
    }

    #[test]
    fn min_length_counts_scalar_values() {
        let mut r = rec("s", "e", Cohort::Y1, None, None);
        r.text = "é".repeat(100); // 200 bytes
        assert_eq!(filter_min_length(vec![r.clone()], 100).len(), 1);
        r.text = "é".repeat(99);
        assert!(filter_min_length(vec![r], 100).is_empty());
    }

    #[test]
    fn gender_corpus_excludes_unreported() {
        let records = vec![
            rec("s1", "e1", Cohort::Y1, None, Some(Gender::Male)),
            rec("s2", "e2", Cohort::Y1, None, Some(Gender::Female)),
            rec("s3", "e3", Cohort::Y1, None, None),
        ];
        let corpus = build_gender_corpus(&records, YearScope::Y1).unwrap();
        assert_eq!(corpus.entries.len(), 2);
        assert_eq!(corpus.labels(), vec![0, 1]);
        assert_eq!(corpus.median_used, None);
    }

    #[test]
    fn single_gender_is_degenerate() {
        let records = vec![
            rec("s1", "e1", Cohort::Y1, None, Some(Gender::Male)),
            rec("s2", "e2", Cohort::Y1, None, Some(Gender::Male)),
        ];
        assert!(matches!(
            build_gender_corpus(&records, YearScope::Y1),
            Err(AuditError::DegenerateCorpus(_))
        ));
    }

    #[test]
    fn combined_gender_corpus_is_additive() {
        let g = [Gender::Male, Gender::Female];
        let records: Vec<RawRecord> = (0..12)
            .map(|i| {
                let cohort = if i % 3 == 0 { Cohort::Y2 } else { Cohort::Y1 };
                let gender = if i % 5 == 4 { None } else { Some(g[i % 2]) };
                rec(&format!("s{i}"), &format!("e{i}"), cohort, None, gender)
            })
            .collect();
        let y1 = build_gender_corpus(&records, YearScope::Y1).unwrap();
        let y2 = build_gender_corpus(&records, YearScope::Y2).unwrap();
        let all = build_gender_corpus(&records, YearScope::Combined).unwrap();
        assert_eq!(all.entries.len(), y1.entries.len() + y2.entries.len());
    }

    #[test]
    fn conflicting_gender_is_fatal() {
        let records = vec![
            rec("s1", "e1", Cohort::Y1, None, Some(Gender::Male)),
            rec("s1", "e2", Cohort::Y1, None, Some(Gender::Female)),
        ];
        assert!(matches!(
            build_gender_corpus(&records, YearScope::Y1),
            Err(AuditError::InconsistentStudent { field: "gender", .. })
        ));
    }

    #[test]
    fn income_floor_boundary() {
        let records = vec![
            rec("s1", "e1", Cohort::Y1, Some(9_999), None),
            rec("s2", "e2", Cohort::Y1, Some(10_000), None),
            rec("s3", "e3", Cohort::Y1, Some(50_000), None),
        ];
        let corpus = build_income_corpus(&records, YearScope::Y1, DEFAULT_INCOME_FLOOR).unwrap();
        let ids: Vec<&str> = corpus.entries.iter().map(|e| e.student_id.as_str()).collect();
        assert_eq!(ids, ["s2", "s3"]);
        assert_eq!(corpus.median_used, Some(10_000));
    }

    #[test]
    fn student_at_median_is_below() {
        let records = vec![
            rec("s1", "e1", Cohort::Y1, Some(20_000), None),
            rec("s2", "e2", Cohort::Y1, Some(43_000), None),
            rec("s3", "e3", Cohort::Y1, Some(60_000), None),
        ];
        let corpus = build_income_corpus(&records, YearScope::Y1, DEFAULT_INCOME_FLOOR).unwrap();
        assert_eq!(corpus.median_used, Some(43_000));
        assert_eq!(corpus.labels(), vec![0, 0, 1]);
    }

    #[test]
    fn equal_incomes_are_degenerate() {
        let records: Vec<RawRecord> = (0..4)
            .map(|i| rec(&format!("s{i}"), &format!("e{i}"), Cohort::Y1, Some(30_000), None))
            .collect();
        assert!(matches!(
            build_income_corpus(&records, YearScope::Y1, DEFAULT_INCOME_FLOOR),
            Err(AuditError::DegenerateCorpus(_))
        ));
    }

    #[test]
    fn median_counts_each_student_once() {
        // s1 has three essays; an essay-weighted median would be 15,000.
        let records = vec![
            rec("s1", "e1", Cohort::Y1, Some(15_000), None),
            rec("s1", "e2", Cohort::Y1, Some(15_000), None),
            rec("s1", "e3", Cohort::Y1, Some(15_000), None),
            rec("s2", "e4", Cohort::Y1, Some(30_000), None),
            rec("s3", "e5", Cohort::Y1, Some(40_000), None),
        ];
        let corpus = build_income_corpus(&records, YearScope::Y1, DEFAULT_INCOME_FLOOR).unwrap();
        assert_eq!(corpus.median_used, Some(30_000));
    }

    #[test]
    fn lower_median_picks_attained_value() {
        assert_eq!(lower_median(&mut []), None);
        assert_eq!(lower_median(&mut [5]), Some(5));
        assert_eq!(lower_median(&mut [4, 1, 3, 2]), Some(2));
        assert_eq!(lower_median(&mut [3, 1, 2]), Some(2));
    }

    #[test]
    fn stats_counts() {
        let empty = LabeledCorpus {
            task: AuditTask::Gender,
            year_scope: YearScope::Y1,
            entries: vec![],
            median_used: None,
        };
        assert_eq!(stats(&empty), CorpusStats::default());

        let records = vec![
            rec("a", "a1", Cohort::Y1, None, Some(Gender::Male)),
            rec("a", "a2", Cohort::Y1, None, Some(Gender::Male)),
            rec("b", "b1", Cohort::Y1, None, Some(Gender::Female)),
            rec("b", "b2", Cohort::Y1, None, Some(Gender::Female)),
        ];
        let corpus = build_gender_corpus(&records, YearScope::Y1).unwrap();
        let s = stats(&corpus);
        assert_eq!(s.students, 2);
        assert_eq!(s.essays, 4);
        assert_eq!(s.per_class_students, [1, 1]);
        assert_eq!(s.per_class_essays, [2, 2]);
    }

    fn arb_records() -> impl Strategy<Value = Vec<RawRecord>> {
        prop::collection::vec(
            (0usize..8, 90usize..110, prop::option::of(9_990u64..10_010), any::<bool>()),
            0..40,
        )
        .prop_map(|rows| {
            // Incomes are a function of the student so records never conflict.
            rows.into_iter()
                .enumerate()
                .map(|(i, (student, len, income, y2))| RawRecord {
                    student_id: format!("s{student}"),
                    essay_id: format!("e{i}"),
                    year: if y2 { Cohort::Y2 } else { Cohort::Y1 },
                    text: "é".repeat(len),
                    reported_income: income.map(|_| 9_995 + student as u64 * 3),
                    reported_gender: None,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn filters_commute(records in arb_records(), min_chars in 95usize..105, floor in 9_995u64..10_020) {
            let a = filter_income_floor(filter_min_length(records.clone(), min_chars), floor);
            let b = filter_min_length(filter_income_floor(records, floor), min_chars);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn income_corpus_invariants(records in arb_records()) {
            if let Ok(corpus) = build_income_corpus(&records, YearScope::Combined, DEFAULT_INCOME_FLOOR) {
                let median = corpus.median_used.unwrap();
                let income_of: HashMap<&str, u64> = records
                    .iter()
                    .filter_map(|r| r.reported_income.map(|i| (r.student_id.as_str(), i)))
                    .collect();
                let mut above = false;
                for e in &corpus.entries {
                    let income = income_of[e.student_id.as_str()];
                    prop_assert!(income >= DEFAULT_INCOME_FLOOR);
                    prop_assert_eq!(e.label, u8::from(income > median));
                    above |= income > median;
                }
                prop_assert!(above);
                let labels = corpus.student_labels();
                for e in &corpus.entries {
                    prop_assert_eq!(labels[e.student_id.as_str()], e.label);
                }
            }
        }
    }
}
