//! CSV ingestion and schema-versioned JSON documents.
//!
//! Training CSVs carry `feature_0..feature_{d-1}` and `label` columns in any
//! order; trusted CSVs may add `confidence`. JSON documents carry
//! `"schema": "duti/1"` and a `kind` tag.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::BaselineRanking;
use crate::bench::{Provenance, SimulatedCorpus};
use crate::error::{DutiError, Result};
use crate::learners::LearnerConfig;
use crate::types::{
    one_hot, Dataset, DebugReport, DeltaState, FlagSet, Labels, RankedFlag, Round, RoundStatus, Task, TrustedSet,
};

pub const SCHEMA: &str = "duti/1";

/// Largest class count accepted from files.
pub const MAX_CLASSES: usize = 1024;

/// Largest number of dense delta cells a report may expand to.
pub const MAX_REPORT_CELLS: usize = 1 << 26;

const LABEL_COLUMN: &str = "label";
const CONFIDENCE_COLUMN: &str = "confidence";
const FEATURE_PREFIX: &str = "feature_";

/// A parsed CSV before labels are interpreted for a task.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub features: DMatrix<f64>,
    pub labels: Vec<f64>,
    pub confidences: Option<Vec<f64>>,
    /// File line of each data row, for error messages.
    pub lines: Vec<usize>,
}

fn parse_err(line: usize, message: impl Into<String>) -> DutiError {
    DutiError::Parse {
        line,
        message: message.into(),
    }
}

fn csv_err(e: csv::Error) -> DutiError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            parse_err(line, format!("expected {expected_len} fields, found {len}"))
        }
        csv::ErrorKind::Utf8 { .. } => parse_err(line, "invalid UTF-8"),
        _ => parse_err(line, e.to_string()),
    }
}

fn parse_number(field: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(line, format!("column `{column}`: `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("column `{column}`: value must be finite")));
    }
    Ok(v)
}

/// Reads a header-led CSV table.
pub fn read_table<R: Read>(reader: R) -> Result<CsvTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(parse_err(1, "missing header row"));
    }

    let mut label_col = None;
    let mut confidence_col = None;
    let mut feature_cols: Vec<Option<usize>> = Vec::new();
    for (pos, name) in header.iter().enumerate() {
        let slot = if name == LABEL_COLUMN {
            &mut label_col
        } else if name == CONFIDENCE_COLUMN {
            &mut confidence_col
        } else if let Some(j) = name.strip_prefix(FEATURE_PREFIX).and_then(|s| s.parse::<usize>().ok()) {
            if j >= header.len() {
                return Err(DutiError::Schema(format!(
                    "feature column `{name}` leaves a gap in the feature numbering"
                )));
            }
            if feature_cols.len() <= j {
                feature_cols.resize(j + 1, None);
            }
            &mut feature_cols[j]
        } else {
            return Err(DutiError::Schema(format!("unknown column `{name}`")));
        };
        if slot.replace(pos).is_some() {
            return Err(DutiError::Schema(format!("duplicate column `{name}`")));
        }
    }
    let label_col = label_col.ok_or_else(|| DutiError::Schema(format!("missing column `{LABEL_COLUMN}`")))?;
    if feature_cols.is_empty() {
        return Err(DutiError::Schema(format!("missing column `{FEATURE_PREFIX}0`")));
    }
    let feature_cols: Vec<usize> = feature_cols
        .iter()
        .enumerate()
        .map(|(j, c)| c.ok_or_else(|| DutiError::Schema(format!("missing column `{FEATURE_PREFIX}{j}`"))))
        .collect::<Result<_>>()?;

    let d = feature_cols.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut confidences = confidence_col.map(|_| Vec::new());
    let mut lines = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        for (j, &c) in feature_cols.iter().enumerate() {
            values.push(parse_number(&record[c], line, &format!("{FEATURE_PREFIX}{j}"))?);
        }
        labels.push(parse_number(&record[label_col], line, LABEL_COLUMN)?);
        if let (Some(c), Some(out)) = (confidence_col, confidences.as_mut()) {
            let v = parse_number(&record[c], line, CONFIDENCE_COLUMN)?;
            if v < 0.0 {
                return Err(parse_err(line, "confidence must be nonnegative"));
            }
            out.push(v);
        }
        lines.push(line);
    }
    if labels.is_empty() {
        return Err(parse_err(2, "no data rows"));
    }
    Ok(CsvTable {
        features: DMatrix::from_row_slice(labels.len(), d, &values),
        labels,
        confidences,
        lines,
    })
}

impl CsvTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Labels read as class indices.
    pub fn class_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .zip(&self.lines)
            .map(|(&v, &line)| {
                if v < 0.0 || v.fract() != 0.0 || v >= MAX_CLASSES as f64 {
                    Err(parse_err(
                        line,
                        format!("label `{v}` is not a class index below {MAX_CLASSES}"),
                    ))
                } else {
                    Ok(v as usize)
                }
            })
            .collect()
    }

    /// Number of classes implied by the largest label, at least 2.
    pub fn implied_classes(&self) -> Result<usize> {
        Ok(self.class_labels()?.into_iter().max().map_or(2, |c| (c + 1).max(2)))
    }

    pub fn labels_for(&self, task: Task) -> Result<Labels> {
        match task {
            Task::Regression => Labels::regression(self.labels.clone()),
            Task::Classification { classes } => {
                let labels = self.class_labels()?;
                if let Some((i, &c)) = labels.iter().enumerate().find(|(_, &c)| c >= classes) {
                    return Err(parse_err(
                        self.lines[i],
                        format!("label {c} is out of range for {classes} classes"),
                    ));
                }
                Labels::classification(labels, classes)
            }
        }
    }

    pub fn into_dataset(self, task: Task) -> Result<Dataset> {
        let labels = self.labels_for(task)?;
        Dataset::new(self.features, labels)
    }

    /// Missing confidences default to [`TrustedSet::DEFAULT_CONFIDENCE`].
    pub fn into_trusted(self, task: Task) -> Result<TrustedSet> {
        let labels = self.labels_for(task)?;
        let m = self.labels.len();
        let c = self
            .confidences
            .map(DVector::from_vec)
            .unwrap_or_else(|| DVector::from_element(m, TrustedSet::DEFAULT_CONFIDENCE));
        TrustedSet::new(self.features, labels, c)
    }
}

fn write_rows<W: Write>(
    w: W,
    features: &DMatrix<f64>,
    labels: &Labels,
    confidences: Option<&DVector<f64>>,
) -> Result<()> {
    let io = |e: csv::Error| DutiError::InvalidData(format!("cannot write CSV: {e}"));
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..features.ncols()).map(|j| format!("{FEATURE_PREFIX}{j}")).collect();
    header.push(LABEL_COLUMN.into());
    if confidences.is_some() {
        header.push(CONFIDENCE_COLUMN.into());
    }
    wtr.write_record(&header).map_err(io)?;
    for i in 0..features.nrows() {
        let mut row: Vec<String> = features.row(i).iter().map(|v| v.to_string()).collect();
        row.push(match labels {
            Labels::Classification { labels, .. } => labels[i].to_string(),
            Labels::Regression(y) => y[i].to_string(),
        });
        if let Some(c) = confidences {
            row.push(c[i].to_string());
        }
        wtr.write_record(&row).map_err(io)?;
    }
    wtr.flush()
        .map_err(|e| DutiError::InvalidData(format!("cannot write CSV: {e}")))
}

pub fn write_dataset<W: Write>(w: W, data: &Dataset) -> Result<()> {
    write_rows(w, data.features(), data.labels(), None)
}

pub fn write_trusted<W: Write>(w: W, trusted: &TrustedSet) -> Result<()> {
    write_rows(w, trusted.features(), trusted.labels(), Some(trusted.confidences()))
}

fn labels_to_f64(labels: &Labels) -> Vec<f64> {
    (0..labels.len()).map(|i| labels.value(i)).collect()
}

fn labels_from_f64(values: Vec<f64>, task: Task) -> Result<Labels> {
    match task {
        Task::Regression => Labels::regression(values),
        Task::Classification { classes } => {
            if !(2..=MAX_CLASSES).contains(&classes) {
                return Err(DutiError::Schema(format!("class count {classes} out of range")));
            }
            let labels = values
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    if v >= 0.0 && v.fract() == 0.0 && v < classes as f64 {
                        Ok(v as usize)
                    } else {
                        Err(DutiError::Schema(format!("label {v} at index {i} is not a class index")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Labels::classification(labels, classes)
        }
    }
}

fn check_header(schema: &str, kind: &str, expected: &str) -> Result<()> {
    if schema != SCHEMA {
        return Err(DutiError::Schema(format!("unsupported schema `{schema}`, expected `{SCHEMA}`")));
    }
    if kind != expected {
        return Err(DutiError::Schema(format!("expected a `{expected}` document, found `{kind}`")));
    }
    Ok(())
}

fn json_err(e: serde_json::Error) -> DutiError {
    if e.is_syntax() || e.is_eof() {
        DutiError::Parse {
            line: e.line(),
            message: e.to_string(),
        }
    } else {
        DutiError::Schema(e.to_string())
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| DutiError::InvalidData(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn check_index(i: usize, n: usize, what: &str) -> Result<()> {
    if i >= n {
        return Err(DutiError::Schema(format!("{what} index {i} out of range for n = {n}")));
    }
    Ok(())
}

/// Delta stored as its departures from the starting point: nonzero shifts
/// for regression, rows that differ from the one-hot label for classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SparseDelta {
    Regression { entries: Vec<(usize, f64)> },
    Classification { rows: Vec<(usize, Vec<f64>)> },
}

impl SparseDelta {
    fn encode(delta: &DeltaState, labels: &Labels) -> Self {
        match delta {
            DeltaState::Classification(d) => {
                let start = labels.as_classes();
                SparseDelta::Classification {
                    rows: (0..d.nrows())
                        .filter(|&i| {
                            start.is_none_or(|y| (0..d.ncols()).any(|j| d[(i, j)] != if j == y[i] { 1.0 } else { 0.0 }))
                        })
                        .map(|i| (i, d.row(i).iter().copied().collect()))
                        .collect(),
                }
            }
            DeltaState::Regression(d) => SparseDelta::Regression {
                entries: d.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i, *v)).collect(),
            },
        }
    }

    fn decode(self, labels: &Labels) -> Result<DeltaState> {
        let n = labels.len();
        match (self, labels) {
            (SparseDelta::Regression { entries }, Labels::Regression(_)) => {
                let mut d = DVector::zeros(n);
                for (i, v) in entries {
                    check_index(i, n, "delta")?;
                    d[i] = v;
                }
                DeltaState::regression(d)
            }
            (SparseDelta::Classification { rows }, Labels::Classification { labels, classes }) => {
                let mut d = one_hot(labels, *classes)?;
                for (i, row) in rows {
                    check_index(i, n, "delta")?;
                    if row.len() != *classes {
                        return Err(DutiError::Schema(format!(
                            "delta row {i} has {} entries, expected {classes}",
                            row.len()
                        )));
                    }
                    for (j, v) in row.into_iter().enumerate() {
                        d[(i, j)] = v;
                    }
                }
                DeltaState::classification(d)
            }
            _ => Err(DutiError::Schema("delta kind does not match the task".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RoundRecord {
    iteration: usize,
    gamma: f64,
    status: RoundStatus,
    flags: Vec<usize>,
    delta: SparseDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ReportFile {
    schema: String,
    kind: String,
    task: Task,
    n: usize,
    gamma0: f64,
    converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    learner: Option<LearnerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    budget: Option<usize>,
    labels: Vec<f64>,
    trajectory: Vec<RoundRecord>,
    ranking: Vec<RankedFlag>,
}

/// A debugger report with the labels it was computed against.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportDocument {
    pub report: DebugReport,
    pub labels: Labels,
    pub learner: Option<LearnerConfig>,
    pub budget: Option<usize>,
}

impl ReportDocument {
    pub fn to_json(&self) -> Result<String> {
        let r = &self.report;
        to_json(&ReportFile {
            schema: SCHEMA.into(),
            kind: "report".into(),
            task: r.task,
            n: r.n,
            gamma0: r.gamma0,
            converged: r.converged(),
            learner: self.learner,
            budget: self.budget,
            labels: labels_to_f64(&self.labels),
            trajectory: r
                .trajectory
                .iter()
                .map(|round| RoundRecord {
                    iteration: round.iteration,
                    gamma: round.gamma,
                    status: round.status.clone(),
                    flags: round.flags.indices().to_vec(),
                    delta: SparseDelta::encode(&round.delta, &self.labels),
                })
                .collect(),
            ranking: r.ranking.clone(),
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: ReportFile = serde_json::from_str(text).map_err(json_err)?;
        check_header(&file.schema, &file.kind, "report")?;
        let n = file.n;
        if file.labels.len() != n {
            return Err(DutiError::Schema(format!(
                "report has n = {n} but {} labels",
                file.labels.len()
            )));
        }
        let labels = labels_from_f64(file.labels, file.task)?;
        let width = file.task.classes().unwrap_or(1);
        if n.saturating_mul(width).saturating_mul(file.trajectory.len()) > MAX_REPORT_CELLS {
            return Err(DutiError::Schema("report trajectory is too large".into()));
        }
        if !file.gamma0.is_finite() {
            return Err(DutiError::Schema("gamma0 must be finite".into()));
        }
        let trajectory = file
            .trajectory
            .into_iter()
            .map(|r| {
                for &i in &r.flags {
                    check_index(i, n, "flag")?;
                }
                Ok(Round {
                    iteration: r.iteration,
                    gamma: r.gamma,
                    delta: r.delta.decode(&labels)?,
                    flags: FlagSet::new(r.iteration, r.gamma, r.flags, n)?,
                    status: r.status,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut seen = BTreeSet::new();
        for flag in &file.ranking {
            check_index(flag.index, n, "ranking")?;
            if !seen.insert(flag.index) {
                return Err(DutiError::Schema(format!("index {} ranked twice", flag.index)));
            }
        }
        if let Some(l) = &file.learner {
            l.validate()?;
        }
        Ok(Self {
            report: DebugReport {
                task: file.task,
                n,
                gamma0: file.gamma0,
                trajectory,
                ranking: file.ranking,
            },
            labels,
            learner: file.learner,
            budget: file.budget,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TruthFile {
    schema: String,
    kind: String,
    task: Task,
    n: usize,
    bug_indices: Vec<usize>,
    true_labels: Vec<f64>,
    provenance: Provenance,
}

/// Ground truth of a simulated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthDocument {
    pub task: Task,
    pub bug_indices: Vec<usize>,
    pub true_labels: Labels,
    pub provenance: Provenance,
}

impl TruthDocument {
    pub fn from_corpus(corpus: &SimulatedCorpus) -> Result<Self> {
        let true_labels = corpus
            .dataset
            .true_labels()
            .ok_or_else(|| DutiError::InvalidData("corpus has no true labels".into()))?
            .clone();
        Ok(Self {
            task: corpus.dataset.task(),
            bug_indices: corpus.bug_indices.clone(),
            true_labels,
            provenance: corpus.provenance.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.true_labels.len()
    }

    pub fn to_json(&self) -> Result<String> {
        to_json(&TruthFile {
            schema: SCHEMA.into(),
            kind: "truth".into(),
            task: self.task,
            n: self.n(),
            bug_indices: self.bug_indices.clone(),
            true_labels: labels_to_f64(&self.true_labels),
            provenance: self.provenance.clone(),
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: TruthFile = serde_json::from_str(text).map_err(json_err)?;
        check_header(&file.schema, &file.kind, "truth")?;
        if file.true_labels.len() != file.n {
            return Err(DutiError::Schema(format!(
                "truth has n = {} but {} true labels",
                file.n,
                file.true_labels.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for &i in &file.bug_indices {
            check_index(i, file.n, "bug")?;
            if !seen.insert(i) {
                return Err(DutiError::Schema(format!("bug index {i} listed twice")));
            }
        }
        Ok(Self {
            task: file.task,
            bug_indices: seen.into_iter().collect(),
            true_labels: labels_from_f64(file.true_labels, file.task)?,
            provenance: file.provenance,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BaselineFile {
    schema: String,
    kind: String,
    method: String,
    task: Task,
    n: usize,
    ranking: BaselineRanking,
}

/// A baseline debugger's ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineDocument {
    pub method: String,
    pub task: Task,
    pub n: usize,
    pub ranking: BaselineRanking,
}

impl BaselineDocument {
    pub fn to_json(&self) -> Result<String> {
        to_json(&BaselineFile {
            schema: SCHEMA.into(),
            kind: "baseline".into(),
            method: self.method.clone(),
            task: self.task,
            n: self.n,
            ranking: self.ranking.clone(),
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: BaselineFile = serde_json::from_str(text).map_err(json_err)?;
        check_header(&file.schema, &file.kind, "baseline")?;
        let mut seen = BTreeSet::new();
        for e in &file.ranking.entries {
            check_index(e.index, file.n, "ranking")?;
            if !seen.insert(e.index) {
                return Err(DutiError::Schema(format!("index {} ranked twice", e.index)));
            }
        }
        Ok(Self {
            method: file.method,
            task: file.task,
            n: file.n,
            ranking: file.ranking,
        })
    }
}

/// Reads the `kind` tag of a schema-versioned document.
pub fn document_kind(text: &str) -> Result<String> {
    #[derive(Deserialize)]
    struct Header {
        schema: String,
        kind: String,
    }
    let h: Header = serde_json::from_str(text).map_err(json_err)?;
    if h.schema != SCHEMA {
        return Err(DutiError::Schema(format!("unsupported schema `{}`, expected `{SCHEMA}`", h.schema)));
    }
    Ok(h.kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{gen_harry_potter, gen_sine_regression};
    use crate::driver::{run_duti, DriverConfig};

    fn table(text: &str) -> Result<CsvTable> {
        read_table(text.as_bytes())
    }

    #[test]
    fn columns_in_any_order() {
        let t = table("label,feature_1,feature_0\n1,2.5,-1\n0,3,4\n").unwrap();
        assert_eq!(t.features, DMatrix::from_row_slice(2, 2, &[-1.0, 2.5, 4.0, 3.0]));
        assert_eq!(t.labels, vec![1.0, 0.0]);
        assert!(t.confidences.is_none());
        assert_eq!(t.lines, vec![2, 3]);
    }

    #[test]
    fn missing_label_column_is_named() {
        match table("feature_0\n1\n") {
            Err(DutiError::Schema(m)) => assert!(m.contains("`label`"), "{m}"),
            other => panic!("{other:?}"),
        }
        match table("feature_1,label\n1,0\n") {
            Err(DutiError::Schema(m)) => assert!(m.contains("feature_0"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_values_report_their_line() {
        assert_eq!(
            table("feature_0,label\n1,0\n2,x\n").unwrap_err(),
            parse_err(3, "column `label`: `x` is not a number")
        );
        assert!(matches!(table("feature_0,label\n1,0\n2\n"), Err(DutiError::Parse { line: 3, .. })));
        assert!(matches!(table("feature_0,label\nNaN,0\n"), Err(DutiError::Parse { line: 2, .. })));
        assert!(matches!(table("feature_0,label\n"), Err(DutiError::Parse { .. })));
        assert!(matches!(table(""), Err(DutiError::Parse { line: 1, .. })));
        assert!(matches!(table("feature_0,label,extra\n1,0,0\n"), Err(DutiError::Schema(_))));
        assert!(matches!(table("feature_0,feature_0,label\n1,1,0\n"), Err(DutiError::Schema(_))));
        assert!(matches!(
            table("feature_0,label,confidence\n1,0,-1\n"),
            Err(DutiError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn class_labels_are_checked() {
        let t = table("feature_0,label\n1,0\n2,1.5\n").unwrap();
        assert!(matches!(t.class_labels(), Err(DutiError::Parse { line: 3, .. })));
        let t = table("feature_0,label\n1,0\n2,4\n").unwrap();
        assert_eq!(t.implied_classes().unwrap(), 5);
        assert!(matches!(
            t.clone().into_dataset(Task::Classification { classes: 3 }),
            Err(DutiError::Parse { line: 3, .. })
        ));
        assert_eq!(t.into_dataset(Task::Regression).unwrap().task(), Task::Regression);
    }

    #[test]
    fn trusted_confidence_defaults() {
        let t = table("feature_0,label\n1,0\n").unwrap();
        let ts = t.into_trusted(Task::Classification { classes: 2 }).unwrap();
        assert_eq!(ts.confidences()[0], TrustedSet::DEFAULT_CONFIDENCE);
        let t = table("feature_0,label,confidence\n1,0,3.5\n").unwrap();
        assert_eq!(t.into_trusted(Task::Regression).unwrap().confidences()[0], 3.5);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let c = gen_sine_regression(3).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &c.dataset).unwrap();
        let back = read_table(buf.as_slice()).unwrap().into_dataset(Task::Regression).unwrap();
        assert_eq!(back.features(), c.dataset.features());
        assert_eq!(back.labels(), c.dataset.labels());
        let mut buf = Vec::new();
        write_trusted(&mut buf, &c.trusted).unwrap();
        let back = read_table(buf.as_slice()).unwrap().into_trusted(Task::Regression).unwrap();
        assert_eq!(back.features(), c.trusted.features());
        assert_eq!(back.confidences(), c.trusted.confidences());
    }

    #[test]
    fn report_round_trip() {
        let c = gen_harry_potter(1, 40).unwrap();
        let cfg = LearnerConfig::new(1e-2, 0.5).unwrap();
        let report = run_duti(&c.dataset, &c.trusted, &cfg, &DriverConfig::new(4).unwrap()).unwrap();
        assert!(!report.ranking.is_empty());
        let doc = ReportDocument {
            report,
            labels: c.dataset.labels().clone(),
            learner: Some(cfg),
            budget: Some(4),
        };
        let text = doc.to_json().unwrap();
        assert!(text.contains("\"schema\": \"duti/1\""));
        assert_eq!(ReportDocument::parse(&text).unwrap(), doc);
        assert_eq!(document_kind(&text).unwrap(), "report");
        assert!(TruthDocument::parse(&text).is_err());
    }

    #[test]
    fn regression_report_round_trip() {
        let c = gen_sine_regression(0).unwrap();
        let cfg = LearnerConfig::new(1e-3, 0.4).unwrap();
        let report = run_duti(&c.dataset, &c.trusted, &cfg, &DriverConfig::new(5).unwrap()).unwrap();
        let doc = ReportDocument {
            report,
            labels: c.dataset.labels().clone(),
            learner: None,
            budget: None,
        };
        assert_eq!(ReportDocument::parse(&doc.to_json().unwrap()).unwrap(), doc);
    }

    #[test]
    fn truth_round_trip_and_checks() {
        let c = gen_harry_potter(0, 30).unwrap();
        let t = TruthDocument::from_corpus(&c).unwrap();
        let text = t.to_json().unwrap();
        assert_eq!(TruthDocument::parse(&text).unwrap(), t);
        let bad = text.replacen("\"schema\": \"duti/1\"", "\"schema\": \"duti/0\"", 1);
        assert!(matches!(TruthDocument::parse(&bad), Err(DutiError::Schema(_))));
        assert!(matches!(TruthDocument::parse("{"), Err(DutiError::Parse { .. })));
    }

    #[test]
    fn malformed_reports_are_rejected() {
        let base = |flags: &str, delta: &str| {
            format!(
                r#"{{"schema":"duti/1","kind":"report","task":{{"kind":"classification","classes":2}},"n":2,
                "gamma0":1.0,"converged":true,"labels":[0,1],
                "trajectory":[{{"iteration":1,"gamma":0.5,"status":"converged","flags":{flags},"delta":{delta}}}],
                "ranking":[]}}"#
            )
        };
        let ok = base("[0]", r#"{"kind":"classification","rows":[[0,[0.25,0.75]]]}"#);
        assert!(ReportDocument::parse(&ok).is_ok());
        for bad in [
            base("[5]", r#"{"kind":"classification","rows":[]}"#),
            base("[]", r#"{"kind":"classification","rows":[[0,[0.5,0.6]]]}"#),
            base("[]", r#"{"kind":"classification","rows":[[9,[0.5,0.5]]]}"#),
            base("[]", r#"{"kind":"classification","rows":[[0,[1.0]]]}"#),
            base("[]", r#"{"kind":"regression","entries":[]}"#),
        ] {
            assert!(ReportDocument::parse(&bad).is_err(), "{bad}");
        }
    }
}
