//! Plain-text file formats: features, models, trials, scores and reports.
//!
//! Every number is written with 17 significant digits, so a write/parse
//! round trip reproduces the `f64` exactly.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::eval::{EerRow, EvalReport, Trial, TrialType};
use crate::gaussmath::{DiagMatrix, VARIANCE_FLOOR};
use crate::jplda::JointPldaModel;
use crate::plda::PldaModel;

pub const FEATURE_TAG: &str = "MVPLDA-FEATURES";
pub const MODEL_TAG: &str = "MVPLDA-MODEL";
pub const REPORT_TAG: &str = "MVPLDA-REPORT";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("line {line}: expected {expected} fields, found {found}")]
    RowArity { line: usize, expected: usize, found: usize },
    #[error("line {line}: non-finite or unparsable value {value:?}")]
    NonFiniteValue { line: usize, value: String },
    #[error("line {line}: {message}")]
    BadField { line: usize, message: String },
    #[error("file contains no rows")]
    EmptyDataset,
    #[error("missing section {0}")]
    MissingSection(&'static str),
    #[error("section {section}: {message}")]
    DimMismatch { section: &'static str, message: String },
    #[error("section {section}: {message}")]
    BadSection { section: &'static str, message: String },
    #[error(transparent)]
    Model(#[from] crate::error::Error),
}

pub type FormatResult<T> = std::result::Result<T, FormatError>;

fn fmt_num(out: &mut String, x: f64) {
    write!(out, "{x:.16e}").expect("write to String");
}

fn parse_num(tok: &str, line: usize) -> FormatResult<f64> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(FormatError::NonFiniteValue {
            line,
            value: tok.to_string(),
        }),
    }
}

fn parse_uint<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> FormatResult<T> {
    tok.parse::<T>().map_err(|_| FormatError::BadField {
        line,
        message: format!("{what} must be a non-negative integer, found {tok:?}"),
    })
}

/// Non-blank lines with 1-based line numbers; `#` starts a comment line.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn check_header<'a>(line: Option<(usize, &'a str)>, tag: &str) -> FormatResult<Vec<&'a str>> {
    let (_, line) = line.ok_or_else(|| FormatError::MalformedHeader("empty file".into()))?;
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.first() != Some(&tag) {
        return Err(FormatError::MalformedHeader(format!(
            "expected tag {tag}, found {line:?}"
        )));
    }
    match toks.get(1).map(|v| v.parse::<u32>()) {
        Some(Ok(VERSION)) => Ok(toks),
        _ => Err(FormatError::MalformedHeader(format!("unsupported version in {line:?}"))),
    }
}

// ---------------------------------------------------------------- features

/// `MVPLDA-FEATURES 1 <d>` then one row per vector: `label_a label_b x_1 .. x_d`.
/// Labels are written as their original ids.
pub fn write_features(data: &Dataset) -> String {
    let mut out = format!("{FEATURE_TAG} {VERSION} {}\n", data.dim());
    for v in data.vectors() {
        write!(out, "{} {}", data.ids_a()[v.label_a], data.ids_b()[v.label_b]).unwrap();
        for x in v.features.iter() {
            out.push(' ');
            fmt_num(&mut out, *x);
        }
        out.push('\n');
    }
    out
}

/// Labels are re-indexed densely in ascending id order; the ids are kept.
pub fn parse_features(text: &str) -> FormatResult<Dataset> {
    let mut lines = content_lines(text);
    let header = check_header(lines.next(), FEATURE_TAG)?;
    if header.len() != 3 {
        return Err(FormatError::MalformedHeader(format!(
            "expected `{FEATURE_TAG} {VERSION} <d>`"
        )));
    }
    let dim: usize = header[2]
        .parse()
        .ok()
        .filter(|&d| d > 0)
        .ok_or_else(|| FormatError::MalformedHeader(format!("bad dimension {:?}", header[2])))?;
    let mut rows = Vec::new();
    for (line, l) in lines {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != dim + 2 {
            return Err(FormatError::RowArity {
                line,
                expected: dim + 2,
                found: toks.len(),
            });
        }
        let a: u64 = parse_uint(toks[0], line, "label_a")?;
        let b: u64 = parse_uint(toks[1], line, "label_b")?;
        let x = toks[2..]
            .iter()
            .map(|t| parse_num(t, line))
            .collect::<FormatResult<Vec<f64>>>()?;
        rows.push((a, b, DVector::from_vec(x)));
    }
    if rows.is_empty() {
        return Err(FormatError::EmptyDataset);
    }
    Ok(Dataset::from_raw(dim, rows)?)
}

/// Feature vectors only, in file order.
pub fn feature_rows(data: &Dataset) -> Vec<DVector<f64>> {
    data.vectors().iter().map(|v| v.features.clone()).collect()
}

// ------------------------------------------------------------------ models

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Plda(PldaModel),
    Joint(JointPldaModel),
}

impl AnyModel {
    pub fn dim(&self) -> usize {
        match self {
            AnyModel::Plda(m) => m.dim(),
            AnyModel::Joint(m) => m.dim(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::Plda(_) => "plda",
            AnyModel::Joint(_) => "jplda",
        }
    }
}

fn write_section(out: &mut String, name: &str, m: &DMatrix<f64>) {
    writeln!(out, "{name} {} {}", m.nrows(), m.ncols()).unwrap();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                out.push(' ');
            }
            fmt_num(out, m[(r, c)]);
        }
        out.push('\n');
    }
}

fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Header `MVPLDA-MODEL 1 <plda|jplda> <d>`, then sections `MU`, `B` (or `S`, `T`)
/// and `SIGMA`, each introduced by `<NAME> <rows> <cols>`, then `END`.
pub fn write_model(model: &AnyModel) -> String {
    let mut out = format!("{MODEL_TAG} {VERSION} {} {}\n", model.kind(), model.dim());
    match model {
        AnyModel::Plda(m) => {
            write_section(&mut out, "MU", &column(m.mu()));
            write_section(&mut out, "B", m.b());
            write_section(&mut out, "SIGMA", &column(m.sigma().diagonal()));
        }
        AnyModel::Joint(m) => {
            write_section(&mut out, "MU", &column(m.mu()));
            write_section(&mut out, "S", m.s());
            write_section(&mut out, "T", m.t());
            write_section(&mut out, "SIGMA", &column(m.sigma().diagonal()));
        }
    }
    out.push_str("END\n");
    out
}

struct SectionReader<'a, I: Iterator<Item = (usize, &'a str)>> {
    lines: std::iter::Peekable<I>,
    dim: usize,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> SectionReader<'a, I> {
    /// Reads section `name`; `cols == None` accepts any column count.
    fn read(&mut self, name: &'static str, cols: Option<usize>) -> FormatResult<DMatrix<f64>> {
        let (line, l) = self.lines.next().ok_or(FormatError::MissingSection(name))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.first() != Some(&name) {
            return Err(FormatError::MissingSection(name));
        }
        if toks.len() != 3 {
            return Err(FormatError::RowArity {
                line,
                expected: 3,
                found: toks.len(),
            });
        }
        let rows: usize = parse_uint(toks[1], line, "row count")?;
        let ncols: usize = parse_uint(toks[2], line, "column count")?;
        if rows != self.dim {
            return Err(FormatError::DimMismatch {
                section: name,
                message: format!("expected {} rows, header says {rows}", self.dim),
            });
        }
        if let Some(c) = cols {
            if c != ncols {
                return Err(FormatError::DimMismatch {
                    section: name,
                    message: format!("expected {c} columns, header says {ncols}"),
                });
            }
        }
        let mut m = DMatrix::zeros(rows, ncols);
        for r in 0..rows {
            let (line, l) = self.lines.next().ok_or(FormatError::MissingSection(name))?;
            let toks: Vec<&str> = l.split_whitespace().collect();
            // A zero-column section has empty rows, which the line filter drops.
            if ncols == 0 {
                return Err(FormatError::DimMismatch {
                    section: name,
                    message: format!("line {line}: zero-column sections have no rows"),
                });
            }
            if toks.len() != ncols {
                return Err(FormatError::RowArity {
                    line,
                    expected: ncols,
                    found: toks.len(),
                });
            }
            for (c, t) in toks.iter().enumerate() {
                m[(r, c)] = parse_num(t, line)?;
            }
        }
        Ok(m)
    }

    /// Like `read`, but a zero-column section has a header and no rows.
    fn factor(&mut self, name: &'static str) -> FormatResult<DMatrix<f64>> {
        if let Some(&(line, l)) = self.lines.peek() {
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() == 3 && toks[0] == name && toks[2] == "0" {
                self.lines.next();
                let rows: usize = parse_uint(toks[1], line, "row count")?;
                if rows != self.dim {
                    return Err(FormatError::DimMismatch {
                        section: name,
                        message: format!("expected {} rows, header says {rows}", self.dim),
                    });
                }
                return Ok(DMatrix::zeros(rows, 0));
            }
        }
        self.read(name, None)
    }
}

/// Stored variances must already respect the floor.
fn variances(sigma: &DMatrix<f64>) -> FormatResult<DiagMatrix> {
    if let Some(v) = sigma.iter().find(|v| **v < VARIANCE_FLOOR) {
        return Err(FormatError::BadSection {
            section: "SIGMA",
            message: format!("variance {v} is below the floor {VARIANCE_FLOOR}"),
        });
    }
    Ok(DiagMatrix::new(sigma.column(0).into())?)
}

pub fn parse_model(text: &str) -> FormatResult<AnyModel> {
    let mut lines = content_lines(text);
    let header = check_header(lines.next(), MODEL_TAG)?;
    if header.len() != 4 {
        return Err(FormatError::MalformedHeader(format!(
            "expected `{MODEL_TAG} {VERSION} <kind> <d>`"
        )));
    }
    let kind = header[2];
    let dim: usize = header[3]
        .parse()
        .ok()
        .filter(|&d| d > 0)
        .ok_or_else(|| FormatError::MalformedHeader(format!("bad dimension {:?}", header[3])))?;
    let mut reader = SectionReader {
        lines: lines.peekable(),
        dim,
    };
    let model = match kind {
        "plda" => {
            let mu = reader.read("MU", Some(1))?;
            let b = reader.factor("B")?;
            let sigma = reader.read("SIGMA", Some(1))?;
            AnyModel::Plda(PldaModel::new(mu.column(0).into(), b, variances(&sigma)?)?)
        }
        "jplda" => {
            let mu = reader.read("MU", Some(1))?;
            let s = reader.factor("S")?;
            let t = reader.factor("T")?;
            let sigma = reader.read("SIGMA", Some(1))?;
            AnyModel::Joint(JointPldaModel::new(mu.column(0).into(), s, t, variances(&sigma)?)?)
        }
        other => return Err(FormatError::MalformedHeader(format!("unknown model kind {other:?}"))),
    };
    match reader.lines.next() {
        Some((_, "END")) => Ok(model),
        _ => Err(FormatError::MissingSection("END")),
    }
}

// ------------------------------------------------------------------ trials

/// One trial per line: `<enroll rows, comma separated> <test row> <TGT|IW|TW|IC>`.
pub fn write_trials(trials: &[Trial]) -> String {
    let mut out = String::new();
    for t in trials {
        let enroll: Vec<String> = t.enroll.iter().map(|r| r.to_string()).collect();
        writeln!(out, "{} {} {}", enroll.join(","), t.test, t.kind).unwrap();
    }
    out
}

/// `rows` is the number of feature rows; every index must be below it.
pub fn parse_trials(text: &str, rows: usize) -> FormatResult<Vec<Trial>> {
    let mut trials = Vec::new();
    for (line, l) in content_lines(text) {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(FormatError::RowArity {
                line,
                expected: 3,
                found: toks.len(),
            });
        }
        let in_range = |r: usize| {
            if r < rows {
                Ok(r)
            } else {
                Err(FormatError::BadField {
                    line,
                    message: format!("row index {r} out of range ({rows} feature rows)"),
                })
            }
        };
        let enroll = toks[0]
            .split(',')
            .map(|t| parse_uint::<usize>(t, line, "enroll index").and_then(in_range))
            .collect::<FormatResult<Vec<_>>>()?;
        let test = in_range(parse_uint(toks[1], line, "test index")?)?;
        let kind: TrialType = toks[2]
            .parse()
            .map_err(|message| FormatError::BadField { line, message })?;
        trials.push(Trial { enroll, test, kind });
    }
    Ok(trials)
}

// ------------------------------------------------------------------ scores

/// One line per trial: `<score> <type>`.
pub fn write_scores(scores: &[f64], kinds: &[TrialType]) -> String {
    let mut out = String::new();
    for (s, k) in scores.iter().zip(kinds) {
        fmt_num(&mut out, *s);
        writeln!(out, " {k}").unwrap();
    }
    out
}

pub fn parse_scores(text: &str) -> FormatResult<(Vec<f64>, Vec<TrialType>)> {
    let mut scores = Vec::new();
    let mut kinds = Vec::new();
    for (line, l) in content_lines(text) {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(FormatError::RowArity {
                line,
                expected: 2,
                found: toks.len(),
            });
        }
        scores.push(parse_num(toks[0], line)?);
        kinds.push(
            toks[1]
                .parse()
                .map_err(|message| FormatError::BadField { line, message })?,
        );
    }
    Ok((scores, kinds))
}

// ------------------------------------------------------------------ report

/// ```text
/// MVPLDA-REPORT 1
/// TGT <count>
/// IW <count> <eer> <threshold>
/// IC ...
/// TW ...
/// Total <count> <eer> <threshold>
/// ```
/// EER values are fractions, not percentages.
pub fn write_report(report: &EvalReport) -> String {
    let mut out = format!("{REPORT_TAG} {VERSION}\n");
    writeln!(out, "TGT {}", report.target_count).unwrap();
    for row in &report.rows {
        write!(out, "{} {} ", row.label, row.nontarget_count).unwrap();
        fmt_num(&mut out, row.eer);
        out.push(' ');
        fmt_num(&mut out, row.threshold);
        out.push('\n');
    }
    out
}

/// Parsed report rows; scores are not stored in a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub target_count: usize,
    pub rows: Vec<EerRow>,
}

impl From<&EvalReport> for ReportSummary {
    fn from(r: &EvalReport) -> Self {
        ReportSummary {
            target_count: r.target_count,
            rows: r.rows.clone(),
        }
    }
}

pub fn parse_report(text: &str) -> FormatResult<ReportSummary> {
    let mut lines = content_lines(text);
    let header = check_header(lines.next(), REPORT_TAG)?;
    if header.len() != 2 {
        return Err(FormatError::MalformedHeader(format!(
            "expected `{REPORT_TAG} {VERSION}`"
        )));
    }
    let (line, l) = lines.next().ok_or(FormatError::MissingSection("TGT"))?;
    let toks: Vec<&str> = l.split_whitespace().collect();
    if toks.len() != 2 || toks[0] != "TGT" {
        return Err(FormatError::MissingSection("TGT"));
    }
    let target_count = parse_uint(toks[1], line, "target count")?;
    let mut rows = Vec::new();
    for (line, l) in lines {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(FormatError::RowArity {
                line,
                expected: 4,
                found: toks.len(),
            });
        }
        if !matches!(toks[0], "IW" | "IC" | "TW" | "Total") {
            return Err(FormatError::BadField {
                line,
                message: format!("unknown report row {:?}", toks[0]),
            });
        }
        let eer = parse_num(toks[2], line)?;
        if !(0.0..=1.0).contains(&eer) {
            return Err(FormatError::BadField {
                line,
                message: format!("EER {eer} outside [0, 1]"),
            });
        }
        rows.push(EerRow {
            label: toks[0].to_string(),
            nontarget_count: parse_uint(toks[1], line, "nontarget count")?,
            eer,
            threshold: parse_num(toks[3], line)?,
        });
    }
    if rows.last().map(|r| r.label.as_str()) != Some("Total") {
        return Err(FormatError::MissingSection("Total"));
    }
    Ok(ReportSummary { target_count, rows })
}
