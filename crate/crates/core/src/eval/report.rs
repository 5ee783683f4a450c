//! CSV form of metric curves and sweep tables.
//!
//! ```text
//! # metric=compactness
//! # seed=7
//! k,value
//! 1,0.42
//! 2,0.61
//! ```
//!
//! `#` lines carry `key=value` metadata, the first other line is the column
//! header, every following line is one point. Numbers use the shortest
//! representation that parses back to the same `f64`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::EvalError;

/// One metric curve.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: String,
    pub x_label: String,
    pub y_label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Dataset id, seed, parameters. `metric` is stored separately.
    pub metadata: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn new(metric: &str, x_label: &str, y_label: &str) -> Self {
        MetricReport {
            metric: metric.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            x: Vec::new(),
            y: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn push(&mut self, x: f64, y: f64) {
        self.x.push(x);
        self.y.push(y);
    }

    /// `x` strictly increasing and every `y` finite.
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.x.len() != self.y.len() {
            return Err(EvalError::InvalidReport("x and y differ in length".into()));
        }
        if self.x.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(EvalError::InvalidReport("x must be strictly increasing".into()));
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::InvalidReport("non-finite value".into()));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# metric={}", self.metric);
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "{},{}", self.x_label, self.y_label);
        for (x, y) in self.x.iter().zip(&self.y) {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let (meta, body) = split_metadata(text)?;
        let mut metadata = meta;
        let metric = metadata
            .remove("metric")
            .ok_or_else(|| EvalError::Parse("missing metric line".into()))?;
        let mut lines = body.into_iter();
        let (_, header) = lines.next().ok_or_else(|| EvalError::Parse("missing header".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() != 2 {
            return Err(EvalError::Parse(format!("header needs 2 columns: {header}")));
        }
        let mut report = MetricReport::new(&metric, cols[0], cols[1]);
        report.metadata = metadata;
        for (line_no, line) in lines {
            let cells = parse_numbers(line, 2, line_no)?;
            report.push(cells[0], cells[1]);
        }
        Ok(report)
    }
}

/// One cell of a hyperparameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    /// Mean over targets of the final fitting error, mm.
    pub mean_error: f64,
    pub deformed_fraction: f64,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub metadata: BTreeMap<String, String>,
}

const SWEEP_HEADER: &str = "k,lambda1,lambda2,seed,mean_error,deformed_fraction,sparsity";

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# metric=sweep\n");
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str(SWEEP_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.k, r.lambda1, r.lambda2, r.seed, r.mean_error, r.deformed_fraction, r.sparsity
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let (mut metadata, body) = split_metadata(text)?;
        metadata.remove("metric");
        let mut lines = body.into_iter();
        match lines.next() {
            Some((_, h)) if h == SWEEP_HEADER => {}
            other => return Err(EvalError::Parse(format!("unexpected sweep header {other:?}"))),
        }
        let mut rows = Vec::new();
        for (line_no, line) in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 7 {
                return Err(EvalError::Parse(format!("line {line_no}: expected 7 columns")));
            }
            let int = |s: &str| {
                s.parse::<u64>()
                    .map_err(|e| EvalError::Parse(format!("line {line_no}: {e}")))
            };
            let f = parse_numbers(&cells[1..3].join(","), 2, line_no)?;
            let g = parse_numbers(&cells[4..].join(","), 3, line_no)?;
            rows.push(SweepRow {
                k: int(cells[0])? as usize,
                lambda1: f[0],
                lambda2: f[1],
                seed: int(cells[3])?,
                mean_error: g[0],
                deformed_fraction: g[1],
                sparsity: g[2],
            });
        }
        Ok(SweepTable { rows, metadata })
    }
}

type Split<'a> = (BTreeMap<String, String>, Vec<(usize, &'a str)>);

fn split_metadata(text: &str) -> Result<Split<'_>, EvalError> {
    let mut meta = BTreeMap::new();
    let mut body = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix('#') {
            let (k, v) = rest
                .trim_start()
                .split_once('=')
                .ok_or_else(|| EvalError::Parse(format!("line {}: metadata needs key=value", i + 1)))?;
            meta.insert(k.to_string(), v.to_string());
        } else if !line.is_empty() {
            body.push((i + 1, line));
        }
    }
    Ok((meta, body))
}

fn parse_numbers(line: &str, n: usize, line_no: usize) -> Result<Vec<f64>, EvalError> {
    let cells: Vec<&str> = line.split(',').collect();
    if cells.len() != n {
        return Err(EvalError::Parse(format!("line {line_no}: expected {n} columns")));
    }
    cells
        .iter()
        .map(|c| {
            c.parse::<f64>()
                .map_err(|e| EvalError::Parse(format!("line {line_no}: {e}")))
        })
        .collect()
}
