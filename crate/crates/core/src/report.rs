//! CSV report writers.
//!
//! All reports are RFC 4180 with LF line endings; floating-point fields carry
//! 9 significant digits.

use std::io::{Read, Write};

use thiserror::Error;

use crate::metrics::{AlignmentReport, SpectrumReport};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Formats like C's `%.9g`: 9 significant digits, trailing zeros dropped,
/// scientific notation outside `1e-4 ≤ |x| < 1e9`.
pub fn format_sig(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_fraction(format!("{x:.decimals$}"))
    } else {
        let m = trim_fraction(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_fraction(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

pub fn write_alignment_csv<W: Write>(w: W, report: &AlignmentReport) -> Result<(), ReportError> {
    let mut out = csv_writer(w);
    out.write_record(["task", "layer", "sar"])?;
    for row in &report.rows {
        out.write_record([row.task.as_str(), row.layer.as_str(), &format_sig(row.sar)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_spectrum_csv<W: Write>(w: W, report: &SpectrumReport) -> Result<(), ReportError> {
    let mut out = csv_writer(w);
    out.write_record(["layer", "index", "sigma"])?;
    for row in &report.rows {
        out.write_record([
            row.layer.as_str(),
            &row.index.to_string(),
            &format_sig(row.sigma),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiRow {
    pub task: String,
    pub acc_merged: f64,
    pub acc_task: f64,
    pub acc_zero: f64,
    /// `None` when the task model does not differ from zero-shot.
    pub nai: Option<f64>,
}

pub fn write_nai_csv<W: Write>(w: W, rows: &[NaiRow]) -> Result<(), ReportError> {
    let mut out = csv_writer(w);
    out.write_record(["task", "acc_merged", "acc_task", "acc_zero", "nai"])?;
    for row in rows {
        out.write_record([
            row.task.clone(),
            format_sig(row.acc_merged),
            format_sig(row.acc_task),
            format_sig(row.acc_zero),
            row.nai.map(format_sig).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    pub metric_x: String,
    pub metric_y: String,
    pub pearson: f64,
}

pub fn write_correlation_csv<W: Write>(w: W, rows: &[CorrelationRow]) -> Result<(), ReportError> {
    let mut out = csv_writer(w);
    out.write_record(["metric_x", "metric_y", "pearson"])?;
    for row in rows {
        out.write_record([row.metric_x.as_str(), row.metric_y.as_str(), &format_sig(row.pearson)])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub method: String,
    pub alpha: f64,
    pub task: String,
    pub acc: f64,
    pub nai: Option<f64>,
    pub sar_avg: f64,
}

pub fn write_benchmark_csv<W: Write>(w: W, rows: &[BenchmarkRow]) -> Result<(), ReportError> {
    let mut out = csv_writer(w);
    out.write_record(["method", "alpha", "task", "acc", "nai", "sar_avg"])?;
    for row in rows {
        out.write_record([
            row.method.clone(),
            format_sig(row.alpha),
            row.task.clone(),
            format_sig(row.acc),
            row.nai.map(format_sig).unwrap_or_default(),
            format_sig(row.sar_avg),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub task: String,
    pub acc_merged: f64,
    pub acc_task: f64,
    pub acc_zero: f64,
}

/// Reads an accuracy table with header `task,acc_merged,acc_task,acc_zero`.
pub fn read_accuracy_csv<R: Read>(r: R) -> Result<Vec<AccuracyRow>, ReportError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| ReportError::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let (ti, mi, ai, zi) = (col("task")?, col("acc_merged")?, col("acc_task")?, col("acc_zero")?);
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = idx + 2;
        let num = |i: usize| -> Result<f64, ReportError> {
            let field = record.get(i).unwrap_or("");
            field.parse::<f64>().map_err(|_| ReportError::Parse {
                line,
                message: format!("`{field}` is not a number"),
            })
        };
        rows.push(AccuracyRow {
            task: record.get(ti).unwrap_or("").to_string(),
            acc_merged: num(mi)?,
            acc_task: num(ai)?,
            acc_zero: num(zi)?,
        });
    }
    Ok(rows)
}
