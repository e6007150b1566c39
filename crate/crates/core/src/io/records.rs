//! Per-sample decomposition records as JSON lines or CSV.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::SampleDecomposition;
use crate::error::{Error, Result};

/// Column order of the CSV form.
pub const COLUMNS: [&str; 13] = [
    "index",
    "label",
    "pred",
    "conf",
    "correct",
    "bias",
    "bias_sq",
    "variance",
    "bvg",
    "risk",
    "uncertainty",
    "kl_bias",
    "kl_variance",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRecord {
    pub index: usize,
    pub label: usize,
    pub pred: usize,
    pub conf: f64,
    pub correct: bool,
    pub bias: f64,
    pub bias_sq: f64,
    pub variance: f64,
    pub bvg: f64,
    pub risk: f64,
    pub uncertainty: f64,
    #[serde(default)]
    pub kl_bias: Option<f64>,
    #[serde(default)]
    pub kl_variance: Option<f64>,
}

impl From<&SampleDecomposition> for DecompositionRecord {
    fn from(d: &SampleDecomposition) -> Self {
        Self {
            index: d.index,
            label: d.label,
            pred: d.prediction,
            conf: d.confidence,
            correct: d.correct,
            bias: d.bias,
            bias_sq: d.bias_sq,
            variance: d.variance,
            bvg: d.bvg,
            risk: d.risk,
            uncertainty: d.uncertainty,
            kl_bias: d.kl_bias,
            kl_variance: d.kl_variance,
        }
    }
}

impl From<DecompositionRecord> for SampleDecomposition {
    /// Entry-level vectors are not part of the record and come back empty.
    fn from(r: DecompositionRecord) -> Self {
        Self {
            index: r.index,
            label: r.label,
            prediction: r.pred,
            confidence: r.conf,
            correct: r.correct,
            bias: r.bias,
            bias_sq: r.bias_sq,
            entry_bias: Vec::new(),
            variance: r.variance,
            entry_variance: Vec::new(),
            bvg: r.bvg,
            risk: r.risk,
            uncertainty: r.uncertainty,
            kl_bias: r.kl_bias,
            kl_variance: r.kl_variance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    JsonLines,
    Csv,
}

impl RecordFormat {
    /// CSV for a `.csv` extension, JSON lines otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => RecordFormat::Csv,
            _ => RecordFormat::JsonLines,
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_records<W: Write>(mut w: W, decomps: &[SampleDecomposition], format: RecordFormat) -> Result<()> {
    let io = |e| Error::io("<records>", e);
    match format {
        RecordFormat::JsonLines => {
            for d in decomps {
                serde_json::to_writer(&mut w, &DecompositionRecord::from(d))?;
                w.write_all(b"\n").map_err(io)?;
            }
        }
        RecordFormat::Csv => {
            let mut cw = ::csv::Writer::from_writer(&mut w);
            let err = |e: ::csv::Error| Error::Parse { line: 0, msg: e.to_string() };
            cw.write_record(COLUMNS).map_err(err)?;
            for d in decomps {
                let r = DecompositionRecord::from(d);
                cw.write_record([
                    r.index.to_string(),
                    r.label.to_string(),
                    r.pred.to_string(),
                    r.conf.to_string(),
                    r.correct.to_string(),
                    r.bias.to_string(),
                    r.bias_sq.to_string(),
                    r.variance.to_string(),
                    r.bvg.to_string(),
                    r.risk.to_string(),
                    r.uncertainty.to_string(),
                    opt(r.kl_bias),
                    opt(r.kl_variance),
                ])
                .map_err(err)?;
            }
            cw.flush().map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn write_records_file(path: &Path, decomps: &[SampleDecomposition]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(std::io::BufWriter::new(f), decomps, RecordFormat::from_path(path))
}

pub fn read_records<R: BufRead>(r: R, format: RecordFormat) -> Result<Vec<SampleDecomposition>> {
    match format {
        RecordFormat::JsonLines => {
            let mut out = Vec::new();
            for (i, line) in r.lines().enumerate() {
                let line = line.map_err(|e| Error::io("<records>", e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: DecompositionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
                out.push(rec.into());
            }
            Ok(out)
        }
        RecordFormat::Csv => {
            let mut rdr = ::csv::ReaderBuilder::new().trim(::csv::Trim::All).from_reader(r);
            let mut out = Vec::new();
            for rec in rdr.deserialize::<DecompositionRecord>() {
                let rec = rec.map_err(|e| Error::Parse {
                    line: e.position().map_or(0, |p| p.line() as usize),
                    msg: e.to_string(),
                })?;
                out.push(rec.into());
            }
            Ok(out)
        }
    }
}

pub fn read_records_file(path: &Path) -> Result<Vec<SampleDecomposition>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(BufReader::new(f), RecordFormat::from_path(path))
}
