//! CSV fallback for bundles.
//!
//! * `predictions.csv`: `model,sample,class_0,..,class_{K-1}`, one row per cell
//! * `labels.csv`: `sample,label`
//! * `truth.csv` (optional): `sample,class_0,..,class_{K-1}`
//! * `logits.csv` (optional): same layout as `predictions.csv`
//!
//! Rows may come in any order; every cell must appear exactly once.

use std::path::Path;

use crate::bundle::PredictionBundle;
use crate::error::{Error, Result};

pub const PREDICTIONS_CSV: &str = "predictions.csv";
pub const LABELS_CSV: &str = "labels.csv";
pub const TRUTH_CSV: &str = "truth.csv";
pub const LOGITS_CSV: &str = "logits.csv";

struct Table {
    header: Vec<String>,
    /// `(1-based line, fields)`
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = ::csv::ReaderBuilder::new()
        .trim(::csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(Table { header, rows })
}

fn csv_error(path: &Path, e: ::csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        ::csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Parse {
            line,
            msg: format!("{}: {kind:?}", path.display()),
        },
    }
}

fn field<T: std::str::FromStr>(line: usize, fields: &[String], i: usize, name: &str) -> Result<T> {
    fields[i].parse().map_err(|_| Error::Parse {
        line,
        msg: format!("column {name}: cannot parse {:?}", fields[i]),
    })
}

fn class_columns(t: &Table, lead: &[&str], file: &str) -> Result<usize> {
    let ok_lead = t.header.len() > lead.len() && t.header.iter().zip(lead).all(|(h, l)| h == l);
    let ok_classes = t.header[lead.len().min(t.header.len())..]
        .iter()
        .enumerate()
        .all(|(i, h)| *h == format!("class_{i}"));
    if !ok_lead || !ok_classes {
        return Err(Error::Parse {
            line: 1,
            msg: format!("{file}: expected header {},class_0,..", lead.join(",")),
        });
    }
    Ok(t.header.len() - lead.len())
}

/// `[model][sample][class]` tensor from a cell table.
fn cell_tensor(t: &Table, num_samples: usize, k: usize, file: &str) -> Result<(usize, Vec<f64>)> {
    let num_models = t
        .rows
        .iter()
        .map(|(line, f)| field::<usize>(*line, f, 0, "model"))
        .try_fold(0, |acc, m| m.map(|m| acc.max(m + 1)))?;
    let cells = num_models * num_samples;
    let mut out = vec![f64::NAN; cells * k];
    let mut seen = vec![false; cells];
    for (line, f) in &t.rows {
        if f.len() != k + 2 {
            return Err(Error::Parse {
                line: *line,
                msg: format!("{file}: expected {} fields, found {}", k + 2, f.len()),
            });
        }
        let model: usize = field(*line, f, 0, "model")?;
        let sample: usize = field(*line, f, 1, "sample")?;
        if sample >= num_samples {
            return Err(Error::Parse {
                line: *line,
                msg: format!("{file}: sample {sample} has no label"),
            });
        }
        let cell = model * num_samples + sample;
        if std::mem::replace(&mut seen[cell], true) {
            return Err(Error::Parse {
                line: *line,
                msg: format!("{file}: duplicate cell (model {model}, sample {sample})"),
            });
        }
        for c in 0..k {
            out[cell * k + c] = field(*line, f, c + 2, &format!("class_{c}"))?;
        }
    }
    let found = seen.iter().filter(|&&s| s).count();
    if found != cells {
        return Err(Error::SizeMismatch {
            what: format!("{file} rows"),
            expected: cells,
            found,
        });
    }
    Ok((num_models, out))
}

fn read_labels(path: &Path) -> Result<Vec<i64>> {
    let t = read_table(path)?;
    if t.header != ["sample", "label"] {
        return Err(Error::Parse {
            line: 1,
            msg: format!("{LABELS_CSV}: expected header sample,label"),
        });
    }
    let n = t.rows.len();
    let mut labels = vec![None; n];
    for (line, f) in &t.rows {
        let sample: usize = field(*line, f, 0, "sample")?;
        let label: i64 = field(*line, f, 1, "label")?;
        if sample >= n || labels[sample].replace(label).is_some() {
            return Err(Error::Parse {
                line: *line,
                msg: format!("{LABELS_CSV}: samples must be 0..{n} without repeats"),
            });
        }
    }
    Ok(labels.into_iter().map(|l| l.expect("every slot filled")).collect())
}

/// Read a bundle from the CSV fallback files in `dir`.
pub fn read_csv_bundle(dir: &Path) -> Result<PredictionBundle> {
    let labels = read_labels(&dir.join(LABELS_CSV))?;
    let n = labels.len();
    let preds = read_table(&dir.join(PREDICTIONS_CSV))?;
    let k = class_columns(&preds, &["model", "sample"], PREDICTIONS_CSV)?;
    if let Some((sample, &label)) = labels.iter().enumerate().find(|(_, &l)| l < 0 || l >= k as i64) {
        return Err(Error::LabelOutOfRange {
            sample,
            label,
            num_classes: k,
        });
    }
    let (t_count, values) = cell_tensor(&preds, n, k, PREDICTIONS_CSV)?;
    let labels = labels.into_iter().map(|l| l as u32).collect();
    let mut b = PredictionBundle::new(t_count, n, k, values, labels)?;
    let truth_path = dir.join(TRUTH_CSV);
    if truth_path.is_file() {
        let t = read_table(&truth_path)?;
        if class_columns(&t, &["sample"], TRUTH_CSV)? != k {
            return Err(Error::SizeMismatch {
                what: format!("{TRUTH_CSV} classes"),
                expected: k,
                found: t.header.len() - 1,
            });
        }
        let mut truth = vec![f64::NAN; n * k];
        let mut seen = vec![false; n];
        for (line, f) in &t.rows {
            let s: usize = field(*line, f, 0, "sample")?;
            if s >= n || std::mem::replace(&mut seen[s], true) || f.len() != k + 1 {
                return Err(Error::Parse {
                    line: *line,
                    msg: format!("{TRUTH_CSV}: bad or repeated row"),
                });
            }
            for c in 0..k {
                truth[s * k + c] = field(*line, f, c + 1, &format!("class_{c}"))?;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::SizeMismatch {
                what: format!("{TRUTH_CSV} rows"),
                expected: n,
                found: seen.iter().filter(|&&s| s).count(),
            });
        }
        b = b.with_truth(truth)?;
    }
    let logits_path = dir.join(LOGITS_CSV);
    if logits_path.is_file() {
        let t = read_table(&logits_path)?;
        class_columns(&t, &["model", "sample"], LOGITS_CSV)?;
        let (_, values) = cell_tensor(&t, n, k, LOGITS_CSV)?;
        b = b.with_logits(values)?;
    }
    Ok(b)
}

fn writer(path: &Path) -> Result<::csv::Writer<std::fs::File>> {
    ::csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn class_header(lead: &[&str], k: usize) -> Vec<String> {
    lead.iter()
        .map(|s| s.to_string())
        .chain((0..k).map(|c| format!("class_{c}")))
        .collect()
}

fn write_cells(path: &Path, values: &[f64], t_count: usize, n: usize, k: usize) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(class_header(&["model", "sample"], k)).map_err(|e| csv_error(path, e))?;
    for t in 0..t_count {
        for s in 0..n {
            let row = &values[(t * n + s) * k..(t * n + s + 1) * k];
            let rec = [t.to_string(), s.to_string()]
                .into_iter()
                .chain(row.iter().map(|v| v.to_string()));
            w.write_record(rec).map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write the CSV fallback representation of a bundle.
pub fn write_csv_bundle(bundle: &PredictionBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (t_count, n, k) = (bundle.num_models(), bundle.num_samples(), bundle.num_classes());
    write_cells(&dir.join(PREDICTIONS_CSV), bundle.predictions(), t_count, n, k)?;
    let lpath = dir.join(LABELS_CSV);
    let mut w = writer(&lpath)?;
    w.write_record(["sample", "label"]).map_err(|e| csv_error(&lpath, e))?;
    for (s, l) in bundle.labels().iter().enumerate() {
        w.write_record([s.to_string(), l.to_string()]).map_err(|e| csv_error(&lpath, e))?;
    }
    w.flush().map_err(|e| Error::io(&lpath, e))?;
    if let Some(truth) = bundle.true_conditional() {
        let tpath = dir.join(TRUTH_CSV);
        let mut w = writer(&tpath)?;
        w.write_record(class_header(&["sample"], k)).map_err(|e| csv_error(&tpath, e))?;
        for s in 0..n {
            let rec = std::iter::once(s.to_string()).chain(truth[s * k..(s + 1) * k].iter().map(|v| v.to_string()));
            w.write_record(rec).map_err(|e| csv_error(&tpath, e))?;
        }
        w.flush().map_err(|e| Error::io(&tpath, e))?;
    }
    if let Some(logits) = bundle.logits() {
        write_cells(&dir.join(LOGITS_CSV), logits, t_count, n, k)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PredictionBundle {
        PredictionBundle::new(2, 2, 3, vec![0.1, 0.2, 0.7, 0.5, 0.5, 0.0, 1.0, 0.0, 0.0, 0.3, 0.3, 0.4], vec![2, 0])
            .unwrap()
            .with_truth(vec![0.2, 0.2, 0.6, 0.6, 0.3, 0.1])
            .unwrap()
    }

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        write_csv_bundle(&sample(), dir.path()).unwrap();
        assert_eq!(crate::io::read_bundle(dir.path()).unwrap(), sample());
    }

    #[test]
    fn shuffled_rows_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(LABELS_CSV), "sample,label\n1,0\n0,1\n").unwrap();
        std::fs::write(
            dir.path().join(PREDICTIONS_CSV),
            "model,sample,class_0,class_1\n1,1,0.5,0.5\n0,0,0.2,0.8\n1,0,1,0\n0,1,0.3,0.7\n",
        )
        .unwrap();
        let b = read_csv_bundle(dir.path()).unwrap();
        assert_eq!(b.row(1, 0), &[1.0, 0.0]);
        assert_eq!(b.labels(), &[1, 0]);

        std::fs::write(dir.path().join(LABELS_CSV), "sample,label\n0,1\n1,-1\n").unwrap();
        assert!(matches!(
            read_csv_bundle(dir.path()),
            Err(Error::LabelOutOfRange { sample: 1, label: -1, .. })
        ));

        std::fs::write(dir.path().join(LABELS_CSV), "sample,label\n0,1\n1,0\n2,0\n").unwrap();
        assert!(matches!(read_csv_bundle(dir.path()), Err(Error::SizeMismatch { .. })));

        std::fs::write(dir.path().join(LABELS_CSV), "sample,label\n0,x\n").unwrap();
        assert!(matches!(read_csv_bundle(dir.path()), Err(Error::Parse { line: 2, .. })));
    }
}
