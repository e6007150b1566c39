//! On-disk prediction bundles and report records.
//!
//! A bundle directory holds `manifest.json` plus little-endian binary arrays
//! (`[model][sample][class]` predictions and logits, `[sample][class]` truth,
//! `u32` labels). Directories without a manifest are read from the CSV
//! fallback when `predictions.csv` is present.

pub mod csv;
pub mod records;
pub mod svg;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bundle::{PredictionBundle, SIMPLEX_TOL};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
pub const LAYOUT: &str = "model-major";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: u32,
    pub num_models: usize,
    pub num_samples: usize,
    pub num_classes: usize,
    pub dtype: Dtype,
    pub layout: String,
    pub predictions_file: String,
    pub labels_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits_file: Option<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

/// `dir/rel` after rejecting absolute paths and parent traversal.
fn resolve(dir: &Path, rel: &str) -> Result<PathBuf> {
    let p = Path::new(rel);
    let clean = !rel.is_empty()
        && p.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
    if !clean {
        return Err(Error::InvalidManifest(format!("file path {rel:?} must stay inside the bundle")));
    }
    Ok(dir.join(p))
}

fn read_floats(path: &Path, dtype: Dtype, count: usize, what: &str) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = count * dtype.size();
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            what: format!("{what} bytes"),
            expected,
            found: bytes.len(),
        });
    }
    Ok(match dtype {
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect(),
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("chunk of 4")) as f64)
            .collect(),
    })
}

fn read_labels(path: &Path, count: usize) -> Result<Vec<u32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != count * 4 {
        return Err(Error::SizeMismatch {
            what: "labels_file bytes".into(),
            expected: count * 4,
            found: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("chunk of 4")))
        .collect())
}

/// f32 storage cannot meet the truth tolerance, so rows already within the
/// prediction tolerance are rescaled onto the simplex.
fn renormalise_rows(values: &mut [f64], k: usize) {
    for row in values.chunks_mut(k) {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() <= SIMPLEX_TOL {
            row.iter_mut().for_each(|v| *v /= sum);
        }
    }
}

fn metadata_text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Read and validate a manifest-described bundle.
pub fn read_manifest_bundle(dir: &Path) -> Result<PredictionBundle> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m: BundleManifest = serde_json::from_str(&text)?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::InvalidManifest(format!("unsupported version {}", m.version)));
    }
    if m.layout != LAYOUT {
        return Err(Error::InvalidManifest(format!("unsupported layout {:?}", m.layout)));
    }
    let cells = m.num_models * m.num_samples * m.num_classes;
    let preds = read_floats(&resolve(dir, &m.predictions_file)?, m.dtype, cells, "predictions_file")?;
    let labels = read_labels(&resolve(dir, &m.labels_file)?, m.num_samples)?;
    let mut b = PredictionBundle::new(m.num_models, m.num_samples, m.num_classes, preds, labels)?;
    if let Some(f) = &m.truth_file {
        let mut truth = read_floats(&resolve(dir, f)?, m.dtype, m.num_samples * m.num_classes, "truth_file")?;
        if m.dtype == Dtype::F32 {
            renormalise_rows(&mut truth, m.num_classes);
        }
        b = b.with_truth(truth)?;
    }
    if let Some(f) = &m.logits_file {
        b = b.with_logits(read_floats(&resolve(dir, f)?, m.dtype, cells, "logits_file")?)?;
    }
    for (k, v) in &m.metadata {
        b = b.with_metadata(k.clone(), metadata_text(v));
    }
    Ok(b)
}

/// Read a bundle directory, preferring the manifest over the CSV fallback.
pub fn read_bundle(dir: impl AsRef<Path>) -> Result<PredictionBundle> {
    let dir = dir.as_ref();
    if dir.join(MANIFEST_FILE).is_file() {
        read_manifest_bundle(dir)
    } else if dir.join(self::csv::PREDICTIONS_CSV).is_file() {
        self::csv::read_csv_bundle(dir)
    } else {
        Err(Error::ManifestMissing(dir.to_path_buf()))
    }
}

fn write_floats(path: &Path, values: &[f64], dtype: Dtype) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * dtype.size());
    for &v in values {
        match dtype {
            Dtype::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
            Dtype::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write a bundle as `f64` binary arrays plus manifest.
pub fn write_bundle(bundle: &PredictionBundle, dir: impl AsRef<Path>) -> Result<()> {
    write_bundle_as(bundle, dir, Dtype::F64)
}

/// Write a bundle with the given element type.
pub fn write_bundle_as(bundle: &PredictionBundle, dir: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_floats(&dir.join("predictions.bin"), bundle.predictions(), dtype)?;
    let labels: Vec<u8> = bundle.labels().iter().flat_map(|l| l.to_le_bytes()).collect();
    let lpath = dir.join("labels.bin");
    fs::write(&lpath, labels).map_err(|e| Error::io(&lpath, e))?;
    let truth_file = match bundle.true_conditional() {
        Some(t) => {
            write_floats(&dir.join("truth.bin"), t, dtype)?;
            Some("truth.bin".to_string())
        }
        None => None,
    };
    let logits_file = match bundle.logits() {
        Some(l) => {
            write_floats(&dir.join("logits.bin"), l, dtype)?;
            Some("logits.bin".to_string())
        }
        None => None,
    };
    let manifest = BundleManifest {
        version: MANIFEST_VERSION,
        num_models: bundle.num_models(),
        num_samples: bundle.num_samples(),
        num_classes: bundle.num_classes(),
        dtype,
        layout: LAYOUT.into(),
        predictions_file: "predictions.bin".into(),
        labels_file: "labels.bin".into(),
        truth_file,
        logits_file,
        metadata: bundle
            .metadata()
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
            .collect(),
    };
    let mpath = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))
}
