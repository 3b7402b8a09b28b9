use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::Dataset;
use crate::error::{DsffsError, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Where and how to read a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataSource {
    /// Header row required; the label column defaults to the last one.
    Csv {
        path: PathBuf,
        label_column: Option<String>,
    },
    /// An image file (`0x00000803`) paired with a label file (`0x00000801`).
    Idx { images: PathBuf, labels: PathBuf },
    /// `label idx:val ...` with 1-based indices. `dim` defaults to the
    /// largest index seen.
    Libsvm { path: PathBuf, dim: Option<usize> },
}

impl DataSource {
    fn name(&self) -> String {
        let path = match self {
            DataSource::Csv { path, .. } | DataSource::Libsvm { path, .. } => path,
            DataSource::Idx { images, .. } => images,
        };
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// Features plus labels exactly as written in the file.
struct RawDataset {
    features: Array2<f64>,
    labels: Vec<String>,
    feature_names: Option<Vec<String>>,
    name: String,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> DsffsError {
    DsffsError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Maps raw labels of several files onto one dense `0..C` range.
///
/// Numeric labels are ordered numerically, anything else lexicographically.
fn densify(raws: Vec<RawDataset>) -> Result<Vec<Dataset>> {
    let all: BTreeSet<&str> = raws.iter().flat_map(|r| r.labels.iter().map(String::as_str)).collect();
    let mut classes: Vec<&str> = all.into_iter().collect();
    if classes.iter().all(|c| c.parse::<f64>().is_ok()) {
        classes.sort_by(|a, b| {
            let (x, y) = (a.parse::<f64>().unwrap(), b.parse::<f64>().unwrap());
            x.total_cmp(&y)
        });
    }
    let lookup = |s: &str| classes.iter().position(|&c| c == s).unwrap();
    let n_classes = classes.len();
    raws.iter()
        .map(|raw| {
            let labels = raw.labels.iter().map(|l| lookup(l)).collect();
            let mut ds = Dataset::new(raw.features.clone(), labels, raw.name.clone())?;
            ds.n_classes = n_classes;
            ds.feature_names = raw.feature_names.clone();
            Ok(ds)
        })
        .collect()
}

pub fn load_dataset(source: &DataSource) -> Result<Dataset> {
    let raw = read_raw(source)?;
    Ok(densify(vec![raw])?.remove(0))
}

/// Loads a canonical train/test pair with a shared label mapping.
pub fn load_dataset_pair(train: &DataSource, test: &DataSource) -> Result<(Dataset, Dataset)> {
    let mut raw_train = read_raw(train)?;
    let raw_test = read_raw(test)?;
    if raw_train.features.ncols() != raw_test.features.ncols() {
        // libsvm files infer their width; pad the narrower one
        let d = raw_train.features.ncols().max(raw_test.features.ncols());
        if !matches!(train, DataSource::Libsvm { dim: None, .. }) {
            return Err(DsffsError::shape(format!(
                "train has {} features, test has {}",
                raw_train.features.ncols(),
                raw_test.features.ncols()
            )));
        }
        raw_train = pad(raw_train, d);
        let raw_test = pad(raw_test, d);
        let mut out = densify(vec![raw_train, raw_test])?;
        let test = out.remove(1);
        return Ok((out.remove(0), test));
    }
    let mut out = densify(vec![raw_train, raw_test])?;
    let test = out.remove(1);
    Ok((out.remove(0), test))
}

fn pad(mut raw: RawDataset, d: usize) -> RawDataset {
    let (n, w) = raw.features.dim();
    if w < d {
        let mut f = Array2::zeros((n, d));
        f.slice_mut(ndarray::s![.., ..w]).assign(&raw.features);
        raw.features = f;
    }
    raw
}

fn read_raw(source: &DataSource) -> Result<RawDataset> {
    let mut raw = match source {
        DataSource::Csv { path, label_column } => read_csv_raw(path, label_column.as_deref())?,
        DataSource::Idx { images, labels } => read_idx_raw(images, labels)?,
        DataSource::Libsvm { path, dim } => read_libsvm_raw(path, *dim)?,
    };
    raw.name = source.name();
    Ok(raw)
}

pub fn read_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset> {
    load_dataset(&DataSource::Csv {
        path: path.as_ref().to_path_buf(),
        label_column: label_column.map(str::to_string),
    })
}

pub fn read_libsvm(path: impl AsRef<Path>, dim: Option<usize>) -> Result<Dataset> {
    load_dataset(&DataSource::Libsvm {
        path: path.as_ref().to_path_buf(),
        dim,
    })
}

pub fn read_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    load_dataset(&DataSource::Idx {
        images: images.as_ref().to_path_buf(),
        labels: labels.as_ref().to_path_buf(),
    })
}

fn read_csv_raw(path: &Path, label_column: Option<&str>) -> Result<RawDataset> {
    let file = File::open(path).map_err(|e| DsffsError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.is_empty() {
        return Err(parse_error(path, 1, "empty header"));
    }
    let label_idx = match label_column {
        Some(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_error(path, 1, format!("label column '{name}' not found")))?,
        None => headers.len() - 1,
    };
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let d = names.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != headers.len() {
            return Err(parse_error(
                path,
                line,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        for (k, field) in record.iter().enumerate() {
            let field = field.trim();
            if k == label_idx {
                if field.is_empty() {
                    return Err(parse_error(path, line, "missing label"));
                }
                labels.push(field.to_string());
                continue;
            }
            let v: f64 = field
                .parse()
                .map_err(|_| parse_error(path, line, format!("column '{}': cannot parse '{field}'", headers[k])))?;
            if !v.is_finite() {
                return Err(parse_error(
                    path,
                    line,
                    format!("column '{}': non-finite value", headers[k]),
                ));
            }
            values.push(v);
        }
    }
    let n = labels.len();
    let features = Array2::from_shape_vec((n, d), values).map_err(|e| DsffsError::shape(e.to_string()))?;
    Ok(RawDataset {
        features,
        labels,
        feature_names: Some(names),
        name: String::new(),
    })
}

fn read_libsvm_raw(path: &Path, dim: Option<usize>) -> Result<RawDataset> {
    let file = File::open(path).map_err(|e| DsffsError::io(path, e))?;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0;
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| DsffsError::io(path, e))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label = tokens.next().unwrap();
        let mut row = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_error(path, lineno, format!("expected idx:val, found '{tok}'")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_error(path, lineno, format!("bad index '{idx}'")))?;
            if idx == 0 {
                return Err(parse_error(path, lineno, "libsvm indices are 1-based"));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| parse_error(path, lineno, format!("bad value '{val}'")))?;
            if let Some(d) = dim {
                if idx > d {
                    return Err(parse_error(path, lineno, format!("index {idx} exceeds dimension {d}")));
                }
            }
            max_index = max_index.max(idx);
            row.push((idx - 1, val));
        }
        labels.push(label.to_string());
        rows.push(row);
    }
    let d = dim.unwrap_or(max_index);
    let mut features = Array2::zeros((rows.len(), d));
    for (r, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            features[[r, c]] = v;
        }
    }
    Ok(RawDataset {
        features,
        labels,
        feature_names: None,
        name: String::new(),
    })
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Option<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| DsffsError::io(path, e))?;
    Ok(buf)
}

fn read_idx_raw(images: &Path, labels: &Path) -> Result<RawDataset> {
    let img = read_all(images)?;
    let magic = read_u32_be(&img, 0).ok_or_else(|| parse_error(images, 0, "truncated header"))?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(parse_error(
            images,
            0,
            format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let header = |k: usize| read_u32_be(&img, 4 + 4 * k).map(|v| v as usize);
    let (n, h, w) = match (header(0), header(1), header(2)) {
        (Some(n), Some(h), Some(w)) => (n, h, w),
        _ => return Err(parse_error(images, 0, "truncated header")),
    };
    let body = &img[16..];
    if body.len() != n * h * w {
        return Err(parse_error(
            images,
            0,
            format!("expected {} pixel bytes, found {}", n * h * w, body.len()),
        ));
    }
    let features = Array2::from_shape_vec((n, h * w), body.iter().map(|&b| b as f64).collect())
        .map_err(|e| DsffsError::shape(e.to_string()))?;

    let lab = read_all(labels)?;
    let magic = read_u32_be(&lab, 0).ok_or_else(|| parse_error(labels, 0, "truncated header"))?;
    if magic != IDX_LABELS_MAGIC {
        return Err(parse_error(
            labels,
            0,
            format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let count = read_u32_be(&lab, 4).ok_or_else(|| parse_error(labels, 0, "truncated header"))? as usize;
    if count != n || lab.len() != 8 + n {
        return Err(parse_error(labels, 0, format!("{count} labels for {n} images")));
    }
    Ok(RawDataset {
        features,
        labels: lab[8..].iter().map(|b| b.to_string()).collect(),
        feature_names: None,
        name: String::new(),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| DsffsError::io(path, e))
}

/// Writes a header row (`f0..`, or the dataset's names) with the label last.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header: Vec<String> = match &ds.feature_names {
        Some(names) => names.clone(),
        None => (0..ds.n_features()).map(|j| format!("f{j}")).collect(),
    };
    header.push("label".into());
    w.write_record(&header)?;
    for (row, y) in ds.features.outer_iter().zip(&ds.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| DsffsError::io(path, e))
}

/// Writes nonzero entries only; indices are 1-based.
pub fn write_libsvm(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for (row, y) in ds.features.outer_iter().zip(&ds.labels) {
        let mut line = y.to_string();
        for (j, v) in row.iter().enumerate() {
            if *v != 0.0 {
                line.push_str(&format!(" {}:{}", j + 1, v));
            }
        }
        writeln!(w, "{line}").map_err(|e| DsffsError::io(path, e))?;
    }
    w.flush().map_err(|e| DsffsError::io(path, e))
}

/// Writes `height x width` unsigned-byte images and their labels.
pub fn write_idx(
    ds: &Dataset,
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    height: usize,
    width: usize,
) -> Result<()> {
    if height * width != ds.n_features() {
        return Err(DsffsError::shape(format!(
            "{height}x{width} images do not match {} features",
            ds.n_features()
        )));
    }
    if ds
        .features
        .iter()
        .any(|&v| v.fract() != 0.0 || !(0.0..=255.0).contains(&v))
    {
        return Err(DsffsError::invalid("IDX images require integer values in 0..=255"));
    }
    if ds.labels.iter().any(|&y| y > 255) {
        return Err(DsffsError::invalid("IDX labels must fit in one byte"));
    }
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let mut w = create(images)?;
    let mut bytes = Vec::with_capacity(16 + ds.features.len());
    for v in [IDX_IMAGES_MAGIC, ds.n_samples() as u32, height as u32, width as u32] {
        bytes.extend(v.to_be_bytes());
    }
    bytes.extend(ds.features.iter().map(|&v| v as u8));
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| DsffsError::io(images, e))?;

    let mut w = create(labels)?;
    let mut bytes = Vec::with_capacity(8 + ds.labels.len());
    bytes.extend(IDX_LABELS_MAGIC.to_be_bytes());
    bytes.extend((ds.n_samples() as u32).to_be_bytes());
    bytes.extend(ds.labels.iter().map(|&y| y as u8));
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| DsffsError::io(labels, e))
}
