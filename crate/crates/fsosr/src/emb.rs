//! EMB1 embedding files and their sibling label CSVs.
//!
//! ```text
//! "EMB1" | u32 version = 1 | u32 n | u32 d | n*d f32, row-major
//! ```
//!
//! All integers and floats are little-endian. Labels live next to the
//! vectors in `index,label_id,class_name` rows.

use std::fs;
use std::path::{Path, PathBuf};

use fsosr_core::dataset::{EmbeddingDataset, View};
use fsosr_core::numkit::Matrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Decodes an EMB1 byte buffer into an `n x d` matrix of widened floats.
pub fn decode(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic, not an EMB1 file".into()));
        }
        return Err(Error::Truncation {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic, not an EMB1 file".into()));
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported EMB1 version {version}")));
    }
    let n = read_u32(bytes, 8) as usize;
    let d = read_u32(bytes, 12) as usize;
    let expected = (n as u64) * (d as u64) * 4;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != expected {
        return Err(Error::Truncation {
            expected,
            found: payload.len() as u64,
        });
    }
    let mut values = Vec::with_capacity(n * d);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::Data(format!(
                "non-finite value at row {}, column {}",
                i / d.max(1),
                i % d.max(1)
            )));
        }
        values.push(f64::from(v));
    }
    Ok(Matrix::from_vec(n, d, values)?)
}

/// Encodes a matrix as EMB1, narrowing to `f32`.
pub fn encode(m: &Matrix) -> Result<Vec<u8>> {
    let n = u32::try_from(m.rows()).map_err(|_| Error::Data("too many rows for EMB1".into()))?;
    let d =
        u32::try_from(m.cols()).map_err(|_| Error::Data("dimension too large for EMB1".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + m.as_slice().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for &v in m.as_slice() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(Error::Data(format!(
                "value {v} is not representable as a finite f32"
            )));
        }
        out.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(out)
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    decode(&fs::read(path).map_err(Error::io(path))?)
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, encode(m)?).map_err(Error::io(path))
}

/// `foo.emb` -> `foo.csv`.
pub fn sibling_labels(path: &Path) -> PathBuf {
    path.with_extension("csv")
}

/// One row of a label CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRow {
    pub label_id: i64,
    pub class_name: String,
}

/// Reads `index,label_id,class_name` rows; `#` lines and the header are skipped.
/// Indices must run `0, 1, 2, ...` in file order.
pub fn read_label_rows(path: &Path) -> Result<Vec<LabelRow>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["index", "label_id", "class_name"] {
        return Err(Error::Format(format!(
            "{}: header must be index,label_id,class_name",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (expect, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let bad = |what: &str| Error::Format(format!("{}: row {expect}: {what}", path.display()));
        let index: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| bad("index is not an integer"))?;
        if index != expect {
            return Err(bad(&format!("index {index} out of sequence")));
        }
        let label_id: i64 = record[1]
            .trim()
            .parse()
            .map_err(|_| bad("label_id is not an integer"))?;
        rows.push(LabelRow {
            label_id,
            class_name: record[2].to_string(),
        });
    }
    Ok(rows)
}

/// Dense labels and the id -> name table of a label file.
pub fn read_labels(path: &Path) -> Result<(Vec<u32>, Vec<String>)> {
    let rows = read_label_rows(path)?;
    let mut names: Vec<Option<String>> = Vec::new();
    let mut labels = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        let id = u32::try_from(row.label_id)
            .map_err(|_| Error::Data(format!("{}: row {i}: negative label id", path.display())))?;
        let slot = id as usize;
        if names.len() <= slot {
            names.resize(slot + 1, None);
        }
        match &names[slot] {
            Some(existing) if *existing != row.class_name => {
                return Err(Error::Data(format!(
                    "{}: label {id} named both {existing:?} and {:?}",
                    path.display(),
                    row.class_name
                )))
            }
            Some(_) => {}
            None => names[slot] = Some(row.class_name),
        }
        labels.push(id);
    }
    let names = names
        .into_iter()
        .enumerate()
        .map(|(id, n)| {
            n.ok_or_else(|| {
                Error::Core(fsosr_core::Error::Validation(format!(
                    "{}: class id {id} has no samples",
                    path.display()
                )))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((labels, names))
}

pub fn label_csv(labels: &[u32], names: &[String], provenance: Option<&str>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    if let Some(p) = provenance {
        out.extend_from_slice(format!("# {p}\n").as_bytes());
    }
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(["index", "label_id", "class_name"])
        .map_err(csv_err)?;
    for (i, &l) in labels.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string(), names[l as usize].clone()])
            .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Data(e.to_string()))
}

/// Loads vectors and labels. `labels` defaults to the sibling `.csv`.
pub fn load_embeddings(path: &Path, labels: Option<&Path>, view: View) -> Result<EmbeddingDataset> {
    let vectors = read_matrix(path)?;
    let label_path = labels.map_or_else(|| sibling_labels(path), Path::to_path_buf);
    let (ids, names) = read_labels(&label_path)?;
    Ok(EmbeddingDataset::new(vectors, ids, names, view)?)
}

/// Writes the EMB1 file and its label CSV.
pub fn save_embeddings(
    ds: &EmbeddingDataset,
    path: &Path,
    labels: Option<&Path>,
    provenance: Option<&str>,
) -> Result<()> {
    let bytes = encode(ds.vectors())?;
    let csv = label_csv(ds.labels(), ds.class_names(), provenance)?;
    fs::write(path, bytes).map_err(Error::io(path))?;
    let label_path = labels.map_or_else(|| sibling_labels(path), Path::to_path_buf);
    fs::write(&label_path, csv).map_err(Error::io(&label_path))
}
