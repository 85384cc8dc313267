//! Dataset ingestion: headed numeric CSV and the IDX binary format.

use std::path::Path;

use varreg_core::problems::Dataset;

use crate::config::Normalize;
use crate::error::{HarnessError, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads a rectangular numeric CSV with a header row. `label_column` names
/// the label; every other column becomes a feature, in file order.
///
/// Row indices in errors count data rows from 0 (the header is not a row).
pub fn load_csv_dataset(path: &Path, label_column: &str) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers().map_err(|e| HarnessError::data(path, format!("header: {e}")))?.clone();
    let label_idx = headers.iter().position(|h| h == label_column).ok_or_else(|| {
        HarnessError::data(path, format!("no column named '{label_column}' in header {:?}", headers.iter().collect::<Vec<_>>()))
    })?;
    let width = headers.len() - 1;
    if width == 0 {
        return Err(HarnessError::data(path, "the label is the only column"));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { len, expected_len, .. } => {
                HarnessError::data(path, format!("row {row}: {len} fields, expected {expected_len}"))
            }
            _ => HarnessError::data(path, format!("row {row}: {e}")),
        })?;
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| HarnessError::data(path, format!("row {row}, column '{}': '{cell}' is not a number", &headers[col])))?;
            if col == label_idx {
                labels.push(v);
            } else {
                features.push(v);
            }
        }
    }
    Dataset::new(features, labels, width).map_err(|e| HarnessError::data(path, e.to_string()))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| HarnessError::data(path, format!("offset {offset}: file ends after {} bytes while reading the header", bytes.len())))
}

/// Validates an IDX header and returns the dimension sizes and the offset
/// of the payload.
fn idx_header(bytes: &[u8], magic: u32, path: &Path) -> Result<(Vec<usize>, usize)> {
    let found = be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(HarnessError::data(path, format!("offset 0: expected magic {magic:#010x}, found {found:#010x}")));
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims).map(|k| be_u32(bytes, 4 + 4 * k, path).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    Ok((dims, 4 + 4 * ndims))
}

/// Parses in-memory IDX image and label files. Pixels are scaled to
/// `[0, 1]`; `limit` keeps the first examples only.
pub fn parse_idx(images: &[u8], labels: &[u8], limit: Option<usize>, normalize: Normalize, names: (&Path, &Path)) -> Result<Dataset> {
    let (img_path, lbl_path) = names;
    let (idims, ioff) = idx_header(images, IDX_IMAGES_MAGIC, img_path)?;
    let (ldims, loff) = idx_header(labels, IDX_LABELS_MAGIC, lbl_path)?;
    if idims[0] != ldims[0] {
        return Err(HarnessError::data(
            img_path,
            format!("offset 4: image count {} does not match label count {} in {}", idims[0], ldims[0], lbl_path.display()),
        ));
    }
    let width = idims[1] * idims[2];
    if width == 0 {
        return Err(HarnessError::data(img_path, "offset 8: images have zero pixels"));
    }
    let n = limit.map_or(idims[0], |l| l.min(idims[0]));
    let need = ioff + n * width;
    if images.len() < need {
        return Err(HarnessError::data(
            img_path,
            format!("offset {}: file ends after {} bytes, expected {need}", images.len(), images.len()),
        ));
    }
    if labels.len() < loff + n {
        return Err(HarnessError::data(
            lbl_path,
            format!("offset {}: file ends after {} bytes, expected {}", labels.len(), labels.len(), loff + n),
        ));
    }
    let features: Vec<f64> = images[ioff..need].iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<f64> = labels[loff..loff + n].iter().map(|&l| f64::from(l)).collect();
    let mut data = Dataset::new(features, labels, width).map_err(|e| HarnessError::data(img_path, e.to_string()))?;
    if normalize == Normalize::UnitL2 {
        data.normalize_rows();
    }
    Ok(data)
}

pub fn load_idx_dataset(images: &Path, labels: &Path, limit: Option<usize>, normalize: Normalize) -> Result<Dataset> {
    let ib = std::fs::read(images).map_err(|e| HarnessError::io(images, e))?;
    let lb = std::fs::read(labels).map_err(|e| HarnessError::io(labels, e))?;
    parse_idx(&ib, &lb, limit, normalize, (images, labels))
}

/// Builds an IDX image file from raw pixels.
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
    out.extend_from_slice(&((pixels.len() / (rows * cols).max(1)) as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    out
}

/// Builds an IDX label file.
pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
