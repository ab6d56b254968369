//! IDX, CIFAR-10 binary and CSV readers. Byte pixels are scaled to [0, 1].

use std::path::{Path, PathBuf};

use crate::data::Dataset;
use crate::{Error, Result, Tensor};

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// A decoded IDX array of unsigned bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an IDX file: two zero bytes, type byte `0x08` (unsigned byte),
/// dimension count, big-endian u32 sizes, then the raw values.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::parse(bytes.len() as u64, "truncated IDX magic"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::parse(0, format!("bad IDX magic {:02x?}", &bytes[..4])));
    }
    if bytes[2] != 0x08 {
        return Err(Error::parse(
            2,
            format!("unsupported IDX element type 0x{:02x}", bytes[2]),
        ));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(Error::parse(3, "IDX file declares zero dimensions"));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::parse(bytes.len() as u64, "truncated IDX dimension table"));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::parse(4, format!("IDX dimensions {dims:?} overflow")))?;
    let have = bytes.len() - header;
    if have < count {
        return Err(Error::parse(
            bytes.len() as u64,
            format!("truncated IDX payload: need {count} bytes, have {have}"),
        ));
    }
    if have > count {
        return Err(Error::parse(
            (header + count) as u64,
            format!("{} trailing bytes after IDX payload", have - count),
        ));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::File {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

fn in_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::File {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

/// Image array `[N, H, W]` (or `[N, C, H, W]`) as a dataset tensor.
pub(crate) fn idx_images(arr: &IdxArray) -> Result<Tensor> {
    let shape = match arr.dims.as_slice() {
        &[n, h, w] => vec![n, 1, h, w],
        &[n, c, h, w] => vec![n, c, h, w],
        other => {
            return Err(Error::parse(
                3,
                format!("IDX images need 3 or 4 dimensions, got {other:?}"),
            ))
        }
    };
    Tensor::new(shape, arr.data.iter().map(|&b| b as f64 / 255.0).collect())
}

pub(crate) fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = in_file(images, parse_idx(&read(images)?))?;
    let lab = in_file(labels, parse_idx(&read(labels)?))?;
    let tensor = in_file(images, idx_images(&img))?;
    if lab.dims.len() != 1 {
        return Err(Error::File {
            path: labels.to_owned(),
            message: format!("IDX labels need 1 dimension, got {:?}", lab.dims),
        });
    }
    let labels_v: Vec<usize> = lab.data.iter().map(|&b| b as usize).collect();
    let num_classes = labels_v.iter().max().map_or(1, |m| m + 1);
    let name = images
        .file_name()
        .map_or_else(|| "idx".to_string(), |n| n.to_string_lossy().into_owned());
    Dataset::new(name, tensor, labels_v, num_classes)
}

/// Parses concatenated CIFAR-10 records: one label byte followed by 1024
/// red, 1024 green and 1024 blue bytes in row-major order.
pub fn parse_cifar10(bytes: &[u8]) -> Result<(Tensor, Vec<usize>)> {
    if bytes.is_empty() {
        return Err(Error::parse(0, "empty CIFAR-10 file"));
    }
    let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
    if whole != bytes.len() {
        return Err(Error::parse(
            whole as u64,
            format!(
                "truncated CIFAR-10 record: {} of {CIFAR_RECORD} bytes",
                bytes.len() - whole
            ),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::parse(
                (i * CIFAR_RECORD) as u64,
                format!("CIFAR-10 label {} out of range", rec[0]),
            ));
        }
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Ok((Tensor::new(vec![n, 3, 32, 32], data)?, labels))
}

pub(crate) fn load_cifar10(paths: &[PathBuf]) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::invalid("no CIFAR-10 batch files given"));
    }
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for path in paths {
        let (t, l) = in_file(path, parse_cifar10(&read(path)?))?;
        labels.extend(l);
        data.extend(t.into_data());
    }
    let n = labels.len();
    Dataset::new("cifar10", Tensor::new(vec![n, 3, 32, 32], data)?, labels, 10)
}

/// Parses CSV text with a header row. The `label` column holds class
/// indices; every other column is a feature, in file order.
pub fn parse_csv(text: &[u8], shape: Option<[usize; 3]>) -> Result<(Tensor, Vec<usize>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text);
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(0, format!("CSV header: {e}")))?
        .clone();
    let label_col = headers
        .iter()
        .position(|h| h.trim() == "label")
        .ok_or_else(|| Error::parse(0, "CSV header has no \"label\" column"))?;
    let features = headers.len() - 1;
    if features == 0 {
        return Err(Error::parse(0, "CSV has no feature columns"));
    }
    let sample_shape = shape.unwrap_or([1, 1, features]);
    if sample_shape.iter().product::<usize>() != features {
        return Err(Error::parse(
            0,
            format!("shape {sample_shape:?} does not hold {features} features"),
        ));
    }
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let offset = e.position().map_or(0, |p| p.byte());
            Error::parse(offset, format!("CSV: {e}"))
        })?;
        let offset = record.position().map_or(0, |p| p.byte());
        for (col, field) in record.iter().enumerate() {
            let field = field.trim();
            if col == label_col {
                labels.push(field.parse::<usize>().map_err(|_| {
                    Error::parse(offset, format!("bad label {field:?}"))
                })?);
            } else {
                data.push(field.parse::<f64>().map_err(|_| {
                    Error::parse(offset, format!("bad feature value {field:?}"))
                })?);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::parse(text.len() as u64, "CSV has no data rows"));
    }
    let mut full = vec![labels.len()];
    full.extend_from_slice(&sample_shape);
    Ok((Tensor::new(full, data)?, labels))
}

pub(crate) fn load_csv(path: &Path, shape: Option<[usize; 3]>) -> Result<Dataset> {
    let (images, labels) = in_file(path, parse_csv(&read(path)?, shape))?;
    let num_classes = labels.iter().max().map_or(1, |m| m + 1);
    let name = path
        .file_name()
        .map_or_else(|| "csv".to_string(), |n| n.to_string_lossy().into_owned());
    Dataset::new(name, images, labels, num_classes)
}
