//! Readers for image datasets on disk.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Normalization};
use crate::error::{Error, Result};
use crate::nncore::Tensor;

pub const RAW_MAGIC: [u8; 4] = *b"FNDS";
pub const RAW_VERSION: u16 = 1;

const CIFAR_PIXELS: usize = 3 * 32 * 32;
const CIFAR_RECORD: usize = 1 + CIFAR_PIXELS;
const RAW_HEADER: usize = 4 + 2 + 8 + 4 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImageFormat {
    /// Standard CIFAR-10 binary batches: label byte then 3072 planar pixels.
    Cifar10Binary,
    /// `FNDS` container of little-endian f64 rows with optional u16 labels.
    RawF64,
}

pub fn load_image_dataset(path: &Path, format: ImageFormat) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    match format {
        ImageFormat::Cifar10Binary => parse_cifar(&bytes),
        ImageFormat::RawF64 => parse_raw(&bytes),
    }
}

fn parse_cifar(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() {
        return Err(Error::Format {
            offset: 0,
            message: "empty file".into(),
        });
    }
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
        return Err(Error::Format {
            offset: whole as u64,
            message: format!(
                "trailing partial record of {} bytes (records are {CIFAR_RECORD} bytes)",
                bytes.len() - whole
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * CIFAR_PIXELS);
    for (k, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Format {
                offset: (k * CIFAR_RECORD) as u64,
                message: format!("label {} outside 0..10", rec[0]),
            });
        }
        labels.push(rec[0] as u16);
        data.extend(rec[1..].iter().map(|&p| p as f64 / 255.0));
    }
    let mut ds = Dataset::new(Tensor::new(vec![n, CIFAR_PIXELS], data)?, Some(labels), Normalization::UnitInterval)?;
    ds.num_classes = Some(10);
    Ok(ds)
}

fn take<'a>(bytes: &'a [u8], at: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    bytes.get(at..at + len).ok_or_else(|| Error::Format {
        offset: bytes.len().min(at) as u64,
        message: format!("file ends inside {what}"),
    })
}

fn parse_raw(bytes: &[u8]) -> Result<Dataset> {
    let head = take(bytes, 0, RAW_HEADER, "header")?;
    if head[..4] != RAW_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected FNDS".into(),
        });
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != RAW_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let n = u64::from_le_bytes(head[6..14].try_into().expect("8 bytes")) as usize;
    let d = u32::from_le_bytes(head[14..18].try_into().expect("4 bytes")) as usize;
    let has_labels = match head[18] {
        0 => false,
        1 => true,
        other => {
            return Err(Error::Format {
                offset: 18,
                message: format!("label flag must be 0 or 1, got {other}"),
            })
        }
    };
    if n == 0 || d == 0 {
        return Err(Error::Format {
            offset: 6,
            message: "empty dataset".into(),
        });
    }
    let payload_len = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| Error::Format {
            offset: 6,
            message: "dataset size overflows".into(),
        })?;
    let payload = take(bytes, RAW_HEADER, payload_len, "sample payload")?;
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut end = RAW_HEADER + payload_len;
    let labels = if has_labels {
        let raw = take(bytes, end, 2 * n, "labels")?;
        end += 2 * n;
        Some(
            raw.chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect(),
        )
    } else {
        None
    };
    if end != bytes.len() {
        return Err(Error::Format {
            offset: end as u64,
            message: format!("{} unexpected trailing bytes", bytes.len() - end),
        });
    }
    Dataset::new(Tensor::new(vec![n, d], data)?, labels, Normalization::Raw)
}

pub fn write_raw_f64(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = Vec::with_capacity(RAW_HEADER + data.samples.len() * 8);
    out.extend_from_slice(&RAW_MAGIC);
    out.extend_from_slice(&RAW_VERSION.to_le_bytes());
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    out.extend_from_slice(&(data.dim() as u32).to_le_bytes());
    out.push(data.labels.is_some() as u8);
    for v in data.samples.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = &data.labels {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Cuts planar `channels × side × side` images into non-overlapping
/// `patch × patch` tiles, each flattened planar. Labels carry over.
pub fn to_patches(data: &Dataset, channels: usize, side: usize, patch: usize) -> Result<Dataset> {
    if patch == 0 || !side.is_multiple_of(patch) || data.dim() != channels * side * side {
        return Err(Error::Shape(format!(
            "cannot cut {}-dim rows into {patch}x{patch} patches of {channels}x{side}x{side} images",
            data.dim()
        )));
    }
    let per_side = side / patch;
    let per_image = per_side * per_side;
    let pdim = channels * patch * patch;
    let mut out = Vec::with_capacity(data.len() * per_image * pdim);
    let mut labels = Vec::new();
    for n in 0..data.len() {
        let img = data.samples.row(n);
        for py in 0..per_side {
            for px in 0..per_side {
                for c in 0..channels {
                    for y in 0..patch {
                        let start = c * side * side + (py * patch + y) * side + px * patch;
                        out.extend_from_slice(&img[start..start + patch]);
                    }
                }
                if let Some(l) = &data.labels {
                    labels.push(l[n]);
                }
            }
        }
    }
    let mut ds = Dataset::new(
        Tensor::new(vec![data.len() * per_image, pdim], out)?,
        data.labels.as_ref().map(|_| labels),
        data.normalization,
    )?;
    ds.num_classes = data.num_classes;
    Ok(ds)
}
