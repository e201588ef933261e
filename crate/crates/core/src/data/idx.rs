//! IDX binary files: big-endian `0x00 0x00 <type> <rank>` magic, `rank`
//! big-endian u32 dimensions, then the payload.
//!
//! Unsigned-byte tensors (type `0x08`) are scaled to `[0, 1]` on read;
//! `0x0D` (f32) and `0x0E` (f64) payloads are read as is. Image files have
//! rank 3 (`n x h x w`, one channel) or rank 4 (`n x h x w x c`); vectors are
//! rank 2. Label files are rank-1 unsigned bytes (`0x00000801`).

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, WriteBytesExt};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IDX_UBYTE: u8 = 0x08;
pub const IDX_F32: u8 = 0x0D;
pub const IDX_F64: u8 = 0x0E;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxEncoding {
    /// Values in `[0, 1]` quantized to `round(255 v)`.
    UByte,
    F64,
}

struct Header {
    kind: u8,
    dims: Vec<usize>,
    payload_offset: usize,
}

fn format_err(path: &Path, offset: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        detail: detail.into(),
    }
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 4 {
        return Err(format_err(path, bytes.len(), "truncated magic number"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format_err(
            path,
            0,
            format!("bad magic {:#010x}", BigEndian::read_u32(&bytes[..4])),
        ));
    }
    let kind = bytes[2];
    if !matches!(kind, IDX_UBYTE | IDX_F32 | IDX_F64) {
        return Err(format_err(path, 2, format!("unsupported element type {kind:#04x}")));
    }
    let rank = bytes[3] as usize;
    if rank == 0 {
        return Err(format_err(path, 3, "rank 0"));
    }
    let mut dims = Vec::with_capacity(rank);
    for d in 0..rank {
        let off = 4 + 4 * d;
        if bytes.len() < off + 4 {
            return Err(format_err(path, bytes.len(), format!("truncated dimension {d}")));
        }
        let v = BigEndian::read_u32(&bytes[off..off + 4]) as usize;
        if v == 0 {
            return Err(format_err(path, off, format!("dimension {d} is zero")));
        }
        dims.push(v);
    }
    Ok(Header {
        kind,
        dims,
        payload_offset: 4 + 4 * rank,
    })
}

fn element_size(kind: u8) -> usize {
    match kind {
        IDX_UBYTE => 1,
        IDX_F32 => 4,
        _ => 8,
    }
}

fn read_payload(path: &Path, bytes: &[u8], h: &Header) -> Result<Vec<f64>> {
    let count: usize = h.dims.iter().product();
    let size = element_size(h.kind);
    let expected = h.payload_offset + count * size;
    if bytes.len() < expected {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated payload: expected {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(path, expected, "trailing bytes after payload"));
    }
    let body = &bytes[h.payload_offset..];
    Ok(match h.kind {
        IDX_UBYTE => body.iter().map(|&b| f64::from(b)).collect(),
        IDX_F32 => body.chunks(4).map(|c| f64::from(BigEndian::read_f32(c))).collect(),
        _ => body.chunks(8).map(BigEndian::read_f64).collect(),
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads an example file and an optional paired label file.
pub fn load_idx<T: Scalar>(images: &Path, labels: Option<&Path>) -> Result<Dataset<T>> {
    let bytes = read_file(images)?;
    let h = parse_header(images, &bytes)?;
    let raw = read_payload(images, &bytes, &h)?;
    let scale = if h.kind == IDX_UBYTE { 255.0 } else { 1.0 };
    let shape = match h.dims.len() {
        1 => vec![h.dims[0], 1],
        3 => vec![h.dims[0], h.dims[1], h.dims[2], 1],
        _ => h.dims.clone(),
    };
    let data = raw.into_iter().map(|v| T::from_f64_lossy(v / scale)).collect();
    let examples = Tensor::new(shape, data)?;
    let n = h.dims[0];

    let labels = match labels {
        None => None,
        Some(path) => {
            let lb = read_file(path)?;
            let lh = parse_header(path, &lb)?;
            if lh.kind != IDX_UBYTE || lh.dims.len() != 1 {
                return Err(format_err(path, 0, "label file must be a rank-1 unsigned-byte vector (magic 0x00000801)"));
            }
            let values = read_payload(path, &lb, &lh)?;
            if values.len() != n {
                return Err(format_err(
                    path,
                    4,
                    format!("{} labels for {n} examples", values.len()),
                ));
            }
            Some(values.into_iter().map(|v| v as usize).collect::<Vec<_>>())
        }
    };
    let classes = labels
        .as_ref()
        .and_then(|l| l.iter().max())
        .map_or(0, |&m| m + 1);
    Dataset::new(examples, labels, classes)
}

fn header_bytes(kind: u8, dims: &[usize]) -> Vec<u8> {
    let mut out = vec![0, 0, kind, dims.len() as u8];
    for &d in dims {
        out.write_u32::<BigEndian>(d as u32).expect("vec write");
    }
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes examples (and labels, when both present and a path is given).
/// Single-channel images are written as rank-3 `n x h x w`.
pub fn write_idx<T: Scalar>(
    ds: &Dataset<T>,
    images: &Path,
    labels: Option<&Path>,
    encoding: IdxEncoding,
) -> Result<()> {
    let shape = ds.examples.shape();
    let dims: Vec<usize> = if shape.len() == 4 && shape[3] == 1 {
        shape[..3].to_vec()
    } else {
        shape.to_vec()
    };
    let mut bytes = match encoding {
        IdxEncoding::UByte => header_bytes(IDX_UBYTE, &dims),
        IdxEncoding::F64 => header_bytes(IDX_F64, &dims),
    };
    for &v in ds.examples.data() {
        let v = v.as_f64();
        match encoding {
            IdxEncoding::UByte => {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Data(format!(
                        "value {v} outside [0, 1] cannot be written as unsigned bytes"
                    )));
                }
                bytes.push((v * 255.0).round() as u8);
            }
            IdxEncoding::F64 => bytes.write_f64::<BigEndian>(v).expect("vec write"),
        }
    }
    write_file(images, &bytes)?;
    if let (Some(path), Some(l)) = (labels, &ds.labels) {
        let mut lb = header_bytes(IDX_UBYTE, &[l.len()]);
        for &c in l {
            let b = u8::try_from(c)
                .map_err(|_| Error::Data(format!("label {c} does not fit in a byte")))?;
            lb.push(b);
        }
        write_file(path, &lb)?;
    }
    Ok(())
}
