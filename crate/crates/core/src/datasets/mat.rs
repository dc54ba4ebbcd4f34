//! MAT-file level 5 reader for little-endian numeric arrays, plus a
//! matching writer used for fixtures and synthetic exports.
//!
//! Supported: uncompressed and zlib-compressed `miMATRIX` elements of
//! numeric classes (double, single, and the integer classes). Cell,
//! struct, char, and sparse arrays are skipped. Version 7.3 files are
//! HDF5 containers and are rejected with a conversion hint.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;

use crate::error::{Error, Result};

const MI_INT8: u32 = 1;
const MI_UINT8: u32 = 2;
const MI_INT16: u32 = 3;
const MI_UINT16: u32 = 4;
const MI_INT32: u32 = 5;
const MI_UINT32: u32 = 6;
const MI_SINGLE: u32 = 7;
const MI_DOUBLE: u32 = 9;
const MI_INT64: u32 = 12;
const MI_UINT64: u32 = 13;
const MI_MATRIX: u32 = 14;
const MI_COMPRESSED: u32 = 15;

/// A numeric variable: `dims` as stored, values converted to f64 in
/// column-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct NumericArray {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NumericArray {
    pub fn rows(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        if self.dims.len() < 2 {
            1
        } else {
            self.dims[1..].iter().product()
        }
    }

    /// Row `r` gathered across all columns.
    pub fn row(&self, r: usize) -> Option<Vec<f64>> {
        let (rows, cols) = (self.rows(), self.cols());
        if r >= rows {
            return None;
        }
        Some((0..cols).map(|c| self.data[c * rows + r]).collect())
    }

    /// Column `c` (contiguous in column-major storage).
    pub fn col(&self, c: usize) -> Option<Vec<f64>> {
        let (rows, cols) = (self.rows(), self.cols());
        if c >= cols {
            return None;
        }
        Some(self.data[c * rows..(c + 1) * rows].to_vec())
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
    /// Offset of this buffer within the physical file (nonzero inside
    /// decompressed elements, where it marks the element start).
    base: u64,
}

impl<'a> Cursor<'a> {
    fn corrupt(&self, detail: impl Into<String>) -> Error {
        Error::CorruptFile {
            path: self.path.to_path_buf(),
            offset: self.base + self.pos as u64,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.corrupt(format!(
                "need {n} bytes, only {} remain",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn align8(&mut self) {
        let rem = self.pos % 8;
        if rem != 0 {
            self.pos = (self.pos + 8 - rem).min(self.buf.len());
        }
    }
}

/// One data element: type, payload, and whether it was a small element.
fn read_element<'a>(cur: &mut Cursor<'a>) -> Result<(u32, &'a [u8])> {
    let first = cur.u32()?;
    if first >> 16 != 0 {
        // small data element: 2-byte type + 2-byte length packed into the
        // tag, payload within the following 4 bytes
        let ty = first & 0xFFFF;
        let len = (first >> 16) as usize;
        if len > 4 {
            return Err(cur.corrupt(format!("small element length {len} exceeds 4")));
        }
        let payload = cur.take(4)?;
        Ok((ty, &payload[..len]))
    } else {
        let len = cur.u32()? as usize;
        let payload = cur.take(len)?;
        cur.align8();
        Ok((first, payload))
    }
}

fn numeric_to_f64(ty: u32, bytes: &[u8], cur: &Cursor<'_>) -> Result<Vec<f64>> {
    macro_rules! conv {
        ($t:ty, $w:expr) => {{
            if bytes.len() % $w != 0 {
                return Err(cur.corrupt("numeric payload not a multiple of its width"));
            }
            bytes
                .chunks_exact($w)
                .map(|c| <$t>::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()
        }};
    }
    Ok(match ty {
        MI_INT8 => conv!(i8, 1),
        MI_UINT8 => conv!(u8, 1),
        MI_INT16 => conv!(i16, 2),
        MI_UINT16 => conv!(u16, 2),
        MI_INT32 => conv!(i32, 4),
        MI_UINT32 => conv!(u32, 4),
        MI_SINGLE => conv!(f32, 4),
        MI_DOUBLE => conv!(f64, 8),
        MI_INT64 => conv!(i64, 8),
        MI_UINT64 => conv!(u64, 8),
        other => return Err(cur.corrupt(format!("unexpected numeric element type {other}"))),
    })
}

/// Parse one miMATRIX payload; `None` for non-numeric classes.
fn parse_matrix(payload: &[u8], path: &Path, base: u64) -> Result<Option<(String, NumericArray)>> {
    let mut cur = Cursor {
        buf: payload,
        pos: 0,
        path,
        base,
    };
    let (ty, flags) = read_element(&mut cur)?;
    if ty != MI_UINT32 || flags.len() < 8 {
        return Err(cur.corrupt("array flags subelement malformed"));
    }
    let flag_word = u32::from_le_bytes(flags[0..4].try_into().unwrap());
    let class = flag_word & 0xFF;
    // numeric mxClasses are 6 (double) through 13 (uint32)
    let numeric = (6..=13).contains(&class);

    let (ty, dims_raw) = read_element(&mut cur)?;
    if ty != MI_INT32 {
        return Err(cur.corrupt("dimensions subelement malformed"));
    }
    let dims: Vec<usize> = dims_raw
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()).max(0) as usize)
        .collect();

    let (ty, name_raw) = read_element(&mut cur)?;
    if ty != MI_INT8 {
        return Err(cur.corrupt("array name subelement malformed"));
    }
    let name = String::from_utf8_lossy(name_raw).into_owned();

    if !numeric {
        return Ok(None);
    }

    let (ty, real) = read_element(&mut cur)?;
    let data = numeric_to_f64(ty, real, &cur)?;
    let expect: usize = dims.iter().product();
    if data.len() != expect {
        return Err(cur.corrupt(format!(
            "variable {name}: {} values for dims {dims:?}",
            data.len()
        )));
    }
    // an imaginary part may follow; only the real part is kept
    Ok(Some((name, NumericArray { dims, data })))
}

/// Read every numeric variable of a little-endian MAT level 5 file.
pub fn load_mat_v5(path: &Path) -> Result<BTreeMap<String, NumericArray>> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_mat_bytes(&buf, path)
}

/// Parser entry point over raw bytes (exposed for fixture round-trips).
pub fn parse_mat_bytes(buf: &[u8], path: &Path) -> Result<BTreeMap<String, NumericArray>> {
    if buf.len() < 128 {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "file shorter than the 128-byte MAT header".into(),
        });
    }
    let text = String::from_utf8_lossy(&buf[..116]);
    if !text.starts_with("MATLAB") {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "missing MATLAB level 5 header magic".into(),
        });
    }
    if text.starts_with("MATLAB 7.3") {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "version 7.3 files are HDF5 containers; re-save with \
                     `save(..., '-v7')` or export the channel as a flat array"
                .into(),
        });
    }
    if &buf[126..128] != b"IM" {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "big-endian MAT files are not supported".into(),
        });
    }

    let mut vars = BTreeMap::new();
    let mut cur = Cursor {
        buf,
        pos: 128,
        path,
        base: 0,
    };
    while cur.remaining() >= 8 {
        let element_start = cur.pos as u64;
        let (ty, payload) = read_element(&mut cur)?;
        match ty {
            MI_MATRIX => {
                if let Some((name, arr)) = parse_matrix(payload, path, element_start + 8)? {
                    vars.insert(name, arr);
                }
            }
            MI_COMPRESSED => {
                let mut inflated = Vec::new();
                ZlibDecoder::new(payload)
                    .read_to_end(&mut inflated)
                    .map_err(|e| Error::CorruptFile {
                        path: path.to_path_buf(),
                        offset: element_start,
                        detail: format!("zlib inflate failed: {e}"),
                    })?;
                let mut inner = Cursor {
                    buf: &inflated,
                    pos: 0,
                    path,
                    base: element_start,
                };
                let (ity, ipayload) = read_element(&mut inner)?;
                if ity == MI_MATRIX {
                    if let Some((name, arr)) = parse_matrix(ipayload, path, element_start)? {
                        vars.insert(name, arr);
                    }
                }
            }
            // unknown top-level elements (utf8 comments etc.) are skipped
            _ => {}
        }
    }
    Ok(vars)
}

fn pad8(v: &mut Vec<u8>) {
    while v.len() % 8 != 0 {
        v.push(0);
    }
}

fn write_element(out: &mut Vec<u8>, ty: u32, payload: &[u8]) {
    out.extend_from_slice(&ty.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    pad8(out);
}

fn matrix_element(name: &str, dims: &[usize], data: &[f64]) -> Vec<u8> {
    let mut body = Vec::new();
    // array flags: mxDOUBLE_CLASS = 6
    let mut flags = Vec::new();
    flags.extend_from_slice(&6u32.to_le_bytes());
    flags.extend_from_slice(&0u32.to_le_bytes());
    write_element(&mut body, MI_UINT32, &flags);

    let mut dim_bytes = Vec::new();
    for &d in dims {
        dim_bytes.extend_from_slice(&(d as i32).to_le_bytes());
    }
    write_element(&mut body, MI_INT32, &dim_bytes);
    write_element(&mut body, MI_INT8, name.as_bytes());

    let mut real = Vec::with_capacity(data.len() * 8);
    for &v in data {
        real.extend_from_slice(&v.to_le_bytes());
    }
    write_element(&mut body, MI_DOUBLE, &real);
    body
}

/// Write double-precision variables as a little-endian MAT level 5 file.
/// `data` is column-major, matching the reader.
pub fn write_mat_v5(
    path: &Path,
    vars: &[(&str, &[usize], &[f64])],
    compressed: bool,
) -> Result<()> {
    let mut out = Vec::new();
    let mut header = format!(
        "MATLAB 5.0 MAT-file, written by diagbench, vars: {}",
        vars.len()
    )
    .into_bytes();
    header.resize(116, b' ');
    out.extend_from_slice(&header);
    out.extend_from_slice(&[0u8; 8]); // subsystem offset
    out.extend_from_slice(&0x0100u16.to_le_bytes());
    out.extend_from_slice(b"IM");

    for (name, dims, data) in vars {
        let body = matrix_element(name, dims, data);
        if compressed {
            let mut raw = Vec::new();
            write_element(&mut raw, MI_MATRIX, &body);
            let mut enc = ZlibEncoder::new(Vec::new(), flate2::Compression::default());
            enc.write_all(&raw).map_err(|e| Error::io(path, e))?;
            let deflated = enc.finish().map_err(|e| Error::io(path, e))?;
            // compressed payloads are not 8-aligned on disk
            out.extend_from_slice(&MI_COMPRESSED.to_le_bytes());
            out.extend_from_slice(&(deflated.len() as u32).to_le_bytes());
            out.extend_from_slice(&deflated);
            pad8(&mut out);
        } else {
            write_element(&mut out, MI_MATRIX, &body);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Convenience for the common single-variable fixture.
pub fn write_mat_v5_vec(path: &Path, name: &str, values: &[f64], compressed: bool) -> Result<()> {
    write_mat_v5(path, &[(name, &[values.len(), 1], values)], compressed)
}
