//! Minimal NPY (v1/v2/v3) reader and `<f8` writer.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NpyDtype {
    U8,
    F32,
    F64,
    I64,
}

/// Array read from an NPY file, converted to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct NpyArray {
    pub dtype: NpyDtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn header_value<'a>(header: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}':");
    let start = header
        .find(&pat)
        .ok_or_else(|| Error::format(format!("NPY header lacks {key}")))?
        + pat.len();
    Ok(header[start..].trim_start())
}

pub fn parse_npy(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(Error::format("missing NPY magic"));
    }
    let major = bytes[6];
    let (header_len, start) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(Error::format("NPY header truncated"));
            }
            (u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize, 12)
        }
        v => return Err(Error::format(format!("unsupported NPY version {v}"))),
    };
    let header = bytes
        .get(start..start + header_len)
        .ok_or_else(|| Error::format("NPY header truncated"))?;
    let header = std::str::from_utf8(header).map_err(|_| Error::format("NPY header is not text"))?;

    let descr = header_value(header, "descr")?;
    let descr = descr
        .trim_start_matches(['\'', '"'])
        .split(['\'', '"'])
        .next()
        .unwrap_or("");
    let (dtype, width) = match descr {
        "|u1" | "<u1" | "u1" => (NpyDtype::U8, 1),
        "<f4" => (NpyDtype::F32, 4),
        "<f8" => (NpyDtype::F64, 8),
        "<i8" => (NpyDtype::I64, 8),
        other => return Err(Error::format(format!("unsupported NPY dtype {other:?}"))),
    };
    if header_value(header, "fortran_order")?.starts_with("True") {
        return Err(Error::format("Fortran-ordered NPY arrays are not supported"));
    }
    let shape_text = header_value(header, "shape")?;
    let close = shape_text
        .find(')')
        .ok_or_else(|| Error::format("malformed NPY shape"))?;
    let shape = shape_text[1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| Error::format("malformed NPY shape")))
        .collect::<Result<Vec<_>>>()?;

    let count: usize = shape.iter().product();
    let body = &bytes[start + header_len..];
    if body.len() != count * width {
        return Err(Error::format(format!(
            "NPY payload has {} bytes, shape {shape:?} needs {}",
            body.len(),
            count * width
        )));
    }
    let data = match dtype {
        NpyDtype::U8 => body.iter().map(|&b| b as f64).collect(),
        NpyDtype::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        NpyDtype::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        NpyDtype::I64 => body
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    Ok(NpyArray { dtype, shape, data })
}

pub fn read_npy(path: &Path) -> Result<NpyArray> {
    parse_npy(&fs::read(path)?)
}

/// Version-1 NPY bytes of a little-endian `f64` array.
pub fn encode_npy_f64(shape: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(Error::usage("NPY shape does not match data length"));
    }
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    let shape_text = if dims.len() == 1 {
        format!("({},)", dims[0])
    } else {
        format!("({})", dims.join(", "))
    };
    let mut header = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': {shape_text}, }}");
    // Pad so the payload starts on a 64-byte boundary; the header ends in '\n'.
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + 8 * data.len());
    out.extend_from_slice(b"\x93NUMPY\x01\x00");
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write_npy_f64(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    let bytes = encode_npy_f64(shape, data)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}
