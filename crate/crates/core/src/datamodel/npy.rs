//! Reading and writing 2-D float matrices in the numpy `.npy` format.
//!
//! Only what the interchange files need is supported: version 1.0 headers on
//! write (1.0 and 2.0 on read), C order, and little- or big-endian `f4`/`f8`
//! payloads. Everything is widened to `f64` on read.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// The npy magic string.
pub const MAGIC: [u8; 6] = *b"\x93NUMPY";

const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Endian {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct FloatDescr {
    endian: Endian,
    width: usize,
}

impl FloatDescr {
    fn parse(descr: &str) -> Result<Self> {
        let mut chars = descr.chars();
        let endian = match chars.next() {
            Some('<') => Endian::Little,
            Some('>') => Endian::Big,
            Some('=') if cfg!(target_endian = "little") => Endian::Little,
            Some('=') => Endian::Big,
            _ => return Err(Error::Dtype(format!("unsupported descr '{descr}'"))),
        };
        match chars.as_str() {
            "f4" => Ok(FloatDescr { endian, width: 4 }),
            "f8" => Ok(FloatDescr { endian, width: 8 }),
            other => Err(Error::Dtype(format!(
                "expected a 4- or 8-byte float dtype, found '{other}'"
            ))),
        }
    }

    fn decode(&self, bytes: &[u8]) -> f64 {
        match (self.width, self.endian) {
            (4, Endian::Little) => f32::from_le_bytes(bytes.try_into().unwrap()) as f64,
            (4, Endian::Big) => f32::from_be_bytes(bytes.try_into().unwrap()) as f64,
            (_, Endian::Little) => f64::from_le_bytes(bytes.try_into().unwrap()),
            (_, Endian::Big) => f64::from_be_bytes(bytes.try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
struct Header {
    descr: FloatDescr,
    shape: Vec<usize>,
}

/// Reads a 2-D float matrix from an `.npy` file.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Shape(m) => Error::Shape(format!("{}: {m}", path.display())),
        Error::Dtype(m) => Error::Dtype(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Decodes a 2-D float matrix from the bytes of an `.npy` file.
pub fn decode_matrix(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let mut cursor = bytes;
    let header = read_header(&mut cursor)?;
    if header.shape.len() != 2 {
        return Err(Error::Shape(format!(
            "expected a 2-D array, found ndim = {}",
            header.shape.len()
        )));
    }
    let (rows, cols) = (header.shape[0], header.shape[1]);
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Shape("shape overflows".into()))?;
    let width = header.descr.width;
    if cursor.len() != count * width {
        return Err(Error::Shape(format!(
            "header shape ({rows}, {cols}) needs {count} values, payload holds {} bytes ({} values)",
            cursor.len(),
            cursor.len() as f64 / width as f64
        )));
    }
    let values: Vec<f64> = cursor
        .chunks_exact(width)
        .map(|chunk| header.descr.decode(chunk))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

fn read_header(cursor: &mut &[u8]) -> Result<Header> {
    let mut magic = [0u8; 6];
    cursor
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for npy magic".into()))?;
    if magic != MAGIC {
        return Err(Error::Format("missing npy magic string".into()));
    }
    let mut version = [0u8; 2];
    cursor
        .read_exact(&mut version)
        .map_err(|_| Error::Format("truncated npy version".into()))?;
    let header_len = match version[0] {
        1 => {
            let mut len = [0u8; 2];
            cursor
                .read_exact(&mut len)
                .map_err(|_| Error::Format("truncated header length".into()))?;
            u16::from_le_bytes(len) as usize
        }
        2 => {
            let mut len = [0u8; 4];
            cursor
                .read_exact(&mut len)
                .map_err(|_| Error::Format("truncated header length".into()))?;
            u32::from_le_bytes(len) as usize
        }
        v => {
            return Err(Error::Format(format!(
                "unsupported npy version {v}.{}",
                version[1]
            )))
        }
    };
    if cursor.len() < header_len {
        return Err(Error::Format("header length exceeds file size".into()));
    }
    let (dict, rest) = cursor.split_at(header_len);
    *cursor = rest;
    let dict = std::str::from_utf8(dict)
        .map_err(|_| Error::Format("header is not valid text".into()))?;
    parse_header_dict(dict)
}

/// Parses the python-literal header dict, e.g.
/// `{'descr': '<f8', 'fortran_order': False, 'shape': (2, 3), }`.
fn parse_header_dict(text: &str) -> Result<Header> {
    let body = text
        .trim()
        .strip_prefix('{')
        .and_then(|t| t.trim_end().strip_suffix('}'))
        .ok_or_else(|| Error::Format(format!("header is not a dict: {text:?}")))?;

    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    let mut rest = body.trim();
    while !rest.is_empty() {
        let (key, after) = take_quoted(rest)
            .ok_or_else(|| Error::Format(format!("bad header key near {rest:?}")))?;
        let after = after
            .trim_start()
            .strip_prefix(':')
            .ok_or_else(|| Error::Format(format!("missing ':' after '{key}'")))?
            .trim_start();
        let after = match key {
            "descr" => {
                let (value, after) = take_quoted(after)
                    .ok_or_else(|| Error::Format("descr must be a string".into()))?;
                descr = Some(value.to_string());
                after
            }
            "fortran_order" => {
                if let Some(a) = after.strip_prefix("False") {
                    fortran = Some(false);
                    a
                } else if let Some(a) = after.strip_prefix("True") {
                    fortran = Some(true);
                    a
                } else {
                    return Err(Error::Format("fortran_order must be True or False".into()));
                }
            }
            "shape" => {
                let inner = after
                    .strip_prefix('(')
                    .ok_or_else(|| Error::Format("shape must be a tuple".into()))?;
                let close = inner
                    .find(')')
                    .ok_or_else(|| Error::Format("unterminated shape tuple".into()))?;
                let dims = inner[..close]
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.trim_end_matches('L')
                            .parse::<usize>()
                            .map_err(|_| Error::Format(format!("bad shape entry '{s}'")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                shape = Some(dims);
                &inner[close + 1..]
            }
            other => return Err(Error::Format(format!("unexpected header key '{other}'"))),
        };
        rest = after.trim_start();
        rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
    }

    let descr = descr.ok_or_else(|| Error::Format("header lacks 'descr'".into()))?;
    let fortran = fortran.ok_or_else(|| Error::Format("header lacks 'fortran_order'".into()))?;
    let shape = shape.ok_or_else(|| Error::Format("header lacks 'shape'".into()))?;
    if fortran {
        return Err(Error::Format("Fortran-ordered arrays are not supported".into()));
    }
    Ok(Header {
        descr: FloatDescr::parse(&descr)?,
        shape,
    })
}

fn take_quoted(s: &str) -> Option<(&str, &str)> {
    let quote = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let inner = &s[1..];
    let end = inner.find(quote)?;
    Some((&inner[..end], &inner[end + 1..]))
}

/// Encodes a matrix as a version 1.0 `.npy` file with `<f8` payload.
pub fn encode_matrix(matrix: &DMatrix<f64>) -> Vec<u8> {
    let dict = format!(
        "{{'descr': '<f8', 'fortran_order': False, 'shape': ({}, {}), }}",
        matrix.nrows(),
        matrix.ncols()
    );
    // magic + version + u16 length, then the dict padded with spaces and a
    // trailing newline so the payload starts on an aligned offset
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    let header_len = dict.len() + pad + 1;

    let mut out = Vec::with_capacity(unpadded + pad + matrix.len() * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.extend(std::iter::repeat_n(b' ', pad));
    out.push(b'\n');
    for row in matrix.row_iter() {
        for value in row.iter() {
            out.extend_from_slice(&value.to_le_bytes());
        }
    }
    out
}

/// Writes a matrix to `path` as `.npy`, replacing the file atomically.
pub fn write_matrix(path: impl AsRef<Path>, matrix: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, &encode_matrix(matrix))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::io(path, io::Error::other("path has no file name")))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::io(path, e))
}
