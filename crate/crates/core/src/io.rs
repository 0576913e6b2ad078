//! Reading and writing labeled arrays.
//!
//! Two formats are supported:
//!
//! * binary PGM (`P5`), with one-byte samples for `maxval < 256` and
//!   big-endian two-byte samples otherwise;
//! * CSV, one row per line of comma-separated decimal labels, no header.

use std::fs;
use std::path::Path;

use crate::{Error, Label, LabeledArray, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    /// 8-bit PGM, maxval 255.
    Pgm,
    /// 16-bit PGM, maxval 65535.
    Pgm16,
    Csv,
}

impl Format {
    /// Guesses the format from a file extension. `.pgm` maps to the 8-bit variant.
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "pgm" => Some(Format::Pgm),
            "csv" | "txt" => Some(Format::Csv),
            _ => None,
        }
    }
}

/// Loads an array; `Pgm` and `Pgm16` both accept either sample width.
pub fn load_array(path: impl AsRef<Path>, format: Format) -> Result<LabeledArray> {
    let bytes = fs::read(path)?;
    match format {
        Format::Pgm | Format::Pgm16 => decode_pgm(&bytes),
        Format::Csv => decode_csv(&bytes),
    }
}

/// Loads an array, picking the format from the extension (CSV if unknown).
pub fn load_array_auto(path: impl AsRef<Path>) -> Result<LabeledArray> {
    let path = path.as_ref();
    let format = Format::from_path(path).unwrap_or(Format::Csv);
    load_array(path, format)
}

pub fn save_array(arr: &LabeledArray, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let bytes = match format {
        Format::Pgm => encode_pgm(arr, 255)?,
        Format::Pgm16 => encode_pgm(arr, 65535)?,
        Format::Csv => encode_csv(arr).into_bytes(),
    };
    write_atomic(path.as_ref(), &bytes)
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    if let Err(err) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(err.into());
    }
    Ok(())
}

/// Netpbm header fields plus the offset of the first sample byte.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PnmHeader {
    pub magic: [u8; 2],
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    pub data_offset: usize,
}

pub(crate) fn parse_pnm_header(bytes: &[u8]) -> Result<PnmHeader> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::parse(0, "missing netpbm magic number"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        if i == 0 && pos == 2 {
            return Err(Error::parse(pos as u64, "expected whitespace after magic"));
        }
        let start = pos;
        while let Some(b) = bytes.get(pos).filter(|b| b.is_ascii_digit()) {
            *field = field
                .checked_mul(10)
                .and_then(|v| v.checked_add(u64::from(b - b'0')))
                .ok_or_else(|| Error::parse(start as u64, "header value overflows"))?;
            pos += 1;
        }
        if pos == start {
            return Err(Error::parse(pos as u64, "expected a decimal header value"));
        }
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::parse(pos as u64, "header must end with one whitespace byte")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::parse(2, "image dimensions must be positive"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(2, format!("maxval {maxval} outside 1..=65535")));
    }
    Ok(PnmHeader {
        magic,
        width: width as usize,
        height: height as usize,
        maxval: maxval as u32,
        data_offset: pos,
    })
}

/// Reads `count` samples starting at `header.data_offset`.
pub(crate) fn read_samples(bytes: &[u8], header: &PnmHeader, count: usize) -> Result<Vec<u32>> {
    let width = if header.maxval < 256 { 1 } else { 2 };
    let needed = count
        .checked_mul(width)
        .ok_or_else(|| Error::parse(0, "image too large"))?;
    let data = &bytes[header.data_offset..];
    if data.len() < needed {
        return Err(Error::parse(
            bytes.len() as u64,
            format!("truncated payload: expected {needed} sample bytes, found {}", data.len()),
        ));
    }
    let mut out = Vec::with_capacity(count);
    for (i, chunk) in data[..needed].chunks_exact(width).enumerate() {
        let value = if width == 1 {
            u32::from(chunk[0])
        } else {
            u32::from(u16::from_be_bytes([chunk[0], chunk[1]]))
        };
        if value > header.maxval {
            return Err(Error::parse(
                (header.data_offset + i * width) as u64,
                format!("sample {value} exceeds maxval {}", header.maxval),
            ));
        }
        out.push(value);
    }
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabeledArray> {
    let header = parse_pnm_header(bytes)?;
    if &header.magic != b"P5" {
        return Err(Error::parse(0, "expected binary PGM (P5)"));
    }
    let samples = read_samples(bytes, &header, header.width * header.height)?;
    LabeledArray::new(header.height, header.width, samples)
}

/// Encodes as P5 with the given maxval; every label must be `<= maxval`.
pub fn encode_pgm(arr: &LabeledArray, maxval: u32) -> Result<Vec<u8>> {
    if maxval == 0 || maxval > 65535 {
        return Err(Error::InvalidConfig(format!("PGM maxval {maxval} outside 1..=65535")));
    }
    let max = arr.max_label();
    if max > maxval {
        return Err(Error::Range {
            label: u64::from(max),
            max: u64::from(maxval),
        });
    }
    let mut out = format!("P5\n{} {}\n{}\n", arr.cols(), arr.rows(), maxval).into_bytes();
    if maxval < 256 {
        out.extend(arr.labels().iter().map(|&l| l as u8));
    } else {
        for &l in arr.labels() {
            out.extend_from_slice(&(l as u16).to_be_bytes());
        }
    }
    Ok(out)
}

pub fn decode_csv(bytes: &[u8]) -> Result<LabeledArray> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::parse(e.valid_up_to() as u64, "CSV is not valid UTF-8"))?;
    let mut labels = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        let content = line.trim_end_matches(['\n', '\r']);
        if content.trim().is_empty() {
            continue;
        }
        let mut field_start = line_start;
        let mut n = 0;
        for field in content.split(',') {
            let trimmed = field.trim();
            let value: Label = trimmed.parse().map_err(|_| {
                Error::parse(field_start as u64, format!("invalid label `{trimmed}`"))
            })?;
            labels.push(value);
            field_start += field.len() + 1;
            n += 1;
        }
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => {
                return Err(Error::parse(
                    line_start as u64,
                    format!("row {} has {n} values, expected {c}", rows + 1),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::parse(0, "empty CSV"))?;
    LabeledArray::new(rows, cols, labels)
}

pub fn encode_csv(arr: &LabeledArray) -> String {
    let mut out = String::with_capacity(arr.len() * 3);
    for row in arr.labels().chunks(arr.cols()) {
        for (i, label) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&label.to_string());
        }
        out.push('\n');
    }
    out
}
