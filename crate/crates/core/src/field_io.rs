//! Field snapshots on disk.
//!
//! CSV: four header lines `d,<d>`, `L,<L>`, `M,<M>`, `name,<name>`, then one
//! sample per line in row-major order. Binary: a 32-byte header (`GCF1`,
//! `u32` d, `u32` M, `f64` L, 12 zero bytes) followed by `M^d` little-endian
//! `f64` samples in row-major order.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::spectral::{Grid, RealField, SpectralError};

pub const BINARY_MAGIC: &[u8; 4] = b"GCF1";
pub const BINARY_HEADER_LEN: usize = 32;
/// Format identifier reported by `--version`.
pub const FIELD_FORMAT_VERSION: &str = "gcf1";

#[derive(Debug, Error)]
pub enum FieldIoError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a GCF1 field file")]
    BadMagic,
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("bad sample on line {line}: {text}")]
    BadSample { line: usize, text: String },
    #[error("expected {expected} samples, found {found}")]
    WrongLength { expected: usize, found: usize },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldFormat {
    Csv,
    Binary,
}

impl FieldFormat {
    /// `.csv` selects CSV; anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FieldFormat::Csv,
            _ => FieldFormat::Binary,
        }
    }
}

pub fn write_csv<T: Scalar>(field: &RealField<T>, name: &str, mut out: impl Write) -> io::Result<()> {
    let g = field.grid();
    writeln!(out, "d,{}", g.dim())?;
    writeln!(out, "L,{}", g.length().as_f64())?;
    writeln!(out, "M,{}", g.points())?;
    writeln!(out, "name,{name}")?;
    for v in field.values() {
        writeln!(out, "{}", v.as_f64())?;
    }
    out.flush()
}

fn header_value(line: Option<io::Result<String>>, key: &str) -> Result<String, FieldIoError> {
    let line = line.ok_or_else(|| FieldIoError::BadHeader(format!("missing {key} line")))??;
    match line.trim_end().split_once(',') {
        Some((k, v)) if k.trim() == key => Ok(v.trim().to_string()),
        _ => Err(FieldIoError::BadHeader(format!("expected `{key},<value>`, got `{line}`"))),
    }
}

fn parse_header<V: std::str::FromStr>(text: &str, key: &str) -> Result<V, FieldIoError> {
    text.parse().map_err(|_| FieldIoError::BadHeader(format!("invalid {key}: `{text}`")))
}

/// Returns the field and its recorded name.
pub fn read_csv<T: Scalar>(input: impl BufRead) -> Result<(RealField<T>, String), FieldIoError> {
    let mut lines = input.lines();
    let d: usize = parse_header(&header_value(lines.next(), "d")?, "d")?;
    let l: f64 = parse_header(&header_value(lines.next(), "L")?, "L")?;
    let m: usize = parse_header(&header_value(lines.next(), "M")?, "M")?;
    let name = header_value(lines.next(), "name")?;
    let grid = Grid::new(d, T::lit(l), m)?;
    let mut values = Vec::with_capacity(grid.len());
    for (i, line) in lines.enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let v: f64 = text.parse().map_err(|_| FieldIoError::BadSample { line: i + 5, text: text.to_string() })?;
        values.push(T::lit(v));
    }
    if values.len() != grid.len() {
        return Err(FieldIoError::WrongLength { expected: grid.len(), found: values.len() });
    }
    Ok((RealField::new(grid, values)?, name))
}

pub fn write_binary<T: Scalar>(field: &RealField<T>, mut out: impl Write) -> io::Result<()> {
    let g = field.grid();
    let mut header = [0u8; BINARY_HEADER_LEN];
    header[..4].copy_from_slice(BINARY_MAGIC);
    header[4..8].copy_from_slice(&(g.dim() as u32).to_le_bytes());
    header[8..12].copy_from_slice(&(g.points() as u32).to_le_bytes());
    header[12..20].copy_from_slice(&g.length().as_f64().to_le_bytes());
    out.write_all(&header)?;
    for v in field.values() {
        out.write_all(&v.as_f64().to_le_bytes())?;
    }
    out.flush()
}

pub fn read_binary<T: Scalar>(mut input: impl Read) -> Result<RealField<T>, FieldIoError> {
    let mut header = [0u8; BINARY_HEADER_LEN];
    input.read_exact(&mut header).map_err(|_| FieldIoError::BadMagic)?;
    if &header[..4] != BINARY_MAGIC {
        return Err(FieldIoError::BadMagic);
    }
    let word = |r: std::ops::Range<usize>| u32::from_le_bytes(header[r].try_into().expect("4 bytes"));
    let d = word(4..8) as usize;
    let m = word(8..12) as usize;
    let l = f64::from_le_bytes(header[12..20].try_into().expect("8 bytes"));
    let grid = Grid::new(d, T::lit(l), m)?;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * grid.len() {
        return Err(FieldIoError::WrongLength { expected: grid.len(), found: bytes.len() / 8 });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    Ok(RealField::new(grid, values)?)
}

pub fn save<T: Scalar>(field: &RealField<T>, name: &str, path: &Path) -> Result<(), FieldIoError> {
    let out = BufWriter::new(File::create(path)?);
    match FieldFormat::from_path(path) {
        FieldFormat::Csv => write_csv(field, name, out)?,
        FieldFormat::Binary => write_binary(field, out)?,
    }
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<RealField<T>, FieldIoError> {
    let input = BufReader::new(File::open(path)?);
    match FieldFormat::from_path(path) {
        FieldFormat::Csv => Ok(read_csv(input)?.0),
        FieldFormat::Binary => read_binary(input),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RealField<f64> {
        let g = Grid::new(2, 1.5, 8).unwrap();
        RealField::from_fn(&g, |x: [f64; 2]| (x[0] * 3.0).sin() + x[1] * 0.1 + 1.0 / 3.0).unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let f = sample();
        let mut buf = Vec::new();
        write_csv(&f, "psi", &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("d,2\nL,1.5\nM,8\nname,psi\n"));
        let (back, name) = read_csv::<f64>(&buf[..]).unwrap();
        assert_eq!(name, "psi");
        assert_eq!(back.values(), f.values());
        assert_eq!(back.grid(), f.grid());
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let f = sample();
        let mut buf = Vec::new();
        write_binary(&f, &mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 8 * 64);
        assert_eq!(&buf[..4], b"GCF1");
        assert!(buf[20..32].iter().all(|&b| b == 0));
        let back = read_binary::<f64>(&buf[..]).unwrap();
        assert_eq!(back.values(), f.values());
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(matches!(read_binary::<f64>(&b"XXXX"[..]), Err(FieldIoError::BadMagic)));
        let short = "d,1\nL,1\nM,8\nname,n\n1\n2\n";
        assert!(matches!(read_csv::<f64>(short.as_bytes()), Err(FieldIoError::WrongLength { expected: 8, found: 2 })));
        let bad = "d,1\nL,1\nM,8\nname,n\n1\nfoo\n";
        assert!(matches!(read_csv::<f64>(bad.as_bytes()), Err(FieldIoError::BadSample { line: 6, .. })));
        assert!(matches!(read_csv::<f64>("L,1\n".as_bytes()), Err(FieldIoError::BadHeader(_))));
    }
}
