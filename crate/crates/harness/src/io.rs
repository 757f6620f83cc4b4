//! Matrix files: delimited text and the `KGPM` binary layout
//! (magic, version byte, `u64` rows, `u64` cols, little-endian `f64`
//! values in column-major order).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use smtgpr::DenseMatrix;

use crate::error::{io_err, HarnessError, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"KGPM";
pub const BINARY_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MatrixFormat {
    Csv,
    #[serde(rename = "binary-v1", alias = "binary")]
    #[value(name = "binary-v1", alias = "binary")]
    Binary,
}

impl MatrixFormat {
    /// `.kgpm` and `.bin` are binary, anything else is CSV.
    pub fn from_path(path: &Path) -> MatrixFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("kgpm") | Some("bin") => MatrixFormat::Binary,
            _ => MatrixFormat::Csv,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            MatrixFormat::Csv => "csv",
            MatrixFormat::Binary => "kgpm",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CsvOptions {
    pub has_header: bool,
}

pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<DenseMatrix> {
    match format {
        MatrixFormat::Csv => load_csv(path, CsvOptions::default()),
        MatrixFormat::Binary => load_binary(path),
    }
}

pub fn save_matrix(path: &Path, m: &DenseMatrix, format: MatrixFormat) -> Result<()> {
    match format {
        MatrixFormat::Csv => save_csv(path, m),
        MatrixFormat::Binary => save_binary(path, m),
    }
}

fn malformed(path: &Path, format: &'static str, reason: impl Into<String>) -> HarnessError {
    HarnessError::Malformed {
        path: path.to_path_buf(),
        format,
        reason: reason.into(),
    }
}

pub fn load_csv(path: &Path, options: CsvOptions) -> Result<DenseMatrix> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut values: Vec<f64> = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(malformed(
                    path,
                    "CSV",
                    format!("row {} has {} fields, expected {c}", rows + 1, record.len()),
                ))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| malformed(path, "CSV", format!("non-numeric cell {field:?} in row {}", rows + 1)))?;
            values.push(v);
        }
        rows += 1;
    }
    let Some(cols) = cols else {
        return Err(malformed(path, "CSV", "no data rows"));
    };
    Ok(DenseMatrix::from_row_slice(rows, cols, &values))
}

/// Values are written with the shortest representation that parses back to
/// the same `f64`.
pub fn save_csv(path: &Path, m: &DenseMatrix) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut writer = csv::WriterBuilder::new().from_writer(BufWriter::new(file));
    for row in m.row_iter() {
        writer.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    writer.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_binary(out: &mut impl Write, m: &DenseMatrix) -> std::io::Result<()> {
    out.write_all(BINARY_MAGIC)?;
    out.write_all(&[BINARY_VERSION])?;
    out.write_all(&(m.nrows() as u64).to_le_bytes())?;
    out.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for v in m.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads one binary matrix from a stream; `Err(reason)` on malformed input.
pub fn read_binary(input: &mut impl Read) -> std::result::Result<DenseMatrix, String> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(|_| "truncated header".to_string())?;
    if &magic != BINARY_MAGIC {
        return Err(format!("bad magic {magic:?}"));
    }
    let mut version = [0u8; 1];
    input.read_exact(&mut version).map_err(|_| "truncated header".to_string())?;
    if version[0] != BINARY_VERSION {
        return Err(format!("unsupported version {}", version[0]));
    }
    let mut word = [0u8; 8];
    input.read_exact(&mut word).map_err(|_| "truncated header".to_string())?;
    let rows = u64::from_le_bytes(word) as usize;
    input.read_exact(&mut word).map_err(|_| "truncated header".to_string())?;
    let cols = u64::from_le_bytes(word) as usize;
    if rows == 0 || cols == 0 {
        return Err(format!("empty matrix {rows}x{cols}"));
    }
    let len = rows
        .checked_mul(cols)
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or_else(|| format!("size {rows}x{cols} overflows"))?;
    let mut values = Vec::with_capacity(len.min(1 << 24));
    for _ in 0..len {
        input
            .read_exact(&mut word)
            .map_err(|_| format!("truncated data: expected {len} values"))?;
        values.push(f64::from_le_bytes(word));
    }
    Ok(DenseMatrix::from_vec(rows, cols, values))
}

pub fn save_binary(path: &Path, m: &DenseMatrix) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    write_binary(&mut out, m).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn load_binary(path: &Path) -> Result<DenseMatrix> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut input = BufReader::new(file);
    let m = read_binary(&mut input).map_err(|r| malformed(path, "binary-v1", r))?;
    let mut extra = [0u8; 1];
    match input.read(&mut extra) {
        Ok(0) => Ok(m),
        Ok(_) => Err(malformed(path, "binary-v1", "trailing bytes after data")),
        Err(e) => Err(io_err(path)(e)),
    }
}

/// Loads a 0/1 label column (1 = abnormal).
pub fn load_labels(path: &Path, format: MatrixFormat) -> Result<Vec<bool>> {
    let m = load_matrix(path, format)?;
    if m.ncols() != 1 {
        return Err(HarnessError::Dimension(format!(
            "label file {} must have one column, found {}",
            path.display(),
            m.ncols()
        )));
    }
    m.iter()
        .map(|&v| match v {
            0.0 => Ok(false),
            1.0 => Ok(true),
            _ => Err(malformed(path, "labels", format!("label {v} is not 0 or 1"))),
        })
        .collect()
}

pub fn labels_to_matrix(labels: &[bool]) -> DenseMatrix {
    DenseMatrix::from_iterator(labels.len(), 1, labels.iter().map(|&l| if l { 1.0 } else { 0.0 }))
}
