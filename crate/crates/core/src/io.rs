//! Feature and label file formats.
//!
//! * Feature CSV: header `id,f0,...,f{d-1}`, one row per sample.
//! * Feature `fbin`: magic `FINS`, `u16` version (1), `u32` dim, `u64` count,
//!   `count * dim` little-endian `f32` values row-major, then a `u32` byte
//!   length followed by that many bytes of newline-separated UTF-8 ids.
//! * Label CSV: header `id,<name>,...`; an empty cell is a missing value.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::{FeatureFormat, FeatureMatrix, LabelTable, RawFeatures, SplitAssignment};
use crate::error::{Error, Result};

pub const FBIN_MAGIC: &[u8; 4] = b"FINS";
pub const FBIN_VERSION: u16 = 1;
const FBIN_HEADER_LEN: usize = 4 + 2 + 4 + 8;

pub fn checksum_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_checksum(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(checksum_bytes(&bytes))
}

/// Loads and validates a feature file. When `expected_checksum` is given the
/// SHA-256 of the file bytes must match it.
pub fn load_features(path: &Path, format: FeatureFormat, expected_checksum: Option<&str>) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if let Some(expected) = expected_checksum {
        let found = checksum_bytes(&bytes);
        if !found.eq_ignore_ascii_case(expected) {
            return Err(Error::Checksum {
                path: path.to_path_buf(),
                expected: expected.to_string(),
                found,
            });
        }
    }
    let raw = match format {
        FeatureFormat::Csv => parse_features_csv(path, &bytes)?,
        FeatureFormat::Fbin => parse_fbin(path, &bytes)?,
    };
    FeatureMatrix::try_from(raw)
}

/// Parses without validating, so callers can report every violation.
pub fn read_raw_features(path: &Path, format: FeatureFormat) -> Result<RawFeatures> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        FeatureFormat::Csv => parse_features_csv(path, &bytes),
        FeatureFormat::Fbin => parse_fbin(path, &bytes),
    }
}

fn csv_reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize);
    Error::format(path, line, e.to_string())
}

fn parse_features_csv(path: &Path, bytes: &[u8]) -> Result<RawFeatures> {
    let mut reader = csv_reader(bytes);
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_err(path, e))?,
        None => return Err(Error::format(path, Some(1), "empty file")),
    };
    if header.get(0).map(str::trim) != Some("id") || header.len() < 2 {
        return Err(Error::format(
            path,
            Some(1),
            "malformed header: expected `id,f0,...` with at least one feature column",
        ));
    }
    let dim = header.len() - 1;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (i, record) in records.enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| csv_err(path, e))?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != dim + 1 {
            return Err(Error::format(
                path,
                Some(line),
                format!("inconsistent width: {} values under a {dim}-feature header", record.len() - 1),
            ));
        }
        ids.push(record[0].to_string());
        for (c, cell) in record.iter().skip(1).enumerate() {
            let v: f32 = cell.trim().parse().map_err(|_| {
                Error::format(path, Some(line), format!("non-numeric cell '{cell}' in column {}", c + 1))
            })?;
            values.push(v);
        }
    }
    Ok(RawFeatures { ids, values, dim })
}

fn parse_fbin(path: &Path, bytes: &[u8]) -> Result<RawFeatures> {
    let bad = |msg: String| Error::format(path, None, msg);
    if bytes.len() < FBIN_HEADER_LEN {
        return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != FBIN_MAGIC {
        return Err(bad("bad magic, expected FINS".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FBIN_VERSION {
        return Err(bad(format!("unsupported fbin version {version}")));
    }
    let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[10..18].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(bad("dim must be at least 1".into()));
    }
    let row_bytes = dim * 4;
    let body = &bytes[FBIN_HEADER_LEN..];
    let data_len = count
        .checked_mul(row_bytes)
        .ok_or_else(|| bad("declared shape overflows".into()))?;
    if body.len() < data_len {
        return Err(bad(format!(
            "truncated: declared {count} rows of dim {dim}, data for {} complete rows",
            body.len() / row_bytes
        )));
    }
    let values: Vec<f32> = body[..data_len]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let rest = &body[data_len..];
    if rest.len() < 4 {
        return Err(bad("truncated: missing id block".into()));
    }
    let id_len = u32::from_le_bytes(rest[0..4].try_into().unwrap()) as usize;
    let id_bytes = &rest[4..];
    if id_bytes.len() < id_len {
        return Err(bad(format!(
            "truncated id block: declared {id_len} bytes, found {}",
            id_bytes.len()
        )));
    }
    if id_bytes.len() > id_len {
        return Err(bad(format!("{} trailing bytes after id block", id_bytes.len() - id_len)));
    }
    let text = std::str::from_utf8(id_bytes).map_err(|e| bad(format!("id block is not UTF-8: {e}")))?;
    let text = text.strip_suffix('\n').unwrap_or(text);
    let ids: Vec<String> = if text.is_empty() {
        Vec::new()
    } else {
        text.split('\n').map(str::to_string).collect()
    };
    if ids.len() != count {
        return Err(bad(format!("id block holds {} ids for {count} rows", ids.len())));
    }
    Ok(RawFeatures { ids, values, dim })
}

pub fn encode_fbin(m: &FeatureMatrix) -> Vec<u8> {
    let ids = m.ids().join("\n");
    let mut out = Vec::with_capacity(FBIN_HEADER_LEN + m.values().len() * 4 + 4 + ids.len());
    out.extend_from_slice(FBIN_MAGIC);
    out.extend_from_slice(&FBIN_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(m.n_samples() as u64).to_le_bytes());
    for v in m.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(ids.len() as u32).to_le_bytes());
    out.extend_from_slice(ids.as_bytes());
    out
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_features(m: &FeatureMatrix, path: &Path, format: FeatureFormat) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    match format {
        FeatureFormat::Fbin => w.write_all(&encode_fbin(m)).map_err(io)?,
        FeatureFormat::Csv => {
            write!(w, "id").map_err(io)?;
            for j in 0..m.dim() {
                write!(w, ",f{j}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
            for i in 0..m.n_samples() {
                write!(w, "{}", m.ids()[i]).map_err(io)?;
                for v in m.row(i) {
                    write!(w, ",{v}").map_err(io)?;
                }
                writeln!(w).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn load_labels(path: &Path) -> Result<LabelTable> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv_reader(&bytes);
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_err(path, e))?,
        None => return Err(Error::format(path, Some(1), "empty file")),
    };
    if header.get(0).map(str::trim) != Some("id") {
        return Err(Error::format(path, Some(1), "malformed header: first column must be `id`"));
    }
    let names: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut ids = Vec::new();
    let mut cols: Vec<Vec<String>> = vec![Vec::new(); names.len()];
    let mut seen = std::collections::HashSet::new();
    for (i, record) in records.enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| csv_err(path, e))?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != names.len() + 1 {
            return Err(Error::format(
                path,
                Some(line),
                format!("expected {} cells, found {}", names.len() + 1, record.len()),
            ));
        }
        let id = record[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        ids.push(id);
        for (c, cell) in record.iter().skip(1).enumerate() {
            cols[c].push(cell.trim().to_string());
        }
    }
    let mut columns = BTreeMap::new();
    for (name, values) in names.into_iter().zip(cols) {
        if columns.insert(name.clone(), values).is_some() {
            return Err(Error::format(path, Some(1), format!("duplicate column '{name}'")));
        }
    }
    LabelTable::new(ids, columns)
}

pub fn write_labels(t: &LabelTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let names: Vec<&str> = t.column_names().collect();
    let cols: Vec<&[String]> = names.iter().map(|n| t.column(n).unwrap()).collect();
    let e = |e: csv::Error| Error::format(path, None, e.to_string());
    w.write_record(std::iter::once("id").chain(names.iter().copied())).map_err(e)?;
    for (i, id) in t.ids().iter().enumerate() {
        let row = std::iter::once(id.as_str()).chain(cols.iter().map(|c| {
            let v = c[i].as_str();
            if v == crate::data::MISSING {
                ""
            } else {
                v
            }
        }));
        w.write_record(row).map_err(e)?;
    }
    w.flush().map_err(|err| Error::io(path, err))
}

/// Writes `id,partition` rows sorted by id.
pub fn write_split(split: &SplitAssignment, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "id,partition").map_err(io)?;
    for (id, p) in &split.assignment {
        writeln!(w, "{id},{p}").map_err(io)?;
    }
    w.flush().map_err(io)
}
