//! Readers and writers for the Movielens rating format and the sparse
//! `target idx:val ...` text format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Dataset, RatingRecord, SparseRow};

/// Parses a Movielens rating file (`user<d>item<d>rating<d>timestamp`).
///
/// `delimiter` is `"::"` for ML-10M/ML-1M, `"\t"` for ML-100K and `","`
/// for the CSV releases.
pub fn parse_movielens(path: impl AsRef<Path>, delimiter: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_movielens(BufReader::new(file), delimiter).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_movielens(reader: impl BufRead, delimiter: &str) -> Result<Dataset> {
    if delimiter.is_empty() {
        return Err(Error::Config("empty delimiter".into()));
    }
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_rating_line(line, delimiter, idx + 1)?);
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset::new(records))
}

fn parse_rating_line(line: &str, delimiter: &str, line_no: usize) -> Result<RatingRecord> {
    let fields: Vec<&str> = line.split(delimiter).collect();
    if fields.len() != 4 {
        let field = fields.len().min(4) + 1;
        return Err(Error::Parse {
            line: line_no,
            field,
            message: format!("expected 4 fields, found {}", fields.len()),
        });
    }
    let int = |i: usize| -> Result<i64> {
        fields[i].trim().parse::<i64>().map_err(|_| Error::Parse {
            line: line_no,
            field: i + 1,
            message: format!("not an integer: {:?}", fields[i]),
        })
    };
    let user_id = int(0)?;
    let item_id = int(1)?;
    let rating = fields[2]
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|r| r.is_finite())
        .ok_or_else(|| Error::Parse {
            line: line_no,
            field: 3,
            message: format!("not a finite number: {:?}", fields[2]),
        })?;
    let timestamp = int(3)?;
    if timestamp < 0 {
        return Err(Error::Parse {
            line: line_no,
            field: 4,
            message: "negative timestamp".into(),
        });
    }
    Ok(RatingRecord {
        user_id,
        item_id,
        rating,
        timestamp,
    })
}

pub fn write_movielens(path: impl AsRef<Path>, data: &Dataset, delimiter: &str) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in data.records() {
        writeln!(
            out,
            "{}{d}{}{d}{}{d}{}",
            r.user_id,
            r.item_id,
            r.rating,
            r.timestamp,
            d = delimiter
        )
        .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Rows read from a sparse text file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FmText {
    pub rows: Vec<SparseRow>,
    /// Largest index seen plus one.
    pub n_cols: usize,
    /// Lines that needed reordering, duplicate merging or zero dropping.
    pub warnings: Vec<String>,
}

pub fn parse_fm_text(path: impl AsRef<Path>) -> Result<FmText> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_fm_text(BufReader::new(file))
}

pub fn read_fm_text(reader: impl BufRead) -> Result<FmText> {
    let mut out = FmText::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        let mut tokens = line.split_whitespace();
        let Some(target) = tokens.next() else {
            continue;
        };
        let target = target.parse::<f64>().map_err(|_| Error::Parse {
            line: line_no,
            field: 1,
            message: format!("bad target {target:?}"),
        })?;
        let mut entries = Vec::new();
        for (t, tok) in tokens.enumerate() {
            let field = t + 2;
            let bad = |message: String| Error::Parse {
                line: line_no,
                field,
                message,
            };
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| bad(format!("expected idx:val, got {tok:?}")))?;
            if idx.trim_start().starts_with('-') {
                return Err(bad(format!("negative index {idx}")));
            }
            let idx = idx
                .parse::<usize>()
                .map_err(|_| bad(format!("bad index {idx:?}")))?;
            let val = val
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("bad value {val:?}")))?;
            entries.push((idx, val));
        }
        if let Some(note) = normalize_entries(&mut entries) {
            out.warnings.push(format!("line {line_no}: {note}"));
        }
        if let Some(&(c, _)) = entries.last() {
            out.n_cols = out.n_cols.max(c + 1);
        }
        out.rows.push(SparseRow::new(target, entries));
    }
    Ok(out)
}

/// Sorts by column, sums duplicates and drops zero weights. Returns a note
/// when anything changed.
fn normalize_entries(entries: &mut Vec<(usize, f64)>) -> Option<String> {
    let sorted = entries.windows(2).all(|w| w[0].0 < w[1].0);
    let has_zero = entries.iter().any(|e| e.1 == 0.0);
    if sorted && !has_zero {
        return None;
    }
    entries.sort_by_key(|e| e.0);
    let before = entries.len();
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
    for &(c, w) in entries.iter() {
        match merged.last_mut() {
            Some(last) if last.0 == c => last.1 += w,
            _ => merged.push((c, w)),
        }
    }
    let n_merged = before - merged.len();
    merged.retain(|e| e.1 != 0.0);
    *entries = merged;
    Some(format!(
        "reordered entries ({n_merged} duplicates merged, {} kept)",
        entries.len()
    ))
}

pub fn write_fm_text<'a>(
    path: impl AsRef<Path>,
    rows: impl IntoIterator<Item = &'a SparseRow>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        write_fm_line(&mut out, row).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_fm_line(out: &mut impl Write, row: &SparseRow) -> std::io::Result<()> {
    write!(out, "{}", row.target)?;
    for &(c, w) in &row.entries {
        write!(out, " {c}:{w}")?;
    }
    writeln!(out)
}
