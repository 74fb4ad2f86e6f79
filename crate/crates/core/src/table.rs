//! Shared comma-separated table helpers and atomic file output.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use ndarray::Array2;

use crate::records::{RecordsError, SleepStage, NUM_CLASSES};

/// Shortest decimal representation that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory followed by a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Header of a per-epoch stage distribution table.
pub fn distribution_header() -> String {
    let stages: Vec<&str> = SleepStage::CLASSES.iter().map(|s| s.token()).collect();
    format!("subject,epoch,{}", stages.join(","))
}

/// Writes a T×K distribution as `subject,epoch,W,N1,N2,N3,R` rows.
/// `epochs` gives the epoch index printed for each row.
pub fn write_distribution<W: Write>(
    out: &mut W,
    subject: &str,
    epochs: &[usize],
    values: &Array2<f64>,
    with_header: bool,
) -> io::Result<()> {
    if with_header {
        writeln!(out, "{}", distribution_header())?;
    }
    for (row, &epoch) in values.rows().into_iter().zip(epochs) {
        write!(out, "{subject},{epoch}")?;
        for v in row {
            write!(out, ",{}", fmt_f64(*v))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// A parsed distribution table for a single subject.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionTable {
    pub subject_id: String,
    pub epochs: Vec<usize>,
    pub values: Array2<f64>,
}

/// Reads back a single-subject table written by [`write_distribution`].
pub fn parse_distribution<R: BufRead>(source: R) -> Result<DistributionTable, RecordsError> {
    let mut lines = source.lines().enumerate();
    let expected = distribution_header();
    let header = loop {
        match lines.next() {
            Some((_, line)) => {
                let line = line?;
                if !line.is_empty() {
                    break line;
                }
            }
            None => {
                return Err(RecordsError::Parse {
                    line: 0,
                    message: "empty input, missing header".into(),
                })
            }
        }
    };
    if header.trim_end_matches('\r') != expected {
        return Err(RecordsError::Parse {
            line: 1,
            message: format!("expected header `{expected}`"),
        });
    }
    let mut subject_id: Option<String> = None;
    let mut epochs = Vec::new();
    let mut flat = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != NUM_CLASSES + 2 {
            return Err(RecordsError::Parse {
                line: lineno,
                message: format!("expected {} columns, found {}", NUM_CLASSES + 2, cells.len()),
            });
        }
        match &subject_id {
            None => subject_id = Some(cells[0].to_string()),
            Some(s) if s != cells[0] => {
                return Err(RecordsError::Parse {
                    line: lineno,
                    message: format!("second subject {:?} in single-subject table", cells[0]),
                })
            }
            _ => {}
        }
        epochs.push(cells[1].parse::<usize>().map_err(|_| RecordsError::Parse {
            line: lineno,
            message: format!("bad epoch index {:?}", cells[1]),
        })?);
        for cell in &cells[2..] {
            flat.push(cell.parse::<f64>().map_err(|_| RecordsError::Parse {
                line: lineno,
                message: format!("non-numeric value {cell:?}"),
            })?);
        }
    }
    let values = Array2::from_shape_vec((epochs.len(), NUM_CLASSES), flat)
        .map_err(|e| RecordsError::Validation(e.to_string()))?;
    Ok(DistributionTable {
        subject_id: subject_id.unwrap_or_default(),
        epochs,
        values,
    })
}
