use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use super::SummaryRow;

pub const CSV_HEADER: &str = "mode,site,op,users,ok,err,mean_ms,p50_ms,p95_ms,p99_ms,rps,Bps";

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("schema mismatch: expected header {CSV_HEADER:?}, found {found:?}")]
    SchemaMismatch { found: String },
    #[error("line {line}: {msg}")]
    Row { line: usize, msg: String },
}

pub fn write_csv_header(w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")
}

/// Floats use the shortest representation that parses back to the same value.
pub fn write_csv_row(w: &mut impl Write, r: &SummaryRow) -> io::Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        r.mode, r.site, r.op, r.users, r.ok, r.err, r.mean_ms, r.p50_ms, r.p95_ms, r.p99_ms, r.rps, r.bps
    )
}

pub fn emit_csv(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<(), CsvError> {
    let mut buf = Vec::new();
    write_csv_header(&mut buf)?;
    for r in rows {
        write_csv_row(&mut buf, r)?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<Vec<SummaryRow>, CsvError> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l.trim_end()).unwrap_or("");
    if header != CSV_HEADER {
        return Err(CsvError::SchemaMismatch {
            found: header.to_string(),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let err = |msg: String| CsvError::Row { line: line_no, msg };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(err(format!("expected 12 fields, found {}", f.len())));
        }
        let int =
            |idx: usize| -> Result<u64, CsvError> { f[idx].parse().map_err(|e| err(format!("field {idx}: {e}"))) };
        let float =
            |idx: usize| -> Result<f64, CsvError> { f[idx].parse().map_err(|e| err(format!("field {idx}: {e}"))) };
        rows.push(SummaryRow {
            mode: f[0].to_string(),
            site: f[1].to_string(),
            op: f[2].to_string(),
            users: u32::try_from(int(3)?).map_err(|e| err(e.to_string()))?,
            ok: int(4)?,
            err: int(5)?,
            mean_ms: float(6)?,
            p50_ms: float(7)?,
            p95_ms: float(8)?,
            p99_ms: float(9)?,
            rps: float(10)?,
            bps: float(11)?,
        });
    }
    Ok(rows)
}
