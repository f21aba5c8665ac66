use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimation::{format_significant, TailEstimate};

pub const REPORT_CSV_HEADER: &str = "u,p_hat,ci_low,ci_high,f_asym,ratio,scenario";

/// One level of a convergence table. `f_asym`, `ratio` and `scenario` are
/// empty when the configuration has no asymptotic regime.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub u: f64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub f_asym: Option<f64>,
    pub ratio: Option<f64>,
    pub scenario: Option<String>,
}

impl ReportRow {
    pub fn new(e: &TailEstimate, asym: Option<(f64, String)>) -> Self {
        let (f_asym, scenario) = match asym {
            Some((f, tag)) => (Some(f), Some(tag)),
            None => (None, None),
        };
        Self {
            u: e.u,
            p_hat: e.p_hat,
            ci_low: e.ci_low,
            ci_high: e.ci_high,
            ratio: f_asym.map(|f| e.p_hat / f),
            f_asym,
            scenario,
        }
    }
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| format_significant(v, 6)).unwrap_or_default()
}

/// Header, one line per row, and a trailing `#error,...` line when the run
/// stopped early.
pub fn write_report_csv<W: Write>(mut out: W, rows: &[ReportRow], error: Option<&str>) -> Result<()> {
    writeln!(out, "{REPORT_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            format_significant(r.u, 6),
            format_significant(r.p_hat, 6),
            format_significant(r.ci_low, 6),
            format_significant(r.ci_high, 6),
            cell(r.f_asym),
            cell(r.ratio),
            r.scenario.as_deref().unwrap_or("")
        )?;
    }
    if let Some(msg) = error {
        writeln!(out, "#error,{}", msg.replace(['\n', '\r'], " ").replace(',', ";"))?;
    }
    Ok(())
}

pub fn emit_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_report_csv(&mut out, rows, None)?;
    out.flush()?;
    Ok(())
}

/// Parse a report back; marker lines are skipped.
pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let bad = |line: usize, what: &str| Error::Input(format!("{}:{line}: {what}", path.display()));
    let mut lines = BufReader::new(File::open(path)?).lines();
    match lines.next() {
        Some(Ok(h)) if h == REPORT_CSV_HEADER => {}
        _ => return Err(bad(1, "missing report header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(i + 2, "expected 7 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 2, "malformed number"));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        rows.push(ReportRow {
            u: num(f[0])?,
            p_hat: num(f[1])?,
            ci_low: num(f[2])?,
            ci_high: num(f[3])?,
            f_asym: opt(f[4])?,
            ratio: opt(f[5])?,
            scenario: (!f[6].is_empty()).then(|| f[6].to_string()),
        });
    }
    Ok(rows)
}
