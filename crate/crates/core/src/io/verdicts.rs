//! Per-sample verdict log (JSON Lines, one verdict per line) and the machine
//! form of the evaluation report.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{EvaluationReport, SampleVerdict};

pub fn encode_verdicts<W: Write>(mut w: W, verdicts: &[SampleVerdict]) -> Result<()> {
    for v in verdicts {
        serde_json::to_writer(&mut w, v).map_err(|e| Error::format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn decode_verdicts<R: BufRead>(r: R) -> Result<Vec<SampleVerdict>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("verdict log line {}: {e}", i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_verdicts(path: impl AsRef<Path>, verdicts: &[SampleVerdict]) -> Result<()> {
    encode_verdicts(BufWriter::new(File::create(path)?), verdicts)
}

pub fn read_verdicts(path: impl AsRef<Path>) -> Result<Vec<SampleVerdict>> {
    decode_verdicts(BufReader::new(File::open(path)?))
}

pub fn report_to_string(report: &EvaluationReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::format(e.to_string()))
}

pub fn report_from_str(text: &str) -> Result<EvaluationReport> {
    serde_json::from_str(text).map_err(|e| Error::format(e.to_string()))
}

pub fn write_report(path: impl AsRef<Path>, report: &EvaluationReport) -> Result<()> {
    std::fs::write(path, report_to_string(report)? + "\n")?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<EvaluationReport> {
    report_from_str(&std::fs::read_to_string(path)?)
}
