use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::analysis::ConvergenceTrace;
use crate::Result;

pub const CSV_HEADER: [&str; 9] = [
    "method",
    "delta",
    "k",
    "error_e",
    "consensus_gap",
    "xi",
    "rounds",
    "tokens",
    "bits_estimate",
];

/// One parsed CSV line. Empty fields come back as `None`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CsvRow {
    pub method: String,
    pub delta: f64,
    pub k: usize,
    pub error_e: f64,
    pub consensus_gap: Option<f64>,
    pub xi: Option<f64>,
    pub rounds: u64,
    pub tokens: u64,
    pub bits_estimate: u64,
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn optional(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

/// Writes one row per `(trace, k)`. Floats use a fixed exponent format so
/// identical runs give byte-identical files.
pub fn write_csv<W: Write>(traces: &[ConvergenceTrace], out: W) -> Result<()> {
    let mut w = ::csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for t in traces {
        for r in &t.records {
            w.write_record([
                t.method.as_str().to_string(),
                float(t.delta.value()),
                r.k.to_string(),
                float(r.error),
                optional(r.consensus_gap),
                optional(r.xi),
                r.rounds.to_string(),
                r.stats.tokens_sent.to_string(),
                r.stats.bits_estimate.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(traces: &[ConvergenceTrace], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(traces, std::io::BufWriter::new(file))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<CsvRow>> {
    let mut r = ::csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
