use crate::{Error, Result};

/// Parses lattice-integer consensus inputs: one whitespace-separated row per
/// node per line, or a JSON array of rows. A flat JSON array of integers is
/// read as one scalar per node.
pub fn parse_consensus_input(text: &str) -> Result<Vec<Vec<i64>>> {
    let trimmed = text.trim_start();
    let rows = if trimmed.starts_with('[') {
        parse_json(trimmed)?
    } else {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.split_whitespace()
                    .map(|tok| {
                        tok.parse::<i64>()
                            .map_err(|_| Error::Parse(format!("invalid integer {tok:?}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?
    };
    let width = rows.first().ok_or(Error::EmptyNetwork)?.len();
    for row in &rows {
        if row.len() != width {
            return Err(Error::DimensionMismatch {
                expected: width,
                got: row.len(),
            });
        }
    }
    if width == 0 {
        return Err(Error::Parse("empty input row".into()));
    }
    Ok(rows)
}

fn parse_json(text: &str) -> Result<Vec<Vec<i64>>> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let items = value
        .as_array()
        .ok_or_else(|| Error::Parse("expected a JSON array".into()))?;
    items
        .iter()
        .map(|item| match item {
            serde_json::Value::Number(n) => Ok(vec![number(n)?]),
            serde_json::Value::Array(row) => row
                .iter()
                .map(|v| match v {
                    serde_json::Value::Number(n) => number(n),
                    other => Err(Error::Parse(format!("expected an integer, got {other}"))),
                })
                .collect(),
            other => Err(Error::Parse(format!(
                "expected an integer or array, got {other}"
            ))),
        })
        .collect()
}

fn number(n: &serde_json::Number) -> Result<i64> {
    n.as_i64()
        .ok_or_else(|| Error::Parse(format!("expected an integer, got {n}")))
}
