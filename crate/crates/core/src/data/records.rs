//! Versioned line-delimited record stream for reports and metrics.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RECORD_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record<T> {
    pub version: u32,
    pub kind: String,
    pub body: T,
}

impl<T> Record<T> {
    pub fn new(kind: impl Into<String>, body: T) -> Self {
        Self {
            version: RECORD_VERSION,
            kind: kind.into(),
            body,
        }
    }
}

pub fn record_line<T: Serialize>(kind: &str, body: &T) -> Result<String> {
    Ok(serde_json::to_string(&Record::new(kind, body))?)
}

pub fn append_record<T: Serialize>(path: impl AsRef<Path>, kind: &str, body: &T) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", record_line(kind, body)?)?;
    Ok(())
}

/// Records of the given kind; other kinds are skipped, unknown versions fail.
pub fn read_records<T: DeserializeOwned>(text: &str, kind: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |e: serde_json::Error| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        };
        let rec: Record<serde_json::Value> = serde_json::from_str(line).map_err(parse)?;
        if rec.version != RECORD_VERSION {
            return Err(Error::Format(format!("record version {} unsupported", rec.version)));
        }
        if rec.kind == kind {
            out.push(serde_json::from_value(rec.body).map_err(parse)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filters_by_kind() {
        let text = format!(
            "{}\n{}\n",
            record_line("metric", &1.5f64).unwrap(),
            record_line("other", &"x").unwrap()
        );
        assert_eq!(read_records::<f64>(&text, "metric").unwrap(), vec![1.5]);
        let bad = r#"{"version":9,"kind":"metric","body":1}"#;
        assert!(read_records::<f64>(bad, "metric").is_err());
    }
}
