use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, TimeSeriesInstance};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relevance: Option<Vec<Vec<bool>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relevance_time: Option<Vec<bool>>,
}

impl Record {
    fn from_instance(u: &TimeSeriesInstance) -> Self {
        let d = u.d();
        Self {
            id: u.id.clone(),
            x: u.x.to_rows(),
            y: u.y.clone(),
            relevance: u.relevance.as_ref().map(|r| r.chunks(d.max(1)).map(<[bool]>::to_vec).collect()),
            relevance_time: u.relevance_time.clone(),
        }
    }

    fn into_instance(self) -> Result<TimeSeriesInstance> {
        let schema = |msg: &str| Error::Schema {
            id: self.id.clone(),
            msg: msg.to_string(),
        };
        let d = self.x.first().map_or(0, Vec::len);
        if self.x.is_empty() || d == 0 || self.x.iter().any(|r| r.len() != d) {
            return Err(schema("x must be a non-empty rectangular T×D array"));
        }
        let relevance = match &self.relevance {
            Some(r) if r.len() != self.x.len() || r.iter().any(|row| row.len() != d) => {
                return Err(schema("relevance must match the shape of x"))
            }
            Some(r) => Some(r.concat()),
            None => None,
        };
        Ok(TimeSeriesInstance {
            x: Matrix::from_rows(&self.x),
            id: self.id,
            y: self.y,
            relevance,
            relevance_time: self.relevance_time,
        })
    }
}

/// One JSON record per line.
pub fn dataset_to_string(ds: &Dataset) -> Result<String> {
    let mut out = String::new();
    for u in ds.iter() {
        out.push_str(&serde_json::to_string(&Record::from_instance(u))?);
        out.push('\n');
    }
    Ok(out)
}

/// Parse line-delimited records. Blank lines are skipped.
pub fn dataset_from_str(text: &str) -> Result<Dataset> {
    let mut instances = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        instances.push(rec.into_instance()?);
    }
    Dataset::new(instances)
}

pub fn dataset_save(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    fs::write(path, dataset_to_string(ds)?)?;
    Ok(())
}

pub fn dataset_load(path: impl AsRef<Path>) -> Result<Dataset> {
    dataset_from_str(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_empty_dataset() {
        assert!(dataset_from_str("").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_number() {
        let good = r#"{"id":"a","x":[[1.0]],"y":[0.0]}"#;
        let text = format!("{good}\n{{not json\n");
        match dataset_from_str(&text) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_width_names_id() {
        let text = "{\"id\":\"a\",\"x\":[[1.0,2.0]],\"y\":[0.0]}\n{\"id\":\"b\",\"x\":[[1.0]],\"y\":[0.0]}\n";
        match dataset_from_str(text) {
            Err(Error::Schema { id, .. }) => assert_eq!(id, "b"),
            other => panic!("{other:?}"),
        }
    }
}
