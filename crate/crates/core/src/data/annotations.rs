use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nap::{Annotation, AnnotationStore, AttentionMask, FeatureCell, TimeCell};

/// On-disk form of one annotation: only non-unknown cells are stored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub instance_id: String,
    pub round: usize,
    pub annotator: String,
    pub feature_mask: Vec<FeatureCell>,
    pub time_mask: Vec<TimeCell>,
    pub ts: u64,
}

impl AnnotationRecord {
    pub fn from_annotation(a: &Annotation) -> Self {
        Self {
            instance_id: a.mask.instance_id.clone(),
            round: a.round,
            annotator: a.annotator.clone(),
            feature_mask: a.mask.sparse_feature(),
            time_mask: a.mask.sparse_time(),
            ts: a.ts,
        }
    }

    /// Dense reconstruction on a T×D grid; unlisted cells are unknown.
    pub fn into_annotation(self, t: usize, d: usize) -> Result<Annotation> {
        Ok(Annotation {
            mask: AttentionMask::from_sparse(self.instance_id, t, d, &self.feature_mask, &self.time_mask)?,
            round: self.round,
            annotator: self.annotator,
            ts: self.ts,
        })
    }
}

fn read_records(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Load the whole store; a missing file is an empty store.
pub fn annotation_load(path: impl AsRef<Path>, t: usize, d: usize) -> Result<AnnotationStore> {
    AnnotationStore::from_entries(
        read_records(path.as_ref())?
            .into_iter()
            .map(|r| r.into_annotation(t, d))
            .collect::<Result<Vec<_>>>()?,
    )
}

/// Append one annotation, refusing a second mask for the same
/// (instance, round).
pub fn annotation_append(path: impl AsRef<Path>, a: &Annotation) -> Result<()> {
    let path = path.as_ref();
    let rec = AnnotationRecord::from_annotation(a);
    if read_records(path)?
        .iter()
        .any(|r| r.instance_id == rec.instance_id && r.round == rec.round)
    {
        return Err(Error::Duplicate {
            instance_id: rec.instance_id,
            round: rec.round,
        });
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(&rec)?)?;
    Ok(())
}

/// Rewrite the file with the full store.
pub fn annotation_save(path: impl AsRef<Path>, store: &AnnotationStore) -> Result<()> {
    let mut out = String::new();
    for a in store.entries() {
        out.push_str(&serde_json::to_string(&AnnotationRecord::from_annotation(a))?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Annotations matching an optional round and an optional instance id.
pub fn annotation_query(
    path: impl AsRef<Path>,
    t: usize,
    d: usize,
    round: Option<usize>,
    instance_id: Option<&str>,
) -> Result<Vec<Annotation>> {
    Ok(annotation_load(path, t, d)?
        .entries()
        .iter()
        .filter(|a| round.is_none_or(|r| a.round == r))
        .filter(|a| instance_id.is_none_or(|id| a.mask.instance_id == id))
        .cloned()
        .collect())
}
