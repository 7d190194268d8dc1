use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mask::AttentionMask;
use crate::error::{Error, Result};

/// One stored mask with its provenance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub round: usize,
    pub annotator: String,
    /// Unix seconds; simulated annotators use 0.
    pub ts: u64,
    pub mask: AttentionMask,
}

/// Append-only list of masks, at most one per (instance, round).
#[derive(Clone, Debug, Default)]
pub struct AnnotationStore {
    entries: Vec<Annotation>,
    by_instance: HashMap<String, Vec<usize>>,
}

impl AnnotationStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = Annotation>) -> Result<Self> {
        let mut s = Self::new();
        for e in entries {
            s.append(e)?;
        }
        Ok(s)
    }

    pub fn append(&mut self, a: Annotation) -> Result<()> {
        let id = &a.mask.instance_id;
        if self.contains(id, a.round) {
            return Err(Error::Duplicate {
                instance_id: id.clone(),
                round: a.round,
            });
        }
        if let Some(first) = self.entries.first() {
            if (first.mask.t(), first.mask.d()) != (a.mask.t(), a.mask.d()) {
                return Err(Error::Shape(format!(
                    "mask for {id:?} is {}×{}, store holds {}×{}",
                    a.mask.t(),
                    a.mask.d(),
                    first.mask.t(),
                    first.mask.d()
                )));
            }
        }
        self.by_instance.entry(id.clone()).or_default().push(self.entries.len());
        self.entries.push(a);
        Ok(())
    }

    pub fn contains(&self, instance_id: &str, round: usize) -> bool {
        self.by_instance
            .get(instance_id)
            .is_some_and(|ix| ix.iter().any(|&i| self.entries[i].round == round))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Annotation] {
        &self.entries
    }

    pub fn masks(&self) -> impl Iterator<Item = &AttentionMask> {
        self.entries.iter().map(|a| &a.mask)
    }

    pub fn query_round(&self, round: usize) -> Vec<&Annotation> {
        self.entries.iter().filter(|a| a.round == round).collect()
    }

    pub fn query_instance(&self, instance_id: &str) -> Vec<&Annotation> {
        self.by_instance
            .get(instance_id)
            .map(|ix| ix.iter().map(|&i| &self.entries[i]).collect())
            .unwrap_or_default()
    }

    /// Distinct annotated instance ids.
    pub fn instance_ids(&self) -> BTreeSet<String> {
        self.by_instance.keys().cloned().collect()
    }

    /// Store restricted to the entries at the given positions.
    pub fn subset(&self, positions: &[usize]) -> Result<Self> {
        Self::from_entries(positions.iter().map(|&i| self.entries[i].clone()))
    }

    /// SHA-256 over the entries in order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(serde_json::to_vec(e).expect("annotation serializes"));
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(id: &str, round: usize) -> Annotation {
        Annotation {
            round,
            annotator: "test".into(),
            ts: 0,
            mask: AttentionMask::unknown(id, 2, 3),
        }
    }

    #[test]
    fn duplicate_instance_round_rejected() {
        let mut s = AnnotationStore::new();
        s.append(ann("a", 1)).unwrap();
        s.append(ann("a", 2)).unwrap();
        assert!(matches!(s.append(ann("a", 1)), Err(Error::Duplicate { round: 1, .. })));
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn queries() {
        let s = AnnotationStore::from_entries([ann("a", 1), ann("b", 2), ann("c", 2)]).unwrap();
        let r2: Vec<_> = s.query_round(2).iter().map(|a| a.mask.instance_id.clone()).collect();
        assert_eq!(r2, ["b", "c"]);
        assert_eq!(s.query_instance("a").len(), 1);
        assert!(s.query_instance("z").is_empty());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = AnnotationStore::new();
        s.append(ann("a", 1)).unwrap();
        let mut other = ann("b", 1);
        other.mask = AttentionMask::unknown("b", 3, 3);
        assert!(s.append(other).is_err());
    }
}
