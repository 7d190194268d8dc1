//! Instances, datasets, synthetic generation and on-disk formats.

mod annotations;
mod checkpoint;
mod dataset_io;
pub mod records;
mod synthetic;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Matrix;

pub use annotations::{annotation_append, annotation_load, annotation_query, annotation_save, AnnotationRecord};
pub use checkpoint::{checkpoint_from_bytes, checkpoint_load, checkpoint_save, checkpoint_to_bytes, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset_io::{dataset_from_str, dataset_load, dataset_save, dataset_to_string};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

/// One labelled multivariate time series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesInstance {
    pub id: String,
    /// T×D inputs.
    pub x: Matrix<f64>,
    pub y: Vec<f64>,
    /// Ground-truth relevance, T×D row-major, when known.
    pub relevance: Option<Vec<bool>>,
    /// Ground-truth time relevance, length T, when known.
    pub relevance_time: Option<Vec<bool>>,
}

impl TimeSeriesInstance {
    pub fn new(id: impl Into<String>, x: Matrix<f64>, y: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            x,
            y,
            relevance: None,
            relevance_time: None,
        }
    }

    pub fn t(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn is_relevant(&self, t: usize, d: usize) -> Option<bool> {
        self.relevance.as_ref().map(|r| r[t * self.d() + d])
    }

    /// Copy with `x[t][d] += delta`.
    pub fn perturbed(&self, t: usize, d: usize, delta: f64) -> Self {
        let mut out = self.clone();
        let v = out.x.get(t, d);
        out.x.set(t, d, v + delta);
        out
    }
}

/// Instances sharing T, D and L, indexed by id.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    instances: Vec<TimeSeriesInstance>,
    index: HashMap<String, usize>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.instances == other.instances
    }
}

impl Dataset {
    pub fn new(instances: Vec<TimeSeriesInstance>) -> Result<Self> {
        let mut index = HashMap::with_capacity(instances.len());
        if let Some(first) = instances.first() {
            let (t, d, l) = (first.t(), first.d(), first.y.len());
            for u in &instances {
                if u.t() != t || u.d() != d {
                    return Err(Error::Schema {
                        id: u.id.clone(),
                        msg: format!("shape {}×{} differs from {t}×{d}", u.t(), u.d()),
                    });
                }
                if u.y.len() != l {
                    return Err(Error::Schema {
                        id: u.id.clone(),
                        msg: format!("label length {} differs from {l}", u.y.len()),
                    });
                }
                if !u.x.is_finite() {
                    return Err(Error::Schema {
                        id: u.id.clone(),
                        msg: "non-finite input".into(),
                    });
                }
                if u.relevance.as_ref().is_some_and(|r| r.len() != t * d)
                    || u.relevance_time.as_ref().is_some_and(|r| r.len() != t)
                {
                    return Err(Error::Schema {
                        id: u.id.clone(),
                        msg: "relevance grid shape mismatch".into(),
                    });
                }
            }
        }
        for (i, u) in instances.iter().enumerate() {
            if index.insert(u.id.clone(), i).is_some() {
                return Err(Error::Schema {
                    id: u.id.clone(),
                    msg: "duplicate id".into(),
                });
            }
        }
        Ok(Self { instances, index })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[TimeSeriesInstance] {
        &self.instances
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TimeSeriesInstance> {
        self.instances.iter()
    }

    pub fn refs(&self) -> Vec<&TimeSeriesInstance> {
        self.instances.iter().collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&TimeSeriesInstance> {
        self.position(id).map(|i| &self.instances[i])
    }

    pub fn require(&self, id: &str) -> Result<&TimeSeriesInstance> {
        self.get(id).ok_or_else(|| Error::MissingInstance(id.to_string()))
    }

    /// (T, D, L) of the instances, if any.
    pub fn dims(&self) -> Option<(usize, usize, usize)> {
        self.instances.first().map(|u| (u.t(), u.d(), u.y.len()))
    }

    /// Per-feature mean and population standard deviation over all
    /// timesteps and instances.
    pub fn feature_stats(&self) -> Vec<(f64, f64)> {
        let Some((t, d, _)) = self.dims() else {
            return Vec::new();
        };
        let n = (self.len() * t) as f64;
        (0..d)
            .map(|j| {
                let vals = self.instances.iter().flat_map(|u| (0..t).map(move |s| u.x.get(s, j)));
                let mean = vals.clone().sum::<f64>() / n;
                let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt())
            })
            .collect()
    }

    /// Seeded shuffle into train/valid/test by the given fractions; the test
    /// split takes the remainder.
    pub fn split(&self, seed: u64, train: f64, valid: f64) -> Result<Splits> {
        if !(0.0..=1.0).contains(&train) || !(0.0..=1.0).contains(&valid) || train + valid > 1.0 {
            return Err(Error::Validation("split fractions must lie in [0, 1] and sum to at most 1".into()));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng::rng(seed));
        let n_train = (train * self.len() as f64).round() as usize;
        let n_valid = ((valid * self.len() as f64).round() as usize).min(self.len() - n_train);
        let take = |idx: &[usize]| Dataset::new(idx.iter().map(|&i| self.instances[i].clone()).collect());
        Ok(Splits {
            train: take(&order[..n_train])?,
            valid: take(&order[n_train..n_train + n_valid])?,
            test: take(&order[n_train + n_valid..])?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

impl Splits {
    /// The 70/10/20 split.
    pub fn standard(ds: &Dataset, seed: u64) -> Result<Self> {
        ds.split(seed, 0.7, 0.1)
    }

    pub fn by_name(&self, name: &str) -> Result<&Dataset> {
        match name {
            "train" => Ok(&self.train),
            "valid" => Ok(&self.valid),
            "test" => Ok(&self.test),
            other => Err(Error::Validation(format!("unknown split {other:?}"))),
        }
    }
}
