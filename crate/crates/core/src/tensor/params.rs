use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::{Graph, Var};
use super::matrix::Matrix;
use super::scalar::Scalar;
use crate::error::{Error, Result};

/// One named block of parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub value: Matrix<f64>,
}

/// Flat parameter vector made of named matrix segments, kept in canonical
/// (sorted-by-name) order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    segments: Vec<Segment>,
}

impl ParamVector {
    pub fn new(mut segments: Vec<Segment>) -> Result<Self> {
        segments.sort_by(|a, b| a.name.cmp(&b.name));
        for pair in segments.windows(2) {
            if pair[0].name == pair[1].name {
                return Err(Error::Validation(format!(
                    "duplicate parameter segment {:?}",
                    pair[0].name
                )));
            }
        }
        Ok(Self { segments })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Matrix<f64>)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(name, value)| Segment { name, value })
                .collect(),
        )
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segments_mut(&mut self) -> &mut [Segment] {
        &mut self.segments
    }

    pub fn n_params(&self) -> usize {
        self.segments.iter().map(|s| s.value.len()).sum()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.segments
            .binary_search_by(|s| s.name.as_str().cmp(name))
            .ok()
    }

    pub fn get(&self, name: &str) -> Option<&Matrix<f64>> {
        self.position(name).map(|i| &self.segments[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix<f64>> {
        self.position(name).map(move |i| &mut self.segments[i].value)
    }

    /// Lookup that reports missing segments as an error.
    pub fn require(&self, name: &str) -> Result<&Matrix<f64>> {
        self.get(name)
            .ok_or_else(|| Error::Validation(format!("missing parameter segment {name:?}")))
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for s in &self.segments {
            out.extend_from_slice(s.value.as_slice());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten), reusing this vector's layout.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "flat length {} does not match {} parameters",
                flat.len(),
                self.n_params()
            )));
        }
        let mut offset = 0;
        let segments = self
            .segments
            .iter()
            .map(|s| {
                let n = s.value.len();
                let value = Matrix::from_vec(
                    s.value.rows(),
                    s.value.cols(),
                    flat[offset..offset + n].to_vec(),
                );
                offset += n;
                Segment {
                    name: s.name.clone(),
                    value,
                }
            })
            .collect();
        Ok(Self { segments })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    name: s.name.clone(),
                    value: Matrix::zeros(s.value.rows(), s.value.cols()),
                })
                .collect(),
        }
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.segments.len() == other.segments.len()
            && self
                .segments
                .iter()
                .zip(&other.segments)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
    }

    fn check_layout(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Shape("parameter vectors have different layouts".into()))
        }
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self
            .segments
            .iter()
            .zip(&other.segments)
            .map(|(a, b)| {
                a.value
                    .as_slice()
                    .iter()
                    .zip(b.value.as_slice())
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
            })
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.segments
            .iter()
            .flat_map(|s| s.value.as_slice())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &Self) -> Result<()> {
        self.check_layout(x)?;
        for (a, b) in self.segments.iter_mut().zip(&x.segments) {
            for (va, vb) in a.value.as_mut_slice().iter_mut().zip(b.value.as_slice()) {
                *va += alpha * vb;
            }
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        for s in &mut out.segments {
            for v in s.value.as_mut_slice() {
                *v *= alpha;
            }
        }
        out
    }

    /// Name of the first segment holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.segments
            .iter()
            .find(|s| !s.value.is_finite())
            .map(|s| s.name.as_str())
    }

    /// SHA-256 over names, shapes and little-endian f64 values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.segments {
            h.update(s.name.as_bytes());
            h.update((s.value.rows() as u64).to_le_bytes());
            h.update((s.value.cols() as u64).to_le_bytes());
            for v in s.value.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Place every segment on the tape as a differentiable leaf. When a
    /// tangent is given, leaves carry it as their forward-mode direction.
    pub fn bind<S: Scalar>(&self, g: &mut Graph<S>, tangent: Option<&ParamVector>) -> Result<ParamVars> {
        if let Some(t) = tangent {
            self.check_layout(t)?;
        }
        let mut vars = Vec::with_capacity(self.segments.len());
        let mut index = HashMap::with_capacity(self.segments.len());
        let mut names = Vec::with_capacity(self.segments.len());
        for (i, s) in self.segments.iter().enumerate() {
            let value = match tangent {
                Some(t) => {
                    let tv = t.segments[i].value.as_slice();
                    let data = s
                        .value
                        .as_slice()
                        .iter()
                        .zip(tv)
                        .map(|(&v, &d)| S::with_tangent(v, d))
                        .collect();
                    Matrix::from_vec(s.value.rows(), s.value.cols(), data)
                }
                None => s.value.lift(),
            };
            let var = g.param(value);
            index.insert(s.name.clone(), i);
            names.push(s.name.clone());
            vars.push(var);
        }
        Ok(ParamVars { vars, names, index })
    }
}

/// Tape handles of a bound [`ParamVector`], in segment order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: Vec<Var>,
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Validation(format!("missing parameter segment {name:?}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.names.iter().map(String::as_str).zip(self.vars.iter().copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ParamVector {
        ParamVector::from_pairs([
            ("b".to_string(), Matrix::from_vec(1, 2, vec![1.0, 2.0])),
            ("a".to_string(), Matrix::from_vec(2, 1, vec![3.0, 4.0])),
        ])
        .unwrap()
    }

    #[test]
    fn segments_sorted_and_unique() {
        let p = sample();
        assert_eq!(p.segments()[0].name, "a");
        assert_eq!(p.flatten(), vec![3.0, 4.0, 1.0, 2.0]);
        let dup = ParamVector::from_pairs([
            ("a".to_string(), Matrix::zeros(1, 1)),
            ("a".to_string(), Matrix::zeros(1, 1)),
        ]);
        assert!(dup.is_err());
    }

    #[test]
    fn digest_tracks_values() {
        let p = sample();
        let mut q = p.clone();
        assert_eq!(p.digest(), q.digest());
        q.get_mut("a").unwrap().set(0, 0, 3.0000001);
        assert_ne!(p.digest(), q.digest());
    }

    proptest! {
        #[test]
        fn flatten_is_a_bijection(vals in proptest::collection::vec(-1e6f64..1e6, 4)) {
            let p = sample();
            let q = p.with_flat(&vals).unwrap();
            prop_assert_eq!(q.flatten(), vals);
            prop_assert!(q.same_layout(&p));
        }
    }
}
