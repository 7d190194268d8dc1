use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Human judgement for one cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ternary {
    /// "I don't know" (also used for cells nobody looked at).
    Unknown,
    /// "Not attend".
    Off,
    /// "Attend".
    On,
}

impl Ternary {
    pub fn value(self) -> i8 {
        match self {
            Ternary::Unknown => -1,
            Ternary::Off => 0,
            Ternary::On => 1,
        }
    }

    pub fn from_value(v: i64) -> Option<Self> {
        match v {
            -1 => Some(Ternary::Unknown),
            0 => Some(Ternary::Off),
            1 => Some(Ternary::On),
            _ => None,
        }
    }

    pub fn from_bool(b: bool) -> Self {
        if b {
            Ternary::On
        } else {
            Ternary::Off
        }
    }
}

/// Sparse feature cell `(t, d, value)`.
pub type FeatureCell = (usize, usize, i64);
/// Sparse time cell `(t, value)`.
pub type TimeCell = (usize, i64);

/// Ternary attention mask over the T×D feature grid and the T time steps.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttentionMask {
    pub instance_id: String,
    t: usize,
    d: usize,
    feature: Vec<i8>,
    time: Vec<i8>,
}

impl AttentionMask {
    /// Mask with every cell unknown.
    pub fn unknown(instance_id: impl Into<String>, t: usize, d: usize) -> Self {
        Self {
            instance_id: instance_id.into(),
            t,
            d,
            feature: vec![-1; t * d],
            time: vec![-1; t],
        }
    }

    /// Dense constructor; `feature` is T rows of D values.
    pub fn from_dense(instance_id: impl Into<String>, feature: &[Vec<i64>], time: &[i64]) -> Result<Self> {
        let t = feature.len();
        let d = feature.first().map_or(0, Vec::len);
        if time.len() != t || feature.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("mask rows must be T×D with a length-T time mask".into()));
        }
        let mut m = Self::unknown(instance_id, t, d);
        for (tt, row) in feature.iter().enumerate() {
            for (dd, &v) in row.iter().enumerate() {
                m.set_feature(tt, dd, check(v, tt, Some(dd))?);
            }
        }
        for (tt, &v) in time.iter().enumerate() {
            m.set_time(tt, check(v, tt, None)?);
        }
        Ok(m)
    }

    /// Sparse constructor. Unlisted cells are unknown; listed −1 cells are
    /// accepted and stay unknown.
    pub fn from_sparse(
        instance_id: impl Into<String>,
        t: usize,
        d: usize,
        feature: &[FeatureCell],
        time: &[TimeCell],
    ) -> Result<Self> {
        let mut m = Self::unknown(instance_id, t, d);
        for &(tt, dd, v) in feature {
            if tt >= t || dd >= d {
                return Err(Error::Validation(format!("feature cell (t={tt}, d={dd}) outside {t}×{d}")));
            }
            m.set_feature(tt, dd, check(v, tt, Some(dd))?);
        }
        for &(tt, v) in time {
            if tt >= t {
                return Err(Error::Validation(format!("time cell t={tt} outside T={t}")));
            }
            m.set_time(tt, check(v, tt, None)?);
        }
        Ok(m)
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn feature(&self, t: usize, d: usize) -> Ternary {
        from_i8(self.feature[t * self.d + d])
    }

    pub fn time(&self, t: usize) -> Ternary {
        from_i8(self.time[t])
    }

    pub fn set_feature(&mut self, t: usize, d: usize, v: Ternary) {
        self.feature[t * self.d + d] = v.value();
    }

    pub fn set_time(&mut self, t: usize, v: Ternary) {
        self.time[t] = v.value();
    }

    /// Non-unknown feature cells in row-major order.
    pub fn sparse_feature(&self) -> Vec<FeatureCell> {
        self.feature
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != -1)
            .map(|(k, &v)| (k / self.d, k % self.d, v as i64))
            .collect()
    }

    /// Non-unknown time cells in order.
    pub fn sparse_time(&self) -> Vec<TimeCell> {
        self.time
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != -1)
            .map(|(t, &v)| (t, v as i64))
            .collect()
    }

    /// Dense T×D feature grid as numbers in {−1, 0, 1}.
    pub fn feature_matrix(&self) -> Matrix<f64> {
        Matrix::from_fn(self.t, self.d, |t, d| self.feature[t * self.d + d] as f64)
    }

    pub fn feature_rows(&self) -> Vec<Vec<i64>> {
        (0..self.t)
            .map(|t| (0..self.d).map(|d| self.feature[t * self.d + d] as i64).collect())
            .collect()
    }

    pub fn time_values(&self) -> Vec<i64> {
        self.time.iter().map(|&v| v as i64).collect()
    }

    pub fn is_all_unknown(&self) -> bool {
        self.feature.iter().chain(&self.time).all(|&v| v == -1)
    }
}

fn from_i8(v: i8) -> Ternary {
    Ternary::from_value(v as i64).expect("mask cells are validated on write")
}

fn check(v: i64, t: usize, d: Option<usize>) -> Result<Ternary> {
    Ternary::from_value(v).ok_or(Error::MaskValue { t, d, value: v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_unknown_is_empty_sparse() {
        let m = AttentionMask::unknown("a", 3, 4);
        assert!(m.sparse_feature().is_empty());
        assert!(m.sparse_time().is_empty());
        assert!(m.is_all_unknown());
    }

    #[test]
    fn bad_value_reports_cell() {
        match AttentionMask::from_sparse("a", 2, 5, &[(0, 3, 2)], &[]) {
            Err(Error::MaskValue { t: 0, d: Some(3), value: 2 }) => {}
            other => panic!("{other:?}"),
        }
        match AttentionMask::from_dense("a", &[vec![0, 1]], &[7]) {
            Err(Error::MaskValue { t: 0, d: None, value: 7 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn out_of_range_cell_rejected() {
        assert!(AttentionMask::from_sparse("a", 2, 2, &[(2, 0, 1)], &[]).is_err());
        assert!(AttentionMask::from_sparse("a", 2, 2, &[], &[(5, 1)]).is_err());
    }

    proptest! {
        #[test]
        fn sparse_dense_sparse_roundtrip(cells in proptest::collection::vec(-1i64..=1, 12), time in proptest::collection::vec(-1i64..=1, 3)) {
            let rows: Vec<Vec<i64>> = cells.chunks(4).map(<[i64]>::to_vec).collect();
            let dense = AttentionMask::from_dense("x", &rows, &time).unwrap();
            let sf = dense.sparse_feature();
            let st = dense.sparse_time();
            prop_assert!(sf.iter().all(|c| c.2 != -1));
            let back = AttentionMask::from_sparse("x", 3, 4, &sf, &st).unwrap();
            prop_assert_eq!(&back, &dense);
            prop_assert_eq!(back.sparse_feature(), sf);
            prop_assert_eq!(back.feature_rows(), rows);
        }
    }
}
