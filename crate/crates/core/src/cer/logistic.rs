//! Convex logistic probe on flattened inputs, used to check influence
//! estimates against exact leave-one-out retraining.

use crate::data::TimeSeriesInstance;
use crate::error::{Error, Result};
use crate::model::PROB_CLIP;
use crate::tensor::{Graph, Matrix, Objective, ParamVars, ParamVector, Scalar, Var};

/// `p(y=1|x) = σ(vec(x)·w + b)` with mean cross-entropy loss.
#[derive(Clone, Copy, Debug)]
pub struct LogisticModel {
    pub inputs: usize,
}

impl LogisticModel {
    pub fn new(inputs: usize) -> Self {
        Self { inputs }
    }

    pub fn zero_params(&self) -> ParamVector {
        ParamVector::from_pairs([
            ("b".to_string(), Matrix::zeros(1, 1)),
            ("w".to_string(), Matrix::zeros(self.inputs, 1)),
        ])
        .expect("distinct names")
    }

    pub fn predict(&self, params: &ParamVector, u: &TimeSeriesInstance) -> Result<f64> {
        let w = params.require("w")?;
        let b = params.require("b")?.get(0, 0);
        let x = u.x.as_slice();
        if x.len() != self.inputs {
            return Err(Error::Shape(format!("expected {} inputs, got {}", self.inputs, x.len())));
        }
        let s: f64 = x.iter().zip(w.as_slice()).map(|(a, b)| a * b).sum::<f64>() + b;
        Ok(s.sigmoid())
    }
}

impl Objective for LogisticModel {
    type Sample = TimeSeriesInstance;

    fn build<S: Scalar>(&self, g: &mut Graph<S>, p: &ParamVars, batch: &[&TimeSeriesInstance]) -> Result<Var> {
        let n = batch.len();
        for u in batch {
            if u.x.len() != self.inputs {
                return Err(Error::Shape(format!("expected {} inputs, got {}", self.inputs, u.x.len())));
            }
        }
        let x = Matrix::from_fn(n, self.inputs, |i, j| S::from_f64(batch[i].x.as_slice()[j]));
        let y = Matrix::from_fn(n, 1, |i, _| S::from_f64(batch[i].y[0]));
        let x = g.constant(x);
        let y = g.constant(y);
        let s = g.matmul(x, p.get("w")?);
        let s = g.add_row(s, p.get("b")?);
        let pr = g.sigmoid(s);
        let pr = g.clamp(pr, PROB_CLIP, 1.0 - PROB_CLIP);
        let lp = g.ln(pr);
        let q = g.neg(pr);
        let q = g.add_scalar(q, 1.0);
        let lq = g.ln(q);
        let ny = g.neg(y);
        let ny = g.add_scalar(ny, 1.0);
        let a = g.mul(y, lp);
        let b = g.mul(ny, lq);
        let l = g.add(a, b);
        let m = g.mean(l);
        Ok(g.neg(m))
    }
}
