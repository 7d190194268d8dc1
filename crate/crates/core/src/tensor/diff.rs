//! Gradients, Hessian-vector products and finite-difference checks of scalar
//! objectives built on the tape.

use serde::Serialize;

use super::graph::{Graph, Var};
use super::params::{ParamVars, ParamVector};
use super::scalar::{Dual, Scalar};
use crate::error::{Error, Result};

/// Scalar loss of parameters over a batch of samples.
///
/// Implementations must be deterministic given parameters, batch and any
/// noise seed they carry.
pub trait Objective: Sync {
    type Sample: Sync;

    fn build<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        params: &ParamVars,
        batch: &[&Self::Sample],
    ) -> Result<Var>;
}

/// Adds `½·λ·‖θ_s‖²` over the segments whose names start with one of the
/// given prefixes (all segments when the list is empty).
pub struct WeightDecay<'a, O> {
    pub inner: &'a O,
    pub coefficient: f64,
    pub prefixes: &'a [&'a str],
}

impl<O: Objective> Objective for WeightDecay<'_, O> {
    type Sample = O::Sample;

    fn build<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        params: &ParamVars,
        batch: &[&Self::Sample],
    ) -> Result<Var> {
        let mut loss = self.inner.build(g, params, batch)?;
        if self.coefficient == 0.0 {
            return Ok(loss);
        }
        for (name, var) in params.iter() {
            if self.prefixes.is_empty() || self.prefixes.iter().any(|p| name.starts_with(p)) {
                let sq = g.square(var);
                let s = g.sum(sq);
                let s = g.scale(s, 0.5 * self.coefficient);
                loss = g.add(loss, s);
            }
        }
        Ok(loss)
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub grad: ParamVector,
}

/// Loss value only.
pub fn loss_value<O: Objective>(f: &O, theta: &ParamVector, batch: &[&O::Sample]) -> Result<f64> {
    let mut g: Graph<f64> = Graph::new();
    let vars = theta.bind(&mut g, None)?;
    let out = f.build(&mut g, &vars, batch)?;
    Ok(g.scalar(out))
}

fn collect<S: Scalar>(
    theta: &ParamVector,
    vars: &ParamVars,
    grads: &super::graph::Gradients<S>,
    pick: impl Fn(S) -> f64,
) -> ParamVector {
    let mut out = theta.zeros_like();
    for (seg, &var) in out.segments_mut().iter_mut().zip(vars.vars()) {
        if let Some(gm) = grads.get(var) {
            for (dst, &src) in seg.value.as_mut_slice().iter_mut().zip(gm.as_slice()) {
                *dst = pick(src);
            }
        }
    }
    out
}

/// Reverse-mode gradient of `f` at `theta`.
pub fn gradient<O: Objective>(f: &O, theta: &ParamVector, batch: &[&O::Sample]) -> Result<Evaluation> {
    if let Some(seg) = theta.first_non_finite() {
        return Err(Error::NonFinite(seg.to_string()));
    }
    let mut g: Graph<f64> = Graph::new();
    let vars = theta.bind(&mut g, None)?;
    let out = f.build(&mut g, &vars, batch)?;
    let loss = g.scalar(out);
    let grads = g.backward(out);
    let grad = collect(theta, &vars, &grads, |v| v);
    if !loss.is_finite() {
        let seg = grad.first_non_finite().unwrap_or("loss");
        return Err(Error::NonFinite(seg.to_string()));
    }
    if let Some(seg) = grad.first_non_finite() {
        return Err(Error::NonFinite(seg.to_string()));
    }
    Ok(Evaluation { loss, grad })
}

/// Exact Hessian-vector product `∇²f(θ)·v` by forward-over-reverse
/// differentiation: the tape runs in dual arithmetic with `v` as the tangent
/// of the parameter leaves, and the tangent of the gradient is `H·v`.
pub fn hvp<O: Objective>(
    f: &O,
    theta: &ParamVector,
    batch: &[&O::Sample],
    v: &ParamVector,
) -> Result<ParamVector> {
    if !theta.same_layout(v) {
        return Err(Error::Shape("hvp direction layout differs from parameters".into()));
    }
    let mut g: Graph<Dual> = Graph::new();
    let vars = theta.bind(&mut g, Some(v))?;
    let out = f.build(&mut g, &vars, batch)?;
    let loss = g.scalar(out);
    let grads = g.backward(out);
    let hv = collect(theta, &vars, &grads, |d| d.du);
    if !loss.re.is_finite() || !loss.du.is_finite() {
        return Err(Error::NonFinite(hv.first_non_finite().unwrap_or("loss").to_string()));
    }
    if let Some(seg) = hv.first_non_finite() {
        return Err(Error::NonFinite(seg.to_string()));
    }
    Ok(hv)
}

#[derive(Clone, Debug, Serialize)]
pub struct SegmentCheck {
    pub name: String,
    /// `max_i |g_i − fd_i| / max(‖g‖∞, ‖fd‖∞, 1e-6)` over the segment.
    /// The floor keeps roundoff on all-zero segments from reading as error.
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
    pub zero_gradient: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct FdReport {
    pub step: f64,
    pub segments: Vec<SegmentCheck>,
}

impl FdReport {
    pub fn max_rel_error(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn segment(&self, name: &str) -> Option<&SegmentCheck> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// Compare the reverse-mode gradient against central differences with step
/// `h`, one pair of evaluations per parameter.
pub fn finite_diff_check<O: Objective>(
    f: &O,
    theta: &ParamVector,
    batch: &[&O::Sample],
    h: f64,
) -> Result<FdReport> {
    let n = theta.n_params();
    if n > 10_000 {
        return Err(Error::Precondition(format!(
            "finite-difference check limited to 10000 parameters, got {n}"
        )));
    }
    let analytic = gradient(f, theta, batch)?.grad;
    let base = theta.flatten();
    let mut offset = 0;
    let mut segments = Vec::with_capacity(theta.segments().len());
    for (seg, aseg) in theta.segments().iter().zip(analytic.segments()) {
        let len = seg.value.len();
        let mut fd = Vec::with_capacity(len);
        for k in 0..len {
            let mut plus = base.clone();
            plus[offset + k] += h;
            let mut minus = base.clone();
            minus[offset + k] -= h;
            let fp = loss_value(f, &theta.with_flat(&plus)?, batch)?;
            let fm = loss_value(f, &theta.with_flat(&minus)?, batch)?;
            fd.push((fp - fm) / (2.0 * h));
        }
        let a = aseg.value.as_slice();
        let amax = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let fmax = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let denom = amax.max(fmax).max(1e-6);
        let err = a
            .iter()
            .zip(&fd)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        segments.push(SegmentCheck {
            name: seg.name.clone(),
            max_rel_error: err / denom,
            max_abs_grad: amax,
            zero_gradient: amax == 0.0,
        });
        offset += len;
    }
    Ok(FdReport { step: h, segments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    /// f(θ) = Σθ²
    struct SumSquares;

    impl Objective for SumSquares {
        type Sample = ();
        fn build<S: Scalar>(&self, g: &mut Graph<S>, p: &ParamVars, _: &[&()]) -> Result<Var> {
            let mut total = g.scalar_constant(0.0);
            for &v in p.vars() {
                let sq = g.square(v);
                let s = g.sum(sq);
                total = g.add(total, s);
            }
            Ok(total)
        }
    }

    /// f(θ) = ½ θᵀ diag(a) θ over the single segment "w".
    struct Quadratic(Vec<f64>);

    impl Objective for Quadratic {
        type Sample = ();
        fn build<S: Scalar>(&self, g: &mut Graph<S>, p: &ParamVars, _: &[&()]) -> Result<Var> {
            let w = p.get("w")?;
            let a = g.constant_f64(&Matrix::from_vec(1, self.0.len(), self.0.clone()));
            let sq = g.square(w);
            let q = g.mul(sq, a);
            let s = g.sum(q);
            Ok(g.scale(s, 0.5))
        }
    }

    struct Constant;

    impl Objective for Constant {
        type Sample = ();
        fn build<S: Scalar>(&self, g: &mut Graph<S>, _: &ParamVars, _: &[&()]) -> Result<Var> {
            Ok(g.scalar_constant(4.2))
        }
    }

    fn w(vals: &[f64]) -> ParamVector {
        ParamVector::from_pairs([("w".to_string(), Matrix::from_vec(1, vals.len(), vals.to_vec()))])
            .unwrap()
    }

    #[test]
    fn gradient_of_sum_of_squares() {
        let e = gradient(&SumSquares, &w(&[1.0, 2.0]), &[]).unwrap();
        assert_eq!(e.grad.flatten(), vec![2.0, 4.0]);
        assert_eq!(e.loss, 5.0);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let e = gradient(&Constant, &w(&[1.0, -3.0]), &[]).unwrap();
        assert_eq!(e.grad.flatten(), vec![0.0, 0.0]);
    }

    #[test]
    fn non_finite_parameter_names_segment() {
        let p = ParamVector::from_pairs([
            ("a".to_string(), Matrix::from_vec(1, 1, vec![1.0])),
            ("b".to_string(), Matrix::from_vec(1, 1, vec![f64::NAN])),
        ])
        .unwrap();
        match gradient(&SumSquares, &p, &[]) {
            Err(Error::NonFinite(seg)) => assert_eq!(seg, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hvp_of_diagonal_quadratic() {
        let f = Quadratic(vec![1.0, 3.0]);
        let hv = hvp(&f, &w(&[0.3, -0.7]), &[], &w(&[1.0, 1.0])).unwrap();
        assert_eq!(hv.flatten(), vec![1.0, 3.0]);
        let zero = hvp(&f, &w(&[0.3, -0.7]), &[], &w(&[0.0, 0.0])).unwrap();
        assert_eq!(zero.flatten(), vec![0.0, 0.0]);
    }

    #[test]
    fn finite_difference_check_on_quadratic() {
        let f = Quadratic(vec![1.0, 3.0, 0.5]);
        let r = finite_diff_check(&f, &w(&[0.3, -0.7, 2.0]), &[], 1e-4).unwrap();
        assert!(r.max_rel_error() < 1e-8, "{:?}", r);
    }

    #[test]
    fn frozen_segment_reports_zero_gradient() {
        let p = ParamVector::from_pairs([
            ("frozen".to_string(), Matrix::from_vec(1, 2, vec![1.0, 2.0])),
            ("w".to_string(), Matrix::from_vec(1, 2, vec![0.5, 0.25])),
        ])
        .unwrap();
        let r = finite_diff_check(&Quadratic(vec![2.0, 1.0]), &p, &[], 1e-4).unwrap();
        assert!(r.segment("frozen").unwrap().zero_gradient);
        assert!(!r.segment("w").unwrap().zero_gradient);
    }

    #[test]
    fn weight_decay_adds_scaled_identity() {
        let f = WeightDecay {
            inner: &Constant,
            coefficient: 0.5,
            prefixes: &[],
        };
        let e = gradient(&f, &w(&[2.0, -4.0]), &[]).unwrap();
        assert_eq!(e.grad.flatten(), vec![1.0, -2.0]);
    }
}
