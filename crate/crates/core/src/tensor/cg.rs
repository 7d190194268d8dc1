use log::warn;
use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CgOptions {
    pub damping: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            damping: 0.01,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CgSolution {
    pub x: ParamVector,
    pub iterations: usize,
    /// `‖(H + λI)x − b‖ / ‖b‖` for the returned iterate.
    pub residual: f64,
    pub converged: bool,
    /// Set when the solve stopped on stagnation or non-positive curvature.
    pub warning: bool,
}

/// Solve `(H + λI)x = b` by conjugate gradients, with `H` available only
/// through `hvp`. Returns the best iterate seen.
pub fn cg_solve(
    mut hvp: impl FnMut(&ParamVector) -> Result<ParamVector>,
    b: &ParamVector,
    opts: &CgOptions,
) -> Result<CgSolution> {
    if opts.max_iter == 0 {
        return Err(Error::Precondition("cg max_iter must be at least 1".into()));
    }
    if opts.damping < 0.0 {
        return Err(Error::Precondition("cg damping must be nonnegative".into()));
    }
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return Ok(CgSolution {
            x: b.zeros_like(),
            iterations: 0,
            residual: 0.0,
            converged: true,
            warning: false,
        });
    }

    let apply = |hvp: &mut dyn FnMut(&ParamVector) -> Result<ParamVector>, v: &ParamVector| {
        let mut out = hvp(v)?;
        out.axpy(opts.damping, v)?;
        Ok::<_, Error>(out)
    };

    let mut x = b.zeros_like();
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.dot(&r)?;
    let mut best = (x.clone(), 1.0);
    let mut since_best = 0;
    let mut iterations = 0;
    let mut warning = false;
    let mut converged = false;

    for _ in 0..opts.max_iter {
        let ap = apply(&mut hvp, &p)?;
        let pap = p.dot(&ap)?;
        iterations += 1;
        if pap.is_nan() || pap <= 0.0 {
            warning = true;
            warn!("cg: non-positive curvature {pap:e} at iteration {iterations}");
            break;
        }
        let alpha = rs / pap;
        x.axpy(alpha, &p)?;
        r.axpy(-alpha, &ap)?;
        let rs_new = r.dot(&r)?;
        let rel = rs_new.sqrt() / bnorm;
        if rel < best.1 {
            best = (x.clone(), rel);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if rel <= opts.tol {
            converged = true;
            break;
        }
        if since_best >= 10 {
            warning = true;
            warn!("cg: residual stagnated at {:e} after {iterations} iterations", best.1);
            break;
        }
        let beta = rs_new / rs;
        rs = rs_new;
        let mut next = r.clone();
        next.axpy(beta, &p)?;
        p = next;
    }

    let (x, _) = best;
    let mut res = apply(&mut hvp, &x)?;
    res.axpy(-1.0, b)?;
    let residual = res.norm() / bnorm;
    if !converged && !warning {
        warn!("cg: max_iter {} reached with residual {residual:e}", opts.max_iter);
    }
    Ok(CgSolution {
        x,
        iterations,
        residual,
        converged,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    fn vec(vals: &[f64]) -> ParamVector {
        ParamVector::from_pairs([("w".to_string(), Matrix::from_vec(1, vals.len(), vals.to_vec()))])
            .unwrap()
    }

    fn diag(d: Vec<f64>) -> impl FnMut(&ParamVector) -> Result<ParamVector> {
        move |v: &ParamVector| {
            let f = v.flatten();
            Ok(vec(&f.iter().zip(&d).map(|(a, b)| a * b).collect::<Vec<_>>()))
        }
    }

    fn opts(damping: f64) -> CgOptions {
        CgOptions {
            damping,
            ..CgOptions::default()
        }
    }

    #[test]
    fn identity_system() {
        let b = vec(&[0.5, -2.0, 3.0]);
        let s = cg_solve(diag(vec![1.0; 3]), &b, &opts(0.0)).unwrap();
        assert!(s.converged);
        for (x, y) in s.x.flatten().iter().zip(b.flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_system() {
        let s = cg_solve(diag(vec![2.0, 4.0]), &vec(&[2.0, 4.0]), &opts(0.0)).unwrap();
        for x in s.x.flatten() {
            assert!((x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_hessian_returns_b_over_damping() {
        let b = vec(&[1.0, -3.0, 0.25]);
        let s = cg_solve(diag(vec![0.0; 3]), &b, &opts(0.01)).unwrap();
        for (x, y) in s.x.flatten().iter().zip(b.flatten()) {
            assert!((x - y / 0.01).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_rhs_short_circuits() {
        let mut calls = 0;
        let s = cg_solve(
            |v| {
                calls += 1;
                Ok(v.clone())
            },
            &vec(&[0.0, 0.0]),
            &opts(0.01),
        )
        .unwrap();
        assert_eq!(s.iterations, 0);
        assert_eq!(s.x.flatten(), vec![0.0, 0.0]);
        assert_eq!(calls, 0);
    }

    #[test]
    fn indefinite_system_flags_warning() {
        let s = cg_solve(diag(vec![1.0, -5.0]), &vec(&[1.0, 1.0]), &opts(0.0)).unwrap();
        assert!(s.warning);
        assert!(s.x.flatten().iter().all(|v| v.is_finite()));
    }
}
