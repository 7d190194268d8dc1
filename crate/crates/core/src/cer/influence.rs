//! Influence of training points on a validation loss.
//!
//! `I(u, u_val) = −∇L(u_val)ᵀ (H + λI)⁻¹ ∇L(u)`. Summed over a validation
//! subset this is `−∇L(u)ᵀ s` with `s = (H + λI)⁻¹ Σ_p ∇L(u_val_p)`, so one
//! solve serves every training point. Higher means removing `u` lowers the
//! validation loss: `L(θ₋ᵤ) − L(θ) ≈ −I/N`.

use rayon::prelude::*;

use crate::error::Result;
use crate::tensor::{cg_solve, gradient, hvp, CgOptions, CgSolution, Objective, ParamVector};

/// `(H + λI)⁻¹ Σ_p ∇L(val_p)` with `H` the Hessian of `hessian` over `train`.
pub fn s_test<O, H>(
    loss: &O,
    hessian: &H,
    params: &ParamVector,
    train: &[&O::Sample],
    valid: &[&O::Sample],
    opts: &CgOptions,
) -> Result<CgSolution>
where
    O: Objective,
    H: Objective<Sample = O::Sample>,
{
    let mut rhs = params.zeros_like();
    for g in valid
        .par_iter()
        .map(|u| gradient(loss, params, std::slice::from_ref(u)).map(|e| e.grad))
        .collect::<Result<Vec<_>>>()?
    {
        rhs.axpy(1.0, &g)?;
    }
    cg_solve(|v| hvp(hessian, params, train, v), &rhs, opts)
}

/// `−∇L(u)ᵀ s` for one sample.
pub fn influence_of<O: Objective>(loss: &O, params: &ParamVector, s: &ParamVector, u: &O::Sample) -> Result<f64> {
    let g = gradient(loss, params, &[u])?.grad;
    Ok(-g.dot(s)?)
}

/// Influence of every sample in `points`.
pub fn influences<O: Objective>(
    loss: &O,
    params: &ParamVector,
    s: &ParamVector,
    points: &[&O::Sample],
) -> Result<Vec<f64>> {
    points.par_iter().map(|u| influence_of(loss, params, s, u)).collect()
}
