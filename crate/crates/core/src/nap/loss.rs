use serde::{Deserialize, Serialize};

use super::latent::{latent_graph, posterior_graph, ContextItem};
use crate::data::TimeSeriesInstance;
use crate::error::Result;
use crate::model::{AttentionModel, PROB_CLIP};
use crate::tensor::{Graph, Matrix, Objective, ParamVars, ParamVector, Scalar, Var};

/// How feature-axis mask cells supervise `γ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskLoss {
    /// BCE between `γ²` and the mask: "attend" pushes `|γ| → 1`, "not
    /// attend" pushes `γ → 0`, which switches the feature off.
    Squared,
    /// BCE between `(γ + 1)/2` and the mask: "not attend" pushes `γ → −1`.
    Rescaled,
}

/// Loss weights shared by the objective and its components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NapWeights {
    pub lambda_mask: f64,
    pub lambda_kl: f64,
    pub mask_loss: MaskLoss,
}

/// Value of each term of the adaptation objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NapLossParts {
    pub task: f64,
    pub mask: f64,
    pub kl: f64,
    pub total: f64,
}

/// `task + λ_mask·mask + λ_KL·Σ_t KL(N(μ_t, σ_t) ‖ N(0, I))`, with the latent
/// computed from `context` and mask supervision on `targets`. The task term
/// is the mean loss of the sample batch under the shared latent.
pub struct NapObjective<'a> {
    pub model: &'a AttentionModel,
    pub context: Vec<ContextItem<'a>>,
    pub targets: Vec<ContextItem<'a>>,
    /// Reparameterisation noise, T×d_z; `None` uses the posterior mean.
    pub eps: Option<Matrix<f64>>,
    pub weights: NapWeights,
}

struct Terms {
    task: Var,
    mask: Var,
    kl: Var,
    total: Var,
}

/// Closed-form `KL(N(μ, σ²) ‖ N(0, 1)) = ½(σ² + μ² − 1) − ln σ`, summed.
pub fn kl_standard_normal(mu: &[f64], sigma: &[f64]) -> f64 {
    mu.iter()
        .zip(sigma)
        .map(|(&m, &s)| 0.5 * (s * s + m * m - 1.0) - s.ln())
        .sum()
}

fn weighted_mean<S: Scalar>(g: &mut Graph<S>, x: Var, w: Matrix<f64>) -> Option<Var> {
    let n: f64 = w.sum();
    if n == 0.0 {
        return None;
    }
    let w = g.constant_f64(&w);
    let xw = g.mul(x, w);
    let s = g.sum(xw);
    Some(g.scale(s, 1.0 / n))
}

fn add_opt<S: Scalar>(g: &mut Graph<S>, acc: Option<Var>, x: Option<Var>) -> Option<Var> {
    match (acc, x) {
        (Some(a), Some(b)) => Some(g.add(a, b)),
        (a, b) => a.or(b),
    }
}

impl NapObjective<'_> {
    fn terms<S: Scalar>(&self, g: &mut Graph<S>, p: &ParamVars, batch: &[&TimeSeriesInstance]) -> Result<Terms> {
        let c = self.model.config();
        let post = posterior_graph(self.model, g, p, &self.context)?;
        let z = latent_graph(g, &post, self.eps.as_ref());

        let task = if batch.is_empty() {
            g.scalar_constant(0.0)
        } else {
            let xs: Vec<&Matrix<f64>> = batch.iter().map(|u| &u.x).collect();
            let ys: Vec<&[f64]> = batch.iter().map(|u| u.y.as_slice()).collect();
            let inputs = self.model.input_nodes(g, &xs)?;
            let f = self.model.forward_graph(g, p, &inputs, Some(&z))?;
            let y = self.model.targets(g, &ys)?;
            self.model.loss_graph(g, f.logits, y)
        };

        let mask = if self.targets.is_empty() {
            g.scalar_constant(0.0)
        } else {
            let k = self.targets.len();
            let xs: Vec<&Matrix<f64>> = self.targets.iter().map(|(u, _)| &u.x).collect();
            let inputs = self.model.input_nodes(g, &xs)?;
            let v = self.model.embed_nodes(g, p, &inputs)?;
            let (beta, gamma) = self.model.attend(g, p, &v, Some(&z))?;
            let cell = |t: usize, want: i8| {
                Matrix::from_fn(k, c.d, |i, d| (self.targets[i].1.feature(t, d).value() == want) as u8 as f64)
            };
            // Feature axis: one pooled mean over every annotated cell.
            let mut on_sum: Option<Var> = None;
            let mut off_sum: Option<Var> = None;
            let mut count = 0.0;
            for (t, &gt) in gamma.iter().enumerate() {
                let (on, off) = (cell(t, 1), cell(t, 0));
                count += on.sum() + off.sum();
                let p_on = match self.weights.mask_loss {
                    MaskLoss::Squared => g.square(gt),
                    MaskLoss::Rescaled => {
                        let h = g.add_scalar(gt, 1.0);
                        g.scale(h, 0.5)
                    }
                };
                let p_on = g.clamp(p_on, PROB_CLIP, 1.0 - PROB_CLIP);
                let lp = g.ln(p_on);
                let q = g.neg(p_on);
                let q = g.add_scalar(q, 1.0);
                let lq = g.ln(q);
                let on_w = g.constant_f64(&on);
                let off_w = g.constant_f64(&off);
                let a = g.mul(lp, on_w);
                let a = g.sum(a);
                let b = g.mul(lq, off_w);
                let b = g.sum(b);
                on_sum = add_opt(g, on_sum, Some(a));
                off_sum = add_opt(g, off_sum, Some(b));
            }
            let feat = match add_opt(g, on_sum, off_sum) {
                Some(s) if count > 0.0 => Some(g.scale(s, -1.0 / count)),
                _ => None,
            };
            // Time axis: separate means over attend and not-attend steps.
            let tw = |want: i8| Matrix::from_fn(k, c.t, |i, t| (self.targets[i].1.time(t).value() == want) as u8 as f64);
            let bc = g.clamp(beta, PROB_CLIP, 1.0 - PROB_CLIP);
            let lb = g.ln(bc);
            let nb = g.neg(bc);
            let nb = g.add_scalar(nb, 1.0);
            let lnb = g.ln(nb);
            let on_t = weighted_mean(g, lb, tw(1)).map(|v| g.neg(v));
            let off_t = weighted_mean(g, lnb, tw(0)).map(|v| g.neg(v));
            let time = add_opt(g, on_t, off_t);
            match add_opt(g, feat, time) {
                Some(m) => m,
                None => g.scalar_constant(0.0),
            }
        };

        let kl = if self.context.is_empty() {
            g.scalar_constant(0.0)
        } else {
            let mut acc: Option<Var> = None;
            for &(mu, sigma) in &post {
                let s2 = g.square(sigma);
                let m2 = g.square(mu);
                let a = g.add(s2, m2);
                let a = g.add_scalar(a, -1.0);
                let a = g.scale(a, 0.5);
                let ls = g.ln(sigma);
                let term = g.sub(a, ls);
                let term = g.sum(term);
                acc = add_opt(g, acc, Some(term));
            }
            acc.expect("t >= 1")
        };

        let wm = g.scale(mask, self.weights.lambda_mask);
        let wk = g.scale(kl, self.weights.lambda_kl);
        let total = g.add(task, wm);
        let total = g.add(total, wk);
        Ok(Terms { task, mask, kl, total })
    }

    /// Each term at `params` (f64 tape, no gradient).
    pub fn parts(&self, params: &ParamVector, batch: &[&TimeSeriesInstance]) -> Result<NapLossParts> {
        let mut g: Graph<f64> = Graph::new();
        let p = params.bind(&mut g, None)?;
        let t = self.terms(&mut g, &p, batch)?;
        Ok(NapLossParts {
            task: g.scalar(t.task),
            mask: g.scalar(t.mask),
            kl: g.scalar(t.kl),
            total: g.scalar(t.total),
        })
    }
}

impl Objective for NapObjective<'_> {
    type Sample = TimeSeriesInstance;

    fn build<S: Scalar>(&self, g: &mut Graph<S>, params: &ParamVars, batch: &[&TimeSeriesInstance]) -> Result<Var> {
        Ok(self.terms(g, params, batch)?.total)
    }
}
