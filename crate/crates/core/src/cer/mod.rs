//! Cost-effective reranking: pick the training instances and, within them,
//! the cells a human should annotate next.
//!
//! Instance scorers: influence on the worst validation points, latent
//! uncertainty of the prediction. Feature scorers: influence under input
//! perturbation, latent uncertainty of the effective attention, and the
//! counterfactual prediction change when a cell's attention is switched off.
//! The random scorers are the control arm.

mod influence;
mod logistic;

use std::collections::BTreeSet;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TimeSeriesInstance};
use crate::error::{Error, Result};
use crate::model::{task_loss, AttentionModel, TaskObjective};
use crate::nap::{posterior, standard_normal, AnnotationStore};
use crate::rng;
use crate::tensor::{CgOptions, Matrix, ParamVector, WeightDecay};

pub use influence::{influence_of, influences, s_test};
pub use logistic::LogisticModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstScorer {
    Influence,
    Uncertainty,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatScorer {
    Influence,
    Uncertainty,
    Counterfactual,
    Random,
}

impl std::str::FromStr for InstScorer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "influence" => Ok(Self::Influence),
            "uncertainty" => Ok(Self::Uncertainty),
            "random" => Ok(Self::Random),
            _ => Err(Error::Validation(format!("unknown instance scorer {s:?}"))),
        }
    }
}

impl std::str::FromStr for FeatScorer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "influence" => Ok(Self::Influence),
            "uncertainty" => Ok(Self::Uncertainty),
            "counterfactual" => Ok(Self::Counterfactual),
            "random" => Ok(Self::Random),
            _ => Err(Error::Validation(format!("unknown feature scorer {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreFlag {
    /// The influence solve stopped before reaching its tolerance.
    CgNotConverged,
    /// The feature has zero spread on the training split.
    ConstantFeature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub t: usize,
    pub d: usize,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<ScoreFlag>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankEntry {
    pub instance_id: String,
    /// Position in the training split.
    pub index: usize,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<ScoreFlag>,
    pub features: Vec<FeatureScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgSummary {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankReport {
    pub round: usize,
    pub p: usize,
    pub k: usize,
    pub f: usize,
    pub inst_scorer: InstScorer,
    pub feat_scorer: FeatScorer,
    pub seed: u64,
    pub validation_ids: Vec<String>,
    pub entries: Vec<RerankEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cg: Option<CgSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CerConfig {
    pub p: usize,
    pub k: usize,
    pub f: usize,
    pub inst_scorer: InstScorer,
    pub feat_scorer: FeatScorer,
    /// Latent draws for the uncertainty scorers.
    pub samples: usize,
    pub cg: CgOptions,
    /// Weight decay of the training objective whose Hessian is inverted.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for CerConfig {
    fn default() -> Self {
        Self {
            p: 20,
            k: 16,
            f: 4,
            inst_scorer: InstScorer::Uncertainty,
            feat_scorer: FeatScorer::Counterfactual,
            samples: 30,
            cg: CgOptions::default(),
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

/// Frozen snapshot the scorers read. Annotations refer to `train`.
#[derive(Clone, Copy)]
pub struct CerInputs<'a> {
    pub model: &'a AttentionModel,
    pub params: &'a ParamVector,
    pub train: &'a Dataset,
    pub valid: &'a Dataset,
    pub store: &'a AnnotationStore,
}

/// Indices ordered by score descending, lower index first on ties.
pub fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Sample variance with the `n − 1` denominator.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

impl<'a> CerInputs<'a> {
    /// Posterior-mean latent of the store.
    pub fn mean_latent(&self) -> Result<Matrix<f64>> {
        Ok(posterior(self.model, self.params, self.train, self.store)?.0)
    }

    /// Task loss of each instance under the mean latent.
    pub fn losses(&self, ds: &Dataset) -> Result<Vec<f64>> {
        let z = self.mean_latent()?;
        let xs: Vec<&Matrix<f64>> = ds.iter().map(|u| &u.x).collect();
        let out = self.model.infer(self.params, &xs, Some(&z))?;
        out.iter()
            .zip(ds.iter())
            .map(|(o, u)| task_loss(&o.y_hat, &u.y, self.model.config().task))
            .collect()
    }

    /// Ids of the `p` validation instances with the highest loss.
    pub fn select_validation_subset(&self, p: usize) -> Result<Vec<String>> {
        if self.valid.is_empty() {
            return Err(Error::Precondition("validation set is empty".into()));
        }
        if p == 0 || p > self.valid.len() {
            return Err(Error::Precondition(format!("P must lie in [1, {}], got {p}", self.valid.len())));
        }
        let losses = self.losses(self.valid)?;
        Ok(rank_desc(&losses)
            .into_iter()
            .take(p)
            .map(|i| self.valid.instances()[i].id.clone())
            .collect())
    }

    /// `s = (H + λI)⁻¹ Σ_p ∇L(val_p)` over the given validation ids.
    pub fn s_test(&self, validation_ids: &[String], opts: &CgOptions, weight_decay: f64) -> Result<(ParamVector, CgSummary)> {
        let z = self.mean_latent()?;
        let loss = TaskObjective {
            model: self.model,
            latent: Some(&z),
        };
        let hess = WeightDecay {
            inner: &loss,
            coefficient: weight_decay,
            prefixes: &[],
        };
        let val: Vec<&TimeSeriesInstance> = validation_ids
            .iter()
            .map(|id| self.valid.require(id))
            .collect::<Result<_>>()?;
        let sol = s_test(&loss, &hess, self.params, &self.train.refs(), &val, opts)?;
        if !sol.converged {
            log::warn!("influence solve did not converge: residual {:.3e}", sol.residual);
        }
        let summary = CgSummary {
            iterations: sol.iterations,
            residual: sol.residual,
            converged: sol.converged,
        };
        Ok((sol.x, summary))
    }

    /// Influence of each instance given a solved `s`.
    pub fn instance_influence(&self, s: &ParamVector, points: &[&TimeSeriesInstance]) -> Result<Vec<f64>> {
        let z = self.mean_latent()?;
        let loss = TaskObjective {
            model: self.model,
            latent: Some(&z),
        };
        influences(&loss, self.params, s, points)
    }

    /// Latent draws shared by the uncertainty scorers; σ can be overridden.
    pub fn latent_draws(&self, samples: usize, seed: u64, sigma_override: Option<f64>) -> Result<Vec<Matrix<f64>>> {
        let (mu, sigma) = posterior(self.model, self.params, self.train, self.store)?;
        let sigma = match sigma_override {
            Some(s) => sigma.map(|_| s),
            None => sigma,
        };
        Ok((0..samples)
            .map(|s| {
                let eps = standard_normal(mu.rows(), mu.cols(), rng::derive_seed(seed, s as u64));
                Matrix::from_fn(mu.rows(), mu.cols(), |t, j| mu.get(t, j) + sigma.get(t, j) * eps.get(t, j))
            })
            .collect())
    }

    /// Mean over outputs of the sample variance of `ŷ` across latent draws.
    pub fn instance_uncertainty(&self, points: &[&TimeSeriesInstance], draws: &[Matrix<f64>]) -> Result<Vec<f64>> {
        if draws.len() < 2 {
            return Err(Error::Precondition("uncertainty needs at least 2 latent draws".into()));
        }
        let xs: Vec<&Matrix<f64>> = points.iter().map(|u| &u.x).collect();
        let preds: Vec<Vec<Vec<f64>>> = draws
            .par_iter()
            .map(|z| Ok(self.model.infer(self.params, &xs, Some(z))?.into_iter().map(|o| o.y_hat).collect()))
            .collect::<Result<_>>()?;
        let l = self.model.config().l;
        Ok((0..points.len())
            .map(|i| {
                (0..l)
                    .map(|j| sample_variance(&preds.iter().map(|p| p[i][j]).collect::<Vec<_>>()))
                    .sum::<f64>()
                    / l as f64
            })
            .collect())
    }

    /// Sample variance of `β_t γ_{t,d}` across latent draws, T×D.
    pub fn feature_uncertainty(&self, u: &TimeSeriesInstance, draws: &[Matrix<f64>]) -> Result<Matrix<f64>> {
        if draws.len() < 2 {
            return Err(Error::Precondition("uncertainty needs at least 2 latent draws".into()));
        }
        let v = self.model.embed_inputs(self.params, &u.x)?;
        let maps = draws
            .iter()
            .map(|z| self.model.forward_attention(self.params, &v, Some(z)))
            .collect::<Result<Vec<_>>>()?;
        let c = self.model.config();
        Ok(Matrix::from_fn(c.t, c.d, |t, d| {
            sample_variance(&maps.iter().map(|m| m.effective(t, d)).collect::<Vec<_>>())
        }))
    }

    /// Prediction change when the attention of `(t, d)` is forced to zero,
    /// under the mean latent: `(‖Δ‖₂, Δ)`.
    pub fn counterfactual(&self, u: &TimeSeriesInstance, t: usize, d: usize) -> Result<(f64, Vec<f64>)> {
        let z = self.mean_latent()?;
        let v = self.model.embed_inputs(self.params, &u.x)?;
        let attn = self.model.forward_attention(self.params, &v, Some(&z))?;
        counterfactual_from(self.model, self.params, &attn, &[(t, d)])
    }

    /// Counterfactual scores for every cell, T×D.
    pub fn counterfactual_grid(&self, u: &TimeSeriesInstance, z: &Matrix<f64>) -> Result<Matrix<f64>> {
        let v = self.model.embed_inputs(self.params, &u.x)?;
        let attn = self.model.forward_attention(self.params, &v, Some(z))?;
        let c = self.model.config();
        let mut out = Matrix::zeros(c.t, c.d);
        for t in 0..c.t {
            for d in 0..c.d {
                out.set(t, d, counterfactual_from(self.model, self.params, &attn, &[(t, d)])?.0);
            }
        }
        Ok(out)
    }

    /// Feature influence: mean of `|I(u + δ e_{t,d}) − I(u)|` over
    /// `δ ∈ {−2σ_d, −σ_d, σ_d, 2σ_d}`; T×D with per-cell flags.
    pub fn feature_influence(
        &self,
        u: &TimeSeriesInstance,
        s: &ParamVector,
        stats: &[(f64, f64)],
    ) -> Result<Vec<FeatureScore>> {
        let z = self.mean_latent()?;
        let loss = TaskObjective {
            model: self.model,
            latent: Some(&z),
        };
        let base = influence_of(&loss, self.params, s, u)?;
        let c = self.model.config();
        (0..c.t * c.d)
            .into_par_iter()
            .map(|k| {
                let (t, d) = (k / c.d, k % c.d);
                let sd = stats[d].1;
                if sd == 0.0 {
                    return Ok(FeatureScore {
                        t,
                        d,
                        score: 0.0,
                        flags: vec![ScoreFlag::ConstantFeature],
                    });
                }
                let mut acc = 0.0;
                for m in [-2.0, -1.0, 1.0, 2.0] {
                    let moved = u.perturbed(t, d, m * sd);
                    acc += (influence_of(&loss, self.params, s, &moved)? - base).abs();
                }
                Ok(FeatureScore {
                    t,
                    d,
                    score: acc / 4.0,
                    flags: Vec::new(),
                })
            })
            .collect()
    }
}

/// `(‖ŷ − ŷ_off‖₂, ŷ − ŷ_off)` from a fixed attention map.
pub fn counterfactual_from(
    model: &AttentionModel,
    params: &ParamVector,
    attn: &crate::model::AttentionMap,
    off: &[(usize, usize)],
) -> Result<(f64, Vec<f64>)> {
    let base = model.predict(params, attn)?;
    let cf = model.predict_with_override(params, attn, off)?;
    let delta: Vec<f64> = base.iter().zip(&cf).map(|(a, b)| a - b).collect();
    Ok((delta.iter().map(|x| x * x).sum::<f64>().sqrt(), delta))
}

/// Uniform scores in [0, 1) keyed by seed and position.
pub fn random_scores(n: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, stream);
    (0..n).map(|_| r.random::<f64>()).collect()
}

const RANDOM_INSTANCE_STREAM: u64 = 0x1_0000;
const RANDOM_FEATURE_STREAM: u64 = 0x2_0000;
const UNCERTAINTY_STREAM: u64 = 0x3_0000;

/// Top-P validation losers → instance scores over every training point not
/// in `exclude` → top K → feature scores over every cell → top F.
pub fn rerank(inp: &CerInputs<'_>, cfg: &CerConfig, round: usize, exclude: &BTreeSet<String>) -> Result<RerankReport> {
    let c = inp.model.config();
    if cfg.k == 0 || cfg.k > inp.train.len() {
        return Err(Error::Precondition(format!("K must lie in [1, {}], got {}", inp.train.len(), cfg.k)));
    }
    if cfg.f == 0 || cfg.f > c.t * c.d {
        return Err(Error::Precondition(format!("F must lie in [1, {}], got {}", c.t * c.d, cfg.f)));
    }
    let validation_ids = inp.select_validation_subset(cfg.p)?;
    let candidates: Vec<usize> = (0..inp.train.len())
        .filter(|&i| !exclude.contains(&inp.train.instances()[i].id))
        .collect();
    let points: Vec<&TimeSeriesInstance> = candidates.iter().map(|&i| &inp.train.instances()[i]).collect();
    let round_seed = rng::derive_seed(cfg.seed, round as u64);

    let needs_s = cfg.inst_scorer == InstScorer::Influence || cfg.feat_scorer == FeatScorer::Influence;
    let (s, cg) = if needs_s {
        let (s, summary) = inp.s_test(&validation_ids, &cfg.cg, cfg.weight_decay)?;
        (Some(s), Some(summary))
    } else {
        (None, None)
    };
    let inst_flags = match &cg {
        Some(sm) if !sm.converged => vec![ScoreFlag::CgNotConverged],
        _ => Vec::new(),
    };
    let draws = if cfg.inst_scorer == InstScorer::Uncertainty || cfg.feat_scorer == FeatScorer::Uncertainty {
        inp.latent_draws(cfg.samples, rng::derive_seed(round_seed, UNCERTAINTY_STREAM), None)?
    } else {
        Vec::new()
    };

    let inst_scores = match cfg.inst_scorer {
        InstScorer::Influence => inp.instance_influence(s.as_ref().expect("solved"), &points)?,
        InstScorer::Uncertainty => inp.instance_uncertainty(&points, &draws)?,
        InstScorer::Random => random_scores(points.len(), round_seed, RANDOM_INSTANCE_STREAM),
    };
    if let Some(i) = inst_scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("instance score of {}", points[i].id)));
    }

    let z = inp.mean_latent()?;
    let stats = inp.train.feature_stats();
    let order = rank_desc(&inst_scores);
    let mut entries = Vec::with_capacity(cfg.k.min(points.len()));
    for &j in order.iter().take(cfg.k) {
        let u = points[j];
        let index = candidates[j];
        let scores: Vec<FeatureScore> = match cfg.feat_scorer {
            FeatScorer::Influence => inp.feature_influence(u, s.as_ref().expect("solved"), &stats)?,
            FeatScorer::Uncertainty => grid_scores(&inp.feature_uncertainty(u, &draws)?),
            FeatScorer::Counterfactual => grid_scores(&inp.counterfactual_grid(u, &z)?),
            FeatScorer::Random => grid_scores(&Matrix::from_vec(
                c.t,
                c.d,
                random_scores(c.t * c.d, round_seed, RANDOM_FEATURE_STREAM + index as u64),
            )),
        };
        if let Some(fs) = scores.iter().find(|f| !f.score.is_finite()) {
            return Err(Error::NonFinite(format!("feature score of {} at ({}, {})", u.id, fs.t, fs.d)));
        }
        let values: Vec<f64> = scores.iter().map(|f| f.score).collect();
        let features = rank_desc(&values).into_iter().take(cfg.f).map(|k| scores[k].clone()).collect();
        entries.push(RerankEntry {
            instance_id: u.id.clone(),
            index,
            score: inst_scores[j],
            flags: inst_flags.clone(),
            features,
        });
    }
    Ok(RerankReport {
        round,
        p: cfg.p,
        k: cfg.k,
        f: cfg.f,
        inst_scorer: cfg.inst_scorer,
        feat_scorer: cfg.feat_scorer,
        seed: cfg.seed,
        validation_ids,
        entries,
        cg,
    })
}

fn grid_scores(m: &Matrix<f64>) -> Vec<FeatureScore> {
    (0..m.rows())
        .flat_map(|t| (0..m.cols()).map(move |d| (t, d)))
        .map(|(t, d)| FeatureScore {
            t,
            d,
            score: m.get(t, d),
            flags: Vec::new(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_breaks_ties_by_index() {
        assert_eq!(rank_desc(&[1.0, 3.0, 3.0, 0.5, 1.0]), vec![1, 2, 0, 4, 3]);
    }

    #[test]
    fn variance_uses_unbiased_denominator() {
        assert_eq!(sample_variance(&[1.0, 3.0]), 2.0);
        assert_eq!(sample_variance(&[4.0, 4.0, 4.0]), 0.0);
    }
}
