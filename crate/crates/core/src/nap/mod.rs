//! Neural attention process: ternary masks, the annotation store, the
//! latent summary of all masks, attention conditioned on it, and the single
//! adaptation training that teaches the model to use it.

mod latent;
mod loss;
mod mask;
mod store;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::AttentionModel;
use crate::rng;
use crate::tensor::{gradient, ParamVector};
use crate::train::Adam;

pub use latent::{
    conditioned_attention, conditioned_infer, context_items, encode_annotations, latent_params, posterior,
    sample_latent, standard_normal, summarize, summary, ContextItem, LatentMode, LatentSummary,
};
pub use loss::{kl_standard_normal, MaskLoss, NapLossParts, NapObjective, NapWeights};
pub use mask::{AttentionMask, FeatureCell, Ternary, TimeCell};
pub use store::{Annotation, AnnotationStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NapConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda_mask: f64,
    pub lambda_kl: f64,
    pub mask_loss: MaskLoss,
    pub seed: u64,
}

impl Default for NapConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 32,
            lr: 1e-3,
            lambda_mask: 1.0,
            lambda_kl: 0.1,
            mask_loss: MaskLoss::Rescaled,
            seed: 0,
        }
    }
}

impl NapConfig {
    pub fn weights(&self) -> NapWeights {
        NapWeights {
            lambda_mask: self.lambda_mask,
            lambda_kl: self.lambda_kl,
            mask_loss: self.mask_loss,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adaptation {
    pub params: ParamVector,
    /// Objective value of each step's sampled task.
    pub log: Vec<f64>,
}

/// Objective over the whole store as context and target, posterior mean.
pub fn full_store_objective<'a>(
    model: &'a AttentionModel,
    pool: &'a Dataset,
    store: &'a AnnotationStore,
    weights: NapWeights,
) -> Result<NapObjective<'a>> {
    let items = context_items(pool, store)?;
    Ok(NapObjective {
        model,
        context: items.clone(),
        targets: items,
        eps: None,
        weights,
    })
}

/// Meta-train every parameter on randomly subsampled contexts. Each step
/// draws a context size `c ~ U{1..K}`, a context of `c` masks, a minibatch
/// of training instances for the task term, and reparameterisation noise;
/// all `K` masks are supervision targets.
pub fn adapt_train(
    model: &AttentionModel,
    params: &ParamVector,
    train: &Dataset,
    store: &AnnotationStore,
    cfg: &NapConfig,
) -> Result<Adaptation> {
    if store.is_empty() {
        return Err(Error::Precondition("adaptation needs at least one annotation".into()));
    }
    if train.is_empty() || cfg.batch_size == 0 {
        return Err(Error::Precondition("adaptation needs training instances and a positive batch size".into()));
    }
    let c = model.config();
    let items = context_items(train, store)?;
    let k = items.len();
    let mut params = params.clone();
    let mut opt = Adam::new(cfg.lr, &[]);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut r = rng::stream(cfg.seed, step as u64);
        let size = r.random_range(1..=k);
        let mut picked = index::sample(&mut r, k, size).into_vec();
        picked.sort_unstable();
        let context = picked.iter().map(|&i| items[i]).collect();
        let mut batch_ix = index::sample(&mut r, train.len(), cfg.batch_size.min(train.len())).into_vec();
        batch_ix.sort_unstable();
        let batch: Vec<_> = batch_ix.iter().map(|&i| &train.instances()[i]).collect();
        let eps = standard_normal(c.t, c.d_z, r.random());
        let obj = NapObjective {
            model,
            context,
            targets: items.clone(),
            eps: Some(eps),
            weights: cfg.weights(),
        };
        let eval = gradient(&obj, &params, &batch)?;
        opt.update(&mut params, &eval.grad)?;
        log.push(eval.loss);
    }
    Ok(Adaptation { params, log })
}
