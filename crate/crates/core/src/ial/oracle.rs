use std::collections::BTreeSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cer::RerankReport;
use crate::data::{Dataset, TimeSeriesInstance};
use crate::error::{Error, Result};
use crate::nap::{AttentionMask, Ternary};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleScope {
    /// Only the reranked cells (and their timesteps) are answered.
    RequestedOnly,
    /// Every cell is answered.
    FullGrid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Probability of flipping an answered bit.
    pub noise: f64,
    /// Probability of answering "I don't know".
    pub idk: f64,
    pub scope: OracleScope,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            noise: 0.0,
            idk: 0.0,
            scope: OracleScope::RequestedOnly,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise) || !(0.0..=1.0).contains(&self.idk) || self.noise + self.idk > 1.0 {
            return Err(Error::Validation(
                "oracle rates must lie in [0, 1] with noise + idk <= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Source of masks for the instances of a rerank report.
pub trait Annotator {
    fn name(&self) -> &str;
    fn annotate(&mut self, report: &RerankReport, pool: &Dataset) -> Result<Vec<AttentionMask>>;
}

/// Simulated annotator answering from the ground-truth relevance grid.
#[derive(Clone, Debug)]
pub struct OracleAnnotator {
    pub config: OracleConfig,
    pub seed: u64,
}

impl Annotator for OracleAnnotator {
    fn name(&self) -> &str {
        "oracle"
    }

    fn annotate(&mut self, report: &RerankReport, pool: &Dataset) -> Result<Vec<AttentionMask>> {
        oracle_annotate(report, pool, &self.config, rng::derive_seed(self.seed, report.round as u64))
    }
}

fn answer(r: &mut rng::Rng, truth: bool, cfg: &OracleConfig) -> Ternary {
    if r.random::<f64>() < cfg.idk {
        return Ternary::Unknown;
    }
    let flip = r.random::<f64>() < cfg.noise;
    Ternary::from_bool(truth != flip)
}

/// Mask for one instance given the requested `(t, d)` cells.
pub fn oracle_mask(
    u: &TimeSeriesInstance,
    requested: &[(usize, usize)],
    cfg: &OracleConfig,
    seed: u64,
) -> Result<AttentionMask> {
    cfg.validate()?;
    let (Some(rel), Some(rel_t)) = (&u.relevance, &u.relevance_time) else {
        return Err(Error::Precondition(format!("instance {:?} has no relevance grid", u.id)));
    };
    let (t, d) = (u.t(), u.d());
    let mut r = rng::rng(seed);
    let mut mask = AttentionMask::unknown(u.id.clone(), t, d);
    let (cells, steps): (Vec<(usize, usize)>, BTreeSet<usize>) = match cfg.scope {
        OracleScope::FullGrid => ((0..t * d).map(|k| (k / d, k % d)).collect(), (0..t).collect()),
        OracleScope::RequestedOnly => (requested.to_vec(), requested.iter().map(|c| c.0).collect()),
    };
    for (tt, dd) in cells {
        if tt >= t || dd >= d {
            return Err(Error::Validation(format!("requested cell (t={tt}, d={dd}) out of range")));
        }
        mask.set_feature(tt, dd, answer(&mut r, rel[tt * d + dd], cfg));
    }
    for tt in steps {
        mask.set_time(tt, answer(&mut r, rel_t[tt], cfg));
    }
    Ok(mask)
}

/// Masks for every entry of a report, in report order.
pub fn oracle_annotate(report: &RerankReport, pool: &Dataset, cfg: &OracleConfig, seed: u64) -> Result<Vec<AttentionMask>> {
    report
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let u = pool.require(&e.instance_id)?;
            let cells: Vec<(usize, usize)> = e.features.iter().map(|f| (f.t, f.d)).collect();
            oracle_mask(u, &cells, cfg, rng::derive_seed(seed, i as u64))
        })
        .collect()
}
