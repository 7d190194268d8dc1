use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mask::AttentionMask;
use super::store::AnnotationStore;
use crate::data::{Dataset, TimeSeriesInstance};
use crate::error::{Error, Result};
use crate::model::{seg, AttentionMap, AttentionModel, Inference};
use crate::rng;
use crate::tensor::{Graph, Matrix, ParamVars, ParamVector, Scalar, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentMode {
    /// `z = μ + σ ⊙ ε`, ε seeded.
    Sample,
    /// `z = μ`.
    Mean,
}

/// Gaussian latent summary of a set of masks, one row per timestep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSummary {
    pub mu: Matrix<f64>,
    pub sigma: Matrix<f64>,
    pub z: Matrix<f64>,
    /// Number of masks summarized (0 = prior).
    pub k: usize,
}

/// Annotated instance paired with its mask.
pub type ContextItem<'a> = (&'a TimeSeriesInstance, &'a AttentionMask);

/// Resolve masks against an instance pool, in canonical (id, round) order
/// so that the summary does not depend on the store order.
pub fn context_items<'a>(pool: &'a Dataset, store: &'a AnnotationStore) -> Result<Vec<ContextItem<'a>>> {
    let mut entries: Vec<_> = store.entries().iter().collect();
    entries.sort_by(|a, b| (&a.mask.instance_id, a.round).cmp(&(&b.mask.instance_id, b.round)));
    entries.into_iter().map(|a| Ok((pool.require(&a.mask.instance_id)?, &a.mask))).collect()
}

/// Encoder outputs per timestep (K×r_dim each) on the tape.
pub(crate) fn encode_graph<S: Scalar>(
    model: &AttentionModel,
    g: &mut Graph<S>,
    p: &ParamVars,
    ctx: &[ContextItem<'_>],
) -> Result<Vec<Var>> {
    let c = model.config();
    for (u, m) in ctx {
        if (m.t(), m.d()) != (c.t, c.d) {
            return Err(Error::Shape(format!(
                "mask for {:?} is {}×{}, model expects {}×{}",
                u.id,
                m.t(),
                m.d(),
                c.t,
                c.d
            )));
        }
    }
    let xs: Vec<&Matrix<f64>> = ctx.iter().map(|(u, _)| &u.x).collect();
    let inputs = model.input_nodes(g, &xs)?;
    let v = model.embed_nodes(g, p, &inputs)?;
    let k = ctx.len();
    let steps: Vec<Var> = (0..c.t)
        .map(|t| {
            let fm = Matrix::from_fn(k, c.d, |i, d| S::from_f64(ctx[i].1.feature(t, d).value() as f64));
            let tm = Matrix::from_fn(k, 1, |i, _| S::from_f64(ctx[i].1.time(t).value() as f64));
            let fm = g.constant(fm);
            let tm = g.constant(tm);
            g.concat_cols(&[v[t], fm, tm])
        })
        .collect();
    let enc = model_gru(p, c.r_dim)?;
    Ok(enc.run(g, &steps))
}

fn model_gru(p: &ParamVars, hidden: usize) -> Result<crate::model::Gru> {
    crate::model::Gru::bind(p, seg::ENC, hidden)
}

/// Per-timestep `(μ_t, σ_t)` rows on the tape; the standard prior when the
/// context is empty.
pub(crate) fn posterior_graph<S: Scalar>(
    model: &AttentionModel,
    g: &mut Graph<S>,
    p: &ParamVars,
    ctx: &[ContextItem<'_>],
) -> Result<Vec<(Var, Var)>> {
    let c = model.config();
    if ctx.is_empty() {
        let mu = g.constant(Matrix::zeros(1, c.d_z));
        let sigma = g.constant(Matrix::filled(1, c.d_z, S::one()));
        return Ok(vec![(mu, sigma); c.t]);
    }
    let r = encode_graph(model, g, p, ctx)?;
    let (mw, mb) = (p.get(seg::MU_W)?, p.get(seg::MU_B)?);
    let (sw, sb) = (p.get(seg::SIGMA_W)?, p.get(seg::SIGMA_B)?);
    Ok(r.into_iter()
        .map(|rt| {
            let rbar = g.mean_rows(rt);
            let mu = g.matmul(rbar, mw);
            let mu = g.add_row(mu, mb);
            let s = g.matmul(rbar, sw);
            let s = g.add_row(s, sb);
            (mu, g.softplus(s))
        })
        .collect())
}

/// `z_t = μ_t + σ_t ⊙ ε_t` on the tape (`ε = None` gives `z = μ`).
pub(crate) fn latent_graph<S: Scalar>(
    g: &mut Graph<S>,
    post: &[(Var, Var)],
    eps: Option<&Matrix<f64>>,
) -> Vec<Var> {
    post.iter()
        .enumerate()
        .map(|(t, &(mu, sigma))| match eps {
            None => mu,
            Some(e) => {
                let row = Matrix::from_fn(1, e.cols(), |_, j| S::from_f64(e.get(t, j)));
                let row = g.constant(row);
                let noise = g.mul(sigma, row);
                g.add(mu, noise)
            }
        })
        .collect()
}

fn rows_to_matrix(g: &Graph<f64>, rows: impl Iterator<Item = Var>) -> Matrix<f64> {
    let rows: Vec<Vec<f64>> = rows.map(|v| g.value(v).row(0).to_vec()).collect();
    Matrix::from_rows(&rows)
}

/// Per-annotation encoder outputs, `K` matrices of shape T×r_dim.
pub fn encode_annotations(
    model: &AttentionModel,
    params: &ParamVector,
    ctx: &[ContextItem<'_>],
) -> Result<Vec<Matrix<f64>>> {
    if ctx.is_empty() {
        return Err(Error::Precondition("no annotations to encode".into()));
    }
    let mut g: Graph<f64> = Graph::new();
    let p = params.bind(&mut g, None)?;
    let r = encode_graph(model, &mut g, &p, ctx)?;
    let c = model.config();
    Ok((0..ctx.len())
        .map(|k| Matrix::from_fn(c.t, c.r_dim, |t, j| g.value(r[t]).get(k, j)))
        .collect())
}

/// Mean over annotations per timestep; `None` for an empty context.
pub fn summarize(r: &[Matrix<f64>]) -> Option<Matrix<f64>> {
    let first = r.first()?;
    let mut acc = Matrix::zeros(first.rows(), first.cols());
    for m in r {
        acc.add_assign(m);
    }
    let k = r.len() as f64;
    Some(acc.map(|v| v / k))
}

/// `μ = W_μ r̄ + b_μ`, `σ = softplus(W_σ r̄ + b_σ)`; the standard prior for
/// an empty context.
pub fn latent_params(
    model: &AttentionModel,
    params: &ParamVector,
    r_bar: Option<&Matrix<f64>>,
) -> Result<(Matrix<f64>, Matrix<f64>)> {
    let c = model.config();
    let Some(r) = r_bar else {
        return Ok((Matrix::zeros(c.t, c.d_z), Matrix::filled(c.t, c.d_z, 1.0)));
    };
    if r.shape() != (c.t, c.r_dim) {
        return Err(Error::Shape(format!("summary must be {}×{}", c.t, c.r_dim)));
    }
    let mu = r.matmul(params.require(seg::MU_W)?);
    let mb = params.require(seg::MU_B)?;
    let s = r.matmul(params.require(seg::SIGMA_W)?);
    let sb = params.require(seg::SIGMA_B)?;
    Ok((
        Matrix::from_fn(c.t, c.d_z, |t, j| mu.get(t, j) + mb.get(0, j)),
        Matrix::from_fn(c.t, c.d_z, |t, j| (s.get(t, j) + sb.get(0, j)).softplus()),
    ))
}

/// Standard normal noise of the given shape from a seeded stream.
pub fn standard_normal(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
    let mut r = rng::rng(seed);
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut r))
}

pub fn sample_latent(mu: &Matrix<f64>, sigma: &Matrix<f64>, mode: LatentMode, seed: u64) -> Result<Matrix<f64>> {
    if mu.shape() != sigma.shape() {
        return Err(Error::Shape("mu and sigma differ in shape".into()));
    }
    Ok(match mode {
        LatentMode::Mean => mu.clone(),
        LatentMode::Sample => {
            let eps = standard_normal(mu.rows(), mu.cols(), seed);
            Matrix::from_fn(mu.rows(), mu.cols(), |t, j| mu.get(t, j) + sigma.get(t, j) * eps.get(t, j))
        }
    })
}

/// Posterior `(μ, σ)` of the whole store, resolved against `pool`.
pub fn posterior(
    model: &AttentionModel,
    params: &ParamVector,
    pool: &Dataset,
    store: &AnnotationStore,
) -> Result<(Matrix<f64>, Matrix<f64>)> {
    let ctx = context_items(pool, store)?;
    if ctx.is_empty() {
        return latent_params(model, params, None);
    }
    let mut g: Graph<f64> = Graph::new();
    let p = params.bind(&mut g, None)?;
    let post = posterior_graph(model, &mut g, &p, &ctx)?;
    Ok((
        rows_to_matrix(&g, post.iter().map(|x| x.0)),
        rows_to_matrix(&g, post.iter().map(|x| x.1)),
    ))
}

pub fn summary(
    model: &AttentionModel,
    params: &ParamVector,
    pool: &Dataset,
    store: &AnnotationStore,
    mode: LatentMode,
    seed: u64,
) -> Result<LatentSummary> {
    let (mu, sigma) = posterior(model, params, pool, store)?;
    let z = sample_latent(&mu, &sigma, mode, seed)?;
    Ok(LatentSummary {
        mu,
        sigma,
        z,
        k: store.len(),
    })
}

/// Attention of one instance conditioned on the store summary.
pub fn conditioned_attention(
    model: &AttentionModel,
    params: &ParamVector,
    instance: &TimeSeriesInstance,
    pool: &Dataset,
    store: &AnnotationStore,
    mode: LatentMode,
    seed: u64,
) -> Result<AttentionMap> {
    let s = summary(model, params, pool, store, mode, seed)?;
    let v = model.embed_inputs(params, &instance.x)?;
    model.forward_attention(params, &v, Some(&s.z))
}

/// Batched conditioned inference; every instance shares the same `z`.
pub fn conditioned_infer(
    model: &AttentionModel,
    params: &ParamVector,
    xs: &[&Matrix<f64>],
    pool: &Dataset,
    store: &AnnotationStore,
    mode: LatentMode,
    seed: u64,
) -> Result<Vec<Inference>> {
    let s = summary(model, params, pool, store, mode, seed)?;
    model.infer(params, xs, Some(&s.z))
}
