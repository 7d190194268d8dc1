//! RETAIN-style attention model for multivariate time series.
//!
//! Inputs `x ∈ ℝ^{T×D}` are embedded linearly into `v` (same width D), two
//! gated recurrent encoders read `v`, and two affine heads produce the time
//! attention `β` (softmax over timesteps) and the feature attention `γ`
//! (tanh, per timestep and feature). The prediction is an affine output head
//! over the context `c = Σ_t β_t (γ_t ⊙ v_t)` followed by the task link.
//!
//! When a latent summary `z ∈ ℝ^{T×d_z}` is supplied, each head also reads
//! `z_t` through its own weight block (`nap.*.wz`); without `z` those blocks
//! are skipped, which is identical to conditioning on `z = 0`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::TimeSeriesInstance;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Graph, Matrix, Objective, ParamVars, ParamVector, Scalar, Var};

/// Recurrent cell recorded in checkpoint manifests.
pub const CELL: &str = "gru";
/// Identifier of the feature-contribution decomposition.
pub const CONTRIBUTION_METHOD: &str = "retain-style-contribution/v1";
/// Probability clipping used by the cross-entropy losses.
pub const PROB_CLIP: f64 = 1e-7;

/// Parameter segment names.
pub mod seg {
    /// Embedding, stored input-major: `v_row = x_row · E` (E = W_embᵀ).
    pub const EMB: &str = "attn.emb.w";
    pub const RNN_BETA: &str = "attn.rnn_beta";
    pub const RNN_GAMMA: &str = "attn.rnn_gamma";
    pub const BETA_W: &str = "attn.beta_head.w";
    pub const BETA_B: &str = "attn.beta_head.b";
    pub const GAMMA_W: &str = "attn.gamma_head.w";
    pub const GAMMA_B: &str = "attn.gamma_head.b";
    pub const OUT_W: &str = "attn.out.w";
    pub const OUT_B: &str = "attn.out.b";
    pub const BETA_WZ: &str = "nap.beta_head.wz";
    pub const GAMMA_WZ: &str = "nap.gamma_head.wz";
    pub const ENC: &str = "nap.enc";
    pub const MU_W: &str = "nap.mu.w";
    pub const MU_B: &str = "nap.mu.b";
    pub const SIGMA_W: &str = "nap.sigma.w";
    pub const SIGMA_B: &str = "nap.sigma.b";

    /// Prefix of every attention-model segment (trained during pretraining).
    pub const ATTN_PREFIX: &str = "attn.";
    /// Prefix of every neural-attention-process segment.
    pub const NAP_PREFIX: &str = "nap.";
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Multiclass,
    Regression,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Task::Binary),
            "multiclass" => Ok(Task::Multiclass),
            "regression" => Ok(Task::Regression),
            other => Err(Error::Validation(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub t: usize,
    pub d: usize,
    pub l: usize,
    pub hidden_beta: usize,
    pub hidden_gamma: usize,
    pub task: Task,
    /// Latent width used by the attention process.
    pub d_z: usize,
    /// Width of the per-annotation representation.
    pub r_dim: usize,
}

impl ModelConfig {
    pub fn new(t: usize, d: usize, l: usize, task: Task) -> Self {
        Self {
            t,
            d,
            l,
            hidden_beta: 32,
            hidden_gamma: 32,
            task,
            d_z: 16,
            r_dim: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("t", self.t),
            ("d", self.d),
            ("l", self.l),
            ("hidden_beta", self.hidden_beta),
            ("hidden_gamma", self.hidden_gamma),
            ("d_z", self.d_z),
            ("r_dim", self.r_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Validation(format!("model dimension {name} must be positive")));
        }
        if self.task == Task::Binary && self.l != 1 {
            return Err(Error::Validation("binary task expects l = 1".into()));
        }
        if self.task == Task::Multiclass && self.l < 2 {
            return Err(Error::Validation("multiclass task expects l >= 2".into()));
        }
        Ok(())
    }

    /// Input width of the annotation encoder: `[v_t ‖ mask_t ‖ time_mask_t]`.
    pub fn encoder_input(&self) -> usize {
        2 * self.d + 1
    }
}

/// Attention produced for a single instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    /// Time attention, on the probability simplex.
    pub beta: Vec<f64>,
    /// Feature attention in (−1, 1), T×D.
    pub gamma: Matrix<f64>,
    /// Embedded inputs, T×D.
    pub v: Matrix<f64>,
}

impl AttentionMap {
    /// Effective attention `β_t · γ_{t,d}`.
    pub fn effective(&self, t: usize, d: usize) -> f64 {
        self.beta[t] * self.gamma.get(t, d)
    }
}

/// Which output the contribution grid decomposes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContributionTarget {
    /// One grid per output.
    AllOutputs,
    /// Only the given output index (e.g. the target class).
    Output(usize),
}

pub(crate) struct Gru {
    w: Var,
    u: Var,
    b: Var,
    hidden: usize,
}

impl Gru {
    pub(crate) fn bind(p: &ParamVars, prefix: &str, hidden: usize) -> Result<Self> {
        Ok(Self {
            w: p.get(&format!("{prefix}.w"))?,
            u: p.get(&format!("{prefix}.u"))?,
            b: p.get(&format!("{prefix}.b"))?,
            hidden,
        })
    }

    /// One gated recurrent step over a batch: `x` is B×in, `h` is B×H.
    fn step<S: Scalar>(&self, g: &mut Graph<S>, x: Var, h: Var) -> Var {
        let hs = self.hidden;
        let gx = g.matmul(x, self.w);
        let gx = g.add_row(gx, self.b);
        let gh = g.matmul(h, self.u);
        let xz = g.slice_cols(gx, 0, hs);
        let hz = g.slice_cols(gh, 0, hs);
        let xr = g.slice_cols(gx, hs, hs);
        let hr = g.slice_cols(gh, hs, hs);
        let xn = g.slice_cols(gx, 2 * hs, hs);
        let hn = g.slice_cols(gh, 2 * hs, hs);
        let z = g.add(xz, hz);
        let z = g.sigmoid(z);
        let r = g.add(xr, hr);
        let r = g.sigmoid(r);
        let rh = g.mul(r, hn);
        let n = g.add(xn, rh);
        let n = g.tanh(n);
        // h' = n + z ⊙ (h − n)
        let diff = g.sub(h, n);
        let zd = g.mul(z, diff);
        g.add(n, zd)
    }

    /// Run over a sequence of B×in inputs from a zero state.
    pub(crate) fn run<S: Scalar>(&self, g: &mut Graph<S>, xs: &[Var]) -> Vec<Var> {
        let batch = g.shape(xs[0]).0;
        let mut h = g.constant(Matrix::zeros(batch, self.hidden));
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            h = self.step(g, x, h);
            out.push(h);
        }
        out
    }
}

/// Graph nodes of a batched forward pass.
pub struct GraphForward {
    /// Embedded inputs per timestep, B×D each.
    pub v: Vec<Var>,
    /// Time attention, B×T.
    pub beta: Var,
    /// Feature attention per timestep, B×D each.
    pub gamma: Vec<Var>,
    /// Pre-link outputs, B×L.
    pub logits: Var,
}

/// Result of a plain forward pass for one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub attention: AttentionMap,
    pub y_hat: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AttentionModel {
    cfg: ModelConfig,
}

impl AttentionModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Fresh parameters: identity embedding, uniform(±1/√fan_in) weights,
    /// zero biases.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let c = &self.cfg;
        let mut r = rng::rng(seed);
        let mut uniform = |rows: usize, cols: usize, scale: f64| {
            Matrix::from_fn(rows, cols, |_, _| r.random_range(-scale..scale))
        };
        let inv = |n: usize| 1.0 / (n as f64).sqrt();
        let mut pairs: Vec<(String, Matrix<f64>)> = vec![
            (seg::EMB.into(), Matrix::identity(c.d)),
            (seg::BETA_W.into(), uniform(c.hidden_beta, 1, inv(c.hidden_beta))),
            (seg::BETA_B.into(), Matrix::zeros(1, 1)),
            (seg::GAMMA_W.into(), uniform(c.hidden_gamma, c.d, inv(c.hidden_gamma))),
            (seg::GAMMA_B.into(), Matrix::zeros(1, c.d)),
            (seg::OUT_W.into(), uniform(c.d, c.l, inv(c.d))),
            (seg::OUT_B.into(), Matrix::zeros(1, c.l)),
            (seg::BETA_WZ.into(), uniform(c.d_z, 1, 0.5 * inv(c.d_z))),
            (seg::GAMMA_WZ.into(), uniform(c.d_z, c.d, 0.5 * inv(c.d_z))),
            (seg::MU_W.into(), uniform(c.r_dim, c.d_z, inv(c.r_dim))),
            (seg::MU_B.into(), Matrix::zeros(1, c.d_z)),
            (seg::SIGMA_W.into(), uniform(c.r_dim, c.d_z, inv(c.r_dim))),
            (seg::SIGMA_B.into(), Matrix::zeros(1, c.d_z)),
        ];
        for (prefix, input, hidden) in [
            (seg::RNN_BETA, c.d, c.hidden_beta),
            (seg::RNN_GAMMA, c.d, c.hidden_gamma),
            (seg::ENC, c.encoder_input(), c.r_dim),
        ] {
            let s = inv(hidden);
            pairs.push((format!("{prefix}.w"), uniform(input, 3 * hidden, s)));
            pairs.push((format!("{prefix}.u"), uniform(hidden, 3 * hidden, s)));
            pairs.push((format!("{prefix}.b"), Matrix::zeros(1, 3 * hidden)));
        }
        ParamVector::from_pairs(pairs).expect("unique segment names")
    }

    /// Check that `params` has exactly the layout this model expects.
    pub fn check_params(&self, params: &ParamVector) -> Result<()> {
        let expect = self.init_params(0);
        if expect.same_layout(params) {
            Ok(())
        } else {
            Err(Error::Shape("parameter layout does not match model config".into()))
        }
    }

    fn check_x(&self, x: &Matrix<f64>) -> Result<()> {
        if x.shape() != (self.cfg.t, self.cfg.d) {
            return Err(Error::Shape(format!(
                "expected input {}×{}, got {}×{}",
                self.cfg.t,
                self.cfg.d,
                x.rows(),
                x.cols()
            )));
        }
        Ok(())
    }

    fn check_z(&self, z: &Matrix<f64>) -> Result<()> {
        if z.shape() != (self.cfg.t, self.cfg.d_z) {
            return Err(Error::Shape(format!(
                "expected latent {}×{}, got {}×{}",
                self.cfg.t,
                self.cfg.d_z,
                z.rows(),
                z.cols()
            )));
        }
        Ok(())
    }

    /// `v_t = W_emb x_t` for every timestep.
    pub fn embed_inputs(&self, params: &ParamVector, x: &Matrix<f64>) -> Result<Matrix<f64>> {
        self.check_x(x)?;
        Ok(x.matmul(params.require(seg::EMB)?))
    }

    /// Stack instance inputs into per-timestep B×D constants.
    pub fn input_nodes<S: Scalar>(&self, g: &mut Graph<S>, xs: &[&Matrix<f64>]) -> Result<Vec<Var>> {
        for x in xs {
            self.check_x(x)?;
        }
        let (t, d) = (self.cfg.t, self.cfg.d);
        Ok((0..t)
            .map(|step| {
                let m = Matrix::from_fn(xs.len(), d, |b, j| S::from_f64(xs[b].get(step, j)));
                g.constant(m)
            })
            .collect())
    }

    /// Per-timestep 1×d_z rows of a latent matrix placed on the tape.
    pub fn latent_rows<S: Scalar>(&self, g: &mut Graph<S>, z: &Matrix<f64>) -> Result<Vec<Var>> {
        self.check_z(z)?;
        let all = g.constant_f64(z);
        Ok((0..self.cfg.t).map(|t| g.slice_rows(all, t, 1)).collect())
    }

    pub fn embed_nodes<S: Scalar>(&self, g: &mut Graph<S>, p: &ParamVars, xs: &[Var]) -> Result<Vec<Var>> {
        let emb = p.get(seg::EMB)?;
        Ok(xs.iter().map(|&x| g.matmul(x, emb)).collect())
    }

    /// Attention heads over embedded inputs. `z` holds one 1×d_z row per
    /// timestep and is shared by every instance in the batch.
    pub fn attend<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &ParamVars,
        v: &[Var],
        z: Option<&[Var]>,
    ) -> Result<(Var, Vec<Var>)> {
        let c = &self.cfg;
        if v.len() != c.t {
            return Err(Error::Shape(format!("expected {} timesteps, got {}", c.t, v.len())));
        }
        if let Some(z) = z {
            if z.len() != c.t {
                return Err(Error::Shape(format!("latent has {} rows, expected {}", z.len(), c.t)));
            }
        }
        let rnn_beta = Gru::bind(p, seg::RNN_BETA, c.hidden_beta)?;
        let rnn_gamma = Gru::bind(p, seg::RNN_GAMMA, c.hidden_gamma)?;
        let o = rnn_beta.run(g, v);
        let h = rnn_gamma.run(g, v);
        let (wb, bb) = (p.get(seg::BETA_W)?, p.get(seg::BETA_B)?);
        let (wg, bg) = (p.get(seg::GAMMA_W)?, p.get(seg::GAMMA_B)?);
        let zw = match z {
            Some(_) => Some((p.get(seg::BETA_WZ)?, p.get(seg::GAMMA_WZ)?)),
            None => None,
        };

        let mut e = Vec::with_capacity(c.t);
        let mut gamma = Vec::with_capacity(c.t);
        for t in 0..c.t {
            let et = g.matmul(o[t], wb);
            let mut et = g.add_row(et, bb);
            let qt = g.matmul(h[t], wg);
            let mut qt = g.add_row(qt, bg);
            if let (Some(z), Some((wbz, wgz))) = (z, zw) {
                let ez = g.matmul(z[t], wbz);
                et = g.add_row(et, ez);
                let qz = g.matmul(z[t], wgz);
                qt = g.add_row(qt, qz);
            }
            e.push(et);
            gamma.push(g.tanh(qt));
        }
        let logits = g.concat_cols(&e);
        let beta = g.softmax_rows(logits);
        Ok((beta, gamma))
    }

    /// Context and output head: `c = Σ_t β_t (γ_t ⊙ v_t)`, logits `c·W_out + b`.
    pub fn head<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &ParamVars,
        v: &[Var],
        beta: Var,
        gamma: &[Var],
    ) -> Result<Var> {
        let mut ctx: Option<Var> = None;
        for t in 0..self.cfg.t {
            let gv = g.mul(gamma[t], v[t]);
            let bt = g.slice_cols(beta, t, 1);
            let term = g.mul_col(gv, bt);
            ctx = Some(match ctx {
                Some(acc) => g.add(acc, term),
                None => term,
            });
        }
        let ctx = ctx.expect("t >= 1");
        let logits = g.matmul(ctx, p.get(seg::OUT_W)?);
        Ok(g.add_row(logits, p.get(seg::OUT_B)?))
    }

    /// Full batched forward pass on the tape.
    pub fn forward_graph<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &ParamVars,
        xs: &[Var],
        z: Option<&[Var]>,
    ) -> Result<GraphForward> {
        let v = self.embed_nodes(g, p, xs)?;
        let (beta, gamma) = self.attend(g, p, &v, z)?;
        let logits = self.head(g, p, &v, beta, &gamma)?;
        Ok(GraphForward {
            v,
            beta,
            gamma,
            logits,
        })
    }

    /// Mean task loss of a batch on the tape. `y` is B×L.
    pub fn loss_graph<S: Scalar>(&self, g: &mut Graph<S>, logits: Var, y: Var) -> Var {
        let batch = g.shape(logits).0 as f64;
        match self.cfg.task {
            Task::Binary => {
                let p = g.sigmoid(logits);
                let p = g.clamp(p, PROB_CLIP, 1.0 - PROB_CLIP);
                let lp = g.ln(p);
                let q = g.scale(p, -1.0);
                let q = g.add_scalar(q, 1.0);
                let lq = g.ln(q);
                let ny = g.scale(y, -1.0);
                let ny = g.add_scalar(ny, 1.0);
                let a = g.mul(y, lp);
                let b = g.mul(ny, lq);
                let s = g.add(a, b);
                let m = g.mean(s);
                g.neg(m)
            }
            Task::Multiclass => {
                let p = g.softmax_rows(logits);
                let p = g.clamp(p, PROB_CLIP, 1.0 - PROB_CLIP);
                let lp = g.ln(p);
                let a = g.mul(y, lp);
                let s = g.sum(a);
                g.scale(s, -1.0 / batch)
            }
            Task::Regression => {
                let d = g.sub(logits, y);
                let sq = g.square(d);
                g.mean(sq)
            }
        }
    }

    pub fn targets<S: Scalar>(&self, g: &mut Graph<S>, ys: &[&[f64]]) -> Result<Var> {
        let l = self.cfg.l;
        for y in ys {
            if y.len() != l {
                return Err(Error::Shape(format!("expected {l} outputs, got {}", y.len())));
            }
        }
        Ok(g.constant(Matrix::from_fn(ys.len(), l, |b, j| S::from_f64(ys[b][j]))))
    }

    /// Attention for one embedded input.
    pub fn forward_attention(
        &self,
        params: &ParamVector,
        v: &Matrix<f64>,
        z: Option<&Matrix<f64>>,
    ) -> Result<AttentionMap> {
        self.check_x(v)?;
        let mut g: Graph<f64> = Graph::new();
        let p = params.bind(&mut g, None)?;
        let vs = self.input_nodes(&mut g, &[v])?;
        let zr = z.map(|z| self.latent_rows(&mut g, z)).transpose()?;
        let (beta, gamma) = self.attend(&mut g, &p, &vs, zr.as_deref())?;
        Ok(self.extract(&g, beta, &gamma, &vs, 0))
    }

    fn extract(&self, g: &Graph<f64>, beta: Var, gamma: &[Var], v: &[Var], b: usize) -> AttentionMap {
        let (t, d) = (self.cfg.t, self.cfg.d);
        AttentionMap {
            beta: g.value(beta).row(b).to_vec(),
            gamma: Matrix::from_fn(t, d, |tt, dd| g.value(gamma[tt]).get(b, dd)),
            v: Matrix::from_fn(t, d, |tt, dd| g.value(v[tt]).get(b, dd)),
        }
    }

    /// Batched plain forward pass: attention and prediction per instance.
    pub fn infer(
        &self,
        params: &ParamVector,
        xs: &[&Matrix<f64>],
        z: Option<&Matrix<f64>>,
    ) -> Result<Vec<Inference>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g: Graph<f64> = Graph::new();
        let p = params.bind(&mut g, None)?;
        let inputs = self.input_nodes(&mut g, xs)?;
        let zr = z.map(|z| self.latent_rows(&mut g, z)).transpose()?;
        let f = self.forward_graph(&mut g, &p, &inputs, zr.as_deref())?;
        let logits = g.value(f.logits).clone();
        Ok((0..xs.len())
            .map(|b| Inference {
                attention: self.extract(&g, f.beta, &f.gamma, &f.v, b),
                y_hat: self.link(logits.row(b)),
            })
            .collect())
    }

    /// Output link applied to pre-activations.
    pub fn link(&self, logits: &[f64]) -> Vec<f64> {
        match self.cfg.task {
            Task::Binary => logits.iter().map(|&v| v.sigmoid()).collect(),
            Task::Multiclass => {
                let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|v| (v - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|v| v / z).collect()
            }
            Task::Regression => logits.to_vec(),
        }
    }

    /// Pre-activation outputs from an attention map with the feature
    /// attention of every `(t, d)` in `off` forced to zero.
    pub fn logits_with_override(
        &self,
        params: &ParamVector,
        attn: &AttentionMap,
        off: &[(usize, usize)],
    ) -> Result<Vec<f64>> {
        let (t, d, l) = (self.cfg.t, self.cfg.d, self.cfg.l);
        if attn.beta.len() != t || attn.gamma.shape() != (t, d) || attn.v.shape() != (t, d) {
            return Err(Error::Shape("attention map does not match model config".into()));
        }
        let mut gamma = attn.gamma.clone();
        for &(tt, dd) in off {
            if tt >= t || dd >= d {
                return Err(Error::Validation(format!("override cell (t={tt}, d={dd}) out of range")));
            }
            gamma.set(tt, dd, 0.0);
        }
        let mut ctx = vec![0.0; d];
        for tt in 0..t {
            for (dd, c) in ctx.iter_mut().enumerate() {
                *c += attn.beta[tt] * (gamma.get(tt, dd) * attn.v.get(tt, dd));
            }
        }
        let w = params.require(seg::OUT_W)?;
        let b = params.require(seg::OUT_B)?;
        Ok((0..l)
            .map(|j| {
                let mut acc = b.get(0, j);
                for (dd, c) in ctx.iter().enumerate() {
                    acc += c * w.get(dd, j);
                }
                acc
            })
            .collect())
    }

    /// `ŷ = h(Σ_t β_t (γ_t ⊙ v_t))`.
    pub fn predict(&self, params: &ParamVector, attn: &AttentionMap) -> Result<Vec<f64>> {
        self.predict_with_override(params, attn, &[])
    }

    /// Prediction with the feature attention of the listed cells set to zero.
    /// Duplicates are harmless.
    pub fn predict_with_override(
        &self,
        params: &ParamVector,
        attn: &AttentionMap,
        off: &[(usize, usize)],
    ) -> Result<Vec<f64>> {
        Ok(self.link(&self.logits_with_override(params, attn, off)?))
    }

    /// Additive decomposition of the pre-activation outputs over input cells.
    ///
    /// `contrib[j]_{t,k} = β_t · Σ_d W_out[d,j] γ_{t,d} W_emb[d,k] · x_{t,k}`,
    /// so summing a grid and adding the output bias reproduces logit `j`.
    /// Recurrent dependence of the attention on `x` is treated as fixed.
    pub fn contribution(
        &self,
        params: &ParamVector,
        attn: &AttentionMap,
        x: &Matrix<f64>,
        target: ContributionTarget,
    ) -> Result<Vec<Matrix<f64>>> {
        self.check_x(x)?;
        let (t, d, l) = (self.cfg.t, self.cfg.d, self.cfg.l);
        let emb = params.require(seg::EMB)?; // E[k, d] = W_emb[d, k]
        let w = params.require(seg::OUT_W)?;
        let outputs: Vec<usize> = match target {
            ContributionTarget::AllOutputs => (0..l).collect(),
            ContributionTarget::Output(j) if j < l => vec![j],
            ContributionTarget::Output(j) => {
                return Err(Error::Validation(format!("output {j} out of range (l = {l})")))
            }
        };
        Ok(outputs
            .into_iter()
            .map(|j| {
                Matrix::from_fn(t, d, |tt, k| {
                    let mut path = 0.0;
                    for dd in 0..d {
                        path += w.get(dd, j) * attn.gamma.get(tt, dd) * emb.get(k, dd);
                    }
                    attn.beta[tt] * path * x.get(tt, k)
                })
            })
            .collect())
    }
}

/// Per-instance task loss on already-linked outputs.
pub fn task_loss(y_hat: &[f64], y: &[f64], task: Task) -> Result<f64> {
    if y_hat.len() != y.len() || y.is_empty() {
        return Err(Error::Shape(format!(
            "prediction has {} outputs, label has {}",
            y_hat.len(),
            y.len()
        )));
    }
    validate_label(y, task)?;
    let n = y.len() as f64;
    Ok(match task {
        Task::Binary => {
            y_hat
                .iter()
                .zip(y)
                .map(|(&p, &t)| {
                    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / n
        }
        Task::Multiclass => -y_hat
            .iter()
            .zip(y)
            .map(|(&p, &t)| t * p.clamp(PROB_CLIP, 1.0 - PROB_CLIP).ln())
            .sum::<f64>(),
        Task::Regression => y_hat.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n,
    })
}

/// Label range check for a task.
pub fn validate_label(y: &[f64], task: Task) -> Result<()> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("label is not finite".into()));
    }
    match task {
        Task::Binary => {
            if y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Validation("binary label outside [0, 1]".into()));
            }
        }
        Task::Multiclass => {
            let s: f64 = y.iter().sum();
            if y.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::Validation("multiclass label is not a distribution".into()));
            }
        }
        Task::Regression => {}
    }
    Ok(())
}

/// Task loss of the attention model, optionally conditioned on a fixed latent.
pub struct TaskObjective<'a> {
    pub model: &'a AttentionModel,
    pub latent: Option<&'a Matrix<f64>>,
}

impl Objective for TaskObjective<'_> {
    type Sample = TimeSeriesInstance;

    fn build<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        params: &ParamVars,
        batch: &[&TimeSeriesInstance],
    ) -> Result<Var> {
        let xs: Vec<&Matrix<f64>> = batch.iter().map(|u| &u.x).collect();
        let ys: Vec<&[f64]> = batch.iter().map(|u| u.y.as_slice()).collect();
        let inputs = self.model.input_nodes(g, &xs)?;
        let z = self.latent.map(|z| self.model.latent_rows(g, z)).transpose()?;
        let f = self.model.forward_graph(g, params, &inputs, z.as_deref())?;
        let y = self.model.targets(g, &ys)?;
        Ok(self.model.loss_graph(g, f.logits, y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(task: Task, l: usize) -> AttentionModel {
        let mut c = ModelConfig::new(3, 2, l, task);
        c.hidden_beta = 4;
        c.hidden_gamma = 5;
        c.d_z = 3;
        c.r_dim = 4;
        AttentionModel::new(c).unwrap()
    }

    fn x32() -> Matrix<f64> {
        Matrix::from_rows(&[vec![0.5, -1.0], vec![1.5, 0.25], vec![-0.3, 0.8]])
    }

    #[test]
    fn identity_embedding_and_zero_input() {
        let m = small(Task::Binary, 1);
        let p = m.init_params(1);
        let x = x32();
        assert_eq!(m.embed_inputs(&p, &x).unwrap(), x);
        let zero = Matrix::zeros(3, 2);
        assert_eq!(m.embed_inputs(&p, &zero).unwrap(), zero);
        assert!(matches!(m.embed_inputs(&p, &Matrix::zeros(2, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn embedding_matches_hand_product() {
        let m = small(Task::Binary, 1);
        let mut p = m.init_params(1);
        // W_emb = [[1, 2], [3, 4]] stored transposed.
        *p.get_mut(seg::EMB).unwrap() = Matrix::from_rows(&[vec![1.0, 3.0], vec![2.0, 4.0]]);
        let v = m.embed_inputs(&p, &x32()).unwrap();
        // v_0 = W_emb (0.5, -1) = (0.5 - 2, 1.5 - 4)
        assert!((v.get(0, 0) - (-1.5)).abs() < 1e-15);
        assert!((v.get(0, 1) - (-2.5)).abs() < 1e-15);
    }

    fn zero_heads(p: &mut ParamVector) {
        for name in [seg::BETA_W, seg::BETA_B, seg::GAMMA_W, seg::BETA_WZ, seg::GAMMA_WZ] {
            let m = p.get_mut(name).unwrap();
            *m = Matrix::zeros(m.rows(), m.cols());
        }
    }

    #[test]
    fn zero_heads_give_uniform_beta_and_tanh_bias_gamma() {
        let m = small(Task::Binary, 1);
        let mut p = m.init_params(3);
        zero_heads(&mut p);
        *p.get_mut(seg::GAMMA_B).unwrap() = Matrix::from_vec(1, 2, vec![0.3, -2.0]);
        let a = m.forward_attention(&p, &x32(), None).unwrap();
        for b in &a.beta {
            assert!((b - 1.0 / 3.0).abs() < 1e-15);
        }
        for t in 0..3 {
            assert!((a.gamma.get(t, 0) - 0.3f64.tanh()).abs() < 1e-15);
            assert!((a.gamma.get(t, 1) - (-2.0f64).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_latent_equals_no_latent() {
        let m = small(Task::Binary, 1);
        let p = m.init_params(4);
        let z = Matrix::zeros(3, 3);
        let a = m.forward_attention(&p, &x32(), None).unwrap();
        let b = m.forward_attention(&p, &x32(), Some(&z)).unwrap();
        assert_eq!(a, b);
        let bad = Matrix::zeros(2, 3);
        assert!(m.forward_attention(&p, &x32(), Some(&bad)).is_err());
    }

    #[test]
    fn annihilated_context_returns_head_bias() {
        let m = small(Task::Regression, 2);
        let p = m.init_params(5);
        let mut a = m.forward_attention(&p, &x32(), None).unwrap();
        a.gamma = Matrix::zeros(3, 2);
        let y = m.predict(&p, &a).unwrap();
        assert_eq!(y, p.get(seg::OUT_B).unwrap().as_slice().to_vec());
    }

    #[test]
    fn hand_computed_two_step_forward() {
        // T=2, D=2, L=1, regression, explicit attention.
        let mut c = ModelConfig::new(2, 2, 1, Task::Regression);
        c.hidden_beta = 2;
        c.hidden_gamma = 2;
        let m = AttentionModel::new(c).unwrap();
        let mut p = m.init_params(0);
        *p.get_mut(seg::OUT_W).unwrap() = Matrix::from_vec(2, 1, vec![2.0, -1.0]);
        *p.get_mut(seg::OUT_B).unwrap() = Matrix::from_vec(1, 1, vec![0.5]);
        let a = AttentionMap {
            beta: vec![0.25, 0.75],
            gamma: Matrix::from_rows(&[vec![0.5, -0.5], vec![0.1, 0.9]]),
            v: Matrix::from_rows(&[vec![1.0, 2.0], vec![-3.0, 4.0]]),
        };
        // c = 0.25*(0.5, -1.0) + 0.75*(-0.3, 3.6) = (-0.1, 2.45)
        // y = 2*(-0.1) - 2.45 + 0.5 = -2.15
        let y = m.predict(&p, &a).unwrap();
        assert!((y[0] - (-2.15)).abs() < 1e-12, "{y:?}");
        // turning off (1, 1): c = (-0.1, -0.25) → y = -0.2 + 0.25 + 0.5 = 0.55
        let yo = m.predict_with_override(&p, &a, &[(1, 1), (1, 1)]).unwrap();
        assert!((yo[0] - 0.55).abs() < 1e-12, "{yo:?}");
    }

    #[test]
    fn override_extremes() {
        let m = small(Task::Binary, 1);
        let p = m.init_params(6);
        let a = m.forward_attention(&p, &x32(), None).unwrap();
        assert_eq!(m.predict(&p, &a).unwrap(), m.predict_with_override(&p, &a, &[]).unwrap());
        let all: Vec<_> = (0..3).flat_map(|t| (0..2).map(move |d| (t, d))).collect();
        let mut zeroed = a.clone();
        zeroed.gamma = Matrix::zeros(3, 2);
        assert_eq!(
            m.predict_with_override(&p, &a, &all).unwrap(),
            m.predict(&p, &zeroed).unwrap()
        );
        assert!(m.predict_with_override(&p, &a, &[(3, 0)]).is_err());
    }

    #[test]
    fn single_timestep_context() {
        let mut c = ModelConfig::new(1, 2, 1, Task::Regression);
        c.hidden_beta = 3;
        c.hidden_gamma = 3;
        let m = AttentionModel::new(c).unwrap();
        let p = m.init_params(2);
        let x = Matrix::from_rows(&[vec![0.7, -0.4]]);
        let a = m.forward_attention(&p, &x, None).unwrap();
        assert_eq!(a.beta, vec![1.0]);
        let w = p.get(seg::OUT_W).unwrap();
        let expect = a.gamma.get(0, 0) * 0.7 * w.get(0, 0) + a.gamma.get(0, 1) * -0.4 * w.get(1, 0);
        assert!((m.predict(&p, &a).unwrap()[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn contribution_reconstructs_logits() {
        let m = small(Task::Multiclass, 3);
        let mut p = m.init_params(7);
        *p.get_mut(seg::EMB).unwrap() = Matrix::from_rows(&[vec![0.9, 0.2], vec![-0.4, 1.1]]);
        let x = x32();
        let v = m.embed_inputs(&p, &x).unwrap();
        let a = m.forward_attention(&p, &v, None).unwrap();
        let logits = m.logits_with_override(&p, &a, &[]).unwrap();
        let grids = m.contribution(&p, &a, &x, ContributionTarget::AllOutputs).unwrap();
        let b = p.get(seg::OUT_B).unwrap();
        for (j, grid) in grids.iter().enumerate() {
            assert!((grid.sum() + b.get(0, j) - logits[j]).abs() < 1e-12);
        }
        let one = m.contribution(&p, &a, &x, ContributionTarget::Output(2)).unwrap();
        assert_eq!(one[0], grids[2]);
        assert!(m.contribution(&p, &a, &x, ContributionTarget::Output(3)).is_err());
    }

    #[test]
    fn contribution_collapses_under_identity_embedding() {
        let m = small(Task::Binary, 1);
        let p = m.init_params(8);
        let x = x32();
        let mut a = m.forward_attention(&p, &x, None).unwrap();
        a.beta = vec![0.0, 0.4, 0.6];
        let grid = &m.contribution(&p, &a, &x, ContributionTarget::AllOutputs).unwrap()[0];
        let w = p.get(seg::OUT_W).unwrap();
        for d in 0..2 {
            assert_eq!(grid.get(0, d), 0.0);
            for t in 1..3 {
                let expect = a.beta[t] * a.gamma.get(t, d) * w.get(d, 0) * x.get(t, d);
                assert!((grid.get(t, d) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn task_losses() {
        assert_eq!(task_loss(&[1.5, -2.0], &[1.5, -2.0], Task::Regression).unwrap(), 0.0);
        let l = task_loss(&[0.5], &[1.0], Task::Binary).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(task_loss(&[0.5], &[2.0], Task::Binary).is_err());
        assert!(task_loss(&[0.5, 0.5], &[0.7, 0.7], Task::Multiclass).is_err());
        let l = task_loss(&[0.2, 0.8], &[0.0, 1.0], Task::Multiclass).unwrap();
        assert!((l + 0.8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn batched_inference_matches_single() {
        let m = small(Task::Binary, 1);
        let p = m.init_params(9);
        let x1 = x32();
        let x2 = x32().map(|v| v * -0.5 + 0.1);
        let batch = m.infer(&p, &[&x1, &x2], None).unwrap();
        let single = m.infer(&p, &[&x2], None).unwrap();
        assert!((batch[1].y_hat[0] - single[0].y_hat[0]).abs() < 1e-14);
        let a = m.forward_attention(&p, &m.embed_inputs(&p, &x2).unwrap(), None).unwrap();
        for (u, w) in a.beta.iter().zip(&batch[1].attention.beta) {
            assert!((u - w).abs() < 1e-14);
        }
        assert!((m.predict(&p, &a).unwrap()[0] - batch[1].y_hat[0]).abs() < 1e-14);
    }
}
