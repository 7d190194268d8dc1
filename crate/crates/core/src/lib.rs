//! Interactive attention learning.
//!
//! A RETAIN-style attention model for multivariate time series whose
//! attention generator can be conditioned on a latent summary of human
//! attention masks (the neural attention process), plus the machinery to
//! decide which instances and features a human should look at next
//! (influence, uncertainty and counterfactual reranking) and to run the
//! annotate/recondition loop without retraining after the first round.
//!
//! Module map:
//!
//! - [`tensor`]: tape autodiff, Hessian-vector products, conjugate gradients
//! - [`model`]: embedding, recurrent encoders, attention heads, prediction
//! - [`nap`]: annotation store, latent summary, conditioned attention, adaptation
//! - [`cer`]: instance/feature scorers and the reranking procedure
//! - [`ial`]: pretraining, rounds, oracle annotator, evaluation
//! - [`data`]: synthetic data, dataset/annotation/checkpoint files
//! - [`check`]: gradient and influence self-check suites

pub mod cer;
pub mod check;
pub mod data;
pub mod error;
pub mod ial;
pub mod model;
pub mod nap;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
