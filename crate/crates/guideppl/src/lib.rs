//! Probabilistic programs with inline guide programs.
//!
//! A model is an ordinary Rust closure that makes random choices through a
//! trace context. Each choice can carry a *guide*: a parameterized proposal
//! distribution, possibly computed by a neural net from observed data.
//! Training maximizes the evidence lower bound (ELBo) with a single gradient
//! estimator that combines pathwise derivatives for reparameterizable choices
//! with likelihood-ratio terms for discrete ones, plus two variance-reduction
//! devices: per-choice weights from a conservative dependency graph, and
//! moving-average baselines.
//!
//! The `examples/` directory is the front door; each file is runnable with
//! `cargo run --release --example <name>`:
//!
//! - `toy_inference` — a two-line model, hand-written guide, training, and
//!   importance sampling.
//! - `conjugate_gaussian` — mean-field guide recovering an analytic posterior.
//! - `bayes_net` — amortized guides for tiny Bayes nets, including a guide
//!   that feeds one latent into the next guide's network.
//! - `gmm` — Gaussian mixture: amortized discrete guide, mean-field ablation,
//!   and the marginalized variant, with held-out NLL.
//! - `model_learning` — maximum likelihood, L2 regularization, and variational
//!   Bayes for model parameters, all as guide choices.
//! - `estimator_ablation` — variance reduction switched off and on.
//! - `qmr` — noisy-or diagnosis network with joint, factored, and recurrent
//!   guides.
//! - `lda` — four guide designs for a topic model.
//! - `vae`, `sbn` — image models with neural encoder guides and learned
//!   decoders.
//!
//! The thin `guideppl` binary exposes the same experiments as a CLI
//! (`guideppl run <experiment> --steps ... --out ...`).

pub mod depgraph;
pub mod dists;
pub mod error;
pub mod estimator;
pub mod nn;
pub mod optimize;
pub mod rng;
pub mod runtime;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor};

#[cfg(test)]
pub(crate) mod testutil;
