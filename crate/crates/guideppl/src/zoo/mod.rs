//! The example-model zoo: Gaussian mixtures and small Bayes nets, the
//! QMR-DT diagnosis network, LDA topic models, and two neural generative
//! models (VAE, SBN), plus dataset generation and the experiment runner
//! behind the CLI.

pub mod experiment;
pub mod gmm;
pub mod images;
pub mod lda;
pub mod qmr;
