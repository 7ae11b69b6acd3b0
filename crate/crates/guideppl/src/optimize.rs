//! Training loop and inference entry points.
//!
//! `optimize` repeatedly draws the ELBo gradient estimate and moves the
//! parameters along it (ascent). Each step pulls its randomness from a
//! stream keyed by the store's global step counter, so stopping after 50
//! steps and resuming for 50 more retraces the same path as 100 straight
//! steps with the same seed.
//!
//! After training, `forward_sample` runs the guide (or the prior) once, and
//! `importance_sample` reweights a batch of guided runs into posterior
//! expectations plus a log-evidence estimate.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::{elbo_gradient, BaselineStore, EstimatorConfig};
use crate::rng::{label, stream};
use crate::runtime::{run_trace, Bindings, Ctx, ParameterStore, Trace, TraceOpts};

#[derive(Clone, Copy, Debug)]
pub enum OptMethod {
    Adam { alpha: f64, beta1: f64, beta2: f64, eps: f64 },
    Sgd { alpha: f64 },
}

impl OptMethod {
    pub fn adam(alpha: f64) -> OptMethod {
        OptMethod::Adam { alpha, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn sgd(alpha: f64) -> OptMethod {
        OptMethod::Sgd { alpha }
    }

    fn alpha(&self) -> f64 {
        match self {
            OptMethod::Adam { alpha, .. } | OptMethod::Sgd { alpha } => *alpha,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizeConfig {
    pub steps: usize,
    pub method: OptMethod,
    pub estimator: EstimatorConfig,
    pub seed: u64,
    /// Record every n-th step in the log; 0 logs nothing.
    pub log_every: usize,
}

impl OptimizeConfig {
    pub fn new(steps: usize) -> OptimizeConfig {
        OptimizeConfig {
            steps,
            method: OptMethod::adam(0.1),
            estimator: EstimatorConfig::unified(),
            seed: 0,
            log_every: 1,
        }
    }

    pub fn method(mut self, m: OptMethod) -> OptimizeConfig {
        self.method = m;
        self
    }

    pub fn estimator(mut self, e: EstimatorConfig) -> OptimizeConfig {
        self.estimator = e;
        self
    }

    pub fn seed(mut self, s: u64) -> OptimizeConfig {
        self.seed = s;
        self
    }

    pub fn log_every(mut self, n: usize) -> OptimizeConfig {
        self.log_every = n;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub elbo: f64,
    pub wall_ms: u64,
}

/// Training curve: one row per logged step, steps strictly increasing.
#[derive(Clone, Debug, Default)]
pub struct ElboLog {
    pub rows: Vec<LogRow>,
}

impl ElboLog {
    pub fn new() -> ElboLog {
        ElboLog { rows: Vec::new() }
    }

    pub fn push(&mut self, step: u64, elbo: f64, wall_ms: u64) {
        if let Some(last) = self.rows.last() {
            debug_assert!(step > last.step, "log steps must increase");
        }
        self.rows.push(LogRow { step, elbo, wall_ms });
    }

    /// Mean ELBo over the last `k` rows (all rows if fewer).
    pub fn tail_mean(&self, k: usize) -> f64 {
        let n = self.rows.len().min(k.max(1));
        if n == 0 {
            return f64::NAN;
        }
        self.rows[self.rows.len() - n..].iter().map(|r| r.elbo).sum::<f64>() / n as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,elbo,ms\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.step, r.elbo, r.wall_ms));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// One Adam update (ascent) over every parameter named in `grads`.
/// Advances the store's step counter; bias correction keys off it.
pub fn adam_step(
    store: &mut ParameterStore,
    grads: &HashMap<String, Vec<f64>>,
    alpha: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    let t = (store.step + 1) as f64;
    let c1 = 1.0 - beta1.powf(t);
    let c2 = 1.0 - beta2.powf(t);
    for (name, g) in grads {
        let e = store
            .entry_mut(name)
            .ok_or_else(|| Error::param(name.clone(), "gradient for unknown parameter"))?;
        if g.len() != e.value.len() {
            return Err(Error::param(
                name.clone(),
                format!("gradient has {} entries, parameter {}", g.len(), e.value.len()),
            ));
        }
        for i in 0..g.len() {
            e.m[i] = beta1 * e.m[i] + (1.0 - beta1) * g[i];
            e.v[i] = beta2 * e.v[i] + (1.0 - beta2) * g[i] * g[i];
            let mh = e.m[i] / c1;
            let vh = e.v[i] / c2;
            e.value[i] += alpha * mh / (vh.sqrt() + eps);
        }
    }
    store.step += 1;
    Ok(())
}

/// Plain ascent step. Advances the store's step counter.
pub fn sgd_step(
    store: &mut ParameterStore,
    grads: &HashMap<String, Vec<f64>>,
    alpha: f64,
) -> Result<()> {
    for (name, g) in grads {
        let e = store
            .entry_mut(name)
            .ok_or_else(|| Error::param(name.clone(), "gradient for unknown parameter"))?;
        if g.len() != e.value.len() {
            return Err(Error::param(
                name.clone(),
                format!("gradient has {} entries, parameter {}", g.len(), e.value.len()),
            ));
        }
        for i in 0..g.len() {
            e.value[i] += alpha * g[i];
        }
    }
    store.step += 1;
    Ok(())
}

/// Run `cfg.steps` gradient steps of `model` against `store`.
///
/// Baselines start fresh each call; parameters, optimizer slots, and the
/// step counter carry over through the store, which is what resume needs.
pub fn optimize<T>(
    model: impl Fn(&mut Ctx) -> Result<T>,
    store: &mut ParameterStore,
    cfg: &OptimizeConfig,
    bindings: &Bindings,
) -> Result<ElboLog> {
    if cfg.steps < 1 {
        return Err(Error::config("optimize needs steps >= 1"));
    }
    if cfg.method.alpha() <= 0.0 {
        return Err(Error::config("step size must be positive"));
    }
    let start = Instant::now();
    let mut log = ElboLog::new();
    let mut baselines = BaselineStore::new();
    for _ in 0..cfg.steps {
        let idx = store.step;
        let mut rng = stream(cfg.seed, &[label::TRACE, idx]);
        let ge = elbo_gradient(&model, store, &cfg.estimator, &mut baselines, &mut rng, bindings)
            .map_err(|e| match e {
                Error::NonFinite { at } => {
                    Error::NonFinite { at: format!("step {idx}: {at}") }
                }
                other => other,
            })?;
        match cfg.method {
            OptMethod::Adam { alpha, beta1, beta2, eps } => {
                adam_step(store, &ge.grads, alpha, beta1, beta2, eps)?
            }
            OptMethod::Sgd { alpha } => sgd_step(store, &ge.grads, alpha)?,
        }
        if cfg.log_every > 0 && idx % cfg.log_every as u64 == 0 {
            log.push(idx, ge.elbo_estimate, start.elapsed().as_millis() as u64);
        }
    }
    Ok(log)
}

/// `optimize` against a store created here, seeded from the config.
pub fn optimize_fresh<T>(
    model: impl Fn(&mut Ctx) -> Result<T>,
    cfg: &OptimizeConfig,
    bindings: &Bindings,
) -> Result<(ParameterStore, ElboLog)> {
    let mut store = ParameterStore::new(cfg.seed);
    let log = optimize(model, &mut store, cfg, bindings)?;
    Ok((store, log))
}

/// One execution with the guide (`guided = true`) or the prior. No tape.
///
/// Guided sampling expects a trained store: if the run has to invent a guide
/// parameter, that's a missing-parameter error, not a silent sample from
/// freshly initialized noise.
pub fn forward_sample<T>(
    model: impl FnOnce(&mut Ctx) -> Result<T>,
    store: &mut ParameterStore,
    guided: bool,
    rng: &mut ChaCha8Rng,
    bindings: &Bindings,
) -> Result<(T, Trace)> {
    let opts = if guided { TraceOpts::guided_no_tape() } else { TraceOpts::prior() };
    let known = store.len();
    let (trace, value) = run_trace(store, &opts, rng, bindings, model)?;
    if guided && store.len() > known {
        let name = store.names()[known].clone();
        return Err(Error::param(name, "not in the store; train or load parameters first"));
    }
    Ok((value, trace))
}

/// Guided particles with self-normalized weights.
#[derive(Clone, Debug)]
pub struct ImportanceResult<T> {
    pub values: Vec<T>,
    /// totalLogP - totalLogQ per particle.
    pub log_weights: Vec<f64>,
    /// Normalized to sum to 1.
    pub weights: Vec<f64>,
    /// log of the mean unnormalized weight: the evidence estimate.
    pub log_z: f64,
}

impl<T> ImportanceResult<T> {
    /// Posterior expectation of a particle statistic.
    pub fn expect(&self, f: impl Fn(&T) -> f64) -> f64 {
        self.values.iter().zip(&self.weights).map(|(v, w)| w * f(v)).sum()
    }
}

/// Importance sampling with the guide as proposal.
pub fn importance_sample<T>(
    model: impl Fn(&mut Ctx) -> Result<T>,
    store: &mut ParameterStore,
    n_particles: usize,
    rng: &mut ChaCha8Rng,
    bindings: &Bindings,
) -> Result<ImportanceResult<T>> {
    if n_particles < 1 {
        return Err(Error::config("importance sampling needs at least one particle"));
    }
    let opts = TraceOpts::guided_no_tape();
    let mut values = Vec::with_capacity(n_particles);
    let mut log_weights = Vec::with_capacity(n_particles);
    for _ in 0..n_particles {
        let (trace, value) = run_trace(store, &opts, rng, bindings, &model)?;
        values.push(value);
        log_weights.push(trace.elbo()?);
    }
    let m = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::domain("importance_sample", "every particle weight is zero"));
    }
    let sum: f64 = log_weights.iter().map(|lw| (lw - m).exp()).sum();
    let log_z = m + sum.ln() - (n_particles as f64).ln();
    let norm = m + sum.ln();
    let weights = log_weights.iter().map(|lw| (lw - norm).exp()).collect();
    Ok(ImportanceResult { values, log_weights, weights, log_z })
}
