//! ELBo gradient estimation.
//!
//! One estimator covers every model: reparameterized choices get pathwise
//! gradients (differentiate through the sampled value), everything else gets
//! score-function gradients with a detached weight. The surrogate scalar
//! whose tape gradient is the estimate is
//!
//! ```text
//! S = totalLogP - sum_{i in C} scale_i * logQ_i
//!               + sum_{i in D} (w_i - b_i) * scale_i * logQ_i
//! ```
//!
//! where C holds the reparameterized choices, D the rest (discrete choices,
//! and anything sampled with reparameterization off), `w_i` is a plain-number
//! weight (never a tape value), and `b_i` a running baseline. Maximizing S in
//! expectation maximizes the ELBo: the pathwise part is the ELBo itself with
//! the score terms of D dropped (they have zero expected gradient), and the
//! score part's expected gradient is E[(w_i - b_i) * grad logQ_i], which the
//! dependency-graph weights and baselines leave unbiased while cutting
//! variance.
//!
//! `lr` and `pw` reference estimators are kept for cross-checks: `lr` scales
//! every score by the single global weight logP - logQ and never propagates
//! through samples (so model parameters get zero gradient by construction);
//! `pw` is the pathwise part alone and refuses traces with non-reparameterized
//! choices.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::runtime::{run_trace, Bindings, Ctx, ParameterStore, Reparam, Trace, TraceOpts};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    Unified,
    Lr,
    Pw,
}

#[derive(Clone, Debug)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    /// Traces averaged per gradient estimate. Must be >= 1.
    pub num_samples: usize,
    /// Weight each score-function choice by its own downstream sum instead
    /// of the global logP - logQ.
    pub use_per_choice_weights: bool,
    /// Subtract running per-address baselines from the weights. Baselines
    /// are only read and maintained when this is on.
    pub use_baselines: bool,
}

impl Default for EstimatorConfig {
    fn default() -> EstimatorConfig {
        EstimatorConfig::unified()
    }
}

impl EstimatorConfig {
    pub fn unified() -> EstimatorConfig {
        EstimatorConfig {
            kind: EstimatorKind::Unified,
            num_samples: 1,
            use_per_choice_weights: true,
            use_baselines: true,
        }
    }

    pub fn lr() -> EstimatorConfig {
        EstimatorConfig {
            kind: EstimatorKind::Lr,
            num_samples: 1,
            use_per_choice_weights: false,
            use_baselines: false,
        }
    }

    pub fn pw() -> EstimatorConfig {
        EstimatorConfig {
            kind: EstimatorKind::Pw,
            num_samples: 1,
            use_per_choice_weights: false,
            use_baselines: false,
        }
    }

    pub fn samples(mut self, n: usize) -> EstimatorConfig {
        self.num_samples = n;
        self
    }

    pub fn per_choice_weights(mut self, on: bool) -> EstimatorConfig {
        self.use_per_choice_weights = on;
        self
    }

    pub fn baselines(mut self, on: bool) -> EstimatorConfig {
        self.use_baselines = on;
        self
    }
}

/// Running mean of the score weight seen at each structural address.
///
/// Keyed structurally (mapData indices erased) so statistics pool across data
/// points; under minibatching a per-instance key would almost never update.
#[derive(Clone, Debug, Default)]
pub struct BaselineStore {
    entries: HashMap<String, f64>,
    decay: f64,
}

impl BaselineStore {
    pub fn new() -> BaselineStore {
        BaselineStore::with_decay(0.9)
    }

    pub fn with_decay(decay: f64) -> BaselineStore {
        assert!(decay > 0.0 && decay < 1.0, "decay must lie in (0,1)");
        BaselineStore { entries: HashMap::new(), decay }
    }

    /// None until the first update for this address.
    pub fn value(&self, addr: &str) -> Option<f64> {
        self.entries.get(addr).copied()
    }

    /// First observation seeds the mean; later ones decay toward w.
    pub fn update(&mut self, addr: &str, w: f64) {
        match self.entries.entry(addr.to_string()) {
            Entry::Vacant(e) => {
                e.insert(w);
            }
            Entry::Occupied(mut e) => {
                let m = e.get_mut();
                *m = self.decay * *m + (1.0 - self.decay) * w;
            }
        }
    }

    /// Pin a baseline directly (tests, warm starts).
    pub fn set(&mut self, addr: &str, b: f64) {
        self.entries.insert(addr.to_string(), b);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Averaged gradient (by parameter name, ascent direction) plus the mean
/// one-sample ELBo estimate of the traces that produced it.
#[derive(Clone, Debug)]
pub struct GradientEstimate {
    pub grads: HashMap<String, Vec<f64>>,
    pub elbo_estimate: f64,
}

/// Gradient of the surrogate for a single trace.
#[derive(Clone, Debug)]
pub struct TraceGradient {
    pub grads: HashMap<String, Vec<f64>>,
    /// totalLogP - totalLogQ as a plain number.
    pub elbo: f64,
    /// (structural address, weight) for each score-function choice, in trace
    /// order; feed these to [`BaselineStore::update`] after the step.
    pub weights: Vec<(String, f64)>,
}

fn check_trace_finite(trace: &Trace) -> Result<()> {
    for c in &trace.choices {
        if !c.log_p.item()?.is_finite() || !c.log_q.item()?.is_finite() {
            return Err(Error::NonFinite { at: c.address.instance() });
        }
    }
    for (k, o) in trace.observations.iter().enumerate() {
        if !o.log_p.item()?.is_finite() {
            return Err(Error::NonFinite { at: format!("observation {k}") });
        }
    }
    Ok(())
}

/// Surrogate scalar and the score weights it used.
fn surrogate(
    trace: &Trace,
    cfg: &EstimatorConfig,
    baselines: &BaselineStore,
) -> Result<(Tensor, Vec<(String, f64)>)> {
    check_trace_finite(trace)?;
    match cfg.kind {
        EstimatorKind::Lr => lr_surrogate(trace),
        EstimatorKind::Pw => {
            if let Some(c) = trace.choices.iter().find(|c| !c.reparameterized) {
                return Err(Error::support(
                    Some(c.address.instance()),
                    format!(
                        "pathwise estimator needs every choice reparameterized; \
                         {} is not",
                        c.model_family
                    ),
                ));
            }
            unified_surrogate(trace, cfg, baselines)
        }
        EstimatorKind::Unified => unified_surrogate(trace, cfg, baselines),
    }
}

fn unified_surrogate(
    trace: &Trace,
    cfg: &EstimatorConfig,
    baselines: &BaselineStore,
) -> Result<(Tensor, Vec<(String, f64)>)> {
    let per_choice = if cfg.use_per_choice_weights {
        Some(trace.per_choice_weights()?)
    } else {
        None
    };
    let global_w = trace.elbo()?;
    let mut parts = vec![trace.total_log_p.clone()];
    let mut weights = Vec::new();
    for (i, c) in trace.choices.iter().enumerate() {
        if c.reparameterized {
            parts.push(c.log_q.scale(-c.scale)?);
        } else {
            let w = per_choice.as_ref().map_or(global_w, |ws| ws[i]);
            let addr = c.address.structural();
            if !w.is_finite() {
                return Err(Error::NonFinite { at: addr });
            }
            let b = if cfg.use_baselines {
                baselines.value(&addr).unwrap_or(0.0)
            } else {
                0.0
            };
            parts.push(c.log_q.scale((w - b) * c.scale)?);
            weights.push((addr, w));
        }
    }
    Ok((Tensor::sum_of(&parts)?, weights))
}

/// detach(logP - logQ) times the summed score, nothing flowing through
/// values. Callers must build the trace with [`Reparam::Never`].
fn lr_surrogate(trace: &Trace) -> Result<(Tensor, Vec<(String, f64)>)> {
    if let Some(c) = trace.choices.iter().find(|c| c.reparameterized) {
        return Err(Error::config(format!(
            "likelihood-ratio surrogate expects traces sampled without \
             reparameterization, but {} was reparameterized",
            c.address.instance()
        )));
    }
    let w = trace.elbo()?;
    if !w.is_finite() {
        return Err(Error::NonFinite { at: "trace weight".to_string() });
    }
    let parts = trace
        .choices
        .iter()
        .map(|c| c.log_q.scale(w * c.scale))
        .collect::<Result<Vec<_>>>()?;
    let s = if parts.is_empty() { Tensor::scalar(0.0) } else { Tensor::sum_of(&parts)? };
    Ok((s, Vec::new()))
}

/// Gradient of the surrogate for one trace. Baselines are read, never
/// written; apply the returned weights afterwards.
pub fn gradient_for_trace(
    trace: &Trace,
    cfg: &EstimatorConfig,
    baselines: &BaselineStore,
) -> Result<TraceGradient> {
    let (s, weights) = surrogate(trace, cfg, baselines)?;
    let mut grads = HashMap::new();
    if s.is_attached() {
        let flows = s.backward()?;
        for (name, leaf) in &trace.params {
            grads.insert(name.clone(), flows.get_or_zeros(leaf));
        }
    } else {
        for (name, leaf) in &trace.params {
            grads.insert(name.clone(), vec![0.0; leaf.len()]);
        }
    }
    Ok(TraceGradient { grads, elbo: trace.elbo()?, weights })
}

fn opts_for(kind: EstimatorKind) -> TraceOpts {
    let mut opts = TraceOpts::guided();
    if kind == EstimatorKind::Lr {
        opts.reparam = Reparam::Never;
    }
    opts
}

/// Average the surrogate gradient over `cfg.num_samples` fresh guided traces.
///
/// All samples in one call see the same (pre-update) baselines; the weights
/// they produce are folded into `baselines` at the end.
pub fn elbo_gradient<T>(
    model: impl Fn(&mut Ctx) -> Result<T>,
    store: &mut ParameterStore,
    cfg: &EstimatorConfig,
    baselines: &mut BaselineStore,
    rng: &mut ChaCha8Rng,
    bindings: &Bindings,
) -> Result<GradientEstimate> {
    if cfg.num_samples < 1 {
        return Err(Error::config("estimator needs numSamples >= 1"));
    }
    let opts = opts_for(cfg.kind);
    let mut acc: HashMap<String, Vec<f64>> = HashMap::new();
    let mut elbo_sum = 0.0;
    let mut pending = Vec::new();
    for _ in 0..cfg.num_samples {
        let (trace, _) = run_trace(store, &opts, rng, bindings, &model)?;
        let tg = gradient_for_trace(&trace, cfg, baselines)?;
        elbo_sum += tg.elbo;
        for (name, g) in tg.grads {
            match acc.entry(name) {
                Entry::Occupied(mut e) => {
                    for (a, b) in e.get_mut().iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Entry::Vacant(e) => {
                    e.insert(g);
                }
            }
        }
        if cfg.use_baselines {
            pending.extend(tg.weights);
        }
    }
    let inv = 1.0 / cfg.num_samples as f64;
    for (name, g) in acc.iter_mut() {
        for x in g.iter_mut() {
            *x *= inv;
            if !x.is_finite() {
                return Err(Error::NonFinite { at: format!("gradient of {name}") });
            }
        }
    }
    for (addr, w) in pending {
        baselines.update(&addr, w);
    }
    Ok(GradientEstimate { grads: acc, elbo_estimate: elbo_sum * inv })
}

/// Reference score-function estimator: global weight, no pathwise flow.
pub fn lr_gradient<T>(
    model: impl Fn(&mut Ctx) -> Result<T>,
    store: &mut ParameterStore,
    rng: &mut ChaCha8Rng,
    bindings: &Bindings,
) -> Result<GradientEstimate> {
    let mut unused = BaselineStore::new();
    elbo_gradient(model, store, &EstimatorConfig::lr(), &mut unused, rng, bindings)
}

/// Reference pathwise estimator: errors on any non-reparameterized choice.
pub fn pw_gradient<T>(
    model: impl Fn(&mut Ctx) -> Result<T>,
    store: &mut ParameterStore,
    rng: &mut ChaCha8Rng,
    bindings: &Bindings,
) -> Result<GradientEstimate> {
    let mut unused = BaselineStore::new();
    elbo_gradient(model, store, &EstimatorConfig::pw(), &mut unused, rng, bindings)
}
