//! Trace execution: a model is a closure over [`Ctx`], which provides the
//! effect vocabulary (`sample`, `observe`, `factor`, `map_data`, `param`,
//! `model_param`) and records everything the estimators need.
//!
//! One call to [`run_trace`] executes the model once, either under the
//! guide (each choice drawn from its guide distribution, reparameterized
//! where the family allows) or under the prior (choices drawn from the
//! model distributions, guides ignored). The result is a [`Trace`]:
//! ordered choice and observation records with differentiable scores, the
//! dependency graph, and handles to every parameter leaf touched.

use std::any::Any;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::depgraph::{DepGraph, GraphBuilder, NodeId, NodeKind};
use crate::dists::{build_guide, default_guide, supports_match, Dist, Value};
use crate::error::{Error, Result};
use crate::nn::{self, LayerSpec};
use crate::rng::{label, stream};
use crate::tensor::{Tape, Tensor};

/// Where a choice happened: enclosing `map_data` frames (name and datum
/// index), the site name, and an occurrence counter that disambiguates
/// repeated executions of one site within the same frames.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Address {
    pub frames: Vec<(String, usize)>,
    pub site: String,
    pub occurrence: usize,
}

impl Address {
    /// Fully indexed form, e.g. `docs[3]/theta#0`.
    pub fn instance(&self) -> String {
        let mut s = String::new();
        for (n, i) in &self.frames {
            let _ = write!(s, "{n}[{i}]/");
        }
        let _ = write!(s, "{}#{}", self.site, self.occurrence);
        s
    }

    /// Datum indices erased, e.g. `docs[*]/theta#0`; identifies the site
    /// across data, so baselines pool over a whole `map_data`.
    pub fn structural(&self) -> String {
        let mut s = String::new();
        for (n, _) in &self.frames {
            let _ = write!(s, "{n}[*]/");
        }
        let _ = write!(s, "{}#{}", self.site, self.occurrence);
        s
    }
}

#[derive(Clone, Debug)]
pub struct ChoiceRecord {
    pub address: Address,
    pub model_family: &'static str,
    pub guide_family: &'static str,
    pub value: Value,
    /// Base noise for reparameterized draws; the value itself otherwise.
    pub base: Value,
    pub reparameterized: bool,
    /// Guide family has no pathwise derivative (needs the score-function term).
    pub discrete: bool,
    pub log_p: Tensor,
    pub log_q: Tensor,
    pub scale: f64,
    pub node: NodeId,
}

#[derive(Clone, Debug)]
pub struct ObsRecord {
    pub log_p: Tensor,
    pub scale: f64,
    pub node: NodeId,
}

#[derive(Debug)]
pub struct Trace {
    pub choices: Vec<ChoiceRecord>,
    pub observations: Vec<ObsRecord>,
    pub graph: DepGraph,
    /// Scale-weighted sum of model scores over choices and observations.
    pub total_log_p: Tensor,
    /// Scale-weighted sum of guide scores over choices.
    pub total_log_q: Tensor,
    /// Every parameter leaf touched during the trace, by name.
    pub params: HashMap<String, Tensor>,
}

impl Trace {
    /// One-sample evidence-lower-bound estimate.
    pub fn elbo(&self) -> Result<f64> {
        Ok(self.total_log_p.item()? - self.total_log_q.item()?)
    }

    /// Plain-number contribution of each graph node: choices give
    /// scale*(logP - logQ), observations and factors give scale*logP,
    /// structural nodes give 0.
    pub fn node_contribs(&self) -> Result<Vec<f64>> {
        let mut c = vec![0.0; self.graph.len()];
        for ch in &self.choices {
            c[ch.node] = ch.scale * (ch.log_p.item()? - ch.log_q.item()?);
        }
        for ob in &self.observations {
            c[ob.node] = ob.scale * ob.log_p.item()?;
        }
        Ok(c)
    }

    /// Per-choice likelihood-ratio weights: each choice's own contribution
    /// plus everything downstream of it in the dependency graph.
    pub fn per_choice_weights(&self) -> Result<Vec<f64>> {
        let suffix = self.graph.suffix_weights(&self.node_contribs()?);
        Ok(self.choices.iter().map(|c| suffix[c.node]).collect())
    }

    pub fn choice(&self, instance: &str) -> Option<&ChoiceRecord> {
        self.choices.iter().find(|c| c.address.instance() == instance)
    }

    pub fn to_dot(&self) -> String {
        self.graph.to_dot(&|id| {
            match self.graph.nodes[id].kind {
                NodeKind::Choice(i) => self.choices[i].address.instance(),
                NodeKind::Observe(i) => format!("obs{i}"),
                _ => String::new(),
            }
        })
    }
}

// ── parameter store ──────────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamEntry {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    /// Optimizer first-moment slot.
    pub m: Vec<f64>,
    /// Optimizer second-moment slot.
    pub v: Vec<f64>,
}

/// Named, persistent parameter tensors plus their optimizer state.
///
/// Initialization draws come from a per-parameter substream of the store
/// seed keyed by creation index, so a reloaded store creates any further
/// parameters exactly as the original would have.
#[derive(Clone, Debug)]
pub struct ParameterStore {
    entries: HashMap<String, ParamEntry>,
    order: Vec<String>,
    seed: u64,
    created: u64,
    /// Global optimizer step count; drives seed chaining across resumes.
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct StoreFile {
    version: u32,
    seed: u64,
    created: u64,
    step: u64,
    params: Vec<(String, ParamEntry)>,
}

impl ParameterStore {
    pub fn new(seed: u64) -> ParameterStore {
        ParameterStore { entries: HashMap::new(), order: Vec::new(), seed, created: 0, step: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fetch an entry, creating it with Gaussian(0, std) values on first
    /// use (std = 0 gives zeros). Re-declaration with another shape errors.
    pub fn get_or_create(&mut self, name: &str, shape: &[usize], std: f64) -> Result<&ParamEntry> {
        if let Some(e) = self.entries.get(name) {
            if e.shape != shape {
                return Err(Error::param(
                    name,
                    format!("declared with shape {:?}, previously {:?}", shape, e.shape),
                ));
            }
        } else {
            let n: usize = shape.iter().product();
            let value = if std == 0.0 {
                vec![0.0; n]
            } else {
                let mut rng = stream(self.seed, &[label::INIT, self.created]);
                (0..n)
                    .map(|_| {
                        let g: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
                        g * std
                    })
                    .collect()
            };
            self.created += 1;
            self.entries.insert(
                name.to_string(),
                ParamEntry { shape: shape.to_vec(), value, m: vec![0.0; n], v: vec![0.0; n] },
            );
            self.order.push(name.to_string());
        }
        Ok(&self.entries[name])
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn entry_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    pub fn set_value(&mut self, name: &str, value: &[f64]) -> Result<()> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::param(name, "unknown parameter"))?;
        if e.value.len() != value.len() {
            return Err(Error::param(name, "value length mismatch"));
        }
        e.value.copy_from_slice(value);
        Ok(())
    }

    /// Names in creation order.
    pub fn names(&self) -> &[String] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = StoreFile {
            version: 1,
            seed: self.seed,
            created: self.created,
            step: self.step,
            params: self
                .order
                .iter()
                .map(|n| (n.clone(), self.entries[n].clone()))
                .collect(),
        };
        serde_json::to_writer(BufWriter::new(File::create(path)?), &file)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ParameterStore> {
        let file: StoreFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if file.version != 1 {
            return Err(Error::config(format!("unsupported store version {}", file.version)));
        }
        let mut store = ParameterStore::new(file.seed);
        store.created = file.created;
        store.step = file.step;
        for (name, entry) in file.params {
            store.order.push(name.clone());
            store.entries.insert(name, entry);
        }
        Ok(store)
    }
}

// ── data bindings ────────────────────────────────────────────────────────

/// Named, typed data passed into a trace (datasets, test splits, sizes).
/// Values are `Arc`ed so models can pull a dataset out and `map_data` over
/// it without holding a borrow on the context.
#[derive(Clone, Default)]
pub struct Bindings {
    map: HashMap<String, Arc<dyn Any + Send + Sync>>,
}

impl Bindings {
    pub fn new() -> Bindings {
        Bindings::default()
    }

    pub fn set<T: Any + Send + Sync>(&mut self, name: &str, value: T) {
        self.map.insert(name.to_string(), Arc::new(value));
    }

    pub fn get<T: Any + Send + Sync>(&self, name: &str) -> Result<Arc<T>> {
        let v = self
            .map
            .get(name)
            .ok_or_else(|| Error::data(format!("no binding named '{name}'")))?;
        v.clone()
            .downcast::<T>()
            .map_err(|_| Error::data(format!("binding '{name}' has a different type")))
    }
}

// ── trace options ────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Sample every choice from its guide.
    Guided,
    /// Sample from the model distributions; guides are ignored (improper
    /// priors take their point-mass guide's center, so learned model
    /// parameters keep their stored values).
    Prior,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reparam {
    /// Pathwise sampling for every family that supports it.
    WherePossible,
    /// Treat all choices through the score-function path (values detached).
    Never,
}

/// Minibatch selection for `map_data`.
#[derive(Clone, Debug)]
pub enum Batch {
    Full,
    /// Uniform without-replacement subset of this size.
    Size(usize),
    /// Exactly these datum indices (enumeration and replay in tests).
    Exact(Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct TraceOpts {
    pub mode: Mode,
    pub reparam: Reparam,
    /// Build a gradient tape (otherwise all scores are plain constants).
    pub record_tape: bool,
    /// Values forced by instance address; forced choices consume no
    /// randomness and are never reparameterized.
    pub forced: HashMap<String, Value>,
}

impl TraceOpts {
    pub fn guided() -> TraceOpts {
        TraceOpts {
            mode: Mode::Guided,
            reparam: Reparam::WherePossible,
            record_tape: true,
            forced: HashMap::new(),
        }
    }

    pub fn guided_no_tape() -> TraceOpts {
        TraceOpts { record_tape: false, ..TraceOpts::guided() }
    }

    pub fn prior() -> TraceOpts {
        TraceOpts {
            mode: Mode::Prior,
            reparam: Reparam::WherePossible,
            record_tape: false,
            forced: HashMap::new(),
        }
    }

    pub fn force(mut self, instance: &str, v: Value) -> TraceOpts {
        self.forced.insert(instance.to_string(), v);
        self
    }
}

// ── the context ──────────────────────────────────────────────────────────

pub struct Ctx<'a> {
    mode: Mode,
    reparam: Reparam,
    tape: Option<Tape>,
    store: &'a mut ParameterStore,
    rng: &'a mut ChaCha8Rng,
    bindings: &'a Bindings,
    forced: HashMap<String, Value>,
    frames: Vec<(String, usize)>,
    occ: HashMap<String, usize>,
    scale: f64,
    choices: Vec<ChoiceRecord>,
    observations: Vec<ObsRecord>,
    builder: GraphBuilder,
    leafed: HashMap<String, Tensor>,
    model_param_cache: HashMap<String, Tensor>,
}

/// Execute `model` once under `opts`, returning the trace and the model's
/// return value.
pub fn run_trace<T>(
    store: &mut ParameterStore,
    opts: &TraceOpts,
    rng: &mut ChaCha8Rng,
    bindings: &Bindings,
    model: impl FnOnce(&mut Ctx) -> Result<T>,
) -> Result<(Trace, T)> {
    let mut ctx = Ctx {
        mode: opts.mode,
        reparam: opts.reparam,
        tape: if opts.record_tape { Some(Tape::new()) } else { None },
        store,
        rng,
        bindings,
        forced: opts.forced.clone(),
        frames: Vec::new(),
        occ: HashMap::new(),
        scale: 1.0,
        choices: Vec::new(),
        observations: Vec::new(),
        builder: GraphBuilder::new(),
        leafed: HashMap::new(),
        model_param_cache: HashMap::new(),
    };
    let value = model(&mut ctx)?;
    let trace = ctx.finish()?;
    Ok((trace, value))
}

impl<'a> Ctx<'a> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Typed access to a data binding.
    pub fn data<T: Any + Send + Sync>(&self, name: &str) -> Result<Arc<T>> {
        self.bindings.get::<T>(name)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    fn make_address(&mut self, site: &str) -> Address {
        let mut key = String::new();
        for (n, i) in &self.frames {
            let _ = write!(key, "{n}[{i}]/");
        }
        key.push_str(site);
        let counter = self.occ.entry(key).or_insert(0);
        let occurrence = *counter;
        *counter += 1;
        Address { frames: self.frames.clone(), site: site.to_string(), occurrence }
    }

    /// Guide-side optimizable parameter (created as Gaussian(0, 0.1) on
    /// first use).
    pub fn param(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        self.param_with_init(name, shape, 0.1)
    }

    pub fn param_with_init(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Tensor> {
        if let Some(t) = self.leafed.get(name) {
            if t.shape() != shape {
                return Err(Error::param(
                    name,
                    format!("used with shape {:?}, previously {:?}", shape, t.shape()),
                ));
            }
            return Ok(t.clone());
        }
        let entry = self.store.get_or_create(name, shape, std)?;
        let t = match &self.tape {
            Some(tape) => tape.leaf(shape.to_vec(), entry.value.clone())?,
            None => Tensor::from_shape(shape.to_vec(), entry.value.clone())?,
        };
        self.leafed.insert(name.to_string(), t.clone());
        Ok(t)
    }

    /// Model-side learned parameter: an improper-uniform choice guided by a
    /// point mass at `param(name)`, so optimizing the guide optimizes the
    /// model. Cached per trace; repeated calls return the same tensor.
    pub fn model_param(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        self.model_param_with_init(name, shape, 0.1)
    }

    pub fn model_param_with_init(
        &mut self,
        name: &str,
        shape: &[usize],
        std: f64,
    ) -> Result<Tensor> {
        if let Some(t) = self.model_param_cache.get(name) {
            if t.shape() != shape {
                return Err(Error::param(
                    name,
                    format!("used with shape {:?}, previously {:?}", shape, t.shape()),
                ));
            }
            return Ok(t.clone());
        }
        let p = self.param_with_init(name, shape, std)?;
        let v = self.sample_impl(
            name,
            &Dist::ImproperUniform,
            Some(Dist::Delta { center: Value::Tensor(p) }),
        )?;
        let t = v.as_tensor()?.clone();
        self.model_param_cache.insert(name.to_string(), t.clone());
        Ok(t)
    }

    /// Random choice with the automatic mean-field guide: the default guide
    /// family for `d`, its parameters named by this site's instance address.
    pub fn sample(&mut self, site: &str, d: &Dist) -> Result<Value> {
        self.sample_impl(site, d, None)
    }

    /// Random choice with an explicit guide distribution. The guide
    /// expression is evaluated at the call site, so it can read networks,
    /// data, and previously sampled values.
    pub fn sample_guided(&mut self, site: &str, d: &Dist, guide: Dist) -> Result<Value> {
        self.sample_impl(site, d, Some(guide))
    }

    fn auto_guide(&mut self, model: &Dist, inst: &str) -> Result<Dist> {
        let tmpl = default_guide(model)?;
        let mut raws = Vec::with_capacity(tmpl.slots.len());
        for slot in &tmpl.slots {
            let name = format!("{inst}/{}", slot.name);
            raws.push(self.param_with_init(&name, &slot.dims, 0.1)?);
        }
        build_guide(model, &raws)
    }

    fn sample_impl(&mut self, site: &str, model: &Dist, explicit: Option<Dist>) -> Result<Value> {
        let addr = self.make_address(site);
        let inst = addr.instance();

        if self.mode == Mode::Prior {
            let guide_family = explicit.as_ref().map(|g| g.name()).unwrap_or("auto");
            // guides are ignored, except that an improper prior has nothing
            // to sample from and takes its point-mass guide's center
            let value = if let Some(v) = self.forced.get(&inst) {
                v.detach()
            } else if let Dist::ImproperUniform = model {
                let guide = match explicit {
                    Some(g) => g,
                    None => self.auto_guide(model, &inst)?,
                };
                match guide {
                    Dist::Delta { center } => center.detach(),
                    g => {
                        return Err(Error::support(
                            Some(inst),
                            format!("improper prior needs a Delta guide, got {}", g.name()),
                        ))
                    }
                }
            } else {
                model.sample_direct(self.rng).map_err(|e| e.with_addr(&inst))?
            };
            let log_p = model.log_prob(&value).map_err(|e| e.with_addr(&inst))?;
            return self.record_choice(
                addr,
                model.name(),
                guide_family,
                value,
                None,
                false,
                model.is_discrete(),
                log_p,
                Tensor::scalar(0.0),
            );
        }

        let guide = match explicit {
            Some(g) => g,
            None => self.auto_guide(model, &inst)?,
        };
        if !supports_match(&model.support(), &guide.support()) {
            return Err(Error::support(
                Some(inst),
                format!(
                    "guide {} on {:?} cannot stand in for model {} on {:?}",
                    guide.name(),
                    guide.support(),
                    model.name(),
                    model.support()
                ),
            ));
        }

        let discrete = guide.is_discrete();
        let (value, base, reparameterized) = if let Some(v) = self.forced.get(&inst) {
            (v.detach(), v.detach(), false)
        } else if discrete || !guide.is_reparameterizable() || self.reparam == Reparam::Never {
            let v = guide.sample_direct(self.rng).map_err(|e| e.with_addr(&inst))?;
            (v.clone(), v, false)
        } else {
            let eps = guide.sample_base(self.rng).map_err(|e| e.with_addr(&inst))?;
            let v = guide.transform(&eps).map_err(|e| e.with_addr(&inst))?;
            (v, eps, true)
        };

        let log_q = guide.log_prob(&value).map_err(|e| e.with_addr(&inst))?;
        let log_p = model.log_prob(&value).map_err(|e| e.with_addr(&inst))?;
        self.record_choice(
            addr,
            model.name(),
            guide.name(),
            value,
            Some(base),
            reparameterized,
            discrete,
            log_p,
            log_q,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn record_choice(
        &mut self,
        address: Address,
        model_family: &'static str,
        guide_family: &'static str,
        value: Value,
        base: Option<Value>,
        reparameterized: bool,
        discrete: bool,
        log_p: Tensor,
        log_q: Tensor,
    ) -> Result<Value> {
        let node = self.builder.on_choice(self.choices.len());
        let base = base.unwrap_or_else(|| value.detach());
        self.choices.push(ChoiceRecord {
            address,
            model_family,
            guide_family,
            value: value.clone(),
            base,
            reparameterized,
            discrete,
            log_p,
            log_q,
            scale: self.scale,
            node,
        });
        Ok(value)
    }

    /// Condition on data: scores `v` under `d` and adds the term to the
    /// model score. The value must lie in the distribution's support.
    pub fn observe(&mut self, d: &Dist, v: &Value) -> Result<()> {
        let log_p = d.log_prob(v)?;
        let node = self.builder.on_observe(self.observations.len());
        self.observations.push(ObsRecord { log_p, scale: self.scale, node });
        Ok(())
    }

    /// Add an arbitrary differentiable log-score term (unnormalized
    /// factors are fine).
    pub fn factor(&mut self, s: &Tensor) -> Result<()> {
        if s.len() != 1 {
            return Err(Error::shape("factor", "score must be a scalar"));
        }
        let node = self.builder.on_observe(self.observations.len());
        self.observations.push(ObsRecord { log_p: s.clone(), scale: self.scale, node });
        Ok(())
    }

    /// Run `f` once per selected datum, independently: each iteration hangs
    /// off its own branch of the dependency graph, and every score recorded
    /// inside is weighted by |data| / |batch| so minibatch traces estimate
    /// the full-data objective without bias. Addresses inside carry the
    /// datum's index in the full dataset.
    pub fn map_data<T, U>(
        &mut self,
        name: &str,
        data: &[T],
        batch: Batch,
        mut f: impl FnMut(&mut Ctx<'a>, &T) -> Result<U>,
    ) -> Result<Vec<U>> {
        if data.is_empty() {
            return Err(Error::config("map_data over empty data"));
        }
        let n = data.len();
        let indices: Vec<usize> = match &batch {
            Batch::Full => (0..n).collect(),
            Batch::Size(k) => {
                if *k == 0 || *k > n {
                    return Err(Error::config(format!("batch size {k} outside 1..={n}")));
                }
                rand::seq::index::sample(self.rng, n, *k).into_vec()
            }
            Batch::Exact(ix) => {
                if ix.is_empty() {
                    return Err(Error::config("empty explicit batch"));
                }
                let mut seen = vec![false; n];
                for &i in ix {
                    if i >= n {
                        return Err(Error::config(format!("batch index {i} out of 0..{n}")));
                    }
                    if seen[i] {
                        return Err(Error::config(format!("batch index {i} repeated")));
                    }
                    seen[i] = true;
                }
                ix.clone()
            }
        };

        let saved_scale = self.scale;
        self.scale *= n as f64 / indices.len() as f64;
        self.builder.on_map_data_begin();
        let mut out = Vec::with_capacity(indices.len());
        for &i in &indices {
            self.builder.on_iter_begin();
            self.frames.push((name.to_string(), i));
            let r = f(self, &data[i]);
            self.frames.pop();
            out.push(r?);
            self.builder.on_iter_end();
        }
        self.builder.on_map_data_end();
        self.scale = saved_scale;
        Ok(out)
    }

    /// Network forward pass with guide-side parameters.
    pub fn nn(&mut self, spec: &LayerSpec, x: &Tensor) -> Result<Tensor> {
        let mut fetch =
            |name: &str, shape: &[usize], std: f64| self.param_with_init(name, shape, std);
        nn::nn_eval(spec, x, &mut fetch)
    }

    /// Network forward pass with learned model parameters (each weight is
    /// an improper-uniform choice guided by a point mass).
    pub fn nn_model(&mut self, spec: &LayerSpec, x: &Tensor) -> Result<Tensor> {
        let mut fetch =
            |name: &str, shape: &[usize], std: f64| self.model_param_with_init(name, shape, std);
        nn::nn_eval(spec, x, &mut fetch)
    }

    /// GRU update with guide-side parameters.
    pub fn gru(&mut self, spec: &LayerSpec, h: &Tensor, x: &Tensor) -> Result<Tensor> {
        let mut fetch =
            |name: &str, shape: &[usize], std: f64| self.param_with_init(name, shape, std);
        nn::gru_step(spec, h, x, &mut fetch)
    }

    fn finish(self) -> Result<Trace> {
        let graph = self.builder.finish();
        let mut p_parts = Vec::with_capacity(self.choices.len() + self.observations.len());
        let mut q_parts = Vec::with_capacity(self.choices.len());
        for c in &self.choices {
            p_parts.push(c.log_p.scale(c.scale)?);
            q_parts.push(c.log_q.scale(c.scale)?);
        }
        for o in &self.observations {
            p_parts.push(o.log_p.scale(o.scale)?);
        }
        let total_log_p =
            if p_parts.is_empty() { Tensor::scalar(0.0) } else { Tensor::sum_of(&p_parts)? };
        let total_log_q =
            if q_parts.is_empty() { Tensor::scalar(0.0) } else { Tensor::sum_of(&q_parts)? };
        Ok(Trace {
            choices: self.choices,
            observations: self.observations,
            graph,
            total_log_p,
            total_log_q,
            params: self.leafed,
        })
    }
}
