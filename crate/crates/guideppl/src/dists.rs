//! Distribution families.
//!
//! Every family scores values with a differentiable `log_prob` (gradients
//! flow into any tape-attached parameters, and into the value itself for
//! continuous families). Families used as guides are either discrete or
//! *reparameterizable*: sampling factors into parameter-free base noise
//! (`sample_base`) and a deterministic, differentiable `transform` of that
//! noise, so pathwise gradients flow from downstream scores back into guide
//! parameters.
//!
//! Families without a usable reparameterization (Uniform, Beta, Gamma,
//! Dirichlet) can appear on the model side only; their default guides come
//! from an approximating family on the same support (`default_guide`).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const LN_2PI: f64 = 1.8378770664093453;

/// A value produced by a random choice or scored by an observation.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Bool(bool),
    /// Category index of a `Discrete`.
    Index(usize),
    /// Real scalar, vector, or 0/1 vector, possibly tape-attached.
    Tensor(Tensor),
}

impl Value {
    pub fn real(x: f64) -> Value {
        Value::Tensor(Tensor::scalar(x))
    }

    pub fn vector(v: Vec<f64>) -> Value {
        Value::Tensor(Tensor::vector(v))
    }

    pub fn as_bool(&self) -> Result<bool> {
        match self {
            Value::Bool(b) => Ok(*b),
            v => Err(Error::data(format!("expected bool value, got {v:?}"))),
        }
    }

    pub fn as_index(&self) -> Result<usize> {
        match self {
            Value::Index(i) => Ok(*i),
            v => Err(Error::data(format!("expected index value, got {v:?}"))),
        }
    }

    pub fn as_tensor(&self) -> Result<&Tensor> {
        match self {
            Value::Tensor(t) => Ok(t),
            v => Err(Error::data(format!("expected tensor value, got {v:?}"))),
        }
    }

    pub fn as_real(&self) -> Result<f64> {
        self.as_tensor()?.item()
    }

    /// Detached copy (discrete values are already constants).
    pub fn detach(&self) -> Value {
        match self {
            Value::Tensor(t) => Value::Tensor(t.detach()),
            v => v.clone(),
        }
    }
}

/// Support labels; guide and model must match exactly, except that
/// `ImproperUniform` accepts any guide support and `Delta` guides any model.
#[derive(Clone, Debug, PartialEq)]
pub enum Support {
    Boolean,
    Category(usize),
    BinaryVector(usize),
    Real,
    /// x >= 0 (Exponential, Gamma) or x > 0 (softplus-normal); label only.
    PositiveReal,
    Interval(f64, f64),
    Simplex(usize),
    RealVector(usize),
    Point,
    All,
}

pub fn supports_match(model: &Support, guide: &Support) -> bool {
    model == &Support::All || guide == &Support::Point || model == guide
}

#[derive(Clone, Debug)]
pub enum Dist {
    Bernoulli { p: Tensor },
    /// Weights are normalized internally; they need not sum to 1.
    Discrete { ps: Tensor },
    Gaussian { mu: Tensor, sigma: Tensor },
    /// I.i.d. Gaussian entries filling `dims`.
    TensorGaussian { mu: Tensor, sigma: Tensor, dims: Vec<usize> },
    DiagCovGaussian { mu: Tensor, sigma: Tensor },
    MultivariateBernoulli { ps: Tensor },
    Dirichlet { alpha: Tensor },
    /// sigmoid of a Gaussian, affinely mapped onto (lo, hi).
    LogitNormal { mu: Tensor, sigma: Tensor, lo: f64, hi: f64 },
    /// simplex-transform of a diagonal Gaussian in R^(n-1).
    LogisticNormal { mu: Tensor, sigma: Tensor },
    /// softplus of a Gaussian; support (0, inf).
    InvSoftplusNormal { mu: Tensor, sigma: Tensor },
    Exponential { rate: Tensor },
    Cauchy { loc: Tensor, scale: Tensor },
    Uniform { lo: f64, hi: f64 },
    Beta { a: Tensor, b: Tensor },
    Gamma { shape: Tensor, scale: Tensor },
    /// Point mass; log-probability 0 at its center.
    Delta { center: Value },
    /// Improper prior with log-density 0 everywhere; cannot be sampled.
    ImproperUniform,
}

impl Dist {
    // Convenience constructors for constant parameters.
    pub fn bernoulli(p: f64) -> Dist {
        Dist::Bernoulli { p: Tensor::scalar(p) }
    }

    pub fn discrete(ps: Vec<f64>) -> Dist {
        Dist::Discrete { ps: Tensor::vector(ps) }
    }

    pub fn gaussian(mu: f64, sigma: f64) -> Dist {
        Dist::Gaussian { mu: Tensor::scalar(mu), sigma: Tensor::scalar(sigma) }
    }

    pub fn tensor_gaussian(mu: f64, sigma: f64, dims: Vec<usize>) -> Dist {
        Dist::TensorGaussian { mu: Tensor::scalar(mu), sigma: Tensor::scalar(sigma), dims }
    }

    pub fn dirichlet_sym(alpha: f64, n: usize) -> Dist {
        Dist::Dirichlet { alpha: Tensor::vector(vec![alpha; n]) }
    }

    pub fn logit_normal(mu: f64, sigma: f64) -> Dist {
        Dist::LogitNormal {
            mu: Tensor::scalar(mu),
            sigma: Tensor::scalar(sigma),
            lo: 0.0,
            hi: 1.0,
        }
    }

    pub fn exponential(rate: f64) -> Dist {
        Dist::Exponential { rate: Tensor::scalar(rate) }
    }

    pub fn cauchy(loc: f64, scale: f64) -> Dist {
        Dist::Cauchy { loc: Tensor::scalar(loc), scale: Tensor::scalar(scale) }
    }

    pub fn beta(a: f64, b: f64) -> Dist {
        Dist::Beta { a: Tensor::scalar(a), b: Tensor::scalar(b) }
    }

    pub fn gamma(shape: f64, scale: f64) -> Dist {
        Dist::Gamma { shape: Tensor::scalar(shape), scale: Tensor::scalar(scale) }
    }

    pub fn delta_real(x: f64) -> Dist {
        Dist::Delta { center: Value::real(x) }
    }

    /// Positivity/shape checks on parameters; cheap, value-independent.
    pub fn params_ok(&self) -> Result<()> {
        let pos = |t: &Tensor, what: &str| -> Result<()> {
            if t.data().iter().any(|&x| x <= 0.0) {
                Err(Error::domain("dist", format!("{what} must be positive")))
            } else {
                Ok(())
            }
        };
        match self {
            Dist::Bernoulli { p } => {
                if p.len() != 1 || p.data()[0] < 0.0 || p.data()[0] > 1.0 {
                    return Err(Error::domain("dist", "Bernoulli p must be a scalar in [0,1]"));
                }
            }
            Dist::Discrete { ps } => {
                if ps.data().iter().any(|&x| x < 0.0) || ps.data().iter().sum::<f64>() <= 0.0 {
                    return Err(Error::domain("dist", "Discrete weights must be >= 0, sum > 0"));
                }
            }
            Dist::Gaussian { mu, sigma } => {
                if mu.len() != 1 || sigma.len() != 1 {
                    return Err(Error::shape("dist", "Gaussian takes scalar mu, sigma"));
                }
                pos(sigma, "sigma")?;
            }
            Dist::TensorGaussian { mu, sigma, dims } => {
                if mu.len() != 1 || sigma.len() != 1 || dims.iter().product::<usize>() == 0 {
                    return Err(Error::shape("dist", "TensorGaussian takes scalars and dims"));
                }
                pos(sigma, "sigma")?;
            }
            Dist::DiagCovGaussian { mu, sigma } => {
                if mu.len() != sigma.len() {
                    return Err(Error::shape("dist", "mu and sigma lengths differ"));
                }
                pos(sigma, "sigma")?;
            }
            Dist::MultivariateBernoulli { ps } => {
                if ps.data().iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                    return Err(Error::domain("dist", "probabilities must lie in [0,1]"));
                }
            }
            Dist::Dirichlet { alpha } => {
                if alpha.len() < 2 {
                    return Err(Error::shape("dist", "Dirichlet needs >= 2 components"));
                }
                pos(alpha, "alpha")?;
            }
            Dist::LogitNormal { mu, sigma, lo, hi } => {
                if mu.len() != 1 || sigma.len() != 1 {
                    return Err(Error::shape("dist", "LogitNormal takes scalar mu, sigma"));
                }
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::domain("dist", "LogitNormal needs lo < hi"));
                }
                pos(sigma, "sigma")?;
            }
            Dist::LogisticNormal { mu, sigma } => {
                if mu.len() != sigma.len() || mu.is_empty() {
                    return Err(Error::shape("dist", "mu and sigma lengths differ or empty"));
                }
                pos(sigma, "sigma")?;
            }
            Dist::InvSoftplusNormal { mu, sigma } => {
                if mu.len() != 1 || sigma.len() != 1 {
                    return Err(Error::shape("dist", "InvSoftplusNormal takes scalar mu, sigma"));
                }
                pos(sigma, "sigma")?;
            }
            Dist::Exponential { rate } => pos(rate, "rate")?,
            Dist::Cauchy { scale, .. } => pos(scale, "scale")?,
            Dist::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::domain("dist", "Uniform needs lo < hi"));
                }
            }
            Dist::Beta { a, b } => {
                pos(a, "a")?;
                pos(b, "b")?;
            }
            Dist::Gamma { shape, scale } => {
                pos(shape, "shape")?;
                pos(scale, "scale")?;
            }
            Dist::Delta { .. } | Dist::ImproperUniform => {}
        }
        Ok(())
    }

    pub fn support(&self) -> Support {
        match self {
            Dist::Bernoulli { .. } => Support::Boolean,
            Dist::Discrete { ps } => Support::Category(ps.len()),
            Dist::Gaussian { .. } | Dist::Cauchy { .. } => Support::Real,
            Dist::TensorGaussian { dims, .. } => {
                Support::RealVector(dims.iter().product())
            }
            Dist::DiagCovGaussian { mu, .. } => Support::RealVector(mu.len()),
            Dist::MultivariateBernoulli { ps } => Support::BinaryVector(ps.len()),
            Dist::Dirichlet { alpha } => Support::Simplex(alpha.len()),
            Dist::LogitNormal { lo, hi, .. } => Support::Interval(*lo, *hi),
            Dist::LogisticNormal { mu, .. } => Support::Simplex(mu.len() + 1),
            Dist::InvSoftplusNormal { .. } | Dist::Exponential { .. } | Dist::Gamma { .. } => {
                Support::PositiveReal
            }
            Dist::Uniform { lo, hi } => Support::Interval(*lo, *hi),
            Dist::Beta { .. } => Support::Interval(0.0, 1.0),
            Dist::Delta { .. } => Support::Point,
            Dist::ImproperUniform => Support::All,
        }
    }

    /// Discrete families have no pathwise derivative; their guide gradient
    /// comes from the likelihood-ratio term.
    pub fn is_discrete(&self) -> bool {
        matches!(
            self,
            Dist::Bernoulli { .. } | Dist::Discrete { .. } | Dist::MultivariateBernoulli { .. }
        )
    }

    pub fn is_reparameterizable(&self) -> bool {
        matches!(
            self,
            Dist::Gaussian { .. }
                | Dist::TensorGaussian { .. }
                | Dist::DiagCovGaussian { .. }
                | Dist::LogitNormal { .. }
                | Dist::LogisticNormal { .. }
                | Dist::InvSoftplusNormal { .. }
                | Dist::Exponential { .. }
                | Dist::Cauchy { .. }
                | Dist::Delta { .. }
        )
    }

    /// Differentiable log-density (or log-mass) of `v`.
    pub fn log_prob(&self, v: &Value) -> Result<Tensor> {
        self.params_ok()?;
        let one = Tensor::scalar(1.0);
        match self {
            Dist::Bernoulli { p } => {
                if v.as_bool()? {
                    p.log()
                } else {
                    one.sub(p)?.log()
                }
            }
            Dist::Discrete { ps } => {
                let i = v.as_index()?;
                if i >= ps.len() {
                    return Err(Error::support(None, format!("category {i} out of {}", ps.len())));
                }
                ps.get(i)?.log()?.sub(&ps.sum()?.log()?)
            }
            Dist::Gaussian { mu, sigma } => {
                let x = v.as_tensor()?;
                if x.len() != 1 {
                    return Err(Error::support(None, "Gaussian scores scalars"));
                }
                normal_lp(x, mu, sigma)
            }
            Dist::TensorGaussian { mu, sigma, dims } => {
                let x = v.as_tensor()?;
                let n: usize = dims.iter().product();
                if x.len() != n {
                    return Err(Error::support(None, format!("expected {n} entries")));
                }
                normal_lp(x, mu, sigma)?.sum()
            }
            Dist::DiagCovGaussian { mu, sigma } => {
                let x = v.as_tensor()?;
                if x.len() != mu.len() {
                    return Err(Error::support(None, format!("expected {} entries", mu.len())));
                }
                normal_lp(x, mu, sigma)?.sum()
            }
            Dist::MultivariateBernoulli { ps } => {
                let x = v.as_tensor()?;
                if x.len() != ps.len() || x.data().iter().any(|&b| b != 0.0 && b != 1.0) {
                    return Err(Error::support(None, "expected a 0/1 vector of matching length"));
                }
                let on = x.mul(&ps.log()?)?;
                let off = one.sub(x)?.mul(&one.sub(ps)?.log()?)?;
                on.add(&off)?.sum()
            }
            Dist::Dirichlet { alpha } => {
                let x = v.as_tensor()?;
                check_simplex(x, alpha.len())?;
                let data = alpha.sub(&one)?.mul(&x.log()?)?.sum()?;
                let norm = alpha.sum()?.lgamma()?.sub(&alpha.lgamma()?.sum()?)?;
                data.add(&norm)
            }
            Dist::LogitNormal { mu, sigma, lo, hi } => {
                let x = v.as_tensor()?;
                let xv = x.item()?;
                if !(xv > *lo && xv < *hi) {
                    return Err(Error::support(None, format!("{xv} outside ({lo}, {hi})")));
                }
                // u = (x-lo)/(hi-lo);  lp = N(logit u; mu, sigma) - log u - log(1-u) - log(hi-lo)
                let u = x.sub(&Tensor::scalar(*lo))?.scale(1.0 / (hi - lo))?;
                let lu = u.log()?;
                let l1u = one.sub(&u)?.log()?;
                let y = lu.sub(&l1u)?;
                normal_lp(&y, mu, sigma)?
                    .sub(&lu)?
                    .sub(&l1u)?
                    .sub(&Tensor::scalar((hi - lo).ln()))
            }
            Dist::LogisticNormal { mu, sigma } => {
                let x = v.as_tensor()?;
                let n = mu.len() + 1;
                check_simplex(x, n)?;
                // y_i = log(x_i / x_n);  lp = sum_i N(y_i) - sum_j log x_j
                let lx = x.log()?;
                let y = lx.slice(0, n - 1)?.sub(&lx.get(n - 1)?)?;
                normal_lp(&y, mu, sigma)?.sum()?.sub(&lx.sum()?)
            }
            Dist::InvSoftplusNormal { mu, sigma } => {
                let x = v.as_tensor()?;
                if x.item()? <= 0.0 {
                    return Err(Error::support(None, "value must be positive"));
                }
                // x = softplus(y);  lp = N(y; mu, sigma) - log sigmoid(y)
                let y = x.invsoftplus()?;
                normal_lp(&y, mu, sigma)?.sub(&y.sigmoid()?.log()?)
            }
            Dist::Exponential { rate } => {
                let x = v.as_tensor()?;
                if x.item()? < 0.0 {
                    return Err(Error::support(None, "value must be >= 0"));
                }
                rate.log()?.sub(&rate.mul(x)?)
            }
            Dist::Cauchy { loc, scale } => {
                let x = v.as_tensor()?;
                let z = x.sub(loc)?.div(scale)?;
                let lp = one.add(&z.mul(&z)?)?.log()?.add(&scale.log()?)?;
                Tensor::scalar(-std::f64::consts::PI.ln()).sub(&lp)
            }
            Dist::Uniform { lo, hi } => {
                let x = v.as_real()?;
                if !(x >= *lo && x <= *hi) {
                    return Err(Error::support(None, format!("{x} outside [{lo}, {hi}]")));
                }
                Ok(Tensor::scalar(-(hi - lo).ln()))
            }
            Dist::Beta { a, b } => {
                let x = v.as_tensor()?;
                let xv = x.item()?;
                if !(xv > 0.0 && xv < 1.0) {
                    return Err(Error::support(None, "value must lie in (0,1)"));
                }
                let data =
                    a.sub(&one)?.mul(&x.log()?)?.add(&b.sub(&one)?.mul(&one.sub(x)?.log()?)?)?;
                let lbeta = a.lgamma()?.add(&b.lgamma()?)?.sub(&a.add(b)?.lgamma()?)?;
                data.sub(&lbeta)
            }
            Dist::Gamma { shape, scale } => {
                let x = v.as_tensor()?;
                if x.item()? <= 0.0 {
                    return Err(Error::support(None, "value must be positive"));
                }
                let data = shape.sub(&one)?.mul(&x.log()?)?.sub(&x.div(scale)?)?;
                data.sub(&shape.lgamma()?)?.sub(&shape.mul(&scale.log()?)?)
            }
            Dist::Delta { center } => {
                if v.detach() == center.detach() {
                    Ok(Tensor::scalar(0.0))
                } else {
                    Err(Error::support(None, "value differs from Delta center"))
                }
            }
            Dist::ImproperUniform => Ok(Tensor::scalar(0.0)),
        }
    }

    /// Parameter-free base noise for the reparameterized sampler, or the
    /// direct draw for discrete families (their transform is the identity).
    pub fn sample_base(&self, rng: &mut ChaCha8Rng) -> Result<Value> {
        self.params_ok()?;
        let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(rand_distr::StandardNormal) };
        let unit = |rng: &mut ChaCha8Rng| -> f64 {
            (1.0 - rng.gen::<f64>()).max(f64::MIN_POSITIVE) // in (0, 1]
        };
        match self {
            Dist::Gaussian { .. }
            | Dist::LogitNormal { .. }
            | Dist::InvSoftplusNormal { .. } => Ok(Value::real(normal(rng))),
            Dist::TensorGaussian { dims, .. } => {
                let n = dims.iter().product();
                Ok(Value::vector((0..n).map(|_| normal(rng)).collect()))
            }
            Dist::DiagCovGaussian { mu, .. } => {
                Ok(Value::vector((0..mu.len()).map(|_| normal(rng)).collect()))
            }
            Dist::LogisticNormal { mu, .. } => {
                Ok(Value::vector((0..mu.len()).map(|_| normal(rng)).collect()))
            }
            Dist::Exponential { .. } | Dist::Cauchy { .. } => Ok(Value::real(unit(rng))),
            Dist::Delta { .. } => Ok(Value::real(0.0)),
            Dist::Bernoulli { p } => Ok(Value::Bool(rng.gen::<f64>() < p.data()[0])),
            Dist::Discrete { ps } => {
                let total: f64 = ps.data().iter().sum();
                let mut u = rng.gen::<f64>() * total;
                for (i, &w) in ps.data().iter().enumerate() {
                    u -= w;
                    if u <= 0.0 {
                        return Ok(Value::Index(i));
                    }
                }
                Ok(Value::Index(ps.len() - 1))
            }
            Dist::MultivariateBernoulli { ps } => {
                let bits: Vec<f64> =
                    ps.data().iter().map(|&p| f64::from(rng.gen::<f64>() < p)).collect();
                Ok(Value::Tensor(Tensor::vector(bits)))
            }
            d => Err(Error::support(
                None,
                format!("{} has no base sampler; model-side only", d.name()),
            )),
        }
    }

    /// Deterministic, differentiable map from base noise to a value.
    /// Identity for discrete families.
    pub fn transform(&self, eps: &Value) -> Result<Value> {
        match self {
            Dist::Gaussian { mu, sigma } => {
                let e = eps.as_tensor()?;
                Ok(Value::Tensor(mu.add(&sigma.mul(e)?)?))
            }
            Dist::TensorGaussian { mu, sigma, .. } | Dist::DiagCovGaussian { mu, sigma } => {
                let e = eps.as_tensor()?;
                Ok(Value::Tensor(mu.add(&sigma.mul(e)?)?))
            }
            Dist::LogitNormal { mu, sigma, lo, hi } => {
                let e = eps.as_tensor()?;
                let y = mu.add(&sigma.mul(e)?)?;
                let x = y.sigmoid()?.scale(hi - lo)?.add(&Tensor::scalar(*lo))?;
                Ok(Value::Tensor(x))
            }
            Dist::LogisticNormal { mu, sigma } => {
                let e = eps.as_tensor()?;
                Ok(Value::Tensor(mu.add(&sigma.mul(e)?)?.simplex()?))
            }
            Dist::InvSoftplusNormal { mu, sigma } => {
                let e = eps.as_tensor()?;
                Ok(Value::Tensor(mu.add(&sigma.mul(e)?)?.softplus()?))
            }
            Dist::Exponential { rate } => {
                let e = eps.as_tensor()?;
                Ok(Value::Tensor(e.log()?.neg()?.div(rate)?))
            }
            Dist::Cauchy { loc, scale } => {
                let e = eps.as_tensor()?;
                let t = e.sub(&Tensor::scalar(0.5))?.scale(std::f64::consts::PI)?.tan()?;
                Ok(Value::Tensor(loc.add(&scale.mul(&t)?)?))
            }
            Dist::Delta { center } => Ok(center.clone()),
            d if d.is_discrete() => Ok(eps.clone()),
            d => Err(Error::support(None, format!("{} is not reparameterizable", d.name()))),
        }
    }

    /// Plain draw from the family (used by prior-mode traces). Gradients are
    /// not tracked. `ImproperUniform` cannot be sampled.
    pub fn sample_direct(&self, rng: &mut ChaCha8Rng) -> Result<Value> {
        self.params_ok()?;
        match self {
            Dist::Uniform { lo, hi } => Ok(Value::real(lo + (hi - lo) * rng.gen::<f64>())),
            Dist::Beta { a, b } => {
                let d = rand_distr::Beta::new(a.item()?, b.item()?)
                    .map_err(|e| Error::domain("sample", e.to_string()))?;
                Ok(Value::real(d.sample(rng)))
            }
            Dist::Gamma { shape, scale } => {
                let d = rand_distr::Gamma::new(shape.item()?, scale.item()?)
                    .map_err(|e| Error::domain("sample", e.to_string()))?;
                Ok(Value::real(d.sample(rng)))
            }
            Dist::Dirichlet { alpha } => {
                let d = rand_distr::Dirichlet::new(alpha.data())
                    .map_err(|e| Error::domain("sample", e.to_string()))?;
                Ok(Value::vector(d.sample(rng)))
            }
            Dist::ImproperUniform => {
                Err(Error::support(None, "ImproperUniform cannot be sampled"))
            }
            _ => {
                let eps = self.sample_base(rng)?;
                Ok(self.transform(&eps)?.detach())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Dist::Bernoulli { .. } => "Bernoulli",
            Dist::Discrete { .. } => "Discrete",
            Dist::Gaussian { .. } => "Gaussian",
            Dist::TensorGaussian { .. } => "TensorGaussian",
            Dist::DiagCovGaussian { .. } => "DiagCovGaussian",
            Dist::MultivariateBernoulli { .. } => "MultivariateBernoulli",
            Dist::Dirichlet { .. } => "Dirichlet",
            Dist::LogitNormal { .. } => "LogitNormal",
            Dist::LogisticNormal { .. } => "LogisticNormal",
            Dist::InvSoftplusNormal { .. } => "InvSoftplusNormal",
            Dist::Exponential { .. } => "Exponential",
            Dist::Cauchy { .. } => "Cauchy",
            Dist::Uniform { .. } => "Uniform",
            Dist::Beta { .. } => "Beta",
            Dist::Gamma { .. } => "Gamma",
            Dist::Delta { .. } => "Delta",
            Dist::ImproperUniform => "ImproperUniform",
        }
    }
}

fn check_simplex(x: &Tensor, n: usize) -> Result<()> {
    if x.len() != n {
        return Err(Error::support(None, format!("expected {n} components")));
    }
    if x.data().iter().any(|&p| p <= 0.0) {
        return Err(Error::support(None, "simplex value must be interior (all > 0)"));
    }
    let total: f64 = x.data().iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::support(None, format!("components sum to {total}, not 1")));
    }
    Ok(())
}

/// Elementwise Gaussian log-density; callers sum for vector families.
fn normal_lp(x: &Tensor, mu: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    let z = x.sub(mu)?.div(sigma)?;
    let quad = z.mul(&z)?.scale(-0.5)?;
    quad.sub(&sigma.log()?)?.add(&Tensor::scalar(-0.5 * LN_2PI))
}

// ── default guides ───────────────────────────────────────────────────────

/// How to squash an unconstrained parameter vector into a slot's domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SlotTransform {
    Identity,
    Softplus,
    Sigmoid,
    Simplex,
}

/// One free parameter of a mean-field guide.
#[derive(Clone, Debug)]
pub struct ParamSlot {
    pub name: &'static str,
    pub dims: Vec<usize>,
    pub transform: SlotTransform,
}

/// Mean-field guide template for a model-side family: an approximating
/// family on the same support plus its free parameter slots.
#[derive(Clone, Debug)]
pub struct GuideTemplate {
    pub family: &'static str,
    pub slots: Vec<ParamSlot>,
}

fn slot(name: &'static str, dims: Vec<usize>, transform: SlotTransform) -> ParamSlot {
    ParamSlot { name, dims, transform }
}

/// The default (mean-field) guide family for `d`: the same family with free
/// parameters when `d` is reparameterizable or discrete, otherwise a
/// reparameterizable stand-in on the same support.
pub fn default_guide(d: &Dist) -> Result<GuideTemplate> {
    use SlotTransform::*;
    let t = match d {
        Dist::Bernoulli { .. } => GuideTemplate {
            family: "Bernoulli",
            slots: vec![slot("p", vec![], Sigmoid)],
        },
        Dist::Discrete { ps } => GuideTemplate {
            family: "Discrete",
            slots: vec![slot("ps", vec![ps.len() - 1], Simplex)],
        },
        Dist::Gaussian { .. } => GuideTemplate {
            family: "Gaussian",
            slots: vec![slot("mu", vec![], Identity), slot("sigma", vec![], Softplus)],
        },
        Dist::TensorGaussian { dims, .. } => {
            let n: usize = dims.iter().product();
            GuideTemplate {
                family: "DiagCovGaussian",
                slots: vec![slot("mu", vec![n], Identity), slot("sigma", vec![n], Softplus)],
            }
        }
        Dist::DiagCovGaussian { mu, .. } => GuideTemplate {
            family: "DiagCovGaussian",
            slots: vec![
                slot("mu", vec![mu.len()], Identity),
                slot("sigma", vec![mu.len()], Softplus),
            ],
        },
        Dist::MultivariateBernoulli { ps } => GuideTemplate {
            family: "MultivariateBernoulli",
            slots: vec![slot("ps", vec![ps.len()], Sigmoid)],
        },
        Dist::Dirichlet { alpha } => GuideTemplate {
            family: "LogisticNormal",
            slots: vec![
                slot("mu", vec![alpha.len() - 1], Identity),
                slot("sigma", vec![alpha.len() - 1], Softplus),
            ],
        },
        Dist::LogitNormal { .. } | Dist::Uniform { .. } | Dist::Beta { .. } => GuideTemplate {
            family: "LogitNormal",
            slots: vec![slot("mu", vec![], Identity), slot("sigma", vec![], Softplus)],
        },
        Dist::LogisticNormal { mu, .. } => GuideTemplate {
            family: "LogisticNormal",
            slots: vec![
                slot("mu", vec![mu.len()], Identity),
                slot("sigma", vec![mu.len()], Softplus),
            ],
        },
        Dist::InvSoftplusNormal { .. } | Dist::Gamma { .. } => GuideTemplate {
            family: "InvSoftplusNormal",
            slots: vec![slot("mu", vec![], Identity), slot("sigma", vec![], Softplus)],
        },
        Dist::Exponential { .. } => GuideTemplate {
            family: "Exponential",
            slots: vec![slot("rate", vec![], Softplus)],
        },
        Dist::Cauchy { .. } => GuideTemplate {
            family: "Cauchy",
            slots: vec![slot("loc", vec![], Identity), slot("scale", vec![], Softplus)],
        },
        Dist::Delta { .. } => GuideTemplate { family: "Delta", slots: vec![] },
        Dist::ImproperUniform => GuideTemplate {
            family: "Delta",
            slots: vec![slot("val", vec![], Identity)],
        },
    };
    Ok(t)
}

/// Instantiate the default guide for `d` from raw (unconstrained) parameter
/// tensors, one per slot of `default_guide(d)`, in order.
pub fn build_guide(d: &Dist, raw: &[Tensor]) -> Result<Dist> {
    let tmpl = default_guide(d)?;
    if raw.len() != tmpl.slots.len() {
        return Err(Error::shape(
            "build_guide",
            format!("expected {} parameter tensors, got {}", tmpl.slots.len(), raw.len()),
        ));
    }
    let mut xs = Vec::with_capacity(raw.len());
    for (r, s) in raw.iter().zip(&tmpl.slots) {
        let x = match s.transform {
            SlotTransform::Identity => r.clone(),
            SlotTransform::Softplus => r.softplus()?,
            SlotTransform::Sigmoid => r.sigmoid()?,
            SlotTransform::Simplex => r.simplex()?,
        };
        xs.push(x);
    }
    let g = match (d, tmpl.family) {
        (Dist::Bernoulli { .. }, _) => Dist::Bernoulli { p: xs.remove(0) },
        (Dist::Discrete { .. }, _) => Dist::Discrete { ps: xs.remove(0) },
        (Dist::Gaussian { .. }, _) => {
            Dist::Gaussian { mu: xs.remove(0), sigma: xs.remove(0) }
        }
        (Dist::TensorGaussian { .. }, _) | (Dist::DiagCovGaussian { .. }, _) => {
            Dist::DiagCovGaussian { mu: xs.remove(0), sigma: xs.remove(0) }
        }
        (Dist::MultivariateBernoulli { .. }, _) => {
            Dist::MultivariateBernoulli { ps: xs.remove(0) }
        }
        (Dist::Dirichlet { .. }, _) | (Dist::LogisticNormal { .. }, _) => {
            Dist::LogisticNormal { mu: xs.remove(0), sigma: xs.remove(0) }
        }
        (Dist::LogitNormal { lo, hi, .. }, _) => {
            Dist::LogitNormal { mu: xs.remove(0), sigma: xs.remove(0), lo: *lo, hi: *hi }
        }
        (Dist::Uniform { lo, hi }, _) => {
            Dist::LogitNormal { mu: xs.remove(0), sigma: xs.remove(0), lo: *lo, hi: *hi }
        }
        (Dist::Beta { .. }, _) => {
            Dist::LogitNormal { mu: xs.remove(0), sigma: xs.remove(0), lo: 0.0, hi: 1.0 }
        }
        (Dist::InvSoftplusNormal { .. }, _) | (Dist::Gamma { .. }, _) => {
            Dist::InvSoftplusNormal { mu: xs.remove(0), sigma: xs.remove(0) }
        }
        (Dist::Exponential { .. }, _) => Dist::Exponential { rate: xs.remove(0) },
        (Dist::Cauchy { .. }, _) => Dist::Cauchy { loc: xs.remove(0), scale: xs.remove(0) },
        (Dist::Delta { center }, _) => Dist::Delta { center: center.clone() },
        (Dist::ImproperUniform, _) => Dist::Delta { center: Value::Tensor(xs.remove(0)) },
    };
    Ok(g)
}
