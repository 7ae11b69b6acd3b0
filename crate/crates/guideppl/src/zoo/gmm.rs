//! Gaussian mixtures and small Bayes nets over scalar observations.
//!
//! Every model reads its data from the `"obs"` binding (a `Vec<f64>`), so a
//! trained store can be pointed at a held-out split by swapping bindings.
//! The mixture variants share one learned model side (three components);
//! they differ only in how the per-datum component choice is handled:
//! amortized by a guide net, summed out exactly, or given free per-datum
//! guide parameters.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dists::{Dist, Value};
use crate::error::Result;
use crate::nn::{Activation, LayerSpec};
use crate::runtime::{Batch, Ctx};
use crate::tensor::Tensor;

pub const COMPONENTS: usize = 3;

/// True generating parameters for synthetic mixture data.
#[derive(Clone, Debug)]
pub struct MixtureParams {
    pub theta: Vec<f64>,
    pub mus: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl MixtureParams {
    /// Three well-separated components; the default synthetic dataset.
    pub fn well_separated() -> MixtureParams {
        MixtureParams {
            theta: vec![0.5, 0.3, 0.2],
            mus: vec![-4.0, 0.0, 4.0],
            sigmas: vec![0.6, 0.5, 0.7],
        }
    }
}

/// Draw n points: z ~ Discrete(theta), y ~ Gaussian(mu_z, sigma_z).
pub fn generate(params: &MixtureParams, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let total: f64 = params.theta.iter().sum();
    (0..n)
        .map(|_| {
            let mut u = rng.gen::<f64>() * total;
            let mut z = params.theta.len() - 1;
            for (k, &w) in params.theta.iter().enumerate() {
                if u < w {
                    z = k;
                    break;
                }
                u -= w;
            }
            let g: f64 = rng.sample(rand_distr::StandardNormal);
            params.mus[z] + params.sigmas[z] * g
        })
        .collect()
}

fn guide_net(prefix: &str, n_out: usize) -> LayerSpec {
    LayerSpec::mlp(prefix, 1, &[(3, Activation::Sigmoid), (n_out, Activation::None)])
}

/// Learned mixture parameters: component weights through the simplex
/// transform, per-component location and softplus-positive spread.
fn mixture_params(c: &mut Ctx) -> Result<(Tensor, Vec<(Tensor, Tensor)>)> {
    let theta = c.model_param("theta_x", &[COMPONENTS - 1])?.simplex()?;
    let mut comps = Vec::with_capacity(COMPONENTS);
    for k in 1..=COMPONENTS {
        let mu = c.model_param(&format!("mu{k}"), &[1])?;
        let sigma = c.model_param(&format!("s{k}"), &[1])?.softplus()?;
        comps.push((mu, sigma));
    }
    Ok((theta, comps))
}

/// Discrete component choice per datum, guided by an amortized net that
/// reads the observation. Returns the sampled assignments.
pub fn amortized(batch: Batch) -> impl Fn(&mut Ctx) -> Result<Vec<usize>> {
    let net = guide_net("guideNet", COMPONENTS - 1);
    move |c| {
        let obs = c.data::<Vec<f64>>("obs")?;
        let (theta, comps) = mixture_params(c)?;
        c.map_data("obs", &obs, batch.clone(), |c, &y| {
            let out = c.nn(&net, &Tensor::vector(vec![y]))?;
            let z = c
                .sample_guided(
                    "x",
                    &Dist::Discrete { ps: theta.clone() },
                    Dist::Discrete { ps: out.simplex()? },
                )?
                .as_index()?;
            let (mu, sigma) = &comps[z];
            c.observe(&Dist::Gaussian { mu: mu.clone(), sigma: sigma.clone() }, &Value::real(y))?;
            Ok(z)
        })
    }
}

/// Component choice summed out per datum: the factor is the exact log
/// marginal, so no discrete choice remains and the bound is tighter.
pub fn marginalized(batch: Batch) -> impl Fn(&mut Ctx) -> Result<()> {
    move |c| {
        let obs = c.data::<Vec<f64>>("obs")?;
        let (theta, comps) = mixture_params(c)?;
        c.map_data("obs", &obs, batch.clone(), |c, &y| {
            let yv = Value::real(y);
            let mut scores = Vec::with_capacity(COMPONENTS);
            for (k, (mu, sigma)) in comps.iter().enumerate() {
                let lp = Dist::Gaussian { mu: mu.clone(), sigma: sigma.clone() }.log_prob(&yv)?;
                scores.push(lp.add(&theta.get(k)?.log()?)?);
            }
            let parts: Vec<&Tensor> = scores.iter().collect();
            c.factor(&Tensor::concat(&parts)?.logsumexp()?)
        })?;
        Ok(())
    }
}

/// Free per-datum guide parameters, no amortization.
pub fn mean_field(batch: Batch) -> impl Fn(&mut Ctx) -> Result<Vec<usize>> {
    move |c| {
        let obs = c.data::<Vec<f64>>("obs")?;
        let (theta, comps) = mixture_params(c)?;
        c.map_data("obs", &obs, batch.clone(), |c, &y| {
            let z = c.sample("x", &Dist::Discrete { ps: theta.clone() })?.as_index()?;
            let (mu, sigma) = &comps[z];
            c.observe(&Dist::Gaussian { mu: mu.clone(), sigma: sigma.clone() }, &Value::real(y))?;
            Ok(z)
        })
    }
}

/// One continuous latent per datum, observed through Gaussian noise; the
/// guide net predicts (mu, raw sigma) from the observation.
pub fn bn_one_latent(batch: Batch) -> impl Fn(&mut Ctx) -> Result<Vec<f64>> {
    let net = guide_net("guideNet", 2);
    move |c| {
        let obs = c.data::<Vec<f64>>("obs")?;
        let mu_x = c.model_param("mu_x", &[1])?;
        let sigma_x = c.model_param("sigma_x", &[1])?.softplus()?;
        let sigma_y = c.model_param("sigma_y", &[1])?.softplus()?;
        c.map_data("obs", &obs, batch.clone(), |c, &y| {
            let out = c.nn(&net, &Tensor::vector(vec![y]))?;
            let x = c.sample_guided(
                "x",
                &Dist::Gaussian { mu: mu_x.clone(), sigma: sigma_x.clone() },
                Dist::Gaussian { mu: out.get(0)?, sigma: out.get(1)?.softplus()? },
            )?;
            let xt = x.as_tensor()?.clone();
            c.observe(&Dist::Gaussian { mu: xt, sigma: sigma_y.clone() }, &Value::real(y))?;
            x.as_real()
        })
    }
}

/// Two continuous latents whose sum is observed; both guides read only y.
pub fn bn_two_latent(batch: Batch) -> impl Fn(&mut Ctx) -> Result<Vec<(f64, f64)>> {
    two_latent(batch, false)
}

/// Same model, but the second guide net also sees x1, capturing the
/// posterior dependency the independent version ignores.
pub fn bn_two_latent_dep(batch: Batch) -> impl Fn(&mut Ctx) -> Result<Vec<(f64, f64)>> {
    two_latent(batch, true)
}

fn two_latent(batch: Batch, feed_x1: bool) -> impl Fn(&mut Ctx) -> Result<Vec<(f64, f64)>> {
    let net1 = guide_net("guideNet1", 2);
    let net2 = LayerSpec::mlp(
        "guideNet2",
        if feed_x1 { 2 } else { 1 },
        &[(3, Activation::Sigmoid), (2, Activation::None)],
    );
    move |c| {
        let obs = c.data::<Vec<f64>>("obs")?;
        let mu_x1 = c.model_param("mu_x1", &[1])?;
        let sigma_x1 = c.model_param("sigma_x1", &[1])?.softplus()?;
        let mu_x2 = c.model_param("mu_x2", &[1])?;
        let sigma_x2 = c.model_param("sigma_x2", &[1])?.softplus()?;
        let sigma_y = c.model_param("sigma_y", &[1])?.softplus()?;
        c.map_data("obs", &obs, batch.clone(), |c, &y| {
            let y_in = Tensor::vector(vec![y]);
            let out1 = c.nn(&net1, &y_in)?;
            let x1 = c.sample_guided(
                "x1",
                &Dist::Gaussian { mu: mu_x1.clone(), sigma: sigma_x1.clone() },
                Dist::Gaussian { mu: out1.get(0)?, sigma: out1.get(1)?.softplus()? },
            )?;
            let x1t = x1.as_tensor()?.clone();
            let in2 = if feed_x1 { Tensor::concat(&[&y_in, &x1t])? } else { y_in.clone() };
            let out2 = c.nn(&net2, &in2)?;
            let x2 = c.sample_guided(
                "x2",
                &Dist::Gaussian { mu: mu_x2.clone(), sigma: sigma_x2.clone() },
                Dist::Gaussian { mu: out2.get(0)?, sigma: out2.get(1)?.softplus()? },
            )?;
            let x2t = x2.as_tensor()?.clone();
            c.observe(
                &Dist::Gaussian { mu: x1t.add(&x2t)?, sigma: sigma_y.clone() },
                &Value::real(y),
            )?;
            Ok((x1.as_real()?, x2.as_real()?))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{label, stream};
    use crate::runtime::{run_trace, Bindings, ParameterStore, TraceOpts};

    fn bind(values: Vec<f64>) -> Bindings {
        let mut b = Bindings::new();
        b.set("obs", values);
        b
    }

    fn logsumexp(xs: &[f64]) -> f64 {
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    }

    /// Distinct, hand-picked mixture parameters (raw values, before the
    /// simplex/softplus transforms).
    fn pin_mixture(store: &mut ParameterStore) {
        store.set_value("theta_x", &[0.4, -0.3]).unwrap();
        store.set_value("mu1", &[-2.0]).unwrap();
        store.set_value("mu2", &[0.5]).unwrap();
        store.set_value("mu3", &[3.0]).unwrap();
        store.set_value("s1", &[0.2]).unwrap();
        store.set_value("s2", &[-0.5]).unwrap();
        store.set_value("s3", &[1.0]).unwrap();
    }

    #[test]
    fn generated_data_follows_the_mixture() {
        // a one-hot mixture puts every point in that component
        let one = MixtureParams {
            theta: vec![1.0, 0.0, 0.0],
            mus: vec![-4.0, 0.0, 4.0],
            sigmas: vec![0.5; 3],
        };
        let ys = generate(&one, 1000, &mut stream(3, &[label::DATA]));
        assert!(ys.iter().all(|y| (y + 4.0).abs() < 3.0));

        // basin proportions match theta at n = 1e5 (3 s.e.; the components
        // are far enough apart that cross-basin leakage is ~4e-4)
        let p = MixtureParams::well_separated();
        let n = 100_000;
        let ys = generate(&p, n, &mut stream(4, &[label::DATA]));
        let mut counts = [0usize; 3];
        for y in &ys {
            let k = if *y < -2.0 {
                0
            } else if *y < 2.0 {
                1
            } else {
                2
            };
            counts[k] += 1;
        }
        for k in 0..3 {
            let phat = counts[k] as f64 / n as f64;
            let se = (p.theta[k] * (1.0 - p.theta[k]) / n as f64).sqrt();
            assert!(
                (phat - p.theta[k]).abs() < 3.0 * se + 1e-3,
                "component {k}: {phat} vs {}",
                p.theta[k]
            );
        }
    }

    #[test]
    fn marginalized_factor_equals_enumeration_over_the_component() {
        let b = bind(vec![0.8, -2.4]);
        let mut store = ParameterStore::new(41);
        let mk = || amortized(Batch::Full);
        run_trace(&mut store, &TraceOpts::guided(), &mut stream(41, &[0]), &b, mk()).unwrap();
        pin_mixture(&mut store);

        // per-datum enumeration through forced traces of the discrete model
        let mut want = 0.0;
        for i in 0..2 {
            let mut lps = Vec::new();
            for k in 0..COMPONENTS {
                let single = bind(vec![b.get::<Vec<f64>>("obs").unwrap()[i]]);
                let opts = TraceOpts::guided().force("obs[0]/x#0", Value::Index(k));
                let (tr, _) =
                    run_trace(&mut store, &opts, &mut stream(9, &[0]), &single, mk()).unwrap();
                lps.push(tr.total_log_p.item().unwrap());
            }
            want += logsumexp(&lps);
        }

        let (tr, _) = run_trace(
            &mut store,
            &TraceOpts::guided(),
            &mut stream(9, &[0]),
            &b,
            marginalized(Batch::Full),
        )
        .unwrap();
        let got = tr.total_log_p.item().unwrap();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        // no random choices survive marginalizing: logQ is exactly zero
        // (model parameters are point-mass guided)
        assert_eq!(tr.total_log_q.item().unwrap(), 0.0);
    }

    #[test]
    fn one_sample_bound_stays_below_the_marginal() {
        let b = bind(vec![-1.2]);
        let mut store = ParameterStore::new(7);
        let mk = || amortized(Batch::Full);
        run_trace(&mut store, &TraceOpts::guided(), &mut stream(7, &[0]), &b, mk()).unwrap();
        pin_mixture(&mut store);

        let mut lp = Vec::new();
        let mut q = Vec::new();
        for k in 0..COMPONENTS {
            let opts = TraceOpts::guided().force("obs[0]/x#0", Value::Index(k));
            let (tr, _) = run_trace(&mut store, &opts, &mut stream(2, &[0]), &b, mk()).unwrap();
            lp.push(tr.total_log_p.item().unwrap());
            q.push(tr.total_log_q.item().unwrap().exp());
        }
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        // E_q[logP - logQ] = marginal - KL(q || posterior) <= marginal, with
        // a real gap whenever the guide misses the posterior
        let marginal = logsumexp(&lp);
        let bound: f64 = (0..COMPONENTS).map(|k| q[k] * (lp[k] - q[k].ln())).sum();
        assert!(bound <= marginal + 1e-12);
        assert!(bound < marginal - 1e-3);
    }

    #[test]
    fn dependent_guide_sees_the_first_latent() {
        let b = bind(vec![0.7]);
        let force = |x1: f64| {
            TraceOpts::guided()
                .force("obs[0]/x1#0", Value::real(x1))
                .force("obs[0]/x2#0", Value::real(0.3))
        };
        fn x2_log_q(
            store: &mut ParameterStore,
            model: impl Fn(&mut Ctx) -> Result<Vec<(f64, f64)>>,
            opts: &TraceOpts,
            b: &Bindings,
        ) -> f64 {
            let (tr, _) = run_trace(store, opts, &mut stream(5, &[0]), b, model).unwrap();
            tr.choice("obs[0]/x2#0").unwrap().log_q.item().unwrap()
        }

        let mut store = ParameterStore::new(11);
        let a1 = x2_log_q(&mut store, bn_two_latent(Batch::Full), &force(-1.0), &b);
        let a2 = x2_log_q(&mut store, bn_two_latent(Batch::Full), &force(2.0), &b);
        assert_eq!(a1, a2, "independent guide must ignore x1");

        let mut store = ParameterStore::new(11);
        let d1 = x2_log_q(&mut store, bn_two_latent_dep(Batch::Full), &force(-1.0), &b);
        let d2 = x2_log_q(&mut store, bn_two_latent_dep(Batch::Full), &force(2.0), &b);
        assert!((d1 - d2).abs() > 1e-9, "dependent guide must react to x1");
    }

    #[test]
    fn guide_nets_have_the_published_shapes() {
        let b = bind(vec![0.1, 0.2]);
        let mut store = ParameterStore::new(13);
        run_trace(&mut store, &TraceOpts::guided(), &mut stream(13, &[0]), &b, amortized(Batch::Full))
            .unwrap();
        assert_eq!(store.entry("guideNet/W0").unwrap().shape, vec![3, 1]);
        assert_eq!(store.entry("guideNet/W1").unwrap().shape, vec![2, 3]);

        let mut store = ParameterStore::new(13);
        run_trace(
            &mut store,
            &TraceOpts::guided(),
            &mut stream(13, &[0]),
            &b,
            bn_two_latent_dep(Batch::Full),
        )
        .unwrap();
        assert_eq!(store.entry("guideNet1/W0").unwrap().shape, vec![3, 1]);
        assert_eq!(store.entry("guideNet2/W0").unwrap().shape, vec![3, 2]);
    }

    #[test]
    fn every_model_runs_under_prior_and_guided_semantics() {
        fn wrap<T>(m: impl Fn(&mut Ctx) -> Result<T>) -> impl Fn(&mut Ctx) -> Result<()> {
            move |c| m(c).map(|_| ())
        }
        let models: Vec<(&str, Box<dyn Fn(&mut Ctx) -> Result<()>>)> = vec![
            ("amortized", Box::new(wrap(amortized(Batch::Size(2))))),
            ("marginalized", Box::new(wrap(marginalized(Batch::Full)))),
            ("mean_field", Box::new(wrap(mean_field(Batch::Full)))),
            ("bn_one_latent", Box::new(wrap(bn_one_latent(Batch::Full)))),
            ("bn_two_latent", Box::new(wrap(bn_two_latent(Batch::Full)))),
            ("bn_two_latent_dep", Box::new(wrap(bn_two_latent_dep(Batch::Full)))),
        ];
        let b = bind(vec![-3.9, 0.2, 4.4]);
        for (name, m) in &models {
            for opts in [TraceOpts::prior(), TraceOpts::guided()] {
                let mut store = ParameterStore::new(23);
                let (tr, _) =
                    run_trace(&mut store, &opts, &mut stream(23, &[label::TRACE]), &b, |c| m(c))
                        .unwrap();
                let e = tr.elbo().unwrap();
                assert!(e.is_finite(), "{name}: non-finite one-sample elbo {e}");
            }
        }
    }
}
