//! Model parameters are just guide choices. Estimating a Gaussian's mean
//! from 20 points, three ways: maximum likelihood (improper prior, point
//! guide), MAP with a standard-normal prior (L2 shrinkage), and variational
//! Bayes (a Gaussian posterior over the parameter instead of a point). All
//! three run through the same optimizer; only the prior and guide differ.

use guideppl::dists::{Dist, Value};
use guideppl::estimator::EstimatorConfig;
use guideppl::optimize::{optimize_fresh, OptMethod, OptimizeConfig};
use guideppl::rng::{label, stream};
use guideppl::runtime::{Bindings, Ctx};
use guideppl::{Result, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

fn observe_all(c: &mut Ctx, mu: &Tensor) -> Result<()> {
    let obs = c.data::<Vec<f64>>("obs")?;
    for &y in obs.iter() {
        c.observe(&Dist::Gaussian { mu: mu.clone(), sigma: Tensor::scalar(1.0) }, &Value::real(y))?;
    }
    Ok(())
}

fn maximum_likelihood(c: &mut Ctx) -> Result<()> {
    let mu = c.model_param("mu", &[1])?;
    observe_all(c, &mu)
}

fn map_estimate(c: &mut Ctx) -> Result<()> {
    let w = c.param("w", &[1])?;
    let mu = c
        .sample_guided("mu", &Dist::gaussian(0.0, 1.0), Dist::Delta { center: Value::Tensor(w) })?
        .as_tensor()?
        .clone();
    observe_all(c, &mu)
}

fn variational_bayes(c: &mut Ctx) -> Result<()> {
    let m = c.param("m", &[1])?;
    let s = c.param("s", &[1])?.softplus()?;
    let mu = c
        .sample_guided("mu", &Dist::gaussian(0.0, 1.0), Dist::Gaussian { mu: m, sigma: s })?
        .as_tensor()?
        .clone();
    observe_all(c, &mu)
}

fn main() -> Result<()> {
    let mut rng = stream(9, &[label::DATA]);
    let obs: Vec<f64> = (0..20).map(|_| 0.8 + rng.sample::<f64, _>(StandardNormal)).collect();
    let n = obs.len() as f64;
    let mean = obs.iter().sum::<f64>() / n;
    let mut b = Bindings::new();
    b.set("obs", obs);

    let point = OptimizeConfig::new(400).method(OptMethod::adam(0.05)).seed(9);
    let (ml, _) = optimize_fresh(maximum_likelihood, &point, &b)?;
    let (map, _) = optimize_fresh(map_estimate, &point, &b)?;

    let noisy = OptimizeConfig::new(2500)
        .method(OptMethod::sgd(0.02))
        .estimator(EstimatorConfig::unified().samples(64))
        .seed(9);
    let (vb, _) = optimize_fresh(variational_bayes, &noisy, &b)?;

    let softplus = |x: f64| x.exp().ln_1p();
    println!("sample mean:          {mean:.4}");
    println!("maximum likelihood:   {:.4}   (exact {mean:.4})", ml.entry("mu").unwrap().value[0]);
    println!(
        "MAP, N(0,1) prior:    {:.4}   (exact {:.4})",
        map.entry("w").unwrap().value[0],
        n * mean / (n + 1.0)
    );
    println!(
        "VB posterior:         {:.4} +- {:.4}   (exact {:.4} +- {:.4})",
        vb.entry("m").unwrap().value[0],
        softplus(vb.entry("s").unwrap().value[0]),
        n * mean / (n + 1.0),
        (n + 1.0).sqrt().recip()
    );
    Ok(())
}
