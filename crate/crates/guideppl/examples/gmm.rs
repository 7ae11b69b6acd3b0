//! A three-component Gaussian mixture, fit three ways: an amortized guide
//! (one net classifies every point), a mean-field guide (a free posterior
//! per training point), and the mixture with the component indicator summed
//! out. Held-out NLL shows what amortization buys on fresh data: the
//! mean-field guide has nothing useful to say about points it never saw.

use guideppl::optimize::{importance_sample, optimize_fresh, OptimizeConfig};
use guideppl::rng::{label, stream};
use guideppl::runtime::{Batch, Bindings, Ctx};
use guideppl::zoo::gmm::{amortized, generate, marginalized, mean_field, MixtureParams};
use guideppl::{Result, Tensor};

fn bind(obs: Vec<f64>) -> Bindings {
    let mut b = Bindings::new();
    b.set("obs", obs);
    b
}

fn main() -> Result<()> {
    let truth = MixtureParams::well_separated();
    let train = bind(generate(&truth, 100, &mut stream(5, &[label::DATA])));
    let test = bind(generate(&truth, 100, &mut stream(5, &[label::DATA, 1])));

    let variants: Vec<(&str, Box<dyn Fn(&mut Ctx) -> Result<()>>)> = vec![
        ("amortized", {
            let m = amortized(Batch::Full);
            Box::new(move |c| m(c).map(|_| ()))
        }),
        ("mean-field", {
            let m = mean_field(Batch::Full);
            Box::new(move |c| m(c).map(|_| ()))
        }),
        ("marginalized", Box::new(marginalized(Batch::Full))),
    ];

    println!("{:<14} {:>12} {:>12}", "guide", "final ELBo", "test NLL");
    for (name, model) in &variants {
        let cfg = OptimizeConfig::new(200).seed(5);
        let (mut store, log) = optimize_fresh(|c| model(c), &cfg, &train)?;
        let nll = -importance_sample(
            |c| model(c),
            &mut store,
            1000,
            &mut stream(5, &[label::EVAL]),
            &test,
        )?
        .log_z;
        println!("{name:<14} {:>12.2} {nll:>12.2}", log.tail_mean(20));
    }

    // what the marginalized model learns given room to converge, next to the
    // generating mixture (components sorted by mean; training can permute them)
    let long = OptimizeConfig::new(2000).seed(5);
    let (store, _) = optimize_fresh(marginalized(Batch::Full), &long, &train)?;
    let theta = Tensor::vector(store.entry("theta_x").unwrap().value.clone()).simplex()?;
    let mut learned: Vec<(f64, f64, f64)> = (0..3)
        .map(|k| {
            let mu = store.entry(&format!("mu{}", k + 1)).unwrap().value[0];
            let s = store.entry(&format!("s{}", k + 1)).unwrap().value[0].exp().ln_1p();
            (mu, theta.data()[k], s)
        })
        .collect();
    learned.sort_by(|a, b| a.0.total_cmp(&b.0));
    println!("\nlearned mixture (marginalized, 2000 steps):");
    for (k, (mu, w, s)) in learned.into_iter().enumerate() {
        println!(
            "  weight {w:.2}, N({mu:+.2}, {s:.2})   (true: {:.2}, N({:+.2}, {:.2}))",
            truth.theta[k], truth.mus[k], truth.sigmas[k],
        );
    }
    Ok(())
}
