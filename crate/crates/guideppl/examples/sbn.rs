//! A sigmoid belief network on the same glyphs as the VAE example, but the
//! latent code is 200 independent Bernoullis, so every gradient comes from
//! the score-function term and baselines actually matter. Train twice,
//! with and without them, and compare where the ELBo lands.

use guideppl::estimator::EstimatorConfig;
use guideppl::optimize::{optimize_fresh, OptMethod, OptimizeConfig};
use guideppl::rng::{label, stream};
use guideppl::runtime::{Batch, Bindings};
use guideppl::zoo::images::{sbn, ImageDataset};
use guideppl::Result;

fn main() -> Result<()> {
    let data = ImageDataset::synthetic_glyphs(300, &mut stream(12, &[label::DATA]));
    let mut bindings = Bindings::new();
    bindings.set("images", data);

    let mut finals = Vec::new();
    for (name, baselines) in [("with baselines", true), ("without", false)] {
        let mut est = EstimatorConfig::unified();
        est.use_baselines = baselines;
        let cfg = OptimizeConfig::new(150)
            .method(OptMethod::adam(0.001))
            .estimator(est)
            .seed(12)
            .log_every(10);
        let (_, log) = optimize_fresh(sbn(784, 200, Batch::Size(50)), &cfg, &bindings)?;
        let tail = log.tail_mean(3);
        println!("{name:<16} final ELBo {tail:>12.1}");
        finals.push(tail);
    }
    println!();
    if finals[0] > finals[1] {
        println!("baselines won by {:.1} nats of ELBo over {} steps.", finals[0] - finals[1], 150);
    } else {
        println!("no baseline advantage this run; try more steps.");
    }
    Ok(())
}
