//! A variational autoencoder on synthetic 28x28 glyphs. The latent code is
//! a 20-dim Gaussian, so the guide gradient is fully reparameterized and
//! training is quiet even with one sample per step. After a short run the
//! decoder's per-pixel means should beat the constant-gray baseline, whose
//! absolute error on binary pixels is exactly 0.5.

use guideppl::optimize::{forward_sample, optimize_fresh, OptMethod, OptimizeConfig};
use guideppl::rng::{label, stream};
use guideppl::runtime::{Batch, Bindings, ParameterStore};
use guideppl::zoo::images::{vae, ImageDataset};
use guideppl::Result;

fn recon_error(store: &mut ParameterStore, probe: &ImageDataset) -> Result<f64> {
    let model = vae(784, 500, 20, Batch::Full);
    let mut b = Bindings::new();
    b.set("images", probe.clone());
    let mut rng = stream(11, &[label::EVAL]);
    let (means, _) = forward_sample(model, store, true, &mut rng, &b)?;
    let mut err = 0.0;
    let mut n = 0.0;
    for (mean, img) in means.iter().zip(&probe.images) {
        for (m, x) in mean.iter().zip(img) {
            err += (m - x).abs();
            n += 1.0;
        }
    }
    Ok(err / n)
}

fn main() -> Result<()> {
    let data = ImageDataset::synthetic_glyphs(300, &mut stream(11, &[label::DATA]));
    let probe = ImageDataset::new(28, 28, data.images[..8].to_vec())?;
    let mut bindings = Bindings::new();
    bindings.set("images", data);

    let cfg = OptimizeConfig::new(120).method(OptMethod::adam(0.001)).seed(11).log_every(10);
    let (mut store, log) = optimize_fresh(vae(784, 500, 20, Batch::Size(50)), &cfg, &bindings)?;

    println!("ELBo per logged step:");
    for row in log.rows.iter().step_by(3) {
        println!("  step {:>4}  {:>12.1}", row.step, row.elbo);
    }

    let err = recon_error(&mut store, &probe)?;
    println!();
    println!("reconstruction mean |pixel error| on 8 held-in glyphs: {err:.3}");
    println!("constant-gray baseline:                                0.500");
    Ok(())
}
