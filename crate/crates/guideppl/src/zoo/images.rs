//! Two deep generative models of binary images, both trained end-to-end
//! with their encoders: a variational autoencoder (Gaussian latent code,
//! reparameterized) and a sigmoid belief network (binary latent code,
//! score-function only). Decoder weights live in the model via the
//! improper-uniform pattern, so the same optimization learns them.
//!
//! Models read the `"images"` binding (an [`ImageDataset`]).

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dists::{Dist, Value};
use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec};
use crate::runtime::{Batch, Ctx};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ImageDataset {
    pub width: usize,
    pub height: usize,
    /// Flattened row-major 0/1 pixel vectors.
    pub images: Vec<Vec<f64>>,
}

impl ImageDataset {
    pub fn new(width: usize, height: usize, images: Vec<Vec<f64>>) -> Result<ImageDataset> {
        let dim = width * height;
        if dim == 0 {
            return Err(Error::data("image dimensions must be positive"));
        }
        for (i, img) in images.iter().enumerate() {
            if img.len() != dim {
                return Err(Error::data(format!(
                    "image {i} has {} pixels, expected {dim}",
                    img.len()
                )));
            }
            if img.iter().any(|&p| p != 0.0 && p != 1.0) {
                return Err(Error::data(format!("image {i} has a non-binary pixel")));
            }
        }
        Ok(ImageDataset { width, height, images })
    }

    pub fn dim(&self) -> usize {
        self.width * self.height
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// IDX image file (the MNIST container format: magic 2051, then
    /// count/rows/cols as big-endian u32, then one byte per pixel).
    /// Pixels binarize at 128.
    pub fn load_idx(path: &Path, limit: Option<usize>) -> Result<ImageDataset> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < 16 {
            return Err(Error::data("IDX file shorter than its header"));
        }
        let be = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        if be(0) != 2051 {
            return Err(Error::data(format!("bad IDX magic {} (want 2051)", be(0))));
        }
        let (n, rows, cols) = (be(4), be(8), be(12));
        let px = rows
            .checked_mul(cols)
            .filter(|&p| p > 0)
            .ok_or_else(|| Error::data("bad IDX image dimensions"))?;
        let total = n.checked_mul(px).ok_or_else(|| Error::data("bad IDX image count"))?;
        if bytes.len() < 16 + total {
            return Err(Error::data("IDX file truncated"));
        }
        let keep = limit.map_or(n, |l| l.min(n));
        let images = (0..keep)
            .map(|i| {
                bytes[16 + i * px..16 + (i + 1) * px]
                    .iter()
                    .map(|&b| if b >= 128 { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        ImageDataset::new(cols, rows, images)
    }

    /// 28x28 binary glyphs (boxes, crosses, diamonds at random positions
    /// and sizes); a stand-in corpus with learnable low-dimensional
    /// structure.
    pub fn synthetic_glyphs(n: usize, rng: &mut ChaCha8Rng) -> ImageDataset {
        const W: i64 = 28;
        let mut images = Vec::with_capacity(n);
        for _ in 0..n {
            let mut img = vec![0.0; (W * W) as usize];
            let cx = rng.gen_range(8..20) as i64;
            let cy = rng.gen_range(8..20) as i64;
            let r = rng.gen_range(3..8) as i64;
            let mut ink = |x: i64, y: i64| {
                if (0..W).contains(&x) && (0..W).contains(&y) {
                    img[(y * W + x) as usize] = 1.0;
                }
            };
            match rng.gen_range(0..3) {
                0 => {
                    for y in cy - r..=cy + r {
                        for x in cx - r..=cx + r {
                            ink(x, y);
                        }
                    }
                }
                1 => {
                    for t in -r..=r {
                        ink(cx + t, cy);
                        ink(cx, cy + t);
                    }
                }
                _ => {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            if dx.abs() + dy.abs() <= r {
                                ink(cx + dx, cy + dy);
                            }
                        }
                    }
                }
            }
            images.push(img);
        }
        ImageDataset::new(28, 28, images).unwrap()
    }
}

/// f64 sigmoids saturate to exactly 0/1 once the input passes ~|36|; keep
/// Bernoulli parameters strictly inside the open interval.
fn squash(p: &Tensor) -> Result<Tensor> {
    p.mul(&Tensor::scalar(1.0 - 2e-7))?.add(&Tensor::scalar(1e-7))
}

/// Variational autoencoder: Gaussian latent code with an encoder-guided
/// diagonal Gaussian, sigmoid decoder observed as per-pixel Bernoullis.
/// Returns the decoded means for each image in the batch.
pub fn vae(
    data_dim: usize,
    hidden: usize,
    latent: usize,
    batch: Batch,
) -> impl Fn(&mut Ctx) -> Result<Vec<Vec<f64>>> {
    let encode = LayerSpec::mlp("encodeNet", data_dim, &[(hidden, Activation::Tanh)]);
    let mu_net = LayerSpec::mlp("muNet", hidden, &[(latent, Activation::None)]);
    let sigma_net = LayerSpec::mlp("sigmaNet", hidden, &[(latent, Activation::None)]);
    let decode = LayerSpec::mlp(
        "decodeNet",
        latent,
        &[(hidden, Activation::Tanh), (data_dim, Activation::Sigmoid)],
    );
    move |c| {
        let images = c.data::<ImageDataset>("images")?;
        if images.dim() != data_dim {
            return Err(Error::data(format!(
                "images have dim {}, model expects {data_dim}",
                images.dim()
            )));
        }
        c.map_data("image", &images.images, batch.clone(), |c, px| {
            let image = Tensor::vector(px.clone());
            let h = c.nn(&encode, &image)?;
            let mu = c.nn(&mu_net, &h)?;
            let sigma = c.nn(&sigma_net, &h)?.softplus()?;
            let z = c
                .sample_guided(
                    "latent",
                    &Dist::tensor_gaussian(0.0, 1.0, vec![latent]),
                    Dist::DiagCovGaussian { mu, sigma },
                )?
                .as_tensor()?
                .clone();
            let probs = squash(&c.nn_model(&decode, &z)?)?;
            c.observe(&Dist::MultivariateBernoulli { ps: probs.clone() }, &Value::Tensor(image))?;
            Ok(probs.data().to_vec())
        })
    }
}

/// Sigmoid belief network: one layer of binary latents with prior prob
/// 0.5 each, encoder-guided, sigmoid decoder observed as per-pixel
/// Bernoullis. Returns the decoded means for each image in the batch.
pub fn sbn(
    data_dim: usize,
    latent: usize,
    batch: Batch,
) -> impl Fn(&mut Ctx) -> Result<Vec<Vec<f64>>> {
    let encode = LayerSpec::mlp("encodeNet", data_dim, &[(latent, Activation::Sigmoid)]);
    let decode = LayerSpec::mlp("decodeNet", latent, &[(data_dim, Activation::Sigmoid)]);
    let prior = Tensor::vector(vec![0.5; latent]);
    move |c| {
        let images = c.data::<ImageDataset>("images")?;
        if images.dim() != data_dim {
            return Err(Error::data(format!(
                "images have dim {}, model expects {data_dim}",
                images.dim()
            )));
        }
        c.map_data("image", &images.images, batch.clone(), |c, px| {
            let image = Tensor::vector(px.clone());
            let ps = squash(&c.nn(&encode, &image)?)?;
            let z = c
                .sample_guided(
                    "latent",
                    &Dist::MultivariateBernoulli { ps: prior.clone() },
                    Dist::MultivariateBernoulli { ps },
                )?
                .as_tensor()?
                .clone();
            let probs = squash(&c.nn_model(&decode, &z)?)?;
            c.observe(&Dist::MultivariateBernoulli { ps: probs.clone() }, &Value::Tensor(image))?;
            Ok(probs.data().to_vec())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{label, stream};
    use crate::runtime::{run_trace, Bindings, ParameterStore, TraceOpts};

    fn bind(images: ImageDataset) -> Bindings {
        let mut b = Bindings::new();
        b.set("images", images);
        b
    }

    fn tiny_images() -> ImageDataset {
        ImageDataset::new(
            3,
            2,
            vec![vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0], vec![1.0, 1.0, 0.0, 0.0, 1.0, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn datasets_must_hold_binary_pixels_of_the_right_size() {
        assert_eq!(tiny_images().dim(), 6);
        assert!(ImageDataset::new(3, 2, vec![vec![0.0; 5]]).is_err(), "wrong pixel count");
        assert!(ImageDataset::new(2, 2, vec![vec![0.0, 0.5, 1.0, 0.0]]).is_err(), "gray pixel");
        assert!(ImageDataset::new(0, 4, vec![]).is_err(), "zero width");
    }

    #[test]
    fn idx_files_binarize_at_128_and_honor_the_limit() {
        let mut bytes = vec![0u8, 0, 8, 3];
        bytes.extend(2u32.to_be_bytes());
        bytes.extend(2u32.to_be_bytes());
        bytes.extend(3u32.to_be_bytes());
        bytes.extend([0, 127, 128, 255, 1, 200, 3, 128, 127, 255, 0, 128]);
        let path = std::env::temp_dir().join(format!("idx_test_{}", std::process::id()));
        std::fs::write(&path, &bytes).unwrap();

        let d = ImageDataset::load_idx(&path, None).unwrap();
        assert_eq!((d.width, d.height, d.len()), (3, 2, 2));
        assert_eq!(d.images[0], vec![0.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
        assert_eq!(d.images[1], vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(ImageDataset::load_idx(&path, Some(1)).unwrap().len(), 1);

        bytes[3] = 1; // wrong magic
        std::fs::write(&path, &bytes).unwrap();
        assert!(ImageDataset::load_idx(&path, None).is_err());
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn glyphs_are_binary_inked_and_deterministic() {
        let gen = || ImageDataset::synthetic_glyphs(20, &mut stream(3, &[label::DATA]));
        let d = gen();
        assert_eq!((d.width, d.height, d.len()), (28, 28, 20));
        for img in &d.images {
            let on = img.iter().filter(|&&p| p == 1.0).count();
            assert!(on >= 7, "glyph with almost no ink");
            assert!(on <= 300, "glyph flooding the image");
        }
        assert_eq!(gen().images, d.images);
    }

    #[test]
    fn squash_keeps_probabilities_inside_the_open_interval() {
        let p = squash(&Tensor::vector(vec![0.0, 1.0, 0.5])).unwrap();
        assert!(p.data().iter().all(|&x| x > 0.0 && x < 1.0));
        assert!(p.data().iter().all(|&x| x.ln().is_finite() && (1.0 - x).ln().is_finite()));
    }

    #[test]
    fn vae_nets_have_the_published_shapes_and_a_reparameterized_latent() {
        let b = bind(tiny_images());
        let mut store = ParameterStore::new(7);
        let (tr, recon) = run_trace(
            &mut store,
            &TraceOpts::guided(),
            &mut stream(7, &[label::TRACE]),
            &b,
            vae(6, 8, 3, Batch::Full),
        )
        .unwrap();
        assert_eq!(store.entry("encodeNet/W0").unwrap().shape, vec![8, 6]);
        assert_eq!(store.entry("muNet/W0").unwrap().shape, vec![3, 8]);
        assert_eq!(store.entry("sigmaNet/W0").unwrap().shape, vec![3, 8]);
        assert_eq!(store.entry("decodeNet/W0").unwrap().shape, vec![8, 3]);
        assert_eq!(store.entry("decodeNet/W1").unwrap().shape, vec![6, 8]);

        let latent = tr.choice("image[0]/latent#0").unwrap();
        assert!(latent.reparameterized && !latent.discrete);
        assert_eq!(recon.len(), 2);
        for probs in &recon {
            assert_eq!(probs.len(), 6);
            assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn sbn_latents_are_discrete_fair_coins_under_the_prior() {
        let b = bind(tiny_images());
        let forced = Tensor::vector(vec![1.0, 0.0, 1.0, 1.0]);
        let opts = TraceOpts::guided().force("image[0]/latent#0", Value::Tensor(forced));
        let mut store = ParameterStore::new(7);
        let (tr, recon) =
            run_trace(&mut store, &opts, &mut stream(7, &[label::TRACE]), &b, sbn(6, 4, Batch::Full))
                .unwrap();
        assert_eq!(store.entry("encodeNet/W0").unwrap().shape, vec![4, 6]);
        assert_eq!(store.entry("decodeNet/W0").unwrap().shape, vec![6, 4]);

        let latent = tr.choice("image[0]/latent#0").unwrap();
        assert!(latent.discrete && !latent.reparameterized);
        let want = 4.0 * 0.5f64.ln();
        assert!((latent.log_p.item().unwrap() - want).abs() < 1e-12);
        assert_eq!(recon.len(), 2);
    }

    #[test]
    fn reconstruction_runs_are_deterministic() {
        let go = |model: &dyn Fn(&mut Ctx) -> Result<Vec<Vec<f64>>>| {
            let b = bind(tiny_images());
            let mut store = ParameterStore::new(19);
            let (tr, recon) = run_trace(
                &mut store,
                &TraceOpts::guided(),
                &mut stream(19, &[label::TRACE]),
                &b,
                model,
            )
            .unwrap();
            assert!(tr.elbo().unwrap().is_finite());
            recon
        };
        assert_eq!(go(&vae(6, 8, 3, Batch::Full)), go(&vae(6, 8, 3, Batch::Full)));
        assert_eq!(go(&sbn(6, 4, Batch::Full)), go(&sbn(6, 4, Batch::Full)));

        let mut prior_store = ParameterStore::new(19);
        let (tr, _) = run_trace(
            &mut prior_store,
            &TraceOpts::prior(),
            &mut stream(19, &[label::TRACE]),
            &bind(tiny_images()),
            vae(6, 8, 3, Batch::Full),
        )
        .unwrap();
        assert!(tr.elbo().unwrap().is_finite());
    }
}
