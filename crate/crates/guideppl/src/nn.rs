//! Small neural-network layer kit for parameterizing guides (and learned
//! model components such as decoders).
//!
//! Layers hold no weights. A [`LayerSpec`] names its parameters
//! (`prefix/W0`, `prefix/b0`, ...) and forward evaluation pulls each one
//! through a caller-supplied fetch closure, so the same spec works whether
//! parameters come from the guide-side store or through the learned-model
//! pathway. Two specs with the same prefix share parameters.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    None,
    Sigmoid,
    Tanh,
    Softplus,
}

impl Activation {
    fn apply(self, t: &Tensor) -> Result<Tensor> {
        match self {
            Activation::None => Ok(t.clone()),
            Activation::Sigmoid => t.sigmoid(),
            Activation::Tanh => t.tanh(),
            Activation::Softplus => t.softplus(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum LayerKind {
    Linear { n_in: usize, n_out: usize },
    /// Stack of linear layers, each followed by its activation.
    Mlp { n_in: usize, layers: Vec<(usize, Activation)> },
    Gru { n_in: usize, n_hidden: usize },
    /// A bare trainable tensor; forward evaluation ignores the input.
    ConstantParams { dims: Vec<usize> },
    /// One-hot lookup realized as a linear map from vocab space.
    Embedding { n_vocab: usize, n_out: usize },
}

#[derive(Clone, Debug)]
pub struct LayerSpec {
    /// Parameter-name prefix; equal prefixes share parameters.
    pub prefix: String,
    pub kind: LayerKind,
}

/// Pulls (and on first use creates) a named parameter tensor. Arguments:
/// full name, shape, and the init scale (std of the zero-mean Gaussian
/// init; 0 for biases).
pub type ParamFetch<'a> = &'a mut dyn FnMut(&str, &[usize], f64) -> Result<Tensor>;

fn weight_std(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

impl LayerSpec {
    pub fn linear(prefix: &str, n_in: usize, n_out: usize) -> LayerSpec {
        LayerSpec { prefix: prefix.into(), kind: LayerKind::Linear { n_in, n_out } }
    }

    pub fn mlp(prefix: &str, n_in: usize, layers: &[(usize, Activation)]) -> LayerSpec {
        assert!(!layers.is_empty(), "mlp needs at least one layer");
        let spec = LayerSpec {
            prefix: prefix.into(),
            kind: LayerKind::Mlp { n_in, layers: layers.to_vec() },
        };
        // every weight matrix row also carries a bias entry
        let mut want = 0;
        let mut prev = n_in;
        for &(n_out, _) in layers {
            want += n_out * (prev + 1);
            prev = n_out;
        }
        assert_eq!(spec.param_count(), want, "mlp parameter count mismatch");
        spec
    }

    pub fn gru(prefix: &str, n_in: usize, n_hidden: usize) -> LayerSpec {
        LayerSpec { prefix: prefix.into(), kind: LayerKind::Gru { n_in, n_hidden } }
    }

    pub fn constant(prefix: &str, dims: &[usize]) -> LayerSpec {
        LayerSpec { prefix: prefix.into(), kind: LayerKind::ConstantParams { dims: dims.to_vec() } }
    }

    pub fn embedding(prefix: &str, n_vocab: usize, n_out: usize) -> LayerSpec {
        LayerSpec { prefix: prefix.into(), kind: LayerKind::Embedding { n_vocab, n_out } }
    }

    /// Full parameter names with shapes and init scales, in evaluation order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>, f64)> {
        let p = &self.prefix;
        match &self.kind {
            LayerKind::Linear { n_in, n_out } => vec![
                (format!("{p}/W"), vec![*n_out, *n_in], weight_std(*n_in)),
                (format!("{p}/b"), vec![*n_out], 0.0),
            ],
            LayerKind::Mlp { n_in, layers } => {
                let mut out = Vec::new();
                let mut prev = *n_in;
                for (i, &(n_out, _)) in layers.iter().enumerate() {
                    out.push((format!("{p}/W{i}"), vec![n_out, prev], weight_std(prev)));
                    out.push((format!("{p}/b{i}"), vec![n_out], 0.0));
                    prev = n_out;
                }
                out
            }
            LayerKind::Gru { n_in, n_hidden } => {
                let cat = n_in + n_hidden;
                let s = weight_std(cat);
                vec![
                    (format!("{p}/Wz"), vec![*n_hidden, cat], s),
                    (format!("{p}/bz"), vec![*n_hidden], 0.0),
                    (format!("{p}/Wr"), vec![*n_hidden, cat], s),
                    (format!("{p}/br"), vec![*n_hidden], 0.0),
                    (format!("{p}/Wh"), vec![*n_hidden, cat], s),
                    (format!("{p}/bh"), vec![*n_hidden], 0.0),
                ]
            }
            LayerKind::ConstantParams { dims } => {
                vec![(format!("{p}/val"), dims.clone(), 0.1)]
            }
            LayerKind::Embedding { n_vocab, n_out } => vec![
                (format!("{p}/W"), vec![*n_out, *n_vocab], weight_std(*n_vocab)),
                (format!("{p}/b"), vec![*n_out], 0.0),
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s, _)| s.iter().product::<usize>()).sum()
    }
}

fn affine(
    w_name: &str,
    b_name: &str,
    w_shape: &[usize],
    x: &Tensor,
    fetch: &mut dyn FnMut(&str, &[usize], f64) -> Result<Tensor>,
) -> Result<Tensor> {
    let n_in = w_shape[1];
    if x.len() != n_in {
        return Err(Error::shape(
            "nn_eval",
            format!("{w_name} expects input of length {n_in}, got {}", x.len()),
        ));
    }
    let w = fetch(w_name, w_shape, weight_std(n_in))?;
    let b = fetch(b_name, &[w_shape[0]], 0.0)?;
    w.matmul(x)?.add(&b)
}

/// Forward evaluation; parameters are created through `fetch` on first use.
pub fn nn_eval(spec: &LayerSpec, input: &Tensor, fetch: ParamFetch) -> Result<Tensor> {
    let p = &spec.prefix;
    match &spec.kind {
        LayerKind::Linear { n_in, n_out } => {
            affine(&format!("{p}/W"), &format!("{p}/b"), &[*n_out, *n_in], input, fetch)
        }
        LayerKind::Embedding { n_vocab, n_out } => {
            affine(&format!("{p}/W"), &format!("{p}/b"), &[*n_out, *n_vocab], input, fetch)
        }
        LayerKind::Mlp { n_in, layers } => {
            let mut h = input.clone();
            let mut prev = *n_in;
            for (i, &(n_out, act)) in layers.iter().enumerate() {
                let y = affine(
                    &format!("{p}/W{i}"),
                    &format!("{p}/b{i}"),
                    &[n_out, prev],
                    &h,
                    fetch,
                )?;
                h = act.apply(&y)?;
                prev = n_out;
            }
            Ok(h)
        }
        LayerKind::ConstantParams { dims } => fetch(&format!("{p}/val"), dims, 0.1),
        LayerKind::Gru { .. } => Err(Error::config(
            "GRU cells are evaluated with gru_step, not nn_eval",
        )),
    }
}

/// One GRU update:
/// z = sigmoid(Wz[x;h]+bz), r = sigmoid(Wr[x;h]+br),
/// htilde = tanh(Wh[x;r*h]+bh), h' = (1-z)*h + z*htilde.
pub fn gru_step(spec: &LayerSpec, h: &Tensor, x: &Tensor, fetch: ParamFetch) -> Result<Tensor> {
    let (n_in, n_hidden) = match &spec.kind {
        LayerKind::Gru { n_in, n_hidden } => (*n_in, *n_hidden),
        _ => return Err(Error::config("gru_step needs a GRU layer spec")),
    };
    if x.len() != n_in || h.len() != n_hidden {
        return Err(Error::shape(
            "gru_step",
            format!(
                "expected x[{n_in}], h[{n_hidden}]; got x[{}], h[{}]",
                x.len(),
                h.len()
            ),
        ));
    }
    let p = &spec.prefix;
    let cat = vec![n_hidden, n_in + n_hidden];
    let xh = Tensor::concat(&[x, h])?;
    let z = affine(&format!("{p}/Wz"), &format!("{p}/bz"), &cat, &xh, fetch)?.sigmoid()?;
    let r = affine(&format!("{p}/Wr"), &format!("{p}/br"), &cat, &xh, fetch)?.sigmoid()?;
    let xrh = Tensor::concat(&[x, &r.mul(h)?])?;
    let ht = affine(&format!("{p}/Wh"), &format!("{p}/bh"), &cat, &xrh, fetch)?.tanh()?;
    let one = Tensor::scalar(1.0);
    one.sub(&z)?.mul(h)?.add(&z.mul(&ht)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tensor::Tape;
    use crate::testutil::finite_diff;
    use rand::Rng;
    use std::collections::HashMap;

    /// Test-only parameter bank: creates values on first fetch (seeded) and
    /// hands back leaves on `tape` when set, plain tensors otherwise.
    struct Bank {
        values: HashMap<String, (Vec<usize>, Vec<f64>)>,
        order: Vec<String>,
        rng: rand_chacha::ChaCha8Rng,
    }

    impl Bank {
        fn new(seed: u64) -> Bank {
            Bank { values: HashMap::new(), order: Vec::new(), rng: stream(seed, &[0]) }
        }

        fn fetch<'a>(
            &'a mut self,
            tape: Option<&'a Tape>,
        ) -> impl FnMut(&str, &[usize], f64) -> Result<Tensor> + 'a {
            move |name, shape, std| {
                if !self.values.contains_key(name) {
                    let n: usize = shape.iter().product();
                    let data: Vec<f64> = (0..n)
                        .map(|_| {
                            let g: f64 = self.rng.sample(rand_distr::StandardNormal);
                            g * std
                        })
                        .collect();
                    self.values.insert(name.to_string(), (shape.to_vec(), data));
                    self.order.push(name.to_string());
                }
                let (shape, data) = &self.values[name];
                match tape {
                    Some(t) => t.leaf(shape.clone(), data.clone()),
                    None => Tensor::from_shape(shape.clone(), data.clone()),
                }
            }
        }

        fn flat(&self) -> Vec<f64> {
            self.order.iter().flat_map(|n| self.values[n].1.clone()).collect()
        }

        fn load(&mut self, flat: &[f64]) {
            let mut i = 0;
            for n in &self.order {
                let e = self.values.get_mut(n).unwrap();
                let k = e.1.len();
                e.1.copy_from_slice(&flat[i..i + k]);
                i += k;
            }
            assert_eq!(i, flat.len());
        }
    }

    #[test]
    fn identity_linear_passes_input_through() {
        let spec = LayerSpec::linear("id", 2, 2);
        let mut fetch = |name: &str, shape: &[usize], _std: f64| -> Result<Tensor> {
            if name.ends_with("/W") {
                Tensor::matrix(shape[0], shape[1], vec![1.0, 0.0, 0.0, 1.0])
            } else {
                Ok(Tensor::vector(vec![0.0, 0.0]))
            }
        };
        let y = nn_eval(&spec, &Tensor::vector(vec![3.0, 4.0]), &mut fetch).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);
    }

    #[test]
    fn mlp_shapes_and_parameter_count() {
        let spec = LayerSpec::mlp(
            "guideNet",
            1,
            &[(3, Activation::Sigmoid), (2, Activation::None)],
        );
        // 3*(1+1) + 2*(3+1)
        assert_eq!(spec.param_count(), 14);
        let mut bank = Bank::new(11);
        let y = nn_eval(&spec, &Tensor::vector(vec![0.7]), &mut bank.fetch(None)).unwrap();
        assert_eq!(y.shape(), &[2]);
        assert_eq!(bank.order.len(), 4);

        let big = LayerSpec::mlp("e", 784, &[(500, Activation::Tanh), (20, Activation::None)]);
        assert_eq!(big.param_count(), 500 * 785 + 20 * 501);
    }

    #[test]
    fn forward_is_pure() {
        let spec = LayerSpec::mlp("net", 2, &[(3, Activation::Tanh), (1, Activation::None)]);
        let mut bank = Bank::new(3);
        let x = Tensor::vector(vec![0.3, -0.8]);
        let y1 = nn_eval(&spec, &x, &mut bank.fetch(None)).unwrap();
        let before = bank.flat();
        let y2 = nn_eval(&spec, &x, &mut bank.fetch(None)).unwrap();
        assert_eq!(y1, y2);
        assert_eq!(before, bank.flat());
    }

    #[test]
    fn shared_prefix_shares_parameters() {
        let a = LayerSpec::linear("shared", 2, 2);
        let b = LayerSpec::linear("shared", 2, 2);
        let mut bank = Bank::new(5);
        let x = Tensor::vector(vec![1.0, 2.0]);
        let ya = nn_eval(&a, &x, &mut bank.fetch(None)).unwrap();
        let yb = nn_eval(&b, &x, &mut bank.fetch(None)).unwrap();
        assert_eq!(ya, yb);
        assert_eq!(bank.order.len(), 2);
        // distinct prefixes allocate fresh names
        let c = LayerSpec::linear("other", 2, 2);
        nn_eval(&c, &x, &mut bank.fetch(None)).unwrap();
        assert_eq!(bank.order.len(), 4);
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let spec = LayerSpec::mlp(
            "net",
            2,
            &[(4, Activation::Tanh), (3, Activation::Sigmoid), (2, Activation::None)],
        );
        let x = Tensor::vector(vec![0.4, -0.6]);
        let mut bank = Bank::new(7);
        // allocate once so order is fixed
        nn_eval(&spec, &x, &mut bank.fetch(None)).unwrap();
        let at = bank.flat();

        let tape = Tape::new();
        let mut leaves: HashMap<String, Tensor> = HashMap::new();
        {
            let mut fetch = |name: &str, shape: &[usize], _std: f64| -> Result<Tensor> {
                let t = tape.leaf(shape.to_vec(), bank.values[name].1.clone())?;
                leaves.insert(name.to_string(), t.clone());
                Ok(t)
            };
            let y = nn_eval(&spec, &x, &mut fetch).unwrap();
            let grads = y.sum().unwrap().backward().unwrap();
            let got: Vec<f64> =
                bank.order.iter().flat_map(|n| grads.get_or_zeros(&leaves[n])).collect();

            let want = finite_diff(
                &mut |theta: &[f64]| {
                    bank.load(theta);
                    let y = nn_eval(&spec, &x, &mut bank.fetch(None)).unwrap();
                    y.sum().unwrap().item().unwrap()
                },
                &at,
                1e-5,
            );
            for (i, (g, w)) in got.iter().zip(&want).enumerate() {
                assert!((g - w).abs() < 1e-4 * (1.0 + w.abs()), "param {i}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn gru_zero_weights_halve_the_hidden_state() {
        let spec = LayerSpec::gru("g", 3, 4);
        let mut zero = |_: &str, shape: &[usize], _: f64| -> Result<Tensor> {
            Ok(Tensor::from_shape(shape.to_vec(), vec![0.0; shape.iter().product()]).unwrap())
        };
        let h = Tensor::vector(vec![1.0, -2.0, 0.5, 4.0]);
        let x = Tensor::vector(vec![0.3, 0.1, -0.2]);
        let h2 = gru_step(&spec, &h, &x, &mut zero).unwrap();
        for (a, b) in h2.data().iter().zip(h.data()) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
        let h0 = Tensor::vector(vec![0.0; 4]);
        let h2 = gru_step(&spec, &h0, &x, &mut zero).unwrap();
        assert!(h2.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_preserves_dimension_and_matches_finite_differences() {
        let spec = LayerSpec::gru("g", 2, 3);
        let x = Tensor::vector(vec![0.5, -0.3]);
        let h = Tensor::vector(vec![0.1, 0.2, -0.4]);
        let mut bank = Bank::new(13);
        let h2 = gru_step(&spec, &h, &x, &mut bank.fetch(None)).unwrap();
        assert_eq!(h2.shape(), &[3]);
        let h3 = gru_step(&spec, &h2, &x, &mut bank.fetch(None)).unwrap();
        assert_eq!(h3.shape(), &[3]);

        let at = bank.flat();
        let tape = Tape::new();
        let mut leaves: HashMap<String, Tensor> = HashMap::new();
        let mut fetch = |name: &str, shape: &[usize], _std: f64| -> Result<Tensor> {
            let t = tape.leaf(shape.to_vec(), bank.values[name].1.clone())?;
            leaves.insert(name.to_string(), t.clone());
            Ok(t)
        };
        let y = gru_step(&spec, &h, &x, &mut fetch).unwrap();
        let grads = y.sum().unwrap().backward().unwrap();
        let got: Vec<f64> =
            bank.order.iter().flat_map(|n| grads.get_or_zeros(&leaves[n])).collect();
        let want = finite_diff(
            &mut |theta: &[f64]| {
                bank.load(theta);
                let y = gru_step(&spec, &h, &x, &mut bank.fetch(None)).unwrap();
                y.sum().unwrap().item().unwrap()
            },
            &at,
            1e-5,
        );
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            assert!((g - w).abs() < 1e-4 * (1.0 + w.abs()), "param {i}: {g} vs {w}");
        }
    }

    #[test]
    fn embedding_is_a_column_lookup_plus_bias() {
        let spec = LayerSpec::embedding("emb", 4, 2);
        let mut bank = Bank::new(17);
        let y = nn_eval(&spec, &Tensor::one_hot(2, 4).unwrap(), &mut bank.fetch(None)).unwrap();
        let (ws, w) = &bank.values["emb/W"];
        assert_eq!(ws, &vec![2, 4]);
        let b = &bank.values["emb/b"].1;
        // column 2 of W plus bias
        assert!((y.data()[0] - (w[2] + b[0])).abs() < 1e-15);
        assert!((y.data()[1] - (w[4 + 2] + b[1])).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatches_are_errors() {
        let spec = LayerSpec::linear("l", 3, 2);
        let mut bank = Bank::new(19);
        assert!(nn_eval(&spec, &Tensor::vector(vec![1.0, 2.0]), &mut bank.fetch(None)).is_err());
        let g = LayerSpec::gru("g", 2, 3);
        let h = Tensor::vector(vec![0.0; 4]);
        let x = Tensor::vector(vec![0.0; 2]);
        assert!(gru_step(&g, &h, &x, &mut bank.fetch(None)).is_err());
        assert!(nn_eval(&g, &x, &mut bank.fetch(None)).is_err());
    }
}
