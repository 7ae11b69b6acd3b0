//! Latent Dirichlet Allocation over a bag-of-words corpus, in four
//! flavors: mean-field, mean-field with the per-word topic assignment
//! summed out, a word-level amortized guide (predicts each word's topic
//! from the word and the document's topic mixture), and a document-level
//! amortized guide (predicts the topic mixture from the whole document via
//! a recurrent net).
//!
//! Models read the `"corpus"` binding (a [`Corpus`]).

use std::collections::HashMap;

use rand::Rng as _;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution as _;

use crate::dists::{Dist, Value};
use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec};
use crate::runtime::{Batch, Ctx};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Corpus {
    pub vocab: Vec<String>,
    /// Word ids per document, in document order.
    pub docs: Vec<Vec<usize>>,
    /// Per-document word count histograms, each of length `vocab.len()`.
    pub counts: Vec<Vec<f64>>,
}

impl Corpus {
    pub fn new(vocab: Vec<String>, docs: Vec<Vec<usize>>) -> Result<Corpus> {
        let v = vocab.len();
        if v == 0 {
            return Err(Error::data("corpus has an empty vocabulary"));
        }
        for (i, doc) in docs.iter().enumerate() {
            if doc.is_empty() {
                return Err(Error::data(format!("document {i} is empty")));
            }
            for &w in doc {
                if w >= v {
                    return Err(Error::data(format!("document {i}: word id {w} >= vocab {v}")));
                }
            }
        }
        let counts = docs
            .iter()
            .map(|doc| {
                let mut h = vec![0.0; v];
                for &w in doc {
                    h[w] += 1.0;
                }
                h
            })
            .collect();
        Ok(Corpus { vocab, docs, counts })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    /// One document per line, whitespace-tokenized; the vocabulary is built
    /// in order of first appearance. Blank lines are skipped.
    pub fn from_text(text: &str) -> Result<Corpus> {
        let mut vocab: Vec<String> = Vec::new();
        let mut ids: HashMap<String, usize> = HashMap::new();
        let mut docs = Vec::new();
        for line in text.lines() {
            let words: Vec<usize> = line
                .split_whitespace()
                .map(|tok| {
                    *ids.entry(tok.to_string()).or_insert_with(|| {
                        vocab.push(tok.to_string());
                        vocab.len() - 1
                    })
                })
                .collect();
            if !words.is_empty() {
                docs.push(words);
            }
        }
        Corpus::new(vocab, docs)
    }

    /// Word-id documents (e.g. parsed from JSON); vocabulary is w0..w{V-1}.
    pub fn from_ids(docs: Vec<Vec<usize>>, vocab_size: usize) -> Result<Corpus> {
        let vocab = (0..vocab_size).map(|i| format!("w{i}")).collect();
        Corpus::new(vocab, docs)
    }

    /// Corpus drawn from a known topic model: sparse topic-word
    /// distributions, one Dirichlet topic mixture per document.
    pub fn synthetic(
        n_docs: usize,
        doc_len: usize,
        vocab_size: usize,
        n_topics: usize,
        rng: &mut ChaCha8Rng,
    ) -> Corpus {
        let topics: Vec<Vec<f64>> =
            (0..n_topics).map(|_| dirichlet(0.05, vocab_size, rng)).collect();
        let docs = (0..n_docs)
            .map(|_| {
                let mix = dirichlet(0.5, n_topics, rng);
                (0..doc_len)
                    .map(|_| {
                        let z = discrete(&mix, rng);
                        discrete(&topics[z], rng)
                    })
                    .collect()
            })
            .collect();
        Corpus::from_ids(docs, vocab_size).unwrap()
    }
}

fn dirichlet(alpha: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let g = rand_distr::Gamma::new(alpha, 1.0).unwrap();
    let mut xs: Vec<f64> = (0..n).map(|_| g.sample(rng).max(1e-300)).collect();
    let total: f64 = xs.iter().sum();
    for x in &mut xs {
        *x /= total;
    }
    xs
}

fn discrete(ps: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut u = rng.gen::<f64>();
    for (i, p) in ps.iter().enumerate() {
        u -= p;
        if u <= 0.0 {
            return i;
        }
    }
    ps.len() - 1
}

#[derive(Clone, Debug)]
pub struct LdaConfig {
    pub num_topics: usize,
    pub alpha: f64,
    pub eta: f64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig { num_topics: 5, alpha: 1.0, eta: 1.0 }
    }
}

fn sample_topics(c: &mut Ctx, cfg: &LdaConfig, vocab_size: usize) -> Result<Vec<Tensor>> {
    (0..cfg.num_topics)
        .map(|k| {
            Ok(c.sample(&format!("topic{k}"), &Dist::dirichlet_sym(cfg.eta, vocab_size))?
                .as_tensor()?
                .clone())
        })
        .collect()
}

/// Every latent (topics, per-doc mixtures, per-word assignments) gets an
/// automatic mean-field guide.
pub fn mean_field(
    cfg: LdaConfig,
    vocab_size: usize,
    batch: Batch,
) -> impl Fn(&mut Ctx) -> Result<Vec<Tensor>> {
    move |c| {
        let corpus = c.data::<Corpus>("corpus")?;
        let topics = sample_topics(c, &cfg, vocab_size)?;
        let k = cfg.num_topics;
        c.map_data("doc", &corpus.docs, batch.clone(), |c, doc| {
            let topic_dist =
                c.sample("topicDist", &Dist::dirichlet_sym(cfg.alpha, k))?.as_tensor()?.clone();
            c.map_data("w", doc, Batch::Full, |c, &w| {
                let z = c.sample("z", &Dist::Discrete { ps: topic_dist.clone() })?.as_index()?;
                c.observe(&Dist::Discrete { ps: topics[z].clone() }, &Value::Index(w))
            })?;
            Ok(())
        })?;
        Ok(topics)
    }
}

/// Mean-field with the per-word topic assignment summed out: each distinct
/// word contributes factor(count * log sum_z p(z) p(word|z)).
pub fn marginalized(
    cfg: LdaConfig,
    vocab_size: usize,
    batch: Batch,
) -> impl Fn(&mut Ctx) -> Result<Vec<Tensor>> {
    move |c| {
        let corpus = c.data::<Corpus>("corpus")?;
        let topics = sample_topics(c, &cfg, vocab_size)?;
        let log_topics: Vec<Tensor> =
            topics.iter().map(|t| t.log()).collect::<Result<_>>()?;
        let k = cfg.num_topics;
        c.map_data("doc", &corpus.counts, batch.clone(), |c, cnt| {
            let topic_dist =
                c.sample("topicDist", &Dist::dirichlet_sym(cfg.alpha, k))?.as_tensor()?.clone();
            let log_td = topic_dist.log()?;
            for (w, &n) in cnt.iter().enumerate() {
                if n > 0.0 {
                    let scores: Vec<Tensor> = (0..k)
                        .map(|z| log_td.get(z)?.add(&log_topics[z].get(w)?))
                        .collect::<Result<_>>()?;
                    let refs: Vec<&Tensor> = scores.iter().collect();
                    let lp = Tensor::concat(&refs)?.logsumexp()?;
                    c.factor(&lp.mul(&Tensor::scalar(n))?)?;
                }
            }
            Ok(())
        })?;
        Ok(topics)
    }
}

/// Amortized per-word guide: an embedding of the word and the (shifted)
/// topic mixture feed a net whose softplus outputs are unnormalized
/// assignment probabilities.
pub fn word_level(
    cfg: LdaConfig,
    vocab_size: usize,
    batch: Batch,
) -> impl Fn(&mut Ctx) -> Result<Vec<Tensor>> {
    let embed = LayerSpec::mlp("embedNet", vocab_size, &[(50, Activation::Tanh)]);
    let net = LayerSpec::mlp(
        "net",
        50 + cfg.num_topics,
        &[(50, Activation::Tanh), (cfg.num_topics, Activation::None)],
    );
    move |c| {
        let corpus = c.data::<Corpus>("corpus")?;
        let topics = sample_topics(c, &cfg, vocab_size)?;
        let k = cfg.num_topics;
        c.map_data("doc", &corpus.docs, batch.clone(), |c, doc| {
            let topic_dist =
                c.sample("topicDist", &Dist::dirichlet_sym(cfg.alpha, k))?.as_tensor()?.clone();
            let centered = topic_dist.sub(&Tensor::scalar(1.0))?;
            c.map_data("w", doc, Batch::Full, |c, &w| {
                let embedding = c.nn(&embed, &Tensor::one_hot(w, vocab_size)?)?;
                let out = c.nn(&net, &Tensor::concat(&[&embedding, &centered])?)?;
                let z = c
                    .sample_guided(
                        "z",
                        &Dist::Discrete { ps: topic_dist.clone() },
                        Dist::Discrete { ps: out.softplus()? },
                    )?
                    .as_index()?;
                c.observe(&Dist::Discrete { ps: topics[z].clone() }, &Value::Index(w))
            })?;
            Ok(())
        })?;
        Ok(topics)
    }
}

/// Amortized per-document guide: a GRU reads the topic vectors and then the
/// document's normalized counts, and emits the mixture's guide parameters.
pub fn doc_level(
    cfg: LdaConfig,
    vocab_size: usize,
    batch: Batch,
) -> impl Fn(&mut Ctx) -> Result<Vec<Tensor>> {
    const HID: usize = 20;
    let ru = LayerSpec::gru("ru", vocab_size, HID);
    let out_hidden = LayerSpec::mlp("outputHidden", HID, &[(HID, Activation::Tanh)]);
    let out_mu = LayerSpec::mlp("outputMu", HID, &[(cfg.num_topics - 1, Activation::None)]);
    let out_sigma = LayerSpec::mlp("outputSigma", HID, &[(cfg.num_topics - 1, Activation::None)]);
    move |c| {
        let corpus = c.data::<Corpus>("corpus")?;
        let topics = sample_topics(c, &cfg, vocab_size)?;
        let k = cfg.num_topics;
        c.map_data("doc", &corpus.counts, batch.clone(), |c, cnt| {
            let total: f64 = cnt.iter().sum();
            let normed = Tensor::vector(cnt.iter().map(|&x| x / total).collect());
            let mut state = c.param("init", &[HID])?;
            for t in &topics {
                state = c.gru(&ru, &state, t)?;
            }
            state = c.gru(&ru, &state, &normed)?;
            let hidden = c.nn(&out_hidden, &state)?;
            let mu = c.nn(&out_mu, &hidden)?;
            let sigma = c.nn(&out_sigma, &hidden)?.softplus()?;
            let topic_dist = c
                .sample_guided(
                    "topicDist",
                    &Dist::dirichlet_sym(cfg.alpha, k),
                    Dist::LogisticNormal { mu, sigma },
                )?
                .as_tensor()?
                .clone();
            let words: Vec<usize> = cnt
                .iter()
                .enumerate()
                .flat_map(|(w, &n)| std::iter::repeat(w).take(n as usize))
                .collect();
            c.map_data("w", &words, Batch::Full, |c, &w| {
                let z = c.sample("z", &Dist::Discrete { ps: topic_dist.clone() })?.as_index()?;
                c.observe(&Dist::Discrete { ps: topics[z].clone() }, &Value::Index(w))
            })?;
            Ok(())
        })?;
        Ok(topics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{label, stream};
    use crate::runtime::{run_trace, Bindings, ParameterStore, TraceOpts};

    fn bind(corpus: Corpus) -> Bindings {
        let mut b = Bindings::new();
        b.set("corpus", corpus);
        b
    }

    fn vec_force(opts: TraceOpts, site: &str, xs: &[f64]) -> TraceOpts {
        opts.force(site, Value::Tensor(Tensor::vector(xs.to_vec())))
    }

    #[test]
    fn text_corpora_build_word_ids_and_counts() {
        let c = Corpus::from_text("a b a\nc b\n\n").unwrap();
        assert_eq!(c.vocab, vec!["a", "b", "c"]);
        assert_eq!(c.docs, vec![vec![0, 1, 0], vec![2, 1]]);
        assert_eq!(c.counts, vec![vec![2.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]]);

        assert!(Corpus::from_ids(vec![vec![0, 3]], 3).is_err(), "word id out of range");
        assert!(Corpus::new(vec!["a".into()], vec![vec![]]).is_err(), "empty document");
    }

    #[test]
    fn synthetic_corpora_are_well_formed_and_deterministic() {
        let gen = || Corpus::synthetic(50, 40, 200, 5, &mut stream(11, &[label::DATA]));
        let c = gen();
        assert_eq!(c.num_docs(), 50);
        assert_eq!(c.vocab_size(), 200);
        for (doc, cnt) in c.docs.iter().zip(&c.counts) {
            assert_eq!(doc.len(), 40);
            assert!(doc.iter().all(|&w| w < 200));
            assert_eq!(cnt.iter().sum::<f64>(), 40.0);
        }
        assert_eq!(gen().docs, c.docs);
    }

    #[test]
    fn marginalizing_the_topic_assignment_matches_enumeration() {
        let cfg = LdaConfig { num_topics: 2, alpha: 1.0, eta: 1.0 };
        let corpus = Corpus::from_ids(vec![vec![1]], 3).unwrap();
        let b = bind(corpus);
        let pin = |opts: TraceOpts| {
            let opts = vec_force(opts, "topic0#0", &[0.5, 0.25, 0.25]);
            let opts = vec_force(opts, "topic1#0", &[0.2, 0.3, 0.5]);
            vec_force(opts, "doc[0]/topicDist#0", &[0.6, 0.4])
        };

        let mut per_z = Vec::new();
        for z in 0..2 {
            let opts = pin(TraceOpts::prior()).force("doc[0]/w[0]/z#0", Value::Index(z));
            let mut store = ParameterStore::new(1);
            let (tr, _) = run_trace(
                &mut store,
                &opts,
                &mut stream(1, &[0]),
                &b,
                mean_field(cfg.clone(), 3, Batch::Full),
            )
            .unwrap();
            per_z.push(tr.total_log_p.item().unwrap());
        }
        let enumerated = {
            let m = per_z[0].max(per_z[1]);
            m + ((per_z[0] - m).exp() + (per_z[1] - m).exp()).ln()
        };

        let mut store = ParameterStore::new(1);
        let (tr, _) = run_trace(
            &mut store,
            &pin(TraceOpts::prior()),
            &mut stream(1, &[0]),
            &b,
            marginalized(cfg, 3, Batch::Full),
        )
        .unwrap();
        assert!((tr.total_log_p.item().unwrap() - enumerated).abs() < 1e-10);
    }

    #[test]
    fn marginalized_scores_match_a_scalar_reimplementation() {
        fn dirichlet_lpdf(alpha: &[f64], x: &[f64]) -> f64 {
            use statrs::function::gamma::ln_gamma;
            let a0: f64 = alpha.iter().sum();
            ln_gamma(a0) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>()
                + alpha.iter().zip(x).map(|(&a, &v)| (a - 1.0) * v.ln()).sum::<f64>()
        }

        let cfg = LdaConfig { num_topics: 2, alpha: 1.3, eta: 0.7 };
        let corpus = Corpus::from_ids(vec![vec![0, 2, 2], vec![1, 3, 3, 0]], 4).unwrap();
        let t = [vec![0.1, 0.2, 0.3, 0.4], vec![0.4, 0.3, 0.2, 0.1]];
        let td = [vec![0.6, 0.4], vec![0.25, 0.75]];

        let mut want = 0.0;
        for tk in &t {
            want += dirichlet_lpdf(&[0.7; 4], tk);
        }
        for (d, tdd) in td.iter().enumerate() {
            want += dirichlet_lpdf(&[1.3; 2], tdd);
            for w in 0..4 {
                let n = corpus.counts[d][w];
                if n > 0.0 {
                    want += n * (tdd[0] * t[0][w] + tdd[1] * t[1][w]).ln();
                }
            }
        }

        let mut opts = TraceOpts::prior();
        opts = vec_force(opts, "topic0#0", &t[0]);
        opts = vec_force(opts, "topic1#0", &t[1]);
        opts = vec_force(opts, "doc[0]/topicDist#0", &td[0]);
        opts = vec_force(opts, "doc[1]/topicDist#0", &td[1]);
        let mut store = ParameterStore::new(1);
        let (tr, _) = run_trace(
            &mut store,
            &opts,
            &mut stream(1, &[0]),
            &bind(corpus),
            marginalized(cfg, 4, Batch::Full),
        )
        .unwrap();
        assert!((tr.total_log_p.item().unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn guide_nets_have_the_published_shapes() {
        let corpus = Corpus::synthetic(3, 6, 30, 4, &mut stream(13, &[label::DATA]));
        let b = bind(corpus);
        let cfg = LdaConfig { num_topics: 4, alpha: 1.0, eta: 1.0 };

        let mut store = ParameterStore::new(1);
        run_trace(
            &mut store,
            &TraceOpts::guided(),
            &mut stream(1, &[0]),
            &b,
            word_level(cfg.clone(), 30, Batch::Full),
        )
        .unwrap();
        assert_eq!(store.entry("embedNet/W0").unwrap().shape, vec![50, 30]);
        assert_eq!(store.entry("net/W0").unwrap().shape, vec![50, 54]);
        assert_eq!(store.entry("net/W1").unwrap().shape, vec![4, 50]);

        let mut store = ParameterStore::new(1);
        run_trace(
            &mut store,
            &TraceOpts::guided(),
            &mut stream(1, &[0]),
            &b,
            doc_level(cfg, 30, Batch::Full),
        )
        .unwrap();
        assert_eq!(store.entry("init").unwrap().shape, vec![20]);
        assert_eq!(store.entry("ru/Wz").unwrap().shape, vec![20, 50]);
        assert_eq!(store.entry("outputHidden/W0").unwrap().shape, vec![20, 20]);
        assert_eq!(store.entry("outputMu/W0").unwrap().shape, vec![3, 20]);
        assert_eq!(store.entry("outputSigma/W0").unwrap().shape, vec![3, 20]);
    }

    #[test]
    fn word_guide_reads_the_topic_distribution() {
        let cfg = LdaConfig { num_topics: 2, alpha: 1.0, eta: 1.0 };
        let corpus = Corpus::from_ids(vec![vec![1]], 3).unwrap();
        let b = bind(corpus);
        let pin = |td: &[f64]| {
            let opts = vec_force(TraceOpts::guided(), "topic0#0", &[0.5, 0.25, 0.25]);
            let opts = vec_force(opts, "topic1#0", &[0.2, 0.3, 0.5]);
            vec_force(opts, "doc[0]/topicDist#0", td).force("doc[0]/w[0]/z#0", Value::Index(0))
        };
        fn z_log_q(
            model: impl Fn(&mut Ctx) -> Result<Vec<Tensor>>,
            opts: &TraceOpts,
            b: &Bindings,
        ) -> f64 {
            let mut store = ParameterStore::new(23);
            let (tr, _) = run_trace(&mut store, opts, &mut stream(23, &[0]), b, model).unwrap();
            tr.choice("doc[0]/w[0]/z#0").unwrap().log_q.item().unwrap()
        }

        let m1 = z_log_q(mean_field(cfg.clone(), 3, Batch::Full), &pin(&[0.7, 0.3]), &b);
        let m2 = z_log_q(mean_field(cfg.clone(), 3, Batch::Full), &pin(&[0.2, 0.8]), &b);
        assert_eq!(m1, m2, "mean-field guide must ignore the mixture");

        let w1 = z_log_q(word_level(cfg.clone(), 3, Batch::Full), &pin(&[0.7, 0.3]), &b);
        let w2 = z_log_q(word_level(cfg, 3, Batch::Full), &pin(&[0.2, 0.8]), &b);
        assert!((w1 - w2).abs() > 1e-9, "word guide must read the mixture");
    }

    #[test]
    fn document_guide_reads_the_topics() {
        let cfg = LdaConfig { num_topics: 2, alpha: 1.0, eta: 1.0 };
        let corpus = Corpus::from_ids(vec![vec![1]], 3).unwrap();
        let b = bind(corpus);
        let pin = |t0: &[f64]| {
            let opts = vec_force(TraceOpts::guided(), "topic0#0", t0);
            let opts = vec_force(opts, "topic1#0", &[0.2, 0.3, 0.5]);
            vec_force(opts, "doc[0]/topicDist#0", &[0.6, 0.4])
        };
        fn td_log_q(
            model: impl Fn(&mut Ctx) -> Result<Vec<Tensor>>,
            opts: &TraceOpts,
            b: &Bindings,
        ) -> f64 {
            let mut store = ParameterStore::new(29);
            let (tr, _) = run_trace(&mut store, opts, &mut stream(29, &[0]), b, model).unwrap();
            tr.choice("doc[0]/topicDist#0").unwrap().log_q.item().unwrap()
        }

        let m1 = td_log_q(mean_field(cfg.clone(), 3, Batch::Full), &pin(&[0.5, 0.25, 0.25]), &b);
        let m2 = td_log_q(mean_field(cfg.clone(), 3, Batch::Full), &pin(&[0.1, 0.6, 0.3]), &b);
        assert_eq!(m1, m2, "mean-field guide must ignore the topics");

        let d1 = td_log_q(doc_level(cfg.clone(), 3, Batch::Full), &pin(&[0.5, 0.25, 0.25]), &b);
        let d2 = td_log_q(doc_level(cfg, 3, Batch::Full), &pin(&[0.1, 0.6, 0.3]), &b);
        assert!((d1 - d2).abs() > 1e-9, "document guide must read the topics");
    }

    #[test]
    fn every_model_runs_under_prior_and_guided_semantics() {
        let cfg = LdaConfig { num_topics: 3, alpha: 1.0, eta: 1.0 };
        let corpus = Corpus::synthetic(6, 8, 12, 3, &mut stream(37, &[label::DATA]));
        let b = bind(corpus);
        let models: Vec<(&str, Box<dyn Fn(&mut Ctx) -> Result<Vec<Tensor>>>)> = vec![
            ("mean_field", Box::new(mean_field(cfg.clone(), 12, Batch::Size(2)))),
            ("marginalized", Box::new(marginalized(cfg.clone(), 12, Batch::Full))),
            ("word_level", Box::new(word_level(cfg.clone(), 12, Batch::Full))),
            ("doc_level", Box::new(doc_level(cfg.clone(), 12, Batch::Size(3)))),
        ];
        for (name, m) in &models {
            for opts in [TraceOpts::prior(), TraceOpts::guided()] {
                let mut store = ParameterStore::new(41);
                let (tr, topics) =
                    run_trace(&mut store, &opts, &mut stream(41, &[label::TRACE]), &b, |c| m(c))
                        .unwrap();
                assert!(tr.elbo().unwrap().is_finite(), "{name}: non-finite elbo");
                assert_eq!(topics.len(), 3);
                for t in &topics {
                    assert_eq!(t.shape(), &[12]);
                    assert!((t.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
