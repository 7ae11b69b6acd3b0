//! Topic modeling four ways on a synthetic corpus: mean-field guides,
//! a word-level guide network, a document-level guide network, and the
//! collapsed model where per-word topic assignments are summed out. The
//! collapsed variant has the easiest optimization problem and should post
//! the best ELBo; afterwards we peek at its recovered topics.

use guideppl::optimize::{optimize_fresh, OptMethod, OptimizeConfig};
use guideppl::rng::{label, stream};
use guideppl::runtime::{Batch, Bindings, Ctx, ParameterStore};
use guideppl::zoo::lda::{self, Corpus, LdaConfig};
use guideppl::{Result, Tensor};

fn top_words(store: &ParameterStore, corpus: &Corpus, topic: usize) -> Result<Vec<String>> {
    let mu = &store.entry(&format!("topic{topic}#0/mu")).expect("trained topic").value;
    let probs = Tensor::vector(mu.clone()).simplex()?;
    let mut order: Vec<usize> = (0..corpus.vocab.len()).collect();
    order.sort_by(|&a, &b| probs.data()[b].total_cmp(&probs.data()[a]));
    Ok(order.iter().take(5).map(|&w| corpus.vocab[w].clone()).collect())
}

fn main() -> Result<()> {
    let corpus = Corpus::synthetic(20, 25, 60, 3, &mut stream(4, &[label::DATA]));
    let cfg = LdaConfig { num_topics: 3, ..LdaConfig::default() };
    let vocab = corpus.vocab.len();
    let mut bindings = Bindings::new();
    bindings.set("corpus", corpus.clone());

    let variants: [(&str, Box<dyn Fn(&mut Ctx) -> Result<Vec<Tensor>>>); 4] = [
        ("mean-field", Box::new(lda::mean_field(cfg.clone(), vocab, Batch::Full))),
        ("word guide", Box::new(lda::word_level(cfg.clone(), vocab, Batch::Full))),
        ("doc guide", Box::new(lda::doc_level(cfg.clone(), vocab, Batch::Full))),
        ("collapsed", Box::new(lda::marginalized(cfg.clone(), vocab, Batch::Full))),
    ];

    println!("{:<12} {:>10}", "variant", "ELBo");
    for (name, model) in &variants {
        let opt = OptimizeConfig::new(150).method(OptMethod::adam(0.01)).seed(4).log_every(25);
        let (_, log) = optimize_fresh(model.as_ref(), &opt, &bindings)?;
        println!("{name:<12} {:>10.2}", log.tail_mean(25));
    }

    // a longer collapsed run, far enough for the topics to separate
    let long = OptimizeConfig::new(1500).method(OptMethod::adam(0.05)).seed(4).log_every(100);
    let (store, _) = optimize_fresh(lda::marginalized(cfg.clone(), vocab, Batch::Full), &long, &bindings)?;
    println!();
    println!("top words per topic (collapsed, 1500 steps):");
    for k in 0..cfg.num_topics {
        println!("  topic {k}: {}", top_words(&store, &corpus, k)?.join(" "));
    }
    Ok(())
}
