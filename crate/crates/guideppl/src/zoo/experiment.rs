//! Named training setups over the zoo models, each writing an ELBo curve
//! (`elbo.csv`), summary metrics (`metrics.json`), and trained parameters
//! (`params.json`) into an output directory. This is the layer the CLI
//! calls into.
//!
//! Timing columns in the CSV are zeroed so identical seeds produce
//! byte-identical curves; wall-clock time lives in the metrics instead.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::estimator::EstimatorKind;
use crate::optimize::{
    forward_sample, importance_sample, optimize_fresh, ElboLog, OptMethod, OptimizeConfig,
};
use crate::rng::{label, stream};
use crate::runtime::{Batch, Bindings, Ctx, ParameterStore};

use super::{gmm, images, lda, qmr};

pub const EXPERIMENTS: [&str; 16] = [
    "gmm",
    "gmm-marginalized",
    "gmm-meanfield",
    "bn1",
    "bn2",
    "bn2-dep",
    "qmr-joint",
    "qmr-factored",
    "qmr-gru",
    "qmr-ablation",
    "lda-mf",
    "lda-marginal",
    "lda-word",
    "lda-doc",
    "vae",
    "sbn",
];

// Bundled datasets are fixed independent of --seed, so every run trains on
// the same corpus.
const LDA_CORPUS_SEED: u64 = 7002;
const GLYPH_SEED: u64 = 7003;

#[derive(Clone, Debug)]
pub struct RunFlags {
    pub steps: Option<usize>,
    pub step_size: Option<f64>,
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Traces averaged per gradient estimate.
    pub samples: Option<usize>,
    pub local_weights: bool,
    pub baselines: bool,
    pub estimator: EstimatorKind,
    pub data: Option<PathBuf>,
    pub limit: Option<usize>,
    pub out: PathBuf,
}

impl RunFlags {
    pub fn new(out: impl Into<PathBuf>) -> RunFlags {
        RunFlags {
            steps: None,
            step_size: None,
            batch_size: None,
            seed: 0,
            samples: None,
            local_weights: true,
            baselines: true,
            estimator: EstimatorKind::Unified,
            data: None,
            limit: None,
            out: out.into(),
        }
    }
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub log: ElboLog,
    pub metrics: BTreeMap<String, f64>,
    pub out_dir: PathBuf,
}

/// The metrics each experiment promises to write.
pub fn declared_metrics(name: &str) -> Option<&'static [&'static str]> {
    Some(match name {
        "gmm" | "gmm-marginalized" | "gmm-meanfield" => {
            &["final_elbo", "test_nll", "wall_ms_total"]
        }
        "bn1" | "bn2" | "bn2-dep" => &["final_elbo", "wall_ms_total"],
        "qmr-joint" | "qmr-factored" | "qmr-gru" => {
            &["final_elbo", "f_guide", "f_prior", "wall_ms_total"]
        }
        "qmr-ablation" => {
            &["final_elbo_none", "final_elbo_local", "final_elbo_baselines", "wall_ms_total"]
        }
        "lda-mf" | "lda-marginal" | "lda-word" | "lda-doc" => &["final_elbo", "wall_ms_total"],
        "vae" | "sbn" => &["final_elbo", "wall_ms_total"],
        _ => return None,
    })
}

pub fn run(name: &str, flags: &RunFlags) -> Result<ExperimentResult> {
    if declared_metrics(name).is_none() {
        return Err(Error::config(format!(
            "unknown experiment '{name}'; expected one of: {}",
            EXPERIMENTS.join(", ")
        )));
    }
    match name {
        "gmm" | "gmm-marginalized" | "gmm-meanfield" => run_gmm(name, flags),
        "bn1" | "bn2" | "bn2-dep" => run_bn(name, flags),
        "qmr-joint" | "qmr-factored" | "qmr-gru" => run_qmr(name, flags),
        "qmr-ablation" => run_qmr_ablation(flags),
        "lda-mf" | "lda-marginal" | "lda-word" | "lda-doc" => run_lda(name, flags),
        "vae" | "sbn" => run_images(name, flags),
        _ => unreachable!(),
    }
}

fn opt_config(flags: &RunFlags, default_steps: usize, default_alpha: f64) -> OptimizeConfig {
    let mut cfg = OptimizeConfig::new(flags.steps.unwrap_or(default_steps));
    cfg.method = OptMethod::adam(flags.step_size.unwrap_or(default_alpha));
    cfg.seed = flags.seed;
    cfg.estimator.kind = flags.estimator;
    if let Some(s) = flags.samples {
        cfg.estimator.num_samples = s;
    }
    cfg.estimator.use_per_choice_weights = flags.local_weights;
    cfg.estimator.use_baselines = flags.baselines;
    cfg
}

fn sized(n: usize, data_len: usize) -> Batch {
    if n == 0 || n >= data_len {
        Batch::Full
    } else {
        Batch::Size(n)
    }
}

fn batch_for(flags: &RunFlags, default: Batch, data_len: usize) -> Batch {
    match flags.batch_size {
        Some(n) => sized(n, data_len),
        None => match default {
            Batch::Size(n) => sized(n, data_len),
            other => other,
        },
    }
}

fn bind_one<T: Send + Sync + 'static>(name: &str, value: T) -> Bindings {
    let mut b = Bindings::new();
    b.set(name, value);
    b
}

fn load_reals(path: &Path, limit: Option<usize>) -> Result<Vec<f64>> {
    let xs: Vec<f64> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let xs: Vec<f64> = match limit {
        Some(n) => xs.into_iter().take(n).collect(),
        None => xs,
    };
    if xs.is_empty() {
        return Err(Error::data(format!("{}: no observations", path.display())));
    }
    Ok(xs)
}

fn load_corpus(path: &Path, limit: Option<usize>) -> Result<lda::Corpus> {
    let text = std::fs::read_to_string(path)?;
    let c = if path.extension().and_then(|e| e.to_str()) == Some("json") {
        let docs: Vec<Vec<usize>> = serde_json::from_str(&text)?;
        let vocab = docs.iter().flatten().max().map_or(0, |m| m + 1);
        lda::Corpus::from_ids(docs, vocab)?
    } else {
        lda::Corpus::from_text(&text)?
    };
    match limit {
        Some(n) if n < c.num_docs() => {
            lda::Corpus::new(c.vocab, c.docs.into_iter().take(n).collect())
        }
        _ => Ok(c),
    }
}

fn write_curve(path: &Path, log: &ElboLog) -> Result<()> {
    let mut flat = ElboLog::new();
    for r in &log.rows {
        flat.push(r.step, r.elbo, 0);
    }
    flat.write_csv(path)
}

fn finish(
    name: &str,
    flags: &RunFlags,
    log: ElboLog,
    mut metrics: BTreeMap<String, f64>,
    store: &ParameterStore,
    t0: Instant,
) -> Result<ExperimentResult> {
    metrics.insert("wall_ms_total".into(), t0.elapsed().as_millis() as f64);
    for want in declared_metrics(name).unwrap() {
        if !metrics.contains_key(*want) {
            return Err(Error::config(format!("{name} did not produce metric '{want}'")));
        }
    }
    std::fs::create_dir_all(&flags.out)?;
    write_curve(&flags.out.join("elbo.csv"), &log)?;
    let json = serde_json::to_string_pretty(&metrics)?;
    std::fs::write(flags.out.join("metrics.json"), json + "\n")?;
    store.save(&flags.out.join("params.json"))?;
    Ok(ExperimentResult { log, metrics, out_dir: flags.out.clone() })
}

fn run_gmm(name: &str, flags: &RunFlags) -> Result<ExperimentResult> {
    let t0 = Instant::now();
    let truth = gmm::MixtureParams::well_separated();
    let train = match &flags.data {
        Some(p) => load_reals(p, flags.limit)?,
        None => gmm::generate(&truth, 100, &mut stream(flags.seed, &[label::DATA])),
    };
    let test = gmm::generate(&truth, 100, &mut stream(flags.seed, &[label::DATA, 1]));
    let b = batch_for(flags, Batch::Full, train.len());
    let model: Box<dyn Fn(&mut Ctx) -> Result<()>> = match name {
        "gmm" => {
            let m = gmm::amortized(b);
            Box::new(move |c| m(c).map(|_| ()))
        }
        "gmm-marginalized" => Box::new(gmm::marginalized(b)),
        _ => {
            let m = gmm::mean_field(b);
            Box::new(move |c| m(c).map(|_| ()))
        }
    };

    let cfg = opt_config(flags, 200, 0.1);
    let (mut store, log) = optimize_fresh(|c| model(c), &cfg, &bind_one("obs", train))?;

    let nll = -importance_sample(
        |c| model(c),
        &mut store,
        1000,
        &mut stream(flags.seed, &[label::EVAL]),
        &bind_one("obs", test),
    )?
    .log_z;

    let mut metrics = BTreeMap::new();
    metrics.insert("final_elbo".into(), log.tail_mean(10));
    metrics.insert("test_nll".into(), nll);
    finish(name, flags, log, metrics, &store, t0)
}

fn run_bn(name: &str, flags: &RunFlags) -> Result<ExperimentResult> {
    let t0 = Instant::now();
    let obs = match &flags.data {
        Some(p) => load_reals(p, flags.limit)?,
        None => {
            let mut rng = stream(flags.seed, &[label::DATA]);
            let mut g = move || -> f64 { rng.sample(StandardNormal) };
            (0..100)
                .map(|_| {
                    if name == "bn1" {
                        1.0 + 0.5 * g() + 0.3 * g()
                    } else {
                        (1.0 + 0.5 * g()) + (-0.5 + 0.8 * g()) + 0.3 * g()
                    }
                })
                .collect()
        }
    };
    let b = batch_for(flags, Batch::Full, obs.len());
    let model: Box<dyn Fn(&mut Ctx) -> Result<()>> = match name {
        "bn1" => {
            let m = gmm::bn_one_latent(b);
            Box::new(move |c| m(c).map(|_| ()))
        }
        "bn2" => {
            let m = gmm::bn_two_latent(b);
            Box::new(move |c| m(c).map(|_| ()))
        }
        _ => {
            let m = gmm::bn_two_latent_dep(b);
            Box::new(move |c| m(c).map(|_| ()))
        }
    };

    let cfg = opt_config(flags, 200, 0.1);
    let (store, log) = optimize_fresh(|c| model(c), &cfg, &bind_one("obs", obs))?;

    let mut metrics = BTreeMap::new();
    metrics.insert("final_elbo".into(), log.tail_mean(10));
    finish(name, flags, log, metrics, &store, t0)
}

fn qmr_model(
    name: &str,
    graph: &qmr::Graph,
    batch: Batch,
) -> Box<dyn Fn(&mut Ctx) -> Result<Vec<Vec<bool>>>> {
    match name {
        "qmr-joint" | "qmr-ablation" => Box::new(qmr::joint(graph.clone(), batch)),
        "qmr-factored" => Box::new(qmr::factored(graph.clone(), batch)),
        _ => Box::new(qmr::factored_gru(graph.clone(), batch)),
    }
}

/// Diagnosis-and-prediction score: infer causes for each test record, then
/// hallucinate effects from those causes and compare against the record.
/// Averaged over `runs` passes; records that come up empty on either side
/// are skipped.
fn qmr_f(
    graph: &qmr::Graph,
    model: &dyn Fn(&mut Ctx) -> Result<Vec<Vec<bool>>>,
    store: &mut ParameterStore,
    records: &[Vec<f64>],
    runs: usize,
    guided: bool,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for _ in 0..runs {
        for rec in records {
            let b = bind_one("records", vec![rec.clone()]);
            let (ds, _) = forward_sample(|c| model(c), store, guided, rng, &b)?;
            let effects = qmr::hallucinate(graph, &ds[0], rng);
            let truth: Vec<bool> = rec.iter().map(|&x| x == 1.0).collect();
            if let Some(f) = qmr::f_score(&truth, &effects) {
                total += f;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::domain("qmr_f", "every test record was skipped"));
    }
    Ok(total / n as f64)
}

fn qmr_inputs(flags: &RunFlags) -> Result<(qmr::Graph, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let graph = match &flags.data {
        Some(p) => qmr::Graph::load(p)?,
        None => qmr::Graph::generate(20, 10, &mut stream(flags.seed, &[label::DATA])),
    };
    let n_train = flags.limit.unwrap_or(200);
    let train = qmr::generate_records(&graph, n_train, &mut stream(flags.seed, &[label::DATA, 1]));
    let test = qmr::generate_records(&graph, 50, &mut stream(flags.seed, &[label::DATA, 2]));
    Ok((graph, train, test))
}

fn run_qmr(name: &str, flags: &RunFlags) -> Result<ExperimentResult> {
    let t0 = Instant::now();
    let (graph, train, test) = qmr_inputs(flags)?;
    let b = batch_for(flags, Batch::Size(20), train.len());
    let model = qmr_model(name, &graph, b);

    let cfg = opt_config(flags, 500, 0.01);
    let (mut store, log) = optimize_fresh(|c| model(c), &cfg, &bind_one("records", train))?;

    let eval_model = qmr_model(name, &graph, Batch::Full);
    let mut eval_rng = stream(flags.seed, &[label::EVAL]);
    let f_guide = qmr_f(&graph, &*eval_model, &mut store, &test, 100, true, &mut eval_rng)?;
    let f_prior = qmr_f(&graph, &*eval_model, &mut store, &test, 100, false, &mut eval_rng)?;

    std::fs::create_dir_all(&flags.out)?;
    graph.save(&flags.out.join("graph.json"))?;

    let mut metrics = BTreeMap::new();
    metrics.insert("final_elbo".into(), log.tail_mean(10));
    metrics.insert("f_guide".into(), f_guide);
    metrics.insert("f_prior".into(), f_prior);
    finish(name, flags, log, metrics, &store, t0)
}

fn run_qmr_ablation(flags: &RunFlags) -> Result<ExperimentResult> {
    let t0 = Instant::now();
    let (graph, train, _) = qmr_inputs(flags)?;
    let b = batch_for(flags, Batch::Size(20), train.len());
    let bindings = bind_one("records", train);
    std::fs::create_dir_all(&flags.out)?;

    let arms = [("none", false, false, 1e-5), ("local", true, false, 1e-3), ("baselines", true, true, 1e-2)];
    let mut metrics = BTreeMap::new();
    let mut last = None;
    for (tag, local, base, alpha) in arms {
        let mut cfg = opt_config(flags, 500, alpha);
        cfg.estimator.use_per_choice_weights = local;
        cfg.estimator.use_baselines = base;
        let model = qmr_model("qmr-ablation", &graph, b.clone());
        let (store, log) = optimize_fresh(|c| model(c), &cfg, &bindings)?;
        write_curve(&flags.out.join(format!("elbo-{tag}.csv")), &log)?;
        metrics.insert(format!("final_elbo_{tag}"), log.tail_mean(10));
        last = Some((store, log));
    }
    let (store, log) = last.unwrap();
    graph.save(&flags.out.join("graph.json"))?;
    finish("qmr-ablation", flags, log, metrics, &store, t0)
}

fn run_lda(name: &str, flags: &RunFlags) -> Result<ExperimentResult> {
    let t0 = Instant::now();
    let corpus = match &flags.data {
        Some(p) => load_corpus(p, flags.limit)?,
        None => lda::Corpus::synthetic(50, 40, 200, 5, &mut stream(LDA_CORPUS_SEED, &[label::DATA])),
    };
    let v = corpus.vocab_size();
    let b = batch_for(flags, Batch::Full, corpus.num_docs());
    let lcfg = lda::LdaConfig::default();
    let model: Box<dyn Fn(&mut Ctx) -> Result<()>> = match name {
        "lda-mf" => {
            let m = lda::mean_field(lcfg, v, b);
            Box::new(move |c| m(c).map(|_| ()))
        }
        "lda-marginal" => {
            let m = lda::marginalized(lcfg, v, b);
            Box::new(move |c| m(c).map(|_| ()))
        }
        "lda-word" => {
            let m = lda::word_level(lcfg, v, b);
            Box::new(move |c| m(c).map(|_| ()))
        }
        _ => {
            let m = lda::doc_level(lcfg, v, b);
            Box::new(move |c| m(c).map(|_| ()))
        }
    };

    let cfg = opt_config(flags, 300, 0.01);
    let (store, log) = optimize_fresh(|c| model(c), &cfg, &bind_one("corpus", corpus))?;

    let mut metrics = BTreeMap::new();
    metrics.insert("final_elbo".into(), log.tail_mean(10));
    finish(name, flags, log, metrics, &store, t0)
}

fn run_images(name: &str, flags: &RunFlags) -> Result<ExperimentResult> {
    let t0 = Instant::now();
    let dataset = match &flags.data {
        Some(p) => images::ImageDataset::load_idx(p, flags.limit)?,
        None => images::ImageDataset::synthetic_glyphs(
            flags.limit.unwrap_or(1000),
            &mut stream(GLYPH_SEED, &[label::DATA]),
        ),
    };
    let dim = dataset.dim();
    let b = batch_for(flags, Batch::Size(100), dataset.len());
    let build = |batch: Batch| -> Box<dyn Fn(&mut Ctx) -> Result<Vec<Vec<f64>>>> {
        if name == "vae" {
            Box::new(images::vae(dim, 500, 20, batch))
        } else {
            Box::new(images::sbn(dim, 200, batch))
        }
    };
    let model = build(b);

    let cfg = opt_config(flags, 2000, 0.001);
    let (mut store, log) =
        optimize_fresh(|c| model(c), &cfg, &bind_one("images", dataset.clone()))?;

    // reconstructions of the first few images through the trained guide
    let probe: Vec<Vec<f64>> = dataset.images.iter().take(8).cloned().collect();
    let probe_set = images::ImageDataset::new(dataset.width, dataset.height, probe.clone())?;
    let eval_model = build(Batch::Full);
    let (means, _) = forward_sample(
        |c| eval_model(c),
        &mut store,
        true,
        &mut stream(flags.seed, &[label::EVAL]),
        &bind_one("images", probe_set),
    )?;
    std::fs::create_dir_all(&flags.out)?;
    let recon = serde_json::json!({ "images": probe, "means": means });
    std::fs::write(
        flags.out.join("reconstructions.json"),
        serde_json::to_string_pretty(&recon)? + "\n",
    )?;

    let mut metrics = BTreeMap::new();
    metrics.insert("final_elbo".into(), log.tail_mean(10));
    finish(name, flags, log, metrics, &store, t0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let p = std::env::temp_dir().join(format!("gppl_{}_{}", name, std::process::id()));
        let _ = std::fs::remove_dir_all(&p);
        p
    }

    fn tiny_graph_file(dir: &Path) -> PathBuf {
        let g = qmr::Graph {
            disease_nodes: vec![
                qmr::DiseaseNode { prior_prob: 0.1 },
                qmr::DiseaseNode { prior_prob: 0.15 },
                qmr::DiseaseNode { prior_prob: 0.05 },
            ],
            symptom_nodes: vec![
                qmr::SymptomNode {
                    leak_prob: 0.05,
                    parents: vec![
                        qmr::ParentLink { index: 0, prob: 0.7 },
                        qmr::ParentLink { index: 2, prob: 0.4 },
                    ],
                },
                qmr::SymptomNode {
                    leak_prob: 0.02,
                    parents: vec![qmr::ParentLink { index: 1, prob: 0.6 }],
                },
            ],
        };
        std::fs::create_dir_all(dir).unwrap();
        let path = dir.join("graph.json");
        g.save(&path).unwrap();
        path
    }

    #[test]
    fn the_registry_lists_sixteen_experiments_and_rejects_strangers() {
        assert_eq!(EXPERIMENTS.len(), 16);
        for name in EXPERIMENTS {
            assert!(declared_metrics(name).is_some(), "{name} missing from the metrics table");
        }
        let err = run("mystery", &RunFlags::new(tmp("bad"))).unwrap_err();
        assert!(err.to_string().contains("unknown experiment"));
    }

    #[test]
    fn identical_seeds_write_identical_curves() {
        let go = |dir: PathBuf| {
            let mut flags = RunFlags::new(dir);
            flags.steps = Some(2);
            flags.seed = 5;
            run("gmm", &flags).unwrap()
        };
        let (d1, d2) = (tmp("det1"), tmp("det2"));
        let r1 = go(d1.clone());
        let r2 = go(d2.clone());

        let c1 = std::fs::read(d1.join("elbo.csv")).unwrap();
        let c2 = std::fs::read(d2.join("elbo.csv")).unwrap();
        assert_eq!(c1, c2, "same seed must give byte-identical curves");
        assert_eq!(String::from_utf8(c1).unwrap().lines().count(), 3, "header + 2 steps");

        for key in declared_metrics("gmm").unwrap() {
            assert!(r1.metrics.contains_key(*key), "missing metric {key}");
        }
        assert_eq!(r1.metrics["final_elbo"], r2.metrics["final_elbo"]);
        ParameterStore::load(&d1.join("params.json")).unwrap();
        for d in [d1, d2] {
            std::fs::remove_dir_all(d).unwrap();
        }
    }

    #[test]
    fn ablation_emits_three_tagged_curves() {
        let dir = tmp("abl");
        let mut flags = RunFlags::new(dir.clone());
        flags.steps = Some(2);
        flags.data = Some(tiny_graph_file(&dir));
        flags.limit = Some(30);
        let r = run("qmr-ablation", &flags).unwrap();
        for tag in ["none", "local", "baselines"] {
            assert!(dir.join(format!("elbo-{tag}.csv")).exists(), "missing {tag} curve");
            assert!(r.metrics.contains_key(&format!("final_elbo_{tag}")));
        }
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn data_files_override_the_bundled_sets() {
        let dir = tmp("data");
        let path = tiny_graph_file(&dir);
        let mut flags = RunFlags::new(dir.clone());
        flags.steps = Some(1);
        flags.data = Some(path.clone());
        flags.limit = Some(20);
        let r = run("qmr-factored", &flags).unwrap();
        assert!(r.metrics["f_guide"] >= 0.0 && r.metrics["f_guide"] <= 1.0);
        assert_eq!(
            qmr::Graph::load(&dir.join("graph.json")).unwrap(),
            qmr::Graph::load(&path).unwrap(),
            "the run must record the graph it used"
        );
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn image_and_topic_runs_produce_their_artifacts() {
        let dir = tmp("vae");
        let mut flags = RunFlags::new(dir.clone());
        flags.steps = Some(1);
        flags.limit = Some(120);
        run("vae", &flags).unwrap();
        let recon: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("reconstructions.json")).unwrap())
                .unwrap();
        let means = recon["means"].as_array().unwrap();
        assert_eq!(means.len(), 8);
        assert_eq!(means[0].as_array().unwrap().len(), 28 * 28);
        std::fs::remove_dir_all(dir).unwrap();

        let dir = tmp("lda");
        let mut flags = RunFlags::new(dir.clone());
        flags.steps = Some(1);
        flags.data = Some(dir.join("corpus.txt"));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("corpus.txt"), "a b c a\nb d d c\nc a d b\n").unwrap();
        run("lda-word", &flags).unwrap();
        assert!(dir.join("elbo.csv").exists());
        std::fs::remove_dir_all(dir).unwrap();
    }
}
