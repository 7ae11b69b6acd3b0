//! Bipartite noisy-or diagnosis network: latent binary causes (diseases)
//! wired to observed binary effects (symptoms).
//!
//! Patient records come from the `"records"` binding (`Vec<Vec<f64>>` of
//! 0/1 symptom vectors). Three guide programs are provided: one net that
//! predicts all causes jointly from the symptoms, an independent net per
//! cause, and the per-cause nets extended with a GRU that feeds each
//! sampled cause back into the prediction of the next.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution as _;
use serde::{Deserialize, Serialize};

use crate::dists::{Dist, Value};
use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec};
use crate::runtime::{Batch, Ctx};
use crate::tensor::Tensor;

pub const GRU_HIDDEN: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiseaseNode {
    #[serde(rename = "priorProb")]
    pub prior_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParentLink {
    pub index: usize,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymptomNode {
    #[serde(rename = "leakProb")]
    pub leak_prob: f64,
    pub parents: Vec<ParentLink>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    #[serde(rename = "diseaseNodes")]
    pub disease_nodes: Vec<DiseaseNode>,
    #[serde(rename = "symptomNodes")]
    pub symptom_nodes: Vec<SymptomNode>,
}

impl Graph {
    pub fn num_diseases(&self) -> usize {
        self.disease_nodes.len()
    }

    pub fn num_symptoms(&self) -> usize {
        self.symptom_nodes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| p > 0.0 && p < 1.0;
        for (i, d) in self.disease_nodes.iter().enumerate() {
            if !unit(d.prior_prob) {
                return Err(Error::data(format!("disease {i}: prior {} outside (0,1)", d.prior_prob)));
            }
        }
        for (j, s) in self.symptom_nodes.iter().enumerate() {
            if !unit(s.leak_prob) {
                return Err(Error::data(format!("symptom {j}: leak {} outside (0,1)", s.leak_prob)));
            }
            for p in &s.parents {
                if p.index >= self.disease_nodes.len() {
                    return Err(Error::data(format!(
                        "symptom {j}: parent index {} out of {}",
                        p.index,
                        self.disease_nodes.len()
                    )));
                }
                if !unit(p.prob) {
                    return Err(Error::data(format!("symptom {j}: link prob {} outside (0,1)", p.prob)));
                }
            }
        }
        Ok(())
    }

    /// Random sparse graph: disease priors ~ U(0.01, 0.2); each symptom gets
    /// 1 + Binomial(4, 0.5) distinct parents with link probs ~ U(0.2, 0.9)
    /// and a leak ~ U(0.01, 0.1).
    pub fn generate(n_diseases: usize, n_symptoms: usize, rng: &mut ChaCha8Rng) -> Graph {
        assert!(n_diseases >= 1 && n_symptoms >= 1);
        let disease_nodes = (0..n_diseases)
            .map(|_| DiseaseNode { prior_prob: rng.gen_range(0.01..0.2) })
            .collect();
        let extra = rand_distr::Binomial::new(4, 0.5).unwrap();
        let symptom_nodes = (0..n_symptoms)
            .map(|_| {
                let k = (1 + extra.sample(rng) as usize).min(n_diseases);
                let mut idx = rand::seq::index::sample(rng, n_diseases, k).into_vec();
                idx.sort_unstable();
                SymptomNode {
                    leak_prob: rng.gen_range(0.01..0.1),
                    parents: idx
                        .into_iter()
                        .map(|index| ParentLink { index, prob: rng.gen_range(0.2..0.9) })
                        .collect(),
                }
            })
            .collect();
        Graph { disease_nodes, symptom_nodes }
    }

    pub fn from_json(s: &str) -> Result<Graph> {
        let g: Graph = serde_json::from_str(s)?;
        g.validate()?;
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Graph> {
        Graph::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// 1 - (1-leak) * prod over active parents of (1-prob).
pub fn noisy_or_prob(symptom: &SymptomNode, diseases: &[bool]) -> f64 {
    let cp: f64 = symptom
        .parents
        .iter()
        .map(|p| if diseases[p.index] { 1.0 - p.prob } else { 1.0 })
        .product();
    1.0 - (1.0 - symptom.leak_prob) * cp
}

/// Sample effects from the noisy-or likelihood at a fixed cause assignment.
pub fn hallucinate(graph: &Graph, diseases: &[bool], rng: &mut ChaCha8Rng) -> Vec<bool> {
    graph
        .symptom_nodes
        .iter()
        .map(|s| rng.gen::<f64>() < noisy_or_prob(s, diseases))
        .collect()
}

/// Forward-simulated patient records (0/1 symptom vectors).
pub fn generate_records(graph: &Graph, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let diseases: Vec<bool> =
                graph.disease_nodes.iter().map(|d| rng.gen::<f64>() < d.prior_prob).collect();
            hallucinate(graph, &diseases, rng)
                .into_iter()
                .map(|s| if s { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

/// min(F(a,b), F(b,a)) with F(x,y) = |x AND y| / |x|; None when either
/// vector has no active entries (callers skip and count those records).
pub fn f_score(e_true: &[bool], e_sampled: &[bool]) -> Option<f64> {
    assert_eq!(e_true.len(), e_sampled.len());
    fn dir(a: &[bool], b: &[bool]) -> Option<f64> {
        let denom = a.iter().filter(|&&x| x).count();
        if denom == 0 {
            return None;
        }
        let hits = a.iter().zip(b).filter(|&(&x, &y)| x && y).count();
        Some(hits as f64 / denom as f64)
    }
    match (dir(e_true, e_sampled), dir(e_sampled, e_true)) {
        (Some(x), Some(y)) => Some(x.min(y)),
        _ => None,
    }
}

fn check_record(graph: &Graph, rec: &[f64]) -> Result<()> {
    if rec.len() != graph.num_symptoms() {
        return Err(Error::data(format!(
            "record has {} symptoms, graph has {}",
            rec.len(),
            graph.num_symptoms()
        )));
    }
    Ok(())
}

fn observe_symptoms(
    c: &mut Ctx,
    graph: &Graph,
    sym_idx: &[usize],
    rec: &[f64],
    diseases: &[bool],
) -> Result<()> {
    c.map_data("sym", sym_idx, Batch::Full, |c, &j| {
        let p = noisy_or_prob(&graph.symptom_nodes[j], diseases);
        c.observe(&Dist::bernoulli(p), &Value::Bool(rec[j] == 1.0))
    })?;
    Ok(())
}

/// One net reads the symptoms and predicts every cause probability jointly.
pub fn joint(graph: Graph, batch: Batch) -> impl Fn(&mut Ctx) -> Result<Vec<Vec<bool>>> {
    let net = LayerSpec::mlp(
        "guideNet",
        graph.num_symptoms(),
        &[(graph.num_diseases(), Activation::Sigmoid)],
    );
    let sym_idx: Vec<usize> = (0..graph.num_symptoms()).collect();
    move |c| {
        let records = c.data::<Vec<Vec<f64>>>("records")?;
        c.map_data("patient", &records, batch.clone(), |c, rec| {
            check_record(&graph, rec)?;
            let probs = c.nn(&net, &Tensor::vector(rec.clone()))?;
            let mut diseases = Vec::with_capacity(graph.num_diseases());
            for (i, node) in graph.disease_nodes.iter().enumerate() {
                let x = c
                    .sample_guided(
                        &format!("d{i}"),
                        &Dist::bernoulli(node.prior_prob),
                        Dist::Bernoulli { p: probs.get(i)? },
                    )?
                    .as_bool()?;
                diseases.push(x);
            }
            observe_symptoms(c, &graph, &sym_idx, rec, &diseases)?;
            Ok(diseases)
        })
    }
}

/// A separate single-output net predicts each cause independently.
pub fn factored(graph: Graph, batch: Batch) -> impl Fn(&mut Ctx) -> Result<Vec<Vec<bool>>> {
    let nets: Vec<LayerSpec> = (0..graph.num_diseases())
        .map(|i| {
            LayerSpec::mlp(
                &format!("predictNet_{i}"),
                graph.num_symptoms(),
                &[(1, Activation::Sigmoid)],
            )
        })
        .collect();
    let sym_idx: Vec<usize> = (0..graph.num_symptoms()).collect();
    move |c| {
        let records = c.data::<Vec<Vec<f64>>>("records")?;
        c.map_data("patient", &records, batch.clone(), |c, rec| {
            check_record(&graph, rec)?;
            let sym = Tensor::vector(rec.clone());
            let mut diseases = Vec::with_capacity(graph.num_diseases());
            for (i, node) in graph.disease_nodes.iter().enumerate() {
                let p = c.nn(&nets[i], &sym)?.get(0)?;
                let x = c
                    .sample_guided(
                        &format!("d{i}"),
                        &Dist::bernoulli(node.prior_prob),
                        Dist::Bernoulli { p },
                    )?
                    .as_bool()?;
                diseases.push(x);
            }
            observe_symptoms(c, &graph, &sym_idx, rec, &diseases)?;
            Ok(diseases)
        })
    }
}

/// Per-cause nets that also read a GRU hidden state; each sampled cause is
/// fed back into the state, so later predictions can depend on earlier
/// draws.
pub fn factored_gru(graph: Graph, batch: Batch) -> impl Fn(&mut Ctx) -> Result<Vec<Vec<bool>>> {
    let nets: Vec<LayerSpec> = (0..graph.num_diseases())
        .map(|i| {
            LayerSpec::mlp(
                &format!("predictNet_{i}"),
                graph.num_symptoms() + GRU_HIDDEN,
                &[(1, Activation::Sigmoid)],
            )
        })
        .collect();
    let gru = LayerSpec::gru("gru", 1, GRU_HIDDEN);
    let sym_idx: Vec<usize> = (0..graph.num_symptoms()).collect();
    move |c| {
        let records = c.data::<Vec<Vec<f64>>>("records")?;
        c.map_data("patient", &records, batch.clone(), |c, rec| {
            check_record(&graph, rec)?;
            let sym = Tensor::vector(rec.clone());
            let mut h = Tensor::zeros(vec![GRU_HIDDEN]);
            let mut diseases = Vec::with_capacity(graph.num_diseases());
            for (i, node) in graph.disease_nodes.iter().enumerate() {
                let inp = Tensor::concat(&[&sym, &h])?;
                let p = c.nn(&nets[i], &inp)?.get(0)?;
                let x = c
                    .sample_guided(
                        &format!("d{i}"),
                        &Dist::bernoulli(node.prior_prob),
                        Dist::Bernoulli { p },
                    )?
                    .as_bool()?;
                h = c.gru(&gru, &h, &Tensor::vector(vec![if x { 1.0 } else { 0.0 }]))?;
                diseases.push(x);
            }
            observe_symptoms(c, &graph, &sym_idx, rec, &diseases)?;
            Ok(diseases)
        })
    }
}
