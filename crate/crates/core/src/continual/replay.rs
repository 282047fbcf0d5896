use std::path::Path;

use rand::seq::index;
use rand_distr::{Distribution, Normal};

use crate::htg::{HeteroTradeGraph, ReplaySample};
use crate::rng::rng_from_seed;
use crate::{Error, Result};

pub const DEFAULT_SIGMA_SCALE: f64 = 0.1;

/// Labelled transactions sampled from one region for replay in the next.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    pub source_region: u32,
    pub ratio: f64,
    pub samples: Vec<ReplaySample>,
}

impl ReplayBuffer {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Uniform sample without replacement of `round(ratio * |nodes|)` of the
/// given transaction nodes, kept in node order.
pub fn sample_replay_buffer(
    g: &HeteroTradeGraph,
    nodes: &[usize],
    source_region: u32,
    ratio: f64,
    seed: u64,
) -> Result<ReplayBuffer> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::config(
            "replay_ratio",
            format!("must lie in (0, 1], got {ratio}"),
        ));
    }
    if nodes.is_empty() {
        return Err(Error::Empty(format!(
            "region {source_region} has no transactions to replay"
        )));
    }
    if let Some(i) = nodes.iter().find(|&&i| i >= g.num_transactions()) {
        return Err(Error::Dimension(format!(
            "replay candidate {i} is not a transaction node"
        )));
    }
    let k = (ratio * nodes.len() as f64).round() as usize;
    let mut picked = index::sample(&mut rng_from_seed(seed), nodes.len(), k).into_vec();
    picked.sort_unstable();
    Ok(ReplayBuffer {
        source_region,
        ratio,
        samples: picked.into_iter().map(|p| g.sample(nodes[p])).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassPrototype {
    pub is_fraud: bool,
    pub count: usize,
    pub mean: Vec<f64>,
    /// Per-dimension Gaussian scale used for this class's twins.
    pub sigma: Vec<f64>,
}

/// Per-class prototypes and one Gaussian twin per buffered sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    pub prototypes: Vec<ClassPrototype>,
    pub twins: Vec<ReplaySample>,
    pub warnings: Vec<String>,
}

impl PrototypeSet {
    pub fn prototype(&self, is_fraud: bool) -> Option<&ClassPrototype> {
        self.prototypes.iter().find(|p| p.is_fraud == is_fraud)
    }
}

fn class_prototype(samples: &[&ReplaySample], is_fraud: bool, sigma_scale: f64) -> ClassPrototype {
    let width = samples[0].features.len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; width];
    for s in samples {
        mean.iter_mut().zip(&s.features).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; width];
    for s in samples {
        for ((v, x), m) in var.iter_mut().zip(&s.features).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let sigma = var.iter().map(|v| sigma_scale * (v / n).sqrt()).collect();
    ClassPrototype {
        is_fraud,
        count: samples.len(),
        mean,
        sigma,
    }
}

/// Twins sit at their class mean plus `Normal(0, sigma^2)` noise with
/// `sigma = sigma_scale * class std`, and keep their source's label and
/// entity ids. A twin's id is its source id with a `#twin` suffix.
pub fn generate_prototypes(buf: &ReplayBuffer, sigma_scale: f64, seed: u64) -> Result<PrototypeSet> {
    if !sigma_scale.is_finite() || sigma_scale < 0.0 {
        return Err(Error::config(
            "sigma_scale",
            format!("must be finite and nonnegative, got {sigma_scale}"),
        ));
    }
    if buf.is_empty() {
        return Err(Error::Empty("cannot build prototypes from an empty buffer".into()));
    }
    let mut prototypes = Vec::new();
    let mut warnings = Vec::new();
    for is_fraud in [false, true] {
        let members: Vec<&ReplaySample> = buf.samples.iter().filter(|s| s.is_fraud == is_fraud).collect();
        let class = if is_fraud { "fraud" } else { "legitimate" };
        match members.len() {
            0 => warnings.push(format!("buffer holds no {class} samples; no {class} twins generated")),
            1 => {
                warnings.push(format!(
                    "buffer holds a single {class} sample; its twins have zero spread"
                ));
                prototypes.push(class_prototype(&members, is_fraud, sigma_scale));
            }
            _ => prototypes.push(class_prototype(&members, is_fraud, sigma_scale)),
        }
    }
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = rng_from_seed(seed);
    let twins = buf
        .samples
        .iter()
        .map(|s| {
            let p = prototypes
                .iter()
                .find(|p| p.is_fraud == s.is_fraud)
                .expect("class present");
            let features = p
                .mean
                .iter()
                .zip(&p.sigma)
                .map(|(m, sd)| m + sd * std_normal.sample(&mut rng))
                .collect();
            ReplaySample {
                txn_id: format!("{}#twin", s.txn_id),
                features,
                ..s.clone()
            }
        })
        .collect();
    Ok(PrototypeSet {
        prototypes,
        twins,
        warnings,
    })
}

/// Writes replayed samples as a feature table and an entity/label table,
/// both keyed by transaction id.
pub fn write_replay_csv(samples: &[ReplaySample], features_path: &Path, entities_path: &Path) -> Result<()> {
    let width = samples.first().map_or(0, |s| s.features.len());
    let mut f = csv::Writer::from_writer(create(features_path)?);
    let mut header = vec!["txn_id".to_string()];
    header.extend((0..width).map(|k| format!("f{k}")));
    f.write_record(&header)?;
    for s in samples {
        let mut row = vec![s.txn_id.clone()];
        row.extend(s.features.iter().map(|v| v.to_string()));
        f.write_record(&row)?;
    }
    f.flush().map_err(|e| Error::io(features_path, e))?;
    let mut e = csv::Writer::from_writer(create(entities_path)?);
    e.write_record(["txn_id", "card_holder_id", "merchant_id", "time_slice", "is_fraud"])?;
    for s in samples {
        e.write_record([
            s.txn_id.as_str(),
            &s.card_holder_id,
            &s.merchant_id,
            &s.time_slice.to_string(),
            if s.is_fraud { "1" } else { "0" },
        ])?;
    }
    e.flush().map_err(|err| Error::io(entities_path, err))?;
    Ok(())
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| Error::io(path, e))
}
