use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::auc_score;
use super::optimizer::{optimizer_step, OptimizerState};
use crate::continual::{FisherState, DEFAULT_SIGMA_SCALE};
use crate::htg::{HeteroTradeGraph, MetaPathAdjacency};
use crate::model::{backward, forward, ForwardTrace, Hyperparams, LossTerm, ModelParams};
use crate::{Error, Result};

/// Which forgetting-prevention components are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoRps,
    NoPkr,
    Naive,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoRps, Variant::NoPkr, Variant::Naive];

    /// Replay buffer and prototype twins are merged into the next region.
    pub fn uses_replay(self) -> bool {
        matches!(self, Variant::Full | Variant::NoRps)
    }

    /// The Fisher-weighted smoothing loss is added to the objective.
    pub fn uses_smoothing(self) -> bool {
        matches!(self, Variant::Full | Variant::NoPkr)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRps => "no_rps",
            Variant::NoPkr => "no_pkr",
            Variant::Naive => "naive",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| {
            Error::config(
                "variant",
                format!("unknown variant `{s}` (expected full, no_rps, no_pkr or naive)"),
            )
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub replay_ratio: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub sigma_scale: f64,
    pub variant: Variant,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            weight_decay: 0.001,
            max_epochs: 200,
            patience: 20,
            replay_ratio: 0.15,
            lambda: 1.5,
            gamma: 0.00025,
            sigma_scale: DEFAULT_SIGMA_SCALE,
            variant: Variant::Full,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("learning_rate", self.learning_rate)];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::config(name, format!("must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("weight_decay", self.weight_decay),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("sigma_scale", self.sigma_scale),
        ];
        for (name, v) in nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be positive"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::config(
                "patience",
                format!("{} exceeds max_epochs {}", self.patience, self.max_epochs),
            ));
        }
        if !(self.replay_ratio > 0.0 && self.replay_ratio <= 1.0) {
            return Err(Error::config(
                "replay_ratio",
                format!("must lie in (0, 1], got {}", self.replay_ratio),
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config(
                "threshold",
                format!("must lie in (0, 1), got {}", self.threshold),
            ));
        }
        Ok(())
    }
}

/// Transaction node indices used for fitting and for early stopping.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training objective before the update, extra terms included.
    pub loss: f64,
    pub val_auc: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub epoch_seconds: Vec<f64>,
}

fn node_values(trace: &ForwardTrace, g: &HeteroTradeGraph, nodes: &[usize]) -> (Vec<f64>, Vec<bool>) {
    let labels = g.labels();
    nodes.iter().map(|&i| (trace.predictions[i], labels[i])).unzip()
}

/// Validation AUC and loss; AUC is absent when the split is single-class.
fn validation(trace: &ForwardTrace, g: &HeteroTradeGraph, val: &[usize]) -> Result<(Option<f64>, Option<f64>)> {
    if val.is_empty() {
        return Ok((None, None));
    }
    let (scores, labels) = node_values(trace, g, val);
    let auc = match auc_score(&scores, &labels) {
        Ok(a) => Some(a),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    Ok((auc, Some(trace.loss(&g.label_values(), val)?)))
}

/// Full-graph Adam training on the cross-entropy of `split.train` plus the
/// smoothing loss when `state` is given. Stops once validation AUC (or
/// validation loss when AUC is undefined, or training loss when there is
/// no validation split) has not improved for `patience` epochs.
pub fn train_region(
    g: &HeteroTradeGraph,
    adjs: &[MetaPathAdjacency],
    params: ModelParams,
    hp: &Hyperparams,
    cfg: &TrainConfig,
    split: &NodeSplit,
    state: Option<&FisherState>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Empty("no labelled training nodes".into()));
    }
    if let Some(s) = state {
        s.check_layout(&params)?;
    }
    let labels = g.label_values();
    let mut params = params;
    let mut opt = OptimizerState::new(&params);
    let mut trace = forward(g, adjs, &params, hp)?;
    let mut best: Option<(f64, ModelParams, usize)> = None;
    let mut since = 0;
    let mut history = Vec::new();
    let mut epoch_seconds = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let mut loss = trace.loss(&labels, &split.train)?;
        let mut grads = backward(g, adjs, &params, hp, &trace, &split.train)?;
        if let Some(s) = state {
            loss += s.value(&params);
            s.add_gradient(&params, &mut grads);
        }
        optimizer_step(&mut params, &grads, &mut opt, cfg.learning_rate, cfg.weight_decay)?;
        trace = forward(g, adjs, &params, hp)?;
        let (val_auc, val_loss) = validation(&trace, g, &split.val)?;
        let monitor = match (val_auc, val_loss) {
            (Some(a), _) => a,
            (None, Some(l)) => -l,
            (None, None) => -trace.loss(&labels, &split.train)?,
        };
        history.push(EpochRecord {
            epoch,
            loss,
            val_auc,
            val_loss,
        });
        if best.as_ref().is_none_or(|(b, _, _)| monitor > *b) {
            best = Some((monitor, params.clone(), epoch));
            since = 0;
        } else {
            since += 1;
        }
        epoch_seconds.push(start.elapsed().as_secs_f64());
        if since >= cfg.patience {
            break;
        }
    }
    let (_, params, best_epoch) = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        params,
        best_epoch,
        history,
        epoch_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{test_record, Dataset, Provenance};
    use crate::htg::{build_htg, extract_metapath_neighbors, random_dataset, MetaPathSpec};

    fn hp() -> Hyperparams {
        Hyperparams {
            hidden: 8,
            heads: 2,
            semantic_hidden: 8,
            ..Hyperparams::default()
        }
    }

    fn adjs(g: &HeteroTradeGraph) -> Vec<MetaPathAdjacency> {
        MetaPathSpec::standard()
            .iter()
            .map(|s| extract_metapath_neighbors(g, s).unwrap())
            .collect()
    }

    /// Two planted attributes with the classes a margin of 1 apart along
    /// their sum; each transaction has its own card and merchant.
    fn separable(n: usize) -> HeteroTradeGraph {
        let recs = (0..n)
            .map(|i| {
                let fraud = i % 3 == 0;
                let mut r = test_record(
                    &format!("t{i}"),
                    &format!("c{i}"),
                    &format!("m{i}"),
                    "2019-01-01 12:00:00",
                    fraud,
                );
                let t = (i % 7) as f64 / 7.0;
                let side = if fraud { 1.0 } else { -1.0 };
                r.attributes = vec![t + side, side - t];
                r.amount = 10.0;
                r.category = "misc".into();
                r
            })
            .collect();
        build_htg(&Dataset::new(recs, Provenance::Ingested, None)).unwrap()
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("both".parse::<Variant>(), Err(Error::Config { .. })));
        assert!(Variant::Full.uses_replay() && Variant::Full.uses_smoothing());
        assert!(!Variant::Naive.uses_replay() && !Variant::Naive.uses_smoothing());
        assert!(Variant::NoRps.uses_replay() && !Variant::NoRps.uses_smoothing());
        assert!(!Variant::NoPkr.uses_replay() && Variant::NoPkr.uses_smoothing());
    }

    #[test]
    fn config_validation_names_fields() {
        let bad = TrainConfig {
            patience: 300,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { ref field, .. }) if field == "patience"));
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { ref field, .. }) if field == "learning_rate"));
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn separable_region_is_learned() {
        let g = separable(60);
        let a = adjs(&g);
        let all: Vec<usize> = (0..60).collect();
        let split = NodeSplit {
            train: all.clone(),
            val: all.clone(),
        };
        let p = ModelParams::init(g.feature_width(), &MetaPathSpec::standard(), &hp(), 3).unwrap();
        let cfg = TrainConfig {
            patience: 200,
            ..TrainConfig::default()
        };
        let out = train_region(&g, &a, p, &hp(), &cfg, &split, None).unwrap();
        let trace = forward(&g, &a, &out.params, &hp()).unwrap();
        let auc = auc_score(&trace.predictions, g.labels()).unwrap();
        assert!(auc >= 0.99, "training AUC {auc}");
        assert!(out.history.len() <= 200);
    }

    #[test]
    fn zero_patience_runs_one_epoch() {
        let g = build_htg(&random_dataset(1, 30, 4, 4)).unwrap();
        let a = adjs(&g);
        let split = NodeSplit {
            train: (0..20).collect(),
            val: (20..30).collect(),
        };
        let p = ModelParams::init(g.feature_width(), &MetaPathSpec::standard(), &hp(), 1).unwrap();
        let cfg = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        let out = train_region(&g, &a, p, &hp(), &cfg, &split, None).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn training_is_deterministic() {
        let g = build_htg(&random_dataset(2, 40, 4, 4)).unwrap();
        let a = adjs(&g);
        let split = NodeSplit {
            train: (0..30).collect(),
            val: (30..40).collect(),
        };
        let p = ModelParams::init(g.feature_width(), &MetaPathSpec::standard(), &hp(), 2).unwrap();
        let cfg = TrainConfig {
            max_epochs: 15,
            patience: 5,
            ..TrainConfig::default()
        };
        let x = train_region(&g, &a, p.clone(), &hp(), &cfg, &split, None).unwrap();
        let y = train_region(&g, &a, p, &hp(), &cfg, &split, None).unwrap();
        assert_eq!(x.params, y.params);
        assert_eq!(x.history, y.history);
    }

    #[test]
    fn smoothing_pulls_towards_the_anchor() {
        let g = build_htg(&random_dataset(3, 40, 4, 4)).unwrap();
        let a = adjs(&g);
        let split = NodeSplit {
            train: (0..30).collect(),
            val: (30..40).collect(),
        };
        let p = ModelParams::init(g.feature_width(), &MetaPathSpec::standard(), &hp(), 3).unwrap();
        let mut fisher = p.zeros_like();
        fisher.fill(1.0);
        let state = FisherState::new(fisher, p.clone(), 1e4, 0.0).unwrap();
        let cfg = TrainConfig {
            max_epochs: 10,
            patience: 10,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let free = train_region(&g, &a, p.clone(), &hp(), &cfg, &split, None).unwrap();
        let held = train_region(&g, &a, p.clone(), &hp(), &cfg, &split, Some(&state)).unwrap();
        assert!(state.weighted_distance(&held.params) < state.weighted_distance(&free.params));
    }

    #[test]
    fn empty_training_split_is_rejected() {
        let g = build_htg(&random_dataset(4, 10, 2, 2)).unwrap();
        let p = ModelParams::init(g.feature_width(), &MetaPathSpec::standard(), &hp(), 4).unwrap();
        let err = train_region(
            &g,
            &adjs(&g),
            p,
            &hp(),
            &TrainConfig::default(),
            &NodeSplit::default(),
            None,
        );
        assert!(matches!(err, Err(Error::Empty(_))));
    }
}
