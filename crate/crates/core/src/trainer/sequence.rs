use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, CurveRow, Metrics};
use super::train::{train_region, EpochRecord, NodeSplit, TrainConfig, Variant};
use crate::continual::{compute_fisher, generate_prototypes, sample_replay_buffer, FisherState, ReplayBuffer};
use crate::data::{split_indices, Dataset, SplitRatios};
use crate::htg::{
    build_htg, extract_metapath_neighbors, merge_replay_into_htg, HeteroTradeGraph, MetaPathAdjacency, MetaPathSpec,
    ReplaySample,
};
use crate::model::{forward, Hyperparams, ModelParams};
use crate::rng::derive_seed;
use crate::{Error, Result};

/// Everything a training run needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub meta_paths: Vec<String>,
    pub split: SplitRatios,
    pub model: Hyperparams,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            meta_paths: MetaPathSpec::standard().iter().map(|s| s.name().to_string()).collect(),
            split: SplitRatios::default(),
            model: Hyperparams::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.meta_path_specs()?;
        self.split.validate()?;
        self.model.validate()?;
        self.train.validate()
    }

    pub fn meta_path_specs(&self) -> Result<Vec<MetaPathSpec>> {
        if self.meta_paths.is_empty() {
            return Err(Error::config("meta_paths", "at least one meta-path is required"));
        }
        self.meta_paths
            .iter()
            .map(|m| MetaPathSpec::from_name(m).map_err(|e| Error::config("meta_paths", e.to_string())))
            .collect()
    }
}

/// One region's transactions in arrival order.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionData {
    pub region_id: u32,
    pub dataset: Dataset,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    /// 1-based index of the task just finished.
    pub task_index: usize,
    pub region_id: u32,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub region_id: u32,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Means over regions; AUC averages only the regions where it is defined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AverageMetrics {
    pub recall: f64,
    pub auc: Option<f64>,
    pub f1: f64,
}

impl AverageMetrics {
    pub fn of(metrics: &[Metrics]) -> Self {
        let n = metrics.len().max(1) as f64;
        let aucs: Vec<f64> = metrics.iter().filter_map(|m| m.auc).collect();
        Self {
            recall: metrics.iter().map(|m| m.recall).sum::<f64>() / n,
            auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
            f1: metrics.iter().map(|m| m.f1).sum::<f64>() / n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_index: usize,
    pub region_id: u32,
    pub train_nodes: usize,
    pub replay_nodes: usize,
    pub twin_nodes: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub warnings: Vec<String>,
}

/// Deterministic outcome of a sequence run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: Variant,
    pub seed: u64,
    pub region_ids: Vec<u32>,
    /// Metrics on every seen region after each task.
    pub checkpoints: Vec<CheckpointMetrics>,
    /// Metrics of the final model on every region.
    pub final_metrics: Vec<RegionMetrics>,
    pub average: AverageMetrics,
    pub tasks: Vec<TaskSummary>,
}

impl MetricsReport {
    /// AUC of the final model on region `region_id`.
    pub fn final_auc(&self, region_id: u32) -> Option<f64> {
        self.final_metrics
            .iter()
            .find(|m| m.region_id == region_id)?
            .metrics
            .auc
    }
}

/// `(task_index, region_id, auc)` for every seen region after every task.
pub fn emit_forgetting_curves(report: &MetricsReport) -> Vec<CurveRow> {
    report
        .checkpoints
        .iter()
        .map(|c| CurveRow {
            task_index: c.task_index,
            region_id: c.region_id,
            auc: c.metrics.auc,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskTiming {
    pub task_index: usize,
    pub region_id: u32,
    pub epoch_seconds: Vec<f64>,
    pub fisher_seconds: f64,
    pub total_seconds: f64,
}

/// Wall-clock measurements, kept apart from the reproducible report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub tasks: Vec<TaskTiming>,
    pub total_seconds: f64,
}

/// State carried across one task boundary.
#[derive(Clone, Debug)]
pub struct TaskArtifacts {
    pub task_index: usize,
    pub region_id: u32,
    pub params: ModelParams,
    /// Present when a later task will use the smoothing loss.
    pub fisher: Option<FisherState>,
    pub replay: Option<ReplayBuffer>,
    pub twins: Vec<ReplaySample>,
}

#[derive(Clone, Debug)]
pub struct SequenceOutcome {
    pub report: MetricsReport,
    pub timings: Timings,
    pub tasks: Vec<TaskArtifacts>,
}

/// A region's graph with its own node split.
struct PreparedRegion {
    region_id: u32,
    graph: HeteroTradeGraph,
    adjs: Vec<MetaPathAdjacency>,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn adjacencies(g: &HeteroTradeGraph, specs: &[MetaPathSpec]) -> Result<Vec<MetaPathAdjacency>> {
    specs.iter().map(|s| extract_metapath_neighbors(g, s)).collect()
}

fn prepare(
    region: &RegionData,
    cfg: &ExperimentConfig,
    ratios: SplitRatios,
    specs: &[MetaPathSpec],
) -> Result<PreparedRegion> {
    let graph = build_htg(&region.dataset)?;
    let [train, val, test] = split_indices(
        graph.num_transactions(),
        ratios,
        derive_seed(cfg.seed, "split", u64::from(region.region_id)),
    )?;
    Ok(PreparedRegion {
        region_id: region.region_id,
        adjs: adjacencies(&graph, specs)?,
        graph,
        train,
        val,
        test,
    })
}

fn evaluate_region(r: &PreparedRegion, params: &ModelParams, hp: &Hyperparams, threshold: f64) -> Result<Metrics> {
    let trace = forward(&r.graph, &r.adjs, params, hp)?;
    let labels = r.graph.labels();
    let (scores, ys): (Vec<f64>, Vec<bool>) = r.test.iter().map(|&i| (trace.predictions[i], labels[i])).unzip();
    evaluate(&scores, &ys, threshold)
}

/// Trains on each region in turn. Before moving from region `l` to `l+1`
/// the finished parameters are frozen as the smoothing anchor with Fisher
/// importances from region `l`'s training nodes, and a replay buffer plus
/// prototype twins drawn from those nodes are merged into region `l+1`'s
/// graph as extra training nodes. The variant switches either part off.
/// After every task the model is scored on the test split of every region
/// seen so far; the last round is the final report.
pub fn run_sequence(regions: &[RegionData], cfg: &ExperimentConfig) -> Result<SequenceOutcome> {
    let start = Instant::now();
    cfg.validate()?;
    let first = regions
        .first()
        .ok_or_else(|| Error::Empty("no regions to train on".into()))?;
    let specs = cfg.meta_path_specs()?;
    let hp = &cfg.model;
    let tc = &cfg.train;
    let width = first
        .dataset
        .feature_width()
        .ok_or_else(|| Error::Empty(format!("region {} has no transactions", first.region_id)))?;
    let mut params = ModelParams::init(width, &specs, hp, derive_seed(cfg.seed, "init", 0))?;
    let mut seen: Vec<PreparedRegion> = Vec::new();
    let mut checkpoints = Vec::new();
    let mut summaries = Vec::new();
    let mut timings = Timings::default();
    let mut tasks: Vec<TaskArtifacts> = Vec::new();
    for (t, region) in regions.iter().enumerate() {
        let task_start = Instant::now();
        let task_index = t + 1;
        let prepared = prepare(region, cfg, cfg.split, &specs)?;
        if prepared.graph.feature_width() != width {
            return Err(Error::Dimension(format!(
                "region {} has {} features, region {} has {width}",
                region.region_id,
                prepared.graph.feature_width(),
                first.region_id
            )));
        }
        let previous = tasks.last();
        let (replay, twins) = match previous {
            Some(p) => (p.replay.as_ref().map_or(&[][..], |b| &b.samples[..]), &p.twins[..]),
            None => (&[][..], &[][..]),
        };
        let mut train = prepared.train.clone();
        let merged;
        let (graph, adjs) = if replay.is_empty() && twins.is_empty() {
            (&prepared.graph, &prepared.adjs)
        } else {
            let extra: Vec<ReplaySample> = replay.iter().chain(twins).cloned().collect();
            let g = merge_replay_into_htg(&prepared.graph, &extra)?;
            train.extend(prepared.graph.num_transactions()..g.num_transactions());
            let a = adjacencies(&g, &specs)?;
            merged = (g, a);
            (&merged.0, &merged.1)
        };
        let state = previous.and_then(|p| p.fisher.as_ref());
        let split = NodeSplit {
            train,
            val: prepared.val.clone(),
        };
        let outcome = train_region(graph, adjs, params, hp, tc, &split, state)?;
        params = outcome.params;
        seen.push(prepared);
        for r in &seen {
            checkpoints.push(CheckpointMetrics {
                task_index,
                region_id: r.region_id,
                metrics: evaluate_region(r, &params, hp, tc.threshold)?,
            });
        }

        let current = seen.last().expect("just pushed");
        let has_next = t + 1 < regions.len();
        let fisher_start = Instant::now();
        let fisher = if has_next && tc.variant.uses_smoothing() {
            let f = compute_fisher(&current.graph, &current.adjs, &params, hp, &current.train)?;
            Some(FisherState::new(f, params.clone(), tc.lambda, tc.gamma)?)
        } else {
            None
        };
        let fisher_seconds = fisher_start.elapsed().as_secs_f64();
        let mut warnings = Vec::new();
        let (buffer, new_twins) = if has_next && tc.variant.uses_replay() {
            let buf = sample_replay_buffer(
                &current.graph,
                &current.train,
                current.region_id,
                tc.replay_ratio,
                derive_seed(cfg.seed, "replay", task_index as u64),
            )?;
            let twins = if buf.is_empty() {
                Vec::new()
            } else {
                let set = generate_prototypes(&buf, tc.sigma_scale, derive_seed(cfg.seed, "twins", task_index as u64))?;
                warnings.extend(set.warnings);
                set.twins
            };
            (Some(buf), twins)
        } else {
            (None, Vec::new())
        };
        summaries.push(TaskSummary {
            task_index,
            region_id: region.region_id,
            train_nodes: current.train.len(),
            replay_nodes: replay.len(),
            twin_nodes: twins.len(),
            epochs_run: outcome.history.len(),
            best_epoch: outcome.best_epoch,
            history: outcome.history,
            warnings,
        });
        timings.tasks.push(TaskTiming {
            task_index,
            region_id: region.region_id,
            epoch_seconds: outcome.epoch_seconds,
            fisher_seconds,
            total_seconds: task_start.elapsed().as_secs_f64(),
        });
        tasks.push(TaskArtifacts {
            task_index,
            region_id: region.region_id,
            params: params.clone(),
            fisher,
            replay: buffer,
            twins: new_twins,
        });
    }
    let last = regions.len();
    let final_metrics: Vec<RegionMetrics> = checkpoints
        .iter()
        .filter(|c| c.task_index == last)
        .map(|c| RegionMetrics {
            region_id: c.region_id,
            metrics: c.metrics,
        })
        .collect();
    let average = AverageMetrics::of(&final_metrics.iter().map(|m| m.metrics).collect::<Vec<_>>());
    timings.total_seconds = start.elapsed().as_secs_f64();
    Ok(SequenceOutcome {
        report: MetricsReport {
            variant: tc.variant,
            seed: cfg.seed,
            region_ids: regions.iter().map(|r| r.region_id).collect(),
            checkpoints,
            final_metrics,
            average,
            tasks: summaries,
        },
        timings,
        tasks,
    })
}

/// Result of training and testing on one region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleReport {
    pub region_id: u32,
    pub seed: u64,
    pub train_fraction: f64,
    pub metrics: Metrics,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug)]
pub struct SingleOutcome {
    pub report: SingleReport,
    pub params: ModelParams,
    pub epoch_seconds: Vec<f64>,
}

/// Trains on `train_fraction` of one region, keeps the configured
/// validation fraction for early stopping and tests on the rest.
pub fn run_single(region: &RegionData, cfg: &ExperimentConfig, train_fraction: f64) -> Result<SingleOutcome> {
    cfg.validate()?;
    let val = cfg.split.val;
    let ratios = SplitRatios::new(train_fraction, val, 1.0 - train_fraction - val).map_err(|_| {
        Error::config(
            "train_fraction",
            format!("{train_fraction} leaves no test data next to validation {val}"),
        )
    })?;
    let specs = cfg.meta_path_specs()?;
    let r = prepare(region, cfg, ratios, &specs)?;
    let params = ModelParams::init(
        r.graph.feature_width(),
        &specs,
        &cfg.model,
        derive_seed(cfg.seed, "init", 0),
    )?;
    let split = NodeSplit {
        train: r.train.clone(),
        val: r.val.clone(),
    };
    let out = train_region(&r.graph, &r.adjs, params, &cfg.model, &cfg.train, &split, None)?;
    let metrics = evaluate_region(&r, &out.params, &cfg.model, cfg.train.threshold)?;
    Ok(SingleOutcome {
        report: SingleReport {
            region_id: region.region_id,
            seed: cfg.seed,
            train_fraction,
            metrics,
            epochs_run: out.history.len(),
            best_epoch: out.best_epoch,
            history: out.history,
        },
        params: out.params,
        epoch_seconds: out.epoch_seconds,
    })
}
