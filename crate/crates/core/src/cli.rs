//! Command-line surface.
//!
//! Every command writes `manifest.json` into its output directory before
//! doing any work and rewrites it on exit with the status and the list of
//! files produced. A manifest records the fully resolved configuration, so
//! `htgcfd <command> --manifest <dir>/manifest.json --out <new dir>` repeats
//! the run and reproduces its deterministic outputs byte for byte. Wall-clock
//! timings live in `timings.json`, apart from the deterministic metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_fisher, save_params};
use crate::config::{load_regions, RunConfig};
use crate::continual::write_replay_csv;
use crate::data::{emit_temporal_profile, write_temporal_profile, write_transactions_csv};
use crate::htg::{build_htg, extract_metapath_neighbors, write_graph_dir, NodeType};
use crate::trainer::{
    emit_forgetting_curves, run_sequence, run_single, write_forgetting_curves, MetricsReport, RegionData, SingleReport,
    Variant,
};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Parser)]
#[command(
    name = "htgcfd",
    version,
    about = "Cross-regional fraud detection on heterogeneous trade graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long, required_unless_present = "manifest")]
    pub config: Option<PathBuf>,
    /// Repeat the run recorded in a manifest.
    #[arg(long, conflicts_with_all = ["config", "seed"])]
    pub manifest: Option<PathBuf>,
    /// Root seed; also seeds synthetic data.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "HTGCFD_OUT", default_value = "htgcfd-out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate or ingest transactions and write one CSV per region.
    Synth(RunArgs),
    /// Build the trade graph of each region and write it as CSV tables.
    BuildGraph {
        #[command(flatten)]
        run: RunArgs,
        /// Only this region.
        #[arg(long, conflicts_with = "manifest")]
        region: Option<u32>,
    },
    /// Train and evaluate on one region.
    Single {
        #[command(flatten)]
        run: RunArgs,
        /// Region to train on; overrides `single.region_id`.
        #[arg(long, conflicts_with = "manifest")]
        region: Option<u32>,
        /// Share of the region used for training; overrides `single.train_fraction`.
        #[arg(long, conflicts_with = "manifest")]
        train_fraction: Option<f64>,
    },
    /// Train across the regions in order.
    Sequence {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated variants (full, no_rps, no_pkr, naive) or `all`.
        #[arg(long, conflicts_with = "manifest")]
        variant: Option<VariantList>,
    },
    /// Summarise finished runs.
    Report {
        /// Run directories or metrics files.
        #[arg(required_unless_present = "manifest")]
        runs: Vec<PathBuf>,
        /// Repeat the report recorded in a manifest.
        #[arg(long, conflicts_with = "runs")]
        manifest: Option<PathBuf>,
        /// Output directory.
        #[arg(long, env = "HTGCFD_OUT", default_value = "htgcfd-out")]
        out: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantList(pub Vec<Variant>);

impl FromStr for VariantList {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "all" {
            return Ok(Self(Variant::ALL.to_vec()));
        }
        let vs = s
            .split(',')
            .map(|v| v.trim().parse())
            .collect::<Result<Vec<Variant>>>()?;
        Ok(Self(vs))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Resolved configuration; absent for `report`.
    pub config: Option<RunConfig>,
    /// Region filter for `build-graph`.
    pub region: Option<u32>,
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: RunStatus,
    pub error: Option<String>,
    /// Files written, relative to `output_dir`.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn write(&self) -> Result<()> {
        write_json(&self.output_dir.join(MANIFEST_FILE), self)
    }
}

/// Deterministic document for `single` runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleDocument {
    pub config: RunConfig,
    pub report: SingleReport,
}

/// Deterministic document for `sequence` runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceDocument {
    pub config: RunConfig,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SingleTimings {
    epoch_seconds: Vec<f64>,
    total_seconds: f64,
}

#[derive(Serialize)]
struct GraphSummary {
    region_id: u32,
    transactions: usize,
    card_holders: usize,
    merchants: usize,
    time_slices: usize,
    edges: usize,
    fraud: usize,
    meta_path_pairs: Vec<(String, usize)>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_file(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Collects output names relative to the run directory.
struct Outputs<'a> {
    root: &'a Path,
    names: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn new(root: &'a Path) -> Self {
        Self {
            root,
            names: Vec::new(),
        }
    }

    fn path(&mut self, name: impl Into<String>) -> PathBuf {
        let name = name.into();
        let p = self.root.join(&name);
        self.names.push(name);
        p
    }
}

/// The command's identity and its resolved inputs.
struct Plan {
    command: &'static str,
    config: Option<RunConfig>,
    region: Option<u32>,
    inputs: Vec<PathBuf>,
    out: PathBuf,
}

fn plan_from_run_args(command: &'static str, run: &RunArgs) -> Result<(RunConfig, PathBuf)> {
    match (&run.manifest, &run.config) {
        (Some(m), _) => {
            let man = RunManifest::read(m)?;
            if man.command != command {
                return Err(Error::config(
                    "manifest",
                    format!("records a `{}` run, not `{command}`", man.command),
                ));
            }
            let cfg = man
                .config
                .ok_or_else(|| Error::config("manifest", "has no configuration"))?;
            Ok((cfg, run.out.clone()))
        }
        (None, Some(path)) => {
            let mut cfg = RunConfig::load(path)?;
            if let Some(seed) = run.seed {
                cfg.set_seed(seed);
            }
            Ok((cfg, run.out.clone()))
        }
        (None, None) => Err(Error::config("config", "either --config or --manifest is required")),
    }
}

fn manifest_region(run: &RunArgs) -> Result<Option<u32>> {
    match &run.manifest {
        Some(m) => Ok(RunManifest::read(m)?.region),
        None => Ok(None),
    }
}

fn plan(cmd: &Command) -> Result<Plan> {
    if let Command::Report { runs, manifest, out } = cmd {
        let inputs = match manifest {
            Some(m) => RunManifest::read(m)?.inputs,
            None => runs.clone(),
        };
        return Ok(Plan {
            command: "report",
            config: None,
            region: None,
            inputs,
            out: out.clone(),
        });
    }
    let (command, (mut cfg, out), region) = match cmd {
        Command::Synth(run) => ("synth", plan_from_run_args("synth", run)?, None),
        Command::BuildGraph { run, region } => {
            let region = match region {
                Some(r) => Some(*r),
                None => manifest_region(run)?,
            };
            ("build-graph", plan_from_run_args("build-graph", run)?, region)
        }
        Command::Single { run, .. } => ("single", plan_from_run_args("single", run)?, None),
        Command::Sequence { run, .. } => ("sequence", plan_from_run_args("sequence", run)?, None),
        Command::Report { .. } => unreachable!("handled above"),
    };
    match cmd {
        Command::Single {
            region: r,
            train_fraction,
            ..
        } => {
            if r.is_some() {
                cfg.single.region_id = *r;
            }
            if let Some(f) = train_fraction {
                cfg.single.train_fraction = *f;
            }
        }
        Command::Sequence {
            variant: Some(VariantList(vs)),
            ..
        } => cfg.sequence.variants = vs.clone(),
        _ => {}
    }
    cfg.resolve();
    cfg.validate()?;
    Ok(Plan {
        command,
        inputs: cfg.input_paths(),
        config: Some(cfg),
        region,
        out,
    })
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let plan = plan(&cli.command)?;
    create_dir(&plan.out)?;
    let mut manifest = RunManifest {
        command: plan.command.to_string(),
        config: plan.config.clone(),
        region: plan.region,
        inputs: plan.inputs.clone(),
        output_dir: plan.out.clone(),
        seed: plan.config.as_ref().map(|c| c.experiment.seed),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at: now(),
        finished_at: None,
        status: RunStatus::Running,
        error: None,
        outputs: Vec::new(),
    };
    manifest.write()?;
    let mut outputs = Outputs::new(&plan.out);
    let result = execute(&plan, &mut outputs);
    manifest.finished_at = Some(now());
    manifest.outputs = outputs.names;
    match &result {
        Ok(()) => manifest.status = RunStatus::Completed,
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
        }
    }
    manifest.write()?;
    result
}

fn execute(plan: &Plan, out: &mut Outputs) -> Result<()> {
    match (plan.command, &plan.config) {
        ("report", _) => cmd_report(&plan.inputs, out),
        ("synth", Some(cfg)) => cmd_synth(cfg, out),
        ("build-graph", Some(cfg)) => cmd_build_graph(cfg, plan.region, out),
        ("single", Some(cfg)) => cmd_single(cfg, out),
        ("sequence", Some(cfg)) => cmd_sequence(cfg, out),
        (c, _) => unreachable!("command `{c}` planned without a configuration"),
    }
}

fn cmd_synth(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    for r in load_regions(&cfg.data)? {
        let path = out.path(format!("region_{}.csv", r.region_id));
        write_transactions_csv(&r.dataset, create_file(&path)?)?;
        let path = out.path(format!("temporal_profile_region_{}.csv", r.region_id));
        write_temporal_profile(&emit_temporal_profile(&r.dataset), create_file(&path)?)?;
    }
    Ok(())
}

fn cmd_build_graph(cfg: &RunConfig, only: Option<u32>, out: &mut Outputs) -> Result<()> {
    let specs = cfg.experiment.meta_path_specs()?;
    let regions: Vec<RegionData> = load_regions(&cfg.data)?
        .into_iter()
        .filter(|r| only.is_none_or(|id| id == r.region_id))
        .collect();
    if regions.is_empty() {
        return Err(Error::config(
            "region",
            format!("no region with id {}", only.unwrap_or(0)),
        ));
    }
    let mut summaries = Vec::new();
    for r in regions {
        let g = build_htg(&r.dataset)?;
        let dir = out.path(format!("graph_region_{}", r.region_id));
        write_graph_dir(&g, &dir)?;
        let meta_path_pairs = specs
            .iter()
            .map(|s| Ok((s.name().to_string(), extract_metapath_neighbors(&g, s)?.num_pairs())))
            .collect::<Result<Vec<_>>>()?;
        summaries.push(GraphSummary {
            region_id: r.region_id,
            transactions: g.num_transactions(),
            card_holders: g.num_nodes(NodeType::CardHolder),
            merchants: g.num_nodes(NodeType::Merchant),
            time_slices: g.num_nodes(NodeType::TimeSlice),
            edges: g.num_edges(),
            fraud: g.labels().iter().filter(|l| **l).count(),
            meta_path_pairs,
        });
    }
    write_json(&out.path("graph_summary.json"), &summaries)
}

fn pick_region(cfg: &RunConfig) -> Result<RegionData> {
    let mut regions = load_regions(&cfg.data)?;
    match cfg.single.region_id {
        None if regions.is_empty() => Err(Error::Empty("no regions configured".into())),
        None => Ok(regions.swap_remove(0)),
        Some(id) => regions
            .into_iter()
            .find(|r| r.region_id == id)
            .ok_or_else(|| Error::config("single.region_id", format!("no region with id {id}"))),
    }
}

fn cmd_single(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let start = Instant::now();
    let region = pick_region(cfg)?;
    let res = run_single(&region, &cfg.experiment, cfg.single.train_fraction)?;
    write_json(
        &out.path(METRICS_FILE),
        &SingleDocument {
            config: cfg.clone(),
            report: res.report,
        },
    )?;
    save_params(&out.path("theta.ckpt"), &res.params)?;
    write_json(
        &out.path("timings.json"),
        &SingleTimings {
            epoch_seconds: res.epoch_seconds,
            total_seconds: start.elapsed().as_secs_f64(),
        },
    )
}

fn cmd_sequence(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let regions = load_regions(&cfg.data)?;
    let variants = &cfg.sequence.variants;
    let mut averages = Vec::new();
    for &v in variants {
        let prefix = if variants.len() > 1 {
            format!("{v}/")
        } else {
            String::new()
        };
        if !prefix.is_empty() {
            create_dir(&out.root.join(v.as_str()))?;
        }
        let mut exp = cfg.experiment.clone();
        exp.train.variant = v;
        let res = run_sequence(&regions, &exp)?;
        write_json(
            &out.path(format!("{prefix}{METRICS_FILE}")),
            &SequenceDocument {
                config: cfg.clone(),
                report: res.report.clone(),
            },
        )?;
        let curves = emit_forgetting_curves(&res.report);
        write_forgetting_curves(
            &curves,
            create_file(&out.path(format!("{prefix}forgetting_curves.csv")))?,
        )?;
        for task in &res.tasks {
            let l = task.task_index;
            save_params(&out.path(format!("{prefix}theta_task{l}.ckpt")), &task.params)?;
            if let Some(f) = &task.fisher {
                save_fisher(&out.path(format!("{prefix}fisher_task{l}.ckpt")), f)?;
            }
            if let Some(buf) = &task.replay {
                let feats = out.path(format!("{prefix}replay_task{l}_features.csv"));
                let ents = out.path(format!("{prefix}replay_task{l}_entities.csv"));
                write_replay_csv(&buf.samples, &feats, &ents)?;
                let feats = out.path(format!("{prefix}twins_task{l}_features.csv"));
                let ents = out.path(format!("{prefix}twins_task{l}_entities.csv"));
                write_replay_csv(&task.twins, &feats, &ents)?;
            }
        }
        write_json(&out.path(format!("{prefix}timings.json")), &res.timings)?;
        averages.push((v, res.report.average));
    }
    if variants.len() > 1 {
        let path = out.path("comparison.csv");
        let mut w = csv::Writer::from_writer(create_file(&path)?);
        w.write_record(["variant", "recall", "auc", "f1"])?;
        for (v, a) in averages {
            w.write_record([
                v.to_string(),
                a.recall.to_string(),
                a.auc.map_or_else(String::new, |x| x.to_string()),
                a.f1.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

enum Finished {
    Single(SingleDocument),
    Sequence(SequenceDocument),
}

fn read_finished(path: &Path) -> Result<Finished> {
    let file = if path.is_dir() {
        path.join(METRICS_FILE)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    match serde_json::from_str::<SequenceDocument>(&text) {
        Ok(d) => Ok(Finished::Sequence(d)),
        Err(_) => Ok(Finished::Single(serde_json::from_str(&text)?)),
    }
}

fn fmt_auc(a: Option<f64>) -> String {
    a.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

/// Plain-text summary of finished runs.
pub fn render_report(runs: &[PathBuf]) -> Result<String> {
    let mut s = String::new();
    for path in runs {
        match read_finished(path)? {
            Finished::Single(d) => {
                let r = &d.report;
                writeln!(
                    s,
                    "{} (single, region {}, seed {}, train fraction {})",
                    path.display(),
                    r.region_id,
                    r.seed,
                    r.train_fraction
                )
                .ok();
                writeln!(
                    s,
                    "  recall {:.4}  auc {}  f1 {:.4}  epochs {}",
                    r.metrics.recall,
                    fmt_auc(r.metrics.auc),
                    r.metrics.f1,
                    r.epochs_run
                )
                .ok();
            }
            Finished::Sequence(d) => {
                let r = &d.report;
                writeln!(
                    s,
                    "{} (sequence, variant {}, seed {})",
                    path.display(),
                    r.variant,
                    r.seed
                )
                .ok();
                for m in &r.final_metrics {
                    writeln!(
                        s,
                        "  region {:>3}  recall {:.4}  auc {}  f1 {:.4}",
                        m.region_id,
                        m.metrics.recall,
                        fmt_auc(m.metrics.auc),
                        m.metrics.f1
                    )
                    .ok();
                }
                writeln!(
                    s,
                    "  average     recall {:.4}  auc {}  f1 {:.4}",
                    r.average.recall,
                    fmt_auc(r.average.auc),
                    r.average.f1
                )
                .ok();
                let mut line = String::from("  auc by task:");
                for c in &r.checkpoints {
                    write!(line, " t{}/r{}={}", c.task_index, c.region_id, fmt_auc(c.metrics.auc)).ok();
                }
                writeln!(s, "{line}").ok();
            }
        }
    }
    Ok(s)
}

fn cmd_report(runs: &[PathBuf], out: &mut Outputs) -> Result<()> {
    if runs.is_empty() {
        return Err(Error::config("runs", "no run directories given"));
    }
    let text = render_report(runs)?;
    print!("{text}");
    let path = out.path("report.txt");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Exit status for an error: configuration problems are usage errors.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => 2,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_lists_parse() {
        assert_eq!("all".parse::<VariantList>().unwrap().0, Variant::ALL.to_vec());
        assert_eq!(
            "full, naive".parse::<VariantList>().unwrap().0,
            vec![Variant::Full, Variant::Naive]
        );
        assert!("full,bogus".parse::<VariantList>().is_err());
    }

    #[test]
    fn flags_parse_into_commands() {
        let cli = Cli::try_parse_from([
            "htgcfd",
            "sequence",
            "--config",
            "a.toml",
            "--seed",
            "4",
            "--variant",
            "naive",
            "--out",
            "o",
        ])
        .unwrap();
        let Command::Sequence { run, variant } = cli.command else {
            panic!("sequence expected")
        };
        assert_eq!(run.seed, Some(4));
        assert_eq!(variant.unwrap().0, vec![Variant::Naive]);
        assert!(Cli::try_parse_from(["htgcfd", "single"]).is_err());
        assert!(Cli::try_parse_from(["htgcfd", "single", "--manifest", "m", "--seed", "1"]).is_err());
    }

    #[test]
    fn config_errors_are_usage_errors() {
        assert_eq!(exit_code(&Error::config("x", "y")), 2);
        assert_eq!(exit_code(&Error::Empty("z".into())), 1);
    }
}
