//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::Rng;

use htgcfd::continual::{smoothing_loss, total_objective, FisherState};
use htgcfd::data::{generate_synthetic, SyntheticConfig};
use htgcfd::htg::{build_htg, extract_metapath_neighbors, EdgeType, HeteroTradeGraph, MetaPathSpec};
use htgcfd::model::{compute_gradients, forward, Hyperparams, LossTerm, ModelParams};
use htgcfd::rng::rng_from_seed;
use htgcfd::trainer::{
    auc_score, emit_forgetting_curves, run_sequence, run_single, ExperimentConfig, RegionData, TrainConfig, Variant,
};

const SEEDS: u64 = 5;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Model size used by the training criteria; the defaults are too slow for
/// the time limits on a single core.
fn acceptance_model() -> Hyperparams {
    Hyperparams {
        hidden: 32,
        heads: 4,
        semantic_hidden: 32,
        ..Hyperparams::default()
    }
}

fn regions(cfg: &SyntheticConfig) -> Vec<RegionData> {
    generate_synthetic(cfg)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, dataset)| RegionData {
            region_id: i as u32 + 1,
            dataset,
        })
        .collect()
}

fn small_graph(seed: u64, txns: usize, cards: usize, merchants: usize) -> HeteroTradeGraph {
    let cfg = SyntheticConfig {
        n_regions: 1,
        txns_per_region: txns,
        n_card_holders: cards,
        n_merchants: merchants,
        seed,
        ..SyntheticConfig::default()
    };
    build_htg(&generate_synthetic(&cfg).unwrap()[0]).unwrap()
}

fn gradient_check() -> Verdict {
    let hp = Hyperparams {
        hidden: 4,
        heads: 2,
        semantic_hidden: 3,
        ..Hyperparams::default()
    };
    let specs = [MetaPathSpec::tct(), MetaPathSpec::tmt()];
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let g = small_graph(seed, 10, 3, 3);
        let adjs: Vec<_> = specs
            .iter()
            .map(|s| extract_metapath_neighbors(&g, s).unwrap())
            .collect();
        let params = ModelParams::init(g.feature_width(), &specs, &hp, seed).unwrap();
        let anchor = ModelParams::init(g.feature_width(), &specs, &hp, seed + 100).unwrap();
        let mut fisher = anchor.zeros_like();
        let mut rng = rng_from_seed(seed);
        for t in fisher.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = rng.random_range(0.0..2.0));
        }
        let state = FisherState::new(fisher, anchor, 1.5, 0.00025).unwrap();
        let nodes: Vec<usize> = (0..10).collect();
        let analytic = compute_gradients(&g, &adjs, &params, &hp, &nodes, &[&state as &dyn LossTerm])
            .unwrap()
            .grads
            .flatten();
        let base = params.flatten();
        let mut q = params.clone();
        for (k, a) in analytic.iter().enumerate() {
            let mut at = |v: f64| {
                let mut flat = base.clone();
                flat[k] = v;
                q.assign_flat(&flat).unwrap();
                total_objective(&g, &adjs, &q, &hp, &nodes, Some(&state)).unwrap()
            };
            let numeric = (at(base[k] + step) - at(base[k] - step)) / (2.0 * step);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    verdict(worst < 1e-4, format!("max relative error {worst:.2e} (limit 1e-4)"))
}

fn attention_simplex() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut negative = false;
    for draw in 0..100u64 {
        let mut rng = rng_from_seed(1000 + draw);
        let g = small_graph(
            draw,
            rng.random_range(5..60),
            rng.random_range(2..15),
            rng.random_range(2..15),
        );
        let heads = rng.random_range(1..4);
        let hp = Hyperparams {
            hidden: heads * rng.random_range(1..4),
            heads,
            semantic_hidden: rng.random_range(1..6),
            ..Hyperparams::default()
        };
        let specs = MetaPathSpec::standard();
        let adjs: Vec<_> = specs
            .iter()
            .map(|s| extract_metapath_neighbors(&g, s).unwrap())
            .collect();
        let params = ModelParams::init(g.feature_width(), &specs, &hp, draw).unwrap();
        let trace = forward(&g, &adjs, &params, &hp).unwrap();
        for (path, adj) in trace.paths.iter().zip(&adjs) {
            for head in &path.heads {
                for i in 0..g.num_transactions() {
                    let alpha = head.coefficients(adj, i, hp.leaky_slope);
                    negative |= alpha.iter().any(|a| *a < 0.0);
                    worst = worst.max((alpha.iter().sum::<f64>() - 1.0).abs());
                }
            }
        }
        let beta = trace.beta();
        negative |= beta.iter().any(|b| *b < 0.0);
        worst = worst.max((beta.iter().sum::<f64>() - 1.0).abs());
    }
    verdict(
        !negative && worst <= 1e-9,
        format!("max |sum - 1| {worst:.2e}, negative entries: {negative}"),
    )
}

fn brute_force_neighbors(g: &HeteroTradeGraph, edge: EdgeType) -> Vec<Vec<usize>> {
    let n = g.num_transactions();
    let edges = g.edges(edge);
    let mut lists = vec![Vec::new(); n];
    for &(a, x) in &edges {
        for &(b, y) in &edges {
            if x == y {
                lists[a].push(b);
            }
        }
    }
    for l in &mut lists {
        l.sort_unstable();
        l.dedup();
    }
    lists
}

fn metapath_oracle() -> Verdict {
    let mut mismatches = 0;
    for draw in 0..50u64 {
        let mut rng = rng_from_seed(2000 + draw);
        let g = small_graph(
            draw,
            rng.random_range(1..=200),
            rng.random_range(1..40),
            rng.random_range(1..40),
        );
        for spec in MetaPathSpec::standard() {
            let mut got = extract_metapath_neighbors(&g, &spec).unwrap().to_lists();
            got.iter_mut().for_each(|l| l.sort_unstable());
            let edge = EdgeType::for_entity(spec.intermediate()).unwrap();
            if got != brute_force_neighbors(&g, edge) {
                mismatches += 1;
            }
        }
    }
    verdict(
        mismatches == 0,
        format!("{mismatches} mismatching (graph, path) pairs of 150"),
    )
}

fn auc_oracle() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut undefined = 0;
    for draw in 0..100u64 {
        let mut rng = rng_from_seed(3000 + draw);
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(2..30);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..levels)) / 7.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        labels[0] = true;
        labels[1] = false;
        let (mut wins, mut pairs) = (0.0, 0.0);
        for (si, yi) in scores.iter().zip(&labels) {
            for (sj, yj) in scores.iter().zip(&labels) {
                if *yi && !*yj {
                    pairs += 1.0;
                    wins += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        match auc_score(&scores, &labels) {
            Ok(a) => worst = worst.max((a - wins / pairs).abs()),
            Err(_) => undefined += 1,
        }
    }
    verdict(
        worst <= 1e-12 && undefined == 0,
        format!("max |rank - pairwise| {worst:.2e} over 100 sets"),
    )
}

fn smoothing_closed_form() -> Verdict {
    let hp = Hyperparams {
        hidden: 1,
        heads: 1,
        semantic_hidden: 1,
        ..Hyperparams::default()
    };
    let template = ModelParams::init(1, &[MetaPathSpec::tct()], &hp, 0)
        .unwrap()
        .zeros_like();
    let with = |head: &[f64]| {
        let mut p = template.clone();
        let mut flat = vec![0.0; p.num_values()];
        flat[..head.len()].copy_from_slice(head);
        p.assign_flat(&flat).unwrap();
        p
    };
    let state = FisherState::new(with(&[1.0, 1.0]), with(&[1.0, 0.0]), 1.5, 0.00025).unwrap();
    let value = smoothing_loss(&with(&[2.0, 2.0]), &state).unwrap();
    let expected = 0.75 * 5.0 + 0.00025 * (8f64.sqrt() + 1.0);
    let quad = state.weighted_distance(&state.anchor);
    verdict(
        (value - expected).abs() <= 1e-9 && quad == 0.0,
        format!("loss {value:.10} vs {expected:.10}; quadratic term at anchor {quad}"),
    )
}

fn single_region_learnability() -> Verdict {
    let (mut auc, mut recall) = (0.0, 0.0);
    for seed in 0..SEEDS {
        let cfg = SyntheticConfig {
            n_regions: 1,
            txns_per_region: 10_000,
            fraud_rate: 0.1,
            seed,
            ..SyntheticConfig::default()
        };
        let exp = ExperimentConfig {
            seed,
            model: acceptance_model(),
            ..ExperimentConfig::default()
        };
        let out = run_single(&regions(&cfg)[0], &exp, 0.6).unwrap();
        auc += out.report.metrics.auc.unwrap_or(0.0);
        recall += out.report.metrics.recall;
    }
    let (auc, recall) = (auc / SEEDS as f64, recall / SEEDS as f64);
    verdict(
        auc >= 0.95 && recall >= 0.85,
        format!("mean test AUC {auc:.4} (>= 0.95), mean recall {recall:.4} (>= 0.85)"),
    )
}

struct SequenceStats {
    mean_average_auc: f64,
    mean_region1_drop: f64,
    region1_non_increasing: usize,
}

fn sequence_stats(variant: Variant, shift: f64) -> SequenceStats {
    let mut stats = SequenceStats {
        mean_average_auc: 0.0,
        mean_region1_drop: 0.0,
        region1_non_increasing: 0,
    };
    for seed in 0..SEEDS {
        let cfg = SyntheticConfig {
            n_regions: 3,
            txns_per_region: 2000,
            region_shift_strength: shift,
            seed,
            ..SyntheticConfig::default()
        };
        let exp = ExperimentConfig {
            seed,
            model: acceptance_model(),
            train: TrainConfig {
                variant,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        };
        let out = run_sequence(&regions(&cfg), &exp).unwrap();
        let r1: Vec<f64> = emit_forgetting_curves(&out.report)
            .iter()
            .filter(|r| r.region_id == 1)
            .map(|r| r.auc.unwrap_or(0.5))
            .collect();
        stats.mean_average_auc += out.report.average.auc.unwrap_or(0.5) / SEEDS as f64;
        stats.mean_region1_drop += (r1[0] - r1[r1.len() - 1]) / SEEDS as f64;
        if r1.windows(2).all(|w| w[1] <= w[0]) {
            stats.region1_non_increasing += 1;
        }
    }
    stats
}

fn forgetting_ordering() -> Verdict {
    let full = sequence_stats(Variant::Full, 1.0);
    let no_rps = sequence_stats(Variant::NoRps, 1.0);
    let no_pkr = sequence_stats(Variant::NoPkr, 1.0);
    let naive = sequence_stats(Variant::Naive, 1.0);
    let (f, r, p, n) = (
        full.mean_average_auc,
        no_rps.mean_average_auc,
        no_pkr.mean_average_auc,
        naive.mean_average_auc,
    );
    let pass = f >= r && f >= p && r >= n && p >= n && f - n >= 0.05 && naive.region1_non_increasing >= 4;
    verdict(
        pass,
        format!(
            "avg AUC full {f:.4}, no_rps {r:.4}, no_pkr {p:.4}, naive {n:.4}; full - naive {:.4} (>= 0.05); \
             naive region-1 non-increasing in {}/5 seeds (>= 4)",
            f - n,
            naive.region1_non_increasing
        ),
    )
}

fn no_drift_control() -> Verdict {
    let naive = sequence_stats(Variant::Naive, 0.0);
    verdict(
        naive.mean_region1_drop <= 0.02,
        format!("mean region-1 AUC drop {:.4} (<= 0.02)", naive.mean_region1_drop),
    )
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json" && n != "timings.json")
        .collect();
    names.sort();
    names
}

fn reproducibility() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    fs::write(
        &config,
        "[data]\nsource = \"synthetic\"\nn_regions = 3\ntxns_per_region = 300\n\n\
         [experiment.model]\nhidden = 8\nheads = 2\nsemantic_hidden = 8\n\n\
         [experiment.train]\nmax_epochs = 15\npatience = 5\n",
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_htgcfd");
    let first = tmp.path().join("first");
    let again = tmp.path().join("again");
    let ok1 = Command::new(bin)
        .args(["sequence", "--seed", "11", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&first)
        .status()
        .unwrap()
        .success();
    let ok2 = Command::new(bin)
        .args(["sequence", "--manifest"])
        .arg(first.join("manifest.json"))
        .arg("--out")
        .arg(&again)
        .status()
        .unwrap()
        .success();
    if !(ok1 && ok2) {
        return verdict(false, "a sequence run exited with failure");
    }
    let names = files(&first);
    let checkpoints = names.iter().filter(|n| n.ends_with(".ckpt")).count();
    let identical = names == files(&again)
        && names
            .iter()
            .all(|n| fs::read(first.join(n)).unwrap() == fs::read(again.join(n)).unwrap());
    verdict(
        identical && names.contains(&"metrics.json".to_string()) && checkpoints >= 3,
        format!(
            "{} files compared ({checkpoints} checkpoints), byte-identical: {identical}",
            names.len()
        ),
    )
}

/// Name, check and optional time limit.
type Criterion = (&'static str, fn() -> Verdict, Option<Duration>);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("gradient correctness", gradient_check, Some(Duration::from_secs(30))),
        ("attention simplex", attention_simplex, None),
        ("meta-path oracle", metapath_oracle, Some(Duration::from_secs(10))),
        ("AUC oracle", auc_oracle, None),
        ("smoothing closed form", smoothing_closed_form, None),
        (
            "single-region learnability",
            single_region_learnability,
            Some(Duration::from_secs(300)),
        ),
        (
            "forgetting-prevention ordering",
            forgetting_ordering,
            Some(Duration::from_secs(900)),
        ),
        ("no-drift control", no_drift_control, None),
        ("reproducibility", reproducibility, None),
    ];
    let mut failed = 0;
    for (k, (name, check, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let v = check();
        let took = start.elapsed();
        let in_time = limit.is_none_or(|l| took <= l);
        let pass = v.pass && in_time;
        failed += usize::from(!pass);
        let limit_note = limit.map_or_else(String::new, |l| format!(", limit {}s", l.as_secs()));
        println!(
            "criterion {}: {name}: {} ({}; {:.1}s{limit_note})",
            k + 1,
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
