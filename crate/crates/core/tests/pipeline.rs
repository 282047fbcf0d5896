use htgcfd::checkpoint::{load_params, save_params};
use htgcfd::config::{load_regions, CsvSource, DataSource};
use htgcfd::data::{default_regions, generate_synthetic, write_transactions_csv, CsvSchema, SyntheticConfig};
use htgcfd::htg::{build_htg, extract_metapath_neighbors, read_graph_dir, write_graph_dir, MetaPathSpec};
use htgcfd::model::forward;
use htgcfd::trainer::{run_sequence, ExperimentConfig, TrainConfig, Variant};

fn small_experiment(variant: Variant) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.model.hidden = 8;
    cfg.model.heads = 2;
    cfg.model.semantic_hidden = 8;
    cfg.train = TrainConfig {
        max_epochs: 12,
        patience: 4,
        variant,
        ..TrainConfig::default()
    };
    cfg
}

#[test]
fn csv_ingestion_feeds_the_sequential_protocol() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = SyntheticConfig {
        n_regions: 2,
        txns_per_region: 300,
        seed: 4,
        ..SyntheticConfig::default()
    };
    let mut paths = Vec::new();
    for (k, ds) in generate_synthetic(&synth).unwrap().iter().enumerate() {
        let p = tmp.path().join(format!("part{k}.csv"));
        write_transactions_csv(ds, std::fs::File::create(&p).unwrap()).unwrap();
        paths.push(p);
    }
    let source = DataSource::Csv(Box::new(CsvSource {
        paths,
        schema: CsvSchema::default(),
        regions: default_regions()[..2].to_vec(),
    }));
    let regions = load_regions(&source).unwrap();
    assert_eq!(
        regions.iter().map(|r| r.dataset.len()).collect::<Vec<_>>(),
        vec![300, 300]
    );

    let out = run_sequence(&regions, &small_experiment(Variant::Full)).unwrap();
    assert_eq!(out.report.region_ids, vec![1, 2]);
    assert!(out.tasks[0].fisher.is_some() && out.tasks[1].fisher.is_none());
    assert_eq!(out.report.tasks[1].replay_nodes, (0.15f64 * 180.0).round() as usize);
    assert!(out.report.tasks[1].twin_nodes > 0);
}

#[test]
fn saved_parameters_reproduce_predictions() {
    let synth = SyntheticConfig {
        n_regions: 2,
        txns_per_region: 200,
        ..SyntheticConfig::default()
    };
    let regions: Vec<_> = generate_synthetic(&synth)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, dataset)| htgcfd::trainer::RegionData {
            region_id: i as u32 + 1,
            dataset,
        })
        .collect();
    let exp = small_experiment(Variant::Naive);
    let out = run_sequence(&regions, &exp).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("theta_task2.ckpt");
    save_params(&path, &out.tasks[1].params).unwrap();
    let loaded = load_params(&path).unwrap();

    let g = build_htg(&regions[0].dataset).unwrap();
    write_graph_dir(&g, &tmp.path().join("graph")).unwrap();
    let g2 = read_graph_dir(&tmp.path().join("graph")).unwrap();
    let specs = MetaPathSpec::standard();
    let adjs: Vec<_> = specs
        .iter()
        .map(|s| extract_metapath_neighbors(&g2, s).unwrap())
        .collect();
    let a = forward(&g, &adjs, &out.tasks[1].params, &exp.model).unwrap();
    let b = forward(&g2, &adjs, &loaded, &exp.model).unwrap();
    assert_eq!(a.predictions, b.predictions);
}
