use diffdesign::baselines::{AdamOptConfig, CemConfig};
use diffdesign::datagen::*;
use diffdesign::diffusion::Standardizer;
use diffdesign::energy::EnergyModel;
use diffdesign::seeds::SeedStream;
use diffdesign::Error;
use fluidsim::{SimConfig, TaskKind, TaskSpec};
use proptest::prelude::*;

fn record(cost: f64, task: TaskKind) -> DesignRecord {
    DesignRecord {
        design: vec![cost, 1.0 - cost],
        cost,
        task,
        goal: vec![[0.5, 0.2]],
        percentile: 0.0,
        source: Optimizer::Cem,
        run_id: 0,
        iteration: 0,
    }
}

fn dataset(costs: &[f64]) -> Dataset {
    percentile_rank(Dataset { records: costs.iter().map(|&c| record(c, TaskKind::Contain)).collect() })
}

fn short(kind: TaskKind) -> TaskSpec {
    TaskSpec { rollout_length: 5, ..TaskSpec::preset(kind) }
}

#[test]
fn percentiles_span_zero_to_one() {
    let ds = dataset(&[-0.3, -0.1, -0.5, -0.2]);
    let p: Vec<f64> = ds.records.iter().map(|r| r.percentile).collect();
    assert_eq!(p, vec![1.0 / 3.0, 1.0, 0.0, 2.0 / 3.0]);
}

#[test]
fn ties_share_their_average_rank() {
    let ds = dataset(&[-0.2, -0.4, -0.2, 0.0]);
    let p: Vec<f64> = ds.records.iter().map(|r| r.percentile).collect();
    assert_eq!(p, vec![0.5, 0.0, 0.5, 1.0]);
}

#[test]
fn percentiles_are_per_task() {
    let mut records = vec![record(-0.9, TaskKind::Ramp), record(-0.1, TaskKind::Ramp)];
    records.extend([record(-0.5, TaskKind::Contain), record(-0.4, TaskKind::Contain)]);
    let ds = percentile_rank(Dataset { records });
    let p: Vec<f64> = ds.records.iter().map(|r| r.percentile).collect();
    assert_eq!(p, vec![0.0, 1.0, 0.0, 1.0]);
    let contain = ds.select_tasks(&[TaskKind::Contain]);
    assert_eq!(contain.len(), 2);
    assert!(contain.records.iter().all(|r| r.task == TaskKind::Contain));
}

proptest! {
    #[test]
    fn percentiles_ignore_record_order(costs in proptest::collection::vec(-1.0f64..0.0, 2..30), rot in 0usize..30) {
        let a = dataset(&costs);
        let mut rotated = costs.clone();
        rotated.rotate_left(rot % costs.len());
        let b = dataset(&rotated);
        let key = |ds: &Dataset| {
            let mut v: Vec<(u64, u64)> = ds.records.iter().map(|r| (r.cost.to_bits(), r.percentile.to_bits())).collect();
            v.sort();
            v
        };
        prop_assert_eq!(key(&a), key(&b));
        prop_assert!(a.records.iter().all(|r| (0.0..=1.0).contains(&r.percentile)));
    }
}

#[test]
fn cutoff_examples() {
    let costs = [-0.6, -0.1, -0.3, -0.5, -0.2, -0.4, -0.7];
    let ds = dataset(&costs);
    assert_eq!(filter_by_cutoff(&ds, f64::INFINITY).unwrap(), ds);
    assert!(matches!(filter_by_cutoff(&ds, -0.7), Err(Error::EmptyDataset)));
    let half = filter_by_cutoff(&ds, -0.4).unwrap();
    assert!((half.len() as i64 - costs.len() as i64 / 2).abs() <= 1);
    let p: Vec<f64> = half.records.iter().map(|r| r.percentile).collect();
    assert_eq!(p, vec![0.5, 1.0, 0.0]);
}

#[test]
fn jsonl_round_trip_is_bit_exact() {
    let mut ds = dataset(&[-0.1234567890123456789, -1.0 / 3.0, -2f64.sqrt() / 7.0]);
    ds.records[1].goal = vec![[0.3, 0.15], [0.7, 0.15]];
    ds.records[2].source = Optimizer::Adam;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.jsonl");
    ds.write_jsonl(&path).unwrap();
    let back = Dataset::read_jsonl(&path).unwrap();
    assert_eq!(back, ds);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().next().unwrap().contains(DATASET_FORMAT));
}

#[test]
fn unknown_dataset_format_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.jsonl");
    std::fs::write(&path, "{\"format\":\"other\",\"version\":1}\n").unwrap();
    assert!(matches!(Dataset::read_jsonl(&path), Err(Error::Dataset(_))));
}

#[test]
fn two_cem_runs_give_every_population_member() {
    let cfg = CollectConfig { runs_per_task: 2, ..CollectConfig::default() };
    assert_eq!(cfg.cem, CemConfig::default());
    let ds = collect_dataset(&[short(TaskKind::Contain)], Optimizer::Cem, &cfg, &SimConfig::default(), &SeedStream::new(1)).unwrap();
    assert_eq!(ds.len(), 2 * 32 * 30);
    for run in 0..2 {
        let goals: Vec<&Vec<[f64; 2]>> = ds.records.iter().filter(|r| r.run_id == run).map(|r| &r.goal).collect();
        assert!(goals.iter().all(|g| *g == goals[0]));
        let g = goals[0][0];
        assert!((0.4..=0.6).contains(&g[0]) && (0.1..=0.3).contains(&g[1]));
    }
    let goal_of = |run| ds.records.iter().find(|r| r.run_id == run).unwrap().goal.clone();
    assert_ne!(goal_of(0), goal_of(1));
    assert_eq!(ds.records.iter().filter(|r| r.percentile == 0.0).count(), 1);
}

#[test]
fn adam_runs_record_every_iterate_and_costs_reproduce() {
    let cfg = CollectConfig { runs_per_task: 1, adam: AdamOptConfig { steps: 4, lr: 0.05 }, ..CollectConfig::default() };
    let task = short(TaskKind::Contain);
    let ds = collect_dataset(&[task.clone()], Optimizer::Adam, &cfg, &SimConfig::default(), &SeedStream::new(2)).unwrap();
    assert_eq!(ds.len(), 5);
    assert_eq!(ds.records[0].design, flat_init(&task));
    let e = EnergyModel::new(task.with_goals(ds.records[0].goal.clone()), SimConfig::default()).unwrap();
    for r in &ds.records {
        assert_eq!(e.evaluate_cost(&r.design).unwrap().to_bits(), r.cost.to_bits());
        assert_eq!(r.source, Optimizer::Adam);
    }
}

#[test]
fn collection_is_reproducible() {
    let cfg = CollectConfig { runs_per_task: 1, cem: CemConfig { iterations: 2, ..CemConfig::default() }, ..CollectConfig::default() };
    let run = || collect_dataset(&[short(TaskKind::Ramp)], Optimizer::Cem, &cfg, &SimConfig::default(), &SeedStream::new(3)).unwrap();
    assert_eq!(run(), run());
}

#[test]
fn bimodal_runs_get_one_goal_per_reward_box() {
    let task = TaskSpec::preset(TaskKind::Bimodal);
    let goals = sample_goals(&task, &mut SeedStream::new(4).rng("goal", 0));
    assert_eq!(goals.len(), 2);
    for (g, b) in goals.iter().zip(&task.reward_boxes) {
        assert!(b.contains(*g));
    }
}

#[test]
fn uniform_init_stays_in_bounds() {
    let task = TaskSpec::preset(TaskKind::ContainShift);
    let mut rng = SeedStream::new(5).rng("init", 0);
    for _ in 0..50 {
        let x = uniform_init(&task, &mut rng);
        assert!(x[..16].iter().all(|a| a.abs() <= std::f64::consts::PI));
        let anchor = task.anchors()[0];
        assert!((0.0..=1.0).contains(&(anchor[0] + x[16])));
        assert!((0.0..=1.0).contains(&(anchor[1] + x[17])));
    }
}

#[test]
fn training_set_standardizes_designs() {
    let ds = dataset(&[-0.3, -0.1, -0.5]);
    let std = Standardizer::fit(&ds.designs_flat(), 2).unwrap();
    let ts = ds.training_set(&std).unwrap();
    assert_eq!(ts.len(), 3);
    assert_eq!(ts.cond[2].percentile, 0.0);
    assert_eq!(ts.cond[0].goal, [0.5, 0.2]);
    assert!(ds.training_set(&Standardizer::identity(3)).is_err());
}

#[test]
fn manifest_round_trips() {
    let m = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        root_seed: 9,
        optimizers: vec![Optimizer::Cem, Optimizer::Adam],
        collect: CollectConfig::default(),
        sim: SimConfig::default(),
        tasks: vec![TaskSpec::preset(TaskKind::Contain)],
        records: 12,
    };
    let back = DatasetManifest::from_toml(&m.to_toml().unwrap()).unwrap();
    assert_eq!(back, m);
}
