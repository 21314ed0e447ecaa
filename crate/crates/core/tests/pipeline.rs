mod common;

use pleas_core::data::{make_synthetic_task, Dataset, TaskKind, TaskParams};
use pleas_core::eval::{linear_probe, run_tradeoff, ProbeHyper, TradeoffConfig, TRADEOFF_HEADER};
use pleas_core::merging::{ensemble_forward, EnsembleMode};
use pleas_core::network::{train_toy, NetworkSpec, TrainHyper};
use pleas_core::pipeline::{match_models, merge_models, MergeData, Method, PipelineConfig, Sizing};
use pleas_core::rng::seeded_rng;
use pleas_core::Matrix;

use common::{toy_pair, Toy};

fn small_toy() -> Toy {
    toy_pair(0, 400)
}

fn task_data(toy: &Toy) -> MergeData<'_> {
    MergeData::Task {
        a: &toy.pair.train[0],
        b: &toy.pair.train[1],
    }
}

#[test]
fn precomputed_permutations_reproduce_the_one_shot_merge() {
    let toy = small_toy();
    let data = task_data(&toy);
    for method in [Method::PleasWeight, Method::Pleas, Method::PermuteAvg] {
        let cfg = PipelineConfig::new(method, Sizing::Ratios(vec![0.5, 0.8]));
        let one_shot = merge_models(&toy.a, &toy.b, data, &cfg, None).unwrap();
        let perms = match_models(&toy.a, &toy.b, method, data, cfg.match_feature.into(), cfg.seed).unwrap();
        let two_step = merge_models(&toy.a, &toy.b, data, &cfg, Some(&perms)).unwrap();
        assert_eq!(two_step.merged.net, one_shot.merged.net, "{method}");
        assert_eq!(two_step.merged.meta, one_shot.merged.meta, "{method}");
    }
}

#[test]
fn full_budget_recovers_the_ensemble() {
    let toy = small_toy();
    let out = merge_models(&toy.a, &toy.b, task_data(&toy), &PipelineConfig::new(Method::Pleas, Sizing::budget(2.0)), None).unwrap();
    let plan = out.budget.as_ref().unwrap();
    assert_eq!(plan.interior_ratios(), vec![0.0, 0.0], "{:?}", plan.surrogate);
    assert_eq!(out.footprint(), 2.0);
    let x = &toy.pair.test[1].inputs;
    let merged = out.merged.net.logits(x).unwrap();
    let ensemble = ensemble_forward(&toy.a, &toy.b, x, EnsembleMode::LogitAverage).unwrap();
    let gap = merged.data().iter().zip(ensemble.data()).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
    assert!(gap <= 1e-3, "{gap}");
}

#[test]
fn ensemble_method_matches_logit_averaging() {
    let toy = small_toy();
    let out = merge_models(&toy.a, &toy.b, task_data(&toy), &PipelineConfig::new(Method::Ensemble, Sizing::Ratios(vec![])), None).unwrap();
    let x = &toy.pair.test[0].inputs;
    let expected = ensemble_forward(&toy.a, &toy.b, x, EnsembleMode::LogitAverage).unwrap();
    let got = out.merged.net.logits(x).unwrap();
    assert!(got.data().iter().zip(expected.data()).all(|(p, q)| (p - q).abs() <= 1e-5));
    assert_eq!(out.merged.meta.method, "ensemble");
    assert_eq!(out.merged.meta.data_source, "none");
}

#[test]
fn proxy_merges_are_tagged() {
    let toy = small_toy();
    let proxy = toy.proxy();
    let cfg = PipelineConfig::new(Method::Pleas, Sizing::Ratios(vec![1.0, 1.0]));
    let out = merge_models(&toy.a, &toy.b, MergeData::Proxy(&proxy), &cfg, None).unwrap();
    assert_eq!(out.merged.meta.method, "pleas_free");
    assert_eq!(out.merged.meta.data_source, "proxy:proxy");
    assert_eq!(out.merged.meta.target_mode.as_deref(), Some("pre_activation"));
    let simple = merge_models(&toy.a, &toy.b, task_data(&toy), &PipelineConfig::new(Method::SimpleAvg, Sizing::Ratios(vec![])), None).unwrap();
    assert_eq!(simple.merged.meta.data_source, "none");
}

#[test]
fn bad_sizing_is_rejected() {
    let toy = small_toy();
    let data = task_data(&toy);
    let err = merge_models(&toy.a, &toy.b, data, &PipelineConfig::new(Method::Pleas, Sizing::budget(0.5)), None)
        .unwrap_err()
        .to_string();
    assert!(err.contains("budget must be in [1,2]"), "{err}");
    assert!(merge_models(&toy.a, &toy.b, data, &PipelineConfig::new(Method::Pleas, Sizing::Ratios(vec![0.5])), None).is_err());
    assert!(merge_models(&toy.a, &toy.b, data, &PipelineConfig::new(Method::Pleas, Sizing::Ratios(vec![0.5, 1.5])), None).is_err());
}

#[test]
fn tradeoff_is_deterministic_and_complete() {
    let toy = small_toy();
    let cfg = TradeoffConfig {
        budgets: vec![1.0, 1.5],
        seeds: vec![0, 1],
        ..TradeoffConfig::default()
    };
    let train = [&toy.pair.train[0], &toy.pair.train[1]];
    let tests = [&toy.pair.test[0], &toy.pair.test[1]];
    let first = run_tradeoff(&toy.a, &toy.b, train, &tests, &cfg, None).unwrap();
    let second = run_tradeoff(&toy.a, &toy.b, train, &tests, &cfg, None).unwrap();
    assert_eq!(first, second);
    // 3 budgeted methods x 2 budgets + 3 fixed methods, per seed and task.
    assert_eq!(first.rows.len(), (3 * 2 + 3) * 2 * 2);
    let csv = first.to_csv().unwrap();
    assert_eq!(csv.lines().next().unwrap(), TRADEOFF_HEADER);
    assert_eq!(csv.lines().count(), first.rows.len() + 1);
    assert!(first.rows.iter().filter(|r| r.method == "ensemble").all(|r| r.footprint == 2.0 && r.budget == 2.0));
    assert!(first.rows.iter().all(|r| r.footprint <= r.budget + 1e-9));
    assert!(first.mean_accuracy("pleas", 1.5).is_some());
    let bad = TradeoffConfig {
        budgets: vec![3.0],
        ..cfg
    };
    assert!(run_tradeoff(&toy.a, &toy.b, train, &tests, &bad, None).is_err());
}

fn random_features(rows: usize, n: usize, seed: u64) -> Matrix {
    let mut rng = seeded_rng(seed);
    Matrix::from_fn(rows, n, |_, _| rng.normal() as f32)
}

#[test]
fn probe_on_noise_is_at_chance() {
    let labels: Vec<usize> = (0..400).map(|t| t % 2).collect();
    let acc = linear_probe(&random_features(8, 400, 1), &labels, &random_features(8, 400, 2), &labels, ProbeHyper::default()).unwrap();
    assert!((acc - 0.5).abs() <= 0.1, "{acc}");
}

#[test]
fn probe_is_seeded() {
    let labels: Vec<usize> = (0..100).map(|t| t % 3).collect();
    let f = random_features(4, 100, 3);
    let h = ProbeHyper { epochs: 3, ..ProbeHyper::default() };
    assert_eq!(linear_probe(&f, &labels, &f, &labels, h).unwrap(), linear_probe(&f, &labels, &f, &labels, h).unwrap());
}

#[test]
fn concatenated_features_probe_at_least_as_well() {
    let params = TaskParams::default();
    let kind = TaskKind::DisjointLabelSubset {
        subsets: [vec![0, 1, 2], vec![3, 4, 5]],
    };
    let pair = make_synthetic_task(&kind, &params, 7).unwrap();
    let spec = NetworkSpec::new(vec![12, 16, 16, 6], false).unwrap();
    let hyper = |seed| TrainHyper { steps: 600, seed, ..TrainHyper::default() };
    let a = train_toy(&pair.train[0], &spec, hyper(1)).unwrap().net;
    let b = train_toy(&pair.train[1], &spec, hyper(2)).unwrap().net;
    let train = Dataset::concat(&[&pair.train[0], &pair.train[1]], "train").unwrap();
    let test = Dataset::concat(&[&pair.test[0], &pair.test[1]], "test").unwrap();
    let probe = |f: &dyn Fn(&Matrix) -> Matrix| {
        linear_probe(&f(&train.inputs), &train.labels, &f(&test.inputs), &test.labels, ProbeHyper::default()).unwrap()
    };
    let single = probe(&|x| a.penultimate(x).unwrap());
    let concat = probe(&|x| ensemble_forward(&a, &b, x, EnsembleMode::FeatureConcat).unwrap());
    assert!(concat >= single - 0.02, "concat {concat} vs single {single}");
}

#[test]
fn tradeoff_rows_at_full_budget_match_the_ensemble() {
    let toy = small_toy();
    let cfg = TradeoffConfig {
        methods: vec![Method::Pleas, Method::Ensemble],
        budgets: vec![2.0],
        ..TradeoffConfig::default()
    };
    let tests = [&toy.pair.test[0], &toy.pair.test[1]];
    let result = run_tradeoff(&toy.a, &toy.b, [&toy.pair.train[0], &toy.pair.train[1]], &tests, &cfg, None).unwrap();
    for test in tests {
        let task = &test.task_id;
        let acc = |m: &str| result.rows.iter().find(|r| r.method == m && &r.task == task).unwrap().accuracy;
        assert!((acc("pleas") - acc("ensemble")).abs() <= 1e-5, "{task}");
    }
}

#[test]
fn tradeoff_of_a_permuted_copy_keeps_its_accuracy() {
    let toy = small_toy();
    let sigma = pleas_core::network::random_hidden_permutations(&toy.a.widths(), &mut seeded_rng(4));
    let copy = toy.a.permuted_copy(&sigma).unwrap();
    let cfg = TradeoffConfig {
        methods: vec![Method::PermuteAvg, Method::SimpleAvg],
        budgets: vec![1.0],
        ..TradeoffConfig::default()
    };
    let test = &toy.pair.test[0];
    let result = run_tradeoff(&toy.a, &copy, [&toy.pair.train[0], &toy.pair.train[0]], &[test], &cfg, None).unwrap();
    let own = pleas_core::eval::accuracy(&toy.a, test).unwrap();
    let permute = result.mean_accuracy("permute_avg", 1.0).unwrap();
    let simple = result.mean_accuracy("simple_avg", 1.0).unwrap();
    assert!((permute - own).abs() <= 0.01, "{permute} vs {own}");
    assert!(permute >= simple);
}
