use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use trajectron_core::dataio::{make_constant_velocity, SceneTimeline, Standardizer, DEFAULT_NODE_TYPE};
use trajectron_core::eval::protocol::{CONST_VEL_METHOD, DETERMINISTIC, LINEAR_METHOD, METRIC_CSV_HEADER, MODEL_METHOD, NLL_CSV_HEADER};
use trajectron_core::eval::{
    ade, best_of_n, crowd_scene, encode_speed, evaluate_fold, fde, runtime_benchmark, BenchOptions, EvalOptions,
};
use trajectron_core::model::{Model, ModelConfig, SampleMode};

fn noisy_pool(rng: &mut ChaCha8Rng, truth: &[[f64; 2]], n: usize) -> Vec<Vec<[f64; 2]>> {
    let noise = Normal::new(0.0, rng.random_range(0.05..2.0)).unwrap();
    (0..n)
        .map(|_| truth.iter().map(|p| [p[0] + noise.sample(rng), p[1] + noise.sample(rng)]).collect())
        .collect()
}

#[test]
fn best_of_n_is_monotone_and_below_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let horizon = rng.random_range(1..13);
        let truth: Vec<[f64; 2]> = (0..horizon).map(|t| [t as f64 * 0.5, rng.random_range(-1.0..1.0)]).collect();
        let pool = noisy_pool(&mut rng, &truth, 100);
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for n in [1, 2, 5, 10, 20, 50, 100] {
            let b = best_of_n(&pool, &truth, n).unwrap();
            assert!(b.0 <= prev.0 && b.1 <= prev.1);
            prev = b;
        }
        let mean_ade = pool.iter().map(|s| ade(s, &truth).unwrap()).sum::<f64>() / 100.0;
        let mean_fde = pool.iter().map(|s| fde(s, &truth).unwrap()).sum::<f64>() / 100.0;
        assert!(prev.0 <= mean_ade && prev.1 <= mean_fde);
    }
}

fn rigid(p: [f64; 2], angle: f64, shift: [f64; 2]) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1] + shift[0], s * p[0] + c * p[1] + shift[1]]
}

proptest! {
    #[test]
    fn displacement_errors_are_rigid_invariant(
        pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0), 1..15),
        angle in -3.2f64..3.2,
        sx in -50.0f64..50.0,
        sy in -50.0f64..50.0,
    ) {
        let a: Vec<[f64; 2]> = pts.iter().map(|p| [p.0, p.1]).collect();
        let b: Vec<[f64; 2]> = pts.iter().map(|p| [p.2, p.3]).collect();
        prop_assert_eq!(ade(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(fde(&a, &a).unwrap(), 0.0);
        let ta: Vec<[f64; 2]> = a.iter().map(|&p| rigid(p, angle, [sx, sy])).collect();
        let tb: Vec<[f64; 2]> = b.iter().map(|&p| rigid(p, angle, [sx, sy])).collect();
        prop_assert!((ade(&a, &b).unwrap() - ade(&ta, &tb).unwrap()).abs() < 1e-9);
        prop_assert!((fde(&a, &b).unwrap() - fde(&ta, &tb).unwrap()).abs() < 1e-9);
    }
}

fn small_config() -> ModelConfig {
    ModelConfig {
        nhe_hidden: 8,
        nfe_hidden: 8,
        ee_hidden: 4,
        attention_hidden: 4,
        decoder_hidden: 16,
        latent_mlp_hidden: 8,
        n_gmm_components: 3,
        latent_cardinality: 4,
        ..ModelConfig::default()
    }
}

fn small_opts() -> EvalOptions {
    EvalOptions {
        n_samples: 40,
        bon_n: Some(20),
        obs_stride: 4,
        ..EvalOptions::default()
    }
}

#[test]
fn baselines_are_exact_on_noiseless_linear_scenes() {
    let scenes = make_constant_velocity(3, 3, 24, 0.0, 2).unwrap();
    let table = evaluate_fold::<f64>(None, &scenes, "cv", &small_opts()).unwrap();
    for method in [CONST_VEL_METHOD, LINEAR_METHOD] {
        for metric in ["ade", "fde", "bon_ade", "bon_fde"] {
            let row = table.get(method, DETERMINISTIC, metric).unwrap();
            assert!(row.value < 1e-9 && row.n > 0, "{method} {metric} {}", row.value);
        }
        let values = table.values.iter().find(|v| v.method == method).unwrap();
        assert!(values.ade.iter().all(|a| *a < 1e-9));
    }
    assert!(table.get(MODEL_METHOD, "full", "ade").is_none());
}

#[test]
fn model_table_schema_and_gating() {
    let config = small_config();
    let scenes = make_constant_velocity(2, 3, 24, 0.02, 5).unwrap();
    let model = Model::<f64>::initialize(&config, Standardizer::fit(&scenes), 0).unwrap();
    let table = evaluate_fold(Some(&model), &scenes, "fold_a", &small_opts()).unwrap();
    table.validate().unwrap();

    let csv = table.metrics_csv();
    assert_eq!(csv.lines().next().unwrap(), METRIC_CSV_HEADER);
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 8 && l.starts_with("fold_a,")));
    let steps = table.timestep_csv();
    assert_eq!(steps.lines().next().unwrap(), NLL_CSV_HEADER);
    // two sampled modes times the horizon, no NLL for deterministic baselines
    assert_eq!(steps.lines().count(), 1 + 2 * config.horizon);

    for mode in [SampleMode::Full, SampleMode::ZBest] {
        let c = mode.to_string();
        for metric in ["ade", "fde", "bon_ade", "bon_fde", "nll"] {
            assert!(table.get(MODEL_METHOD, &c, metric).is_some(), "{c} {metric}");
        }
        let ade = table.get(MODEL_METHOD, &c, "ade").unwrap().value;
        let bon = table.get(MODEL_METHOD, &c, "bon_ade").unwrap().value;
        assert!(bon <= ade);
    }
    assert!(table.get(CONST_VEL_METHOD, DETERMINISTIC, "nll").is_none());

    let no_bon = evaluate_fold(Some(&model), &scenes, "fold_a", &EvalOptions { bon_n: None, ..small_opts() }).unwrap();
    assert!(no_bon.rows.iter().all(|r| !r.metric.starts_with("bon_")));
    assert!(no_bon.get(MODEL_METHOD, "full", "ade").is_some());
}

#[test]
fn evaluation_is_deterministic_and_schedule_independent() {
    let config = small_config();
    let scenes = make_constant_velocity(3, 2, 22, 0.05, 8).unwrap();
    let model = Model::<f64>::initialize(&config, Standardizer::fit(&scenes), 1).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| evaluate_fold(Some(&model), &scenes, "f", &small_opts()).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a.metrics_csv(), b.metrics_csv());
    assert_eq!(a.timestep_csv(), b.timestep_csv());
}

#[test]
fn short_and_departing_agents_are_counted() {
    let walk = |from: usize, to: usize, y: f64| -> Vec<Option<[f64; 2]>> {
        (0..24).map(|t| (from..to).contains(&t).then(|| [0.4 * t as f64, y])).collect()
    };
    let scene = SceneTimeline::from_positions(
        "mixed",
        0.4,
        DEFAULT_NODE_TYPE,
        &[(0, walk(0, 24, 0.0)), (1, walk(0, 14, 5.0)), (2, walk(3, 24, 10.0))],
    )
    .unwrap();
    let opts = EvalOptions { obs_stride: 1, ..small_opts() };
    let table = evaluate_fold::<f64>(None, &[scene], "f", &opts).unwrap();
    // prediction steps 7..=11: agent 0 always, agent 2 from step 10
    assert_eq!(table.get(CONST_VEL_METHOD, DETERMINISTIC, "ade").unwrap().n, 5 + 2);
    // agent 1 at steps 7..=11 and agent 2 at steps 7..=9
    assert_eq!(table.skipped_no_future, 5);
    assert_eq!(table.skipped_short_history, 3);

    let too_short = make_constant_velocity(1, 2, 16, 0.0, 1).unwrap();
    assert!(evaluate_fold::<f64>(None, &too_short, "f", &opts).unwrap().rows.is_empty());
    assert!(evaluate_fold::<f64>(None, &too_short, "f", &EvalOptions { bon_n: Some(41), ..small_opts() }).is_err());
}

#[test]
fn z_best_is_not_slower_and_time_grows_with_samples() {
    let model = Model::<f64>::initialize(&ModelConfig::default(), Standardizer::identity(), 0).unwrap();
    let datasets = vec![
        ("cv".to_string(), make_constant_velocity(2, 3, 10, 0.05, 3).unwrap()),
        ("crowd".to_string(), vec![crowd_scene(6, 10, 1).unwrap()]),
    ];
    let opts = BenchOptions {
        repetitions: 4,
        max_points: 2,
        ..BenchOptions::default()
    };
    let rows = runtime_benchmark(&model, &datasets, &opts).unwrap();
    assert_eq!(rows.len(), 4);
    for pair in rows.chunks(2) {
        let (full, zbest) = (&pair[0], &pair[1]);
        assert_eq!((full.mode, zbest.mode), (SampleMode::Full, SampleMode::ZBest));
        assert!(zbest.mean_s <= full.mean_s * 1.05, "{} vs {}", zbest.mean_s, full.mean_s);
    }
    let doubled = runtime_benchmark(&model, &datasets[..1], &BenchOptions { n_samples: 400, ..opts.clone() }).unwrap();
    assert!(doubled[0].mean_s > rows[0].mean_s);
}

#[test]
fn incremental_step_beats_full_reencode() {
    let model = Model::<f64>::initialize(&ModelConfig::default(), Standardizer::identity(), 0).unwrap();
    // 8 observed steps, then one new step
    let scene = crowd_scene(20, 9, 4).unwrap();
    let speed = encode_speed(&model, &scene, 15).unwrap();
    assert!(speed.ratio() >= 5.0, "{speed:?}");
}
