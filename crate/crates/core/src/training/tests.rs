use proptest::prelude::*;

use super::*;
use crate::geometry::{RouteSpec, DT};
use crate::scenario::{generate_synthetic_scenarios, SyntheticSpec};
use crate::trajgen::{PathKind, Provenance};

fn line(y: f64, theta: f64) -> Trajectory {
    let states = (0..31).map(|k| EgoState::new(k as f64, y, theta, 5.0)).collect();
    Trajectory::new(states, DT, 0.0).unwrap()
}

fn set_of(trajs: Vec<Trajectory>) -> TrajectorySet {
    let mut set = TrajectorySet::default();
    for t in trajs {
        set.push(t, Provenance { accel: 0.0, path: PathKind::Centerline });
    }
    set
}

#[test]
fn projection_oracles() {
    let set = set_of(vec![line(-1.0, 0.0), line(0.0, 0.0), line(2.0, 0.0)]);
    assert_eq!(project_expert(&set, &line(0.0, 0.0)), 1);
    assert_eq!(project_expert(&set, &line(1.4, 0.0)), 2);
    assert_eq!(project_expert(&set, &line(-0.6, 0.0)), 0);
    // Equidistant from members 0 and 1: the lower index wins.
    assert_eq!(project_expert(&set, &line(-0.5, 0.0)), 0);
    // Heading does not enter the projection but does enter the weighted label.
    let yawed = set_of(vec![line(0.3, 0.0), line(0.0, 0.5)]);
    assert_eq!(project_expert(&yawed, &line(0.0, 0.0)), 1);
    assert_eq!(closest(&yawed, &line(0.0, 0.0), YAW_WEIGHT), 0);
    assert!((trajectory_distance(&line(0.0, 0.0), &line(0.75, 1.0)) - 0.75).abs() < 1e-12);
}

fn straight_scene(v: f64) -> SceneContext {
    let route = RouteSpec::straight([-100.0, 0.0], 0.0, 400.0, 15.0, 1.75).unwrap();
    SceneContext::with_constant_history(EgoState::new(0.0, 0.0, 0.0, v), Vec::new(), route)
}

#[test]
fn zero_noise_is_identity() {
    let scene = straight_scene(7.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(augment_initial_state(&scene, &AugmentConfig::NONE, &mut rng), scene);
}

#[test]
fn augmentation_statistics_match_the_configured_noise() {
    let scene = straight_scene(10.0);
    let cfg = AugmentConfig::HIGH;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 10_000;
    let mut sq = [0.0f64; 4];
    for _ in 0..n {
        let a = augment_initial_state(&scene, &cfg, &mut rng);
        let d = [a.ego.x, a.ego.y, a.ego.theta, a.ego.v - 10.0];
        for (s, v) in sq.iter_mut().zip(d) {
            *s += v * v;
        }
        let h0 = &scene.history[0].ego;
        let h = &a.history[0].ego;
        assert!((h.x - h0.x - a.ego.x).abs() < 1e-9 && (h.y - a.ego.y).abs() < 1e-9);
        assert!((h.theta - a.ego.theta).abs() < 1e-12 && (h.v - h0.v - (a.ego.v - 10.0)).abs() < 1e-12);
        assert_eq!(a.agents, scene.agents);
        assert_eq!(a.route, scene.route);
    }
    for (s, want) in sq.iter().zip([cfg.lon, cfg.lat, cfg.heading, cfg.vel]) {
        let std = (s / n as f64).sqrt();
        assert!((std / want - 1.0).abs() < 0.05, "std {std} vs {want}");
    }
}

#[test]
fn augmented_speed_never_goes_negative() {
    let scene = straight_scene(0.05);
    let cfg = AugmentConfig { vel: 2.0, ..AugmentConfig::NONE };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut clamped = 0;
    for _ in 0..500 {
        let a = augment_initial_state(&scene, &cfg, &mut rng);
        assert!(a.ego.v >= 0.0 && a.history.iter().all(|h| h.ego.v >= 0.0));
        clamped += (a.ego.v == 0.0) as usize;
        assert_eq!((a.ego.x, a.ego.y, a.ego.theta), (0.0, 0.0, 0.0));
    }
    assert!(clamped > 100);
}

#[test]
fn balancing_oracles() {
    let tags: Vec<BTreeSet<Tag>> = (0..10)
        .map(|i| if i == 0 { [Tag::Stopped].into_iter().collect() } else { [Tag::Straight].into_iter().collect() })
        .collect();
    assert_eq!(balance_multiplicities(&tags, &BTreeMap::new()), vec![1; 10]);
    let targets: BTreeMap<Tag, f64> = [(Tag::Stopped, 0.5)].into_iter().collect();
    let m = balance_multiplicities(&tags, &targets);
    assert_eq!(m[0], 5);
    assert!(m[1..].iter().all(|&x| x == 1));
    let both: BTreeMap<Tag, f64> = [(Tag::Stopped, 0.5), (Tag::Straight, 0.5), (Tag::Asv, 0.9)].into_iter().collect();
    assert_eq!(balance_multiplicities(&tags, &both), m);
}

#[test]
fn cosine_schedule_restarts() {
    let cfg = TrainConfig::default();
    assert!((lr_schedule(0.0, &cfg) - cfg.lr_init).abs() < 1e-15);
    assert!((lr_schedule(7.0, &cfg) - cfg.lr_init).abs() < 1e-15);
    assert!((lr_schedule(3.5, &cfg) - 0.5 * (cfg.lr_init + cfg.lr_min)).abs() < 1e-15);
    assert!(lr_schedule(6.999, &cfg) < cfg.lr_min * 1.001);
}

proptest! {
    #[test]
    fn schedule_stays_in_bounds(e in 0.0f64..100.0) {
        let cfg = TrainConfig::default();
        let lr = lr_schedule(e, &cfg);
        prop_assert!(lr >= cfg.lr_min - 1e-18 && lr <= cfg.lr_init + 1e-18);
    }
}

fn real_samples(n: usize, seed: u64) -> Vec<TrainSample> {
    let recs = generate_synthetic_scenarios(&SyntheticSpec::all_scripts(n, "tr"), seed).unwrap();
    assemble_dataset(&recs, &[0], LabelMode::Projection, &PipelineConfig::default()).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        epochs: 2,
        scorer: ScorerConfig::reduced(),
        ..TrainConfig::default()
    }
}

#[test]
fn dataset_labels_are_projections_onto_the_filtered_set() {
    let samples = real_samples(7, 5);
    assert!(samples.len() >= 5);
    for s in &samples {
        assert_eq!(s.bundles.len(), s.trajectory_set.len());
        assert_eq!(s.demo_index, project_expert(&s.trajectory_set, &s.expert));
    }
}

#[test]
fn overfits_a_single_pair() {
    let mut s = real_samples(1, 3).remove(0);
    let keep = [s.demo_index, if s.demo_index == 0 { s.bundles.len() - 1 } else { 0 }];
    s.bundles = keep.iter().map(|&i| s.bundles[i].clone()).collect();
    s.trajectory_set = s.trajectory_set.subset(&(0..s.trajectory_set.len()).map(|i| keep.contains(&i)).collect::<Vec<_>>());
    s.demo_index = 0;
    let data = vec![s; 4];
    let cfg = TrainConfig {
        epochs: 200,
        lr_init: 3e-3,
        lr_min: 3e-3,
        augment: AugmentConfig::NONE,
        ..small_config()
    };
    let report = train(&data, &data, &cfg, &PipelineConfig::default()).unwrap();
    let last = report.log.last().unwrap();
    assert!(last.train_loss < 1e-3, "train loss {}", last.train_loss);
    assert!(report.log[0].train_loss > last.train_loss);
}

#[test]
fn training_is_deterministic() {
    let data = real_samples(6, 8);
    let cfg = small_config();
    let pipe = PipelineConfig::default();
    let a = train(&data, &data, &cfg, &pipe).unwrap();
    let b = train(&data, &data, &cfg, &pipe).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.params.values, b.params.values);
    assert_eq!(a.log.len(), 2);
    assert!(a.best_epoch >= 1 && a.best_epoch <= 2);
}

#[test]
fn nan_features_stop_training() {
    let mut data = real_samples(2, 4);
    data[0].bundles[0].tensors[0][[0, 0]] = f32::NAN;
    let cfg = TrainConfig { augment: AugmentConfig::NONE, ..small_config() };
    match train(&data, &data, &cfg, &PipelineConfig::default()) {
        Err(Error::NonFiniteLoss { epoch, .. }) => assert_eq!(epoch, 1),
        other => panic!("{:?}", other.map(|r| r.log)),
    }
}

#[test]
fn adam_first_step_moves_by_lr_along_the_gradient_sign() {
    let mut params = init_params(&ScorerConfig::reduced(), 0);
    let before = params.clone();
    let grads: Vec<ndarray::Array2<f64>> = params
        .values
        .iter()
        .map(|v| ndarray::Array2::from_shape_fn(v.raw_dim(), |(i, j)| if (i + j) % 2 == 0 { 0.3 } else { -2.0 }))
        .collect();
    let mut adam = Adam::new(&params, 0.9, 0.999, 1e-8);
    adam.step(&mut params, &grads, 1e-2);
    for i in 0..params.values.len() {
        for ((p, q), g) in params.values[i].iter().zip(&before.values[i]).zip(&grads[i]) {
            let want = if params.trainable[i] { -1e-2 * g.signum() } else { 0.0 };
            assert!((p - q - want).abs() < 1e-9);
        }
    }
}

#[test]
fn training_log_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("training_log.csv");
    write_training_log(&path, &[EpochLog { epoch: 1, lr: 1e-3, train_loss: 0.5, val_loss: 0.25 }]).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "epoch,lr,train_loss,val_loss\n1,1.000000e-3,0.500000,0.250000\n");
}
