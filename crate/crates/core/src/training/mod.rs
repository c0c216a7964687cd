//! Dataset assembly (demonstration labels, augmentation, balancing) and the
//! optimization loop.

mod adam;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{compute_bundles, FeatureBundle};
use crate::geometry::{angle_diff, wrap_angle, EgoState, SceneContext, Trajectory};
use crate::io::atomic_write;
use crate::planners::{PipelineConfig, PREDICTION_HORIZON};
use crate::prediction::predict_agents;
use crate::safety::filter_set;
use crate::scenario::ScenarioRecord;
use crate::scorer::{
    focal_nll, init_params, loss_and_grads, softmax_distribution, update_running_stats, BatchInput, Group, Mode, ScorerConfig,
    ScorerParams,
};
use crate::sim::{tag_scenario, Tag, YAW_WEIGHT};
use crate::trajgen::{generate_trajectories, TrajectorySet};

pub use adam::Adam;

/// How the demonstration label is chosen among the candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Closest safe candidate in mean positional distance.
    Projection,
    /// Closest safe candidate with the yaw term of the evaluation metric.
    WeightedYaw,
    /// The recorded expert plan itself, appended to the safe candidates.
    GroundTruth,
    /// Closest candidate of the unfiltered set.
    UnsafeProjection,
}

/// Standard deviations of the initial-state perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub lon: f64,
    pub lat: f64,
    pub heading: f64,
    pub vel: f64,
}

impl AugmentConfig {
    pub const NONE: AugmentConfig = AugmentConfig { lon: 0.0, lat: 0.0, heading: 0.0, vel: 0.0 };
    pub const LOW: AugmentConfig = AugmentConfig { lon: 1.2, lat: 0.8, heading: 0.1, vel: 0.1 };
    pub const HIGH: AugmentConfig = AugmentConfig { lon: 2.5, lat: 1.5, heading: 0.3, vel: 0.2 };

    pub fn is_zero(&self) -> bool {
        self.lon == 0.0 && self.lat == 0.0 && self.heading == 0.0 && self.vel == 0.0
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self::LOW
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    /// Epochs per cosine cycle.
    pub restart_period: f64,
    pub epochs: usize,
    pub gamma: f64,
    pub augment: AugmentConfig,
    /// Chance that a sample is perturbed in a given epoch.
    pub augment_prob: f64,
    pub label: LabelMode,
    /// Scenario ticks turned into training samples.
    pub sample_ticks: Vec<usize>,
    pub seed: u64,
    pub scorer: ScorerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr_init: 1e-3,
            lr_min: 1e-4,
            restart_period: 7.0,
            epochs: 20,
            gamma: 2.0,
            augment: AugmentConfig::default(),
            augment_prob: 0.5,
            label: LabelMode::Projection,
            sample_ticks: vec![0, 20],
            seed: 0,
            scorer: ScorerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Format(format!("train config: {m}")));
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epochs must be positive");
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_init) {
            return bad("need 0 < lr_min <= lr_init");
        }
        if !(self.restart_period > 0.0) || !(self.gamma >= 0.0) {
            return bad("restart period must be positive and gamma non-negative");
        }
        let a = self.augment;
        if [a.lon, a.lat, a.heading, a.vel].iter().any(|&s| !(s >= 0.0)) || !(0.0..=1.0).contains(&self.augment_prob) {
            return bad("augmentation stds must be non-negative and the probability in [0, 1]");
        }
        self.scorer.validate()
    }
}

/// Cosine annealing with warm restarts; `epoch` may be fractional.
pub fn lr_schedule(epoch: f64, cfg: &TrainConfig) -> f64 {
    let p = cfg.restart_period;
    let phase = epoch.max(0.0).rem_euclid(p) / p;
    cfg.lr_min + 0.5 * (cfg.lr_init - cfg.lr_min) * (1.0 + (std::f64::consts::PI * phase).cos())
}

fn mean_distance(a: &Trajectory, b: &Trajectory, yaw_weight: f64) -> f64 {
    let n = a.states.len().min(b.states.len());
    let mut sum = 0.0;
    for (p, q) in a.states.iter().zip(&b.states).take(n) {
        let d2 = (p.x - q.x).powi(2) + (p.y - q.y).powi(2);
        let y = yaw_weight * angle_diff(p.theta, q.theta);
        sum += (d2 + y * y).sqrt();
    }
    sum / n.max(1) as f64
}

fn closest(set: &TrajectorySet, expert: &Trajectory, yaw_weight: f64) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, t) in set.trajectories.iter().enumerate() {
        let d = mean_distance(t, expert, yaw_weight);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Candidate closest to the expert in mean positional distance (lowest index
/// on ties). Pass the safety-filtered set.
pub fn project_expert(set: &TrajectorySet, expert: &Trajectory) -> usize {
    closest(set, expert, 0.0)
}

/// Mean positional distance between two trajectories over their common states.
pub fn trajectory_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    mean_distance(a, b, 0.0)
}

/// Perturbs the ego in the route frame: longitudinal and lateral offsets,
/// heading and speed. The ego history moves rigidly with the current state.
pub fn augment_initial_state(scene: &SceneContext, cfg: &AugmentConfig, rng: &mut impl Rng) -> SceneContext {
    let mut draw = |std: f64| if std > 0.0 { Normal::new(0.0, std).unwrap().sample(rng) } else { 0.0 };
    let (ds, dl, dth, dv) = (draw(cfg.lon), draw(cfg.lat), draw(cfg.heading), draw(cfg.vel));
    let route = &scene.route;
    let shift = |e: &EgoState| -> EgoState {
        let (mut x, mut y, mut theta) = (e.x, e.y, e.theta);
        if ds != 0.0 || dl != 0.0 {
            let pr = route.project(e.position());
            let (nx, ny, nh) = route.pose_at(pr.station + ds, pr.lateral + dl);
            x = nx;
            y = ny;
            theta += angle_diff(nh, pr.heading);
        }
        if dth != 0.0 {
            theta = wrap_angle(theta + dth);
        }
        EgoState { x, y, theta, v: (e.v + dv).max(0.0), ..*e }
    };
    let mut out = scene.clone();
    out.ego = shift(&scene.ego);
    for h in &mut out.history {
        h.ego = shift(&h.ego);
    }
    out
}

/// One labeled planning tick.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub scene: SceneContext,
    /// Candidates after the safety filter (unfiltered for `UnsafeProjection`).
    pub trajectory_set: TrajectorySet,
    pub bundles: Vec<FeatureBundle>,
    pub demo_index: usize,
    pub tags: BTreeSet<Tag>,
    /// Recorded expert plan from this tick; the label target under augmentation.
    pub expert: Trajectory,
    pub scenario_id: String,
    pub tick: usize,
}

/// Generates, filters, featurizes and labels one scene. `None` when fewer
/// than two candidates remain.
pub fn build_sample(
    scene: SceneContext,
    expert: Trajectory,
    tags: BTreeSet<Tag>,
    label: LabelMode,
    pipeline: &PipelineConfig,
) -> Option<TrainSample> {
    let full = generate_trajectories(&scene, &pipeline.generator);
    let mut set = if label == LabelMode::UnsafeProjection {
        full
    } else {
        let f = filter_set(&full, &scene, &pipeline.safety);
        if f.fallback {
            return None;
        }
        f.set
    };
    let demo_index = match label {
        LabelMode::Projection | LabelMode::UnsafeProjection => project_expert(&set, &expert),
        LabelMode::WeightedYaw => closest(&set, &expert, YAW_WEIGHT),
        LabelMode::GroundTruth => {
            let mut gt = expert.clone();
            gt.states[0] = scene.ego;
            let prov = crate::trajgen::Provenance {
                accel: f64::NAN,
                path: crate::trajgen::PathKind::Snap,
            };
            set.push(gt, prov);
            set.len() - 1
        }
    };
    if set.len() < 2 {
        return None;
    }
    let preds = predict_agents(&scene, PREDICTION_HORIZON, &pipeline.prediction);
    let bundles = compute_bundles(&set.trajectories, &scene, &preds);
    Some(TrainSample {
        scene,
        trajectory_set: set,
        bundles,
        demo_index,
        tags,
        expert,
        scenario_id: String::new(),
        tick: 0,
    })
}

/// Samples at `ticks` of every scenario, as seen when following the expert.
pub fn assemble_dataset(scenarios: &[ScenarioRecord], ticks: &[usize], label: LabelMode, pipeline: &PipelineConfig) -> Result<Vec<TrainSample>> {
    let jobs: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|i| ticks.iter().map(move |&t| (i, t)))
        .collect();
    let out: Vec<Option<TrainSample>> = jobs
        .par_iter()
        .map(|&(i, tick)| -> Result<Option<TrainSample>> {
            let rec = &scenarios[i];
            let scene = rec.expert_scene_at(tick)?;
            let expert = rec.expert_trajectory_at(tick);
            Ok(build_sample(scene, expert, tag_scenario(rec), label, pipeline).map(|mut s| {
                s.scenario_id = rec.id.clone();
                s.tick = tick;
                s
            }))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

/// Multiplicity per sample: a tag below its target ratio has its samples
/// duplicated `round(target / current)` times; a sample takes the largest
/// multiplicity among its tags.
pub fn balance_multiplicities(tags: &[BTreeSet<Tag>], targets: &BTreeMap<Tag, f64>) -> Vec<usize> {
    let n = tags.len().max(1) as f64;
    let mut per_tag = BTreeMap::new();
    for (&tag, &target) in targets {
        let count = tags.iter().filter(|t| t.contains(&tag)).count();
        if count == 0 {
            continue;
        }
        let ratio = count as f64 / n;
        let m = if ratio < target { (target / ratio).round().max(1.0) as usize } else { 1 };
        per_tag.insert(tag, m);
    }
    tags.iter()
        .map(|t| t.iter().filter_map(|tag| per_tag.get(tag)).copied().max().unwrap_or(1))
        .collect()
}

/// Upsamples rare tags; every input sample is kept.
pub fn balance_dataset(samples: Vec<TrainSample>, targets: &BTreeMap<Tag, f64>) -> Vec<TrainSample> {
    let tags: Vec<BTreeSet<Tag>> = samples.iter().map(|s| s.tags.clone()).collect();
    let mult = balance_multiplicities(&tags, targets);
    let mut out = Vec::with_capacity(mult.iter().sum());
    for (s, m) in samples.into_iter().zip(mult) {
        for _ in 1..m {
            out.push(s.clone());
        }
        out.push(s);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Parameters of the epoch with the lowest validation loss.
    pub params: ScorerParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

fn batch_of(samples: &[&TrainSample], features: &[crate::features::FeatureKind]) -> Result<(BatchInput, Vec<Group>)> {
    let mut refs = Vec::new();
    let mut groups = Vec::with_capacity(samples.len());
    for s in samples {
        groups.push(Group {
            start: refs.len(),
            len: s.bundles.len(),
            target: s.demo_index,
        });
        refs.extend(s.bundles.iter());
    }
    Ok((BatchInput::from_bundles(&refs, features)?, groups))
}

/// Mean focal loss of eval-mode scores over `samples`.
pub fn evaluate_loss(params: &ScorerParams, samples: &[TrainSample], gamma: f64, chunk: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for c in samples.chunks(chunk.max(1)) {
        let refs: Vec<&FeatureBundle> = c.iter().flat_map(|s| s.bundles.iter()).collect();
        let rewards = crate::scorer::score_bundles(params, &refs)?;
        let mut at = 0;
        for s in c {
            let r = &rewards[at..at + s.bundles.len()];
            at += s.bundles.len();
            total += focal_nll(&softmax_distribution(r)?, s.demo_index, gamma)?;
        }
    }
    Ok(total / samples.len() as f64)
}

fn sample_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

/// This epoch's version of every training sample: a fresh perturbation with
/// probability `augment_prob`, the original otherwise.
fn epoch_samples<'a>(train: &'a [TrainSample], cfg: &TrainConfig, pipeline: &PipelineConfig, epoch: usize) -> Vec<std::borrow::Cow<'a, TrainSample>> {
    use std::borrow::Cow;
    if cfg.augment.is_zero() || cfg.augment_prob == 0.0 {
        return train.iter().map(Cow::Borrowed).collect();
    }
    train
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = sample_rng(cfg.seed, epoch + 1, i);
            if !rng.random_bool(cfg.augment_prob) {
                return Cow::Borrowed(s);
            }
            let scene = augment_initial_state(&s.scene, &cfg.augment, &mut rng);
            match build_sample(scene, s.expert.clone(), s.tags.clone(), cfg.label, pipeline) {
                Some(mut a) => {
                    a.scenario_id = s.scenario_id.clone();
                    a.tick = s.tick;
                    Cow::Owned(a)
                }
                None => Cow::Borrowed(s),
            }
        })
        .collect()
}

/// Adam on the mean focal loss per mini-batch, learning rate annealed per
/// batch, best validation parameters kept.
pub fn train(train: &[TrainSample], val: &[TrainSample], cfg: &TrainConfig, pipeline: &PipelineConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(s) = train.iter().chain(val).find(|s| s.bundles.len() < 2 || s.demo_index >= s.bundles.len()) {
        return Err(Error::InvalidDemoIndex { index: s.demo_index, count: s.bundles.len() });
    }
    let mut params = init_params(&cfg.scorer, cfg.seed);
    let mut adam = Adam::new(&params, 0.9, 0.999, 1e-8);
    let mut best: Option<(f64, usize, ScorerParams)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    let n_batches = train.len().div_ceil(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        let samples = epoch_samples(train, cfg, pipeline, epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut rng = sample_rng(cfg.seed, 0, epoch);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let lr = lr_schedule(epoch as f64 + b as f64 / n_batches as f64, cfg);
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| samples[i].as_ref()).collect();
            let (input, groups) = batch_of(&batch, &cfg.scorer.features)?;
            let (loss, grads, out) = loss_and_grads(&params, &input, &groups, cfg.gamma, Mode::Train)?;
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, batch: b, value: loss });
            }
            adam.step(&mut params, &grads, lr);
            update_running_stats(&mut params, &out);
            sum += loss;
        }
        let val_loss = evaluate_loss(&params, val, cfg.gamma, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: epoch + 1, batch: n_batches, value: val_loss });
        }
        log.push(EpochLog {
            epoch: epoch + 1,
            lr: lr_schedule(epoch as f64, cfg),
            train_loss: sum / n_batches as f64,
            val_loss,
        });
        if best.as_ref().map_or(true, |b| val_loss < b.0) {
            best = Some((val_loss, epoch + 1, params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainReport { params, log, best_epoch })
}

pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut out = String::from("epoch,lr,train_loss,val_loss\n");
    for e in log {
        out.push_str(&format!("{},{:.6e},{:.6},{:.6}\n", e.epoch, e.lr, e.train_loss, e.val_loss));
    }
    atomic_write(path, out.as_bytes())
}

#[cfg(test)]
mod tests;
