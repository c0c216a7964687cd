//! Run configuration: one flat TOML file, then `IRLPLAN_*` environment
//! overrides, then command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use irlplan_core::features::FeatureKind;
use irlplan_core::planners::{PipelineConfig, PlannerKind};
use irlplan_core::prediction::IdmParams;
use irlplan_core::safety::SafetyConfig;
use irlplan_core::scenario::{ScriptKind, TEST_SUITE_SEED, TEST_SUITE_SIZE, TRAIN_SUITE_SIZE, VAL_SUITE_SIZE};
use irlplan_core::scorer::{Architecture, ScorerConfig};
use irlplan_core::training::{AugmentConfig, LabelMode, TrainConfig};
use irlplan_core::trajgen::GeneratorConfig;
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "IRLPLAN_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    None,
    Low,
    High,
}

impl NoiseLevel {
    pub fn config(self) -> AugmentConfig {
        match self {
            NoiseLevel::None => AugmentConfig::NONE,
            NoiseLevel::Low => AugmentConfig::LOW,
            NoiseLevel::High => AugmentConfig::HIGH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblateAxis {
    Features,
    Noise,
    Architecture,
    Loss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// 0 lets rayon pick.
    pub workers: usize,

    pub train_scenarios: usize,
    pub val_scenarios: usize,
    pub test_scenarios: usize,
    pub test_seed: u64,
    pub scripts: Vec<String>,

    pub planners: Vec<PlannerKind>,
    pub eval_split: String,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub restart_period: f64,
    pub gamma: f64,
    pub augment: NoiseLevel,
    pub augment_prob: f64,
    pub label: LabelMode,
    pub sample_ticks: Vec<usize>,

    pub architecture: Architecture,
    pub features: Vec<FeatureKind>,
    pub hidden: usize,
    pub ff_hidden: usize,
    pub dim: usize,
    pub heads: usize,
    pub head_hidden: usize,

    pub accel_min: f64,
    pub accel_max: f64,
    pub accel_step: f64,
    pub turning_radii: Vec<f64>,

    pub min_gap: f64,
    pub lead_hard_brake: f64,
    pub ego_firm_brake: f64,
    pub ego_jerk_limit: f64,

    pub ablate_axis: AblateAxis,
    /// Variant names to run; empty runs every variant of the axis.
    pub ablate_variants: Vec<String>,
    pub ablate_planner: PlannerKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let gen = GeneratorConfig::default();
        let safety = SafetyConfig::default();
        let scorer = ScorerConfig::default();
        Self {
            seed: 1,
            workers: 0,
            train_scenarios: TRAIN_SUITE_SIZE,
            val_scenarios: VAL_SUITE_SIZE,
            test_scenarios: TEST_SUITE_SIZE,
            test_seed: TEST_SUITE_SEED,
            scripts: ScriptKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            planners: vec![
                PlannerKind::ConstantSpeed,
                PlannerKind::Idm,
                PlannerKind::Learned,
                PlannerKind::LearnedPlusSafety,
                PlannerKind::ExpertReplay,
            ],
            eval_split: "test".into(),
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr_init: train.lr_init,
            lr_min: train.lr_min,
            restart_period: train.restart_period,
            gamma: train.gamma,
            augment: NoiseLevel::Low,
            augment_prob: train.augment_prob,
            label: train.label,
            sample_ticks: train.sample_ticks,
            architecture: scorer.architecture,
            features: scorer.features,
            hidden: scorer.hidden,
            ff_hidden: scorer.ff_hidden,
            dim: scorer.dim,
            heads: scorer.heads,
            head_hidden: scorer.head_hidden,
            accel_min: gen.accel_min,
            accel_max: gen.accel_max,
            accel_step: gen.accel_step,
            turning_radii: gen.turning_radii,
            min_gap: safety.min_gap,
            lead_hard_brake: safety.lead_hard_brake,
            ego_firm_brake: safety.ego_firm_brake,
            ego_jerk_limit: safety.ego_jerk_limit,
            ablate_axis: AblateAxis::Noise,
            ablate_variants: Vec::new(),
            ablate_planner: PlannerKind::LearnedPlusSafety,
        }
    }
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr_init: self.lr_init,
            lr_min: self.lr_min,
            restart_period: self.restart_period,
            epochs: self.epochs,
            gamma: self.gamma,
            augment: self.augment.config(),
            augment_prob: self.augment_prob,
            label: self.label,
            sample_ticks: self.sample_ticks.clone(),
            seed: self.seed,
            scorer: ScorerConfig {
                hidden: self.hidden,
                ff_hidden: self.ff_hidden,
                dim: self.dim,
                heads: self.heads,
                head_hidden: self.head_hidden,
                architecture: self.architecture,
                features: self.features.clone(),
                ..ScorerConfig::default()
            },
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            generator: GeneratorConfig {
                accel_min: self.accel_min,
                accel_max: self.accel_max,
                accel_step: self.accel_step,
                turning_radii: self.turning_radii.clone(),
                ..GeneratorConfig::default()
            },
            safety: SafetyConfig {
                min_gap: self.min_gap,
                lead_hard_brake: self.lead_hard_brake,
                ego_firm_brake: self.ego_firm_brake,
                ego_jerk_limit: self.ego_jerk_limit,
                ..SafetyConfig::default()
            },
            prediction: IdmParams::default(),
        }
    }
}

/// Value of an override: a TOML literal if it parses as one, the raw string otherwise.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

pub fn parse_config(text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<RunConfig> {
    let mut table: toml::Table = text.parse().context("config is not valid TOML")?;
    if let Some((k, _)) = table.iter().find(|(_, v)| v.is_table()) {
        bail!("config must be flat, `{k}` is a table");
    }
    for (key, raw) in env {
        if let Some(name) = key.strip_prefix(ENV_PREFIX) {
            table.insert(name.to_ascii_lowercase(), parse_value(&raw));
        }
    }
    let cfg = RunConfig::deserialize(toml::Value::Table(table)).context("invalid config")?;
    cfg.train_config().validate()?;
    if cfg.scripts.iter().any(|s| ScriptKind::from_name(s).is_err()) {
        bail!("unknown script in {:?}", cfg.scripts);
    }
    Ok(cfg)
}

/// File (or defaults when absent) plus the process environment.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    parse_config(&text, std::env::vars())
}
