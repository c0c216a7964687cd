use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use irlplan_core::features::{write_feature_cache, CachedSample, FeatureCache, FeatureKind, SampleMeta};
use irlplan_core::io::atomic_write;
use irlplan_core::planners::{evaluate_planner, PlannerKind};
use irlplan_core::scenario::{generate_synthetic_scenarios, read_scenarios, write_scenarios, ScenarioRecord, SyntheticSpec, VAL_SEED_OFFSET};
use irlplan_core::scorer::{load_params, save_params, Architecture, ScorerParams};
use irlplan_core::sim::{aggregate, tag_scenario, write_summary_csv, write_tag_csv, MetricsReport, Summary, Tag};
use irlplan_core::training::{assemble_dataset, train, write_training_log, LabelMode, TrainReport};
use serde::Serialize;

use crate::config::{AblateAxis, NoiseLevel, RunConfig};

pub const SCENARIOS_FILE: &str = "scenarios.jsonl";
pub const FEATURES_FILE: &str = "features.bin";
pub const PARAMS_FILE: &str = "params.dirl";
pub const TRAINING_LOG_FILE: &str = "training_log.csv";
pub const ROLLOUTS_FILE: &str = "rollouts.jsonl";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TAG_SUMMARY_FILE: &str = "summary_by_tag.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Split of a scenario id written by `gen-scenarios`, e.g. `val-00012`.
pub fn split_of(id: &str) -> &str {
    id.split_once('-').map_or("", |(s, _)| s)
}

fn split_seed(cfg: &RunConfig, split: &str) -> u64 {
    match split {
        "train" => cfg.seed,
        "val" => cfg.seed.wrapping_add(VAL_SEED_OFFSET),
        _ => cfg.test_seed,
    }
}

fn split_count(cfg: &RunConfig, split: &str) -> usize {
    match split {
        "train" => cfg.train_scenarios,
        "val" => cfg.val_scenarios,
        _ => cfg.test_scenarios,
    }
}

pub fn gen_scenarios(cfg: &RunConfig, out: &Path) -> Result<Vec<ScenarioRecord>> {
    let mut all = Vec::new();
    for split in SPLITS {
        let spec = SyntheticSpec {
            count: split_count(cfg, split),
            scripts: cfg.scripts.clone(),
            id_prefix: format!("{split}-"),
        };
        all.extend(generate_synthetic_scenarios(&spec, split_seed(cfg, split)).with_context(|| format!("generating {split} split"))?);
    }
    write_scenarios(&out.join(SCENARIOS_FILE), &all).context("writing scenarios")?;
    Ok(all)
}

pub fn load_split(out: &Path, split: &str) -> Result<Vec<ScenarioRecord>> {
    let path = out.join(SCENARIOS_FILE);
    let all = read_scenarios(&path).with_context(|| format!("reading {} (run gen-scenarios first)", path.display()))?;
    let picked: Vec<ScenarioRecord> = all.into_iter().filter(|r| split_of(&r.id) == split).collect();
    if picked.is_empty() {
        bail!("no {split} scenarios in {}", path.display());
    }
    Ok(picked)
}

pub fn build_features(cfg: &RunConfig, out: &Path) -> Result<usize> {
    let pipeline = cfg.pipeline();
    let mut cache = FeatureCache::default();
    for split in ["train", "val"] {
        let scenarios = load_split(out, split)?;
        let samples = assemble_dataset(&scenarios, &cfg.sample_ticks, cfg.label, &pipeline)?;
        for s in samples {
            let mut labels = vec![0.0f32; s.bundles.len()];
            labels[s.demo_index] = 1.0;
            cache.samples.push(CachedSample {
                meta: SampleMeta {
                    scenario_id: s.scenario_id,
                    tick: s.tick,
                    tags: s.tags.iter().map(|t| t.name().to_string()).collect(),
                    split: split.to_string(),
                },
                labels,
                bundles: s.bundles,
            });
        }
    }
    write_feature_cache(&out.join(FEATURES_FILE), &cache).context("writing feature cache")?;
    Ok(cache.samples.len())
}

pub fn train_model(cfg: &RunConfig, out: &Path) -> Result<TrainReport> {
    let pipeline = cfg.pipeline();
    let tc = cfg.train_config();
    let train_set = assemble_dataset(&load_split(out, "train")?, &tc.sample_ticks, tc.label, &pipeline)?;
    let val_set = assemble_dataset(&load_split(out, "val")?, &tc.sample_ticks, tc.label, &pipeline)?;
    let report = train(&train_set, &val_set, &tc, &pipeline)?;
    std::fs::create_dir_all(out)?;
    save_params(&out.join(PARAMS_FILE), &report.params)?;
    write_training_log(&out.join(TRAINING_LOG_FILE), &report.log)?;
    Ok(report)
}

fn params_for(kinds: &[PlannerKind], out: &Path) -> Result<Option<Arc<ScorerParams>>> {
    if !kinds.iter().any(|k| k.needs_params()) {
        return Ok(None);
    }
    let path = out.join(PARAMS_FILE);
    let p = load_params(&path).with_context(|| format!("loading {} (run train first)", path.display()))?;
    Ok(Some(Arc::new(p)))
}

#[derive(Serialize)]
struct RolloutLine<'a> {
    planner: &'a str,
    #[serde(flatten)]
    rollout: &'a irlplan_core::sim::Rollout,
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, &it)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

/// Rolls out every planner on `scenarios`; writes rollouts, metrics and the
/// summaries into `dir`.
pub fn evaluate_into(cfg: &RunConfig, scenarios: &[ScenarioRecord], kinds: &[PlannerKind], params: Option<Arc<ScorerParams>>, dir: &Path) -> Result<Vec<Summary>> {
    let pipeline = cfg.pipeline();
    let tags: Vec<BTreeSet<Tag>> = scenarios.iter().map(tag_scenario).collect();
    let mut rollouts = Vec::new();
    let mut metrics: Vec<MetricsReport> = Vec::new();
    let mut summaries = Vec::new();
    for &kind in kinds {
        let results = evaluate_planner(scenarios, kind, params.clone(), &pipeline).with_context(|| format!("planner {}", kind.name()))?;
        let reports: Vec<MetricsReport> = results.iter().map(|(_, m)| m.clone()).collect();
        summaries.push(aggregate(kind.name(), &reports, &tags));
        metrics.extend(reports);
        rollouts.extend(results.into_iter().map(|(r, _)| r));
    }
    std::fs::create_dir_all(dir)?;
    atomic_write(&dir.join(ROLLOUTS_FILE), &jsonl(rollouts.iter().map(|r| RolloutLine { planner: &r.planner, rollout: r }))?)?;
    atomic_write(&dir.join(METRICS_FILE), &jsonl(&metrics)?)?;
    write_summary_csv(&dir.join(SUMMARY_FILE), &summaries)?;
    write_tag_csv(&dir.join(TAG_SUMMARY_FILE), &summaries)?;
    Ok(summaries)
}

pub fn evaluate(cfg: &RunConfig, out: &Path, kinds: &[PlannerKind]) -> Result<Vec<Summary>> {
    let scenarios = load_split(out, &cfg.eval_split)?;
    let params = params_for(kinds, out)?;
    evaluate_into(cfg, &scenarios, kinds, params, out)
}

#[derive(Serialize)]
pub struct SimulateOutput {
    pub planner: String,
    pub rollout: irlplan_core::sim::Rollout,
    pub metrics: MetricsReport,
}

pub fn simulate(cfg: &RunConfig, out: &Path, kind: PlannerKind, scenario: Option<&str>) -> Result<SimulateOutput> {
    let all = read_scenarios(&out.join(SCENARIOS_FILE)).context("reading scenarios (run gen-scenarios first)")?;
    let rec = match scenario {
        Some(id) => all.into_iter().find(|r| r.id == id).ok_or_else(|| anyhow!("no scenario {id}"))?,
        None => all.into_iter().find(|r| split_of(&r.id) == cfg.eval_split).ok_or_else(|| anyhow!("no scenarios"))?,
    };
    let params = params_for(&[kind], out)?;
    let (rollout, metrics) = evaluate_planner(std::slice::from_ref(&rec), kind, params, &cfg.pipeline())?.remove(0);
    let result = SimulateOutput {
        planner: kind.name().to_string(),
        rollout,
        metrics,
    };
    let name = format!("simulate_{}_{}.json", kind.name(), rec.id);
    atomic_write(&out.join(name), &serde_json::to_vec_pretty(&result)?)?;
    Ok(result)
}

/// Named config overrides along one ablation axis.
pub fn ablation_variants(base: &RunConfig) -> Vec<(String, RunConfig)> {
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match base.ablate_axis {
        AblateAxis::Features => {
            let mut v = vec![("all".to_string(), base.clone())];
            for k in FeatureKind::ALL {
                v.push((format!("drop_{}", k.name()), with(&|c| c.features = FeatureKind::ALL.into_iter().filter(|&f| f != k).collect())));
            }
            v
        }
        AblateAxis::Noise => [NoiseLevel::None, NoiseLevel::Low, NoiseLevel::High]
            .into_iter()
            .map(|n| (format!("noise_{}", serde_name(&n)), with(&|c| c.augment = n)))
            .collect(),
        AblateAxis::Architecture => [Architecture::Base, Architecture::NoNorm, Architecture::Unmasked, Architecture::Siloed]
            .into_iter()
            .map(|a| (serde_name(&a), with(&|c| c.architecture = a)))
            .collect(),
        AblateAxis::Loss => {
            let mut v = vec![("focal".to_string(), base.clone()), ("nll".to_string(), with(&|c| c.gamma = 0.0))];
            for l in [LabelMode::WeightedYaw, LabelMode::GroundTruth, LabelMode::UnsafeProjection] {
                v.push((serde_name(&l), with(&|c| c.label = l)));
            }
            v
        }
    }
}

fn serde_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|j| j.as_str().map(str::to_string)).unwrap_or_default()
}

pub struct AblationRow {
    pub variant: String,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub summary: Summary,
}

/// Train and evaluate each variant under `out/ablation/<variant>`, reusing
/// the scenarios of `out`.
pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<Vec<AblationRow>> {
    let mut variants = ablation_variants(cfg);
    if !cfg.ablate_variants.is_empty() {
        if let Some(bad) = cfg.ablate_variants.iter().find(|n| !variants.iter().any(|(v, _)| v == *n)) {
            bail!("unknown ablation variant {bad}");
        }
        variants.retain(|(v, _)| cfg.ablate_variants.contains(v));
    }
    let scenarios = read_scenarios(&out.join(SCENARIOS_FILE)).context("reading scenarios (run gen-scenarios first)")?;
    let test: Vec<ScenarioRecord> = scenarios.iter().filter(|r| split_of(&r.id) == cfg.eval_split).cloned().collect();
    let mut rows = Vec::new();
    for (name, vcfg) in variants {
        let dir: PathBuf = out.join("ablation").join(&name);
        std::fs::create_dir_all(&dir)?;
        write_scenarios(&dir.join(SCENARIOS_FILE), &scenarios)?;
        let report = train_model(&vcfg, &dir).with_context(|| format!("variant {name}: train"))?;
        let best_val_loss = report.log[report.best_epoch - 1].val_loss;
        let params = Some(Arc::new(report.params));
        let mut s = evaluate_into(&vcfg, &test, &[cfg.ablate_planner], params, &dir).with_context(|| format!("variant {name}: evaluate"))?;
        rows.push(AblationRow {
            variant: name,
            best_epoch: report.best_epoch,
            best_val_loss,
            summary: s.remove(0),
        });
    }
    let mut csv = String::from("variant,best_epoch,best_val_loss,scenarios,safety,comfort,progress,l2_with_yaw,collision,tailgate\n");
    for r in &rows {
        let o = &r.summary.overall;
        csv.push_str(&format!(
            "{},{},{:.6},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            r.variant, r.best_epoch, r.best_val_loss, o.scenarios, o.safety, o.comfort, o.progress, o.l2_with_yaw, o.collision_rate, o.tailgate_rate
        ));
    }
    atomic_write(&out.join(ABLATION_FILE), csv.as_bytes())?;
    Ok(rows)
}
