use std::collections::BTreeSet;

use super::*;
use crate::geometry::{AgentKind, RouteSpec, DT};
use crate::planners::{ConstantSpeedPlanner, ExpertReplayPlanner};
use crate::scenario::{AgentPose, AgentReplay, ScenarioMeta, FORMAT_VERSION, REPLAY_LEN};
use crate::trajgen::GeneratorConfig;

fn route() -> RouteSpec {
    RouteSpec::straight([-100.0, 0.0], 0.0, 800.0, 15.0, 1.75).unwrap()
}

/// Ego driving along +x from x = 0 with a speed per tick.
fn states_with_speeds(v: impl Fn(usize) -> f64) -> Vec<EgoState> {
    let mut x = 0.0;
    let mut out = vec![EgoState::new(0.0, 0.0, 0.0, v(0))];
    for k in 1..=SCENARIO_TICKS {
        x += 0.5 * (v(k - 1) + v(k)) * DT;
        out.push(EgoState::new(x, 0.0, 0.0, v(k)));
    }
    out
}

fn agent(id: u64, x_at: impl Fn(f64) -> f64, v: f64) -> AgentReplay {
    AgentReplay {
        id,
        kind: AgentKind::Vehicle,
        length: 4.7,
        width: 1.9,
        has_lane: true,
        poses: (0..REPLAY_LEN)
            .map(|i| {
                let t = (i as f64 - HISTORY_LEN as f64) * DT;
                AgentPose { x: x_at(t), y: 0.0, theta: 0.0, v }
            })
            .collect(),
    }
}

fn record(expert: &[EgoState], agents: Vec<AgentReplay>) -> ScenarioRecord {
    let e0 = expert[0];
    ScenarioRecord {
        format_version: FORMAT_VERSION,
        id: "hand".into(),
        route: route(),
        footprint: Footprint::default(),
        ego_history: (0..=HISTORY_LEN)
            .map(|k| EgoState::new(e0.x - e0.v * (HISTORY_LEN - k) as f64 * DT, 0.0, 0.0, e0.v))
            .collect(),
        expert_future: expert[1..].to_vec(),
        agents,
        intersections: Vec::new(),
        meta: ScenarioMeta {
            speed_limit: 15.0,
            seed: 0,
            script: "hand".into(),
        },
    }
}

fn rollout_of(rec: &ScenarioRecord, ego: Vec<EgoState>) -> Rollout {
    Rollout {
        scenario_id: rec.id.clone(),
        planner: "manual".into(),
        footprint: rec.footprint,
        ego,
        ticks: Vec::new(),
        agents: (0..=SCENARIO_TICKS).map(|k| rec.agents_at(k as isize)).collect(),
    }
}

struct Stationary;

impl Planner for Stationary {
    fn name(&self) -> String {
        "stationary".into()
    }
    fn plan(&mut self, req: &PlanRequest) -> Result<Plan> {
        Ok(Plan::single(Trajectory::stationary(req.scene.ego, req.scene.timestamp)))
    }
}

struct FailAt(usize);

impl Planner for FailAt {
    fn name(&self) -> String {
        "fail".into()
    }
    fn plan(&mut self, req: &PlanRequest) -> Result<Plan> {
        if req.tick == self.0 {
            return Err(Error::InvalidTrajectory("boom".into()));
        }
        Stationary.plan(req)
    }
}

#[test]
fn expert_replay_is_exact_and_clean() {
    let rec = record(&states_with_speeds(|_| 10.0), vec![agent(1, |t| 60.0 + 10.0 * t, 10.0)]);
    let ro = run_closed_loop(&rec, &mut ExpertReplayPlanner).unwrap();
    assert_eq!(ro.ego, rec.expert_states());
    assert_eq!(ro.ticks.len(), SCENARIO_TICKS);
    let m = compute_metrics(&ro, &rec);
    assert_eq!(m.l2.avg_l2_with_yaw, 0.0);
    assert_eq!(m.l2.avg_l2, 0.0);
    assert_eq!(m.safety.category_score, 1.0);
    assert_eq!(m.progress.category_score, 1.0);
    assert_eq!(m.comfort.category_score, 1.0);
    assert_eq!(m, compute_metrics(&ro, &rec));
}

#[test]
fn stationary_planner_never_moves() {
    let rec = record(&states_with_speeds(|_| 5.0), Vec::new());
    let mut rec = rec;
    rec.ego_history.iter_mut().for_each(|e| *e = EgoState::new(0.0, 0.0, 0.0, 0.0));
    let ro = run_closed_loop(&rec, &mut Stationary).unwrap();
    assert!(ro.ego.iter().all(|e| e.x == 0.0 && e.y == 0.0));
    let m = compute_metrics(&ro, &rec);
    assert!(!m.progress.made_progress);
}

#[test]
fn rollout_chains_the_second_plan_state() {
    let rec = record(&states_with_speeds(|_| 8.0), vec![agent(1, |_| 50.0, 0.0)]);
    let mut p = crate::planners::IdmPlanner {
        params: Default::default(),
        generator: GeneratorConfig::default(),
    };
    let ro = run_closed_loop(&rec, &mut p).unwrap();
    let mut window = rec.ego_history.clone();
    for k in 0..SCENARIO_TICKS {
        let scene = rec.scene_at(k, &window).unwrap();
        let plan = crate::planners::idm_planner_step(&scene, &Default::default(), &GeneratorConfig::default()).unwrap();
        assert_eq!(ro.ego[k + 1], plan.states[1]);
        assert_eq!(plan.interpolate_state(DT).unwrap().x, plan.states[1].x);
        window.remove(0);
        window.push(ro.ego[k + 1]);
    }
}

#[test]
fn planner_failure_reports_the_tick() {
    let rec = record(&states_with_speeds(|_| 5.0), Vec::new());
    match run_closed_loop(&rec, &mut FailAt(17)) {
        Err(Error::PlannerFailure { tick, .. }) => assert_eq!(tick, 17),
        other => panic!("{other:?}"),
    }
}

#[test]
fn constant_speed_hits_a_stopped_lead() {
    let rec = record(&states_with_speeds(|k| (10.0 - 1.2 * k as f64 * DT).max(0.0)), vec![agent(1, |_| 45.0, 0.0)]);
    let mut cs = ConstantSpeedPlanner {
        generator: GeneratorConfig::default(),
    };
    let ro = run_closed_loop(&rec, &mut cs).unwrap();
    let first = ro
        .ego
        .iter()
        .zip(&ro.agents)
        .position(|(e, a)| e.footprint(ro.footprint).overlaps(&a[0].footprint()));
    assert!(first.is_some());
    assert!(front_collision(&ro));
    let m = compute_metrics(&ro, &rec);
    assert!(m.safety.front_collision && !m.safety.tailgate_ok && !m.safety.min_ttc_ok);
}

#[test]
fn rear_end_by_a_replayed_agent_is_not_a_front_collision() {
    let ego = states_with_speeds(|_| 0.0);
    let mut chaser = agent(1, |t| (-30.0 + 6.0 * (t + 1.0)).min(-4.5), 6.0);
    for p in chaser.poses.iter_mut().filter(|p| p.x == -4.5) {
        p.v = 0.0;
    }
    let rec = record(&ego, vec![chaser]);
    let ro = rollout_of(&rec, ego);
    assert!(ro.ego.iter().zip(&ro.agents).any(|(e, a)| e.footprint(ro.footprint).overlaps(&a[0].footprint())));
    assert!(!front_collision(&ro));
    assert!(min_ttc_over_rollout(&ro) >= TTC_HORIZON);
}

#[test]
fn empty_scene_is_safe() {
    let ego = states_with_speeds(|_| 10.0);
    let rec = record(&ego, Vec::new());
    let ro = rollout_of(&rec, ego);
    assert_eq!(min_ttc_over_rollout(&ro), TTC_HORIZON);
    assert!(!front_collision(&ro));
    assert!(!tailgate(&ro, &rec.route));
}

#[test]
fn close_stopped_lead_is_tailgating() {
    let ego = states_with_speeds(|_| 0.0);
    let gap = 1.0;
    let x_lead = 0.5 * (4.9 + 4.7) + gap;
    let rec = record(&ego, vec![agent(1, move |_| x_lead, 0.0)]);
    let ro = rollout_of(&rec, ego.clone());
    assert!(tailgate(&ro, &rec.route));
    let far = record(&ego, vec![agent(1, move |_| x_lead + 1.0, 0.0)]);
    assert!(!tailgate(&rollout_of(&far, ego), &far.route));
}

#[test]
fn heading_offset_costs_two_and_a_half_times_the_angle() {
    let expert = states_with_speeds(|_| 10.0);
    let rec = record(&expert, Vec::new());
    let ego: Vec<EgoState> = expert.iter().map(|e| EgoState { theta: 0.1, ..*e }).collect();
    let m = compute_metrics(&rollout_of(&rec, ego), &rec);
    assert!((m.l2.avg_l2_with_yaw - 0.25).abs() < 1e-12);
    assert_eq!(m.l2.avg_l2, 0.0);
}

#[test]
fn hard_braking_fails_comfort() {
    let expert = states_with_speeds(|k| (12.0 - 5.0 * k as f64 * DT).max(0.0));
    let rec = record(&expert, Vec::new());
    let m = compute_metrics(&rollout_of(&rec, expert), &rec);
    assert!(!m.comfort.lon_accel_ok);
    assert!(m.comfort.category_score < 1.0);
}

#[test]
fn off_road_matches_corner_brute_force() {
    let expert = states_with_speeds(|_| 5.0);
    let rec = record(&expert, Vec::new());
    for lat in [0.0, 0.5, 1.0, 1.24, 1.26, 2.0, -1.3] {
        let ego: Vec<EgoState> = expert.iter().map(|e| EgoState { y: lat, ..*e }).collect();
        let ro = rollout_of(&rec, ego);
        let brute = ro.ego.iter().any(|e| {
            e.footprint(ro.footprint)
                .corners()
                .iter()
                .any(|c| c[1].abs() > 1.75 + OFF_ROAD_MARGIN)
        });
        assert_eq!(off_road(&ro, &rec.route), brute, "lat {lat}");
    }
}

#[test]
fn tags_follow_thresholds() {
    let rec = record(&states_with_speeds(|_| 10.0), Vec::new());
    assert_eq!(tag_scenario(&rec), [Tag::Straight].into_iter().collect());
    let slow = record(&states_with_speeds(|k| if k < 25 { 2.0 } else { 1.0 }), Vec::new());
    assert!(tag_scenario(&slow).contains(&Tag::Slow));
    let still = record(&states_with_speeds(|_| 0.0), Vec::new());
    assert_eq!(tag_scenario(&still), [Tag::Stopped, Tag::Slow, Tag::Straight].into_iter().collect());
    let mut gentle = states_with_speeds(|_| 10.0);
    for (k, e) in gentle.iter_mut().enumerate() {
        e.theta = 0.05 * k as f64 / SCENARIO_TICKS as f64;
    }
    assert!(tag_scenario(&record(&gentle, Vec::new())).contains(&Tag::Straight));
    let ego = states_with_speeds(|k| (8.0 - 0.8 * k as f64 * DT).max(0.0));
    let asv = record(&ego, vec![agent(1, |_| 40.0, 0.0)]);
    let t = tag_scenario(&asv);
    assert!(t.contains(&Tag::Asv) && t.contains(&Tag::Close));
}

fn report(id: &str, collision: bool, l2: f64) -> MetricsReport {
    let expert = states_with_speeds(|_| 10.0);
    let rec = record(&expert, Vec::new());
    let mut m = compute_metrics(&rollout_of(&rec, expert), &rec);
    m.scenario_id = id.into();
    m.safety.front_collision = collision;
    m.l2.avg_l2_with_yaw = l2;
    m
}

#[test]
fn aggregation_means_and_groups() {
    let a = report("a", true, 1.0);
    let single = aggregate("p", std::slice::from_ref(&a), &[BTreeSet::new()]);
    assert_eq!(single.overall.collision_rate, 1.0);
    assert_eq!(single.overall.l2_with_yaw, 1.0);
    assert_eq!(single.overall.safety, a.safety.category_score);

    let reports = vec![a, report("b", false, 3.0), report("c", false, 5.0)];
    let tags: Vec<BTreeSet<Tag>> = vec![
        [Tag::Slow].into_iter().collect(),
        [Tag::Slow, Tag::Close].into_iter().collect(),
        [Tag::Close].into_iter().collect(),
    ];
    let s = aggregate("p", &reports[..2], &tags[..2]);
    assert_eq!(s.overall.collision_rate, 0.5);
    let s = aggregate("p", &reports, &tags);
    for tag in [Tag::Slow, Tag::Close] {
        let group: Vec<&MetricsReport> = reports.iter().zip(&tags).filter(|(_, t)| t.contains(&tag)).map(|(r, _)| r).collect();
        let mean = group.iter().map(|r| r.l2.avg_l2_with_yaw).sum::<f64>() / group.len() as f64;
        assert_eq!(s.per_tag[&tag].l2_with_yaw, mean);
        assert_eq!(s.per_tag[&tag].scenarios, group.len());
    }
    assert!(!s.per_tag.contains_key(&Tag::Asv));
}

#[test]
fn summary_csv_has_table_columns() {
    let s = aggregate("p", &[report("a", false, 0.5)], &[BTreeSet::new()]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("summary.csv");
    write_summary_csv(&path, &[s]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "planner,scenarios,safety,comfort,progress,l2_with_yaw,collision,tailgate");
    assert!(lines.next().unwrap().starts_with("p,1,1.0000,"));
}
