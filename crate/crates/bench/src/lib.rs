//! Fixture for the planner-tick benchmark: an off-route ego on a curved road
//! with traffic, and a generator setting that yields about 150 candidates.

use irlplan_core::geometry::{AgentKind, AgentTrack, EgoState, RouteSpec, SceneContext, SpeedZone};
use irlplan_core::planners::PipelineConfig;
use irlplan_core::scorer::{init_params, ScorerConfig, ScorerParams};
use irlplan_core::trajgen::GeneratorConfig;

pub fn busy_route() -> RouteSpec {
    let pts: Vec<[f64; 2]> = (0..=300)
        .map(|i| {
            let x = i as f64 - 50.0;
            [x, 6.0 * (x / 60.0).sin()]
        })
        .collect();
    let zones = vec![SpeedZone { start: 0.0, limit: 15.0 }, SpeedZone { start: 140.0, limit: 11.0 }];
    RouteSpec::new(pts, zones, 1.75).unwrap()
}

pub fn tick_scene() -> SceneContext {
    let route = busy_route();
    let (x, y, h) = route.pose_at(60.0, 1.2);
    let ego = EgoState::new(x, y, h + 0.08, 9.0);
    let mut agents = Vec::new();
    for (i, (ds, lat, v, kind)) in [
        (22.0, 0.0, 7.0, AgentKind::Vehicle),
        (45.0, 0.2, 9.5, AgentKind::Vehicle),
        (-18.0, 0.0, 10.0, AgentKind::Vehicle),
        (30.0, -3.5, 11.0, AgentKind::Vehicle),
        (35.0, 3.2, 1.2, AgentKind::Pedestrian),
        (15.0, 2.6, 4.0, AgentKind::Bicyclist),
    ]
    .into_iter()
    .enumerate()
    {
        let (ax, ay, ah) = route.pose_at(60.0 + ds, lat);
        let (length, width) = match kind {
            AgentKind::Vehicle => (4.7, 1.9),
            AgentKind::Pedestrian => (0.6, 0.6),
            AgentKind::Bicyclist => (1.8, 0.7),
        };
        agents.push(AgentTrack {
            id: i as u64 + 1,
            kind,
            x: ax,
            y: ay,
            theta: ah,
            length,
            width,
            v,
            has_lane: kind == AgentKind::Vehicle,
        });
    }
    SceneContext::with_constant_history(ego, agents, route)
}

pub fn wide_pipeline() -> PipelineConfig {
    PipelineConfig {
        generator: GeneratorConfig {
            turning_radii: vec![6.0, 7.5, 9.0, 11.0, 13.0, 16.0, 20.0, 25.0, 32.0, 40.0, 55.0],
            ..GeneratorConfig::default()
        },
        ..PipelineConfig::default()
    }
}

pub fn full_scorer() -> ScorerParams {
    init_params(&ScorerConfig::default(), 7)
}
