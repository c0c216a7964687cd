use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_3;

use serde::{Deserialize, Serialize};

use super::metrics::lead_vehicle;
use crate::geometry::angle_diff;
use crate::scenario::ScenarioRecord;

const STRAIGHT_HEADING: f64 = 0.1;
const TURN_HEADING: f64 = FRAC_PI_3;
const SLOW_SPEED: f64 = 2.64;
const CLOSE_TIME_GAP: f64 = 1.7;
const ASV_DISTANCE: f64 = 10.0;
const STOPPED_SPEED: f64 = 0.2;
const MOVED_DISTANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Straight,
    RightTurn,
    LeftTurn,
    Stopped,
    Slow,
    Intersection,
    Close,
    Asv,
}

impl Tag {
    pub const ALL: [Tag; 8] = [
        Tag::Straight,
        Tag::RightTurn,
        Tag::LeftTurn,
        Tag::Stopped,
        Tag::Slow,
        Tag::Intersection,
        Tag::Close,
        Tag::Asv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tag::Straight => "straight",
            Tag::RightTurn => "right_turn",
            Tag::LeftTurn => "left_turn",
            Tag::Stopped => "stopped",
            Tag::Slow => "slow",
            Tag::Intersection => "intersection",
            Tag::Close => "close",
            Tag::Asv => "asv",
        }
    }

    pub fn from_name(s: &str) -> Option<Tag> {
        Tag::ALL.into_iter().find(|t| t.name() == s)
    }
}

/// Tags from the expert's behavior. A scenario can carry several.
pub fn tag_scenario(scenario: &ScenarioRecord) -> BTreeSet<Tag> {
    let expert = scenario.expert_states();
    let mut tags = BTreeSet::new();
    let first = expert[0];

    let mut heading_change = 0.0;
    for w in expert.windows(2) {
        heading_change += angle_diff(w[1].theta, w[0].theta);
    }
    if heading_change.abs() < STRAIGHT_HEADING {
        tags.insert(Tag::Straight);
    } else if heading_change > TURN_HEADING {
        tags.insert(Tag::LeftTurn);
    } else if heading_change < -TURN_HEADING {
        tags.insert(Tag::RightTurn);
    }

    let v_max = expert.iter().map(|e| e.v).fold(0.0, f64::max);
    if v_max < SLOW_SPEED {
        tags.insert(Tag::Slow);
    }
    let moved = expert
        .iter()
        .map(|e| (e.x - first.x).hypot(e.y - first.y))
        .fold(0.0, f64::max);
    if v_max < STOPPED_SPEED && moved < MOVED_DISTANCE {
        tags.insert(Tag::Stopped);
    }

    for (k, e) in expert.iter().enumerate() {
        let agents = scenario.agents_at(k as isize);
        let Some(lead) = lead_vehicle(&scenario.route, e, scenario.footprint, &agents) else {
            continue;
        };
        if e.v > STOPPED_SPEED && lead.gap / e.v < CLOSE_TIME_GAP {
            tags.insert(Tag::Close);
        }
        if e.v > STOPPED_SPEED && lead.speed.abs() < STOPPED_SPEED && lead.gap < ASV_DISTANCE {
            tags.insert(Tag::Asv);
        }
    }

    if !scenario.intersections.is_empty() {
        let stations: Vec<f64> = expert.iter().map(|e| scenario.route.project(e.position()).station).collect();
        if scenario
            .intersections
            .iter()
            .any(|iv| stations.iter().any(|&s| s >= iv.start && s <= iv.end))
        {
            tags.insert(Tag::Intersection);
        }
    }
    tags
}
