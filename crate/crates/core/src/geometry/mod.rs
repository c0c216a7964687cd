//! Domain types and geometric primitives shared by every stage of the planner.

mod angle;
mod obb;
mod route;
mod scene;
mod trajectory;

pub use angle::{angle_diff, lerp_angle, wrap_angle};
pub(crate) use angle::mod_two_pi;
pub use obb::OrientedBox;
pub use route::{
    polyline_route, project_to_route, segment_heading, RouteProjection, RouteSpec, SpeedZone,
    MAX_WAYPOINT_SPACING,
};
pub use scene::{AgentKind, AgentTrack, EgoState, Footprint, HistoryEntry, SceneContext, DT, HISTORY_LEN};
pub use trajectory::{PathGeometry, PathRef, Trajectory, HORIZON, TRAJECTORY_LEN};

/// Free-function form of [`Trajectory::interpolate_state`].
pub fn interpolate_state(traj: &Trajectory, t: f64) -> crate::Result<EgoState> {
    traj.interpolate_state(t)
}
