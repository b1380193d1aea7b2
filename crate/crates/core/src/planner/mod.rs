//! The geometric navigation stack: costmap → Dijkstra global plan → DWA.

mod dwa;
mod global;

use serde::{Deserialize, Serialize};

pub use dwa::{dwa_select, dwa_select_with, rollout, DwaOutcome, DwaParams, RECOVERY};
pub use global::{dijkstra, neighbours, plan_global, smooth_path, PathCost, COST_DIVISOR, MOVES};

use crate::costmap::{self, Costmap};
use crate::error::Result;
use crate::geometry::{Command, GlobalPlan, Observation};
use crate::sim::WorldMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalConfig {
    pub social_layer: bool,
    pub inscribed_radius: f64,
    pub decay: f64,
    pub social_sigma: f64,
    pub social_amplitude: f64,
    pub dwa: DwaParams,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        Self {
            social_layer: false,
            inscribed_radius: costmap::DEFAULT_INSCRIBED_RADIUS,
            decay: costmap::DEFAULT_DECAY,
            social_sigma: costmap::DEFAULT_SOCIAL_SIGMA,
            social_amplitude: costmap::DEFAULT_SOCIAL_AMPLITUDE,
            dwa: DwaParams::default(),
        }
    }
}

impl ClassicalConfig {
    pub fn with_social_layer(social_layer: bool) -> Self {
        Self { social_layer, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalOutput {
    pub plan: GlobalPlan,
    pub command: Command,
    pub recovery: bool,
}

/// Costmap the classical stack plans on for this observation.
pub fn observation_costmap(obs: &Observation, map: &WorldMap, cfg: &ClassicalConfig) -> Costmap {
    costmap_and_distance(obs, map, cfg).0
}

/// The costmap plus the distance field to its lethal cells (shared by
/// inflation and the DWA clearance term; later layers never add lethal
/// cells).
fn costmap_and_distance(obs: &Observation, map: &WorldMap, cfg: &ClassicalConfig) -> (Costmap, Vec<f64>) {
    let pose = obs.pose();
    let cm = costmap::build(map, obs.scan(), pose);
    let dist = cm.lethal_distance();
    let cm = costmap::inflate_with(&cm, &dist, cfg.inscribed_radius, cfg.decay);
    let cm = if cfg.social_layer {
        let people = costmap::detect_pedestrians(map, &obs.scan_history, &obs.odom_history);
        costmap::add_social_layer(&cm, &people, cfg.social_sigma, cfg.social_amplitude)
    } else {
        cm
    };
    (cm, dist)
}

/// C(S_t): global plan toward the observation goal and the DWA command
/// tracking it.
pub fn classical_behavior(obs: &Observation, map: &WorldMap, cfg: &ClassicalConfig) -> Result<ClassicalOutput> {
    let (cm, dist) = costmap_and_distance(obs, map, cfg);
    let pose = obs.pose();
    let plan = plan_global(&cm, pose.position(), obs.goal.position())?;
    let out = dwa_select_with(pose, &plan, &cm, &dist, &cfg.dwa);
    Ok(ClassicalOutput { plan, command: out.command, recovery: out.recovery })
}
