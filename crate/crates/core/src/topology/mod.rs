//! Topology inference: transition-distribution estimation, camera-level and
//! zone-level connectivity, and iterative per-link refinement.

mod fit;
mod infer;
mod snapshot;

pub use fit::{connectivity_confidence, fit_gaussian, update_time_window};
pub use infer::{
    estimate_distribution, infer_cam_topology, infer_zone_topology, initialize_topology,
    learn_all_zones, refine_link, refine_topology, InitOutcome, StageLog, ZonePlacement,
    MIN_LINK_SAMPLES,
};
pub use snapshot::TopologySnapshot;
