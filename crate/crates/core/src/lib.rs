//! Inference of spatio-temporal topology for non-overlapping camera networks,
//! joint with cross-camera re-identification of the people moving through
//! them.
//!
//! The pipeline consumes time-stamped tracklets with appearance descriptors
//! and alternates between two estimates that reinforce each other:
//!
//! * **Re-identification** — random-forest classifiers trained per camera
//!   (and later per entry zone) over sliding time windows score candidate
//!   correspondences for people who left another camera's view.
//! * **Topology** — transition-time histograms over reliable correspondences
//!   are fitted with Gaussian models; their quality gates which camera and
//!   zone pairs count as connected and narrows the time window used by the
//!   next round of matching.
//!
//! Initialization runs camera-level inference, zone learning, zone-level
//! inference, and per-link iterative refinement ([`topology`]). A streaming
//! stage then keeps the topology current while matching live exits
//! ([`online`]). A deterministic synthetic scenario generator ([`sim`]) and
//! an evaluation module ([`eval`]) close the loop for testing.

pub mod config;
pub mod error;
pub mod eval;
pub mod forest;
pub mod ingest;
pub mod online;
pub mod sim;
pub mod topology;
pub mod types;
pub mod zones;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use eval::{benchmark_matching, compare_topology, EvalReport};
pub use ingest::{load_dataset, save_dataset, select_key_appearances, Dataset};
pub use sim::{generate, GroundTruth, ScenarioSpec, SimOutput};
pub use types::{
    BoundingBox, CameraId, CameraTopology, FeatureVector, Gallery, GalleryEntry, GaussianModel,
    LinkKey, LinkState, Observation, PersonLabel, Tracklet, TrackletUid, TransitionDistribution,
    ZoneKey, ZoneTopology,
};
pub use zones::{assign_zone, learn_zones, Zone, ZoneKind};
