//! Pipeline configuration: pinned defaults, validation, and a human-editable
//! key/value file format.
//!
//! Snapshot files carry two sections. `[defaults]` holds the core operating
//! points of the method; `[tuning]` holds implementation knobs. Edits to
//! either section override the built-in values, so a run's snapshot is a
//! complete and auditable record of what it used.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// All tunable parameters of the pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Similarity threshold: matches with `S > theta_sim` count as reliable.
    pub theta_sim: f64,
    /// Connectivity threshold: links with confidence above it are valid.
    pub theta_conf: f64,
    /// Initial transition search window T in seconds.
    pub initial_window: f64,
    /// Central coverage R (percent) used when deriving time bounds from a
    /// fitted model.
    pub range_percent: f64,
    /// Number of trees per random forest.
    pub tree_count: usize,
    /// Maximum key appearances kept per tracklet.
    pub key_appearance_cap: usize,
    /// Accumulated-change threshold that triggers an online refit.
    pub online_refit_threshold: f64,

    /// Histogram bin width in seconds.
    pub bin_width: f64,
    /// Window stride as a fraction of the window length.
    pub window_stride_fraction: f64,
    /// Fit error is clamped to this value when expanding the window.
    pub max_window_fit_error: f64,
    /// Maximum decision-tree depth.
    pub max_tree_depth: usize,
    /// Nodes with fewer samples than this become leaves.
    pub min_split_samples: usize,
    /// Refinement stops once successive distributions differ by less than
    /// this Bhattacharyya distance.
    pub convergence_epsilon: f64,
    /// Maximum refinement iterations per link.
    pub max_iterations: u32,
    /// Online matching trains a forest only when at least this many
    /// candidates are gated in; otherwise it compares exhaustively.
    pub candidate_forest_threshold: usize,
    /// Enforce one-to-one assignment between exits and entries online.
    pub one_to_one: bool,
    /// Upper bound on zones per camera and endpoint kind.
    pub max_zones: usize,
    /// EM refinement passes when learning zones.
    pub zone_em_iterations: usize,
    /// Re-normalize ingested features to unit length.
    pub normalize_features: bool,
    /// Fixed time scale for the confidence exponent; the current window T is
    /// used when unset.
    pub confidence_time_scale: Option<f64>,
    /// Root seed; every random draw in a run derives from it.
    pub seed: u64,
    /// Worker threads (1 = fully sequential).
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            theta_sim: 0.7,
            theta_conf: 0.4,
            initial_window: 600.0,
            range_percent: 95.0,
            tree_count: 10,
            key_appearance_cap: 30,
            online_refit_threshold: 0.1,
            bin_width: 1.0,
            window_stride_fraction: 0.5,
            max_window_fit_error: 0.9,
            max_tree_depth: 12,
            min_split_samples: 3,
            convergence_epsilon: 0.01,
            max_iterations: 10,
            candidate_forest_threshold: 20,
            one_to_one: false,
            max_zones: 5,
            zone_em_iterations: 25,
            normalize_features: true,
            confidence_time_scale: None,
            seed: 1,
            threads: 1,
        }
    }
}

/// Keys listed under `[defaults]` in snapshot files; everything else goes to
/// `[tuning]`.
const DEFAULT_SECTION_KEYS: &[&str] = &[
    "theta_sim",
    "theta_conf",
    "initial_window",
    "range_percent",
    "tree_count",
    "key_appearance_cap",
    "online_refit_threshold",
];

impl PipelineConfig {
    /// Reads a config file and overlays it on the built-in defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key = value` lines (section headers are organizational only).
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format(source, lineno + 1, "expected `key = value`"))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::format(source, lineno + 1, e.to_string()))?;
        }
        Ok(())
    }

    /// Sets one field by key name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn f(v: &str) -> Result<f64> {
            v.parse()
                .map_err(|_| Error::invalid(format!("`{v}` is not a number")))
        }
        fn u(v: &str) -> Result<usize> {
            v.parse()
                .map_err(|_| Error::invalid(format!("`{v}` is not a non-negative integer")))
        }
        fn b(v: &str) -> Result<bool> {
            v.parse()
                .map_err(|_| Error::invalid(format!("`{v}` is not true/false")))
        }
        match key {
            "theta_sim" => self.theta_sim = f(value)?,
            "theta_conf" => self.theta_conf = f(value)?,
            "initial_window" => self.initial_window = f(value)?,
            "range_percent" => self.range_percent = f(value)?,
            "tree_count" => self.tree_count = u(value)?,
            "key_appearance_cap" => self.key_appearance_cap = u(value)?,
            "online_refit_threshold" => self.online_refit_threshold = f(value)?,
            "bin_width" => self.bin_width = f(value)?,
            "window_stride_fraction" => self.window_stride_fraction = f(value)?,
            "max_window_fit_error" => self.max_window_fit_error = f(value)?,
            "max_tree_depth" => self.max_tree_depth = u(value)?,
            "min_split_samples" => self.min_split_samples = u(value)?,
            "convergence_epsilon" => self.convergence_epsilon = f(value)?,
            "max_iterations" => self.max_iterations = u(value)? as u32,
            "candidate_forest_threshold" => self.candidate_forest_threshold = u(value)?,
            "one_to_one" => self.one_to_one = b(value)?,
            "max_zones" => self.max_zones = u(value)?,
            "zone_em_iterations" => self.zone_em_iterations = u(value)?,
            "normalize_features" => self.normalize_features = b(value)?,
            "confidence_time_scale" => {
                self.confidence_time_scale = if value == "window" {
                    None
                } else {
                    Some(f(value)?)
                }
            }
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::invalid(format!("`{value}` is not a seed")))?
            }
            "threads" => self.threads = u(value)?,
            other => return Err(Error::invalid(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let checks: &[(bool, &str)] = &[
            (self.theta_sim > 0.0 && self.theta_sim <= 1.0, "theta_sim must be in (0, 1]"),
            (self.theta_conf >= 0.0 && self.theta_conf <= 1.0, "theta_conf must be in [0, 1]"),
            (self.initial_window > 0.0, "initial_window must be positive"),
            (
                self.range_percent > 0.0 && self.range_percent < 100.0,
                "range_percent must be in (0, 100)",
            ),
            (self.tree_count >= 1, "tree_count must be at least 1"),
            (self.key_appearance_cap >= 1, "key_appearance_cap must be at least 1"),
            (self.online_refit_threshold > 0.0, "online_refit_threshold must be positive"),
            (self.bin_width > 0.0, "bin_width must be positive"),
            (
                self.window_stride_fraction > 0.0 && self.window_stride_fraction <= 1.0,
                "window_stride_fraction must be in (0, 1]",
            ),
            (
                self.max_window_fit_error >= 0.0 && self.max_window_fit_error < 1.0,
                "max_window_fit_error must be in [0, 1)",
            ),
            (self.max_tree_depth >= 1, "max_tree_depth must be at least 1"),
            (self.min_split_samples >= 2, "min_split_samples must be at least 2"),
            (self.convergence_epsilon > 0.0, "convergence_epsilon must be positive"),
            (self.max_iterations >= 1, "max_iterations must be at least 1"),
            (self.max_zones >= 1, "max_zones must be at least 1"),
            (self.zone_em_iterations >= 1, "zone_em_iterations must be at least 1"),
            (
                self.confidence_time_scale.map_or(true, |s| s > 0.0),
                "confidence_time_scale must be positive",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::invalid(*msg));
            }
        }
        Ok(())
    }

    /// Renders the full effective configuration as a snapshot file.
    pub fn snapshot(&self) -> String {
        let mut pairs: Vec<(&str, String)> = vec![
            ("theta_sim", self.theta_sim.to_string()),
            ("theta_conf", self.theta_conf.to_string()),
            ("initial_window", self.initial_window.to_string()),
            ("range_percent", self.range_percent.to_string()),
            ("tree_count", self.tree_count.to_string()),
            ("key_appearance_cap", self.key_appearance_cap.to_string()),
            ("online_refit_threshold", self.online_refit_threshold.to_string()),
            ("bin_width", self.bin_width.to_string()),
            ("window_stride_fraction", self.window_stride_fraction.to_string()),
            ("max_window_fit_error", self.max_window_fit_error.to_string()),
            ("max_tree_depth", self.max_tree_depth.to_string()),
            ("min_split_samples", self.min_split_samples.to_string()),
            ("convergence_epsilon", self.convergence_epsilon.to_string()),
            ("max_iterations", self.max_iterations.to_string()),
            ("candidate_forest_threshold", self.candidate_forest_threshold.to_string()),
            ("one_to_one", self.one_to_one.to_string()),
            ("max_zones", self.max_zones.to_string()),
            ("zone_em_iterations", self.zone_em_iterations.to_string()),
            ("normalize_features", self.normalize_features.to_string()),
            (
                "confidence_time_scale",
                self.confidence_time_scale
                    .map_or("window".to_string(), |s| s.to_string()),
            ),
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
        ];
        let mut out = String::from("[defaults]\n");
        for (k, v) in pairs.iter().filter(|(k, _)| DEFAULT_SECTION_KEYS.contains(k)) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out.push_str("\n[tuning]\n");
        pairs.retain(|(k, _)| !DEFAULT_SECTION_KEYS.contains(k));
        for (k, v) in &pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.snapshot())?;
        Ok(())
    }
}
