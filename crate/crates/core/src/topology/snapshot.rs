//! Plain-text persistence for a learned topology: zones plus the zone-link
//! graph with histograms, fitted models, and refinement state.
//!
//! The format is line oriented. Histograms are stored as per-bin counts
//! (mass times sample count), which round-trips exactly for integer-count
//! histograms: saving a freshly loaded snapshot reproduces the file
//! byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{CameraId, LinkState, TransitionDistribution, ZoneKey, ZoneTopology};
use crate::zones::Zone;

use super::infer::InitOutcome;

/// Persistable view of a learned topology.
#[derive(Clone, Debug, Default)]
pub struct TopologySnapshot {
    pub zones: BTreeMap<CameraId, Vec<Zone>>,
    pub topology: ZoneTopology,
}

impl TopologySnapshot {
    pub fn from_outcome(outcome: &InitOutcome) -> Self {
        TopologySnapshot {
            zones: outcome.zones.clone(),
            topology: outcome.topology.clone(),
        }
    }

    /// Serializes the snapshot to its text form.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# topology snapshot\n");
        for zones in self.zones.values() {
            for z in zones {
                let (xx, xy, yy) = z.covariance;
                let _ = writeln!(
                    out,
                    "zone {} {} {} {:.6} {:.6} {:.6} {:.6} {:.6} {}",
                    z.camera, z.zone_id, z.kind, z.center.0, z.center.1, xx, xy, yy, z.member_count
                );
            }
        }
        for (key, state) in &self.topology.edges {
            let valid = self.topology.valid.contains(key) as u8;
            let _ = writeln!(
                out,
                "link {} {} {} {:.6} {:.6} {} {} {}",
                key.0,
                key.1,
                valid,
                state.distribution.confidence,
                state.window,
                state.iteration,
                state.converged as u8,
                state.stagnant
            );
            if let Some((lo, hi)) = state.bounds {
                let _ = writeln!(out, "bounds {} {} {:.6} {:.6}", key.0, key.1, lo, hi);
            }
            if let Some(m) = &state.distribution.model {
                let _ = writeln!(
                    out,
                    "model {} {} {:.6} {:.6} {:.6}",
                    key.0, key.1, m.mu, m.sigma, m.fit_error
                );
            }
            let d = &state.distribution;
            let n = d.sample_count();
            let mut line = format!(
                "hist {} {} {:.6} {:.6} {}",
                key.0,
                key.1,
                d.bin_width(),
                d.range().0,
                n
            );
            for &mass in d.masses() {
                let _ = write!(line, " {:.6}", mass * n as f64);
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, &path.display().to_string())
    }

    /// Parses the text form produced by [`TopologySnapshot::to_text`].
    pub fn from_text(text: &str, file: &str) -> Result<Self> {
        let mut snapshot = TopologySnapshot::default();
        // Raw link rows waiting for their histogram line.
        let mut pending: BTreeMap<(ZoneKey, ZoneKey), PendingLink> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let fail = |msg: String| Error::format(file, line, msg);
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            match fields[0] {
                "zone" if fields.len() == 10 => {
                    let camera = CameraId(
                        fields[1].parse().map_err(|_| fail("bad camera id".into()))?,
                    );
                    let zone_id = fields[2].parse().map_err(|_| fail("bad zone id".into()))?;
                    let kind = fields[3].parse().map_err(|_| fail("bad zone kind".into()))?;
                    let nums = parse_floats(&fields[4..9], file, line)?;
                    let member_count =
                        fields[9].parse().map_err(|_| fail("bad member count".into()))?;
                    snapshot.zones.entry(camera).or_default().push(Zone {
                        camera,
                        zone_id,
                        kind,
                        center: (nums[0], nums[1]),
                        covariance: (nums[2], nums[3], nums[4]),
                        member_count,
                    });
                }
                "link" if fields.len() == 9 => {
                    let key = link_key(fields[1], fields[2], file, line)?;
                    let valid = parse_flag(fields[3], file, line)?;
                    let confidence = parse_floats(&fields[4..6], file, line)?;
                    let iteration =
                        fields[6].parse().map_err(|_| fail("bad iteration count".into()))?;
                    let converged = parse_flag(fields[7], file, line)?;
                    let stagnant =
                        fields[8].parse().map_err(|_| fail("bad stagnant count".into()))?;
                    if pending.contains_key(&key) {
                        return Err(fail(format!("duplicate link {} {}", key.0, key.1)));
                    }
                    pending.insert(
                        key,
                        PendingLink {
                            valid,
                            confidence: confidence[0],
                            window: confidence[1],
                            iteration,
                            converged,
                            stagnant,
                            bounds: None,
                            model: None,
                        },
                    );
                }
                "bounds" if fields.len() == 5 => {
                    let key = link_key(fields[1], fields[2], file, line)?;
                    let nums = parse_floats(&fields[3..5], file, line)?;
                    pending
                        .get_mut(&key)
                        .ok_or_else(|| fail("bounds line before its link line".into()))?
                        .bounds = Some((nums[0], nums[1]));
                }
                "model" if fields.len() == 6 => {
                    let key = link_key(fields[1], fields[2], file, line)?;
                    let nums = parse_floats(&fields[3..6], file, line)?;
                    pending
                        .get_mut(&key)
                        .ok_or_else(|| fail("model line before its link line".into()))?
                        .model = Some(crate::types::GaussianModel {
                        mu: nums[0],
                        sigma: nums[1],
                        fit_error: nums[2],
                    });
                }
                "hist" if fields.len() >= 7 => {
                    let key = link_key(fields[1], fields[2], file, line)?;
                    let head = parse_floats(&fields[3..5], file, line)?;
                    let count: usize =
                        fields[5].parse().map_err(|_| fail("bad sample count".into()))?;
                    let masses = parse_floats(&fields[6..], file, line)?;
                    let raw = pending
                        .remove(&key)
                        .ok_or_else(|| fail("histogram line before its link line".into()))?;
                    let mut dist =
                        TransitionDistribution::from_parts(masses, head[0], head[1], count)
                            .map_err(|e| fail(e.to_string()))?;
                    dist.confidence = raw.confidence;
                    dist.model = raw.model;
                    let state = LinkState {
                        distribution: dist,
                        window: raw.window,
                        bounds: raw.bounds,
                        iteration: raw.iteration,
                        converged: raw.converged,
                        stagnant: raw.stagnant,
                    };
                    snapshot.topology.insert_edge(key.0, key.1, state)?;
                    if raw.valid {
                        snapshot.topology.valid.insert(key);
                    }
                }
                other => {
                    return Err(fail(format!("unrecognized snapshot line {other:?}")));
                }
            }
        }
        if let Some(key) = pending.keys().next() {
            return Err(Error::format(
                file,
                text.lines().count(),
                format!("link {} {} has no histogram line", key.0, key.1),
            ));
        }
        snapshot.topology.validate()?;
        Ok(snapshot)
    }
}

struct PendingLink {
    valid: bool,
    confidence: f64,
    window: f64,
    iteration: u32,
    converged: bool,
    stagnant: u32,
    bounds: Option<(f64, f64)>,
    model: Option<crate::types::GaussianModel>,
}

fn link_key(from: &str, to: &str, file: &str, line: usize) -> Result<(ZoneKey, ZoneKey)> {
    let from = from
        .parse()
        .map_err(|e: Error| Error::format(file, line, e.to_string()))?;
    let to = to
        .parse()
        .map_err(|e: Error| Error::format(file, line, e.to_string()))?;
    Ok((from, to))
}

fn parse_flag(field: &str, file: &str, line: usize) -> Result<bool> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::format(file, line, format!("expected 0 or 1, got {other:?}"))),
    }
}

fn parse_floats(fields: &[&str], file: &str, line: usize) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| Error::format(file, line, format!("bad number {f:?}")))
        })
        .collect()
}
