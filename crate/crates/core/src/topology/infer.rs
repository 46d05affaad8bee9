//! Topology inference stages: camera-level adjacency, zone-level directed
//! links, and per-link iterative refinement of the transition models.
//!
//! Each stage matches probe tracklets (people leaving a view) against
//! time-windowed galleries of another camera, keeps the matches whose
//! appearance similarity clears `theta_sim`, and fits a Gaussian to the
//! resulting transition-time histogram. The fitted error and spread decide
//! connectivity; refinement then narrows the search window around the fitted
//! mean and re-estimates until the histogram stops moving.

use std::collections::{BTreeMap, BTreeSet};

use crate::config::PipelineConfig;
use crate::error::Result;
use crate::forest::{build_series, mix_seed, MatchResult, SeriesInput, WindowedForestSeries};
use crate::ingest::{select_key_appearances, Dataset};
use crate::types::{
    CameraId, CameraTopology, FeatureVector, LinkKey, LinkState, Tracklet, TrackletUid,
    TransitionDistribution, ZoneKey, ZoneTopology,
};
use crate::zones::{assign_zone, learn_zones, Zone, ZoneKind};

use super::fit::{connectivity_confidence, fit_gaussian, update_time_window};

/// Minimum reliable transition samples before a link is estimated.
pub const MIN_LINK_SAMPLES: usize = 10;

/// Matches recorded while one named stage ran.
#[derive(Clone, Debug)]
pub struct StageLog {
    pub stage: String,
    pub matches: Vec<MatchResult>,
}

impl StageLog {
    fn new(stage: &str) -> Self {
        StageLog {
            stage: stage.to_owned(),
            matches: Vec::new(),
        }
    }
}

/// Learned entry/exit zone of each tracklet.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ZonePlacement {
    pub entry: Option<u32>,
    pub exit: Option<u32>,
}

/// Everything initialization produces.
#[derive(Debug)]
pub struct InitOutcome {
    pub cam_topology: CameraTopology,
    pub zones: BTreeMap<CameraId, Vec<Zone>>,
    pub zone_assignment: BTreeMap<TrackletUid, ZonePlacement>,
    pub topology: ZoneTopology,
    pub stages: Vec<StageLog>,
    /// Topology after each refinement pass, oldest first; at most
    /// `max_iterations` entries, and the last one matches [`Self::topology`].
    pub iterations: Vec<ZoneTopology>,
}

/// Histograms `samples`, fits the transition model, and scores connectivity
/// confidence against `time_scale`.
pub fn estimate_distribution(
    samples: &[f64],
    base_range: (f64, f64),
    cfg: &PipelineConfig,
    time_scale: f64,
) -> Result<TransitionDistribution> {
    let mut dist = TransitionDistribution::from_samples(samples, cfg.bin_width, base_range)?;
    match fit_gaussian(&dist) {
        Ok(model) => {
            dist.confidence = connectivity_confidence(&model, time_scale);
            dist.model = Some(model);
        }
        Err(_) => dist.confidence = 0.0,
    }
    Ok(dist)
}

fn probe_features(tracklet: &Tracklet, cfg: &PipelineConfig) -> Vec<FeatureVector> {
    select_key_appearances(tracklet, cfg.key_appearance_cap)
        .into_iter()
        .map(|i| tracklet.observations[i].feature.clone())
        .collect()
}

fn distinct_persons(tracklets: &[Tracklet]) -> usize {
    tracklets
        .iter()
        .map(|t| t.person)
        .collect::<BTreeSet<_>>()
        .len()
}

/// First stage: which camera pairs are connected at all.
///
/// For each pair, the camera seeing more identities serves as the gallery
/// (it trains the richer forests) and every tracklet of the other camera
/// probes it around its exit time. Reliable matches pool into a signed
/// transition histogram: direct transit toward the gallery forms a sharp
/// hump while multi-hop paths spread wide, and the fitted hump's sharpness
/// and explained mass decide connectivity.
pub fn infer_cam_topology(
    dataset: &Dataset,
    cfg: &PipelineConfig,
) -> Result<(CameraTopology, StageLog)> {
    let window = cfg.initial_window;
    let stride = window * cfg.window_stride_fraction;
    let mut series: BTreeMap<CameraId, WindowedForestSeries> = BTreeMap::new();
    for (&camera, tracklets) in &dataset.tracklets {
        if tracklets.is_empty() {
            continue;
        }
        let inputs: Vec<SeriesInput<'_>> = tracklets
            .iter()
            .map(|t| SeriesInput::new(t, select_key_appearances(t, cfg.key_appearance_cap)))
            .collect();
        series.insert(
            camera,
            build_series(
                &inputs,
                camera,
                None,
                window,
                stride,
                mix_seed(cfg.seed, camera.0 as u64),
            )?,
        );
    }

    let mut topology = CameraTopology {
        cameras: series.keys().copied().collect(),
        ..CameraTopology::default()
    };
    let mut log = StageLog::new("camera");
    let cams: Vec<CameraId> = series.keys().copied().collect();
    let scale = cfg.confidence_time_scale.unwrap_or(window);
    for i in 0..cams.len() {
        for j in i + 1..cams.len() {
            let (a, b) = (cams[i], cams[j]);
            let more_in_b =
                distinct_persons(&dataset.tracklets[&b]) > distinct_persons(&dataset.tracklets[&a]);
            let (gallery_cam, probe_cam) = if more_in_b { (b, a) } else { (a, b) };
            let gallery = &series[&gallery_cam];
            let mut samples = Vec::new();
            for probe in &dataset.tracklets[&probe_cam] {
                let feats = probe_features(probe, cfg);
                if feats.is_empty() {
                    continue;
                }
                let t = probe.exit_time();
                if let Some(m) =
                    gallery.query(&feats, probe.uid(), t, (t - window, t + window), cfg)
                {
                    if m.similarity > cfg.theta_sim {
                        samples.push(m.delta_t);
                    }
                    log.matches.push(m);
                }
            }
            if samples.len() < MIN_LINK_SAMPLES {
                continue;
            }
            let dist = estimate_distribution(&samples, (-window, window), cfg, scale)?;
            let valid = dist.confidence > cfg.theta_conf;
            topology.insert_edge(a, b, dist)?;
            if valid {
                topology.valid.insert(CameraTopology::pair_key(a, b));
            }
        }
    }
    topology.validate()?;
    Ok((topology, log))
}

/// Learns entry/exit zones for every camera and places each tracklet's
/// endpoints into them.
pub fn learn_all_zones(
    dataset: &Dataset,
    cfg: &PipelineConfig,
) -> Result<(BTreeMap<CameraId, Vec<Zone>>, BTreeMap<TrackletUid, ZonePlacement>)> {
    let mut zones = BTreeMap::new();
    let mut placement = BTreeMap::new();
    for (&camera, tracklets) in &dataset.tracklets {
        if tracklets.is_empty() {
            continue;
        }
        let learned = learn_zones(tracklets, cfg, mix_seed(cfg.seed ^ 0x20E5, camera.0 as u64))?;
        for t in tracklets {
            placement.insert(
                t.uid(),
                ZonePlacement {
                    entry: assign_zone(&learned, t.entry_point, ZoneKind::Entry),
                    exit: assign_zone(&learned, t.exit_point, ZoneKind::Exit),
                },
            );
        }
        zones.insert(camera, learned);
    }
    Ok((zones, placement))
}

/// Second stage: directed zone-to-zone links across every valid camera pair.
///
/// Probes are matched against per-entry-zone galleries of the target camera
/// in the forward window `[t, t + T]`; each probe's best match across the
/// target's entry zones is logged, and reliable matches feed the histogram
/// of the (exit zone, entry zone) candidate link they testify for.
pub fn infer_zone_topology(
    dataset: &Dataset,
    placement: &BTreeMap<TrackletUid, ZonePlacement>,
    cam_topology: &CameraTopology,
    cfg: &PipelineConfig,
) -> Result<(ZoneTopology, StageLog)> {
    let window = cfg.initial_window;
    let stride = window * cfg.window_stride_fraction;
    let mut entry_inputs: BTreeMap<ZoneKey, Vec<SeriesInput<'_>>> = BTreeMap::new();
    for (&camera, tracklets) in &dataset.tracklets {
        for t in tracklets {
            let Some(zone) = placement.get(&t.uid()).and_then(|p| p.entry) else {
                continue;
            };
            entry_inputs
                .entry(ZoneKey::new(camera, zone))
                .or_default()
                .push(SeriesInput::new(t, select_key_appearances(t, cfg.key_appearance_cap)));
        }
    }
    let mut entry_series: BTreeMap<ZoneKey, WindowedForestSeries> = BTreeMap::new();
    for (key, inputs) in &entry_inputs {
        let seed = mix_seed(cfg.seed ^ 0x20ED, ((key.camera.0 as u64) << 8) | key.zone as u64);
        entry_series.insert(
            *key,
            build_series(inputs, key.camera, Some(key.zone), window, stride, seed)?,
        );
    }

    let mut directions: BTreeSet<(CameraId, CameraId)> = BTreeSet::new();
    for &(a, b) in &cam_topology.valid {
        directions.insert((a, b));
        directions.insert((b, a));
    }

    let mut samples: BTreeMap<LinkKey, Vec<f64>> = BTreeMap::new();
    let mut log = StageLog::new("zone");
    for (src, dst) in directions {
        let galleries: Vec<(&ZoneKey, &WindowedForestSeries)> = entry_series
            .iter()
            .filter(|(k, _)| k.camera == dst)
            .collect();
        if galleries.is_empty() {
            continue;
        }
        let Some(probes) = dataset.tracklets.get(&src) else {
            continue;
        };
        for probe in probes {
            let Some(exit_zone) = placement.get(&probe.uid()).and_then(|p| p.exit) else {
                continue;
            };
            let feats = probe_features(probe, cfg);
            if feats.is_empty() {
                continue;
            }
            let t = probe.exit_time();
            let mut best: Option<MatchResult> = None;
            for (zone_key, series) in &galleries {
                let Some(m) = series.query(&feats, probe.uid(), t, (t, t + window), cfg) else {
                    continue;
                };
                // Gallery windows only overlap the forward interval, so a
                // match may still resolve to an entry *before* the exit;
                // only forward transitions testify for a link.
                if m.delta_t >= 0.0 && m.similarity > cfg.theta_sim {
                    samples
                        .entry((ZoneKey::new(src, exit_zone), **zone_key))
                        .or_default()
                        .push(m.delta_t);
                }
                if best.as_ref().map_or(true, |b| m.similarity > b.similarity) {
                    best = Some(m);
                }
            }
            if let Some(b) = best {
                log.matches.push(b);
            }
        }
    }

    let mut topology = ZoneTopology::default();
    let scale = cfg.confidence_time_scale.unwrap_or(window);
    for (key, link_samples) in samples {
        if link_samples.len() < MIN_LINK_SAMPLES {
            continue;
        }
        let dist = estimate_distribution(&link_samples, (0.0, window), cfg, scale)?;
        let valid = dist.confidence > cfg.theta_conf;
        topology.insert_edge(key.0, key.1, LinkState::new(dist, window))?;
        if valid {
            topology.valid.insert(key);
        }
    }
    topology.validate()?;
    Ok((topology, log))
}

/// Third stage: refines each valid link until its histogram stabilizes.
/// Returns the match logs of the first and the last refinement pass, plus
/// one topology snapshot per refinement pass (links that converged early
/// keep their final state in later snapshots).
pub fn refine_topology(
    dataset: &Dataset,
    placement: &BTreeMap<TrackletUid, ZonePlacement>,
    topology: &mut ZoneTopology,
    cfg: &PipelineConfig,
) -> Result<(StageLog, StageLog, Vec<ZoneTopology>)> {
    let mut probes: BTreeMap<ZoneKey, Vec<(&Tracklet, Vec<FeatureVector>)>> = BTreeMap::new();
    let mut galleries: BTreeMap<ZoneKey, Vec<SeriesInput<'_>>> = BTreeMap::new();
    for (&camera, tracklets) in &dataset.tracklets {
        for t in tracklets {
            let Some(p) = placement.get(&t.uid()) else {
                continue;
            };
            if let Some(zone) = p.exit {
                probes
                    .entry(ZoneKey::new(camera, zone))
                    .or_default()
                    .push((t, probe_features(t, cfg)));
            }
            if let Some(zone) = p.entry {
                galleries
                    .entry(ZoneKey::new(camera, zone))
                    .or_default()
                    .push(SeriesInput::new(t, select_key_appearances(t, cfg.key_appearance_cap)));
            }
        }
    }

    let mut first = StageLog::new("refine-first");
    let mut last = StageLog::new("refine-final");
    let mut histories: BTreeMap<LinkKey, Vec<LinkState>> = BTreeMap::new();
    for key in topology.valid.clone() {
        let state = topology.edges.get_mut(&key).expect("valid links are edges");
        let (Some(link_probes), Some(gallery)) = (probes.get(&key.0), galleries.get(&key.1))
        else {
            state.converged = true;
            continue;
        };
        let (f, l, history) = refine_link(state, link_probes, gallery, key, cfg)?;
        first.matches.extend(f);
        last.matches.extend(l);
        if !history.is_empty() {
            histories.insert(key, history);
        }
    }
    // Refinement updated the confidences; validity follows the final ones.
    topology.valid = topology
        .edges
        .iter()
        .filter(|(_, s)| s.distribution.confidence > cfg.theta_conf)
        .map(|(k, _)| *k)
        .collect();
    topology.validate()?;
    // Reconstruct how the graph looked after each pass. Links refine
    // independently, so pass `i` shows every link at its own state after
    // min(i + 1, passes it actually ran) passes; once a link is past its
    // last pass it appears in its final (window-refreshed) state, which
    // makes the last snapshot identical to the final topology.
    let depth = histories.values().map(Vec::len).max().unwrap_or(0);
    let mut iterations = Vec::with_capacity(depth);
    for i in 0..depth {
        let mut snapshot = topology.clone();
        for (key, history) in &histories {
            if i + 1 < history.len() {
                snapshot.edges.insert(*key, history[i].clone());
            }
        }
        snapshot.valid = snapshot
            .edges
            .iter()
            .filter(|(_, s)| s.distribution.confidence > cfg.theta_conf)
            .map(|(k, _)| *k)
            .collect();
        iterations.push(snapshot);
    }
    Ok((first, last, iterations))
}

/// Refines one link: narrow the time window around the fitted mean, match
/// every exit against the single gallery window nearest `t + mu`, re-fit,
/// and stop once the histogram moves less than `convergence_epsilon`
/// (Bhattacharyya) or `max_iterations` passes ran. Two consecutive passes
/// without enough reliable matches also count as converged.
///
/// Returns the match logs of the first and last pass plus a clone of the
/// link state after every pass, so callers can export the trajectory.
pub fn refine_link(
    state: &mut LinkState,
    probes: &[(&Tracklet, Vec<FeatureVector>)],
    gallery: &[SeriesInput<'_>],
    key: LinkKey,
    cfg: &PipelineConfig,
) -> Result<(Vec<MatchResult>, Vec<MatchResult>, Vec<LinkState>)> {
    let link_seed = mix_seed(
        cfg.seed ^ 0x2EF1,
        ((key.0.camera.0 as u64) << 48)
            | ((key.0.zone as u64) << 32)
            | ((key.1.camera.0 as u64) << 16)
            | key.1.zone as u64,
    );
    let mut first = Vec::new();
    let mut last = Vec::new();
    let mut history = Vec::new();
    while !state.converged && state.iteration < cfg.max_iterations {
        let Some(model) = state.distribution.model.clone() else {
            break;
        };
        let (lower, upper, span) = update_time_window(&model, cfg.range_percent, cfg.max_window_fit_error);
        state.window = span;
        state.bounds = Some((lower, upper));
        let series = build_series(
            gallery,
            key.1.camera,
            Some(key.1.zone),
            span,
            (span * cfg.window_stride_fraction).max(f64::EPSILON),
            mix_seed(link_seed, state.iteration as u64),
        )?;
        let mut matches = Vec::new();
        for (probe, feats) in probes {
            if feats.is_empty() {
                continue;
            }
            let t = probe.exit_time();
            let Some(w) = series.nearest_window(t + model.mu) else {
                continue;
            };
            if let Some(m) = series.query_window(w, feats, probe.uid(), t, cfg) {
                matches.push(m);
            }
        }
        if state.iteration == 0 {
            first = matches.clone();
        }
        last.clone_from(&matches);
        let samples: Vec<f64> = matches
            .iter()
            .filter(|m| m.delta_t >= 0.0 && m.similarity > cfg.theta_sim)
            .map(|m| m.delta_t)
            .collect();
        state.iteration += 1;
        if samples.len() < MIN_LINK_SAMPLES {
            state.stagnant += 1;
            if state.stagnant >= 2 {
                state.converged = true;
            }
            history.push(state.clone());
            continue;
        }
        state.stagnant = 0;
        let scale = cfg.confidence_time_scale.unwrap_or(span);
        let refreshed = estimate_distribution(&samples, (0.0, span), cfg, scale)?;
        let step = state.distribution.bhattacharyya(&refreshed);
        state.distribution = refreshed;
        if matches!(step, Some(d) if d < cfg.convergence_epsilon) {
            state.converged = true;
        }
        history.push(state.clone());
    }
    if let Some(model) = &state.distribution.model {
        let (lower, upper, span) = update_time_window(model, cfg.range_percent, cfg.max_window_fit_error);
        state.window = span;
        state.bounds = Some((lower, upper));
    }
    Ok((first, last, history))
}

/// Runs the full initialization: camera-level inference, zone learning,
/// zone-level inference, and iterative refinement.
pub fn initialize_topology(dataset: &Dataset, cfg: &PipelineConfig) -> Result<InitOutcome> {
    cfg.validate()?;
    if dataset.tracklet_count() == 0 {
        // Nothing to learn from, but that is not a caller error: report an
        // empty topology so batch pipelines degrade gracefully.
        return Ok(InitOutcome {
            cam_topology: CameraTopology::default(),
            zones: BTreeMap::new(),
            zone_assignment: BTreeMap::new(),
            topology: ZoneTopology::default(),
            stages: vec![
                StageLog::new("camera"),
                StageLog::new("zone"),
                StageLog::new("refine-first"),
                StageLog::new("refine-final"),
            ],
            iterations: Vec::new(),
        });
    }
    let (cam_topology, cam_log) = infer_cam_topology(dataset, cfg)?;
    let (zones, zone_assignment) = learn_all_zones(dataset, cfg)?;
    let (mut topology, zone_log) = infer_zone_topology(dataset, &zone_assignment, &cam_topology, cfg)?;
    let (refine_first, refine_last, iterations) =
        refine_topology(dataset, &zone_assignment, &mut topology, cfg)?;
    Ok(InitOutcome {
        cam_topology,
        zones,
        zone_assignment,
        topology,
        stages: vec![cam_log, zone_log, refine_first, refine_last],
        iterations,
    })
}
