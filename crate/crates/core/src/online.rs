//! Streaming stage: gate candidates through the learned topology, match
//! people as they leave a view, and keep each link's transition model
//! current with a lazy refit.
//!
//! Every valid link carries two distributions: the *base* model that drives
//! gating, and an *accumulated* copy that folds in each reliable online
//! transition. When the L1 distance between the two exceeds
//! `online_refit_threshold`, the accumulated histogram is refitted and
//! adopted as the new base, re-deriving the link's time bounds and
//! confidence. Below the threshold the updates merely cumulate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::config::PipelineConfig;
use crate::error::Result;
use crate::forest::{mix_seed, similarity, train_forest};
use crate::ingest::{select_key_appearances, Dataset};
use crate::topology::{connectivity_confidence, fit_gaussian, update_time_window, ZonePlacement};
use crate::types::{
    CameraId, FeatureVector, Gallery, GalleryEntry, LinkKey, LinkState, PersonLabel, Tracklet,
    TrackletUid, TransitionDistribution, ZoneTopology,
};
use crate::zones::{assign_zone, Zone, ZoneKind};

/// One directed link's streaming state.
#[derive(Clone, Debug)]
pub struct OnlineLink {
    /// Model currently used for gating, matching, and confidence.
    pub base: LinkState,
    /// Copy of the base distribution plus every reliable transition seen
    /// since the last refit; always normalized.
    pub accumulated: TransitionDistribution,
    /// L1 distance between the base and accumulated distributions.
    pub drift: f64,
    /// Reliable matches folded into `accumulated` since the last refit.
    pub pending_matches: usize,
}

impl OnlineLink {
    pub fn new(base: LinkState) -> Self {
        let accumulated = base.distribution.clone();
        OnlineLink {
            base,
            accumulated,
            drift: 0.0,
            pending_matches: 0,
        }
    }
}

/// How an online match was decided.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchPath {
    /// Forest trained on the gated candidates.
    Forest,
    /// Pairwise similarity over a small candidate set.
    Exhaustive,
}

impl fmt::Display for MatchPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchPath::Forest => "forest",
            MatchPath::Exhaustive => "exhaustive",
        })
    }
}

/// One streamed correspondence decision.
#[derive(Clone, Debug)]
pub struct OnlineMatch {
    pub link: LinkKey,
    pub probe: TrackletUid,
    pub exit_time: f64,
    pub matched: TrackletUid,
    pub entry_time: f64,
    pub delta_t: f64,
    pub similarity: f64,
    pub path: MatchPath,
    /// True when folding this match in triggered a refit.
    pub refit: bool,
}

/// An entry-side tracklet available for gating, with its key appearances.
#[derive(Clone, Debug)]
pub struct Candidate<'a> {
    pub tracklet: &'a Tracklet,
    pub features: Vec<FeatureVector>,
}

/// Everything one streaming run produces.
#[derive(Debug)]
pub struct OnlineOutcome {
    /// Every match in exit-timestamp order.
    pub matches: Vec<OnlineMatch>,
    /// The topology with each link's final base model.
    pub topology: ZoneTopology,
    /// Final per-link streaming state (drift, pending counts).
    pub links: BTreeMap<LinkKey, OnlineLink>,
    pub refits: usize,
    /// Refit attempts abandoned because the accumulated histogram was
    /// degenerate; the previous model stays in place.
    pub refit_failures: usize,
}

/// Candidates for an exit at `exit_time`: entries whose appearance time lies
/// in `[t + T_L, t + T_U]`. `pool` must be sorted by entry time; the result
/// is the matching contiguous run. Links without fitted bounds gate nothing.
pub fn gate_candidates<'a, 'b>(
    state: &LinkState,
    exit_time: f64,
    pool: &'b [Candidate<'a>],
) -> &'b [Candidate<'a>] {
    let Some((lower, upper)) = state.bounds else {
        return &pool[..0];
    };
    let lo = exit_time + lower;
    let hi = exit_time + upper;
    let start = pool.partition_point(|c| c.tracklet.entry_time() < lo);
    let end = pool.partition_point(|c| c.tracklet.entry_time() <= hi);
    &pool[start..end]
}

/// Picks the best candidate for `probe`: an exhaustive similarity scan for
/// small sets, a disposable forest classification once the set reaches
/// `candidate_forest_threshold`. Returns the winning position in
/// `candidates`, its similarity, and the path taken; `None` when nothing was
/// gated in. Ties resolve to the earliest candidate on both paths.
pub fn match_online(
    candidates: &[&Candidate<'_>],
    probe: &[FeatureVector],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Option<(usize, f64, MatchPath)>> {
    if candidates.is_empty() || probe.is_empty() {
        return Ok(None);
    }
    if candidates.len() >= cfg.candidate_forest_threshold {
        // Candidate positions double as class labels, so the sorted label
        // vector of the forest is exactly 0..n and posteriors align.
        let mut entries = Vec::new();
        let mut span = (f64::INFINITY, f64::NEG_INFINITY);
        for (i, c) in candidates.iter().enumerate() {
            let at = c.tracklet.entry_time();
            span = (span.0.min(at), span.1.max(at));
            for f in &c.features {
                entries.push(GalleryEntry {
                    feature: f.clone(),
                    label: PersonLabel(i as u32),
                    timestamp: at,
                });
            }
        }
        let gallery = Gallery {
            camera: candidates[0].tracklet.camera,
            zone: None,
            entries,
            time_span: span,
        };
        let forest = train_forest(&gallery, cfg, seed)?;
        let (label, _) = forest.predict_multishot(probe);
        let idx = label.0 as usize;
        let s = similarity(probe, &candidates[idx].features);
        Ok(Some((idx, s, MatchPath::Forest)))
    } else {
        let mut best = 0usize;
        let mut best_s = f64::NEG_INFINITY;
        for (i, c) in candidates.iter().enumerate() {
            let s = similarity(probe, &c.features);
            if s > best_s {
                best_s = s;
                best = i;
            }
        }
        Ok(Some((best, best_s, MatchPath::Exhaustive)))
    }
}

/// Folds one scored transition into the link's accumulated distribution when
/// its similarity clears `theta_sim`, then recomputes drift. Unreliable
/// matches leave the link untouched.
pub fn update_distribution(
    link: &mut OnlineLink,
    delta_t: f64,
    similarity: f64,
    cfg: &PipelineConfig,
) {
    if similarity <= cfg.theta_sim {
        return;
    }
    link.accumulated.add_sample(delta_t);
    link.pending_matches += 1;
    // The accumulated copy only ever grows its range in whole bins, so the
    // grids stay compatible; a disagreement would force a refit anyway.
    link.drift = link
        .base
        .distribution
        .l1_distance(&link.accumulated)
        .unwrap_or(f64::INFINITY);
}

/// Refits the Gaussian from the accumulated histogram once drift exceeds
/// `online_refit_threshold` and adopts it as the new base, re-deriving the
/// time bounds and confidence. Returns whether a refit happened; a
/// degenerate accumulation keeps the previous model and reports `false`.
pub fn maybe_refit(link: &mut OnlineLink, cfg: &PipelineConfig) -> bool {
    if link.drift <= cfg.online_refit_threshold {
        return false;
    }
    let mut refreshed = link.accumulated.clone();
    match fit_gaussian(&refreshed) {
        Ok(model) => {
            let (lower, upper, span) =
                update_time_window(&model, cfg.range_percent, cfg.max_window_fit_error);
            let scale = cfg.confidence_time_scale.unwrap_or(span);
            refreshed.confidence = connectivity_confidence(&model, scale);
            refreshed.model = Some(model);
            link.base.distribution = refreshed.clone();
            link.base.window = span;
            link.base.bounds = Some((lower, upper));
            link.accumulated = refreshed;
            link.drift = 0.0;
            link.pending_matches = 0;
            true
        }
        Err(_) => false,
    }
}

/// Replays `stream` against an initialized topology: exits on every valid
/// link are gated, matched, and (unless `update` is off) folded into the
/// link's distribution with a lazy refit. Exits resolve once the stream
/// passes `t + T_U` for their link, so every gateable entry has arrived; the
/// returned log is ordered by exit timestamp.
pub fn run_online(
    topology: &ZoneTopology,
    zones: &BTreeMap<CameraId, Vec<Zone>>,
    stream: &Dataset,
    cfg: &PipelineConfig,
    update: bool,
) -> Result<OnlineOutcome> {
    cfg.validate()?;
    let placement = assign_stream_zones(stream, zones);
    let features: BTreeMap<TrackletUid, Vec<FeatureVector>> = stream
        .all_tracklets()
        .map(|t| {
            let feats = select_key_appearances(t, cfg.key_appearance_cap)
                .into_iter()
                .map(|i| t.observations[i].feature.clone())
                .collect();
            (t.uid(), feats)
        })
        .collect();

    let mut links: BTreeMap<LinkKey, OnlineLink> = BTreeMap::new();
    let mut pools: BTreeMap<LinkKey, Vec<Candidate<'_>>> = BTreeMap::new();
    let mut exits: BTreeMap<LinkKey, Vec<&Tracklet>> = BTreeMap::new();
    for key in &topology.valid {
        let state = topology.edges[key].clone();
        if state.bounds.is_none() {
            continue;
        }
        links.insert(*key, OnlineLink::new(state));
        let mut pool: Vec<Candidate<'_>> = stream
            .tracklets
            .get(&key.1.camera)
            .map(|ts| {
                ts.iter()
                    .filter(|t| placement.get(&t.uid()).and_then(|p| p.entry) == Some(key.1.zone))
                    .map(|t| Candidate {
                        tracklet: t,
                        features: features[&t.uid()].clone(),
                    })
                    .collect()
            })
            .unwrap_or_default();
        pool.sort_by(|a, b| {
            a.tracklet
                .entry_time()
                .total_cmp(&b.tracklet.entry_time())
                .then(a.tracklet.uid().cmp(&b.tracklet.uid()))
        });
        pools.insert(*key, pool);
        let mut outgoing: Vec<&Tracklet> = stream
            .tracklets
            .get(&key.0.camera)
            .map(|ts| {
                ts.iter()
                    .filter(|t| placement.get(&t.uid()).and_then(|p| p.exit) == Some(key.0.zone))
                    .collect()
            })
            .unwrap_or_default();
        outgoing.sort_by(|a, b| {
            a.exit_time()
                .total_cmp(&b.exit_time())
                .then(a.uid().cmp(&b.uid()))
        });
        exits.insert(*key, outgoing);
    }

    let mut cursors: BTreeMap<LinkKey, usize> = links.keys().map(|k| (*k, 0usize)).collect();
    let mut claimed: BTreeSet<TrackletUid> = BTreeSet::new();
    let mut log = Vec::new();
    let mut refits = 0usize;
    let mut refit_failures = 0usize;
    let mut event = 0u64;
    loop {
        // The next exit to resolve is the one whose watermark t + T_U passes
        // first under each link's *current* bounds; ties break on the key so
        // replays are deterministic.
        let mut next: Option<(f64, f64, LinkKey)> = None;
        for (key, link) in &links {
            let at = cursors[key];
            let Some(probe) = exits[key].get(at) else {
                continue;
            };
            let upper = link.base.bounds.map(|b| b.1).unwrap_or(link.base.window);
            let candidate = (probe.exit_time() + upper, probe.exit_time(), *key);
            if next.map_or(true, |best| {
                (candidate.0, candidate.1, candidate.2) < (best.0, best.1, best.2)
            }) {
                next = Some(candidate);
            }
        }
        let Some((_, _, key)) = next else { break };
        let probe = exits[&key][cursors[&key]];
        *cursors.get_mut(&key).unwrap() += 1;
        event += 1;
        let probe_features = &features[&probe.uid()];
        let link = links.get_mut(&key).unwrap();
        let t = probe.exit_time();
        let gated = gate_candidates(&link.base, t, &pools[&key]);
        let gated: Vec<&Candidate<'_>> = gated
            .iter()
            .filter(|c| !cfg.one_to_one || !claimed.contains(&c.tracklet.uid()))
            .collect();
        let Some((idx, s, path)) = match_online(
            &gated,
            probe_features,
            cfg,
            mix_seed(cfg.seed ^ 0x0E11, event),
        )?
        else {
            continue;
        };
        let matched = gated[idx].tracklet;
        if cfg.one_to_one {
            claimed.insert(matched.uid());
        }
        let delta_t = matched.entry_time() - t;
        let mut refit = false;
        if update {
            let before = link.drift;
            update_distribution(link, delta_t, s, cfg);
            if link.drift > cfg.online_refit_threshold {
                refit = maybe_refit(link, cfg);
                if refit {
                    refits += 1;
                } else if before < link.drift {
                    refit_failures += 1;
                }
            }
        }
        log.push(OnlineMatch {
            link: key,
            probe: probe.uid(),
            exit_time: t,
            matched: matched.uid(),
            entry_time: matched.entry_time(),
            delta_t,
            similarity: s,
            path,
            refit,
        });
    }

    log.sort_by(|a, b| {
        a.exit_time
            .total_cmp(&b.exit_time)
            .then(a.link.cmp(&b.link))
            .then(a.probe.cmp(&b.probe))
    });
    let mut final_topology = topology.clone();
    for (key, link) in &links {
        final_topology.edges.insert(*key, link.base.clone());
    }
    Ok(OnlineOutcome {
        matches: log,
        topology: final_topology,
        links,
        refits,
        refit_failures,
    })
}

/// Assigns each stream tracklet to the frozen zones of its camera.
fn assign_stream_zones(
    stream: &Dataset,
    zones: &BTreeMap<CameraId, Vec<Zone>>,
) -> BTreeMap<TrackletUid, ZonePlacement> {
    let mut placement = BTreeMap::new();
    for (camera, tracklets) in &stream.tracklets {
        let Some(learned) = zones.get(camera) else {
            continue;
        };
        for t in tracklets {
            placement.insert(
                t.uid(),
                ZonePlacement {
                    entry: assign_zone(learned, t.entry_point, ZoneKind::Entry),
                    exit: assign_zone(learned, t.exit_point, ZoneKind::Exit),
                },
            );
        }
    }
    placement
}

/// Renders the match log in its line-oriented exchange form.
pub fn format_match_log(matches: &[OnlineMatch]) -> String {
    let mut out = String::from(
        "# exit_cam exit_zone exit_id exit_time entry_cam entry_zone entry_id entry_time delta_t similarity path refit\n",
    );
    for m in matches {
        out.push_str(&format!(
            "{} {} {} {:.3} {} {} {} {:.3} {:.3} {:.6} {} {}\n",
            m.link.0.camera.0,
            m.link.0.zone,
            m.probe,
            m.exit_time,
            m.link.1.camera.0,
            m.link.1.zone,
            m.matched,
            m.entry_time,
            m.delta_t,
            m.similarity,
            m.path,
            u8::from(m.refit),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{BoundingBox, Observation, ZoneKey};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> PipelineConfig {
        PipelineConfig::default()
    }

    fn unit(raw: &[f64]) -> FeatureVector {
        FeatureVector::unit(raw).unwrap()
    }

    fn basis(dim: usize, axis: usize) -> FeatureVector {
        let mut raw = vec![0.0; dim];
        raw[axis] = 1.0;
        unit(&raw)
    }

    /// Two-observation tracklet entering at `entry` and exiting at `exit`.
    fn span_tracklet(
        camera: u32,
        person: u32,
        entry: f64,
        exit: f64,
        feature: FeatureVector,
    ) -> Tracklet {
        let obs = |timestamp: f64| Observation {
            camera: CameraId(camera),
            timestamp,
            feature: feature.clone(),
            bbox: BoundingBox {
                x: 10.0,
                y: 10.0,
                w: 40.0,
                h: 80.0,
            },
        };
        Tracklet {
            camera: CameraId(camera),
            person: PersonLabel(person),
            observations: vec![obs(entry), obs(exit)],
            entry_point: (100.0, 100.0),
            exit_point: (500.0, 100.0),
        }
    }

    fn candidate(tracklet: &Tracklet) -> Candidate<'_> {
        Candidate {
            tracklet,
            features: vec![tracklet.observations[0].feature.clone()],
        }
    }

    /// State with a fitted model for N(30, 5) and the derived 95% bounds.
    fn fitted_state(samples: &[f64]) -> LinkState {
        let c = cfg();
        let dist =
            crate::topology::estimate_distribution(samples, (0.0, 600.0), &c, 600.0).unwrap();
        let model = dist.model.clone().expect("fit succeeds");
        let (lower, upper, span) = update_time_window(&model, c.range_percent, c.max_window_fit_error);
        let mut state = LinkState::new(dist, span);
        state.bounds = Some((lower, upper));
        state
    }

    fn gaussian_samples(mu: f64, sigma: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                // Box-Muller keeps the oracle independent of rand's normal.
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                mu + sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect()
    }

    // ===== Candidate gating =====

    #[test]
    fn gate_keeps_exactly_the_bounded_interval() {
        let mut state = LinkState::new(
            TransitionDistribution::from_samples(&[30.0], 1.0, (0.0, 600.0)).unwrap(),
            600.0,
        );
        state.bounds = Some((20.2, 39.8));
        let f = basis(4, 0);
        let tracklets: Vec<Tracklet> = [115.0, 120.2, 125.0, 139.8, 140.2, 150.0]
            .iter()
            .enumerate()
            .map(|(i, &at)| span_tracklet(2, i as u32, at, at + 5.0, f.clone()))
            .collect();
        let pool: Vec<Candidate<'_>> = tracklets.iter().map(candidate).collect();
        let gated = gate_candidates(&state, 100.0, &pool);
        let times: Vec<f64> = gated.iter().map(|c| c.tracklet.entry_time()).collect();
        assert_eq!(times, vec![120.2, 125.0, 139.8]);
    }

    #[test]
    fn gate_with_negative_lower_bound_admits_simultaneous_entries() {
        let mut state = LinkState::new(
            TransitionDistribution::from_samples(&[0.0], 1.0, (-10.0, 10.0)).unwrap(),
            20.0,
        );
        state.bounds = Some((-5.0, 10.0));
        let f = basis(4, 0);
        let tracklets = vec![
            span_tracklet(2, 0, 94.0, 99.0, f.clone()),
            span_tracklet(2, 1, 96.0, 104.0, f.clone()),
            span_tracklet(2, 2, 100.0, 104.0, f.clone()),
        ];
        let pool: Vec<Candidate<'_>> = tracklets.iter().map(candidate).collect();
        let gated = gate_candidates(&state, 100.0, &pool);
        let people: Vec<u32> = gated.iter().map(|c| c.tracklet.person.0).collect();
        assert_eq!(
            people,
            vec![1, 2],
            "entries before and at the exit moment must gate in"
        );
    }

    #[test]
    fn gate_without_bounds_is_empty() {
        let state = LinkState::new(
            TransitionDistribution::from_samples(&[30.0], 1.0, (0.0, 600.0)).unwrap(),
            600.0,
        );
        let f = basis(4, 0);
        let t = span_tracklet(2, 0, 130.0, 135.0, f);
        let pool = vec![candidate(&t)];
        assert!(gate_candidates(&state, 100.0, &pool).is_empty());
    }

    // ===== Online matching =====

    #[test]
    fn matching_paths_agree_on_separable_identities() {
        let dim = 32;
        let tracklets: Vec<Tracklet> = (0..25)
            .map(|i| span_tracklet(2, i as u32, 100.0 + i as f64, 105.0 + i as f64, basis(dim, i)))
            .collect();
        let pool: Vec<Candidate<'_>> = tracklets.iter().map(candidate).collect();
        let refs: Vec<&Candidate<'_>> = pool.iter().collect();
        let probe = vec![basis(dim, 7)];
        let forest_cfg = cfg();
        assert!(refs.len() >= forest_cfg.candidate_forest_threshold);
        let (fi, fs, fp) = match_online(&refs, &probe, &forest_cfg, 3).unwrap().unwrap();
        let mut exhaustive_cfg = cfg();
        exhaustive_cfg.candidate_forest_threshold = 100;
        let (ei, es, ep) = match_online(&refs, &probe, &exhaustive_cfg, 3)
            .unwrap()
            .unwrap();
        assert_eq!(fp, MatchPath::Forest);
        assert_eq!(ep, MatchPath::Exhaustive);
        assert_eq!(fi, ei, "paths disagree on a separable probe");
        assert_eq!(fi, 7);
        assert_eq!(fs, es);
        assert!((fs - 1.0).abs() < 1e-12, "exact appearance similarity");
    }

    #[test]
    fn small_sets_take_the_exhaustive_path() {
        let tracklets: Vec<Tracklet> = (0..2)
            .map(|i| span_tracklet(2, i as u32, 100.0, 105.0, basis(8, i)))
            .collect();
        let pool: Vec<Candidate<'_>> = tracklets.iter().map(candidate).collect();
        let refs: Vec<&Candidate<'_>> = pool.iter().collect();
        let (idx, _, path) = match_online(&refs, &[basis(8, 1)], &cfg(), 1).unwrap().unwrap();
        assert_eq!(path, MatchPath::Exhaustive);
        assert_eq!(idx, 1);
    }

    #[test]
    fn empty_candidate_set_matches_nothing() {
        assert!(match_online(&[], &[basis(4, 0)], &cfg(), 1).unwrap().is_none());
    }

    // ===== Distribution updates =====

    #[test]
    fn low_similarity_updates_are_dropped() {
        let state = fitted_state(&gaussian_samples(30.0, 5.0, 400, 31));
        let mut link = OnlineLink::new(state);
        let before = link.accumulated.clone();
        update_distribution(&mut link, 35.0, 0.5, &cfg());
        assert_eq!(link.accumulated.masses(), before.masses());
        assert_eq!(link.pending_matches, 0);
        assert_eq!(link.drift, 0.0);
    }

    #[test]
    fn one_reliable_sample_shifts_mass_by_one_count() {
        // 99 samples at one bin, then one more elsewhere: the new bin must
        // carry exactly 1/100 of the mass and the total must stay 1.
        let samples = vec![30.5; 99];
        let dist = TransitionDistribution::from_samples(&samples, 1.0, (0.0, 60.0)).unwrap();
        let mut link = OnlineLink::new(LinkState::new(dist, 60.0));
        update_distribution(&mut link, 40.5, 0.9, &cfg());
        let acc = &link.accumulated;
        let idx = ((40.5 - acc.range().0) / acc.bin_width()).floor() as usize;
        assert!((acc.masses()[idx] - 0.01).abs() < 1e-12);
        let total: f64 = acc.masses().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(link.pending_matches, 1);
        // Both distributions changed in one bin pair by 1/100 each way.
        assert!((link.drift - 0.02).abs() < 1e-12, "drift {}", link.drift);
    }

    #[test]
    fn repeated_updates_grow_drift_monotonically() {
        let state = fitted_state(&gaussian_samples(30.0, 5.0, 400, 33));
        let mut link = OnlineLink::new(state);
        let mut last = 0.0;
        for _ in 0..12 {
            update_distribution(&mut link, 41.0, 0.95, &cfg());
            assert!(link.drift >= last, "drift shrank without a refit");
            last = link.drift;
        }
        assert!(last > 0.0);
    }

    // ===== Lazy refit =====

    #[test]
    fn refit_below_threshold_is_an_identity() {
        let state = fitted_state(&gaussian_samples(30.0, 5.0, 400, 35));
        let mut link = OnlineLink::new(state.clone());
        link.drift = 0.05;
        assert!(!maybe_refit(&mut link, &cfg()));
        assert!(!maybe_refit(&mut link, &cfg()), "idempotent below threshold");
        assert_eq!(link.base.bounds, state.bounds);
        assert_eq!(
            link.base.distribution.model.as_ref().unwrap().mu,
            state.distribution.model.as_ref().unwrap().mu
        );
        assert_eq!(link.drift, 0.05);
    }

    #[test]
    fn refit_recenters_on_the_accumulated_histogram() {
        let state = fitted_state(&gaussian_samples(30.0, 4.0, 300, 37));
        let mut link = OnlineLink::new(state);
        let shifted = gaussian_samples(40.0, 2.0, 400, 39);
        let c = cfg();
        let mut refits = 0;
        for &dt in &shifted {
            update_distribution(&mut link, dt, 0.95, &c);
            if maybe_refit(&mut link, &c) {
                refits += 1;
                assert_eq!(link.pending_matches, 0, "refit must clear pending matches");
                assert_eq!(link.drift, 0.0, "refit must reset drift");
            }
        }
        assert!(refits >= 1, "drift never crossed the refit threshold");
        let model = link.base.distribution.model.as_ref().unwrap();
        let (acc_mean, _) = link.accumulated.mean_std();
        assert!(
            (model.mu - acc_mean).abs() < 1.5,
            "refit mu {} vs accumulated mean {acc_mean}",
            model.mu
        );
        assert!(model.mu > 36.0, "mu {} never moved toward the shift", model.mu);
        let (lower, upper) = link.base.bounds.unwrap();
        assert!(lower < model.mu && model.mu < upper);
    }

    #[test]
    fn single_bin_accumulation_refits_to_a_floored_model() {
        // The thinnest possible histogram still yields a usable model:
        // centred on the lone bin with the floor spread of half a bin.
        let dist = TransitionDistribution::from_samples(&[30.2; 40], 1.0, (30.0, 31.0)).unwrap();
        let mut state = LinkState::new(dist, 60.0);
        state.bounds = Some((20.0, 40.0));
        let mut link = OnlineLink::new(state);
        link.drift = 0.5;
        assert!(maybe_refit(&mut link, &cfg()));
        let model = link.base.distribution.model.as_ref().unwrap();
        assert_eq!(model.mu, 30.5);
        assert_eq!(model.sigma, 0.5);
        assert_eq!(link.drift, 0.0);
        let (lower, upper) = link.base.bounds.unwrap();
        assert!(lower < 30.5 && 30.5 < upper);
    }

    // ===== Full streaming runs =====

    /// Initialized topology and simulator output for a two-camera scenario.
    fn initialized(spec: &crate::sim::ScenarioSpec) -> (crate::sim::SimOutput, crate::topology::InitOutcome) {
        let out = crate::sim::generate(spec).unwrap();
        let init = crate::topology::initialize_topology(&out.init, &cfg()).unwrap();
        (out, init)
    }

    fn stationary_pair(seed: u64) -> crate::sim::ScenarioSpec {
        let mut spec = crate::sim::ScenarioSpec::drift_pair(seed);
        spec.changes.clear();
        spec
    }

    #[test]
    fn empty_stream_leaves_everything_untouched() {
        let (_, init) = initialized(&stationary_pair(5));
        assert!(!init.topology.valid.is_empty(), "need a valid link to test");
        let empty = Dataset::default();
        let outcome = run_online(&init.topology, &init.zones, &empty, &cfg(), true).unwrap();
        assert!(outcome.matches.is_empty());
        assert_eq!(outcome.refits, 0);
        for (key, state) in &init.topology.edges {
            assert_eq!(
                outcome.topology.edges[key].distribution.masses(),
                state.distribution.masses()
            );
        }
    }

    #[test]
    fn gated_sets_contain_the_true_correspondent_at_the_coverage_rate() {
        let (out, init) = initialized(&stationary_pair(7));
        let placement = assign_stream_zones(&out.online, &init.zones);
        let mut contained = 0usize;
        let mut total = 0usize;
        for pair in &out.truth.pairs {
            let Some(from) = out.find_tracklet(pair.from) else { continue };
            let Some(to) = out.find_tracklet(pair.to) else { continue };
            if from.entry_time() < out.truth.online_start || to.entry_time() < out.truth.online_start {
                continue;
            }
            let (Some(exit_zone), Some(entry_zone)) = (
                placement.get(&pair.from).and_then(|p| p.exit),
                placement.get(&pair.to).and_then(|p| p.entry),
            ) else {
                continue;
            };
            let key = (
                ZoneKey::new(from.camera, exit_zone),
                ZoneKey::new(to.camera, entry_zone),
            );
            let Some(state) = init.topology.edges.get(&key) else { continue };
            if !init.topology.valid.contains(&key) {
                continue;
            }
            let (lower, upper) = state.bounds.unwrap();
            total += 1;
            let dt = to.entry_time() - from.exit_time();
            if dt >= lower && dt <= upper {
                contained += 1;
            }
        }
        assert!(total > 200, "too few online transitions ({total})");
        let rate = contained as f64 / total as f64;
        // The nominal coverage is 95%, but refinement re-estimates each model
        // from matches collected inside the narrowed window, which clips the
        // tails and contracts the fitted spread by roughly 15%; the realized
        // gate coverage lands several points below nominal.
        assert!(
            (0.78..=0.98).contains(&rate),
            "containment rate {rate} out of line with the configured coverage"
        );
    }

    #[test]
    fn log_is_ordered_and_matches_are_mostly_correct() {
        let (out, init) = initialized(&stationary_pair(9));
        let outcome = run_online(&init.topology, &init.zones, &out.online, &cfg(), true).unwrap();
        assert!(outcome.matches.len() > 100, "log has {}", outcome.matches.len());
        for w in outcome.matches.windows(2) {
            assert!(w[0].exit_time <= w[1].exit_time, "log out of order");
        }
        // Many logged exits are people leaving the site for a while: they have
        // no true correspondent downstream, so whatever the matcher picks for
        // them is noise (and the similarity gate keeps that noise out of the
        // models). Judge accuracy on exits that really did transit a link.
        let transited: std::collections::BTreeSet<_> =
            out.truth.pairs.iter().map(|p| p.from).collect();
        let (mut real, mut real_correct) = (0usize, 0usize);
        let (mut reliable, mut reliable_correct) = (0usize, 0usize);
        for m in &outcome.matches {
            if transited.contains(&m.probe) {
                real += 1;
                real_correct += usize::from(m.probe.person == m.matched.person);
            }
            if m.similarity > cfg().theta_sim {
                reliable += 1;
                reliable_correct += usize::from(m.probe.person == m.matched.person);
            }
        }
        assert!(real > 100, "too few true transitions probed ({real})");
        let rate = real_correct as f64 / real as f64;
        // Misses come almost entirely from gates that exclude the counterpart
        // (the fitted bounds cover ~85% of true travel times, not 95%).
        assert!(rate > 0.75, "accuracy on true transitions {rate}");
        let reliable_rate = reliable_correct as f64 / reliable as f64;
        assert!(reliable > 50, "too few confident matches ({reliable})");
        assert!(
            reliable_rate > 0.95,
            "high-similarity matches should be near-perfect, got {reliable_rate}"
        );
        let forest = outcome
            .matches
            .iter()
            .filter(|m| m.path == MatchPath::Forest)
            .count();
        let exhaustive = outcome.matches.len() - forest;
        assert!(exhaustive > 0, "sparse gates should take the exhaustive path");
    }

    #[test]
    fn disabling_updates_freezes_the_models() {
        let (out, init) = initialized(&stationary_pair(11));
        let outcome = run_online(&init.topology, &init.zones, &out.online, &cfg(), false).unwrap();
        assert!(outcome.refits == 0);
        assert!(!outcome.matches.iter().any(|m| m.refit));
        for (key, state) in &init.topology.edges {
            let after = &outcome.topology.edges[key];
            assert_eq!(after.distribution.masses(), state.distribution.masses());
            assert_eq!(after.bounds, state.bounds);
        }
    }

    #[test]
    fn drifted_travel_times_pull_the_model_after_refits() {
        // Mid-stream shift 30 s -> 40 s: with updates on, every refit chases
        // the accumulated histogram, so the final mean must approach 40.
        let (out, init) = initialized(&crate::sim::ScenarioSpec::drift_pair(13));
        let outcome = run_online(&init.topology, &init.zones, &out.online, &cfg(), true).unwrap();
        assert!(outcome.refits > 0, "drift scenario must trigger refits");
        let mut checked = 0;
        for key in &outcome.topology.valid {
            let model = outcome.topology.edges[key].distribution.model.as_ref().unwrap();
            let initial = init.topology.edges[key].distribution.model.as_ref().unwrap();
            assert!(
                model.mu > initial.mu + 1.0,
                "link {:?} stayed at {} despite the shift",
                key,
                model.mu
            );
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn one_to_one_lets_each_entry_be_claimed_once() {
        let samples = gaussian_samples(30.0, 2.0, 300, 41);
        let state = fitted_state(&samples);
        let mut topology = ZoneTopology::default();
        let key = (ZoneKey::new(CameraId(1), 1), ZoneKey::new(CameraId(2), 0));
        topology.insert_edge(key.0, key.1, state).unwrap();
        topology.valid.insert(key);
        let zones = BTreeMap::from([
            (
                CameraId(1),
                vec![Zone {
                    camera: CameraId(1),
                    zone_id: 1,
                    kind: ZoneKind::Exit,
                    center: (500.0, 100.0),
                    covariance: (25.0, 0.0, 25.0),
                    member_count: 10,
                }],
            ),
            (
                CameraId(2),
                vec![Zone {
                    camera: CameraId(2),
                    zone_id: 0,
                    kind: ZoneKind::Entry,
                    center: (100.0, 100.0),
                    covariance: (25.0, 0.0, 25.0),
                    member_count: 10,
                }],
            ),
        ]);
        let f = basis(8, 3);
        // Two people leave camera 1 around the same moment; only one entry
        // appears at camera 2 within both gates.
        let mut stream = Dataset::default();
        stream.tracklets.insert(
            CameraId(1),
            vec![
                span_tracklet(1, 10, 50.0, 100.0, f.clone()),
                span_tracklet(1, 11, 51.0, 101.0, f.clone()),
            ],
        );
        stream
            .tracklets
            .insert(CameraId(2), vec![span_tracklet(2, 10, 130.0, 160.0, f.clone())]);
        let shared = run_online(&topology, &zones, &stream, &cfg(), false).unwrap();
        assert_eq!(shared.matches.len(), 2, "both exits match without the constraint");
        let mut exclusive_cfg = cfg();
        exclusive_cfg.one_to_one = true;
        let exclusive = run_online(&topology, &zones, &stream, &exclusive_cfg, false).unwrap();
        assert_eq!(exclusive.matches.len(), 1, "one entry can satisfy one exit");
        assert_eq!(exclusive.matches[0].probe.person, PersonLabel(10));
    }

    #[test]
    fn match_log_round_trips_the_documented_columns() {
        let key = (ZoneKey::new(CameraId(1), 1), ZoneKey::new(CameraId(2), 0));
        let m = OnlineMatch {
            link: key,
            probe: TrackletUid {
                camera: CameraId(1),
                person: PersonLabel(7),
                entry_ms: 50_000,
            },
            exit_time: 100.0,
            matched: TrackletUid {
                camera: CameraId(2),
                person: PersonLabel(7),
                entry_ms: 130_000,
            },
            entry_time: 130.0,
            delta_t: 30.0,
            similarity: 0.93,
            path: MatchPath::Forest,
            refit: true,
        };
        let text = format_match_log(&[m]);
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with('#'));
        let fields: Vec<&str> = lines.next().unwrap().split(' ').collect();
        assert_eq!(fields.len(), 12);
        assert_eq!(fields[0], "1");
        assert_eq!(fields[1], "1");
        assert_eq!(fields[4], "2");
        assert_eq!(fields[8], "30.000");
        assert_eq!(fields[10], "forest");
        assert_eq!(fields[11], "1");
    }
}
