//! Time-windowed series of forest classifiers over one camera (optionally
//! one entry zone).
//!
//! Windows of length `T` advance by a fixed stride until they cover the
//! appearance span. Each window owns the gallery of key appearances that fall
//! inside its slot; its forest is trained lazily on first use, with a seed
//! derived from the window index so results do not depend on evaluation
//! order.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::types::{CameraId, FeatureVector, Gallery, GalleryEntry, PersonLabel, Tracklet, TrackletUid};

use super::{mix_seed, similarity, train_forest, RandomForest};

/// One gallery tracklet together with the indices of its key appearances.
#[derive(Clone, Debug)]
pub struct SeriesInput<'a> {
    pub tracklet: &'a Tracklet,
    pub key: Vec<usize>,
}

impl<'a> SeriesInput<'a> {
    pub fn new(tracklet: &'a Tracklet, key: Vec<usize>) -> Self {
        debug_assert!(key.iter().all(|&i| i < tracklet.observations.len()));
        SeriesInput { tracklet, key }
    }
}

/// Source tracklet contributing appearances to a window.
#[derive(Clone, Debug)]
struct TrackRef {
    uid: TrackletUid,
    label: PersonLabel,
    entry_time: f64,
}

/// One slot of the series.
pub struct SeriesWindow {
    /// Inclusive time slot, clipped to the appearance span.
    pub slot: (f64, f64),
    /// Midpoint of the unclipped slot.
    pub center: f64,
    pub gallery: Gallery,
    tracks: Vec<TrackRef>,
    forest: OnceLock<Option<RandomForest>>,
}

impl SeriesWindow {
    /// The window's trained forest, or `None` when its gallery is empty.
    /// Training happens on the first call.
    pub fn forest(&self, cfg: &PipelineConfig, seed: u64) -> Option<&RandomForest> {
        self.forest
            .get_or_init(|| {
                if self.gallery.entries.is_empty() {
                    None
                } else {
                    Some(train_forest(&self.gallery, cfg, seed).expect("non-empty gallery"))
                }
            })
            .as_ref()
    }
}

/// A series of lazily trained, overlapping window classifiers.
pub struct WindowedForestSeries {
    pub camera: CameraId,
    pub zone: Option<u32>,
    windows: Vec<SeriesWindow>,
    window_len: f64,
    stride: f64,
    seed: u64,
}

/// Result of matching one probe against a series or candidate set.
#[derive(Clone, Debug)]
pub struct MatchResult {
    pub probe_uid: TrackletUid,
    /// Winning gallery label.
    pub label: PersonLabel,
    /// Tracklet of the winning label resolved for time bookkeeping.
    pub matched_uid: TrackletUid,
    pub matched_entry_time: f64,
    /// `matched_entry_time - probe event time`.
    pub delta_t: f64,
    pub similarity: f64,
    /// Posterior of the winning label.
    pub posterior: f64,
    /// Labels ranked by posterior, best first (top 20 kept).
    pub ranking: Vec<(PersonLabel, f64)>,
    pub window_center: f64,
    pub window_index: usize,
}

/// How many ranked alternatives a match keeps for rank-based evaluation.
pub const RANKING_DEPTH: usize = 20;

/// Slices the gallery tracklets into overlapping windows of length
/// `window_len` advancing by `stride`.
///
/// Slots start at the earliest key appearance; the first slot whose raw end
/// reaches the span end is the last one (clipped to the span). Every key
/// appearance therefore lands in at least one window.
pub fn build_series(
    inputs: &[SeriesInput<'_>],
    camera: CameraId,
    zone: Option<u32>,
    window_len: f64,
    stride: f64,
    seed: u64,
) -> Result<WindowedForestSeries> {
    if inputs.is_empty() {
        return Err(Error::invalid("cannot build a window series without tracklets"));
    }
    if !(window_len > 0.0 && stride > 0.0) {
        return Err(Error::invalid("window length and stride must be positive"));
    }
    let mut span = (f64::INFINITY, f64::NEG_INFINITY);
    for input in inputs {
        for &k in &input.key {
            let t = input.tracklet.observations[k].timestamp;
            span.0 = span.0.min(t);
            span.1 = span.1.max(t);
        }
    }
    if !span.0.is_finite() {
        return Err(Error::invalid("series inputs contain no key appearances"));
    }
    let mut windows = Vec::new();
    let mut k = 0u64;
    loop {
        let start = span.0 + k as f64 * stride;
        let raw_end = start + window_len;
        let slot = (start, raw_end.min(span.1).max(start));
        let mut entries = Vec::new();
        let mut tracks: Vec<TrackRef> = Vec::new();
        for input in inputs {
            let mut contributed = false;
            for &ki in &input.key {
                let o = &input.tracklet.observations[ki];
                if o.timestamp >= slot.0 && o.timestamp <= slot.1 {
                    entries.push(GalleryEntry {
                        feature: o.feature.clone(),
                        label: input.tracklet.person,
                        timestamp: o.timestamp,
                    });
                    contributed = true;
                }
            }
            if contributed {
                tracks.push(TrackRef {
                    uid: input.tracklet.uid(),
                    label: input.tracklet.person,
                    entry_time: input.tracklet.entry_time(),
                });
            }
        }
        windows.push(SeriesWindow {
            slot,
            center: start + window_len / 2.0,
            gallery: Gallery {
                camera,
                zone,
                entries,
                time_span: slot,
            },
            tracks,
            forest: OnceLock::new(),
        });
        if raw_end >= span.1 {
            break;
        }
        k += 1;
    }
    Ok(WindowedForestSeries {
        camera,
        zone,
        windows,
        window_len,
        stride,
        seed,
    })
}

impl WindowedForestSeries {
    pub fn windows(&self) -> &[SeriesWindow] {
        &self.windows
    }

    pub fn window_len(&self) -> f64 {
        self.window_len
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    /// Trains every non-empty window now. Sequential when `cfg.threads <= 1`,
    /// otherwise parallel over windows; results are identical either way.
    pub fn train_all(&self, cfg: &PipelineConfig) {
        if cfg.threads <= 1 {
            for (i, w) in self.windows.iter().enumerate() {
                w.forest(cfg, mix_seed(self.seed, i as u64));
            }
        } else {
            self.windows.par_iter().enumerate().for_each(|(i, w)| {
                w.forest(cfg, mix_seed(self.seed, i as u64));
            });
        }
    }

    /// Index of the non-empty window whose center lies closest to `target`.
    pub fn nearest_window(&self, target: f64) -> Option<usize> {
        self.windows
            .iter()
            .enumerate()
            .filter(|(_, w)| !w.gallery.entries.is_empty())
            .min_by(|(_, a), (_, b)| {
                (a.center - target)
                    .abs()
                    .total_cmp(&(b.center - target).abs())
            })
            .map(|(i, _)| i)
    }

    /// Matches `probe` against one window. `event_time` anchors the reported
    /// transition time `delta_t`.
    pub fn query_window(
        &self,
        index: usize,
        probe: &[FeatureVector],
        probe_uid: TrackletUid,
        event_time: f64,
        cfg: &PipelineConfig,
    ) -> Option<MatchResult> {
        let window = &self.windows[index];
        let forest = window.forest(cfg, mix_seed(self.seed, index as u64))?;
        let (label, posterior) = forest.predict_multishot(probe);
        let matched: Vec<&FeatureVector> = window
            .gallery
            .entries
            .iter()
            .filter(|e| e.label == label)
            .map(|e| &e.feature)
            .collect();
        let matched_owned: Vec<FeatureVector> = matched.into_iter().cloned().collect();
        let s = similarity(probe, &matched_owned);
        // Resolve the source tracklet: the one of this label whose entry is
        // closest to the window center.
        let track = window
            .tracks
            .iter()
            .filter(|t| t.label == label)
            .min_by(|a, b| {
                (a.entry_time - window.center)
                    .abs()
                    .total_cmp(&(b.entry_time - window.center).abs())
            })?;
        let mut ranking: Vec<(PersonLabel, f64)> = forest
            .labels()
            .iter()
            .copied()
            .zip(posterior.iter().copied())
            .collect();
        ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranking.truncate(RANKING_DEPTH);
        let best_posterior = ranking
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, p)| *p)
            .unwrap_or(0.0);
        Some(MatchResult {
            probe_uid,
            label,
            matched_uid: track.uid,
            matched_entry_time: track.entry_time,
            delta_t: track.entry_time - event_time,
            similarity: s,
            posterior: best_posterior,
            ranking,
            window_center: window.center,
            window_index: index,
        })
    }

    /// Matches `probe` against every window overlapping `interval` and keeps
    /// the most similar result. Returns `None` when no overlapping window
    /// has a gallery.
    pub fn query(
        &self,
        probe: &[FeatureVector],
        probe_uid: TrackletUid,
        event_time: f64,
        interval: (f64, f64),
        cfg: &PipelineConfig,
    ) -> Option<MatchResult> {
        let mut best: Option<MatchResult> = None;
        for (i, w) in self.windows.iter().enumerate() {
            if w.slot.1 < interval.0 || w.slot.0 > interval.1 || w.gallery.entries.is_empty() {
                continue;
            }
            if let Some(result) = self.query_window(i, probe, probe_uid, event_time, cfg) {
                if best.as_ref().map_or(true, |b| result.similarity > b.similarity) {
                    best = Some(result);
                }
            }
        }
        best
    }
}

/// Free-function form of [`WindowedForestSeries::query`].
pub fn query_series(
    series: &WindowedForestSeries,
    probe: &[FeatureVector],
    probe_uid: TrackletUid,
    event_time: f64,
    interval: (f64, f64),
    cfg: &PipelineConfig,
) -> Option<MatchResult> {
    series.query(probe, probe_uid, event_time, interval, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{BoundingBox, Observation};
    use approx::assert_relative_eq;

    fn unit(raw: &[f64]) -> FeatureVector {
        FeatureVector::unit(raw).unwrap()
    }

    fn tracklet(person: u32, times: &[f64], feature: &[f64]) -> Tracklet {
        Tracklet {
            camera: CameraId(2),
            person: PersonLabel(person),
            observations: times
                .iter()
                .map(|&t| Observation {
                    camera: CameraId(2),
                    timestamp: t,
                    feature: unit(feature),
                    bbox: BoundingBox {
                        x: 0.0,
                        y: 0.0,
                        w: 10.0,
                        h: 20.0,
                    },
                })
                .collect(),
            entry_point: (0.0, 0.0),
            exit_point: (10.0, 0.0),
        }
    }

    fn inputs(tracklets: &[Tracklet]) -> Vec<SeriesInput<'_>> {
        tracklets
            .iter()
            .map(|t| SeriesInput::new(t, (0..t.observations.len()).collect()))
            .collect()
    }

    #[test]
    fn window_slots_follow_the_stride_rule() {
        // Span 100 s, window 60 s, stride 30 s: centers 30, 60, 90 and the
        // last slot is clipped to the span.
        let ts: Vec<f64> = (0..=100).map(|t| t as f64).collect();
        let tl = tracklet(1, &ts, &[1.0, 0.5]);
        let all = [tl];
        let series = build_series(&inputs(&all), CameraId(2), None, 60.0, 30.0, 0).unwrap();
        let centers: Vec<f64> = series.windows().iter().map(|w| w.center).collect();
        assert_eq!(centers, vec![30.0, 60.0, 90.0]);
        assert_relative_eq!(series.windows()[2].slot.0, 60.0);
        assert_relative_eq!(series.windows()[2].slot.1, 100.0);
    }

    #[test]
    fn window_covering_whole_span_is_single() {
        let tl = tracklet(1, &[0.0, 5.0, 10.0], &[1.0, 0.5]);
        let all = [tl];
        let series = build_series(&inputs(&all), CameraId(2), None, 60.0, 30.0, 0).unwrap();
        assert_eq!(series.windows().len(), 1);
        assert_relative_eq!(series.windows()[0].center, 30.0);
    }

    #[test]
    fn window_galleries_contain_exactly_their_slot_appearances() {
        let a = tracklet(1, &[0.0, 10.0, 20.0], &[1.0, 0.0]);
        let b = tracklet(2, &[70.0, 80.0, 100.0], &[0.0, 1.0]);
        let all = [a, b];
        let series = build_series(&inputs(&all), CameraId(2), None, 60.0, 30.0, 7).unwrap();
        for w in series.windows() {
            for e in &w.gallery.entries {
                assert!(e.timestamp >= w.slot.0 && e.timestamp <= w.slot.1);
            }
        }
        // First window sees only person 1, last window only person 2.
        assert!(series.windows()[0]
            .gallery
            .entries
            .iter()
            .all(|e| e.label == PersonLabel(1)));
        assert!(series
            .windows()
            .last()
            .unwrap()
            .gallery
            .entries
            .iter()
            .all(|e| e.label == PersonLabel(2)));
    }

    #[test]
    fn query_finds_planted_identity_with_full_similarity() {
        let cfg = PipelineConfig::default();
        let a = tracklet(1, &[100.0, 110.0, 120.0], &[1.0, 0.0, 0.0]);
        let b = tracklet(2, &[130.0, 140.0, 150.0], &[0.0, 1.0, 0.0]);
        let c = tracklet(3, &[135.0, 145.0], &[0.0, 0.0, 1.0]);
        let all = [a, b, c];
        let series = build_series(&inputs(&all), CameraId(2), None, 60.0, 30.0, 3).unwrap();
        let probe = vec![unit(&[0.0, 1.0, 0.0])];
        let probe_uid = TrackletUid {
            camera: CameraId(9),
            person: PersonLabel(5),
            entry_ms: 0,
        };
        let m = series
            .query(&probe, probe_uid, 100.0, (100.0, 200.0), &cfg)
            .unwrap();
        assert_eq!(m.label, PersonLabel(2));
        assert_relative_eq!(m.similarity, 1.0);
        // Matched tracklet enters at 130, probe event at 100.
        assert_relative_eq!(m.delta_t, 30.0);
        assert_eq!(m.matched_uid.person, PersonLabel(2));
    }

    #[test]
    fn query_outside_all_slots_returns_none() {
        let cfg = PipelineConfig::default();
        let tl = tracklet(1, &[0.0, 10.0], &[1.0, 0.5]);
        let all = [tl];
        let series = build_series(&inputs(&all), CameraId(2), None, 20.0, 10.0, 0).unwrap();
        let probe = vec![unit(&[1.0, 0.5])];
        let uid = TrackletUid {
            camera: CameraId(9),
            person: PersonLabel(5),
            entry_ms: 0,
        };
        assert!(series.query(&probe, uid, 0.0, (500.0, 600.0), &cfg).is_none());
    }

    #[test]
    fn nearest_window_picks_closest_center() {
        let ts: Vec<f64> = (0..=100).map(|t| t as f64).collect();
        let tl = tracklet(1, &ts, &[1.0, 0.5]);
        let all = [tl];
        let series = build_series(&inputs(&all), CameraId(2), None, 60.0, 30.0, 0).unwrap();
        assert_eq!(series.nearest_window(25.0), Some(0));
        assert_eq!(series.nearest_window(80.0), Some(2));
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(build_series(&[], CameraId(1), None, 60.0, 30.0, 0).is_err());
    }
}
