//! Core domain types: features, tracklets, galleries, transition
//! distributions, and the camera/zone topology graphs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Identifier of a camera in the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CameraId(pub u32);

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Camera-local person label attached to a tracklet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PersonLabel(pub u32);

impl fmt::Display for PersonLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A single entry/exit zone of one camera, addressed by camera and zone index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ZoneKey {
    pub camera: CameraId,
    pub zone: u32,
}

impl ZoneKey {
    pub fn new(camera: CameraId, zone: u32) -> Self {
        ZoneKey { camera, zone }
    }
}

impl fmt::Display for ZoneKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.camera, self.zone)
    }
}

impl std::str::FromStr for ZoneKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |s: &str| -> Option<ZoneKey> {
            let (cam, zone) = s.split_once(':')?;
            Some(ZoneKey::new(CameraId(cam.parse().ok()?), zone.parse().ok()?))
        };
        parse(s).ok_or_else(|| Error::invalid(format!("malformed zone key {s:?}")))
    }
}

/// Directed zone-to-zone link: people leave through `.0` and appear at `.1`.
pub type LinkKey = (ZoneKey, ZoneKey);

/// Appearance descriptor, normally stored L2-normalized.
///
/// Construction fails on empty, zero-norm, or non-finite input. Clones share
/// the underlying buffer. [`FeatureVector::raw`] skips normalization for
/// callers that must round-trip stored values untouched.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    values: Arc<[f64]>,
}

impl FeatureVector {
    /// Normalizes `raw` to unit L2 length.
    pub fn unit(raw: &[f64]) -> Result<Self> {
        let v = Self::raw(raw)?;
        let norm = v.norm();
        let values: Arc<[f64]> = v.values.iter().map(|x| x / norm).collect();
        Ok(FeatureVector { values })
    }

    /// Stores the values as given, validating them without rescaling.
    pub fn raw(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::invalid("feature vector must have at least one dimension"));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature vector contains non-finite values"));
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 0.0 || !norm.is_finite() {
            return Err(Error::invalid("feature vector has zero norm"));
        }
        Ok(FeatureVector {
            values: raw.iter().copied().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Euclidean distance to another vector of the same dimension.
    pub fn distance(&self, other: &FeatureVector) -> f64 {
        assert_eq!(self.dim(), other.dim(), "feature dimensions must agree");
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Normalizes a raw descriptor to unit L2 length.
pub fn normalize_feature(raw: &[f64]) -> Result<FeatureVector> {
    FeatureVector::unit(raw)
}

/// Axis-aligned detection box in pixel coordinates (top-left origin).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()
    }
}

/// One time-stamped appearance of a person in one camera.
#[derive(Clone, Debug)]
pub struct Observation {
    pub camera: CameraId,
    pub timestamp: f64,
    pub feature: FeatureVector,
    pub bbox: BoundingBox,
}

/// Stable identifier for a tracklet, derived from its camera, label, and
/// entry time (millisecond precision).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrackletUid {
    pub camera: CameraId,
    pub person: PersonLabel,
    pub entry_ms: i64,
}

impl fmt::Display for TrackletUid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.camera, self.person, self.entry_ms)
    }
}

/// A contiguous appearance of one person in one camera: time-ordered
/// observations plus the pixel locations where the track began and ended.
#[derive(Clone, Debug)]
pub struct Tracklet {
    pub camera: CameraId,
    pub person: PersonLabel,
    pub observations: Vec<Observation>,
    pub entry_point: (f64, f64),
    pub exit_point: (f64, f64),
}

impl Tracklet {
    /// Timestamp of the first observation.
    pub fn entry_time(&self) -> f64 {
        self.observations.first().map(|o| o.timestamp).unwrap_or(f64::NAN)
    }

    /// Timestamp of the last observation.
    pub fn exit_time(&self) -> f64 {
        self.observations.last().map(|o| o.timestamp).unwrap_or(f64::NAN)
    }

    pub fn appearance_count(&self) -> usize {
        self.observations.len()
    }

    pub fn uid(&self) -> TrackletUid {
        TrackletUid {
            camera: self.camera,
            person: self.person,
            entry_ms: (self.entry_time() * 1000.0).round() as i64,
        }
    }
}

/// Checks the structural invariants of a tracklet: at least one observation,
/// non-decreasing timestamps, a single camera, consistent feature dimensions,
/// and finite geometry.
pub fn validate_tracklet(t: &Tracklet) -> Result<()> {
    if t.observations.is_empty() {
        return Err(Error::invalid(format!(
            "tracklet {}/{} has no observations",
            t.camera, t.person
        )));
    }
    let dim = t.observations[0].feature.dim();
    let mut prev = f64::NEG_INFINITY;
    for (i, o) in t.observations.iter().enumerate() {
        if o.camera != t.camera {
            return Err(Error::invalid(format!(
                "tracklet {}/{} observation {} belongs to camera {}",
                t.camera, t.person, i, o.camera
            )));
        }
        if !o.timestamp.is_finite() || o.timestamp < prev {
            return Err(Error::invalid(format!(
                "tracklet {}/{} timestamps are not sorted at index {}",
                t.camera, t.person, i
            )));
        }
        if o.feature.dim() != dim {
            return Err(Error::invalid(format!(
                "tracklet {}/{} mixes feature dimensions ({} vs {})",
                t.camera,
                t.person,
                dim,
                o.feature.dim()
            )));
        }
        if !o.bbox.is_finite() {
            return Err(Error::invalid(format!(
                "tracklet {}/{} observation {} has a non-finite box",
                t.camera, t.person, i
            )));
        }
        prev = o.timestamp;
    }
    for &(x, y) in [&t.entry_point, &t.exit_point] {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::invalid(format!(
                "tracklet {}/{} has non-finite entry/exit points",
                t.camera, t.person
            )));
        }
    }
    Ok(())
}

/// One gallery row: an appearance with its label and timestamp.
#[derive(Clone, Debug)]
pub struct GalleryEntry {
    pub feature: FeatureVector,
    pub label: PersonLabel,
    pub timestamp: f64,
}

/// Labelled appearance set of one camera (optionally restricted to one zone)
/// over a time span; the training set for one classifier.
#[derive(Clone, Debug)]
pub struct Gallery {
    pub camera: CameraId,
    pub zone: Option<u32>,
    pub entries: Vec<GalleryEntry>,
    pub time_span: (f64, f64),
}

impl Gallery {
    /// Number of distinct labels.
    pub fn person_count(&self) -> usize {
        self.labels().len()
    }

    /// Distinct labels in ascending order.
    pub fn labels(&self) -> BTreeSet<PersonLabel> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.time_span;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::invalid("gallery time span is invalid"));
        }
        for e in &self.entries {
            if e.timestamp < lo || e.timestamp > hi {
                return Err(Error::invalid(format!(
                    "gallery entry at {} outside span [{}, {}]",
                    e.timestamp, lo, hi
                )));
            }
        }
        Ok(())
    }
}

/// Fitted transition-time model with its residual fit error.
///
/// `fit_error` is `1 - R^2` of the least-squares fit, clamped to `[0, 1]`;
/// `0` means the histogram is explained exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianModel {
    pub mu: f64,
    pub sigma: f64,
    pub fit_error: f64,
}

impl GaussianModel {
    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(Error::invalid("Gaussian model requires finite mu and positive sigma"));
        }
        if !(0.0..=1.0).contains(&self.fit_error) {
            return Err(Error::invalid("fit error must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Density of N(mu, sigma^2) at `x`.
    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        (-0.5 * z * z).exp() / (self.sigma * (2.0 * std::f64::consts::PI).sqrt())
    }
}

/// Normalized histogram of observed transition times for one link, together
/// with the fitted model and connectivity confidence.
///
/// Bin `i` covers `[lo + i*w, lo + (i+1)*w)`. Masses always sum to 1; every
/// mutation path renormalizes.
#[derive(Clone, Debug)]
pub struct TransitionDistribution {
    bins: Vec<f64>,
    bin_width: f64,
    range: (f64, f64),
    sample_count: usize,
    pub model: Option<GaussianModel>,
    pub confidence: f64,
}

impl TransitionDistribution {
    /// Builds a normalized histogram of `samples` with the given bin width.
    /// The range is grown in whole bins until it covers every sample.
    pub fn from_samples(samples: &[f64], bin_width: f64, range: (f64, f64)) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("cannot estimate a distribution from zero samples"));
        }
        if !(bin_width.is_finite() && bin_width > 0.0) {
            return Err(Error::invalid("bin width must be positive"));
        }
        let (lo, hi) = range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid("histogram range must be a finite non-empty interval"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("transition samples must be finite"));
        }
        let mut d = TransitionDistribution {
            bins: vec![0.0; ((hi - lo) / bin_width).ceil().max(1.0) as usize],
            bin_width,
            range: (lo, lo),
            sample_count: 0,
            model: None,
            confidence: 0.0,
        };
        d.range = (lo, lo + d.bins.len() as f64 * bin_width);
        for &s in samples {
            d.grow_to_cover(s);
            let idx = d.bin_index(s);
            d.bins[idx] += 1.0;
        }
        let total = samples.len() as f64;
        for b in &mut d.bins {
            *b /= total;
        }
        d.sample_count = samples.len();
        d.renormalize();
        Ok(d)
    }

    /// Folds one new sample into the histogram, keeping it normalized.
    pub fn add_sample(&mut self, dt: f64) {
        assert!(dt.is_finite(), "transition sample must be finite");
        self.grow_to_cover(dt);
        let n = self.sample_count as f64;
        let idx = self.bin_index(dt);
        for b in &mut self.bins {
            *b *= n / (n + 1.0);
        }
        self.bins[idx] += 1.0 / (n + 1.0);
        self.sample_count += 1;
        self.renormalize();
    }

    fn grow_to_cover(&mut self, x: f64) {
        let w = self.bin_width;
        while x < self.range.0 {
            let extra = ((self.range.0 - x) / w).ceil() as usize;
            let mut nb = vec![0.0; extra];
            nb.extend_from_slice(&self.bins);
            self.bins = nb;
            self.range.0 -= extra as f64 * w;
        }
        while x >= self.range.1 {
            let extra = ((x - self.range.1) / w).floor() as usize + 1;
            self.bins.extend(std::iter::repeat(0.0).take(extra));
            self.range.1 += extra as f64 * w;
        }
    }

    fn bin_index(&self, x: f64) -> usize {
        let idx = ((x - self.range.0) / self.bin_width).floor() as isize;
        idx.clamp(0, self.bins.len() as isize - 1) as usize
    }

    fn renormalize(&mut self) {
        let sum: f64 = self.bins.iter().sum();
        if sum > 0.0 {
            for b in &mut self.bins {
                *b /= sum;
            }
        }
    }

    /// Probability mass per bin; sums to 1.
    pub fn masses(&self) -> &[f64] {
        &self.bins
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.range.0 + (i as f64 + 0.5) * self.bin_width
    }

    pub fn non_empty_bins(&self) -> usize {
        self.bins.iter().filter(|&&b| b > 0.0).count()
    }

    /// Histogram mean and standard deviation (mass-weighted moments over bin
    /// centers).
    pub fn mean_std(&self) -> (f64, f64) {
        let mean: f64 = self
            .bins
            .iter()
            .enumerate()
            .map(|(i, &m)| m * self.bin_center(i))
            .sum();
        let var: f64 = self
            .bins
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let d = self.bin_center(i) - mean;
                m * d * d
            })
            .sum();
        (mean, var.max(0.0).sqrt())
    }

    /// Restores a distribution from serialized parts (used by file IO).
    pub fn from_parts(
        masses: Vec<f64>,
        bin_width: f64,
        range_lo: f64,
        sample_count: usize,
    ) -> Result<Self> {
        if masses.is_empty() || masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::invalid("histogram masses must be non-negative and finite"));
        }
        if !(bin_width.is_finite() && bin_width > 0.0) {
            return Err(Error::invalid("bin width must be positive"));
        }
        let hi = range_lo + masses.len() as f64 * bin_width;
        let mut d = TransitionDistribution {
            bins: masses,
            bin_width,
            range: (range_lo, hi),
            sample_count,
            model: None,
            confidence: 0.0,
        };
        d.renormalize();
        Ok(d)
    }

    /// Projects both histograms onto a shared grid (same bin width required).
    /// Returns the aligned mass vectors.
    pub fn aligned_masses(&self, other: &TransitionDistribution) -> Option<(Vec<f64>, Vec<f64>)> {
        if (self.bin_width - other.bin_width).abs() > 1e-12 * self.bin_width.max(other.bin_width) {
            return None;
        }
        let w = self.bin_width;
        // Grids must share phase: bin edges of one fall on edges of the other.
        let shift = (other.range.0 - self.range.0) / w;
        if (shift - shift.round()).abs() > 1e-6 {
            return None;
        }
        let lo = self.range.0.min(other.range.0);
        let hi = self.range.1.max(other.range.1);
        let len = ((hi - lo) / w).round() as usize;
        let mut a = vec![0.0; len];
        let mut b = vec![0.0; len];
        let off_a = ((self.range.0 - lo) / w).round() as usize;
        let off_b = ((other.range.0 - lo) / w).round() as usize;
        a[off_a..off_a + self.bins.len()].copy_from_slice(&self.bins);
        b[off_b..off_b + other.bins.len()].copy_from_slice(&other.bins);
        Some((a, b))
    }

    /// Total variation style L1 distance on the shared grid.
    pub fn l1_distance(&self, other: &TransitionDistribution) -> Option<f64> {
        let (a, b) = self.aligned_masses(other)?;
        Some(a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum())
    }

    /// Bhattacharyya distance `-ln sum(sqrt(p_i q_i))` over the aligned bin
    /// grids; infinite for disjoint histograms, `None` for incompatible
    /// grids.
    pub fn bhattacharyya(&self, other: &TransitionDistribution) -> Option<f64> {
        let (a, b) = self.aligned_masses(other)?;
        let coefficient: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x * y).sqrt()).sum();
        if coefficient <= 0.0 {
            return Some(f64::INFINITY);
        }
        Some((-coefficient.ln()).max(0.0))
    }
}

/// Camera-level connectivity graph built in the first initialization stage.
/// Edges are keyed by unordered camera pair (smaller id first).
#[derive(Clone, Debug, Default)]
pub struct CameraTopology {
    pub cameras: Vec<CameraId>,
    pub edges: BTreeMap<(CameraId, CameraId), TransitionDistribution>,
    pub valid: BTreeSet<(CameraId, CameraId)>,
}

impl CameraTopology {
    pub fn pair_key(a: CameraId, b: CameraId) -> (CameraId, CameraId) {
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    pub fn insert_edge(
        &mut self,
        a: CameraId,
        b: CameraId,
        dist: TransitionDistribution,
    ) -> Result<()> {
        if a == b {
            return Err(Error::invalid("camera topology does not allow self-edges"));
        }
        self.edges.insert(Self::pair_key(a, b), dist);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (a, b) in self.edges.keys() {
            if a == b {
                return Err(Error::invalid("camera topology contains a self-edge"));
            }
        }
        if !self.valid.iter().all(|k| self.edges.contains_key(k)) {
            return Err(Error::invalid("valid camera pairs must be a subset of edges"));
        }
        Ok(())
    }
}

/// Per-link refinement state: current distribution, time window, bounds, and
/// convergence bookkeeping.
#[derive(Clone, Debug)]
pub struct LinkState {
    pub distribution: TransitionDistribution,
    /// Current search window length T in seconds.
    pub window: f64,
    /// `(T_L, T_U)` transition-time bounds once a model has been fitted.
    pub bounds: Option<(f64, f64)>,
    pub iteration: u32,
    pub converged: bool,
    /// Consecutive refinement passes that produced no reliable matches.
    pub stagnant: u32,
}

impl LinkState {
    pub fn new(distribution: TransitionDistribution, window: f64) -> Self {
        LinkState {
            distribution,
            window,
            bounds: None,
            iteration: 0,
            converged: false,
            stagnant: 0,
        }
    }
}

/// Zone-level topology: directed links between exit zones and entry zones of
/// different cameras.
#[derive(Clone, Debug, Default)]
pub struct ZoneTopology {
    pub edges: BTreeMap<LinkKey, LinkState>,
    pub valid: BTreeSet<LinkKey>,
}

impl ZoneTopology {
    pub fn insert_edge(&mut self, exit: ZoneKey, entry: ZoneKey, state: LinkState) -> Result<()> {
        if exit.camera == entry.camera {
            return Err(Error::invalid(
                "zone links must join zones of different cameras",
            ));
        }
        self.edges.insert((exit, entry), state);
        Ok(())
    }

    pub fn vertices(&self) -> BTreeSet<ZoneKey> {
        self.edges
            .keys()
            .flat_map(|(a, b)| [*a, *b])
            .collect()
    }

    pub fn valid_links(&self) -> impl Iterator<Item = (&LinkKey, &LinkState)> {
        self.edges.iter().filter(|(k, _)| self.valid.contains(*k))
    }

    pub fn validate(&self) -> Result<()> {
        for (exit, entry) in self.edges.keys() {
            if exit.camera == entry.camera {
                return Err(Error::invalid("zone topology contains an intra-camera link"));
            }
        }
        if !self.valid.iter().all(|k| self.edges.contains_key(k)) {
            return Err(Error::invalid("valid links must be a subset of edges"));
        }
        Ok(())
    }
}
