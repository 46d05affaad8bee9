//! Evaluation: identity-retrieval metrics, topology-versus-truth comparison,
//! and the matching-cost benchmark.
//!
//! Everything here is a pure computation over finished artifacts — stage
//! logs, a learned topology, simulator ground truth — so the functions can
//! run after the fact on any combination of them. Links are compared by
//! mapping each learned zone to the nearest true zone of the same camera,
//! which makes the metrics independent of the arbitrary ids the zone
//! learner hands out.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::forest::{mix_seed, train_forest, MatchResult, RANKING_DEPTH};
use crate::sim::GroundTruth;
use crate::topology::{InitOutcome, StageLog};
use crate::types::{
    CameraId, FeatureVector, Gallery, GalleryEntry, GaussianModel, PersonLabel,
    TrackletUid, TransitionDistribution, ZoneKey, ZoneTopology,
};
use crate::zones::Zone;

/// Fraction of true pairs that appear verbatim among the predicted pairs.
///
/// A pair is `(exit tracklet, entry tracklet)`; a true pair with no
/// prediction simply counts against the denominator. Duplicated predictions
/// of the same pair count once.
pub fn rank1(
    predicted: &[(TrackletUid, TrackletUid)],
    truth: &[(TrackletUid, TrackletUid)],
) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::invalid("rank-1 accuracy needs at least one true pair"));
    }
    let found: BTreeSet<&(TrackletUid, TrackletUid)> = predicted.iter().collect();
    let tp = truth.iter().filter(|p| found.contains(p)).count();
    Ok(tp as f64 / truth.len() as f64)
}

/// One probe's ranked identity candidates toward one entry camera,
/// best first.
#[derive(Clone, Debug)]
pub struct RankedRecord {
    pub probe: TrackletUid,
    pub entry_camera: CameraId,
    pub ranking: Vec<PersonLabel>,
}

impl RankedRecord {
    pub fn from_match(m: &MatchResult) -> Self {
        RankedRecord {
            probe: m.probe_uid,
            entry_camera: m.matched_uid.camera,
            ranking: m.ranking.iter().map(|(label, _)| *label).collect(),
        }
    }
}

/// Cumulative match characteristic over `max_rank` ranks: `cmc[n-1]` is the
/// fraction of true pairs whose continuing identity appears within the first
/// `n` ranked candidates of some record probing the exiting tracklet toward
/// the right camera.
///
/// The curve is non-decreasing by construction and `cmc[0]` is the top-1
/// identity accuracy over the same denominator.
pub fn cmc(
    records: &[RankedRecord],
    truth: &[(TrackletUid, TrackletUid)],
    max_rank: usize,
) -> Result<Vec<f64>> {
    if truth.is_empty() {
        return Err(Error::invalid("CMC needs at least one true pair"));
    }
    if max_rank == 0 {
        return Err(Error::invalid("CMC needs at least one rank"));
    }
    let mut by_probe: BTreeMap<TrackletUid, Vec<&RankedRecord>> = BTreeMap::new();
    for r in records {
        by_probe.entry(r.probe).or_default().push(r);
    }
    let mut first_hits = vec![0usize; max_rank];
    for (from, to) in truth {
        let mut best: Option<usize> = None;
        for r in by_probe.get(from).into_iter().flatten() {
            if r.entry_camera != to.camera {
                continue;
            }
            if let Some(pos) = r.ranking.iter().position(|l| *l == to.person) {
                best = Some(best.map_or(pos, |b| b.min(pos)));
            }
        }
        if let Some(pos) = best {
            if pos < max_rank {
                first_hits[pos] += 1;
            }
        }
    }
    let denom = truth.len() as f64;
    let mut cumulative = 0usize;
    Ok(first_hits
        .iter()
        .map(|hits| {
            cumulative += hits;
            cumulative as f64 / denom
        })
        .collect())
}

/// True pairs whose tracklets both start inside the initialization period.
pub fn initialization_pairs(truth: &GroundTruth) -> Vec<(TrackletUid, TrackletUid)> {
    let cutoff_ms = (truth.online_start * 1000.0).round() as i64;
    truth
        .pairs
        .iter()
        .filter(|p| p.from.entry_ms < cutoff_ms && p.to.entry_ms < cutoff_ms)
        .map(|p| (p.from, p.to))
        .collect()
}

/// Top-1 identity accuracy of one pipeline stage.
#[derive(Clone, Debug, Serialize)]
pub struct StageAccuracy {
    pub stage: String,
    pub rank1: f64,
}

/// Top-1 identity accuracy of every recorded stage against the same
/// denominator (all initialization-period true pairs), so the numbers are
/// directly comparable across stages.
pub fn stage_rank1(stages: &[StageLog], truth: &GroundTruth) -> Result<Vec<StageAccuracy>> {
    let pairs = initialization_pairs(truth);
    stages
        .iter()
        .map(|stage| {
            let records: Vec<RankedRecord> =
                stage.matches.iter().map(RankedRecord::from_match).collect();
            Ok(StageAccuracy {
                stage: stage.stage.clone(),
                rank1: cmc(&records, &pairs, 1)?[0],
            })
        })
        .collect()
}

/// Closed-form Bhattacharyya distance between two Gaussians.
pub fn gaussian_bhattacharyya(a: &GaussianModel, b: &GaussianModel) -> f64 {
    let (va, vb) = (a.sigma * a.sigma, b.sigma * b.sigma);
    let dm = a.mu - b.mu;
    dm * dm / (4.0 * (va + vb)) + 0.5 * ((va + vb) / (2.0 * a.sigma * b.sigma)).ln()
}

/// Bhattacharyya distance between two histograms on a shared bin grid.
/// Disjoint supports give `+inf`; incompatible grids are a caller error.
pub fn bhattacharyya(p: &TransitionDistribution, q: &TransitionDistribution) -> Result<f64> {
    p.bhattacharyya(q)
        .ok_or_else(|| Error::invalid("histograms live on incompatible bin grids"))
}

/// Discretizes `N(mu, sigma^2)` onto a histogram by exact per-bin mass
/// (CDF differences), for cross-checking the closed form numerically.
pub fn gaussian_histogram(
    mu: f64,
    sigma: f64,
    bin_width: f64,
    range: (f64, f64),
) -> Result<TransitionDistribution> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid("gaussian histogram needs a positive sigma"));
    }
    if !(range.1 > range.0) {
        return Err(Error::invalid("gaussian histogram needs a non-empty range"));
    }
    let normal = Normal::new(mu, sigma)
        .map_err(|_| Error::invalid("gaussian histogram needs finite parameters"))?;
    let bins = ((range.1 - range.0) / bin_width).round().max(1.0) as usize;
    let masses: Vec<f64> = (0..bins)
        .map(|i| {
            let lo = range.0 + i as f64 * bin_width;
            normal.cdf(lo + bin_width) - normal.cdf(lo)
        })
        .collect();
    TransitionDistribution::from_parts(masses, bin_width, range.0, 0)
}

/// One learned link lined up with the true link it recovered.
#[derive(Clone, Debug, Serialize)]
pub struct LinkRow {
    /// Learned exit/entry zone keys as `camera:zone`.
    pub exit: String,
    pub entry: String,
    pub mu: f64,
    pub mu_gt: f64,
    pub sigma: f64,
    pub sigma_gt: f64,
    /// Closed-form Bhattacharyya distance between the fitted and true models.
    pub d_b: f64,
}

impl LinkRow {
    pub fn abs_mu_error(&self) -> f64 {
        (self.mu - self.mu_gt).abs()
    }
}

/// Link-detection counts: how many true links were recovered, how many were
/// missed, and how many claimed links match nothing real.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct LinkDetection {
    pub found: usize,
    pub missing: usize,
    pub spurious: usize,
    pub true_total: usize,
}

impl LinkDetection {
    pub fn precision(&self) -> f64 {
        let claimed = self.found + self.spurious;
        if claimed == 0 {
            0.0
        } else {
            self.found as f64 / claimed as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.true_total == 0 {
            0.0
        } else {
            self.found as f64 / self.true_total as f64
        }
    }
}

/// A learned topology lined up against ground truth at one point in time.
#[derive(Clone, Debug)]
pub struct TopologyComparison {
    /// One row per valid learned link that recovered a true link.
    pub rows: Vec<LinkRow>,
    pub detection: LinkDetection,
}

impl TopologyComparison {
    /// Mean `|mu - mu_gt|` over recovered links. Missing and spurious links
    /// are reported in `detection`, never averaged in.
    pub fn transition_time_error(&self) -> Result<f64> {
        if self.rows.is_empty() {
            return Err(Error::invalid("no common links to average over"));
        }
        Ok(self.rows.iter().map(LinkRow::abs_mu_error).sum::<f64>() / self.rows.len() as f64)
    }

    /// Mean closed-form Bhattacharyya distance over recovered links.
    pub fn topology_distance(&self) -> Result<f64> {
        if self.rows.is_empty() {
            return Err(Error::invalid("no common links to average over"));
        }
        Ok(self.rows.iter().map(|r| r.d_b).sum::<f64>() / self.rows.len() as f64)
    }
}

fn center_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Maps a learned zone key to the same camera's nearest true zone.
fn map_to_true_zone(
    key: &ZoneKey,
    zones: &BTreeMap<CameraId, Vec<Zone>>,
    truth: &GroundTruth,
) -> Option<ZoneKey> {
    let learned = zones
        .get(&key.camera)?
        .iter()
        .find(|z| z.zone_id == key.zone)?;
    truth
        .zones_of(key.camera)
        .into_iter()
        .min_by(|a, b| {
            center_distance(a.center, learned.center)
                .total_cmp(&center_distance(b.center, learned.center))
        })
        .map(|z| ZoneKey::new(z.camera, z.zone_id))
}

/// Lines the valid links of `topology` up against the true links alive at
/// time `at`. Learned zones are matched to true zones by nearest center
/// within their camera.
pub fn compare_topology(
    topology: &ZoneTopology,
    zones: &BTreeMap<CameraId, Vec<Zone>>,
    truth: &GroundTruth,
    at: f64,
) -> Result<TopologyComparison> {
    let live = truth.links_at(at);
    let mut rows = Vec::new();
    let mut found: BTreeSet<(ZoneKey, ZoneKey)> = BTreeSet::new();
    let mut spurious = 0usize;
    for (key, state) in topology.valid_links() {
        let mapped = (
            map_to_true_zone(&key.0, zones, truth),
            map_to_true_zone(&key.1, zones, truth),
        );
        let true_link = match mapped {
            (Some(exit), Some(entry)) => live
                .iter()
                .find(|l| l.from == exit && l.to == entry)
                .copied(),
            _ => None,
        };
        let Some(true_link) = true_link else {
            spurious += 1;
            continue;
        };
        found.insert((true_link.from, true_link.to));
        // Validity implies a fitted model; a valid link without one would be
        // a pipeline bug, so it is simply skipped rather than scored.
        if let Some(model) = state.distribution.model.as_ref() {
            let truth_model = GaussianModel {
                mu: true_link.mu,
                sigma: true_link.sigma,
                fit_error: 0.0,
            };
            rows.push(LinkRow {
                exit: key.0.to_string(),
                entry: key.1.to_string(),
                mu: model.mu,
                mu_gt: true_link.mu,
                sigma: model.sigma,
                sigma_gt: true_link.sigma,
                d_b: gaussian_bhattacharyya(model, &truth_model),
            });
        }
    }
    let detection = LinkDetection {
        found: found.len(),
        missing: live.len() - found.len(),
        spurious,
        true_total: live.len(),
    };
    Ok(TopologyComparison { rows, detection })
}

/// Median wall time in milliseconds of both matching paths at one gallery
/// size.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BenchmarkRow {
    pub n: usize,
    pub forest_ms: f64,
    pub exhaustive_ms: f64,
}

/// How both paths scaled between two consecutive sizes where `n` doubled.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DoublingRatio {
    pub from_n: usize,
    pub to_n: usize,
    pub forest: f64,
    pub exhaustive: f64,
}

/// Timing table of the matching benchmark.
#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkTable {
    pub k: usize,
    pub repetitions: usize,
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkTable {
    /// Time ratios between consecutive rows whose sizes doubled.
    pub fn doubling_ratios(&self) -> Vec<DoublingRatio> {
        self.rows
            .windows(2)
            .filter(|w| w[1].n == 2 * w[0].n)
            .map(|w| DoublingRatio {
                from_n: w[0].n,
                to_n: w[1].n,
                forest: w[1].forest_ms / w[0].forest_ms,
                exhaustive: w[1].exhaustive_ms / w[0].exhaustive_ms,
            })
            .collect()
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn noisy_unit(mean: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> FeatureVector {
    let raw: Vec<f64> = mean
        .iter()
        .map(|m| m + noise * (rng.gen::<f64>() - 0.5))
        .collect();
    FeatureVector::unit(&raw).expect("non-zero benchmark feature")
}

/// Times identity matching of `n` probes against an `n`-identity gallery,
/// `k` appearances each, for every size in `sizes`: once through a trained
/// forest and once by exhaustive min-pairwise-distance search. Reports the
/// median of `repetitions` timed runs after one untimed warmup.
pub fn benchmark_matching(
    sizes: &[usize],
    k: usize,
    repetitions: usize,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<BenchmarkTable> {
    if sizes.is_empty() {
        return Err(Error::invalid("benchmark needs at least one gallery size"));
    }
    if sizes.windows(2).any(|w| w[1] <= w[0]) || sizes[0] == 0 {
        return Err(Error::invalid("benchmark sizes must be positive and ascending"));
    }
    if k == 0 || repetitions == 0 {
        return Err(Error::invalid("benchmark needs k >= 1 and at least one repetition"));
    }
    const DIM: usize = 16;
    let mut rows = Vec::new();
    for (si, &n) in sizes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, si as u64));
        let mut id_features: Vec<Vec<FeatureVector>> = Vec::with_capacity(n);
        let mut probes: Vec<Vec<FeatureVector>> = Vec::with_capacity(n);
        let mut entries = Vec::with_capacity(n * k);
        for id in 0..n {
            let mean: Vec<f64> = (0..DIM).map(|_| rng.gen::<f64>() - 0.5).collect();
            let gallery_side: Vec<FeatureVector> =
                (0..k).map(|_| noisy_unit(&mean, 0.05, &mut rng)).collect();
            for f in &gallery_side {
                entries.push(GalleryEntry {
                    feature: f.clone(),
                    label: PersonLabel(id as u32),
                    timestamp: 0.0,
                });
            }
            probes.push((0..k).map(|_| noisy_unit(&mean, 0.05, &mut rng)).collect());
            id_features.push(gallery_side);
        }
        let gallery = Gallery {
            camera: CameraId(1),
            zone: None,
            entries,
            time_span: (0.0, 1.0),
        };
        let forest_run = |rep: u64| -> Result<f64> {
            let forest = train_forest(&gallery, cfg, mix_seed(seed ^ 0xBE7C, rep))?;
            let mut sink = 0u32;
            for probe in &probes {
                sink ^= std::hint::black_box(forest.predict_multishot(probe)).0 .0;
            }
            std::hint::black_box(sink);
            Ok(0.0)
        };
        let exhaustive_run = || {
            let mut sink = 0usize;
            for probe in &probes {
                let mut best = (f64::INFINITY, 0usize);
                for (id, features) in id_features.iter().enumerate() {
                    let mut min_d = f64::INFINITY;
                    for p in probe {
                        for g in features {
                            min_d = min_d.min(p.distance(g));
                        }
                    }
                    if min_d < best.0 {
                        best = (min_d, id);
                    }
                }
                sink ^= std::hint::black_box(best.1);
            }
            std::hint::black_box(sink);
        };
        forest_run(u64::MAX)?;
        exhaustive_run();
        let mut forest_times = Vec::with_capacity(repetitions);
        let mut exhaustive_times = Vec::with_capacity(repetitions);
        for rep in 0..repetitions {
            let start = Instant::now();
            forest_run(rep as u64)?;
            forest_times.push(start.elapsed().as_secs_f64() * 1e3);
            let start = Instant::now();
            exhaustive_run();
            exhaustive_times.push(start.elapsed().as_secs_f64() * 1e3);
        }
        rows.push(BenchmarkRow {
            n,
            forest_ms: median(forest_times),
            exhaustive_ms: median(exhaustive_times),
        });
    }
    Ok(BenchmarkTable {
        k,
        repetitions,
        rows,
    })
}

/// Everything one evaluation pass produces, ready for text, CSV, or JSON
/// emission.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    /// Top-1 identity accuracy over initialization-period true pairs; always
    /// equals `cmc[0]`.
    pub rank1: f64,
    pub cmc: Vec<f64>,
    /// Mean `|mu - mu_gt|` over recovered links, absent when none were.
    pub transition_time_error: Option<f64>,
    /// Mean model-versus-truth Bhattacharyya distance over recovered links.
    pub topology_distance: Option<f64>,
    pub links: Vec<LinkRow>,
    pub detection: LinkDetection,
    pub stages: Vec<StageAccuracy>,
    pub timings: Option<BenchmarkTable>,
}

impl EvalReport {
    /// Scores a finished initialization against ground truth as of time
    /// `at` (pass the dataset end for post-run truth).
    pub fn from_initialization(
        outcome: &InitOutcome,
        truth: &GroundTruth,
        at: f64,
    ) -> Result<EvalReport> {
        let pairs = initialization_pairs(truth);
        let records: Vec<RankedRecord> = outcome
            .stages
            .last()
            .map(|s| s.matches.iter().map(RankedRecord::from_match).collect())
            .unwrap_or_default();
        let curve = cmc(&records, &pairs, RANKING_DEPTH)?;
        let comparison = compare_topology(&outcome.topology, &outcome.zones, truth, at)?;
        Ok(EvalReport {
            rank1: curve[0],
            cmc: curve,
            transition_time_error: comparison.transition_time_error().ok(),
            topology_distance: comparison.topology_distance().ok(),
            links: comparison.rows,
            detection: comparison.detection,
            stages: stage_rank1(&outcome.stages, truth)?,
            timings: None,
        })
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut text = String::new();
        let _ = writeln!(text, "rank-1 accuracy: {:.4}", self.rank1);
        let shown = self.cmc.len().min(5);
        let ranks: Vec<String> = self.cmc[..shown].iter().map(|v| format!("{v:.4}")).collect();
        let _ = writeln!(text, "cmc[1..={}]: {}", shown, ranks.join(" "));
        match self.transition_time_error {
            Some(e) => {
                let _ = writeln!(text, "transition time error: {e:.4} s");
            }
            None => {
                let _ = writeln!(text, "transition time error: n/a");
            }
        }
        match self.topology_distance {
            Some(d) => {
                let _ = writeln!(text, "topology distance: {d:.6}");
            }
            None => {
                let _ = writeln!(text, "topology distance: n/a");
            }
        }
        let _ = writeln!(
            text,
            "links: {} found, {} missing, {} spurious of {} true",
            self.detection.found,
            self.detection.missing,
            self.detection.spurious,
            self.detection.true_total
        );
        for s in &self.stages {
            let _ = writeln!(text, "stage {:<13} rank-1 {:.4}", s.stage, s.rank1);
        }
        for row in &self.links {
            let _ = writeln!(
                text,
                "link {} -> {}: mu {:.3} (true {:.3}) sigma {:.3} (true {:.3}) d_B {:.6}",
                row.exit, row.entry, row.mu, row.mu_gt, row.sigma, row.sigma_gt, row.d_b
            );
        }
        if let Some(t) = &self.timings {
            for r in &t.rows {
                let _ = writeln!(
                    text,
                    "bench n={:<5} forest {:.2} ms  exhaustive {:.2} ms",
                    r.n, r.forest_ms, r.exhaustive_ms
                );
            }
        }
        text
    }

    /// Per-link table as CSV.
    pub fn links_csv(&self) -> String {
        let mut csv = String::from("exit,entry,mu,mu_gt,sigma,sigma_gt,d_b\n");
        for r in &self.links {
            let _ = writeln!(
                csv,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.8}",
                r.exit, r.entry, r.mu, r.mu_gt, r.sigma, r.sigma_gt, r.d_b
            );
        }
        csv
    }

    /// Timing table as CSV (header only when no benchmark ran).
    pub fn timings_csv(&self) -> String {
        let mut csv = String::from("n,forest_ms,exhaustive_ms\n");
        if let Some(t) = &self.timings {
            for r in &t.rows {
                let _ = writeln!(csv, "{},{:.4},{:.4}", r.n, r.forest_ms, r.exhaustive_ms);
            }
        }
        csv
    }

    /// Full report as pretty-printed JSON.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("report serialization failed: {e}")))
    }
}
