//! Entry/exit zone learning: Gaussian-mixture clustering of tracklet
//! endpoint positions with BIC model-order selection.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::types::{CameraId, Tracklet};

/// Role a zone plays in a camera view.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZoneKind {
    Entry,
    Exit,
    /// Used by scenario definitions for doorways serving both roles.
    Both,
}

impl ZoneKind {
    /// Whether a zone of kind `self` can serve role `role`.
    pub fn serves(self, role: ZoneKind) -> bool {
        self == role || self == ZoneKind::Both || role == ZoneKind::Both
    }
}

impl std::fmt::Display for ZoneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ZoneKind::Entry => "entry",
            ZoneKind::Exit => "exit",
            ZoneKind::Both => "both",
        })
    }
}

impl std::str::FromStr for ZoneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entry" => Ok(ZoneKind::Entry),
            "exit" => Ok(ZoneKind::Exit),
            "both" => Ok(ZoneKind::Both),
            other => Err(Error::invalid(format!("unknown zone kind `{other}`"))),
        }
    }
}

/// A learned entry or exit region of one camera.
#[derive(Clone, Debug)]
pub struct Zone {
    pub camera: CameraId,
    pub zone_id: u32,
    pub kind: ZoneKind,
    pub center: (f64, f64),
    /// Sample covariance of the member points as `(xx, xy, yy)`.
    pub covariance: (f64, f64, f64),
    pub member_count: usize,
}

/// Learns entry zones from tracklet entry points and exit zones from exit
/// points. Entry zones take the low zone ids, exit zones continue after
/// them; within a kind, zones are ordered by center coordinates.
pub fn learn_zones(tracklets: &[Tracklet], cfg: &PipelineConfig, seed: u64) -> Result<Vec<Zone>> {
    if tracklets.is_empty() {
        return Err(Error::invalid("cannot learn zones without tracklets"));
    }
    let camera = tracklets[0].camera;
    if tracklets.iter().any(|t| t.camera != camera) {
        return Err(Error::invalid("zone learning expects tracklets of one camera"));
    }
    let entries: Vec<(f64, f64)> = tracklets.iter().map(|t| t.entry_point).collect();
    let exits: Vec<(f64, f64)> = tracklets.iter().map(|t| t.exit_point).collect();
    let mut zones = learn_endpoint_zones(camera, &entries, ZoneKind::Entry, cfg, seed)?;
    let offset = zones.len() as u32;
    let mut exit_zones = learn_endpoint_zones(camera, &exits, ZoneKind::Exit, cfg, seed ^ 0x5a5a)?;
    for z in &mut exit_zones {
        z.zone_id += offset;
    }
    zones.extend(exit_zones);
    Ok(zones)
}

/// Clusters one endpoint set into at most `cfg.max_zones` zones. An empty
/// point set produces no zones.
pub fn learn_endpoint_zones(
    camera: CameraId,
    points: &[(f64, f64)],
    kind: ZoneKind,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Vec<Zone>> {
    if points.is_empty() {
        return Ok(Vec::new());
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::invalid("endpoint coordinates must be finite"));
    }
    let mut distinct: Vec<(f64, f64)> = points.to_vec();
    distinct.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    distinct.dedup();
    let k_max = cfg.max_zones.min(distinct.len()).max(1);

    let mut best: Option<(f64, Mixture)> = None;
    for k in 1..=k_max {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::forest::mix_seed(seed, k as u64));
        let mix = fit_mixture(points, k, cfg.zone_em_iterations, &mut rng);
        let p = (6 * mix.components.len() - 1) as f64;
        let bic = -2.0 * mix.log_likelihood + p * (points.len() as f64).ln();
        if best.as_ref().map_or(true, |(b, _)| bic < *b - 1e-9) {
            best = Some((bic, mix));
        }
    }
    let (_, mix) = best.expect("at least one mixture fitted");

    // Hard-assign members, then report per-zone sample statistics.
    let mut members: Vec<Vec<(f64, f64)>> = vec![Vec::new(); mix.components.len()];
    for &p in points {
        let c = mix.hard_assign(p);
        members[c].push(p);
    }
    let mut zones: Vec<Zone> = members
        .into_iter()
        .filter(|m| !m.is_empty())
        .map(|m| {
            let n = m.len() as f64;
            let cx = m.iter().map(|p| p.0).sum::<f64>() / n;
            let cy = m.iter().map(|p| p.1).sum::<f64>() / n;
            let mut xx = 0.0;
            let mut xy = 0.0;
            let mut yy = 0.0;
            for &(x, y) in &m {
                xx += (x - cx) * (x - cx);
                xy += (x - cx) * (y - cy);
                yy += (y - cy) * (y - cy);
            }
            Zone {
                camera,
                zone_id: 0,
                kind,
                center: (cx, cy),
                covariance: (xx / n, xy / n, yy / n),
                member_count: m.len(),
            }
        })
        .collect();
    zones.sort_by(|a, b| {
        a.center
            .0
            .total_cmp(&b.center.0)
            .then(a.center.1.total_cmp(&b.center.1))
    });
    for (i, z) in zones.iter_mut().enumerate() {
        z.zone_id = i as u32;
    }
    Ok(zones)
}

/// Picks the zone of a compatible kind with the highest Gaussian likelihood
/// at `point` (ties go to the smaller id). `None` when no zone serves the
/// role.
pub fn assign_zone(zones: &[Zone], point: (f64, f64), role: ZoneKind) -> Option<u32> {
    zones
        .iter()
        .filter(|z| z.kind.serves(role))
        .map(|z| (z.zone_id, zone_log_likelihood(z, point)))
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(id, _)| id)
}

/// Log density of the zone's Gaussian at `point`, with the covariance
/// floored for stability.
fn zone_log_likelihood(z: &Zone, p: (f64, f64)) -> f64 {
    let (xx, xy, yy) = floor_covariance(z.covariance);
    let det = xx * yy - xy * xy;
    let dx = p.0 - z.center.0;
    let dy = p.1 - z.center.1;
    let maha = (yy * dx * dx - 2.0 * xy * dx * dy + xx * dy * dy) / det;
    -0.5 * maha - 0.5 * det.ln()
}

/// Minimum variance of 1 px^2 keeps degenerate zones usable.
fn floor_covariance((xx, xy, yy): (f64, f64, f64)) -> (f64, f64, f64) {
    let mut xx = xx.max(1.0);
    let mut yy = yy.max(1.0);
    let mut xy = xy;
    // Keep the matrix comfortably positive definite.
    let limit = 0.99 * (xx * yy).sqrt();
    if xy.abs() > limit {
        xy = xy.signum() * limit;
    }
    if xx * yy - xy * xy < 1e-6 {
        xx += 1e-3;
        yy += 1e-3;
    }
    (xx, xy, yy)
}

struct Component {
    weight: f64,
    mean: (f64, f64),
    cov: (f64, f64, f64),
}

struct Mixture {
    components: Vec<Component>,
    log_likelihood: f64,
}

impl Mixture {
    fn hard_assign(&self, p: (f64, f64)) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, c) in self.components.iter().enumerate() {
            let s = c.weight.ln() + component_log_pdf(c, p);
            if s > best_score {
                best_score = s;
                best = i;
            }
        }
        best
    }
}

fn component_log_pdf(c: &Component, p: (f64, f64)) -> f64 {
    let (xx, xy, yy) = floor_covariance(c.cov);
    let det = xx * yy - xy * xy;
    let dx = p.0 - c.mean.0;
    let dy = p.1 - c.mean.1;
    let maha = (yy * dx * dx - 2.0 * xy * dx * dy + xx * dy * dy) / det;
    -0.5 * maha - 0.5 * det.ln() - std::f64::consts::LN_2 - f64::ln(std::f64::consts::PI)
}

/// k-means++ seeding, a few Lloyd passes, then EM refinement.
fn fit_mixture(points: &[(f64, f64)], k: usize, em_iters: usize, rng: &mut ChaCha8Rng) -> Mixture {
    let n = points.len();
    // Seeding: first center uniform, rest weighted by squared distance.
    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..n)]);
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|&p| {
                centers
                    .iter()
                    .map(|&c| dist2(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            // All remaining points coincide with existing centers.
            centers.push(points[rng.gen_range(0..n)]);
            continue;
        }
        let mut draw = rng.gen_range(0.0..total);
        let mut chosen = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            if draw < d {
                chosen = i;
                break;
            }
            draw -= d;
        }
        centers.push(points[chosen]);
    }
    // Lloyd iterations.
    for _ in 0..10 {
        let mut sums = vec![(0.0, 0.0, 0usize); centers.len()];
        for &p in points {
            let c = nearest(&centers, p);
            sums[c].0 += p.0;
            sums[c].1 += p.1;
            sums[c].2 += 1;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s.2 > 0 {
                *c = (s.0 / s.2 as f64, s.1 / s.2 as f64);
            }
        }
    }
    // Initialize components from the k-means partition.
    let mut assignment: Vec<usize> = points.iter().map(|&p| nearest(&centers, p)).collect();
    let mut components: Vec<Component> = (0..centers.len())
        .map(|c| {
            let member: Vec<(f64, f64)> = points
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == c)
                .map(|(&p, _)| p)
                .collect();
            if member.is_empty() {
                Component {
                    weight: 1e-6,
                    mean: centers[c],
                    cov: (1.0, 0.0, 1.0),
                }
            } else {
                moments(&member, points.len())
            }
        })
        .collect();

    // EM refinement.
    let mut resp = vec![0.0f64; n * components.len()];
    let mut log_likelihood = 0.0;
    for _ in 0..em_iters {
        let m = components.len();
        log_likelihood = 0.0;
        for (i, &p) in points.iter().enumerate() {
            let scores: Vec<f64> = components
                .iter()
                .map(|c| c.weight.max(1e-12).ln() + component_log_pdf(c, p))
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (j, &s) in scores.iter().enumerate() {
                let e = (s - max).exp();
                resp[i * m + j] = e;
                total += e;
            }
            for j in 0..m {
                resp[i * m + j] /= total;
            }
            log_likelihood += max + total.ln();
        }
        for (j, comp) in components.iter_mut().enumerate() {
            let mut w = 0.0;
            let mut mx = 0.0;
            let mut my = 0.0;
            for (i, &p) in points.iter().enumerate() {
                let r = resp[i * m + j];
                w += r;
                mx += r * p.0;
                my += r * p.1;
            }
            if w < 1e-9 {
                comp.weight = 0.0;
                continue;
            }
            let mean = (mx / w, my / w);
            let mut xx = 0.0;
            let mut xy = 0.0;
            let mut yy = 0.0;
            for (i, &p) in points.iter().enumerate() {
                let r = resp[i * m + j];
                let dx = p.0 - mean.0;
                let dy = p.1 - mean.1;
                xx += r * dx * dx;
                xy += r * dx * dy;
                yy += r * dy * dy;
            }
            comp.weight = w / n as f64;
            comp.mean = mean;
            comp.cov = (xx / w, xy / w, yy / w);
        }
        components.retain(|c| c.weight > 0.0);
    }
    // Final assignment refresh for the caller's statistics.
    for (a, &p) in assignment.iter_mut().zip(points.iter()) {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (j, c) in components.iter().enumerate() {
            let s = c.weight.max(1e-12).ln() + component_log_pdf(c, p);
            if s > best_score {
                best_score = s;
                best = j;
            }
        }
        *a = best;
    }
    Mixture {
        components,
        log_likelihood,
    }
}

fn moments(points: &[(f64, f64)], total: usize) -> Component {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut xx = 0.0;
    let mut xy = 0.0;
    let mut yy = 0.0;
    for &(x, y) in points {
        xx += (x - mx) * (x - mx);
        xy += (x - mx) * (y - my);
        yy += (y - my) * (y - my);
    }
    Component {
        weight: n / total as f64,
        mean: (mx, my),
        cov: (xx / n, xy / n, yy / n),
    }
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0) * (a.0 - b.0) + (a.1 - b.1) * (a.1 - b.1)
}

fn nearest(centers: &[(f64, f64)], p: (f64, f64)) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}
