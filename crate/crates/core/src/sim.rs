//! Deterministic synthetic scenario generator.
//!
//! A scenario describes cameras with entry/exit zones, directed zone-to-zone
//! links with Gaussian travel times, and a population of people who dwell in
//! views, hop across links, occasionally leave the network, and return after
//! an idle period. Generation produces an initialization dataset, an online
//! continuation, and the ground truth (true zones, true links with validity
//! intervals, and every realized cross-camera correspondence), all fully
//! determined by the scenario seed.
//!
//! The last observation of a tracklet is placed exactly at its exit time and
//! the first observation of the continuation exactly at its entry time, so
//! realized transition times equal the drawn travel times.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::distributions::Distribution as _;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::Normal;

use crate::error::{Error, Result};
use crate::forest::mix_seed;
use crate::ingest::{save_dataset, Dataset};
use crate::types::{
    BoundingBox, CameraId, FeatureVector, Observation, PersonLabel, Tracklet, TrackletUid, ZoneKey,
};
use crate::zones::{Zone, ZoneKind};

/// Truncated normal parameters for dwell and idle durations.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TruncNorm {
    pub mean: f64,
    pub sigma: f64,
    pub min: f64,
    pub max: f64,
}

/// One pixel-space Gaussian zone of a camera.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ZoneSpec {
    pub id: u32,
    #[serde(default = "default_kind")]
    pub kind: String,
    pub center: [f64; 2],
    pub sigma: [f64; 2],
}

fn default_kind() -> String {
    "both".to_owned()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraSpec {
    pub id: u32,
    pub zones: Vec<ZoneSpec>,
}

/// Directed link between an exit zone and an entry zone.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinkSpec {
    /// `[camera, zone]` the link leaves from.
    pub from: [u32; 2],
    /// `[camera, zone]` the link arrives at.
    pub to: [u32; 2],
    pub mu: f64,
    pub sigma: f64,
    /// Routing weight among the source camera's outgoing links.
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

/// A scheduled topology change applied during generation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChangeSpec {
    /// Seconds from scenario start.
    pub at: f64,
    pub from: [u32; 2],
    pub to: [u32; 2],
    /// New travel-time mean; `None` together with `remove` drops the link.
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub remove: bool,
}

/// Full description of a synthetic scenario (TOML-serializable).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub person_count: usize,
    pub feature_dim: usize,
    /// Minimum pairwise distance enforced between identity descriptors.
    pub identity_separation: f64,
    /// Expected norm of per-observation appearance noise.
    pub appearance_sigma: f64,
    /// Observations per second while a person is in view.
    pub observation_rate: f64,
    pub init_duration: f64,
    pub online_duration: f64,
    /// First entries are spread uniformly over this many seconds.
    pub entry_stagger: f64,
    pub dwell: TruncNorm,
    pub idle: TruncNorm,
    /// Chance of leaving the network instead of taking a link.
    pub exit_probability: f64,
    pub seed: u64,
    pub cameras: Vec<CameraSpec>,
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub changes: Vec<ChangeSpec>,
}

/// One true link segment with its validity interval.
#[derive(Clone, Debug, PartialEq)]
pub struct TrueLink {
    pub from: ZoneKey,
    pub to: ZoneKey,
    pub mu: f64,
    pub sigma: f64,
    pub valid_from: f64,
    pub valid_until: f64,
}

/// One realized cross-camera correspondence.
#[derive(Clone, Debug, PartialEq)]
pub struct TruePair {
    /// Tracklet whose exit starts the transition.
    pub from: TrackletUid,
    /// Tracklet that continues the person in the next camera.
    pub to: TrackletUid,
    pub link: (ZoneKey, ZoneKey),
    pub delta_t: f64,
}

/// Everything the evaluation stage may compare against.
#[derive(Clone, Debug, Default)]
pub struct GroundTruth {
    pub zones: Vec<Zone>,
    pub links: Vec<TrueLink>,
    pub pairs: Vec<TruePair>,
    /// Boundary between the initialization and online datasets.
    pub online_start: f64,
    pub end: f64,
}

impl GroundTruth {
    /// Link segments valid at time `t`.
    pub fn links_at(&self, t: f64) -> Vec<&TrueLink> {
        self.links
            .iter()
            .filter(|l| t >= l.valid_from && t < l.valid_until)
            .collect()
    }

    pub fn zones_of(&self, camera: CameraId) -> Vec<&Zone> {
        self.zones.iter().filter(|z| z.camera == camera).collect()
    }
}

/// Result of running a scenario.
#[derive(Clone, Debug)]
pub struct SimOutput {
    pub init: Dataset,
    pub online: Dataset,
    pub truth: GroundTruth,
}

impl SimOutput {
    /// Writes `init` and `online` datasets plus `truth.txt` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        save_dataset(&self.init, dir, "init")?;
        if self.online.tracklet_count() > 0 {
            save_dataset(&self.online, dir, "online")?;
        }
        save_ground_truth(&dir.join("truth.txt"), &self.truth)
    }

    /// Looks a tracklet up by uid across both datasets.
    pub fn find_tracklet(&self, uid: TrackletUid) -> Option<&Tracklet> {
        [&self.init, &self.online]
            .into_iter()
            .flat_map(|d| d.tracklets.get(&uid.camera))
            .flatten()
            .find(|t| t.uid() == uid)
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.person_count == 0 {
            return Err(Error::invalid("scenario needs at least one person"));
        }
        if self.feature_dim < 2 {
            return Err(Error::invalid("feature_dim must be at least 2"));
        }
        if !(self.observation_rate > 0.0) {
            return Err(Error::invalid("observation_rate must be positive"));
        }
        if !(self.init_duration > 0.0) || self.online_duration < 0.0 {
            return Err(Error::invalid("durations must be positive (init) and non-negative (online)"));
        }
        if !(0.0..=1.0).contains(&self.exit_probability) {
            return Err(Error::invalid("exit_probability must lie in [0, 1]"));
        }
        if self.appearance_sigma < 0.0 || self.identity_separation < 0.0 {
            return Err(Error::invalid("appearance_sigma and identity_separation must be non-negative"));
        }
        for t in [&self.dwell, &self.idle] {
            if !(t.min <= t.max) || t.min < 0.5 || t.sigma < 0.0 {
                return Err(Error::invalid("truncated normal needs 0.5 <= min <= max and sigma >= 0"));
            }
        }
        if self.cameras.is_empty() {
            return Err(Error::invalid("scenario needs at least one camera"));
        }
        let mut zone_keys = std::collections::BTreeSet::new();
        for cam in &self.cameras {
            if self.cameras.iter().filter(|c| c.id == cam.id).count() > 1 {
                return Err(Error::invalid(format!("duplicate camera id {}", cam.id)));
            }
            if cam.zones.is_empty() {
                return Err(Error::invalid(format!("camera {} has no zones", cam.id)));
            }
            for z in &cam.zones {
                z.kind.parse::<ZoneKind>()?;
                if !(z.sigma[0] > 0.0 && z.sigma[1] > 0.0) {
                    return Err(Error::invalid("zone sigma must be positive"));
                }
                if !zone_keys.insert((cam.id, z.id)) {
                    return Err(Error::invalid(format!("duplicate zone {}:{}", cam.id, z.id)));
                }
            }
        }
        for link in &self.links {
            for key in [link.from, link.to] {
                if !zone_keys.contains(&(key[0], key[1])) {
                    return Err(Error::invalid(format!("link references unknown zone {}:{}", key[0], key[1])));
                }
            }
            if link.from[0] == link.to[0] {
                return Err(Error::invalid("links must connect different cameras"));
            }
            if !(link.mu > 0.0) || !(link.sigma >= 0.0) || !(link.weight > 0.0) {
                return Err(Error::invalid("link needs mu > 0, sigma >= 0, weight > 0"));
            }
        }
        for change in &self.changes {
            if !self
                .links
                .iter()
                .any(|l| l.from == change.from && l.to == change.to)
            {
                return Err(Error::invalid("change references an unknown link"));
            }
            if change.remove == change.mu.is_some() {
                return Err(Error::invalid("a change must either set mu or remove the link"));
            }
            if change.at < 0.0 {
                return Err(Error::invalid("change time must be non-negative"));
            }
        }
        Ok(())
    }

    /// Five cameras along a corridor, two zones each, joined by a link in
    /// each direction per neighboring pair (eight links total). Travel times
    /// are tight while dwell times vary widely, so direct transitions form
    /// sharp humps and multi-hop patterns stay diffuse.
    pub fn corridor_default(seed: u64) -> ScenarioSpec {
        let cameras = (1..=5u32)
            .map(|id| CameraSpec {
                id,
                zones: vec![
                    ZoneSpec {
                        id: 0,
                        kind: "both".into(),
                        center: [80.0, 360.0],
                        sigma: [15.0, 15.0],
                    },
                    ZoneSpec {
                        id: 1,
                        kind: "both".into(),
                        center: [1200.0, 360.0],
                        sigma: [15.0, 15.0],
                    },
                ],
            })
            .collect();
        // Rightward links leave zone 1 of camera c into zone 0 of c+1;
        // leftward links run zone 0 of c+1 back into zone 1 of c.
        let rightward = [(30.0, 4.0), (24.0, 3.0), (45.0, 4.5), (36.0, 4.0)];
        let leftward = [(33.0, 3.5), (27.0, 3.0), (48.0, 4.5), (39.0, 4.0)];
        let mut links = Vec::new();
        for (i, &(mu, sigma)) in rightward.iter().enumerate() {
            links.push(LinkSpec {
                from: [i as u32 + 1, 1],
                to: [i as u32 + 2, 0],
                mu,
                sigma,
                weight: 1.0,
            });
        }
        for (i, &(mu, sigma)) in leftward.iter().enumerate() {
            links.push(LinkSpec {
                from: [i as u32 + 2, 0],
                to: [i as u32 + 1, 1],
                mu,
                sigma,
                weight: 1.0,
            });
        }
        ScenarioSpec {
            person_count: 300,
            feature_dim: 64,
            identity_separation: 1.0,
            appearance_sigma: 0.18,
            observation_rate: 0.25,
            init_duration: 3600.0,
            online_duration: 0.0,
            entry_stagger: 120.0,
            dwell: TruncNorm {
                mean: 30.0,
                sigma: 30.0,
                min: 8.0,
                max: 200.0,
            },
            // Idle gaps run longer than the initial correlation window, so a
            // person's separate visits rarely land in the same search span and
            // the transition histograms stay dominated by direct travel.
            idle: TruncNorm {
                mean: 700.0,
                sigma: 150.0,
                min: 500.0,
                max: 1400.0,
            },
            exit_probability: 0.5,
            seed,
            cameras,
            links,
            changes: Vec::new(),
        }
    }

    /// Two cameras joined by a link in each direction, with both travel means
    /// shifting from 30 s to 40 s shortly into the online period. Dwell and
    /// idle spreads mirror the corridor scenario so initialization converges,
    /// while enough people keep moving that post-shift evidence accumulates
    /// across the stream.
    pub fn drift_pair(seed: u64) -> ScenarioSpec {
        let cameras = (1..=2u32)
            .map(|id| CameraSpec {
                id,
                zones: vec![
                    ZoneSpec {
                        id: 0,
                        kind: "both".into(),
                        center: [80.0, 360.0],
                        sigma: [15.0, 15.0],
                    },
                    ZoneSpec {
                        id: 1,
                        kind: "both".into(),
                        center: [1200.0, 360.0],
                        sigma: [15.0, 15.0],
                    },
                ],
            })
            .collect();
        let links = vec![
            LinkSpec {
                from: [1, 1],
                to: [2, 0],
                mu: 30.0,
                sigma: 5.0,
                weight: 1.0,
            },
            LinkSpec {
                from: [2, 0],
                to: [1, 1],
                mu: 30.0,
                sigma: 5.0,
                weight: 1.0,
            },
        ];
        let changes = vec![
            ChangeSpec {
                at: 1300.0,
                from: [1, 1],
                to: [2, 0],
                mu: Some(40.0),
                remove: false,
            },
            ChangeSpec {
                at: 1300.0,
                from: [2, 0],
                to: [1, 1],
                mu: Some(40.0),
                remove: false,
            },
        ];
        ScenarioSpec {
            person_count: 200,
            feature_dim: 64,
            identity_separation: 1.0,
            appearance_sigma: 0.18,
            observation_rate: 0.25,
            init_duration: 1200.0,
            online_duration: 2400.0,
            entry_stagger: 120.0,
            dwell: TruncNorm {
                mean: 30.0,
                sigma: 30.0,
                min: 8.0,
                max: 200.0,
            },
            idle: TruncNorm {
                mean: 700.0,
                sigma: 150.0,
                min: 500.0,
                max: 1400.0,
            },
            exit_probability: 0.5,
            seed,
            cameras,
            links,
            changes,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::invalid(format!("cannot serialize scenario: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<ScenarioSpec> {
        let spec: ScenarioSpec =
            toml::from_str(text).map_err(|e| Error::invalid(format!("bad scenario: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// How a visit to one camera ended.
#[derive(Clone, Copy, Debug, PartialEq)]
enum VisitEnd {
    /// Left through a link; the next visit continues the person.
    Hopped,
    /// Left the camera network.
    Departed,
    /// Scenario ended while the person was in view.
    Truncated,
}

#[derive(Clone, Debug)]
struct Visit {
    camera: usize,
    entry_zone: usize,
    exit_zone: Option<usize>,
    t0: f64,
    t1: f64,
    end: VisitEnd,
}

struct Hop {
    from_visit: usize,
    to_visit: usize,
    link: usize,
    transit: f64,
}

/// Runs the scenario and returns datasets plus ground truth.
pub fn generate(spec: &ScenarioSpec) -> Result<SimOutput> {
    spec.validate()?;
    let end = spec.init_duration + spec.online_duration;
    let latents = draw_latents(spec)?;
    let outgoing: Vec<Vec<usize>> = spec
        .cameras
        .iter()
        .map(|cam| {
            spec.links
                .iter()
                .enumerate()
                .filter(|(_, l)| l.from[0] == cam.id)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();

    let mut init = Dataset {
        epoch: 0.0,
        feature_dim: spec.feature_dim,
        tracklets: BTreeMap::new(),
    };
    let mut online = init.clone();
    for cam in &spec.cameras {
        init.tracklets.insert(CameraId(cam.id), Vec::new());
        if spec.online_duration > 0.0 {
            online.tracklets.insert(CameraId(cam.id), Vec::new());
        }
    }

    let mut pairs = Vec::new();
    for person in 0..spec.person_count {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed ^ 0xA11CE, person as u64));
        let (visits, hops) = walk_person(spec, &outgoing, end, &mut rng);
        // Materialize visits into tracklets split at the dataset boundary,
        // remembering each visit's entry- and exit-side uids.
        let mut entry_uids = vec![None; visits.len()];
        let mut exit_uids = vec![None; visits.len()];
        for (vi, visit) in visits.iter().enumerate() {
            let pieces = materialize(spec, person, visit, &latents[person], &mut rng);
            if pieces.is_empty() {
                continue;
            }
            entry_uids[vi] = Some(pieces.first().unwrap().uid());
            exit_uids[vi] = Some(pieces.last().unwrap().uid());
            for piece in pieces {
                let target = if piece.entry_time() < spec.init_duration {
                    &mut init
                } else {
                    &mut online
                };
                target
                    .tracklets
                    .entry(piece.camera)
                    .or_default()
                    .push(piece);
            }
        }
        for hop in hops {
            let (Some(from), Some(to)) = (exit_uids[hop.from_visit], entry_uids[hop.to_visit])
            else {
                continue;
            };
            let link = &spec.links[hop.link];
            pairs.push(TruePair {
                from,
                to,
                link: (
                    ZoneKey::new(CameraId(link.from[0]), link.from[1]),
                    ZoneKey::new(CameraId(link.to[0]), link.to[1]),
                ),
                delta_t: hop.transit,
            });
        }
    }

    for dataset in [&mut init, &mut online] {
        for tracklets in dataset.tracklets.values_mut() {
            tracklets.sort_by(|a, b| {
                a.entry_time()
                    .total_cmp(&b.entry_time())
                    .then(a.person.cmp(&b.person))
            });
        }
    }
    pairs.sort_by(|a, b| a.from.cmp(&b.from).then(a.to.cmp(&b.to)));

    let truth = GroundTruth {
        zones: true_zones(spec),
        links: true_links(spec),
        pairs,
        online_start: spec.init_duration,
        end,
    };
    Ok(SimOutput { init, online, truth })
}

/// One person's sequence of visits and link hops.
fn walk_person(
    spec: &ScenarioSpec,
    outgoing: &[Vec<usize>],
    end: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<Visit>, Vec<Hop>) {
    let mut visits = Vec::new();
    let mut hops = Vec::new();
    let mut t = if spec.entry_stagger > 0.0 {
        rng.gen_range(0.0..spec.entry_stagger)
    } else {
        0.0
    };
    let mut camera = rng.gen_range(0..spec.cameras.len());
    let mut entry_zone = rng.gen_range(0..spec.cameras[camera].zones.len());
    while t < end {
        let dwell = trunc_norm(&spec.dwell, rng);
        let leave_at = t + dwell;
        if leave_at >= end {
            visits.push(Visit {
                camera,
                entry_zone,
                exit_zone: None,
                t0: t,
                t1: end,
                end: VisitEnd::Truncated,
            });
            break;
        }
        let active: Vec<usize> = outgoing[camera]
            .iter()
            .copied()
            .filter(|&l| link_mu_at(spec, l, leave_at).is_some())
            .collect();
        let departs = active.is_empty() || rng.gen::<f64>() < spec.exit_probability;
        if departs {
            let exit_zone = rng.gen_range(0..spec.cameras[camera].zones.len());
            visits.push(Visit {
                camera,
                entry_zone,
                exit_zone: Some(exit_zone),
                t0: t,
                t1: leave_at,
                end: VisitEnd::Departed,
            });
            t = leave_at + trunc_norm(&spec.idle, rng);
            camera = rng.gen_range(0..spec.cameras.len());
            entry_zone = rng.gen_range(0..spec.cameras[camera].zones.len());
        } else {
            let li = weighted_pick(spec, &active, rng);
            let link = &spec.links[li];
            let exit_zone = zone_index(spec, camera, link.from[1]);
            visits.push(Visit {
                camera,
                entry_zone,
                exit_zone: Some(exit_zone),
                t0: t,
                t1: leave_at,
                end: VisitEnd::Hopped,
            });
            let mu = link_mu_at(spec, li, leave_at).expect("active link has a mean");
            let transit = draw_normal(mu, link.sigma, rng).max(1.0);
            let arrive = leave_at + transit;
            if arrive >= end {
                break;
            }
            hops.push(Hop {
                from_visit: visits.len() - 1,
                to_visit: visits.len(),
                link: li,
                transit,
            });
            t = arrive;
            camera = camera_index(spec, link.to[0]);
            entry_zone = zone_index(spec, camera, link.to[1]);
        }
    }
    // A hop whose arrival visit never materialized (scenario ended during
    // the dwell draw loop break) is dropped.
    let hops = hops
        .into_iter()
        .filter(|h| h.to_visit < visits.len())
        .collect();
    (visits, hops)
}

/// Expands one visit into observations and splits the result at the
/// init/online boundary; returns the pieces in time order.
fn materialize(
    spec: &ScenarioSpec,
    person: usize,
    visit: &Visit,
    latent: &[f64],
    rng: &mut ChaCha8Rng,
) -> Vec<Tracklet> {
    let camera = &spec.cameras[visit.camera];
    let cam_id = CameraId(camera.id);
    let entry_pos = sample_zone(&camera.zones[visit.entry_zone], rng);
    let exit_pos = match visit.exit_zone {
        Some(z) => sample_zone(&camera.zones[z], rng),
        // Truncated visits head toward an arbitrary interior point.
        None => (
            rng.gen_range(300.0..1000.0),
            rng.gen_range(200.0..520.0),
        ),
    };
    let step = 1.0 / spec.observation_rate;
    let mut times = Vec::new();
    let mut t = visit.t0;
    while t < visit.t1 - 1e-9 {
        times.push(t);
        t += step;
    }
    if visit.end != VisitEnd::Truncated {
        times.push(visit.t1);
    } else if times.is_empty() {
        times.push(visit.t0);
    }
    let span = (visit.t1 - visit.t0).max(1e-9);
    let noise_scale = spec.appearance_sigma / (spec.feature_dim as f64).sqrt();
    let observations: Vec<Observation> = times
        .iter()
        .map(|&ts| {
            let a = (ts - visit.t0) / span;
            let cx = entry_pos.0 + a * (exit_pos.0 - entry_pos.0) + draw_normal(0.0, 4.0, rng);
            let cy = entry_pos.1 + a * (exit_pos.1 - entry_pos.1) + draw_normal(0.0, 4.0, rng);
            let w = (14.0 + draw_normal(0.0, 1.5, rng)).clamp(6.0, 30.0);
            let h = (34.0 + draw_normal(0.0, 2.0, rng)).clamp(12.0, 60.0);
            let mut raw: Vec<f64> = latent.to_vec();
            if noise_scale > 0.0 {
                for v in raw.iter_mut() {
                    *v += noise_scale * draw_normal(0.0, 1.0, rng);
                }
            }
            Observation {
                camera: cam_id,
                timestamp: ts,
                feature: FeatureVector::unit(&raw).expect("latent plus noise is non-zero"),
                bbox: BoundingBox {
                    x: cx - w / 2.0,
                    y: cy - h / 2.0,
                    w,
                    h,
                },
            }
        })
        .collect();

    let boundary = spec.init_duration;
    let split_at = observations
        .iter()
        .position(|o| o.timestamp >= boundary)
        .filter(|&i| i > 0 && i < observations.len());
    let parts: Vec<Vec<Observation>> = match split_at {
        Some(i) => vec![observations[..i].to_vec(), observations[i..].to_vec()],
        None => vec![observations],
    };
    parts
        .into_iter()
        .filter(|obs| !obs.is_empty())
        .map(|obs| {
            let entry_point = obs.first().unwrap().bbox.center();
            let exit_point = obs.last().unwrap().bbox.center();
            Tracklet {
                camera: cam_id,
                person: PersonLabel(person as u32),
                observations: obs,
                entry_point,
                exit_point,
            }
        })
        .collect()
}

fn sample_zone(zone: &ZoneSpec, rng: &mut ChaCha8Rng) -> (f64, f64) {
    (
        draw_normal(zone.center[0], zone.sigma[0], rng),
        draw_normal(zone.center[1], zone.sigma[1], rng),
    )
}

fn draw_normal(mean: f64, sigma: f64, rng: &mut ChaCha8Rng) -> f64 {
    if sigma <= 0.0 {
        return mean;
    }
    Normal::new(mean, sigma).expect("valid normal parameters").sample(rng)
}

fn trunc_norm(p: &TruncNorm, rng: &mut ChaCha8Rng) -> f64 {
    for _ in 0..1000 {
        let x = draw_normal(p.mean, p.sigma, rng);
        if x >= p.min && x <= p.max {
            return x;
        }
    }
    p.mean.clamp(p.min, p.max)
}

fn weighted_pick(spec: &ScenarioSpec, active: &[usize], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = active.iter().map(|&i| spec.links[i].weight).sum();
    let mut draw = rng.gen_range(0.0..total);
    for &i in active {
        if draw < spec.links[i].weight {
            return i;
        }
        draw -= spec.links[i].weight;
    }
    *active.last().expect("non-empty active link set")
}

/// Travel-time mean of link `li` at time `t`, or `None` when removed.
fn link_mu_at(spec: &ScenarioSpec, li: usize, t: f64) -> Option<f64> {
    let link = &spec.links[li];
    let mut mu = Some(link.mu);
    let mut applied: Vec<&ChangeSpec> = spec
        .changes
        .iter()
        .filter(|c| c.from == link.from && c.to == link.to && c.at <= t)
        .collect();
    applied.sort_by(|a, b| a.at.total_cmp(&b.at));
    for change in applied {
        mu = if change.remove { None } else { change.mu };
    }
    mu
}

fn camera_index(spec: &ScenarioSpec, id: u32) -> usize {
    spec.cameras
        .iter()
        .position(|c| c.id == id)
        .expect("validated camera id")
}

fn zone_index(spec: &ScenarioSpec, camera: usize, zone_id: u32) -> usize {
    spec.cameras[camera]
        .zones
        .iter()
        .position(|z| z.id == zone_id)
        .expect("validated zone id")
}

/// Unit identity descriptors with enforced pairwise separation.
fn draw_latents(spec: &ScenarioSpec) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0xFACE));
    let mut latents: Vec<Vec<f64>> = Vec::with_capacity(spec.person_count);
    for _ in 0..spec.person_count {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..200 {
            let raw: Vec<f64> = (0..spec.feature_dim)
                .map(|_| draw_normal(0.0, 1.0, &mut rng))
                .collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= 1e-12 {
                continue;
            }
            let unit: Vec<f64> = raw.iter().map(|v| v / norm).collect();
            let min_d = latents
                .iter()
                .map(|l| {
                    l.iter()
                        .zip(&unit)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            if min_d >= spec.identity_separation {
                best = Some((min_d, unit));
                break;
            }
            if best.as_ref().map_or(true, |(d, _)| min_d > *d) {
                best = Some((min_d, unit));
            }
        }
        let (_, unit) = best.ok_or_else(|| Error::invalid("failed to draw identity descriptors"))?;
        latents.push(unit);
    }
    Ok(latents)
}

fn true_zones(spec: &ScenarioSpec) -> Vec<Zone> {
    spec.cameras
        .iter()
        .flat_map(|cam| {
            cam.zones.iter().map(|z| Zone {
                camera: CameraId(cam.id),
                zone_id: z.id,
                kind: z.kind.parse().expect("validated zone kind"),
                center: (z.center[0], z.center[1]),
                covariance: (z.sigma[0] * z.sigma[0], 0.0, z.sigma[1] * z.sigma[1]),
                member_count: 0,
            })
        })
        .collect()
}

fn true_links(spec: &ScenarioSpec) -> Vec<TrueLink> {
    let mut out = Vec::new();
    for link in &spec.links {
        let from = ZoneKey::new(CameraId(link.from[0]), link.from[1]);
        let to = ZoneKey::new(CameraId(link.to[0]), link.to[1]);
        let mut changes: Vec<&ChangeSpec> = spec
            .changes
            .iter()
            .filter(|c| c.from == link.from && c.to == link.to)
            .collect();
        changes.sort_by(|a, b| a.at.total_cmp(&b.at));
        let mut open = Some((0.0, link.mu));
        for change in changes {
            if let Some((start, mu)) = open.take() {
                out.push(TrueLink {
                    from,
                    to,
                    mu,
                    sigma: link.sigma,
                    valid_from: start,
                    valid_until: change.at,
                });
            }
            if !change.remove {
                open = Some((change.at, change.mu.expect("validated change")));
            }
        }
        if let Some((start, mu)) = open {
            out.push(TrueLink {
                from,
                to,
                mu,
                sigma: link.sigma,
                valid_from: start,
                valid_until: f64::INFINITY,
            });
        }
    }
    out
}

/// Writes ground truth as plain text: `meta`, `zone`, `link`, and `pair`
/// lines.
pub fn save_ground_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "meta online_start {:.3}", truth.online_start);
    let _ = writeln!(text, "meta end {:.3}", truth.end);
    for z in &truth.zones {
        let _ = writeln!(
            text,
            "zone {} {} {} {:.2} {:.2} {:.2} {:.2}",
            z.camera.0,
            z.zone_id,
            z.kind,
            z.center.0,
            z.center.1,
            z.covariance.0.sqrt(),
            z.covariance.2.sqrt(),
        );
    }
    for l in &truth.links {
        let until = if l.valid_until.is_finite() {
            format!("{:.3}", l.valid_until)
        } else {
            "inf".to_owned()
        };
        let _ = writeln!(
            text,
            "link {} {} {:.3} {:.3} {:.3} {until}",
            l.from, l.to, l.mu, l.sigma, l.valid_from
        );
    }
    for p in &truth.pairs {
        let _ = writeln!(
            text,
            "pair {} {} {} {} {:.3}",
            p.from, p.to, p.link.0, p.link.1, p.delta_t
        );
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a ground-truth file written by [`save_ground_truth`].
pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    let file = path.display().to_string();
    let mut truth = GroundTruth::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let fail = |msg: String| Error::format(&file, line_no, msg);
        match fields[0] {
            "meta" if fields.len() == 3 => {
                let value: f64 = fields[2]
                    .parse()
                    .map_err(|_| fail(format!("bad meta value `{}`", fields[2])))?;
                match fields[1] {
                    "online_start" => truth.online_start = value,
                    "end" => truth.end = value,
                    other => return Err(fail(format!("unknown meta key `{other}`"))),
                }
            }
            "zone" if fields.len() == 8 => {
                let camera: u32 = fields[1].parse().map_err(|_| fail("bad camera".into()))?;
                let zone_id: u32 = fields[2].parse().map_err(|_| fail("bad zone".into()))?;
                let kind: ZoneKind = fields[3].parse()?;
                let nums: Vec<f64> = fields[4..8]
                    .iter()
                    .map(|f| f.parse().map_err(|_| fail(format!("bad number `{f}`"))))
                    .collect::<Result<_>>()?;
                truth.zones.push(Zone {
                    camera: CameraId(camera),
                    zone_id,
                    kind,
                    center: (nums[0], nums[1]),
                    covariance: (nums[2] * nums[2], 0.0, nums[3] * nums[3]),
                    member_count: 0,
                });
            }
            "link" if fields.len() == 7 => {
                let from = parse_zone_key(fields[1]).ok_or_else(|| fail("bad zone key".into()))?;
                let to = parse_zone_key(fields[2]).ok_or_else(|| fail("bad zone key".into()))?;
                let mu: f64 = fields[3].parse().map_err(|_| fail("bad mu".into()))?;
                let sigma: f64 = fields[4].parse().map_err(|_| fail("bad sigma".into()))?;
                let valid_from: f64 = fields[5].parse().map_err(|_| fail("bad start".into()))?;
                let valid_until = if fields[6] == "inf" {
                    f64::INFINITY
                } else {
                    fields[6].parse().map_err(|_| fail("bad end".into()))?
                };
                truth.links.push(TrueLink {
                    from,
                    to,
                    mu,
                    sigma,
                    valid_from,
                    valid_until,
                });
            }
            "pair" if fields.len() == 6 => {
                let from = parse_uid(fields[1]).ok_or_else(|| fail("bad uid".into()))?;
                let to = parse_uid(fields[2]).ok_or_else(|| fail("bad uid".into()))?;
                let link_from =
                    parse_zone_key(fields[3]).ok_or_else(|| fail("bad zone key".into()))?;
                let link_to =
                    parse_zone_key(fields[4]).ok_or_else(|| fail("bad zone key".into()))?;
                let delta_t: f64 = fields[5].parse().map_err(|_| fail("bad delta".into()))?;
                truth.pairs.push(TruePair {
                    from,
                    to,
                    link: (link_from, link_to),
                    delta_t,
                });
            }
            other => return Err(fail(format!("unrecognized ground-truth entry `{other}`"))),
        }
    }
    Ok(truth)
}

fn parse_zone_key(s: &str) -> Option<ZoneKey> {
    s.parse().ok()
}

fn parse_uid(s: &str) -> Option<TrackletUid> {
    let mut it = s.split('/');
    let camera = CameraId(it.next()?.parse().ok()?);
    let person = PersonLabel(it.next()?.parse().ok()?);
    let entry_ms: i64 = it.next()?.parse().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some(TrackletUid {
        camera,
        person,
        entry_ms,
    })
}
