//! Dataset files: a manifest naming per-camera tracklet and feature files,
//! plus loading, saving, and key-appearance selection.
//!
//! A manifest is plain text (`#` starts a comment):
//!
//! ```text
//! epoch 0.000
//! feature_dim 64
//! camera 1 run_cam1.tracks run_cam1.feat
//! ```
//!
//! Tracklet files hold one observation per line as
//! `camera,person,time,x,y,w,h,feature_index`; rows of one person are
//! regrouped by time and split into tracklets wherever consecutive
//! observations are more than [`TRACKLET_SPLIT_GAP`] seconds apart. Feature
//! files start with a `dim count` header followed by one whitespace-separated
//! vector per line; `feature_index` refers to those rows. All paths in a
//! manifest are relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::forest::SeriesInput;
use crate::types::{
    validate_tracklet, BoundingBox, CameraId, FeatureVector, Observation, PersonLabel, Tracklet,
};

/// Time gap (seconds) above which one person's observations become separate
/// tracklets.
pub const TRACKLET_SPLIT_GAP: f64 = 10.0;

/// An in-memory dataset: tracklets grouped per camera.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    /// Absolute time (seconds) that timestamp zero refers to.
    pub epoch: f64,
    pub feature_dim: usize,
    pub tracklets: BTreeMap<CameraId, Vec<Tracklet>>,
}

impl Dataset {
    pub fn camera_ids(&self) -> Vec<CameraId> {
        self.tracklets.keys().copied().collect()
    }

    pub fn tracklet_count(&self) -> usize {
        self.tracklets.values().map(Vec::len).sum()
    }

    pub fn observation_count(&self) -> usize {
        self.tracklets
            .values()
            .flatten()
            .map(Tracklet::appearance_count)
            .sum()
    }

    /// Earliest entry and latest exit over all tracklets.
    pub fn time_span(&self) -> Option<(f64, f64)> {
        let mut span: Option<(f64, f64)> = None;
        for t in self.tracklets.values().flatten() {
            let (lo, hi) = span.unwrap_or((f64::INFINITY, f64::NEG_INFINITY));
            span = Some((lo.min(t.entry_time()), hi.max(t.exit_time())));
        }
        span
    }

    pub fn all_tracklets(&self) -> impl Iterator<Item = &Tracklet> {
        self.tracklets.values().flatten()
    }
}

/// Loads the dataset a manifest describes. Returns the dataset and any
/// warnings about repaired irregularities (out-of-order rows, clearly
/// non-unit descriptors). With `cfg.normalize_features` set, descriptors are
/// rescaled to unit length; otherwise stored values are kept exactly.
pub fn load_dataset(manifest: &Path, cfg: &PipelineConfig) -> Result<(Dataset, Vec<String>)> {
    let text = std::fs::read_to_string(manifest)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", manifest.display())))?;
    let dir = manifest.parent().unwrap_or_else(|| Path::new("."));
    let file = manifest.display().to_string();

    let mut epoch = 0.0;
    let mut feature_dim: Option<usize> = None;
    let mut cameras: Vec<(CameraId, PathBuf, PathBuf)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[0] {
            "epoch" if fields.len() == 2 => {
                epoch = parse_f64(fields[1], &file, line_no, "epoch")?;
            }
            "feature_dim" if fields.len() == 2 => {
                let d: usize = fields[1].parse().map_err(|_| {
                    Error::format(&file, line_no, format!("bad feature_dim `{}`", fields[1]))
                })?;
                feature_dim = Some(d);
            }
            "camera" if fields.len() == 4 => {
                let id: u32 = fields[1].parse().map_err(|_| {
                    Error::format(&file, line_no, format!("bad camera id `{}`", fields[1]))
                })?;
                if cameras.iter().any(|(c, _, _)| c.0 == id) {
                    return Err(Error::format(&file, line_no, format!("duplicate camera {id}")));
                }
                cameras.push((CameraId(id), dir.join(fields[2]), dir.join(fields[3])));
            }
            key => {
                return Err(Error::format(
                    &file,
                    line_no,
                    format!("unrecognized manifest entry `{key}`"),
                ));
            }
        }
    }
    let feature_dim =
        feature_dim.ok_or_else(|| Error::invalid(format!("{file}: missing feature_dim")))?;

    let mut dataset = Dataset {
        epoch,
        feature_dim,
        tracklets: BTreeMap::new(),
    };
    let mut warnings = Vec::new();
    for (camera, tracks_path, feat_path) in cameras {
        let features = load_features(&feat_path, feature_dim, cfg, &mut warnings)?;
        let tracklets = load_tracklets(&tracks_path, camera, &features, &mut warnings)?;
        dataset.tracklets.insert(camera, tracklets);
    }
    Ok((dataset, warnings))
}

fn load_features(
    path: &Path,
    expected_dim: usize,
    cfg: &PipelineConfig,
    warnings: &mut Vec<String>,
) -> Result<Vec<FeatureVector>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    let file = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (dim, count) = loop {
        let (idx, raw) = lines
            .next()
            .ok_or_else(|| Error::invalid(format!("{file}: empty feature file")))?;
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::format(&file, idx + 1, "expected `dim count` header"));
        }
        let dim: usize = fields[0]
            .parse()
            .map_err(|_| Error::format(&file, idx + 1, "bad dimension in header"))?;
        let count: usize = fields[1]
            .parse()
            .map_err(|_| Error::format(&file, idx + 1, "bad count in header"))?;
        break (dim, count);
    };
    if dim != expected_dim {
        return Err(Error::invalid(format!(
            "{file}: feature dimension {dim} does not match manifest feature_dim {expected_dim}"
        )));
    }
    let mut features = Vec::with_capacity(count);
    let mut off_unit = 0usize;
    for (idx, raw) in lines {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let mut values = Vec::with_capacity(dim);
        for field in line.split_whitespace() {
            values.push(parse_f64(field, &file, idx + 1, "feature value")?);
        }
        if values.len() != dim {
            return Err(Error::format(
                &file,
                idx + 1,
                format!("expected {dim} values, found {}", values.len()),
            ));
        }
        let vector = if cfg.normalize_features {
            let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-3 {
                off_unit += 1;
            }
            FeatureVector::unit(&values)
        } else {
            FeatureVector::raw(&values)
        }
        .map_err(|e| Error::format(&file, idx + 1, e.to_string()))?;
        features.push(vector);
    }
    if features.len() != count {
        return Err(Error::invalid(format!(
            "{file}: header promised {count} vectors, found {}",
            features.len()
        )));
    }
    if off_unit > 0 {
        warnings.push(format!("{file}: renormalized {off_unit} non-unit descriptors"));
    }
    Ok(features)
}

fn load_tracklets(
    path: &Path,
    camera: CameraId,
    features: &[FeatureVector],
    warnings: &mut Vec<String>,
) -> Result<Vec<Tracklet>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    let file = path.display().to_string();
    let mut per_person: BTreeMap<PersonLabel, Vec<Observation>> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 8 {
            return Err(Error::format(
                &file,
                line_no,
                format!("expected 8 fields, found {}", fields.len()),
            ));
        }
        let cam: u32 = fields[0]
            .parse()
            .map_err(|_| Error::format(&file, line_no, format!("bad camera id `{}`", fields[0])))?;
        if cam != camera.0 {
            return Err(Error::format(
                &file,
                line_no,
                format!("row belongs to camera {cam}, file belongs to camera {}", camera.0),
            ));
        }
        let person: u32 = fields[1]
            .parse()
            .map_err(|_| Error::format(&file, line_no, format!("bad person id `{}`", fields[1])))?;
        let timestamp = parse_f64(fields[2], &file, line_no, "timestamp")?;
        let x = parse_f64(fields[3], &file, line_no, "x")?;
        let y = parse_f64(fields[4], &file, line_no, "y")?;
        let w = parse_f64(fields[5], &file, line_no, "width")?;
        let h = parse_f64(fields[6], &file, line_no, "height")?;
        let feature_index: usize = fields[7].parse().map_err(|_| {
            Error::format(&file, line_no, format!("bad feature index `{}`", fields[7]))
        })?;
        let feature = features.get(feature_index).cloned().ok_or_else(|| {
            Error::format(
                &file,
                line_no,
                format!("feature index {feature_index} out of range ({} rows)", features.len()),
            )
        })?;
        per_person.entry(PersonLabel(person)).or_default().push(Observation {
            camera,
            timestamp,
            feature,
            bbox: BoundingBox { x, y, w, h },
        });
    }

    let mut tracklets = Vec::new();
    let mut reordered = 0usize;
    for (person, mut observations) in per_person {
        if observations.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
            reordered += 1;
        }
        observations.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let mut run: Vec<Observation> = Vec::new();
        for obs in observations {
            let split = run
                .last()
                .is_some_and(|prev| obs.timestamp - prev.timestamp > TRACKLET_SPLIT_GAP);
            if split {
                tracklets.push(finish_tracklet(camera, person, std::mem::take(&mut run)));
            }
            run.push(obs);
        }
        if !run.is_empty() {
            tracklets.push(finish_tracklet(camera, person, run));
        }
    }
    if reordered > 0 {
        warnings.push(format!("{file}: re-sorted observations of {reordered} persons"));
    }
    tracklets.sort_by(|a, b| {
        a.entry_time()
            .total_cmp(&b.entry_time())
            .then(a.person.cmp(&b.person))
    });
    for t in &tracklets {
        validate_tracklet(t).map_err(|e| Error::invalid(format!("{file}: {e}")))?;
    }
    Ok(tracklets)
}

fn finish_tracklet(camera: CameraId, person: PersonLabel, observations: Vec<Observation>) -> Tracklet {
    let entry_point = observations.first().map(|o| o.bbox.center()).unwrap_or((0.0, 0.0));
    let exit_point = observations.last().map(|o| o.bbox.center()).unwrap_or((0.0, 0.0));
    Tracklet {
        camera,
        person,
        observations,
        entry_point,
        exit_point,
    }
}

/// Writes `dataset` into `dir` as `<name>.manifest` plus per-camera tracklet
/// and feature files, and returns the manifest path. Timestamps are written
/// with millisecond, positions with centipixel, and features with 1e-5
/// precision, so a load/save cycle reproduces the files byte for byte (when
/// loading without feature normalization).
pub fn save_dataset(dataset: &Dataset, dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "epoch {:.3}", dataset.epoch);
    let _ = writeln!(manifest, "feature_dim {}", dataset.feature_dim);
    for (camera, tracklets) in &dataset.tracklets {
        let tracks_name = format!("{name}_cam{}.tracks", camera.0);
        let feat_name = format!("{name}_cam{}.feat", camera.0);
        let _ = writeln!(manifest, "camera {} {tracks_name} {feat_name}", camera.0);

        let mut rows = String::new();
        let mut vectors = String::new();
        let mut feature_index = 0usize;
        for t in tracklets {
            for o in &t.observations {
                let _ = writeln!(
                    rows,
                    "{},{},{:.3},{:.2},{:.2},{:.2},{:.2},{}",
                    camera.0, t.person.0, o.timestamp, o.bbox.x, o.bbox.y, o.bbox.w, o.bbox.h,
                    feature_index
                );
                let mut line = String::new();
                for (i, v) in o.feature.values().iter().enumerate() {
                    if i > 0 {
                        line.push(' ');
                    }
                    let _ = write!(line, "{v:.5}");
                }
                vectors.push_str(&line);
                vectors.push('\n');
                feature_index += 1;
            }
        }
        let header = format!("{} {}\n", dataset.feature_dim, feature_index);
        std::fs::write(dir.join(&tracks_name), rows)?;
        std::fs::write(dir.join(&feat_name), header + &vectors)?;
    }
    let path = dir.join(format!("{name}.manifest"));
    std::fs::write(&path, manifest)?;
    Ok(path)
}

/// Picks up to `cap` observation indices spreading over the tracklet's
/// appearance variety: the temporally first observation, then greedily the
/// observation farthest (in feature space) from everything already chosen.
/// Indices come back in time order.
pub fn select_key_appearances(tracklet: &Tracklet, cap: usize) -> Vec<usize> {
    let n = tracklet.observations.len();
    if cap == 0 || n == 0 {
        return Vec::new();
    }
    if n <= cap {
        return (0..n).collect();
    }
    let feature = |i: usize| &tracklet.observations[i].feature;
    let mut chosen = vec![false; n];
    let mut selected = Vec::with_capacity(cap);
    selected.push(0);
    chosen[0] = true;
    let mut min_d: Vec<f64> = (0..n).map(|i| feature(i).distance(feature(0))).collect();
    while selected.len() < cap {
        let mut best = None;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_d.iter().enumerate() {
            if !chosen[i] && d > best_d {
                best_d = d;
                best = Some(i);
            }
        }
        let Some(pick) = best else { break };
        selected.push(pick);
        chosen[pick] = true;
        for i in 0..n {
            let d = feature(i).distance(feature(pick));
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
    }
    selected.sort_unstable();
    selected
}

/// Builds series inputs for a slice of tracklets, selecting each one's key
/// appearances with cap `cfg.key_appearance_cap`.
pub fn key_inputs<'a>(tracklets: &'a [Tracklet], cfg: &PipelineConfig) -> Vec<SeriesInput<'a>> {
    tracklets
        .iter()
        .map(|t| SeriesInput::new(t, select_key_appearances(t, cfg.key_appearance_cap)))
        .collect()
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => line[..i].trim(),
        None => line.trim(),
    }
}

fn parse_f64(field: &str, file: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::format(file, line, format!("bad {what} `{field}`")))?;
    if !v.is_finite() {
        return Err(Error::format(file, line, format!("non-finite {what} `{field}`")));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn cfg() -> PipelineConfig {
        PipelineConfig::default()
    }

    fn sample_dataset() -> Dataset {
        let mut tracklets = BTreeMap::new();
        for cam in [1u32, 2] {
            let mut list = Vec::new();
            for person in 0..3u32 {
                let base = person as f64 * 40.0 + cam as f64;
                let observations: Vec<Observation> = (0..4)
                    .map(|i| Observation {
                        camera: CameraId(cam),
                        timestamp: base + i as f64 * 2.0,
                        feature: FeatureVector::unit(&[
                            1.0 + person as f64,
                            0.5 * i as f64 + 0.1,
                            cam as f64,
                        ])
                        .unwrap(),
                        bbox: BoundingBox {
                            x: 10.0 * person as f64,
                            y: 20.0,
                            w: 8.0,
                            h: 16.0,
                        },
                    })
                    .collect();
                list.push(finish_tracklet(CameraId(cam), PersonLabel(person), observations));
            }
            tracklets.insert(CameraId(cam), list);
        }
        Dataset {
            epoch: 0.0,
            feature_dim: 3,
            tracklets,
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("a");
        let second = dir.path().join("b");
        let dataset = sample_dataset();
        let manifest = save_dataset(&dataset, &first, "run").unwrap();
        let mut no_norm = cfg();
        no_norm.normalize_features = false;
        let (loaded, warnings) = load_dataset(&manifest, &no_norm).unwrap();
        assert!(warnings.is_empty(), "{warnings:?}");
        save_dataset(&loaded, &second, "run").unwrap();
        for file in ["run.manifest", "run_cam1.tracks", "run_cam1.feat", "run_cam2.feat"] {
            let a = std::fs::read(first.join(file)).unwrap();
            let b = std::fs::read(second.join(file)).unwrap();
            assert_eq!(a, b, "{file} differs after a load/save cycle");
        }
    }

    #[test]
    fn observations_split_on_large_time_gaps() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("one.manifest"),
            "feature_dim 2\ncamera 1 one.tracks one.feat\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("one.feat"), "2 4\n1 0\n1 0\n1 0\n1 0\n").unwrap();
        // Gaps: 10.0 (kept together), 10.5 (split).
        std::fs::write(
            dir.path().join("one.tracks"),
            "1,7,0.0,0,0,4,8,0\n1,7,10.0,0,0,4,8,1\n1,7,20.5,0,0,4,8,2\n1,7,22.0,0,0,4,8,3\n",
        )
        .unwrap();
        let (ds, _) = load_dataset(&dir.path().join("one.manifest"), &cfg()).unwrap();
        let tracklets = &ds.tracklets[&CameraId(1)];
        assert_eq!(tracklets.len(), 2);
        assert_eq!(tracklets[0].appearance_count(), 2);
        assert_eq!(tracklets[0].exit_time(), 10.0);
        assert_eq!(tracklets[1].entry_time(), 20.5);
    }

    #[test]
    fn malformed_rows_report_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("bad.manifest"),
            "feature_dim 2\ncamera 1 bad.tracks bad.feat\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("bad.feat"), "2 1\n1 0\n").unwrap();
        std::fs::write(
            dir.path().join("bad.tracks"),
            "1,1,0.0,0,0,4,8,0\n1,1,not_a_time,0,0,4,8,0\n",
        )
        .unwrap();
        let err = load_dataset(&dir.path().join("bad.manifest"), &cfg()).unwrap_err();
        match err {
            Error::Format { line, ref file, .. } => {
                assert_eq!(line, 2);
                assert!(file.ends_with("bad.tracks"), "{file}");
            }
            other => panic!("expected a format error, got {other}"),
        }
    }

    #[test]
    fn out_of_range_feature_index_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("oob.manifest"),
            "feature_dim 2\ncamera 1 oob.tracks oob.feat\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("oob.feat"), "2 1\n1 0\n").unwrap();
        std::fs::write(dir.path().join("oob.tracks"), "1,1,0.0,0,0,4,8,5\n").unwrap();
        let err = load_dataset(&dir.path().join("oob.manifest"), &cfg()).unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");
    }

    #[test]
    fn unknown_manifest_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("u.manifest"), "feature_dim 2\nfps 30\n").unwrap();
        let err = load_dataset(&dir.path().join("u.manifest"), &cfg()).unwrap_err();
        assert!(err.to_string().contains("unrecognized"), "{err}");
    }

    #[test]
    fn loader_warns_about_non_unit_descriptors() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("w.manifest"),
            "feature_dim 2\ncamera 1 w.tracks w.feat\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("w.feat"), "2 1\n3 4\n").unwrap();
        std::fs::write(dir.path().join("w.tracks"), "1,1,0.0,0,0,4,8,0\n").unwrap();
        let (ds, warnings) = load_dataset(&dir.path().join("w.manifest"), &cfg()).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("renormalized 1"), "{warnings:?}");
        let t = &ds.tracklets[&CameraId(1)][0];
        assert!((t.observations[0].feature.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn key_selection_keeps_small_tracklets_whole() {
        let ds = sample_dataset();
        let t = &ds.tracklets[&CameraId(1)][0];
        assert_eq!(select_key_appearances(t, 30), vec![0, 1, 2, 3]);
        assert_eq!(select_key_appearances(t, 4), vec![0, 1, 2, 3]);
    }

    #[test]
    fn key_selection_spreads_over_distinct_appearances() {
        // Ten near-duplicates of look A, then one very different look B: a
        // budget of two must keep one of each rather than two As.
        let observations: Vec<Observation> = (0..11)
            .map(|i| {
                let raw = if i < 10 {
                    vec![1.0, 0.001 * i as f64]
                } else {
                    vec![0.0, 1.0]
                };
                Observation {
                    camera: CameraId(1),
                    timestamp: i as f64,
                    feature: FeatureVector::unit(&raw).unwrap(),
                    bbox: BoundingBox { x: 0.0, y: 0.0, w: 4.0, h: 8.0 },
                }
            })
            .collect();
        let t = finish_tracklet(CameraId(1), PersonLabel(1), observations);
        let picked = select_key_appearances(&t, 2);
        assert_eq!(picked, vec![0, 10]);
        // The order is temporal even though selection order differs.
        let picked = select_key_appearances(&t, 3);
        assert_eq!(picked[0], 0);
        assert!(picked.windows(2).all(|w| w[0] < w[1]));
        assert!(picked.contains(&10));
    }
}
