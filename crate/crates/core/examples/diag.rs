use camtopo::config::PipelineConfig;
use camtopo::sim::ScenarioSpec;
use camtopo::topology::initialize_topology;
use camtopo::types::ZoneKey;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seeds: Vec<u64> = args
        .iter()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let seeds = if seeds.is_empty() { vec![0] } else { seeds };
    let people: usize = std::env::var("DIAG_PEOPLE")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0);
    let duration: f64 = std::env::var("DIAG_DURATION")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0.0);
    for seed in seeds {
        let mut spec = ScenarioSpec::corridor_default(seed);
        if people > 0 {
            spec.person_count = people;
        }
        if duration > 0.0 {
            spec.init_duration = duration;
        }
        let out = camtopo::sim::generate(&spec).unwrap();
        let cfg = PipelineConfig::default();
        let start = std::time::Instant::now();
        let init = initialize_topology(&out.init, &cfg).unwrap();
        let elapsed = start.elapsed().as_secs_f64();
        let zone_center = |key: &ZoneKey| {
            init.zones[&key.camera]
                .iter()
                .find(|z| z.zone_id == key.zone)
                .map(|z| z.center)
                .unwrap()
        };
        let spec_center = |cam: u32, zone: u32| {
            let c = spec.cameras.iter().find(|c| c.id == cam).unwrap();
            let z = c.zones.iter().find(|z| z.id == zone).unwrap();
            (z.center[0], z.center[1])
        };
        let mut found = std::collections::BTreeSet::new();
        let mut spurious = 0usize;
        let mut errs = Vec::new();
        for key in &init.topology.valid {
            let (fx, fy) = zone_center(&key.0);
            let (tx, ty) = zone_center(&key.1);
            let mut matched = None;
            for (i, l) in out.truth.links.iter().enumerate() {
                let (sfx, sfy) = spec_center(l.from.camera.0, l.from.zone);
                let (stx, sty) = spec_center(l.to.camera.0, l.to.zone);
                let d = (fx - sfx).hypot(fy - sfy) + (tx - stx).hypot(ty - sty);
                if key.0.camera == l.from.camera && key.1.camera == l.to.camera && d < 200.0 {
                    matched = Some(i);
                    break;
                }
            }
            match matched {
                Some(i) => {
                    found.insert(i);
                    let mu = init.topology.edges[key]
                        .distribution
                        .model
                        .as_ref()
                        .unwrap()
                        .mu;
                    errs.push((mu - out.truth.links[i].mu).abs());
                }
                None => spurious += 1,
            }
        }
        let mean_err = errs.iter().sum::<f64>() / errs.len().max(1) as f64;
        let max_err = errs.iter().cloned().fold(0.0f64, f64::max);
        println!(
            "seed {seed}: found {}/{} links, {} spurious, mu err mean {mean_err:.3} max {max_err:.3}, {:.1}s",
            found.len(),
            out.truth.links.len(),
            spurious,
            elapsed
        );
    }
}
