use camtopo::config::PipelineConfig;
use camtopo::sim::ScenarioSpec;
use camtopo::topology::initialize_topology;

fn main() {
    for seed in [3u64, 5, 7, 9] {
        let mut spec = ScenarioSpec::drift_pair(seed);
        spec.changes.clear();
        spec.online_duration = 0.0;
        let out = camtopo::sim::generate(&spec).unwrap();
        let init = initialize_topology(&out.init, &PipelineConfig::default()).unwrap();
        println!(
            "seed {seed}: edges {}, valid {:?}",
            init.topology.edges.len(),
            init.topology.valid
        );
        for (k, s) in init.topology.edges.iter() {
            let m = s.distribution.model.as_ref();
            println!(
                "  {}->{} conf {:.3} model {:?} samples {}",
                k.0,
                k.1,
                s.distribution.confidence,
                m.map(|m| (m.mu, m.sigma, m.fit_error)),
                s.distribution.sample_count()
            );
        }
    }
}
