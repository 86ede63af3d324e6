use simplex_tf::experiments::{self, ExperimentConfig, ExperimentKind};

fn csv_in_pool(cfg: &ExperimentConfig, threads: usize) -> String {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| experiments::run(cfg).unwrap().csv_string().unwrap())
}

#[test]
fn csv_is_identical_across_reruns_and_pool_sizes() {
    let mixed = ExperimentConfig { n_values: vec![64], seed_count: 6, contrast: false, ..ExperimentConfig::preset(ExperimentKind::MixedRatio) };
    let audit = ExperimentConfig { seed_count: 2, ..ExperimentConfig::preset(ExperimentKind::DecompositionAudit) };
    for cfg in [mixed, audit] {
        let reference = csv_in_pool(&cfg, 1);
        assert!(reference.lines().count() > 1, "{}", cfg.kind);
        for threads in [1, 3, 8] {
            assert_eq!(csv_in_pool(&cfg, threads), reference, "{} with {threads} threads", cfg.kind);
        }
    }
}
