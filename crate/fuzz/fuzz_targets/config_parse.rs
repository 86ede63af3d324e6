#![no_main]

use libfuzzer_sys::fuzz_target;
use simplex_tf::experiments::ExperimentConfig;

fuzz_target!(|data: &str| {
    // Anything that parses must survive a print/parse round trip unchanged.
    if let Ok(cfg) = data.parse::<ExperimentConfig>() {
        let again: ExperimentConfig = cfg.to_string().parse().expect("printed config parses");
        assert_eq!(again, cfg);
    }
});
