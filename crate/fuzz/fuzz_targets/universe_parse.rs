#![no_main]

use libfuzzer_sys::fuzz_target;
use simplex_tf::tiles::Universe;

fuzz_target!(|data: &str| {
    if let Ok(u) = data.parse::<Universe>() {
        let again: Universe = u.to_string().parse().expect("printed universe parses");
        assert_eq!(again.0, u.0);
    }
});
