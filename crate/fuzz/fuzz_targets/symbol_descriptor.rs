#![no_main]

use libfuzzer_sys::fuzz_target;
use simplex_tf::symbols::SymbolDescriptor;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(d) = SymbolDescriptor::from_json(text) {
        let again = SymbolDescriptor::from_json(&d.to_json()).expect("serialised descriptor parses");
        assert_eq!(again, d);
    }
});
