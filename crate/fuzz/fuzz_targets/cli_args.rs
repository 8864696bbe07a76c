#![no_main]

use libfuzzer_sys::fuzz_target;

// Small CLI argument grammars: grid specs, evaluation points, bandwidths.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = gmfe::cli::parse_grid_spec(text);
        let _ = gmfe::cli::parse_at(text);
        let _ = gmfe::cli::parse_bandwidths(text);
    }
});
