#![no_main]

use libfuzzer_sys::fuzz_target;

// The binary trajectory decoder must reject arbitrary input without
// panicking or allocating from an unvalidated header.
fuzz_target!(|data: &[u8]| {
    if let Ok(traj) = gmfe::simulator::decode_trajectories(data) {
        // a successful decode implies a digest match and finite positions
        assert!(traj.positions_raw().iter().all(|v| v.is_finite()));
    }
});
