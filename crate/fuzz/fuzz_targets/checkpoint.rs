#![no_main]

use libfuzzer_sys::fuzz_target;

// Binary checkpoint decoder: truncation, corruption and hostile dimension
// claims must all come back as Err.
fuzz_target!(|data: &[u8]| {
    let _ = omqa::checkpoint::load(data);
});
