#![no_main]

use libfuzzer_sys::fuzz_target;
use omqa::kg::{load_triples, SymbolTable};

// TSV triple parser: arbitrary bytes must produce Ok or Err, never a panic.
fuzz_target!(|data: &[u8]| {
    let mut symbols = SymbolTable::new();
    let _ = load_triples(data, &mut symbols);
});
