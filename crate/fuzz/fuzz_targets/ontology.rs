#![no_main]

use libfuzzer_sys::fuzz_target;
use omqa::kg::SymbolTable;
use omqa::ontology::load_ontology;

fuzz_target!(|data: &[u8]| {
    let mut symbols = SymbolTable::new();
    let _ = load_ontology(data, &mut symbols);
});
