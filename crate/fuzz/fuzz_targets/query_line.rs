#![no_main]

use libfuzzer_sys::fuzz_target;
use omqa::kg::{KnowledgeGraph, SymbolTable};
use omqa::query::{answers, canonical_form, parse_query_line};

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    let mut symbols = SymbolTable::new();
    if let Ok(parsed) = parse_query_line(line, &mut symbols) {
        // accepted queries must survive the downstream paths
        let _ = canonical_form(&parsed.query);
        let g = KnowledgeGraph::default();
        let _ = answers(&parsed.query, &g);
    }
});
