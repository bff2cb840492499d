//! Replays the fuzz corpus through every parser, plus a seeded mutation
//! sweep, so `cargo test` exercises the same no-panic promise the fuzz
//! targets make.

use std::fs;
use std::path::PathBuf;

use omqa::kg::SymbolTable;
use omqa::rng::Rng;

fn corpus(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out = Vec::new();
    for entry in fs::read_dir(&dir).unwrap_or_else(|_| panic!("corpus dir {dir:?}")) {
        out.push(fs::read(entry.unwrap().path()).unwrap());
    }
    assert!(!out.is_empty(), "empty corpus for {target}");
    out
}

fn drive(target: &str, input: &[u8]) {
    match target {
        "triples" => {
            let mut symbols = SymbolTable::new();
            let _ = omqa::kg::load_triples(input, &mut symbols);
        }
        "ontology" => {
            let mut symbols = SymbolTable::new();
            let _ = omqa::ontology::load_ontology(input, &mut symbols);
        }
        "query_line" => {
            if let Ok(line) = std::str::from_utf8(input) {
                let mut symbols = SymbolTable::new();
                if let Ok(parsed) = omqa::query::parse_query_line(line, &mut symbols) {
                    let _ = omqa::query::canonical_form(&parsed.query);
                    let g = omqa::kg::KnowledgeGraph::default();
                    let _ = omqa::query::answers(&parsed.query, &g);
                }
            }
        }
        "train_config" => {
            if let Ok(text) = std::str::from_utf8(input) {
                let _ = omqa::trainer::TrainConfig::parse(text);
            }
        }
        "checkpoint" => {
            let _ = omqa::checkpoint::load(input);
        }
        _ => unreachable!(),
    }
}

#[test]
fn corpus_seeds_and_mutations_never_panic() {
    let targets = ["triples", "ontology", "query_line", "train_config", "checkpoint"];
    let mut rng = Rng::seeded(0xF0CC);
    for target in targets {
        let seeds = corpus(target);
        for seed in &seeds {
            drive(target, seed);
        }
        // seeded byte-level mutations of each seed
        for round in 0..400 {
            let mut input = seeds[round % seeds.len()].clone();
            for _ in 0..(1 + rng.below(8)) {
                match rng.below(3) {
                    0 if !input.is_empty() => {
                        let i = rng.below(input.len());
                        input[i] = rng.next_u64() as u8;
                    }
                    1 => {
                        let i = rng.below(input.len() + 1);
                        input.insert(i, rng.next_u64() as u8);
                    }
                    _ if !input.is_empty() => {
                        input.truncate(rng.below(input.len()));
                    }
                    _ => {}
                }
            }
            drive(target, &input);
        }
    }
}
