//! End-to-end desk-scale pipeline on a generated university-domain KG:
//! split → closure → sampling (all four strategies) → training of the plain
//! baseline and the ontology-aware model → A/B/C evaluation → comparison
//! table. Every artifact is written under one output directory and is
//! byte-reproducible from the seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{evaluate, evaluate_rewriting_baseline, MetricsRow, MetricsTable, RankRecord};
use crate::kg::{load_triples, split, stats, write_triples, SymbolTable};
use crate::model::Parameters;
use crate::ontology::{load_ontology, saturate};
use crate::query::{canonical_form, record_to_line, Shape};
use crate::rng::{digest, Rng};
use crate::sampler::{
    build_eval, eval_sample_record, sample_certain, sample_onto, sample_plain,
    train_sample_record, CertainMode, EvalCase, EvalGraphs, EvalSample, OntoCaps, TrainSample,
};
use crate::trainer::{train, Objective, TrainConfig};

#[derive(Debug, Clone)]
pub struct DemoConfig {
    pub seed: u64,
    /// training steps per model (desk preset uses 20000)
    pub steps: usize,
    /// parallel training runs
    pub threads: usize,
    pub train_per_shape: usize,
    pub eval_per_shape: usize,
    pub valid_per_shape: usize,
    pub onto_caps: OntoCaps,
    /// generalization depth attached to strategic samples
    pub gen_depth: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            seed: 42,
            steps: 20_000,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            train_per_shape: 150,
            eval_per_shape: 40,
            valid_per_shape: 10,
            onto_caps: OntoCaps { per_shape: 2500, data_patterns_per_shape: 400 },
            gen_depth: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoReport {
    /// HITS@3 and friends per case A/B/C
    pub q2b_plain: [MetricsRow; 3],
    pub o2b_onto: [MetricsRow; 3],
    /// rewriting baseline over the plain model, cases B and C
    pub rew_plain_b: MetricsRow,
    pub rew_plain_c: MetricsRow,
}

const ONTOLOGY_TEXT: &str = "\
# university-domain schema
sub_concept AProfessor Professor
sub_concept Professor Faculty
sub_concept Faculty Person
sub_concept GradStudent Student
sub_concept Student Person
sub_role teachesAt worksFor
sub_role managesAt worksFor
sub_role headOf worksFor
sub_role worksFor affiliatedTo
sub_role memberOf affiliatedTo
sub_role affiliatedWith affiliatedTo
inv_sub_role degreeFrom hasAlumnus
inv_sub_role hasAlumnus degreeFrom
range teachesAt University
range degreeFrom University
domain worksFor Person
domain degreeFrom Person
domain hasAlumnus University
";

/// Deterministic university-domain KG of roughly two thousand triples.
pub fn generate_mini_kg(seed: u64) -> String {
    let root = Rng::seeded(seed).derive("minikg");
    let mut rng = root.clone();
    let mut lines: Vec<String> = Vec::new();
    let push = |h: String, r: &str, t: String, lines: &mut Vec<String>| {
        lines.push(format!("{h}\t{r}\t{t}"));
    };

    let unis: Vec<String> = (0..8).map(|i| format!("uni{i}")).collect();
    let depts: Vec<String> = (0..14).map(|i| format!("dept{i}")).collect();
    let comps: Vec<String> = (0..10).map(|i| format!("corp{i}")).collect();
    let profs: Vec<String> = (0..80).map(|i| format!("prof{i}")).collect();
    let studs: Vec<String> = (0..220).map(|i| format!("stud{i}")).collect();
    let courses: Vec<String> = (0..30).map(|i| format!("course{i}")).collect();
    let managers: Vec<String> = (0..25).map(|i| format!("mgr{i}")).collect();
    let cities: Vec<String> = (0..6).map(|i| format!("city{i}")).collect();

    for u in &unis {
        push(u.clone(), "type", "University".into(), &mut lines);
        let c = rng.choose(&cities).unwrap().clone();
        push(u.clone(), "locatedIn", c, &mut lines);
    }
    for d in &depts {
        let u = rng.choose(&unis).unwrap().clone();
        push(d.clone(), "subOrgOf", u, &mut lines);
        if rng.chance(0.7) {
            push(d.clone(), "type", "Department".into(), &mut lines);
        }
    }
    for c in &comps {
        if rng.chance(0.8) {
            push(c.clone(), "type", "Company".into(), &mut lines);
        }
    }
    for crs in &courses {
        if rng.chance(0.6) {
            push(crs.clone(), "type", "Course".into(), &mut lines);
        }
    }
    for p in &profs {
        let roll = rng.uniform();
        if roll < 0.4 {
            push(p.clone(), "type", "AProfessor".into(), &mut lines);
        } else if roll < 0.7 {
            push(p.clone(), "type", "Professor".into(), &mut lines);
        }
        if rng.chance(0.9) {
            let n = 1 + usize::from(rng.chance(0.3));
            for _ in 0..n {
                let u = rng.choose(&unis).unwrap().clone();
                push(p.clone(), "teachesAt", u, &mut lines);
            }
        }
        // explicit employment is rare; the closure supplies the rest
        if rng.chance(0.15) {
            let u = rng.choose(&unis).unwrap().clone();
            push(p.clone(), "worksFor", u, &mut lines);
        }
        if rng.chance(0.7) {
            let d = rng.choose(&depts).unwrap().clone();
            push(p.clone(), "memberOf", d, &mut lines);
        }
        if rng.chance(0.7) {
            let n = 1 + usize::from(rng.chance(0.2));
            for _ in 0..n {
                let u = rng.choose(&unis).unwrap().clone();
                push(p.clone(), "degreeFrom", u, &mut lines);
            }
        }
        if rng.chance(0.1) {
            let d = rng.choose(&depts).unwrap().clone();
            push(p.clone(), "headOf", d, &mut lines);
        }
        for _ in 0..rng.below(3) {
            let s = rng.choose(&studs).unwrap().clone();
            push(p.clone(), "advisorOf", s, &mut lines);
        }
        let n = 1 + usize::from(rng.chance(0.5));
        for _ in 0..n {
            let c = rng.choose(&courses).unwrap().clone();
            push(p.clone(), "teachesCourse", c, &mut lines);
        }
    }
    for s in &studs {
        let roll = rng.uniform();
        if roll < 0.3 {
            push(s.clone(), "type", "GradStudent".into(), &mut lines);
        } else if roll < 0.6 {
            push(s.clone(), "type", "Student".into(), &mut lines);
        }
        if rng.chance(0.8) {
            let d = rng.choose(&depts).unwrap().clone();
            push(s.clone(), "memberOf", d, &mut lines);
        }
        for _ in 0..(1 + rng.below(3)) {
            let c = rng.choose(&courses).unwrap().clone();
            push(s.clone(), "takesCourse", c, &mut lines);
        }
        if rng.chance(0.25) {
            let u = rng.choose(&unis).unwrap().clone();
            push(s.clone(), "degreeFrom", u, &mut lines);
        }
        if rng.chance(0.4) {
            let u = rng.choose(&unis).unwrap().clone();
            push(s.clone(), "affiliatedWith", u, &mut lines);
        }
    }
    for m in &managers {
        let c = rng.choose(&comps).unwrap().clone();
        push(m.clone(), "managesAt", c, &mut lines);
        if rng.chance(0.2) {
            push(m.clone(), "type", "Person".into(), &mut lines);
        }
    }
    // a little explicit hasAlumnus so the relation is not purely inferred
    for _ in 0..15 {
        let u = rng.choose(&unis).unwrap().clone();
        let p = rng.choose(&profs).unwrap().clone();
        push(u, "hasAlumnus", p, &mut lines);
    }
    lines.join("\n") + "\n"
}

fn write_samples(
    path: &Path,
    samples: &[TrainSample],
    symbols: &SymbolTable,
) -> Result<()> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&record_to_line(&train_sample_record(s, symbols)));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_eval(path: &Path, samples: &[EvalSample], symbols: &SymbolTable) -> Result<()> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&record_to_line(&eval_sample_record(s, symbols)));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn case_rows(table: &MetricsTable) -> [MetricsRow; 3] {
    ["A", "B", "C"].map(|c| table.get(c, "all").unwrap_or_default())
}

struct TrainedModel {
    name: &'static str,
    params: Parameters,
    manifest: String,
}

#[allow(clippy::too_many_arguments)]
fn run_model(
    name: &'static str,
    cfg: TrainConfig,
    samples: &[TrainSample],
    valid: &[EvalSample],
    symbols: &SymbolTable,
    inputs: &BTreeMap<String, String>,
    threads: usize,
) -> Result<TrainedModel> {
    let (params, manifest) = train(&cfg, samples, valid, symbols, inputs, threads)?;
    Ok(TrainedModel { name, params, manifest: manifest.render() })
}

/// Run the whole pipeline under `out_dir`. Returns the per-case metrics for
/// both models and the rewriting baseline.
pub fn run_demo(out_dir: &Path, cfg: &DemoConfig) -> Result<DemoReport> {
    fs::create_dir_all(out_dir)?;
    for sub in ["splits", "samples", "eval", "models", "metrics"] {
        fs::create_dir_all(out_dir.join(sub))?;
    }

    // 1. generate and load
    let kg_text = generate_mini_kg(cfg.seed);
    fs::write(out_dir.join("kg.tsv"), &kg_text)?;
    fs::write(out_dir.join("schema.onto"), ONTOLOGY_TEXT)?;
    let mut symbols = SymbolTable::new();
    let g = load_triples(Cursor::new(kg_text.as_str()), &mut symbols)?;
    let onto = load_ontology(Cursor::new(ONTOLOGY_TEXT), &mut symbols)?;

    // 2. nested split
    let bundle = split(&g, 0.1, Rng::seeded(cfg.seed).derive("split").next_u64())?;
    for (name, graph) in [
        ("train", &bundle.g_train),
        ("valid", &bundle.g_valid),
        ("test", &bundle.g_test),
    ] {
        let mut buf = Vec::new();
        write_triples(graph, &symbols, &mut buf)?;
        fs::write(out_dir.join("splits").join(format!("{name}.tsv")), buf)?;
    }

    // 3. closures
    let sat_train = saturate(&bundle.g_train, &onto, &symbols);
    let sat_valid = saturate(&bundle.g_valid, &onto, &symbols);
    let sat_test = saturate(&bundle.g_test, &onto, &symbols);
    {
        let mut s = stats(&bundle.g_train);
        s.axioms = Some(onto.len());
        s.closure_triples = Some(sat_train.len());
        fs::write(out_dir.join("stats.txt"), format!("{s}\n"))?;
    }

    // 4. training samples, all four strategies
    let seed = cfg.seed;
    let plain = sample_plain(&bundle.g_train, &Shape::TRAIN, cfg.train_per_shape, seed)?;
    let gen = sample_certain(
        &bundle.g_train,
        &onto,
        &symbols,
        &Shape::TRAIN,
        cfg.train_per_shape,
        seed,
        CertainMode::Gen,
        2,
    )?;
    let spec = sample_certain(
        &bundle.g_train,
        &onto,
        &symbols,
        &Shape::TRAIN,
        cfg.train_per_shape,
        seed,
        CertainMode::Spec,
        2,
    )?;
    let onto_samples = sample_onto(
        &bundle.g_train,
        &onto,
        &symbols,
        &Shape::TRAIN,
        0.5,
        cfg.onto_caps,
        seed,
        cfg.gen_depth,
    )?;
    write_samples(&out_dir.join("samples/plain.queries"), &plain, &symbols)?;
    write_samples(&out_dir.join("samples/gen.queries"), &gen, &symbols)?;
    write_samples(&out_dir.join("samples/spec.queries"), &spec, &symbols)?;
    write_samples(&out_dir.join("samples/onto.queries"), &onto_samples, &symbols)?;

    // 5. validation and test sets
    let train_canon: BTreeSet<String> = plain
        .iter()
        .chain(&gen)
        .chain(&spec)
        .chain(&onto_samples)
        .map(|s| canonical_form(&s.query))
        .collect();
    let graphs_b = EvalGraphs {
        sample_from: &sat_train,
        easy_from: &bundle.g_train,
        hard_from: &sat_train,
    };
    let valid_b = build_eval(
        EvalCase::B,
        &graphs_b,
        &Shape::ALL,
        cfg.valid_per_shape,
        Rng::seeded(seed).derive("valid_b").next_u64(),
        &train_canon,
    );
    let mut exclude_b: BTreeSet<String> = train_canon.clone();
    exclude_b.extend(valid_b.iter().map(|s| canonical_form(&s.query)));
    let test_b = build_eval(
        EvalCase::B,
        &graphs_b,
        &Shape::ALL,
        cfg.eval_per_shape,
        Rng::seeded(seed).derive("test_b").next_u64(),
        &exclude_b,
    );
    let graphs_a = EvalGraphs {
        sample_from: &bundle.g_test,
        easy_from: &bundle.g_valid,
        hard_from: &bundle.g_test,
    };
    let test_a = build_eval(
        EvalCase::A,
        &graphs_a,
        &Shape::ALL,
        cfg.eval_per_shape,
        Rng::seeded(seed).derive("test_a").next_u64(),
        &BTreeSet::new(),
    );
    let graphs_c = EvalGraphs {
        sample_from: &sat_test,
        easy_from: &sat_valid,
        hard_from: &sat_test,
    };
    let test_c = build_eval(
        EvalCase::C,
        &graphs_c,
        &Shape::ALL,
        cfg.eval_per_shape,
        Rng::seeded(seed).derive("test_c").next_u64(),
        &BTreeSet::new(),
    );
    write_eval(&out_dir.join("eval/valid_B.queries"), &valid_b, &symbols)?;
    write_eval(&out_dir.join("eval/test_A.queries"), &test_a, &symbols)?;
    write_eval(&out_dir.join("eval/test_B.queries"), &test_b, &symbols)?;
    write_eval(&out_dir.join("eval/test_C.queries"), &test_c, &symbols)?;
    if valid_b.is_empty() || test_b.is_empty() {
        return Err(Error::Sampling(
            "generated KG produced no deductive evaluation queries".into(),
        ));
    }

    // 6. train both models (in parallel when allowed)
    let mut inputs = BTreeMap::new();
    inputs.insert("kg".to_string(), digest(kg_text.as_bytes()));
    inputs.insert("ontology".to_string(), digest(ONTOLOGY_TEXT.as_bytes()));
    let mut base = TrainConfig::desk_preset();
    base.max_steps = cfg.steps;
    base.seed = cfg.seed;
    let q2b_cfg = TrainConfig { objective: Objective::Plain, ..base.clone() };
    let o2b_cfg = TrainConfig { objective: Objective::GenWeighted, ..base };

    // the two models train in parallel threads; gradient chunking inside
    // each run keeps results identical for any thread count
    let inner = (cfg.threads / 2).max(1);
    let (q2b, o2b) = if cfg.threads >= 2 {
        std::thread::scope(|scope| {
            let h1 = scope.spawn(|| {
                run_model("q2b_plain", q2b_cfg.clone(), &plain, &valid_b, &symbols, &inputs, inner)
            });
            let h2 = scope.spawn(|| {
                run_model(
                    "o2b_onto",
                    o2b_cfg.clone(),
                    &onto_samples,
                    &valid_b,
                    &symbols,
                    &inputs,
                    inner,
                )
            });
            let a = h1.join().expect("training thread panicked");
            let b = h2.join().expect("training thread panicked");
            (a, b)
        })
    } else {
        (
            run_model("q2b_plain", q2b_cfg, &plain, &valid_b, &symbols, &inputs, 1),
            run_model("o2b_onto", o2b_cfg, &onto_samples, &valid_b, &symbols, &inputs, 1),
        )
    };
    let (q2b, o2b) = (q2b?, o2b?);
    for model in [&q2b, &o2b] {
        let mut buf = Vec::new();
        crate::checkpoint::save(&model.params, &mut buf)?;
        fs::write(out_dir.join("models").join(format!("{}.ckpt", model.name)), buf)?;
        fs::write(
            out_dir.join("models").join(format!("{}.manifest", model.name)),
            &model.manifest,
        )?;
    }

    // 7. evaluate
    let eval_all = |params: &Parameters| -> Result<(MetricsTable, Vec<RankRecord>)> {
        let mut records = Vec::new();
        for set in [&test_a, &test_b, &test_c] {
            let (_, mut r) = evaluate(params, set)?;
            records.append(&mut r);
        }
        Ok((MetricsTable::from_records(&records), records))
    };
    let (q2b_table, _) = eval_all(&q2b.params)?;
    let (o2b_table, _) = eval_all(&o2b.params)?;
    let (rew_b_table, _) =
        evaluate_rewriting_baseline(&q2b.params, &test_b, &onto, &symbols)?;
    let (rew_c_table, _) =
        evaluate_rewriting_baseline(&q2b.params, &test_c, &onto, &symbols)?;
    fs::write(
        out_dir.join("metrics/q2b_plain.txt"),
        format!("{}\n{}", q2b_table.render_human(), q2b_table.render_machine()),
    )?;
    fs::write(
        out_dir.join("metrics/o2b_onto.txt"),
        format!("{}\n{}", o2b_table.render_human(), o2b_table.render_machine()),
    )?;
    fs::write(
        out_dir.join("metrics/rewriting_q2b_plain.txt"),
        format!(
            "{}\n{}\n{}\n{}",
            rew_b_table.render_human(),
            rew_b_table.render_machine(),
            rew_c_table.render_human(),
            rew_c_table.render_machine()
        ),
    )?;

    // 8. comparison table
    let report = DemoReport {
        q2b_plain: case_rows(&q2b_table),
        o2b_onto: case_rows(&o2b_table),
        rew_plain_b: rew_b_table.get("B", "all").unwrap_or_default(),
        rew_plain_c: rew_c_table.get("C", "all").unwrap_or_default(),
    };
    let mut cmp = String::new();
    cmp.push_str(&format!("# demo comparison, seed {}\n", cfg.seed));
    cmp.push_str(&format!(
        "{:<22} {:>12} {:>12} {:>12}\n",
        "model", "caseA.hits3", "caseB.hits3", "caseC.hits3"
    ));
    cmp.push_str(&format!(
        "{:<22} {:>12.4} {:>12.4} {:>12.4}\n",
        "Q2B_plain",
        report.q2b_plain[0].hits3,
        report.q2b_plain[1].hits3,
        report.q2b_plain[2].hits3
    ));
    cmp.push_str(&format!(
        "{:<22} {:>12.4} {:>12.4} {:>12.4}\n",
        "O2B_onto",
        report.o2b_onto[0].hits3,
        report.o2b_onto[1].hits3,
        report.o2b_onto[2].hits3
    ));
    cmp.push_str(&format!(
        "{:<22} {:>12} {:>12.4} {:>12.4}\n",
        "rewriting+Q2B_plain", "-", report.rew_plain_b.hits3, report.rew_plain_c.hits3
    ));
    cmp.push_str(&format!(
        "delta.caseB.hits3 = {:.4}\n",
        report.o2b_onto[1].hits3 - report.q2b_plain[1].hits3
    ));
    cmp.push_str(&format!(
        "delta.caseC.hits3 = {:.4}\n",
        report.o2b_onto[2].hits3 - report.q2b_plain[2].hits3
    ));
    cmp.push_str(&format!(
        "delta.rewriting.caseB.hits3 = {:.4}\n",
        report.rew_plain_b.hits3 - report.q2b_plain[1].hits3
    ));
    fs::write(out_dir.join("comparison.txt"), cmp)?;
    Ok(report)
}
