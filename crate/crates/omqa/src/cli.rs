//! The `omqa` binary: closure, rewrite, split, sample, build-eval, train,
//! eval, stats and demo subcommands.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or contract error.
//! Diagnostics go to stderr, results to stdout or the requested files.
//! Every run that writes an output also writes a manifest echoing the fully
//! resolved configuration next to it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::demo::{run_demo, DemoConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, evaluate_rewriting_baseline, render_ranks_tsv};
use crate::kg::{load_triples, split, stats, write_triples, KnowledgeGraph, SymbolTable};
use crate::ontology::{load_ontology, saturate, Ontology};
use crate::query::{
    canonical_form, parse_query_line, record_to_line, to_query_record, ParsedQuery, Shape,
};
use crate::rewrite::{gen_closure, rew, spec_closure, Depth, RewriteOptions, RewriteSet};
use crate::rng::digest;
use crate::sampler::{
    build_eval, eval_sample_from_parsed, eval_sample_record, sample_certain, sample_onto,
    sample_plain, train_sample_from_parsed, train_sample_record, CertainMode, EvalCase,
    EvalGraphs, OntoCaps, Strategy,
};
use crate::trainer::{train, Objective, TrainConfig};

#[derive(Parser)]
#[command(
    name = "omqa",
    version,
    about = "Ontology-mediated query answering over incomplete knowledge graphs"
)]
struct Cli {
    /// Base seed; every random decision derives from it
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads (default: available cores, or $OMQA_THREADS)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Force serial execution
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct KgArgs {
    /// Triple file (TSV: head, relation, tail)
    #[arg(long)]
    kg: PathBuf,
    /// Ontology file
    #[arg(long)]
    ontology: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Materialize the deductive closure of a knowledge graph
    Closure {
        #[command(flatten)]
        kg: KgArgs,
        /// Output TSV path, or `-` for stdout
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Specialize or generalize queries against an ontology
    Rewrite {
        /// Query file, one JSON object per line
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        ontology: PathBuf,
        /// gen, spec, or rew (shape-restricted specialization)
        #[arg(long)]
        mode: String,
        /// Rewriting depth: a number or `fix` for the fixpoint
        #[arg(long, default_value = "2")]
        depth: String,
        /// Disable anchor abstraction (R8) when generalizing
        #[arg(long)]
        no_r8_gen: bool,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Nested train/valid/test split
    Split {
        #[arg(long)]
        kg: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        ratio: f64,
        /// Directory receiving train.tsv, valid.tsv, test.tsv
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate training queries
    Sample {
        #[command(flatten)]
        kg: KgArgs,
        /// plain, gen, spec or onto
        #[arg(long)]
        strategy: String,
        /// Comma-separated shape tags
        #[arg(long, default_value = "1p,2p,3p,2i,3i")]
        shapes: String,
        /// Queries per shape
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Generalization depth attached to samples
        #[arg(long, default_value_t = 2)]
        gen_depth: usize,
        /// Fraction of valid anchors kept by the onto strategy
        #[arg(long, default_value_t = 0.5)]
        anchor_fraction: f64,
        /// Per-shape cap for the onto strategy
        #[arg(long, default_value_t = 2000)]
        cap: usize,
        /// Data-pattern seeds per shape for the onto strategy
        #[arg(long, default_value_t = 100)]
        data_patterns: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build evaluation query sets for one test case
    BuildEval {
        /// A (inductive), B (deductive) or C (combined)
        #[arg(long)]
        case: String,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        ontology: Option<PathBuf>,
        #[arg(long, default_value = "1p,2p,3p,2i,3i,ip,pi,2u,up")]
        shapes: String,
        /// Queries per shape
        #[arg(long, default_value_t = 50)]
        n: usize,
        /// Query files whose members are excluded by canonical form
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the box-embedding model
    Train {
        #[command(flatten)]
        kg: KgArgs,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        /// Test case the validation file was built for
        #[arg(long, default_value = "B")]
        valid_case: String,
        /// key = value configuration file
        #[arg(long)]
        config: Option<PathBuf>,
        /// plain (baseline) or gen (generalization-weighted)
        #[arg(long)]
        objective: Option<String>,
        /// Use the desk-scale preset
        #[arg(long)]
        desk: bool,
        /// Output directory for model.ckpt and manifest.txt
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank hard answers with a trained model
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        case: String,
        /// `rewriting` scores entities by the minimum over all rewritings
        #[arg(long)]
        baseline: Option<String>,
        /// Required for the rewriting baseline
        #[arg(long)]
        ontology: Option<PathBuf>,
        #[arg(long, default_value = "-")]
        out: String,
        /// Optional TSV dump of every rank record
        #[arg(long)]
        dump_ranks: Option<PathBuf>,
    },
    /// Print dataset statistics
    Stats {
        #[command(flatten)]
        kg: KgArgs,
    },
    /// End-to-end desk-scale pipeline on a generated KG
    Demo {
        #[arg(long)]
        out: PathBuf,
        /// Training steps per model
        #[arg(long, default_value_t = 20_000)]
        steps: usize,
        /// Training queries per shape
        #[arg(long, default_value_t = 150)]
        train_per_shape: usize,
        /// Evaluation queries per shape and case
        #[arg(long, default_value_t = 40)]
        eval_per_shape: usize,
        /// Generalization depth attached to strategic samples
        #[arg(long, default_value_t = 1)]
        gen_depth: usize,
    },
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn resolve_threads(requested: Option<usize>, deterministic: bool) -> usize {
    if deterministic {
        return 1;
    }
    requested
        .or_else(|| {
            std::env::var("OMQA_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn load_graph(path: &Path, symbols: &mut SymbolTable) -> Result<KnowledgeGraph> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    load_triples(BufReader::new(file), symbols)
}

fn load_onto(path: &Path, symbols: &mut SymbolTable) -> Result<Ontology> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    load_ontology(BufReader::new(file), symbols)
}

fn read_query_file(path: &Path, symbols: &mut SymbolTable) -> Result<Vec<ParsedQuery>> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_query_line(&line, symbols).map_err(|e| {
            Error::parse(i + 1, format!("{}: {e}", path.display()))
        })?);
    }
    Ok(out)
}

fn parse_shapes(spec: &str) -> Result<Vec<Shape>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            Shape::parse(s).ok_or_else(|| Error::Config(format!("unknown shape tag `{s}`")))
        })
        .collect()
}

fn write_output(out: &str, content: &str) -> Result<()> {
    if out == "-" {
        std::io::stdout().write_all(content.as_bytes())?;
    } else {
        fs::write(out, content)?;
    }
    Ok(())
}

/// Echo the fully resolved configuration: next to the output file, or to
/// stderr when the result goes to stdout.
fn emit_manifest(out: Option<&Path>, entries: &[(String, String)]) -> Result<()> {
    let mut text = String::from("# omqa invocation manifest\n");
    for (k, v) in entries {
        text.push_str(&format!("{k} = {v}\n"));
    }
    match out {
        Some(path) => {
            let mut name = path.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest");
            fs::write(path.with_file_name(name), text)?;
        }
        None => eprint!("{text}"),
    }
    Ok(())
}

fn kv(pairs: &[(&str, String)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn execute(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    let threads = resolve_threads(cli.threads, cli.deterministic);
    match cli.cmd {
        Cmd::Closure { kg, out } => {
            let mut symbols = SymbolTable::new();
            let g = load_graph(&kg.kg, &mut symbols)?;
            let onto_path = kg
                .ontology
                .ok_or_else(|| Error::Config("closure requires --ontology".into()))?;
            let onto = load_onto(&onto_path, &mut symbols)?;
            let sat = saturate(&g, &onto, &symbols);
            let mut buf = Vec::new();
            write_triples(&sat, &symbols, &mut buf)?;
            write_output(&out, std::str::from_utf8(&buf).expect("utf8 triples"))?;
            emit_manifest(
                (out != "-").then(|| Path::new(&out)),
                &kv(&[
                    ("command", "closure".into()),
                    ("kg", kg.kg.display().to_string()),
                    ("ontology", onto_path.display().to_string()),
                    ("triples_in", g.len().to_string()),
                    ("triples_out", sat.len().to_string()),
                ]),
            )
        }
        Cmd::Rewrite { query, ontology, mode, depth, no_r8_gen, out } => {
            let mut symbols = SymbolTable::new();
            let onto = load_onto(&ontology, &mut symbols)?;
            let queries = read_query_file(&query, &mut symbols)?;
            let depth_parsed = if depth == "fix" {
                Depth::Fixpoint
            } else {
                Depth::Bounded(depth.parse().map_err(|_| {
                    Error::Config(format!("--depth expects a number or `fix`, got `{depth}`"))
                })?)
            };
            let opts = RewriteOptions { enable_r8_gen: !no_r8_gen, ..Default::default() };
            let mut lines = String::new();
            for pq in &queries {
                let set: RewriteSet = match mode.as_str() {
                    "gen" => gen_closure(&pq.query, &onto, &symbols, depth_parsed, &opts),
                    "spec" => spec_closure(&pq.query, &onto, &symbols, depth_parsed, &opts),
                    "rew" => rew(&pq.query, &onto, &symbols, &Shape::ALL, depth_parsed)?,
                    other => {
                        return Err(Error::Config(format!(
                            "--mode expects gen, spec or rew, got `{other}`"
                        )))
                    }
                };
                for (k, member) in set.members.iter().enumerate() {
                    let provenance: Vec<String> =
                        member.trace.iter().map(|s| s.render(&symbols)).collect();
                    let rec = to_query_record(
                        &format!("{}-{k}", pq.id),
                        &member.query,
                        &symbols,
                        None,
                        &[],
                        None,
                        Some(provenance),
                    );
                    lines.push_str(&record_to_line(&rec));
                    lines.push('\n');
                }
            }
            write_output(&out, &lines)?;
            emit_manifest(
                (out != "-").then(|| Path::new(&out)),
                &kv(&[
                    ("command", "rewrite".into()),
                    ("query", query.display().to_string()),
                    ("ontology", ontology.display().to_string()),
                    ("mode", mode),
                    ("depth", depth),
                    ("r8_gen", (!no_r8_gen).to_string()),
                ]),
            )
        }
        Cmd::Split { kg, ratio, out } => {
            let mut symbols = SymbolTable::new();
            let g = load_graph(&kg, &mut symbols)?;
            let bundle = split(&g, ratio, seed)?;
            fs::create_dir_all(&out)?;
            for (name, graph) in [
                ("train", &bundle.g_train),
                ("valid", &bundle.g_valid),
                ("test", &bundle.g_test),
            ] {
                let mut buf = Vec::new();
                write_triples(graph, &symbols, &mut buf)?;
                fs::write(out.join(format!("{name}.tsv")), buf)?;
            }
            emit_manifest(
                Some(&out.join("split")),
                &kv(&[
                    ("command", "split".into()),
                    ("kg", kg.display().to_string()),
                    ("ratio", ratio.to_string()),
                    ("seed", seed.to_string()),
                    ("test", bundle.g_test.len().to_string()),
                    ("valid", bundle.g_valid.len().to_string()),
                    ("train", bundle.g_train.len().to_string()),
                ]),
            )
        }
        Cmd::Sample {
            kg,
            strategy,
            shapes,
            n,
            gen_depth,
            anchor_fraction,
            cap,
            data_patterns,
            out,
        } => {
            let strategy = Strategy::parse(&strategy)
                .ok_or_else(|| Error::Config(format!("unknown strategy `{strategy}`")))?;
            let shapes = parse_shapes(&shapes)?;
            let mut symbols = SymbolTable::new();
            let g = load_graph(&kg.kg, &mut symbols)?;
            let onto = match (&kg.ontology, strategy) {
                (Some(path), _) => Some(load_onto(path, &mut symbols)?),
                (None, Strategy::Plain) => None,
                (None, _) => {
                    return Err(Error::Config(format!(
                        "strategy {} requires --ontology",
                        strategy.as_str()
                    )))
                }
            };
            let samples = match strategy {
                Strategy::Plain => sample_plain(&g, &shapes, n, seed)?,
                Strategy::Gen => sample_certain(
                    &g,
                    onto.as_ref().unwrap(),
                    &symbols,
                    &shapes,
                    n,
                    seed,
                    CertainMode::Gen,
                    gen_depth,
                )?,
                Strategy::Spec => sample_certain(
                    &g,
                    onto.as_ref().unwrap(),
                    &symbols,
                    &shapes,
                    n,
                    seed,
                    CertainMode::Spec,
                    gen_depth,
                )?,
                Strategy::Onto => sample_onto(
                    &g,
                    onto.as_ref().unwrap(),
                    &symbols,
                    &shapes,
                    anchor_fraction,
                    OntoCaps { per_shape: cap, data_patterns_per_shape: data_patterns },
                    seed,
                    gen_depth,
                )?,
            };
            let mut lines = String::new();
            for s in &samples {
                lines.push_str(&record_to_line(&train_sample_record(s, &symbols)));
                lines.push('\n');
            }
            fs::write(&out, lines)?;
            emit_manifest(
                Some(&out),
                &kv(&[
                    ("command", "sample".into()),
                    ("kg", kg.kg.display().to_string()),
                    ("strategy", strategy.as_str().into()),
                    ("n_per_shape", n.to_string()),
                    ("seed", seed.to_string()),
                    ("emitted", samples.len().to_string()),
                ]),
            )
        }
        Cmd::BuildEval { case, train, valid, test, ontology, shapes, n, exclude, out } => {
            let case = EvalCase::parse(&case)
                .ok_or_else(|| Error::Config(format!("unknown case `{case}`")))?;
            let shapes = parse_shapes(&shapes)?;
            let mut symbols = SymbolTable::new();
            let g_train = load_graph(&train, &mut symbols)?;
            let g_valid = load_graph(&valid, &mut symbols)?;
            let g_test = load_graph(&test, &mut symbols)?;
            let onto = match &ontology {
                Some(path) => load_onto(path, &mut symbols)?,
                None if case == EvalCase::A => Ontology::default(),
                None => {
                    return Err(Error::Config(format!(
                        "case {} requires --ontology",
                        case.as_str()
                    )))
                }
            };
            let mut excluded: BTreeSet<String> = BTreeSet::new();
            for path in &exclude {
                for pq in read_query_file(path, &mut symbols)? {
                    excluded.insert(canonical_form(&pq.query));
                }
            }
            let sat_train;
            let sat_valid;
            let sat_test;
            let graphs = match case {
                EvalCase::A => EvalGraphs {
                    sample_from: &g_test,
                    easy_from: &g_valid,
                    hard_from: &g_test,
                },
                EvalCase::B => {
                    sat_train = saturate(&g_train, &onto, &symbols);
                    EvalGraphs {
                        sample_from: &sat_train,
                        easy_from: &g_train,
                        hard_from: &sat_train,
                    }
                }
                EvalCase::C => {
                    sat_valid = saturate(&g_valid, &onto, &symbols);
                    sat_test = saturate(&g_test, &onto, &symbols);
                    EvalGraphs {
                        sample_from: &sat_test,
                        easy_from: &sat_valid,
                        hard_from: &sat_test,
                    }
                }
            };
            let samples = build_eval(case, &graphs, &shapes, n, seed, &excluded);
            let mut lines = String::new();
            for s in &samples {
                lines.push_str(&record_to_line(&eval_sample_record(s, &symbols)));
                lines.push('\n');
            }
            fs::write(&out, lines)?;
            emit_manifest(
                Some(&out),
                &kv(&[
                    ("command", "build-eval".into()),
                    ("case", case.as_str().into()),
                    ("n_per_shape", n.to_string()),
                    ("seed", seed.to_string()),
                    ("emitted", samples.len().to_string()),
                ]),
            )
        }
        Cmd::Train {
            kg,
            samples,
            valid,
            valid_case,
            config,
            objective,
            desk,
            out,
        } => {
            let mut symbols = SymbolTable::new();
            let g = load_graph(&kg.kg, &mut symbols)?;
            if let Some(path) = &kg.ontology {
                load_onto(path, &mut symbols)?;
            }
            let _ = g;
            let valid_case = EvalCase::parse(&valid_case)
                .ok_or_else(|| Error::Config(format!("unknown case `{valid_case}`")))?;
            let train_samples: Vec<_> = read_query_file(&samples, &mut symbols)?
                .into_iter()
                .map(train_sample_from_parsed)
                .collect::<Result<_>>()?;
            let valid_samples: Vec<_> = read_query_file(&valid, &mut symbols)?
                .into_iter()
                .map(|pq| eval_sample_from_parsed(pq, valid_case))
                .collect::<Result<_>>()?;
            let mut cfg = match &config {
                Some(path) => TrainConfig::parse(&fs::read_to_string(path)?)?,
                None => TrainConfig::default(),
            };
            if desk {
                let keep_seed = cfg.seed;
                let keep_objective = cfg.objective;
                cfg = TrainConfig::desk_preset();
                cfg.seed = keep_seed;
                cfg.objective = keep_objective;
            }
            if let Some(obj) = &objective {
                cfg.objective = Objective::parse(obj)
                    .ok_or_else(|| Error::Config(format!("unknown objective `{obj}`")))?;
            }
            cfg.seed = seed;
            let mut inputs = BTreeMap::new();
            inputs.insert("kg".to_string(), digest(&fs::read(&kg.kg)?));
            inputs.insert("samples".to_string(), digest(&fs::read(&samples)?));
            inputs.insert("valid".to_string(), digest(&fs::read(&valid)?));
            let (params, manifest) =
                train(&cfg, &train_samples, &valid_samples, &symbols, &inputs, threads)?;
            fs::create_dir_all(&out)?;
            let mut buf = Vec::new();
            crate::checkpoint::save(&params, &mut buf)?;
            fs::write(out.join("model.ckpt"), buf)?;
            fs::write(out.join("manifest.txt"), manifest.render())?;
            emit_manifest(
                Some(&out.join("train")),
                &manifest
                    .config
                    .iter()
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect::<Vec<_>>(),
            )
        }
        Cmd::Eval { model, queries, case, baseline, ontology, out, dump_ranks } => {
            let case = EvalCase::parse(&case)
                .ok_or_else(|| Error::Config(format!("unknown case `{case}`")))?;
            let file = fs::File::open(&model)
                .map_err(|e| Error::Config(format!("cannot open {}: {e}", model.display())))?;
            let params = crate::checkpoint::load(BufReader::new(file))?;
            let mut symbols = params.vocab.to_symbols()?;
            let frozen = (
                symbols.entity_count(),
                symbols.concept_count(),
                symbols.relation_count(),
            );
            let eval_samples: Vec<_> = read_query_file(&queries, &mut symbols)?
                .into_iter()
                .map(|pq| eval_sample_from_parsed(pq, case))
                .collect::<Result<_>>()?;
            let onto = match &ontology {
                Some(path) => Some(load_onto(path, &mut symbols)?),
                None => None,
            };
            if frozen
                != (
                    symbols.entity_count(),
                    symbols.concept_count(),
                    symbols.relation_count(),
                )
            {
                return Err(Error::Config(
                    "query or ontology file references symbols unknown to the checkpoint".into(),
                ));
            }
            let (table, records) = match baseline.as_deref() {
                None => evaluate(&params, &eval_samples)?,
                Some("rewriting") => {
                    let onto = onto.ok_or_else(|| {
                        Error::Config("--baseline rewriting requires --ontology".into())
                    })?;
                    evaluate_rewriting_baseline(&params, &eval_samples, &onto, &symbols)?
                }
                Some(other) => {
                    return Err(Error::Config(format!("unknown baseline `{other}`")))
                }
            };
            let content = format!("{}\n{}", table.render_human(), table.render_machine());
            write_output(&out, &content)?;
            if let Some(path) = &dump_ranks {
                fs::write(path, render_ranks_tsv(&records, &symbols))?;
            }
            emit_manifest(
                (out != "-").then(|| Path::new(&out)),
                &kv(&[
                    ("command", "eval".into()),
                    ("model", model.display().to_string()),
                    ("queries", queries.display().to_string()),
                    ("case", case.as_str().into()),
                    ("baseline", baseline.unwrap_or_else(|| "none".into())),
                    ("answers_ranked", records.len().to_string()),
                ]),
            )
        }
        Cmd::Stats { kg } => {
            let mut symbols = SymbolTable::new();
            let g = load_graph(&kg.kg, &mut symbols)?;
            let mut record = stats(&g);
            if let Some(path) = &kg.ontology {
                let onto = load_onto(path, &mut symbols)?;
                record.axioms = Some(onto.len());
                record.closure_triples = Some(saturate(&g, &onto, &symbols).len());
            }
            println!("{record}");
            Ok(())
        }
        Cmd::Demo { out, steps, train_per_shape, eval_per_shape, gen_depth } => {
            let cfg = DemoConfig {
                seed,
                steps,
                threads,
                train_per_shape,
                eval_per_shape,
                gen_depth,
                ..DemoConfig::default()
            };
            let report = run_demo(&out, &cfg)?;
            print!("{}", fs::read_to_string(out.join("comparison.txt"))?);
            emit_manifest(
                Some(&out.join("demo")),
                &kv(&[
                    ("command", "demo".into()),
                    ("seed", seed.to_string()),
                    ("steps", steps.to_string()),
                    ("train_per_shape", train_per_shape.to_string()),
                    ("eval_per_shape", eval_per_shape.to_string()),
                    (
                        "caseB_delta_hits3",
                        format!("{:.4}", report.o2b_onto[1].hits3 - report.q2b_plain[1].hits3),
                    ),
                ]),
            )
        }
    }
}
