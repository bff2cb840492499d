//! Training-query generation (plain / gen / spec / onto strategies),
//! ontology-valid labeling enumeration, negative sampling, and the A/B/C
//! evaluation-set builder.
//!
//! Random queries come from reverse instantiation: pick an answer entity and
//! walk the shape's edges backward through the graph indexes, which
//! guarantees at least one answer without rejection-sampling the query
//! space. All randomness is seeded per shape so parallel and serial runs
//! emit identical files.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::kg::{ConceptId, EntityId, KnowledgeGraph, NodeId, RelationId, SymbolTable};
use crate::ontology::{derived_sets, saturate, subsumption_closure, DerivedSets, HierarchyClosure, Ontology};
use crate::query::{
    answers, canonical_form, project_matches, shape_of, Atom, Query, QueryShape, Shape, Term,
    VarId,
};
use crate::rewrite::{gen_closure, spec_closure, Depth, RewriteOptions};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Plain,
    Gen,
    Spec,
    Onto,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Plain => "plain",
            Strategy::Gen => "gen",
            Strategy::Spec => "spec",
            Strategy::Onto => "onto",
        }
    }

    pub fn parse(s: &str) -> Option<Strategy> {
        match s {
            "plain" => Some(Strategy::Plain),
            "gen" => Some(Strategy::Gen),
            "spec" => Some(Strategy::Spec),
            "onto" => Some(Strategy::Onto),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    pub query: Query,
    pub positives: BTreeSet<EntityId>,
    /// embeddable generalizations, consumed by the gen-weighted objective
    pub gens: Vec<Query>,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EvalCase {
    A,
    B,
    C,
}

impl EvalCase {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalCase::A => "A",
            EvalCase::B => "B",
            EvalCase::C => "C",
        }
    }

    pub fn parse(s: &str) -> Option<EvalCase> {
        match s {
            "A" | "a" => Some(EvalCase::A),
            "B" | "b" => Some(EvalCase::B),
            "C" | "c" => Some(EvalCase::C),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalSample {
    pub id: String,
    pub query: Query,
    pub easy: BTreeSet<EntityId>,
    pub hard: BTreeSet<EntityId>,
    pub case: EvalCase,
}

// ---------------------------------------------------------------------------
// Reverse instantiation
// ---------------------------------------------------------------------------

fn answer_pool(g: &KnowledgeGraph) -> Vec<EntityId> {
    g.entity_set()
        .iter()
        .copied()
        .filter(|&e| !g.in_edges(NodeId::Entity(e)).is_empty())
        .collect()
}

fn pick_in_edge(g: &KnowledgeGraph, rng: &mut Rng, t: EntityId) -> Option<(RelationId, EntityId)> {
    let edges = g.in_edges(NodeId::Entity(t));
    rng.choose(edges).map(|&(r, h)| (r, h))
}

fn pick_two_in_edges(
    g: &KnowledgeGraph,
    rng: &mut Rng,
    t: EntityId,
) -> Option<[(RelationId, EntityId); 2]> {
    let edges = g.in_edges(NodeId::Entity(t));
    if edges.len() < 2 {
        return None;
    }
    let idx = rng.sample_indices(edges.len(), 2);
    Some([edges[idx[0]], edges[idx[1]]])
}

fn pick_three_in_edges(
    g: &KnowledgeGraph,
    rng: &mut Rng,
    t: EntityId,
) -> Option<[(RelationId, EntityId); 3]> {
    let edges = g.in_edges(NodeId::Entity(t));
    if edges.len() < 3 {
        return None;
    }
    let idx = rng.sample_indices(edges.len(), 3);
    Some([edges[idx[0]], edges[idx[1]], edges[idx[2]]])
}

fn var(names: &mut Vec<String>, name: &str) -> Term {
    names.push(name.to_string());
    Term::Var(VarId(names.len() as u32 - 1))
}

/// One backward walk for the given shape; the walked instance witnesses at
/// least one answer.
fn walk_shape(
    g: &KnowledgeGraph,
    rng: &mut Rng,
    shape: Shape,
    pool: &[EntityId],
) -> Option<Query> {
    let &t = rng.choose(pool)?;
    let mut names = Vec::new();
    let (atoms, branches): (Vec<Atom>, Option<Vec<Vec<usize>>>) = match shape {
        Shape::OneP => {
            let a = var(&mut names, "A");
            let (r1, e1) = pick_in_edge(g, rng, t)?;
            (vec![Atom::new(r1, Term::Entity(e1), a)], None)
        }
        Shape::TwoP => {
            let a = var(&mut names, "A");
            let v1 = var(&mut names, "V1");
            let (r2, m) = pick_in_edge(g, rng, t)?;
            let (r1, e1) = pick_in_edge(g, rng, m)?;
            (
                vec![
                    Atom::new(r1, Term::Entity(e1), v1),
                    Atom::new(r2, v1, a),
                ],
                None,
            )
        }
        Shape::ThreeP => {
            let a = var(&mut names, "A");
            let v1 = var(&mut names, "V1");
            let v2 = var(&mut names, "V2");
            let (r3, m2) = pick_in_edge(g, rng, t)?;
            let (r2, m1) = pick_in_edge(g, rng, m2)?;
            let (r1, e1) = pick_in_edge(g, rng, m1)?;
            (
                vec![
                    Atom::new(r1, Term::Entity(e1), v1),
                    Atom::new(r2, v1, v2),
                    Atom::new(r3, v2, a),
                ],
                None,
            )
        }
        Shape::TwoI => {
            let a = var(&mut names, "A");
            let [(r1, e1), (r2, e2)] = pick_two_in_edges(g, rng, t)?;
            (
                vec![
                    Atom::new(r1, Term::Entity(e1), a),
                    Atom::new(r2, Term::Entity(e2), a),
                ],
                None,
            )
        }
        Shape::ThreeI => {
            let a = var(&mut names, "A");
            let [(r1, e1), (r2, e2), (r3, e3)] = pick_three_in_edges(g, rng, t)?;
            (
                vec![
                    Atom::new(r1, Term::Entity(e1), a),
                    Atom::new(r2, Term::Entity(e2), a),
                    Atom::new(r3, Term::Entity(e3), a),
                ],
                None,
            )
        }
        Shape::Ip => {
            let a = var(&mut names, "A");
            let v1 = var(&mut names, "V1");
            let (r3, m) = pick_in_edge(g, rng, t)?;
            let [(r1, e1), (r2, e2)] = pick_two_in_edges(g, rng, m)?;
            (
                vec![
                    Atom::new(r1, Term::Entity(e1), v1),
                    Atom::new(r2, Term::Entity(e2), v1),
                    Atom::new(r3, v1, a),
                ],
                None,
            )
        }
        Shape::Pi => {
            let a = var(&mut names, "A");
            let v1 = var(&mut names, "V1");
            let [(r2, m), (r3, e2)] = pick_two_in_edges(g, rng, t)?;
            let (r1, e1) = pick_in_edge(g, rng, m)?;
            (
                vec![
                    Atom::new(r1, Term::Entity(e1), v1),
                    Atom::new(r2, v1, a),
                    Atom::new(r3, Term::Entity(e2), a),
                ],
                None,
            )
        }
        Shape::TwoU => {
            let a = var(&mut names, "A");
            let [(r1, e1), (r2, e2)] = pick_two_in_edges(g, rng, t)?;
            (
                vec![
                    Atom::new(r1, Term::Entity(e1), a),
                    Atom::new(r2, Term::Entity(e2), a),
                ],
                Some(vec![vec![0], vec![1]]),
            )
        }
        Shape::Up => {
            let a = var(&mut names, "A");
            let v1 = var(&mut names, "V1");
            let (r3, m) = pick_in_edge(g, rng, t)?;
            let [(r1, e1), (r2, e2)] = pick_two_in_edges(g, rng, m)?;
            (
                vec![
                    Atom::new(r1, Term::Entity(e1), v1),
                    Atom::new(r2, Term::Entity(e2), v1),
                    Atom::new(r3, v1, a),
                ],
                Some(vec![vec![0, 2], vec![1, 2]]),
            )
        }
    };
    let answer = VarId(0);
    let q = match branches {
        Some(b) => Query::new_union(names, answer, atoms, b).ok()?,
        None => Query::new(names, answer, atoms).ok()?,
    };
    (shape_of(&q) == Some(shape)).then_some(q)
}

fn require_train_shapes(shapes: &[Shape]) -> Result<()> {
    for s in shapes {
        if !Shape::TRAIN.contains(s) {
            return Err(Error::Config(format!(
                "shape {s} is not a training shape (training uses 1p,2p,3p,2i,3i)"
            )));
        }
    }
    Ok(())
}

/// Random queries with their plain answers.
pub fn sample_plain(
    g: &KnowledgeGraph,
    shapes: &[Shape],
    n_per_shape: usize,
    seed: u64,
) -> Result<Vec<TrainSample>> {
    require_train_shapes(shapes)?;
    let pool = answer_pool(g);
    let root = Rng::seeded(seed);
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for &shape in shapes {
        let mut rng = root.derive(&format!("plain.{shape}"));
        let mut emitted = 0usize;
        let budget = n_per_shape.saturating_mul(60) + 60;
        let mut attempts = 0usize;
        while emitted < n_per_shape && attempts < budget {
            attempts += 1;
            let Some(q) = walk_shape(g, &mut rng, shape, &pool) else {
                continue;
            };
            if !seen.insert(canonical_form(&q)) {
                continue;
            }
            let positives = answers(&q, g);
            debug_assert!(!positives.is_empty());
            out.push(TrainSample {
                id: format!("plain-{shape}-{emitted:05}"),
                query: q,
                positives,
                gens: Vec::new(),
                strategy: Strategy::Plain,
            });
            emitted += 1;
        }
        if emitted < n_per_shape {
            eprintln!(
                "warning: shape {shape}: produced {emitted}/{n_per_shape} samples \
                 (graph too sparse)"
            );
        }
    }
    Ok(out)
}

/// Embeddable generalizations of `q`, excluding `q` itself.
pub fn embeddable_gens(
    q: &Query,
    o: &Ontology,
    symbols: &SymbolTable,
    depth: usize,
) -> Vec<Query> {
    let opts = RewriteOptions::default();
    let set = gen_closure(q, o, symbols, Depth::Bounded(depth), &opts);
    let origin = canonical_form(q);
    set.members
        .into_iter()
        .filter(|m| canonical_form(&m.query) != origin && shape_of(&m.query).is_some())
        .map(|m| m.query)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertainMode {
    Gen,
    Spec,
}

/// Random queries trained with their certain answers. Mode `gen` attaches
/// each query's generalizations (and also emits them as standalone samples);
/// mode `spec` emits the specialization-closure members as their own
/// samples.
#[allow(clippy::too_many_arguments)]
pub fn sample_certain(
    g: &KnowledgeGraph,
    o: &Ontology,
    symbols: &SymbolTable,
    shapes: &[Shape],
    n_per_shape: usize,
    seed: u64,
    mode: CertainMode,
    depth: usize,
) -> Result<Vec<TrainSample>> {
    require_train_shapes(shapes)?;
    let sat = saturate(g, o, symbols);
    let pool = answer_pool(g);
    let root = Rng::seeded(seed);
    let strategy = match mode {
        CertainMode::Gen => Strategy::Gen,
        CertainMode::Spec => Strategy::Spec,
    };
    let mut out: Vec<TrainSample> = Vec::new();
    let mut seen = BTreeSet::new();
    for &shape in shapes {
        let mut rng = root.derive(&format!("certain.{shape}"));
        let mut emitted = 0usize;
        let budget = n_per_shape.saturating_mul(60) + 60;
        let mut attempts = 0usize;
        while emitted < n_per_shape && attempts < budget {
            attempts += 1;
            let Some(q) = walk_shape(g, &mut rng, shape, &pool) else {
                continue;
            };
            if !seen.insert(canonical_form(&q)) {
                continue;
            }
            let positives = answers(&q, &sat);
            debug_assert!(!positives.is_empty());
            let id = format!("{}-{shape}-{emitted:05}", strategy.as_str());
            match mode {
                CertainMode::Gen => {
                    let gens = embeddable_gens(&q, o, symbols, depth);
                    // the generalizations also train as their own queries
                    for (k, gq) in gens.iter().enumerate() {
                        if seen.insert(canonical_form(gq)) {
                            let gpos = answers(gq, &sat);
                            if !gpos.is_empty() {
                                out.push(TrainSample {
                                    id: format!("{id}-g{k}"),
                                    query: gq.clone(),
                                    positives: gpos,
                                    gens: Vec::new(),
                                    strategy,
                                });
                            }
                        }
                    }
                    out.push(TrainSample { id, query: q, positives, gens, strategy });
                }
                CertainMode::Spec => {
                    let set = spec_closure(
                        &q,
                        o,
                        symbols,
                        Depth::Bounded(depth),
                        &RewriteOptions::default(),
                    );
                    out.push(TrainSample { id: id.clone(), query: q, positives, gens: vec![], strategy });
                    for (k, m) in set.members.iter().skip(1).enumerate() {
                        if shape_of(&m.query).is_none() {
                            continue;
                        }
                        if !seen.insert(canonical_form(&m.query)) {
                            continue;
                        }
                        let spos = answers(&m.query, &sat);
                        if spos.is_empty() {
                            continue;
                        }
                        out.push(TrainSample {
                            id: format!("{id}-s{k}"),
                            query: m.query.clone(),
                            positives: spos,
                            gens: Vec::new(),
                            strategy,
                        });
                    }
                }
            }
            emitted += 1;
        }
        if emitted < n_per_shape {
            eprintln!(
                "warning: shape {shape}: produced {emitted}/{n_per_shape} samples \
                 (graph too sparse)"
            );
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Valid labelings and strategic sampling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeLabel {
    Role(RelationId),
    /// relation `type` with this concept constant at the edge target
    Type(ConceptId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    pub edges: Vec<EdgeLabel>,
}

/// Directed variants of a training shape: the underlying tree of the tag
/// with every combination of edge directions.
pub fn enumerate_variants(tag: Shape) -> Vec<QueryShape> {
    let (nodes, base_edges, distinguished): (usize, Vec<(usize, usize)>, usize) = match tag {
        Shape::OneP => (2, vec![(0, 1)], 1),
        Shape::TwoP => (3, vec![(0, 1), (1, 2)], 2),
        Shape::ThreeP => (4, vec![(0, 1), (1, 2), (2, 3)], 3),
        Shape::TwoI => (3, vec![(0, 2), (1, 2)], 2),
        Shape::ThreeI => (4, vec![(0, 3), (1, 3), (2, 3)], 3),
        // non-training shapes are not enumerated strategically
        _ => return Vec::new(),
    };
    let m = base_edges.len();
    let mut variants = Vec::with_capacity(1 << m);
    for mask in 0u32..(1 << m) {
        let edges: Vec<(usize, usize)> = base_edges
            .iter()
            .enumerate()
            .map(|(i, &(u, v))| if mask & (1 << i) != 0 { (v, u) } else { (u, v) })
            .collect();
        variants.push(QueryShape { node_count: nodes, edges, distinguished });
    }
    variants
}

fn undirected_degree(shape: &QueryShape) -> Vec<usize> {
    let mut deg = vec![0usize; shape.node_count];
    for &(u, v) in &shape.edges {
        deg[u] += 1;
        deg[v] += 1;
    }
    deg
}

/// How an edge relates to a node it touches.
#[derive(Clone, Copy, PartialEq)]
enum Incidence {
    RoleOut(RelationId),
    RoleIn(RelationId),
    /// type(x, A): the type edge constrains x, its concept sits at the leaf
    Constrains(ConceptId),
}

fn incidence(shape: &QueryShape, edge: usize, label: EdgeLabel, node: usize) -> Option<Incidence> {
    let (u, v) = shape.edges[edge];
    if u != node && v != node {
        return None;
    }
    Some(match label {
        EdgeLabel::Role(r) => {
            if u == node {
                Incidence::RoleOut(r)
            } else {
                Incidence::RoleIn(r)
            }
        }
        EdgeLabel::Type(c) => Incidence::Constrains(c),
    })
}

fn pair_valid(
    a: Incidence,
    b: Incidence,
    sets: &DerivedSets,
    closure: &HierarchyClosure,
) -> bool {
    use Incidence::*;
    match (a, b) {
        (RoleIn(r1), RoleOut(r2)) => sets.get(r1).follows.contains(&r2),
        (RoleOut(r1), RoleIn(r2)) => sets.get(r2).follows.contains(&r1),
        (RoleIn(r1), RoleIn(r2)) => sets.get(r1).inter_r.contains(&r2),
        (RoleOut(r1), RoleOut(r2)) => sets.get(r1).inter_d.contains(&r2),
        (Constrains(c), RoleOut(r)) | (RoleOut(r), Constrains(c)) => {
            sets.get(r).dom.contains(&c)
                || sets.get(r).inv.iter().any(|&p| sets.get(p).range.contains(&c))
        }
        (Constrains(c), RoleIn(r)) | (RoleIn(r), Constrains(c)) => {
            sets.get(r).range.contains(&c)
                || sets.get(r).inv.iter().any(|&p| sets.get(p).dom.contains(&c))
        }
        (Constrains(c1), Constrains(c2)) => closure.common_super_concept(c1, c2),
    }
}

/// Every labeling of the shape's edges (relations, or `type` plus a concept
/// at a leaf target) whose adjacent edge pairs all pass the
/// ontology-compatibility predicate. Anchor nodes stay unassigned.
pub fn valid_labelings(
    shape: &QueryShape,
    sets: &DerivedSets,
    closure: &HierarchyClosure,
    symbols: &SymbolTable,
) -> Vec<Labeling> {
    let deg = undirected_degree(shape);
    let roles: Vec<RelationId> = symbols
        .all_relations()
        .filter(|&r| r != symbols.type_relation())
        .collect();
    let concepts: Vec<ConceptId> = symbols.all_concepts().collect();
    let mut candidates: Vec<Vec<EdgeLabel>> = Vec::with_capacity(shape.edges.len());
    for &(_, v) in &shape.edges {
        let mut c: Vec<EdgeLabel> = roles.iter().map(|&r| EdgeLabel::Role(r)).collect();
        if deg[v] == 1 && v != shape.distinguished {
            c.extend(concepts.iter().map(|&k| EdgeLabel::Type(k)));
        }
        candidates.push(c);
    }
    let mut out = Vec::new();
    let mut chosen: Vec<EdgeLabel> = Vec::new();
    fn rec(
        shape: &QueryShape,
        candidates: &[Vec<EdgeLabel>],
        sets: &DerivedSets,
        closure: &HierarchyClosure,
        chosen: &mut Vec<EdgeLabel>,
        out: &mut Vec<Labeling>,
    ) {
        let i = chosen.len();
        if i == candidates.len() {
            out.push(Labeling { edges: chosen.clone() });
            return;
        }
        'next: for &label in &candidates[i] {
            // check against every already-labeled adjacent edge
            for j in 0..i {
                let (uj, vj) = shape.edges[j];
                let (ui, vi) = shape.edges[i];
                for node in [ui, vi] {
                    if node != uj && node != vj {
                        continue;
                    }
                    let a = incidence(shape, i, label, node).unwrap();
                    let Some(b) = incidence(shape, j, chosen[j], node) else {
                        continue;
                    };
                    if !pair_valid(a, b, sets, closure) {
                        continue 'next;
                    }
                }
            }
            chosen.push(label);
            rec(shape, candidates, sets, closure, chosen, out);
            chosen.pop();
        }
    }
    rec(shape, &candidates, sets, closure, &mut chosen, &mut out);
    out
}

#[derive(Debug, Clone, Copy)]
pub struct OntoCaps {
    /// emitted queries per shape tag
    pub per_shape: usize,
    /// reverse-instantiated data-pattern seeds per shape tag
    pub data_patterns_per_shape: usize,
}

impl Default for OntoCaps {
    fn default() -> Self {
        OntoCaps { per_shape: 2000, data_patterns_per_shape: 100 }
    }
}

/// Build the query skeleton for a labeled shape variant: anchors become
/// probe variables, type targets become concept constants.
fn labeled_skeleton(
    shape: &QueryShape,
    labeling: &Labeling,
    type_rel: RelationId,
) -> Option<(Query, Vec<VarId>)> {
    let deg = undirected_degree(shape);
    let mut names: Vec<String> = Vec::new();
    let mut terms: Vec<Option<Term>> = vec![None; shape.node_count];
    let mut anchors: Vec<VarId> = Vec::new();
    // concepts at type-edge targets
    for (ei, &(_, v)) in shape.edges.iter().enumerate() {
        if let EdgeLabel::Type(c) = labeling.edges[ei] {
            terms[v] = Some(Term::Concept(c));
        }
    }
    for node in 0..shape.node_count {
        if terms[node].is_some() {
            continue;
        }
        let name = if node == shape.distinguished {
            "A".to_string()
        } else if deg[node] == 1 {
            format!("G{node}")
        } else {
            format!("V{node}")
        };
        let v = VarId(names.len() as u32);
        names.push(name);
        if node != shape.distinguished && deg[node] == 1 {
            anchors.push(v);
        }
        terms[node] = Some(Term::Var(v));
    }
    let answer = {
        let Some(Term::Var(v)) = terms[shape.distinguished] else {
            return None;
        };
        v
    };
    let atoms: Vec<Atom> = shape
        .edges
        .iter()
        .zip(&labeling.edges)
        .map(|(&(u, v), &label)| {
            let rel = match label {
                EdgeLabel::Role(r) => r,
                EdgeLabel::Type(_) => type_rel,
            };
            Atom::new(rel, terms[u].unwrap(), terms[v].unwrap())
        })
        .collect();
    Query::new(names, answer, atoms).ok().map(|q| (q, anchors))
}

fn ground_anchors(q: &Query, anchors: &[VarId], tuple: &[NodeId]) -> Option<Query> {
    let subst: BTreeMap<VarId, Term> = anchors
        .iter()
        .zip(tuple)
        .map(|(&v, &n)| {
            let term = match n {
                NodeId::Entity(e) => Term::Entity(e),
                NodeId::Concept(c) => Term::Concept(c),
            };
            (v, term)
        })
        .collect();
    let atoms: Vec<Atom> = q
        .atoms
        .iter()
        .map(|a| {
            let fix = |t: Term| match t {
                Term::Var(v) => subst.get(&v).copied().unwrap_or(t),
                other => other,
            };
            Atom::new(a.rel, fix(a.subject), fix(a.object))
        })
        .collect();
    crate::query::rebuild(q, atoms, q.branches.clone(), &[])
}

/// Strategic ontology-driven training set: every valid labeling of every
/// directed shape variant, anchored at entities that give the query certain
/// answers, plus generalizations of reverse-instantiated data patterns.
#[allow(clippy::too_many_arguments)]
pub fn sample_onto(
    g: &KnowledgeGraph,
    o: &Ontology,
    symbols: &SymbolTable,
    shapes: &[Shape],
    anchor_fraction: f64,
    caps: OntoCaps,
    seed: u64,
    gen_depth: usize,
) -> Result<Vec<TrainSample>> {
    require_train_shapes(shapes)?;
    if !(anchor_fraction > 0.0 && anchor_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "anchor_fraction {anchor_fraction} outside (0,1]"
        )));
    }
    let sat = saturate(g, o, symbols);
    let hierarchy = subsumption_closure(o, symbols);
    let sets = derived_sets(o, &hierarchy, symbols);
    let type_rel = symbols.type_relation();
    let root = Rng::seeded(seed);

    let mut out: Vec<TrainSample> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut per_shape_count: BTreeMap<Shape, usize> = BTreeMap::new();

    let emit = |q: Query,
                    out: &mut Vec<TrainSample>,
                    seen: &mut BTreeSet<String>,
                    per_shape_count: &mut BTreeMap<Shape, usize>,
                    sat: &KnowledgeGraph,
                    o: &Ontology,
                    symbols: &SymbolTable| {
        let Some(tag) = shape_of(&q) else { return };
        let count = per_shape_count.entry(tag).or_insert(0);
        if *count >= caps.per_shape {
            return;
        }
        if !seen.insert(canonical_form(&q)) {
            return;
        }
        let positives = answers(&q, sat);
        if positives.is_empty() {
            return;
        }
        let gens = embeddable_gens(&q, o, symbols, gen_depth);
        let idx = *count;
        *count += 1;
        out.push(TrainSample {
            id: format!("onto-{tag}-{idx:05}"),
            query: q,
            positives,
            gens,
            strategy: Strategy::Onto,
        });
    };

    // (a) exhaustive valid labelings, anchored where certain answers exist
    for &tag in shapes {
        let mut rng = root.derive(&format!("onto.{tag}"));
        for variant in enumerate_variants(tag) {
            for labeling in valid_labelings(&variant, &sets, &hierarchy, symbols) {
                // relations without facts in the closure cannot match
                let feasible = labeling.edges.iter().all(|label| match label {
                    EdgeLabel::Role(r) => !sat.relation_pairs(*r).is_empty(),
                    EdgeLabel::Type(c) => !sat.concept_members(*c, type_rel).is_empty(),
                });
                if !feasible {
                    continue;
                }
                let Some((skeleton, anchors)) = labeled_skeleton(&variant, &labeling, type_rel)
                else {
                    continue;
                };
                if anchors.is_empty() {
                    emit(
                        skeleton,
                        &mut out,
                        &mut seen,
                        &mut per_shape_count,
                        &sat,
                        o,
                        symbols,
                    );
                    continue;
                }
                let tuples: Vec<Vec<NodeId>> =
                    project_matches(&skeleton, &sat, &anchors).into_iter().collect();
                if tuples.is_empty() {
                    continue;
                }
                let want = ((anchor_fraction * tuples.len() as f64).round() as usize)
                    .clamp(1, tuples.len());
                for idx in rng.sample_indices(tuples.len(), want) {
                    if let Some(q) = ground_anchors(&skeleton, &anchors, &tuples[idx]) {
                        emit(
                            q,
                            &mut out,
                            &mut seen,
                            &mut per_shape_count,
                            &sat,
                            o,
                            symbols,
                        );
                    }
                }
            }
        }
    }

    // (b) generalized data patterns the ontology does not capture
    let pool = answer_pool(g);
    for &tag in shapes {
        let mut rng = root.derive(&format!("onto.patterns.{tag}"));
        let mut tries = 0;
        let mut found = 0;
        while found < caps.data_patterns_per_shape && tries < caps.data_patterns_per_shape * 40 {
            tries += 1;
            let Some(q) = walk_shape(g, &mut rng, tag, &pool) else {
                continue;
            };
            found += 1;
            let set = gen_closure(
                &q,
                o,
                symbols,
                Depth::Bounded(gen_depth),
                &RewriteOptions::default(),
            );
            for m in set.members {
                emit(
                    m.query,
                    &mut out,
                    &mut seen,
                    &mut per_shape_count,
                    &sat,
                    o,
                    symbols,
                );
            }
        }
    }

    if out.is_empty() {
        eprintln!("warning: strategic sampling produced no queries (no valid labelings and no data patterns)");
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Negative sampling
// ---------------------------------------------------------------------------

/// k entities outside the positive set: distinct draws when the complement
/// is large enough, independent uniform draws otherwise.
pub fn negatives(
    positives: &BTreeSet<EntityId>,
    n_entities: usize,
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<EntityId>> {
    let pool: Vec<EntityId> = (0..n_entities as u32)
        .map(EntityId)
        .filter(|e| !positives.contains(e))
        .collect();
    negatives_from_pool(&pool, k, rng)
}

/// Draw from a precomputed complement; the training loop caches pools per
/// sample to keep batch assembly off the allocator.
pub fn negatives_from_pool(
    pool: &[EntityId],
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<EntityId>> {
    if pool.is_empty() {
        return Err(Error::Sampling("every entity is a positive answer".into()));
    }
    if k <= pool.len() {
        // distinct draws by rejection; k is small relative to the pool in
        // every configuration that reaches here
        let mut out: Vec<EntityId> = Vec::with_capacity(k);
        while out.len() < k {
            let e = pool[rng.below(pool.len())];
            if !out.contains(&e) {
                out.push(e);
            }
        }
        Ok(out)
    } else {
        Ok((0..k).map(|_| pool[rng.below(pool.len())]).collect())
    }
}

// ---------------------------------------------------------------------------
// Evaluation-set construction
// ---------------------------------------------------------------------------

/// Nested split with its per-case easy/hard graphs.
pub struct EvalGraphs<'a> {
    pub sample_from: &'a KnowledgeGraph,
    pub easy_from: &'a KnowledgeGraph,
    pub hard_from: &'a KnowledgeGraph,
}

/// Build evaluation queries for one test case. Hard answers are those
/// retrievable from the case's larger graph but not its smaller one; only
/// queries with non-empty hard sets are kept. Case B additionally skips
/// queries whose canonical form appears in `exclude`.
#[allow(clippy::too_many_arguments)]
pub fn build_eval(
    case: EvalCase,
    graphs: &EvalGraphs,
    shapes: &[Shape],
    n_per_shape: usize,
    seed: u64,
    exclude: &BTreeSet<String>,
) -> Vec<EvalSample> {
    let pool = answer_pool(graphs.sample_from);
    let root = Rng::seeded(seed);
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for &shape in shapes {
        let mut rng = root.derive(&format!("eval.{}.{shape}", case.as_str()));
        let mut emitted = 0usize;
        let budget = n_per_shape.saturating_mul(80) + 80;
        let mut attempts = 0usize;
        while emitted < n_per_shape && attempts < budget {
            attempts += 1;
            let Some(q) = walk_shape(graphs.sample_from, &mut rng, shape, &pool) else {
                continue;
            };
            let canon = canonical_form(&q);
            if exclude.contains(&canon) || seen.contains(&canon) {
                continue;
            }
            let easy = answers(&q, graphs.easy_from);
            let full = answers(&q, graphs.hard_from);
            let hard: BTreeSet<EntityId> = full.difference(&easy).copied().collect();
            if hard.is_empty() {
                continue;
            }
            seen.insert(canon);
            out.push(EvalSample {
                id: format!("{}-{shape}-{emitted:05}", case.as_str()),
                query: q,
                easy,
                hard,
                case,
            });
            emitted += 1;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// File round-trips
// ---------------------------------------------------------------------------

use crate::query::{to_query_record, ParsedQuery, QueryRecord};

pub fn train_sample_record(sample: &TrainSample, symbols: &SymbolTable) -> QueryRecord {
    let empty = BTreeSet::new();
    let (plain, certain) = match sample.strategy {
        Strategy::Plain => (&sample.positives, &empty),
        _ => (&empty, &sample.positives),
    };
    to_query_record(
        &sample.id,
        &sample.query,
        symbols,
        Some((plain, certain, &empty)),
        &sample.gens,
        Some(sample.strategy.as_str()),
        None,
    )
}

pub fn train_sample_from_parsed(parsed: ParsedQuery) -> Result<TrainSample> {
    let strategy = parsed
        .strategy
        .as_deref()
        .and_then(Strategy::parse)
        .unwrap_or(Strategy::Plain);
    let answers = parsed
        .answers
        .ok_or_else(|| Error::Query(format!("sample {} lacks answers", parsed.id)))?;
    let positives = if answers.certain.is_empty() {
        answers.plain
    } else {
        answers.certain
    };
    if positives.is_empty() {
        return Err(Error::Query(format!("sample {} has no positives", parsed.id)));
    }
    Ok(TrainSample {
        id: parsed.id,
        query: parsed.query,
        positives,
        gens: parsed.gens,
        strategy,
    })
}

pub fn eval_sample_record(sample: &EvalSample, symbols: &SymbolTable) -> QueryRecord {
    let all: BTreeSet<EntityId> = sample.easy.union(&sample.hard).copied().collect();
    to_query_record(
        &sample.id,
        &sample.query,
        symbols,
        Some((&sample.easy, &all, &sample.hard)),
        &[],
        None,
        None,
    )
}

pub fn eval_sample_from_parsed(parsed: ParsedQuery, case: EvalCase) -> Result<EvalSample> {
    let answers = parsed
        .answers
        .ok_or_else(|| Error::Query(format!("eval sample {} lacks answers", parsed.id)))?;
    if answers.hard.is_empty() {
        return Err(Error::Query(format!("eval sample {} has no hard answers", parsed.id)));
    }
    Ok(EvalSample {
        id: parsed.id,
        query: parsed.query,
        easy: answers.plain,
        hard: answers.hard,
        case,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::load_triples;
    use crate::ontology::load_ontology;
    use std::io::Cursor;

    fn fig1() -> (KnowledgeGraph, Ontology, SymbolTable) {
        let mut sym = SymbolTable::new();
        let g = load_triples(
            Cursor::new(include_str!("../../../fixtures/fig1.tsv")),
            &mut sym,
        )
        .unwrap();
        let o = load_ontology(
            Cursor::new(include_str!("../../../fixtures/fig1.onto")),
            &mut sym,
        )
        .unwrap();
        (g, o, sym)
    }

    #[test]
    fn plain_sampling_zero_is_empty() {
        let (g, _, _) = fig1();
        assert!(sample_plain(&g, &[Shape::TwoP], 0, 1).unwrap().is_empty());
    }

    #[test]
    fn plain_sampling_is_deterministic() {
        let (g, _, sym) = fig1();
        let a = sample_plain(&g, &Shape::TRAIN, 3, 42).unwrap();
        let b = sample_plain(&g, &Shape::TRAIN, 3, 42).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(canonical_form(&x.query), canonical_form(&y.query));
            assert_eq!(x.positives, y.positives);
        }
        let _ = sym;
    }

    #[test]
    fn plain_samples_have_answers_and_shape() {
        let (g, _, _) = fig1();
        for s in sample_plain(&g, &Shape::TRAIN, 4, 7).unwrap() {
            assert!(!s.positives.is_empty());
            assert!(shape_of(&s.query).is_some());
            assert_eq!(s.positives, answers(&s.query, &g));
        }
    }

    #[test]
    fn plain_rejects_eval_only_shapes() {
        let (g, _, _) = fig1();
        assert!(sample_plain(&g, &[Shape::Ip], 1, 1).is_err());
    }

    #[test]
    fn certain_positives_are_certain_answers() {
        let (g, o, sym) = fig1();
        let sat = saturate(&g, &o, &sym);
        let samples =
            sample_certain(&g, &o, &sym, &[Shape::TwoP], 4, 11, CertainMode::Gen, 2).unwrap();
        assert!(!samples.is_empty());
        for s in &samples {
            assert_eq!(s.positives, answers(&s.query, &sat));
        }
    }

    #[test]
    fn empty_ontology_certain_equals_plain() {
        let (g, _, sym) = fig1();
        let o = Ontology::default();
        let certain =
            sample_certain(&g, &o, &sym, &[Shape::OneP], 5, 3, CertainMode::Gen, 2).unwrap();
        for s in &certain {
            assert_eq!(s.positives, answers(&s.query, &g));
            assert!(s.gens.is_empty());
        }
    }

    #[test]
    fn gen_mode_attaches_generalizations() {
        let (g, o, sym) = fig1();
        // queries over teachesAt generalize via teachesAt ⊑ worksFor
        let samples =
            sample_certain(&g, &o, &sym, &Shape::TRAIN, 6, 5, CertainMode::Gen, 2).unwrap();
        assert!(samples.iter().any(|s| !s.gens.is_empty()));
    }

    #[test]
    fn valid_labeling_example_from_fixture() {
        // degreeFrom then type-University is valid; degreeFrom then worksFor
        // is not (range/domain do not intersect)
        let (_, o, sym) = fig1();
        let closure = subsumption_closure(&o, &sym);
        let sets = derived_sets(&o, &closure, &sym);
        let degree_from = sym.relation("degreeFrom").unwrap();
        let works_for = sym.relation("worksFor").unwrap();
        let uni = sym.concept("University").unwrap();
        // chain with answer at the source: A ←nothing; edges point away
        let shape = QueryShape {
            node_count: 3,
            edges: vec![(0, 1), (1, 2)],
            distinguished: 0,
        };
        let labelings = valid_labelings(&shape, &sets, &closure, &sym);
        let target = Labeling {
            edges: vec![EdgeLabel::Role(degree_from), EdgeLabel::Type(uni)],
        };
        assert!(labelings.contains(&target));
        let invalid = Labeling {
            edges: vec![EdgeLabel::Role(degree_from), EdgeLabel::Role(works_for)],
        };
        assert!(!labelings.contains(&invalid));
    }

    #[test]
    fn empty_ontology_multi_edge_labelings_are_empty() {
        let mut sym = SymbolTable::new();
        for r in ["r1", "r2"] {
            sym.intern_relation(r).unwrap();
        }
        let o = Ontology::default();
        let closure = subsumption_closure(&o, &sym);
        let sets = derived_sets(&o, &closure, &sym);
        let shape = QueryShape {
            node_count: 3,
            edges: vec![(0, 1), (1, 2)],
            distinguished: 2,
        };
        assert!(valid_labelings(&shape, &sets, &closure, &sym).is_empty());
    }

    #[test]
    fn labelings_match_bruteforce_predicate() {
        // exhaustive check of the recursive enumeration against a filter
        // over the full product space
        let (_, o, sym) = fig1();
        let closure = subsumption_closure(&o, &sym);
        let sets = derived_sets(&o, &closure, &sym);
        for variant in enumerate_variants(Shape::TwoP)
            .into_iter()
            .chain(enumerate_variants(Shape::TwoI))
        {
            let fast = valid_labelings(&variant, &sets, &closure, &sym);
            let deg = undirected_degree(&variant);
            let roles: Vec<RelationId> = sym
                .all_relations()
                .filter(|&r| r != sym.type_relation())
                .collect();
            let concepts: Vec<ConceptId> = sym.all_concepts().collect();
            let mut slow = Vec::new();
            let mut space: Vec<Vec<EdgeLabel>> = vec![vec![]];
            for &(_, v) in &variant.edges {
                let mut labels: Vec<EdgeLabel> =
                    roles.iter().map(|&r| EdgeLabel::Role(r)).collect();
                if deg[v] == 1 && v != variant.distinguished {
                    labels.extend(concepts.iter().map(|&c| EdgeLabel::Type(c)));
                }
                let mut next = Vec::new();
                for prefix in &space {
                    for &l in &labels {
                        let mut p = prefix.clone();
                        p.push(l);
                        next.push(p);
                    }
                }
                space = next;
            }
            'cand: for assignment in space {
                for i in 0..assignment.len() {
                    for j in 0..i {
                        for node in 0..variant.node_count {
                            let (Some(a), Some(b)) = (
                                incidence(&variant, i, assignment[i], node),
                                incidence(&variant, j, assignment[j], node),
                            ) else {
                                continue;
                            };
                            if !pair_valid(a, b, &sets, &closure) {
                                continue 'cand;
                            }
                        }
                    }
                }
                slow.push(Labeling { edges: assignment });
            }
            assert_eq!(fast.len(), slow.len());
            for l in &slow {
                assert!(fast.contains(l));
            }
        }
    }

    #[test]
    fn onto_sampling_covers_populated_relations_for_1p() {
        let (g, o, sym) = fig1();
        let caps = OntoCaps { per_shape: 10_000, data_patterns_per_shape: 0 };
        let samples =
            sample_onto(&g, &o, &sym, &[Shape::OneP], 1.0, caps, 3, 2).unwrap();
        // every relation with instances appears as a forward 1p query
        let sat = saturate(&g, &o, &sym);
        for rel in sym.all_relations().filter(|&r| r != sym.type_relation()) {
            if sat.relation_pairs(rel).is_empty() {
                continue;
            }
            assert!(
                samples.iter().any(|s| s.query.atoms.iter().any(|a| a.rel == rel)),
                "relation {} missing",
                sym.relation_name(rel)
            );
        }
        // exhaustiveness at full fraction: no duplicates
        let canon: BTreeSet<String> =
            samples.iter().map(|s| canonical_form(&s.query)).collect();
        assert_eq!(canon.len(), samples.len());
    }

    #[test]
    fn onto_sampling_respects_caps() {
        let (g, o, sym) = fig1();
        let caps = OntoCaps { per_shape: 3, data_patterns_per_shape: 2 };
        let samples = sample_onto(&g, &o, &sym, &Shape::TRAIN, 1.0, caps, 3, 2).unwrap();
        let mut counts: BTreeMap<Shape, usize> = BTreeMap::new();
        for s in &samples {
            *counts.entry(shape_of(&s.query).unwrap()).or_insert(0) += 1;
        }
        for (_, c) in counts {
            assert!(c <= 3);
        }
    }

    #[test]
    fn negatives_avoid_positives() {
        let mut rng = Rng::seeded(5);
        let positives: BTreeSet<EntityId> = [EntityId(0), EntityId(2)].into_iter().collect();
        let negs = negatives(&positives, 10, 6, &mut rng).unwrap();
        assert_eq!(negs.len(), 6);
        assert!(negs.iter().all(|e| !positives.contains(e)));
        // distinct because the pool (8) is at least k (6)
        let set: BTreeSet<EntityId> = negs.iter().copied().collect();
        assert_eq!(set.len(), 6);
    }

    #[test]
    fn negatives_k_zero_is_empty() {
        let mut rng = Rng::seeded(5);
        let positives: BTreeSet<EntityId> = BTreeSet::new();
        assert!(negatives(&positives, 4, 0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn negatives_all_positive_is_error() {
        let mut rng = Rng::seeded(5);
        let positives: BTreeSet<EntityId> = (0..4).map(EntityId).collect();
        assert!(negatives(&positives, 4, 1, &mut rng).is_err());
    }

    #[test]
    fn negatives_single_complement_repeats() {
        let mut rng = Rng::seeded(5);
        let positives: BTreeSet<EntityId> = (1..5).map(EntityId).collect();
        let negs = negatives(&positives, 5, 8, &mut rng).unwrap();
        assert!(negs.iter().all(|&e| e == EntityId(0)));
    }

    #[test]
    fn negatives_chi_square_uniformity() {
        // 10^5 draws over a 100-entity complement
        let mut rng = Rng::seeded(77);
        let positives: BTreeSet<EntityId> = BTreeSet::new();
        let draws = negatives(&positives, 100, 100_000, &mut rng).unwrap();
        let mut counts = [0f64; 100];
        for e in draws {
            counts[e.0 as usize] += 1.0;
        }
        let expected = 1000.0;
        let chi2: f64 = counts.iter().map(|&c| (c - expected).powi(2) / expected).sum();
        // 99 degrees of freedom; the p > 0.01 critical value is ~134.6
        assert!(chi2 < 134.6, "chi2 = {chi2}");
    }

    #[test]
    fn case_b_empty_ontology_yields_nothing() {
        let (g, _, sym) = fig1();
        let o = Ontology::default();
        let sat = saturate(&g, &o, &sym);
        let graphs = EvalGraphs { sample_from: &sat, easy_from: &g, hard_from: &sat };
        let samples = build_eval(EvalCase::B, &graphs, &Shape::ALL, 5, 3, &BTreeSet::new());
        assert!(samples.is_empty());
    }

    #[test]
    fn case_b_fig1_example2_split() {
        let (g, o, mut sym) = fig1();
        let sat = saturate(&g, &o, &sym);
        let pq = crate::query::parse_query_line(
            r#"{"id":"ex2","shape":"2i","atoms":[["?x","type","Professor"],["?x","degreeFrom","mit"]],"answer_var":"?x"}"#,
            &mut sym,
        )
        .unwrap();
        let easy = answers(&pq.query, &g);
        let full = answers(&pq.query, &sat);
        let hard: BTreeSet<EntityId> = full.difference(&easy).copied().collect();
        let mat = sym.entity("mat").unwrap();
        let bob = sym.entity("bob").unwrap();
        assert_eq!(easy, [mat].into_iter().collect());
        assert_eq!(hard, [bob].into_iter().collect());
    }

    #[test]
    fn case_a_removed_edge_makes_hard_answer() {
        // three triples; dropping the bridge edge breaks the only match
        let mut sym = SymbolTable::new();
        let g_test = load_triples(
            Cursor::new("a\tr\tb\nb\ts\tc\nx\tr\ty\n"),
            &mut sym,
        )
        .unwrap();
        let g_valid = load_triples(Cursor::new("a\tr\tb\nx\tr\ty\n"), &mut sym).unwrap();
        let graphs = EvalGraphs { sample_from: &g_test, easy_from: &g_valid, hard_from: &g_test };
        let samples = build_eval(EvalCase::A, &graphs, &[Shape::TwoP], 4, 9, &BTreeSet::new());
        assert!(!samples.is_empty());
        let c = sym.entity("c").unwrap();
        for s in &samples {
            assert!(s.hard.contains(&c));
            assert!(s.easy.is_disjoint(&s.hard));
        }
    }

    #[test]
    fn eval_exclusion_by_canonical_form() {
        let (g, o, sym) = fig1();
        let sat = saturate(&g, &o, &sym);
        let graphs = EvalGraphs { sample_from: &sat, easy_from: &g, hard_from: &sat };
        let all = build_eval(EvalCase::B, &graphs, &[Shape::OneP], 50, 3, &BTreeSet::new());
        assert!(!all.is_empty());
        let exclude: BTreeSet<String> =
            all.iter().map(|s| canonical_form(&s.query)).collect();
        let none = build_eval(EvalCase::B, &graphs, &[Shape::OneP], 50, 3, &exclude);
        assert!(none.is_empty());
    }

    #[test]
    fn train_sample_file_roundtrip() {
        let (g, o, mut sym) = fig1();
        let samples =
            sample_certain(&g, &o, &sym, &Shape::TRAIN, 3, 21, CertainMode::Gen, 2).unwrap();
        for s in &samples {
            let rec = train_sample_record(s, &sym);
            let line = crate::query::record_to_line(&rec);
            let parsed = crate::query::parse_query_line(&line, &mut sym).unwrap();
            let back = train_sample_from_parsed(parsed).unwrap();
            assert_eq!(canonical_form(&back.query), canonical_form(&s.query));
            assert_eq!(back.positives, s.positives);
            assert_eq!(back.gens.len(), s.gens.len());
            assert_eq!(back.strategy, s.strategy);
        }
    }
}
