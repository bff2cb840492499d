//! Reference implementations that trade speed for obviousness.
//!
//! These are the oracles the test suites compare the production paths
//! against: query answering by exhaustive assignment enumeration, saturation
//! by re-scanning all rules until nothing changes, and derived sets by
//! brute-force axiom-pair enumeration. They deliberately share no code with
//! the indexed implementations.

use std::collections::BTreeSet;

use crate::kg::{ConceptId, EntityId, KnowledgeGraph, NodeId, RelationId, SymbolTable, Triple};
use crate::ontology::{Axiom, Ontology, RelationSets};
use crate::query::{Query, Term, VarId};

/// All answers of `q` on `g` by trying every assignment of query variables
/// to nodes occurring in the graph.
pub fn answers_by_enumeration(q: &Query, g: &KnowledgeGraph) -> BTreeSet<EntityId> {
    let mut universe: Vec<NodeId> = Vec::new();
    universe.extend(g.entity_set().iter().map(|&e| NodeId::Entity(e)));
    universe.extend(g.concept_set().iter().map(|&c| NodeId::Concept(c)));

    let n_vars = q.var_names.len();
    let mut assignment: Vec<Option<NodeId>> = vec![None; n_vars];
    let mut out = BTreeSet::new();

    fn term_value(t: Term, assignment: &[Option<NodeId>]) -> Option<NodeId> {
        match t {
            Term::Var(VarId(v)) => assignment[v as usize],
            Term::Entity(e) => Some(NodeId::Entity(e)),
            Term::Concept(c) => Some(NodeId::Concept(c)),
        }
    }

    fn rec(
        q: &Query,
        g: &KnowledgeGraph,
        universe: &[NodeId],
        assignment: &mut Vec<Option<NodeId>>,
        v: usize,
        out: &mut BTreeSet<EntityId>,
    ) {
        if v == assignment.len() {
            for branch in &q.branches {
                let ok = branch.iter().all(|&ai| {
                    let atom = q.atoms[ai];
                    match (
                        term_value(atom.subject, assignment),
                        term_value(atom.object, assignment),
                    ) {
                        (Some(NodeId::Entity(h)), Some(t)) => {
                            g.contains(&Triple::new(h, atom.rel, t))
                        }
                        _ => false,
                    }
                });
                if ok {
                    if let Some(NodeId::Entity(a)) = assignment[q.answer.0 as usize] {
                        out.insert(a);
                    }
                    return;
                }
            }
            return;
        }
        for &node in universe {
            assignment[v] = Some(node);
            rec(q, g, universe, assignment, v + 1, out);
        }
        assignment[v] = None;
    }

    rec(q, g, &universe, &mut assignment, 0, &mut out);
    out
}

/// Apply every rule against every triple until a full pass adds nothing.
pub fn saturate_by_rescan(
    g: &KnowledgeGraph,
    o: &Ontology,
    symbols: &SymbolTable,
) -> BTreeSet<Triple> {
    let type_rel = symbols.type_relation();
    let mut facts: BTreeSet<Triple> = g.triples().copied().collect();
    loop {
        let mut fresh: Vec<Triple> = Vec::new();
        for t in &facts {
            for ax in o.axioms() {
                match *ax {
                    Axiom::SubConcept { sub, sup } => {
                        if t.rel == type_rel && t.tail == NodeId::Concept(sub) {
                            fresh.push(Triple::new(t.head, type_rel, NodeId::Concept(sup)));
                        }
                    }
                    Axiom::Domain { role, concept } => {
                        if t.rel == role {
                            fresh.push(Triple::new(t.head, type_rel, NodeId::Concept(concept)));
                        }
                    }
                    Axiom::Range { role, concept } => {
                        if t.rel == role {
                            if let NodeId::Entity(tail) = t.tail {
                                fresh.push(Triple::new(tail, type_rel, NodeId::Concept(concept)));
                            }
                        }
                    }
                    Axiom::SubRole { sub, sup } => {
                        if t.rel == sub {
                            fresh.push(Triple::new(t.head, sup, t.tail));
                        }
                    }
                    Axiom::InvSubRole { sub, sup } => {
                        if t.rel == sub {
                            if let NodeId::Entity(tail) = t.tail {
                                fresh.push(Triple::new(tail, sup, NodeId::Entity(t.head)));
                            }
                        }
                    }
                    Axiom::Exists { .. } | Axiom::ExistsTyped { .. } => {}
                }
            }
        }
        let before = facts.len();
        facts.extend(fresh);
        if facts.len() == before {
            return facts;
        }
    }
}

/// Reflexive-transitive concept subsumption by path search over the axioms.
fn concept_leq_naive(o: &Ontology, a: ConceptId, b: ConceptId) -> bool {
    if a == b {
        return true;
    }
    let mut seen = BTreeSet::from([a]);
    let mut stack = vec![a];
    while let Some(c) = stack.pop() {
        for ax in o.axioms() {
            if let Axiom::SubConcept { sub, sup } = *ax {
                if sub == c && seen.insert(sup) {
                    if sup == b {
                        return true;
                    }
                    stack.push(sup);
                }
            }
        }
    }
    false
}

/// Signed-role subsumption by path search: (role, inverted?) pairs.
fn role_leq_naive(
    o: &Ontology,
    from: (RelationId, bool),
    to: (RelationId, bool),
) -> bool {
    if from == to {
        return true;
    }
    let mut seen = BTreeSet::from([from]);
    let mut stack = vec![from];
    while let Some((r, inv)) = stack.pop() {
        let push = |next: (RelationId, bool), stack: &mut Vec<(RelationId, bool)>, seen: &mut BTreeSet<(RelationId, bool)>| {
            if seen.insert(next) {
                stack.push(next);
            }
        };
        for ax in o.axioms() {
            match *ax {
                Axiom::SubRole { sub, sup } if sub == r => {
                    push((sup, inv), &mut stack, &mut seen);
                }
                Axiom::InvSubRole { sub, sup } if sub == r => {
                    push((sup, !inv), &mut stack, &mut seen);
                }
                _ => {}
            }
        }
        if seen.contains(&to) {
            return true;
        }
    }
    seen.contains(&to)
}

/// Derived sets built directly from the definitions, enumerating all axiom
/// pairs without any precomputed closure.
pub fn derived_sets_by_bruteforce(
    o: &Ontology,
    symbols: &SymbolTable,
    p: RelationId,
) -> RelationSets {
    let mut sets = RelationSets::default();
    for ax in o.axioms() {
        if let Axiom::InvSubRole { sub, sup } = *ax {
            if sub == p {
                sets.inv.insert(sup);
            }
        }
    }
    let comparable = |a: ConceptId, b: ConceptId| {
        concept_leq_naive(o, a, b) || concept_leq_naive(o, b, a)
    };
    // dom(p): some declared ∃ρ ⊑ A' with +p ⊑* ρ; range(p): with −p ⊑* ρ
    let mut decls: Vec<((RelationId, bool), ConceptId)> = Vec::new();
    for ax in o.axioms() {
        match *ax {
            Axiom::Domain { role, concept } => decls.push(((role, false), concept)),
            Axiom::Range { role, concept } => decls.push(((role, true), concept)),
            _ => {}
        }
    }
    for a in symbols.all_concepts() {
        for &(rho, concept) in &decls {
            if role_leq_naive(o, (p, false), rho) && comparable(a, concept) {
                sets.dom.insert(a);
            }
            if role_leq_naive(o, (p, true), rho) && comparable(a, concept) {
                sets.range.insert(a);
            }
        }
    }
    for q in symbols.all_relations() {
        let other = derived_dom_range(o, symbols, q);
        if sets.range.iter().any(|c| other.0.contains(c)) {
            sets.follows.insert(q);
        }
        let inv_q: BTreeSet<RelationId> = o
            .axioms()
            .iter()
            .filter_map(|ax| match *ax {
                Axiom::InvSubRole { sub, sup } if sub == q => Some(sup),
                _ => None,
            })
            .collect();
        let inter_r_inv = sets.inv.iter().any(|&p1| {
            inv_q.iter().any(|&p2| {
                let d1 = derived_dom_range(o, symbols, p1).0;
                let d2 = derived_dom_range(o, symbols, p2).0;
                d1.iter().any(|c| d2.contains(c))
            })
        });
        if sets.range.iter().any(|c| other.1.contains(c)) || inter_r_inv {
            sets.inter_r.insert(q);
        }
        let inter_d_inv = sets.inv.iter().any(|&p1| {
            inv_q.iter().any(|&p2| {
                let r1 = derived_dom_range(o, symbols, p1).1;
                let r2 = derived_dom_range(o, symbols, p2).1;
                r1.iter().any(|c| r2.contains(c))
            })
        });
        if sets.dom.iter().any(|c| other.0.contains(c)) || inter_d_inv {
            sets.inter_d.insert(q);
        }
    }
    sets
}

fn derived_dom_range(
    o: &Ontology,
    symbols: &SymbolTable,
    p: RelationId,
) -> (BTreeSet<ConceptId>, BTreeSet<ConceptId>) {
    let comparable = |a: ConceptId, b: ConceptId| {
        concept_leq_naive(o, a, b) || concept_leq_naive(o, b, a)
    };
    let mut dom = BTreeSet::new();
    let mut range = BTreeSet::new();
    for ax in o.axioms() {
        let (rho, concept) = match *ax {
            Axiom::Domain { role, concept } => ((role, false), concept),
            Axiom::Range { role, concept } => ((role, true), concept),
            _ => continue,
        };
        for a in symbols.all_concepts() {
            if comparable(a, concept) {
                if role_leq_naive(o, (p, false), rho) {
                    dom.insert(a);
                }
                if role_leq_naive(o, (p, true), rho) {
                    range.insert(a);
                }
            }
        }
    }
    (dom, range)
}
