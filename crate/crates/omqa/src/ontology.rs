//! DL-Lite axiom store, subsumption closure, derived relation sets and
//! named-individual saturation.
//!
//! Saturation materializes every fact derivable over the named individuals;
//! right-existential axioms (A ⊑ ∃p, A ⊑ ∃p.B) generate no facts and act
//! through query rewriting instead.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::kg::{
    ConceptId, KnowledgeGraph, NodeId, RelationId, SymbolTable, Triple,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Axiom {
    /// A ⊑ B
    SubConcept { sub: ConceptId, sup: ConceptId },
    /// p ⊑ s
    SubRole { sub: RelationId, sup: RelationId },
    /// p⁻ ⊑ s
    InvSubRole { sub: RelationId, sup: RelationId },
    /// ∃p ⊑ A
    Domain { role: RelationId, concept: ConceptId },
    /// ∃p⁻ ⊑ A
    Range { role: RelationId, concept: ConceptId },
    /// A ⊑ ∃p
    Exists { concept: ConceptId, role: RelationId },
    /// A ⊑ ∃p.B
    ExistsTyped {
        concept: ConceptId,
        role: RelationId,
        filler: ConceptId,
    },
}

#[derive(Debug, Clone, Default)]
pub struct Ontology {
    axioms: Vec<Axiom>,
}

impl Ontology {
    pub fn new(axioms: impl IntoIterator<Item = Axiom>) -> Self {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for ax in axioms {
            if seen.insert(ax) {
                out.push(ax);
            }
        }
        Ontology { axioms: out }
    }

    pub fn axioms(&self) -> &[Axiom] {
        &self.axioms
    }

    pub fn len(&self) -> usize {
        self.axioms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axioms.is_empty()
    }
}

/// One axiom per line:
/// `sub_concept A B | sub_role p s | inv_sub_role p s | domain p A |
///  range p A | exists A p | exists_typed A p B`; `#` comments.
pub fn load_ontology(reader: impl BufRead, symbols: &mut SymbolTable) -> Result<Ontology> {
    let mut axioms = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let arity_err = |n: usize| {
            Error::parse(
                lineno,
                format!("keyword `{}` expects {} names, got {}", parts[0], n, parts.len() - 1),
            )
        };
        let rel = |symbols: &mut SymbolTable, name: &str| -> Result<RelationId> {
            if name == crate::kg::TYPE_RELATION {
                return Err(Error::Schema(format!(
                    "line {lineno}: reserved relation `type` cannot appear in axioms"
                )));
            }
            symbols.intern_relation(name)
        };
        let ax = match parts[0] {
            "sub_concept" => {
                if parts.len() != 3 {
                    return Err(arity_err(2));
                }
                Axiom::SubConcept {
                    sub: symbols.intern_concept(parts[1])?,
                    sup: symbols.intern_concept(parts[2])?,
                }
            }
            "sub_role" => {
                if parts.len() != 3 {
                    return Err(arity_err(2));
                }
                Axiom::SubRole {
                    sub: rel(symbols, parts[1])?,
                    sup: rel(symbols, parts[2])?,
                }
            }
            "inv_sub_role" => {
                if parts.len() != 3 {
                    return Err(arity_err(2));
                }
                Axiom::InvSubRole {
                    sub: rel(symbols, parts[1])?,
                    sup: rel(symbols, parts[2])?,
                }
            }
            "domain" => {
                if parts.len() != 3 {
                    return Err(arity_err(2));
                }
                Axiom::Domain {
                    role: rel(symbols, parts[1])?,
                    concept: symbols.intern_concept(parts[2])?,
                }
            }
            "range" => {
                if parts.len() != 3 {
                    return Err(arity_err(2));
                }
                Axiom::Range {
                    role: rel(symbols, parts[1])?,
                    concept: symbols.intern_concept(parts[2])?,
                }
            }
            "exists" => {
                if parts.len() != 3 {
                    return Err(arity_err(2));
                }
                Axiom::Exists {
                    concept: symbols.intern_concept(parts[1])?,
                    role: rel(symbols, parts[2])?,
                }
            }
            "exists_typed" => {
                if parts.len() != 4 {
                    return Err(arity_err(3));
                }
                Axiom::ExistsTyped {
                    concept: symbols.intern_concept(parts[1])?,
                    role: rel(symbols, parts[2])?,
                    filler: symbols.intern_concept(parts[3])?,
                }
            }
            other => {
                return Err(Error::parse(lineno, format!("unknown keyword `{other}`")));
            }
        };
        axioms.push(ax);
    }
    Ok(Ontology::new(axioms))
}

/// A role or its inverse; the unit of the role hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SignedRole {
    pub rel: RelationId,
    pub inverse: bool,
}

impl SignedRole {
    pub fn plain(rel: RelationId) -> Self {
        SignedRole { rel, inverse: false }
    }

    pub fn inv(rel: RelationId) -> Self {
        SignedRole { rel, inverse: true }
    }

    pub fn flipped(self) -> Self {
        SignedRole {
            rel: self.rel,
            inverse: !self.inverse,
        }
    }
}

/// Reflexive-transitive closure of ⊑ over concepts and signed roles.
#[derive(Debug, Clone)]
pub struct HierarchyClosure {
    concept_up: BTreeMap<ConceptId, BTreeSet<ConceptId>>,
    role_up: BTreeMap<SignedRole, BTreeSet<SignedRole>>,
}

impl HierarchyClosure {
    pub fn concept_leq(&self, a: ConceptId, b: ConceptId) -> bool {
        a == b || self.concept_up.get(&a).is_some_and(|s| s.contains(&b))
    }

    pub fn role_leq(&self, a: SignedRole, b: SignedRole) -> bool {
        a == b || self.role_up.get(&a).is_some_and(|s| s.contains(&b))
    }

    pub fn concept_ups(&self, a: ConceptId) -> &BTreeSet<ConceptId> {
        static EMPTY: BTreeSet<ConceptId> = BTreeSet::new();
        self.concept_up.get(&a).unwrap_or(&EMPTY)
    }

    pub fn role_ups(&self, a: SignedRole) -> &BTreeSet<SignedRole> {
        static EMPTY: BTreeSet<SignedRole> = BTreeSet::new();
        self.role_up.get(&a).unwrap_or(&EMPTY)
    }

    /// Some concept above both a and b.
    pub fn common_super_concept(&self, a: ConceptId, b: ConceptId) -> bool {
        if a == b {
            return true;
        }
        let ups_a = self.concept_ups(a);
        let ups_b = self.concept_ups(b);
        ups_a.contains(&b) || ups_b.contains(&a) || !ups_a.is_disjoint(ups_b)
    }
}

fn transitive_close<T: Copy + Ord>(edges: &BTreeMap<T, BTreeSet<T>>, nodes: &[T]) -> BTreeMap<T, BTreeSet<T>> {
    let mut up: BTreeMap<T, BTreeSet<T>> = BTreeMap::new();
    for &start in nodes {
        let mut reach: BTreeSet<T> = BTreeSet::new();
        reach.insert(start);
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            if let Some(next) = edges.get(&n) {
                for &m in next {
                    if reach.insert(m) {
                        stack.push(m);
                    }
                }
            }
        }
        up.insert(start, reach);
    }
    up
}

/// Least reflexive-transitive relations over the declared inclusions.
/// Inverse role inclusions are normalized into the signed-role graph:
/// p⁻ ⊑ s contributes both −p → +s and +p → −s.
pub fn subsumption_closure(o: &Ontology, symbols: &SymbolTable) -> HierarchyClosure {
    let mut c_edges: BTreeMap<ConceptId, BTreeSet<ConceptId>> = BTreeMap::new();
    let mut r_edges: BTreeMap<SignedRole, BTreeSet<SignedRole>> = BTreeMap::new();
    for ax in o.axioms() {
        match *ax {
            Axiom::SubConcept { sub, sup } => {
                c_edges.entry(sub).or_default().insert(sup);
            }
            Axiom::SubRole { sub, sup } => {
                r_edges
                    .entry(SignedRole::plain(sub))
                    .or_default()
                    .insert(SignedRole::plain(sup));
                r_edges
                    .entry(SignedRole::inv(sub))
                    .or_default()
                    .insert(SignedRole::inv(sup));
            }
            Axiom::InvSubRole { sub, sup } => {
                r_edges
                    .entry(SignedRole::inv(sub))
                    .or_default()
                    .insert(SignedRole::plain(sup));
                r_edges
                    .entry(SignedRole::plain(sub))
                    .or_default()
                    .insert(SignedRole::inv(sup));
            }
            _ => {}
        }
    }
    let concepts: Vec<ConceptId> = symbols.all_concepts().collect();
    let roles: Vec<SignedRole> = symbols
        .all_relations()
        .flat_map(|r| [SignedRole::plain(r), SignedRole::inv(r)])
        .collect();
    HierarchyClosure {
        concept_up: transitive_close(&c_edges, &concepts),
        role_up: transitive_close(&r_edges, &roles),
    }
}

/// Per-relation sets driving strategic query sampling.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelationSets {
    pub inv: BTreeSet<RelationId>,
    pub dom: BTreeSet<ConceptId>,
    pub range: BTreeSet<ConceptId>,
    pub follows: BTreeSet<RelationId>,
    pub inter_r: BTreeSet<RelationId>,
    pub inter_d: BTreeSet<RelationId>,
}

#[derive(Debug, Clone)]
pub struct DerivedSets {
    per_relation: BTreeMap<RelationId, RelationSets>,
}

impl DerivedSets {
    pub fn get(&self, p: RelationId) -> &RelationSets {
        static EMPTY: std::sync::OnceLock<RelationSets> = std::sync::OnceLock::new();
        self.per_relation
            .get(&p)
            .unwrap_or_else(|| EMPTY.get_or_init(RelationSets::default))
    }
}

/// Concepts comparable to A' (A ⊑* A' or A' ⊑* A) for some declared
/// ∃ρ ⊑ A' with the queried signed role below ρ.
fn existential_types(
    below: SignedRole,
    closure: &HierarchyClosure,
    decls: &[(SignedRole, ConceptId)],
    symbols: &SymbolTable,
) -> BTreeSet<ConceptId> {
    let mut out = BTreeSet::new();
    for &(rho, concept) in decls {
        if closure.role_leq(below, rho) {
            for a in symbols.all_concepts() {
                if closure.concept_leq(a, concept) || closure.concept_leq(concept, a) {
                    out.insert(a);
                }
            }
        }
    }
    out
}

pub fn derived_sets(
    o: &Ontology,
    closure: &HierarchyClosure,
    symbols: &SymbolTable,
) -> DerivedSets {
    // declared ∃ρ ⊑ A: a domain axiom declares +p, a range axiom −p
    let mut decls: Vec<(SignedRole, ConceptId)> = Vec::new();
    for ax in o.axioms() {
        match *ax {
            Axiom::Domain { role, concept } => decls.push((SignedRole::plain(role), concept)),
            Axiom::Range { role, concept } => decls.push((SignedRole::inv(role), concept)),
            _ => {}
        }
    }

    let relations: Vec<RelationId> = symbols.all_relations().collect();
    let mut per_relation: BTreeMap<RelationId, RelationSets> = BTreeMap::new();
    for &p in &relations {
        let mut sets = RelationSets::default();
        for ax in o.axioms() {
            if let Axiom::InvSubRole { sub, sup } = *ax {
                if sub == p {
                    sets.inv.insert(sup);
                }
            }
        }
        sets.dom = existential_types(SignedRole::plain(p), closure, &decls, symbols);
        sets.range = existential_types(SignedRole::inv(p), closure, &decls, symbols);
        per_relation.insert(p, sets);
    }

    for &p in &relations {
        for &q in &relations {
            let (dom_p, range_p) = {
                let s = &per_relation[&p];
                (s.dom.clone(), s.range.clone())
            };
            let (dom_q, range_q) = {
                let s = &per_relation[&q];
                (s.dom.clone(), s.range.clone())
            };
            // follows(p) = {q | range(p) ∩ dom(q) ≠ ∅}
            if !range_p.is_disjoint(&dom_q) {
                per_relation.get_mut(&p).unwrap().follows.insert(q);
            }
            // inter_r(p): shared range, or inverses with shared domain
            let inv_clause_r = per_relation[&p].inv.iter().any(|&p1| {
                per_relation[&q]
                    .inv
                    .iter()
                    .any(|&p2| !per_relation[&p1].dom.is_disjoint(&per_relation[&p2].dom))
            });
            if !range_p.is_disjoint(&range_q) || inv_clause_r {
                per_relation.get_mut(&p).unwrap().inter_r.insert(q);
            }
            // inter_d(p): shared domain, or inverses with shared range
            let inv_clause_d = per_relation[&p].inv.iter().any(|&p1| {
                per_relation[&q]
                    .inv
                    .iter()
                    .any(|&p2| !per_relation[&p1].range.is_disjoint(&per_relation[&p2].range))
            });
            if !dom_p.is_disjoint(&dom_q) || inv_clause_d {
                per_relation.get_mut(&p).unwrap().inter_d.insert(q);
            }
        }
    }

    DerivedSets { per_relation }
}

/// Fact-inference rules indexed by their trigger.
struct RuleIndex {
    concept_subs: BTreeMap<ConceptId, Vec<ConceptId>>,
    domain: BTreeMap<RelationId, Vec<ConceptId>>,
    range: BTreeMap<RelationId, Vec<ConceptId>>,
    role_subs: BTreeMap<RelationId, Vec<RelationId>>,
    inv_role_subs: BTreeMap<RelationId, Vec<RelationId>>,
}

impl RuleIndex {
    fn build(o: &Ontology) -> Self {
        let mut idx = RuleIndex {
            concept_subs: BTreeMap::new(),
            domain: BTreeMap::new(),
            range: BTreeMap::new(),
            role_subs: BTreeMap::new(),
            inv_role_subs: BTreeMap::new(),
        };
        for ax in o.axioms() {
            match *ax {
                Axiom::SubConcept { sub, sup } => {
                    idx.concept_subs.entry(sub).or_default().push(sup)
                }
                Axiom::Domain { role, concept } => {
                    idx.domain.entry(role).or_default().push(concept)
                }
                Axiom::Range { role, concept } => {
                    idx.range.entry(role).or_default().push(concept)
                }
                Axiom::SubRole { sub, sup } => idx.role_subs.entry(sub).or_default().push(sup),
                Axiom::InvSubRole { sub, sup } => {
                    idx.inv_role_subs.entry(sub).or_default().push(sup)
                }
                Axiom::Exists { .. } | Axiom::ExistsTyped { .. } => {}
            }
        }
        idx
    }

    fn consequences(&self, t: &Triple, type_rel: RelationId, out: &mut Vec<Triple>) {
        if t.rel == type_rel {
            if let NodeId::Concept(a) = t.tail {
                if let Some(sups) = self.concept_subs.get(&a) {
                    for &b in sups {
                        out.push(Triple::new(t.head, type_rel, NodeId::Concept(b)));
                    }
                }
            }
        } else {
            if let Some(cs) = self.domain.get(&t.rel) {
                for &a in cs {
                    out.push(Triple::new(t.head, type_rel, NodeId::Concept(a)));
                }
            }
            if let NodeId::Entity(tail) = t.tail {
                if let Some(cs) = self.range.get(&t.rel) {
                    for &a in cs {
                        out.push(Triple::new(tail, type_rel, NodeId::Concept(a)));
                    }
                }
                if let Some(ss) = self.inv_role_subs.get(&t.rel) {
                    for &s in ss {
                        out.push(Triple::new(tail, s, NodeId::Entity(t.head)));
                    }
                }
            }
            if let Some(ss) = self.role_subs.get(&t.rel) {
                for &s in ss {
                    out.push(Triple::new(t.head, s, t.tail));
                }
            }
        }
    }
}

/// Least fixpoint of the fact-inference rules over the named individuals.
/// Semi-naive: each round only expands the triples derived in the previous
/// round. The result is a superset of `g` and saturation is idempotent.
pub fn saturate(g: &KnowledgeGraph, o: &Ontology, symbols: &SymbolTable) -> KnowledgeGraph {
    let idx = RuleIndex::build(o);
    let type_rel = symbols.type_relation();
    let mut all: BTreeSet<Triple> = g.triples().copied().collect();
    let mut delta: Vec<Triple> = all.iter().copied().collect();
    let mut buf = Vec::new();
    while !delta.is_empty() {
        let mut next = Vec::new();
        for t in &delta {
            buf.clear();
            idx.consequences(t, type_rel, &mut buf);
            for &c in &buf {
                if all.insert(c) {
                    next.push(c);
                }
            }
        }
        delta = next;
    }
    KnowledgeGraph::from_triples(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::load_triples;
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
    fn parse_sub_concept() {
        let mut sym = SymbolTable::new();
        let o = load_ontology(Cursor::new("sub_concept AProfessor Professor\n"), &mut sym)
            .unwrap();
        let a = sym.concept("AProfessor").unwrap();
        let p = sym.concept("Professor").unwrap();
        assert_eq!(o.axioms(), &[Axiom::SubConcept { sub: a, sup: p }]);
    }

    #[test]
    fn parse_range_is_inverse_existential() {
        let mut sym = SymbolTable::new();
        let o =
            load_ontology(Cursor::new("range teachesAt University\n"), &mut sym).unwrap();
        let r = sym.relation("teachesAt").unwrap();
        let u = sym.concept("University").unwrap();
        assert_eq!(o.axioms(), &[Axiom::Range { role: r, concept: u }]);
    }

    #[test]
    fn parse_empty_file() {
        let mut sym = SymbolTable::new();
        let o = load_ontology(Cursor::new(""), &mut sym).unwrap();
        assert!(o.is_empty());
    }

    #[test]
    fn parse_rejects_unknown_keyword() {
        let mut sym = SymbolTable::new();
        let err = load_ontology(Cursor::new("frobnicate A B\n"), &mut sym).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn parse_rejects_wrong_arity() {
        let mut sym = SymbolTable::new();
        let err = load_ontology(Cursor::new("sub_concept A\n"), &mut sym).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn parse_rejects_type_in_axioms() {
        let mut sym = SymbolTable::new();
        let err = load_ontology(Cursor::new("sub_role type worksFor\n"), &mut sym).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn closure_is_transitive() {
        let mut sym = SymbolTable::new();
        let o = load_ontology(
            Cursor::new("sub_concept A B\nsub_concept B C\n"),
            &mut sym,
        )
        .unwrap();
        let cl = subsumption_closure(&o, &sym);
        let a = sym.concept("A").unwrap();
        let c = sym.concept("C").unwrap();
        assert!(cl.concept_leq(a, c));
        assert!(!cl.concept_leq(c, a));
    }

    #[test]
    fn closure_empty_is_identity() {
        let mut sym = SymbolTable::new();
        sym.intern_concept("A").unwrap();
        sym.intern_concept("B").unwrap();
        let cl = subsumption_closure(&Ontology::default(), &sym);
        let a = sym.concept("A").unwrap();
        let b = sym.concept("B").unwrap();
        assert!(cl.concept_leq(a, a));
        assert!(!cl.concept_leq(a, b));
    }

    #[test]
    fn fig1_role_closure_has_teaches_below_works() {
        let (_, o, sym) = fig1();
        let cl = subsumption_closure(&o, &sym);
        let teaches = sym.relation("teachesAt").unwrap();
        let works = sym.relation("worksFor").unwrap();
        assert!(cl.role_leq(SignedRole::plain(teaches), SignedRole::plain(works)));
    }

    #[test]
    fn fig1_university_in_range_of_teaches() {
        let (_, o, sym) = fig1();
        let cl = subsumption_closure(&o, &sym);
        let sets = derived_sets(&o, &cl, &sym);
        let teaches = sym.relation("teachesAt").unwrap();
        let uni = sym.concept("University").unwrap();
        assert!(sets.get(teaches).range.contains(&uni));
    }

    #[test]
    fn fig1_follows_has_alumnus_contains_works_for() {
        let (_, o, sym) = fig1();
        let cl = subsumption_closure(&o, &sym);
        let sets = derived_sets(&o, &cl, &sym);
        let has_alumnus = sym.relation("hasAlumnus").unwrap();
        let works = sym.relation("worksFor").unwrap();
        assert!(sets.get(has_alumnus).follows.contains(&works));
    }

    #[test]
    fn no_role_axioms_means_empty_sets() {
        let mut sym = SymbolTable::new();
        let o = load_ontology(Cursor::new("sub_concept A B\n"), &mut sym).unwrap();
        sym.intern_relation("r").unwrap();
        let cl = subsumption_closure(&o, &sym);
        let sets = derived_sets(&o, &cl, &sym);
        let r = sym.relation("r").unwrap();
        assert_eq!(sets.get(r), &RelationSets::default());
    }

    #[test]
    fn saturate_concept_subsumption() {
        let mut sym = SymbolTable::new();
        let g = load_triples(Cursor::new("bob\ttype\tAProfessor\n"), &mut sym).unwrap();
        let o = load_ontology(Cursor::new("sub_concept AProfessor Professor\n"), &mut sym)
            .unwrap();
        let closed = saturate(&g, &o, &sym);
        let bob = sym.entity("bob").unwrap();
        let prof = sym.concept("Professor").unwrap();
        assert!(closed.contains(&Triple::new(
            bob,
            sym.type_relation(),
            NodeId::Concept(prof)
        )));
        assert_eq!(closed.len(), 2);
    }

    #[test]
    fn saturate_caption_axioms_delta() {
        // only the five caption axioms, no schema typing
        let mut sym = SymbolTable::new();
        let g = load_triples(Cursor::new("anna\tteachesAt\tmit\n"), &mut sym).unwrap();
        let o = load_ontology(
            Cursor::new(
                "sub_role managesAt worksFor\n\
                 inv_sub_role degreeFrom hasAlumnus\n\
                 inv_sub_role hasAlumnus degreeFrom\n\
                 sub_concept AProfessor Professor\n\
                 sub_role teachesAt worksFor\n\
                 range teachesAt University\n",
            ),
            &mut sym,
        )
        .unwrap();
        let closed = saturate(&g, &o, &sym);
        let anna = sym.entity("anna").unwrap();
        let mit = sym.entity("mit").unwrap();
        let works = sym.relation("worksFor").unwrap();
        let uni = sym.concept("University").unwrap();
        let expected: BTreeSet<Triple> = [
            Triple::new(anna, sym.relation("teachesAt").unwrap(), NodeId::Entity(mit)),
            Triple::new(anna, works, NodeId::Entity(mit)),
            Triple::new(mit, sym.type_relation(), NodeId::Concept(uni)),
        ]
        .into_iter()
        .collect();
        let got: BTreeSet<Triple> = closed.triples().copied().collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn saturate_is_idempotent() {
        let (g, o, sym) = fig1();
        let once = saturate(&g, &o, &sym);
        let twice = saturate(&once, &o, &sym);
        let a: BTreeSet<Triple> = once.triples().copied().collect();
        let b: BTreeSet<Triple> = twice.triples().copied().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn fig1_closure_size_matches_manifest() {
        let (g, o, sym) = fig1();
        let closed = saturate(&g, &o, &sym);
        assert_eq!(g.len(), 8);
        assert_eq!(closed.len(), 15);
        assert_eq!(o.len(), 9);
    }

    #[test]
    fn derived_sets_match_bruteforce_on_random_ontologies() {
        use crate::naive::derived_sets_by_bruteforce;
        use crate::rng::Rng;
        let mut rng = Rng::seeded(31);
        for trial in 0..200 {
            let mut sym = SymbolTable::new();
            let nc = 2 + rng.below(4);
            let nr = 2 + rng.below(5);
            for i in 0..nc {
                sym.intern_concept(&format!("C{i}")).unwrap();
            }
            for i in 0..nr {
                sym.intern_relation(&format!("r{i}")).unwrap();
            }
            let mut axioms = Vec::new();
            for _ in 0..1 + rng.below(8) {
                let kind = rng.below(5);
                let a = ConceptId(rng.below(nc) as u32);
                let b = ConceptId(rng.below(nc) as u32);
                let p = RelationId(1 + rng.below(nr) as u32);
                let q = RelationId(1 + rng.below(nr) as u32);
                axioms.push(match kind {
                    0 => Axiom::SubConcept { sub: a, sup: b },
                    1 => Axiom::SubRole { sub: p, sup: q },
                    2 => Axiom::InvSubRole { sub: p, sup: q },
                    3 => Axiom::Domain { role: p, concept: a },
                    _ => Axiom::Range { role: p, concept: a },
                });
            }
            let o = Ontology::new(axioms);
            let cl = subsumption_closure(&o, &sym);
            let fast = derived_sets(&o, &cl, &sym);
            for p in sym.all_relations() {
                let slow = derived_sets_by_bruteforce(&o, &sym, p);
                assert_eq!(fast.get(p), &slow, "trial {trial}, relation {}", p.0);
            }
        }
    }

    #[test]
    fn saturate_monotone_under_graph_growth() {
        let (g, o, sym) = fig1();
        let closed_full = saturate(&g, &o, &sym);
        let some: Vec<Triple> = g.triples().take(4).copied().collect();
        let sub = KnowledgeGraph::from_triples(some);
        let closed_sub = saturate(&sub, &o, &sym);
        assert!(closed_sub.triples().all(|t| closed_full.contains(t)));
    }
}
