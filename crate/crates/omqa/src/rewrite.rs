//! Query specialization and generalization over the ontology.
//!
//! Eight rewrite rules, each usable in a specializing (answers shrink) or
//! generalizing (answers grow) direction, plus breadth-first closures with a
//! depth bound or run to fixpoint. Rules that drop a term only fire when the
//! dropped term is a non-answer variable occurring in no other atom;
//! without that guard rewriting is unsound.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::Result;
use crate::kg::SymbolTable;
use crate::ontology::{Axiom, Ontology};
use crate::query::{canonical_form, rebuild, Atom, Query, Shape, Term, VarId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleId {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
    R7,
    R8,
}

impl std::fmt::Display for RuleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "R{}", *self as u8 + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Spec,
    Gen,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Direction::Spec => write!(f, "spec"),
            Direction::Gen => write!(f, "gen"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RewriteStep {
    pub rule: RuleId,
    pub direction: Direction,
    /// absent only for R8
    pub axiom: Option<Axiom>,
    /// unification applied by R8-spec, as (variable, replacement) renderings
    pub substitution: Option<Vec<(String, String)>>,
}

impl RewriteStep {
    fn new(rule: RuleId, direction: Direction, axiom: Axiom) -> Self {
        RewriteStep { rule, direction, axiom: Some(axiom), substitution: None }
    }

    pub fn render(&self, symbols: &SymbolTable) -> String {
        let mut s = format!("{}:{}", self.rule, self.direction);
        if let Some(ax) = &self.axiom {
            s.push(':');
            s.push_str(&render_axiom(ax, symbols));
        }
        if let Some(theta) = &self.substitution {
            let pairs: Vec<String> =
                theta.iter().map(|(v, t)| format!("{v}->{t}")).collect();
            s.push_str(&format!(":theta[{}]", pairs.join(",")));
        }
        s
    }
}

fn render_axiom(ax: &Axiom, symbols: &SymbolTable) -> String {
    match *ax {
        Axiom::SubConcept { sub, sup } => format!(
            "{}⊑{}",
            symbols.concept_name(sub),
            symbols.concept_name(sup)
        ),
        Axiom::SubRole { sub, sup } => format!(
            "{}⊑{}",
            symbols.relation_name(sub),
            symbols.relation_name(sup)
        ),
        Axiom::InvSubRole { sub, sup } => format!(
            "{}⁻⊑{}",
            symbols.relation_name(sub),
            symbols.relation_name(sup)
        ),
        Axiom::Domain { role, concept } => format!(
            "∃{}⊑{}",
            symbols.relation_name(role),
            symbols.concept_name(concept)
        ),
        Axiom::Range { role, concept } => format!(
            "∃{}⁻⊑{}",
            symbols.relation_name(role),
            symbols.concept_name(concept)
        ),
        Axiom::Exists { concept, role } => format!(
            "{}⊑∃{}",
            symbols.concept_name(concept),
            symbols.relation_name(role)
        ),
        Axiom::ExistsTyped { concept, role, filler } => format!(
            "{}⊑∃{}.{}",
            symbols.concept_name(concept),
            symbols.relation_name(role),
            symbols.concept_name(filler)
        ),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RewriteOptions {
    /// R8-gen abstracts anchor constants into fresh variables
    pub enable_r8_gen: bool,
    /// additionally forbid R8-spec unifications that eliminate a variable
    /// occurring in more than one atom (the appendix baseline condition)
    pub strict_variable_preservation: bool,
    /// extra atoms a fixpoint closure may add over the origin (bounds R5-gen
    /// chains; bounded closures are limited by their depth instead)
    pub existential_growth_cap: usize,
}

impl Default for RewriteOptions {
    fn default() -> Self {
        RewriteOptions {
            enable_r8_gen: true,
            strict_variable_preservation: false,
            existential_growth_cap: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    Bounded(usize),
    Fixpoint,
}

#[derive(Debug, Clone)]
pub struct RewriteMember {
    pub query: Query,
    pub trace: Vec<RewriteStep>,
}

#[derive(Debug, Clone)]
pub struct RewriteSet {
    pub origin: Query,
    pub members: Vec<RewriteMember>,
    pub depth: Depth,
}

impl RewriteSet {
    pub fn queries(&self) -> impl Iterator<Item = &Query> {
        self.members.iter().map(|m| &m.query)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Droppable: a non-answer variable occurring exactly once in the query.
fn droppable(q: &Query, t: Term) -> bool {
    match t {
        Term::Var(v) => v != q.answer && q.occurrences(v) == 1,
        _ => false,
    }
}

/// Replace atom `ai` by `replacement` (first in place, extras appended),
/// keeping branch structure in sync.
fn replace_atom(
    q: &Query,
    ai: usize,
    replacement: Vec<Atom>,
    extra_vars: Vec<String>,
) -> Option<Query> {
    debug_assert!(!replacement.is_empty());
    let mut atoms = q.atoms.clone();
    atoms[ai] = replacement[0];
    let extra_indices: Vec<usize> = (0..replacement.len() - 1)
        .map(|k| atoms.len() + k)
        .collect();
    atoms.extend(replacement.into_iter().skip(1));
    let branches: Vec<Vec<usize>> = q
        .branches
        .iter()
        .map(|b| {
            let mut nb = b.clone();
            if b.contains(&ai) {
                nb.extend(extra_indices.iter().copied());
            }
            nb
        })
        .collect();
    rebuild_dedup(q, atoms, branches, &extra_vars)
}

/// Remove atom `aj`, keeping branch structure in sync.
fn remove_atom(q: &Query, atoms: Vec<Atom>, aj: usize) -> (Vec<Atom>, Vec<Vec<usize>>) {
    let kept: Vec<Atom> = atoms
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != aj)
        .map(|(_, a)| *a)
        .collect();
    let remap = |i: usize| if i > aj { i - 1 } else { i };
    let branches: Vec<Vec<usize>> = q
        .branches
        .iter()
        .map(|b| {
            b.iter()
                .filter(|&&i| i != aj)
                .map(|&i| remap(i))
                .collect()
        })
        .collect();
    (kept, branches)
}

/// rebuild + collapse duplicate atoms (set semantics).
fn rebuild_dedup(
    old: &Query,
    atoms: Vec<Atom>,
    branches: Vec<Vec<usize>>,
    extra_vars: &[String],
) -> Option<Query> {
    let mut first: BTreeMap<Atom, usize> = BTreeMap::new();
    let mut kept: Vec<Atom> = Vec::new();
    let mut remap: Vec<usize> = Vec::with_capacity(atoms.len());
    for atom in &atoms {
        match first.get(atom) {
            Some(&idx) => remap.push(idx),
            None => {
                first.insert(*atom, kept.len());
                remap.push(kept.len());
                kept.push(*atom);
            }
        }
    }
    let branches: Vec<Vec<usize>> = branches
        .iter()
        .map(|b| {
            let mut nb: Vec<usize> = b.iter().map(|&i| remap[i]).collect();
            nb.sort_unstable();
            nb.dedup();
            nb
        })
        .collect();
    rebuild(old, kept, branches, extra_vars)
}

/// One application of every generalization rule.
pub fn generalize_step(
    q: &Query,
    o: &Ontology,
    symbols: &SymbolTable,
    opts: &RewriteOptions,
    max_atoms: Option<usize>,
) -> Vec<(Query, RewriteStep)> {
    let type_rel = symbols.type_relation();
    let mut out = Vec::new();
    for (ai, atom) in q.atoms.iter().enumerate() {
        for ax in o.axioms() {
            match *ax {
                // R1-gen: A ⊑ B, type(T,A) → type(T,B)
                Axiom::SubConcept { sub, sup } => {
                    if atom.rel == type_rel && atom.object == Term::Concept(sub) {
                        if let Some(q2) = replace_atom(
                            q,
                            ai,
                            vec![Atom::new(type_rel, atom.subject, Term::Concept(sup))],
                            vec![],
                        ) {
                            out.push((q2, RewriteStep::new(RuleId::R1, Direction::Gen, *ax)));
                        }
                    }
                }
                // R2-gen: ∃p ⊑ A, p(T1,T2) → type(T1,A), T2 dropped
                Axiom::Domain { role, concept } => {
                    if atom.rel == role && droppable(q, atom.object) {
                        if let Some(q2) = replace_atom(
                            q,
                            ai,
                            vec![Atom::new(type_rel, atom.subject, Term::Concept(concept))],
                            vec![],
                        ) {
                            out.push((q2, RewriteStep::new(RuleId::R2, Direction::Gen, *ax)));
                        }
                    }
                }
                // R3-gen: A ⊑ ∃p, type(T1,A) → p(T1,Z)
                Axiom::Exists { concept, role } => {
                    if atom.rel == type_rel && atom.object == Term::Concept(concept) {
                        let z = q.fresh_var_name("Z");
                        let zid = VarId(q.var_names.len() as u32);
                        if let Some(q2) = replace_atom(
                            q,
                            ai,
                            vec![Atom::new(role, atom.subject, Term::Var(zid))],
                            vec![z],
                        ) {
                            out.push((q2, RewriteStep::new(RuleId::R3, Direction::Gen, *ax)));
                        }
                    }
                }
                // R4-gen: ∃p⁻ ⊑ A, p(T2,T1) → type(T1,A), T2 dropped
                Axiom::Range { role, concept } => {
                    if atom.rel == role && droppable(q, atom.subject) {
                        if let Some(q2) = replace_atom(
                            q,
                            ai,
                            vec![Atom::new(type_rel, atom.object, Term::Concept(concept))],
                            vec![],
                        ) {
                            out.push((q2, RewriteStep::new(RuleId::R4, Direction::Gen, *ax)));
                        }
                    }
                }
                // R5-gen: A ⊑ ∃p.B, type(T1,A) → p(T1,Z) ∧ type(Z,B)
                Axiom::ExistsTyped { concept, role, filler } => {
                    if atom.rel == type_rel && atom.object == Term::Concept(concept) {
                        if max_atoms.is_some_and(|cap| q.atoms.len() + 1 > cap) {
                            continue;
                        }
                        let z = q.fresh_var_name("Z");
                        let zid = VarId(q.var_names.len() as u32);
                        if let Some(q2) = replace_atom(
                            q,
                            ai,
                            vec![
                                Atom::new(role, atom.subject, Term::Var(zid)),
                                Atom::new(type_rel, Term::Var(zid), Term::Concept(filler)),
                            ],
                            vec![z],
                        ) {
                            out.push((q2, RewriteStep::new(RuleId::R5, Direction::Gen, *ax)));
                        }
                    }
                }
                // R6-gen: p ⊑ s, p(T1,T2) → s(T1,T2)
                Axiom::SubRole { sub, sup } => {
                    if atom.rel == sub {
                        if let Some(q2) = replace_atom(
                            q,
                            ai,
                            vec![Atom::new(sup, atom.subject, atom.object)],
                            vec![],
                        ) {
                            out.push((q2, RewriteStep::new(RuleId::R6, Direction::Gen, *ax)));
                        }
                    }
                }
                // R7-gen: s⁻ ⊑ p, s(T1,T2) → p(T2,T1)
                Axiom::InvSubRole { sub, sup } => {
                    if atom.rel == sub {
                        if let Some(q2) = replace_atom(
                            q,
                            ai,
                            vec![Atom::new(sup, atom.object, atom.subject)],
                            vec![],
                        ) {
                            out.push((q2, RewriteStep::new(RuleId::R7, Direction::Gen, *ax)));
                        }
                    }
                }
            }
        }
        // R8-gen: abstract one anchor-constant occurrence into a fresh
        // variable; results that lose every entity anchor are discarded
        if opts.enable_r8_gen {
            for pos in 0..2 {
                let term = if pos == 0 { atom.subject } else { atom.object };
                if !matches!(term, Term::Entity(_)) {
                    continue;
                }
                let z = q.fresh_var_name("Z");
                let zid = VarId(q.var_names.len() as u32);
                let new_atom = if pos == 0 {
                    Atom::new(atom.rel, Term::Var(zid), atom.object)
                } else {
                    Atom::new(atom.rel, atom.subject, Term::Var(zid))
                };
                let Some(q2) = replace_atom(q, ai, vec![new_atom], vec![z]) else {
                    continue;
                };
                let keeps_anchor = q2
                    .atoms
                    .iter()
                    .flat_map(|a| a.terms())
                    .any(|t| matches!(t, Term::Entity(_)));
                if keeps_anchor {
                    out.push((
                        q2,
                        RewriteStep {
                            rule: RuleId::R8,
                            direction: Direction::Gen,
                            axiom: None,
                            substitution: None,
                        },
                    ));
                }
            }
        }
    }
    out
}

/// One application of every specialization rule.
pub fn specialize_step(
    q: &Query,
    o: &Ontology,
    symbols: &SymbolTable,
    opts: &RewriteOptions,
) -> Vec<(Query, RewriteStep)> {
    let type_rel = symbols.type_relation();
    let mut out = Vec::new();
    for (ai, atom) in q.atoms.iter().enumerate() {
        for ax in o.axioms() {
            match *ax {
                // R1-spec: A ⊑ B, type(T,B) → type(T,A)
                Axiom::SubConcept { sub, sup } => {
                    if atom.rel == type_rel && atom.object == Term::Concept(sup) {
                        if let Some(q2) = replace_atom(
                            q,
                            ai,
                            vec![Atom::new(type_rel, atom.subject, Term::Concept(sub))],
                            vec![],
                        ) {
                            out.push((q2, RewriteStep::new(RuleId::R1, Direction::Spec, *ax)));
                        }
                    }
                }
                // R2-spec: ∃p ⊑ A, type(T1,A) → p(T1,Z)
                Axiom::Domain { role, concept } => {
                    if atom.rel == type_rel && atom.object == Term::Concept(concept) {
                        let z = q.fresh_var_name("Z");
                        let zid = VarId(q.var_names.len() as u32);
                        if let Some(q2) = replace_atom(
                            q,
                            ai,
                            vec![Atom::new(role, atom.subject, Term::Var(zid))],
                            vec![z],
                        ) {
                            out.push((q2, RewriteStep::new(RuleId::R2, Direction::Spec, *ax)));
                        }
                    }
                }
                // R3-spec: A ⊑ ∃p, p(T1,T2) → type(T1,A), T2 dropped
                Axiom::Exists { concept, role } => {
                    if atom.rel == role && droppable(q, atom.object) {
                        if let Some(q2) = replace_atom(
                            q,
                            ai,
                            vec![Atom::new(type_rel, atom.subject, Term::Concept(concept))],
                            vec![],
                        ) {
                            out.push((q2, RewriteStep::new(RuleId::R3, Direction::Spec, *ax)));
                        }
                    }
                }
                // R4-spec: ∃p⁻ ⊑ A, type(T1,A) → p(Z,T1)
                Axiom::Range { role, concept } => {
                    if atom.rel == type_rel && atom.object == Term::Concept(concept) {
                        let z = q.fresh_var_name("Z");
                        let zid = VarId(q.var_names.len() as u32);
                        if let Some(q2) = replace_atom(
                            q,
                            ai,
                            vec![Atom::new(role, Term::Var(zid), atom.subject)],
                            vec![z],
                        ) {
                            out.push((q2, RewriteStep::new(RuleId::R4, Direction::Spec, *ax)));
                        }
                    }
                }
                // R5-spec: A ⊑ ∃p.B, p(T1,T2) ∧ type(T2,B) → type(T1,A),
                // T2 dropped
                Axiom::ExistsTyped { concept, role, filler } => {
                    if atom.rel != role {
                        continue;
                    }
                    let Term::Var(t2) = atom.object else { continue };
                    if t2 == q.answer || q.occurrences(t2) != 2 {
                        continue;
                    }
                    let partner = q.atoms.iter().enumerate().find(|(aj, other)| {
                        *aj != ai
                            && other.rel == type_rel
                            && other.subject == Term::Var(t2)
                            && other.object == Term::Concept(filler)
                    });
                    let Some((aj, _)) = partner else { continue };
                    let mut atoms = q.atoms.clone();
                    atoms[ai] = Atom::new(type_rel, atom.subject, Term::Concept(concept));
                    let (atoms, branches) = remove_atom(q, atoms, aj);
                    if let Some(q2) = rebuild_dedup(q, atoms, branches, &[]) {
                        out.push((q2, RewriteStep::new(RuleId::R5, Direction::Spec, *ax)));
                    }
                }
                // R6-spec: p ⊑ s, s(T1,T2) → p(T1,T2)
                Axiom::SubRole { sub, sup } => {
                    if atom.rel == sup {
                        if let Some(q2) = replace_atom(
                            q,
                            ai,
                            vec![Atom::new(sub, atom.subject, atom.object)],
                            vec![],
                        ) {
                            out.push((q2, RewriteStep::new(RuleId::R6, Direction::Spec, *ax)));
                        }
                    }
                }
                // R7-spec: s⁻ ⊑ p, p(T1,T2) → s(T2,T1)
                Axiom::InvSubRole { sub, sup } => {
                    if atom.rel == sup {
                        if let Some(q2) = replace_atom(
                            q,
                            ai,
                            vec![Atom::new(sub, atom.object, atom.subject)],
                            vec![],
                        ) {
                            out.push((q2, RewriteStep::new(RuleId::R7, Direction::Spec, *ax)));
                        }
                    }
                }
            }
        }
    }
    // R8-spec: unify two atoms over the same relation
    for ai in 0..q.atoms.len() {
        for aj in (ai + 1)..q.atoms.len() {
            if q.atoms[ai].rel != q.atoms[aj].rel {
                continue;
            }
            if let Some((q2, theta)) = unify_atoms(q, ai, aj, opts) {
                out.push((
                    q2,
                    RewriteStep {
                        rule: RuleId::R8,
                        direction: Direction::Spec,
                        axiom: None,
                        substitution: Some(theta),
                    },
                ));
            }
        }
    }
    out
}

/// Most general unifier of two same-relation atoms, applied to the whole
/// query; the two atoms collapse into one.
fn unify_atoms(
    q: &Query,
    ai: usize,
    aj: usize,
    opts: &RewriteOptions,
) -> Option<(Query, Vec<(String, String)>)> {
    let a = q.atoms[ai];
    let b = q.atoms[aj];
    // union-find over terms, constants win as representatives
    let mut subst: BTreeMap<VarId, Term> = BTreeMap::new();
    let resolve = |t: Term, subst: &BTreeMap<VarId, Term>| -> Term {
        let mut cur = t;
        while let Term::Var(v) = cur {
            match subst.get(&v) {
                Some(&next) if next != cur => cur = next,
                _ => break,
            }
        }
        cur
    };
    for (x, y) in [(a.subject, b.subject), (a.object, b.object)] {
        let rx = resolve(x, &subst);
        let ry = resolve(y, &subst);
        if rx == ry {
            continue;
        }
        match (rx, ry) {
            (Term::Var(v), other) | (other, Term::Var(v)) => {
                // keep the answer variable as its own representative
                if v == q.answer {
                    match other {
                        Term::Var(w) => {
                            subst.insert(w, Term::Var(v));
                        }
                        _ => return None,
                    }
                } else {
                    subst.insert(v, other);
                }
            }
            _ => return None, // distinct constants
        }
    }
    if subst.is_empty() {
        return None; // atoms were already equal; nothing to do
    }
    if opts.strict_variable_preservation {
        // no variable occurring in more than one atom may disappear
        for &v in subst.keys() {
            if q.occurrences(v) > 1 {
                return None;
            }
        }
    }
    let apply = |t: Term| resolve(t, &subst);
    let atoms: Vec<Atom> = q
        .atoms
        .iter()
        .map(|at| Atom::new(at.rel, apply(at.subject), apply(at.object)))
        .collect();
    // the j-th atom now equals the i-th; drop it
    let (atoms, branches) = remove_atom(q, atoms, aj);
    let q2 = rebuild_dedup(q, atoms, branches, &[])?;
    let theta: Vec<(String, String)> = subst
        .iter()
        .map(|(&v, &t)| {
            let target = match t {
                Term::Var(w) => format!("?{}", q.var_name(w)),
                Term::Entity(e) => format!("e{}", e.0),
                Term::Concept(c) => format!("c{}", c.0),
            };
            (format!("?{}", q.var_name(v)), target)
        })
        .collect();
    Some((q2, theta))
}

fn closure(
    q: &Query,
    o: &Ontology,
    symbols: &SymbolTable,
    depth: Depth,
    opts: &RewriteOptions,
    direction: Direction,
) -> RewriteSet {
    let max_atoms = match depth {
        Depth::Fixpoint => Some(q.atoms.len() + opts.existential_growth_cap),
        Depth::Bounded(_) => None,
    };
    let mut members = vec![RewriteMember { query: q.clone(), trace: vec![] }];
    let mut seen: BTreeSet<String> = BTreeSet::new();
    seen.insert(canonical_form(q));
    let mut frontier: Vec<usize> = vec![0];
    let mut level = 0usize;
    loop {
        if let Depth::Bounded(d) = depth {
            if level >= d {
                break;
            }
        }
        if frontier.is_empty() {
            break;
        }
        let mut next = Vec::new();
        for &idx in &frontier {
            let (parent_query, parent_trace) =
                (members[idx].query.clone(), members[idx].trace.clone());
            let steps = match direction {
                Direction::Gen => generalize_step(&parent_query, o, symbols, opts, max_atoms),
                Direction::Spec => specialize_step(&parent_query, o, symbols, opts),
            };
            for (q2, step) in steps {
                let key = canonical_form(&q2);
                if seen.insert(key) {
                    let mut trace = parent_trace.clone();
                    trace.push(step);
                    members.push(RewriteMember { query: q2, trace });
                    next.push(members.len() - 1);
                }
            }
        }
        frontier = next;
        level += 1;
    }
    RewriteSet { origin: q.clone(), members, depth }
}

/// BFS closure of the generalization rules; includes the origin.
pub fn gen_closure(
    q: &Query,
    o: &Ontology,
    symbols: &SymbolTable,
    depth: Depth,
    opts: &RewriteOptions,
) -> RewriteSet {
    closure(q, o, symbols, depth, opts, Direction::Gen)
}

/// BFS closure of the specialization rules; includes the origin.
pub fn spec_closure(
    q: &Query,
    o: &Ontology,
    symbols: &SymbolTable,
    depth: Depth,
    opts: &RewriteOptions,
) -> RewriteSet {
    closure(q, o, symbols, depth, opts, Direction::Spec)
}

/// The appendix evaluation baseline: specialization closure under the strict
/// variable-preservation condition, members filtered to supported shapes.
pub fn rew(
    q: &Query,
    o: &Ontology,
    symbols: &SymbolTable,
    supported: &[Shape],
    depth: Depth,
) -> Result<RewriteSet> {
    let opts = RewriteOptions {
        strict_variable_preservation: true,
        ..Default::default()
    };
    let full = spec_closure(q, o, symbols, depth, &opts);
    let members: Vec<RewriteMember> = full
        .members
        .into_iter()
        .filter(|m| {
            crate::query::shape_of(&m.query).is_some_and(|s| supported.contains(&s))
        })
        .collect();
    Ok(RewriteSet { origin: full.origin, members, depth })
}
