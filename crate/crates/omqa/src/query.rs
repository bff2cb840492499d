//! Conjunctive queries as computation DAGs.
//!
//! Atoms are stored as written; the computation graph re-orients every atom
//! toward the single answer variable, so constants (entity anchors and
//! concept constants of `type` atoms) sit at the sources and the answer
//! variable is the unique sink. Each edge remembers whether it runs with the
//! atom (`forward`) or against it (`backward`). Union shapes are kept as DNF
//! branches over the atom list.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{ConceptId, EntityId, KnowledgeGraph, NodeId, RelationId, SymbolTable};
use crate::ontology::{saturate, Ontology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Var(VarId),
    Entity(EntityId),
    Concept(ConceptId),
}

impl Term {
    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }

    pub fn is_constant(&self) -> bool {
        !self.is_var()
    }

    pub fn as_node(&self) -> Option<NodeId> {
        match *self {
            Term::Entity(e) => Some(NodeId::Entity(e)),
            Term::Concept(c) => Some(NodeId::Concept(c)),
            Term::Var(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub rel: RelationId,
    pub subject: Term,
    pub object: Term,
}

impl Atom {
    pub fn new(rel: RelationId, subject: Term, object: Term) -> Self {
        Atom { rel, subject, object }
    }

    pub fn terms(&self) -> [Term; 2] {
        [self.subject, self.object]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Shape {
    OneP,
    TwoP,
    ThreeP,
    TwoI,
    ThreeI,
    Ip,
    Pi,
    TwoU,
    Up,
}

impl Shape {
    pub const ALL: [Shape; 9] = [
        Shape::OneP,
        Shape::TwoP,
        Shape::ThreeP,
        Shape::TwoI,
        Shape::ThreeI,
        Shape::Ip,
        Shape::Pi,
        Shape::TwoU,
        Shape::Up,
    ];

    /// Shapes the models are trained on.
    pub const TRAIN: [Shape; 5] = [
        Shape::OneP,
        Shape::TwoP,
        Shape::ThreeP,
        Shape::TwoI,
        Shape::ThreeI,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Shape::OneP => "1p",
            Shape::TwoP => "2p",
            Shape::ThreeP => "3p",
            Shape::TwoI => "2i",
            Shape::ThreeI => "3i",
            Shape::Ip => "ip",
            Shape::Pi => "pi",
            Shape::TwoU => "2u",
            Shape::Up => "up",
        }
    }

    pub fn parse(s: &str) -> Option<Shape> {
        Shape::ALL.iter().copied().find(|sh| sh.as_str() == s)
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Monadic conjunctive query. `branches` lists the DNF disjuncts as atom
/// index sets; a single branch covering all atoms unless the query is a
/// union shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub var_names: Vec<String>,
    pub answer: VarId,
    pub atoms: Vec<Atom>,
    pub branches: Vec<Vec<usize>>,
}

impl Query {
    pub fn new(var_names: Vec<String>, answer: VarId, atoms: Vec<Atom>) -> Result<Query> {
        let branches = vec![(0..atoms.len()).collect()];
        Query::new_union(var_names, answer, atoms, branches)
    }

    pub fn new_union(
        var_names: Vec<String>,
        answer: VarId,
        atoms: Vec<Atom>,
        branches: Vec<Vec<usize>>,
    ) -> Result<Query> {
        let q = Query { var_names, answer, atoms, branches };
        q.validate()?;
        Ok(q)
    }

    fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() {
            return Err(Error::Query("query has no atoms".into()));
        }
        if self.branches.is_empty() {
            return Err(Error::Query("query has no branches".into()));
        }
        let n_vars = self.var_names.len() as u32;
        if self.answer.0 >= n_vars {
            return Err(Error::Query("answer variable out of range".into()));
        }
        {
            let mut seen = BTreeSet::new();
            for name in &self.var_names {
                if !seen.insert(name) {
                    return Err(Error::Query(format!("duplicate variable name `{name}`")));
                }
            }
        }
        let mut used = vec![false; n_vars as usize];
        for atom in &self.atoms {
            for term in atom.terms() {
                if let Term::Var(v) = term {
                    if v.0 >= n_vars {
                        return Err(Error::Query("variable out of range".into()));
                    }
                    used[v.0 as usize] = true;
                }
            }
            if atom.subject == atom.object {
                return Err(Error::Query("self-loop atom".into()));
            }
            if matches!(atom.subject, Term::Concept(_)) {
                return Err(Error::Query("concept in subject position".into()));
            }
        }
        if !used[self.answer.0 as usize] {
            return Err(Error::Query("answer variable does not occur in any atom".into()));
        }
        if let Some(unused) = used.iter().position(|u| !u) {
            return Err(Error::Query(format!(
                "variable `{}` occurs in no atom",
                self.var_names[unused]
            )));
        }
        let mut covered = vec![false; self.atoms.len()];
        for branch in &self.branches {
            if branch.is_empty() {
                return Err(Error::Query("empty union branch".into()));
            }
            for &i in branch {
                if i >= self.atoms.len() {
                    return Err(Error::Query("branch atom index out of range".into()));
                }
                covered[i] = true;
            }
        }
        if covered.iter().any(|c| !c) {
            return Err(Error::Query("atom not covered by any branch".into()));
        }
        Ok(())
    }

    /// Structural rules that need the symbol table: `type` atoms carry a
    /// concept constant in second position, role atoms never mention
    /// concepts.
    pub fn validate_typing(&self, symbols: &SymbolTable) -> Result<()> {
        let type_rel = symbols.type_relation();
        for atom in &self.atoms {
            if atom.rel == type_rel {
                if !matches!(atom.object, Term::Concept(_)) {
                    return Err(Error::Query(
                        "`type` atom without a concept constant in second position".into(),
                    ));
                }
            } else if matches!(atom.object, Term::Concept(_)) {
                return Err(Error::Query("concept in role-atom object position".into()));
            }
        }
        Ok(())
    }

    pub fn var_name(&self, v: VarId) -> &str {
        &self.var_names[v.0 as usize]
    }

    pub fn occurrences(&self, v: VarId) -> usize {
        self.atoms
            .iter()
            .flat_map(|a| a.terms())
            .filter(|t| *t == Term::Var(v))
            .count()
    }

    pub fn is_union(&self) -> bool {
        self.branches.len() > 1
    }

    /// Fresh variable name not colliding with existing ones.
    pub fn fresh_var_name(&self, hint: &str) -> String {
        if !self.var_names.iter().any(|n| n == hint) {
            return hint.to_string();
        }
        let mut i = 0;
        loop {
            let candidate = format!("{hint}{i}");
            if !self.var_names.iter().any(|n| n == &candidate) {
                return candidate;
            }
            i += 1;
        }
    }
}

/// Rebuild a query from edited atoms, dropping variables that no longer
/// occur and renumbering the rest. Returns None when the answer variable
/// vanished or the result is structurally invalid.
pub fn rebuild(
    old: &Query,
    atoms: Vec<Atom>,
    branches: Vec<Vec<usize>>,
    extra_vars: &[String],
) -> Option<Query> {
    let mut names: Vec<String> = old.var_names.clone();
    names.extend(extra_vars.iter().cloned());
    let mut used: BTreeSet<u32> = BTreeSet::new();
    for atom in &atoms {
        for term in atom.terms() {
            if let Term::Var(v) = term {
                used.insert(v.0);
            }
        }
    }
    if !used.contains(&old.answer.0) {
        return None;
    }
    let remap: BTreeMap<u32, u32> = used
        .iter()
        .enumerate()
        .map(|(new, &oldv)| (oldv, new as u32))
        .collect();
    let new_names: Vec<String> = used
        .iter()
        .map(|&v| names[v as usize].clone())
        .collect();
    let fix = |t: Term| match t {
        Term::Var(v) => Term::Var(VarId(remap[&v.0])),
        other => other,
    };
    let new_atoms: Vec<Atom> = atoms
        .into_iter()
        .map(|a| Atom::new(a.rel, fix(a.subject), fix(a.object)))
        .collect();
    Query::new_union(new_names, VarId(remap[&old.answer.0]), new_atoms, branches).ok()
}

// ---------------------------------------------------------------------------
// Computation-graph orientation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct PlanNode {
    pub term: Term,
    pub depth: usize,
    pub incoming: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct PlanEdge {
    pub rel: RelationId,
    pub src: usize,
    /// true when the edge runs subject→object as the atom is written
    pub forward: bool,
}

/// One DNF branch oriented toward the answer variable.
#[derive(Debug, Clone)]
pub(crate) struct BranchPlan {
    pub nodes: Vec<PlanNode>,
    pub edges: Vec<PlanEdge>,
    pub answer_node: usize,
    /// node indices, sources first, answer last
    pub topo: Vec<usize>,
    /// all sources are constants and no constant sits mid-path
    pub anchored: bool,
    /// underlying undirected atom graph is a tree
    pub tree: bool,
}

pub(crate) fn plan_branch(q: &Query, branch: &[usize]) -> Option<BranchPlan> {
    let mut node_of: BTreeMap<Term, usize> = BTreeMap::new();
    let mut nodes: Vec<PlanNode> = Vec::new();
    let mut raw_edges: Vec<(usize, usize, RelationId)> = Vec::new();
    for &ai in branch {
        let atom = q.atoms[ai];
        let mut idx = [0usize; 2];
        for (k, term) in atom.terms().into_iter().enumerate() {
            idx[k] = *node_of.entry(term).or_insert_with(|| {
                nodes.push(PlanNode { term, depth: usize::MAX, incoming: Vec::new() });
                nodes.len() - 1
            });
        }
        raw_edges.push((idx[0], idx[1], atom.rel));
    }
    let answer_node = *node_of.get(&Term::Var(q.answer))?;

    // undirected BFS from the answer fixes each node's distance
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for &(s, o, _) in &raw_edges {
        adj[s].push(o);
        adj[o].push(s);
    }
    nodes[answer_node].depth = 0;
    let mut queue = std::collections::VecDeque::from([answer_node]);
    while let Some(n) = queue.pop_front() {
        let d = nodes[n].depth;
        for i in 0..adj[n].len() {
            let m = adj[n][i];
            if nodes[m].depth == usize::MAX {
                nodes[m].depth = d + 1;
                queue.push_back(m);
            }
        }
    }
    if nodes.iter().any(|n| n.depth == usize::MAX) {
        return None; // disconnected
    }

    let mut edges = Vec::with_capacity(raw_edges.len());
    for (ei, &(s, o, rel)) in raw_edges.iter().enumerate() {
        let (ds, do_) = (nodes[s].depth, nodes[o].depth);
        let (src, dst, forward) = if ds > do_ {
            (s, o, true)
        } else if do_ > ds {
            (o, s, false)
        } else {
            return None; // equal distance: not orientable toward the answer
        };
        edges.push(PlanEdge { rel, src, forward });
        nodes[dst].incoming.push(ei);
    }

    // anchored: every source is a constant, every non-source a variable
    let anchored = nodes.iter().all(|n| {
        if n.incoming.is_empty() {
            n.term.is_constant()
        } else {
            n.term.is_var()
        }
    });

    let mut topo: Vec<usize> = (0..nodes.len()).collect();
    topo.sort_by(|&a, &b| nodes[b].depth.cmp(&nodes[a].depth).then(a.cmp(&b)));

    let tree = edges.len() == nodes.len() - 1;
    Some(BranchPlan { nodes, edges, answer_node, topo, anchored, tree })
}

/// True when every branch orients into an anchored plan (constants at all
/// sources, answer at the sink); the embeddable class of queries.
pub fn is_anchored(q: &Query) -> bool {
    q.branches
        .iter()
        .all(|b| plan_branch(q, b).is_some_and(|p| p.anchored))
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

fn image_forward(g: &KnowledgeGraph, xs: &BTreeSet<NodeId>, rel: RelationId) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    for x in xs {
        if let NodeId::Entity(e) = x {
            out.extend(g.successors(*e, rel).iter().copied());
        }
    }
    out
}

fn image_backward(g: &KnowledgeGraph, xs: &BTreeSet<NodeId>, rel: RelationId) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    for x in xs {
        out.extend(g.predecessors(*x, rel).iter().map(|&e| NodeId::Entity(e)));
    }
    out
}

/// Candidate propagation along the oriented tree; exact for tree-shaped
/// branches (every supported shape).
fn eval_tree(g: &KnowledgeGraph, plan: &BranchPlan) -> BTreeSet<NodeId> {
    // None = unconstrained (free-variable source)
    let mut cand: Vec<Option<BTreeSet<NodeId>>> = vec![None; plan.nodes.len()];
    for &ni in &plan.topo {
        let node = &plan.nodes[ni];
        let mut acc: Option<BTreeSet<NodeId>> = node.term.as_node().map(|n| {
            let mut s = BTreeSet::new();
            s.insert(n);
            s
        });
        for &ei in &node.incoming {
            let edge = &plan.edges[ei];
            let image = match &cand[edge.src] {
                Some(src) => {
                    if edge.forward {
                        image_forward(g, src, edge.rel)
                    } else {
                        image_backward(g, src, edge.rel)
                    }
                }
                None => {
                    // unconstrained source: full extension of the relation
                    let mut s = BTreeSet::new();
                    for &(h, t) in g.relation_pairs(edge.rel) {
                        s.insert(if edge.forward { t } else { NodeId::Entity(h) });
                    }
                    s
                }
            };
            acc = Some(match acc {
                Some(prev) => prev.intersection(&image).copied().collect(),
                None => image,
            });
        }
        cand[ni] = acc;
    }
    cand[plan.answer_node].clone().unwrap_or_default()
}

/// Exhaustive backtracking join over one branch, invoking `visit` for every
/// complete match; exact on every query.
fn backtrack_matches(
    g: &KnowledgeGraph,
    q: &Query,
    branch: &[usize],
    visit: &mut dyn FnMut(&BTreeMap<VarId, NodeId>),
) {
    let atoms: Vec<Atom> = branch.iter().map(|&i| q.atoms[i]).collect();
    // greedy atom order: most already-bound terms first
    let mut order: Vec<usize> = Vec::new();
    let mut bound_vars: BTreeSet<VarId> = BTreeSet::new();
    let mut remaining: Vec<usize> = (0..atoms.len()).collect();
    while !remaining.is_empty() {
        let score = |ai: usize| {
            atoms[ai]
                .terms()
                .iter()
                .filter(|t| match t {
                    Term::Var(v) => bound_vars.contains(v),
                    _ => true,
                })
                .count()
        };
        let best = remaining
            .iter()
            .copied()
            .max_by_key(|&ai| (score(ai), std::cmp::Reverse(ai)))
            .unwrap();
        remaining.retain(|&ai| ai != best);
        for term in atoms[best].terms() {
            if let Term::Var(v) = term {
                bound_vars.insert(v);
            }
        }
        order.push(best);
    }

    let mut bindings: BTreeMap<VarId, NodeId> = BTreeMap::new();
    fn resolve(t: Term, b: &BTreeMap<VarId, NodeId>) -> Option<NodeId> {
        match t {
            Term::Var(v) => b.get(&v).copied(),
            other => other.as_node(),
        }
    }
    fn rec(
        g: &KnowledgeGraph,
        atoms: &[Atom],
        order: &[usize],
        i: usize,
        bindings: &mut BTreeMap<VarId, NodeId>,
        visit: &mut dyn FnMut(&BTreeMap<VarId, NodeId>),
    ) {
        if i == order.len() {
            visit(bindings);
            return;
        }
        let atom = atoms[order[i]];
        let s = resolve(atom.subject, bindings);
        let o = resolve(atom.object, bindings);
        match (s, o) {
            (Some(sv), Some(ov)) => {
                if let NodeId::Entity(e) = sv {
                    if g.successors(e, atom.rel).contains(&ov) {
                        rec(g, atoms, order, i + 1, bindings, visit);
                    }
                }
            }
            (Some(sv), None) => {
                let Term::Var(ovar) = atom.object else { unreachable!() };
                if let NodeId::Entity(e) = sv {
                    for &t in g.successors(e, atom.rel) {
                        bindings.insert(ovar, t);
                        rec(g, atoms, order, i + 1, bindings, visit);
                    }
                    bindings.remove(&ovar);
                }
            }
            (None, Some(ov)) => {
                let Term::Var(svar) = atom.subject else { unreachable!() };
                for &h in g.predecessors(ov, atom.rel) {
                    bindings.insert(svar, NodeId::Entity(h));
                    rec(g, atoms, order, i + 1, bindings, visit);
                }
                bindings.remove(&svar);
            }
            (None, None) => {
                let Term::Var(svar) = atom.subject else { unreachable!() };
                let Term::Var(ovar) = atom.object else { unreachable!() };
                for &(h, t) in g.relation_pairs(atom.rel) {
                    if svar == ovar && NodeId::Entity(h) != t {
                        continue;
                    }
                    bindings.insert(svar, NodeId::Entity(h));
                    bindings.insert(ovar, t);
                    rec(g, atoms, order, i + 1, bindings, visit);
                    bindings.remove(&ovar);
                    bindings.remove(&svar);
                }
            }
        }
    }
    rec(g, &atoms, &order, 0, &mut bindings, visit);
}

fn eval_backtracking(g: &KnowledgeGraph, q: &Query, branch: &[usize]) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    let answer = q.answer;
    backtrack_matches(g, q, branch, &mut |bindings| {
        if let Some(&a) = bindings.get(&answer) {
            out.insert(a);
        }
    });
    out
}

/// Distinct value tuples the given variables take over all matches, across
/// every branch.
pub fn project_matches(
    q: &Query,
    g: &KnowledgeGraph,
    vars: &[VarId],
) -> BTreeSet<Vec<NodeId>> {
    let mut out = BTreeSet::new();
    for branch in &q.branches {
        backtrack_matches(g, q, branch, &mut |bindings| {
            if let Some(tuple) = vars
                .iter()
                .map(|v| bindings.get(v).copied())
                .collect::<Option<Vec<_>>>()
            {
                out.insert(tuple);
            }
        });
    }
    out
}

/// Answers of `q` on `g`: all entities some assignment maps the answer
/// variable to, union over DNF branches.
pub fn answers(q: &Query, g: &KnowledgeGraph) -> BTreeSet<EntityId> {
    let mut out = BTreeSet::new();
    for branch in &q.branches {
        let nodes = match plan_branch(q, branch) {
            Some(plan) if plan.tree => eval_tree(g, &plan),
            _ => eval_backtracking(g, q, branch),
        };
        out.extend(nodes.into_iter().filter_map(NodeId::as_entity));
    }
    out
}

/// Certain answers: answers over the saturated graph.
pub fn certain_answers(
    q: &Query,
    g: &KnowledgeGraph,
    o: &Ontology,
    symbols: &SymbolTable,
) -> BTreeSet<EntityId> {
    answers(q, &saturate(g, o, symbols))
}

// ---------------------------------------------------------------------------
// Canonical form
// ---------------------------------------------------------------------------

fn render(q: &Query, branch_order: &[usize], atom_orders: &[Vec<usize>]) -> String {
    let mut names: BTreeMap<VarId, usize> = BTreeMap::new();
    let mut next = 0usize;
    let mut term_str = |t: Term| -> String {
        match t {
            Term::Var(v) if v == q.answer => "?a".to_string(),
            Term::Var(v) => {
                let id = *names.entry(v).or_insert_with(|| {
                    let n = next;
                    next += 1;
                    n
                });
                format!("?{id}")
            }
            Term::Entity(e) => format!("e{}", e.0),
            Term::Concept(c) => format!("c{}", c.0),
        }
    };
    let mut parts = Vec::new();
    for &bi in branch_order {
        let branch = &q.branches[bi];
        let mut atoms = Vec::new();
        for &k in &atom_orders[bi] {
            let atom = q.atoms[branch[k]];
            atoms.push(format!(
                "r{}({},{})",
                atom.rel.0,
                term_str(atom.subject),
                term_str(atom.object)
            ));
        }
        parts.push(atoms.join(","));
    }
    parts.join("|")
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..n).collect();
    fn heap(k: usize, items: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(items.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, items, out);
            if k % 2 == 0 {
                items.swap(i, k - 1);
            } else {
                items.swap(0, k - 1);
            }
        }
    }
    heap(n, &mut items, &mut out);
    out
}

/// Deterministic string invariant under variable renaming and atom
/// reordering: the lexicographically smallest rendering over atom and branch
/// permutations, with variables named by first occurrence.
pub fn canonical_form(q: &Query) -> String {
    let total_atoms: usize = q.branches.iter().map(|b| b.len()).sum();
    if total_atoms > 8 {
        // out of the supported query regime; fall back to a stable heuristic
        let atom_orders: Vec<Vec<usize>> = q
            .branches
            .iter()
            .map(|b| {
                let mut idx: Vec<usize> = (0..b.len()).collect();
                idx.sort_by_key(|&k| q.atoms[b[k]]);
                idx
            })
            .collect();
        let branch_order: Vec<usize> = (0..q.branches.len()).collect();
        return render(q, &branch_order, &atom_orders);
    }
    let per_branch: Vec<Vec<Vec<usize>>> = q
        .branches
        .iter()
        .map(|b| permutations(b.len()))
        .collect();
    let branch_orders = permutations(q.branches.len());
    let mut best: Option<String> = None;
    // cartesian product over branch-local atom permutations
    fn walk(
        q: &Query,
        per_branch: &[Vec<Vec<usize>>],
        branch_orders: &[Vec<usize>],
        chosen: &mut Vec<Vec<usize>>,
        bi: usize,
        best: &mut Option<String>,
    ) {
        if bi == per_branch.len() {
            for bo in branch_orders {
                let s = render(q, bo, chosen);
                if best.as_ref().is_none_or(|b| s < *b) {
                    *best = Some(s);
                }
            }
            return;
        }
        for perm in &per_branch[bi] {
            chosen.push(perm.clone());
            walk(q, per_branch, branch_orders, chosen, bi + 1, best);
            chosen.pop();
        }
    }
    walk(q, &per_branch, &branch_orders, &mut Vec::new(), 0, &mut best);
    best.expect("at least one rendering")
}

// ---------------------------------------------------------------------------
// Shape classification
// ---------------------------------------------------------------------------

fn single_branch_shape(plan: &BranchPlan) -> Option<Shape> {
    if !plan.anchored {
        return None;
    }
    let n_atoms = plan.edges.len();
    let ans = &plan.nodes[plan.answer_node];
    let in_ans = ans.incoming.len();
    let pred_of = |ni: usize| -> Vec<usize> {
        plan.nodes[ni]
            .incoming
            .iter()
            .map(|&ei| plan.edges[ei].src)
            .collect()
    };
    match (n_atoms, in_ans) {
        (1, 1) => Some(Shape::OneP),
        (2, 1) => {
            let mid = pred_of(plan.answer_node)[0];
            (plan.nodes[mid].incoming.len() == 1).then_some(Shape::TwoP)
        }
        (2, 2) => Some(Shape::TwoI),
        (3, 1) => {
            let mid = pred_of(plan.answer_node)[0];
            match plan.nodes[mid].incoming.len() {
                1 => {
                    let mid2 = pred_of(mid)[0];
                    (plan.nodes[mid2].incoming.len() == 1).then_some(Shape::ThreeP)
                }
                2 => Some(Shape::Ip),
                _ => None,
            }
        }
        (3, 2) => {
            let preds = pred_of(plan.answer_node);
            let chain_mids: Vec<usize> = preds
                .iter()
                .copied()
                .filter(|&p| plan.nodes[p].incoming.len() == 1 && plan.nodes[p].term.is_var())
                .collect();
            let anchors = preds
                .iter()
                .filter(|&&p| plan.nodes[p].incoming.is_empty())
                .count();
            (chain_mids.len() == 1 && anchors == 1).then_some(Shape::Pi)
        }
        (3, 3) => Some(Shape::ThreeI),
        _ => None,
    }
}

/// Classify the oriented computation graph into one of the nine supported
/// shapes; None for everything else.
pub fn shape_of(q: &Query) -> Option<Shape> {
    if q.branches.len() == 1 {
        let plan = plan_branch(q, &q.branches[0])?;
        return single_branch_shape(&plan);
    }
    if q.branches.len() != 2 {
        return None;
    }
    let plans: Vec<BranchPlan> = q
        .branches
        .iter()
        .map(|b| plan_branch(q, b))
        .collect::<Option<_>>()?;
    let shapes: Vec<Shape> = plans
        .iter()
        .map(single_branch_shape)
        .collect::<Option<_>>()?;
    let b0: BTreeSet<usize> = q.branches[0].iter().copied().collect();
    let b1: BTreeSet<usize> = q.branches[1].iter().copied().collect();
    let shared: Vec<usize> = b0.intersection(&b1).copied().collect();
    match (shapes[0], shapes[1], shared.len()) {
        (Shape::OneP, Shape::OneP, 0) if b0.len() == 1 && b1.len() == 1 => Some(Shape::TwoU),
        (Shape::TwoP, Shape::TwoP, 1) if b0.len() == 2 && b1.len() == 2 => {
            // the shared atom must be the one touching the answer in both
            let sa = q.atoms[shared[0]];
            let touches_answer =
                sa.terms().contains(&Term::Var(q.answer));
            touches_answer.then_some(Shape::Up)
        }
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Shape templates and instantiation
// ---------------------------------------------------------------------------

/// Unlabeled query template: a DAG over `node_count` nodes with directed
/// atom edges and a distinguished answer node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryShape {
    pub node_count: usize,
    pub edges: Vec<(usize, usize)>,
    pub distinguished: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeLabel {
    Answer,
    Var,
    Entity(EntityId),
    Concept(ConceptId),
}

/// Build the CQ with one atom `f(e)(f(u), f(v))` per edge. The labeling must
/// put the answer on the distinguished node, constants on anchors and the
/// result must match a supported shape.
pub fn instantiate(
    shape: &QueryShape,
    node_labels: &[NodeLabel],
    edge_rels: &[RelationId],
    symbols: &SymbolTable,
) -> Result<Query> {
    if node_labels.len() != shape.node_count || edge_rels.len() != shape.edges.len() {
        return Err(Error::Query("labeling does not cover the shape".into()));
    }
    if node_labels[shape.distinguished] != NodeLabel::Answer {
        return Err(Error::Query("distinguished node must carry the answer variable".into()));
    }
    let mut var_names = Vec::new();
    let mut terms = Vec::with_capacity(node_labels.len());
    let mut answer = None;
    for (i, label) in node_labels.iter().enumerate() {
        let term = match label {
            NodeLabel::Answer => {
                if answer.is_some() {
                    return Err(Error::Query("two answer nodes".into()));
                }
                let v = VarId(var_names.len() as u32);
                var_names.push("A".to_string());
                answer = Some(v);
                Term::Var(v)
            }
            NodeLabel::Var => {
                let v = VarId(var_names.len() as u32);
                var_names.push(format!("V{i}"));
                Term::Var(v)
            }
            NodeLabel::Entity(e) => Term::Entity(*e),
            NodeLabel::Concept(c) => Term::Concept(*c),
        };
        terms.push(term);
    }
    let answer = answer.ok_or_else(|| Error::Query("no answer node labeled".into()))?;
    let atoms: Vec<Atom> = shape
        .edges
        .iter()
        .zip(edge_rels)
        .map(|(&(u, v), &rel)| Atom::new(rel, terms[u], terms[v]))
        .collect();
    let q = Query::new(var_names, answer, atoms)?;
    q.validate_typing(symbols)?;
    if shape_of(&q).is_none() {
        return Err(Error::Query("labeled query does not match a supported shape".into()));
    }
    Ok(q)
}

// ---------------------------------------------------------------------------
// Query file format (one JSON object per line)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub shape: String,
    pub atoms: Vec<[String; 3]>,
    pub answer_var: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<AnswersRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gens: Option<Vec<GenRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnswersRecord {
    #[serde(default)]
    pub plain: Vec<String>,
    #[serde(default)]
    pub certain: Vec<String>,
    #[serde(default)]
    pub hard: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenRecord {
    pub shape: String,
    pub atoms: Vec<[String; 3]>,
    pub answer_var: String,
}

/// A query plus the optional payloads carried by the file format.
#[derive(Debug, Clone)]
pub struct ParsedQuery {
    pub id: String,
    pub query: Query,
    pub answers: Option<ParsedAnswers>,
    pub gens: Vec<Query>,
    pub strategy: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedAnswers {
    pub plain: BTreeSet<EntityId>,
    pub certain: BTreeSet<EntityId>,
    pub hard: BTreeSet<EntityId>,
}

fn parse_term(
    s: &str,
    var_ids: &mut BTreeMap<String, VarId>,
    var_names: &mut Vec<String>,
    symbols: &mut SymbolTable,
    concept_position: bool,
) -> Result<Term> {
    if let Some(name) = s.strip_prefix('?') {
        if name.is_empty() {
            return Err(Error::Query("empty variable name".into()));
        }
        let id = *var_ids.entry(name.to_string()).or_insert_with(|| {
            let v = VarId(var_names.len() as u32);
            var_names.push(name.to_string());
            v
        });
        return Ok(Term::Var(id));
    }
    if concept_position {
        Ok(Term::Concept(symbols.intern_concept(s)?))
    } else {
        Ok(Term::Entity(symbols.intern_entity(s)?))
    }
}

fn atoms_from_records(
    raw: &[[String; 3]],
    symbols: &mut SymbolTable,
    var_ids: &mut BTreeMap<String, VarId>,
    var_names: &mut Vec<String>,
) -> Result<Vec<Atom>> {
    let type_rel = symbols.type_relation();
    let mut atoms = Vec::with_capacity(raw.len());
    for [s, r, o] in raw {
        let rel = symbols.intern_relation(r)?;
        let subject = parse_term(s, var_ids, var_names, symbols, false)?;
        let object = parse_term(o, var_ids, var_names, symbols, rel == type_rel)?;
        atoms.push(Atom::new(rel, subject, object));
    }
    Ok(atoms)
}

/// Reconstruct the DNF branches implied by the shape tag.
fn derive_branches(atoms: &[Atom], shape: &str, answer: VarId) -> Result<Vec<Vec<usize>>> {
    match shape {
        "2u" => {
            if atoms.len() != 2 {
                return Err(Error::Query("2u requires exactly two atoms".into()));
            }
            Ok(vec![vec![0], vec![1]])
        }
        "up" => {
            if atoms.len() != 3 {
                return Err(Error::Query("up requires exactly three atoms".into()));
            }
            let chain: Vec<usize> = (0..3)
                .filter(|&i| atoms[i].terms().contains(&Term::Var(answer)))
                .collect();
            if chain.len() != 1 {
                return Err(Error::Query(
                    "up requires exactly one atom touching the answer".into(),
                ));
            }
            let others: Vec<usize> = (0..3).filter(|i| *i != chain[0]).collect();
            Ok(vec![vec![others[0], chain[0]], vec![others[1], chain[0]]])
        }
        _ => Ok(vec![(0..atoms.len()).collect()]),
    }
}

fn parse_entity_list(names: &[String], symbols: &SymbolTable) -> Result<BTreeSet<EntityId>> {
    names.iter().map(|n| symbols.entity(n)).collect()
}

pub fn parse_query_record(
    record: &QueryRecord,
    symbols: &mut SymbolTable,
) -> Result<ParsedQuery> {
    let mut var_ids = BTreeMap::new();
    let mut var_names = Vec::new();
    let atoms = atoms_from_records(&record.atoms, symbols, &mut var_ids, &mut var_names)?;
    let ans_name = record
        .answer_var
        .strip_prefix('?')
        .ok_or_else(|| Error::Query("answer_var must start with `?`".into()))?;
    let answer = *var_ids
        .get(ans_name)
        .ok_or_else(|| Error::Query(format!("answer variable ?{ans_name} not in atoms")))?;
    let branches = derive_branches(&atoms, &record.shape, answer)?;
    let query = Query::new_union(var_names, answer, atoms, branches)?;
    query.validate_typing(symbols)?;
    if record.shape != "other" {
        let declared = Shape::parse(&record.shape)
            .ok_or_else(|| Error::Query(format!("unknown shape tag `{}`", record.shape)))?;
        if shape_of(&query) != Some(declared) {
            return Err(Error::Query(format!(
                "query does not match its declared shape `{}`",
                record.shape
            )));
        }
    }
    let answers = match &record.answers {
        Some(a) => Some(ParsedAnswers {
            plain: parse_entity_list(&a.plain, symbols)?,
            certain: parse_entity_list(&a.certain, symbols)?,
            hard: parse_entity_list(&a.hard, symbols)?,
        }),
        None => None,
    };
    let mut gens = Vec::new();
    for gen in record.gens.iter().flatten() {
        let mut gvar_ids = BTreeMap::new();
        let mut gvar_names = Vec::new();
        let gatoms = atoms_from_records(&gen.atoms, symbols, &mut gvar_ids, &mut gvar_names)?;
        let gans = gen
            .answer_var
            .strip_prefix('?')
            .and_then(|n| gvar_ids.get(n).copied())
            .ok_or_else(|| Error::Query("generalization answer variable not in atoms".into()))?;
        let gbranches = derive_branches(&gatoms, &gen.shape, gans)?;
        let gq = Query::new_union(gvar_names, gans, gatoms, gbranches)?;
        gq.validate_typing(symbols)?;
        gens.push(gq);
    }
    Ok(ParsedQuery {
        id: record.id.clone(),
        query,
        answers,
        gens,
        strategy: record.strategy.clone(),
    })
}

pub fn parse_query_line(line: &str, symbols: &mut SymbolTable) -> Result<ParsedQuery> {
    let record: QueryRecord = serde_json::from_str(line)
        .map_err(|e| Error::Query(format!("bad query record: {e}")))?;
    parse_query_record(&record, symbols)
}

fn term_to_string(t: Term, q: &Query, symbols: &SymbolTable) -> String {
    match t {
        Term::Var(v) => format!("?{}", q.var_name(v)),
        Term::Entity(e) => symbols.entity_name(e).to_string(),
        Term::Concept(c) => symbols.concept_name(c).to_string(),
    }
}

fn atoms_to_records(q: &Query, symbols: &SymbolTable) -> Vec<[String; 3]> {
    q.atoms
        .iter()
        .map(|a| {
            [
                term_to_string(a.subject, q, symbols),
                symbols.relation_name(a.rel).to_string(),
                term_to_string(a.object, q, symbols),
            ]
        })
        .collect()
}

pub fn to_query_record(
    id: &str,
    q: &Query,
    symbols: &SymbolTable,
    answers: Option<(&BTreeSet<EntityId>, &BTreeSet<EntityId>, &BTreeSet<EntityId>)>,
    gens: &[Query],
    strategy: Option<&str>,
    provenance: Option<Vec<String>>,
) -> QueryRecord {
    let names = |set: &BTreeSet<EntityId>| -> Vec<String> {
        set.iter().map(|&e| symbols.entity_name(e).to_string()).collect()
    };
    QueryRecord {
        id: id.to_string(),
        shape: shape_of(q).map(|s| s.as_str().to_string()).unwrap_or_else(|| "other".into()),
        atoms: atoms_to_records(q, symbols),
        answer_var: format!("?{}", q.var_name(q.answer)),
        answers: answers.map(|(plain, certain, hard)| AnswersRecord {
            plain: names(plain),
            certain: names(certain),
            hard: names(hard),
        }),
        gens: if gens.is_empty() {
            None
        } else {
            Some(
                gens.iter()
                    .map(|g| GenRecord {
                        shape: shape_of(g)
                            .map(|s| s.as_str().to_string())
                            .unwrap_or_else(|| "other".into()),
                        atoms: atoms_to_records(g, symbols),
                        answer_var: format!("?{}", g.var_name(g.answer)),
                    })
                    .collect(),
            )
        },
        strategy: strategy.map(str::to_string),
        provenance,
    }
}

pub fn record_to_line(record: &QueryRecord) -> String {
    serde_json::to_string(record).expect("query record serializes")
}
