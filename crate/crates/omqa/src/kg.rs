//! Interned triple store over a signature of entities, concepts and relations.
//!
//! Unary facts are stored uniformly as `type` triples; the reserved relation
//! `type` is the only relation whose objects are concepts, and concepts never
//! appear as triple subjects. Graphs are immutable after construction and can
//! be shared across threads read-only.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const TYPE_RELATION: &str = "type";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SymbolKind {
    Entity,
    Concept,
    Relation,
}

impl std::fmt::Display for SymbolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SymbolKind::Entity => write!(f, "entity"),
            SymbolKind::Concept => write!(f, "concept"),
            SymbolKind::Relation => write!(f, "relation"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConceptId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationId(pub u32);

/// Entity-or-concept position: triple objects and embeddable points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Entity(EntityId),
    Concept(ConceptId),
}

impl NodeId {
    pub fn as_entity(self) -> Option<EntityId> {
        match self {
            NodeId::Entity(e) => Some(e),
            NodeId::Concept(_) => None,
        }
    }
}

/// Name interner. Ids are dense per kind and the name↔id mapping is a
/// bijection: a name belongs to exactly one kind for the whole run.
#[derive(Debug, Clone)]
pub struct SymbolTable {
    entities: Vec<String>,
    concepts: Vec<String>,
    relations: Vec<String>,
    by_name: HashMap<String, (SymbolKind, u32)>,
}

impl Default for SymbolTable {
    fn default() -> Self {
        Self::new()
    }
}

impl SymbolTable {
    pub fn new() -> Self {
        let mut t = SymbolTable {
            entities: Vec::new(),
            concepts: Vec::new(),
            relations: Vec::new(),
            by_name: HashMap::new(),
        };
        t.intern_relation(TYPE_RELATION).expect("reserved relation");
        t
    }

    pub fn type_relation(&self) -> RelationId {
        RelationId(0)
    }

    fn intern(&mut self, name: &str, kind: SymbolKind) -> Result<u32> {
        if let Some(&(k, id)) = self.by_name.get(name) {
            if k == kind {
                return Ok(id);
            }
            return Err(Error::Schema(format!(
                "`{name}` already interned as {k}, cannot reuse as {kind}"
            )));
        }
        let pool = match kind {
            SymbolKind::Entity => &mut self.entities,
            SymbolKind::Concept => &mut self.concepts,
            SymbolKind::Relation => &mut self.relations,
        };
        let id = pool.len() as u32;
        pool.push(name.to_string());
        self.by_name.insert(name.to_string(), (kind, id));
        Ok(id)
    }

    pub fn intern_entity(&mut self, name: &str) -> Result<EntityId> {
        self.intern(name, SymbolKind::Entity).map(EntityId)
    }

    pub fn intern_concept(&mut self, name: &str) -> Result<ConceptId> {
        self.intern(name, SymbolKind::Concept).map(ConceptId)
    }

    pub fn intern_relation(&mut self, name: &str) -> Result<RelationId> {
        self.intern(name, SymbolKind::Relation).map(RelationId)
    }

    pub fn resolve(&self, name: &str) -> Option<(SymbolKind, u32)> {
        self.by_name.get(name).copied()
    }

    pub fn entity(&self, name: &str) -> Result<EntityId> {
        match self.resolve(name) {
            Some((SymbolKind::Entity, id)) => Ok(EntityId(id)),
            _ => Err(Error::UnknownSymbol(name.to_string())),
        }
    }

    pub fn concept(&self, name: &str) -> Result<ConceptId> {
        match self.resolve(name) {
            Some((SymbolKind::Concept, id)) => Ok(ConceptId(id)),
            _ => Err(Error::UnknownSymbol(name.to_string())),
        }
    }

    pub fn relation(&self, name: &str) -> Result<RelationId> {
        match self.resolve(name) {
            Some((SymbolKind::Relation, id)) => Ok(RelationId(id)),
            _ => Err(Error::UnknownSymbol(name.to_string())),
        }
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entities[id.0 as usize]
    }

    pub fn concept_name(&self, id: ConceptId) -> &str {
        &self.concepts[id.0 as usize]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relations[id.0 as usize]
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        match id {
            NodeId::Entity(e) => self.entity_name(e),
            NodeId::Concept(c) => self.concept_name(c),
        }
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn concept_count(&self) -> usize {
        self.concepts.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entities
    }

    pub fn concept_names(&self) -> &[String] {
        &self.concepts
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relations
    }

    pub fn all_entities(&self) -> impl Iterator<Item = EntityId> {
        (0..self.entities.len() as u32).map(EntityId)
    }

    pub fn all_concepts(&self) -> impl Iterator<Item = ConceptId> {
        (0..self.concepts.len() as u32).map(ConceptId)
    }

    pub fn all_relations(&self) -> impl Iterator<Item = RelationId> {
        (0..self.relations.len() as u32).map(RelationId)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: NodeId,
}

impl Triple {
    pub fn new(head: EntityId, rel: RelationId, tail: NodeId) -> Self {
        Triple { head, rel, tail }
    }
}

/// Immutable indexed triple store.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    triples: BTreeSet<Triple>,
    spo: HashMap<(EntityId, RelationId), Vec<NodeId>>,
    ops: HashMap<(NodeId, RelationId), Vec<EntityId>>,
    by_rel: HashMap<RelationId, Vec<(EntityId, NodeId)>>,
    out_edges: HashMap<EntityId, Vec<(RelationId, NodeId)>>,
    in_edges: HashMap<NodeId, Vec<(RelationId, EntityId)>>,
    entities: BTreeSet<EntityId>,
    concepts: BTreeSet<ConceptId>,
    relations: BTreeSet<RelationId>,
}

impl KnowledgeGraph {
    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        let set: BTreeSet<Triple> = triples.into_iter().collect();
        let mut g = KnowledgeGraph {
            triples: set,
            ..Default::default()
        };
        for &t in &g.triples {
            g.spo.entry((t.head, t.rel)).or_default().push(t.tail);
            g.ops.entry((t.tail, t.rel)).or_default().push(t.head);
            g.by_rel.entry(t.rel).or_default().push((t.head, t.tail));
            g.out_edges.entry(t.head).or_default().push((t.rel, t.tail));
            g.in_edges.entry(t.tail).or_default().push((t.rel, t.head));
            g.entities.insert(t.head);
            match t.tail {
                NodeId::Entity(e) => {
                    g.entities.insert(e);
                }
                NodeId::Concept(c) => {
                    g.concepts.insert(c);
                }
            }
            g.relations.insert(t.rel);
        }
        // BTreeSet iteration is sorted, so the index vectors are too
        g
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.contains(t)
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    pub fn successors(&self, h: EntityId, r: RelationId) -> &[NodeId] {
        self.spo.get(&(h, r)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn predecessors(&self, t: NodeId, r: RelationId) -> &[EntityId] {
        self.ops.get(&(t, r)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn relation_pairs(&self, r: RelationId) -> &[(EntityId, NodeId)] {
        self.by_rel.get(&r).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn out_edges(&self, h: EntityId) -> &[(RelationId, NodeId)] {
        self.out_edges.get(&h).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn in_edges(&self, t: NodeId) -> &[(RelationId, EntityId)] {
        self.in_edges.get(&t).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Entities carrying `type(x, c)`.
    pub fn concept_members(&self, c: ConceptId, type_rel: RelationId) -> &[EntityId] {
        self.predecessors(NodeId::Concept(c), type_rel)
    }

    pub fn entity_set(&self) -> &BTreeSet<EntityId> {
        &self.entities
    }

    pub fn concept_set(&self) -> &BTreeSet<ConceptId> {
        &self.concepts
    }

    pub fn relation_set(&self) -> &BTreeSet<RelationId> {
        &self.relations
    }
}

/// Parse UTF-8 TSV `head<TAB>relation<TAB>tail`; `#` lines and blank lines
/// are ignored, duplicate lines collapse to one triple.
pub fn load_triples(reader: impl BufRead, symbols: &mut SymbolTable) -> Result<KnowledgeGraph> {
    let mut triples: BTreeSet<Triple> = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                lineno,
                format!("expected 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        let (h, r, t) = (fields[0], fields[1], fields[2]);
        if h.is_empty() || r.is_empty() || t.is_empty() {
            return Err(Error::parse(lineno, "empty field"));
        }
        let head = symbols
            .intern_entity(h)
            .map_err(|e| at_line(lineno, e))?;
        let rel = symbols
            .intern_relation(r)
            .map_err(|e| at_line(lineno, e))?;
        let tail = if rel == symbols.type_relation() {
            NodeId::Concept(symbols.intern_concept(t).map_err(|e| at_line(lineno, e))?)
        } else {
            NodeId::Entity(symbols.intern_entity(t).map_err(|e| at_line(lineno, e))?)
        };
        triples.insert(Triple::new(head, rel, tail));
    }
    Ok(KnowledgeGraph::from_triples(triples))
}

fn at_line(lineno: usize, e: Error) -> Error {
    match e {
        Error::Schema(msg) => Error::Schema(format!("line {lineno}: {msg}")),
        other => other,
    }
}

/// Write the graph back as TSV, sorted by interned ids.
pub fn write_triples(
    g: &KnowledgeGraph,
    symbols: &SymbolTable,
    mut w: impl Write,
) -> Result<()> {
    for t in g.triples() {
        writeln!(
            w,
            "{}\t{}\t{}",
            symbols.entity_name(t.head),
            symbols.relation_name(t.rel),
            symbols.node_name(t.tail)
        )?;
    }
    Ok(())
}

/// Nested train ⊂ valid ⊂ test split sharing one symbol table.
#[derive(Debug, Clone)]
pub struct SplitBundle {
    pub g_train: KnowledgeGraph,
    pub g_valid: KnowledgeGraph,
    pub g_test: KnowledgeGraph,
}

/// Removal count per nesting step: floor(ratio·n), but at least 1 when n > 1
/// so that tiny fixtures still nest strictly.
fn removal_count(n: usize, ratio: f64) -> usize {
    if n <= 1 {
        return 0;
    }
    ((ratio * n as f64).floor() as usize).max(1)
}

/// Removal candidates are drawn uniformly over all triples; `type` edges
/// and role edges are equally likely to be discarded.
pub fn split(g: &KnowledgeGraph, ratio: f64, seed: u64) -> Result<SplitBundle> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} outside (0,1)")));
    }
    if g.is_empty() {
        return Err(Error::Contract("split of an empty graph".into()));
    }
    let rng = Rng::seeded(seed);
    let all: Vec<Triple> = g.triples().copied().collect();

    let drop_valid = removal_count(all.len(), ratio);
    let removed: BTreeSet<usize> = rng
        .derive("split.valid")
        .sample_indices(all.len(), drop_valid)
        .into_iter()
        .collect();
    let valid: Vec<Triple> = all
        .iter()
        .enumerate()
        .filter(|(i, _)| !removed.contains(i))
        .map(|(_, t)| *t)
        .collect();

    let drop_train = removal_count(valid.len(), ratio);
    let removed2: BTreeSet<usize> = rng
        .derive("split.train")
        .sample_indices(valid.len(), drop_train)
        .into_iter()
        .collect();
    let train: Vec<Triple> = valid
        .iter()
        .enumerate()
        .filter(|(i, _)| !removed2.contains(i))
        .map(|(_, t)| *t)
        .collect();

    Ok(SplitBundle {
        g_train: KnowledgeGraph::from_triples(train),
        g_valid: KnowledgeGraph::from_triples(valid),
        g_test: g.clone(),
    })
}

/// Counts in the style of the dataset statistics table: |G|, |I|, |R|, |C|,
/// and when an ontology is supplied |O| and |O∞(G)|.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsRecord {
    pub triples: usize,
    pub entities: usize,
    pub relations: usize,
    pub concepts: usize,
    pub axioms: Option<usize>,
    pub closure_triples: Option<usize>,
}

pub fn stats(g: &KnowledgeGraph) -> StatsRecord {
    StatsRecord {
        triples: g.len(),
        entities: g.entity_set().len(),
        relations: g.relation_set().len(),
        concepts: g.concept_set().len(),
        axioms: None,
        closure_triples: None,
    }
}

impl std::fmt::Display for StatsRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "|G| = {}", self.triples)?;
        writeln!(f, "|I| = {}", self.entities)?;
        writeln!(f, "|R| = {}", self.relations)?;
        write!(f, "|C| = {}", self.concepts)?;
        if let Some(o) = self.axioms {
            write!(f, "\n|O| = {o}")?;
        }
        if let Some(c) = self.closure_triples {
            write!(f, "\n|O∞(G)| = {c}")?;
        }
        Ok(())
    }
}

/// Index coherence check used by tests: every triple is reachable from all
/// three indexes and enumeration via any index yields the same set.
pub fn check_index_coherence(g: &KnowledgeGraph) -> bool {
    let from_spo: BTreeSet<Triple> = g
        .spo
        .iter()
        .flat_map(|(&(h, r), tails)| tails.iter().map(move |&t| Triple::new(h, r, t)))
        .collect();
    let from_ops: BTreeSet<Triple> = g
        .ops
        .iter()
        .flat_map(|(&(t, r), heads)| heads.iter().map(move |&h| Triple::new(h, r, t)))
        .collect();
    let from_rel: BTreeSet<Triple> = g
        .by_rel
        .iter()
        .flat_map(|(&r, pairs)| pairs.iter().map(move |&(h, t)| Triple::new(h, r, t)))
        .collect();
    from_spo == g.triples && from_ops == g.triples && from_rel == g.triples
}

/// Stable map row for a node in the embedding table: entities first, then
/// concepts.
pub fn embedding_row(node: NodeId, entity_count: usize) -> usize {
    match node {
        NodeId::Entity(e) => e.0 as usize,
        NodeId::Concept(c) => entity_count + c.0 as usize,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn load(s: &str) -> (KnowledgeGraph, SymbolTable) {
        let mut sym = SymbolTable::new();
        let g = load_triples(Cursor::new(s), &mut sym).unwrap();
        (g, sym)
    }

    #[test]
    fn load_counts_kinds() {
        let (g, _) = load("mit\ttype\tUniversity\nbob\tworksFor\tbosch\n");
        assert_eq!(g.len(), 2);
        assert_eq!(g.entity_set().len(), 3);
        assert_eq!(g.concept_set().len(), 1);
        assert_eq!(g.relation_set().len(), 2);
    }

    #[test]
    fn load_empty_stream() {
        let (g, _) = load("");
        assert!(g.is_empty());
        assert_eq!(stats(&g).entities, 0);
    }

    #[test]
    fn duplicate_lines_collapse() {
        let (g, _) = load("a\tr\tb\na\tr\tb\n");
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn comments_and_blank_lines_skipped() {
        let (g, _) = load("# header\n\na\tr\tb\n");
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn malformed_line_reports_number() {
        let mut sym = SymbolTable::new();
        let err = load_triples(Cursor::new("a\tr\tb\nbad line\n"), &mut sym).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn concept_as_head_is_schema_error() {
        let mut sym = SymbolTable::new();
        let err =
            load_triples(Cursor::new("a\ttype\tC\nC\tr\tb\n"), &mut sym).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn successors_and_predecessors() {
        let (g, sym) = load("mit\thasAlumnus\tbob\nbob\tworksFor\tbosch\n");
        let mit = sym.entity("mit").unwrap();
        let bob = sym.entity("bob").unwrap();
        let bosch = sym.entity("bosch").unwrap();
        let has_alumnus = sym.relation("hasAlumnus").unwrap();
        let works_for = sym.relation("worksFor").unwrap();
        assert_eq!(g.successors(mit, has_alumnus), &[NodeId::Entity(bob)]);
        assert_eq!(g.predecessors(NodeId::Entity(bosch), works_for), &[bob]);
        assert!(g.successors(bob, has_alumnus).is_empty());
    }

    #[test]
    fn unknown_symbol_lookup_errors() {
        let (_, sym) = load("a\tr\tb\n");
        assert!(matches!(sym.entity("nope"), Err(Error::UnknownSymbol(_))));
        assert!(matches!(sym.relation("a"), Err(Error::UnknownSymbol(_))));
    }

    #[test]
    fn split_arithmetic_on_100() {
        let triples = (0..100)
            .map(|i| format!("h{i}\tr\tt{i}"))
            .collect::<Vec<_>>()
            .join("\n");
        let (g, _) = load(&triples);
        let b = split(&g, 0.1, 7).unwrap();
        assert_eq!(b.g_test.len(), 100);
        assert_eq!(b.g_valid.len(), 90);
        assert_eq!(b.g_train.len(), 81);
    }

    #[test]
    fn split_deterministic() {
        let triples = (0..50)
            .map(|i| format!("h{i}\tr\tt{i}"))
            .collect::<Vec<_>>()
            .join("\n");
        let (g, _) = load(&triples);
        let b1 = split(&g, 0.1, 7).unwrap();
        let b2 = split(&g, 0.1, 7).unwrap();
        let t1: Vec<_> = b1.g_train.triples().collect();
        let t2: Vec<_> = b2.g_train.triples().collect();
        assert_eq!(t1, t2);
    }

    #[test]
    fn split_tiny_fixture_removes_one() {
        let triples = (0..8)
            .map(|i| format!("h{i}\tr\tt{i}"))
            .collect::<Vec<_>>()
            .join("\n");
        let (g, _) = load(&triples);
        let b = split(&g, 0.1, 3).unwrap();
        assert_eq!(b.g_valid.len(), 7);
        assert_eq!(b.g_train.len(), 6);
    }

    #[test]
    fn split_rejects_bad_ratio() {
        let (g, _) = load("a\tr\tb\nc\tr\td\n");
        assert!(matches!(split(&g, 0.0, 1), Err(Error::Config(_))));
        assert!(matches!(split(&g, 1.0, 1), Err(Error::Config(_))));
    }

    #[test]
    fn split_nesting_holds_on_random_graphs() {
        let mut rng = Rng::seeded(42);
        for trial in 0..30 {
            let n = 2 + rng.below(199);
            let lines = (0..n)
                .map(|_| {
                    format!(
                        "e{}\tr{}\te{}",
                        rng.below(40),
                        rng.below(5),
                        rng.below(40)
                    )
                })
                .collect::<Vec<_>>()
                .join("\n");
            let (g, _) = load(&lines);
            if g.is_empty() {
                continue;
            }
            let b = split(&g, 0.1 + 0.2 * rng.uniform(), trial).unwrap();
            assert!(b.g_train.triples().all(|t| b.g_valid.contains(t)));
            assert!(b.g_valid.triples().all(|t| b.g_test.contains(t)));
        }
    }

    #[test]
    fn roundtrip_line_set() {
        let input = "b\tr\ta\na\tr\tb\na\tr\tb\n# note\n";
        let (g, sym) = load(input);
        let mut out = Vec::new();
        write_triples(&g, &sym, &mut out).unwrap();
        let written: BTreeSet<&str> = std::str::from_utf8(&out)
            .unwrap()
            .lines()
            .collect();
        let expected: BTreeSet<&str> = ["a\tr\tb", "b\tr\ta"].into_iter().collect();
        assert_eq!(written, expected);
    }

    #[test]
    fn index_coherence_random() {
        let mut rng = Rng::seeded(9);
        for _ in 0..20 {
            let lines = (0..60)
                .map(|_| {
                    format!(
                        "e{}\tr{}\te{}",
                        rng.below(15),
                        rng.below(4),
                        rng.below(15)
                    )
                })
                .collect::<Vec<_>>()
                .join("\n");
            let (g, _) = load(&lines);
            assert!(check_index_coherence(&g));
        }
    }

    #[test]
    fn stats_empty_graph_is_zero() {
        let (g, _) = load("");
        let s = stats(&g);
        assert_eq!((s.triples, s.entities, s.relations, s.concepts), (0, 0, 0, 0));
    }
}
