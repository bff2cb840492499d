//! Box-embedding model: entities and concepts are points, relations are
//! boxes, queries embed by translating and intersecting boxes along the
//! computation graph.
//!
//! Parameters are stored as f32 (the checkpoint format), all arithmetic runs
//! in f64. Gradients are exact reverse-mode derivatives of the training
//! objective; the L1 distance uses the sign subgradient with sign(0) = 0.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kg::{embedding_row, EntityId, NodeId, SymbolTable};
use crate::query::{plan_branch, shape_of, Query, Term};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxEmb {
    pub center: Vec<f64>,
    pub offset: Vec<f64>,
}

impl BoxEmb {
    pub fn point(center: Vec<f64>) -> Self {
        let offset = vec![0.0; center.len()];
        BoxEmb { center, offset }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    pub entities: Vec<String>,
    pub concepts: Vec<String>,
    pub relations: Vec<String>,
}

impl Vocab {
    pub fn from_symbols(symbols: &SymbolTable) -> Vocab {
        Vocab {
            entities: symbols.entity_names().to_vec(),
            concepts: symbols.concept_names().to_vec(),
            relations: symbols.relation_names().to_vec(),
        }
    }

    /// Rebuild a symbol table with identical ids from the stored vocabulary.
    pub fn to_symbols(&self) -> Result<SymbolTable> {
        if self.relations.first().map(String::as_str) != Some(crate::kg::TYPE_RELATION) {
            return Err(Error::Format(
                "checkpoint vocabulary must list `type` as relation 0".into(),
            ));
        }
        let mut symbols = SymbolTable::new();
        for r in self.relations.iter().skip(1) {
            symbols.intern_relation(r).map_err(|e| Error::Format(e.to_string()))?;
        }
        for e in &self.entities {
            symbols.intern_entity(e).map_err(|e| Error::Format(e.to_string()))?;
        }
        for c in &self.concepts {
            symbols.intern_concept(c).map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(symbols)
    }
}

/// 2-layer feed-forward network d→d→d with ReLU, used for the attention
/// scores over box centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

/// Permutation-invariant offset network: element-wise 2-layer MLP, mean over
/// inputs, final linear map.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepSets {
    pub u1: Vec<f32>,
    pub c1: Vec<f32>,
    pub u2: Vec<f32>,
    pub c2: Vec<f32>,
    pub v: Vec<f32>,
    pub c3: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub d: usize,
    pub gamma: f64,
    pub vocab: Vocab,
    /// (|I|+|C|) × d points, entities first
    pub entity: Vec<f32>,
    /// |R| × d
    pub rel_center: Vec<f32>,
    /// |R| × d, kept element-wise non-negative
    pub rel_offset: Vec<f32>,
    pub attn: Mlp,
    pub deepsets: DeepSets,
}

impl Parameters {
    pub fn entity_rows(&self) -> usize {
        self.vocab.entities.len() + self.vocab.concepts.len()
    }

    pub fn row(&self, node: NodeId) -> usize {
        embedding_row(node, self.vocab.entities.len())
    }

    pub fn point(&self, row: usize) -> Vec<f64> {
        self.point_slice(row).iter().map(|&x| x as f64).collect()
    }

    pub fn point_slice(&self, row: usize) -> &[f32] {
        &self.entity[row * self.d..(row + 1) * self.d]
    }

    fn rel_center64(&self, rel: usize) -> &[f32] {
        &self.rel_center[rel * self.d..(rel + 1) * self.d]
    }

    fn rel_offset64(&self, rel: usize) -> &[f32] {
        &self.rel_offset[rel * self.d..(rel + 1) * self.d]
    }
}

/// Gradient accumulator mirroring `Parameters`, f64, zeroed between steps.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub entity: Vec<f64>,
    pub rel_center: Vec<f64>,
    pub rel_offset: Vec<f64>,
    pub attn_w1: Vec<f64>,
    pub attn_b1: Vec<f64>,
    pub attn_w2: Vec<f64>,
    pub attn_b2: Vec<f64>,
    pub ds_u1: Vec<f64>,
    pub ds_c1: Vec<f64>,
    pub ds_u2: Vec<f64>,
    pub ds_c2: Vec<f64>,
    pub ds_v: Vec<f64>,
    pub ds_c3: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(p: &Parameters) -> Gradients {
        let d = p.d;
        Gradients {
            entity: vec![0.0; p.entity.len()],
            rel_center: vec![0.0; p.rel_center.len()],
            rel_offset: vec![0.0; p.rel_offset.len()],
            attn_w1: vec![0.0; d * d],
            attn_b1: vec![0.0; d],
            attn_w2: vec![0.0; d * d],
            attn_b2: vec![0.0; d],
            ds_u1: vec![0.0; d * d],
            ds_c1: vec![0.0; d],
            ds_u2: vec![0.0; d * d],
            ds_c2: vec![0.0; d],
            ds_v: vec![0.0; d * d],
            ds_c3: vec![0.0; d],
        }
    }

    pub fn zero(&mut self) {
        for v in [
            &mut self.entity,
            &mut self.rel_center,
            &mut self.rel_offset,
            &mut self.attn_w1,
            &mut self.attn_b1,
            &mut self.attn_w2,
            &mut self.attn_b2,
            &mut self.ds_u1,
            &mut self.ds_c1,
            &mut self.ds_u2,
            &mut self.ds_c2,
            &mut self.ds_v,
            &mut self.ds_c3,
        ] {
            v.fill(0.0);
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in [
            (&mut self.entity, &other.entity),
            (&mut self.rel_center, &other.rel_center),
            (&mut self.rel_offset, &other.rel_offset),
            (&mut self.attn_w1, &other.attn_w1),
            (&mut self.attn_b1, &other.attn_b1),
            (&mut self.attn_w2, &other.attn_w2),
            (&mut self.attn_b2, &other.attn_b2),
            (&mut self.ds_u1, &other.ds_u1),
            (&mut self.ds_c1, &other.ds_c1),
            (&mut self.ds_u2, &other.ds_u2),
            (&mut self.ds_c2, &other.ds_c2),
            (&mut self.ds_v, &other.ds_v),
            (&mut self.ds_c3, &other.ds_c3),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in [
            &mut self.entity,
            &mut self.rel_center,
            &mut self.rel_offset,
            &mut self.attn_w1,
            &mut self.attn_b1,
            &mut self.attn_w2,
            &mut self.attn_b2,
            &mut self.ds_u1,
            &mut self.ds_c1,
            &mut self.ds_u2,
            &mut self.ds_c2,
            &mut self.ds_v,
            &mut self.ds_c3,
        ] {
            for x in v.iter_mut() {
                *x *= factor;
            }
        }
    }
}

/// Initial parameter draw: points and relation centers uniform in
/// [−0.5/√d, 0.5/√d], relation offsets uniform in [0, 0.5/√d], network
/// weights uniform scaled by fan-in, biases zero.
pub fn init_parameters(vocab: Vocab, d: usize, gamma: f64, seed: u64) -> Parameters {
    let root = Rng::seeded(seed);
    let half = 0.5 / (d as f64).sqrt();
    let fill = |rng: &mut Rng, n: usize, lo: f64, hi: f64| -> Vec<f32> {
        (0..n).map(|_| rng.uniform_in(lo, hi) as f32).collect()
    };
    let rows = vocab.entities.len() + vocab.concepts.len();
    let n_rel = vocab.relations.len();
    let w_bound = 1.0 / (d as f64).sqrt();
    let mut r_ent = root.derive("init.entity");
    let mut r_relc = root.derive("init.rel_center");
    let mut r_relo = root.derive("init.rel_offset");
    let mut r_net = root.derive("init.net");
    Parameters {
        d,
        gamma,
        entity: fill(&mut r_ent, rows * d, -half, half),
        rel_center: fill(&mut r_relc, n_rel * d, -half, half),
        rel_offset: fill(&mut r_relo, n_rel * d, 0.0, half),
        attn: Mlp {
            w1: fill(&mut r_net, d * d, -w_bound, w_bound),
            b1: vec![0.0; d],
            w2: fill(&mut r_net, d * d, -w_bound, w_bound),
            b2: vec![0.0; d],
        },
        deepsets: DeepSets {
            u1: fill(&mut r_net, d * d, -w_bound, w_bound),
            c1: vec![0.0; d],
            u2: fill(&mut r_net, d * d, -w_bound, w_bound),
            c2: vec![0.0; d],
            v: fill(&mut r_net, d * d, -w_bound, w_bound),
            c3: vec![0.0; d],
        },
        vocab,
    }
}

// ---------------------------------------------------------------------------
// Numerics
// ---------------------------------------------------------------------------

/// Sigmoid, computed in log space for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x > 30.0 {
        1.0 - (-x).exp()
    } else if x < -30.0 {
        x.exp()
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// ln σ(x) = −softplus(−x), stable everywhere.
pub fn ln_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn matvec(w: &[f32], x: &[f64], d: usize, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * d..(i + 1) * d];
        *o = row.iter().zip(x).map(|(&wj, &xj)| wj as f64 * xj).sum();
    }
}

fn matvec_t(w: &[f32], g: &[f64], d: usize, out: &mut [f64]) {
    out.fill(0.0);
    for (i, &gi) in g.iter().enumerate() {
        let row = &w[i * d..(i + 1) * d];
        for (o, &wj) in out.iter_mut().zip(row) {
            *o += wj as f64 * gi;
        }
    }
}

fn outer_acc(grad: &mut [f64], g: &[f64], x: &[f64], d: usize) {
    for (i, &gi) in g.iter().enumerate() {
        let row = &mut grad[i * d..(i + 1) * d];
        for (r, &xj) in row.iter_mut().zip(x) {
            *r += gi * xj;
        }
    }
}

// ---------------------------------------------------------------------------
// Forward operators
// ---------------------------------------------------------------------------

/// Entities and concepts are boxes with zero-length sides.
pub fn embed_entity(params: &Parameters, node: NodeId) -> BoxEmb {
    BoxEmb::point(params.point(params.row(node)))
}

/// Translate and enlarge by the relation box.
pub fn project(params: &Parameters, b: &BoxEmb, rel: usize) -> BoxEmb {
    let rc = params.rel_center64(rel);
    let ro = params.rel_offset64(rel);
    BoxEmb {
        center: b.center.iter().zip(rc).map(|(c, r)| c + *r as f64).collect(),
        offset: b.offset.iter().zip(ro).map(|(o, r)| o + *r as f64).collect(),
    }
}

/// Traverse a relation against its direction: the center translates back,
/// the offset still grows.
pub fn project_inverse(params: &Parameters, b: &BoxEmb, rel: usize) -> BoxEmb {
    let rc = params.rel_center64(rel);
    let ro = params.rel_offset64(rel);
    BoxEmb {
        center: b.center.iter().zip(rc).map(|(c, r)| c - *r as f64).collect(),
        offset: b.offset.iter().zip(ro).map(|(o, r)| o + *r as f64).collect(),
    }
}

struct IntersectCache {
    pre1: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    q1: Vec<Vec<f64>>,
    mu: Vec<f64>,
    s: Vec<f64>,
    minvals: Vec<f64>,
    argmin: Vec<usize>,
}

fn intersect_forward(params: &Parameters, inputs: &[&BoxEmb]) -> (BoxEmb, IntersectCache) {
    let d = params.d;
    let n = inputs.len();
    // attention over centers
    let mut pre1 = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for b in inputs {
        let mut p1 = vec![0.0; d];
        matvec(&params.attn.w1, &b.center, d, &mut p1);
        for (x, bias) in p1.iter_mut().zip(&params.attn.b1) {
            *x += *bias as f64;
        }
        let h: Vec<f64> = p1.iter().map(|&x| x.max(0.0)).collect();
        let mut zi = vec![0.0; d];
        matvec(&params.attn.w2, &h, d, &mut zi);
        for (x, bias) in zi.iter_mut().zip(&params.attn.b2) {
            *x += *bias as f64;
        }
        pre1.push(p1);
        z.push(zi);
    }
    // dimension-wise softmax over the n inputs
    let mut weights = vec![vec![0.0; d]; n];
    for k in 0..d {
        let mx = z.iter().map(|zi| zi[k]).fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for zi in &z {
            denom += (zi[k] - mx).exp();
        }
        for (i, zi) in z.iter().enumerate() {
            weights[i][k] = (zi[k] - mx).exp() / denom;
        }
    }
    let mut center = vec![0.0; d];
    for (i, b) in inputs.iter().enumerate() {
        for k in 0..d {
            center[k] += weights[i][k] * b.center[k];
        }
    }
    // offsets: min ⊙ σ(deepsets)
    let mut q1 = Vec::with_capacity(n);
    let mut m_sum = vec![0.0; d];
    for b in inputs {
        let mut q1i = vec![0.0; d];
        matvec(&params.deepsets.u1, &b.offset, d, &mut q1i);
        for (x, bias) in q1i.iter_mut().zip(&params.deepsets.c1) {
            *x += *bias as f64;
        }
        let h: Vec<f64> = q1i.iter().map(|&x| x.max(0.0)).collect();
        let mut mi = vec![0.0; d];
        matvec(&params.deepsets.u2, &h, d, &mut mi);
        for (x, bias) in mi.iter_mut().zip(&params.deepsets.c2) {
            *x += *bias as f64;
        }
        for k in 0..d {
            m_sum[k] += mi[k];
        }
        q1.push(q1i);
    }
    let mu: Vec<f64> = m_sum.iter().map(|&x| x / n as f64).collect();
    let mut psi = vec![0.0; d];
    matvec(&params.deepsets.v, &mu, d, &mut psi);
    for (x, bias) in psi.iter_mut().zip(&params.deepsets.c3) {
        *x += *bias as f64;
    }
    let s: Vec<f64> = psi.iter().map(|&x| sigmoid(x)).collect();
    let mut minvals = vec![0.0; d];
    let mut argmin = vec![0usize; d];
    for k in 0..d {
        let (mut best, mut besti) = (inputs[0].offset[k], 0usize);
        for (i, b) in inputs.iter().enumerate().skip(1) {
            if b.offset[k] < best {
                best = b.offset[k];
                besti = i;
            }
        }
        minvals[k] = best;
        argmin[k] = besti;
    }
    let offset: Vec<f64> = (0..d).map(|k| minvals[k] * s[k]).collect();
    (
        BoxEmb { center, offset },
        IntersectCache { pre1, weights, q1, mu, s, minvals, argmin },
    )
}

/// Attention-weighted center combination and sigmoid-shrunk minimum offset;
/// the result lies inside the per-dimension span of the inputs.
pub fn intersect(params: &Parameters, inputs: &[BoxEmb]) -> Result<BoxEmb> {
    if inputs.len() < 2 {
        return Err(Error::Contract(format!(
            "intersection needs at least two boxes, got {}",
            inputs.len()
        )));
    }
    let refs: Vec<&BoxEmb> = inputs.iter().collect();
    Ok(intersect_forward(params, &refs).0)
}

// ---------------------------------------------------------------------------
// Query embedding tape
// ---------------------------------------------------------------------------

/// Parameter-independent embedding recipe: the computation-graph topology
/// baked into a flat slot program, compiled once per query and reusable
/// across training steps.
#[derive(Debug, Clone)]
pub struct CompiledQuery {
    steps: Vec<StepSpec>,
    branch_slots: Vec<usize>,
}

#[derive(Debug, Clone)]
enum StepSpec {
    Leaf { row: usize },
    Project { input: usize, rel: usize, forward: bool },
    Intersect { inputs: Vec<usize> },
}

pub fn compile(params: &Parameters, q: &Query) -> Result<CompiledQuery> {
    if shape_of(q).is_none() {
        return Err(Error::Query("query does not embed: unsupported shape".into()));
    }
    let mut steps: Vec<StepSpec> = Vec::new();
    let mut branch_slots = Vec::new();
    for branch in &q.branches {
        let plan = plan_branch(q, branch)
            .ok_or_else(|| Error::Query("query does not orient".into()))?;
        let mut slot_of_node: BTreeMap<usize, usize> = BTreeMap::new();
        for &ni in &plan.topo {
            let node = &plan.nodes[ni];
            let slot = if node.incoming.is_empty() {
                let term_node = match node.term {
                    Term::Entity(e) => NodeId::Entity(e),
                    Term::Concept(c) => NodeId::Concept(c),
                    Term::Var(_) => {
                        return Err(Error::Query("free-variable source does not embed".into()))
                    }
                };
                steps.push(StepSpec::Leaf { row: params.row(term_node) });
                steps.len() - 1
            } else {
                let mut in_slots = Vec::with_capacity(node.incoming.len());
                for &ei in &node.incoming {
                    let edge = &plan.edges[ei];
                    steps.push(StepSpec::Project {
                        input: slot_of_node[&edge.src],
                        rel: edge.rel.0 as usize,
                        forward: edge.forward,
                    });
                    in_slots.push(steps.len() - 1);
                }
                if in_slots.len() == 1 {
                    in_slots[0]
                } else {
                    steps.push(StepSpec::Intersect { inputs: in_slots });
                    steps.len() - 1
                }
            };
            slot_of_node.insert(ni, slot);
        }
        branch_slots.push(slot_of_node[&plan.answer_node]);
    }
    Ok(CompiledQuery { steps, branch_slots })
}

/// Reusable forward/backward storage for one tape.
#[derive(Default)]
struct TapeState {
    boxes: Vec<BoxEmb>,
    caches: Vec<Option<IntersectCache>>,
    dc: Vec<Vec<f64>>,
    dofs: Vec<Vec<f64>>,
}

impl TapeState {
    fn reset(&mut self, slots: usize, d: usize) {
        self.boxes.resize_with(slots, || BoxEmb { center: Vec::new(), offset: Vec::new() });
        self.caches.resize_with(slots, || None);
        self.dc.resize_with(slots, Vec::new);
        self.dofs.resize_with(slots, Vec::new);
        for i in 0..slots {
            self.boxes[i].center.clear();
            self.boxes[i].center.resize(d, 0.0);
            self.boxes[i].offset.clear();
            self.boxes[i].offset.resize(d, 0.0);
            self.caches[i] = None;
            self.dc[i].clear();
            self.dc[i].resize(d, 0.0);
            self.dofs[i].clear();
            self.dofs[i].resize(d, 0.0);
        }
    }
}

fn run_forward(params: &Parameters, cq: &CompiledQuery, state: &mut TapeState) -> Result<()> {
    let d = params.d;
    state.reset(cq.steps.len(), d);
    for si in 0..cq.steps.len() {
        match &cq.steps[si] {
            StepSpec::Leaf { row } => {
                let src = &params.entity[row * d..(row + 1) * d];
                let b = &mut state.boxes[si];
                for (k, &x) in src.iter().enumerate() {
                    b.center[k] = x as f64;
                    b.offset[k] = 0.0;
                }
            }
            StepSpec::Project { input, rel, forward } => {
                let sign = if *forward { 1.0 } else { -1.0 };
                let rc = &params.rel_center[rel * d..(rel + 1) * d];
                let ro = &params.rel_offset[rel * d..(rel + 1) * d];
                let (head, tail) = state.boxes.split_at_mut(si);
                let (src, dst) = (&head[*input], &mut tail[0]);
                for k in 0..d {
                    dst.center[k] = src.center[k] + sign * rc[k] as f64;
                    dst.offset[k] = src.offset[k] + ro[k] as f64;
                }
            }
            StepSpec::Intersect { inputs } => {
                let (b, cache) = {
                    let refs: Vec<&BoxEmb> =
                        inputs.iter().map(|&s| &state.boxes[s]).collect();
                    intersect_forward(params, &refs)
                };
                state.boxes[si] = b;
                state.caches[si] = Some(cache);
            }
        }
    }
    for &slot in &cq.branch_slots {
        let b = &state.boxes[slot];
        if b.center.iter().chain(&b.offset).any(|x| !x.is_finite()) {
            return Err(Error::Numeric("query embedding".into()));
        }
    }
    Ok(())
}

/// Reverse pass; upstream gradients must already sit in `state.dc`/`state.dofs`.
fn run_backward(
    params: &Parameters,
    cq: &CompiledQuery,
    state: &mut TapeState,
    grads: &mut Gradients,
) {
    let d = params.d;
    let TapeState { boxes, caches, dc, dofs } = state;
    let mut buf = vec![0.0; d];
    let mut gz = vec![0.0; d];
    let mut gpre = vec![0.0; d];
    for si in (0..cq.steps.len()).rev() {
        if dc[si].iter().all(|&x| x == 0.0) && dofs[si].iter().all(|&x| x == 0.0) {
            continue;
        }
        match &cq.steps[si] {
            StepSpec::Leaf { row } => {
                let base = row * d;
                for k in 0..d {
                    grads.entity[base + k] += dc[si][k];
                }
            }
            StepSpec::Project { input, rel, forward } => {
                let base = rel * d;
                let sign = if *forward { 1.0 } else { -1.0 };
                let (dc_lo, dc_hi) = dc.split_at_mut(si);
                let (do_lo, do_hi) = dofs.split_at_mut(si);
                let (gc, go) = (&dc_hi[0], &do_hi[0]);
                for k in 0..d {
                    dc_lo[*input][k] += gc[k];
                    do_lo[*input][k] += go[k];
                    grads.rel_center[base + k] += sign * gc[k];
                    grads.rel_offset[base + k] += go[k];
                }
            }
            StepSpec::Intersect { inputs } => {
                let n = inputs.len();
                let cache = caches[si].take().expect("forward ran");
                let center_out = &boxes[si].center;
                let (dc_lo, dc_hi) = dc.split_at_mut(si);
                let (do_lo, do_hi) = dofs.split_at_mut(si);
                let (gc, go) = (&dc_hi[0], &do_hi[0]);
                // centers: direct path + softmax/attention path
                for (i, &slot) in inputs.iter().enumerate() {
                    let ci = &boxes[slot].center;
                    for k in 0..d {
                        dc_lo[slot][k] += cache.weights[i][k] * gc[k];
                        gz[k] = gc[k] * cache.weights[i][k] * (ci[k] - center_out[k]);
                    }
                    // z_i = W2·relu(W1·c_i + b1) + b2
                    for k in 0..d {
                        grads.attn_b2[k] += gz[k];
                    }
                    let h: Vec<f64> = cache.pre1[i].iter().map(|&x| x.max(0.0)).collect();
                    outer_acc(&mut grads.attn_w2, &gz, &h, d);
                    matvec_t(&params.attn.w2, &gz, d, &mut buf);
                    for k in 0..d {
                        gpre[k] = if cache.pre1[i][k] > 0.0 { buf[k] } else { 0.0 };
                    }
                    for k in 0..d {
                        grads.attn_b1[k] += gpre[k];
                    }
                    outer_acc(&mut grads.attn_w1, &gpre, ci, d);
                    matvec_t(&params.attn.w1, &gpre, d, &mut buf);
                    for k in 0..d {
                        dc_lo[slot][k] += buf[k];
                    }
                }
                // offsets: o_w = min ⊙ σ(ψ)
                let mut gpsi = vec![0.0; d];
                for k in 0..d {
                    let gmin = go[k] * cache.s[k];
                    do_lo[inputs[cache.argmin[k]]][k] += gmin;
                    gpsi[k] = go[k] * cache.minvals[k] * cache.s[k] * (1.0 - cache.s[k]);
                }
                for k in 0..d {
                    grads.ds_c3[k] += gpsi[k];
                }
                outer_acc(&mut grads.ds_v, &gpsi, &cache.mu, d);
                matvec_t(&params.deepsets.v, &gpsi, d, &mut buf);
                let gmu = buf.clone();
                for (i, &slot) in inputs.iter().enumerate() {
                    let gm: Vec<f64> = gmu.iter().map(|&g| g / n as f64).collect();
                    for k in 0..d {
                        grads.ds_c2[k] += gm[k];
                    }
                    let h: Vec<f64> = cache.q1[i].iter().map(|&x| x.max(0.0)).collect();
                    outer_acc(&mut grads.ds_u2, &gm, &h, d);
                    matvec_t(&params.deepsets.u2, &gm, d, &mut buf);
                    for k in 0..d {
                        gpre[k] = if cache.q1[i][k] > 0.0 { buf[k] } else { 0.0 };
                    }
                    for k in 0..d {
                        grads.ds_c1[k] += gpre[k];
                    }
                    outer_acc(&mut grads.ds_u1, &gpre, &boxes[slot].offset, d);
                    matvec_t(&params.deepsets.u1, &gpre, d, &mut buf);
                    for k in 0..d {
                        do_lo[slot][k] += buf[k];
                    }
                }
            }
        }
    }
}

/// One box per DNF branch.
#[derive(Debug, Clone)]
pub struct QueryEmbedding {
    pub branches: Vec<BoxEmb>,
}

pub fn embed_query(params: &Parameters, q: &Query) -> Result<QueryEmbedding> {
    let compiled = compile(params, q)?;
    embed_compiled(params, &compiled)
}

pub fn embed_compiled(params: &Parameters, cq: &CompiledQuery) -> Result<QueryEmbedding> {
    let mut state = TapeState::default();
    run_forward(params, cq, &mut state)?;
    Ok(QueryEmbedding {
        branches: cq.branch_slots.iter().map(|&s| state.boxes[s].clone()).collect(),
    })
}

/// L1 distance from the entity point to the nearest branch center.
pub fn distance(e: &QueryEmbedding, point: &[f64]) -> f64 {
    e.branches
        .iter()
        .map(|b| l1(&b.center, point))
        .fold(f64::INFINITY, f64::min)
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn l1_f32(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, &y)| (x - y as f64).abs()).sum()
}

/// p(v | q) = σ(γ − d).
pub fn prob(dist: f64, gamma: f64) -> f64 {
    sigmoid(gamma - dist)
}

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

/// One training item: the compiled query, its compiled generalizations
/// (possibly none), one positive answer and k negative entities.
pub struct LossItem<'a> {
    pub query: &'a CompiledQuery,
    pub gens: &'a [CompiledQuery],
    pub positive: EntityId,
    pub negatives: &'a [EntityId],
}

/// Generalization-weighted negative log-likelihood:
///   L = −Σ_{q_i ∈ P} (1/|P|)·ln σ(γ − d(v,q_i)) − Σ_j (1/k)·ln σ(d(v'_j,q) − γ)
/// with P = {q} ∪ gens; negatives score against the original query only.
pub fn item_loss(params: &Parameters, item: &LossItem) -> Result<f64> {
    let mut pool = Vec::new();
    item_forward(params, item, &mut pool, None)
}

fn item_forward(
    params: &Parameters,
    item: &LossItem,
    pool: &mut Vec<TapeState>,
    mut grads: Option<&mut Gradients>,
) -> Result<f64> {
    if item.negatives.is_empty() {
        return Err(Error::Config("k_negatives must be at least 1".into()));
    }
    let d = params.d;
    let gamma = params.gamma;
    let n_queries = 1 + item.gens.len();
    pool.resize_with(pool.len().max(n_queries), TapeState::default);
    let queries: Vec<&CompiledQuery> =
        std::iter::once(item.query).chain(item.gens.iter()).collect();
    for (ti, cq) in queries.iter().enumerate() {
        run_forward(params, cq, &mut pool[ti])?;
    }
    let n = n_queries as f64;
    let v_row = params.row(NodeId::Entity(item.positive));
    let mut loss = 0.0;

    for (ti, cq) in queries.iter().enumerate() {
        let v = params.point_slice(v_row);
        let state = &pool[ti];
        let (mut best, mut besti) = (f64::INFINITY, 0usize);
        for (bi, &slot) in cq.branch_slots.iter().enumerate() {
            let dist = l1_f32(&state.boxes[slot].center, v);
            if dist < best {
                best = dist;
                besti = bi;
            }
        }
        loss += softplus(best - gamma) / n;
        if let Some(g) = grads.as_deref_mut() {
            let dl_dd = sigmoid(best - gamma) / n;
            let slot = cq.branch_slots[besti];
            let state = &mut pool[ti];
            let center = &state.boxes[slot].center[..d];
            let dc = &mut state.dc[slot][..d];
            let gent = &mut g.entity[v_row * d..(v_row + 1) * d];
            for k in 0..d {
                let s = sign0(center[k] - v[k] as f64);
                dc[k] += dl_dd * s;
                gent[k] -= dl_dd * s;
            }
        }
    }

    let k = item.negatives.len() as f64;
    let cq = item.query;
    for &neg in item.negatives {
        let neg_row = params.row(NodeId::Entity(neg));
        let vneg = params.point_slice(neg_row);
        let (mut best, mut besti) = (f64::INFINITY, 0usize);
        for (bi, &slot) in cq.branch_slots.iter().enumerate() {
            let dist = l1_f32(&pool[0].boxes[slot].center, vneg);
            if dist < best {
                best = dist;
                besti = bi;
            }
        }
        loss += softplus(gamma - best) / k;
        if let Some(g) = grads.as_deref_mut() {
            let dl_dd = -sigmoid(gamma - best) / k;
            let slot = cq.branch_slots[besti];
            let state = &mut pool[0];
            let center = &state.boxes[slot].center[..d];
            let dc = &mut state.dc[slot][..d];
            let gent = &mut g.entity[neg_row * d..(neg_row + 1) * d];
            for kk in 0..d {
                let s = sign0(center[kk] - vneg[kk] as f64);
                dc[kk] += dl_dd * s;
                gent[kk] -= dl_dd * s;
            }
        }
    }

    if !loss.is_finite() {
        return Err(Error::Numeric("loss".into()));
    }
    if let Some(g) = grads {
        for (ti, cq) in queries.iter().enumerate() {
            let state = &mut pool[ti];
            run_backward(params, cq, state, g);
        }
    }
    Ok(loss)
}

/// Mean loss over the batch and exact gradients of that mean.
pub fn backward(params: &Parameters, items: &[LossItem]) -> Result<(f64, Gradients)> {
    if items.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let mut grads = Gradients::zeros_like(params);
    let mut pool: Vec<TapeState> = Vec::new();
    let mut total = 0.0;
    for item in items {
        total += item_forward(params, item, &mut pool, Some(&mut grads))?;
    }
    let scale = 1.0 / items.len() as f64;
    grads.scale(scale);
    Ok((total * scale, grads))
}

/// Fixed number of accumulation chunks, independent of the worker count, so
/// the reduction order (and therefore every bit of the result) never depends
/// on scheduling.
const GRAD_CHUNKS: usize = 4;

/// Reusable gradient accumulators and tape pools for the training loop;
/// allocating these per step costs more than the arithmetic.
pub struct BatchWorkspace {
    chunk_grads: Vec<Gradients>,
    pools: Vec<Vec<TapeState>>,
    total: Gradients,
}

impl BatchWorkspace {
    pub fn new(params: &Parameters) -> Self {
        BatchWorkspace {
            chunk_grads: (0..GRAD_CHUNKS).map(|_| Gradients::zeros_like(params)).collect(),
            pools: (0..GRAD_CHUNKS).map(|_| Vec::new()).collect(),
            total: Gradients::zeros_like(params),
        }
    }

    pub fn total(&self) -> &Gradients {
        &self.total
    }
}

/// `backward` into the reusable workspace, fanned over `workers` threads.
/// The chunk grid is fixed, so results are bit-identical for every worker
/// count. Mean loss is returned; mean gradients land in `ws.total()`.
type WorkUnit<'a, 'b> = (usize, &'a [LossItem<'a>], &'b mut Gradients, &'b mut Vec<TapeState>);

pub fn backward_into(
    params: &Parameters,
    items: &[LossItem],
    workers: usize,
    ws: &mut BatchWorkspace,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let chunk_len = items.len().div_ceil(GRAD_CHUNKS);
    let workers = workers.clamp(1, GRAD_CHUNKS);
    // work units: (chunk items, chunk gradient accumulator, tape pool)
    let mut units: Vec<WorkUnit> = items
        .chunks(chunk_len)
        .zip(ws.chunk_grads.iter_mut())
        .zip(ws.pools.iter_mut())
        .enumerate()
        .map(|(ci, ((chunk, grads), pool))| (ci, chunk, grads, pool))
        .collect();
    let n_units = units.len();
    let losses: Vec<Result<f64>> = if workers <= 1 || n_units == 1 {
        units
            .iter_mut()
            .map(|(_, chunk, grads, pool)| run_chunk(params, chunk, grads, pool))
            .collect()
    } else {
        let mut per_worker: Vec<Vec<WorkUnit>> = (0..workers).map(|_| Vec::new()).collect();
        for unit in units {
            per_worker[unit.0 % workers].push(unit);
        }
        let mut slots: Vec<Option<Result<f64>>> = Vec::new();
        slots.resize_with(n_units, || None);
        std::thread::scope(|scope| {
            let handles: Vec<_> = per_worker
                .into_iter()
                .map(|work| {
                    scope.spawn(move || {
                        work.into_iter()
                            .map(|(ci, chunk, grads, pool)| {
                                (ci, run_chunk(params, chunk, grads, pool))
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for handle in handles {
                for (ci, res) in handle.join().expect("gradient worker panicked") {
                    slots[ci] = Some(res);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("chunk computed")).collect()
    };
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    ws.total.zero();
    for ci in 0..n_units {
        ws.total.add(&ws.chunk_grads[ci]);
    }
    let scale = 1.0 / items.len() as f64;
    ws.total.scale(scale);
    Ok(total * scale)
}

fn run_chunk(
    params: &Parameters,
    chunk: &[LossItem],
    grads: &mut Gradients,
    pool: &mut Vec<TapeState>,
) -> Result<f64> {
    grads.zero();
    let mut total = 0.0;
    for item in chunk {
        total += item_forward(params, item, pool, Some(grads))?;
    }
    Ok(total)
}

/// SGD step; relation offsets are clamped non-negative afterwards.
pub fn apply_sgd(params: &mut Parameters, grads: &Gradients, lr: f64) {
    let upd = |w: &mut [f32], g: &[f64]| {
        for (x, &gi) in w.iter_mut().zip(g) {
            *x = (*x as f64 - lr * gi) as f32;
        }
    };
    upd(&mut params.entity, &grads.entity);
    upd(&mut params.rel_center, &grads.rel_center);
    upd(&mut params.rel_offset, &grads.rel_offset);
    upd(&mut params.attn.w1, &grads.attn_w1);
    upd(&mut params.attn.b1, &grads.attn_b1);
    upd(&mut params.attn.w2, &grads.attn_w2);
    upd(&mut params.attn.b2, &grads.attn_b2);
    upd(&mut params.deepsets.u1, &grads.ds_u1);
    upd(&mut params.deepsets.c1, &grads.ds_c1);
    upd(&mut params.deepsets.u2, &grads.ds_u2);
    upd(&mut params.deepsets.c2, &grads.ds_c2);
    upd(&mut params.deepsets.v, &grads.ds_v);
    upd(&mut params.deepsets.c3, &grads.ds_c3);
    for x in params.rel_offset.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::SymbolTable;
    use crate::query::parse_query_line;

    fn tiny_params(d: usize, seed: u64) -> (Parameters, SymbolTable) {
        let mut sym = SymbolTable::new();
        for n in ["a", "b", "c", "v", "w"] {
            sym.intern_entity(n).unwrap();
        }
        sym.intern_concept("C").unwrap();
        for r in ["r1", "r2", "r3"] {
            sym.intern_relation(r).unwrap();
        }
        let params = init_parameters(Vocab::from_symbols(&sym), d, 4.0, seed);
        (params, sym)
    }

    #[test]
    fn entity_boxes_have_zero_offset() {
        let (p, sym) = tiny_params(4, 1);
        let b = embed_entity(&p, NodeId::Entity(sym.entity("a").unwrap()));
        assert!(b.offset.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn entity_rows_are_independent() {
        let (mut p, sym) = tiny_params(4, 1);
        let before = embed_entity(&p, NodeId::Entity(sym.entity("b").unwrap()));
        let row_a = p.row(NodeId::Entity(sym.entity("a").unwrap()));
        for k in 0..p.d {
            p.entity[row_a * p.d + k] = 9.0;
        }
        let after = embed_entity(&p, NodeId::Entity(sym.entity("b").unwrap()));
        assert_eq!(before, after);
    }

    #[test]
    fn project_translates_and_enlarges() {
        let (mut p, _) = tiny_params(2, 1);
        p.rel_center[2..4].copy_from_slice(&[1.0, 2.0]);
        p.rel_offset[2..4].copy_from_slice(&[0.5, 0.5]);
        let b = BoxEmb::point(vec![0.0, 0.0]);
        let out = project(&p, &b, 1);
        assert_eq!(out.center, vec![1.0, 2.0]);
        assert_eq!(out.offset, vec![0.5, 0.5]);
    }

    #[test]
    fn projection_order_commutes() {
        let (p, _) = tiny_params(3, 7);
        let b = BoxEmb::point(vec![0.1, -0.2, 0.3]);
        let ab = project(&p, &project(&p, &b, 1), 2);
        let ba = project(&p, &project(&p, &b, 2), 1);
        for k in 0..3 {
            assert!((ab.center[k] - ba.center[k]).abs() < 1e-12);
            assert!((ab.offset[k] - ba.offset[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn intersect_identical_boxes_keeps_center() {
        let (p, _) = tiny_params(4, 3);
        let b = BoxEmb { center: vec![0.3; 4], offset: vec![0.2; 4] };
        let out = intersect(&p, &[b.clone(), b.clone(), b]).unwrap();
        for k in 0..4 {
            assert!((out.center[k] - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn intersect_rejects_arity_one() {
        let (p, _) = tiny_params(2, 3);
        let b = BoxEmb::point(vec![0.0, 0.0]);
        assert!(intersect(&p, &[b]).is_err());
    }

    #[test]
    fn intersect_geometry_invariants() {
        let mut rng = Rng::seeded(99);
        for trial in 0..500 {
            let d = 1 + rng.below(6);
            let (p, _) = tiny_params(d, trial);
            let n = 2 + rng.below(3);
            let boxes: Vec<BoxEmb> = (0..n)
                .map(|_| BoxEmb {
                    center: (0..d).map(|_| rng.uniform_in(-2.0, 2.0)).collect(),
                    offset: (0..d).map(|_| rng.uniform_in(0.0, 1.5)).collect(),
                })
                .collect();
            let out = intersect(&p, &boxes).unwrap();
            for k in 0..d {
                let min_c = boxes.iter().map(|b| b.center[k]).fold(f64::INFINITY, f64::min);
                let max_c = boxes
                    .iter()
                    .map(|b| b.center[k])
                    .fold(f64::NEG_INFINITY, f64::max);
                let min_o = boxes.iter().map(|b| b.offset[k]).fold(f64::INFINITY, f64::min);
                assert!(out.center[k] >= min_c - 1e-12 && out.center[k] <= max_c + 1e-12);
                assert!(out.offset[k] <= min_o + 1e-12);
                if min_o > 0.0 {
                    assert!(out.offset[k] < min_o);
                }
                assert!(out.offset[k] >= 0.0);
            }
        }
    }

    #[test]
    fn distance_and_prob_basics() {
        let e = QueryEmbedding {
            branches: vec![BoxEmb::point(vec![0.0, 0.0])],
        };
        assert_eq!(distance(&e, &[3.0, -4.0]), 7.0);
        let e2 = QueryEmbedding {
            branches: vec![BoxEmb::point(vec![1.0, 2.0])],
        };
        assert_eq!(distance(&e2, &[1.0, 2.0]), 0.0);
        let multi = QueryEmbedding {
            branches: vec![BoxEmb::point(vec![5.0, 0.0]), BoxEmb::point(vec![2.0, 0.0])],
        };
        assert_eq!(distance(&multi, &[0.0, 0.0]), 2.0);
        assert!((prob(4.0, 4.0) - 0.5).abs() < 1e-12);
        assert!(prob(1e6, 4.0) < 1e-12);
        let d = 3.7;
        assert!((1.0 - prob(d, 4.0) - sigmoid(d - 4.0)).abs() < 1e-12);
    }

    #[test]
    fn embed_1p_is_projection_of_anchor() {
        let (p, mut sym) = tiny_params(4, 5);
        let pq = parse_query_line(
            r#"{"id":"q","shape":"1p","atoms":[["a","r1","?x"]],"answer_var":"?x"}"#,
            &mut sym,
        )
        .unwrap();
        let e = embed_query(&p, &pq.query).unwrap();
        let a = embed_entity(&p, NodeId::Entity(sym.entity("a").unwrap()));
        let rel = sym.relation("r1").unwrap().0 as usize;
        let expect = project(&p, &a, rel);
        assert_eq!(e.branches.len(), 1);
        assert_eq!(e.branches[0], expect);
    }

    #[test]
    fn embed_2p_composes_projections() {
        let (p, mut sym) = tiny_params(4, 5);
        let pq = parse_query_line(
            r#"{"id":"q","shape":"2p","atoms":[["a","r1","?x"],["?x","r2","?y"]],"answer_var":"?y"}"#,
            &mut sym,
        )
        .unwrap();
        let e = embed_query(&p, &pq.query).unwrap();
        let a = embed_entity(&p, NodeId::Entity(sym.entity("a").unwrap()));
        let r1 = sym.relation("r1").unwrap().0 as usize;
        let r2 = sym.relation("r2").unwrap().0 as usize;
        let expect = project(&p, &project(&p, &a, r1), r2);
        assert_eq!(e.branches[0], expect);
    }

    #[test]
    fn embed_2u_has_two_branches() {
        let (p, mut sym) = tiny_params(4, 5);
        let pq = parse_query_line(
            r#"{"id":"q","shape":"2u","atoms":[["a","r1","?x"],["b","r2","?x"]],"answer_var":"?x"}"#,
            &mut sym,
        )
        .unwrap();
        let e = embed_query(&p, &pq.query).unwrap();
        assert_eq!(e.branches.len(), 2);
        let a = embed_entity(&p, NodeId::Entity(sym.entity("a").unwrap()));
        let r1 = sym.relation("r1").unwrap().0 as usize;
        assert_eq!(e.branches[0], project(&p, &a, r1));
    }

    #[test]
    fn backward_loss_basics() {
        let (p, mut sym) = tiny_params(4, 11);
        let pq = parse_query_line(
            r#"{"id":"q","shape":"2i","atoms":[["a","r1","?x"],["b","r2","?x"]],"answer_var":"?x"}"#,
            &mut sym,
        )
        .unwrap();
        let cq = compile(&p, &pq.query).unwrap();
        let item = LossItem {
            query: &cq,
            gens: &[],
            positive: sym.entity("v").unwrap(),
            negatives: &[sym.entity("w").unwrap()],
        };
        let (loss, grads) = backward(&p, &[item]).unwrap();
        assert!(loss.is_finite() && loss >= 0.0);
        // r3 is on no computation path; its gradient must be exactly zero
        let r3 = sym.relation("r3").unwrap().0 as usize;
        let d = p.d;
        assert!(grads.rel_center[r3 * d..(r3 + 1) * d].iter().all(|&g| g == 0.0));
        // entity c untouched
        let row_c = p.row(NodeId::Entity(sym.entity("c").unwrap()));
        assert!(grads.entity[row_c * d..(row_c + 1) * d].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn loss_at_margin_is_two_ln_two() {
        // d(v,q) = γ and d(v',q) = γ gives L = 2 ln 2
        let (mut p, mut sym) = tiny_params(1, 2);
        let pq = parse_query_line(
            r#"{"id":"q","shape":"1p","atoms":[["a","r1","?x"]],"answer_var":"?x"}"#,
            &mut sym,
        )
        .unwrap();
        let d = p.d;
        let row_a = p.row(NodeId::Entity(sym.entity("a").unwrap()));
        let row_v = p.row(NodeId::Entity(sym.entity("v").unwrap()));
        let row_w = p.row(NodeId::Entity(sym.entity("w").unwrap()));
        let r1 = sym.relation("r1").unwrap().0 as usize;
        p.entity[row_a * d] = 0.0;
        p.rel_center[r1 * d] = 0.0;
        p.entity[row_v * d] = p.gamma as f32;
        p.entity[row_w * d] = -(p.gamma as f32);
        let cq = compile(&p, &pq.query).unwrap();
        let item = LossItem {
            query: &cq,
            gens: &[],
            positive: sym.entity("v").unwrap(),
            negatives: &[sym.entity("w").unwrap()],
        };
        let loss = item_loss(&p, &item).unwrap();
        assert!((loss - 2.0 * (2.0f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn gens_normalization_matches_plain_when_gens_equal_query() {
        let (p, mut sym) = tiny_params(3, 8);
        let pq = parse_query_line(
            r#"{"id":"q","shape":"1p","atoms":[["a","r1","?x"]],"answer_var":"?x"}"#,
            &mut sym,
        )
        .unwrap();
        let cq = compile(&p, &pq.query).unwrap();
        let no_gens = LossItem {
            query: &cq,
            gens: &[],
            positive: sym.entity("v").unwrap(),
            negatives: &[sym.entity("w").unwrap()],
        };
        let dup = [cq.clone()];
        let with_dup = LossItem {
            query: &cq,
            gens: &dup,
            positive: sym.entity("v").unwrap(),
            negatives: &[sym.entity("w").unwrap()],
        };
        let a = item_loss(&p, &no_gens).unwrap();
        let b = item_loss(&p, &with_dup).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
