//! Ranking-based evaluation: HITS@K and MRR over hard answers, per-shape
//! breakdowns, and the rewriting-plus-plain-model baseline.
//!
//! Filtered ranking: every known answer of the case's target graph (easy ∪
//! hard) is excluded from the candidate pool. Ties count against the answer,
//! which is order-independent and conservative.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::kg::{EntityId, NodeId, SymbolTable};
use crate::model::{distance, embed_query, Parameters, QueryEmbedding};
use crate::ontology::Ontology;
use crate::query::{shape_of, Shape};
use crate::rewrite::{rew, Depth};
use crate::sampler::{EvalCase, EvalSample};

#[derive(Debug, Clone)]
pub struct RankRecord {
    pub query_id: String,
    pub answer: EntityId,
    pub rank: usize,
    pub case: EvalCase,
    pub shape: Shape,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricsRow {
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub mrr: f64,
    pub count: usize,
}

/// Per (case, shape) metrics plus per-case aggregates, macro-averaged over
/// hard answers.
#[derive(Debug, Clone, Default)]
pub struct MetricsTable {
    sums: BTreeMap<(String, String), MetricsRow>,
}

impl MetricsTable {
    pub fn from_records(records: &[RankRecord]) -> MetricsTable {
        let mut table = MetricsTable::default();
        for r in records {
            for key in [
                (r.case.as_str().to_string(), r.shape.as_str().to_string()),
                (r.case.as_str().to_string(), "all".to_string()),
            ] {
                let row = table.sums.entry(key).or_default();
                row.hits1 += f64::from(r.rank <= 1);
                row.hits3 += f64::from(r.rank <= 3);
                row.hits10 += f64::from(r.rank <= 10);
                row.mrr += 1.0 / r.rank as f64;
                row.count += 1;
            }
        }
        table
    }

    pub fn get(&self, case: &str, shape: &str) -> Option<MetricsRow> {
        self.sums.get(&(case.to_string(), shape.to_string())).map(|row| {
            let n = row.count.max(1) as f64;
            MetricsRow {
                hits1: row.hits1 / n,
                hits3: row.hits3 / n,
                hits10: row.hits10 / n,
                mrr: row.mrr / n,
                count: row.count,
            }
        })
    }

    /// Aggregate across every case and shape in the table.
    pub fn overall(&self) -> MetricsRow {
        let mut total = MetricsRow::default();
        for ((_, shape), row) in &self.sums {
            if shape != "all" {
                continue;
            }
            total.hits1 += row.hits1;
            total.hits3 += row.hits3;
            total.hits10 += row.hits10;
            total.mrr += row.mrr;
            total.count += row.count;
        }
        let n = total.count.max(1) as f64;
        MetricsRow {
            hits1: total.hits1 / n,
            hits3: total.hits3 / n,
            hits10: total.hits10 / n,
            mrr: total.mrr / n,
            count: total.count,
        }
    }

    pub fn render_machine(&self) -> String {
        let mut out = String::from("# omqa metrics v1\n# averaging = per-hard-answer\n");
        for (case, shape) in self.sums.keys() {
            let row = self.get(case, shape).unwrap();
            out.push_str(&format!("case{case}.{shape}.hits1 = {:.4}\n", row.hits1));
            out.push_str(&format!("case{case}.{shape}.hits3 = {:.4}\n", row.hits3));
            out.push_str(&format!("case{case}.{shape}.hits10 = {:.4}\n", row.hits10));
            out.push_str(&format!("case{case}.{shape}.mrr = {:.4}\n", row.mrr));
            out.push_str(&format!("case{case}.{shape}.count = {}\n", row.count));
        }
        out
    }

    pub fn render_human(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "case.shape", "HITS@1", "HITS@3", "HITS@10", "MRR", "n"
        ));
        for (case, shape) in self.sums.keys() {
            let row = self.get(case, shape).unwrap();
            out.push_str(&format!(
                "{:<10} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8}\n",
                format!("{case}.{shape}"),
                row.hits1,
                row.hits3,
                row.hits10,
                row.mrr,
                row.count
            ));
        }
        out
    }
}

pub fn render_ranks_tsv(records: &[RankRecord], symbols: &SymbolTable) -> String {
    let mut out = String::from("query\tanswer\trank\tcase\tshape\n");
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.query_id,
            symbols.entity_name(r.answer),
            r.rank,
            r.case.as_str(),
            r.shape.as_str()
        ));
    }
    out
}

/// L1 distance from each entity point to its nearest branch center.
fn entity_distances(params: &Parameters, emb: &QueryEmbedding) -> Vec<f64> {
    let n = params.vocab.entities.len();
    let mut out = Vec::with_capacity(n);
    for e in 0..n as u32 {
        let point = params.point(params.row(NodeId::Entity(EntityId(e))));
        out.push(distance(emb, &point));
    }
    out
}

/// Pessimistic filtered rank of `a` among non-answer entities: one plus the
/// count of strictly closer candidates plus the count of exact ties.
/// Candidates are all entity indexes of `distances` outside `known`.
pub fn pessimistic_rank(distances: &[f64], a: EntityId, known: &BTreeSet<EntityId>) -> usize {
    let da = distances[a.0 as usize];
    let mut rank = 1;
    for (i, &d) in distances.iter().enumerate() {
        let e = EntityId(i as u32);
        if e == a || known.contains(&e) {
            continue;
        }
        if d <= da {
            rank += 1;
        }
    }
    rank
}

/// Rank one hard answer against the non-answer entities.
pub fn rank_answer(
    params: &Parameters,
    sample: &EvalSample,
    a: EntityId,
) -> Result<RankRecord> {
    if !sample.hard.contains(&a) {
        return Err(Error::Contract(format!(
            "entity {} is not a hard answer of {}",
            a.0, sample.id
        )));
    }
    let emb = embed_query(params, &sample.query)?;
    let distances = entity_distances(params, &emb);
    let known: BTreeSet<EntityId> = sample
        .easy
        .union(&sample.hard)
        .copied()
        .filter(|&e| e != a)
        .collect();
    Ok(RankRecord {
        query_id: sample.id.clone(),
        answer: a,
        rank: pessimistic_rank(&distances, a, &known),
        case: sample.case,
        shape: shape_of(&sample.query)
            .ok_or_else(|| Error::Query("eval query has unsupported shape".into()))?,
    })
}

/// Score every hard answer of every query with the trained model.
pub fn evaluate(
    params: &Parameters,
    eval_set: &[EvalSample],
) -> Result<(MetricsTable, Vec<RankRecord>)> {
    let mut records = Vec::new();
    for sample in eval_set {
        let shape = shape_of(&sample.query)
            .ok_or_else(|| Error::Query("eval query has unsupported shape".into()))?;
        let emb = embed_query(params, &sample.query)?;
        let distances = entity_distances(params, &emb);
        let full: BTreeSet<EntityId> = sample.easy.union(&sample.hard).copied().collect();
        for &a in &sample.hard {
            let known: BTreeSet<EntityId> =
                full.iter().copied().filter(|&e| e != a).collect();
            records.push(RankRecord {
                query_id: sample.id.clone(),
                answer: a,
                rank: pessimistic_rank(&distances, a, &known),
                case: sample.case,
                shape,
            });
        }
    }
    Ok((MetricsTable::from_records(&records), records))
}

/// Appendix baseline: evaluate with the minimum distance over all
/// shape-compliant rewritings of each query instead of the query alone.
pub fn evaluate_rewriting_baseline(
    params: &Parameters,
    eval_set: &[EvalSample],
    o: &Ontology,
    symbols: &SymbolTable,
) -> Result<(MetricsTable, Vec<RankRecord>)> {
    let mut records = Vec::new();
    for sample in eval_set {
        let shape = shape_of(&sample.query)
            .ok_or_else(|| Error::Query("eval query has unsupported shape".into()))?;
        let set = rew(&sample.query, o, symbols, &Shape::ALL, Depth::Fixpoint)?;
        let mut distances: Option<Vec<f64>> = None;
        for member in set.queries() {
            let emb = embed_query(params, member)?;
            let d = entity_distances(params, &emb);
            distances = Some(match distances {
                None => d,
                Some(prev) => prev
                    .into_iter()
                    .zip(d)
                    .map(|(a, b)| a.min(b))
                    .collect(),
            });
        }
        let distances = distances.expect("rewriting set contains the origin");
        let full: BTreeSet<EntityId> = sample.easy.union(&sample.hard).copied().collect();
        for &a in &sample.hard {
            let known: BTreeSet<EntityId> =
                full.iter().copied().filter(|&e| e != a).collect();
            records.push(RankRecord {
                query_id: sample.id.clone(),
                answer: a,
                rank: pessimistic_rank(&distances, a, &known),
                case: sample.case,
                shape,
            });
        }
    }
    Ok((MetricsTable::from_records(&records), records))
}
