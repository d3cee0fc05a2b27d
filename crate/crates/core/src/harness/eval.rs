use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Prepared;
use super::hardness::{flatten_filter, hardness, Hardness};
use super::model::Model;
use super::{HarnessError, Result};
use crate::grammar::{
    ast_to_sql, canonicalize, recovers, sql_to_ast, unflatten, Action, AggExpr, CmpOp, Filter, Operand, Statement,
};
use crate::schema::SchemaGraph;

/// Produces an action sequence for a prepared example.
pub trait Predictor: Sync {
    fn predict(&self, ex: &Prepared, graph: &SchemaGraph) -> Result<Vec<Action>>;
}

pub struct ModelPredictor<'a>(pub &'a Model);

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, ex: &Prepared, graph: &SchemaGraph) -> Result<Vec<Action>> {
        self.0.predict(ex, graph)
    }
}

/// Returns the gold actions; its exact match equals the recover rate.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, ex: &Prepared, _graph: &SchemaGraph) -> Result<Vec<Action>> {
        ex.gold
            .clone()
            .ok_or_else(|| HarnessError::Config(ex.gold_error.clone().unwrap_or_else(|| "no gold actions".into())))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub count: usize,
    pub correct: usize,
    pub exact_match: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub db_id: String,
    pub question: String,
    pub gold: String,
    pub predicted: Option<String>,
    pub error: Option<String>,
    pub hardness: Option<Hardness>,
    pub exact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub exact_match: f64,
    /// Share of gold queries that survive the SQL -> actions -> SQL round trip.
    pub recover_rate: f64,
    pub by_hardness: BTreeMap<String, Bucket>,
    /// Per-component accuracy over examples whose gold query parses.
    pub components: BTreeMap<String, f64>,
    pub predictions: Vec<PredictionRecord>,
}

const COMPONENTS: [&str; 10] = [
    "select",
    "select(no agg)",
    "where",
    "where(no op)",
    "group(no having)",
    "group",
    "order",
    "and/or",
    "iuen",
    "keywords",
];

struct Outcome {
    record: PredictionRecord,
    recovered: bool,
    components: Option<[bool; COMPONENTS.len()]>,
}

/// Evaluates `predictor` on `examples`. Exact match compares canonical SQL
/// (literals masked unless `value_sensitive`) and only counts when the gold
/// query itself round-trips.
pub fn evaluate(
    examples: &[Prepared],
    schemas: &HashMap<String, SchemaGraph>,
    predictor: &dyn Predictor,
    value_sensitive: bool,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(HarnessError::EmptyCorpus("evaluate"));
    }
    let outcomes: Vec<Outcome> = examples
        .par_iter()
        .map(|ex| {
            let graph = schemas
                .get(&ex.example.db_id)
                .ok_or_else(|| HarnessError::UnknownDatabase(ex.example.db_id.clone()))?;
            Ok(score_one(ex, graph, predictor, value_sensitive))
        })
        .collect::<Result<_>>()?;

    let total = outcomes.len();
    let mut by_hardness: BTreeMap<String, Bucket> = BTreeMap::new();
    let mut comp_hits = [0usize; COMPONENTS.len()];
    let mut comp_total = 0usize;
    let (mut exact, mut recovered) = (0, 0);
    for o in &outcomes {
        exact += usize::from(o.record.exact);
        recovered += usize::from(o.recovered);
        if let Some(h) = o.record.hardness {
            let b = by_hardness.entry(h.name().to_string()).or_default();
            b.count += 1;
            b.correct += usize::from(o.record.exact);
        }
        if let Some(c) = o.components {
            comp_total += 1;
            for (hit, ok) in comp_hits.iter_mut().zip(c) {
                *hit += usize::from(ok);
            }
        }
    }
    for b in by_hardness.values_mut() {
        b.exact_match = b.correct as f64 / b.count as f64;
    }
    let components = COMPONENTS
        .iter()
        .zip(comp_hits)
        .map(|(name, hits)| {
            let acc = if comp_total == 0 { 0.0 } else { hits as f64 / comp_total as f64 };
            (name.to_string(), acc)
        })
        .collect();
    Ok(EvalReport {
        total,
        exact_match: exact as f64 / total as f64,
        recover_rate: recovered as f64 / total as f64,
        by_hardness,
        components,
        predictions: outcomes.into_iter().map(|o| o.record).collect(),
    })
}

fn score_one(ex: &Prepared, graph: &SchemaGraph, predictor: &dyn Predictor, value_sensitive: bool) -> Outcome {
    let gold_sql = &ex.example.query;
    let gold_ast = sql_to_ast(gold_sql, graph).ok();
    let recovered = recovers(gold_sql, graph).unwrap_or(false);
    let mut record = PredictionRecord {
        db_id: ex.example.db_id.clone(),
        question: ex.example.question.clone(),
        gold: gold_sql.clone(),
        predicted: None,
        error: None,
        hardness: gold_ast.as_ref().map(hardness),
        exact: false,
    };
    let predicted = predictor
        .predict(ex, graph)
        .and_then(|actions| Ok(unflatten(&actions)?))
        .and_then(|ast| Ok((ast_to_sql(&ast, graph)?, ast)));
    let (sql, ast) = match predicted {
        Ok(p) => p,
        Err(e) => {
            record.error = Some(e.to_string());
            return Outcome {
                record,
                recovered,
                components: gold_ast.map(|_| [false; COMPONENTS.len()]),
            };
        }
    };
    let mask = !value_sensitive;
    record.exact = recovered
        && match (canonicalize(&sql, graph, mask), canonicalize(gold_sql, graph, mask)) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        };
    record.predicted = Some(sql);
    let components = gold_ast.map(|gold| component_matches(&ast, &gold, mask));
    Outcome {
        record,
        recovered,
        components,
    }
}

fn operand_key(o: &Operand, mask: bool) -> String {
    match o {
        Operand::Literal(_) if mask => "value".into(),
        Operand::Literal(v) => v.to_lowercase(),
        Operand::Column(c) => format!("col{}", c.0),
        Operand::Subquery(s) => format!("({})", statement_key(s, mask)),
    }
}

fn statement_key(s: &Statement, mask: bool) -> String {
    if !mask {
        return format!("{s:?}");
    }
    let mut masked = s.clone();
    mask_statement(&mut masked);
    format!("{masked:?}")
}

fn mask_statement(s: &mut Statement) {
    fn mask_filter(f: &mut Filter) {
        let op = |o: &mut Operand| match o {
            Operand::Literal(v) => *v = "value".into(),
            Operand::Subquery(s) => mask_statement(s),
            Operand::Column(_) => {}
        };
        match f {
            Filter::Cmp { right, .. } => op(right),
            Filter::Between { low, high, .. } => {
                op(low);
                op(high);
            }
            Filter::And(a, b) | Filter::Or(a, b) => {
                mask_filter(a);
                mask_filter(b);
            }
            Filter::Not(a) => mask_filter(a),
        }
    }
    if let Some(f) = &mut s.query.filter {
        mask_filter(f);
    }
    if let Some(h) = s.query.group_by.as_mut().and_then(|g| g.having.as_mut()) {
        mask_filter(h);
    }
    if let crate::grammar::From::Subquery(sub) = &mut s.query.from {
        mask_statement(sub);
    }
    if let Some((_, rest)) = &mut s.set_op {
        mask_statement(rest);
    }
}

fn sorted<T: Ord>(mut v: Vec<T>) -> Vec<T> {
    v.sort();
    v
}

fn unit_key(e: &AggExpr, with_agg: bool) -> String {
    if with_agg {
        format!("{:?}:{:?}", e.agg, e.unit)
    } else {
        format!("{:?}", e.unit)
    }
}

fn leaf_keys(f: Option<&Filter>, with_op: bool, mask: bool) -> Vec<String> {
    let (mut leaves, mut ors) = (Vec::new(), Vec::new());
    if let Some(f) = f {
        flatten_filter(f, false, &mut leaves, &mut ors);
    }
    sorted(
        leaves
            .iter()
            .map(|l| {
                let (op, left, rest) = match l.filter {
                    Filter::Cmp { op, left, right } => (format!("{op:?}"), left, operand_key(right, mask)),
                    Filter::Between { left, low, high } => (
                        "Between".to_string(),
                        left,
                        format!("{},{}", operand_key(low, mask), operand_key(high, mask)),
                    ),
                    _ => unreachable!("flatten_filter yields leaves only"),
                };
                let left = unit_key(left, true);
                if with_op {
                    format!("{}{op} {left} {rest}", if l.negated { "not " } else { "" })
                } else {
                    format!("{left} {rest}")
                }
            })
            .collect(),
    )
}

fn connectors(f: Option<&Filter>) -> Vec<bool> {
    let (mut leaves, mut ors) = (Vec::new(), Vec::new());
    if let Some(f) = f {
        flatten_filter(f, false, &mut leaves, &mut ors);
    }
    sorted(ors)
}

fn keywords(s: &Statement) -> Vec<&'static str> {
    let q = &s.query;
    let mut kw = Vec::new();
    let (mut leaves, mut ors) = (Vec::new(), Vec::new());
    if let Some(f) = &q.filter {
        kw.push("where");
        flatten_filter(f, false, &mut leaves, &mut ors);
    }
    if let Some(g) = &q.group_by {
        kw.push("group");
        if let Some(h) = &g.having {
            kw.push("having");
            flatten_filter(h, false, &mut leaves, &mut ors);
        }
    }
    if let Some(order) = &q.order_by {
        kw.push("order");
        for item in order {
            kw.push(match item.dir {
                crate::grammar::Dir::Asc => "asc",
                crate::grammar::Dir::Desc => "desc",
            });
        }
    }
    if q.limit.is_some() {
        kw.push("limit");
    }
    if let Some((op, _)) = &s.set_op {
        kw.push(op.keyword());
    }
    if q.select.distinct {
        kw.push("distinct");
    }
    if ors.iter().any(|&o| o) {
        kw.push("or");
    }
    for l in &leaves {
        if l.negated || matches!(l.filter, Filter::Cmp { op: CmpOp::NotIn | CmpOp::NotLike, .. }) {
            kw.push("not");
        }
        match l.filter {
            Filter::Cmp { op: CmpOp::In | CmpOp::NotIn, .. } => kw.push("in"),
            Filter::Cmp { op: CmpOp::Like | CmpOp::NotLike, .. } => kw.push("like"),
            _ => {}
        }
    }
    kw.sort_unstable();
    kw.dedup();
    kw
}

/// Per-component multiset equality between a predicted and a gold tree.
fn component_matches(pred: &Statement, gold: &Statement, mask: bool) -> [bool; COMPONENTS.len()] {
    let (p, g) = (&pred.query, &gold.query);
    let select = |q: &crate::grammar::Query, agg: bool| {
        (q.select.distinct, sorted(q.select.items.iter().map(|e| unit_key(e, agg)).collect::<Vec<_>>()))
    };
    let group_cols = |q: &crate::grammar::Query| {
        q.group_by.as_ref().map(|gb| sorted(gb.columns.iter().map(|c| c.0).collect::<Vec<_>>()))
    };
    let having = |q: &crate::grammar::Query| leaf_keys(q.group_by.as_ref().and_then(|gb| gb.having.as_ref()), true, mask);
    let order = |q: &crate::grammar::Query| {
        (
            q.order_by
                .as_ref()
                .map(|items| items.iter().map(|i| format!("{:?} {}", i.dir, unit_key(&i.expr, true))).collect::<Vec<_>>()),
            q.limit.is_some(),
        )
    };
    let iuen = |s: &Statement| s.set_op.as_ref().map(|(op, rest)| (*op, statement_key(rest, mask)));
    let and_or = |q: &crate::grammar::Query| {
        let mut c = connectors(q.filter.as_ref());
        c.extend(connectors(q.group_by.as_ref().and_then(|gb| gb.having.as_ref())));
        sorted(c)
    };
    [
        select(p, true) == select(g, true),
        select(p, false) == select(g, false),
        leaf_keys(p.filter.as_ref(), true, mask) == leaf_keys(g.filter.as_ref(), true, mask),
        leaf_keys(p.filter.as_ref(), false, mask) == leaf_keys(g.filter.as_ref(), false, mask),
        group_cols(p) == group_cols(g),
        group_cols(p) == group_cols(g) && having(p) == having(g),
        order(p) == order(g),
        and_or(p) == and_or(g),
        iuen(pred) == iuen(gold),
        keywords(pred) == keywords(gold),
    ]
}
