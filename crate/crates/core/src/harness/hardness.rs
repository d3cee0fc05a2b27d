//! Spider hardness levels, computed from the SemQL tree with the same
//! component counts as the reference evaluation script.

use serde::{Deserialize, Serialize};

use crate::grammar::{Agg, CmpOp, Filter, From, Operand, Statement};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hardness {
    Easy,
    Medium,
    Hard,
    ExtraHard,
}

impl Hardness {
    pub const ALL: [Hardness; 4] = [Hardness::Easy, Hardness::Medium, Hardness::Hard, Hardness::ExtraHard];

    pub fn name(self) -> &'static str {
        match self {
            Hardness::Easy => "easy",
            Hardness::Medium => "medium",
            Hardness::Hard => "hard",
            Hardness::ExtraHard => "extra-hard",
        }
    }
}

/// A comparison leaf of a filter with its negation flag.
pub(crate) struct Leaf<'a> {
    pub negated: bool,
    pub filter: &'a Filter,
}

/// Leaves and connectors (`true` for OR) in left-to-right order.
pub(crate) fn flatten_filter<'a>(f: &'a Filter, negated: bool, leaves: &mut Vec<Leaf<'a>>, ors: &mut Vec<bool>) {
    match f {
        Filter::And(a, b) | Filter::Or(a, b) => {
            flatten_filter(a, negated, leaves, ors);
            ors.push(matches!(f, Filter::Or(..)));
            flatten_filter(b, negated, leaves, ors);
        }
        Filter::Not(inner) => flatten_filter(inner, !negated, leaves, ors),
        leaf => leaves.push(Leaf { negated, filter: leaf }),
    }
}

fn is_like(leaf: &Leaf<'_>) -> bool {
    matches!(leaf.filter, Filter::Cmp { op: CmpOp::Like | CmpOp::NotLike, .. })
}

fn is_negated(leaf: &Leaf<'_>) -> bool {
    leaf.negated || matches!(leaf.filter, Filter::Cmp { op: CmpOp::NotLike | CmpOp::NotIn, .. })
}

fn nested_in(leaf: &Leaf<'_>) -> usize {
    let sub = |o: &Operand| usize::from(matches!(o, Operand::Subquery(_)));
    match leaf.filter {
        Filter::Cmp { right, .. } => sub(right),
        Filter::Between { low, high, .. } => sub(low) + sub(high),
        _ => 0,
    }
}

/// `(component1, component2, others)` counts.
pub fn components(s: &Statement) -> (usize, usize, usize) {
    let q = &s.query;
    let (mut where_leaves, mut where_ors) = (Vec::new(), Vec::new());
    if let Some(f) = &q.filter {
        flatten_filter(f, false, &mut where_leaves, &mut where_ors);
    }
    let (mut having_leaves, mut having_ors) = (Vec::new(), Vec::new());
    if let Some(h) = q.group_by.as_ref().and_then(|g| g.having.as_ref()) {
        flatten_filter(h, false, &mut having_leaves, &mut having_ors);
    }

    let mut c1 = 0;
    c1 += usize::from(q.filter.is_some());
    c1 += usize::from(q.group_by.is_some());
    c1 += usize::from(q.order_by.is_some());
    c1 += usize::from(q.limit.is_some());
    if let From::Tables { joins, .. } = &q.from {
        c1 += joins.len();
    }
    c1 += where_ors.iter().chain(&having_ors).filter(|&&or| or).count();
    c1 += where_leaves.iter().chain(&having_leaves).filter(|l| is_like(l)).count();

    let c2 = where_leaves.iter().chain(&having_leaves).map(nested_in).sum::<usize>() + usize::from(s.set_op.is_some());

    // The reference script's aggregate counter reads the first field of each
    // unit: the aggregate of a select item, but the negation flag of a WHERE
    // condition, and every HAVING entry including its connectors.
    let mut aggs = q.select.items.iter().filter(|e| e.agg != Agg::None).count();
    aggs += where_leaves.iter().filter(|l| is_negated(l)).count();
    if let Some(order) = &q.order_by {
        aggs += order.iter().filter(|o| o.expr.agg != Agg::None).count();
    }
    aggs += having_leaves.iter().filter(|l| is_negated(l)).count() + having_ors.len();
    let mut others = 0;
    others += usize::from(aggs > 1);
    others += usize::from(q.select.items.len() > 1);
    others += usize::from(where_leaves.len() > 1);
    others += usize::from(q.group_by.as_ref().is_some_and(|g| g.columns.len() > 1));
    (c1, c2, others)
}

pub fn hardness(s: &Statement) -> Hardness {
    let (c1, c2, others) = components(s);
    if c1 <= 1 && others == 0 && c2 == 0 {
        Hardness::Easy
    } else if (others <= 2 && c1 <= 1 && c2 == 0) || (c1 <= 2 && others < 2 && c2 == 0) {
        Hardness::Medium
    } else if (others > 2 && c1 <= 2 && c2 == 0) || (2 < c1 && c1 <= 3 && others <= 2 && c2 == 0) || (c1 <= 1 && others == 0 && c2 <= 1) {
        Hardness::Hard
    } else {
        Hardness::ExtraHard
    }
}
