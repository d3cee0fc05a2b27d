//! The production table.
//!
//! Every SQL keyword of the supported subset has its own rule, so a
//! derivation determines its SQL text up to alias naming. Lists are
//! right-recursive cons cells ending in a `Last` (non-empty) or `End`
//! (possibly empty) rule.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Non-terminal kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Kind {
    Statement,
    Query,
    Select,
    SelectItems,
    AggExpr,
    ValueUnit,
    From,
    Joins,
    OnConds,
    WhereOpt,
    Filter,
    Operand,
    GroupOpt,
    GroupCols,
    HavingOpt,
    OrderOpt,
    OrderItems,
    OrderItem,
    LimitOpt,
}

impl Kind {
    pub const ALL: [Kind; 19] = [
        Kind::Statement,
        Kind::Query,
        Kind::Select,
        Kind::SelectItems,
        Kind::AggExpr,
        Kind::ValueUnit,
        Kind::From,
        Kind::Joins,
        Kind::OnConds,
        Kind::WhereOpt,
        Kind::Filter,
        Kind::Operand,
        Kind::GroupOpt,
        Kind::GroupCols,
        Kind::HavingOpt,
        Kind::OrderOpt,
        Kind::OrderItems,
        Kind::OrderItem,
        Kind::LimitOpt,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A child position of a rule: a non-terminal or a terminal pointer slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Slot {
    Kind(Kind),
    Column,
    Table,
    Literal,
}

impl Slot {
    /// Index over non-terminal kinds followed by the three terminal slots.
    pub fn index(self) -> usize {
        match self {
            Slot::Kind(k) => k.index(),
            Slot::Column => Kind::ALL.len(),
            Slot::Table => Kind::ALL.len() + 1,
            Slot::Literal => Kind::ALL.len() + 2,
        }
    }

    pub const COUNT: usize = Kind::ALL.len() + 3;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RuleId(pub usize);

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", RULES[self.0].name)
    }
}

#[derive(Debug)]
pub struct Rule {
    pub head: Kind,
    pub name: &'static str,
    pub children: &'static [Slot],
}

use Kind as K;
use Slot::{Column as C, Kind as N, Literal as L, Table as T};

const fn rule(head: Kind, name: &'static str, children: &'static [Slot]) -> Rule {
    Rule { head, name, children }
}

pub const SINGLE: RuleId = RuleId(0);
pub const INTERSECT: RuleId = RuleId(1);
pub const UNION: RuleId = RuleId(2);
pub const EXCEPT: RuleId = RuleId(3);
pub const QUERY: RuleId = RuleId(4);
pub const SELECT_PLAIN: RuleId = RuleId(5);
pub const SELECT_DISTINCT: RuleId = RuleId(6);
pub const ITEMS_LAST: RuleId = RuleId(7);
pub const ITEMS_MORE: RuleId = RuleId(8);
/// First of the six aggregation rules, in [`super::Agg`] order.
pub const AGG_BASE: usize = 9;
/// First of the six value-unit rules: column, distinct column, - + * /.
pub const UNIT_BASE: usize = 15;
pub const FROM_TABLES: RuleId = RuleId(21);
pub const FROM_SUBQUERY: RuleId = RuleId(22);
pub const JOINS_END: RuleId = RuleId(23);
pub const JOINS_MORE: RuleId = RuleId(24);
pub const ON_END: RuleId = RuleId(25);
pub const ON_MORE: RuleId = RuleId(26);
pub const WHERE_NONE: RuleId = RuleId(27);
pub const WHERE_SOME: RuleId = RuleId(28);
/// First of the ten comparison rules, in [`super::CmpOp`] order.
pub const CMP_BASE: usize = 29;
pub const BETWEEN: RuleId = RuleId(39);
pub const AND: RuleId = RuleId(40);
pub const OR: RuleId = RuleId(41);
pub const NOT: RuleId = RuleId(42);
pub const OPERAND_LITERAL: RuleId = RuleId(43);
pub const OPERAND_SUBQUERY: RuleId = RuleId(44);
pub const OPERAND_COLUMN: RuleId = RuleId(45);
pub const GROUP_NONE: RuleId = RuleId(46);
pub const GROUP_SOME: RuleId = RuleId(47);
pub const GROUP_COLS_LAST: RuleId = RuleId(48);
pub const GROUP_COLS_MORE: RuleId = RuleId(49);
pub const HAVING_NONE: RuleId = RuleId(50);
pub const HAVING_SOME: RuleId = RuleId(51);
pub const ORDER_NONE: RuleId = RuleId(52);
pub const ORDER_SOME: RuleId = RuleId(53);
pub const ORDER_ITEMS_LAST: RuleId = RuleId(54);
pub const ORDER_ITEMS_MORE: RuleId = RuleId(55);
pub const ORDER_ASC: RuleId = RuleId(56);
pub const ORDER_DESC: RuleId = RuleId(57);
pub const LIMIT_NONE: RuleId = RuleId(58);
pub const LIMIT_SOME: RuleId = RuleId(59);

pub static RULES: [Rule; 60] = [
    rule(K::Statement, "Statement.Single", &[N(K::Query)]),
    rule(K::Statement, "Statement.Intersect", &[N(K::Query), N(K::Statement)]),
    rule(K::Statement, "Statement.Union", &[N(K::Query), N(K::Statement)]),
    rule(K::Statement, "Statement.Except", &[N(K::Query), N(K::Statement)]),
    rule(
        K::Query,
        "Query",
        &[
            N(K::Select),
            N(K::From),
            N(K::WhereOpt),
            N(K::GroupOpt),
            N(K::OrderOpt),
            N(K::LimitOpt),
        ],
    ),
    rule(K::Select, "Select.Plain", &[N(K::SelectItems)]),
    rule(K::Select, "Select.Distinct", &[N(K::SelectItems)]),
    rule(K::SelectItems, "SelectItems.Last", &[N(K::AggExpr)]),
    rule(K::SelectItems, "SelectItems.More", &[N(K::AggExpr), N(K::SelectItems)]),
    rule(K::AggExpr, "AggExpr.None", &[N(K::ValueUnit)]),
    rule(K::AggExpr, "AggExpr.Max", &[N(K::ValueUnit)]),
    rule(K::AggExpr, "AggExpr.Min", &[N(K::ValueUnit)]),
    rule(K::AggExpr, "AggExpr.Count", &[N(K::ValueUnit)]),
    rule(K::AggExpr, "AggExpr.Sum", &[N(K::ValueUnit)]),
    rule(K::AggExpr, "AggExpr.Avg", &[N(K::ValueUnit)]),
    rule(K::ValueUnit, "ValueUnit.Column", &[C]),
    rule(K::ValueUnit, "ValueUnit.DistinctColumn", &[C]),
    rule(K::ValueUnit, "ValueUnit.Minus", &[C, C]),
    rule(K::ValueUnit, "ValueUnit.Plus", &[C, C]),
    rule(K::ValueUnit, "ValueUnit.Times", &[C, C]),
    rule(K::ValueUnit, "ValueUnit.Divide", &[C, C]),
    rule(K::From, "From.Tables", &[T, N(K::Joins)]),
    rule(K::From, "From.Subquery", &[N(K::Statement)]),
    rule(K::Joins, "Joins.End", &[]),
    rule(K::Joins, "Joins.Join", &[T, N(K::OnConds), N(K::Joins)]),
    rule(K::OnConds, "OnConds.End", &[]),
    rule(K::OnConds, "OnConds.Eq", &[C, C, N(K::OnConds)]),
    rule(K::WhereOpt, "Where.None", &[]),
    rule(K::WhereOpt, "Where.Some", &[N(K::Filter)]),
    rule(K::Filter, "Filter.Eq", &[N(K::AggExpr), N(K::Operand)]),
    rule(K::Filter, "Filter.Ne", &[N(K::AggExpr), N(K::Operand)]),
    rule(K::Filter, "Filter.Lt", &[N(K::AggExpr), N(K::Operand)]),
    rule(K::Filter, "Filter.Gt", &[N(K::AggExpr), N(K::Operand)]),
    rule(K::Filter, "Filter.Le", &[N(K::AggExpr), N(K::Operand)]),
    rule(K::Filter, "Filter.Ge", &[N(K::AggExpr), N(K::Operand)]),
    rule(K::Filter, "Filter.Like", &[N(K::AggExpr), N(K::Operand)]),
    rule(K::Filter, "Filter.NotLike", &[N(K::AggExpr), N(K::Operand)]),
    rule(K::Filter, "Filter.In", &[N(K::AggExpr), N(K::Operand)]),
    rule(K::Filter, "Filter.NotIn", &[N(K::AggExpr), N(K::Operand)]),
    rule(K::Filter, "Filter.Between", &[N(K::AggExpr), N(K::Operand), N(K::Operand)]),
    rule(K::Filter, "Filter.And", &[N(K::Filter), N(K::Filter)]),
    rule(K::Filter, "Filter.Or", &[N(K::Filter), N(K::Filter)]),
    rule(K::Filter, "Filter.Not", &[N(K::Filter)]),
    rule(K::Operand, "Operand.Literal", &[L]),
    rule(K::Operand, "Operand.Subquery", &[N(K::Statement)]),
    rule(K::Operand, "Operand.Column", &[C]),
    rule(K::GroupOpt, "GroupBy.None", &[]),
    rule(K::GroupOpt, "GroupBy.Some", &[N(K::GroupCols), N(K::HavingOpt)]),
    rule(K::GroupCols, "GroupCols.Last", &[C]),
    rule(K::GroupCols, "GroupCols.More", &[C, N(K::GroupCols)]),
    rule(K::HavingOpt, "Having.None", &[]),
    rule(K::HavingOpt, "Having.Some", &[N(K::Filter)]),
    rule(K::OrderOpt, "OrderBy.None", &[]),
    rule(K::OrderOpt, "OrderBy.Some", &[N(K::OrderItems)]),
    rule(K::OrderItems, "OrderItems.Last", &[N(K::OrderItem)]),
    rule(K::OrderItems, "OrderItems.More", &[N(K::OrderItem), N(K::OrderItems)]),
    rule(K::OrderItem, "OrderItem.Asc", &[N(K::AggExpr)]),
    rule(K::OrderItem, "OrderItem.Desc", &[N(K::AggExpr)]),
    rule(K::LimitOpt, "Limit.None", &[]),
    rule(K::LimitOpt, "Limit.Some", &[L]),
];

pub fn rule_count() -> usize {
    RULES.len()
}

pub fn get(id: RuleId) -> &'static Rule {
    &RULES[id.0]
}

/// Rules whose head is `kind`, in id order.
pub fn rules_for(kind: Kind) -> impl Iterator<Item = RuleId> {
    RULES
        .iter()
        .enumerate()
        .filter(move |(_, r)| r.head == kind)
        .map(|(i, _)| RuleId(i))
}

/// Shortest number of actions that completes each slot type.
pub fn min_slot_lengths() -> [usize; Slot::COUNT] {
    let mut best = [usize::MAX; Slot::COUNT];
    best[Slot::Column.index()] = 1;
    best[Slot::Table.index()] = 1;
    best[Slot::Literal.index()] = 1;
    loop {
        let mut changed = false;
        for r in RULES.iter() {
            let mut total = 1usize;
            for c in r.children {
                total = total.saturating_add(best[c.index()]);
            }
            let head = Slot::Kind(r.head).index();
            if total < best[head] {
                best[head] = total;
                changed = true;
            }
        }
        if !changed {
            return best;
        }
    }
}

/// Shortest completion of a derivation that starts by applying `rule`.
pub fn min_rule_length(rule: RuleId, slot_lengths: &[usize; Slot::COUNT]) -> usize {
    1 + get(rule)
        .children
        .iter()
        .map(|c| slot_lengths[c.index()])
        .sum::<usize>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_ids_match_table() {
        assert_eq!(get(QUERY).head, Kind::Query);
        assert_eq!(get(RuleId(AGG_BASE)).name, "AggExpr.None");
        assert_eq!(get(RuleId(AGG_BASE + 5)).name, "AggExpr.Avg");
        assert_eq!(get(RuleId(UNIT_BASE)).name, "ValueUnit.Column");
        assert_eq!(get(RuleId(CMP_BASE)).name, "Filter.Eq");
        assert_eq!(get(RuleId(CMP_BASE + 9)).name, "Filter.NotIn");
        assert_eq!(get(BETWEEN).name, "Filter.Between");
        assert_eq!(get(NOT).name, "Filter.Not");
        assert_eq!(get(OPERAND_COLUMN).name, "Operand.Column");
        assert_eq!(get(LIMIT_SOME).name, "Limit.Some");
    }

    #[test]
    fn every_kind_has_rules_and_finite_minimum() {
        let lens = min_slot_lengths();
        for k in Kind::ALL {
            assert!(rules_for(k).count() >= 1, "{k:?}");
            assert!(lens[Slot::Kind(k).index()] < 100, "{k:?}");
        }
        // Statement.Single Query Select.Plain Items.Last Agg.None Unit.Column col
        // From.Tables tab Joins.End Where.None Group.None Order.None Limit.None
        assert_eq!(lens[Slot::Kind(Kind::Statement).index()], 14);
    }
}
