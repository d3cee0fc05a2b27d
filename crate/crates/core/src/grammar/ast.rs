//! Typed SemQL tree and its conversion to and from generic derivations.

use serde::{Deserialize, Serialize};

use super::rules::{self as r, RuleId};
use super::GrammarError;
use crate::schema::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SetOp {
    Intersect,
    Union,
    Except,
}

impl SetOp {
    pub fn keyword(self) -> &'static str {
        match self {
            SetOp::Intersect => "INTERSECT",
            SetOp::Union => "UNION",
            SetOp::Except => "EXCEPT",
        }
    }
}

/// A query optionally combined with a further statement by a set operator.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Statement {
    pub query: Query,
    pub set_op: Option<(SetOp, Box<Statement>)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub select: Select,
    pub from: From,
    pub filter: Option<Filter>,
    pub group_by: Option<GroupBy>,
    pub order_by: Option<Vec<OrderItem>>,
    pub limit: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Select {
    pub distinct: bool,
    pub items: Vec<AggExpr>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Agg {
    None,
    Max,
    Min,
    Count,
    Sum,
    Avg,
}

impl Agg {
    pub const ALL: [Agg; 6] = [Agg::None, Agg::Max, Agg::Min, Agg::Count, Agg::Sum, Agg::Avg];

    pub fn keyword(self) -> Option<&'static str> {
        match self {
            Agg::None => None,
            Agg::Max => Some("max"),
            Agg::Min => Some("min"),
            Agg::Count => Some("count"),
            Agg::Sum => Some("sum"),
            Agg::Avg => Some("avg"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArithOp {
    Minus,
    Plus,
    Times,
    Divide,
}

impl ArithOp {
    pub const ALL: [ArithOp; 4] = [ArithOp::Minus, ArithOp::Plus, ArithOp::Times, ArithOp::Divide];

    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Minus => "-",
            ArithOp::Plus => "+",
            ArithOp::Times => "*",
            ArithOp::Divide => "/",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueUnit {
    Column(NodeId),
    DistinctColumn(NodeId),
    Arith(ArithOp, NodeId, NodeId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AggExpr {
    pub agg: Agg,
    pub unit: ValueUnit,
}

impl AggExpr {
    pub fn column(col: NodeId) -> Self {
        Self {
            agg: Agg::None,
            unit: ValueUnit::Column(col),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum From {
    Tables { first: NodeId, joins: Vec<Join> },
    Subquery(Box<Statement>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Join {
    pub table: NodeId,
    pub on: Vec<(NodeId, NodeId)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
    Like,
    NotLike,
    In,
    NotIn,
}

impl CmpOp {
    pub const ALL: [CmpOp; 10] = [
        CmpOp::Eq,
        CmpOp::Ne,
        CmpOp::Lt,
        CmpOp::Gt,
        CmpOp::Le,
        CmpOp::Ge,
        CmpOp::Like,
        CmpOp::NotLike,
        CmpOp::In,
        CmpOp::NotIn,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
            CmpOp::Like => "LIKE",
            CmpOp::NotLike => "NOT LIKE",
            CmpOp::In => "IN",
            CmpOp::NotIn => "NOT IN",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Filter {
    Cmp {
        op: CmpOp,
        left: AggExpr,
        right: Operand,
    },
    Between {
        left: AggExpr,
        low: Operand,
        high: Operand,
    },
    And(Box<Filter>, Box<Filter>),
    Or(Box<Filter>, Box<Filter>),
    Not(Box<Filter>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Literal(String),
    Subquery(Box<Statement>),
    Column(NodeId),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupBy {
    pub columns: Vec<NodeId>,
    pub having: Option<Filter>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dir {
    Asc,
    Desc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrderItem {
    pub dir: Dir,
    pub expr: AggExpr,
}

/// Generic derivation: rule applications with terminal leaves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tree {
    Node { rule: RuleId, children: Vec<Tree> },
    Column(NodeId),
    Table(NodeId),
    Literal(String),
}

fn node(rule: RuleId, children: Vec<Tree>) -> Tree {
    Tree::Node { rule, children }
}

/// Right-recursive list encoding with a terminating rule for the final element.
fn cons_nonempty<T>(items: &[T], last: RuleId, more: RuleId, f: &impl Fn(&T) -> Tree) -> Tree {
    match items {
        [x] => node(last, vec![f(x)]),
        [x, rest @ ..] => node(more, vec![f(x), cons_nonempty(rest, last, more, f)]),
        [] => unreachable!("non-empty list required"),
    }
}

impl Statement {
    pub fn to_tree(&self) -> Tree {
        let q = self.query.to_tree();
        match &self.set_op {
            None => node(r::SINGLE, vec![q]),
            Some((op, rest)) => {
                let rule = match op {
                    SetOp::Intersect => r::INTERSECT,
                    SetOp::Union => r::UNION,
                    SetOp::Except => r::EXCEPT,
                };
                node(rule, vec![q, rest.to_tree()])
            }
        }
    }

    pub fn from_tree(tree: &Tree) -> Result<Self, GrammarError> {
        let (rule, ch) = expect_node(tree)?;
        let query = Query::from_tree(child(ch, 0)?)?;
        let set_op = match rule {
            r::SINGLE => None,
            r::INTERSECT | r::UNION | r::EXCEPT => {
                let op = match rule {
                    r::INTERSECT => SetOp::Intersect,
                    r::UNION => SetOp::Union,
                    _ => SetOp::Except,
                };
                Some((op, Box::new(Statement::from_tree(child(ch, 1)?)?)))
            }
            other => return Err(unexpected(other, "Statement")),
        };
        Ok(Statement { query, set_op })
    }

    /// Every query of the statement, including nested ones, in pre-order.
    pub fn queries(&self) -> Vec<&Query> {
        let mut out = Vec::new();
        self.collect_queries(&mut out);
        out
    }

    fn collect_queries<'a>(&'a self, out: &mut Vec<&'a Query>) {
        out.push(&self.query);
        self.query.visit_nested(&mut |s| s.collect_queries(out));
        if let Some((_, rest)) = &self.set_op {
            rest.collect_queries(out);
        }
    }
}

impl Query {
    fn to_tree(&self) -> Tree {
        let select = node(
            if self.select.distinct {
                r::SELECT_DISTINCT
            } else {
                r::SELECT_PLAIN
            },
            vec![cons_nonempty(&self.select.items, r::ITEMS_LAST, r::ITEMS_MORE, &AggExpr::to_tree)],
        );
        let from = match &self.from {
            From::Tables { first, joins } => {
                let mut rest = node(r::JOINS_END, vec![]);
                for j in joins.iter().rev() {
                    let mut on = node(r::ON_END, vec![]);
                    for &(a, b) in j.on.iter().rev() {
                        on = node(r::ON_MORE, vec![Tree::Column(a), Tree::Column(b), on]);
                    }
                    rest = node(r::JOINS_MORE, vec![Tree::Table(j.table), on, rest]);
                }
                node(r::FROM_TABLES, vec![Tree::Table(*first), rest])
            }
            From::Subquery(s) => node(r::FROM_SUBQUERY, vec![s.to_tree()]),
        };
        let filter = match &self.filter {
            None => node(r::WHERE_NONE, vec![]),
            Some(f) => node(r::WHERE_SOME, vec![f.to_tree()]),
        };
        let group = match &self.group_by {
            None => node(r::GROUP_NONE, vec![]),
            Some(g) => {
                let cols = cons_nonempty(&g.columns, r::GROUP_COLS_LAST, r::GROUP_COLS_MORE, &|c| Tree::Column(*c));
                let having = match &g.having {
                    None => node(r::HAVING_NONE, vec![]),
                    Some(f) => node(r::HAVING_SOME, vec![f.to_tree()]),
                };
                node(r::GROUP_SOME, vec![cols, having])
            }
        };
        let order = match &self.order_by {
            None => node(r::ORDER_NONE, vec![]),
            Some(items) => node(
                r::ORDER_SOME,
                vec![cons_nonempty(items, r::ORDER_ITEMS_LAST, r::ORDER_ITEMS_MORE, &|it: &OrderItem| {
                    let rule = match it.dir {
                        Dir::Asc => r::ORDER_ASC,
                        Dir::Desc => r::ORDER_DESC,
                    };
                    node(rule, vec![it.expr.to_tree()])
                })],
            ),
        };
        let limit = match &self.limit {
            None => node(r::LIMIT_NONE, vec![]),
            Some(v) => node(r::LIMIT_SOME, vec![Tree::Literal(v.clone())]),
        };
        node(r::QUERY, vec![select, from, filter, group, order, limit])
    }

    fn from_tree(tree: &Tree) -> Result<Self, GrammarError> {
        let ch = expect_rule(tree, r::QUERY)?;
        let (sel_rule, sel) = expect_node(child(ch, 0)?)?;
        let select = Select {
            distinct: sel_rule == r::SELECT_DISTINCT,
            items: list_from_tree(child(sel, 0)?, r::ITEMS_LAST, r::ITEMS_MORE, AggExpr::from_tree)?,
        };
        let (from_rule, fc) = expect_node(child(ch, 1)?)?;
        let from = match from_rule {
            r::FROM_TABLES => {
                let first = expect_table(child(fc, 0)?)?;
                let mut joins = Vec::new();
                let mut cur = child(fc, 1)?;
                loop {
                    let (rule, jc) = expect_node(cur)?;
                    if rule == r::JOINS_END {
                        break;
                    }
                    if rule != r::JOINS_MORE {
                        return Err(unexpected(rule, "Joins"));
                    }
                    let table = expect_table(child(jc, 0)?)?;
                    let mut on = Vec::new();
                    let mut oc = child(jc, 1)?;
                    loop {
                        let (rule, cc) = expect_node(oc)?;
                        if rule == r::ON_END {
                            break;
                        }
                        if rule != r::ON_MORE {
                            return Err(unexpected(rule, "OnConds"));
                        }
                        on.push((expect_column(child(cc, 0)?)?, expect_column(child(cc, 1)?)?));
                        oc = child(cc, 2)?;
                    }
                    joins.push(Join { table, on });
                    cur = child(jc, 2)?;
                }
                From::Tables { first, joins }
            }
            r::FROM_SUBQUERY => From::Subquery(Box::new(Statement::from_tree(child(fc, 0)?)?)),
            other => return Err(unexpected(other, "From")),
        };
        let (w_rule, wc) = expect_node(child(ch, 2)?)?;
        let filter = match w_rule {
            r::WHERE_NONE => None,
            r::WHERE_SOME => Some(Filter::from_tree(child(wc, 0)?)?),
            other => return Err(unexpected(other, "WhereOpt")),
        };
        let (g_rule, gc) = expect_node(child(ch, 3)?)?;
        let group_by = match g_rule {
            r::GROUP_NONE => None,
            r::GROUP_SOME => {
                let columns = list_from_tree(child(gc, 0)?, r::GROUP_COLS_LAST, r::GROUP_COLS_MORE, expect_column)?;
                let (h_rule, hc) = expect_node(child(gc, 1)?)?;
                let having = match h_rule {
                    r::HAVING_NONE => None,
                    r::HAVING_SOME => Some(Filter::from_tree(child(hc, 0)?)?),
                    other => return Err(unexpected(other, "HavingOpt")),
                };
                Some(GroupBy { columns, having })
            }
            other => return Err(unexpected(other, "GroupOpt")),
        };
        let (o_rule, oc) = expect_node(child(ch, 4)?)?;
        let order_by = match o_rule {
            r::ORDER_NONE => None,
            r::ORDER_SOME => Some(list_from_tree(
                child(oc, 0)?,
                r::ORDER_ITEMS_LAST,
                r::ORDER_ITEMS_MORE,
                |t| {
                    let (rule, ic) = expect_node(t)?;
                    let dir = match rule {
                        r::ORDER_ASC => Dir::Asc,
                        r::ORDER_DESC => Dir::Desc,
                        other => return Err(unexpected(other, "OrderItem")),
                    };
                    Ok(OrderItem {
                        dir,
                        expr: AggExpr::from_tree(child(ic, 0)?)?,
                    })
                },
            )?),
            other => return Err(unexpected(other, "OrderOpt")),
        };
        let (l_rule, lc) = expect_node(child(ch, 5)?)?;
        let limit = match l_rule {
            r::LIMIT_NONE => None,
            r::LIMIT_SOME => Some(expect_literal(child(lc, 0)?)?),
            other => return Err(unexpected(other, "LimitOpt")),
        };
        Ok(Query {
            select,
            from,
            filter,
            group_by,
            order_by,
            limit,
        })
    }

    /// Calls `f` on every statement nested directly in this query (FROM and
    /// filter subqueries), not descending further.
    pub fn visit_nested<'a>(&'a self, f: &mut impl FnMut(&'a Statement)) {
        if let From::Subquery(s) = &self.from {
            f(s);
        }
        if let Some(w) = &self.filter {
            w.visit_subqueries(f);
        }
        if let Some(GroupBy { having: Some(h), .. }) = &self.group_by {
            h.visit_subqueries(f);
        }
    }

    /// Tables listed in a plain FROM clause, in order.
    pub fn from_tables(&self) -> Vec<NodeId> {
        match &self.from {
            From::Tables { first, joins } => std::iter::once(*first).chain(joins.iter().map(|j| j.table)).collect(),
            From::Subquery(_) => Vec::new(),
        }
    }
}

impl AggExpr {
    fn to_tree(&self) -> Tree {
        let agg = Agg::ALL.iter().position(|a| *a == self.agg).unwrap();
        let unit = match self.unit {
            ValueUnit::Column(c) => node(RuleId(r::UNIT_BASE), vec![Tree::Column(c)]),
            ValueUnit::DistinctColumn(c) => node(RuleId(r::UNIT_BASE + 1), vec![Tree::Column(c)]),
            ValueUnit::Arith(op, a, b) => {
                let k = ArithOp::ALL.iter().position(|o| *o == op).unwrap();
                node(RuleId(r::UNIT_BASE + 2 + k), vec![Tree::Column(a), Tree::Column(b)])
            }
        };
        node(RuleId(r::AGG_BASE + agg), vec![unit])
    }

    fn from_tree(tree: &Tree) -> Result<Self, GrammarError> {
        let (rule, ch) = expect_node(tree)?;
        let agg = rule
            .0
            .checked_sub(r::AGG_BASE)
            .and_then(|i| Agg::ALL.get(i).copied())
            .ok_or_else(|| unexpected(rule, "AggExpr"))?;
        let (urule, uc) = expect_node(child(ch, 0)?)?;
        let unit = match urule.0.checked_sub(r::UNIT_BASE) {
            Some(0) => ValueUnit::Column(expect_column(child(uc, 0)?)?),
            Some(1) => ValueUnit::DistinctColumn(expect_column(child(uc, 0)?)?),
            Some(k @ 2..=5) => ValueUnit::Arith(
                ArithOp::ALL[k - 2],
                expect_column(child(uc, 0)?)?,
                expect_column(child(uc, 1)?)?,
            ),
            _ => return Err(unexpected(urule, "ValueUnit")),
        };
        Ok(AggExpr { agg, unit })
    }
}

impl Filter {
    fn to_tree(&self) -> Tree {
        match self {
            Filter::Cmp { op, left, right } => {
                let k = CmpOp::ALL.iter().position(|o| o == op).unwrap();
                node(RuleId(r::CMP_BASE + k), vec![left.to_tree(), right.to_tree()])
            }
            Filter::Between { left, low, high } => {
                node(r::BETWEEN, vec![left.to_tree(), low.to_tree(), high.to_tree()])
            }
            Filter::And(a, b) => node(r::AND, vec![a.to_tree(), b.to_tree()]),
            Filter::Or(a, b) => node(r::OR, vec![a.to_tree(), b.to_tree()]),
            Filter::Not(a) => node(r::NOT, vec![a.to_tree()]),
        }
    }

    fn from_tree(tree: &Tree) -> Result<Self, GrammarError> {
        let (rule, ch) = expect_node(tree)?;
        let sub = |i: usize| -> Result<Box<Filter>, GrammarError> { Ok(Box::new(Filter::from_tree(child(ch, i)?)?)) };
        Ok(match rule {
            r::BETWEEN => Filter::Between {
                left: AggExpr::from_tree(child(ch, 0)?)?,
                low: Operand::from_tree(child(ch, 1)?)?,
                high: Operand::from_tree(child(ch, 2)?)?,
            },
            r::AND => Filter::And(sub(0)?, sub(1)?),
            r::OR => Filter::Or(sub(0)?, sub(1)?),
            r::NOT => Filter::Not(sub(0)?),
            RuleId(k) if (r::CMP_BASE..r::CMP_BASE + CmpOp::ALL.len()).contains(&k) => Filter::Cmp {
                op: CmpOp::ALL[k - r::CMP_BASE],
                left: AggExpr::from_tree(child(ch, 0)?)?,
                right: Operand::from_tree(child(ch, 1)?)?,
            },
            other => return Err(unexpected(other, "Filter")),
        })
    }

    pub fn visit_subqueries<'a>(&'a self, f: &mut impl FnMut(&'a Statement)) {
        match self {
            Filter::Cmp { right, .. } => right.visit_subquery(f),
            Filter::Between { low, high, .. } => {
                low.visit_subquery(f);
                high.visit_subquery(f);
            }
            Filter::And(a, b) | Filter::Or(a, b) => {
                a.visit_subqueries(f);
                b.visit_subqueries(f);
            }
            Filter::Not(a) => a.visit_subqueries(f),
        }
    }
}

impl Operand {
    fn to_tree(&self) -> Tree {
        match self {
            Operand::Literal(v) => node(r::OPERAND_LITERAL, vec![Tree::Literal(v.clone())]),
            Operand::Subquery(s) => node(r::OPERAND_SUBQUERY, vec![s.to_tree()]),
            Operand::Column(c) => node(r::OPERAND_COLUMN, vec![Tree::Column(*c)]),
        }
    }

    fn from_tree(tree: &Tree) -> Result<Self, GrammarError> {
        let (rule, ch) = expect_node(tree)?;
        Ok(match rule {
            r::OPERAND_LITERAL => Operand::Literal(expect_literal(child(ch, 0)?)?),
            r::OPERAND_SUBQUERY => Operand::Subquery(Box::new(Statement::from_tree(child(ch, 0)?)?)),
            r::OPERAND_COLUMN => Operand::Column(expect_column(child(ch, 0)?)?),
            other => return Err(unexpected(other, "Operand")),
        })
    }

    fn visit_subquery<'a>(&'a self, f: &mut impl FnMut(&'a Statement)) {
        if let Operand::Subquery(s) = self {
            f(s);
        }
    }
}

fn list_from_tree<T>(
    tree: &Tree,
    last: RuleId,
    more: RuleId,
    f: impl Fn(&Tree) -> Result<T, GrammarError>,
) -> Result<Vec<T>, GrammarError> {
    let mut out = Vec::new();
    let mut cur = tree;
    loop {
        let (rule, ch) = expect_node(cur)?;
        out.push(f(child(ch, 0)?)?);
        if rule == last {
            return Ok(out);
        }
        if rule != more {
            return Err(unexpected(rule, "list"));
        }
        cur = child(ch, 1)?;
    }
}

fn expect_node(tree: &Tree) -> Result<(RuleId, &[Tree]), GrammarError> {
    match tree {
        Tree::Node { rule, children } => Ok((*rule, children)),
        other => Err(GrammarError::GrammarViolation {
            position: None,
            msg: format!("expected a rule application, found {other:?}"),
        }),
    }
}

fn expect_rule(tree: &Tree, rule: RuleId) -> Result<&[Tree], GrammarError> {
    let (got, ch) = expect_node(tree)?;
    if got != rule {
        return Err(unexpected(got, r::get(rule).name));
    }
    Ok(ch)
}

fn child(ch: &[Tree], i: usize) -> Result<&Tree, GrammarError> {
    ch.get(i).ok_or(GrammarError::IncompleteSequence)
}

fn expect_column(tree: &Tree) -> Result<NodeId, GrammarError> {
    match tree {
        Tree::Column(c) => Ok(*c),
        other => Err(GrammarError::GrammarViolation {
            position: None,
            msg: format!("expected a column, found {other:?}"),
        }),
    }
}

fn expect_table(tree: &Tree) -> Result<NodeId, GrammarError> {
    match tree {
        Tree::Table(t) => Ok(*t),
        other => Err(GrammarError::GrammarViolation {
            position: None,
            msg: format!("expected a table, found {other:?}"),
        }),
    }
}

fn expect_literal(tree: &Tree) -> Result<String, GrammarError> {
    match tree {
        Tree::Literal(v) => Ok(v.clone()),
        other => Err(GrammarError::GrammarViolation {
            position: None,
            msg: format!("expected a literal, found {other:?}"),
        }),
    }
}

fn unexpected(rule: RuleId, context: &str) -> GrammarError {
    GrammarError::GrammarViolation {
        position: None,
        msg: format!("rule {} not valid for {context}", r::get(rule).name),
    }
}
