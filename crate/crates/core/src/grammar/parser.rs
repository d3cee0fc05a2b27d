//! Recursive-descent SQL parser producing bound SemQL trees.

use super::ast::*;
use super::lexer::{lex, Tok};
use super::GrammarError;
use crate::schema::{NodeId, SchemaGraph};

/// Words that end a table reference instead of naming an alias.
const RESERVED: &[&str] = &[
    "where", "group", "order", "limit", "join", "on", "inner", "left", "right", "outer", "cross", "full", "natural",
    "union", "intersect", "except", "having", "as", "and", "or", "not", "select", "from", "using",
];

/// Parses `sql` and binds every identifier against `graph`.
pub fn sql_to_ast(sql: &str, graph: &SchemaGraph) -> Result<Statement, GrammarError> {
    let toks = lex(sql)?;
    let mut p = Parser {
        toks,
        pos: 0,
        graph,
        scopes: Vec::new(),
    };
    let stmt = p.statement()?;
    while p.eat(|t| *t == Tok::Semi) {}
    if p.pos != p.toks.len() {
        return Err(p.unexpected("end of query"));
    }
    Ok(stmt)
}

#[derive(Default)]
struct Scope {
    tables: Vec<usize>,
    aliases: Vec<(String, usize)>,
    /// FROM is a subquery: unqualified names resolve against the whole schema.
    derived: bool,
}

struct Parser<'g> {
    toks: Vec<Tok>,
    pos: usize,
    graph: &'g SchemaGraph,
    scopes: Vec<Scope>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k)
    }

    fn peek_word(&self, kw: &str) -> bool {
        self.peek().is_some_and(|t| t.is_word(kw))
    }

    fn eat(&mut self, f: impl Fn(&Tok) -> bool) -> bool {
        if self.peek().is_some_and(f) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, kw: &str) -> bool {
        self.eat(|t| t.is_word(kw))
    }

    fn expect_word(&mut self, kw: &str) -> Result<(), GrammarError> {
        if self.eat_word(kw) {
            Ok(())
        } else {
            Err(self.unexpected(kw))
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), GrammarError> {
        if self.eat(|t| *t == tok) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("{tok:?}")))
        }
    }

    fn unexpected(&self, wanted: &str) -> GrammarError {
        match self.peek() {
            Some(t) => GrammarError::Syntax(format!("expected {wanted} at token {}, found {t:?}", self.pos)),
            None => GrammarError::Syntax(format!("expected {wanted}, found end of query")),
        }
    }

    fn statement(&mut self) -> Result<Statement, GrammarError> {
        let query = self.query()?;
        let op = if self.eat_word("intersect") {
            Some(SetOp::Intersect)
        } else if self.eat_word("union") {
            if self.peek_word("all") {
                return Err(GrammarError::UnsupportedSql("UNION ALL".into()));
            }
            Some(SetOp::Union)
        } else if self.eat_word("except") {
            Some(SetOp::Except)
        } else {
            None
        };
        let set_op = match op {
            Some(op) => Some((op, Box::new(self.statement()?))),
            None => None,
        };
        Ok(Statement { query, set_op })
    }

    /// Position of this query's FROM keyword, scanning at paren depth 0.
    fn find_from(&self) -> Result<usize, GrammarError> {
        let mut depth = 0i32;
        for (i, t) in self.toks.iter().enumerate().skip(self.pos) {
            match t {
                Tok::LParen => depth += 1,
                Tok::RParen if depth == 0 => break,
                Tok::RParen => depth -= 1,
                t if depth == 0 && t.is_word("from") => return Ok(i),
                t if depth == 0 && ["union", "intersect", "except"].iter().any(|k| t.is_word(k)) => break,
                _ => {}
            }
        }
        Err(GrammarError::UnsupportedSql("SELECT without FROM".into()))
    }

    fn query(&mut self) -> Result<Query, GrammarError> {
        self.expect_word("select")?;
        let select_start = self.pos;
        let from_pos = self.find_from()?;
        self.pos = from_pos + 1;
        let from = self.from_clause()?;
        let after_from = self.pos;

        self.pos = select_start;
        let distinct = self.eat_word("distinct");
        let mut items = vec![self.agg_expr()?];
        while self.eat(|t| *t == Tok::Comma) {
            items.push(self.agg_expr()?);
        }
        if self.pos != from_pos {
            let result = if self.peek_word("as") {
                Err(GrammarError::UnsupportedSql("SELECT alias".into()))
            } else {
                Err(self.unexpected("FROM"))
            };
            self.scopes.pop();
            return result;
        }
        self.pos = after_from;
        let rest = self.query_tail();
        self.scopes.pop();
        let (filter, group_by, order_by, limit) = rest?;
        Ok(Query {
            select: Select { distinct, items },
            from,
            filter,
            group_by,
            order_by,
            limit,
        })
    }

    #[allow(clippy::type_complexity)]
    fn query_tail(
        &mut self,
    ) -> Result<(Option<Filter>, Option<GroupBy>, Option<Vec<OrderItem>>, Option<String>), GrammarError> {
        let filter = if self.eat_word("where") {
            Some(self.filter()?)
        } else {
            None
        };
        let group_by = if self.eat_word("group") {
            self.expect_word("by")?;
            let mut columns = vec![self.column_ref()?];
            while self.eat(|t| *t == Tok::Comma) {
                columns.push(self.column_ref()?);
            }
            let having = if self.eat_word("having") {
                Some(self.filter()?)
            } else {
                None
            };
            Some(GroupBy { columns, having })
        } else {
            None
        };
        if self.peek_word("having") {
            return Err(GrammarError::UnsupportedSql("HAVING without GROUP BY".into()));
        }
        let order_by = if self.eat_word("order") {
            self.expect_word("by")?;
            let mut items = Vec::new();
            loop {
                let expr = self.agg_expr()?;
                let dir = if self.eat_word("desc") {
                    Dir::Desc
                } else {
                    self.eat_word("asc");
                    Dir::Asc
                };
                items.push(OrderItem { dir, expr });
                if !self.eat(|t| *t == Tok::Comma) {
                    break;
                }
            }
            Some(items)
        } else {
            None
        };
        let limit = if self.eat_word("limit") {
            match self.peek() {
                Some(Tok::Number(n)) => {
                    let n = n.clone();
                    self.pos += 1;
                    Some(n)
                }
                _ => return Err(self.unexpected("LIMIT number")),
            }
        } else {
            None
        };
        Ok((filter, group_by, order_by, limit))
    }

    /// Parses the FROM clause and pushes its scope.
    fn from_clause(&mut self) -> Result<From, GrammarError> {
        if self.peek() == Some(&Tok::LParen) && self.peek_at(1).is_some_and(|t| t.is_word("select")) {
            self.pos += 1;
            let sub = self.statement()?;
            self.expect(Tok::RParen)?;
            if self.eat_word("as") || self.peek().is_some_and(|t| self.is_alias(t)) {
                self.pos += 1;
            }
            if self.peek_word("join") || self.peek() == Some(&Tok::Comma) {
                return Err(GrammarError::UnsupportedSql("join with a derived table".into()));
            }
            self.scopes.push(Scope {
                derived: true,
                ..Scope::default()
            });
            return Ok(From::Subquery(Box::new(sub)));
        }
        self.scopes.push(Scope::default());
        let first = self.table_ref()?;
        let mut joins = Vec::new();
        loop {
            if self.peek() == Some(&Tok::Comma) {
                return Err(GrammarError::UnsupportedSql("comma join".into()));
            }
            for kw in ["left", "right", "outer", "cross", "full", "natural"] {
                if self.peek_word(kw) {
                    return Err(GrammarError::UnsupportedSql(format!("{} JOIN", kw.to_uppercase())));
                }
            }
            let inner = self.peek_word("inner") && self.peek_at(1).is_some_and(|t| t.is_word("join"));
            if inner {
                self.pos += 1;
            }
            if !self.eat_word("join") {
                break;
            }
            let table = self.table_ref()?;
            let on = if self.eat_word("on") {
                let mut conds = vec![self.join_condition()?];
                while self.peek_word("and") && self.is_join_condition_ahead() {
                    self.pos += 1;
                    conds.push(self.join_condition()?);
                }
                conds
            } else {
                self.implicit_join(table)
            };
            joins.push(Join { table, on });
        }
        Ok(From::Tables { first, joins })
    }

    fn is_join_condition_ahead(&self) -> bool {
        // `AND a.b = c.d` inside ON, as opposed to the start of WHERE.
        let mut k = 1;
        let mut cols = 0;
        while let Some(t) = self.peek_at(k) {
            match t {
                Tok::Word(_) | Tok::Dot => {}
                Tok::Eq => cols += 1,
                _ => break,
            }
            k += 1;
            if cols == 1 {
                return matches!(self.peek_at(k), Some(Tok::Word(_)));
            }
        }
        false
    }

    fn join_condition(&mut self) -> Result<(NodeId, NodeId), GrammarError> {
        let a = self.column_ref()?;
        self.expect(Tok::Eq)?;
        let b = self.column_ref()?;
        Ok((a, b))
    }

    /// Conditions for a JOIN written without ON, recovered from foreign keys
    /// to the earliest earlier table that shares one.
    fn implicit_join(&self, table: NodeId) -> Vec<(NodeId, NodeId)> {
        let g = self.graph;
        let scope = self.scopes.last().expect("scope pushed");
        for &prev in &scope.tables {
            if prev == table.0 {
                continue;
            }
            let fks = g.foreign_keys_between(prev, table.0);
            if !fks.is_empty() {
                return fks
                    .into_iter()
                    .map(|(a, b)| {
                        let (a, b) = if g.columns[a].table == Some(prev) { (a, b) } else { (b, a) };
                        (g.column_node(a), g.column_node(b))
                    })
                    .collect();
            }
        }
        Vec::new()
    }

    fn is_alias(&self, t: &Tok) -> bool {
        matches!(t, Tok::Word(w) if !RESERVED.iter().any(|k| w.eq_ignore_ascii_case(k)))
    }

    fn table_ref(&mut self) -> Result<NodeId, GrammarError> {
        let name = match self.peek() {
            Some(Tok::Word(w)) => w.clone(),
            Some(Tok::LParen) => return Err(GrammarError::UnsupportedSql("joined subquery".into())),
            _ => return Err(self.unexpected("table name")),
        };
        self.pos += 1;
        let t = self
            .graph
            .find_table(&name)
            .ok_or_else(|| GrammarError::BindError(format!("unknown table {name} in {}", self.graph.db_id)))?;
        let alias = if self.eat_word("as") {
            match self.peek() {
                Some(Tok::Word(w)) => {
                    let w = w.clone();
                    self.pos += 1;
                    Some(w)
                }
                _ => return Err(self.unexpected("alias")),
            }
        } else if let Some(Tok::Word(w)) = self.peek().filter(|t| self.is_alias(t)) {
            let w = w.clone();
            self.pos += 1;
            Some(w)
        } else {
            None
        };
        let scope = self.scopes.last_mut().expect("scope pushed");
        if scope.tables.contains(&t) {
            return Err(GrammarError::UnsupportedSql("self join".into()));
        }
        scope.tables.push(t);
        if let Some(a) = alias {
            scope.aliases.push((a.to_lowercase(), t));
        }
        Ok(NodeId(t))
    }

    fn column_ref(&mut self) -> Result<NodeId, GrammarError> {
        match self.peek().cloned() {
            Some(Tok::Star) => {
                self.pos += 1;
                Ok(self.graph.star())
            }
            Some(Tok::Word(first)) => {
                self.pos += 1;
                if self.eat(|t| *t == Tok::Dot) {
                    match self.peek().cloned() {
                        Some(Tok::Word(col)) => {
                            self.pos += 1;
                            self.resolve(Some(&first), &col)
                        }
                        Some(Tok::Star) => {
                            self.pos += 1;
                            Ok(self.graph.star())
                        }
                        _ => Err(self.unexpected("column name")),
                    }
                } else {
                    self.resolve(None, &first)
                }
            }
            _ => Err(self.unexpected("column")),
        }
    }

    fn resolve(&self, qualifier: Option<&str>, name: &str) -> Result<NodeId, GrammarError> {
        let g = self.graph;
        let bind_err = || {
            GrammarError::BindError(format!(
                "cannot resolve column {}{name} in {}",
                qualifier.map(|q| format!("{q}.")).unwrap_or_default(),
                g.db_id
            ))
        };
        if let Some(q) = qualifier {
            let q = q.to_lowercase();
            let table = self
                .scopes
                .iter()
                .rev()
                .find_map(|s| {
                    s.aliases
                        .iter()
                        .find(|(a, _)| *a == q)
                        .map(|&(_, t)| t)
                        .or_else(|| s.tables.iter().copied().find(|&t| g.tables[t].name.eq_ignore_ascii_case(&q)))
                })
                .or_else(|| g.find_table(&q))
                .ok_or_else(bind_err)?;
            return g.find_column(table, name).map(|c| g.column_node(c)).ok_or_else(bind_err);
        }
        for scope in self.scopes.iter().rev() {
            let candidates: Vec<usize> = if scope.derived {
                (0..g.num_tables()).collect()
            } else {
                scope.tables.clone()
            };
            for t in candidates {
                if let Some(c) = g.find_column(t, name) {
                    return Ok(g.column_node(c));
                }
            }
        }
        Err(bind_err())
    }

    fn agg_expr(&mut self) -> Result<AggExpr, GrammarError> {
        let agg = match self.peek() {
            Some(Tok::Word(w)) if self.peek_at(1) == Some(&Tok::LParen) => {
                let agg = match w.to_lowercase().as_str() {
                    "max" => Agg::Max,
                    "min" => Agg::Min,
                    "count" => Agg::Count,
                    "sum" => Agg::Sum,
                    "avg" => Agg::Avg,
                    other => return Err(GrammarError::UnsupportedSql(format!("function {other}"))),
                };
                Some(agg)
            }
            _ => None,
        };
        match agg {
            Some(agg) => {
                self.pos += 2;
                let unit = if self.eat_word("distinct") {
                    ValueUnit::DistinctColumn(self.column_ref()?)
                } else {
                    self.value_unit()?
                };
                self.expect(Tok::RParen)?;
                Ok(AggExpr { agg, unit })
            }
            None => Ok(AggExpr {
                agg: Agg::None,
                unit: self.value_unit()?,
            }),
        }
    }

    fn value_unit(&mut self) -> Result<ValueUnit, GrammarError> {
        if self.peek() == Some(&Tok::LParen) {
            return Err(GrammarError::UnsupportedSql("parenthesised expression".into()));
        }
        let a = self.column_ref()?;
        let op = match self.peek() {
            Some(Tok::Minus) => ArithOp::Minus,
            Some(Tok::Plus) => ArithOp::Plus,
            Some(Tok::Star) => ArithOp::Times,
            Some(Tok::Slash) => ArithOp::Divide,
            _ => return Ok(ValueUnit::Column(a)),
        };
        self.pos += 1;
        let b = self.column_ref()?;
        if matches!(self.peek(), Some(Tok::Minus | Tok::Plus | Tok::Star | Tok::Slash)) {
            return Err(GrammarError::UnsupportedSql("arithmetic over more than two columns".into()));
        }
        Ok(ValueUnit::Arith(op, a, b))
    }

    fn filter(&mut self) -> Result<Filter, GrammarError> {
        let mut left = self.conjunction()?;
        while self.eat_word("or") {
            let right = self.conjunction()?;
            left = Filter::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn conjunction(&mut self) -> Result<Filter, GrammarError> {
        let mut left = self.negation()?;
        while self.eat_word("and") {
            let right = self.negation()?;
            left = Filter::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn negation(&mut self) -> Result<Filter, GrammarError> {
        if self.eat_word("not") {
            return Ok(Filter::Not(Box::new(self.negation()?)));
        }
        if self.peek() == Some(&Tok::LParen) && !self.peek_at(1).is_some_and(|t| t.is_word("select")) {
            self.pos += 1;
            let inner = self.filter()?;
            self.expect(Tok::RParen)?;
            return Ok(inner);
        }
        self.predicate()
    }

    fn predicate(&mut self) -> Result<Filter, GrammarError> {
        let left = self.agg_expr()?;
        let op = match self.peek() {
            Some(Tok::Eq) => CmpOp::Eq,
            Some(Tok::Ne) => CmpOp::Ne,
            Some(Tok::Lt) => CmpOp::Lt,
            Some(Tok::Gt) => CmpOp::Gt,
            Some(Tok::Le) => CmpOp::Le,
            Some(Tok::Ge) => CmpOp::Ge,
            Some(t) if t.is_word("like") => CmpOp::Like,
            Some(t) if t.is_word("in") => CmpOp::In,
            Some(t) if t.is_word("between") => {
                self.pos += 1;
                let low = self.operand()?;
                self.expect_word("and")?;
                let high = self.operand()?;
                return Ok(Filter::Between { left, low, high });
            }
            Some(t) if t.is_word("not") => {
                let op = match self.peek_at(1) {
                    Some(t) if t.is_word("like") => CmpOp::NotLike,
                    Some(t) if t.is_word("in") => CmpOp::NotIn,
                    _ => return Err(GrammarError::UnsupportedSql("NOT in this position".into())),
                };
                self.pos += 1;
                op
            }
            Some(t) if t.is_word("is") => return Err(GrammarError::UnsupportedSql("IS NULL".into())),
            _ => return Err(self.unexpected("comparison operator")),
        };
        self.pos += 1;
        let right = self.operand()?;
        Ok(Filter::Cmp { op, left, right })
    }

    fn operand(&mut self) -> Result<Operand, GrammarError> {
        match self.peek().cloned() {
            Some(Tok::LParen) if self.peek_at(1).is_some_and(|t| t.is_word("select")) => {
                self.pos += 1;
                let s = self.statement()?;
                self.expect(Tok::RParen)?;
                Ok(Operand::Subquery(Box::new(s)))
            }
            Some(Tok::LParen) => Err(GrammarError::UnsupportedSql("value list".into())),
            Some(Tok::Str(s)) => {
                self.pos += 1;
                Ok(Operand::Literal(quote(&s)))
            }
            Some(Tok::Number(n)) => {
                self.pos += 1;
                Ok(Operand::Literal(n))
            }
            Some(Tok::Minus) => match self.peek_at(1).cloned() {
                Some(Tok::Number(n)) => {
                    self.pos += 2;
                    Ok(Operand::Literal(format!("-{n}")))
                }
                _ => Err(self.unexpected("number")),
            },
            Some(Tok::Word(w)) if w.eq_ignore_ascii_case("null") => Err(GrammarError::UnsupportedSql("NULL".into())),
            Some(Tok::Word(_)) | Some(Tok::Star) => Ok(Operand::Column(self.column_ref()?)),
            _ => Err(self.unexpected("operand")),
        }
    }
}

/// SQL string literal in double quotes.
pub fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}
