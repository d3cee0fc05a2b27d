//! SemQL tree to SQL text.

use super::ast::*;
use super::GrammarError;
use crate::schema::{NodeId, NodeKind, SchemaGraph};

/// Renders `ast` as SQL. Joined tables get aliases `T1..Tk` in FROM order.
pub fn ast_to_sql(ast: &Statement, graph: &SchemaGraph) -> Result<String, GrammarError> {
    let mut out = String::new();
    Emitter { graph }.statement(ast, &mut out)?;
    Ok(out)
}

struct Emitter<'g> {
    graph: &'g SchemaGraph,
}

/// Naming context of one SELECT block.
#[derive(Default)]
struct Names {
    /// Table index per alias position; empty when columns are unqualified.
    aliased: Vec<usize>,
    /// Tables in FROM of an unaliased block.
    tables: Vec<usize>,
    derived: bool,
}

impl Emitter<'_> {
    fn statement(&self, s: &Statement, out: &mut String) -> Result<(), GrammarError> {
        self.query(&s.query, out)?;
        if let Some((op, rest)) = &s.set_op {
            out.push(' ');
            out.push_str(op.keyword());
            out.push(' ');
            self.statement(rest, out)?;
        }
        Ok(())
    }

    fn table(&self, t: NodeId) -> Result<usize, GrammarError> {
        match self.graph.contains(t) && self.graph.kind(t) == NodeKind::Table {
            true => Ok(t.0),
            false => Err(GrammarError::BindError(format!("{t} is not a table of {}", self.graph.db_id))),
        }
    }

    fn column(&self, c: NodeId, names: &Names) -> Result<String, GrammarError> {
        let g = self.graph;
        let ci = g
            .column_index(c)
            .ok_or_else(|| GrammarError::BindError(format!("{c} is not a column of {}", g.db_id)))?;
        let col = &g.columns[ci];
        let Some(owner) = col.table else {
            return Ok("*".into());
        };
        if names.aliased.is_empty() {
            // Columns of an enclosing block keep their table name.
            if names.derived || names.tables.contains(&owner) {
                return Ok(col.name.clone());
            }
            return Ok(format!("{}.{}", g.tables[owner].name, col.name));
        }
        Ok(match names.aliased.iter().position(|&t| t == owner) {
            Some(i) => format!("T{}.{}", i + 1, col.name),
            None => format!("{}.{}", g.tables[owner].name, col.name),
        })
    }

    fn query(&self, q: &Query, out: &mut String) -> Result<(), GrammarError> {
        let mut names = Names::default();
        let mut from = String::new();
        match &q.from {
            From::Tables { first, joins } => {
                let first = self.table(*first)?;
                let tables: Vec<usize> = std::iter::once(Ok(first))
                    .chain(joins.iter().map(|j| self.table(j.table)))
                    .collect::<Result<_, _>>()?;
                if joins.is_empty() {
                    names.tables = tables.clone();
                    from.push_str(&self.graph.tables[first].name);
                } else {
                    names.aliased = tables.clone();
                    from.push_str(&format!("{} AS T1", self.graph.tables[first].name));
                    for (i, j) in joins.iter().enumerate() {
                        from.push_str(&format!(" JOIN {} AS T{}", self.graph.tables[tables[i + 1]].name, i + 2));
                        for (k, (a, b)) in j.on.iter().enumerate() {
                            from.push_str(if k == 0 { " ON " } else { " AND " });
                            from.push_str(&format!("{} = {}", self.column(*a, &names)?, self.column(*b, &names)?));
                        }
                    }
                }
            }
            From::Subquery(s) => {
                names.derived = true;
                from.push('(');
                self.statement(s, &mut from)?;
                from.push(')');
            }
        }

        out.push_str("SELECT ");
        if q.select.distinct {
            out.push_str("DISTINCT ");
        }
        let items = q
            .select
            .items
            .iter()
            .map(|e| self.agg_expr(e, &names))
            .collect::<Result<Vec<_>, _>>()?;
        out.push_str(&items.join(", "));
        out.push_str(" FROM ");
        out.push_str(&from);
        if let Some(f) = &q.filter {
            out.push_str(" WHERE ");
            self.filter(f, &names, out)?;
        }
        if let Some(g) = &q.group_by {
            let cols = g
                .columns
                .iter()
                .map(|c| self.column(*c, &names))
                .collect::<Result<Vec<_>, _>>()?;
            out.push_str(" GROUP BY ");
            out.push_str(&cols.join(", "));
            if let Some(h) = &g.having {
                out.push_str(" HAVING ");
                self.filter(h, &names, out)?;
            }
        }
        if let Some(items) = &q.order_by {
            let items = items
                .iter()
                .map(|o| {
                    let dir = match o.dir {
                        Dir::Asc => "ASC",
                        Dir::Desc => "DESC",
                    };
                    Ok(format!("{} {dir}", self.agg_expr(&o.expr, &names)?))
                })
                .collect::<Result<Vec<_>, GrammarError>>()?;
            out.push_str(" ORDER BY ");
            out.push_str(&items.join(", "));
        }
        if let Some(l) = &q.limit {
            out.push_str(" LIMIT ");
            out.push_str(l);
        }
        Ok(())
    }

    fn unit(&self, u: &ValueUnit, names: &Names) -> Result<String, GrammarError> {
        Ok(match u {
            ValueUnit::Column(c) => self.column(*c, names)?,
            ValueUnit::DistinctColumn(c) => format!("DISTINCT {}", self.column(*c, names)?),
            ValueUnit::Arith(op, a, b) => {
                format!("{} {} {}", self.column(*a, names)?, op.symbol(), self.column(*b, names)?)
            }
        })
    }

    fn agg_expr(&self, e: &AggExpr, names: &Names) -> Result<String, GrammarError> {
        let unit = self.unit(&e.unit, names)?;
        Ok(match e.agg.keyword() {
            Some(k) => format!("{k}({unit})"),
            None => unit,
        })
    }

    fn operand(&self, o: &Operand, names: &Names, out: &mut String) -> Result<(), GrammarError> {
        match o {
            Operand::Literal(v) => out.push_str(v),
            Operand::Column(c) => out.push_str(&self.column(*c, names)?),
            Operand::Subquery(s) => {
                out.push('(');
                self.statement(s, out)?;
                out.push(')');
            }
        }
        Ok(())
    }

    fn filter(&self, f: &Filter, names: &Names, out: &mut String) -> Result<(), GrammarError> {
        match f {
            Filter::Cmp { op, left, right } => {
                out.push_str(&self.agg_expr(left, names)?);
                out.push(' ');
                out.push_str(op.keyword());
                out.push(' ');
                self.operand(right, names, out)?;
            }
            Filter::Between { left, low, high } => {
                out.push_str(&self.agg_expr(left, names)?);
                out.push_str(" BETWEEN ");
                self.operand(low, names, out)?;
                out.push_str(" AND ");
                self.operand(high, names, out)?;
            }
            Filter::And(a, b) | Filter::Or(a, b) => {
                let is_and = matches!(f, Filter::And(..));
                let wrap_left = is_and && matches!(**a, Filter::Or(..));
                // Left-associative chains need parens on a right child of the same kind.
                let wrap_right = match **b {
                    Filter::Or(..) => true,
                    Filter::And(..) => is_and,
                    _ => false,
                };
                self.wrapped(a, wrap_left, names, out)?;
                out.push_str(if is_and { " AND " } else { " OR " });
                self.wrapped(b, wrap_right, names, out)?;
            }
            Filter::Not(inner) => {
                out.push_str("NOT ");
                self.wrapped(inner, true, names, out)?;
            }
        }
        Ok(())
    }

    fn wrapped(&self, f: &Filter, wrap: bool, names: &Names, out: &mut String) -> Result<(), GrammarError> {
        if wrap {
            out.push('(');
        }
        self.filter(f, names, out)?;
        if wrap {
            out.push(')');
        }
        Ok(())
    }
}
