//! Token-level canonical form of SQL used for equality checks.
//!
//! Canonicalization lowercases keywords and identifiers, resolves aliases to
//! `table.column`, drops `AS` aliases and JOIN conditions (tables are still
//! compared), fills in the default ORDER BY direction and sorts top-level
//! WHERE conjuncts and `col = col` sides.

use super::lexer::{lex, Tok};
use super::parser::quote;
use super::GrammarError;
use crate::schema::SchemaGraph;

const KEYWORDS: &[&str] = &[
    "select", "from", "where", "group", "by", "having", "order", "limit", "join", "on", "as", "and", "or", "not", "in",
    "like", "between", "distinct", "asc", "desc", "intersect", "union", "except", "count", "max", "min", "sum", "avg",
    "inner", "is", "null", "all",
];

/// Words after which an identifier is not an alias.
const ALIAS_STOP: &[&str] = &[
    "where", "group", "order", "limit", "join", "on", "inner", "left", "right", "union", "intersect", "except", "having",
    "as",
];

const CLAUSE_END: &[&str] = &["group", "order", "limit", "union", "intersect", "except", "having"];

#[derive(Clone, Debug)]
struct CTok {
    text: String,
    depth: i32,
    literal: bool,
    column: bool,
}

#[derive(Default)]
struct ScopeInfo {
    parent: Option<usize>,
    tables: Vec<usize>,
    aliases: Vec<(String, usize)>,
    derived: bool,
}

/// Canonical string of `sql`. With `mask_values`, literals become `value`.
pub fn canonicalize(sql: &str, graph: &SchemaGraph, mask_values: bool) -> Result<String, GrammarError> {
    let raw = lex(sql)?;
    let mut toks: Vec<CTok> = Vec::with_capacity(raw.len());
    let mut depth = 0;
    for (i, t) in raw.iter().enumerate() {
        let prev_limit = i > 0 && raw[i - 1].is_word("limit");
        let (text, literal) = match t {
            Tok::Word(w) => (w.to_lowercase(), false),
            Tok::Number(n) if mask_values && !prev_limit => ("value".into(), true),
            Tok::Number(n) => (n.clone(), true),
            Tok::Str(_) if mask_values => ("value".into(), true),
            Tok::Str(s) => (quote(s), true),
            Tok::Semi => continue,
            Tok::LParen => ("(".into(), false),
            Tok::RParen => (")".into(), false),
            Tok::Comma => (",".into(), false),
            Tok::Dot => (".".into(), false),
            Tok::Star => ("*".into(), false),
            Tok::Plus => ("+".into(), false),
            Tok::Minus => ("-".into(), false),
            Tok::Slash => ("/".into(), false),
            Tok::Eq => ("=".into(), false),
            Tok::Ne => ("!=".into(), false),
            Tok::Lt => ("<".into(), false),
            Tok::Gt => (">".into(), false),
            Tok::Le => ("<=".into(), false),
            Tok::Ge => (">=".into(), false),
        };
        if *t == Tok::RParen {
            depth -= 1;
        }
        // `INNER JOIN` is `JOIN`.
        if text == "join" && toks.last().is_some_and(|p: &CTok| p.text == "inner" && !p.literal) {
            toks.pop();
        }
        toks.push(CTok {
            text,
            depth,
            literal,
            column: false,
        });
        if *t == Tok::LParen {
            depth += 1;
        }
    }

    let toks = resolve_names(toks, graph);
    let toks = drop_join_conditions(toks);
    let toks = default_order(toks);
    let toks = sort_equalities(toks);
    let toks = sort_conjuncts(toks);
    Ok(toks.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" "))
}

fn is_word(t: &CTok, w: &str) -> bool {
    !t.literal && t.text == w
}

fn is_identifier(t: &CTok) -> bool {
    !t.literal && t.text.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
}

/// Qualifies columns as `table.column` and removes alias declarations.
fn resolve_names(toks: Vec<CTok>, graph: &SchemaGraph) -> Vec<CTok> {
    // Scope of every token: a new scope per SELECT, set-operator siblings share a parent.
    let mut scopes: Vec<ScopeInfo> = Vec::new();
    let mut stack: Vec<(i32, usize)> = Vec::new();
    let mut scope_of = vec![usize::MAX; toks.len()];
    for (i, t) in toks.iter().enumerate() {
        while stack.last().is_some_and(|&(d, _)| d > t.depth) {
            stack.pop();
        }
        if is_word(t, "select") {
            if stack.last().is_some_and(|&(d, _)| d == t.depth) {
                stack.pop();
            }
            scopes.push(ScopeInfo {
                parent: stack.last().map(|&(_, s)| s),
                ..ScopeInfo::default()
            });
            stack.push((t.depth, scopes.len() - 1));
        }
        if let Some(&(_, s)) = stack.last() {
            scope_of[i] = s;
        }
    }

    let mut removed = vec![false; toks.len()];
    let mut table_pos = vec![false; toks.len()];
    for i in 0..toks.len() {
        if !(is_word(&toks[i], "from") || is_word(&toks[i], "join")) || scope_of[i] == usize::MAX {
            continue;
        }
        let s = scope_of[i];
        let Some(next) = toks.get(i + 1) else { continue };
        let alias_at = if next.text == "(" && !next.literal {
            scopes[s].derived = true;
            let d = next.depth;
            match (i + 2..toks.len()).find(|&k| toks[k].text == ")" && toks[k].depth == d) {
                Some(k) => k + 1,
                None => continue,
            }
        } else {
            match graph.find_table(&next.text).filter(|_| !next.literal) {
                Some(t) => {
                    scopes[s].tables.push(t);
                    table_pos[i + 1] = true;
                    i + 2
                }
                None => continue,
            }
        };
        let alias = if toks.get(alias_at).is_some_and(|t| is_word(t, "as")) {
            removed[alias_at] = true;
            alias_at + 1
        } else {
            alias_at
        };
        if let Some(a) = toks.get(alias) {
            if is_identifier(a) && !ALIAS_STOP.contains(&a.text.as_str()) {
                removed[alias] = true;
                if let Some(&t) = scopes[s].tables.last().filter(|_| !scopes[s].derived) {
                    scopes[s].aliases.push((a.text.clone(), t));
                }
            }
        }
    }

    let chain = |s: usize| {
        let mut out = vec![s];
        while let Some(p) = scopes[*out.last().unwrap()].parent {
            out.push(p);
        }
        out
    };

    let mut out = Vec::with_capacity(toks.len());
    let mut i = 0;
    while i < toks.len() {
        if removed[i] {
            i += 1;
            continue;
        }
        let t = &toks[i];
        let s = scope_of[i];
        if table_pos[i] || !is_identifier(t) || s == usize::MAX || KEYWORDS.contains(&t.text.as_str()) {
            out.push(t.clone());
            i += 1;
            continue;
        }
        let dotted = toks.get(i + 1).is_some_and(|d| d.text == "." && !d.literal);
        if dotted {
            if let Some(col) = toks.get(i + 2) {
                let table = chain(s)
                    .into_iter()
                    .find_map(|sc| {
                        let sc = &scopes[sc];
                        sc.aliases
                            .iter()
                            .find(|(a, _)| *a == t.text)
                            .map(|&(_, tb)| tb)
                            .or_else(|| sc.tables.iter().copied().find(|&tb| graph.tables[tb].name.eq_ignore_ascii_case(&t.text)))
                    })
                    .or_else(|| graph.find_table(&t.text));
                let text = match (table, col.text.as_str()) {
                    (_, "*") => "*".to_string(),
                    (Some(tb), c) => format!("{}.{}", graph.tables[tb].name.to_lowercase(), c),
                    (None, c) => format!("{}.{}", t.text, c),
                };
                out.push(CTok {
                    text,
                    depth: t.depth,
                    literal: false,
                    column: true,
                });
                i += 3;
                continue;
            }
        }
        let followed_by_paren = toks.get(i + 1).is_some_and(|d| d.text == "(" && !d.literal);
        let mut text = t.text.clone();
        if !followed_by_paren {
            'search: for sc in chain(s) {
                let sc = &scopes[sc];
                if sc.derived {
                    break;
                }
                for &tb in &sc.tables {
                    if let Some(c) = graph.find_column(tb, &t.text) {
                        text = format!("{}.{}", graph.tables[tb].name.to_lowercase(), graph.columns[c].name.to_lowercase());
                        break 'search;
                    }
                }
            }
        }
        out.push(CTok {
            text,
            depth: t.depth,
            literal: false,
            column: true,
        });
        i += 1;
    }
    out
}

/// End of the clause starting after `start` at depth `d`.
fn clause_end(toks: &[CTok], start: usize, d: i32, extra: &[&str]) -> usize {
    (start..toks.len())
        .find(|&k| {
            let t = &toks[k];
            t.depth < d
                || (t.depth == d
                    && !t.literal
                    && (CLAUSE_END.contains(&t.text.as_str()) || extra.contains(&t.text.as_str()) || t.text == ")"))
        })
        .unwrap_or(toks.len())
}

fn drop_join_conditions(toks: Vec<CTok>) -> Vec<CTok> {
    let mut out = Vec::with_capacity(toks.len());
    let mut i = 0;
    while i < toks.len() {
        if is_word(&toks[i], "on") {
            i = clause_end(&toks, i + 1, toks[i].depth, &["join", "where"]);
        } else {
            out.push(toks[i].clone());
            i += 1;
        }
    }
    out
}

fn default_order(toks: Vec<CTok>) -> Vec<CTok> {
    let mut out = Vec::with_capacity(toks.len());
    let mut i = 0;
    while i < toks.len() {
        let t = &toks[i];
        if is_word(t, "order") && toks.get(i + 1).is_some_and(|b| is_word(b, "by")) {
            let d = t.depth;
            let end = clause_end(&toks, i + 2, d, &["where"]);
            out.push(t.clone());
            out.push(toks[i + 1].clone());
            for k in i + 2..=end {
                let at_item_end = k == end || (toks[k].depth == d && toks[k].text == "," && !toks[k].literal);
                if at_item_end {
                    let last = &out.last().expect("non-empty").text;
                    if last != "asc" && last != "desc" {
                        out.push(CTok {
                            text: "asc".into(),
                            depth: d,
                            literal: false,
                            column: false,
                        });
                    }
                }
                if k < end {
                    out.push(toks[k].clone());
                }
            }
            i = end;
        } else {
            out.push(t.clone());
            i += 1;
        }
    }
    out
}

/// Orders the sides of `column = column` comparisons.
fn sort_equalities(mut toks: Vec<CTok>) -> Vec<CTok> {
    const BEFORE: &[&str] = &["where", "having", "and", "or", "not", "("];
    const AFTER_BLOCK: &[&str] = &["+", "-", "*", "/", ".", "("];
    for i in 1..toks.len().saturating_sub(2) {
        let ok = toks[i].column
            && toks[i + 1].text == "="
            && !toks[i + 1].literal
            && toks[i + 2].column
            && BEFORE.contains(&toks[i - 1].text.as_str())
            && !toks[i - 1].literal
            && !toks
                .get(i + 3)
                .is_some_and(|n| !n.literal && AFTER_BLOCK.contains(&n.text.as_str()));
        if ok && toks[i].text > toks[i + 2].text {
            toks.swap(i, i + 2);
        }
    }
    toks
}

/// Sorts the conjuncts of every WHERE clause without a top-level OR.
fn sort_conjuncts(mut toks: Vec<CTok>) -> Vec<CTok> {
    let mut wheres: Vec<usize> = (0..toks.len()).filter(|&i| is_word(&toks[i], "where")).collect();
    // Innermost first; a permutation keeps the positions of enclosing clauses.
    wheres.sort_by_key(|&i| std::cmp::Reverse(toks[i].depth));
    for w in wheres {
        let d = toks[w].depth;
        let end = clause_end(&toks, w + 1, d, &[]);
        let mut parts: Vec<Vec<CTok>> = vec![Vec::new()];
        let mut between = false;
        let mut has_or = false;
        for t in &toks[w + 1..end] {
            if t.depth == d && !t.literal {
                match t.text.as_str() {
                    "or" => has_or = true,
                    "between" => between = true,
                    "and" if between => between = false,
                    "and" => {
                        parts.push(Vec::new());
                        continue;
                    }
                    _ => {}
                }
            }
            parts.last_mut().expect("non-empty").push(t.clone());
        }
        if has_or || parts.len() < 2 {
            continue;
        }
        let key = |p: &Vec<CTok>| p.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ");
        parts.sort_by_key(key);
        let and = CTok {
            text: "and".into(),
            depth: d,
            literal: false,
            column: false,
        };
        let mut rebuilt = Vec::with_capacity(end - w - 1);
        for (k, p) in parts.into_iter().enumerate() {
            if k > 0 {
                rebuilt.push(and.clone());
            }
            rebuilt.extend(p);
        }
        toks.splice(w + 1..end, rebuilt);
    }
    toks
}
