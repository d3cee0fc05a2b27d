use std::collections::HashMap;
use std::path::Path;

use shadowgnn::grammar::{self, GrammarError};
use shadowgnn::schema::{load_tables, SchemaGraph};

fn graphs() -> HashMap<String, SchemaGraph> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/tables.json");
    load_tables(&path).unwrap().into_iter().map(|g| (g.db_id.clone(), g)).collect()
}

fn corpus() -> Vec<grammar::GoldenQuery> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/golden.json");
    grammar::parse_corpus(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn golden_corpus_recovers_and_covers_every_rule() {
    let graphs = graphs();
    let corpus = corpus();
    assert!(corpus.len() >= 60);
    let report = grammar::recover_report(&corpus, &graphs);
    for (i, why) in &report.failures {
        eprintln!("{}: {why}", corpus[*i].sql);
    }
    assert_eq!(report.rate(), 1.0);
    assert!(report.uncovered_rules().is_empty(), "uncovered: {:?}", report.uncovered_rules());
}

fn soccer() -> SchemaGraph {
    graphs().remove("soccer").unwrap()
}

#[test]
fn minimal_query_parses() {
    let g = soccer();
    let ast = grammar::sql_to_ast("SELECT name FROM team", &g).unwrap();
    let team = g.find_table("team").unwrap();
    let name = g.column_node(g.find_column(team, "name").unwrap());
    assert_eq!(ast.query.select.items, vec![grammar::AggExpr::column(name)]);
    assert_eq!(ast.query.from, grammar::From::Tables { first: g.table_node(team), joins: vec![] });
    assert!(ast.query.filter.is_none() && ast.set_op.is_none());
    // No filter, no WHERE.
    assert_eq!(grammar::ast_to_sql(&ast, &g).unwrap(), "SELECT name FROM team");
}

#[test]
fn having_and_order_nodes() {
    let g = soccer();
    let ast = grammar::sql_to_ast("SELECT count(*) FROM match_season GROUP BY team_id HAVING count(*) > 3", &g).unwrap();
    let group = ast.query.group_by.unwrap();
    assert_eq!(group.columns.len(), 1);
    let count_star = grammar::AggExpr { agg: grammar::Agg::Count, unit: grammar::ValueUnit::Column(g.star()) };
    assert_eq!(
        group.having,
        Some(grammar::Filter::Cmp {
            op: grammar::CmpOp::Gt,
            left: count_star,
            right: grammar::Operand::Literal("3".into())
        })
    );

    let ast = grammar::sql_to_ast("select name from TEAM order by Founded desc limit 1", &g).unwrap();
    let order = ast.query.order_by.unwrap();
    assert_eq!(order.len(), 1);
    assert_eq!(order[0].dir, grammar::Dir::Desc);
    assert_eq!(ast.query.limit.as_deref(), Some("1"));
}

#[test]
fn intersect_emits_two_statements() {
    let g = soccer();
    let sql = "SELECT city FROM team INTERSECT SELECT city FROM team WHERE founded > 1990";
    let out = grammar::ast_to_sql(&grammar::sql_to_ast(sql, &g).unwrap(), &g).unwrap();
    let parts: Vec<&str> = out.split(" INTERSECT ").collect();
    assert_eq!(parts.len(), 2);
    assert!(parts.iter().all(|p| p.starts_with("SELECT ")));
}

#[test]
fn implicit_join_recovers_foreign_key() {
    let g = soccer();
    let ast = grammar::sql_to_ast("SELECT T1.name FROM team AS T1 JOIN match_season AS T2", &g).unwrap();
    let grammar::From::Tables { joins, .. } = &ast.query.from else { panic!() };
    let team = g.find_table("team").unwrap();
    let season = g.find_table("match_season").unwrap();
    assert_eq!(
        joins[0].on,
        vec![(
            g.column_node(g.find_column(team, "team_id").unwrap()),
            g.column_node(g.find_column(season, "team_id").unwrap())
        )]
    );
}

#[test]
fn unsupported_and_unbound_inputs() {
    let g = soccer();
    let err = |sql: &str| grammar::sql_to_ast(sql, &g).unwrap_err();
    assert!(matches!(err("SELECT name FROM team, match_season"), GrammarError::UnsupportedSql(_)));
    assert!(matches!(err("SELECT name AS n FROM team"), GrammarError::UnsupportedSql(_)));
    assert!(matches!(err("SELECT name FROM team UNION ALL SELECT name FROM team"), GrammarError::UnsupportedSql(_)));
    assert!(matches!(err("SELECT T1.name FROM team AS T1 JOIN team AS T2"), GrammarError::UnsupportedSql(_)));
    assert!(matches!(err("SELECT name FROM team WHERE city IS NULL"), GrammarError::UnsupportedSql(_)));
    assert!(matches!(err("SELECT nickname FROM team"), GrammarError::BindError(_)));
    assert!(matches!(err("SELECT name FROM stadium"), GrammarError::BindError(_)));

    let mut graphs = HashMap::new();
    graphs.insert("soccer".to_string(), g);
    let corpus = vec![grammar::GoldenQuery { db_id: "soccer".into(), sql: "SELECT name FROM team, match_season".into() }];
    assert_eq!(grammar::recover_rate(&corpus, &graphs), 0.0);
}

#[test]
fn emission_is_a_fixed_point_and_flatten_inverts() {
    let graphs = graphs();
    for q in corpus() {
        let g = &graphs[&q.db_id];
        let ast = grammar::sql_to_ast(&q.sql, g).unwrap();
        let once = grammar::ast_to_sql(&ast, g).unwrap();
        let ast2 = grammar::sql_to_ast(&once, g).unwrap();
        assert_eq!(ast2, ast, "{once}");
        assert_eq!(grammar::ast_to_sql(&ast2, g).unwrap(), once);
        assert_eq!(grammar::unflatten(&grammar::flatten(&ast)).unwrap(), ast);
    }
}

#[test]
fn swapped_rule_is_a_violation() {
    let g = soccer();
    let ast = grammar::sql_to_ast("SELECT name FROM team WHERE founded > 1900", &g).unwrap();
    let mut actions = grammar::flatten(&ast);
    // Swap the Select rule with the Where rule that follows later.
    let select = actions.iter().position(|a| *a == grammar::Action::ApplyRule(grammar::rules::SELECT_PLAIN)).unwrap();
    let filter = actions.iter().position(|a| *a == grammar::Action::ApplyRule(grammar::rules::WHERE_SOME)).unwrap();
    actions.swap(select, filter);
    assert!(matches!(
        grammar::unflatten(&actions),
        Err(GrammarError::GrammarViolation { position: Some(p), .. }) if p == select
    ));
}

#[test]
fn canonical_form_ignores_aliases_and_case() {
    let g = soccer();
    let a = grammar::canonicalize(
        "SELECT T1.name FROM team AS T1 JOIN match_season AS T2 ON T1.team_id = T2.team_id WHERE T2.year = 2020",
        &g,
        false,
    )
    .unwrap();
    let b = grammar::canonicalize(
        "select a.NAME from team a join match_season b on b.team_id = a.team_id where b.year = 2020",
        &g,
        false,
    )
    .unwrap();
    assert_eq!(a, b);
    assert_eq!(a, "select team.name from team join match_season where match_season.year = 2020");
}
