//! Recover success rate and the golden corpus.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::actions::{flatten, unflatten, Action};
use super::canonical::canonicalize;
use super::emit::ast_to_sql;
use super::parser::sql_to_ast;
use super::rules;
use super::GrammarError;
use crate::schema::SchemaGraph;

/// One `{db_id, sql}` corpus entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenQuery {
    pub db_id: String,
    pub sql: String,
}

pub fn parse_corpus(json: &str) -> Result<Vec<GoldenQuery>, GrammarError> {
    serde_json::from_str(json).map_err(|e| GrammarError::Syntax(format!("corpus: {e}")))
}

/// SQL → AST → actions → AST → SQL; returns the recovered SQL and the actions.
pub fn roundtrip(sql: &str, graph: &SchemaGraph) -> Result<(String, Vec<Action>), GrammarError> {
    let ast = sql_to_ast(sql, graph)?;
    let actions = flatten(&ast);
    let back = unflatten(&actions)?;
    if back != ast {
        return Err(GrammarError::GrammarViolation {
            position: None,
            msg: "unflatten did not reproduce the parsed tree".into(),
        });
    }
    Ok((ast_to_sql(&back, graph)?, actions))
}

/// Whether `sql` survives the roundtrip unchanged up to canonical form.
pub fn recovers(sql: &str, graph: &SchemaGraph) -> Result<bool, GrammarError> {
    let (recovered, _) = roundtrip(sql, graph)?;
    Ok(canonicalize(sql, graph, false)? == canonicalize(&recovered, graph, false)?)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecoverReport {
    pub total: usize,
    pub recovered: usize,
    /// Corpus index and reason for each miss.
    pub failures: Vec<(usize, String)>,
    /// Uses of each rule id over the recovered queries.
    pub rule_counts: Vec<usize>,
}

impl RecoverReport {
    /// Fraction recovered; an empty corpus scores 0.
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.recovered as f64 / self.total as f64
        }
    }

    pub fn uncovered_rules(&self) -> Vec<rules::RuleId> {
        (0..rules::rule_count())
            .filter(|&r| self.rule_counts[r] == 0)
            .map(rules::RuleId)
            .collect()
    }
}

/// Runs the roundtrip over a corpus. Parse failures and unknown databases count as misses.
pub fn recover_report(corpus: &[GoldenQuery], graphs: &HashMap<String, SchemaGraph>) -> RecoverReport {
    let mut report = RecoverReport {
        total: corpus.len(),
        rule_counts: vec![0; rules::rule_count()],
        ..RecoverReport::default()
    };
    for (i, q) in corpus.iter().enumerate() {
        let Some(graph) = graphs.get(&q.db_id) else {
            report.failures.push((i, format!("unknown database {}", q.db_id)));
            continue;
        };
        let outcome = roundtrip(&q.sql, graph).and_then(|(recovered, actions)| {
            let same = canonicalize(&q.sql, graph, false)? == canonicalize(&recovered, graph, false)?;
            Ok((same, recovered, actions))
        });
        match outcome {
            Ok((true, _, actions)) => {
                report.recovered += 1;
                for a in actions {
                    if let Action::ApplyRule(r) = a {
                        report.rule_counts[r.0] += 1;
                    }
                }
            }
            Ok((false, recovered, _)) => report.failures.push((i, format!("recovered as {recovered}"))),
            Err(e) => report.failures.push((i, e.to_string())),
        }
    }
    report
}

pub fn recover_rate(corpus: &[GoldenQuery], graphs: &HashMap<String, SchemaGraph>) -> f64 {
    recover_report(corpus, graphs).rate()
}

/// Rule usage histogram keyed by rule name.
pub fn coverage(report: &RecoverReport) -> BTreeMap<String, usize> {
    (0..rules::rule_count())
        .map(|r| (rules::RuleId(r).to_string(), report.rule_counts[r]))
        .collect()
}
