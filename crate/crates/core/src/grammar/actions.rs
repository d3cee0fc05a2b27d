use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::{Statement, Tree};
use super::rules::{self, Kind, RuleId, Slot};
use super::GrammarError;
use crate::schema::NodeId;

/// One decoding step.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    ApplyRule(RuleId),
    SelectColumn(NodeId),
    SelectTable(NodeId),
    EmitLiteral(String),
}

impl Action {
    /// Slot type this action fills.
    pub fn fills(&self, slot: Slot) -> bool {
        match (self, slot) {
            (Action::ApplyRule(r), Slot::Kind(k)) => rules::get(*r).head == k,
            (Action::SelectColumn(_), Slot::Column) => true,
            (Action::SelectTable(_), Slot::Table) => true,
            (Action::EmitLiteral(_), Slot::Literal) => true,
            _ => false,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::ApplyRule(r) => write!(f, "{r}"),
            Action::SelectColumn(n) => write!(f, "Column({})", n.0),
            Action::SelectTable(n) => write!(f, "Table({})", n.0),
            Action::EmitLiteral(v) => write!(f, "Literal({v})"),
        }
    }
}

/// Depth-first pre-order of the derivation of `ast`.
pub fn flatten(ast: &Statement) -> Vec<Action> {
    let mut out = Vec::new();
    flatten_tree(&ast.to_tree(), &mut out);
    out
}

pub fn flatten_tree(tree: &Tree, out: &mut Vec<Action>) {
    match tree {
        Tree::Node { rule, children } => {
            out.push(Action::ApplyRule(*rule));
            for c in children {
                flatten_tree(c, out);
            }
        }
        Tree::Column(c) => out.push(Action::SelectColumn(*c)),
        Tree::Table(t) => out.push(Action::SelectTable(*t)),
        Tree::Literal(v) => out.push(Action::EmitLiteral(v.clone())),
    }
}

/// Inverse of [`flatten`]; rejects sequences the production table does not derive.
pub fn unflatten(actions: &[Action]) -> Result<Statement, GrammarError> {
    let tree = unflatten_tree(actions)?;
    Statement::from_tree(&tree)
}

pub fn unflatten_tree(actions: &[Action]) -> Result<Tree, GrammarError> {
    let mut pos = 0;
    let tree = read(actions, &mut pos, Slot::Kind(Kind::Statement))?;
    if pos != actions.len() {
        return Err(GrammarError::GrammarViolation {
            position: Some(pos),
            msg: format!("{} actions after a complete derivation", actions.len() - pos),
        });
    }
    Ok(tree)
}

fn read(actions: &[Action], pos: &mut usize, slot: Slot) -> Result<Tree, GrammarError> {
    let action = actions.get(*pos).ok_or(GrammarError::IncompleteSequence)?;
    if !action.fills(slot) {
        return Err(GrammarError::GrammarViolation {
            position: Some(*pos),
            msg: format!("{action} cannot fill {slot:?}"),
        });
    }
    *pos += 1;
    Ok(match action {
        Action::ApplyRule(r) => {
            let children = rules::get(*r)
                .children
                .iter()
                .map(|&c| read(actions, pos, c))
                .collect::<Result<_, _>>()?;
            Tree::Node { rule: *r, children }
        }
        Action::SelectColumn(c) => Tree::Column(*c),
        Action::SelectTable(t) => Tree::Table(*t),
        Action::EmitLiteral(v) => Tree::Literal(v.clone()),
    })
}

/// Incremental grammar state: the stack of slots still to be filled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cursor {
    stack: Vec<Slot>,
}

impl Default for Cursor {
    fn default() -> Self {
        Self::new()
    }
}

impl Cursor {
    pub fn new() -> Self {
        Self {
            stack: vec![Slot::Kind(Kind::Statement)],
        }
    }

    /// Slot the next action must fill, or `None` once complete.
    pub fn frontier(&self) -> Option<Slot> {
        self.stack.last().copied()
    }

    pub fn is_complete(&self) -> bool {
        self.stack.is_empty()
    }

    pub fn pending(&self) -> &[Slot] {
        &self.stack
    }

    pub fn apply(&mut self, action: &Action) -> Result<(), GrammarError> {
        let slot = self.frontier().ok_or_else(|| GrammarError::GrammarViolation {
            position: None,
            msg: "derivation already complete".into(),
        })?;
        if !action.fills(slot) {
            return Err(GrammarError::GrammarViolation {
                position: None,
                msg: format!("{action} cannot fill {slot:?}"),
            });
        }
        self.stack.pop();
        if let Action::ApplyRule(r) = action {
            self.stack.extend(rules::get(*r).children.iter().rev());
        }
        Ok(())
    }

    /// Minimum number of actions that completes the derivation.
    pub fn min_remaining(&self, slot_lengths: &[usize; Slot::COUNT]) -> usize {
        self.stack.iter().map(|s| slot_lengths[s.index()]).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_sequence_is_incomplete() {
        assert!(matches!(unflatten(&[]), Err(GrammarError::IncompleteSequence)));
    }

    #[test]
    fn wrong_kind_is_a_violation() {
        // Query where a Statement rule is required.
        let err = unflatten(&[Action::ApplyRule(rules::QUERY)]).unwrap_err();
        assert!(matches!(err, GrammarError::GrammarViolation { position: Some(0), .. }));
    }

    #[test]
    fn cursor_tracks_slots() {
        let mut c = Cursor::new();
        assert_eq!(c.frontier(), Some(Slot::Kind(Kind::Statement)));
        c.apply(&Action::ApplyRule(rules::SINGLE)).unwrap();
        assert_eq!(c.frontier(), Some(Slot::Kind(Kind::Query)));
        c.apply(&Action::ApplyRule(rules::QUERY)).unwrap();
        assert_eq!(c.pending().len(), 6);
        assert_eq!(c.frontier(), Some(Slot::Kind(Kind::Select)));
        assert!(c.apply(&Action::SelectColumn(NodeId(0))).is_err());
    }
}
