//! Pairwise relation ids over the joint question + schema sequence.

use super::graph::{NodeId, NodeKind, SchemaGraph};
use super::linking::{LinkMatrix, LinkTag};

/// Clamp for question-question relative distance.
pub const MAX_QUESTION_DISTANCE: i64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Relation {
    /// Schema-linking tag, shared by the question->schema and schema->question directions.
    Link(LinkTag),
    /// Clamped `j - i` between question tokens; `0` on the diagonal.
    QuestionDistance(i64),
    BelongsTo,
    HasColumn,
    ForeignKeyForward,
    ForeignKeyBackward,
    PrimaryKey,
    PrimaryKeyOf,
    SameTable,
    TableForeignKey,
    NoEdgeSameType,
    NoEdgeCrossType,
    SelfLoopTable,
    SelfLoopColumn,
    PadQuestion,
    PadSchema,
}

impl Relation {
    pub const COUNT: usize = 26;

    pub fn id(self) -> usize {
        match self {
            Relation::Link(tag) => tag.index(),
            Relation::QuestionDistance(d) => {
                (7 + (d.clamp(-MAX_QUESTION_DISTANCE, MAX_QUESTION_DISTANCE) + MAX_QUESTION_DISTANCE)) as usize
            }
            Relation::BelongsTo => 12,
            Relation::HasColumn => 13,
            Relation::ForeignKeyForward => 14,
            Relation::ForeignKeyBackward => 15,
            Relation::PrimaryKey => 16,
            Relation::PrimaryKeyOf => 17,
            Relation::SameTable => 18,
            Relation::TableForeignKey => 19,
            Relation::NoEdgeSameType => 20,
            Relation::NoEdgeCrossType => 21,
            Relation::SelfLoopTable => 22,
            Relation::SelfLoopColumn => 23,
            Relation::PadQuestion => 24,
            Relation::PadSchema => 25,
        }
    }

    pub fn from_id(id: usize) -> Option<Relation> {
        Some(match id {
            0..=6 => Relation::Link(LinkTag::ALL[id]),
            7..=11 => Relation::QuestionDistance(id as i64 - 7 - MAX_QUESTION_DISTANCE),
            12 => Relation::BelongsTo,
            13 => Relation::HasColumn,
            14 => Relation::ForeignKeyForward,
            15 => Relation::ForeignKeyBackward,
            16 => Relation::PrimaryKey,
            17 => Relation::PrimaryKeyOf,
            18 => Relation::SameTable,
            19 => Relation::TableForeignKey,
            20 => Relation::NoEdgeSameType,
            21 => Relation::NoEdgeCrossType,
            22 => Relation::SelfLoopTable,
            23 => Relation::SelfLoopColumn,
            24 => Relation::PadQuestion,
            25 => Relation::PadSchema,
            _ => return None,
        })
    }
}

/// Square matrix of relation ids over `n` question tokens followed by `m` schema nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationMatrix {
    size: usize,
    ids: Vec<usize>,
}

impl RelationMatrix {
    /// Every cell set to `id`.
    pub fn uniform(size: usize, id: usize) -> Self {
        Self {
            size,
            ids: vec![id; size * size],
        }
    }

    pub fn from_ids(size: usize, ids: Vec<usize>) -> Self {
        assert_eq!(ids.len(), size * size);
        Self { size, ids }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.ids[i * self.size + j]
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Relabels positions: entry `(i, j)` moves to `(perm[i], perm[j])`.
    pub fn permuted(&self, perm: &[usize]) -> RelationMatrix {
        let mut ids = vec![0; self.ids.len()];
        for i in 0..self.size {
            for j in 0..self.size {
                ids[perm[i] * self.size + perm[j]] = self.get(i, j);
            }
        }
        RelationMatrix { size: self.size, ids }
    }
}

/// Schema-schema relation between two nodes of `graph`.
pub fn schema_relation(graph: &SchemaGraph, a: NodeId, b: NodeId) -> Relation {
    match (graph.kind(a), graph.kind(b)) {
        (NodeKind::Table, NodeKind::Table) => {
            if a == b {
                Relation::SelfLoopTable
            } else if !graph.foreign_keys_between(a.0, b.0).is_empty() {
                Relation::TableForeignKey
            } else {
                Relation::NoEdgeSameType
            }
        }
        (NodeKind::Column, NodeKind::Column) => {
            if a == b {
                return Relation::SelfLoopColumn;
            }
            let (ca, cb) = (graph.column_index(a).unwrap(), graph.column_index(b).unwrap());
            if graph.foreign_keys.contains(&(ca, cb)) {
                Relation::ForeignKeyForward
            } else if graph.foreign_keys.contains(&(cb, ca)) {
                Relation::ForeignKeyBackward
            } else if graph.columns[ca].table.is_some() && graph.columns[ca].table == graph.columns[cb].table {
                Relation::SameTable
            } else {
                Relation::NoEdgeSameType
            }
        }
        (NodeKind::Column, NodeKind::Table) => column_table(graph, a, b, Relation::PrimaryKey, Relation::BelongsTo),
        (NodeKind::Table, NodeKind::Column) => {
            column_table(graph, b, a, Relation::PrimaryKeyOf, Relation::HasColumn)
        }
    }
}

fn column_table(graph: &SchemaGraph, col: NodeId, table: NodeId, pk: Relation, owned: Relation) -> Relation {
    let c = graph.column_index(col).unwrap();
    if graph.columns[c].table != Some(table.0) {
        Relation::NoEdgeCrossType
    } else if graph.primary_keys.contains(&c) {
        pk
    } else {
        owned
    }
}

/// `(n + m) x (n + m)` relation ids for a question of `n` tokens and `graph`.
pub fn build_relation_matrix(graph: &SchemaGraph, link: &LinkMatrix) -> RelationMatrix {
    let (n, m) = (link.question_len(), graph.num_nodes());
    assert_eq!(link.num_nodes(), m, "link matrix does not match schema");
    let size = n + m;
    let mut ids = vec![0; size * size];
    for i in 0..size {
        for j in 0..size {
            let rel = match (i < n, j < n) {
                (true, true) => Relation::QuestionDistance(j as i64 - i as i64),
                (true, false) => Relation::Link(link.get(i, j - n)),
                (false, true) => Relation::Link(link.get(j, i - n)),
                (false, false) => schema_relation(graph, NodeId(i - n), NodeId(j - n)),
            };
            ids[i * size + j] = rel.id();
        }
    }
    RelationMatrix { size, ids }
}
