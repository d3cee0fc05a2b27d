use std::fmt;

use super::tokenize::normalize_name;
use super::SchemaError;

/// Dense node index: tables first, then columns (column 0 is `*`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Table,
    Column,
}

/// Labels of directed schema edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeLabel {
    /// column -> owning table
    BelongsTo,
    /// table -> column
    HasColumn,
    /// referencing column -> referenced column
    ForeignKeyForward,
    ForeignKeyBackward,
    /// primary-key column -> table
    PrimaryKey,
    PrimaryKeyOf,
    SelfLoop,
}

impl EdgeLabel {
    pub const ALL: [EdgeLabel; 7] = [
        EdgeLabel::BelongsTo,
        EdgeLabel::HasColumn,
        EdgeLabel::ForeignKeyForward,
        EdgeLabel::ForeignKeyBackward,
        EdgeLabel::PrimaryKey,
        EdgeLabel::PrimaryKeyOf,
        EdgeLabel::SelfLoop,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn reverse(self) -> EdgeLabel {
        match self {
            EdgeLabel::BelongsTo => EdgeLabel::HasColumn,
            EdgeLabel::HasColumn => EdgeLabel::BelongsTo,
            EdgeLabel::ForeignKeyForward => EdgeLabel::ForeignKeyBackward,
            EdgeLabel::ForeignKeyBackward => EdgeLabel::ForeignKeyForward,
            EdgeLabel::PrimaryKey => EdgeLabel::PrimaryKeyOf,
            EdgeLabel::PrimaryKeyOf => EdgeLabel::PrimaryKey,
            EdgeLabel::SelfLoop => EdgeLabel::SelfLoop,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub src: NodeId,
    pub label: EdgeLabel,
    pub dst: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    /// Name as written in the database, used when emitting SQL.
    pub name: String,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub tokens: Vec<String>,
    /// Owning table index; `None` only for `*`.
    pub table: Option<usize>,
    pub value_type: String,
}

/// Typed relational graph of one database schema.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemaGraph {
    pub db_id: String,
    pub tables: Vec<Table>,
    pub columns: Vec<Column>,
    pub primary_keys: Vec<usize>,
    pub foreign_keys: Vec<(usize, usize)>,
    pub edges: Vec<Edge>,
}

/// Column description used by [`SchemaGraph::new`].
#[derive(Clone, Debug)]
pub struct ColumnSpec {
    pub table: Option<usize>,
    pub name: String,
    pub value_type: String,
}

impl ColumnSpec {
    pub fn new(table: Option<usize>, name: &str, value_type: &str) -> Self {
        Self {
            table,
            name: name.to_string(),
            value_type: value_type.to_string(),
        }
    }
}

impl SchemaGraph {
    /// Builds a graph and materialises every edge with its reverse.
    ///
    /// `columns` must start with `*` (owner `None`); indices in
    /// `primary_keys` and `foreign_keys` refer to positions in `columns`.
    pub fn new(
        db_id: &str,
        table_names: &[String],
        columns: Vec<ColumnSpec>,
        primary_keys: Vec<usize>,
        foreign_keys: Vec<(usize, usize)>,
    ) -> Result<Self, SchemaError> {
        let invalid = |msg: String| SchemaError::InvalidSchema {
            db_id: db_id.to_string(),
            msg,
        };
        if table_names.is_empty() {
            return Err(invalid("schema has no tables".into()));
        }
        let tables: Vec<Table> = table_names
            .iter()
            .map(|n| Table {
                name: n.clone(),
                tokens: normalize_name(n),
            })
            .collect();
        let mut cols = Vec::with_capacity(columns.len());
        for (i, c) in columns.into_iter().enumerate() {
            match c.table {
                Some(t) if t >= tables.len() => {
                    return Err(invalid(format!(
                        "column {i} ({}) owned by table {t}, but only {} tables exist",
                        c.name,
                        tables.len()
                    )))
                }
                None if c.name != "*" => {
                    return Err(invalid(format!("column {i} ({}) has no owning table", c.name)))
                }
                Some(_) if c.name == "*" => {
                    return Err(invalid("the `*` column cannot have an owner".into()))
                }
                _ => {}
            }
            let tokens = if c.name == "*" {
                vec!["*".to_string()]
            } else {
                normalize_name(&c.name)
            };
            cols.push(Column {
                name: c.name,
                tokens,
                table: c.table,
                value_type: c.value_type,
            });
        }
        if cols.first().map(|c| c.name.as_str()) != Some("*") {
            return Err(invalid("column 0 must be `*`".into()));
        }
        let in_range = |c: usize| c < cols.len();
        for &pk in &primary_keys {
            if !in_range(pk) || cols[pk].table.is_none() {
                return Err(invalid(format!("primary key refers to invalid column {pk}")));
            }
        }
        for &(a, b) in &foreign_keys {
            if !in_range(a) || !in_range(b) || a == 0 || b == 0 {
                return Err(invalid(format!("dangling foreign key [{a}, {b}]")));
            }
        }

        let n_tables = tables.len();
        let col_node = |c: usize| NodeId(n_tables + c);
        let mut edges = Vec::new();
        let mut push_pair = |src: NodeId, label: EdgeLabel, dst: NodeId| {
            edges.push(Edge { src, label, dst });
            edges.push(Edge {
                src: dst,
                label: label.reverse(),
                dst: src,
            });
        };
        for (c, col) in cols.iter().enumerate() {
            if let Some(t) = col.table {
                push_pair(col_node(c), EdgeLabel::BelongsTo, NodeId(t));
            }
        }
        for &pk in &primary_keys {
            let t = cols[pk].table.expect("checked above");
            push_pair(col_node(pk), EdgeLabel::PrimaryKey, NodeId(t));
        }
        for &(a, b) in &foreign_keys {
            push_pair(col_node(a), EdgeLabel::ForeignKeyForward, col_node(b));
        }

        Ok(Self {
            db_id: db_id.to_string(),
            tables,
            columns: cols,
            primary_keys,
            foreign_keys,
            edges,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.tables.len() + self.columns.len()
    }

    pub fn num_tables(&self) -> usize {
        self.tables.len()
    }

    pub fn table_node(&self, t: usize) -> NodeId {
        NodeId(t)
    }

    pub fn column_node(&self, c: usize) -> NodeId {
        NodeId(self.tables.len() + c)
    }

    pub fn star(&self) -> NodeId {
        self.column_node(0)
    }

    pub fn kind(&self, node: NodeId) -> NodeKind {
        if node.0 < self.tables.len() {
            NodeKind::Table
        } else {
            NodeKind::Column
        }
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.0 < self.num_nodes()
    }

    /// Table index of a table node.
    pub fn table_index(&self, node: NodeId) -> Option<usize> {
        (node.0 < self.tables.len()).then_some(node.0)
    }

    /// Column index of a column node.
    pub fn column_index(&self, node: NodeId) -> Option<usize> {
        (node.0 >= self.tables.len() && node.0 < self.num_nodes()).then(|| node.0 - self.tables.len())
    }

    /// Owning table index of a column node (`None` for `*` and tables).
    pub fn owner(&self, node: NodeId) -> Option<usize> {
        self.column_index(node).and_then(|c| self.columns[c].table)
    }

    pub fn tokens(&self, node: NodeId) -> &[String] {
        match self.column_index(node) {
            Some(c) => &self.columns[c].tokens,
            None => &self.tables[node.0].tokens,
        }
    }

    pub fn name(&self, node: NodeId) -> &str {
        match self.column_index(node) {
            Some(c) => &self.columns[c].name,
            None => &self.tables[node.0].name,
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.num_nodes()).map(NodeId)
    }

    /// Finds a table by name, case-insensitively.
    pub fn find_table(&self, name: &str) -> Option<usize> {
        self.tables
            .iter()
            .position(|t| t.name.eq_ignore_ascii_case(name))
    }

    /// Finds a column of table `t` by name, case-insensitively.
    pub fn find_column(&self, t: usize, name: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.table == Some(t) && c.name.eq_ignore_ascii_case(name))
    }

    /// Foreign-key column pairs (referencing, referenced) linking tables `a` and `b`.
    pub fn foreign_keys_between(&self, a: usize, b: usize) -> Vec<(usize, usize)> {
        self.foreign_keys
            .iter()
            .copied()
            .filter(|&(x, y)| {
                let (tx, ty) = (self.columns[x].table, self.columns[y].table);
                (tx == Some(a) && ty == Some(b)) || (tx == Some(b) && ty == Some(a))
            })
            .collect()
    }

    /// Edge list with relation ids for message passing.
    pub fn adjacency(&self) -> Adjacency {
        Adjacency {
            num_nodes: self.num_nodes(),
            num_relations: EdgeLabel::ALL.len(),
            edges: self
                .edges
                .iter()
                .map(|e| (e.src.0, e.label.index(), e.dst.0))
                .collect(),
        }
    }

    /// True when every edge has its reverse present.
    pub fn reverse_edges_complete(&self) -> bool {
        use std::collections::HashSet;
        let set: HashSet<_> = self.edges.iter().copied().collect();
        self.edges.iter().all(|e| {
            set.contains(&Edge {
                src: e.dst,
                label: e.label.reverse(),
                dst: e.src,
            })
        })
    }
}

/// Directed, relation-labelled edge list over dense node ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    pub num_nodes: usize,
    pub num_relations: usize,
    /// `(source, relation, destination)`
    pub edges: Vec<(usize, usize, usize)>,
}

impl Adjacency {
    /// Applies `perm` (old id -> new id) to every node.
    pub fn permuted(&self, perm: &[usize]) -> Adjacency {
        Adjacency {
            num_nodes: self.num_nodes,
            num_relations: self.num_relations,
            edges: self
                .edges
                .iter()
                .map(|&(s, r, d)| (perm[s], r, perm[d]))
                .collect(),
        }
    }
}
