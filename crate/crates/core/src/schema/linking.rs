//! Deterministic string-match schema linking.
//!
//! Every question n-gram (longest first, up to [`DEFAULT_MAX_NGRAM`] tokens)
//! is compared with every node name and, when a [`ValueIndex`] is supplied,
//! with the database values of every column. A cell keeps the strongest
//! claim: higher [`LinkTag::priority`] wins, then the longer n-gram.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::graph::{NodeId, NodeKind, SchemaGraph};
use super::tokenize::tokenize_question;
use super::SchemaError;

pub const DEFAULT_MAX_NGRAM: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LinkTag {
    TableExactMatch,
    TablePartialMatch,
    ColumnExactMatch,
    ColumnPartialMatch,
    ColumnValueExactMatch,
    ColumnValuePartialMatch,
    NoMatch,
}

impl LinkTag {
    pub const ALL: [LinkTag; 7] = [
        LinkTag::TableExactMatch,
        LinkTag::TablePartialMatch,
        LinkTag::ColumnExactMatch,
        LinkTag::ColumnPartialMatch,
        LinkTag::ColumnValueExactMatch,
        LinkTag::ColumnValuePartialMatch,
        LinkTag::NoMatch,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// exact > partial > value-exact > value-partial > no-match
    pub fn priority(self) -> u8 {
        match self {
            LinkTag::TableExactMatch | LinkTag::ColumnExactMatch => 4,
            LinkTag::TablePartialMatch | LinkTag::ColumnPartialMatch => 3,
            LinkTag::ColumnValueExactMatch => 2,
            LinkTag::ColumnValuePartialMatch => 1,
            LinkTag::NoMatch => 0,
        }
    }

    fn name_match(kind: NodeKind, exact: bool) -> LinkTag {
        match (kind, exact) {
            (NodeKind::Table, true) => LinkTag::TableExactMatch,
            (NodeKind::Table, false) => LinkTag::TablePartialMatch,
            (NodeKind::Column, true) => LinkTag::ColumnExactMatch,
            (NodeKind::Column, false) => LinkTag::ColumnPartialMatch,
        }
    }
}

/// `n x m` grid of tags, question position by schema node.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkMatrix {
    n: usize,
    m: usize,
    tags: Vec<LinkTag>,
}

impl LinkMatrix {
    pub fn filled(n: usize, m: usize, tag: LinkTag) -> Self {
        Self {
            n,
            m,
            tags: vec![tag; n * m],
        }
    }

    pub fn from_tags(n: usize, m: usize, tags: Vec<LinkTag>) -> Self {
        assert_eq!(tags.len(), n * m);
        Self { n, m, tags }
    }

    pub fn question_len(&self) -> usize {
        self.n
    }

    pub fn num_nodes(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> LinkTag {
        self.tags[i * self.m + j]
    }

    pub fn set(&mut self, i: usize, j: usize, tag: LinkTag) {
        self.tags[i * self.m + j] = tag;
    }

    pub fn tags(&self) -> &[LinkTag] {
        &self.tags
    }

    /// Tags of one schema node down the question axis.
    pub fn column(&self, j: usize) -> Vec<LinkTag> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    /// Reorders schema columns: column `j` moves to `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> LinkMatrix {
        let mut out = LinkMatrix::filled(self.n, self.m, LinkTag::NoMatch);
        for i in 0..self.n {
            for j in 0..self.m {
                out.set(i, perm[j], self.get(i, j));
            }
        }
        out
    }
}

/// Database cell values per column, pre-tokenised for n-gram lookup.
#[derive(Clone, Debug, Default)]
pub struct ValueIndex {
    exact: HashMap<Vec<String>, BTreeSet<NodeId>>,
    partial: HashMap<Vec<String>, BTreeSet<NodeId>>,
}

impl ValueIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.exact.is_empty()
    }

    /// Records that `column` holds `value`.
    pub fn insert(&mut self, column: NodeId, value: &str) {
        let tokens = tokenize_question(value);
        if tokens.is_empty() {
            return;
        }
        for len in 1..tokens.len() {
            for start in 0..=tokens.len() - len {
                self.partial
                    .entry(tokens[start..start + len].to_vec())
                    .or_default()
                    .insert(column);
            }
        }
        self.exact.entry(tokens).or_default().insert(column);
    }

    fn exact_hits(&self, gram: &[String]) -> impl Iterator<Item = NodeId> + '_ {
        self.exact.get(gram).into_iter().flatten().copied()
    }

    fn partial_hits(&self, gram: &[String]) -> impl Iterator<Item = NodeId> + '_ {
        self.partial.get(gram).into_iter().flatten().copied()
    }

    /// Loads `<table>.csv` files (header row = column names) for every table
    /// of `graph` found in `dir`. Missing files are skipped.
    pub fn from_csv_dir(dir: &Path, graph: &SchemaGraph) -> Result<Self, SchemaError> {
        let mut index = ValueIndex::new();
        let entries = std::fs::read_dir(dir).map_err(|source| SchemaError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut files: Vec<_> = entries.filter_map(Result::ok).map(|e| e.path()).collect();
        files.sort();
        for path in files {
            let Some(stem) = path
                .extension()
                .filter(|e| e.eq_ignore_ascii_case("csv"))
                .and_then(|_| path.file_stem())
                .and_then(|s| s.to_str())
            else {
                continue;
            };
            let Some(t) = graph.find_table(stem) else {
                continue;
            };
            let csv_err = |e: csv::Error| SchemaError::Parse {
                db_id: Some(graph.db_id.clone()),
                msg: format!("{}: {e}", path.display()),
            };
            let mut reader = csv::Reader::from_path(&path).map_err(csv_err)?;
            let header: Vec<Option<NodeId>> = reader
                .headers()
                .map_err(csv_err)?
                .iter()
                .map(|h| graph.find_column(t, h.trim()).map(|c| graph.column_node(c)))
                .collect();
            for record in reader.records() {
                let record = record.map_err(csv_err)?;
                for (cell, col) in record.iter().zip(&header) {
                    if let Some(col) = col {
                        index.insert(*col, cell);
                    }
                }
            }
        }
        Ok(index)
    }
}

/// Longest-first n-gram scan producing the `n x m` linking grid.
pub fn tag_linking(question: &[String], graph: &SchemaGraph, values: Option<&ValueIndex>) -> LinkMatrix {
    tag_linking_with(question, graph, values, DEFAULT_MAX_NGRAM)
}

pub fn tag_linking_with(
    question: &[String],
    graph: &SchemaGraph,
    values: Option<&ValueIndex>,
    max_ngram: usize,
) -> LinkMatrix {
    let (n, m) = (question.len(), graph.num_nodes());
    let mut link = LinkMatrix::filled(n, m, LinkTag::NoMatch);
    // Length of the n-gram that produced each cell's current tag.
    let mut claim_len = vec![0usize; n * m];
    let mut stamp = |start: usize, len: usize, node: NodeId, tag: LinkTag| {
        for i in start..start + len {
            let cell = i * m + node.0;
            let cur = link.tags[cell];
            if (tag.priority(), len) > (cur.priority(), claim_len[cell]) {
                link.tags[cell] = tag;
                claim_len[cell] = len;
            }
        }
    };
    for len in (1..=max_ngram.min(n)).rev() {
        for start in 0..=n - len {
            let gram = &question[start..start + len];
            for node in graph.nodes() {
                if node == graph.star() {
                    continue;
                }
                let name = graph.tokens(node);
                if name == gram {
                    stamp(start, len, node, LinkTag::name_match(graph.kind(node), true));
                } else if len < name.len() && name.windows(len).any(|w| w == gram) {
                    stamp(start, len, node, LinkTag::name_match(graph.kind(node), false));
                }
            }
            if let Some(values) = values {
                for col in values.exact_hits(gram) {
                    stamp(start, len, col, LinkTag::ColumnValueExactMatch);
                }
                for col in values.partial_hits(gram) {
                    stamp(start, len, col, LinkTag::ColumnValuePartialMatch);
                }
            }
        }
    }
    link
}
