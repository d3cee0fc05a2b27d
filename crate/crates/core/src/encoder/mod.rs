//! Embedding of question and schema tokens, the projection-layer stack and
//! the relation-aware transformer stack over the joint sequence.

mod embedding;

pub use embedding::Vocab;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{
    EncoderState, Fwd, LayerError, LinkingPrior, ProjectionConfig, ProjectionLayer, RatLayer, RgcnGraph,
};
use crate::numerics::{concat_rows, ParamId, ParamStore, Tensor, Var};
use crate::schema::{
    build_relation_matrix, tag_linking, EdgeLabel, LinkMatrix, NodeKind, RelationMatrix, SchemaGraph, ValueIndex,
};

type Result<T> = std::result::Result<T, LayerError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d: usize,
    pub heads: usize,
    pub num_bases: usize,
    /// Number of projection layers (N).
    pub gpnn_layers: usize,
    /// Number of relation-aware transformer layers (M).
    pub rat_layers: usize,
    pub dropout: f64,
    pub scaled_projection_attention: bool,
    pub hash_buckets: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 512,
            heads: 8,
            num_bases: 8,
            gpnn_layers: 4,
            rat_layers: 4,
            dropout: 0.3,
            scaled_projection_attention: false,
            hash_buckets: 256,
        }
    }
}

/// Everything the encoder needs about one question over one schema.
#[derive(Clone, Debug)]
pub struct EncoderInput {
    pub n: usize,
    pub m: usize,
    pub link: LinkMatrix,
    pub relations: RelationMatrix,
    pub graph: RgcnGraph,
    /// Embedding rows of every distinct token (question tokens first).
    token_pieces: Vec<Vec<usize>>,
    /// Token indices making up each schema node name.
    node_tokens: Vec<Vec<usize>>,
    node_types: Vec<usize>,
}

impl EncoderInput {
    pub fn new(vocab: &Vocab, question: &[String], graph: &SchemaGraph, values: Option<&ValueIndex>) -> Result<Self> {
        let link = tag_linking(question, graph, values);
        let relations = build_relation_matrix(graph, &link);
        Self::from_parts(vocab, question, graph, link, relations)
    }

    /// Builds the input from precomputed linking and relation matrices.
    pub fn from_parts(
        vocab: &Vocab,
        question: &[String],
        graph: &SchemaGraph,
        link: LinkMatrix,
        relations: RelationMatrix,
    ) -> Result<Self> {
        let (n, m) = (question.len(), graph.num_nodes());
        if n == 0 {
            return Err(LayerError::Shape("empty question".into()));
        }
        if link.question_len() != n || link.num_nodes() != m || relations.size() != n + m {
            return Err(LayerError::Shape(format!(
                "link {}x{} and relations {} do not match question {n} and schema {m}",
                link.question_len(),
                link.num_nodes(),
                relations.size()
            )));
        }
        let mut token_pieces: Vec<Vec<usize>> = question.iter().map(|t| vocab.pieces(t)).collect();
        let mut node_tokens = Vec::with_capacity(m);
        for node in graph.nodes() {
            let mut ids = Vec::new();
            for tok in graph.tokens(node) {
                ids.push(token_pieces.len());
                token_pieces.push(vocab.pieces(tok));
            }
            node_tokens.push(ids);
        }
        let node_types = graph
            .nodes()
            .map(|v| match graph.kind(v) {
                NodeKind::Table => 0,
                NodeKind::Column => 1,
            })
            .collect();
        Ok(Self {
            n,
            m,
            link,
            relations,
            graph: RgcnGraph::new(&graph.adjacency())?,
            token_pieces,
            node_tokens,
            node_types,
        })
    }

    /// Input whose schema nodes are reordered by `perm` (old -> new index).
    pub fn permuted(&self, graph: &SchemaGraph, perm: &[usize]) -> Result<Self> {
        let n = self.n;
        let mut full = (0..n).collect::<Vec<_>>();
        full.extend(perm.iter().map(|&p| n + p));
        let mut node_tokens = vec![Vec::new(); self.m];
        let mut node_types = vec![0; self.m];
        for j in 0..self.m {
            node_tokens[perm[j]] = self.node_tokens[j].clone();
            node_types[perm[j]] = self.node_types[j];
        }
        Ok(Self {
            n,
            m: self.m,
            link: self.link.permuted(perm),
            relations: self.relations.permuted(&full),
            graph: RgcnGraph::new(&graph.adjacency().permuted(perm))?,
            token_pieces: self.token_pieces.clone(),
            node_tokens,
            node_types,
        })
    }
}

/// Encoder output: `f` is `(n + m) x d`, question rows first.
pub struct EncoderOutput<'t> {
    pub f: Var<'t>,
    pub n: usize,
    pub m: usize,
    /// Question stream after the projection layers.
    pub q_abstract: Var<'t>,
}

impl<'t> EncoderOutput<'t> {
    pub fn question(&self) -> Result<Var<'t>> {
        Ok(self.f.slice_rows(0, self.n)?)
    }

    pub fn schema(&self) -> Result<Var<'t>> {
        Ok(self.f.slice_rows(self.n, self.n + self.m)?)
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub embedding: ParamId,
    /// Row 0: table, row 1: column.
    pub type_embedding: ParamId,
    pub prior: LinkingPrior,
    pub gpnn: Vec<ProjectionLayer>,
    pub rat: Vec<RatLayer>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: &EncoderConfig, vocab: &Vocab, rng: &mut R) -> Self {
        let d = config.d;
        let proj = ProjectionConfig {
            d,
            heads: config.heads,
            num_bases: config.num_bases,
            num_relations: EdgeLabel::ALL.len(),
            dropout: config.dropout,
            scaled_attention: config.scaled_projection_attention,
        };
        Self {
            config: config.clone(),
            embedding: store.add(
                "encoder.embedding",
                Tensor::uniform(&[vocab.rows(), d], 1.0, rng),
            ),
            type_embedding: store.add("encoder.type_embedding", Tensor::uniform(&[2, d], 1.0, rng)),
            prior: LinkingPrior::new(store, "encoder.prior", d, rng),
            gpnn: (0..config.gpnn_layers)
                .map(|l| ProjectionLayer::new(store, &format!("encoder.gpnn.{l}"), &proj, rng))
                .collect(),
            rat: (0..config.rat_layers)
                .map(|l| RatLayer::new(store, &format!("encoder.rat.{l}"), d, config.heads, config.dropout, rng))
                .collect(),
        }
    }

    /// Initial streams `(q0, s0, a0)`.
    pub fn embed<'t>(&self, fwd: &Fwd<'t>, input: &EncoderInput) -> Result<EncoderState<'t>> {
        let tokens = fwd.p(self.embedding).segment_mean(&input.token_pieces)?;
        let q = tokens.slice_rows(0, input.n)?.dropout(self.config.dropout, fwd.train)?;
        let s = tokens
            .segment_mean(&input.node_tokens)?
            .dropout(self.config.dropout, fwd.train)?;
        let a = fwd.p(self.type_embedding).gather_rows(&input.node_types)?;
        Ok(EncoderState { q, s, a })
    }

    pub fn encode<'t>(&self, fwd: &Fwd<'t>, input: &EncoderInput) -> Result<EncoderOutput<'t>> {
        let mut state = self.embed(fwd, input)?;
        if !self.gpnn.is_empty() {
            let prior = self.prior.forward(fwd, &input.link)?;
            for layer in &self.gpnn {
                state = layer.forward(fwd, state, &input.graph, prior)?.state;
            }
        }
        let mut f = concat_rows(&[state.q, state.a])?;
        for layer in &self.rat {
            f = layer.forward(fwd, f, &input.relations)?;
        }
        Ok(EncoderOutput {
            f,
            n: input.n,
            m: input.m,
            q_abstract: state.q,
        })
    }
}
