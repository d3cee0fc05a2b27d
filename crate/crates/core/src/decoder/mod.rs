//! Grammar-constrained coarse-to-fine decoding.
//!
//! A gated recurrent spine reads the action sequence with column, table and
//! literal choices replaced by typed placeholders (the skeleton). Rule
//! choices are scored at each step under the grammar mask. The detail pass
//! then scores column and table slots with a bilinear pointer over the
//! schema rows of the encoder output, conditioned on the spine state at the
//! slot and a summary of the whole skeleton.

mod beam;
mod literals;

pub use beam::{DecodeOptions, Decoded, StepOptions};
pub use literals::{fill_literals, question_literals};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::EncoderOutput;
use crate::grammar::{rules, Action, Cursor, GrammarError, Kind, Slot};
use crate::layers::{Fwd, LayerError, Linear};
use crate::numerics::{concat_cols, concat_rows, NumericsError, ParamId, ParamStore, Tensor, Var};
use crate::schema::{NodeId, NodeKind, SchemaGraph};

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("no complete derivation within {max_len} actions")]
    DecodeTimeout { max_len: usize, best_partial: Vec<Action> },
    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, DecoderError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub d: usize,
    pub beam_size: usize,
    pub max_len: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            d: 512,
            beam_size: 5,
            max_len: 128,
        }
    }
}

/// Rows of the action embedding: one per rule, then the three placeholders.
fn embedding_row(slot_or_rule: SkeletonToken) -> usize {
    match slot_or_rule {
        SkeletonToken::Rule(r) => r.0,
        SkeletonToken::Placeholder(Slot::Column) => rules::rule_count(),
        SkeletonToken::Placeholder(Slot::Table) => rules::rule_count() + 1,
        SkeletonToken::Placeholder(_) => rules::rule_count() + 2,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum SkeletonToken {
    Rule(rules::RuleId),
    Placeholder(Slot),
}

impl SkeletonToken {
    fn of(action: &Action) -> Self {
        match action {
            Action::ApplyRule(r) => SkeletonToken::Rule(*r),
            Action::SelectColumn(_) => SkeletonToken::Placeholder(Slot::Column),
            Action::SelectTable(_) => SkeletonToken::Placeholder(Slot::Table),
            Action::EmitLiteral(_) => SkeletonToken::Placeholder(Slot::Literal),
        }
    }
}

/// Single-layer gated recurrent unit.
#[derive(Clone, Debug)]
pub struct GruCell {
    input: Linear,
    hidden: Linear,
    d: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, din: usize, d: usize, rng: &mut R) -> Self {
        Self {
            input: Linear::new(store, &format!("{name}.input"), din, 3 * d, rng),
            hidden: Linear::new(store, &format!("{name}.hidden"), d, 3 * d, rng),
            d,
        }
    }

    pub fn forward<'t>(&self, fwd: &Fwd<'t>, x: Var<'t>, h: Var<'t>) -> Result<Var<'t>> {
        let d = self.d;
        let gx = self.input.forward(fwd, x)?;
        let gh = self.hidden.forward(fwd, h)?;
        let r = gx.slice_cols(0, d)?.add(gh.slice_cols(0, d)?)?.sigmoid();
        let z = gx.slice_cols(d, 2 * d)?.add(gh.slice_cols(d, 2 * d)?)?.sigmoid();
        let n = gx
            .slice_cols(2 * d, 3 * d)?
            .add(r.mul(gh.slice_cols(2 * d, 3 * d)?)?)?
            .tanh();
        // (1 - z) * n + z * h
        Ok(n.add(z.mul(h.sub(n)?)?)?)
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub config: DecoderConfig,
    action_embedding: ParamId,
    init: Linear,
    cell: GruCell,
    attention: ParamId,
    skeleton_out: Linear,
    rule_out: Linear,
    detail_query: Linear,
    detail_summary: ParamId,
    pointer: ParamId,
}

/// Per-example precomputation over the encoder output.
pub(crate) struct Memory<'t> {
    f: Var<'t>,
    keys_t: Var<'t>,
    pointer_t: Var<'t>,
    column_mask: Vec<bool>,
    table_mask: Vec<bool>,
    scale: f64,
}

/// Spine state after consuming a prefix.
#[derive(Clone, Copy)]
pub(crate) struct SpineState<'t> {
    pub h: Var<'t>,
    pub ctx: Var<'t>,
}

/// Teacher-forced loss terms; `total = skeleton + detail`.
pub struct DecodeLoss<'t> {
    pub total: Var<'t>,
    pub skeleton: f64,
    pub detail: f64,
    pub rule_steps: usize,
    pub pointer_steps: usize,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: &DecoderConfig, rng: &mut R) -> Self {
        let d = config.d;
        let bound = (1.0 / d as f64).sqrt();
        Self {
            config: config.clone(),
            action_embedding: store.add(
                "decoder.action_embedding",
                Tensor::uniform(&[rules::rule_count() + 3, d], bound, rng),
            ),
            init: Linear::new(store, "decoder.init", d, d, rng),
            cell: GruCell::new(store, "decoder.cell", 2 * d, d, rng),
            attention: store.add_weight("decoder.attention", &[d, d], rng),
            skeleton_out: Linear::new(store, "decoder.skeleton_out", 2 * d, d, rng),
            rule_out: Linear::new(store, "decoder.rule_out", d, rules::rule_count(), rng),
            detail_query: Linear::new(store, "decoder.detail_query", 2 * d, d, rng),
            detail_summary: store.add_weight("decoder.detail_summary", &[d, d], rng),
            // Zero start: the untrained pointer is uniform over legal nodes.
            pointer: store.add_zeros("decoder.pointer", &[d, d]),
        }
    }

    pub(crate) fn memory<'t>(&self, fwd: &Fwd<'t>, enc: &EncoderOutput<'t>, graph: &SchemaGraph) -> Result<Memory<'t>> {
        let m = graph.num_nodes();
        if enc.m != m {
            return Err(DecoderError::InvalidArgument(format!(
                "encoder output has {} schema rows, graph {} has {m} nodes",
                enc.m, graph.db_id
            )));
        }
        let schema = enc.schema()?;
        let column_mask: Vec<bool> = graph.nodes().map(|n| graph.kind(n) == NodeKind::Column).collect();
        Ok(Memory {
            f: enc.f,
            keys_t: enc.f.matmul(fwd.p(self.attention))?.transpose(),
            pointer_t: schema.matmul(fwd.p(self.pointer))?.transpose(),
            table_mask: column_mask.iter().map(|c| !c).collect(),
            column_mask,
            scale: 1.0 / (self.config.d as f64).sqrt(),
        })
    }

    fn attend<'t>(&self, mem: &Memory<'t>, h: Var<'t>) -> Result<Var<'t>> {
        let alpha = h.matmul(mem.keys_t)?.scale(mem.scale).softmax_rows(None)?;
        Ok(alpha.matmul(mem.f)?)
    }

    pub(crate) fn initial_state<'t>(&self, fwd: &Fwd<'t>, mem: &Memory<'t>) -> Result<SpineState<'t>> {
        let h = self.init.forward(fwd, mem.f.mean_rows())?.tanh();
        Ok(SpineState {
            h,
            ctx: self.attend(mem, h)?,
        })
    }

    pub(crate) fn advance<'t>(
        &self,
        fwd: &Fwd<'t>,
        mem: &Memory<'t>,
        state: SpineState<'t>,
        token: SkeletonToken,
    ) -> Result<SpineState<'t>> {
        let emb = fwd.p(self.action_embedding).gather_rows(&[embedding_row(token)])?;
        let x = concat_cols(&[emb, state.ctx])?;
        let h = self.cell.forward(fwd, x, state.h)?;
        Ok(SpineState {
            h,
            ctx: self.attend(mem, h)?,
        })
    }

    /// Rule logits (`k x rules`) for stacked spine states.
    pub(crate) fn rule_logits<'t>(&self, fwd: &Fwd<'t>, h: Var<'t>, ctx: Var<'t>) -> Result<Var<'t>> {
        let o = self.skeleton_out.forward(fwd, concat_cols(&[h, ctx])?)?.tanh();
        Ok(self.rule_out.forward(fwd, o)?)
    }

    /// Pointer logits (`k x m`) for stacked slot states given the skeleton summary.
    pub(crate) fn pointer_logits<'t>(
        &self,
        fwd: &Fwd<'t>,
        mem: &Memory<'t>,
        h: Var<'t>,
        ctx: Var<'t>,
        summary: Var<'t>,
    ) -> Result<Var<'t>> {
        let q = self
            .detail_query
            .forward(fwd, concat_cols(&[h, ctx])?)?
            .add_row(summary.matmul(fwd.p(self.detail_summary))?)?
            .tanh();
        Ok(q.matmul(mem.pointer_t)?)
    }

    pub(crate) fn node_mask<'a>(&self, mem: &'a Memory<'_>, slot: Slot) -> &'a [bool] {
        match slot {
            Slot::Table => &mem.table_mask,
            _ => &mem.column_mask,
        }
    }

    /// Teacher-forced loss of a grammar-consistent action prefix.
    ///
    /// The skeleton term covers rule steps, the detail term column and table
    /// steps. Literal steps contribute nothing.
    pub fn loss<'t>(
        &self,
        fwd: &Fwd<'t>,
        enc: &EncoderOutput<'t>,
        graph: &SchemaGraph,
        gold: &[Action],
    ) -> Result<DecodeLoss<'t>> {
        if gold.is_empty() {
            return Err(GrammarError::IncompleteSequence.into());
        }
        let mem = self.memory(fwd, enc, graph)?;
        let mut state = self.initial_state(fwd, &mem)?;
        let mut cursor = Cursor::new();

        let mut spine_h = Vec::with_capacity(gold.len());
        let (mut rule_h, mut rule_ctx, mut rule_targets, mut rule_mask) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let (mut slot_h, mut slot_ctx, mut slot_targets, mut slot_mask) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());

        for (t, action) in gold.iter().enumerate() {
            let slot = cursor.frontier();
            cursor.apply(action).map_err(|e| match e {
                GrammarError::GrammarViolation { msg, .. } => GrammarError::GrammarViolation {
                    position: Some(t),
                    msg,
                },
                other => other,
            })?;
            spine_h.push(state.h);
            match (action, slot) {
                (Action::ApplyRule(r), Some(Slot::Kind(kind))) => {
                    rule_h.push(state.h);
                    rule_ctx.push(state.ctx);
                    rule_targets.push(r.0);
                    rule_mask.extend(legal_rules(kind));
                }
                (Action::SelectColumn(n) | Action::SelectTable(n), Some(slot)) => {
                    let mask = self.node_mask(&mem, slot);
                    if !mask.get(n.0).copied().unwrap_or(false) {
                        return Err(GrammarError::GrammarViolation {
                            position: Some(t),
                            msg: format!("{n} is not a legal {slot:?} of {}", graph.db_id),
                        }
                        .into());
                    }
                    slot_h.push(state.h);
                    slot_ctx.push(state.ctx);
                    slot_targets.push(n.0);
                    slot_mask.extend_from_slice(mask);
                }
                _ => {}
            }
            if t + 1 < gold.len() {
                state = self.advance(fwd, &mem, state, SkeletonToken::of(action))?;
            }
        }

        let mut terms = Vec::new();
        let (mut skeleton, mut detail) = (0.0, 0.0);
        if !rule_targets.is_empty() {
            let logits = self.rule_logits(fwd, concat_rows(&rule_h)?, concat_rows(&rule_ctx)?)?;
            let nll = logits.masked_nll(Some(&rule_mask), &rule_targets)?;
            skeleton = nll.item();
            terms.push(nll);
        }
        if !slot_targets.is_empty() {
            let summary = concat_rows(&spine_h)?.mean_rows();
            let logits = self.pointer_logits(fwd, &mem, concat_rows(&slot_h)?, concat_rows(&slot_ctx)?, summary)?;
            let nll = logits.masked_nll(Some(&slot_mask), &slot_targets)?;
            detail = nll.item();
            terms.push(nll);
        }
        let total = match terms.as_slice() {
            [] => fwd.tape.constant(Tensor::scalar(0.0)),
            [one] => *one,
            [a, b] => a.add(*b)?,
            _ => unreachable!(),
        };
        Ok(DecodeLoss {
            total,
            skeleton,
            detail,
            rule_steps: rule_targets.len(),
            pointer_steps: slot_targets.len(),
        })
    }
}

/// Mask over rule ids: rules headed by `kind`.
pub fn legal_rules(kind: Kind) -> Vec<bool> {
    let mut mask = vec![false; rules::rule_count()];
    for r in rules::rules_for(kind) {
        mask[r.0] = true;
    }
    mask
}

/// Nodes a terminal slot may select.
pub fn legal_nodes(graph: &SchemaGraph, slot: Slot) -> Vec<NodeId> {
    let want = match slot {
        Slot::Table => NodeKind::Table,
        _ => NodeKind::Column,
    };
    graph.nodes().filter(|&n| graph.kind(n) == want).collect()
}
