//! Neural layer families: relational graph convolution, transformer and
//! relation-aware transformer blocks, the graph projection layer and the
//! shared schema-linking prior.

mod attention;
mod prior;
mod projection;
mod rgcn;

pub use attention::{RatLayer, TransformerLayer};
pub use prior::LinkingPrior;
pub use projection::{EncoderState, InjectedAttention, ProjectionConfig, ProjectionLayer, ProjectionOutput};
pub use rgcn::{RgcnGraph, RgcnLayer};

use std::cell::RefCell;

use rand::Rng;
use thiserror::Error;

use crate::numerics::{NumericsError, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum LayerError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("relation id {id} outside vocabulary of {count}")]
    UnknownRelation { id: usize, count: usize },
    #[error("{0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, LayerError>;

/// An attention distribution captured during a traced forward pass.
#[derive(Clone, Debug)]
pub struct AttentionRecord {
    pub layer: String,
    pub probs: Tensor,
}

/// Per-forward context: the tape, the frozen parameters and the mode.
pub struct Fwd<'t> {
    pub tape: &'t Tape,
    pub store: &'t ParamStore,
    pub train: bool,
    trace: Option<RefCell<Vec<AttentionRecord>>>,
}

impl<'t> Fwd<'t> {
    pub fn new(tape: &'t Tape, store: &'t ParamStore, train: bool) -> Self {
        Self {
            tape,
            store,
            train,
            trace: None,
        }
    }

    /// Context that also records every attention distribution.
    pub fn traced(tape: &'t Tape, store: &'t ParamStore, train: bool) -> Self {
        Self {
            trace: Some(RefCell::new(Vec::new())),
            ..Self::new(tape, store, train)
        }
    }

    pub fn p(&self, id: ParamId) -> Var<'t> {
        self.tape.param(self.store, id)
    }

    pub(crate) fn record(&self, layer: &str, probs: Var<'t>) {
        if let Some(trace) = &self.trace {
            trace.borrow_mut().push(AttentionRecord {
                layer: layer.to_string(),
                probs: probs.value(),
            });
        }
    }

    pub fn take_trace(&self) -> Vec<AttentionRecord> {
        self.trace
            .as_ref()
            .map(|t| std::mem::take(&mut *t.borrow_mut()))
            .unwrap_or_default()
    }
}

/// Affine map `x W + b` on row vectors.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, din: usize, dout: usize, rng: &mut R) -> Self {
        Self {
            w: store.add_weight(format!("{name}.w"), &[din, dout], rng),
            b: store.add_zeros(format!("{name}.b"), &[1, dout]),
        }
    }

    /// Zero weight and bias.
    pub fn zeros(store: &mut ParamStore, name: &str, din: usize, dout: usize) -> Self {
        Self {
            w: store.add_zeros(format!("{name}.w"), &[din, dout]),
            b: store.add_zeros(format!("{name}.b"), &[1, dout]),
        }
    }

    pub fn forward<'t>(&self, fwd: &Fwd<'t>, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x.matmul(fwd.p(self.w))?.add_row(fwd.p(self.b))?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gain: store.add_ones(format!("{name}.gain"), &[1, d]),
            bias: store.add_zeros(format!("{name}.bias"), &[1, d]),
        }
    }

    pub fn forward<'t>(&self, fwd: &Fwd<'t>, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x.layer_norm(fwd.p(self.gain), fwd.p(self.bias))?)
    }
}

/// `gate(x) * x + (1 - gate(x)) * residual` with `gate = sigmoid(Linear(x))`.
pub(crate) fn gated<'t>(fwd: &Fwd<'t>, gate: &Linear, x: Var<'t>, residual: Var<'t>) -> Result<Var<'t>> {
    let g = gate.forward(fwd, x)?.sigmoid();
    Ok(g.mul(x)?.add(g.one_minus().mul(residual)?)?)
}
