use rand::Rng;

use super::{Fwd, LayerError, LayerNorm, Linear, Result};
use crate::numerics::{concat_cols, ParamId, ParamStore, Var};
use crate::schema::{Relation, RelationMatrix};

/// Multi-head self-attention block: attention, residual + LayerNorm, then
/// FC-ReLU-FC (width `4d`) with a second residual + LayerNorm. Heads are
/// column slices of shared `d x d` projections and are concatenated without
/// an output projection.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub name: String,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
    pub d: usize,
    pub heads: usize,
    pub dropout: f64,
}

struct RelationBias<'a, 't> {
    ids: &'a [usize],
    key: Var<'t>,
    value: Var<'t>,
}

impl TransformerLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        assert!(heads >= 1 && d % heads == 0, "width {d} not divisible by {heads} heads");
        Self {
            name: name.to_string(),
            wq: store.add_weight(format!("{name}.wq"), &[d, d], rng),
            wk: store.add_weight(format!("{name}.wk"), &[d, d], rng),
            wv: store.add_weight(format!("{name}.wv"), &[d, d], rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d),
            ff1: Linear::new(store, &format!("{name}.ff1"), d, 4 * d, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), 4 * d, d, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d),
            d,
            heads,
            dropout,
        }
    }

    pub fn forward<'t>(&self, fwd: &Fwd<'t>, x: Var<'t>) -> Result<Var<'t>> {
        self.block(fwd, x, None)
    }

    fn block<'t>(&self, fwd: &Fwd<'t>, x: Var<'t>, rel: Option<RelationBias<'_, 't>>) -> Result<Var<'t>> {
        if x.cols() != self.d {
            return Err(LayerError::Shape(format!(
                "{}: input width {} but layer width {}",
                self.name,
                x.cols(),
                self.d
            )));
        }
        let len = x.rows();
        let dh = self.d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q_all = x.matmul(fwd.p(self.wq))?;
        let k_all = x.matmul(fwd.p(self.wk))?;
        let v_all = x.matmul(fwd.p(self.wv))?;
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let q = q_all.slice_cols(lo, hi)?;
            let k = k_all.slice_cols(lo, hi)?;
            let v = v_all.slice_cols(lo, hi)?;
            let mut e = q.matmul(k.transpose())?;
            if let Some(rel) = &rel {
                // q_i . r_K[R_ij] for every pair, via a len x |vocab| score table.
                let per_id = q.matmul(rel.key.transpose())?;
                e = e.add(per_id.gather_cols(rel.ids, len)?)?;
            }
            let alpha = e.scale(scale).softmax_rows(None)?;
            fwd.record(&self.name, alpha);
            let alpha = alpha.dropout(self.dropout, fwd.train)?;
            let mut z = alpha.matmul(v)?;
            if let Some(rel) = &rel {
                let weights = alpha.scatter_cols(rel.ids, Relation::COUNT)?;
                z = z.add(weights.matmul(rel.value)?)?;
            }
            heads.push(z);
        }
        let z = concat_cols(&heads)?;
        let y = self.norm1.forward(fwd, x.add(z)?)?;
        let ff = self
            .ff2
            .forward(fwd, self.ff1.forward(fwd, y)?.relu())?
            .dropout(self.dropout, fwd.train)?;
        self.norm2.forward(fwd, y.add(ff)?)
    }
}

/// Transformer block whose attention keys and values carry learned biases
/// indexed by the pairwise relation id, shared across heads.
#[derive(Clone, Debug)]
pub struct RatLayer {
    pub base: TransformerLayer,
    /// `|vocab| x d/H`
    pub rel_key: ParamId,
    pub rel_value: ParamId,
}

impl RatLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        let base = TransformerLayer::new(store, name, d, heads, dropout, rng);
        let dh = d / heads;
        Self {
            rel_key: store.add_weight(format!("{name}.rel_key"), &[Relation::COUNT, dh], rng),
            rel_value: store.add_weight(format!("{name}.rel_value"), &[Relation::COUNT, dh], rng),
            base,
        }
    }

    pub fn forward<'t>(&self, fwd: &Fwd<'t>, x: Var<'t>, relations: &RelationMatrix) -> Result<Var<'t>> {
        if relations.size() != x.rows() {
            return Err(LayerError::Shape(format!(
                "{}: relation matrix of size {} for sequence of {}",
                self.base.name,
                relations.size(),
                x.rows()
            )));
        }
        if let Some(&id) = relations.ids().iter().find(|&&id| id >= Relation::COUNT) {
            return Err(LayerError::UnknownRelation {
                id,
                count: Relation::COUNT,
            });
        }
        let rel = RelationBias {
            ids: relations.ids(),
            key: fwd.p(self.rel_key),
            value: fwd.p(self.rel_value),
        };
        self.base.block(fwd, x, Some(rel))
    }
}
