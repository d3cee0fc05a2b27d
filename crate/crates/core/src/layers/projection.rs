use rand::Rng;

use super::{gated, Fwd, LayerError, Linear, Result, RgcnGraph, RgcnLayer, TransformerLayer};
use crate::numerics::{ParamId, ParamStore, Tensor, Var};

/// The three parallel streams of the projection encoder.
#[derive(Clone, Copy, Debug)]
pub struct EncoderState<'t> {
    /// `n x d` question
    pub q: Var<'t>,
    /// `m x d` semantic schema
    pub s: Var<'t>,
    /// `m x d` abstract schema
    pub a: Var<'t>,
}

#[derive(Clone, Debug)]
pub struct ProjectionConfig {
    pub d: usize,
    /// Heads of the question-stream transformer.
    pub heads: usize,
    pub num_bases: usize,
    pub num_relations: usize,
    pub dropout: f64,
    /// Divide question/schema scores by `sqrt(d)`. Off by default.
    pub scaled_attention: bool,
}

/// Fixed question-to-schema attention and mention scores, replacing the
/// computed ones. Used to probe the structure of the update.
#[derive(Clone, Debug)]
pub struct InjectedAttention {
    /// `n x m`, row-stochastic
    pub alpha: Tensor,
    /// `1 x m`
    pub u: Tensor,
}

pub struct ProjectionOutput<'t> {
    pub state: EncoderState<'t>,
    /// Gated question update before the question transformer.
    pub q_bar: Var<'t>,
    /// Question-to-schema attention, `n x m`.
    pub alpha: Tensor,
    /// Schema-to-question attention, `m x n`.
    pub beta: Tensor,
    /// Mention scores (column maxima of `alpha`), `1 x m`.
    pub u: Tensor,
}

/// One graph projection layer: question/schema attention whose values come
/// from the abstract stream, followed by R-GCN over both schema streams and
/// a transformer over the question.
#[derive(Clone, Debug)]
pub struct ProjectionLayer {
    pub name: String,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv_question: ParamId,
    pub wv_semantic: ParamId,
    pub wv_abstract: ParamId,
    pub gate_question: Linear,
    pub gate_semantic: Linear,
    pub gate_abstract: Linear,
    pub rgcn_abstract: RgcnLayer,
    pub rgcn_semantic: RgcnLayer,
    pub transformer: TransformerLayer,
    pub config: ProjectionConfig,
}

impl ProjectionLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: &ProjectionConfig, rng: &mut R) -> Self {
        let d = config.d;
        Self {
            name: name.to_string(),
            wq: store.add_weight(format!("{name}.wq"), &[d, d], rng),
            wk: store.add_weight(format!("{name}.wk"), &[d, d], rng),
            wv_question: store.add_weight(format!("{name}.wv_question"), &[d, d], rng),
            wv_semantic: store.add_weight(format!("{name}.wv_semantic"), &[d, d], rng),
            wv_abstract: store.add_weight(format!("{name}.wv_abstract"), &[d, d], rng),
            gate_question: Linear::zeros(store, &format!("{name}.gate_question"), d, d),
            gate_semantic: Linear::zeros(store, &format!("{name}.gate_semantic"), d, d),
            gate_abstract: Linear::zeros(store, &format!("{name}.gate_abstract"), d, d),
            rgcn_abstract: RgcnLayer::new(
                store,
                &format!("{name}.rgcn_abstract"),
                d,
                config.num_relations,
                config.num_bases,
                rng,
            ),
            rgcn_semantic: RgcnLayer::new(
                store,
                &format!("{name}.rgcn_semantic"),
                d,
                config.num_relations,
                config.num_bases,
                rng,
            ),
            transformer: TransformerLayer::new(
                store,
                &format!("{name}.transformer"),
                d,
                config.heads,
                config.dropout,
                rng,
            ),
            config: config.clone(),
        }
    }

    pub fn forward<'t>(
        &self,
        fwd: &Fwd<'t>,
        state: EncoderState<'t>,
        graph: &RgcnGraph,
        prior: Var<'t>,
    ) -> Result<ProjectionOutput<'t>> {
        self.forward_with(fwd, state, graph, prior, None)
    }

    pub fn forward_with<'t>(
        &self,
        fwd: &Fwd<'t>,
        state: EncoderState<'t>,
        graph: &RgcnGraph,
        prior: Var<'t>,
        injected: Option<&InjectedAttention>,
    ) -> Result<ProjectionOutput<'t>> {
        let EncoderState { q, s, a } = state;
        let (n, m) = (q.rows(), s.rows());
        if a.rows() != m || prior.shape() != [n, m] {
            return Err(LayerError::Shape(format!(
                "{}: question {n}, semantic {m}, abstract {}, prior {:?}",
                self.name,
                a.rows(),
                prior.shape()
            )));
        }
        let mut e = q.matmul(fwd.p(self.wq))?.matmul(s.matmul(fwd.p(self.wk))?.transpose())?;
        if self.config.scaled_attention {
            e = e.scale(1.0 / (self.config.d as f64).sqrt());
        }
        let e = e.add(prior)?;

        let (alpha, u) = match injected {
            Some(inj) => (fwd.tape.constant(inj.alpha.clone()), fwd.tape.constant(inj.u.clone())),
            None => {
                let alpha = e.softmax_rows(None)?;
                (alpha, alpha.max_rows().0)
            }
        };
        fwd.record(&format!("{}.question", self.name), alpha);
        let a_hat = a.mul_col(u.transpose())?;
        let alpha_d = alpha.dropout(self.config.dropout, fwd.train)?;
        let b = alpha_d.matmul(a_hat.matmul(fwd.p(self.wv_question))?)?;
        let q_bar = gated(fwd, &self.gate_question, b, q)?;

        let beta = e.transpose().softmax_rows(None)?;
        fwd.record(&format!("{}.schema", self.name), beta);
        let beta_d = beta.dropout(self.config.dropout, fwd.train)?;
        let c_s = beta_d.matmul(q.matmul(fwd.p(self.wv_semantic))?)?;
        let s_bar = gated(fwd, &self.gate_semantic, c_s, s)?;
        let c_a = beta_d.matmul(q.matmul(fwd.p(self.wv_abstract))?)?;
        let a_bar = gated(fwd, &self.gate_abstract, c_a, a_hat)?;

        let state = EncoderState {
            q: self.transformer.forward(fwd, q_bar)?,
            s: self.rgcn_semantic.forward(fwd, s_bar, graph)?,
            a: self.rgcn_abstract.forward(fwd, a_bar, graph)?,
        };
        Ok(ProjectionOutput {
            state,
            q_bar,
            alpha: alpha.value(),
            beta: beta.value(),
            u: u.value(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;
    use crate::schema::Adjacency;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (ParamStore, ProjectionLayer, RgcnGraph, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let config = ProjectionConfig {
            d: 4,
            heads: 2,
            num_bases: 2,
            num_relations: 2,
            dropout: 0.0,
            scaled_attention: false,
        };
        let layer = ProjectionLayer::new(&mut store, "proj", &config, &mut rng);
        let graph = RgcnGraph::new(&Adjacency {
            num_nodes: 2,
            num_relations: 2,
            edges: vec![(0, 0, 1), (1, 1, 0)],
        })
        .unwrap();
        (store, layer, graph, rng)
    }

    #[test]
    fn zero_gate_halves_update_and_u_is_column_max() {
        let (store, layer, graph, mut rng) = setup(11);
        let tape = Tape::new();
        let fwd = Fwd::new(&tape, &store, false);
        let state = EncoderState {
            q: tape.constant(Tensor::uniform(&[3, 4], 1.0, &mut rng)),
            s: tape.constant(Tensor::uniform(&[2, 4], 1.0, &mut rng)),
            a: tape.constant(Tensor::uniform(&[2, 4], 1.0, &mut rng)),
        };
        let prior = tape.constant(Tensor::uniform(&[3, 2], 1.0, &mut rng));
        let out = layer.forward(&fwd, state, &graph, prior).unwrap();
        for j in 0..2 {
            let max = (0..3).map(|i| out.alpha.get(i, j)).fold(f64::MIN, f64::max);
            assert_eq!(out.u.get(0, j), max);
        }
        // b recomputed by hand from alpha, u and the abstract stream.
        let a_hat = {
            let mut t = state.a.value();
            for j in 0..2 {
                for c in 0..4 {
                    t.set(j, c, t.get(j, c) * out.u.get(0, j));
                }
            }
            t
        };
        let b = out
            .alpha
            .matmul(&a_hat.matmul(store.get(layer.wv_question)).unwrap())
            .unwrap();
        let q = state.q.value();
        let q_bar = out.q_bar.value();
        for p in 0..12 {
            let expect = 0.5 * b.data()[p] + 0.5 * q.data()[p];
            assert!((q_bar.data()[p] - expect).abs() < 1e-15);
        }
    }
}
