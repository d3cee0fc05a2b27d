use rand::Rng;

use super::{Fwd, LayerError, Result};
use crate::numerics::{concat_cols, ParamId, ParamStore, Tensor, Var};
use crate::schema::Adjacency;

/// Per-relation incoming-edge operators `A_r` with `A_r[i][j] = 1 / c_{i,r}`
/// for every edge `j -r-> i`, where `c_{i,r}` is the number of such edges.
#[derive(Clone, Debug)]
pub struct RgcnGraph {
    num_nodes: usize,
    mats: Vec<Tensor>,
}

impl RgcnGraph {
    pub fn new(adj: &Adjacency) -> Result<Self> {
        let m = adj.num_nodes;
        let mut counts = vec![vec![0usize; m]; adj.num_relations];
        for &(s, r, d) in &adj.edges {
            if r >= adj.num_relations {
                return Err(LayerError::UnknownRelation {
                    id: r,
                    count: adj.num_relations,
                });
            }
            if s >= m || d >= m {
                return Err(LayerError::Shape(format!("edge ({s}, {r}, {d}) outside {m} nodes")));
            }
            counts[r][d] += 1;
        }
        let mut mats = vec![Tensor::zeros(&[m, m]); adj.num_relations];
        for &(s, r, d) in &adj.edges {
            let v = mats[r].get(d, s) + 1.0 / counts[r][d] as f64;
            mats[r].set(d, s, v);
        }
        Ok(Self { num_nodes: m, mats })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_relations(&self) -> usize {
        self.mats.len()
    }

    pub fn operator(&self, r: usize) -> &Tensor {
        &self.mats[r]
    }
}

/// Relational graph convolution with basis-decomposed relation weights:
/// `W_r = sum_b coeff[r][b] V_b`, `h' = ReLU(sum_r A_r h W_r + h W_0)`.
#[derive(Clone, Debug)]
pub struct RgcnLayer {
    /// `B x (d * d)`, one flattened basis matrix per row.
    pub bases: ParamId,
    /// `|R| x B`
    pub coeffs: ParamId,
    pub self_loop: ParamId,
    pub d: usize,
    pub num_relations: usize,
}

impl RgcnLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        num_relations: usize,
        num_bases: usize,
        rng: &mut R,
    ) -> Self {
        assert!(num_bases >= 1, "R-GCN needs at least one basis");
        let bound = 1.0 / (d as f64).sqrt();
        Self {
            bases: store.add(format!("{name}.bases"), Tensor::uniform(&[num_bases, d * d], bound, rng)),
            coeffs: store.add_weight(format!("{name}.coeffs"), &[num_relations, num_bases], rng),
            self_loop: store.add_weight(format!("{name}.self_loop"), &[d, d], rng),
            d,
            num_relations,
        }
    }

    pub fn forward<'t>(&self, fwd: &Fwd<'t>, h: Var<'t>, graph: &RgcnGraph) -> Result<Var<'t>> {
        if graph.num_relations() > self.num_relations {
            return Err(LayerError::UnknownRelation {
                id: graph.num_relations() - 1,
                count: self.num_relations,
            });
        }
        if h.rows() != graph.num_nodes() {
            return Err(LayerError::Shape(format!(
                "R-GCN input has {} rows for {} nodes",
                h.rows(),
                graph.num_nodes()
            )));
        }
        let d = self.d;
        let used = graph.num_relations();
        // Rows r*d..(r+1)*d of the stack hold W_r.
        let coeffs = fwd.p(self.coeffs).slice_rows(0, used)?;
        let stacked = coeffs.matmul(fwd.p(self.bases))?.reshape(&[used * d, d])?;
        let messages: Vec<Var<'t>> = (0..used)
            .map(|r| fwd.tape.constant(graph.operator(r).clone()).matmul(h))
            .collect::<std::result::Result<_, _>>()?;
        let g = concat_cols(&messages)?.matmul(stacked)?;
        Ok(g.add(h.matmul(fwd.p(self.self_loop))?)?.relu())
    }
}
