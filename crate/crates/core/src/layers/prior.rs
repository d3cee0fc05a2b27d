use rand::Rng;

use super::{Fwd, Linear, Result};
use crate::numerics::{ParamId, ParamStore, Var};
use crate::schema::{LinkMatrix, LinkTag};

/// Prior attention score `p_ij = Linear(Embedding(d_ij))`, one scalar per
/// question/schema cell. A single instance is shared by every projection layer.
#[derive(Clone, Debug)]
pub struct LinkingPrior {
    pub embedding: ParamId,
    pub linear: Linear,
}

impl LinkingPrior {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Self {
        Self {
            embedding: store.add_weight(format!("{name}.embedding"), &[LinkTag::ALL.len(), d], rng),
            linear: Linear::new(store, &format!("{name}.linear"), d, 1, rng),
        }
    }

    /// `n x m` score matrix.
    pub fn forward<'t>(&self, fwd: &Fwd<'t>, link: &LinkMatrix) -> Result<Var<'t>> {
        let ids: Vec<usize> = link.tags().iter().map(|t| t.index()).collect();
        let rows = fwd.p(self.embedding).gather_rows(&ids)?;
        let scores = self.linear.forward(fwd, rows)?;
        Ok(scores.reshape(&[link.question_len(), link.num_nodes()])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_tags_give_equal_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let prior = LinkingPrior::new(&mut store, "prior", 6, &mut rng);
        let tape = Tape::new();
        let fwd = Fwd::new(&tape, &store, false);
        let flat = LinkMatrix::filled(3, 4, LinkTag::NoMatch);
        let p = prior.forward(&fwd, &flat).unwrap().value();
        assert_eq!(p.shape(), &[3, 4]);
        assert!(p.data().iter().all(|&v| v == p.data()[0]));

        let mut link = flat.clone();
        link.set(0, 1, LinkTag::ColumnExactMatch);
        link.set(2, 3, LinkTag::ColumnExactMatch);
        let p = prior.forward(&fwd, &link).unwrap().value();
        assert_eq!(p.get(0, 1), p.get(2, 3));
        assert_ne!(p.get(0, 1), p.get(0, 0));
    }

    #[test]
    fn gradient_reaches_only_present_tags() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let prior = LinkingPrior::new(&mut store, "prior", 4, &mut rng);
        let mut link = LinkMatrix::filled(2, 3, LinkTag::NoMatch);
        link.set(1, 2, LinkTag::TablePartialMatch);
        let tape = Tape::new();
        let fwd = Fwd::new(&tape, &store, false);
        let loss = prior.forward(&fwd, &link).unwrap().sum();
        let grads = tape.backward(loss);
        let g = grads.param(prior.embedding).unwrap();
        let present = [LinkTag::NoMatch.index(), LinkTag::TablePartialMatch.index()];
        for tag in 0..LinkTag::ALL.len() {
            let nonzero = g.row(tag).iter().any(|&v| v != 0.0);
            assert_eq!(nonzero, present.contains(&tag), "tag {tag}");
        }
    }
}
