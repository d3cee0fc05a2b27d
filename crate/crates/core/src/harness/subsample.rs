use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{HarnessError, Result};

/// A reproducible random subset of `round(fraction * len)` items, kept in
/// their original order.
pub fn subsample<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<Vec<T>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(HarnessError::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    let keep = (fraction * items.len() as f64).round() as usize;
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(keep);
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| items[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_reproducibility() {
        let items: Vec<usize> = (0..8625).collect();
        let tenth = subsample(&items, 0.1, 3).unwrap();
        assert_eq!(tenth.len(), 863);
        assert!(tenth.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(tenth, subsample(&items, 0.1, 3).unwrap());
        assert_ne!(tenth, subsample(&items, 0.1, 4).unwrap());
        assert_eq!(subsample(&items, 1.0, 9).unwrap(), items);
        assert!(subsample(&items, 0.0, 0).is_err());
        assert!(subsample(&items, 1.5, 0).is_err());
    }
}
