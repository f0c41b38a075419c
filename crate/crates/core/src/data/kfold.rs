use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::{stream_rng, Stream};

/// Shuffle `0..n` under `seed` and cut it into `k` folds whose sizes differ
/// by at most one (the first `n % k` folds get the extra item). Each fold is
/// returned sorted.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Argument(format!("K must be at least 2, got {k}")));
    }
    if n < k {
        return Err(Error::Argument(format!("cannot split {n} items into {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, Stream::KFold, 0));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = idx[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_division() {
        let folds = kfold_split(10, 5, 1).unwrap();
        assert_eq!(folds.len(), 5);
        assert!(folds.iter().all(|f| f.len() == 2));
    }

    #[test]
    fn pigeonhole_sizes() {
        let mut sizes: Vec<usize> = kfold_split(11, 5, 3).unwrap().iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
    }

    #[test]
    fn too_few_items() {
        assert!(matches!(kfold_split(3, 5, 0), Err(Error::Argument(_))));
        assert!(matches!(kfold_split(3, 1, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn seeded() {
        assert_eq!(kfold_split(20, 4, 9).unwrap(), kfold_split(20, 4, 9).unwrap());
        assert_ne!(kfold_split(20, 4, 9).unwrap(), kfold_split(20, 4, 10).unwrap());
    }

    proptest! {
        #[test]
        fn folds_partition_the_range(n in 2usize..200, k in 2usize..10, seed in any::<u64>()) {
            prop_assume!(n >= k);
            let folds = kfold_split(n, k, seed).unwrap();
            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let max = folds.iter().map(Vec::len).max().unwrap();
            let min = folds.iter().map(Vec::len).min().unwrap();
            prop_assert!(max - min <= 1);
        }
    }
}
