use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ClassifierError, DatasetItem};
use crate::Category;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<DatasetItem>,
    pub validation: Vec<DatasetItem>,
    pub test: Vec<DatasetItem>,
}

/// `(train, validation, test)` sizes for `n` items: 70% and 20% rounded
/// down, test takes the remainder.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = n * 7 / 10;
    let validation = n * 2 / 10;
    (train, validation, n - train - validation)
}

/// Stratified 70:20:10 split.
///
/// Each category is shuffled on its own (Fisher-Yates, seeded), the `k`-th
/// of `n_c` items of a category gets the rank `(k + 0.5) / n_c`, and all
/// items are merged by rank with taxiway before runway on ties. Cutting the
/// merged list keeps every contiguous range close to the overall category
/// mix.
pub fn split_dataset(items: &[DatasetItem], seed: u64) -> Result<SplitDataset, ClassifierError> {
    let n = items.len();
    if n < 10 {
        return Err(ClassifierError::TooFewItems(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranked: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    for category in Category::ALL {
        let mut idx: Vec<usize> = (0..n).filter(|&i| items[i].category == category).collect();
        idx.shuffle(&mut rng);
        let nc = idx.len() as f64;
        ranked.extend(
            idx.into_iter()
                .enumerate()
                .map(|(k, i)| ((k as f64 + 0.5) / nc, category.index(), i)),
        );
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (n_train, n_val, _) = split_counts(n);
    let mut ordered = ranked.into_iter().map(|(_, _, i)| items[i].clone());
    let train = ordered.by_ref().take(n_train).collect();
    let validation = ordered.by_ref().take(n_val).collect();
    let test = ordered.collect();
    Ok(SplitDataset {
        train,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn items(n_runway: usize, n_taxiway: usize) -> Vec<DatasetItem> {
        (0..n_runway + n_taxiway)
            .map(|i| {
                let c = if i < n_runway {
                    Category::Runway
                } else {
                    Category::Taxiway
                };
                DatasetItem::new(format!("f{i}"), c)
            })
            .collect()
    }

    fn count(v: &[DatasetItem], c: Category) -> usize {
        v.iter().filter(|i| i.category == c).count()
    }

    #[test]
    fn sizes_for_500_and_10() {
        assert_eq!(split_counts(500), (350, 100, 50));
        assert_eq!(split_counts(10), (7, 2, 1));
        let s = split_dataset(&items(250, 250), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (350, 100, 50));
        for (part, size) in [(&s.train, 350), (&s.validation, 100), (&s.test, 50)] {
            assert_eq!(count(part, Category::Runway), size / 2);
        }
        let s = split_dataset(&items(5, 5), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (7, 2, 1));
        assert!(matches!(
            split_dataset(&items(5, 4), 1),
            Err(ClassifierError::TooFewItems(9))
        ));
    }

    #[test]
    fn seeded() {
        let all = items(30, 20);
        assert_eq!(split_dataset(&all, 4).unwrap(), split_dataset(&all, 4).unwrap());
        assert_ne!(split_dataset(&all, 4).unwrap(), split_dataset(&all, 5).unwrap());
    }

    proptest! {
        #[test]
        fn partition_and_stratification(nr in 0usize..120, nt in 0usize..120, seed: u64) {
            prop_assume!(nr + nt >= 10);
            let all = items(nr, nt);
            let s = split_dataset(&all, seed).unwrap();
            let n = all.len();
            let (a, b, c) = split_counts(n);
            prop_assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (a, b, c));
            let mut seen = HashSet::new();
            for it in s.train.iter().chain(&s.validation).chain(&s.test) {
                prop_assert!(seen.insert(it.path.clone()));
            }
            prop_assert_eq!(seen.len(), n);
            for part in [&s.train, &s.validation, &s.test] {
                for (cat, nc) in [(Category::Runway, nr), (Category::Taxiway, nt)] {
                    let ideal = part.len() as f64 * nc as f64 / n as f64;
                    let got = count(part, cat) as f64;
                    prop_assert!((got - ideal).abs() <= 1.0, "{} vs {}", got, ideal);
                }
            }
        }
    }
}
