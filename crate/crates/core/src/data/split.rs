use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::LabeledDataset;
use crate::error::{Error, Result};

/// Seeded stratified split. Each class contributes `round(n_c * test_fraction)`
/// samples to the test side, clamped so both sides keep at least one.
/// Returned subsets preserve the original sample order.
pub fn split(dataset: &LabeledDataset, test_fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; dataset.len()];
    for class in 0..dataset.num_classes() {
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels()[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::Dataset(format!(
                "class {:?} has {} sample(s); stratified split needs at least 2",
                dataset.class_names()[class],
                members.len()
            )));
        }
        let n_test = ((members.len() as f64 * test_fraction).round() as usize).clamp(1, members.len() - 1);
        members.shuffle(&mut rng);
        for &i in &members[..n_test] {
            is_test[i] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&i| is_test[i]);
    Ok((dataset.subset(&train)?, dataset.subset(&test)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::Rng;

    fn dataset(labels: Vec<usize>, classes: usize) -> LabeledDataset {
        let n = labels.len();
        // pixel encodes the sample index so subsets can be traced back
        let images = Tensor::from_fn(vec![n, 1, 1, 1], |i| i as f32 / n as f32).unwrap();
        LabeledDataset::new(images, labels, (0..classes).map(|c| c.to_string()).collect()).unwrap()
    }

    fn origin(ds: &LabeledDataset, n: usize) -> Vec<usize> {
        ds.images().data().iter().map(|&v| (v * n as f32).round() as usize).collect()
    }

    #[test]
    fn balanced_two_class() {
        let ds = dataset((0..20).map(|i| i % 2).collect(), 2);
        let (train, test) = split(&ds, 0.2, 1).unwrap();
        assert_eq!(train.len(), 16);
        assert_eq!(test.len(), 4);
        for c in 0..2 {
            assert_eq!(train.labels().iter().filter(|&&l| l == c).count(), 8);
            assert_eq!(test.labels().iter().filter(|&&l| l == c).count(), 2);
        }
        let (train2, test2) = split(&ds, 0.2, 1).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn singleton_class_is_rejected() {
        let ds = dataset(vec![0, 0, 1], 2);
        assert!(matches!(split(&ds, 0.5, 0), Err(Error::Dataset(_))));
        assert!(split(&ds, 0.0, 0).is_err());
        assert!(split(&ds, 1.0, 0).is_err());
    }

    #[test]
    fn disjoint_exhaustive_and_stratified() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..100 {
            let classes = rng.random_range(2..5);
            let n = rng.random_range(2 * classes..60);
            let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
            labels.shuffle(&mut rng);
            let frac = rng.random_range(0.05..0.95);
            let ds = dataset(labels.clone(), classes);
            let (train, test) = split(&ds, frac, case).unwrap();
            let mut seen: Vec<usize> = origin(&train, n).into_iter().chain(origin(&test, n)).collect();
            seen.sort();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
            for c in 0..classes {
                let total = labels.iter().filter(|&&l| l == c).count() as f64;
                let in_test = test.labels().iter().filter(|&&l| l == c).count() as f64;
                assert!((in_test - total * frac).abs() <= 1.0, "case {case} class {c}");
            }
        }
    }
}
