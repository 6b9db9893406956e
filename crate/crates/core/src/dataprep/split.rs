use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.2,
            seed: 0,
            stratified: true,
        }
    }
}

/// Train and test row indices, each sorted ascending.
///
/// Stratified: every class contributes `round(fraction · size)` test rows,
/// clamped so each side keeps at least one row of the class.
pub fn split_indices(labels: &[usize], num_classes: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let f = spec.test_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Invalid(format!("test fraction {f} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups: Vec<Vec<usize>> = if spec.stratified {
        let mut by_class = vec![Vec::new(); num_classes];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class.retain(|g| !g.is_empty());
        if let Some(g) = by_class.iter().find(|g| g.len() < 2) {
            return Err(Error::Invalid(format!(
                "class {} has a single record and cannot be stratified",
                labels[g[0]]
            )));
        }
        by_class
    } else {
        if labels.len() < 2 {
            return Err(Error::Invalid("need at least two records to split".into()));
        }
        vec![(0..labels.len()).collect()]
    };

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut group in groups {
        group.shuffle(&mut rng);
        let n_test = ((f * group.len() as f64).round() as usize).clamp(1, group.len() - 1);
        test.extend_from_slice(&group[..n_test]);
        train.extend_from_slice(&group[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset.labels(), dataset.num_classes(), spec)?;
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_two_class() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let (train, test) = split_indices(&labels, 2, &SplitSpec::default()).unwrap();
        assert_eq!(test.iter().filter(|&&i| labels[i] == 0).count(), 10);
        assert_eq!(test.iter().filter(|&&i| labels[i] == 1).count(), 10);
        assert_eq!(train.len(), 80);
    }

    #[test]
    fn same_seed_same_sets() {
        let labels: Vec<usize> = (0..57).map(|i| i % 3).collect();
        let spec = SplitSpec { seed: 9, ..SplitSpec::default() };
        assert_eq!(split_indices(&labels, 3, &spec).unwrap(), split_indices(&labels, 3, &spec).unwrap());
    }

    #[test]
    fn singleton_class_rejected() {
        assert!(split_indices(&[0, 0, 1], 2, &SplitSpec::default()).is_err());
        let spec = SplitSpec { stratified: false, ..SplitSpec::default() };
        assert!(split_indices(&[0, 0, 1], 2, &spec).is_ok());
    }

    #[test]
    fn bad_fraction_rejected() {
        let spec = SplitSpec { test_fraction: 1.0, ..SplitSpec::default() };
        assert!(split_indices(&[0, 0], 1, &spec).is_err());
    }
}
