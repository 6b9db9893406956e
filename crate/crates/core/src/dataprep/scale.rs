use super::Dataset;
use crate::error::{Error, Result};

/// Per-feature z-score parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Standard deviations below this are treated as a constant feature.
const MIN_STD: f64 = 1e-12;

impl Scaler {
    /// Population mean and standard deviation of every column. Constant
    /// columns get mean 0 and scale 1 and pass through unchanged.
    pub fn fit(train: &Dataset) -> Self {
        let (n, d) = (train.n() as f64, train.d());
        let mut mean = vec![0.0; d];
        for r in 0..train.n() {
            for (m, v) in mean.iter_mut().zip(train.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in 0..train.n() {
            for ((s, v), m) in var.iter_mut().zip(train.row(r)).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let mut std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
        for (m, s) in mean.iter_mut().zip(std.iter_mut()) {
            if *s < MIN_STD {
                *m = 0.0;
                *s = 1.0;
            }
        }
        Scaler { mean, std }
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.d() != self.mean.len() {
            return Err(Error::shape(
                "scaler",
                format!("fit on {} features, applied to {}", self.mean.len(), ds.d()),
            ));
        }
        let d = ds.d();
        let features = ds
            .features()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % d]) / self.std[i % d])
            .collect();
        ds.with_features(features)
    }
}

/// Fits on `train` only and applies to both sets.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, Scaler)> {
    let scaler = Scaler::fit(train);
    Ok((scaler.apply(train)?, scaler.apply(test)?, scaler))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::LabelMap;

    fn column(values: &[f64]) -> Dataset {
        Dataset::new(
            values.to_vec(),
            vec!["x".into()],
            vec![0; values.len()],
            LabelMap::numbered(1),
        )
        .unwrap()
    }

    #[test]
    fn two_point_column() {
        let (tr, _, _) = standardize(&column(&[0.0, 2.0]), &column(&[1.0])).unwrap();
        assert_eq!(tr.features(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_column_passes_through() {
        let (tr, te, s) = standardize(&column(&[3.0, 3.0, 3.0]), &column(&[5.0])).unwrap();
        assert_eq!(tr.features(), &[3.0, 3.0, 3.0]);
        assert_eq!(te.features(), &[5.0]);
        assert_eq!(s.std, vec![1.0]);
    }

    #[test]
    fn test_set_uses_train_statistics() {
        let (_, te, _) = standardize(&column(&[0.0, 2.0]), &column(&[3.0])).unwrap();
        assert_eq!(te.features(), &[2.0]);
    }
}
