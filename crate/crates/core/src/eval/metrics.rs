//! Confusion matrices, weighted accuracy (overall) and unweighted accuracy
//! (macro recall).

use serde::{Deserialize, Serialize};

use crate::data::manifest::Emotion;
use crate::error::{Result, SerError};

pub const N_CLASSES: usize = Emotion::COUNT;

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion(pub [[u64; N_CLASSES]; N_CLASSES]);

impl Confusion {
    pub fn from_predictions(truth: &[usize], predicted: &[usize]) -> Result<Confusion> {
        if truth.len() != predicted.len() {
            return Err(SerError::Shape("truth and predictions differ in length".into()));
        }
        let mut c = Confusion::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            c.record(t, p)?;
        }
        Ok(c)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= N_CLASSES || predicted >= N_CLASSES {
            return Err(SerError::InvalidArgument(format!("class pair ({truth}, {predicted}) out of range")));
        }
        self.0[truth][predicted] += 1;
        Ok(())
    }

    pub fn add(&mut self, other: &Confusion) {
        for (r, o) in self.0.iter_mut().zip(&other.0) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..N_CLASSES).map(|i| self.0[i][i]).sum()
    }

    pub fn row_sums(&self) -> [u64; N_CLASSES] {
        self.0.map(|r| r.iter().sum())
    }

    /// Recall per class; `None` for classes with no test samples.
    pub fn per_class_recall(&self) -> [Option<f64>; N_CLASSES] {
        let rows = self.row_sums();
        std::array::from_fn(|i| (rows[i] > 0).then(|| self.0[i][i] as f64 / rows[i] as f64))
    }
}

pub fn weighted_accuracy(c: &Confusion) -> Result<f64> {
    match c.total() {
        0 => Err(SerError::InvalidArgument("empty confusion matrix".into())),
        n => Ok(c.trace() as f64 / n as f64),
    }
}

/// Mean recall over the classes present in the test set.
pub fn unweighted_accuracy(c: &Confusion) -> Result<f64> {
    let recalls: Vec<f64> = c.per_class_recall().into_iter().flatten().collect();
    if recalls.is_empty() {
        return Err(SerError::InvalidArgument("empty confusion matrix".into()));
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn diagonal_is_perfect() {
        let mut c = Confusion::default();
        for k in 0..4 {
            c.0[k][k] = 5 + k as u64;
        }
        assert_eq!(weighted_accuracy(&c).unwrap(), 1.0);
        assert_eq!(unweighted_accuracy(&c).unwrap(), 1.0);
    }

    #[test]
    fn all_one_class_prediction() {
        let truth: Vec<usize> = [(0, 10), (1, 10), (2, 10), (3, 70)]
            .iter()
            .flat_map(|&(c, n)| std::iter::repeat_n(c, n))
            .collect();
        let c = Confusion::from_predictions(&truth, &[3; 100]).unwrap();
        assert!((weighted_accuracy(&c).unwrap() - 0.7).abs() < 1e-15);
        assert!((unweighted_accuracy(&c).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn absent_classes_are_skipped_and_empty_errors() {
        let c = Confusion::from_predictions(&[0, 0, 1], &[0, 1, 1]).unwrap();
        assert!((unweighted_accuracy(&c).unwrap() - 0.75).abs() < 1e-15);
        assert!(weighted_accuracy(&Confusion::default()).is_err());
        assert!(unweighted_accuracy(&Confusion::default()).is_err());
        assert!(Confusion::from_predictions(&[4], &[0]).is_err());
    }

    proptest! {
        #[test]
        fn metrics_bounded_and_equal_for_balanced(preds in prop::collection::vec(0usize..4, 40)) {
            let truth: Vec<usize> = (0..40).map(|i| i % 4).collect();
            let c = Confusion::from_predictions(&truth, &preds).unwrap();
            let (wa, uwa) = (weighted_accuracy(&c).unwrap(), unweighted_accuracy(&c).unwrap());
            prop_assert!((0.0..=1.0).contains(&wa) && (0.0..=1.0).contains(&uwa));
            prop_assert!((wa - uwa).abs() < 1e-12);
            prop_assert_eq!(c.total(), 40);
            prop_assert_eq!(c.row_sums(), [10; 4]);
        }
    }
}
