//! Unweighted and weighted average recall.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `None` for classes absent from the evaluated set.
    pub per_class_recall: Vec<Option<f64>>,
    pub uar: f64,
    pub war: f64,
    /// `confusion[actual][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    pub fn from_predictions(predicted: &[usize], actual: &[usize], classes: usize) -> Result<Self> {
        if actual.is_empty() {
            return Err(Error::Contract("cannot evaluate an empty clip set".into()));
        }
        if predicted.len() != actual.len() {
            return Err(Error::Contract(format!(
                "{} predictions for {} labels",
                predicted.len(),
                actual.len()
            )));
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&p, &a) in predicted.iter().zip(actual) {
            if p >= classes || a >= classes {
                return Err(Error::Contract(format!("class index out of range for {classes} classes")));
            }
            confusion[a][p] += 1;
        }
        let per_class_recall: Vec<Option<f64>> = confusion
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[k] as f64 / n as f64)
            })
            .collect();
        let absent: Vec<usize> = (0..classes).filter(|&k| per_class_recall[k].is_none()).collect();
        if !absent.is_empty() {
            log::warn!("classes {absent:?} absent from evaluation set; excluded from UAR");
        }
        let present: Vec<f64> = per_class_recall.iter().flatten().copied().collect();
        let uar = present.iter().sum::<f64>() / present.len() as f64;
        let correct: usize = (0..classes).map(|k| confusion[k][k]).sum();
        let war = correct as f64 / actual.len() as f64;
        Ok(Metrics { per_class_recall, uar, war, confusion })
    }

    pub fn classes(&self) -> usize {
        self.confusion.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 1];
        let m = Metrics::from_predictions(&labels, &labels, 3).unwrap();
        assert_eq!((m.uar, m.war), (1.0, 1.0));
    }

    #[test]
    fn imbalanced_sizes_separate_uar_from_war() {
        let actual: Vec<usize> = [vec![0; 9], vec![1]].concat();
        let predicted = vec![0; 10];
        let m = Metrics::from_predictions(&predicted, &actual, 2).unwrap();
        assert!((m.war - 0.9).abs() < 1e-15);
        assert!((m.uar - 0.5).abs() < 1e-15);
        assert_eq!(m.confusion, vec![vec![9, 0], vec![1, 0]]);
    }

    #[test]
    fn constant_predictor_on_balanced_classes() {
        let actual: Vec<usize> = (0..20).map(|i| i % 4).collect();
        let m = Metrics::from_predictions(&[3; 20], &actual, 4).unwrap();
        assert!((m.uar - 0.25).abs() < 1e-15);
        for (k, row) in m.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), actual.iter().filter(|&&a| a == k).count());
        }
    }

    #[test]
    fn absent_classes_are_excluded() {
        let m = Metrics::from_predictions(&[0, 1, 1], &[0, 1, 1], 3).unwrap();
        assert_eq!(m.per_class_recall[2], None);
        assert_eq!(m.uar, 1.0);
    }

    #[test]
    fn empty_set_is_a_contract_error() {
        assert!(matches!(Metrics::from_predictions(&[], &[], 2), Err(Error::Contract(_))));
    }
}
