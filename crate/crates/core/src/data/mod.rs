//! Datasets and domain-aware batching.
//!
//! Target labels live only in [`LabeledSet`]s owned by the evaluator; the
//! batch composer takes an [`UnlabeledSet`] for the target side, so no target
//! label can reach the training path.

mod batch;
mod synthetic;
mod tabular;

pub use batch::{compose_batches, BatchSizes, BatchStream, DomainBatch};
pub use synthetic::{generate_shifted_gaussians, ShiftSpec, ShiftedGaussians};
pub use tabular::{load_tabular, parse_tabular, Tabular};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSet {
    pub features: Tensor,
}

impl LabeledSet {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Data(format!("features must be 2-D, got {:?}", features.shape())));
        }
        if labels.len() != features.batch() {
            return Err(Error::Data(format!(
                "{} labels for {} rows",
                labels.len(),
                features.batch()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Data(format!("label {bad} not below class count {classes}")));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    /// Drops the labels.
    pub fn unlabeled(&self) -> UnlabeledSet {
        UnlabeledSet {
            features: self.features.clone(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Result<LabeledSet> {
        Ok(LabeledSet {
            features: self.features.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        })
    }
}

impl UnlabeledSet {
    pub fn len(&self) -> usize {
        self.features.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
