use kgalign_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};

/// Per-entity embeddings from earlier iterations, one row per joint entity id.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoricalEmbeddingStore<S> {
    x0: Tensor<S>,
}

impl<S: Scalar> HistoricalEmbeddingStore<S> {
    pub fn zeros(entities: usize, dim: usize) -> Self {
        Self {
            x0: Tensor::zeros(&[entities, dim]),
        }
    }

    pub fn from_tensor(x0: Tensor<S>) -> Self {
        Self { x0 }
    }

    pub fn tensor(&self) -> &Tensor<S> {
        &self.x0
    }

    pub fn len(&self) -> usize {
        self.x0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x0.cols()
    }

    pub fn bytes(&self) -> usize {
        self.x0.bytes()
    }

    pub fn row(&self, id: usize) -> &[S] {
        self.x0.row(id)
    }

    /// Rows for `ids`, in order.
    pub fn read(&self, ids: &[usize]) -> Result<Tensor<S>> {
        Ok(self.x0.gather_rows(ids)?)
    }

    /// Overwrites the rows of `ids` with the rows of `values`.
    pub fn write(&mut self, ids: &[usize], values: &Tensor<S>) -> Result<()> {
        if values.rows() != ids.len() || values.cols() != self.dim() {
            return Err(Error::Validation(format!(
                "store update of {} ids with a {:?} tensor",
                ids.len(),
                values.shape()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Validation(format!("store has no row {bad}")));
        }
        for (k, &i) in ids.iter().enumerate() {
            self.x0.row_mut(i).copy_from_slice(values.row(k));
        }
        Ok(())
    }
}
