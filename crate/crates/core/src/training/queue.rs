use std::collections::VecDeque;

use crate::error::{HiclError, Result};
use crate::numerics::Tensor;

/// Fixed-capacity FIFO of detached sequence embeddings used as extra
/// negatives. Stored rows are plain values and never receive gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumQueue {
    capacity: usize,
    dim: Option<usize>,
    rows: VecDeque<Vec<f64>>,
}

impl MomentumQueue {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(HiclError::invalid("queue capacity must be positive"));
        }
        Ok(Self { capacity, dim: None, rows: VecDeque::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Append every row of `batch` in order, evicting the oldest rows once full.
    pub fn push(&mut self, batch: &Tensor) -> Result<()> {
        let d = batch.cols();
        match self.dim {
            Some(dim) if dim != d => {
                return Err(HiclError::shape("MomentumQueue::push", format!("row width {d}, queue holds {dim}")));
            }
            _ => self.dim = Some(d),
        }
        for i in 0..batch.rows() {
            if self.rows.len() == self.capacity {
                self.rows.pop_front();
            }
            self.rows.push_back(batch.row(i).to_vec());
        }
        Ok(())
    }

    /// Oldest first.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.iter().map(Vec::as_slice)
    }

    /// Stored rows as a matrix, or `None` while empty.
    pub fn snapshot(&self) -> Option<Tensor> {
        if self.rows.is_empty() {
            return None;
        }
        let rows: Vec<Vec<f64>> = self.rows.iter().cloned().collect();
        Tensor::from_rows(&rows).ok()
    }
}
