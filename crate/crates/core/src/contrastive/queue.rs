use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::ops::normalize_slice;
use crate::tensor::{Real, Tensor};

/// Fixed-capacity FIFO of unit-norm key embeddings. Once full, every insert
/// evicts the oldest entry.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyQueue<T: Real = f32> {
    capacity: usize,
    entries: VecDeque<Vec<T>>,
    inserted: u64,
}

impl<T: Real> KeyQueue<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("queue capacity must be at least 1".into()));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
            inserted: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of keys ever inserted.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.front().map(Vec::len)
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &[T]> {
        self.entries.iter().map(Vec::as_slice)
    }

    /// Normalizes and appends one key, evicting the oldest when full.
    pub fn enqueue(&mut self, key: &[T]) -> Result<()> {
        if let Some(d) = self.dim() {
            if d != key.len() {
                return Err(Error::Shape {
                    op: "enqueue",
                    lhs: vec![d],
                    rhs: vec![key.len()],
                });
            }
        }
        let unit = normalize_slice(key)?;
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(unit);
        self.inserted += 1;
        Ok(())
    }

    /// Appends every row of `keys` (`[B, d]`) in order.
    pub fn enqueue_batch(&mut self, keys: &Tensor<T>) -> Result<()> {
        for r in 0..keys.rows() {
            self.enqueue(keys.row(r))?;
        }
        Ok(())
    }
}
