//! Momentum (EMA) target network and the FIFO memory bank of keys.

use crate::error::{Error, Result};
use crate::model::{Encoder, ParamSet};
use crate::scalar::Scalar;

/// Largest accepted deviation of a key's norm from one.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

/// `theta <- m * theta + (1 - m) * theta_online` for every element.
pub fn ema_params<S: Scalar>(momentum: &mut ParamSet<S>, online: &ParamSet<S>, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::InvalidArgument(format!("momentum coefficient {m} outside [0, 1]")));
    }
    momentum.check_same_layout(online)?;
    let keep = S::of(m);
    let take = S::of(1.0 - m);
    for i in 0..momentum.len() {
        let src = online.data(i);
        for (t, &o) in momentum.data_mut(i).iter_mut().zip(src) {
            *t = keep * *t + take * o;
        }
    }
    Ok(())
}

pub fn ema_update<S: Scalar>(momentum: &mut Encoder<S>, online: &Encoder<S>, m: f64) -> Result<()> {
    ema_params(momentum.params_mut(), online.params(), m)
}

/// Ring buffer of unit-norm keys.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank<S> {
    capacity: usize,
    dim: usize,
    count: usize,
    cursor: usize,
    data: Vec<S>,
}

/// Immutable copy of the bank, oldest key first.
#[derive(Debug, Clone, PartialEq)]
pub struct Negatives<S> {
    pub dim: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Negatives<S> {
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[S]> {
        self.data.chunks(self.dim.max(1))
    }
}

impl<S: Scalar> MemoryBank<S> {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "memory bank needs positive capacity and dimension, got {capacity} x {dim}"
            )));
        }
        Ok(Self {
            capacity,
            dim,
            count: 0,
            cursor: 0,
            data: vec![S::zero(); capacity * dim],
        })
    }

    /// Restores a bank from its serialized parts.
    pub fn from_parts(capacity: usize, dim: usize, count: usize, cursor: usize, data: Vec<S>) -> Result<Self> {
        let mut bank = Self::new(capacity, dim)?;
        if count > capacity || cursor >= capacity || data.len() != capacity * dim {
            return Err(Error::Checkpoint(format!(
                "inconsistent memory bank: capacity {capacity}, dim {dim}, count {count}, cursor {cursor}, {} values",
                data.len()
            )));
        }
        if count < capacity && cursor != count {
            return Err(Error::Checkpoint(format!(
                "memory bank cursor {cursor} disagrees with partial fill {count}"
            )));
        }
        bank.count = count;
        bank.cursor = cursor;
        bank.data = data;
        Ok(bank)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Raw slot storage, `capacity * dim` values.
    pub fn raw(&self) -> &[S] {
        &self.data
    }

    fn check_key(&self, index: usize, key: &[S]) -> Result<()> {
        if key.len() != self.dim {
            return Err(Error::shape("memory bank key", self.dim, key.len()));
        }
        let norm = key.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= UNIT_NORM_TOLERANCE) {
            return Err(Error::NonUnitKey { index, norm });
        }
        Ok(())
    }

    /// Writes every key at the cursor, oldest entries evicted first.
    /// Nothing is written if any key is rejected.
    pub fn enqueue<K: AsRef<[S]>>(&mut self, keys: &[K]) -> Result<()> {
        for (i, k) in keys.iter().enumerate() {
            self.check_key(i, k.as_ref())?;
        }
        for k in keys {
            let d = self.dim;
            self.data[self.cursor * d..(self.cursor + 1) * d].copy_from_slice(k.as_ref());
            self.cursor = (self.cursor + 1) % self.capacity;
            self.count = (self.count + 1).min(self.capacity);
        }
        Ok(())
    }

    /// Snapshot of the stored keys in queue order.
    pub fn negatives(&self) -> Result<Negatives<S>> {
        if self.count == 0 {
            return Err(Error::EmptyBank);
        }
        let d = self.dim;
        let start = if self.count < self.capacity { 0 } else { self.cursor };
        let mut data = Vec::with_capacity(self.count * d);
        for i in 0..self.count {
            let slot = (start + i) % self.capacity;
            data.extend_from_slice(&self.data[slot * d..(slot + 1) * d]);
        }
        Ok(Negatives { dim: d, data })
    }
}
