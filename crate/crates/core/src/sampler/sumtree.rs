//! Complete binary tree of partial sums for weighted categorical draws with
//! mutable weights.

use crate::error::{Error, Result};

/// Leaves hold non-negative weights; each internal node is recomputed as the
/// sum of its two children on every update, so no rounding drift builds up.
#[derive(Debug, Clone, PartialEq)]
pub struct SumTree {
    len: usize,
    cap: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(len: usize) -> Self {
        let cap = len.max(1).next_power_of_two();
        SumTree {
            len,
            cap,
            nodes: vec![0.0; 2 * cap],
        }
    }

    pub fn from_weights(weights: &[f64]) -> Self {
        let mut t = SumTree::new(weights.len());
        t.nodes[t.cap..t.cap + weights.len()].copy_from_slice(weights);
        for i in (1..t.cap).rev() {
            t.nodes[i] = t.nodes[2 * i] + t.nodes[2 * i + 1];
        }
        t
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    #[inline]
    pub fn get(&self, leaf: usize) -> f64 {
        self.nodes[self.cap + leaf]
    }

    /// O(log n): rewrites one root-to-leaf path.
    #[inline]
    pub fn set(&mut self, leaf: usize, weight: f64) {
        debug_assert!(leaf < self.len && weight >= 0.0);
        let mut i = self.cap + leaf;
        self.nodes[i] = weight;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf `k` with probability `weight_k / total`, for `u` uniform on `[0, 1)`.
    pub fn draw(&self, u: f64) -> Result<usize> {
        if !(self.total() > 0.0) {
            return Err(Error::EmptySumTree);
        }
        let mut target = u * self.total();
        let mut i = 1;
        while i < self.cap {
            let left = 2 * i;
            if target < self.nodes[left] || self.nodes[left + 1] <= 0.0 {
                i = left;
            } else {
                target -= self.nodes[left];
                i = left + 1;
            }
        }
        Ok(i - self.cap)
    }

    /// Largest absolute difference between an internal node and the sum of
    /// its children.
    pub fn max_inconsistency(&self) -> f64 {
        (1..self.cap)
            .map(|i| (self.nodes[i] - self.nodes[2 * i] - self.nodes[2 * i + 1]).abs())
            .fold(0.0, f64::max)
    }
}
