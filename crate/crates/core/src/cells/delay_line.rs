use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::numerics::Vector;

/// Sliding-window delay memory.
///
/// Holds `slots` columns of width `hidden`. Column 1 is the read end: it
/// holds everything scheduled to arrive at the next step. Each step pops
/// column 1, shifts the rest one place toward the read end and appends a
/// zero column at the tail. A deposit into column `j` arrives `j` steps
/// after the step that made it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayLine {
    hidden: usize,
    columns: VecDeque<Vector>,
}

impl DelayLine {
    pub fn new(slots: usize, hidden: usize) -> Self {
        DelayLine {
            hidden,
            columns: (0..slots).map(|_| Vector::zeros(hidden)).collect(),
        }
    }

    pub fn slots(&self) -> usize {
        self.columns.len()
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Column `j`, 1-indexed from the read end.
    pub fn column(&self, j: usize) -> &Vector {
        &self.columns[j - 1]
    }

    pub fn is_zero(&self) -> bool {
        self.columns.iter().all(|c| c.iter().all(|&v| v == 0.0))
    }

    /// Pops the arrivals for the current step and frees a zeroed tail slot.
    pub fn advance(&mut self) -> Vector {
        match self.columns.pop_front() {
            Some(head) => {
                self.columns.push_back(Vector::zeros(self.hidden));
                head
            }
            None => Vector::zeros(self.hidden),
        }
    }

    /// Adds `weight * value` into column `slot` (1-indexed).
    pub fn deposit(&mut self, slot: usize, weight: f64, value: &[f64]) {
        self.columns[slot - 1].axpy(weight, value);
    }

    pub fn clear(&mut self) {
        for c in &mut self.columns {
            c.fill(0.0);
        }
    }
}
