//! Decay-weighted fusion of the most recent heatmaps.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cell, GridSpec, Heatmap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("history length must be at least 1")]
    ZeroHistory,
    #[error("decay factor must lie in [0, 1), got {0}")]
    BadDecay(f64),
    #[error("heatmap grid does not match the memory grid")]
    GridMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub history_len: usize,
    pub epsilon: f64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            history_len: 10,
            epsilon: 0.2,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<(), MemoryError> {
        if self.history_len == 0 {
            return Err(MemoryError::ZeroHistory);
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(MemoryError::BadDecay(self.epsilon));
        }
        Ok(())
    }

    /// Weight `(1 - eps)^i` of the i-th most recent entry.
    pub fn weight(&self, i: usize) -> f64 {
        (1.0 - self.epsilon).powi(i as i32)
    }
}

/// Fixed-length queue of heatmaps, newest first, zero-filled at creation.
#[derive(Debug, Clone)]
pub struct PredictionMemory {
    config: MemoryConfig,
    grid: GridSpec,
    entries: VecDeque<Heatmap>,
}

impl PredictionMemory {
    pub fn new(config: MemoryConfig, grid: GridSpec) -> Result<Self, MemoryError> {
        config.validate()?;
        let entries = (0..config.history_len)
            .map(|_| Heatmap::zeros(grid))
            .collect();
        Ok(Self {
            config,
            grid,
            entries,
        })
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Entry `i`, 0 being the newest.
    pub fn entry(&self, i: usize) -> &Heatmap {
        &self.entries[i]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn reset(&mut self) {
        for e in &mut self.entries {
            e.values_mut().fill(0.0);
        }
    }

    pub fn push(&mut self, p: Heatmap) -> Result<(), MemoryError> {
        if p.grid().n != self.grid.n || p.grid().m != self.grid.m {
            return Err(MemoryError::GridMismatch);
        }
        self.entries.pop_back();
        self.entries.push_front(p);
        Ok(())
    }

    /// `(1/h) * sum_i w_i * p_i`, cellwise. The divisor is the history length,
    /// not the weight sum, so the fused peak sits below the raw peak.
    pub fn weighted(&self) -> Heatmap {
        let h = self.config.history_len as f64;
        let mut out = Heatmap::zeros(self.grid);
        let mut w = 1.0;
        for e in &self.entries {
            for (o, v) in out.values_mut().iter_mut().zip(e.values()) {
                *o += v * w;
            }
            w *= 1.0 - self.config.epsilon;
        }
        for o in out.values_mut() {
            *o /= h;
        }
        out
    }
}

/// Peak value and cell of a fused heatmap.
pub fn peak(fused: &Heatmap) -> (f64, Cell) {
    fused.peak()
}
