//! Single-level LRU set-associative cache used as the IPC oracle.

use serde::{Deserialize, Serialize};

use crate::error::{MavError, Result};

/// Cache geometry and the two-parameter CPI model applied to its miss rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheOracleConfig {
    pub cache_lines: u64,
    pub associativity: u64,
    pub line_bytes: u64,
    pub base_cpi: f64,
    pub miss_penalty_cpi: f64,
}

impl Default for CacheOracleConfig {
    fn default() -> Self {
        CacheOracleConfig {
            cache_lines: 4096,
            associativity: 8,
            line_bytes: 64,
            base_cpi: 0.5,
            miss_penalty_cpi: 2.0,
        }
    }
}

impl CacheOracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cache_lines == 0 || self.associativity == 0 || self.line_bytes == 0 {
            return Err(MavError::InvalidOracle(
                "cache_lines, associativity, and line_bytes must be positive".into(),
            ));
        }
        if !self.cache_lines.is_multiple_of(self.associativity) {
            return Err(MavError::InvalidOracle(format!(
                "cache_lines {} not divisible by associativity {}",
                self.cache_lines, self.associativity
            )));
        }
        if !(self.base_cpi.is_finite() && self.base_cpi > 0.0) {
            return Err(MavError::InvalidOracle("base_cpi must be positive".into()));
        }
        if !(self.miss_penalty_cpi.is_finite() && self.miss_penalty_cpi > 0.0) {
            return Err(MavError::InvalidOracle("miss_penalty_cpi must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Default)]
struct Line {
    tag: u64,
    valid: bool,
    last_used: u64,
}

pub struct LruCache {
    sets: Vec<Line>,
    num_sets: u64,
    assoc: usize,
    line_bytes: u64,
    tick: u64,
}

impl LruCache {
    pub fn new(cfg: &CacheOracleConfig) -> Result<Self> {
        cfg.validate()?;
        let num_sets = cfg.cache_lines / cfg.associativity;
        Ok(LruCache {
            sets: vec![Line::default(); cfg.cache_lines as usize],
            num_sets,
            assoc: cfg.associativity as usize,
            line_bytes: cfg.line_bytes,
            tick: 0,
        })
    }

    /// Touches one byte address; returns true on hit.
    pub fn access(&mut self, addr: u64) -> bool {
        self.tick += 1;
        let line_no = addr / self.line_bytes;
        let set = (line_no % self.num_sets) as usize;
        let tag = line_no / self.num_sets;
        let ways = &mut self.sets[set * self.assoc..(set + 1) * self.assoc];

        for way in ways.iter_mut() {
            if way.valid && way.tag == tag {
                way.last_used = self.tick;
                return true;
            }
        }

        // Miss: fill an invalid way, else evict the least recently used.
        let victim = ways
            .iter()
            .enumerate()
            .min_by_key(|(_, w)| if w.valid { w.last_used } else { 0 })
            .map(|(i, _)| i)
            .unwrap();
        ways[victim] = Line {
            tag,
            valid: true,
            last_used: self.tick,
        };
        false
    }
}
