//! Inverse-CDF Zipf sampling over a precomputed table.
//!
//! Table-based sampling keeps the draw sequence bit-stable across
//! platforms; rejection-based samplers do not.

use rand::Rng;

use crate::error::{MavError, Result};

const MAX_TABLE: u64 = 1 << 24;

pub struct ZipfTable {
    cdf: Vec<f64>,
}

impl ZipfTable {
    pub fn new(ranks: u64, exponent: f64) -> Result<Self> {
        if ranks == 0 {
            return Err(MavError::InvalidSpec("zipf working set must be non-empty".into()));
        }
        if ranks > MAX_TABLE {
            return Err(MavError::InvalidSpec(format!(
                "zipf working set {ranks} exceeds table limit {MAX_TABLE}"
            )));
        }
        if !(exponent.is_finite() && exponent > 0.0) {
            return Err(MavError::InvalidSpec(format!("zipf exponent {exponent} must be positive")));
        }
        let mut cdf = Vec::with_capacity(ranks as usize);
        let mut acc = 0.0;
        for rank in 1..=ranks {
            acc += (rank as f64).powf(-exponent);
            cdf.push(acc);
        }
        let total = acc;
        for v in &mut cdf {
            *v /= total;
        }
        // Pin the final entry so a draw of u -> 1.0-eps still lands inside.
        *cdf.last_mut().unwrap() = 1.0;
        Ok(ZipfTable { cdf })
    }

    /// Draws a 0-based rank; rank 0 is the most popular.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u) as u64
    }
}
