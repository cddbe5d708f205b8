use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Power-of-two target resolutions `2^lo ..= 2^hi` (shortest side, pixels).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionSet {
    pub exponent_lo: u32,
    pub exponent_hi: u32,
}

impl Default for ResolutionSet {
    fn default() -> Self {
        Self {
            exponent_lo: 3,
            exponent_hi: 8,
        }
    }
}

impl ResolutionSet {
    pub fn new(exponent_lo: u32, exponent_hi: u32) -> Result<Self> {
        let set = Self {
            exponent_lo,
            exponent_hi,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.exponent_lo > self.exponent_hi || self.exponent_hi > 30 {
            return Err(invalid(format!(
                "bad resolution exponents {}..={}",
                self.exponent_lo, self.exponent_hi
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<u32> {
        (self.exponent_lo..=self.exponent_hi).map(|e| 1u32 << e).collect()
    }

    pub fn len(&self) -> usize {
        (self.exponent_hi - self.exponent_lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Draws an exponent uniformly from the set's range and returns `2^e`.
pub fn sample_resolution<R: Rng + ?Sized>(rng: &mut R, rset: &ResolutionSet) -> u32 {
    let e = rng.gen_range(rset.exponent_lo..=rset.exponent_hi);
    1u32 << e
}

/// Probability that a training image is degraded at optimizer step `step`:
/// rises linearly from 0 at the first step to 1 at `total_steps`.
pub fn degrade_probability(step: u64, total_steps: u64) -> Result<f64> {
    if total_steps == 0 {
        return Err(invalid("total_steps must be at least 1"));
    }
    if step >= total_steps {
        return Ok(1.0);
    }
    Ok(step as f64 / total_steps as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub step: u64,
    pub total_steps: u64,
}

impl CurriculumState {
    pub fn new(step: u64, total_steps: u64) -> Result<Self> {
        if total_steps == 0 {
            return Err(invalid("total_steps must be at least 1"));
        }
        Ok(Self { step, total_steps })
    }

    pub fn degrade_probability(&self) -> f64 {
        degrade_probability(self.step, self.total_steps).expect("total_steps validated")
    }
}
