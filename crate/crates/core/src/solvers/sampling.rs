use crate::error::{BilevelError, Result};
use crate::problem::BatchSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingPolicy {
    FixedBatch(BatchSpec),
    /// Batch `b_D` chosen so that `σ√q/√b_D ≤ C_D α_k`, capped; used for both levels.
    Dynamic {
        c_d: f64,
        sigma: f64,
        q: usize,
        cap: usize,
    },
}

impl SamplingPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SamplingPolicy::FixedBatch(b) => BatchSpec::new(b.ul_batch, b.ll_batch).map(|_| ()),
            SamplingPolicy::Dynamic { c_d, sigma, q, cap } => {
                if c_d > 0.0 && sigma > 0.0 && q > 0 && cap > 0 {
                    Ok(())
                } else {
                    Err(BilevelError::InvalidArgument(
                        "dynamic sampling needs C_D, σ, q, cap > 0".into(),
                    ))
                }
            }
        }
    }

    pub fn batch(&self, alpha: f64) -> BatchSpec {
        match *self {
            SamplingPolicy::FixedBatch(b) => b,
            SamplingPolicy::Dynamic { c_d, sigma, q, cap } => {
                let b = dynamic_batch_size(c_d, alpha, sigma, q, cap);
                BatchSpec {
                    ul_batch: b,
                    ll_batch: b,
                }
            }
        }
    }
}

/// Smallest `b` with `σ√q/√b ≤ C_D α`, clamped to `[1, cap]`.
pub fn dynamic_batch_size(c_d: f64, alpha: f64, sigma: f64, q: usize, cap: usize) -> usize {
    let cap = cap.max(1);
    let target = c_d * alpha;
    let noise = sigma * (q as f64).sqrt();
    let ratio = noise / target;
    let estimate = (ratio * ratio).ceil();
    if !estimate.is_finite() || estimate >= cap as f64 {
        return cap;
    }
    let mut b = (estimate as usize).max(1);
    // correct rounding of the closed form in either direction
    while b > 1 && noise / ((b - 1) as f64).sqrt() <= target {
        b -= 1;
    }
    while b < cap && noise / (b as f64).sqrt() > target {
        b += 1;
    }
    b
}
