//! Inexact lower-level solves by stochastic gradient.

use rand_chacha::ChaCha8Rng;

use super::schedule::StepsizeSchedule;
use crate::error::{BilevelError, Result};
use crate::linalg::{project, ProjectionSet, Vector};
use crate::problem::{BilevelProblem, SgSteps};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerKind {
    /// One SG step per outer iteration.
    OneStep,
    /// Step count starts at 1 and grows by one whenever the UL objective
    /// changes by less than `threshold` between consecutive comparisons.
    IncAcc { threshold: f64 },
    /// `k²` steps with `β_i = γ/i`.
    KSquared { gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerPolicy {
    pub kind: InnerKind,
    /// SG stepsize at outer iteration `k` for `OneStep`/`IncAcc`, and the
    /// DARTS LL stepsize η.
    pub ll_stepsize: StepsizeSchedule,
    pub hotstart: bool,
    /// `IncAcc` compares full-batch UL values at consecutive trace records
    /// instead of consecutive mini-batch UL values.
    pub inc_acc_on_records: bool,
}

impl InnerPolicy {
    pub fn new(kind: InnerKind, ll_stepsize: StepsizeSchedule) -> Self {
        Self {
            kind,
            ll_stepsize,
            hotstart: true,
            inc_acc_on_records: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ll_stepsize.validate()?;
        match self.kind {
            InnerKind::OneStep => Ok(()),
            InnerKind::IncAcc { threshold } if threshold > 0.0 => Ok(()),
            InnerKind::KSquared { gamma } if gamma > 0.0 => Ok(()),
            _ => Err(BilevelError::InvalidArgument(
                "inner policy parameters must be > 0".into(),
            )),
        }
    }

    /// SG steps at outer iteration `k` given the current inc-acc count.
    pub fn steps_at(&self, k: usize, inc_steps: usize) -> usize {
        match self.kind {
            InnerKind::OneStep => 1,
            InnerKind::IncAcc { .. } => inc_steps.max(1),
            InnerKind::KSquared { .. } => k.max(1) * k.max(1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub y: Vector,
    pub accessed: u64,
    pub steps: usize,
}

/// `|fu_cur − fu_prev| < threshold` bumps the step count by one.
pub fn inc_acc_update(current_steps: usize, fu_prev: f64, fu_cur: f64, threshold: f64) -> usize {
    if (fu_cur - fu_prev).abs() < threshold {
        current_steps + 1
    } else {
        current_steps
    }
}

/// Runs the policy's SG steps on the LL problem at fixed `x`, projecting
/// onto `Y(x)` after each step.
#[allow(clippy::too_many_arguments)]
pub fn inner_solve<P: BilevelProblem + ?Sized>(
    problem: &P,
    x: &Vector,
    y_start: &Vector,
    policy: &InnerPolicy,
    k: usize,
    inc_steps: usize,
    ll_batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<InnerOutcome> {
    let steps = policy.steps_at(k, inc_steps);
    let fixed_beta = policy.ll_stepsize.at(k);
    let schedule = match policy.kind {
        InnerKind::KSquared { gamma } => SgSteps::Harmonic { gamma, count: steps },
        _ => SgSteps::Constant {
            beta: fixed_beta,
            count: steps,
        },
    };
    let population = problem.dataset_sizes().1;
    let per_step = population.map_or(ll_batch, |n| ll_batch.min(n)) as u64;
    let y_set = problem.projection_y(x);

    if matches!(y_set, ProjectionSet::AllSpace) {
        if let Some(y) = problem.aggregated_inner_sg(x, y_start, &schedule, ll_batch, rng) {
            return Ok(InnerOutcome {
                y,
                accessed: per_step * steps as u64,
                steps,
            });
        }
    }

    let mut y = y_start.clone();
    let mut accessed = 0;
    for i in 1..=steps {
        let ll = problem.draw_ll(ll_batch, rng)?;
        let g = problem.ll_grad(x, &y, &ll)?;
        accessed += ll.consumed(population);
        y.axpy(-schedule.beta(i), &g.gy, 1.0);
        if !matches!(y_set, ProjectionSet::AllSpace) {
            y = project(&y, &y_set)?;
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(BilevelError::NonFinite("inner SG"));
    }
    Ok(InnerOutcome { y, accessed, steps })
}
