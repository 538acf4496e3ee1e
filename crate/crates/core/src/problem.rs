//! The stochastic bilevel problem interface.
//!
//! An instance exposes sampled first-order data of both levels (and, when it
//! advertises the capability, sampled Hessian actions of the lower level) at
//! any point `(x, y)` for a given data realization. Realizations are drawn
//! separately for the upper and lower levels so that several evaluations can
//! share one draw (the DARTS finite-difference probes do).

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{BilevelError, Result};
use crate::linalg::{LinearOperator, Matrix, ProjectionSet, Vector};
use crate::rng::SampleStreams;

#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub x: Vector,
    pub y: Vector,
}

impl Iterate {
    pub fn new(x: Vector, y: Vector) -> Self {
        Self { x, y }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self::new(Vector::zeros(n), Vector::zeros(m))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSpec {
    pub ul_batch: usize,
    pub ll_batch: usize,
}

impl BatchSpec {
    pub fn new(ul_batch: usize, ll_batch: usize) -> Result<Self> {
        if ul_batch == 0 || ll_batch == 0 {
            return Err(BilevelError::InvalidArgument("batch sizes must be ≥ 1".into()));
        }
        Ok(Self { ul_batch, ll_batch })
    }

    /// Clips both sizes to the instance's dataset sizes.
    pub fn clipped(self, sizes: (Option<usize>, Option<usize>)) -> Self {
        let clip = |b: usize, n: Option<usize>| n.map_or(b, |n| b.min(n).max(1));
        Self {
            ul_batch: clip(self.ul_batch, sizes.0),
            ll_batch: clip(self.ll_batch, sizes.1),
        }
    }
}

/// One realization of the data of a single level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Subset {
    /// The whole dataset, or the exact expectation for stream-generated instances.
    Full,
    /// Row indices of a finite dataset, drawn without replacement.
    Rows(Vec<usize>),
    /// `size` draws of a stream-generated instance, identified by `key` so
    /// the same realization can be replayed at other points.
    Draws { size: usize, key: u64 },
}

impl Subset {
    /// Number of data points this realization consumes.
    pub fn consumed(&self, population: Option<usize>) -> u64 {
        match self {
            Subset::Full => population.unwrap_or(1) as u64,
            Subset::Rows(r) => r.len() as u64,
            Subset::Draws { size, .. } => *size as u64,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Subset::Rows(r) if r.is_empty()) || matches!(self, Subset::Draws { size: 0, .. })
    }
}

/// Uniform draw of `size` points without replacement (finite population) or
/// a keyed stream realization (infinite population).
pub fn draw_subset(population: Option<usize>, size: usize, rng: &mut ChaCha8Rng) -> Result<Subset> {
    if size == 0 {
        return Err(BilevelError::InvalidArgument("empty batch".into()));
    }
    match population {
        Some(n) => {
            if size > n {
                return Err(BilevelError::InvalidArgument(format!(
                    "batch of {size} exceeds dataset of {n}"
                )));
            }
            if size == n {
                // still shuffled so consumers see a uniform ordering
                return Ok(Subset::Rows(index::sample(rng, n, n).into_vec()));
            }
            Ok(Subset::Rows(index::sample(rng, n, size).into_vec()))
        }
        None => Ok(Subset::Draws {
            size,
            key: rng.random(),
        }),
    }
}

/// One realization `D(x, ỹ, ξ)` of the bilevel data.
#[derive(Debug, Clone)]
pub struct OracleSample {
    pub gux: Vector,
    pub guy: Vector,
    pub glx: Vector,
    pub gly: Vector,
    pub hyy: Option<LinearOperator>,
    /// `v ↦ ∇²_xy f_ℓ · v`, mapping LL space to UL space.
    pub hxy_t: Option<LinearOperator>,
    pub fu_value: f64,
    pub fl_value: f64,
    pub ul_count: u64,
    pub ll_count: u64,
}

impl OracleSample {
    pub fn has_hessian(&self) -> bool {
        self.hyy.is_some() && self.hxy_t.is_some()
    }
}

/// First- and second-order data of one level at one point.
#[derive(Debug, Clone)]
pub struct LevelGrad {
    pub value: f64,
    pub gx: Vector,
    pub gy: Vector,
}

#[derive(Debug, Clone)]
pub struct LlHessians {
    pub hyy: LinearOperator,
    pub hxy_t: LinearOperator,
}

/// Equality constraints `f_i(x, y) = 0` of the lower level.
pub trait ConstraintSet: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn has_inequalities(&self) -> bool {
        false
    }

    fn values(&self, x: &Vector, y: &Vector) -> Vector;

    /// Rows are `∇_x f_i`.
    fn jacobian_x(&self, x: &Vector, y: &Vector) -> Matrix;

    /// Rows are `∇_y f_i`.
    fn jacobian_y(&self, x: &Vector, y: &Vector) -> Matrix;

    /// Action of the constraint curvature `Σ_i z_i ∇²f_i(x, y)` on `(dx, dy)`,
    /// returned as its `(x, y)` blocks. The LL Lagrangian Hessian is the
    /// instance's `∇²f_ℓ` plus this term. Zero for linear constraints.
    fn constraint_curvature_apply(
        &self,
        _x: &Vector,
        _y: &Vector,
        _z: &Vector,
        dx: &Vector,
        dy: &Vector,
    ) -> (Vector, Vector) {
        (Vector::zeros(dx.len()), Vector::zeros(dy.len()))
    }
}

/// A run of LL SG steps with stepsizes `β_i`, `i = 1..=count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SgSteps {
    Constant {
        beta: f64,
        count: usize,
    },
    /// `β_i = γ/i`
    Harmonic {
        gamma: f64,
        count: usize,
    },
}

impl SgSteps {
    pub fn count(&self) -> usize {
        match *self {
            SgSteps::Constant { count, .. } | SgSteps::Harmonic { count, .. } => count,
        }
    }

    pub fn beta(&self, i: usize) -> f64 {
        match *self {
            SgSteps::Constant { beta, .. } => beta,
            SgSteps::Harmonic { gamma, .. } => gamma / i.max(1) as f64,
        }
    }

    /// `(Π(1 − β_i), v)` for the scalar recursion `e ← (1 − β_i) e − β_i ξ_i`
    /// with `Var ξ_i = step_var`: the contraction of the initial error and
    /// the variance accumulated from the noise.
    pub fn error_moments(&self, step_var: f64) -> (f64, f64) {
        match *self {
            SgSteps::Constant { beta, count } => {
                let q = (1.0 - beta) * (1.0 - beta);
                let qk = q.powi(count as i32);
                let var = if (1.0 - q).abs() < 1e-300 {
                    beta * beta * step_var * count as f64
                } else {
                    beta * beta * step_var * (1.0 - qk) / (1.0 - q)
                };
                ((1.0 - beta).powi(count as i32), var)
            }
            // running mean of the noise
            SgSteps::Harmonic { gamma, count } if gamma == 1.0 && count > 0 => (0.0, step_var / count as f64),
            _ => {
                let (mut coef, mut var) = (1.0, 0.0);
                for i in 1..=self.count() {
                    let keep = 1.0 - self.beta(i);
                    coef *= keep;
                    var = keep * keep * var + self.beta(i).powi(2) * step_var;
                }
                (coef, var)
            }
        }
    }
}

/// Result of a high-accuracy lower-level solve.
#[derive(Debug, Clone)]
pub struct LlSolution {
    pub y: Vector,
    pub converged: bool,
}

/// A stochastic bilevel instance.
///
/// Implementations are immutable after construction; all randomness comes
/// from the caller-owned streams.
pub trait BilevelProblem: Send + Sync {
    /// `(n, m)`: UL and LL dimensions.
    fn dims(&self) -> (usize, usize);

    /// `(N_ul, N_ll)`; `None` for stream-generated (infinite) populations.
    fn dataset_sizes(&self) -> (Option<usize>, Option<usize>);

    fn has_hessian(&self) -> bool {
        false
    }

    fn ul_grad(&self, x: &Vector, y: &Vector, ul: &Subset) -> Result<LevelGrad>;

    fn ll_grad(&self, x: &Vector, y: &Vector, ll: &Subset) -> Result<LevelGrad>;

    fn ll_hessians(&self, _x: &Vector, _y: &Vector, _ll: &Subset) -> Result<LlHessians> {
        Err(BilevelError::MissingCapability("lower-level Hessian actions"))
    }

    /// High-accuracy `y(x)`.
    fn ll_solve_accurate(&self, x: &Vector, tol: f64) -> Result<LlSolution>;

    fn projection_x(&self) -> ProjectionSet {
        ProjectionSet::AllSpace
    }

    fn projection_y(&self, _x: &Vector) -> ProjectionSet {
        ProjectionSet::AllSpace
    }

    fn constraints(&self) -> Option<&dyn ConstraintSet> {
        None
    }

    fn initial_iterate(&self, _rng: &mut ChaCha8Rng) -> Iterate {
        let (n, m) = self.dims();
        Iterate::zeros(n, m)
    }

    fn ul_value_full(&self, x: &Vector, y: &Vector) -> Result<f64> {
        Ok(self.ul_grad(x, y, &Subset::Full)?.value)
    }

    fn ll_value_full(&self, x: &Vector, y: &Vector) -> Result<f64> {
        Ok(self.ll_grad(x, y, &Subset::Full)?.value)
    }

    /// UL/LL objective values used for trace records. Full batch unless the
    /// instance prescribes evaluation fractions.
    fn eval_values(&self, x: &Vector, y: &Vector, _rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
        Ok((self.ul_value_full(x, y)?, self.ll_value_full(x, y)?))
    }

    /// Classification error on the UL (validation) data, when meaningful.
    fn validation_error(&self, _x: &Vector, _y: &Vector) -> Option<f64> {
        None
    }

    /// Distributionally exact replacement for `steps.count()` unprojected LL
    /// SG steps at fixed `x`, when the instance can provide one.
    fn aggregated_inner_sg(
        &self,
        _x: &Vector,
        _y_start: &Vector,
        _steps: &SgSteps,
        _ll_batch: usize,
        _rng: &mut ChaCha8Rng,
    ) -> Option<Vector> {
        None
    }

    fn draw_ul(&self, size: usize, rng: &mut ChaCha8Rng) -> Result<Subset> {
        draw_subset(self.dataset_sizes().0, size, rng)
    }

    fn draw_ll(&self, size: usize, rng: &mut ChaCha8Rng) -> Result<Subset> {
        draw_subset(self.dataset_sizes().1, size, rng)
    }

    /// All four gradients (and Hessian actions when requested) on the given
    /// realizations. The Hessians share the LL realization of the LL gradient.
    fn sample_at(&self, x: &Vector, y: &Vector, ul: &Subset, ll: &Subset, want_hessian: bool) -> Result<OracleSample> {
        let u = self.ul_grad(x, y, ul)?;
        let l = self.ll_grad(x, y, ll)?;
        let (hyy, hxy_t) = if want_hessian {
            let h = self.ll_hessians(x, y, ll)?;
            (Some(h.hyy), Some(h.hxy_t))
        } else {
            (None, None)
        };
        let sizes = self.dataset_sizes();
        Ok(OracleSample {
            gux: u.gx,
            guy: u.gy,
            glx: l.gx,
            gly: l.gy,
            hyy,
            hxy_t,
            fu_value: u.value,
            fl_value: l.value,
            ul_count: ul.consumed(sizes.0),
            ll_count: ll.consumed(sizes.1),
        })
    }

    /// Draws fresh realizations from the streams and samples at `it`.
    fn sample(
        &self,
        it: &Iterate,
        batch: &BatchSpec,
        streams: &mut SampleStreams,
        want_hessian: bool,
    ) -> Result<OracleSample> {
        let ul = self.draw_ul(batch.ul_batch, &mut streams.ul)?;
        let ll = self.draw_ll(batch.ll_batch, &mut streams.ll)?;
        self.sample_at(&it.x, &it.y, &ul, &ll, want_hessian)
    }
}

/// `f(x) = f_u(x, y(x))` evaluated with an accurate LL solve.
#[derive(Debug, Clone)]
pub struct TrueValue {
    pub value: f64,
    pub y: Vector,
    /// False when the LL solve exhausted its budget; `value` then uses the best `y` found.
    pub converged: bool,
}

pub fn true_f<P: BilevelProblem + ?Sized>(problem: &P, x: &Vector, tol: f64) -> Result<TrueValue> {
    if !(tol > 0.0) {
        return Err(BilevelError::InvalidArgument("true_f needs tol > 0".into()));
    }
    let sol = problem.ll_solve_accurate(x, tol)?;
    if !sol.converged {
        log::warn!("lower-level solve did not reach tol {tol:e}; using best iterate");
    }
    let value = problem.ul_value_full(x, &sol.y)?;
    Ok(TrueValue {
        value,
        y: sol.y,
        converged: sol.converged,
    })
}

/// Running count of data points accessed by gradient and Hessian evaluations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccessCounter {
    total: u64,
}

impl AccessCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn add(&mut self, points: u64) {
        self.total += points;
    }

    /// Gradients consume both batches; a used Hessian estimate consumes the
    /// LL batch once more.
    pub fn record_sample(&mut self, sample: &OracleSample, used_hessian: bool) {
        self.total += sample.ul_count + sample.ll_count;
        if used_hessian {
            self.total += sample.ll_count;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::rng::StreamId;

    fn fake_sample(ul: u64, ll: u64) -> OracleSample {
        OracleSample {
            gux: Vector::zeros(1),
            guy: Vector::zeros(1),
            glx: Vector::zeros(1),
            gly: Vector::zeros(1),
            hyy: None,
            hxy_t: None,
            fu_value: 0.0,
            fl_value: 0.0,
            ul_count: ul,
            ll_count: ll,
        }
    }

    #[test]
    fn access_counter_accounting() {
        let mut c = AccessCounter::new();
        assert_eq!(c.total(), 0);
        c.record_sample(&fake_sample(512, 512), false);
        assert_eq!(c.total(), 1024);

        let mut h = AccessCounter::new();
        h.record_sample(&fake_sample(512, 512), true);
        assert_eq!(h.total(), 1536);
    }

    #[test]
    fn draws_without_replacement() {
        let mut rng = stream(1, StreamId::UlSampling);
        for _ in 0..50 {
            let Subset::Rows(rows) = draw_subset(Some(20), 7, &mut rng).unwrap() else {
                panic!("expected rows")
            };
            let mut sorted = rows.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 7);
            assert!(rows.iter().all(|&r| r < 20));
        }
        assert!(draw_subset(Some(3), 4, &mut rng).is_err());
        assert!(draw_subset(Some(3), 0, &mut rng).is_err());
    }

    #[test]
    fn batch_clip() {
        let b = BatchSpec::new(512, 512).unwrap().clipped((Some(100), None));
        assert_eq!(
            b,
            BatchSpec {
                ul_batch: 100,
                ll_batch: 512
            }
        );
        assert!(BatchSpec::new(0, 1).is_err());
    }

    #[test]
    fn sg_error_moments_closed_forms_match_recursion() {
        let recurse = |steps: &SgSteps, sv: f64| {
            let (mut c, mut v) = (1.0, 0.0);
            for i in 1..=steps.count() {
                let keep = 1.0 - steps.beta(i);
                c *= keep;
                v = keep * keep * v + steps.beta(i).powi(2) * sv;
            }
            (c, v)
        };
        for steps in [
            SgSteps::Constant { beta: 0.3, count: 17 },
            SgSteps::Constant { beta: 1.0, count: 4 },
            SgSteps::Harmonic { gamma: 1.0, count: 25 },
            SgSteps::Harmonic { gamma: 0.5, count: 25 },
        ] {
            let (c, v) = steps.error_moments(0.7);
            let (c2, v2) = recurse(&steps, 0.7);
            assert!((c - c2).abs() < 1e-12 && (v - v2).abs() < 1e-12, "{steps:?}");
        }
    }
}
