//! Quadratic bilevel family with closed-form reduced function.
//!
//! `f_u(x, y) = ½ xᵀ diag(w) x + ½‖y‖²`, `f_ℓ(x, y) = ½‖y − Aᵀx‖²`, optionally
//! subject to `B y = C x`. Unconstrained: `y(x) = Aᵀx` and
//! `∇f(x) = (diag(w) + AAᵀ) x`. Sampled gradients carry additive Gaussian
//! noise with variance `σ²/b` per entry for a batch of `b` draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{BilevelError, Result};
use crate::linalg::{solve_linear, LinearOperator, Matrix, ProjectionSet, Vector};
use crate::problem::{BilevelProblem, ConstraintSet, Iterate, LevelGrad, LlHessians, LlSolution, SgSteps, Subset};

/// `B y − C x = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEqualities {
    pub b: Matrix,
    pub c: Matrix,
}

impl ConstraintSet for LinearEqualities {
    fn len(&self) -> usize {
        self.b.nrows()
    }

    fn values(&self, x: &Vector, y: &Vector) -> Vector {
        &self.b * y - &self.c * x
    }

    fn jacobian_x(&self, _x: &Vector, _y: &Vector) -> Matrix {
        -&self.c
    }

    fn jacobian_y(&self, _x: &Vector, _y: &Vector) -> Matrix {
        self.b.clone()
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticBilevel {
    a: Matrix,
    ul_weight: Vector,
    noise_std: f64,
    constraints: Option<LinearEqualities>,
    aggregate_inner: bool,
}

impl QuadraticBilevel {
    /// `a` is the `n×m` coupling matrix.
    pub fn new(a: Matrix, noise_std: f64) -> Result<Self> {
        if !(noise_std >= 0.0) || !noise_std.is_finite() {
            return Err(BilevelError::InvalidArgument("noise_std must be ≥ 0".into()));
        }
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(BilevelError::InvalidArgument(
                "coupling matrix must be non-empty".into(),
            ));
        }
        let n = a.nrows();
        Ok(Self {
            a,
            ul_weight: Vector::from_element(n, 1.0),
            noise_std,
            constraints: None,
            aggregate_inner: false,
        })
    }

    /// Replaces the identity UL block by `diag(w)`, `w ≥ 0` (zeros give a
    /// convex, not strongly convex, reduced function when `A` is rank deficient).
    pub fn with_ul_weight(mut self, w: Vector) -> Result<Self> {
        if w.len() != self.a.nrows() || w.iter().any(|v| !(*v >= 0.0)) {
            return Err(BilevelError::InvalidArgument(
                "UL weights must be n nonnegative entries".into(),
            ));
        }
        self.ul_weight = w;
        Ok(self)
    }

    /// Adds `B y = C x`; `B` must have full row rank with fewer rows than `m`.
    pub fn with_equalities(mut self, b: Matrix, c: Matrix) -> Result<Self> {
        let (n, m) = self.dims();
        if b.ncols() != m || c.ncols() != n || b.nrows() != c.nrows() {
            return Err(BilevelError::InvalidArgument(
                "constraint shapes do not match (n, m)".into(),
            ));
        }
        if b.nrows() >= m {
            return Err(BilevelError::InvalidArgument(
                "need fewer constraints than LL variables".into(),
            ));
        }
        let rank = b.clone().svd(false, false).rank(1e-10);
        if rank < b.nrows() {
            return Err(BilevelError::InvalidArgument(
                "constraint gradients are linearly dependent".into(),
            ));
        }
        self.constraints = Some(LinearEqualities { b, c });
        Ok(self)
    }

    /// Lets inner SG runs at fixed `x` be replaced by their exact
    /// distribution (see [`BilevelProblem::aggregated_inner_sg`]).
    pub fn with_aggregated_inner_sg(mut self, on: bool) -> Self {
        self.aggregate_inner = on;
        self
    }

    pub fn coupling(&self) -> &Matrix {
        &self.a
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Hessian `diag(w) + AAᵀ` of the unconstrained reduced function.
    pub fn reduced_hessian(&self) -> Matrix {
        Matrix::from_diagonal(&self.ul_weight) + &self.a * self.a.transpose()
    }

    /// `(y(x), f(x), ∇f(x))` for the unconstrained variant.
    pub fn closed_form(&self, x: &Vector) -> Result<(Vector, f64, Vector)> {
        if self.constraints.is_some() {
            return Err(BilevelError::Unsupported(
                "closed form only for the unconstrained variant; use ll_solve_accurate".into(),
            ));
        }
        let y = self.a.transpose() * x;
        let f = 0.5 * x.dot(&self.ul_weight.component_mul(x)) + 0.5 * y.norm_squared();
        let grad = self.reduced_hessian() * x;
        Ok((y, f, grad))
    }

    fn noise(&self, subset: &Subset, stream_no: u64, dim: usize) -> Result<Option<Vector>> {
        match subset {
            Subset::Full => Ok(None),
            Subset::Draws { size, key } => {
                if *size == 0 {
                    return Err(BilevelError::InvalidArgument("empty batch".into()));
                }
                if self.noise_std == 0.0 {
                    return Ok(None);
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*key);
                rng.set_stream(stream_no);
                let scale = self.noise_std / (*size as f64).sqrt();
                Ok(Some(Vector::from_fn(dim, |_, _| {
                    scale * rng.sample::<f64, _>(StandardNormal)
                })))
            }
            Subset::Rows(_) => Err(BilevelError::InvalidArgument(
                "quadratic instance is stream-generated; row subsets do not apply".into(),
            )),
        }
    }
}

impl BilevelProblem for QuadraticBilevel {
    fn dims(&self) -> (usize, usize) {
        (self.a.nrows(), self.a.ncols())
    }

    fn dataset_sizes(&self) -> (Option<usize>, Option<usize>) {
        (None, None)
    }

    fn has_hessian(&self) -> bool {
        true
    }

    fn ul_grad(&self, x: &Vector, y: &Vector, ul: &Subset) -> Result<LevelGrad> {
        let (n, m) = self.dims();
        crate::error::check_dim("quadratic x", n, x.len())?;
        crate::error::check_dim("quadratic y", m, y.len())?;
        let wx = self.ul_weight.component_mul(x);
        let value = 0.5 * x.dot(&wx) + 0.5 * y.norm_squared();
        let mut gx = wx;
        let mut gy = y.clone();
        if let Some(e) = self.noise(ul, 0, n)? {
            gx += e;
        }
        if let Some(e) = self.noise(ul, 1, m)? {
            gy += e;
        }
        Ok(LevelGrad { value, gx, gy })
    }

    fn ll_grad(&self, x: &Vector, y: &Vector, ll: &Subset) -> Result<LevelGrad> {
        let (n, m) = self.dims();
        crate::error::check_dim("quadratic x", n, x.len())?;
        crate::error::check_dim("quadratic y", m, y.len())?;
        let r = y - self.a.transpose() * x;
        let value = 0.5 * r.norm_squared();
        let mut gx = -(&self.a * &r);
        let mut gy = r;
        if let Some(e) = self.noise(ll, 2, n)? {
            gx += e;
        }
        if let Some(e) = self.noise(ll, 3, m)? {
            gy += e;
        }
        Ok(LevelGrad { value, gx, gy })
    }

    fn ll_hessians(&self, _x: &Vector, _y: &Vector, _ll: &Subset) -> Result<LlHessians> {
        let (n, m) = self.dims();
        let neg_a = -self.a.clone();
        Ok(LlHessians {
            hyy: LinearOperator::identity(m),
            hxy_t: LinearOperator::new(m, n, move |v| &neg_a * v),
        })
    }

    fn ll_solve_accurate(&self, x: &Vector, _tol: f64) -> Result<LlSolution> {
        let target = self.a.transpose() * x;
        let y = match &self.constraints {
            None => target,
            Some(eq) => {
                let m = self.a.ncols();
                let p = eq.b.nrows();
                let mut kkt = Matrix::zeros(m + p, m + p);
                kkt.view_mut((0, 0), (m, m)).fill_with_identity();
                kkt.view_mut((0, m), (m, p)).copy_from(&eq.b.transpose());
                kkt.view_mut((m, 0), (p, m)).copy_from(&eq.b);
                let mut rhs = Vector::zeros(m + p);
                rhs.rows_mut(0, m).copy_from(&target);
                rhs.rows_mut(m, p).copy_from(&(&eq.c * x));
                solve_linear(&kkt, &rhs)?.rows(0, m).into_owned()
            }
        };
        Ok(LlSolution { y, converged: true })
    }

    fn projection_y(&self, x: &Vector) -> ProjectionSet {
        match &self.constraints {
            None => ProjectionSet::AllSpace,
            Some(eq) => ProjectionSet::Affine {
                matrix: eq.b.clone(),
                rhs: &eq.c * x,
            },
        }
    }

    fn constraints(&self) -> Option<&dyn ConstraintSet> {
        self.constraints.as_ref().map(|c| c as &dyn ConstraintSet)
    }

    /// `x ~ N(0, I)` (the origin is the unconstrained minimizer) and a
    /// `y ~ N(0, I)`, or the LL solution when `Y(x)` is constrained.
    fn initial_iterate(&self, rng: &mut ChaCha8Rng) -> Iterate {
        let (n, m) = self.dims();
        let x = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = match &self.constraints {
            None => Vector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal)),
            Some(_) => self
                .ll_solve_accurate(&x, 1e-12)
                .map(|s| s.y)
                .unwrap_or_else(|_| Vector::zeros(m)),
        };
        Iterate::new(x, y)
    }

    /// With `∇²_yy f_ℓ = I` the SG error `e = y − Aᵀx` evolves entrywise as
    /// `e ← (1 − β_i) e − β_i ξ_i`, which is Gaussian given `e₀`.
    fn aggregated_inner_sg(
        &self,
        x: &Vector,
        y_start: &Vector,
        steps: &SgSteps,
        ll_batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Option<Vector> {
        if !self.aggregate_inner || self.constraints.is_some() {
            return None;
        }
        let step_var = self.noise_std * self.noise_std / ll_batch.max(1) as f64;
        let (coef, var) = steps.error_moments(step_var);
        let target = self.a.transpose() * x;
        let sd = var.sqrt();
        let key: u64 = rng.random();
        let mut noise_rng = ChaCha8Rng::seed_from_u64(key);
        let noise = Vector::from_fn(target.len(), |_, _| sd * noise_rng.sample::<f64, _>(StandardNormal));
        Some(&target + coef * (y_start - &target) + noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::true_f;
    use approx::assert_relative_eq;

    fn diag12() -> QuadraticBilevel {
        QuadraticBilevel::new(Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]), 0.0).unwrap()
    }

    #[test]
    fn closed_form_examples() {
        let q = QuadraticBilevel::new(Matrix::identity(2, 2), 0.0).unwrap();
        let (y, f, g) = q.closed_form(&Vector::from_element(2, 1.0)).unwrap();
        assert_eq!(y, Vector::from_element(2, 1.0));
        assert_eq!(f, 2.0);
        assert_eq!(g, Vector::from_element(2, 2.0));

        let (y, f, g) = q.closed_form(&Vector::zeros(2)).unwrap();
        assert_eq!((y.norm(), f, g.norm()), (0.0, 0.0, 0.0));

        let (_, _, g) = diag12().closed_form(&Vector::from_element(2, 1.0)).unwrap();
        assert_eq!(g, Vector::from_row_slice(&[2.0, 5.0]));
    }

    #[test]
    fn closed_form_rejects_constrained() {
        let q = diag12()
            .with_equalities(
                Matrix::from_row_slice(1, 2, &[1.0, 1.0]),
                Matrix::from_row_slice(1, 2, &[0.0, 1.0]),
            )
            .unwrap();
        assert!(matches!(
            q.closed_form(&Vector::zeros(2)),
            Err(BilevelError::Unsupported(_))
        ));
    }

    #[test]
    fn true_f_matches_closed_form() {
        let q = diag12();
        let x = Vector::from_row_slice(&[0.3, -1.2]);
        let (_, f, _) = q.closed_form(&x).unwrap();
        assert_relative_eq!(true_f(&q, &x, 1e-8).unwrap().value, f, epsilon = 1e-12);
        assert_eq!(true_f(&q, &Vector::zeros(2), 1e-8).unwrap().value, 0.0);
        for tol in [1e-2, 1e-6, 1e-10] {
            assert!((true_f(&q, &x, tol).unwrap().value - f).abs() <= 1e-10);
        }
    }

    #[test]
    fn constrained_solution_is_feasible_and_stationary() {
        let q = QuadraticBilevel::new(Matrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, -0.3, 1.0, 2.0]), 0.0)
            .unwrap()
            .with_equalities(
                Matrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]),
                Matrix::from_row_slice(1, 2, &[1.0, -1.0]),
            )
            .unwrap();
        let x = Vector::from_row_slice(&[0.7, 0.2]);
        let y = q.ll_solve_accurate(&x, 1e-10).unwrap().y;
        let cs = q.constraints().unwrap();
        assert!(cs.values(&x, &y).amax() < 1e-12);
        // gradient lies in the row space of B
        let g = q.ll_grad(&x, &y, &Subset::Full).unwrap().gy;
        assert!((g[0] - g[1]).abs() < 1e-12 && (g[1] - g[2]).abs() < 1e-12);
    }

    #[test]
    fn noise_free_draws_equal_exact() {
        let q = diag12();
        let x = Vector::from_row_slice(&[1.0, 2.0]);
        let y = Vector::from_row_slice(&[-1.0, 0.5]);
        let draw = Subset::Draws { size: 4, key: 99 };
        let a = q.ll_grad(&x, &y, &draw).unwrap();
        let b = q.ll_grad(&x, &y, &Subset::Full).unwrap();
        assert_eq!(a.gx, b.gx);
        assert_eq!(a.gy, b.gy);
    }

    #[test]
    fn same_key_same_noise() {
        let q = QuadraticBilevel::new(Matrix::identity(3, 3), 0.5).unwrap();
        let draw = Subset::Draws { size: 1, key: 5 };
        let x = Vector::zeros(3);
        let y1 = Vector::zeros(3);
        let y2 = Vector::from_element(3, 1.0);
        let g1 = q.ll_grad(&x, &y1, &draw).unwrap().gx;
        let g2 = q.ll_grad(&x, &y2, &draw).unwrap().gx;
        // gx = −A(y − Aᵀx) + e: the noise cancels in the difference
        assert_relative_eq!(g1 - g2, Vector::from_element(3, 1.0), epsilon = 1e-12);
    }
}
