//! Dense vectors and matrices, the conjugate gradient solver used by the
//! Hessian-based adjoint direction, a pivoted dense solver for KKT systems,
//! and Euclidean projections.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, BilevelError, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// `pᵀHp ≤ CURVATURE_EPS·‖p‖²` is reported as non-positive curvature.
pub const CURVATURE_EPS: f64 = 1e-12;

/// Scaled-pivot threshold below which [`solve_linear`] declares the system singular.
pub const PIVOT_EPS: f64 = 1e-12;

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// A square or rectangular linear map given by its action.
#[derive(Clone)]
pub struct LinearOperator {
    dim_in: usize,
    dim_out: usize,
    apply: Arc<dyn Fn(&Vector) -> Vector + Send + Sync>,
}

impl LinearOperator {
    pub fn new<F>(dim_in: usize, dim_out: usize, apply: F) -> Self
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        Self {
            dim_in,
            dim_out,
            apply: Arc::new(apply),
        }
    }

    pub fn square<F>(dim: usize, apply: F) -> Self
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        Self::new(dim, dim, apply)
    }

    pub fn identity(dim: usize) -> Self {
        Self::square(dim, |v| v.clone())
    }

    pub fn zero(dim_in: usize, dim_out: usize) -> Self {
        Self::new(dim_in, dim_out, move |_| Vector::zeros(dim_out))
    }

    pub fn from_matrix(m: Matrix) -> Self {
        let (rows, cols) = m.shape();
        Self::new(cols, rows, move |v| &m * v)
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn is_square(&self) -> bool {
        self.dim_in == self.dim_out
    }

    pub fn apply(&self, v: &Vector) -> Result<Vector> {
        check_dim("LinearOperator::apply", self.dim_in, v.len())?;
        let out = (self.apply)(v);
        check_dim("LinearOperator::apply output", self.dim_out, out.len())?;
        Ok(out)
    }

    /// Same map multiplied by `t`.
    pub fn scaled(&self, t: f64) -> Self {
        let inner = self.apply.clone();
        Self::new(self.dim_in, self.dim_out, move |v| inner(v) * t)
    }

    /// Materializes the operator column by column.
    pub fn to_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.dim_out, self.dim_in);
        let mut e = Vector::zeros(self.dim_in);
        for j in 0..self.dim_in {
            e[j] = 1.0;
            let col = (self.apply)(&e);
            m.set_column(j, &col);
            e[j] = 0.0;
        }
        m
    }
}

impl fmt::Debug for LinearOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearOperator")
            .field("dim_in", &self.dim_in)
            .field("dim_out", &self.dim_out)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgStatus {
    Converged,
    MaxIter,
    NonPositiveCurvature,
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: Vector,
    pub status: CgStatus,
    pub iterations: usize,
}

/// Linear conjugate gradient on `H·x = rhs` starting from zero.
///
/// Stops as soon as a search direction with `pᵀHp ≤ 1e-12·‖p‖²` is met and
/// returns the iterate built so far (zero if it happens on the first
/// direction).
pub fn cg_solve(h: &LinearOperator, rhs: &Vector, tol: f64, max_iter: usize) -> Result<CgOutcome> {
    if !h.is_square() {
        return Err(BilevelError::InvalidArgument(format!(
            "cg_solve needs a square operator, got {}x{}",
            h.dim_out(),
            h.dim_in()
        )));
    }
    check_dim("cg_solve rhs", h.dim_in(), rhs.len())?;
    if !(tol > 0.0) || max_iter == 0 {
        return Err(BilevelError::InvalidArgument(
            "cg_solve needs tol > 0 and max_iter ≥ 1".into(),
        ));
    }

    let threshold = tol * rhs.norm().max(1.0);
    let mut x = Vector::zeros(rhs.len());
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();

    for it in 0..max_iter {
        if rr.sqrt() <= threshold {
            return Ok(CgOutcome {
                solution: x,
                status: CgStatus::Converged,
                iterations: it,
            });
        }
        let hp = h.apply(&p)?;
        let curvature = p.dot(&hp);
        if curvature <= CURVATURE_EPS * p.norm_squared() {
            return Ok(CgOutcome {
                solution: x,
                status: CgStatus::NonPositiveCurvature,
                iterations: it,
            });
        }
        let alpha = rr / curvature;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &hp, 1.0);
        let rr_new = r.norm_squared();
        p = &r + (rr_new / rr) * &p;
        rr = rr_new;
    }

    if !all_finite(&x) {
        return Err(BilevelError::NonFinite("cg_solve"));
    }
    let status = if rr.sqrt() <= threshold {
        CgStatus::Converged
    } else {
        CgStatus::MaxIter
    };
    Ok(CgOutcome {
        solution: x,
        status,
        iterations: max_iter,
    })
}

/// Gaussian elimination with partial pivoting on row-scaled pivots.
pub fn solve_linear(a: &Matrix, b: &Vector) -> Result<Vector> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(BilevelError::InvalidArgument(format!(
            "solve_linear needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    check_dim("solve_linear rhs", n, b.len())?;

    let mut m = a.clone();
    let mut rhs = b.clone();
    let mut scale: Vec<f64> = (0..n)
        .map(|i| m.row(i).iter().fold(0.0_f64, |acc, v| acc.max(v.abs())))
        .collect();

    for col in 0..n {
        let mut best = col;
        let mut best_val = -1.0;
        for row in col..n {
            let s = if scale[row] > 0.0 { scale[row] } else { 1.0 };
            let v = m[(row, col)].abs() / s;
            if v > best_val {
                best_val = v;
                best = row;
            }
        }
        if scale[best] == 0.0 || best_val < PIVOT_EPS {
            return Err(BilevelError::SingularSystem {
                pivot: best_val.max(0.0),
                column: col,
            });
        }
        if best != col {
            m.swap_rows(best, col);
            rhs.swap_rows(best, col);
            scale.swap(best, col);
        }
        let pivot = m[(col, col)];
        for row in (col + 1)..n {
            let factor = m[(row, col)] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                let v = m[(col, k)];
                m[(row, k)] -= factor * v;
            }
            let v = rhs[col];
            rhs[row] -= factor * v;
        }
    }

    let mut x = Vector::zeros(n);
    for i in (0..n).rev() {
        let mut acc = rhs[i];
        for k in (i + 1)..n {
            acc -= m[(i, k)] * x[k];
        }
        x[i] = acc / m[(i, i)];
    }
    if !all_finite(&x) {
        return Err(BilevelError::NonFinite("solve_linear"));
    }
    Ok(x)
}

/// Closed convex sets onto which iterates are projected.
#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionSet {
    AllSpace,
    Box {
        lo: Vector,
        hi: Vector,
    },
    Ball {
        center: Vector,
        radius: f64,
    },
    /// `{ v : M·v = rhs }` with `M` of full row rank.
    Affine {
        matrix: Matrix,
        rhs: Vector,
    },
}

impl ProjectionSet {
    pub fn boxed(lo: Vector, hi: Vector) -> Result<Self> {
        check_dim("box bounds", lo.len(), hi.len())?;
        if lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h)) {
            return Err(BilevelError::InvalidArgument("box requires lo ≤ hi".into()));
        }
        Ok(ProjectionSet::Box { lo, hi })
    }

    pub fn ball(center: Vector, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(BilevelError::InvalidArgument("ball requires radius > 0".into()));
        }
        Ok(ProjectionSet::Ball { center, radius })
    }

    pub fn affine(matrix: Matrix, rhs: Vector) -> Result<Self> {
        check_dim("affine rhs", matrix.nrows(), rhs.len())?;
        Ok(ProjectionSet::Affine { matrix, rhs })
    }

    pub fn contains(&self, p: &Vector, tol: f64) -> bool {
        match self {
            ProjectionSet::AllSpace => true,
            ProjectionSet::Box { lo, hi } => p
                .iter()
                .zip(lo.iter().zip(hi.iter()))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol),
            ProjectionSet::Ball { center, radius } => (p - center).norm() <= radius + tol,
            ProjectionSet::Affine { matrix, rhs } => (matrix * p - rhs).amax() <= tol,
        }
    }
}

/// Euclidean projection of `p` onto `set`.
pub fn project(p: &Vector, set: &ProjectionSet) -> Result<Vector> {
    match set {
        ProjectionSet::AllSpace => Ok(p.clone()),
        ProjectionSet::Box { lo, hi } => {
            check_dim("project onto box", lo.len(), p.len())?;
            Ok(Vector::from_iterator(
                p.len(),
                p.iter()
                    .zip(lo.iter().zip(hi.iter()))
                    .map(|(v, (l, h))| v.clamp(*l, *h)),
            ))
        }
        ProjectionSet::Ball { center, radius } => {
            check_dim("project onto ball", center.len(), p.len())?;
            let offset = p - center;
            let dist = offset.norm();
            if dist <= *radius {
                Ok(p.clone())
            } else {
                Ok(center + offset * (*radius / dist))
            }
        }
        ProjectionSet::Affine { matrix, rhs } => {
            check_dim("project onto affine set", matrix.ncols(), p.len())?;
            let residual = matrix * p - rhs;
            let gram = matrix * matrix.transpose();
            let w = solve_linear(&gram, &residual)?;
            Ok(p - matrix.transpose() * w)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(d: &[f64]) -> LinearOperator {
        LinearOperator::from_matrix(Matrix::from_diagonal(&Vector::from_row_slice(d)))
    }

    #[test]
    fn cg_identity() {
        let rhs = Vector::from_row_slice(&[1.0, -2.0, 0.0]);
        let out = cg_solve(&LinearOperator::identity(3), &rhs, 1e-10, 10).unwrap();
        assert_eq!(out.status, CgStatus::Converged);
        assert_relative_eq!(out.solution, rhs, epsilon = 1e-14);
    }

    #[test]
    fn cg_diagonal() {
        let rhs = Vector::from_row_slice(&[2.0, 8.0]);
        let out = cg_solve(&diag(&[2.0, 4.0]), &rhs, 1e-12, 10).unwrap();
        assert_eq!(out.status, CgStatus::Converged);
        assert_relative_eq!(out.solution, Vector::from_row_slice(&[1.0, 2.0]), epsilon = 1e-12);
    }

    #[test]
    fn cg_indefinite_reports_curvature() {
        let rhs = Vector::from_row_slice(&[1.0, 1.0]);
        let out = cg_solve(&diag(&[1.0, -1.0]), &rhs, 1e-10, 10).unwrap();
        assert_eq!(out.status, CgStatus::NonPositiveCurvature);
        assert!(out.solution.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cg_negative_curvature_after_progress_keeps_partial_iterate() {
        // first direction is e1 (positive curvature), second hits the negative block
        let h = diag(&[1.0, -1.0]);
        let rhs = Vector::from_row_slice(&[1.0, 1e-3]);
        let out = cg_solve(&h, &rhs, 1e-14, 10).unwrap();
        assert_eq!(out.status, CgStatus::NonPositiveCurvature);
        assert!(out.iterations >= 1);
        assert!(out.solution.norm() > 0.0);
    }

    #[test]
    fn cg_rejects_mismatch() {
        let err = cg_solve(&LinearOperator::identity(3), &Vector::zeros(2), 1e-8, 5).unwrap_err();
        assert!(matches!(err, BilevelError::DimensionMismatch { .. }));
    }

    #[test]
    fn solve_linear_examples() {
        let x = solve_linear(&Matrix::identity(2, 2), &Vector::from_row_slice(&[3.0, 4.0])).unwrap();
        assert_eq!(x, Vector::from_row_slice(&[3.0, 4.0]));

        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let x = solve_linear(&a, &Vector::from_row_slice(&[4.0, 1.0])).unwrap();
        assert_relative_eq!(x, Vector::from_row_slice(&[2.0, 2.0]), epsilon = 1e-15);

        let a = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let err = solve_linear(&a, &Vector::from_row_slice(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, BilevelError::SingularSystem { .. }));
    }

    #[test]
    fn projection_examples() {
        let p = Vector::from_row_slice(&[5.0, -5.0]);
        let set = ProjectionSet::boxed(Vector::zeros(2), Vector::from_element(2, 1.0)).unwrap();
        assert_eq!(project(&p, &set).unwrap(), Vector::from_row_slice(&[1.0, 0.0]));

        let p = Vector::from_row_slice(&[3.0, 4.0]);
        let set = ProjectionSet::ball(Vector::zeros(2), 1.0).unwrap();
        assert_relative_eq!(project(&p, &set).unwrap(), Vector::from_row_slice(&[0.6, 0.8]));

        let inside = Vector::from_row_slice(&[0.1, 0.2]);
        assert_eq!(project(&inside, &set).unwrap(), inside);
    }

    #[test]
    fn projection_set_validation() {
        assert!(ProjectionSet::ball(Vector::zeros(2), 0.0).is_err());
        assert!(ProjectionSet::boxed(Vector::from_element(1, 2.0), Vector::from_element(1, 1.0)).is_err());
    }

    #[test]
    fn affine_projection_lands_on_set() {
        let m = Matrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let set = ProjectionSet::affine(m, Vector::from_element(1, 3.0)).unwrap();
        let y = project(&Vector::zeros(3), &set).unwrap();
        assert_relative_eq!(y, Vector::from_element(3, 1.0), epsilon = 1e-14);
    }

    fn random_set(rng: &mut ChaCha8Rng, dim: usize) -> ProjectionSet {
        match rng.random_range(0..3) {
            0 => {
                let lo = Vector::from_fn(dim, |_, _| rng.random_range(-2.0..0.5));
                let hi = Vector::from_fn(dim, |i, _| lo[i] + rng.random_range(0.0..2.0));
                ProjectionSet::boxed(lo, hi).unwrap()
            }
            1 => {
                let c = Vector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
                ProjectionSet::ball(c, rng.random_range(0.1..3.0)).unwrap()
            }
            _ => ProjectionSet::AllSpace,
        }
    }

    #[test]
    fn projection_idempotent_and_nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let dim = rng.random_range(1..6);
            let set = random_set(&mut rng, dim);
            let a = Vector::from_fn(dim, |_, _| rng.random_range(-5.0..5.0));
            let b = Vector::from_fn(dim, |_, _| rng.random_range(-5.0..5.0));
            let pa = project(&a, &set).unwrap();
            let pb = project(&b, &set).unwrap();
            assert!(set.contains(&pa, 1e-12));
            assert_relative_eq!(project(&pa, &set).unwrap(), pa, epsilon = 1e-12);
            assert!((&pa - &pb).norm() <= (&a - &b).norm() + 1e-12);
        }
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let g = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        g.transpose() * &g + Matrix::identity(n, n) * 0.5
    }

    #[test]
    fn cg_matches_direct_solve_on_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let n = rng.random_range(1..=50);
            let a = random_spd(&mut rng, n);
            let b = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let direct = solve_linear(&a, &b).unwrap();
            assert!((&a * &direct - &b).norm() <= 1e-8 * b.norm().max(1.0));
            let op = LinearOperator::from_matrix(a.clone());
            let cg = cg_solve(&op, &b, 1e-8, 4 * n + 10).unwrap();
            assert_eq!(cg.status, CgStatus::Converged, "n={n}");
            assert!((&cg.solution - &direct).norm() <= 1e-6 * direct.norm().max(1e-12));
        }
    }

    proptest! {
        #[test]
        fn ball_projection_is_nearest_point(px in -10.0..10.0f64, py in -10.0..10.0f64, r in 0.1..5.0f64) {
            let set = ProjectionSet::ball(Vector::zeros(2), r).unwrap();
            let p = Vector::from_row_slice(&[px, py]);
            let q = project(&p, &set).unwrap();
            // any other point of the circle is no closer
            for i in 0..16 {
                let t = i as f64 * std::f64::consts::PI / 8.0;
                let other = Vector::from_row_slice(&[r * t.cos(), r * t.sin()]);
                prop_assert!((&p - &q).norm() <= (&p - &other).norm() + 1e-9);
            }
        }
    }
}
