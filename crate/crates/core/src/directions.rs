//! Direction engines producing the step `d(x_k, ỹ_k, ξ_k)`.
//!
//! * adjoint (exact solve or BSG-H conjugate gradient) from sampled Hessian actions,
//! * BSG-1, the rank-1 outer-product approximation of both LL Hessians,
//! * DARTS with its central finite-difference cross-Hessian product,
//! * the LQ steepest-descent direction for equality-constrained lower levels.

use crate::error::{check_dim, BilevelError, Result};
use crate::linalg::{cg_solve, solve_linear, CgStatus, Matrix, Vector};
use crate::problem::{BilevelProblem, OracleSample, Subset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Engine {
    AdjointExact,
    BsgH,
    Bsg1,
    Darts,
    Lq,
}

impl Engine {
    pub fn needs_hessian(self) -> bool {
        matches!(self, Engine::AdjointExact | Engine::BsgH | Engine::Lq)
    }

    pub fn name(self) -> &'static str {
        match self {
            Engine::AdjointExact => "adjoint_exact",
            Engine::BsgH => "bsg_h",
            Engine::Bsg1 => "bsg_1",
            Engine::Darts => "darts",
            Engine::Lq => "lq",
        }
    }
}

impl std::str::FromStr for Engine {
    type Err = BilevelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjoint_exact" => Ok(Engine::AdjointExact),
            "bsg_h" => Ok(Engine::BsgH),
            "bsg_1" => Ok(Engine::Bsg1),
            "darts" => Ok(Engine::Darts),
            "lq" => Ok(Engine::Lq),
            other => Err(BilevelError::InvalidArgument(format!("unknown engine `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSpec {
    pub engine: Engine,
    /// η multiplying the finite-difference term. `run_darts` overwrites it
    /// with the current LL stepsize each iteration.
    pub darts_eta: f64,
    /// Scale the probe direction by `1/‖∇_y f_ℓ(x, ỹ)‖²`.
    pub darts_scale_curvature: bool,
    /// Use η = 1 in the finite-difference term regardless of the LL stepsize.
    pub darts_eta_one: bool,
    /// Constant `c` in `ε = c/‖v‖`.
    pub darts_fd_constant: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub denom_floor: f64,
}

impl DirectionSpec {
    pub fn new(engine: Engine) -> Self {
        Self {
            engine,
            darts_eta: 1.0,
            darts_scale_curvature: false,
            darts_eta_one: false,
            darts_fd_constant: 0.01,
            cg_tol: 1e-10,
            cg_max_iter: 200,
            denom_floor: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(BilevelError::InvalidArgument(format!("{name} must be > 0")))
            }
        };
        positive(self.darts_eta, "darts_eta")?;
        positive(self.darts_fd_constant, "darts_fd_constant")?;
        positive(self.cg_tol, "cg_tol")?;
        positive(self.denom_floor, "denom_floor")?;
        if self.cg_max_iter == 0 {
            return Err(BilevelError::InvalidArgument("cg_max_iter must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Diagnostics of one adjoint solve.
#[derive(Debug, Clone)]
pub struct AdjointOutcome {
    pub direction: Vector,
    pub lambda: Vector,
    pub cg_status: Option<CgStatus>,
}

/// `d = −(g_x^u + H_xy λ)` with `H_yy λ = −g_y^u`.
///
/// `AdjointExact` materializes `H_yy` and solves directly; `BsgH` runs CG and
/// keeps whatever iterate it had when non-positive curvature shows up (zero
/// on the first direction, giving `d = −g_x^u`).
pub fn adjoint_direction(s: &OracleSample, spec: &DirectionSpec) -> Result<Vector> {
    adjoint_direction_detailed(s, spec).map(|o| o.direction)
}

pub fn adjoint_direction_detailed(s: &OracleSample, spec: &DirectionSpec) -> Result<AdjointOutcome> {
    let (Some(hyy), Some(hxy_t)) = (&s.hyy, &s.hxy_t) else {
        return Err(BilevelError::MissingCapability(
            "adjoint direction needs Hessian actions",
        ));
    };
    check_dim("adjoint rhs", hyy.dim_in(), s.guy.len())?;
    let rhs = -&s.guy;
    let (lambda, cg_status) = match spec.engine {
        Engine::AdjointExact => (solve_linear(&hyy.to_matrix(), &rhs)?, None),
        _ => {
            let out = cg_solve(hyy, &rhs, spec.cg_tol, spec.cg_max_iter)?;
            if out.status == CgStatus::NonPositiveCurvature && out.iterations == 0 {
                log::debug!("adjoint CG hit non-positive curvature on its first direction");
            }
            (out.solution, Some(out.status))
        }
    };
    let correction = hxy_t.apply(&lambda)?;
    check_dim("adjoint UL gradient", correction.len(), s.gux.len())?;
    Ok(AdjointOutcome {
        direction: -(&s.gux + correction),
        lambda,
        cg_status,
    })
}

/// BSG-1: `d = −(g_x^u − ρ g_x^ℓ)`, `ρ = (g_y^ℓ·g_y^u)/(g_y^ℓ·g_y^ℓ)`, with
/// `d = −g_x^u` whenever the denominator is below `denom_floor`.
pub fn bsg1_direction(s: &OracleSample, spec: &DirectionSpec) -> Result<Vector> {
    check_dim("bsg1 LL gradient", s.guy.len(), s.gly.len())?;
    check_dim("bsg1 UL gradient", s.gux.len(), s.glx.len())?;
    let denom = s.gly.dot(&s.gly);
    if denom < spec.denom_floor {
        return Ok(-&s.gux);
    }
    let rho = s.gly.dot(&s.guy) / denom;
    Ok(-(&s.gux - rho * &s.glx))
}

/// Central difference `[∇_x f_ℓ(x, y + εv) − ∇_x f_ℓ(x, y − εv)]/(2ε)` with
/// `ε = c/‖v‖`, both probes on the same LL realization. Returns `None` when
/// `v` vanishes.
pub fn fd_cross_product<P: BilevelProblem + ?Sized>(
    problem: &P,
    x: &Vector,
    y: &Vector,
    v: &Vector,
    ll: &Subset,
    fd_constant: f64,
) -> Result<Option<(Vector, f64)>> {
    let vn = v.norm();
    if vn == 0.0 {
        return Ok(None);
    }
    let eps = fd_constant / vn;
    let y_plus = y + eps * v;
    let y_minus = y - eps * v;
    let g_plus = problem.ll_grad(x, &y_plus, ll)?.gx;
    let g_minus = problem.ll_grad(x, &y_minus, ll)?.gx;
    Ok(Some(((g_plus - g_minus) / (2.0 * eps), eps)))
}

#[derive(Debug, Clone)]
pub struct DartsOutcome {
    pub direction: Vector,
    pub ul_count: u64,
    /// LL data consumed by the curvature gradient and the two probes.
    pub ll_count: u64,
}

/// The DARTS step direction.
///
/// `g_x^u`, `g_y^u` are taken at `(x, ỹ)`, the finite-difference probes are
/// centered at `y`, all LL quantities share the realization `ll`.
pub fn darts_direction<P: BilevelProblem + ?Sized>(
    problem: &P,
    x: &Vector,
    y: &Vector,
    y_tilde: &Vector,
    ul: &Subset,
    ll: &Subset,
    spec: &DirectionSpec,
) -> Result<DartsOutcome> {
    let sizes = problem.dataset_sizes();
    let ll_unit = ll.consumed(sizes.1);
    let u = problem.ul_grad(x, y_tilde, ul)?;
    let mut out = DartsOutcome {
        direction: -&u.gx,
        ul_count: ul.consumed(sizes.0),
        ll_count: 0,
    };

    let mut v = u.gy;
    if spec.darts_scale_curvature {
        let gly = problem.ll_grad(x, y_tilde, ll)?.gy;
        out.ll_count += ll_unit;
        let denom = gly.norm_squared();
        if denom < spec.denom_floor {
            return Ok(out);
        }
        v /= denom;
    }
    if v.norm() < spec.denom_floor {
        return Ok(out);
    }
    let eta = if spec.darts_eta_one { 1.0 } else { spec.darts_eta };
    if let Some((fd, _eps)) = fd_cross_product(problem, x, y, &v, ll, spec.darts_fd_constant)? {
        out.ll_count += 2 * ll_unit;
        out.direction = -(&u.gx - eta * fd);
    }
    Ok(out)
}

/// Solution of the linear-quadratic steepest-descent subproblem.
#[derive(Debug, Clone)]
pub struct LqResult {
    pub dx: Vector,
    pub dy: Vector,
    /// Multipliers of the linearized LL constraints in the LQ lower level.
    pub multipliers: Vector,
    /// `ĉ` such that the UL objective reads `ĉᵀ d^x` after eliminating `d^y`.
    pub effective_cost: Vector,
    /// UL mini-batch value at `(x, y)`.
    pub fu_value: f64,
    pub ul_count: u64,
    pub ll_count: u64,
}

/// Coefficients with `|ĉ_i|` at or below this are treated as zero.
pub const LQ_ZERO_COST: f64 = 1e-12;

/// Steepest-descent direction of `f` in the ∞-norm for lower levels with
/// equality constraints only (or none).
///
/// The LL QP of the LQ problem is replaced by its KKT system
/// `[L_yy J_yᵀ; J_y 0] [d^y; ν] = [−L_yx d^x; −J_x d^x]`, which makes `d^y`
/// linear in `d^x`. The UL objective then reduces to `ĉᵀ d^x` and its
/// minimizer over the unit ∞-ball is `−sign(ĉ)`.
pub fn lq_direction<P: BilevelProblem + ?Sized>(
    problem: &P,
    x: &Vector,
    y: &Vector,
    ul: &Subset,
    ll: &Subset,
) -> Result<LqResult> {
    let (n, m) = problem.dims();
    let constraints = problem.constraints();
    if let Some(cs) = constraints {
        if cs.has_inequalities() {
            return Err(BilevelError::Unsupported(
                "LQ direction supports equality-constrained lower levels only".into(),
            ));
        }
    }
    if !problem.has_hessian() {
        return Err(BilevelError::MissingCapability("LQ direction needs LL Hessian actions"));
    }

    let sizes = problem.dataset_sizes();
    let u = problem.ul_grad(x, y, ul)?;
    let l = problem.ll_grad(x, y, ll)?;
    let h = problem.ll_hessians(x, y, ll)?;
    let mut lyy = h.hyy.to_matrix();
    // hxy_t materializes as ∇²_xy f_ℓ (n×m)
    let mut lxy = h.hxy_t.to_matrix();

    let (jx, jy, z) = match constraints {
        Some(cs) if !cs.is_empty() => {
            let jx = cs.jacobian_x(x, y);
            let jy = cs.jacobian_y(x, y);
            // least-squares multipliers: ∇_y f_ℓ + J_yᵀ z ≈ 0
            let gram = &jy * jy.transpose();
            let z = solve_linear(&gram, &-(&jy * &l.gy))?;
            (jx, jy, z)
        }
        _ => (Matrix::zeros(0, n), Matrix::zeros(0, m), Vector::zeros(0)),
    };
    let p = jy.nrows();
    if p >= m && m > 0 {
        return Err(BilevelError::InvalidArgument(format!(
            "{p} constraints leave no LL freedom in dimension {m}"
        )));
    }

    if let Some(cs) = constraints {
        if p > 0 {
            // constraint curvature Σ z_i ∇²f_i, column by column
            let zero_x = Vector::zeros(n);
            let mut ey = Vector::zeros(m);
            for j in 0..m {
                ey[j] = 1.0;
                let (cx, cy) = cs.constraint_curvature_apply(x, y, &z, &zero_x, &ey);
                for i in 0..m {
                    lyy[(i, j)] += cy[i];
                }
                for i in 0..n {
                    lxy[(i, j)] += cx[i];
                }
                ey[j] = 0.0;
            }
        }
    }

    check_reduced_hessian_pd(&lyy, &jy)?;

    let dim = m + p;
    let mut kkt = Matrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (m, m)).copy_from(&lyy);
    if p > 0 {
        kkt.view_mut((0, m), (m, p)).copy_from(&jy.transpose());
        kkt.view_mut((m, 0), (p, m)).copy_from(&jy);
    }

    let mut rhs = Vector::zeros(dim);
    rhs.rows_mut(0, m).copy_from(&u.gy);
    let adj = solve_linear(&kkt, &rhs)?;
    let adj_y = adj.rows(0, m).into_owned();
    let adj_c = adj.rows(m, p).into_owned();
    let mut c_hat = &u.gx - &lxy * &adj_y;
    if p > 0 {
        c_hat -= jx.transpose() * &adj_c;
    }

    let dx = c_hat.map(|c| if c.abs() <= LQ_ZERO_COST { 0.0 } else { -c.signum() });

    let mut rhs = Vector::zeros(dim);
    rhs.rows_mut(0, m).copy_from(&-(lxy.transpose() * &dx));
    if p > 0 {
        rhs.rows_mut(m, p).copy_from(&-(&jx * &dx));
    }
    let sol = solve_linear(&kkt, &rhs)?;

    Ok(LqResult {
        dx,
        dy: sol.rows(0, m).into_owned(),
        multipliers: sol.rows(m, p).into_owned(),
        effective_cost: c_hat,
        fu_value: u.value,
        ul_count: ul.consumed(sizes.0),
        ll_count: 2 * ll.consumed(sizes.1),
    })
}

/// Fails unless `L_yy` is positive definite on the null space of `J_y`.
fn check_reduced_hessian_pd(lyy: &Matrix, jy: &Matrix) -> Result<()> {
    let m = lyy.nrows();
    let sym = (lyy + lyy.transpose()) * 0.5;
    let reduced = if jy.nrows() == 0 {
        sym
    } else {
        // P L P + (I − P), P the projector onto null(J_y): its spectrum is the
        // reduced Hessian's plus ones on range(J_yᵀ)
        let gram = jy * jy.transpose();
        let gram_inv = gram
            .clone()
            .try_inverse()
            .ok_or(BilevelError::SingularSystem { pivot: 0.0, column: 0 })?;
        let range_proj = jy.transpose() * gram_inv * jy;
        let null_proj = Matrix::identity(m, m) - &range_proj;
        &null_proj * sym * &null_proj + range_proj
    };
    let scale = reduced.amax().max(1.0);
    let min_eig = reduced.symmetric_eigenvalues().min();
    if min_eig <= 1e-12 * scale {
        return Err(BilevelError::InvalidArgument(format!(
            "LL Lagrangian Hessian not positive definite on the constraint null space (min eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(())
}
