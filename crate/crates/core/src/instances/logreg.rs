//! Bilevel logistic regression with a proximal lower level.
//!
//! UL: `mean_{T1} ℓ(z; y) + mean_{T2} ℓ(z; x)`. LL:
//! `mean_{T2} ℓ(z; y) + (λ/2)‖y − x‖²`, where `T2 ⊂ T1` and
//! `ℓ(z, u; w) = log(1 + exp(−u wᵀ[z; 1]))`.
//!
//! UL realizations are positions in the superset ordering, whose first
//! `N_T2` entries are the subset. The subset term of a UL batch is
//! importance weighted by `N_T1/N_T2` over the positions that fall in the
//! subset, which keeps it unbiased.

use std::sync::Arc;

use crate::error::{check_dim, BilevelError, Result};
use crate::instances::data::{split_superset_subset, synth_logreg, Dataset, Split};
use crate::linalg::{solve_linear, LinearOperator, Matrix, Vector};
use crate::problem::{BilevelProblem, LevelGrad, LlHessians, LlSolution, Subset};

pub const DEFAULT_LAMBDA_REG: f64 = 0.1;

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^{−s})` without overflow.
fn softplus_neg(s: f64) -> f64 {
    if s > 0.0 {
        (-s).exp().ln_1p()
    } else {
        -s + s.exp().ln_1p()
    }
}

/// Logistic loss and its gradient on row `z` (bias appended), accumulated
/// with `weight` into `grad`.
fn accumulate_row(z: &[f64], u: f64, w: &Vector, weight: f64, grad: &mut Vector) -> f64 {
    let d = z.len();
    let margin = u * (z.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() + w[d]);
    let coef = -u * sigmoid(-margin) * weight;
    for (g, zi) in grad.iter_mut().zip(z) {
        *g += coef * zi;
    }
    grad[d] += coef;
    softplus_neg(margin) * weight
}

#[derive(Debug, Clone)]
pub struct LogRegBilevel {
    data: Arc<Dataset>,
    split: Split,
    lambda_reg: f64,
    ul_superset_on_x: bool,
}

impl LogRegBilevel {
    pub fn new(data: Arc<Dataset>, split: Split, lambda_reg: f64) -> Result<Self> {
        if !(lambda_reg > 0.0) || !lambda_reg.is_finite() {
            return Err(BilevelError::InvalidArgument("lambda_reg must be > 0".into()));
        }
        if split.subset.is_empty()
            || split.subset.len() > split.superset.len()
            || split.superset[..split.subset.len()] != split.subset[..]
            || split.superset.iter().any(|&i| i >= data.len())
        {
            return Err(BilevelError::InvalidArgument(
                "split must list the subset as a prefix of the superset, within the dataset".into(),
            ));
        }
        Ok(Self {
            data,
            split,
            lambda_reg,
            ul_superset_on_x: false,
        })
    }

    /// Synthetic two-cloud data of exactly `n_t1` rows split with `seed`.
    pub fn synthetic(n_features: usize, n_t1: usize, n_t2: usize, separation: f64, seed: u64) -> Result<Self> {
        let data = synth_logreg(n_features, n_t1, separation, seed)?;
        let split = split_superset_subset(data.len(), n_t1, n_t2, seed)?;
        Self::new(Arc::new(data), split, DEFAULT_LAMBDA_REG)
    }

    pub fn with_lambda_reg(mut self, lambda_reg: f64) -> Result<Self> {
        if !(lambda_reg > 0.0) || !lambda_reg.is_finite() {
            return Err(BilevelError::InvalidArgument("lambda_reg must be > 0".into()));
        }
        self.lambda_reg = lambda_reg;
        Ok(self)
    }

    /// Evaluates the superset term of the UL objective at `x` instead of `y`.
    pub fn with_ul_superset_on_x(mut self, on: bool) -> Self {
        self.ul_superset_on_x = on;
        self
    }

    pub fn lambda_reg(&self) -> f64 {
        self.lambda_reg
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    fn dim(&self) -> usize {
        self.data.n_features() + 1
    }

    fn n1(&self) -> usize {
        self.split.superset.len()
    }

    fn n2(&self) -> usize {
        self.split.subset.len()
    }

    fn positions<'a>(&self, subset: &'a Subset, population: usize) -> Result<std::borrow::Cow<'a, [usize]>> {
        match subset {
            Subset::Full => Ok(std::borrow::Cow::Owned((0..population).collect())),
            Subset::Rows(r) => {
                if r.is_empty() {
                    return Err(BilevelError::InvalidArgument("empty batch".into()));
                }
                if r.iter().any(|&p| p >= population) {
                    return Err(BilevelError::InvalidArgument("row index outside the data set".into()));
                }
                Ok(std::borrow::Cow::Borrowed(r))
            }
            Subset::Draws { .. } => Err(BilevelError::InvalidArgument(
                "logistic instance needs row subsets".into(),
            )),
        }
    }

    /// Mean logistic loss over the subset at `w` with its gradient.
    pub fn subset_loss(&self, w: &Vector) -> (f64, Vector) {
        let mut g = Vector::zeros(self.dim());
        let weight = 1.0 / self.n2() as f64;
        let mut v = 0.0;
        for &row in &self.split.subset {
            v += accumulate_row(self.data.row(row), self.data.label(row), w, weight, &mut g);
        }
        (v, g)
    }

    /// Fraction of superset rows misclassified by `w`.
    pub fn superset_error(&self, w: &Vector) -> f64 {
        let d = self.data.n_features();
        let wrong = self
            .split
            .superset
            .iter()
            .filter(|&&row| {
                let z = self.data.row(row);
                let s = z.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() + w[d];
                s * self.data.label(row) <= 0.0
            })
            .count();
        wrong as f64 / self.n1() as f64
    }

    fn ll_hessian_matrix(&self, y: &Vector, positions: &[usize]) -> Matrix {
        let dim = self.dim();
        let d = dim - 1;
        let mut h = Matrix::from_diagonal_element(dim, dim, self.lambda_reg);
        let scale = 1.0 / positions.len() as f64;
        let mut zt = vec![0.0; dim];
        for &p in positions {
            let row = self.split.subset[p];
            let z = self.data.row(row);
            zt[..d].copy_from_slice(z);
            zt[d] = 1.0;
            let s = zt.iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>();
            let sg = sigmoid(s);
            let c = sg * (1.0 - sg) * scale;
            for j in 0..dim {
                let cj = c * zt[j];
                for i in 0..dim {
                    h[(i, j)] += cj * zt[i];
                }
            }
        }
        h
    }
}

impl BilevelProblem for LogRegBilevel {
    fn dims(&self) -> (usize, usize) {
        (self.dim(), self.dim())
    }

    fn dataset_sizes(&self) -> (Option<usize>, Option<usize>) {
        (Some(self.n1()), Some(self.n2()))
    }

    fn has_hessian(&self) -> bool {
        true
    }

    fn ul_grad(&self, x: &Vector, y: &Vector, ul: &Subset) -> Result<LevelGrad> {
        let dim = self.dim();
        check_dim("logistic x", dim, x.len())?;
        check_dim("logistic y", dim, y.len())?;
        let pos = self.positions(ul, self.n1())?;
        let (n1, n2) = (self.n1(), self.n2());
        let mut gx = Vector::zeros(dim);
        let mut gy = Vector::zeros(dim);
        let sup_weight = 1.0 / pos.len() as f64;
        let sub_weight = if matches!(ul, Subset::Full) {
            1.0 / n2 as f64
        } else {
            n1 as f64 / (n2 as f64 * pos.len() as f64)
        };
        let mut value = 0.0;
        for &p in pos.iter() {
            let row = self.split.superset[p];
            let (z, u) = (self.data.row(row), self.data.label(row));
            if self.ul_superset_on_x {
                value += accumulate_row(z, u, x, sup_weight, &mut gx);
            } else {
                value += accumulate_row(z, u, y, sup_weight, &mut gy);
            }
            if p < n2 {
                value += accumulate_row(z, u, x, sub_weight, &mut gx);
            }
        }
        Ok(LevelGrad { value, gx, gy })
    }

    fn ll_grad(&self, x: &Vector, y: &Vector, ll: &Subset) -> Result<LevelGrad> {
        let dim = self.dim();
        check_dim("logistic x", dim, x.len())?;
        check_dim("logistic y", dim, y.len())?;
        let pos = self.positions(ll, self.n2())?;
        let weight = 1.0 / pos.len() as f64;
        let mut gy = Vector::zeros(dim);
        let mut value = 0.0;
        for &p in pos.iter() {
            let row = self.split.subset[p];
            value += accumulate_row(self.data.row(row), self.data.label(row), y, weight, &mut gy);
        }
        let diff = y - x;
        value += 0.5 * self.lambda_reg * diff.norm_squared();
        gy.axpy(self.lambda_reg, &diff, 1.0);
        Ok(LevelGrad {
            value,
            gx: -self.lambda_reg * diff,
            gy,
        })
    }

    fn ll_hessians(&self, x: &Vector, y: &Vector, ll: &Subset) -> Result<LlHessians> {
        let dim = self.dim();
        check_dim("logistic x", dim, x.len())?;
        check_dim("logistic y", dim, y.len())?;
        let pos = self.positions(ll, self.n2())?;
        Ok(LlHessians {
            hyy: LinearOperator::from_matrix(self.ll_hessian_matrix(y, &pos)),
            hxy_t: LinearOperator::identity(dim).scaled(-self.lambda_reg),
        })
    }

    /// Damped Newton on the full LL objective.
    fn ll_solve_accurate(&self, x: &Vector, tol: f64) -> Result<LlSolution> {
        let all: Vec<usize> = (0..self.n2()).collect();
        let mut y = x.clone();
        let mut g = self.ll_grad(x, &y, &Subset::Full)?;
        for _ in 0..100 {
            if g.gy.norm() <= tol {
                return Ok(LlSolution { y, converged: true });
            }
            let h = self.ll_hessian_matrix(&y, &all);
            let step = solve_linear(&h, &(-&g.gy))?;
            let slope = g.gy.dot(&step);
            let mut t = 1.0;
            loop {
                let cand = &y + t * &step;
                let gc = self.ll_grad(x, &cand, &Subset::Full)?;
                // Near the solution value changes drown in rounding; fall back
                // to a decrease of the gradient norm there.
                let flat = (gc.value - g.value).abs() <= 1e-12 * (1.0 + g.value.abs());
                let armijo = gc.value <= g.value + 1e-4 * t * slope;
                if armijo || (flat && gc.gy.norm() < g.gy.norm()) || t < 1e-10 {
                    y = cand;
                    g = gc;
                    break;
                }
                t *= 0.5;
            }
        }
        let converged = g.gy.norm() <= tol;
        Ok(LlSolution { y, converged })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny() -> LogRegBilevel {
        let data = Dataset::new(
            vec![0.0, 0.0, 1.0, -0.5, -2.0, 0.3, 0.7, 1.1],
            vec![1.0, -1.0, 1.0, -1.0],
            2,
        )
        .unwrap();
        let split = Split {
            superset: vec![2, 0, 3, 1],
            subset: vec![2, 0],
        };
        LogRegBilevel::new(Arc::new(data), split, 0.1).unwrap()
    }

    #[test]
    fn single_zero_row_bias_gradient() {
        let data = Dataset::new(vec![0.0, 0.0], vec![1.0], 2).unwrap();
        let split = Split {
            superset: vec![0],
            subset: vec![0],
        };
        let p = LogRegBilevel::new(Arc::new(data), split, 0.1).unwrap();
        let zero = Vector::zeros(3);
        let g = p.ll_grad(&zero, &zero, &Subset::Rows(vec![0])).unwrap();
        assert_relative_eq!(g.gy[2], -0.5, epsilon = 1e-15);
        // proximal term vanishes at y = x
        assert_eq!(g.gx, Vector::zeros(3));
    }

    #[test]
    fn full_gradient_is_mean_of_rows() {
        let p = tiny();
        let x = Vector::from_row_slice(&[0.2, -0.1, 0.05]);
        let y = Vector::from_row_slice(&[-0.3, 0.4, 0.1]);
        let full = p.ll_grad(&x, &y, &Subset::Full).unwrap();
        let rows: Vec<_> = (0..2)
            .map(|i| p.ll_grad(&x, &y, &Subset::Rows(vec![i])).unwrap())
            .collect();
        assert_relative_eq!(full.gy, (&rows[0].gy + &rows[1].gy) / 2.0, epsilon = 1e-14);

        let ul_full = p.ul_grad(&x, &y, &Subset::Full).unwrap();
        let parts: Vec<_> = [vec![0, 3], vec![1, 2]]
            .into_iter()
            .map(|r| p.ul_grad(&x, &y, &Subset::Rows(r)).unwrap())
            .collect();
        assert_relative_eq!(ul_full.gx, (&parts[0].gx + &parts[1].gx) / 2.0, epsilon = 1e-14);
        assert_relative_eq!(ul_full.gy, (&parts[0].gy + &parts[1].gy) / 2.0, epsilon = 1e-14);
        assert_relative_eq!(ul_full.value, (parts[0].value + parts[1].value) / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let p = tiny();
        let x = Vector::from_row_slice(&[0.2, -0.1, 0.05]);
        let y = Vector::from_row_slice(&[-0.3, 0.4, 0.1]);
        let h = p.ll_hessians(&x, &y, &Subset::Full).unwrap();
        let v = Vector::from_row_slice(&[1.0, -2.0, 0.5]);
        let eps = 1e-6;
        let g = |yy: &Vector, xx: &Vector| p.ll_grad(xx, yy, &Subset::Full).unwrap();
        let fd_yy = (g(&(&y + eps * &v), &x).gy - g(&(&y - eps * &v), &x).gy) / (2.0 * eps);
        assert_relative_eq!(h.hyy.apply(&v).unwrap(), fd_yy, epsilon = 1e-8);
        let fd_xy = (g(&(&y + eps * &v), &x).gx - g(&(&y - eps * &v), &x).gx) / (2.0 * eps);
        assert_relative_eq!(h.hxy_t.apply(&v).unwrap(), fd_xy, epsilon = 1e-8);
    }

    #[test]
    fn newton_solves_lower_level() {
        let p = tiny();
        let x = Vector::from_row_slice(&[0.5, 0.5, -0.2]);
        let sol = p.ll_solve_accurate(&x, 1e-12).unwrap();
        assert!(sol.converged);
        assert!(p.ll_grad(&x, &sol.y, &Subset::Full).unwrap().gy.norm() <= 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = tiny();
        let z = Vector::zeros(3);
        assert!(p.ll_grad(&z, &z, &Subset::Rows(vec![])).is_err());
        assert!(p.ll_grad(&z, &z, &Subset::Rows(vec![2])).is_err());
        assert!(p.ul_grad(&z, &Vector::zeros(2), &Subset::Full).is_err());
        assert!(p.clone().with_lambda_reg(0.0).is_err());
    }

    #[test]
    fn superset_on_x_moves_gradient() {
        let p = tiny().with_ul_superset_on_x(true);
        let g = p.ul_grad(&Vector::zeros(3), &Vector::zeros(3), &Subset::Full).unwrap();
        assert_eq!(g.gy, Vector::zeros(3));
        assert!(g.gx.norm() > 0.0);
    }
}
