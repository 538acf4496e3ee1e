//! Two-layer tanh perceptron with softmax cross-entropy.
//!
//! Parameters are split by layer: `x = [W1 (h×d, row-major); b1]`,
//! `y = [W2 (c×h, row-major); b2]`.

use crate::error::{check_dim, BilevelError, Result};
use crate::instances::data::LabeledRows;
use crate::linalg::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub inputs: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Mlp {
    pub fn new(inputs: usize, hidden: usize, classes: usize) -> Result<Self> {
        if inputs == 0 || hidden == 0 || classes < 2 {
            return Err(BilevelError::InvalidArgument(
                "MLP needs inputs ≥ 1, hidden ≥ 1 and at least two classes".into(),
            ));
        }
        Ok(Self {
            inputs,
            hidden,
            classes,
        })
    }

    pub fn hidden_params(&self) -> usize {
        self.hidden * self.inputs + self.hidden
    }

    pub fn output_params(&self) -> usize {
        self.classes * self.hidden + self.classes
    }

    fn check(&self, x: &Vector, y: &Vector, data: &LabeledRows) -> Result<()> {
        check_dim("MLP hidden parameters", self.hidden_params(), x.len())?;
        check_dim("MLP output parameters", self.output_params(), y.len())?;
        check_dim("MLP input width", self.inputs, data.n_features)
    }

    /// `tanh(W1 z + b1)` written into `out`.
    fn hidden_into(&self, x: &Vector, z: &[f64], out: &mut [f64]) {
        let (d, h) = (self.inputs, self.hidden);
        for (i, o) in out.iter_mut().enumerate() {
            let w = &x.as_slice()[i * d..(i + 1) * d];
            let a = w.iter().zip(z).map(|(p, q)| p * q).sum::<f64>() + x[h * d + i];
            *o = a.tanh();
        }
    }

    /// Softmax probabilities of the logits `W2 a + b2`, written into `out`.
    fn probs_into(&self, y: &Vector, act: &[f64], out: &mut [f64]) {
        let h = self.hidden;
        for (c, o) in out.iter_mut().enumerate() {
            let w = &y.as_slice()[c * h..(c + 1) * h];
            *o = w.iter().zip(act).map(|(p, q)| p * q).sum::<f64>() + y[self.classes * h + c];
        }
        let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            sum += *o;
        }
        out.iter_mut().for_each(|o| *o /= sum);
    }

    /// Mean cross-entropy over `rows` with exact gradients for both layers.
    pub fn backprop(
        &self,
        x: &Vector,
        y: &Vector,
        data: &LabeledRows,
        rows: &[usize],
    ) -> Result<(f64, Vector, Vector)> {
        self.check(x, y, data)?;
        if rows.is_empty() {
            return Err(BilevelError::InvalidArgument("empty batch".into()));
        }
        let (d, h, c) = (self.inputs, self.hidden, self.classes);
        let mut gx = Vector::zeros(self.hidden_params());
        let mut gy = Vector::zeros(self.output_params());
        let mut act = vec![0.0; h];
        let mut probs = vec![0.0; c];
        let mut dact = vec![0.0; h];
        let scale = 1.0 / rows.len() as f64;
        let mut loss = 0.0;
        for &r in rows {
            let label = *data
                .labels
                .get(r)
                .ok_or_else(|| BilevelError::InvalidArgument(format!("row {r} outside the data set")))?;
            if label >= c {
                return Err(BilevelError::InvalidArgument(format!(
                    "label {label} outside {c} classes"
                )));
            }
            let z = data.row(r);
            self.hidden_into(x, z, &mut act);
            self.probs_into(y, &act, &mut probs);
            loss -= probs[label].max(f64::MIN_POSITIVE).ln() * scale;
            probs[label] -= 1.0;
            dact.iter_mut().for_each(|v| *v = 0.0);
            for (k, &dl) in probs.iter().enumerate() {
                let dl = dl * scale;
                let row = &mut gy.as_mut_slice()[k * h..(k + 1) * h];
                for j in 0..h {
                    row[j] += dl * act[j];
                    dact[j] += dl * y[k * h + j];
                }
                gy[c * h + k] += dl;
            }
            for j in 0..h {
                let da = dact[j] * (1.0 - act[j] * act[j]);
                let row = &mut gx.as_mut_slice()[j * d..(j + 1) * d];
                for (g, zi) in row.iter_mut().zip(z) {
                    *g += da * zi;
                }
                gx[h * d + j] += da;
            }
        }
        Ok((loss, gx, gy))
    }

    /// Hidden activations of `rows`, row-major `rows.len() × h`.
    pub fn hidden_features(&self, x: &Vector, data: &LabeledRows, rows: &[usize]) -> Result<Vec<f64>> {
        check_dim("MLP hidden parameters", self.hidden_params(), x.len())?;
        check_dim("MLP input width", self.inputs, data.n_features)?;
        let h = self.hidden;
        let mut out = vec![0.0; rows.len() * h];
        for (i, &r) in rows.iter().enumerate() {
            self.hidden_into(x, data.row(r), &mut out[i * h..(i + 1) * h]);
        }
        Ok(out)
    }

    /// Fraction of `rows` whose arg-max class differs from the label.
    pub fn error_rate(&self, x: &Vector, y: &Vector, data: &LabeledRows, rows: &[usize]) -> Result<f64> {
        self.check(x, y, data)?;
        if rows.is_empty() {
            return Err(BilevelError::InvalidArgument("empty batch".into()));
        }
        let mut act = vec![0.0; self.hidden];
        let mut probs = vec![0.0; self.classes];
        let mut wrong = 0usize;
        for &r in rows {
            self.hidden_into(x, data.row(r), &mut act);
            self.probs_into(y, &act, &mut probs);
            let best = probs
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc },
                )
                .0;
            if best != data.labels[r] {
                wrong += 1;
            }
        }
        Ok(wrong as f64 / rows.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> LabeledRows {
        LabeledRows {
            features: vec![0.3, -1.0, 1.2, 0.4, -0.7, 0.9, 0.0, 0.5],
            labels: vec![0, 1, 2, 1],
            n_features: 2,
        }
    }

    #[test]
    fn zero_weights_give_log_classes() {
        let m = Mlp::new(2, 4, 2).unwrap();
        let data = LabeledRows {
            features: vec![1.0, 2.0, -1.0, 0.5],
            labels: vec![0, 1],
            n_features: 2,
        };
        let (loss, _, _) = m
            .backprop(
                &Vector::zeros(m.hidden_params()),
                &Vector::zeros(m.output_params()),
                &data,
                &[0, 1],
            )
            .unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let m = Mlp::new(2, 5, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Vector::from_fn(m.hidden_params(), |_, _| rng.random_range(-1.0..1.0));
        let y = Vector::from_fn(m.output_params(), |_, _| rng.random_range(-1.0..1.0));
        let data = toy();
        let rows = [0, 1, 2, 3];
        let (_, gx, gy) = m.backprop(&x, &y, &data, &rows).unwrap();
        let h = 1e-4;
        for _ in 0..20 {
            let on_x = rng.random_bool(0.5);
            let (base, g) = if on_x { (&x, &gx) } else { (&y, &gy) };
            let i = rng.random_range(0..base.len());
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[i] += h;
            minus[i] -= h;
            let loss = |p: &Vector| {
                if on_x {
                    m.backprop(p, &y, &data, &rows).unwrap().0
                } else {
                    m.backprop(&x, p, &data, &rows).unwrap().0
                }
            };
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let rel = (fd - g[i]).abs() / g[i].abs().max(1e-3);
            assert!(rel <= 1e-5, "coordinate {i} (x: {on_x}): fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn duplicated_rows_leave_mean_unchanged() {
        let m = Mlp::new(2, 3, 3).unwrap();
        let x = Vector::from_fn(m.hidden_params(), |i, _| (i as f64 * 0.37).sin());
        let y = Vector::from_fn(m.output_params(), |i, _| (i as f64 * 0.11).cos());
        let data = toy();
        let a = m.backprop(&x, &y, &data, &[0, 1, 2]).unwrap();
        let b = m.backprop(&x, &y, &data, &[0, 1, 2, 0, 1, 2]).unwrap();
        assert!((a.0 - b.0).abs() < 1e-14);
        assert!((a.1 - b.1).amax() < 1e-14);
        assert!((a.2 - b.2).amax() < 1e-14);
    }

    #[test]
    fn shape_errors() {
        let m = Mlp::new(2, 3, 3).unwrap();
        let data = toy();
        let x = Vector::zeros(m.hidden_params());
        let y = Vector::zeros(m.output_params());
        assert!(m.backprop(&Vector::zeros(3), &y, &data, &[0]).is_err());
        assert!(m.backprop(&x, &Vector::zeros(2), &data, &[0]).is_err());
        assert!(m.backprop(&x, &y, &data, &[]).is_err());
        let narrow = Mlp::new(3, 3, 3).unwrap();
        assert!(narrow
            .backprop(
                &Vector::zeros(narrow.hidden_params()),
                &Vector::zeros(narrow.output_params()),
                &data,
                &[0]
            )
            .is_err());
        assert!(Mlp::new(2, 3, 1).is_err());
    }
}
