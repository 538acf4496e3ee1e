use crate::error::{BilevelError, Result};

/// Stepsize sequences indexed from `k = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepsizeSchedule {
    Fixed(f64),
    /// `c₀/k`
    Harmonic(f64),
    /// `2/(c(k+1))`
    StronglyConvex(f64),
    /// `ᾱ/√k`
    SqrtDecay(f64),
}

impl StepsizeSchedule {
    pub fn validate(&self) -> Result<()> {
        let p = match *self {
            StepsizeSchedule::Fixed(a)
            | StepsizeSchedule::Harmonic(a)
            | StepsizeSchedule::StronglyConvex(a)
            | StepsizeSchedule::SqrtDecay(a) => a,
        };
        if p > 0.0 && p.is_finite() {
            Ok(())
        } else {
            Err(BilevelError::InvalidArgument(format!(
                "stepsize parameter must be > 0, got {p}"
            )))
        }
    }

    /// Stepsize at iteration `k ≥ 1` (`k = 0` is treated as 1).
    pub fn at(&self, k: usize) -> f64 {
        let k = k.max(1) as f64;
        match *self {
            StepsizeSchedule::Fixed(a) => a,
            StepsizeSchedule::Harmonic(c0) => c0 / k,
            StepsizeSchedule::StronglyConvex(c) => 2.0 / (c * (k + 1.0)),
            StepsizeSchedule::SqrtDecay(a) => a / k.sqrt(),
        }
    }
}

pub fn stepsize_at(s: &StepsizeSchedule, k: usize) -> f64 {
    s.at(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        assert_eq!(StepsizeSchedule::StronglyConvex(2.0).at(1), 0.5);
        assert_eq!(StepsizeSchedule::Harmonic(10.0).at(5), 2.0);
        assert_eq!(StepsizeSchedule::SqrtDecay(1.0).at(4), 0.5);
        assert_eq!(StepsizeSchedule::Fixed(0.007).at(1000), 0.007);
    }

    #[test]
    fn schedules_positive_and_nonincreasing() {
        for s in [
            StepsizeSchedule::Fixed(0.3),
            StepsizeSchedule::Harmonic(1.0),
            StepsizeSchedule::StronglyConvex(3.0),
            StepsizeSchedule::SqrtDecay(2.0),
        ] {
            s.validate().unwrap();
            let mut prev = f64::INFINITY;
            for k in 1..5000 {
                let a = s.at(k);
                assert!(a > 0.0 && a <= prev);
                prev = a;
            }
        }
        assert!(StepsizeSchedule::Harmonic(0.0).validate().is_err());
        assert!(StepsizeSchedule::Fixed(-1.0).validate().is_err());
    }
}
