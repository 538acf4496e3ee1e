//! Log-log fits of running-minimum optimality gaps.

use bilevel_core::solvers::RunTrace;

use crate::error::{BenchError, Result};

pub const MIN_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Inclusive `(k_min, k_max)` actually used.
    pub window: (usize, usize),
}

/// Parses `a:b` into an inclusive window.
pub fn parse_window(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| BenchError::Rate(format!("window {s:?} must look like a:b")))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| BenchError::Rate(format!("window bound {v:?} is not a nonnegative integer")))
    };
    let (a, b) = (parse(a)?, parse(b)?);
    if a == 0 || a >= b {
        return Err(BenchError::Rate(format!("window {s:?} needs 1 ≤ a < b")));
    }
    Ok((a, b))
}

/// `(k, min_{s ≤ k} f_true(s) − f_star)` for every record.
pub fn running_min_gaps(trace: &RunTrace, f_star: f64) -> Vec<(usize, f64)> {
    let mut best = f64::INFINITY;
    trace
        .records
        .iter()
        .map(|r| {
            if r.f_true < best {
                best = r.f_true;
            }
            (r.k, best - f_star)
        })
        .collect()
}

/// Running-minimum gaps averaged over traces at the iterations all of them record.
pub fn mean_running_min_gaps(traces: &[RunTrace], f_star: f64) -> Result<Vec<(usize, f64)>> {
    let first = traces
        .first()
        .ok_or_else(|| BenchError::Rate("no traces to average".into()))?;
    let per: Vec<std::collections::BTreeMap<usize, f64>> = traces
        .iter()
        .map(|t| running_min_gaps(t, f_star).into_iter().collect())
        .collect();
    let mut out = Vec::new();
    for (k, _) in running_min_gaps(first, f_star) {
        let vals: Option<Vec<f64>> = per.iter().map(|m| m.get(&k).copied()).collect();
        if let Some(v) = vals {
            out.push((k, v.iter().sum::<f64>() / v.len() as f64));
        }
    }
    Ok(out)
}

/// Least squares of `log₁₀ gap` on `log₁₀ k` over the window.
///
/// If a nonpositive gap falls inside the window, the window's upper end is
/// pulled back to the last iteration before it (with a warning).
pub fn fit_rate(points: &[(usize, f64)], window: (usize, usize)) -> Result<RateFit> {
    let (lo, mut hi) = window;
    if lo == 0 || lo > hi {
        return Err(BenchError::Rate(format!("invalid window {lo}:{hi}")));
    }
    if let Some(&(k, g)) = points
        .iter()
        .find(|&&(k, g)| k >= lo && k <= hi && !(g > 0.0 && g.is_finite()))
    {
        log::warn!(
            "gap {g} at k = {k} is not positive; shrinking window to {lo}:{}",
            k.saturating_sub(1)
        );
        hi = k.saturating_sub(1);
    }
    let inside: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(k, _)| k >= lo && k <= hi)
        .map(|&(k, g)| ((k as f64).log10(), g.log10()))
        .collect();
    if inside.len() < MIN_POINTS {
        return Err(BenchError::Rate(format!(
            "only {} usable points in window {lo}:{hi}, need at least {MIN_POINTS}",
            inside.len()
        )));
    }
    let n = inside.len() as f64;
    let mx = inside.iter().map(|p| p.0).sum::<f64>() / n;
    let my = inside.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = inside.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = inside.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = inside.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(BenchError::Rate("window holds a single distinct k".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    let k_min = points
        .iter()
        .map(|p| p.0)
        .filter(|&k| k >= lo && k <= hi)
        .min()
        .unwrap_or(lo);
    let k_max = points
        .iter()
        .map(|p| p.0)
        .filter(|&k| k >= lo && k <= hi)
        .max()
        .unwrap_or(hi);
    Ok(RateFit {
        slope,
        intercept,
        r2,
        window: (k_min, k_max),
    })
}

/// Fits the running-minimum gap of one trace.
pub fn fit_trace(trace: &RunTrace, f_star: f64, window: (usize, usize)) -> Result<RateFit> {
    fit_rate(&running_min_gaps(trace, f_star), window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bilevel_core::solvers::TraceRecord;

    fn trace_from(f: impl Fn(f64) -> f64, kmax: usize) -> RunTrace {
        RunTrace {
            records: (0..=kmax)
                .map(|k| TraceRecord {
                    k,
                    accessed: k as u64,
                    wall_seconds: 0.0,
                    f_true: f(k.max(1) as f64),
                    ul_value_eval: 0.0,
                    ll_value_eval: 0.0,
                    grad_norm_fd: None,
                    val_error: None,
                })
                .collect(),
            inner_steps: vec![],
        }
    }

    #[test]
    fn exact_inverse_k() {
        let fit = fit_trace(&trace_from(|k| 2.0 + 7.0 / k, 2000), 2.0, (50, 2000)).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-6, "{fit:?}");
        assert!(fit.r2 >= 0.999999);
        assert!((fit.intercept - 7f64.log10()).abs() < 1e-6);
        assert_eq!(fit.window, (50, 2000));
    }

    #[test]
    fn exact_inverse_sqrt_k() {
        let fit = fit_trace(&trace_from(|k| 3.0 / k.sqrt(), 500), 0.0, (10, 500)).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-6, "{fit:?}");
    }

    #[test]
    fn running_min_is_used() {
        // Oscillating trace whose running minimum is 1/k at even k.
        let t = trace_from(|k| if (k as usize).is_multiple_of(2) { 1.0 / k } else { 10.0 }, 100);
        let gaps = running_min_gaps(&t, 0.0);
        assert_eq!(gaps[3].1, 0.5);
        assert!(gaps.windows(2).all(|w| w[1].1 <= w[0].1));
    }

    #[test]
    fn nonpositive_gap_shrinks_window() {
        let t = trace_from(|k| if k >= 80.0 { 0.0 } else { 1.0 / k }, 100);
        let fit = fit_trace(&t, 0.0, (10, 100)).unwrap();
        assert_eq!(fit.window, (10, 79));
        assert!((fit.slope + 1.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_points() {
        let t = trace_from(|k| 1.0 / k, 100);
        assert!(fit_trace(&t, 0.0, (95, 100)).is_err());
        let t = trace_from(|k| if k >= 15.0 { 0.0 } else { 1.0 / k }, 100);
        assert!(fit_trace(&t, 0.0, (10, 100)).is_err());
    }

    #[test]
    fn averaging_over_traces() {
        let a = trace_from(|k| 1.0 / k, 50);
        let b = trace_from(|k| 3.0 / k, 50);
        let m = mean_running_min_gaps(&[a, b], 0.0).unwrap();
        assert!((m[10].1 - 0.2).abs() < 1e-15);
        let fit = fit_rate(&m, (1, 50)).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-9);
    }

    #[test]
    fn window_parsing() {
        assert_eq!(parse_window("50:2000").unwrap(), (50, 2000));
        assert!(parse_window("50").is_err());
        assert!(parse_window("0:10").is_err());
        assert!(parse_window("10:5").is_err());
        assert!(parse_window("a:5").is_err());
    }
}
