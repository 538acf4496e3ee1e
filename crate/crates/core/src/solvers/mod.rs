//! Outer loops: the bilevel stochastic gradient method (adjoint, BSG-H,
//! BSG-1 and LQ directions) and DARTS.

mod inner;
mod sampling;
mod schedule;
mod trace;

use std::time::Instant;

pub use inner::{inc_acc_update, inner_solve, InnerKind, InnerOutcome, InnerPolicy};
pub use sampling::{dynamic_batch_size, SamplingPolicy};
pub use schedule::{stepsize_at, StepsizeSchedule};
pub use trace::{RunTrace, TraceRecord};

use crate::directions::{adjoint_direction, bsg1_direction, darts_direction, lq_direction, DirectionSpec, Engine};
use crate::error::{BilevelError, Result};
use crate::linalg::{all_finite, project, ProjectionSet, Vector};
use crate::problem::{true_f, AccessCounter, BilevelProblem, Iterate};
use crate::rng::{stream, SampleStreams, StreamId};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub direction: DirectionSpec,
    pub ul_stepsize: StepsizeSchedule,
    pub inner: InnerPolicy,
    pub sampling: SamplingPolicy,
    pub max_iters: usize,
    pub master_seed: u64,
    pub eval_every: usize,
    pub eval_tol: f64,
    /// Record `‖∇f_FD(x)‖` (central differences of the reduced function).
    pub record_grad_norm: bool,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.direction.validate()?;
        self.ul_stepsize.validate()?;
        self.inner.validate()?;
        self.sampling.validate()?;
        if self.max_iters == 0 {
            return Err(BilevelError::InvalidArgument("max_iters must be ≥ 1".into()));
        }
        if self.eval_every == 0 {
            return Err(BilevelError::InvalidArgument("eval_every must be ≥ 1".into()));
        }
        if !(self.eval_tol > 0.0) {
            return Err(BilevelError::InvalidArgument("eval_tol must be > 0".into()));
        }
        Ok(())
    }
}

/// Checks engine/instance compatibility before any iteration runs.
pub fn check_capabilities<P: BilevelProblem + ?Sized>(problem: &P, engine: Engine) -> Result<()> {
    match engine {
        Engine::AdjointExact | Engine::BsgH if !problem.has_hessian() => Err(BilevelError::MissingCapability(
            "adjoint/BSG-H engines need LL Hessian actions",
        )),
        Engine::Lq => {
            if !problem.has_hessian() {
                return Err(BilevelError::MissingCapability("LQ engine needs LL Hessian actions"));
            }
            if problem.constraints().is_some_and(|c| c.has_inequalities()) {
                return Err(BilevelError::Unsupported(
                    "LQ engine supports equality constraints only".into(),
                ));
            }
            Ok(())
        }
        Engine::AdjointExact | Engine::BsgH | Engine::Bsg1 => {
            if problem.constraints().is_some_and(|c| !c.is_empty()) {
                return Err(BilevelError::Unsupported(format!(
                    "{} assumes an unconstrained lower level",
                    engine.name()
                )));
            }
            Ok(())
        }
        Engine::Darts => {
            if problem.constraints().is_some_and(|c| !c.is_empty()) {
                return Err(BilevelError::Unsupported(
                    "DARTS assumes an unconstrained lower level".into(),
                ));
            }
            Ok(())
        }
    }
}

/// Central-difference gradient of `x ↦ f(x)` with accurate LL solves.
pub fn reduced_gradient_fd<P: BilevelProblem + ?Sized>(problem: &P, x: &Vector, h: f64, tol: f64) -> Result<Vector> {
    let mut g = Vector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = true_f(problem, &probe, tol)?.value;
        probe[i] = x[i] - h;
        let fm = true_f(problem, &probe, tol)?.value;
        probe[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

struct Recorder<'a, P: BilevelProblem + ?Sized> {
    problem: &'a P,
    config: &'a SolverConfig,
    eval_rng: rand_chacha::ChaCha8Rng,
    trace: RunTrace,
}

impl<P: BilevelProblem + ?Sized> Recorder<'_, P> {
    fn record(&mut self, k: usize, accessed: u64, wall: f64, x: &Vector, y: &Vector) -> Result<f64> {
        let tf = true_f(self.problem, x, self.config.eval_tol)?;
        let (ul, ll) = self.problem.eval_values(x, y, &mut self.eval_rng)?;
        let grad_norm_fd = if self.config.record_grad_norm {
            Some(reduced_gradient_fd(self.problem, x, 1e-5, self.config.eval_tol)?.norm())
        } else {
            None
        };
        self.trace.records.push(TraceRecord {
            k,
            accessed,
            wall_seconds: wall,
            f_true: tf.value,
            ul_value_eval: ul,
            ll_value_eval: ll,
            grad_norm_fd,
            val_error: self.problem.validation_error(x, y),
        });
        Ok(ul)
    }
}

fn project_checked(v: Vector, set: &ProjectionSet, what: &'static str) -> Result<Vector> {
    let p = match set {
        ProjectionSet::AllSpace => v,
        s => project(&v, s)?,
    };
    if !all_finite(&p) {
        return Err(BilevelError::NonFinite(what));
    }
    Ok(p)
}

/// Final state of a run alongside its trace.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: RunTrace,
    pub end: Iterate,
}

/// Bilevel stochastic gradient method from the instance's initial point.
pub fn run_bsg<P: BilevelProblem + ?Sized>(problem: &P, config: &SolverConfig) -> Result<RunTrace> {
    let start = problem.initial_iterate(&mut stream(config.master_seed, StreamId::Init));
    run_bsg_from(problem, config, start).map(|o| o.trace)
}

/// Bilevel stochastic gradient method:
/// `x_{k+1} = P_X(x_k + α_k d(x_k, ỹ_k, ξ_k))` with `ỹ_k` from the inner policy.
pub fn run_bsg_from<P: BilevelProblem + ?Sized>(
    problem: &P,
    config: &SolverConfig,
    start: Iterate,
) -> Result<RunOutcome> {
    config.validate()?;
    let engine = config.direction.engine;
    if engine == Engine::Darts {
        return Err(BilevelError::InvalidArgument(
            "use run_darts for the DARTS engine".into(),
        ));
    }
    check_capabilities(problem, engine)?;
    let (n, m) = problem.dims();
    if start.x.len() != n || start.y.len() != m {
        return Err(BilevelError::DimensionMismatch {
            context: "run_bsg start point",
            expected: n + m,
            actual: start.x.len() + start.y.len(),
        });
    }

    let sizes = problem.dataset_sizes();
    let x_set = problem.projection_x();
    let mut streams = SampleStreams::new(config.master_seed);
    let mut rec = Recorder {
        problem,
        config,
        eval_rng: stream(config.master_seed, StreamId::Eval),
        trace: RunTrace::default(),
    };
    let track_inner = matches!(config.inner.kind, InnerKind::IncAcc { .. });

    let mut x = project_checked(start.x.clone(), &x_set, "initial x")?;
    let mut y_tilde = start.y.clone();
    let mut counter = AccessCounter::new();
    let mut inc_steps = 1usize;
    let mut fu_prev: Option<f64> = None;
    let mut eval_prev = Some(rec.record(0, 0, 0.0, &x, &y_tilde)?);
    let mut wall = 0.0;

    for k in 1..=config.max_iters {
        let tick = Instant::now();
        let alpha = config.ul_stepsize.at(k);
        let batch = config.sampling.batch(alpha).clipped(sizes);

        let y_start = if config.inner.hotstart { &y_tilde } else { &start.y };
        let inner = inner_solve(
            problem,
            &x,
            y_start,
            &config.inner,
            k,
            inc_steps,
            batch.ll_batch,
            &mut streams.ll,
        )?;
        counter.add(inner.accessed);
        if track_inner {
            rec.trace.inner_steps.push(inner.steps);
        }
        y_tilde = inner.y;

        let ul = problem.draw_ul(batch.ul_batch, &mut streams.ul)?;
        let ll = problem.draw_ll(batch.ll_batch, &mut streams.ll)?;
        let (d, fu_cur) = match engine {
            Engine::Bsg1 => {
                let s = problem.sample_at(&x, &y_tilde, &ul, &ll, false)?;
                counter.record_sample(&s, false);
                (bsg1_direction(&s, &config.direction)?, s.fu_value)
            }
            Engine::AdjointExact | Engine::BsgH => {
                let s = problem.sample_at(&x, &y_tilde, &ul, &ll, true)?;
                counter.record_sample(&s, true);
                (adjoint_direction(&s, &config.direction)?, s.fu_value)
            }
            Engine::Lq => {
                let r = lq_direction(problem, &x, &y_tilde, &ul, &ll)?;
                counter.add(r.ul_count + r.ll_count);
                (r.dx, r.fu_value)
            }
            Engine::Darts => unreachable!(),
        };

        x = project_checked(x + alpha * d, &x_set, "UL iterate")?;

        if let InnerKind::IncAcc { threshold } = config.inner.kind {
            if !config.inner.inc_acc_on_records {
                if let Some(prev) = fu_prev {
                    inc_steps = inc_acc_update(inc_steps, prev, fu_cur, threshold);
                }
                fu_prev = Some(fu_cur);
            }
        }
        wall += tick.elapsed().as_secs_f64();

        if k % config.eval_every == 0 {
            let ul_eval = rec.record(k, counter.total(), wall, &x, &y_tilde)?;
            if let InnerKind::IncAcc { threshold } = config.inner.kind {
                if config.inner.inc_acc_on_records {
                    if let Some(prev) = eval_prev {
                        inc_steps = inc_acc_update(inc_steps, prev, ul_eval, threshold);
                    }
                }
            }
            eval_prev = Some(ul_eval);
        }
    }

    Ok(RunOutcome {
        trace: rec.trace,
        end: Iterate::new(x, y_tilde),
    })
}

/// DARTS from the instance's initial point.
pub fn run_darts<P: BilevelProblem + ?Sized>(problem: &P, config: &SolverConfig) -> Result<RunTrace> {
    let start = problem.initial_iterate(&mut stream(config.master_seed, StreamId::Init));
    run_darts_from(problem, config, start).map(|o| o.trace)
}

/// DARTS: one LL SG step `ỹ_k = y_k − η g_y^ℓ(x_k, y_k)`, then the UL step
/// with the finite-difference cross term, and `y_{k+1} = ỹ_k`.
///
/// `α_k` comes from `ul_stepsize` and `η_k` from `inner.ll_stepsize`.
pub fn run_darts_from<P: BilevelProblem + ?Sized>(
    problem: &P,
    config: &SolverConfig,
    start: Iterate,
) -> Result<RunOutcome> {
    config.validate()?;
    if config.direction.engine != Engine::Darts {
        return Err(BilevelError::InvalidArgument("run_darts needs the darts engine".into()));
    }
    check_capabilities(problem, Engine::Darts)?;
    let (n, m) = problem.dims();
    if start.x.len() != n || start.y.len() != m {
        return Err(BilevelError::DimensionMismatch {
            context: "run_darts start point",
            expected: n + m,
            actual: start.x.len() + start.y.len(),
        });
    }

    let sizes = problem.dataset_sizes();
    let x_set = problem.projection_x();
    let mut streams = SampleStreams::new(config.master_seed);
    let mut rec = Recorder {
        problem,
        config,
        eval_rng: stream(config.master_seed, StreamId::Eval),
        trace: RunTrace::default(),
    };
    let mut spec = config.direction.clone();

    let mut x = project_checked(start.x.clone(), &x_set, "initial x")?;
    let mut y = start.y.clone();
    let mut counter = AccessCounter::new();
    rec.record(0, 0, 0.0, &x, &y)?;
    let mut wall = 0.0;

    for k in 1..=config.max_iters {
        let tick = Instant::now();
        let alpha = config.ul_stepsize.at(k);
        let eta = config.inner.ll_stepsize.at(k);
        let batch = config.sampling.batch(alpha).clipped(sizes);

        let ll = problem.draw_ll(batch.ll_batch, &mut streams.ll)?;
        let ul = problem.draw_ul(batch.ul_batch, &mut streams.ul)?;
        let gly = problem.ll_grad(&x, &y, &ll)?.gy;
        counter.add(ll.consumed(sizes.1));
        let y_tilde = project_checked(&y - eta * gly, &problem.projection_y(&x), "LL iterate")?;

        spec.darts_eta = eta;
        let out = darts_direction(problem, &x, &y, &y_tilde, &ul, &ll, &spec)?;
        counter.add(out.ul_count + out.ll_count);

        x = project_checked(x + alpha * out.direction, &x_set, "UL iterate")?;
        y = y_tilde;
        wall += tick.elapsed().as_secs_f64();

        if k % config.eval_every == 0 {
            rec.record(k, counter.total(), wall, &x, &y)?;
        }
    }

    Ok(RunOutcome {
        trace: rec.trace,
        end: Iterate::new(x, y),
    })
}

/// Dispatches on the configured engine.
pub fn run<P: BilevelProblem + ?Sized>(problem: &P, config: &SolverConfig) -> Result<RunTrace> {
    match config.direction.engine {
        Engine::Darts => run_darts(problem, config),
        _ => run_bsg(problem, config),
    }
}

pub fn run_from<P: BilevelProblem + ?Sized>(problem: &P, config: &SolverConfig, start: Iterate) -> Result<RunOutcome> {
    match config.direction.engine {
        Engine::Darts => run_darts_from(problem, config, start),
        _ => run_bsg_from(problem, config, start),
    }
}
