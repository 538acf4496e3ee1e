//! Task-incremental continual learning as a sequence of bilevel problems.
//!
//! Stage `t` trains the output layer (LL) on the union of the first `t`
//! training sets and the hidden layer (UL) on the union of the first `t`
//! validation sets. The hidden layer carries over between stages; the
//! output layer is re-initialized with one more class pair.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, BilevelError, Result};
use crate::instances::data::{idx_labeled_rows, LabeledRows};
use crate::instances::mlp::Mlp;
use crate::linalg::Vector;
use crate::problem::{BatchSpec, BilevelProblem, Iterate, LevelGrad, LlSolution, Subset};
use crate::rng::{stream, StreamId};
use crate::solvers::{run_from, RunTrace, SamplingPolicy, SolverConfig};

/// Batch sizes as fractions of the current unions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchFractions {
    pub ul: f64,
    pub ll: f64,
    pub eval_ul: f64,
    pub eval_ll: f64,
}

impl Default for BatchFractions {
    fn default() -> Self {
        Self {
            ul: 0.005,
            ll: 0.001,
            eval_ul: 0.05,
            eval_ll: 0.01,
        }
    }
}

fn fraction_of(frac: f64, n: usize) -> usize {
    ((frac * n as f64).round() as usize).clamp(1, n.max(1))
}

#[derive(Debug, Clone)]
pub struct ContinualLearningSeq {
    train: LabeledRows,
    val: LabeledRows,
    /// Cumulative class count per stage; a row belongs to stage `t` when its
    /// label is below `stage_classes[t − 1]`.
    stage_classes: Vec<usize>,
    pub hidden: usize,
    pub fractions: BatchFractions,
    /// Iteration budget of the accurate LL solve used for `f_true`.
    pub ll_eval_iters: usize,
}

impl ContinualLearningSeq {
    pub fn new(train: LabeledRows, val: LabeledRows, stage_classes: Vec<usize>) -> Result<Self> {
        if stage_classes.is_empty() || stage_classes[0] < 2 || stage_classes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(BilevelError::InvalidArgument(
                "stage class counts must start at ≥ 2 and strictly increase".into(),
            ));
        }
        if train.n_features != val.n_features {
            return Err(BilevelError::DimensionMismatch {
                context: "continual train vs validation width",
                expected: train.n_features,
                actual: val.n_features,
            });
        }
        let seq = Self {
            train,
            val,
            stage_classes,
            hidden: 16,
            fractions: BatchFractions::default(),
            ll_eval_iters: 300,
        };
        for t in 1..=seq.stages() {
            let (tr, va) = seq.union_rows(t);
            if tr.is_empty() || va.is_empty() {
                return Err(BilevelError::InvalidArgument(format!(
                    "stage {t} has no train or validation rows"
                )));
            }
        }
        Ok(seq)
    }

    /// Five stages of 2-D Gaussian blobs (standard deviation `spread`, centers
    /// on a circle of radius 3), two new classes per stage.
    pub fn synthetic(train_per_class: usize, val_per_class: usize, spread: f64, seed: u64) -> Result<Self> {
        if !(spread > 0.0) || !spread.is_finite() {
            return Err(BilevelError::InvalidArgument("blob spread must be > 0".into()));
        }
        let classes = 10;
        let centers: Vec<(f64, f64)> = (0..classes)
            .map(|c| {
                let a = std::f64::consts::TAU * c as f64 / classes as f64;
                (3.0 * a.cos(), 3.0 * a.sin())
            })
            .collect();
        let mut rng = stream(seed, StreamId::Shuffle);
        let mut blobs = |per_class: usize| {
            let mut features = Vec::with_capacity(per_class * classes * 2);
            let mut labels = Vec::with_capacity(per_class * classes);
            for (c, &(cx, cy)) in centers.iter().enumerate() {
                for _ in 0..per_class {
                    let dx: f64 = rng.sample(StandardNormal);
                    let dy: f64 = rng.sample(StandardNormal);
                    features.push(cx + spread * dx);
                    features.push(cy + spread * dy);
                    labels.push(c);
                }
            }
            LabeledRows {
                features,
                labels,
                n_features: 2,
            }
        };
        let train = blobs(train_per_class);
        let val = blobs(val_per_class);
        Self::new(train, val, vec![2, 4, 6, 8, 10])
    }

    /// MNIST-style IDX pairs; stages add two digits at a time.
    pub fn from_idx(train_images: &[u8], train_labels: &[u8], val_images: &[u8], val_labels: &[u8]) -> Result<Self> {
        let train = idx_labeled_rows(train_images, train_labels)?;
        let val = idx_labeled_rows(val_images, val_labels)?;
        let max_label = train.labels.iter().chain(&val.labels).copied().max().unwrap_or(0);
        let stages = (2..=max_label + 1).step_by(2).collect::<Vec<_>>();
        Self::new(train, val, stages)
    }

    pub fn stages(&self) -> usize {
        self.stage_classes.len()
    }

    pub fn classes_at(&self, t: usize) -> usize {
        self.stage_classes[t - 1]
    }

    pub fn inputs(&self) -> usize {
        self.train.n_features
    }

    fn union_rows(&self, t: usize) -> (Vec<usize>, Vec<usize>) {
        let c = self.stage_classes[t - 1];
        let pick = |d: &LabeledRows| (0..d.len()).filter(|&i| d.labels[i] < c).collect::<Vec<_>>();
        (pick(&self.train), pick(&self.val))
    }

    /// Stage `t` (1-based) as a bilevel problem.
    pub fn stage(&self, t: usize) -> Result<ClStageProblem<'_>> {
        if t == 0 || t > self.stages() {
            return Err(BilevelError::InvalidArgument(format!(
                "stage {t} outside 1..={}",
                self.stages()
            )));
        }
        let (train_rows, val_rows) = self.union_rows(t);
        Ok(ClStageProblem {
            seq: self,
            mlp: Mlp::new(self.inputs(), self.hidden, self.classes_at(t))?,
            train_rows,
            val_rows,
        })
    }
}

/// One stage of a [`ContinualLearningSeq`].
#[derive(Debug, Clone)]
pub struct ClStageProblem<'a> {
    seq: &'a ContinualLearningSeq,
    mlp: Mlp,
    train_rows: Vec<usize>,
    val_rows: Vec<usize>,
}

impl ClStageProblem<'_> {
    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn val_len(&self) -> usize {
        self.val_rows.len()
    }

    pub fn train_len(&self) -> usize {
        self.train_rows.len()
    }

    /// Mini-batch sizes from the training fractions of the current unions.
    pub fn batch(&self) -> BatchSpec {
        let f = self.seq.fractions;
        BatchSpec {
            ul_batch: fraction_of(f.ul, self.val_rows.len()),
            ll_batch: fraction_of(f.ll, self.train_rows.len()),
        }
    }

    /// Hidden layer with entries `N(0, 1/d)`.
    pub fn random_hidden(&self, rng: &mut ChaCha8Rng) -> Vector {
        let scale = 1.0 / (self.mlp.inputs as f64).sqrt();
        Vector::from_fn(self.mlp.hidden_params(), |_, _| {
            scale * rng.sample::<f64, _>(StandardNormal)
        })
    }

    /// Output layer with entries `N(0, 1/h)`.
    pub fn random_output(&self, rng: &mut ChaCha8Rng) -> Vector {
        let scale = 1.0 / (self.mlp.hidden as f64).sqrt();
        Vector::from_fn(self.mlp.output_params(), |_, _| {
            scale * rng.sample::<f64, _>(StandardNormal)
        })
    }

    fn rows_of(&self, subset: &Subset, union: &[usize]) -> Result<Vec<usize>> {
        match subset {
            Subset::Full => Ok(union.to_vec()),
            Subset::Rows(r) => r
                .iter()
                .map(|&p| {
                    union
                        .get(p)
                        .copied()
                        .ok_or_else(|| BilevelError::InvalidArgument("row index outside the data set".into()))
                })
                .collect(),
            Subset::Draws { .. } => Err(BilevelError::InvalidArgument(
                "continual instance needs row subsets".into(),
            )),
        }
    }

    fn sampled_value(&self, x: &Vector, y: &Vector, frac: f64, validation: bool, rng: &mut ChaCha8Rng) -> Result<f64> {
        let (data, union) = if validation {
            (&self.seq.val, &self.val_rows)
        } else {
            (&self.seq.train, &self.train_rows)
        };
        let size = fraction_of(frac, union.len());
        let rows: Vec<usize> = rand::seq::index::sample(rng, union.len(), size)
            .into_iter()
            .map(|p| union[p])
            .collect();
        Ok(self.mlp.backprop(x, y, data, &rows)?.0)
    }
}

impl BilevelProblem for ClStageProblem<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.mlp.hidden_params(), self.mlp.output_params())
    }

    fn dataset_sizes(&self) -> (Option<usize>, Option<usize>) {
        (Some(self.val_rows.len()), Some(self.train_rows.len()))
    }

    fn ul_grad(&self, x: &Vector, y: &Vector, ul: &Subset) -> Result<LevelGrad> {
        let rows = self.rows_of(ul, &self.val_rows)?;
        let (value, gx, gy) = self.mlp.backprop(x, y, &self.seq.val, &rows)?;
        Ok(LevelGrad { value, gx, gy })
    }

    fn ll_grad(&self, x: &Vector, y: &Vector, ll: &Subset) -> Result<LevelGrad> {
        let rows = self.rows_of(ll, &self.train_rows)?;
        let (value, gx, gy) = self.mlp.backprop(x, y, &self.seq.train, &rows)?;
        Ok(LevelGrad { value, gx, gy })
    }

    /// Budgeted accelerated gradient descent on the softmax regression over
    /// fixed hidden features, from a zero output layer.
    fn ll_solve_accurate(&self, x: &Vector, tol: f64) -> Result<LlSolution> {
        let h = self.mlp.hidden;
        let c = self.mlp.classes;
        let feats = self.mlp.hidden_features(x, &self.seq.train, &self.train_rows)?;
        let labels: Vec<usize> = self.train_rows.iter().map(|&r| self.seq.train.labels[r]).collect();
        let n = labels.len();
        let lip = 0.5 * (h as f64 + 1.0);
        let step = 1.0 / lip;

        let grad = |y: &Vector| {
            let mut g = Vector::zeros(y.len());
            let mut probs = vec![0.0; c];
            for i in 0..n {
                let a = &feats[i * h..(i + 1) * h];
                for (k, p) in probs.iter_mut().enumerate() {
                    *p = (0..h).map(|j| y[k * h + j] * a[j]).sum::<f64>() + y[c * h + k];
                }
                let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = probs
                    .iter_mut()
                    .map(|p| {
                        *p = (*p - max).exp();
                        *p
                    })
                    .sum();
                probs[labels[i]] -= sum;
                for (k, p) in probs.iter().enumerate() {
                    let d = p / sum / n as f64;
                    for j in 0..h {
                        g[k * h + j] += d * a[j];
                    }
                    g[c * h + k] += d;
                }
            }
            g
        };

        let mut y = Vector::zeros(self.mlp.output_params());
        let mut prev = y.clone();
        let mut converged = false;
        for it in 1..=self.seq.ll_eval_iters.max(1) {
            let momentum = (it as f64 - 1.0) / (it as f64 + 2.0);
            let look = &y + momentum * (&y - &prev);
            let g = grad(&look);
            if g.norm() <= tol {
                y = look;
                converged = true;
                break;
            }
            prev = std::mem::replace(&mut y, look - step * g);
        }
        Ok(LlSolution { y, converged })
    }

    fn initial_iterate(&self, rng: &mut ChaCha8Rng) -> Iterate {
        let x = self.random_hidden(rng);
        let y = self.random_output(rng);
        Iterate::new(x, y)
    }

    fn eval_values(&self, x: &Vector, y: &Vector, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
        let f = self.seq.fractions;
        Ok((
            self.sampled_value(x, y, f.eval_ul, true, rng)?,
            self.sampled_value(x, y, f.eval_ll, false, rng)?,
        ))
    }

    fn validation_error(&self, x: &Vector, y: &Vector) -> Option<f64> {
        self.mlp.error_rate(x, y, &self.seq.val, &self.val_rows).ok()
    }
}

/// Validation errors around the start of one stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageBoundary {
    pub stage: usize,
    /// Error at the end of the previous stage on its own union (0 before the first stage).
    pub error_before: f64,
    /// Error at the start of this stage on the current union.
    pub error_after: f64,
    /// Error at the start of this stage on the previous union.
    pub previous_union_error_after: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ContinualRun {
    pub stages: Vec<RunTrace>,
    pub boundaries: Vec<StageBoundary>,
    pub end: Iterate,
    pub final_val_error: f64,
}

/// Increases of the validation error above a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JumpReport {
    pub at_boundaries: usize,
    pub elsewhere: usize,
}

impl ContinualRun {
    /// Per-stage traces concatenated with global iteration and access counts.
    pub fn combined(&self) -> RunTrace {
        let mut out = RunTrace::default();
        let (mut k0, mut a0) = (0, 0);
        for trace in &self.stages {
            for r in &trace.records {
                let mut r = r.clone();
                r.k += k0;
                r.accessed += a0;
                out.records.push(r);
            }
            if let Some(last) = trace.last() {
                k0 += last.k;
                a0 += last.accessed;
            }
            out.inner_steps.extend_from_slice(&trace.inner_steps);
        }
        out
    }

    pub fn jumps(&self, threshold: f64) -> JumpReport {
        let at_boundaries = self
            .boundaries
            .iter()
            .filter(|b| b.error_after - b.error_before > threshold)
            .count();
        let elsewhere = self
            .stages
            .iter()
            .map(|t| {
                let errs: Vec<f64> = t.records.iter().filter_map(|r| r.val_error).collect();
                errs.windows(2).filter(|w| w[1] - w[0] > threshold).count()
            })
            .sum();
        JumpReport {
            at_boundaries,
            elsewhere,
        }
    }
}

/// Runs every stage with `config` for `iters_per_stage` iterations each,
/// carrying the hidden layer forward and re-initializing the output layer.
/// Batch sizes follow the sequence's fractions.
pub fn run_continual(
    seq: &ContinualLearningSeq,
    config: &SolverConfig,
    iters_per_stage: usize,
) -> Result<ContinualRun> {
    let mut stages = Vec::with_capacity(seq.stages());
    let mut boundaries = Vec::with_capacity(seq.stages());
    let mut carried: Option<(Vector, Vector)> = None;
    let mut final_val_error = f64::NAN;
    for t in 1..=seq.stages() {
        let problem = seq.stage(t)?;
        let mut cfg = config.clone();
        cfg.max_iters = iters_per_stage;
        cfg.master_seed = config.master_seed.wrapping_add((t as u64) << 32);
        cfg.sampling = SamplingPolicy::FixedBatch(problem.batch());
        let mut init = stream(cfg.master_seed, StreamId::Init);
        let start = match &carried {
            None => problem.initial_iterate(&mut init),
            Some((x, _)) => Iterate::new(x.clone(), problem.random_output(&mut init)),
        };
        let error_after = problem.validation_error(&start.x, &start.y).unwrap_or(f64::NAN);
        let (error_before, previous_union_error_after) = match &carried {
            None => (0.0, None),
            Some((x, y)) => {
                let prev = seq.stage(t - 1)?;
                let before = prev.validation_error(x, y).unwrap_or(f64::NAN);
                let prev_rows = prev.val_rows.clone();
                let after = problem.mlp.error_rate(&start.x, &start.y, &seq.val, &prev_rows).ok();
                (before, after)
            }
        };
        boundaries.push(StageBoundary {
            stage: t,
            error_before,
            error_after,
            previous_union_error_after,
        });
        let outcome = run_from(&problem, &cfg, start)?;
        check_dim(
            "continual hidden layer",
            problem.mlp.hidden_params(),
            outcome.end.x.len(),
        )?;
        final_val_error = problem
            .validation_error(&outcome.end.x, &outcome.end.y)
            .unwrap_or(f64::NAN);
        carried = Some((outcome.end.x.clone(), outcome.end.y.clone()));
        stages.push(outcome.trace);
    }
    let (x, y) = carried.expect("at least one stage");
    Ok(ContinualRun {
        stages,
        boundaries,
        end: Iterate::new(x, y),
        final_val_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn stage_shapes_and_unions() {
        let seq = ContinualLearningSeq::synthetic(20, 5, 0.4, 1).unwrap();
        let s1 = seq.stage(1).unwrap();
        assert_eq!(s1.dims().1, 16 * 2 + 2);
        assert_eq!(s1.dims().0, 16 * 2 + 16);
        let s2 = seq.stage(2).unwrap();
        assert_eq!(s2.val_len(), 2 * s1.val_len());
        assert_eq!(s2.train_len(), 80);
        assert!(seq.stage(0).is_err());
        assert!(seq.stage(6).is_err());
    }

    #[test]
    fn batch_fractions_round_and_floor_at_one() {
        let seq = ContinualLearningSeq::synthetic(500, 100, 0.4, 1).unwrap();
        let s5 = seq.stage(5).unwrap();
        assert_eq!(
            s5.batch(),
            BatchSpec {
                ul_batch: 5,
                ll_batch: 5
            }
        );
        let s1 = seq.stage(1).unwrap();
        assert_eq!(
            s1.batch(),
            BatchSpec {
                ul_batch: 1,
                ll_batch: 1
            }
        );
    }

    #[test]
    fn accurate_solve_lowers_ll_loss() {
        let seq = ContinualLearningSeq::synthetic(30, 5, 0.4, 2).unwrap();
        let s = seq.stage(2).unwrap();
        let it = s.initial_iterate(&mut ChaCha8Rng::seed_from_u64(0));
        let zero = Vector::zeros(s.dims().1);
        let base = s.ll_value_full(&it.x, &zero).unwrap();
        let sol = s.ll_solve_accurate(&it.x, 1e-8).unwrap();
        assert!(s.ll_value_full(&it.x, &sol.y).unwrap() < base);
    }

    #[test]
    fn rejects_bad_stage_lists() {
        let seq = ContinualLearningSeq::synthetic(3, 2, 0.4, 0).unwrap();
        assert!(ContinualLearningSeq::new(seq.train.clone(), seq.val.clone(), vec![]).is_err());
        assert!(ContinualLearningSeq::new(seq.train.clone(), seq.val.clone(), vec![2, 2]).is_err());
        assert!(ContinualLearningSeq::new(seq.train.clone(), seq.val.clone(), vec![11]).is_ok());
    }
}
