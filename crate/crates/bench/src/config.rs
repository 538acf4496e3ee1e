//! Run configuration files (TOML).
//!
//! ```toml
//! seeds = [0, 1, 2]
//! output_dir = "out/quadratic"
//!
//! [instance]
//! kind = "quadratic"        # quadratic | logreg | continual
//! n = 20
//! m = 20
//! noise_std = 0.1
//!
//! [[solver]]
//! name = "bsg_h"
//! engine = "bsg_h"          # adjoint_exact | bsg_h | bsg_1 | darts | lq
//! max_iters = 2000
//! ul_stepsize = { schedule = "strongly_convex" }
//! ll_stepsize = { schedule = "fixed", value = 0.1 }
//! inner = { policy = "k_squared", gamma = 1.0 }
//! batch = { ul = 1, ll = 1 }
//! ```
//!
//! Unknown keys are rejected everywhere. The full key list is in the README.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bilevel_core::directions::{DirectionSpec, Engine};
use bilevel_core::problem::BatchSpec;
use bilevel_core::solvers::{InnerKind, InnerPolicy, SamplingPolicy, SolverConfig, StepsizeSchedule};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub instance: InstanceConfig,
    #[serde(rename = "solver")]
    pub solvers: Vec<SolverEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceConfig {
    Quadratic {
        n: usize,
        m: usize,
        noise_std: f64,
        #[serde(default)]
        coupling_seed: u64,
        /// Trailing rows of `A` and UL weights set to zero (convex, not strongly convex).
        #[serde(default)]
        null_dims: usize,
        /// Number of LL equality constraints `B y = C x`.
        #[serde(default)]
        equalities: usize,
        #[serde(default)]
        aggregated_inner: bool,
    },
    Logreg {
        #[serde(default = "default_features")]
        n_features: usize,
        n_t1: usize,
        n_t2: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default)]
        data_seed: u64,
        #[serde(default = "default_lambda_reg")]
        lambda_reg: f64,
        /// Preprocessed CSV replacing the synthetic data.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        csv: Option<PathBuf>,
        #[serde(default)]
        ul_superset_on_x: bool,
        /// Full-batch reference run for `f_star`; omitted means no reference.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<ReferenceRun>,
    },
    Continual {
        #[serde(default = "default_train_per_class")]
        train_per_class: usize,
        #[serde(default = "default_val_per_class")]
        val_per_class: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default)]
        data_seed: u64,
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default = "default_ll_eval_iters")]
        ll_eval_iters: usize,
        #[serde(default = "default_jump_threshold")]
        jump_threshold: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        idx: Option<IdxFiles>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceRun {
    pub iters: usize,
    pub stepsize: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub val_images: PathBuf,
    pub val_labels: PathBuf,
}

fn default_features() -> usize {
    20
}
fn default_separation() -> f64 {
    4.0
}
fn default_lambda_reg() -> f64 {
    bilevel_core::instances::logreg::DEFAULT_LAMBDA_REG
}
fn default_train_per_class() -> usize {
    200
}
fn default_val_per_class() -> usize {
    50
}
fn default_spread() -> f64 {
    0.8
}
fn default_hidden() -> usize {
    16
}
fn default_ll_eval_iters() -> usize {
    300
}
fn default_jump_threshold() -> f64 {
    0.25
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineName {
    AdjointExact,
    BsgH,
    #[serde(rename = "bsg_1")]
    Bsg1,
    Darts,
    Lq,
}

impl From<EngineName> for Engine {
    fn from(e: EngineName) -> Self {
        match e {
            EngineName::AdjointExact => Engine::AdjointExact,
            EngineName::BsgH => Engine::BsgH,
            EngineName::Bsg1 => Engine::Bsg1,
            EngineName::Darts => Engine::Darts,
            EngineName::Lq => Engine::Lq,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Fixed,
    /// `value/k`
    Harmonic,
    /// `2/(value·(k+1))`; `value` defaults to the instance's strong-convexity modulus.
    StronglyConvex,
    /// `value/√k`
    SqrtDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub schedule: ScheduleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerName {
    OneStep,
    IncAcc,
    KSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerConfig {
    pub policy: InnerName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// inc_acc: compare full-batch UL values at trace records.
    #[serde(default)]
    pub on_records: bool,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            policy: InnerName::OneStep,
            threshold: None,
            gamma: None,
            on_records: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    pub ul: usize,
    pub ll: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicConfig {
    pub c_d: f64,
    pub sigma: f64,
    pub q: usize,
    pub cap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DartsConfig {
    #[serde(default)]
    pub scale_curvature: bool,
    #[serde(default)]
    pub eta_one: bool,
    #[serde(default = "default_fd_constant")]
    pub fd_constant: f64,
}

impl Default for DartsConfig {
    fn default() -> Self {
        Self {
            scale_curvature: false,
            eta_one: false,
            fd_constant: default_fd_constant(),
        }
    }
}

fn default_fd_constant() -> f64 {
    0.01
}
fn default_true() -> bool {
    true
}
fn default_one() -> usize {
    1
}
fn default_eval_tol() -> f64 {
    1e-8
}
fn default_cg_tol() -> f64 {
    1e-10
}
fn default_cg_max_iter() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverEntry {
    /// Label used in file names and tables.
    pub name: String,
    pub engine: EngineName,
    /// Iteration budget (per stage for the continual instance).
    pub max_iters: usize,
    pub ul_stepsize: ScheduleConfig,
    pub ll_stepsize: ScheduleConfig,
    #[serde(default)]
    pub inner: InnerConfig,
    #[serde(default = "default_true")]
    pub hotstart: bool,
    /// Fixed mini-batch sizes; ignored by the continual instance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<BatchConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic: Option<DynamicConfig>,
    #[serde(default = "default_one")]
    pub eval_every: usize,
    #[serde(default = "default_eval_tol")]
    pub eval_tol: f64,
    #[serde(default)]
    pub record_grad_norm: bool,
    #[serde(default)]
    pub darts: DartsConfig,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
    #[serde(default = "default_cg_max_iter")]
    pub cg_max_iter: usize,
}

/// What an instance kind offers, for validation before anything is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub hessian: bool,
    pub constrained: bool,
    pub strong_convexity_known: bool,
}

impl InstanceConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            InstanceConfig::Quadratic { .. } => "quadratic",
            InstanceConfig::Logreg { .. } => "logreg",
            InstanceConfig::Continual { .. } => "continual",
        }
    }

    pub fn capabilities(&self) -> Capabilities {
        match self {
            InstanceConfig::Quadratic { equalities, .. } => Capabilities {
                hessian: true,
                constrained: *equalities > 0,
                strong_convexity_known: *equalities == 0,
            },
            InstanceConfig::Logreg { .. } => Capabilities {
                hessian: true,
                constrained: false,
                strong_convexity_known: false,
            },
            InstanceConfig::Continual { .. } => Capabilities {
                hessian: false,
                constrained: false,
                strong_convexity_known: false,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(BenchError::Config(format!("instance.{field}: {msg}")));
        match self {
            InstanceConfig::Quadratic {
                n,
                m,
                noise_std,
                null_dims,
                equalities,
                ..
            } => {
                if *n == 0 {
                    return bad("n", "must be ≥ 1");
                }
                if *m == 0 {
                    return bad("m", "must be ≥ 1");
                }
                if !(*noise_std >= 0.0 && noise_std.is_finite()) {
                    return bad("noise_std", "must be finite and ≥ 0");
                }
                if null_dims >= n {
                    return bad("null_dims", "must be < n");
                }
                if equalities >= m {
                    return bad("equalities", "must be < m");
                }
                if *equalities > 0 && *null_dims > 0 {
                    return bad("null_dims", "not supported together with equalities");
                }
            }
            InstanceConfig::Logreg {
                n_features,
                n_t1,
                n_t2,
                separation,
                lambda_reg,
                reference,
                csv,
                ..
            } => {
                if csv.is_none() && *n_features == 0 {
                    return bad("n_features", "must be ≥ 1");
                }
                if *n_t2 == 0 || n_t2 > n_t1 {
                    return bad("n_t2", "must satisfy 1 ≤ n_t2 ≤ n_t1");
                }
                if !separation.is_finite() || *separation < 0.0 {
                    return bad("separation", "must be finite and ≥ 0");
                }
                if !(*lambda_reg > 0.0 && lambda_reg.is_finite()) {
                    return bad("lambda_reg", "must be > 0");
                }
                if let Some(r) = reference {
                    if r.iters == 0 {
                        return bad("reference.iters", "must be ≥ 1");
                    }
                    if !(r.stepsize > 0.0 && r.stepsize.is_finite()) {
                        return bad("reference.stepsize", "must be > 0");
                    }
                }
            }
            InstanceConfig::Continual {
                train_per_class,
                val_per_class,
                spread,
                hidden,
                ll_eval_iters,
                jump_threshold,
                ..
            } => {
                if *train_per_class == 0 {
                    return bad("train_per_class", "must be ≥ 1");
                }
                if *val_per_class == 0 {
                    return bad("val_per_class", "must be ≥ 1");
                }
                if !(*spread > 0.0 && spread.is_finite()) {
                    return bad("spread", "must be > 0");
                }
                if *hidden == 0 {
                    return bad("hidden", "must be ≥ 1");
                }
                if *ll_eval_iters == 0 {
                    return bad("ll_eval_iters", "must be ≥ 1");
                }
                if !(*jump_threshold > 0.0 && *jump_threshold < 1.0) {
                    return bad("jump_threshold", "must lie in (0, 1)");
                }
            }
        }
        Ok(())
    }
}

impl ScheduleConfig {
    pub fn fixed(v: f64) -> Self {
        Self {
            schedule: ScheduleKind::Fixed,
            value: Some(v),
        }
    }

    pub fn harmonic(v: f64) -> Self {
        Self {
            schedule: ScheduleKind::Harmonic,
            value: Some(v),
        }
    }

    /// Resolves the schedule; `modulus` fills a missing strongly-convex constant.
    pub fn resolve(&self, field: &str, modulus: Option<f64>) -> Result<StepsizeSchedule> {
        let value = match (self.schedule, self.value, modulus) {
            (_, Some(v), _) => v,
            (ScheduleKind::StronglyConvex, None, Some(c)) => c,
            (ScheduleKind::StronglyConvex, None, None) => {
                return Err(BenchError::Config(format!(
                    "{field}.value: required, the instance has no known strong-convexity modulus"
                )))
            }
            (_, None, _) => return Err(BenchError::Config(format!("{field}.value: required"))),
        };
        let s = match self.schedule {
            ScheduleKind::Fixed => StepsizeSchedule::Fixed(value),
            ScheduleKind::Harmonic => StepsizeSchedule::Harmonic(value),
            ScheduleKind::StronglyConvex => StepsizeSchedule::StronglyConvex(value),
            ScheduleKind::SqrtDecay => StepsizeSchedule::SqrtDecay(value),
        };
        s.validate()
            .map_err(|e| BenchError::Config(format!("{field}.value: {e}")))?;
        Ok(s)
    }
}

impl InnerConfig {
    fn kind(&self, field: &str) -> Result<InnerKind> {
        let unexpected = |key: &str| {
            Err(BenchError::Config(format!(
                "{field}.{key}: not used by policy {:?}",
                self.policy
            )))
        };
        match self.policy {
            InnerName::OneStep => {
                if self.threshold.is_some() {
                    return unexpected("threshold");
                }
                if self.gamma.is_some() {
                    return unexpected("gamma");
                }
                Ok(InnerKind::OneStep)
            }
            InnerName::IncAcc => {
                if self.gamma.is_some() {
                    return unexpected("gamma");
                }
                match self.threshold {
                    Some(t) if t > 0.0 && t.is_finite() => Ok(InnerKind::IncAcc { threshold: t }),
                    Some(_) => Err(BenchError::Config(format!("{field}.threshold: must be > 0"))),
                    None => Err(BenchError::Config(format!("{field}.threshold: required for inc_acc"))),
                }
            }
            InnerName::KSquared => {
                if self.threshold.is_some() {
                    return unexpected("threshold");
                }
                let gamma = self.gamma.unwrap_or(1.0);
                if !(gamma > 0.0 && gamma.is_finite()) {
                    return Err(BenchError::Config(format!("{field}.gamma: must be > 0")));
                }
                Ok(InnerKind::KSquared { gamma })
            }
        }
    }
}

impl SolverEntry {
    /// Core solver configuration for one seed.
    ///
    /// `modulus` is the instance's strong-convexity constant when known.
    pub fn to_solver_config(&self, index: usize, seed: u64, modulus: Option<f64>) -> Result<SolverConfig> {
        let field = format!("solver[{index}]");
        let mut direction = DirectionSpec::new(self.engine.into());
        direction.darts_scale_curvature = self.darts.scale_curvature;
        direction.darts_eta_one = self.darts.eta_one;
        direction.darts_fd_constant = self.darts.fd_constant;
        direction.cg_tol = self.cg_tol;
        direction.cg_max_iter = self.cg_max_iter;
        let ll_stepsize = self.ll_stepsize.resolve(&format!("{field}.ll_stepsize"), modulus)?;
        direction.darts_eta = ll_stepsize.at(1);
        let sampling = match (self.batch, self.dynamic) {
            (Some(_), Some(_)) => {
                return Err(BenchError::Config(format!(
                    "{field}: batch and dynamic are mutually exclusive"
                )))
            }
            (Some(b), None) => SamplingPolicy::FixedBatch(BatchSpec {
                ul_batch: b.ul,
                ll_batch: b.ll,
            }),
            (None, Some(d)) => SamplingPolicy::Dynamic {
                c_d: d.c_d,
                sigma: d.sigma,
                q: d.q,
                cap: d.cap,
            },
            (None, None) => SamplingPolicy::FixedBatch(BatchSpec {
                ul_batch: 1,
                ll_batch: 1,
            }),
        };
        let config = SolverConfig {
            direction,
            ul_stepsize: self.ul_stepsize.resolve(&format!("{field}.ul_stepsize"), modulus)?,
            inner: InnerPolicy {
                kind: self.inner.kind(&format!("{field}.inner"))?,
                ll_stepsize,
                hotstart: self.hotstart,
                inc_acc_on_records: self.inner.on_records,
            },
            sampling,
            max_iters: self.max_iters,
            master_seed: seed,
            eval_every: self.eval_every,
            eval_tol: self.eval_tol,
            record_grad_norm: self.record_grad_norm,
        };
        config
            .validate()
            .map_err(|e| BenchError::Config(format!("{field}: {e}")))?;
        Ok(config)
    }
}

impl RunConfig {
    /// Parses and validates a configuration.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| BenchError::Config(e.message().to_string() + &location(&e)))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(crate::error::io_err(path))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }

    /// SHA-256 over the canonical serialization: formatting, comments and
    /// `output_dir` do not matter, every other field value does.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("run configs always serialize");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output_dir");
        }
        let canonical = value.to_string();
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(BenchError::Config("seeds: at least one seed required".into()));
        }
        let unique: BTreeSet<_> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            return Err(BenchError::Config("seeds: duplicate entries".into()));
        }
        if self.solvers.is_empty() {
            return Err(BenchError::Config(
                "solver: at least one [[solver]] block required".into(),
            ));
        }
        self.instance.validate()?;
        let caps = self.instance.capabilities();
        let mut names = BTreeSet::new();
        for (i, s) in self.solvers.iter().enumerate() {
            if s.name.is_empty()
                || !s
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(BenchError::Config(format!(
                    "solver[{i}].name: must be non-empty ASCII letters, digits, '_' or '-'"
                )));
            }
            if !names.insert(s.name.as_str()) {
                return Err(BenchError::Config(format!(
                    "solver[{i}].name: duplicate name {:?}",
                    s.name
                )));
            }
            check_engine(i, s.engine.into(), self.instance.kind(), caps)?;
            let modulus = caps.strong_convexity_known.then_some(1.0);
            s.to_solver_config(i, self.seeds[0], modulus)?;
        }
        Ok(())
    }
}

/// The engine/instance capability matrix.
pub fn check_engine(index: usize, engine: Engine, kind: &str, caps: Capabilities) -> Result<()> {
    let reject = |why: &str| {
        Err(BenchError::Capability(format!(
            "solver[{index}].engine: {} cannot run on the {kind} instance ({why})",
            engine.name()
        )))
    };
    if engine.needs_hessian() && !caps.hessian {
        return reject("no LL Hessian actions");
    }
    if caps.constrained && engine != Engine::Lq {
        return reject("constrained lower level; only lq applies");
    }
    Ok(())
}

fn location(e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => format!(" (at bytes {}..{})", span.start, span.end),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUAD: &str = r#"
seeds = [0, 1]
output_dir = "out"

[instance]
kind = "quadratic"
n = 4
m = 3
noise_std = 0.1

[[solver]]
name = "h"
engine = "bsg_h"
max_iters = 10
ul_stepsize = { schedule = "strongly_convex" }
ll_stepsize = { schedule = "fixed", value = 0.1 }
inner = { policy = "k_squared", gamma = 1.0 }
batch = { ul = 1, ll = 1 }
"#;

    #[test]
    fn parses_minimal_config() {
        let c = RunConfig::from_toml_str(QUAD).unwrap();
        assert_eq!(c.seeds, vec![0, 1]);
        assert_eq!(c.instance.kind(), "quadratic");
        let sc = c.solvers[0].to_solver_config(0, 7, Some(2.0)).unwrap();
        assert_eq!(sc.ul_stepsize, StepsizeSchedule::StronglyConvex(2.0));
        assert_eq!(sc.inner.kind, InnerKind::KSquared { gamma: 1.0 });
        assert_eq!(sc.master_seed, 7);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let top = QUAD.replace("output_dir", "outptu_dir");
        assert!(matches!(RunConfig::from_toml_str(&top), Err(BenchError::Config(_))));
        let inst = QUAD.replace("noise_std = 0.1", "noise_std = 0.1\nnoise = 2");
        let err = RunConfig::from_toml_str(&inst).unwrap_err().to_string();
        assert!(err.contains("noise"), "{err}");
        let solver = QUAD.replace("max_iters = 10", "max_iters = 10\nmax_iter = 3");
        let err = RunConfig::from_toml_str(&solver).unwrap_err().to_string();
        assert!(err.contains("max_iter"), "{err}");
        let nested = QUAD.replace("gamma = 1.0", "gama = 1.0");
        assert!(RunConfig::from_toml_str(&nested).is_err());
    }

    #[test]
    fn field_level_messages() {
        let c = QUAD.replace("n = 4", "n = 0");
        let err = RunConfig::from_toml_str(&c).unwrap_err().to_string();
        assert!(err.contains("instance.n"), "{err}");
        let c = QUAD.replace("value = 0.1", "value = -0.1");
        let err = RunConfig::from_toml_str(&c).unwrap_err().to_string();
        assert!(err.contains("solver[0].ll_stepsize.value"), "{err}");
        let c = QUAD.replace("policy = \"k_squared\", gamma = 1.0", "policy = \"inc_acc\"");
        let err = RunConfig::from_toml_str(&c).unwrap_err().to_string();
        assert!(err.contains("solver[0].inner.threshold"), "{err}");
        let c = QUAD.replace("seeds = [0, 1]", "seeds = [1, 1]");
        assert!(RunConfig::from_toml_str(&c).unwrap_err().to_string().contains("seeds"));
    }

    #[test]
    fn capability_matrix() {
        let cl = r#"
seeds = [0]
output_dir = "out"
[instance]
kind = "continual"
[[solver]]
name = "h"
engine = "bsg_h"
max_iters = 10
ul_stepsize = { schedule = "fixed", value = 0.007 }
ll_stepsize = { schedule = "fixed", value = 0.007 }
"#;
        assert!(matches!(RunConfig::from_toml_str(cl), Err(BenchError::Capability(_))));
        assert!(RunConfig::from_toml_str(&cl.replace("\"bsg_h\"", "\"bsg_1\"")).is_ok());
        assert!(RunConfig::from_toml_str(&cl.replace("\"bsg_h\"", "\"darts\"")).is_ok());
        assert!(matches!(
            RunConfig::from_toml_str(&cl.replace("\"bsg_h\"", "\"lq\"")),
            Err(BenchError::Capability(_))
        ));
        let constrained = QUAD.replace("noise_std = 0.1", "noise_std = 0.1\nequalities = 1");
        assert!(matches!(
            RunConfig::from_toml_str(&constrained),
            Err(BenchError::Capability(_))
        ));
        let lq = constrained.replace("\"bsg_h\"", "\"lq\"").replace(
            "{ schedule = \"strongly_convex\" }",
            "{ schedule = \"harmonic\", value = 0.1 }",
        );
        assert!(RunConfig::from_toml_str(&lq).is_ok());
        // No known modulus for the constrained variant.
        let lq_sc = constrained.replace("\"bsg_h\"", "\"lq\"");
        assert!(matches!(RunConfig::from_toml_str(&lq_sc), Err(BenchError::Config(_))));
    }

    #[test]
    fn hash_tracks_values_not_formatting() {
        let a = RunConfig::from_toml_str(QUAD).unwrap();
        let reformatted = QUAD.replace("n = 4", "n   =   4 # dims");
        assert_eq!(a.hash(), RunConfig::from_toml_str(&reformatted).unwrap().hash());
        let changed = RunConfig::from_toml_str(&QUAD.replace("noise_std = 0.1", "noise_std = 0.2")).unwrap();
        assert_ne!(a.hash(), changed.hash());
        let roundtrip = RunConfig::from_toml_str(&a.to_toml_string()).unwrap();
        assert_eq!(roundtrip, a);
        assert_eq!(roundtrip.hash(), a.hash());
    }
}
