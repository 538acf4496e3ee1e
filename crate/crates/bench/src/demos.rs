//! Built-in demo configurations.

use crate::config::RunConfig;
use crate::error::{BenchError, Result};

pub const DEMO_NAMES: [&str; 5] = [
    "quadratic",
    "logreg",
    "logreg-darts-variants",
    "continual",
    "lq-constrained",
];

const QUADRATIC: &str = r#"
seeds = [0, 1, 2, 3, 4]
output_dir = "out/quadratic"

[instance]
kind = "quadratic"
n = 20
m = 20
noise_std = 0.1
coupling_seed = 0
aggregated_inner = true

[[solver]]
name = "bsg_h"
engine = "bsg_h"
max_iters = 2000
eval_every = 10
ul_stepsize = { schedule = "strongly_convex" }
ll_stepsize = { schedule = "fixed", value = 0.1 }
inner = { policy = "k_squared", gamma = 1.0 }
batch = { ul = 1, ll = 1 }

[[solver]]
name = "bsg_1"
engine = "bsg_1"
max_iters = 2000
eval_every = 10
ul_stepsize = { schedule = "strongly_convex" }
ll_stepsize = { schedule = "fixed", value = 0.1 }
inner = { policy = "k_squared", gamma = 1.0 }
batch = { ul = 1, ll = 1 }

[[solver]]
name = "adjoint"
engine = "adjoint_exact"
max_iters = 2000
eval_every = 10
ul_stepsize = { schedule = "strongly_convex" }
ll_stepsize = { schedule = "fixed", value = 0.1 }
inner = { policy = "k_squared", gamma = 1.0 }
batch = { ul = 1, ll = 1 }
"#;

const LOGREG_INSTANCE: &str = r#"
seeds = [0, 1, 2, 3, 4]
output_dir = "OUT"

[instance]
kind = "logreg"
n_features = 20
n_t1 = 3000
n_t2 = 750
separation = 4.0
data_seed = 0
lambda_reg = 0.1
"#;

fn logreg_solver(name: &str, engine: &str, ul: f64, inner: &str, extra: &str) -> String {
    format!(
        r#"
[[solver]]
name = "{name}"
engine = "{engine}"
max_iters = 3000
eval_every = 100
ul_stepsize = {{ schedule = "harmonic", value = {ul:?} }}
ll_stepsize = {{ schedule = "harmonic", value = 1.0 }}
inner = {inner}
batch = {{ ul = 512, ll = 512 }}
{extra}"#
    )
}

const ONE_STEP: &str = r#"{ policy = "one_step" }"#;
const INC_ACC: &str = r#"{ policy = "inc_acc", threshold = 1e-4 }"#;

fn logreg() -> String {
    let mut s = LOGREG_INSTANCE.replace("OUT", "out/logreg");
    s.push_str("\n[instance.reference]\niters = 300\nstepsize = 1.0\n");
    s += &logreg_solver("bsg_1", "bsg_1", 10.0, ONE_STEP, "");
    s += &logreg_solver("bsg_1-inc", "bsg_1", 10.0, INC_ACC, "");
    s += &logreg_solver("bsg_h", "bsg_h", 10.0, ONE_STEP, "");
    s += &logreg_solver("bsg_h-inc", "bsg_h", 10.0, INC_ACC, "");
    s += &logreg_solver("darts", "darts", 1.0, ONE_STEP, "");
    s
}

fn logreg_darts_variants() -> String {
    let mut s = LOGREG_INSTANCE.replace("OUT", "out/logreg-darts-variants");
    s += &logreg_solver("bsg_1", "bsg_1", 10.0, ONE_STEP, "");
    s += &logreg_solver("darts", "darts", 1.0, ONE_STEP, "");
    s += &logreg_solver(
        "darts-scaled",
        "darts",
        1.0,
        ONE_STEP,
        "darts = { scale_curvature = true }\n",
    );
    s += &logreg_solver("darts-eta1", "darts", 1.0, ONE_STEP, "darts = { eta_one = true }\n");
    s += &logreg_solver(
        "darts-both",
        "darts",
        1.0,
        ONE_STEP,
        "darts = { scale_curvature = true, eta_one = true }\n",
    );
    s
}

const CONTINUAL: &str = r#"
seeds = [0, 1, 2, 3, 4]
output_dir = "out/continual"

[instance]
kind = "continual"
train_per_class = 200
val_per_class = 50
spread = 0.8
data_seed = 0
hidden = 16
ll_eval_iters = 300
jump_threshold = 0.25

[[solver]]
name = "bsg_1-inc"
engine = "bsg_1"
max_iters = 800
eval_every = 50
eval_tol = 1e-6
ul_stepsize = { schedule = "fixed", value = 0.007 }
ll_stepsize = { schedule = "fixed", value = 0.007 }
inner = { policy = "inc_acc", threshold = 0.1, on_records = true }

[[solver]]
name = "darts"
engine = "darts"
max_iters = 800
eval_every = 50
eval_tol = 1e-6
ul_stepsize = { schedule = "fixed", value = 0.007 }
ll_stepsize = { schedule = "fixed", value = 0.007 }
inner = { policy = "one_step" }
"#;

const LQ_CONSTRAINED: &str = r#"
seeds = [0, 1, 2]
output_dir = "out/lq-constrained"

[instance]
kind = "quadratic"
n = 5
m = 10
noise_std = 0.05
coupling_seed = 0
equalities = 3

[[solver]]
name = "lq"
engine = "lq"
max_iters = 500
eval_every = 5
ul_stepsize = { schedule = "harmonic", value = 0.2 }
ll_stepsize = { schedule = "fixed", value = 0.5 }
inner = { policy = "inc_acc", threshold = 1e-3 }
batch = { ul = 4, ll = 4 }
"#;

/// TOML text of a built-in demo.
pub fn demo_toml(name: &str) -> Result<String> {
    Ok(match name {
        "quadratic" => QUADRATIC.to_string(),
        "logreg" => logreg(),
        "logreg-darts-variants" => logreg_darts_variants(),
        "continual" => CONTINUAL.to_string(),
        "lq-constrained" => LQ_CONSTRAINED.to_string(),
        other => {
            return Err(BenchError::Config(format!(
                "demo {other:?} unknown; choose one of {}",
                DEMO_NAMES.join(", ")
            )))
        }
    })
}

pub fn demo_config(name: &str) -> Result<RunConfig> {
    RunConfig::from_toml_str(&demo_toml(name)?)
}
