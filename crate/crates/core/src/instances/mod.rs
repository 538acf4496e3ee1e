//! Concrete bilevel instances.

pub mod continual;
pub mod data;
pub mod logreg;
pub mod mlp;
pub mod quadratic;

pub use continual::{
    run_continual, BatchFractions, ClStageProblem, ContinualLearningSeq, ContinualRun, JumpReport, StageBoundary,
};
pub use data::{parse_csv_dataset, parse_idx, split_superset_subset, synth_logreg, Dataset, LabeledRows, Split};
pub use logreg::LogRegBilevel;
pub use mlp::Mlp;
pub use quadratic::{LinearEqualities, QuadraticBilevel};
