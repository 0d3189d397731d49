//! Query-efficient distillation of a blackbox image classifier.
//!
//! A student network is trained on teacher probabilities for a small set of
//! unlabeled images plus mixup blends of those images. Each round, the blends
//! the student is least confident about are sent to the teacher and added to
//! the training set.

pub mod checkpoint;
pub mod data;
pub mod distill;
pub mod error;
pub mod mixup;
pub mod nn;
pub mod run;
pub mod select;
pub mod sweep;
pub mod teacher;
pub mod tensor;

pub use data::{Dataset, DatasetSource, Image, ImageShape};
pub use distill::{
    distill, success_rate, DistillConfig, DistillOutcome, Distiller, LabelMode, LabeledSet,
    PoolSource, Provenance, RoundMetrics, RunCheckpoint, StopReason,
};
pub use error::{Error, Result};
pub use mixup::{build_pool, synthesize, CandidatePool, LambdaGrid, MixupCandidate, PairId};
pub use nn::{Architecture, Model, NetworkSpec, TrainConfig};
pub use run::{run_in_dir, RunConfig, RunDir};
pub use select::{select, PairScore, SelectionResult, Selector};
pub use sweep::{run_sweep, SweepReport, SweepSpec};
pub use teacher::{query, to_hard, LocalTeacher, QueryLedger, SoftLabel, Teacher, TeacherInfo};
pub use tensor::Tensor;
