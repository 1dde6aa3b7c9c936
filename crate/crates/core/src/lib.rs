//! VM rescheduling workbench: cluster model, fragment objectives, the
//! rescheduling environment, dataset tooling, non-learned baselines and an
//! exact small-scale solver.

pub mod baselines;
pub mod cluster;
pub mod datasets;
pub mod exact;
pub mod fixtures;
pub mod objectives;
pub mod scalar;
pub mod simulator;

pub use cluster::{
    fragment_of_numa, fragment_rate, total_fragments, ClusterError, ClusterState, MigrationAction, MigrationPlan,
    NumaSlot, NumaState, PhysicalMachine, Placement, PmId, Resource, VirtualMachine, Violation, VmId, VmType,
};
pub use objectives::{ObjectiveKind, ObjectiveSpec};
pub use scalar::{Exact, Scalar};
pub use simulator::{rollout_plan, Episode, Rollout, SimError};

