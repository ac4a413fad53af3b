//! The federated protocol: round planning, client updates, the two uplink
//! payload kinds, server aggregation and feature-reconstruction training.

mod local;
mod plan;
mod schedule;
mod server;
mod sim;

pub use local::{feature_budget_vectors, local_update, make_feature_payload, make_model_payload, FeatureSet, LocalOutcome};
pub use plan::{sample_round, RoundPlan};
pub use schedule::{lr_schedule, LearningRates};
pub use server::{aggregate, best_reference_update, server_fr_update, ServerOutcome};
pub use sim::{run_training, Simulator};

use crate::compression::ErrorMemory;

/// One client's data shard, public subset, weight `p_k` and error memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    /// Positions of `D_k` in the training set.
    pub local: Vec<usize>,
    /// Positions of `P_k ⊆ D_k` in the training set.
    pub public: Vec<usize>,
    pub weight: f64,
    pub memory: ErrorMemory,
}
