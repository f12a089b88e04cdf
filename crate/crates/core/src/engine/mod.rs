//! Scenario search: feedback extraction, the generation strategies and
//! campaign orchestration.

pub mod algorithms;
pub mod campaign;
pub mod feedback;
pub mod operators;
pub mod search;
pub mod surrogate;

pub use campaign::{
    run_campaign, AgentChoice, AgentSettings, CampaignError, CampaignReport, CampaignResult, CampaignSetup, CampaignState,
    EvalRecord,
};
pub use feedback::{extract_behavior, feedback_from, Feedback};
pub use search::{build_algorithm, AlgorithmName, AlgorithmParams, Observation, SearchAlgorithm, SearchSpace};
