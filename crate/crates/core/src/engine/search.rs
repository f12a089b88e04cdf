//! Common interface of the scenario-generation strategies.
//!
//! Every strategy is a batch state machine: `propose` returns the next batch
//! of parameter vectors and `observe` receives their results in the same
//! order. All randomness comes from the strategy's own seeded generator, so a
//! strategy fed the same observations proposes the same batches.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{Bounds, GeneGroup, ParameterVector};

use super::algorithms::{AvFuzzer, BehaviorExplorer, DriveFuzz, RandomSearch, SurrogateSearch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmName {
    Random,
    Avfuzzer,
    Behavexplor,
    Samota,
    Drivefuzz,
}

impl AlgorithmName {
    pub const ALL: [AlgorithmName; 5] = [
        AlgorithmName::Random,
        AlgorithmName::Avfuzzer,
        AlgorithmName::Behavexplor,
        AlgorithmName::Samota,
        AlgorithmName::Drivefuzz,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmName::Random => "random",
            AlgorithmName::Avfuzzer => "avfuzzer",
            AlgorithmName::Behavexplor => "behavexplor",
            AlgorithmName::Samota => "samota",
            AlgorithmName::Drivefuzz => "drivefuzz",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == name)
    }

    /// Extra parameters each strategy understands, with defaults.
    pub fn known_extras(self) -> &'static [(&'static str, f64)] {
        match self {
            AlgorithmName::Random => &[],
            AlgorithmName::Avfuzzer => &[("stagnation_generations", 5.0)],
            AlgorithmName::Behavexplor => &[("energy_cap", 5.0)],
            AlgorithmName::Samota => &[("top_k", 4.0)],
            AlgorithmName::Drivefuzz => &[("stall_rotations", 2.0)],
        }
    }
}

impl std::fmt::Display for AlgorithmName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmParams {
    pub name: AlgorithmName,
    /// Wall-clock budget in hours.
    pub run_hour: f64,
    pub population_size: usize,
    pub pm: f64,
    pub pc: f64,
    pub local_run_hour: f64,
    pub archive_threshold: f64,
    pub surrogate_pool: usize,
    pub extras: BTreeMap<String, f64>,
}

pub const DEFAULT_RUN_HOUR: f64 = 2.0;
pub const DEFAULT_POPULATION_SIZE: usize = 4;
pub const DEFAULT_PM: f64 = 0.6;
pub const DEFAULT_PC: f64 = 0.6;
pub const DEFAULT_LOCAL_RUN_HOUR: f64 = 0.5;
pub const DEFAULT_ARCHIVE_THRESHOLD: f64 = 0.2;
pub const DEFAULT_SURROGATE_POOL: usize = 10;

impl AlgorithmParams {
    pub fn new(name: AlgorithmName) -> Self {
        AlgorithmParams {
            name,
            run_hour: DEFAULT_RUN_HOUR,
            population_size: DEFAULT_POPULATION_SIZE,
            pm: DEFAULT_PM,
            pc: DEFAULT_PC,
            local_run_hour: DEFAULT_LOCAL_RUN_HOUR,
            archive_threshold: DEFAULT_ARCHIVE_THRESHOLD,
            surrogate_pool: DEFAULT_SURROGATE_POOL,
            extras: BTreeMap::new(),
        }
    }

    /// Value of a known extra parameter, falling back to its default.
    pub fn extra(&self, key: &str) -> f64 {
        self.extras.get(key).copied().unwrap_or_else(|| {
            self.name
                .known_extras()
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .unwrap_or(f64::NAN)
        })
    }

    pub fn run_seconds(&self) -> f64 {
        self.run_hour * 3600.0
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let err = |field: &str, message: String| {
            Err(ParamError {
                field: field.to_string(),
                message,
            })
        };
        for (field, v) in [("pm", self.pm), ("pc", self.pc)] {
            if !(0.0..=1.0).contains(&v) {
                return err(field, format!("{v} is outside [0, 1]"));
            }
        }
        if !(self.run_hour.is_finite() && self.run_hour > 0.0) {
            return err("run_hour", format!("{} must be positive", self.run_hour));
        }
        if !(self.local_run_hour.is_finite() && self.local_run_hour >= 0.0) {
            return err("local_run_hour", format!("{} must be non-negative", self.local_run_hour));
        }
        let min_pop = if self.name == AlgorithmName::Random { 1 } else { 2 };
        if self.population_size < min_pop {
            return err("population_size", format!("{} is below {min_pop}", self.population_size));
        }
        if !(self.archive_threshold.is_finite() && self.archive_threshold > 0.0) {
            return err("archive_threshold", format!("{} must be positive", self.archive_threshold));
        }
        if self.surrogate_pool < 10 {
            return err("surrogate_pool", format!("{} is below 10", self.surrogate_pool));
        }
        for (key, v) in &self.extras {
            if !self.name.known_extras().iter().any(|(k, _)| k == key) {
                return err(&format!("extras.{key}"), format!("not a parameter of {}", self.name));
            }
            if !(v.is_finite() && *v >= 1.0) {
                return err(&format!("extras.{key}"), format!("{v} must be at least 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("{field}: {message}")]
pub struct ParamError {
    pub field: String,
    pub message: String,
}

/// Box-bounded search space with the gene group of every dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub bounds: Vec<Bounds>,
    pub groups: Vec<GeneGroup>,
}

impl SearchSpace {
    pub fn from_vector(v: &ParameterVector) -> Self {
        SearchSpace {
            bounds: v.bounds.clone(),
            groups: v.layout.iter().map(|g| g.group()).collect(),
        }
    }

    /// Unit hypercube of dimension `d`, every gene in the speed group.
    pub fn unit(d: usize) -> Self {
        SearchSpace {
            bounds: vec![Bounds::new(0.0, 1.0); d],
            groups: vec![GeneGroup::Speeds; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn indices_of(&self, group: GeneGroup) -> Vec<usize> {
        (0..self.groups.len()).filter(|&i| self.groups[i] == group).collect()
    }
}

/// Budget information a strategy may use to size its phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetHint {
    pub max_evals: Option<usize>,
    pub run_seconds: f64,
}

/// What a strategy learns from one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Minimized; collisions score at most the collision threshold.
    pub fitness: f64,
    pub behavior: Vec<f64>,
    pub quality: f64,
    pub violation: bool,
    /// Campaign time (s) at which the evaluation completed.
    pub elapsed: f64,
}

pub trait SearchAlgorithm: Send {
    fn name(&self) -> AlgorithmName;

    /// Next batch to evaluate; never empty.
    fn propose(&mut self) -> Vec<Vec<f64>>;

    /// Results for a prefix of the last proposed batch, in order.
    fn observe(&mut self, results: &[(Vec<f64>, Observation)]);
}

pub fn build_algorithm(params: &AlgorithmParams, space: SearchSpace, budget: BudgetHint, seed: u64) -> Box<dyn SearchAlgorithm> {
    match params.name {
        AlgorithmName::Random => Box::new(RandomSearch::new(params, space, seed)),
        AlgorithmName::Avfuzzer => Box::new(AvFuzzer::new(params, space, budget, seed)),
        AlgorithmName::Behavexplor => Box::new(BehaviorExplorer::new(params, space, seed)),
        AlgorithmName::Samota => Box::new(SurrogateSearch::new(params, space, seed)),
        AlgorithmName::Drivefuzz => Box::new(DriveFuzz::new(params, space, seed)),
    }
}

/// Runs `algorithm` serially against an in-memory objective until
/// `max_evals` evaluations or `stop` returns true. Returns the fitness series.
pub fn optimize(
    algorithm: &mut dyn SearchAlgorithm,
    mut objective: impl FnMut(&[f64]) -> Observation,
    max_evals: usize,
    mut stop: impl FnMut(&Observation) -> bool,
) -> Vec<f64> {
    let mut series = Vec::new();
    while series.len() < max_evals {
        let batch = algorithm.propose();
        let mut results = Vec::with_capacity(batch.len());
        let mut halt = false;
        for values in batch {
            if series.len() >= max_evals {
                break;
            }
            let obs = objective(&values);
            series.push(obs.fitness);
            halt = stop(&obs);
            results.push((values, obs));
            if halt {
                break;
            }
        }
        algorithm.observe(&results);
        if halt {
            break;
        }
    }
    series
}
