use std::path::Path;

use anyhow::{Context, Result};
use imt_core::decoding::Strategy;
use imt_core::memory::MemoryConfig;
use imt_core::pipeline::SystemConfig;
use imt_core::session::SessionConfig;
use imt_core::simulator::SimulationConfig;
use serde::{Deserialize, Serialize};

use crate::Overrides;

/// Every tunable in one place. Read from TOML, then overridden by
/// environment variables and flags (see [`Overrides`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Replaces every seed below when set.
    pub seed: Option<u64>,
    pub beam: usize,
    pub memory_capacity: usize,
    pub memory_threshold: u64,
    pub online_lr: f64,
    pub strategy: Strategy,
    /// Revisions per sentence in simulation.
    pub budget: usize,
    pub memory: bool,
    pub online: bool,
    /// Simulation only: adapted parameters carry over between sessions.
    pub global_mutation: bool,
    pub system: SystemConfig,
}

impl Default for Config {
    fn default() -> Self {
        let session = SessionConfig::default();
        Self {
            seed: None,
            beam: session.beam_size,
            memory_capacity: session.memory.capacity,
            memory_threshold: session.memory.threshold,
            online_lr: session.online_learning_rate,
            strategy: session.strategy,
            budget: 4,
            memory: session.use_memory,
            online: session.online_learning,
            global_mutation: false,
            system: SystemConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => Config::default(),
        };
        overrides.apply(&mut config);
        if let Some(seed) = config.seed {
            config.system.model.seed = seed;
            config.system.train.seed = seed;
            config.system.memory.seed = seed;
        }
        config.session().validate()?;
        config.system.train.validate()?;
        Ok(config)
    }

    pub fn memory_config(&self) -> MemoryConfig {
        MemoryConfig {
            capacity: self.memory_capacity,
            threshold: self.memory_threshold,
        }
    }

    pub fn session(&self) -> SessionConfig {
        SessionConfig {
            beam_size: self.beam,
            strategy: self.strategy,
            memory: self.memory_config(),
            use_memory: self.memory,
            online_learning: self.online,
            online_learning_rate: self.online_lr,
        }
    }

    pub fn simulation(&self, strategy: Strategy) -> SimulationConfig {
        SimulationConfig {
            strategy,
            max_revisions: self.budget,
            online_learning: self.online,
            use_memory: self.memory,
            beam_size: self.beam,
            memory: self.memory_config(),
            online_learning_rate: self.online_lr,
            carry_parameters: self.global_mutation,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
