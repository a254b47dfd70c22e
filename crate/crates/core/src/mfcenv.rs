//! Mean-field control environment.
//!
//! The whole finite system is one environment: the observation is the
//! empirical queue distribution (or a local view of it), the action is a
//! decision rule ζ broadcast to every agent, and the reward is minus the
//! mean number of drops per agent in the epoch.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{effective_rates, EpochKernel};
use crate::seed::EpisodeSeeds;
use crate::simulator::{empirical_distribution, Route, System, SystemParams};
use crate::topology::{Topology, TopologySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    /// Empirical distribution of all queue fillings.
    #[default]
    Global,
    /// Distribution of the agent's neighbours' fillings.
    Neighborhood,
    /// One-hot of the agent's own filling.
    OwnState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McObservation {
    pub mode: ObservationMode,
    /// Probability vector over `{0..=B}`.
    pub vector: Vec<f64>,
    /// Current arrival rate divided by the high rate, when observable.
    pub rate: Option<f64>,
}

impl McObservation {
    /// Network input: the distribution, then the optional rate feature.
    pub fn features(&self) -> Vec<f64> {
        let mut f = self.vector.clone();
        f.extend(self.rate);
        f
    }
}

fn one_hot(k: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[k] = 1.0;
    v
}

/// Observation of `agent` (ignored in global mode).
pub fn observe(
    mode: ObservationMode,
    system: &System<'_>,
    agent: usize,
    observe_rate: bool,
    rate_scale: f64,
) -> McObservation {
    let queues = system.queues();
    let buffer = system.buffer();
    let vector = match mode {
        ObservationMode::Global => empirical_distribution(queues, buffer),
        ObservationMode::OwnState => one_hot(queues[agent] as usize, buffer + 1),
        ObservationMode::Neighborhood => {
            let nb = system.topology().neighbors(agent);
            if nb.is_empty() {
                one_hot(queues[agent] as usize, buffer + 1)
            } else {
                let mut v = vec![0.0; buffer + 1];
                for &j in nb {
                    v[queues[j as usize] as usize] += 1.0;
                }
                let d = nb.len() as f64;
                v.iter_mut().for_each(|x| *x /= d);
                v
            }
        }
    };
    let rate = observe_rate.then(|| {
        let r = system.state().regime.rate();
        if rate_scale > 0.0 {
            r / rate_scale
        } else {
            r
        }
    });
    McObservation { mode, vector, rate }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Realized drops of the simulated epoch.
    #[default]
    Realized,
    /// Kernel expectation of drops given the epoch-start configuration.
    Expected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub topology: TopologySpec,
    pub delta_t: f64,
    #[serde(default)]
    pub system: SystemParams,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub observation: ObservationMode,
    #[serde(default)]
    pub observe_rate: bool,
    #[serde(default)]
    pub reward: RewardMode,
}

fn default_horizon() -> usize {
    50
}

impl EnvConfig {
    pub fn new(topology: TopologySpec, delta_t: f64) -> Self {
        Self {
            topology,
            delta_t,
            system: SystemParams::default(),
            horizon: default_horizon(),
            observation: ObservationMode::Global,
            observe_rate: false,
            reward: RewardMode::Realized,
        }
    }

    pub fn observation_dim(&self) -> usize {
        self.system.buffer + 1 + usize::from(self.observe_rate)
    }

    pub fn action_dim(&self) -> usize {
        self.system.buffer + 1
    }

    /// Short text identifying the environment, stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        format!(
            "{}|dt={}|B={}|T={}|obs={:?}|rate={}|reward={:?}",
            self.topology.key(),
            self.delta_t,
            self.system.buffer,
            self.horizon,
            self.observation,
            self.observe_rate,
            self.reward
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McTransition {
    pub observation: McObservation,
    /// Decision rule actually applied (after clamping).
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_observation: McObservation,
    pub done: bool,
}

/// One finite system driven as a single-agent MDP.
#[derive(Debug)]
pub struct McEnv<'a> {
    topology: &'a Topology,
    config: EnvConfig,
    system: Option<System<'a>>,
    observation: Option<McObservation>,
    routes: Vec<Route>,
    kernels: HashMap<(u64, u64), EpochKernel>,
    warned_clamp: bool,
}

impl<'a> McEnv<'a> {
    pub fn new(topology: &'a Topology, config: EnvConfig) -> Result<Self> {
        config.system.validate()?;
        if config.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        Ok(Self {
            topology,
            config,
            system: None,
            observation: None,
            routes: Vec::with_capacity(topology.n_nodes()),
            kernels: HashMap::new(),
            warned_clamp: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn system(&self) -> Option<&System<'a>> {
        self.system.as_ref()
    }

    fn observe_now(&self, system: &System<'_>) -> McObservation {
        observe(
            self.config.observation,
            system,
            0,
            self.config.observe_rate,
            self.config.system.regime.rate_high,
        )
    }

    /// Empty queues, fresh regime; streams derived from `seed`.
    pub fn reset(&mut self, seed: u64) -> Result<McObservation> {
        let system = System::new(
            self.topology,
            &self.config.system,
            self.config.delta_t,
            EpisodeSeeds::from_episode(seed),
        )?;
        let obs = self.observe_now(&system);
        self.system = Some(system);
        self.observation = Some(obs.clone());
        Ok(obs)
    }

    /// Apply ζ to every agent for one epoch.
    pub fn step(&mut self, action: &[f64]) -> Result<McTransition> {
        let buffer = self.config.system.buffer;
        if action.len() != buffer + 1 {
            return Err(Error::LengthMismatch {
                expected: buffer + 1,
                actual: action.len(),
            });
        }
        if action.iter().any(|a| a.is_nan()) {
            return Err(Error::InvalidParameter("decision rule contains NaN".into()));
        }
        let zeta: Vec<f64> = action.iter().map(|a| a.clamp(0.0, 1.0)).collect();
        if zeta != action && !self.warned_clamp {
            log::debug!("decision rule entries outside [0, 1] are clamped");
            self.warned_clamp = true;
        }
        let mut system = self
            .system
            .take()
            .ok_or_else(|| Error::InvalidParameter("step called before reset".into()))?;
        let observation = self.observation.take().unwrap_or_else(|| self.observe_now(&system));

        self.routes.clear();
        self.routes
            .extend(system.queues().iter().map(|&z| Route::Offload(zeta[z as usize])));

        let expected = match self.config.reward {
            RewardMode::Realized => None,
            RewardMode::Expected => Some(self.expected_mean_drops(&system, &zeta)?),
        };
        let stats = system.step(&self.routes)?;
        let reward = -expected.unwrap_or(stats.mean_drops);
        let next_observation = self.observe_now(&system);
        let done = system.state().epoch_index >= self.config.horizon;
        self.system = Some(system);
        self.observation = Some(next_observation.clone());
        Ok(McTransition {
            observation,
            action: zeta,
            reward,
            next_observation,
            done,
        })
    }

    fn expected_mean_drops(&mut self, system: &System<'_>, zeta: &[f64]) -> Result<f64> {
        let queues = system.queues();
        let offload: Vec<f64> = queues.iter().map(|&z| zeta[z as usize]).collect();
        let rates = effective_rates(self.topology, &offload, system.state().regime.rate())?;
        let mut total = 0.0;
        for (i, (&lam, &alpha)) in rates.iter().zip(system.service_rates()).enumerate() {
            let key = (lam.to_bits(), alpha.to_bits());
            let kernel = match self.kernels.get(&key) {
                Some(k) => k,
                None => {
                    let k = EpochKernel::new(lam, alpha, self.config.system.buffer, self.config.delta_t)?;
                    self.kernels.entry(key).or_insert(k)
                }
            };
            total += kernel.expected_drops(queues[i] as usize);
        }
        Ok(total / queues.len() as f64)
    }
}

/// `Σ_t γ^t r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut acc = 0.0;
    let mut discount = 1.0;
    for &r in rewards {
        acc += discount * r;
        discount *= gamma;
    }
    acc
}
