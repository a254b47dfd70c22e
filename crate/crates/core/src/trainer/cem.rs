//! Cross-entropy method over flattened policy parameters.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{evaluate_return, initial_policy, CurvePoint, TrainOutput};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mfcenv::EnvConfig;
use crate::seed;
use crate::topology::Topology;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CemConfig {
    pub population: usize,
    pub elite_frac: f64,
    pub iterations: usize,
    /// Hidden layers of the searched network; empty means a linear map
    /// from observation to logits.
    pub hidden: Vec<usize>,
    pub initial_std: f64,
    /// Added to the refitted standard deviation to keep searching.
    pub noise_floor: f64,
    /// Fixed evaluation episodes shared by every candidate.
    pub eval_episodes: usize,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            population: 32,
            elite_frac: 0.25,
            iterations: 20,
            hidden: Vec::new(),
            initial_std: 1.0,
            noise_floor: 0.02,
            eval_episodes: 8,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::InvalidParameter("population must be >= 4".into()));
        }
        if !(self.elite_frac > 0.0 && self.elite_frac < 1.0) {
            return Err(Error::InvalidParameter("elite_frac must lie in (0, 1)".into()));
        }
        if !(self.initial_std > 0.0) || !(self.noise_floor >= 0.0) || self.eval_episodes == 0 {
            return Err(Error::InvalidParameter(
                "initial_std and eval_episodes must be positive, noise_floor non-negative".into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidParameter("hidden layers must be non-empty".into()));
        }
        Ok(())
    }

    fn elites(&self) -> usize {
        ((self.population as f64 * self.elite_frac).round() as usize).clamp(1, self.population)
    }
}

/// Sample a population around the current mean, score every member on the
/// same evaluation episodes, refit mean and spread to the elites. The best
/// member ever scored is returned (the initial mean with no iterations).
pub fn cem_train(
    topology: &Topology,
    env_config: &EnvConfig,
    config: &CemConfig,
    seed: u64,
    exec: Execution,
) -> Result<TrainOutput> {
    config.validate()?;
    env_config.system.validate()?;
    let template = initial_policy(env_config, &config.hidden, 0.2, seed)?;
    let mut mean = template.net.params().to_vec();
    let dim = mean.len();
    let mut std = vec![config.initial_std; dim];
    let eval_seed = seed::derive(seed, &["eval"]);
    let mut sampler = seed::rng(seed::derive(seed, &["cem-sample"]));

    let score = |params: &[f64]| -> Result<f64> {
        let mut p = template.clone();
        p.net.params_mut().copy_from_slice(params);
        evaluate_return(topology, env_config, &p, eval_seed, config.eval_episodes, Execution::Sequential)
    };

    let mut best_params = mean.clone();
    let mut best_return = if config.iterations == 0 {
        f64::NAN
    } else {
        score(&mean)?
    };
    let mut best_iteration = 0;
    let mut curve = Vec::with_capacity(config.iterations);
    let n_elite = config.elites();

    for iteration in 1..=config.iterations {
        let population: Vec<Vec<f64>> = (0..config.population)
            .map(|_| {
                (0..dim)
                    .map(|k| {
                        let z: f64 = sampler.sample(StandardNormal);
                        mean[k] + std[k] * z
                    })
                    .collect()
            })
            .collect();
        let returns: Vec<f64> = exec
            .map(population.len(), |i| score(&population[i]))
            .into_iter()
            .collect::<Result<_>>()?;
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&a, &b| returns[b].total_cmp(&returns[a]).then(a.cmp(&b)));
        let elites = &order[..n_elite];

        for k in 0..dim {
            let m = elites.iter().map(|&i| population[i][k]).sum::<f64>() / n_elite as f64;
            let v = elites
                .iter()
                .map(|&i| (population[i][k] - m).powi(2))
                .sum::<f64>()
                / n_elite as f64;
            mean[k] = m;
            std[k] = v.sqrt() + config.noise_floor;
        }
        let top = order[0];
        if returns[top] > best_return {
            best_return = returns[top];
            best_params = population[top].clone();
            best_iteration = iteration;
        }
        let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
        log::info!(
            "cem iteration {iteration}: population mean {mean_return:.4}, best {:.4}",
            returns[top]
        );
        curve.push(CurvePoint {
            iteration,
            mean_return,
            kl: 0.0,
            clip_fraction: 0.0,
        });
    }

    let mut policy = template;
    policy.net.params_mut().copy_from_slice(&best_params);
    Ok(TrainOutput {
        policy,
        curve,
        best_iteration,
        best_eval_return: best_return,
    })
}
