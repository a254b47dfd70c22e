//! Batch collection, advantage estimation and the clipped-surrogate update.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::TrainerConfig;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mfcenv::{EnvConfig, McEnv};
use crate::nn::{Adam, Mlp};
use crate::policies::{PolicyNetwork, MIN_EXPLORATION};
use crate::seed::{self, SimRng};
use crate::topology::Topology;

/// One environment step as seen by the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    /// Raw Gaussian sample; the environment clamps it into `[0, 1]`.
    pub action: Vec<f64>,
    pub log_prob: f64,
    /// Mean and standard deviation of the behaviour policy.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub reward: f64,
    pub next_features: Vec<f64>,
    pub done: bool,
    pub advantage: f64,
    pub value_target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub samples: Vec<Sample>,
}

impl Episode {
    pub fn total_reward(&self) -> f64 {
        self.samples.iter().map(|s| s.reward).sum()
    }
}

pub fn gaussian_log_prob(x: &[f64], mean: &[f64], std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(std)
        .map(|((x, m), s)| {
            let z = (x - m) / s;
            -0.5 * z * z - s.ln() - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

/// `KL(old ‖ new)` between diagonal Gaussians.
pub fn gaussian_kl(mean_old: &[f64], std_old: &[f64], mean_new: &[f64], std_new: &[f64]) -> f64 {
    (0..mean_old.len())
        .map(|k| {
            let (so, sn) = (std_old[k], std_new[k]);
            let dm = mean_old[k] - mean_new[k];
            (sn / so).ln() + (so * so + dm * dm) / (2.0 * sn * sn) - 0.5
        })
        .sum()
}

/// Sample one action from the policy's diagonal Gaussian.
pub fn sample_action<R: Rng + ?Sized>(policy: &PolicyNetwork, features: &[f64], rng: &mut R) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mean = policy.mean(features);
    let std = policy.std();
    let action = mean
        .iter()
        .zip(&std)
        .map(|(m, s)| {
            let z: f64 = rng.sample(StandardNormal);
            m + s * z
        })
        .collect();
    (action, mean, std)
}

/// Roll out whole episodes until at least `batch_size` transitions exist.
///
/// Episode `e` of the batch uses seed `child(batch_seed, e)` for both the
/// environment and the action noise, so the batch depends only on the
/// seed and not on how episodes are spread over workers.
pub fn collect_batch(
    topology: &Topology,
    env_config: &EnvConfig,
    policy: &PolicyNetwork,
    batch_size: usize,
    batch_seed: u64,
    exec: Execution,
) -> Result<Vec<Episode>> {
    let horizon = env_config.horizon;
    if batch_size < horizon {
        return Err(Error::InvalidParameter(format!(
            "batch size {batch_size} is smaller than the horizon {horizon}"
        )));
    }
    let episodes = batch_size.div_ceil(horizon);
    exec.map(episodes, |e| {
        let episode_seed = seed::child(batch_seed, e as u64);
        rollout(topology, env_config, policy, episode_seed)
    })
    .into_iter()
    .collect()
}

fn rollout(topology: &Topology, env_config: &EnvConfig, policy: &PolicyNetwork, episode_seed: u64) -> Result<Episode> {
    let mut env = McEnv::new(topology, env_config.clone())?;
    let mut noise: SimRng = seed::rng(seed::derive(episode_seed, &["action-noise"]));
    let mut obs = env.reset(episode_seed)?;
    let mut samples = Vec::with_capacity(env_config.horizon);
    for _ in 0..env_config.horizon {
        let features = obs.features();
        let (action, mean, std) = sample_action(policy, &features, &mut noise);
        let log_prob = gaussian_log_prob(&action, &mean, &std);
        let tr = env.step(&action)?;
        samples.push(Sample {
            features,
            action,
            log_prob,
            mean,
            std,
            reward: tr.reward,
            next_features: tr.next_observation.features(),
            done: tr.done,
            advantage: 0.0,
            value_target: 0.0,
        });
        obs = tr.next_observation;
        if tr.done {
            break;
        }
    }
    Ok(Episode { samples })
}

/// Generalized advantage estimates and discounted value targets.
///
/// The episode end is treated as terminal, so with `gae_lambda = 1` the
/// value target is the discounted return-to-go.
pub fn compute_advantages(episodes: &mut [Episode], critic: Option<&Mlp>, gamma: f64, gae_lambda: f64) {
    let value = |f: &[f64]| critic.map_or(0.0, |c| c.forward(f)[0]);
    for ep in episodes {
        let values: Vec<f64> = ep.samples.iter().map(|s| value(&s.features)).collect();
        let mut next_adv = 0.0;
        let n = ep.samples.len();
        for t in (0..n).rev() {
            let s = &ep.samples[t];
            let next_value = if s.done || t + 1 == n {
                0.0
            } else {
                values[t + 1]
            };
            let delta = s.reward + gamma * next_value - values[t];
            let adv = delta + gamma * gae_lambda * next_adv;
            next_adv = adv;
            let s = &mut ep.samples[t];
            s.advantage = adv;
            s.value_target = adv + values[t];
        }
    }
}

/// Loss terms and gradient of the policy objective on one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLoss {
    pub loss: f64,
    pub surrogate: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    /// Gradient w.r.t. the network parameters, then the log-std entries.
    pub grad: Vec<f64>,
}

/// Clipped surrogate plus KL penalty, averaged over `batch`:
///
/// `L = −mean(min(r A, clip(r, 1−ε, 1+ε) A)) + β mean(KL(old ‖ new))`.
///
/// `advantages` overrides the stored advantage of each sample (used for
/// normalization).
pub fn policy_loss(
    policy: &PolicyNetwork,
    batch: &[&Sample],
    advantages: &[f64],
    clip: f64,
    kl_coeff: f64,
) -> PolicyLoss {
    let n_net = policy.net.params().len();
    let out_dim = policy.net.output_dim();
    let mut grad = vec![0.0; n_net + out_dim];
    let (mut surrogate, mut kl, mut clipped) = (0.0, 0.0, 0usize);
    let m = batch.len() as f64;
    let std_new = policy.std();
    let floored: Vec<bool> = policy
        .log_std
        .iter()
        .map(|l| l.exp() < MIN_EXPLORATION)
        .collect();

    for (s, &adv) in batch.iter().zip(advantages) {
        let trace = policy.net.forward_trace(&s.features);
        let mean: Vec<f64> = trace.output().iter().map(|&x| crate::nn::sigmoid(x)).collect();
        let logp = gaussian_log_prob(&s.action, &mean, &std_new);
        let ratio = (logp - s.log_prob).exp();
        let clipped_ratio = ratio.clamp(1.0 - clip, 1.0 + clip);
        surrogate += (ratio * adv).min(clipped_ratio * adv);
        let is_clipped = (adv > 0.0 && ratio >= 1.0 + clip) || (adv < 0.0 && ratio <= 1.0 - clip);
        clipped += usize::from(ratio < 1.0 - clip || ratio > 1.0 + clip);
        kl += gaussian_kl(&s.mean, &s.std, &mean, &std_new);

        // ∂L/∂logπ for this sample (before averaging)
        let dlogp = if is_clipped { 0.0 } else { -ratio * adv };
        let mut grad_logit = vec![0.0; out_dim];
        for k in 0..out_dim {
            let (mu, sd) = (mean[k], std_new[k]);
            let z = (s.action[k] - mu) / sd;
            let dm = s.mean[k] - mu;
            // surrogate through the log-density
            let mut g_mu = dlogp * z / sd;
            let mut g_logstd = dlogp * (z * z - 1.0);
            // KL penalty
            g_mu += kl_coeff * (-dm) / (sd * sd);
            g_logstd += kl_coeff * (1.0 - (s.std[k] * s.std[k] + dm * dm) / (sd * sd));
            grad_logit[k] = g_mu * mu * (1.0 - mu) / m;
            if !floored[k] {
                grad[n_net + k] += g_logstd / m;
            }
        }
        policy.net.backward(&trace, &grad_logit, &mut grad[..n_net]);
    }
    let surrogate = surrogate / m;
    let kl = kl / m;
    PolicyLoss {
        loss: -surrogate + kl_coeff * kl,
        surrogate,
        kl,
        clip_fraction: clipped as f64 / m,
        grad,
    }
}

/// `½ mean((V(s) − target)²)` and its gradient.
pub fn value_loss(critic: &Mlp, batch: &[&Sample]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; critic.params().len()];
    let m = batch.len() as f64;
    let mut loss = 0.0;
    for s in batch {
        let trace = critic.forward_trace(&s.features);
        let err = trace.output()[0] - s.value_target;
        loss += 0.5 * err * err / m;
        critic.backward(&trace, &[err / m], &mut grad);
    }
    (loss, grad)
}

/// Mutable learner state carried across iterations.
#[derive(Debug, Clone)]
pub struct Learner {
    pub policy: PolicyNetwork,
    pub critic: Mlp,
    pub kl_coeff: f64,
    policy_opt: Adam,
    critic_opt: Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub kl_coeff: f64,
}

impl Learner {
    pub fn new(policy: PolicyNetwork, critic: Mlp, config: &TrainerConfig) -> Self {
        let n_policy = policy.net.params().len() + policy.log_std.len();
        let n_critic = critic.params().len();
        Self {
            policy,
            critic,
            kl_coeff: config.kl_coeff,
            policy_opt: Adam::new(n_policy, config.learning_rate),
            critic_opt: Adam::new(n_critic, config.learning_rate),
        }
    }

    /// `sgd_iters` passes over the batch in shuffled minibatches, then the
    /// adaptive KL coefficient update.
    pub fn ppo_update(&mut self, episodes: &[Episode], config: &TrainerConfig, rng: &mut SimRng) -> Result<UpdateStats> {
        let samples: Vec<&Sample> = episodes.iter().flat_map(|e| e.samples.iter()).collect();
        if samples.is_empty() {
            return Ok(UpdateStats::default());
        }
        let advantages = normalized_advantages(&samples);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let minibatch = config.minibatch_size.clamp(1, samples.len());
        let mut stats = UpdateStats::default();
        let mut count = 0.0;
        let n_net = self.policy.net.params().len();
        for _ in 0..config.sgd_iters {
            order.shuffle(rng);
            for chunk in order.chunks(minibatch) {
                let batch: Vec<&Sample> = chunk.iter().map(|&i| samples[i]).collect();
                let adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
                let pl = policy_loss(&self.policy, &batch, &adv, config.clip, self.kl_coeff);
                let (vl, vgrad) = value_loss(&self.critic, &batch);
                if !pl.loss.is_finite() || !vl.is_finite() || pl.grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFiniteLoss);
                }
                let mut params: Vec<f64> = self
                    .policy
                    .net
                    .params()
                    .iter()
                    .chain(&self.policy.log_std)
                    .copied()
                    .collect();
                self.policy_opt.step(&mut params, &pl.grad);
                self.policy.net.params_mut().copy_from_slice(&params[..n_net]);
                self.policy.log_std.copy_from_slice(&params[n_net..]);
                self.critic_opt.step(self.critic.params_mut(), &vgrad);
                stats.policy_loss += pl.loss;
                stats.value_loss += vl;
                stats.clip_fraction += pl.clip_fraction;
                count += 1.0;
            }
        }
        stats.policy_loss /= count;
        stats.value_loss /= count;
        stats.clip_fraction /= count;

        let std_new = self.policy.std();
        stats.kl = samples
            .iter()
            .map(|s| gaussian_kl(&s.mean, &s.std, &self.policy.mean(&s.features), &std_new))
            .sum::<f64>()
            / samples.len() as f64;
        if stats.kl > 2.0 * config.kl_target {
            self.kl_coeff *= 2.0;
        } else if stats.kl < 0.5 * config.kl_target {
            self.kl_coeff *= 0.5;
        }
        stats.kl_coeff = self.kl_coeff;
        Ok(stats)
    }
}

/// Advantages standardized over the batch; left as is when they have no
/// spread.
fn normalized_advantages(samples: &[&Sample]) -> Vec<f64> {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
    let var = samples
        .iter()
        .map(|s| (s.advantage - mean).powi(2))
        .sum::<f64>()
        / n;
    let sd = var.sqrt();
    if sd < 1e-12 {
        samples.iter().map(|s| s.advantage).collect()
    } else {
        samples.iter().map(|s| (s.advantage - mean) / sd).collect()
    }
}
