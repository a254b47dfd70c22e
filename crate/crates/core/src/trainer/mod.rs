//! Policy optimization against [`McEnv`](crate::mfcenv::McEnv).
//!
//! [`train`] runs clipped-surrogate policy gradient with a learned critic;
//! [`cem_train`] is a derivative-free alternative over the flattened
//! network parameters. Both return the best parameters found on a fixed set
//! of evaluation seeds.

mod cem;
pub mod ppo;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cem::{cem_train, CemConfig};
pub use ppo::{collect_batch, compute_advantages, Episode, Learner, Sample, UpdateStats};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mfcenv::{EnvConfig, McEnv};
use crate::nn::Mlp;
use crate::policies::{PolicyDocument, PolicyNetwork};
use crate::seed;
use crate::topology::Topology;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub kl_coeff: f64,
    pub kl_target: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub minibatch_size: usize,
    pub sgd_iters: usize,
    pub epochs: usize,
    pub hidden: Vec<usize>,
    /// Initial exploration standard deviation of every output.
    pub initial_std: f64,
    /// Episodes of the fixed evaluation set used to pick the best iterate.
    pub eval_episodes: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 1.0,
            clip: 0.3,
            kl_coeff: 0.2,
            kl_target: 0.01,
            learning_rate: 5e-5,
            batch_size: 4000,
            minibatch_size: 512,
            sgd_iters: 6,
            epochs: 50,
            hidden: vec![256, 256],
            initial_std: 0.2,
            eval_episodes: 10,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.into()));
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) || !(self.learning_rate > 0.0) || !(self.initial_std > 0.0) {
            return bad("clip, learning_rate and initial_std must be positive");
        }
        if !(self.kl_coeff >= 0.0) || !(self.kl_target > 0.0) {
            return bad("kl_coeff must be non-negative and kl_target positive");
        }
        if self.batch_size == 0 || self.minibatch_size == 0 || self.sgd_iters == 0 || self.eval_episodes == 0 {
            return bad("batch_size, minibatch_size, sgd_iters and eval_episodes must be positive");
        }
        if self.minibatch_size > self.batch_size {
            return bad("minibatch_size must not exceed batch_size");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty");
        }
        Ok(())
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_return: f64,
    pub kl: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: PolicyNetwork,
    pub curve: Vec<CurvePoint>,
    /// Iteration that produced `policy` (0 means the initial parameters).
    pub best_iteration: usize,
    /// Mean undiscounted return of `policy` on the evaluation seeds.
    pub best_eval_return: f64,
}

fn layer_sizes(env: &EnvConfig, hidden: &[usize], out: usize) -> Vec<usize> {
    let mut sizes = vec![env.observation_dim()];
    sizes.extend_from_slice(hidden);
    sizes.push(out);
    sizes
}

/// Freshly initialized policy: small output weights, so ζ starts near ½.
pub fn initial_policy(env: &EnvConfig, hidden: &[usize], initial_std: f64, seed: u64) -> Result<PolicyNetwork> {
    let mut rng = seed::rng(seed::derive(seed, &["policy-init"]));
    let net = Mlp::init(&layer_sizes(env, hidden, env.action_dim()), 0.01, &mut rng)?;
    Ok(PolicyNetwork {
        log_std: vec![initial_std.ln(); net.output_dim()],
        net,
        mode: env.observation,
        observe_rate: env.observe_rate,
        rate_scale: env.system.regime.rate_high,
    })
}

/// Mean undiscounted return of the deterministic (mean-action) policy over
/// episodes `child(eval_seed, 0..episodes)`.
pub fn evaluate_return(
    topology: &Topology,
    env_config: &EnvConfig,
    policy: &PolicyNetwork,
    eval_seed: u64,
    episodes: usize,
    exec: Execution,
) -> Result<f64> {
    let totals: Result<Vec<f64>> = exec
        .map(episodes, |e| {
            let mut env = McEnv::new(topology, env_config.clone())?;
            let mut obs = env.reset(seed::child(eval_seed, e as u64))?;
            let mut total = 0.0;
            for _ in 0..env_config.horizon {
                let tr = env.step(&policy.mean(&obs.features()))?;
                total += tr.reward;
                obs = tr.next_observation;
                if tr.done {
                    break;
                }
            }
            Ok(total)
        })
        .into_iter()
        .collect();
    let totals = totals?;
    Ok(totals.iter().sum::<f64>() / totals.len().max(1) as f64)
}

/// Policy-gradient training: `epochs` rounds of collect, estimate
/// advantages, update. After every round the mean policy is scored on a
/// fixed evaluation set and the best iterate is kept.
pub fn train(
    topology: &Topology,
    env_config: &EnvConfig,
    config: &TrainerConfig,
    seed: u64,
    exec: Execution,
) -> Result<TrainOutput> {
    config.validate()?;
    env_config.system.validate()?;
    let policy = initial_policy(env_config, &config.hidden, config.initial_std, seed)?;
    let mut critic_rng = seed::rng(seed::derive(seed, &["critic-init"]));
    let critic = Mlp::init(&layer_sizes(env_config, &config.hidden, 1), 1.0, &mut critic_rng)?;
    let mut learner = Learner::new(policy, critic, config);
    let mut sgd_rng = seed::rng(seed::derive(seed, &["sgd"]));
    let batch_root = seed::derive(seed, &["batch"]);
    let eval_seed = seed::derive(seed, &["eval"]);

    let mut best = learner.policy.clone();
    let mut best_iteration = 0;
    let mut best_eval_return = if config.epochs == 0 {
        f64::NAN
    } else {
        evaluate_return(topology, env_config, &best, eval_seed, config.eval_episodes, exec)?
    };
    let mut curve = Vec::with_capacity(config.epochs);

    for iteration in 1..=config.epochs {
        let batch_seed = seed::child(batch_root, iteration as u64);
        let mut episodes = collect_batch(
            topology,
            env_config,
            &learner.policy,
            config.batch_size.max(env_config.horizon),
            batch_seed,
            exec,
        )?;
        let mean_return =
            episodes.iter().map(Episode::total_reward).sum::<f64>() / episodes.len() as f64;
        compute_advantages(&mut episodes, Some(&learner.critic), config.gamma, config.gae_lambda);
        let stats = learner.ppo_update(&episodes, config, &mut sgd_rng)?;
        curve.push(CurvePoint {
            iteration,
            mean_return,
            kl: stats.kl,
            clip_fraction: stats.clip_fraction,
        });
        let eval = evaluate_return(topology, env_config, &learner.policy, eval_seed, config.eval_episodes, exec)?;
        log::info!(
            "iteration {iteration}: batch return {mean_return:.4}, eval {eval:.4}, kl {:.5}, clip {:.3}",
            stats.kl,
            stats.clip_fraction
        );
        if eval > best_eval_return {
            best_eval_return = eval;
            best = learner.policy.clone();
            best_iteration = iteration;
        }
    }
    Ok(TrainOutput {
        policy: best,
        curve,
        best_iteration,
        best_eval_return,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMethod {
    Ppo,
    Cem,
}

/// Everything needed to reload a trained policy and know where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub method: TrainMethod,
    pub iteration: usize,
    pub seed: u64,
    pub policy: PolicyDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainer: Option<TrainerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cem: Option<CemConfig>,
    pub env: EnvConfig,
    pub env_fingerprint: String,
    pub eval_return: f64,
}

impl Checkpoint {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Parse {
                what: "checkpoint",
                detail: format!("unsupported version {}", ck.version),
            });
        }
        Ok(ck)
    }
}

pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            what: "training curve",
            detail: format!("{other:?}"),
        },
    })?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_curve(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
