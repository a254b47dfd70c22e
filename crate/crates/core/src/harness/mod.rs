//! Experiment orchestration: evaluation with confidence intervals, factorial
//! sweeps, policy rankings and the Bethe lattice ablation.

mod output;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub use output::{read_results_csv, write_results_csv, write_results_json, write_traces, ResultRow};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::policies::{PolicyHandle, PolicySpec};
use crate::seed::{self, EpisodeSeeds};
use crate::simulator::{run_episode, EpisodeResult, SystemParams};
use crate::topology::{Topology, TopologySpec};

fn default_episodes() -> usize {
    100
}

fn default_horizon() -> usize {
    50
}

fn default_policies() -> Vec<PolicySpec> {
    vec![PolicySpec::Jsq, PolicySpec::Rnd, PolicySpec::Own]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub topologies: Vec<TopologySpec>,
    pub delta_t: Vec<f64>,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicySpec>,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub system: SystemParams,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(topologies: Vec<TopologySpec>, delta_t: Vec<f64>, policies: Vec<PolicySpec>) -> Self {
        Self {
            topologies,
            delta_t,
            policies,
            episodes: default_episodes(),
            horizon: default_horizon(),
            system: SystemParams::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes < 2 {
            return Err(Error::InvalidParameter(
                "at least 2 episodes are needed for a confidence interval".into(),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        if self.delta_t.iter().any(|dt| !(dt.is_finite() && *dt > 0.0)) {
            return Err(Error::InvalidParameter("every Δt must be positive".into()));
        }
        if self.topologies.is_empty() || self.delta_t.is_empty() || self.policies.is_empty() {
            return Err(Error::InvalidParameter(
                "topologies, delta_t and policies must be non-empty".into(),
            ));
        }
        self.system.validate()
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }
}

/// Options that do not change the simulated numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub exec: Execution,
    /// Record wall-clock seconds; off by default so outputs are reproducible.
    pub timing: bool,
    /// Keep the per-epoch records of every episode.
    pub keep_episodes: bool,
}

/// Sample mean and half-width of the two-sided 95% Student-t interval.
pub fn mean_ci95(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::INFINITY);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return (mean, 0.0);
    }
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(f64::NAN);
    (mean, t * (var / n as f64).sqrt())
}

/// Result of evaluating one (topology, policy, Δt) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub topology: String,
    pub policy: String,
    pub delta_t: f64,
    pub mean_drops: f64,
    pub ci95: f64,
    /// Episode totals of the mean drops per agent.
    pub per_episode: Vec<f64>,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub episodes: Vec<EpisodeResult>,
}

impl CellResult {
    pub fn interval(&self) -> (f64, f64) {
        (self.mean_drops - self.ci95, self.mean_drops + self.ci95)
    }

    /// True when the two 95% intervals do not overlap.
    pub fn separated_from(&self, other: &CellResult) -> bool {
        let (lo_a, hi_a) = self.interval();
        let (lo_b, hi_b) = other.interval();
        hi_a < lo_b || hi_b < lo_a
    }

    fn failed(topology: String, policy: String, delta_t: f64, err: &Error) -> Self {
        Self {
            topology,
            policy,
            delta_t,
            mean_drops: f64::NAN,
            ci95: f64::NAN,
            per_episode: Vec::new(),
            seconds: 0.0,
            error: Some(err.to_string()),
            episodes: Vec::new(),
        }
    }
}

/// Run `episodes` independent episodes with seeds `child(seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    topology: &Topology,
    topology_key: &str,
    policy: &PolicyHandle,
    policy_key: &str,
    delta_t: f64,
    episodes: usize,
    horizon: usize,
    params: &SystemParams,
    seed: u64,
    options: RunOptions,
) -> Result<CellResult> {
    if episodes < 2 {
        return Err(Error::InvalidParameter(
            "at least 2 episodes are needed for a confidence interval".into(),
        ));
    }
    let start = Instant::now();
    let results: Vec<EpisodeResult> = options
        .exec
        .map(episodes, |i| {
            run_episode(
                topology,
                policy,
                horizon,
                delta_t,
                params,
                EpisodeSeeds::from_episode(seed::child(seed, i as u64)),
            )
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let per_episode: Vec<f64> = results.iter().map(|r| r.total).collect();
    let (mean_drops, ci95) = mean_ci95(&per_episode);
    Ok(CellResult {
        topology: topology_key.to_string(),
        policy: policy_key.to_string(),
        delta_t,
        mean_drops,
        ci95,
        per_episode,
        seconds: if options.timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        },
        error: None,
        episodes: if options.keep_episodes { results } else { Vec::new() },
    })
}

/// Seed of one sweep cell, a pure function of the master seed and the cell key.
pub fn cell_seed(master: u64, topology_key: &str, policy_key: &str, delta_t: f64) -> u64 {
    seed::derive(master, &[topology_key, policy_key, &format!("{delta_t}")])
}

/// Full factorial evaluation. A failing topology or policy is recorded on
/// its cells and the sweep moves on.
pub fn sweep(config: &ExperimentConfig, options: RunOptions) -> Result<Vec<CellResult>> {
    config.validate()?;
    let mut cells = Vec::new();
    for spec in &config.topologies {
        let tkey = spec.key();
        let topology = spec.build();
        for pspec in &config.policies {
            let pkey = pspec.key();
            let policy = pspec.resolve(config.system.buffer);
            for &dt in &config.delta_t {
                let cell = match (&topology, &policy) {
                    (Ok(t), Ok(p)) => evaluate(
                        t,
                        &tkey,
                        p,
                        &pkey,
                        dt,
                        config.episodes,
                        config.horizon,
                        &config.system,
                        cell_seed(config.seed, &tkey, &pkey, dt),
                        options,
                    ),
                    (Err(e), _) | (_, Err(e)) => Err(Error::InvalidParameter(e.to_string())),
                };
                let cell = cell.unwrap_or_else(|e| {
                    log::warn!("cell {tkey}/{pkey}/Δt={dt} failed: {e}");
                    CellResult::failed(tkey.clone(), pkey.clone(), dt, &e)
                });
                log::info!(
                    "{tkey} {pkey} Δt={dt}: {:.4} ± {:.4}",
                    cell.mean_drops,
                    cell.ci95
                );
                cells.push(cell);
            }
        }
    }
    Ok(cells)
}

/// Pairwise comparison inside a ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFlag {
    pub better: String,
    pub worse: String,
    pub separated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    /// Policies by ascending mean drops.
    pub order: Vec<String>,
    pub pairs: Vec<PairFlag>,
}

impl Ranking {
    pub fn position(&self, policy: &str) -> Option<usize> {
        self.order.iter().position(|p| p == policy)
    }

    pub fn separated(&self, a: &str, b: &str) -> bool {
        self.pairs.iter().any(|p| {
            p.separated && ((p.better == a && p.worse == b) || (p.better == b && p.worse == a))
        })
    }
}

/// Rank cells of one (topology, Δt) group by mean drops.
pub fn compare_ranking(cells: &[&CellResult]) -> Result<Ranking> {
    if cells.len() < 2 {
        return Err(Error::InvalidParameter("ranking needs at least 2 policies".into()));
    }
    if cells.iter().any(|c| c.error.is_some() || c.mean_drops.is_nan()) {
        return Err(Error::InvalidParameter("cannot rank failed cells".into()));
    }
    let mut sorted: Vec<&CellResult> = cells.to_vec();
    sorted.sort_by(|a, b| a.mean_drops.total_cmp(&b.mean_drops).then(a.policy.cmp(&b.policy)));
    let mut pairs = Vec::new();
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            pairs.push(PairFlag {
                better: sorted[i].policy.clone(),
                worse: sorted[j].policy.clone(),
                separated: sorted[i].separated_from(sorted[j]),
            });
        }
    }
    Ok(Ranking {
        order: sorted.iter().map(|c| c.policy.clone()).collect(),
        pairs,
    })
}

/// Group sweep cells by (topology, Δt) and rank each group.
pub fn rank_all(cells: &[CellResult]) -> Vec<(String, f64, Result<Ranking>)> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for c in cells {
        if !keys.iter().any(|(t, dt)| *t == c.topology && *dt == c.delta_t) {
            keys.push((c.topology.clone(), c.delta_t));
        }
    }
    keys.into_iter()
        .map(|(t, dt)| {
            let group: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.topology == t && c.delta_t == dt)
                .collect();
            let ranking = compare_ranking(&group);
            (t, dt, ranking)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub depth: usize,
    #[serde(default = "default_branching")]
    pub branching: usize,
    pub delta_t: Vec<f64>,
    /// Learned policy (typically trained on a regular graph); optional.
    #[serde(default)]
    pub mfr: Option<PolicySpec>,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub system: SystemParams,
    #[serde(default)]
    pub seed: u64,
}

fn default_branching() -> usize {
    3
}

/// Findings at one Δt of the ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub delta_t: f64,
    pub ranking: Ranking,
    /// OWN below RND with disjoint intervals.
    pub own_beats_rnd: bool,
    /// The learned policy's mean is above OWN's (`None` without one).
    pub mfr_worse_than_own: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub topology: String,
    pub n_nodes: usize,
    pub cells: Vec<CellResult>,
    pub rows: Vec<AblationRow>,
}

/// Evaluate JSQ, RND, OWN (and the learned policy, if given) on a Bethe
/// lattice, where the leaf-heavy degree profile breaks regularity.
pub fn bethe_ablation(config: &AblationConfig, options: RunOptions) -> Result<AblationReport> {
    let spec = TopologySpec::Bethe {
        depth: config.depth,
        branching: config.branching,
    };
    let mut policies = default_policies();
    policies.extend(config.mfr.clone());
    let experiment = ExperimentConfig {
        topologies: vec![spec.clone()],
        delta_t: config.delta_t.clone(),
        policies,
        episodes: config.episodes,
        horizon: config.horizon,
        system: config.system.clone(),
        seed: config.seed,
    };
    let n_nodes = spec.build()?.n_nodes();
    let cells = sweep(&experiment, options)?;
    let mfr_key = config.mfr.as_ref().map(PolicySpec::key);
    let mut rows = Vec::new();
    for (_, dt, ranking) in rank_all(&cells) {
        let ranking = ranking?;
        let find = |p: &str| cells.iter().find(|c| c.delta_t == dt && c.policy == p);
        let (own, rnd) = (find("own"), find("rnd"));
        let own_beats_rnd = match (own, rnd) {
            (Some(o), Some(r)) => o.mean_drops < r.mean_drops && o.separated_from(r),
            _ => false,
        };
        let mfr_worse_than_own = mfr_key
            .as_deref()
            .and_then(find)
            .zip(own)
            .map(|(m, o)| m.mean_drops > o.mean_drops);
        rows.push(AblationRow {
            delta_t: dt,
            ranking,
            own_beats_rnd,
            mfr_worse_than_own,
        });
    }
    Ok(AblationReport {
        topology: spec.key(),
        n_nodes,
        cells,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::RegimeParams;

    fn cell(policy: &str, mean: f64, ci: f64) -> CellResult {
        CellResult {
            topology: "t".into(),
            policy: policy.into(),
            delta_t: 1.0,
            mean_drops: mean,
            ci95: ci,
            per_episode: vec![mean; 2],
            seconds: 0.0,
            error: None,
            episodes: Vec::new(),
        }
    }

    #[test]
    fn ci_matches_t_table() {
        // t_{0.975, 9} = 2.262157
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        let (m, h) = mean_ci95(&xs);
        assert_eq!(m, 5.5);
        let sd = (xs.iter().map(|x| (x - 5.5f64).powi(2)).sum::<f64>() / 9.0).sqrt();
        assert!((h - 2.262157 * sd / 10f64.sqrt()).abs() < 1e-5);
        // two samples: t_{0.975, 1} = 12.7062
        let (m, h) = mean_ci95(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((h - 12.7062047).abs() < 1e-5);
        assert_eq!(mean_ci95(&[4.0, 4.0, 4.0]), (4.0, 0.0));
    }

    #[test]
    fn no_traffic_evaluates_to_zero() {
        let topo = TopologySpec::Cyc1d { n: 5 }.build().unwrap();
        let params = SystemParams {
            regime: RegimeParams::constant(0.0),
            ..SystemParams::default()
        };
        let c = evaluate(&topo, "c", &PolicyHandle::Jsq, "jsq", 2.0, 2, 10, &params, 1, RunOptions::default()).unwrap();
        assert_eq!((c.mean_drops, c.ci95), (0.0, 0.0));
        assert_eq!(c.per_episode.len(), 2);
        assert!(evaluate(&topo, "c", &PolicyHandle::Jsq, "jsq", 2.0, 1, 10, &params, 1, RunOptions::default()).is_err());
    }

    #[test]
    fn evaluation_independent_of_workers() {
        let topo = TopologySpec::Cyc1d { n: 11 }.build().unwrap();
        let params = SystemParams::default();
        let run = |exec| {
            let options = RunOptions {
                exec,
                ..RunOptions::default()
            };
            evaluate(&topo, "c", &PolicyHandle::Rnd, "rnd", 3.0, 6, 8, &params, 42, options).unwrap()
        };
        let a = run(Execution::Sequential);
        assert_eq!(a, run(Execution::Parallel(Some(4))));
        assert_eq!(a.seconds, 0.0);
    }

    #[test]
    fn single_cell_sweep_and_failures() {
        let mut config = ExperimentConfig::new(
            vec![TopologySpec::Cyc1d { n: 5 }, TopologySpec::Cyc1d { n: 2 }],
            vec![1.0],
            vec![PolicySpec::Jsq],
        );
        config.episodes = 3;
        config.horizon = 4;
        let cells = sweep(&config, RunOptions::default()).unwrap();
        assert_eq!(cells.len(), 2);
        assert!(cells[0].error.is_none());
        assert!(cells[1].error.is_some());
        assert_eq!(cells[0].per_episode.len(), 3);
        // same cell, same seed, regardless of what else is in the sweep
        config.topologies.truncate(1);
        assert_eq!(sweep(&config, RunOptions::default()).unwrap()[0], cells[0]);
    }

    #[test]
    fn config_validation() {
        let mut c = ExperimentConfig::new(vec![TopologySpec::Cyc1d { n: 5 }], vec![1.0], default_policies());
        c.validate().unwrap();
        c.episodes = 1;
        assert!(c.validate().is_err());
        c.episodes = 2;
        c.delta_t = vec![0.0];
        assert!(c.validate().is_err());
        let parsed: ExperimentConfig = serde_json::from_str(
            r#"{"topologies":[{"family":"torus","side":4}],"delta_t":[1,2],"policies":["jsq",{"table":{"zeta":[0,0,0,0,0,1]}}]}"#,
        )
        .unwrap();
        assert_eq!(parsed.episodes, 100);
        assert_eq!(parsed.horizon, 50);
        assert_eq!(parsed.policies.len(), 2);
    }

    #[test]
    fn ranking_orders_and_flags() {
        let (a, b, c) = (cell("jsq", 1.0, 0.1), cell("rnd", 2.0, 0.1), cell("own", 2.05, 0.1));
        let r = compare_ranking(&[&c, &b, &a]).unwrap();
        assert_eq!(r.order, vec!["jsq", "rnd", "own"]);
        assert!(r.separated("jsq", "rnd"));
        assert!(r.separated("own", "jsq"));
        assert!(!r.separated("rnd", "own"));
        assert!(compare_ranking(&[&a]).is_err());
    }

    #[test]
    fn star_ablation_prefers_own() {
        // depth-1 star: offloading leaves pile work onto the centre
        let config = AblationConfig {
            depth: 1,
            branching: 5,
            delta_t: vec![10.0],
            mfr: None,
            episodes: 20,
            horizon: 20,
            system: SystemParams::default(),
            seed: 3,
        };
        let report = bethe_ablation(&config, RunOptions::default()).unwrap();
        assert_eq!(report.n_nodes, 6);
        let own = report.cells.iter().find(|c| c.policy == "own").unwrap();
        let rnd = report.cells.iter().find(|c| c.policy == "rnd").unwrap();
        assert!(own.mean_drops < rnd.mean_drops);
        assert_eq!(report.rows.len(), 1);
        assert!(report.rows[0].mfr_worse_than_own.is_none());
    }
}
