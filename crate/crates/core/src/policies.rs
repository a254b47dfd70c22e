//! Per-agent decision rules: the JSQ, RND, OWN and SED baselines, and the
//! symmetrized offload-probability family learned by the trainer.
//!
//! Every rule is evaluated on the queue snapshot taken at the start of the
//! epoch and then held fixed for the whole epoch.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel;
use crate::mfcenv::{observe, McObservation, ObservationMode};
use crate::nn::{sigmoid, Mlp};
use crate::seed::SimRng;
use crate::simulator::{Route, RoutingPolicy, System};
use crate::topology::Topology;

/// Floor applied to the exploration standard deviation.
pub const MIN_EXPLORATION: f64 = 0.01;

/// Version tag written into serialized policy documents.
pub const POLICY_FORMAT_VERSION: u32 = 1;

/// Routing distribution of one agent for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DecisionRule {
    /// Offload probability indexed by the agent's own queue filling.
    OffloadTable(Vec<f64>),
    /// Explicit distribution over the accessible set.
    Targets(Vec<(u32, f64)>),
}

impl DecisionRule {
    pub fn point(target: usize) -> Self {
        DecisionRule::Targets(vec![(target as u32, 1.0)])
    }

    /// Probability mass of each accessible queue (own queue first, then the
    /// neighbours in adjacency order).
    pub fn distribution(&self, agent: usize, own_state: u32, topology: &Topology) -> Vec<(u32, f64)> {
        let neighbors = topology.neighbors(agent);
        match self {
            DecisionRule::Targets(t) => t.clone(),
            DecisionRule::OffloadTable(zeta) => {
                let p = if neighbors.is_empty() {
                    0.0
                } else {
                    zeta[own_state as usize]
                };
                std::iter::once((agent as u32, 1.0 - p))
                    .chain(
                        neighbors
                            .iter()
                            .map(|&j| (j, p / neighbors.len() as f64)),
                    )
                    .collect()
            }
        }
    }
}

/// Accessible set of `agent`: its own queue, then its neighbours.
fn accessible(agent: usize, topology: &Topology) -> impl Iterator<Item = usize> + '_ {
    std::iter::once(agent).chain(topology.neighbors(agent).iter().map(|&j| j as usize))
}

/// Argmin of `score` over the accessible set; ties go to the own queue, then
/// to the lowest node index.
fn argmin_accessible(agent: usize, topology: &Topology, score: impl Fn(usize) -> f64) -> usize {
    let mut best = agent;
    let mut best_score = score(agent);
    for &j in topology.neighbors(agent) {
        let j = j as usize;
        let s = score(j);
        if s < best_score || (s == best_score && best != agent && j < best) {
            best = j;
            best_score = s;
        }
    }
    best
}

pub fn jsq_target(agent: usize, queues: &[u32], topology: &Topology) -> usize {
    argmin_accessible(agent, topology, |j| f64::from(queues[j]))
}

/// Shortest expected delay: minimize `(z_j + 1) / α_j`.
pub fn sed_target(agent: usize, queues: &[u32], topology: &Topology, service_rates: &[f64]) -> usize {
    argmin_accessible(agent, topology, |j| {
        (f64::from(queues[j]) + 1.0) / service_rates[j]
    })
}

pub fn jsq_rule(agent: usize, queues: &[u32], topology: &Topology) -> DecisionRule {
    DecisionRule::point(jsq_target(agent, queues, topology))
}

pub fn rnd_rule(agent: usize, topology: &Topology) -> DecisionRule {
    let size = topology.degree(agent) + 1;
    DecisionRule::Targets(
        accessible(agent, topology)
            .map(|j| (j as u32, 1.0 / size as f64))
            .collect(),
    )
}

pub fn own_rule(agent: usize) -> DecisionRule {
    DecisionRule::point(agent)
}

pub fn sed_rule(agent: usize, queues: &[u32], topology: &Topology, service_rates: &[f64]) -> DecisionRule {
    DecisionRule::point(sed_target(agent, queues, topology, service_rates))
}

/// Offload probability that makes a uniform draw over the accessible set.
pub fn rnd_offload(degree: usize) -> f64 {
    degree as f64 / (degree as f64 + 1.0)
}

/// Per-queue arrival rates induced by a set of routes at base rate `λ`.
pub fn induced_rates(topology: &Topology, routes: &[Route], base_rate: f64) -> Result<Vec<f64>> {
    let n = topology.n_nodes();
    if routes.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: routes.len(),
        });
    }
    if routes.iter().all(|r| matches!(r, Route::Offload(_))) {
        let offload: Vec<f64> = routes
            .iter()
            .map(|r| match r {
                Route::Offload(p) => *p,
                Route::Target(_) => unreachable!(),
            })
            .collect();
        return kernel::effective_rates(topology, &offload, base_rate);
    }
    let mut rates = vec![0.0; n];
    for (i, r) in routes.iter().enumerate() {
        match *r {
            Route::Target(j) => rates[j as usize] += base_rate,
            Route::Offload(p) => {
                let nb = topology.neighbors(i);
                if nb.is_empty() {
                    rates[i] += base_rate;
                } else {
                    rates[i] += base_rate * (1.0 - p);
                    for &j in nb {
                        rates[j as usize] += base_rate * p / nb.len() as f64;
                    }
                }
            }
        }
    }
    Ok(rates)
}

/// Neural offload policy: observation features → logistic outputs, one per
/// queue filling, with a state-independent Gaussian exploration scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetwork {
    pub net: Mlp,
    pub log_std: Vec<f64>,
    pub mode: ObservationMode,
    pub observe_rate: bool,
    /// Rate used to normalize the optional regime feature.
    pub rate_scale: f64,
}

impl PolicyNetwork {
    pub fn buffer(&self) -> usize {
        self.net.output_dim() - 1
    }

    /// Mean decision rule ζ for the given feature vector.
    pub fn mean(&self, features: &[f64]) -> Vec<f64> {
        self.net.forward(features).into_iter().map(sigmoid).collect()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std
            .iter()
            .map(|l| l.exp().max(MIN_EXPLORATION))
            .collect()
    }

    pub fn to_document(&self) -> PolicyDocument {
        PolicyDocument {
            version: POLICY_FORMAT_VERSION,
            layer_sizes: self.net.sizes().to_vec(),
            weights: self.net.params().to_vec(),
            exploration_scale: self.std(),
            observation_mode: self.mode,
            observe_rate: self.observe_rate,
            rate_scale: self.rate_scale,
        }
    }

    pub fn from_document(doc: &PolicyDocument) -> Result<Self> {
        if doc.version != POLICY_FORMAT_VERSION {
            return Err(Error::Parse {
                what: "policy document",
                detail: format!("unsupported version {}", doc.version),
            });
        }
        let net = Mlp::from_params(&doc.layer_sizes, doc.weights.clone())?;
        if doc.exploration_scale.len() != net.output_dim() {
            return Err(Error::LengthMismatch {
                expected: net.output_dim(),
                actual: doc.exploration_scale.len(),
            });
        }
        let expected_in = net.output_dim() + usize::from(doc.observe_rate);
        if net.input_dim() != expected_in {
            return Err(Error::LengthMismatch {
                expected: expected_in,
                actual: net.input_dim(),
            });
        }
        if doc.exploration_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter(
                "exploration scales must be positive".into(),
            ));
        }
        Ok(Self {
            net,
            log_std: doc.exploration_scale.iter().map(|s| s.ln()).collect(),
            mode: doc.observation_mode,
            observe_rate: doc.observe_rate,
            rate_scale: doc.rate_scale,
        })
    }
}

/// Serialized form of a [`PolicyNetwork`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDocument {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<f64>,
    pub exploration_scale: Vec<f64>,
    pub observation_mode: ObservationMode,
    pub observe_rate: bool,
    pub rate_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MfrRule {
    /// Fixed ζ, independent of the observation.
    Table(Vec<f64>),
    Network(PolicyNetwork),
}

/// The symmetrized offload policy. With a network the mean action is used.
#[derive(Debug, Clone, PartialEq)]
pub struct MfrPolicy {
    pub rule: MfrRule,
}

impl MfrPolicy {
    pub fn table(zeta: Vec<f64>) -> Result<Self> {
        if zeta.iter().any(|z| !(0.0..=1.0).contains(z)) {
            return Err(Error::InvalidParameter(
                "decision rule entries must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            rule: MfrRule::Table(zeta),
        })
    }

    /// ζ(z) = 1 when the own queue is full, 0 otherwise.
    pub fn threshold(buffer: usize) -> Self {
        let mut zeta = vec![0.0; buffer + 1];
        zeta[buffer] = 1.0;
        Self {
            rule: MfrRule::Table(zeta),
        }
    }

    pub fn network(net: PolicyNetwork) -> Self {
        Self {
            rule: MfrRule::Network(net),
        }
    }

    /// Decision rule for one observation.
    pub fn decision(&self, observation: &McObservation) -> Result<Vec<f64>> {
        match &self.rule {
            MfrRule::Table(z) => Ok(z.clone()),
            MfrRule::Network(net) => {
                let features = observation.features();
                if features.len() != net.net.input_dim() {
                    return Err(Error::LengthMismatch {
                        expected: net.net.input_dim(),
                        actual: features.len(),
                    });
                }
                Ok(net.mean(&features))
            }
        }
    }

    fn routes(&self, system: &System<'_>, out: &mut Vec<Route>) -> Result<()> {
        let queues = system.queues();
        let buffer = system.buffer();
        match &self.rule {
            MfrRule::Table(zeta) => {
                check_len(zeta.len(), buffer + 1)?;
                out.extend(queues.iter().map(|&z| Route::Offload(zeta[z as usize])));
            }
            MfrRule::Network(net) => {
                check_len(net.buffer(), buffer)?;
                match net.mode {
                    ObservationMode::Global => {
                        let obs = observe(ObservationMode::Global, system, 0, net.observe_rate, net.rate_scale);
                        let zeta = self.decision(&obs)?;
                        out.extend(queues.iter().map(|&z| Route::Offload(zeta[z as usize])));
                    }
                    mode => {
                        // Local observations take few distinct values.
                        let mut cache: HashMap<Vec<u64>, Vec<f64>> = HashMap::new();
                        for (i, &z) in queues.iter().enumerate() {
                            let obs = observe(mode, system, i, net.observe_rate, net.rate_scale);
                            let key: Vec<u64> = obs.features().iter().map(|v| v.to_bits()).collect();
                            let zeta = match cache.get(&key) {
                                Some(zeta) => zeta,
                                None => {
                                    let zeta = self.decision(&obs)?;
                                    cache.entry(key).or_insert(zeta)
                                }
                            };
                            out.push(Route::Offload(zeta[z as usize]));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_len(actual: usize, expected: usize) -> Result<()> {
    if actual == expected {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, actual })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyHandle {
    Jsq,
    Rnd,
    Own,
    Sed,
    Mfr(MfrPolicy),
}

impl PolicyHandle {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyHandle::Jsq => "jsq",
            PolicyHandle::Rnd => "rnd",
            PolicyHandle::Own => "own",
            PolicyHandle::Sed => "sed",
            PolicyHandle::Mfr(_) => "mfr",
        }
    }

    /// Explicit decision rule of one agent on the current system.
    pub fn decision_rule(&self, agent: usize, system: &System<'_>) -> Result<DecisionRule> {
        let topology = system.topology();
        let queues = system.queues();
        Ok(match self {
            PolicyHandle::Jsq => jsq_rule(agent, queues, topology),
            PolicyHandle::Rnd => rnd_rule(agent, topology),
            PolicyHandle::Own => own_rule(agent),
            PolicyHandle::Sed => sed_rule(agent, queues, topology, system.service_rates()),
            PolicyHandle::Mfr(m) => {
                let mode = match &m.rule {
                    MfrRule::Network(n) => n.mode,
                    MfrRule::Table(_) => ObservationMode::Global,
                };
                let (observe_rate, scale) = match &m.rule {
                    MfrRule::Network(n) => (n.observe_rate, n.rate_scale),
                    MfrRule::Table(_) => (false, 1.0),
                };
                let obs = observe(mode, system, agent, observe_rate, scale);
                DecisionRule::OffloadTable(m.decision(&obs)?)
            }
        })
    }
}

impl RoutingPolicy for PolicyHandle {
    fn routes(&self, system: &System<'_>, _rng: &mut SimRng, out: &mut Vec<Route>) -> Result<()> {
        let topology = system.topology();
        let queues = system.queues();
        let n = topology.n_nodes();
        match self {
            PolicyHandle::Jsq => {
                out.extend((0..n).map(|i| Route::Target(jsq_target(i, queues, topology) as u32)))
            }
            PolicyHandle::Sed => {
                let rates = system.service_rates();
                out.extend(
                    (0..n).map(|i| Route::Target(sed_target(i, queues, topology, rates) as u32)),
                )
            }
            PolicyHandle::Rnd => {
                out.extend((0..n).map(|i| Route::Offload(rnd_offload(topology.degree(i)))))
            }
            PolicyHandle::Own => out.extend((0..n).map(|_| Route::Offload(0.0))),
            PolicyHandle::Mfr(m) => m.routes(system, out)?,
        }
        Ok(())
    }
}

/// Policy selection as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySpec {
    Jsq,
    Rnd,
    Own,
    Sed,
    /// ζ(z) = 1{z = B}.
    Threshold,
    Table { zeta: Vec<f64> },
    Checkpoint { path: std::path::PathBuf },
}

impl PolicySpec {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "jsq" => PolicySpec::Jsq,
            "rnd" => PolicySpec::Rnd,
            "own" => PolicySpec::Own,
            "sed" => PolicySpec::Sed,
            "threshold" => PolicySpec::Threshold,
            lower if lower.starts_with("mfr:") && s.len() > 4 => PolicySpec::Checkpoint {
                path: s[4..].into(),
            },
            _ => {
                return Err(Error::Parse {
                    what: "policy",
                    detail: format!("unknown policy {s:?}"),
                })
            }
        })
    }

    pub fn key(&self) -> String {
        match self {
            PolicySpec::Jsq => "jsq".into(),
            PolicySpec::Rnd => "rnd".into(),
            PolicySpec::Own => "own".into(),
            PolicySpec::Sed => "sed".into(),
            PolicySpec::Threshold => "threshold".into(),
            PolicySpec::Table { zeta } => {
                let parts: Vec<String> = zeta.iter().map(|z| format!("{z}")).collect();
                format!("table[{}]", parts.join(";"))
            }
            PolicySpec::Checkpoint { path } => format!(
                "mfr:{}",
                path.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint")
            ),
        }
    }

    pub fn resolve(&self, buffer: usize) -> Result<PolicyHandle> {
        Ok(match self {
            PolicySpec::Jsq => PolicyHandle::Jsq,
            PolicySpec::Rnd => PolicyHandle::Rnd,
            PolicySpec::Own => PolicyHandle::Own,
            PolicySpec::Sed => PolicyHandle::Sed,
            PolicySpec::Threshold => PolicyHandle::Mfr(MfrPolicy::threshold(buffer)),
            PolicySpec::Table { zeta } => {
                check_len(zeta.len(), buffer + 1)?;
                PolicyHandle::Mfr(MfrPolicy::table(zeta.clone())?)
            }
            PolicySpec::Checkpoint { path } => {
                let net = load_policy(path)?;
                check_len(net.buffer(), buffer)?;
                PolicyHandle::Mfr(MfrPolicy::network(net))
            }
        })
    }
}

/// Load a policy from either a bare policy document or a training
/// checkpoint that embeds one under `"policy"`.
pub fn load_policy(path: &Path) -> Result<PolicyNetwork> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let doc_value = match value.get("policy") {
        Some(inner) => inner.clone(),
        None => value,
    };
    let doc: PolicyDocument = serde_json::from_value(doc_value)?;
    PolicyNetwork::from_document(&doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::{self, EpisodeSeeds};
    use crate::simulator::SystemParams;
    use crate::topology::{build_bethe, build_ccc, build_cyc1d, build_torus, Family};

    /// Line graph 0 - 1 - 2 so node 1 has neighbours (0, 2).
    fn line3() -> Topology {
        Topology::from_edges(3, &[(0, 1), (1, 2)], Family::Custom).unwrap()
    }

    fn brute_argmin(agent: usize, topo: &Topology, score: impl Fn(usize) -> f64) -> usize {
        let mut cands: Vec<usize> = accessible(agent, topo).collect();
        let best = cands.iter().map(|&j| score(j)).fold(f64::INFINITY, f64::min);
        cands.retain(|&j| score(j) == best);
        if cands.contains(&agent) {
            agent
        } else {
            *cands.iter().min().unwrap()
        }
    }

    #[test]
    fn jsq_examples() {
        let t = line3();
        // agent 1 with own=0, neighbours (3, 2)
        assert_eq!(jsq_target(1, &[3, 0, 2], &t), 1);
        // own=2, neighbours (2, 5): tie favours own
        assert_eq!(jsq_target(1, &[2, 2, 5], &t), 1);
        // own=4, neighbours (1, 1): lowest index neighbour
        assert_eq!(jsq_target(1, &[1, 4, 1], &t), 0);
        assert_eq!(jsq_rule(1, &[1, 4, 1], &t), DecisionRule::point(0));
    }

    #[test]
    fn jsq_and_sed_match_brute_force_on_all_snapshots() {
        let t = build_cyc1d(3).unwrap();
        let homo = [1.0; 3];
        let hetero = [2.0, 1.0, 1.0];
        for code in 0..27u32 {
            let q = [code % 3, (code / 3) % 3, code / 9];
            for agent in 0..3 {
                let jsq = jsq_target(agent, &q, &t);
                assert_eq!(jsq, brute_argmin(agent, &t, |j| f64::from(q[j])));
                assert_eq!(sed_target(agent, &q, &t, &homo), jsq);
                assert_eq!(
                    sed_target(agent, &q, &t, &hetero),
                    brute_argmin(agent, &t, |j| (f64::from(q[j]) + 1.0) / hetero[j])
                );
                // own queue weakly shortest ⇒ JSQ keeps the packet, like OWN
                if q.iter().all(|&x| q[agent] <= x) {
                    assert_eq!(jsq_rule(agent, &q, &t), own_rule(agent));
                }
            }
        }
    }

    #[test]
    fn sed_examples() {
        // own filling 2 at rate 2 vs neighbour filling 1 at rate 1
        let t = Topology::from_edges(2, &[(0, 1)], Family::Custom).unwrap();
        assert_eq!(sed_target(0, &[2, 1], &t, &[2.0, 1.0]), 0);
        // empty queues pick the fastest server
        let t = line3();
        assert_eq!(sed_target(1, &[0, 0, 0], &t, &[1.0, 1.0, 2.0]), 2);
        assert_eq!(sed_target(0, &[0, 0, 0], &t, &[2.0, 1.0, 1.0]), 0);
    }

    #[test]
    fn rnd_is_uniform_over_accessible_set() {
        let t = line3();
        let r = rnd_rule(1, &t);
        assert_eq!(
            r,
            DecisionRule::Targets(vec![(1, 1.0 / 3.0), (0, 1.0 / 3.0), (2, 1.0 / 3.0)])
        );
        let iso = Topology::from_edges(2, &[], Family::Custom).unwrap();
        assert_eq!(rnd_rule(0, &iso), DecisionRule::Targets(vec![(0, 1.0)]));
        // the offload form gives the same distribution
        let d = DecisionRule::OffloadTable(vec![rnd_offload(2); 6]).distribution(1, 3, &t);
        for (_, p) in d {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn own_and_rnd_rates_coincide_on_regular_graphs() {
        for t in [
            build_cyc1d(11).unwrap(),
            build_ccc(4).unwrap(),
            build_torus(5).unwrap(),
        ] {
            let n = t.n_nodes();
            let own = induced_rates(&t, &vec![Route::Offload(0.0); n], 0.9).unwrap();
            let rnd: Vec<Route> = (0..n).map(|i| Route::Offload(rnd_offload(t.degree(i)))).collect();
            let rnd = induced_rates(&t, &rnd, 0.9).unwrap();
            for (a, b) in own.iter().zip(&rnd) {
                assert!((a - b).abs() <= 4.0 * f64::EPSILON, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn rnd_overloads_bethe_parents() {
        let t = build_bethe(1, 3).unwrap();
        let rnd: Vec<Route> = (0..4).map(|i| Route::Offload(rnd_offload(t.degree(i)))).collect();
        let r = induced_rates(&t, &rnd, 1.0).unwrap();
        // root keeps 1/4, receives 1/2 from each of three leaves
        assert!((r[0] - 1.75).abs() < 1e-12);
        assert!((r[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn induced_rates_conserve_mass() {
        let t = build_cyc1d(5).unwrap();
        let routes = vec![
            Route::Target(1),
            Route::Offload(0.3),
            Route::Target(2),
            Route::Offload(1.0),
            Route::Offload(0.0),
        ];
        let r = induced_rates(&t, &routes, 0.7).unwrap();
        assert!((r.iter().sum::<f64>() - 3.5).abs() < 1e-12);
    }

    #[test]
    fn table_policies() {
        assert!(MfrPolicy::table(vec![0.0, 1.2]).is_err());
        let th = MfrPolicy::threshold(5);
        assert_eq!(th.rule, MfrRule::Table(vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]));

        let t = build_cyc1d(9).unwrap();
        let params = SystemParams::default();
        let system = System::new(&t, &params, 1.0, EpisodeSeeds::from_episode(1)).unwrap();
        let mut rng = seed::rng(0);
        let mut a = Vec::new();
        PolicyHandle::Mfr(MfrPolicy::table(vec![0.0; 6]).unwrap())
            .routes(&system, &mut rng, &mut a)
            .unwrap();
        let mut b = Vec::new();
        PolicyHandle::Own.routes(&system, &mut rng, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn policy_spec_parsing() {
        assert_eq!(PolicySpec::parse("JSQ").unwrap(), PolicySpec::Jsq);
        assert_eq!(
            PolicySpec::parse("mfr:out/ckpt.json").unwrap(),
            PolicySpec::Checkpoint {
                path: "out/ckpt.json".into()
            }
        );
        assert!(PolicySpec::parse("mfr:").is_err());
        assert!(PolicySpec::parse("foo").is_err());
        let s: PolicySpec = serde_json::from_str(r#"{"table":{"zeta":[0,1]}}"#).unwrap();
        assert_eq!(s.key(), "table[0;1]");
        assert!(s.resolve(5).is_err());
        assert!(s.resolve(1).is_ok());
    }
}
