//! Event-driven simulation of the finite system over synchronized epochs.
//!
//! Within an epoch the decision rules are frozen. Every scheduler receives
//! Poisson arrivals at the shared regime rate and routes each packet
//! independently according to its [`Route`]; every non-empty queue serves at
//! its own exponential rate. The engine is a direct-method Gillespie loop
//! over the whole system: one exponential holding time per event at the
//! current total rate, then the event is picked proportionally to its rate.
//!
//! Arrival and service selection are O(1): schedulers all fire at the same
//! rate, and busy queues are kept in one swap-remove set per distinct
//! service rate.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, EpisodeSeeds, SimRng};
use crate::topology::Topology;
use crate::traffic::{ArrivalRegime, Level, RegimeParams};

const IDLE: u32 = u32::MAX;

/// How one scheduler routes packets during an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Route {
    /// Every packet goes to this queue.
    Target(u32),
    /// Each packet is offloaded with this probability to a uniformly chosen
    /// neighbour, otherwise kept. Nodes without neighbours always keep.
    Offload(f64),
}

/// Per-queue service rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceSpec {
    Uniform(f64),
    PerQueue(Vec<f64>),
    /// Each queue independently draws one of `rates` uniformly.
    RandomChoice { rates: Vec<f64>, seed: u64 },
}

impl Default for ServiceSpec {
    fn default() -> Self {
        ServiceSpec::Uniform(1.0)
    }
}

impl ServiceSpec {
    pub fn resolve(&self, n: usize) -> Result<Vec<f64>> {
        let rates = match self {
            ServiceSpec::Uniform(a) => vec![*a; n],
            ServiceSpec::PerQueue(v) => {
                if v.len() != n {
                    return Err(Error::LengthMismatch {
                        expected: n,
                        actual: v.len(),
                    });
                }
                v.clone()
            }
            ServiceSpec::RandomChoice { rates, seed } => {
                if rates.is_empty() {
                    return Err(Error::InvalidParameter("empty service rate set".into()));
                }
                let mut rng = seed::rng(*seed);
                (0..n)
                    .map(|_| rates[rng.random_range(0..rates.len())])
                    .collect()
            }
        };
        if let Some(a) = rates.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "service rate {a} must be finite and > 0"
            )));
        }
        Ok(rates)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    #[default]
    Empty,
    /// Fillings drawn i.i.d. from this distribution over `{0..=B}`.
    Iid(Vec<f64>),
}

/// Everything about the system except the topology and the epoch length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    #[serde(default = "default_buffer")]
    pub buffer: usize,
    #[serde(default)]
    pub service: ServiceSpec,
    #[serde(default)]
    pub regime: RegimeParams,
    #[serde(default)]
    pub initial: InitialState,
}

fn default_buffer() -> usize {
    5
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            buffer: default_buffer(),
            service: ServiceSpec::default(),
            regime: RegimeParams::default(),
            initial: InitialState::default(),
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        if self.buffer < 1 || self.buffer > u16::MAX as usize {
            return Err(Error::InvalidParameter(format!(
                "buffer {} outside 1..=65535",
                self.buffer
            )));
        }
        self.regime.validate()?;
        if let InitialState::Iid(p) = &self.initial {
            if p.len() != self.buffer + 1
                || p.iter().any(|x| !(*x >= 0.0))
                || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9
            {
                return Err(Error::InvalidParameter(
                    "initial distribution must be a probability vector over 0..=B".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Per-queue fillings plus the arrival regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub queues: Vec<u32>,
    pub regime: ArrivalRegime,
    pub epoch_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochOutcome {
    pub next_queues: Vec<u32>,
    pub drops: Vec<u32>,
    pub arrivals: Vec<u32>,
    pub services: Vec<u32>,
}

impl EpochOutcome {
    pub fn total_drops(&self) -> u64 {
        self.drops.iter().map(|&d| u64::from(d)).sum()
    }
}

/// Kind of a simulated event, recorded only when event logging is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Arrival { scheduler: u32, queue: u32, dropped: bool },
    Service { queue: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    /// Total event rate in force while waiting for this event.
    pub total_rate: f64,
    pub kind: EventKind,
}

/// Service rates grouped into classes of equal rate.
#[derive(Debug, Clone)]
pub struct ServicePlan {
    rates: Vec<f64>,
    class_of: Vec<u32>,
    class_rates: Vec<f64>,
}

impl ServicePlan {
    pub fn new(rates: Vec<f64>) -> Self {
        let mut class_rates: Vec<f64> = Vec::new();
        let class_of = rates
            .iter()
            .map(|&r| {
                match class_rates.iter().position(|&c| c.to_bits() == r.to_bits()) {
                    Some(c) => c as u32,
                    None => {
                        class_rates.push(r);
                        (class_rates.len() - 1) as u32
                    }
                }
            })
            .collect();
        Self {
            rates,
            class_of,
            class_rates,
        }
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }
}

/// Reusable buffers for the event loop.
#[derive(Debug, Clone, Default)]
pub struct Engine {
    busy: Vec<Vec<u32>>,
    pos: Vec<u32>,
    arrivals: Vec<u32>,
    services: Vec<u32>,
    drops: Vec<u32>,
    log: Option<Vec<Event>>,
}

impl Engine {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record every event of subsequent epochs.
    pub fn with_event_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn events(&self) -> &[Event] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn drops(&self) -> &[u32] {
        &self.drops
    }

    pub fn arrivals(&self) -> &[u32] {
        &self.arrivals
    }

    pub fn services(&self) -> &[u32] {
        &self.services
    }

    fn reset(&mut self, queues: &[u32], plan: &ServicePlan) {
        let n = queues.len();
        self.busy.resize_with(plan.class_rates.len(), Vec::new);
        self.busy.truncate(plan.class_rates.len());
        for b in &mut self.busy {
            b.clear();
        }
        self.pos.clear();
        self.pos.resize(n, IDLE);
        for (i, &q) in queues.iter().enumerate() {
            if q > 0 {
                self.push_busy(i as u32, plan);
            }
        }
        for v in [&mut self.arrivals, &mut self.services, &mut self.drops] {
            v.clear();
            v.resize(n, 0);
        }
        if let Some(log) = &mut self.log {
            log.clear();
        }
    }

    #[inline]
    fn push_busy(&mut self, q: u32, plan: &ServicePlan) {
        let list = &mut self.busy[plan.class_of[q as usize] as usize];
        self.pos[q as usize] = list.len() as u32;
        list.push(q);
    }

    #[inline]
    fn remove_busy(&mut self, q: u32, plan: &ServicePlan) {
        let list = &mut self.busy[plan.class_of[q as usize] as usize];
        let at = self.pos[q as usize] as usize;
        list.swap_remove(at);
        if let Some(&moved) = list.get(at) {
            self.pos[moved as usize] = at as u32;
        }
        self.pos[q as usize] = IDLE;
    }

    /// Simulate `[0, delta_t)` in place and return the total number of drops.
    ///
    /// Per-queue counters for the epoch are available afterwards through
    /// [`Engine::drops`], [`Engine::arrivals`] and [`Engine::services`].
    #[allow(clippy::too_many_arguments)]
    pub fn run_epoch<R: Rng + ?Sized>(
        &mut self,
        queues: &mut [u32],
        routes: &[Route],
        topology: &Topology,
        arrival_rate: f64,
        delta_t: f64,
        buffer: u32,
        plan: &ServicePlan,
        rng: &mut R,
    ) -> u64 {
        let n = queues.len();
        debug_assert_eq!(routes.len(), n);
        self.reset(queues, plan);
        let arrival_total = arrival_rate * n as f64;
        let mut total_drops = 0u64;
        let mut t = 0.0;
        loop {
            let service_total: f64 = self
                .busy
                .iter()
                .zip(&plan.class_rates)
                .map(|(b, &r)| r * b.len() as f64)
                .sum();
            let total = arrival_total + service_total;
            if total <= 0.0 {
                break;
            }
            let wait: f64 = rng.sample(Exp1);
            t += wait / total;
            if t >= delta_t {
                break;
            }
            let mut u = rng.random::<f64>() * total;
            if u < arrival_total {
                let scheduler = ((u / arrival_rate) as usize).min(n - 1);
                let queue = route_packet(scheduler, routes[scheduler], topology, rng);
                self.arrivals[queue] += 1;
                let dropped = queues[queue] >= buffer;
                if dropped {
                    self.drops[queue] += 1;
                    total_drops += 1;
                } else {
                    if queues[queue] == 0 {
                        self.push_busy(queue as u32, plan);
                    }
                    queues[queue] += 1;
                }
                if let Some(log) = &mut self.log {
                    log.push(Event {
                        time: t,
                        total_rate: total,
                        kind: EventKind::Arrival {
                            scheduler: scheduler as u32,
                            queue: queue as u32,
                            dropped,
                        },
                    });
                }
            } else {
                u -= arrival_total;
                let mut class = 0;
                loop {
                    let mass = plan.class_rates[class] * self.busy[class].len() as f64;
                    if u < mass || class + 1 == self.busy.len() {
                        break;
                    }
                    u -= mass;
                    class += 1;
                }
                let list = &self.busy[class];
                // rounding can push the last class's index out of range
                let k = ((u / plan.class_rates[class]) as usize).min(list.len() - 1);
                let queue = list[k];
                let qi = queue as usize;
                queues[qi] -= 1;
                self.services[qi] += 1;
                if queues[qi] == 0 {
                    self.remove_busy(queue, plan);
                }
                if let Some(log) = &mut self.log {
                    log.push(Event {
                        time: t,
                        total_rate: total,
                        kind: EventKind::Service { queue },
                    });
                }
            }
        }
        total_drops
    }
}

#[inline]
fn route_packet<R: Rng + ?Sized>(
    scheduler: usize,
    route: Route,
    topology: &Topology,
    rng: &mut R,
) -> usize {
    match route {
        Route::Target(q) => q as usize,
        Route::Offload(p) => {
            let neighbors = topology.neighbors(scheduler);
            if p <= 0.0 || neighbors.is_empty() {
                return scheduler;
            }
            let v: f64 = rng.random();
            if v < p {
                let k = ((v / p) * neighbors.len() as f64) as usize;
                neighbors[k.min(neighbors.len() - 1)] as usize
            } else {
                scheduler
            }
        }
    }
}

/// Run one epoch on `state` with a fresh engine. The state's queues are
/// advanced; the regime is left untouched.
pub fn run_epoch<R: Rng + ?Sized>(
    state: &mut SystemState,
    routes: &[Route],
    topology: &Topology,
    delta_t: f64,
    buffer: usize,
    service_rates: &[f64],
    rng: &mut R,
) -> Result<EpochOutcome> {
    let n = topology.n_nodes();
    for len in [state.queues.len(), routes.len(), service_rates.len()] {
        if len != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: len,
            });
        }
    }
    let plan = ServicePlan::new(service_rates.to_vec());
    let mut engine = Engine::new();
    engine.run_epoch(
        &mut state.queues,
        routes,
        topology,
        state.regime.rate(),
        delta_t,
        buffer as u32,
        &plan,
        rng,
    );
    Ok(EpochOutcome {
        next_queues: state.queues.clone(),
        drops: engine.drops,
        arrivals: engine.arrivals,
        services: engine.services,
    })
}

/// Fraction of queues at each filling level.
pub fn empirical_distribution(queues: &[u32], buffer: usize) -> Vec<f64> {
    let mut counts = vec![0usize; buffer + 1];
    for &q in queues {
        counts[q as usize] += 1;
    }
    let n = queues.len() as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Summary of one simulated epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub total_drops: u64,
    pub mean_drops: f64,
    pub rate: f64,
    pub level: Level,
}

/// A running finite system: topology, parameters, current state and the
/// random streams that drive it.
#[derive(Debug, Clone)]
pub struct System<'a> {
    topology: &'a Topology,
    buffer: usize,
    delta_t: f64,
    plan: ServicePlan,
    state: SystemState,
    engine: Engine,
    regime_rng: SimRng,
    dynamics_rng: SimRng,
}

impl<'a> System<'a> {
    pub fn new(
        topology: &'a Topology,
        params: &SystemParams,
        delta_t: f64,
        seeds: EpisodeSeeds,
    ) -> Result<Self> {
        params.validate()?;
        if !(delta_t > 0.0 && delta_t.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epoch length {delta_t} must be finite and > 0"
            )));
        }
        let n = topology.n_nodes();
        let plan = ServicePlan::new(params.service.resolve(n)?);
        let mut regime_rng = seed::rng(seeds.regime);
        let mut dynamics_rng = seed::rng(seeds.dynamics);
        let regime = ArrivalRegime::init(params.regime, &mut regime_rng);
        let queues = match &params.initial {
            InitialState::Empty => vec![0; n],
            InitialState::Iid(p) => {
                let dist = rand_distr::weighted::WeightedIndex::new(p).map_err(|e| {
                    Error::InvalidParameter(format!("initial distribution: {e}"))
                })?;
                (0..n).map(|_| dynamics_rng.sample(&dist) as u32).collect()
            }
        };
        Ok(Self {
            topology,
            buffer: params.buffer,
            delta_t,
            plan,
            state: SystemState {
                queues,
                regime,
                epoch_index: 0,
            },
            engine: Engine::new(),
            regime_rng,
            dynamics_rng,
        })
    }

    pub fn topology(&self) -> &'a Topology {
        self.topology
    }

    pub fn buffer(&self) -> usize {
        self.buffer
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn queues(&self) -> &[u32] {
        &self.state.queues
    }

    pub fn service_rates(&self) -> &[f64] {
        self.plan.rates()
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn empirical_distribution(&self) -> Vec<f64> {
        empirical_distribution(&self.state.queues, self.buffer)
    }

    /// Run one epoch with frozen routes, then resample the regime.
    pub fn step(&mut self, routes: &[Route]) -> Result<EpochStats> {
        let n = self.topology.n_nodes();
        if routes.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: routes.len(),
            });
        }
        let rate = self.state.regime.rate();
        let level = self.state.regime.current;
        let total_drops = self.engine.run_epoch(
            &mut self.state.queues,
            routes,
            self.topology,
            rate,
            self.delta_t,
            self.buffer as u32,
            &self.plan,
            &mut self.dynamics_rng,
        );
        self.state.regime.step(&mut self.regime_rng);
        self.state.epoch_index += 1;
        Ok(EpochStats {
            total_drops,
            mean_drops: total_drops as f64 / n as f64,
            rate,
            level,
        })
    }
}

/// One epoch of an episode, as stored and traced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub regime: Level,
    pub rate: f64,
    /// Empirical distribution at the start of the epoch.
    pub distribution: Vec<f64>,
    pub drops: u64,
    pub mean_drops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub epochs: Vec<EpochRecord>,
    /// Empirical distribution after the last epoch.
    pub final_distribution: Vec<f64>,
    /// Sum over epochs of the mean drops per agent.
    pub total: f64,
}

impl EpisodeResult {
    pub fn per_epoch_drops(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_drops).collect()
    }

    /// μ(0), …, μ(T).
    pub fn distributions(&self) -> Vec<Vec<f64>> {
        self.epochs
            .iter()
            .map(|e| e.distribution.clone())
            .chain(std::iter::once(self.final_distribution.clone()))
            .collect()
    }

    /// JSON lines, one per epoch.
    pub fn trace_lines(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Anything that can produce per-agent routes for the next epoch.
pub trait RoutingPolicy {
    fn routes(&self, system: &System<'_>, rng: &mut SimRng, out: &mut Vec<Route>) -> Result<()>;
}

/// Run `horizon` epochs from a fresh system.
pub fn run_episode<P: RoutingPolicy + ?Sized>(
    topology: &Topology,
    policy: &P,
    horizon: usize,
    delta_t: f64,
    params: &SystemParams,
    seeds: EpisodeSeeds,
) -> Result<EpisodeResult> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    let mut system = System::new(topology, params, delta_t, seeds)?;
    let mut policy_rng = seed::rng(seeds.policy);
    let mut routes = Vec::with_capacity(topology.n_nodes());
    let mut epochs = Vec::with_capacity(horizon);
    let mut total = 0.0;
    for epoch in 0..horizon {
        let distribution = system.empirical_distribution();
        routes.clear();
        policy.routes(&system, &mut policy_rng, &mut routes)?;
        let stats = system.step(&routes)?;
        total += stats.mean_drops;
        epochs.push(EpochRecord {
            epoch,
            regime: stats.level,
            rate: stats.rate,
            distribution,
            drops: stats.total_drops,
            mean_drops: stats.mean_drops,
        });
    }
    Ok(EpisodeResult {
        final_distribution: system.empirical_distribution(),
        epochs,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_cyc1d, Topology};
    use crate::traffic::RegimeParams;

    fn regime(rate: f64) -> ArrivalRegime {
        ArrivalRegime {
            params: RegimeParams::constant(rate),
            current: Level::High,
        }
    }

    #[test]
    fn distribution_counts() {
        let d = empirical_distribution(&[0, 1, 1, 5, 5, 5], 5);
        let expect = [1.0 / 6.0, 2.0 / 6.0, 0.0, 0.0, 0.0, 3.0 / 6.0];
        assert_eq!(d, expect);
        assert_eq!(empirical_distribution(&[0; 7], 3), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn no_traffic_only_drains() {
        let t = build_cyc1d(5).unwrap();
        let mut s = SystemState {
            queues: vec![3, 0, 5, 1, 2],
            regime: regime(0.0),
            epoch_index: 0,
        };
        let before = s.queues.clone();
        let out = run_epoch(
            &mut s,
            &[Route::Offload(0.5); 5],
            &t,
            2.0,
            5,
            &[1.0; 5],
            &mut seed::rng(1),
        )
        .unwrap();
        assert_eq!(out.total_drops(), 0);
        assert!(out.arrivals.iter().all(|&a| a == 0));
        assert!(out.next_queues.iter().zip(&before).all(|(a, b)| a <= b));
    }

    #[test]
    fn flow_conservation() {
        let t = build_cyc1d(7).unwrap();
        let mut rng = seed::rng(5);
        let routes: Vec<Route> = (0..7)
            .map(|i| {
                if i % 2 == 0 {
                    Route::Offload(0.7)
                } else {
                    Route::Target(((i + 1) % 7) as u32)
                }
            })
            .collect();
        let rates = [1.0, 2.0, 1.0, 2.0, 1.0, 1.0, 0.5];
        let mut s = SystemState {
            queues: vec![0; 7],
            regime: regime(1.4),
            epoch_index: 0,
        };
        for _ in 0..200 {
            let before = s.queues.clone();
            let out = run_epoch(&mut s, &routes, &t, 3.0, 4, &rates, &mut rng).unwrap();
            for i in 0..7 {
                assert_eq!(
                    before[i] + out.arrivals[i] - out.services[i] - out.drops[i],
                    out.next_queues[i]
                );
                assert!(out.next_queues[i] <= 4);
            }
        }
    }

    #[test]
    fn isolated_node_keeps_traffic() {
        let t = Topology::from_edges(1, &[], crate::topology::Family::Custom).unwrap();
        let mut s = SystemState {
            queues: vec![0],
            regime: regime(1.0),
            epoch_index: 0,
        };
        let out = run_epoch(
            &mut s,
            &[Route::Offload(1.0)],
            &t,
            5.0,
            3,
            &[1.0],
            &mut seed::rng(2),
        )
        .unwrap();
        assert!(out.arrivals[0] > 0);
    }

    #[test]
    fn service_classes() {
        let plan = ServicePlan::new(vec![1.0, 2.0, 1.0, 2.0, 3.0]);
        assert_eq!(plan.class_rates, vec![1.0, 2.0, 3.0]);
        assert_eq!(plan.class_of, vec![0, 1, 0, 1, 2]);
    }

    #[test]
    fn service_spec_resolution() {
        assert_eq!(ServiceSpec::Uniform(2.0).resolve(3).unwrap(), vec![2.0; 3]);
        assert!(ServiceSpec::PerQueue(vec![1.0]).resolve(3).is_err());
        assert!(ServiceSpec::Uniform(0.0).resolve(3).is_err());
        let r = ServiceSpec::RandomChoice {
            rates: vec![1.0, 2.0],
            seed: 3,
        }
        .resolve(100)
        .unwrap();
        assert!(r.iter().all(|&x| x == 1.0 || x == 2.0));
        assert!(r.contains(&1.0) && r.contains(&2.0));
    }

    #[test]
    fn params_validation() {
        assert!(SystemParams::default().validate().is_ok());
        let p = SystemParams {
            initial: InitialState::Iid(vec![0.5, 0.5]),
            ..SystemParams::default()
        };
        assert!(p.validate().is_err());
        let p = SystemParams {
            buffer: 0,
            ..SystemParams::default()
        };
        assert!(p.validate().is_err());
    }
}
