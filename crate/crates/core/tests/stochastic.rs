//! Distributional checks of the Gillespie engine against exact laws.

use rand::Rng;
use sparselb::kernel::{effective_rates, EpochKernel};
use sparselb::seed;
use sparselb::simulator::{Engine, EventKind, Route, ServicePlan};
use sparselb::topology::TopologySpec;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

/// Two-sided Kolmogorov–Smirnov statistic of `xs` against Uniform(0, 1).
fn ks_uniform(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max)
}

#[test]
fn holding_times_are_exponential_given_total_rate() {
    // Every gap between consecutive events, mapped through the exponential
    // CDF of the rate in force, must be Uniform(0, 1).
    let topology = TopologySpec::Cyc1d { n: 5 }.build().unwrap();
    let routes = vec![Route::Offload(0.4); 5];
    let plan = ServicePlan::new(vec![1.0, 1.0, 0.5, 2.0, 1.0]);
    let mut engine = Engine::new().with_event_log();
    let mut rng = seed::rng(1);
    let mut u = Vec::new();
    for _ in 0..400 {
        let mut q = [0u32, 2, 5, 1, 3];
        engine.run_epoch(&mut q, &routes, &topology, 0.9, 20.0, 5, &plan, &mut rng);
        let mut last = 0.0;
        for e in engine.events() {
            u.push(1.0 - (-(e.time - last) * e.total_rate).exp());
            last = e.time;
        }
    }
    assert!(u.len() > 20_000);
    let d = ks_uniform(u.clone());
    // critical value at level 0.001
    let crit = 1.95 / (u.len() as f64).sqrt();
    assert!(d < crit, "KS {d} >= {crit} over {} gaps", u.len());
}

#[test]
fn first_event_time_matches_initial_rate() {
    let topology = TopologySpec::Cyc1d { n: 4 }.build().unwrap();
    let routes = vec![Route::Offload(0.0); 4];
    let plan = ServicePlan::new(vec![1.0; 4]);
    let mut engine = Engine::new().with_event_log();
    let mut rng = seed::rng(2);
    // 2 busy queues + 4 schedulers at λ = 0.7
    let rate = 2.0 + 4.0 * 0.7;
    let mut u = Vec::new();
    for _ in 0..20_000 {
        let mut q = [1u32, 0, 3, 0];
        engine.run_epoch(&mut q, &routes, &topology, 0.7, 50.0, 5, &plan, &mut rng);
        let first = engine.events()[0];
        assert_eq!(first.total_rate, rate);
        u.push(1.0 - (-first.time * rate).exp());
    }
    let d = ks_uniform(u);
    assert!(d < 1.95 / (20_000f64).sqrt(), "KS {d}");
}

#[test]
fn thinned_arrivals_are_poisson() {
    // Queue 0 of a 4-cycle receives its own un-offloaded stream plus a thin
    // of each neighbour's: Poisson with the effective rate.
    let topology = TopologySpec::Cyc1d { n: 4 }.build().unwrap();
    let offload = [0.2, 0.6, 0.0, 0.9];
    let routes: Vec<Route> = offload.iter().map(|&p| Route::Offload(p)).collect();
    let lambda = 0.8;
    let delta_t = 3.0;
    let rate = effective_rates(&topology, &offload, lambda).unwrap()[0];
    let plan = ServicePlan::new(vec![1.0; 4]);
    let mut engine = Engine::new();
    let mut rng = seed::rng(3);
    let epochs = 50_000;
    let mut counts = vec![0u64; 40];
    for _ in 0..epochs {
        // large buffer so that drops do not interfere with counting
        let mut q = [0u32; 4];
        engine.run_epoch(&mut q, &routes, &topology, lambda, delta_t, 1000, &plan, &mut rng);
        counts[(engine.arrivals()[0] as usize).min(39)] += 1;
    }
    let poisson = Poisson::new(rate * delta_t).unwrap();
    // merge the tail into one bin with expected count >= 5
    let mut chi2 = 0.0;
    let mut bins = 0;
    let mut tail_obs = 0u64;
    let mut tail_p = 1.0;
    for (k, &c) in counts.iter().enumerate() {
        let p = poisson.pmf(k as u64);
        if p * epochs as f64 >= 5.0 {
            let e = p * epochs as f64;
            chi2 += (c as f64 - e).powi(2) / e;
            bins += 1;
            tail_p -= p;
        } else {
            tail_obs += c;
        }
    }
    let e = tail_p * epochs as f64;
    chi2 += (tail_obs as f64 - e).powi(2) / e;
    bins += 1;
    let p_value = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
    assert!(p_value > 1e-3, "chi2 {chi2} on {bins} bins, p {p_value}");
}

#[test]
fn kernel_matches_simulation_on_random_starts() {
    // Random start states and offload vectors on a triangle: per-queue
    // mean next state and mean drops against the kernel.
    let topology = TopologySpec::Cyc1d { n: 3 }.build().unwrap();
    let plan = ServicePlan::new(vec![1.0; 3]);
    let mut engine = Engine::new();
    let mut rng = seed::rng(4);
    for _ in 0..3 {
        let start: [u32; 3] = std::array::from_fn(|_| rng.random_range(0..=5));
        let offload: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
        let routes: Vec<Route> = offload.iter().map(|&p| Route::Offload(p)).collect();
        let lambda = rng.random_range(0.3..1.5);
        let delta_t = rng.random_range(0.5..4.0);
        let rates = effective_rates(&topology, &offload, lambda).unwrap();
        let epochs = 20_000;
        let mut sums = [[0.0f64; 4]; 3];
        for _ in 0..epochs {
            let mut q = start;
            engine.run_epoch(&mut q, &routes, &topology, lambda, delta_t, 5, &plan, &mut rng);
            for i in 0..3 {
                let d = f64::from(engine.drops()[i]);
                let z = f64::from(q[i]);
                sums[i][0] += z;
                sums[i][1] += z * z;
                sums[i][2] += d;
                sums[i][3] += d * d;
            }
        }
        for i in 0..3 {
            let k = EpochKernel::new(rates[i], 1.0, 5, delta_t).unwrap();
            let law = k.epoch_law(start[i] as usize);
            let mean_z: f64 = law.iter().enumerate().map(|(z, p)| z as f64 * p).sum();
            let n = epochs as f64;
            for (sum, sq, expect) in [
                (sums[i][0], sums[i][1], mean_z),
                (sums[i][2], sums[i][3], k.expected_drops(start[i] as usize)),
            ] {
                let m = sum / n;
                // rare events can give an all-zero sample; floor at the Poisson scale
                let se = ((sq / n - m * m) / n).sqrt().max((expect / n).sqrt()).max(1e-9);
                assert!((m - expect).abs() < 4.0 * se, "queue {i}: {m} vs {expect} (se {se})");
            }
        }
    }
}

#[test]
fn jsq_routes_everything_to_the_target() {
    let topology = TopologySpec::Cyc1d { n: 5 }.build().unwrap();
    let routes = vec![Route::Target(2); 5];
    let plan = ServicePlan::new(vec![1.0; 5]);
    let mut engine = Engine::new().with_event_log();
    let mut rng = seed::rng(5);
    let mut q = [0u32; 5];
    engine.run_epoch(&mut q, &routes, &topology, 1.0, 5.0, 5, &plan, &mut rng);
    for e in engine.events() {
        if let EventKind::Arrival { queue, .. } = e.kind {
            assert_eq!(queue, 2);
        }
    }
    assert!(q.iter().enumerate().all(|(i, &z)| i == 2 || z == 0));
}
