#![allow(dead_code)]

use schedeploy::contracts::{parse_contract, Contract};
use schedeploy::engine::{run_scenario, SimulationOutput};
use schedeploy::scenario::Scenario;

pub fn c(text: &str) -> Contract {
    parse_contract(text).unwrap_or_else(|e| panic!("{text}: {e}"))
}

/// Worst-case service of a periodic resource handing out `budget` ticks
/// somewhere inside every `[k*period, (k+1)*period)`, for window lengths
/// `0..=upto`, by enumeration.
///
/// The first period's chunk sits at every feasible offset, later chunks as
/// late as possible, and every window start within the first period is
/// tried.
pub fn worst_case_supply(budget: u64, period: u64, upto: u64) -> Vec<u64> {
    let (b, p, n) = (budget as usize, period as usize, upto as usize);
    let len = 2 * p + n + 1;
    let mut out = vec![u64::MAX; n + 1];
    for first in 0..=(p - b) {
        let mut prefix = vec![0u64; len + 1];
        for x in 0..len {
            let offset = x % p;
            let on = if x < p {
                offset >= first && offset < first + b
            } else {
                offset >= p - b
            };
            prefix[x + 1] = prefix[x] + on as u64;
        }
        for start in 0..=p {
            for (t, worst) in out.iter_mut().enumerate() {
                let got = prefix[start + t] - prefix[start];
                if got < *worst {
                    *worst = got;
                }
            }
        }
    }
    out
}

pub fn scenario(json: &str) -> Scenario {
    Scenario::from_json(json).unwrap_or_else(|e| panic!("{e}"))
}

pub fn simulate(json: &str) -> SimulationOutput {
    run_scenario(&scenario(json)).unwrap()
}

pub fn scenario_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

pub mod random {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use schedeploy::contracts::Contract;
    use schedeploy::deployment::{DeploymentDecision, DeploymentRequest};
    use schedeploy::engine::{SimulationOutput, Simulator, Workload};
    use schedeploy::hierarchy::{AppId, Hierarchy, PolicyKind, SchedulerSpec};

    #[derive(Debug, Clone)]
    pub enum Event {
        Deploy(DeploymentRequest, Workload),
        Undeploy(AppId),
    }

    /// `count` deploy/undeploy events at non-decreasing ticks below
    /// `3/4 * horizon`. Reservation periods are harmonic (50 * 2^k) and a
    /// scheduler loaded for an application never has a longer period than
    /// the application.
    pub fn events(seed: u64, count: usize, horizon: u64) -> Vec<(u64, Event)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ticks: Vec<u64> = (0..count).map(|_| rng.gen_range(0..horizon * 3 / 4)).collect();
        ticks.sort_unstable();
        let mut attempted: Vec<AppId> = Vec::new();
        let mut out = Vec::new();
        for (i, tick) in ticks.into_iter().enumerate() {
            if !attempted.is_empty() && rng.gen_bool(0.3) {
                let app = attempted.remove(rng.gen_range(0..attempted.len()));
                out.push((tick, Event::Undeploy(app)));
                continue;
            }
            let app = format!("app{i}");
            let own = rng.gen_bool(0.6);
            let name = format!("s{i}");
            let (request, spec, workload) = match rng.gen_range(0..10) {
                0..=5 => {
                    let period = 100u64 << rng.gen_range(0..3);
                    let pct = rng.gen_range(2..=20u64);
                    let budget = period * pct / 100;
                    let hard = rng.gen_bool(0.7);
                    let request = if hard {
                        Contract::Hard { budget, period }
                    } else {
                        Contract::Soft { budget, period }
                    };
                    let node_period = 50u64 << rng.gen_range(0..=(period / 100).trailing_zeros() + 1);
                    let node_budget = ((pct * node_period).div_ceil(100) + rng.gen_range(0..=5)).min(node_period);
                    let node_request = if hard {
                        Contract::Hard { budget: node_budget, period: node_period }
                    } else {
                        Contract::Soft { budget: node_budget, period: node_period }
                    };
                    let spec = SchedulerSpec::new(name, PolicyKind::EdfReservation, node_request);
                    let workload = match rng.gen_range(0..3) {
                        0 => Workload::CpuBound,
                        1 => Workload::Periodic {
                            period,
                            wcet: rng.gen_range(1..=period / 2),
                            offset: rng.gen_range(0..period),
                        },
                        _ => Workload::Bursty {
                            on: rng.gen_range(50..=600),
                            off: rng.gen_range(50..=600),
                        },
                    };
                    (request, spec, workload)
                }
                6..=7 => {
                    let ppm = rng.gen_range(50_000..=300_000u32);
                    let spec = SchedulerSpec::new(
                        name,
                        PolicyKind::Stride,
                        Contract::Share { ppm: ppm + rng.gen_range(0..=50_000) },
                    );
                    (Contract::Share { ppm }, spec, Workload::CpuBound)
                }
                _ => {
                    let spec = SchedulerSpec::new(name, PolicyKind::RoundRobin, Contract::BestEffort);
                    let workload = if rng.gen_bool(0.5) {
                        Workload::CpuBound
                    } else {
                        Workload::Bursty {
                            on: rng.gen_range(10..=200),
                            off: rng.gen_range(10..=200),
                        }
                    };
                    (Contract::BestEffort, spec, workload)
                }
            };
            let class = ["video", "audio", "batch"][rng.gen_range(0..3)];
            let mut req = DeploymentRequest::new(app.clone(), class, request);
            if own {
                req = req.with_scheduler(spec);
            }
            attempted.push(AppId::new(app));
            out.push((tick, Event::Deploy(req, workload)));
        }
        out
    }

    /// Replays `events`, calling `after_deploy` right after every deploy.
    pub fn drive(
        events: &[(u64, Event)],
        horizon: u64,
        seed: u64,
        mut after_deploy: impl FnMut(&Simulator, &DeploymentDecision),
    ) -> SimulationOutput {
        let mut sim = Simulator::new(Hierarchy::new(), horizon, seed);
        for (tick, event) in events {
            sim.run_until(*tick);
            match event {
                Event::Deploy(req, workload) => {
                    let decision = sim.deploy(req, *workload).unwrap();
                    after_deploy(&sim, &decision);
                }
                Event::Undeploy(app) => {
                    sim.undeploy(app);
                }
            }
        }
        sim.finish()
    }
}
