//! Acceptance criteria 1 to 9. Prints one line per criterion and exits
//! non-zero if any fails. Run with `cargo test --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};

use common::random::{drive, events};
use common::{c, scenario_path, worst_case_supply};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schedeploy::cli::simulate;
use schedeploy::contracts::{format_contract, parse_contract, Contract, PPM};
use schedeploy::deployment::{deploy, DeploymentDecision, DeploymentRequest, RejectReason};
use schedeploy::engine::{EventKind, Simulator, Workload};
use schedeploy::hierarchy::{AppId, Hierarchy, NodeId, PolicyKind, SchedulerSpec};
use schedeploy::scenario::Scenario;
use schedeploy::verify::{build_report, check_share, ShareMember};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !($cond) {
            return Err(format!($($msg)+));
        }
    };
}

fn random_contract(rng: &mut ChaCha8Rng) -> Contract {
    let reservation = |rng: &mut ChaCha8Rng| {
        let period = if rng.gen_bool(0.5) {
            rng.gen_range(1..=1000)
        } else {
            rng.gen_range(1..=1u64 << 31)
        };
        (rng.gen_range(1..=period), period)
    };
    match rng.gen_range(0..6) {
        0 => {
            let (budget, period) = reservation(rng);
            Contract::Hard { budget, period }
        }
        1 => {
            let (budget, period) = reservation(rng);
            Contract::Soft { budget, period }
        }
        2 => Contract::Share { ppm: rng.gen_range(1..=PPM) },
        3 => Contract::BestEffort,
        4 => Contract::Null,
        _ => Contract::All,
    }
}

fn mutate(text: &str, rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[char] = &[
        '[', ']', ',', ' ', '0', '1', '9', '-', '+', 'R', 'E', 'S', 'B', 'H', 'P', 'x', '\t', 'é', '∞', '\u{0}',
    ];
    let mut chars: Vec<char> = text.chars().collect();
    for _ in 0..rng.gen_range(1..=3) {
        let at = rng.gen_range(0..=chars.len());
        match rng.gen_range(0..5) {
            0 => chars.insert(at, ALPHABET[rng.gen_range(0..ALPHABET.len())]),
            1 if at < chars.len() => {
                chars.remove(at);
            }
            2 if at < chars.len() => chars[at] = ALPHABET[rng.gen_range(0..ALPHABET.len())],
            3 => {
                let tail: Vec<char> = chars[at..].to_vec();
                chars.extend(tail);
            }
            _ => {
                let digits: String = (0..rng.gen_range(1..25)).map(|_| rng.gen_range('0'..='9')).collect();
                chars.splice(at..at, digits.chars());
            }
        }
    }
    chars.into_iter().collect()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut round_trips = 0;
    let mut samples = Vec::new();
    for _ in 0..10_000 {
        let contract = random_contract(&mut rng);
        let text = format_contract(&contract);
        ensure!(parse_contract(&text) == Ok(contract), "round trip failed for {text}");
        round_trips += 1;
        samples.push(text);
    }
    let (mut parsed, mut positioned) = (0, 0);
    for i in 0..1_000 {
        let mutated = mutate(&samples[i * 7 % samples.len()], &mut rng);
        let result = panic::catch_unwind(|| parse_contract(&mutated));
        match result {
            Err(_) => return Err(format!("parser panicked on {mutated:?}")),
            Ok(Ok(contract)) => {
                ensure!(contract.validate().is_ok(), "{mutated:?} parsed to invalid {contract:?}");
                parsed += 1;
            }
            Ok(Err(e)) => {
                let pos = e.position();
                ensure!(pos.is_some_and(|p| p <= mutated.len()), "{mutated:?}: unpositioned error {e}");
                positioned += 1;
            }
        }
    }
    Ok(format!(
        "{round_trips}/10000 round-trips exact; 1000 mutants: {parsed} valid, {positioned} positioned errors, 0 panics"
    ))
}

fn dominates(p: &[u64], r: &[u64]) -> bool {
    p.iter().zip(r).all(|(a, b)| a >= b)
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut satisfied, mut unsound, mut conservative, mut explained) = (0, 0, 0, 0);
    for _ in 0..1_000 {
        let pp = rng.gen_range(1..=30u64);
        let pr = rng.gen_range(1..=30u64);
        let (bp, br) = (rng.gen_range(1..=pp), rng.gen_range(1..=pr));
        let provided = Contract::Hard { budget: bp, period: pp };
        let requested = Contract::Hard { budget: br, period: pr };
        let upto = 4 * (pp + pr);
        let oracle = dominates(&worst_case_supply(bp, pp, upto), &worst_case_supply(br, pr, upto));
        let verdict = provided.satisfies(&requested);
        satisfied += verdict as u32;
        if verdict && !oracle {
            unsound += 1;
        }
        if !verdict && oracle {
            conservative += 1;
            let far = upto + pp * pr * pp.max(pr);
            if !dominates(&worst_case_supply(bp, pp, far), &worst_case_supply(br, pr, far)) {
                explained += 1;
            }
        }
    }
    ensure!(unsound == 0, "{unsound} pairs satisfied without oracle dominance");
    Ok(format!(
        "1000 pairs, {satisfied} satisfied, 0 unsound; {conservative} conservative (oracle dominance only inside [0, 4(yP+yR)]), {explained} of them fall behind later"
    ))
}

fn criterion_3() -> Outcome {
    let scenario = Scenario::load(scenario_path("hard_guarantee.json")).map_err(|e| e.to_string())?;
    ensure!(scenario.horizon == 100_000, "horizon is {}", scenario.horizon);
    let result = simulate(&scenario).map_err(|e| e.to_string())?;
    ensure!(result.report.is_clean(), "verifier:\n{}", result.report.render());
    let trace = &result.output.trace;
    for (app, budget) in [("a", 10u64), ("b", 20), ("c", 30)] {
        let mut per_window = vec![0u64; 1000];
        for event in &trace.events {
            if let EventKind::Run { app: a, .. } = &event.kind {
                if a.as_str() == app {
                    per_window[(event.tick / 100) as usize] += 1;
                }
            }
        }
        if let Some(k) = per_window.iter().position(|&n| n != budget) {
            return Err(format!("{app} got {} in window {k}, expected {budget}", per_window[k]));
        }
    }
    let batch = trace.per_app_service[&AppId::new("batch")];
    ensure!(batch == 40_000, "best effort got {batch}");
    ensure!(trace.idle_ticks == 0, "{} idle ticks", trace.idle_ticks);
    Ok("0 violations; 1000/1000 windows exact for 10, 20, 30; BE 40000 ticks (tolerance 0)".into())
}

fn criterion_4() -> Outcome {
    let mut h = Hierarchy::new();
    h.attach_scheduler(
        NodeId::ROOT,
        SchedulerSpec::new("timesharing", PolicyKind::RoundRobin, c("RESBS[30,100]")),
    )
    .map_err(|e| e.to_string())?;
    h.compose();
    let mut sim = Simulator::new(h, 1_000, 0);
    let video = |app: &str, budget| {
        DeploymentRequest::new(app, "video", Contract::Hard { budget, period: 100 })
            .with_scheduler(SchedulerSpec::new("video", PolicyKind::EdfReservation, c("RESBH[60,100]")))
    };
    let periodic = |wcet| Workload::Periodic { period: 100, wcet, offset: 0 };
    sim.deploy(&video("player", 20), periodic(20)).map_err(|e| e.to_string())?;
    sim.run_until(300);
    let before = sim.hierarchy().node_count();
    sim.deploy(&video("viewer", 25), periodic(25)).map_err(|e| e.to_string())?;
    let after = sim.hierarchy().node_count();
    let log: Vec<String> = sim.decisions().iter().map(|d| d.to_string()).collect();
    ensure!(
        log == [
            "decision tick=0 app=player outcome=LOADED_NEW node=root/video",
            "decision tick=300 app=viewer outcome=ATTACHED_EXISTING node=root/video",
        ],
        "decision log {log:?}"
    );
    ensure!(before == after, "node count {before} -> {after}");
    let out = sim.finish();
    let report = build_report(&out.trace, &out.ledger).map_err(|e| e.to_string())?;
    ensure!(report.is_clean(), "{}", report.render());
    Ok(format!("viewer ATTACHED_EXISTING on root/video, node count {before} -> {after}"))
}

fn hard_awards(h: &Hierarchy) -> BTreeMap<AppId, Contract> {
    h.apps()
        .filter(|(_, a)| matches!(a.request, Contract::Hard { .. }))
        .map(|(_, a)| (a.id.clone(), a.awarded))
        .collect()
}

fn criterion_5() -> Outcome {
    let horizon = 20_000;
    let (mut runs, mut admitted, mut checks) = (0, 0, 0);
    for seed in 0..10u64 {
        let timeline = events(seed, 50, horizon);
        let mut failure: Option<String> = None;
        let mut awards: BTreeMap<AppId, Contract> = BTreeMap::new();
        let out = drive(&timeline, horizon, seed, |sim, decision| {
            if failure.is_some() || !decision.is_admitted() {
                return;
            }
            admitted += 1;
            let now = hard_awards(sim.hierarchy());
            for (app, award) in &awards {
                if let Some(current) = now.get(app) {
                    if current != award {
                        failure = Some(format!("seed {seed}: {app} award {award} became {current}"));
                    }
                }
            }
            awards = now;
            let ledger = sim.ledger();
            match build_report(sim.trace(), &ledger) {
                Ok(report) => {
                    checks += 1;
                    let broken: Vec<String> = report
                        .violations()
                        .filter(|v| awards.contains_key(&v.app) || ledger.iter().any(|s| s.app == v.app && matches!(s.contract, Contract::Hard { .. })))
                        .map(|v| v.to_string())
                        .collect();
                    if !broken.is_empty() {
                        failure = Some(format!("seed {seed} tick {}: {broken:?}", sim.now()));
                    }
                }
                Err(e) => failure = Some(e.to_string()),
            }
        });
        if let Some(failure) = failure {
            return Err(failure);
        }
        let report = build_report(&out.trace, &out.ledger).map_err(|e| e.to_string())?;
        ensure!(report.is_clean(), "seed {seed} final:\n{}", report.render());
        runs += 1;
    }
    Ok(format!(
        "{runs} randomized runs x 50 events, {admitted} admitted deploys, {checks} mid-run verifications, 0 new RESBH violations, 0 RESBH award changes"
    ))
}

fn criterion_6() -> Outcome {
    let mut h = Hierarchy::new();
    let own = |app: &str, request: &str, policy| {
        DeploymentRequest::new(app, app, c(request)).with_scheduler(SchedulerSpec::new(app, policy, c(request)))
    };
    ensure!(deploy(&mut h, &own("control", "RESBH[60,100]", PolicyKind::EdfReservation)).is_admitted(), "hard app refused");
    ensure!(deploy(&mut h, &own("web", "PS[300000]", PolicyKind::Stride)).is_admitted(), "web refused");
    let db = deploy(&mut h, &own("db", "PS[300000]", PolicyKind::Stride));
    ensure!(matches!(db, DeploymentDecision::Degraded { awarded, .. } if awarded == c("PS[200000]")), "db got {db}");
    for name in ["web", "db"] {
        let node = h.node(h.find_by_name(name).unwrap()).unwrap();
        ensure!(node.granted == c("PS[200000]") && node.degraded, "{name} holds {} degraded={}", node.granted, node.degraded);
    }
    let before = h.canonical();
    let late = deploy(&mut h, &own("late", "RESBH[50,100]", PolicyKind::EdfReservation));
    ensure!(late == DeploymentDecision::Rejected(RejectReason::Infeasible), "late got {late}");
    ensure!(h.canonical() == before, "rollback left a different tree");
    Ok("PS 300000+300000 -> 200000+200000 degraded; RESBH 0.5 REJECTED(INFEASIBLE); canonical form unchanged".into())
}

fn criterion_7() -> Outcome {
    let mut h = Hierarchy::new();
    let ancestor = h
        .attach_scheduler(NodeId::ROOT, SchedulerSpec::new("edf", PolicyKind::EdfReservation, c("RESBH[20,100]")))
        .map_err(|e| e.to_string())?;
    h.attach_application(ancestor, AppId::new("local"), c("RESBH[20,100]")).map_err(|e| e.to_string())?;
    ensure!(h.compose().feasible, "initial tree infeasible");
    let global = c("RESBH[30,100]");
    let list = h.propagate_demand(ancestor, &global).map_err(|e| e.to_string())?;
    ensure!(list == [(ancestor, c("RESBH[50,100]"))], "emitted {list:?}");

    let mut crowded = h.clone();
    crowded
        .attach_scheduler(NodeId::ROOT, SchedulerSpec::new("other", PolicyKind::EdfReservation, c("RESBH[60,100]")))
        .map_err(|e| e.to_string())?;
    ensure!(crowded.compose().feasible, "0.2 + 0.6 should fit");

    h.apply_requests(&list).map_err(|e| e.to_string())?;
    ensure!(h.compose().feasible, "recompose after enlargement infeasible");
    h.attach_application(ancestor, AppId::new("global"), global).map_err(|e| e.to_string())?;
    ensure!(h.compose().feasible, "global request does not fit after enlargement");

    let past_one = crowded.propagate_demand(ancestor, &global).map_err(|e| e.to_string())?;
    crowded.apply_requests(&past_one).map_err(|e| e.to_string())?;
    ensure!(!crowded.compose().feasible, "0.5 + 0.6 at the root was accepted");
    Ok("[(edf, RESBH[50,100])], recompose feasible; with a RESBH[60,100] sibling the same step is infeasible".into())
}

fn criterion_8() -> Outcome {
    let result = simulate(&Scenario::load(scenario_path("stride.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let trace = &result.output.trace;
    let quantum = 10u64;
    let mut quanta: BTreeMap<&str, u64> = BTreeMap::new();
    let mut served: BTreeMap<&str, u64> = BTreeMap::new();
    let mut worst_lag = 0f64;
    for event in &trace.events {
        if let EventKind::Run { app, .. } = &event.kind {
            if event.tick % quantum == 0 {
                *quanta.entry(app.as_str()).or_default() += 1;
            }
            *served.entry(app.as_str()).or_default() += 1;
            let elapsed = (event.tick + 1) as f64;
            for (name, share) in [("heavy", 2.0 / 3.0), ("light", 1.0 / 3.0)] {
                let got = served.get(name).copied().unwrap_or(0) as f64;
                worst_lag = worst_lag.max((got - share * elapsed).abs());
            }
        }
    }
    ensure!(quanta.values().sum::<u64>() == 300, "{} quanta", quanta.values().sum::<u64>());
    ensure!(quanta["heavy"] == 200 && quanta["light"] == 100, "quanta {quanta:?}");
    let bound = (quantum * 2) as f64;
    let within = worst_lag <= bound;
    ensure!(within, "lag {worst_lag} exceeds {bound}");
    let group: Vec<ShareMember> = result
        .output
        .ledger
        .iter()
        .filter_map(|s| match s.contract {
            Contract::Share { ppm } => Some(ShareMember { app: s.app.clone(), ppm, span: s.interval() }),
            _ => None,
        })
        .collect();
    for member in &group {
        let found = check_share(trace, &member.app, &group, quantum).map_err(|e| e.to_string())?;
        ensure!(found.is_empty(), "{} lag violations", found.len());
    }
    Ok(format!("300 quanta split 200:100; worst lag {worst_lag:.2} <= {bound}"))
}

fn criterion_9() -> Outcome {
    let mut compared = 0;
    for name in ["desktop_deployment", "hard_guarantee", "reallocation", "stride"] {
        let load = || Scenario::load(scenario_path(&format!("{name}.json"))).map_err(|e| e.to_string());
        let first = simulate(&load()?).map_err(|e| e.to_string())?;
        let second = simulate(&load()?).map_err(|e| e.to_string())?;
        ensure!(first.trace_csv == second.trace_csv, "{name}: traces differ");
        ensure!(first.report_text == second.report_text, "{name}: reports differ");
        let golden = scenario_path("golden");
        let report = std::fs::read_to_string(golden.join(format!("{name}.report.txt"))).map_err(|e| e.to_string())?;
        ensure!(report == first.report_text, "{name}: report differs from golden file");
        if let Ok(trace) = std::fs::read_to_string(golden.join(format!("{name}.trace.csv"))) {
            ensure!(trace == first.trace_csv, "{name}: trace differs from golden file");
        }
        compared += 1;
    }
    Ok(format!("{compared} golden scenarios byte-identical across two runs and against stored artifacts"))
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, criterion) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(criterion))
            .unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL {detail}");
            }
        }
    }
    println!("acceptance: {}/9 passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
