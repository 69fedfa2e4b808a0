//! Tick-level simulation of a scheduler hierarchy.
//!
//! One tick is one unit of CPU time. At every tick the root dispatches down
//! the tree until a leaf picks an application. Each scheduler, virtual or
//! leaf, orders its runnable children in three tiers:
//!
//! 1. reservation servers with budget left (EDF on the end of the current
//!    period, or attachment order under `FIXED_PRIORITY`);
//! 2. proportional-share children, by stride scheduling;
//! 3. everything else: best-effort children and soft servers that have
//!    spent their budget (round robin, or attachment order under
//!    `FIXED_PRIORITY`).
//!
//! Every reservation holder, node or application, owns a server whose budget
//! is refilled at each multiple of its period. Hard servers stop at zero;
//! soft ones drop into the third tier. A server that wakes in the middle of
//! a period keeps at most its bandwidth share of the time left in it, so
//! late wake-ups cannot crowd out servers that were backlogged all along.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contracts::Contract;
use crate::deployment::{self, DeploymentDecision, DeploymentRequest};
use crate::hierarchy::{AppId, Hierarchy, Holder, NodeId, PolicyKind};
use crate::scenario::{Action, Scenario};

/// Pass increment numerator for stride scheduling.
pub const STRIDE1: u128 = 1_000_000_000_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Workload {
    /// `wcet` ticks of work released at `offset + k * period`, due one period later.
    Periodic {
        period: u64,
        wcet: u64,
        #[serde(default)]
        offset: u64,
    },
    CpuBound,
    /// Backlogged for `on` ticks, then idle for `off`, with a seeded phase.
    Bursty { on: u64, off: u64 },
}

impl Workload {
    pub fn validate(&self) -> Result<(), EngineError> {
        match *self {
            Workload::Periodic { period, wcet, .. } if wcet == 0 || wcet > period => {
                Err(EngineError::InvalidWorkload(format!(
                    "periodic work needs 0 < wcet <= period, got wcet {wcet} period {period}"
                )))
            }
            Workload::Bursty { on, off } if on == 0 || off == 0 => Err(
                EngineError::InvalidWorkload(format!("bursty phases must be positive, got on {on} off {off}")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error("preloaded scheduler `{0}`: {1}")]
    Preload(String, String),
}

/// Half-open tick interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Interval {
    pub start: u64,
    pub end: u64,
}

impl Interval {
    pub fn new(start: u64, end: u64) -> Self {
        Interval { start, end }
    }

    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, tick: u64) -> bool {
        self.start <= tick && tick < self.end
    }
}

fn push_tick(intervals: &mut Vec<Interval>, tick: u64) {
    match intervals.last_mut() {
        Some(last) if last.end == tick => last.end += 1,
        _ => intervals.push(Interval::new(tick, tick + 1)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    Deploy {
        app: AppId,
        decision: DeploymentDecision,
        node_path: Option<String>,
    },
    Undeploy {
        app: AppId,
        node_path: Option<String>,
        detail: &'static str,
    },
    Replenish {
        app: Option<AppId>,
        node_path: String,
        budget: u64,
    },
    Run {
        app: AppId,
        node_path: String,
    },
    Idle,
    BudgetExhausted {
        app: Option<AppId>,
        node_path: String,
    },
    DeadlineMiss {
        app: AppId,
        node_path: String,
        deadline: u64,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Deploy { .. } => "DEPLOY",
            EventKind::Undeploy { .. } => "UNDEPLOY",
            EventKind::Replenish { .. } => "REPLENISH",
            EventKind::Run { .. } => "RUN",
            EventKind::Idle => "IDLE",
            EventKind::BudgetExhausted { .. } => "BUDGET_EXHAUSTED",
            EventKind::DeadlineMiss { .. } => "DEADLINE_MISS",
        }
    }

    /// Position within a tick: deploy/undeploy, replenish, run/idle,
    /// exhaustion, deadline miss.
    pub fn rank(&self) -> u8 {
        match self {
            EventKind::Deploy { .. } | EventKind::Undeploy { .. } => 0,
            EventKind::Replenish { .. } => 1,
            EventKind::Run { .. } | EventKind::Idle => 2,
            EventKind::BudgetExhausted { .. } => 3,
            EventKind::DeadlineMiss { .. } => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub tick: u64,
    pub kind: EventKind,
}

impl SimEvent {
    /// The `tick,event,app,node_path,detail` columns of the trace format.
    pub fn record(&self) -> [String; 5] {
        let opt = |a: &Option<AppId>| a.as_ref().map_or(String::new(), |a| a.to_string());
        let path = |p: &Option<String>| p.clone().unwrap_or_default();
        let (app, node_path, detail) = match &self.kind {
            EventKind::Deploy {
                app,
                decision,
                node_path,
            } => {
                let detail = match decision {
                    DeploymentDecision::Degraded { awarded, .. } => format!("DEGRADED {awarded}"),
                    DeploymentDecision::Rejected(reason) => format!("REJECTED {reason}"),
                    other => other.outcome().to_string(),
                };
                (app.to_string(), path(node_path), detail)
            }
            EventKind::Undeploy {
                app,
                node_path,
                detail,
            } => (app.to_string(), path(node_path), detail.to_string()),
            EventKind::Replenish {
                app,
                node_path,
                budget,
            } => (opt(app), node_path.clone(), budget.to_string()),
            EventKind::Run { app, node_path } => (app.to_string(), node_path.clone(), String::new()),
            EventKind::Idle => (String::new(), String::new(), String::new()),
            EventKind::BudgetExhausted { app, node_path } => {
                (opt(app), node_path.clone(), String::new())
            }
            EventKind::DeadlineMiss {
                app,
                node_path,
                deadline,
            } => (app.to_string(), node_path.clone(), format!("deadline={deadline}")),
        };
        [
            self.tick.to_string(),
            self.kind.name().to_string(),
            app,
            node_path,
            detail,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub horizon: u64,
    pub events: Vec<SimEvent>,
    /// Every admitted application, with the ticks it ran.
    pub per_app_service: BTreeMap<AppId, u64>,
    pub idle_ticks: u64,
    /// Ticks at which each application had pending work.
    pub backlog: BTreeMap<AppId, Vec<Interval>>,
    /// Backlogged ticks at which a hard budget on the app's path was spent.
    pub capped: BTreeMap<AppId, Vec<Interval>>,
}

impl Trace {
    pub fn empty(horizon: u64) -> Self {
        Trace {
            horizon,
            ..Trace::default()
        }
    }

    /// Application run at each tick, `None` for idle or unrecorded ticks.
    pub fn schedule(&self) -> Vec<Option<&AppId>> {
        let mut out = vec![None; self.horizon as usize];
        for event in &self.events {
            if let EventKind::Run { app, .. } = &event.kind {
                if let Some(slot) = out.get_mut(event.tick as usize) {
                    *slot = Some(app);
                }
            }
        }
        out
    }

    /// Writes the trace as CSV with header `tick,event,app,node_path,detail`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["tick", "event", "app", "node_path", "detail"])?;
        for event in &self.events {
            writer.write_record(event.record())?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("trace fields are UTF-8")
    }
}

/// An application's awarded contract over a stretch of time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrantSpan {
    pub app: AppId,
    pub node: NodeId,
    pub node_path: String,
    pub contract: Contract,
    pub start: u64,
    pub end: u64,
    pub quantum: u64,
}

impl GrantSpan {
    pub fn interval(&self) -> Interval {
        Interval::new(self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionRecord {
    pub tick: u64,
    pub app: AppId,
    pub decision: DeploymentDecision,
    pub node_path: Option<String>,
}

impl fmt::Display for DecisionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "decision tick={} app={} outcome=", self.tick, self.app)?;
        match &self.decision {
            DeploymentDecision::Rejected(reason) => write!(f, "REJECTED reason={reason}"),
            DeploymentDecision::Degraded { awarded, .. } => write!(
                f,
                "DEGRADED node={} awarded={awarded}",
                self.node_path.as_deref().unwrap_or("-")
            ),
            other => write!(
                f,
                "{} node={}",
                other.outcome(),
                self.node_path.as_deref().unwrap_or("-")
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulationOutput {
    pub trace: Trace,
    pub ledger: Vec<GrantSpan>,
    pub decisions: Vec<DecisionRecord>,
    pub hierarchy: Hierarchy,
}

#[derive(Debug, Clone)]
struct Server {
    budget: u64,
    period: u64,
    remaining: u64,
    hard: bool,
    was_active: bool,
}

impl Server {
    fn new(budget: u64, period: u64, hard: bool, tick: u64) -> Self {
        let left = period - tick % period;
        Server {
            budget,
            period,
            remaining: prorate(budget, period, left),
            hard,
            was_active: false,
        }
    }

    fn deadline(&self, tick: u64) -> u64 {
        (tick / self.period + 1) * self.period
    }

    fn blocked(&self) -> bool {
        self.hard && self.remaining == 0
    }

    /// Records whether the server has work this tick, trimming the budget on
    /// a wake-up inside a period.
    fn observe(&mut self, active: bool, tick: u64) {
        if active && !self.was_active && !tick.is_multiple_of(self.period) {
            let left = self.deadline(tick) - tick;
            self.remaining = self.remaining.min(prorate(self.budget, self.period, left));
        }
        self.was_active = active;
    }
}

fn prorate(budget: u64, period: u64, left: u64) -> u64 {
    ((budget as u128 * left as u128) / period as u128) as u64
}

#[derive(Debug, Clone)]
struct Job {
    deadline: u64,
    left: u64,
}

#[derive(Debug, Clone)]
struct AppRuntime {
    workload: Workload,
    jobs: VecDeque<Job>,
    next_release: u64,
    phase: u64,
}

impl AppRuntime {
    fn new(workload: Workload, tick: u64, phase: u64) -> Self {
        let next_release = match workload {
            Workload::Periodic { period, offset, .. } if tick > offset => {
                offset + (tick - offset).div_ceil(period) * period
            }
            Workload::Periodic { offset, .. } => offset,
            _ => 0,
        };
        AppRuntime {
            workload,
            jobs: VecDeque::new(),
            next_release,
            phase,
        }
    }

    fn release(&mut self, tick: u64) {
        if let Workload::Periodic { period, wcet, .. } = self.workload {
            if tick == self.next_release {
                self.jobs.push_back(Job {
                    deadline: tick + period,
                    left: wcet,
                });
                self.next_release += period;
            }
        }
    }

    fn pending(&self, tick: u64) -> bool {
        match self.workload {
            Workload::Periodic { .. } => !self.jobs.is_empty(),
            Workload::CpuBound => true,
            Workload::Bursty { on, off } => (tick + self.phase) % (on + off) < on,
        }
    }

    fn consume(&mut self) {
        if let Some(job) = self.jobs.front_mut() {
            job.left -= 1;
            if job.left == 0 {
                self.jobs.pop_front();
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
struct RoundRobin {
    current: Option<(Holder, u64)>,
    last_seq: Option<u64>,
}

#[derive(Debug, Clone, Default)]
struct Stride {
    pass: BTreeMap<Holder, u128>,
    current: Option<(Holder, u64)>,
    active: BTreeSet<Holder>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tier {
    Reserved,
    Share,
    Rest,
}

/// Per-tick runnability snapshot.
#[derive(Default)]
struct View {
    usable: BTreeMap<Holder, bool>,
    pending: BTreeMap<AppId, bool>,
}

impl View {
    fn usable(&self, h: &Holder) -> bool {
        self.usable.get(h).copied().unwrap_or(false)
    }
}

/// A running simulation. Deployments take effect at the current tick,
/// before it is dispatched.
pub struct Simulator {
    hierarchy: Hierarchy,
    now: u64,
    horizon: u64,
    rng: ChaCha8Rng,
    servers: BTreeMap<Holder, Server>,
    apps: BTreeMap<AppId, AppRuntime>,
    round_robin: BTreeMap<NodeId, RoundRobin>,
    stride: BTreeMap<NodeId, Stride>,
    paths: BTreeMap<NodeId, String>,
    trace: Trace,
    ledger: Vec<GrantSpan>,
    open_spans: BTreeMap<AppId, GrantSpan>,
    decisions: Vec<DecisionRecord>,
}

impl Simulator {
    /// Starts at tick 0 from a composed hierarchy.
    pub fn new(hierarchy: Hierarchy, horizon: u64, seed: u64) -> Self {
        let mut sim = Simulator {
            hierarchy,
            now: 0,
            horizon,
            rng: ChaCha8Rng::seed_from_u64(seed),
            servers: BTreeMap::new(),
            apps: BTreeMap::new(),
            round_robin: BTreeMap::new(),
            stride: BTreeMap::new(),
            paths: BTreeMap::new(),
            trace: Trace::empty(horizon),
            ledger: Vec::new(),
            open_spans: BTreeMap::new(),
            decisions: Vec::new(),
        };
        sim.sync();
        sim
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    /// Grant spans so far; open spans end at the current tick.
    pub fn ledger(&self) -> Vec<GrantSpan> {
        let mut spans = self.ledger.clone();
        spans.extend(self.open_spans.values().map(|s| GrantSpan {
            end: self.now,
            ..s.clone()
        }));
        spans.retain(|s| s.start < s.end);
        spans.sort_by(|a, b| (a.start, &a.app, a.end).cmp(&(b.start, &b.app, b.end)));
        spans
    }

    pub fn decisions(&self) -> &[DecisionRecord] {
        &self.decisions
    }

    fn emit(&mut self, kind: EventKind) {
        self.trace.events.push(SimEvent {
            tick: self.now,
            kind,
        });
    }

    /// Runs the deployment protocol now. Admitted applications start with
    /// `workload`.
    pub fn deploy(
        &mut self,
        req: &DeploymentRequest,
        workload: Workload,
    ) -> Result<DeploymentDecision, EngineError> {
        workload.validate()?;
        let decision = deployment::deploy(&mut self.hierarchy, req);
        let node_path = decision.node().map(|n| self.hierarchy.path_names(n));
        self.emit(EventKind::Deploy {
            app: req.app_id.clone(),
            decision: decision.clone(),
            node_path: node_path.clone(),
        });
        self.decisions.push(DecisionRecord {
            tick: self.now,
            app: req.app_id.clone(),
            decision: decision.clone(),
            node_path,
        });
        if decision.is_admitted() {
            let phase = match workload {
                Workload::Bursty { on, off } => self.rng.gen_range(0..on + off),
                _ => 0,
            };
            self.apps.insert(
                req.app_id.clone(),
                AppRuntime::new(workload, self.now, phase),
            );
            self.trace.per_app_service.entry(req.app_id.clone()).or_insert(0);
            self.trace.backlog.entry(req.app_id.clone()).or_default();
            self.trace.capped.entry(req.app_id.clone()).or_default();
            self.sync();
        }
        Ok(decision)
    }

    /// Replaces the workload of an admitted application.
    pub fn attach_workload(&mut self, app: &AppId, workload: Workload) -> Result<bool, EngineError> {
        workload.validate()?;
        let phase = match workload {
            Workload::Bursty { on, off } => self.rng.gen_range(0..on + off),
            _ => 0,
        };
        Ok(match self.apps.get_mut(app) {
            Some(rt) => {
                *rt = AppRuntime::new(workload, self.now, phase);
                true
            }
            None => false,
        })
    }

    /// Removes an application now. Returns false, and logs the attempt as
    /// `NOT_ADMITTED`, when the application is not deployed.
    pub fn undeploy(&mut self, app: &AppId) -> bool {
        let Some((node, _)) = self.hierarchy.app(app) else {
            self.emit(EventKind::Undeploy {
                app: app.clone(),
                node_path: None,
                detail: "NOT_ADMITTED",
            });
            return false;
        };
        let node_path = self.hierarchy.path_names(node);
        let unloaded = deployment::undeploy(&mut self.hierarchy, app)
            .expect("app is present in the hierarchy");
        self.emit(EventKind::Undeploy {
            app: app.clone(),
            node_path: Some(node_path),
            detail: if unloaded { "UNLOADED" } else { "" },
        });
        self.apps.remove(app);
        self.sync();
        true
    }

    /// Aligns servers, scheduler state and the grant ledger with the
    /// hierarchy's current grants.
    fn sync(&mut self) {
        let now = self.now;
        let mut wanted: BTreeMap<Holder, Contract> = BTreeMap::new();
        self.paths.clear();
        let mut live_nodes = BTreeSet::new();
        for node in self.hierarchy.nodes() {
            live_nodes.insert(node.id);
            self.paths.insert(node.id, self.hierarchy.path_names(node.id));
            if node.id != NodeId::ROOT {
                wanted.insert(Holder::Node(node.id), node.granted);
            }
            for app in &node.apps {
                wanted.insert(Holder::App(app.id.clone()), app.awarded);
            }
        }
        self.servers.retain(|h, _| wanted.get(h).is_some_and(|c| c.is_reservation()));
        for (holder, contract) in &wanted {
            let Some((budget, period)) = contract.reservation() else {
                continue;
            };
            let hard = matches!(contract, Contract::Hard { .. });
            match self.servers.get_mut(holder) {
                Some(s) if s.period == period => {
                    s.budget = budget;
                    s.hard = hard;
                    s.remaining = s.remaining.min(budget);
                }
                _ => {
                    self.servers
                        .insert(holder.clone(), Server::new(budget, period, hard, now));
                }
            }
        }
        self.round_robin.retain(|n, _| live_nodes.contains(n));
        self.stride.retain(|n, _| live_nodes.contains(n));
        for state in self.stride.values_mut() {
            state.pass.retain(|h, _| wanted.contains_key(h));
            state.active.retain(|h| wanted.contains_key(h));
        }

        // grant ledger
        let mut current: BTreeMap<AppId, GrantSpan> = BTreeMap::new();
        for (node, app) in self.hierarchy.apps() {
            let quantum = self.hierarchy.node(node).map_or(0, |n| n.spec.quantum);
            current.insert(
                app.id.clone(),
                GrantSpan {
                    app: app.id.clone(),
                    node,
                    node_path: self.paths[&node].clone(),
                    contract: app.awarded,
                    start: now,
                    end: now,
                    quantum,
                },
            );
        }
        let open = std::mem::take(&mut self.open_spans);
        for (app, mut span) in open {
            match current.remove(&app) {
                Some(next) if next.node == span.node && next.contract == span.contract => {
                    self.open_spans.insert(app, span);
                }
                next => {
                    span.end = now;
                    if span.start < span.end {
                        self.ledger.push(span);
                    }
                    if let Some(next) = next {
                        self.open_spans.insert(app, next);
                    }
                }
            }
        }
        self.open_spans.extend(current);
    }

    fn server_label(&self, holder: &Holder) -> (Option<AppId>, String) {
        match holder {
            Holder::Node(id) => (None, self.paths[id].clone()),
            Holder::App(app) => {
                let (node, _) = self.hierarchy.app(app).expect("server of a live app");
                (Some(app.clone()), self.paths[&node].clone())
            }
        }
    }

    fn grant_of(&self, holder: &Holder) -> Contract {
        match holder {
            Holder::Node(id) => self.hierarchy.node(*id).expect("live node").granted,
            Holder::App(app) => self.hierarchy.app(app).expect("live app").1.awarded,
        }
    }

    fn seq_of(&self, holder: &Holder) -> u64 {
        match holder {
            Holder::Node(id) => self.hierarchy.node(*id).expect("live node").seq,
            Holder::App(app) => self.hierarchy.app(app).expect("live app").1.seq,
        }
    }

    /// Advances one tick.
    pub fn step(&mut self) {
        let t = self.now;
        assert!(t < self.horizon, "stepping past the horizon");

        for rt in self.apps.values_mut() {
            rt.release(t);
        }
        if t > 0 {
            let due: Vec<Holder> = self
                .servers
                .iter()
                .filter(|(_, s)| t.is_multiple_of(s.period))
                .map(|(h, _)| h.clone())
                .collect();
            for holder in due {
                let server = self.servers.get_mut(&holder).expect("listed above");
                server.remaining = server.budget;
                let budget = server.budget;
                let (app, node_path) = self.server_label(&holder);
                self.emit(EventKind::Replenish {
                    app,
                    node_path,
                    budget,
                });
            }
        }

        let view = self.observe(t);
        for (app, &pending) in &view.pending {
            if pending {
                push_tick(self.trace.backlog.get_mut(app).expect("admitted app"), t);
                if !self.reachable(app, &view) {
                    push_tick(self.trace.capped.get_mut(app).expect("admitted app"), t);
                }
            }
        }

        match self.dispatch(t, &view) {
            Some((app, chain)) => {
                let leaf = *chain.last().expect("an app sits under some node");
                let node_path = self.paths[&leaf].clone();
                self.emit(EventKind::Run {
                    app: app.clone(),
                    node_path,
                });
                *self.trace.per_app_service.get_mut(&app).expect("admitted app") += 1;
                self.apps.get_mut(&app).expect("admitted app").consume();
                let mut charged: Vec<Holder> = chain
                    .iter()
                    .filter(|&&n| n != NodeId::ROOT)
                    .map(|&n| Holder::Node(n))
                    .collect();
                charged.push(Holder::App(app));
                for holder in charged {
                    let Some(server) = self.servers.get_mut(&holder) else {
                        continue;
                    };
                    if server.remaining > 0 {
                        server.remaining -= 1;
                        if server.remaining == 0 {
                            let (app, node_path) = self.server_label(&holder);
                            self.emit(EventKind::BudgetExhausted { app, node_path });
                        }
                    }
                }
            }
            None => {
                self.trace.idle_ticks += 1;
                self.emit(EventKind::Idle);
            }
        }

        let mut misses = Vec::new();
        for (app, rt) in &self.apps {
            for job in &rt.jobs {
                if job.deadline == t + 1 {
                    misses.push((app.clone(), job.deadline));
                }
            }
        }
        for (app, deadline) in misses {
            let (node, _) = self.hierarchy.app(&app).expect("admitted app");
            let node_path = self.paths[&node].clone();
            self.emit(EventKind::DeadlineMiss {
                app,
                node_path,
                deadline,
            });
        }
        self.now += 1;
    }

    /// Steps until `tick` (exclusive), capped at the horizon.
    pub fn run_until(&mut self, tick: u64) {
        while self.now < tick.min(self.horizon) {
            self.step();
        }
    }

    /// Runs to the horizon and closes the grant ledger.
    pub fn finish(mut self) -> SimulationOutput {
        self.run_until(self.horizon);
        let ledger = self.ledger();
        SimulationOutput {
            trace: self.trace,
            ledger,
            decisions: self.decisions,
            hierarchy: self.hierarchy,
        }
    }

    /// Computes runnability bottom-up and applies wake-up trimming.
    fn observe(&mut self, t: u64) -> View {
        let mut view = View::default();
        for (app, rt) in &self.apps {
            view.pending.insert(app.clone(), rt.pending(t));
        }
        let order = post_order(&self.hierarchy);
        for id in order {
            let node = self.hierarchy.node(id).expect("live node");
            let mut any = false;
            for app in &node.apps {
                let holder = Holder::App(app.id.clone());
                let pending = view.pending.get(&app.id).copied().unwrap_or(false);
                let usable = match self.servers.get_mut(&holder) {
                    Some(server) => {
                        server.observe(pending, t);
                        pending && !server.blocked()
                    }
                    None => pending,
                };
                any |= usable;
                view.usable.insert(holder, usable);
            }
            for child in &node.children {
                any |= view.usable(&Holder::Node(*child));
            }
            let holder = Holder::Node(id);
            let usable = match self.servers.get_mut(&holder) {
                Some(server) => {
                    server.observe(any, t);
                    any && !server.blocked()
                }
                None => any,
            };
            view.usable.insert(holder, usable);
        }
        view
    }

    fn reachable(&self, app: &AppId, view: &View) -> bool {
        if !view.usable(&Holder::App(app.clone())) {
            return false;
        }
        let (node, _) = self.hierarchy.app(app).expect("admitted app");
        self.hierarchy
            .path_ids(node)
            .iter()
            .all(|n| view.usable(&Holder::Node(*n)))
    }

    fn tier(&self, holder: &Holder) -> Tier {
        if self.servers.get(holder).is_some_and(|s| s.remaining > 0) {
            Tier::Reserved
        } else if matches!(self.grant_of(holder), Contract::Share { .. }) {
            Tier::Share
        } else {
            Tier::Rest
        }
    }

    /// Picks the application to run at `t` and the chain of schedulers that
    /// selected it, root first.
    fn dispatch(&mut self, t: u64, view: &View) -> Option<(AppId, Vec<NodeId>)> {
        if !view.usable(&Holder::Node(NodeId::ROOT)) {
            return None;
        }
        let mut chain = vec![NodeId::ROOT];
        let mut node = NodeId::ROOT;
        loop {
            let chosen = self.choose(node, t, view)?;
            match chosen {
                Holder::Node(child) => {
                    chain.push(child);
                    node = child;
                }
                Holder::App(app) => return Some((app, chain)),
            }
        }
    }

    fn choose(&mut self, id: NodeId, t: u64, view: &View) -> Option<Holder> {
        let node = self.hierarchy.node(id).expect("live node");
        let policy = node.spec.policy;
        let quantum = node.spec.quantum;
        let candidates: Vec<Holder> = node
            .children
            .iter()
            .map(|&c| Holder::Node(c))
            .chain(node.apps.iter().map(|a| Holder::App(a.id.clone())))
            .filter(|h| view.usable(h))
            .collect();
        let mut tiers: [Vec<Holder>; 3] = Default::default();
        for holder in candidates {
            let slot = match self.tier(&holder) {
                Tier::Reserved => 0,
                Tier::Share => 1,
                Tier::Rest => 2,
            };
            tiers[slot].push(holder);
        }
        let [reserved, shares, rest] = tiers;

        if !reserved.is_empty() {
            let fixed = policy == PolicyKind::FixedPriority;
            return reserved.into_iter().min_by_key(|h| {
                let deadline = if fixed { 0 } else { self.servers[h].deadline(t) };
                (deadline, self.seq_of(h))
            });
        }
        if !shares.is_empty() {
            return Some(self.stride_pick(id, quantum, shares));
        }
        if !rest.is_empty() {
            if policy == PolicyKind::FixedPriority {
                return rest.into_iter().min_by_key(|h| self.seq_of(h));
            }
            return Some(self.round_robin_pick(id, quantum, rest));
        }
        None
    }

    fn stride_pick(&mut self, id: NodeId, quantum: u64, candidates: Vec<Holder>) -> Holder {
        let tickets: BTreeMap<Holder, u128> = candidates
            .iter()
            .map(|h| {
                let ppm = match self.grant_of(h) {
                    Contract::Share { ppm } => ppm,
                    _ => unreachable!("share tier holds share grants"),
                };
                (h.clone(), ppm as u128)
            })
            .collect();
        let seqs: BTreeMap<Holder, u64> =
            candidates.iter().map(|h| (h.clone(), self.seq_of(h))).collect();
        let state = self.stride.entry(id).or_default();

        // newcomers join at the lowest pass among those already competing
        let floor = candidates
            .iter()
            .filter(|h| state.active.contains(*h))
            .map(|h| state.pass.get(h).copied().unwrap_or(0))
            .min();
        for h in &candidates {
            if !state.active.contains(h) {
                let pass = state.pass.entry(h.clone()).or_insert(0);
                if let Some(floor) = floor {
                    *pass = (*pass).max(floor);
                }
            }
        }
        state.active = candidates.iter().cloned().collect();

        let chosen = match &state.current {
            Some((h, left)) if *left > 0 && tickets.contains_key(h) => h.clone(),
            _ => {
                let h = candidates
                    .iter()
                    .min_by_key(|h| (state.pass.get(*h).copied().unwrap_or(0), seqs[*h]))
                    .expect("candidates are not empty")
                    .clone();
                state.current = Some((h.clone(), quantum));
                h
            }
        };
        if let Some((_, left)) = state.current.as_mut() {
            *left -= 1;
        }
        *state.pass.entry(chosen.clone()).or_insert(0) += STRIDE1 / tickets[&chosen];
        chosen
    }

    fn round_robin_pick(&mut self, id: NodeId, quantum: u64, candidates: Vec<Holder>) -> Holder {
        let seqs: Vec<(u64, Holder)> = candidates
            .into_iter()
            .map(|h| (self.seq_of(&h), h))
            .collect();
        let state = self.round_robin.entry(id).or_default();
        if let Some((h, left)) = &mut state.current {
            if *left > 0 && seqs.iter().any(|(_, c)| c == h) {
                *left -= 1;
                return h.clone();
            }
        }
        let (seq, chosen) = state
            .last_seq
            .and_then(|last| seqs.iter().find(|(s, _)| *s > last))
            .or_else(|| seqs.iter().min_by_key(|(s, _)| *s))
            .cloned()
            .expect("candidates are not empty");
        state.last_seq = Some(seq);
        state.current = Some((chosen.clone(), quantum - 1));
        chosen
    }
}

/// Loads the preloaded schedulers, replays the timeline and runs to the
/// horizon.
pub fn run_scenario(scenario: &Scenario) -> Result<SimulationOutput, EngineError> {
    let mut h = Hierarchy::new();
    for decl in scenario.schedulers.iter().filter(|d| d.preload) {
        let preload_error = |reason: String| EngineError::Preload(decl.spec.name.clone(), reason);
        let parent = h
            .find_by_name(&decl.parent)
            .ok_or_else(|| preload_error(format!("parent `{}` is not loaded", decl.parent)))?;
        h.attach_scheduler(parent, decl.spec.clone())
            .map_err(|e| preload_error(e.to_string()))?;
        let result = h.compose();
        if let Some(rejection) = result.rejected {
            return Err(preload_error(format!(
                "infeasible at {}: {}",
                rejection.holder, rejection.reason
            )));
        }
    }

    let mut sim = Simulator::new(h, scenario.horizon, scenario.seed);
    for entry in &scenario.timeline {
        sim.run_until(entry.tick);
        match &entry.action {
            Action::Deploy(d) => {
                let decl = d.scheduler.as_deref().and_then(|n| scenario.scheduler(n));
                let parent = d
                    .target_parent
                    .as_deref()
                    .or(decl.map(|decl| decl.parent.as_str()));
                let req = DeploymentRequest {
                    app_id: d.app.clone(),
                    app_class: d.class.clone(),
                    request: d.request,
                    scheduler: decl.map(|decl| decl.spec.clone()),
                    target_parent: parent.and_then(|p| sim.hierarchy().find_by_name(p)),
                };
                sim.deploy(&req, d.workload)?;
            }
            Action::Undeploy(app) => {
                sim.undeploy(app);
            }
        }
    }
    Ok(sim.finish())
}

fn post_order(h: &Hierarchy) -> Vec<NodeId> {
    fn visit(h: &Hierarchy, id: NodeId, out: &mut Vec<NodeId>) {
        let node = h.node(id).expect("live node");
        for &child in &node.children {
            visit(h, child, out);
        }
        out.push(id);
    }
    let mut out = Vec::new();
    visit(h, NodeId::ROOT, &mut out);
    out
}
