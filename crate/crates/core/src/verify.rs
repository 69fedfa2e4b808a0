//! Post-hoc guarantee checking.
//!
//! Reservations are checked over aligned windows `[k*period, (k+1)*period)`:
//! a window inside the grant span during which the application was
//! backlogged throughout must have received the full budget, and a hard
//! reservation must never exceed its budget in any window of the span.
//! Proportional shares are checked for lag against the service their
//! scheduler handed to the backlogged members of the share group.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;

use thiserror::Error;

use crate::contracts::Contract;
use crate::engine::{EventKind, GrantSpan, Interval, Trace};
use crate::hierarchy::{AppId, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ViolationKind {
    UnderSupply,
    OverCap,
    LagExceeded,
    NonConserving,
}

impl ViolationKind {
    pub const ALL: [ViolationKind; 4] = [
        ViolationKind::UnderSupply,
        ViolationKind::OverCap,
        ViolationKind::LagExceeded,
        ViolationKind::NonConserving,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::UnderSupply => "UNDER_SUPPLY",
            ViolationKind::OverCap => "OVER_CAP",
            ViolationKind::LagExceeded => "LAG_EXCEEDED",
            ViolationKind::NonConserving => "NON_CONSERVING",
        }
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One failed check. `expected` and `observed` are in ticks; for lag they
/// are the fair and the actual cumulative service at the worst tick.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Violation {
    pub app: AppId,
    pub window: Interval,
    pub kind: ViolationKind,
    pub expected: u64,
    pub observed: u64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "violation app={} kind={} window=[{},{}) expected={} observed={}",
            self.app, self.kind, self.window.start, self.window.end, self.expected, self.observed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("{0} is not a reservation")]
    NotReservation(Contract),
    #[error("application `{0}` does not appear in the trace")]
    UnknownApp(AppId),
}

/// Cumulative service of `app`: entry `t` is the ticks run before `t`.
fn service_prefix(trace: &Trace, app: &AppId) -> Vec<u64> {
    let mut ran = vec![0u64; trace.horizon as usize];
    for event in &trace.events {
        if let EventKind::Run { app: a, .. } = &event.kind {
            if a == app {
                if let Some(slot) = ran.get_mut(event.tick as usize) {
                    *slot += 1;
                }
            }
        }
    }
    let mut prefix = Vec::with_capacity(ran.len() + 1);
    prefix.push(0);
    for r in ran {
        prefix.push(prefix.last().copied().unwrap_or(0) + r);
    }
    prefix
}

fn merge(intervals: &[Interval]) -> Vec<Interval> {
    let mut sorted: Vec<Interval> = intervals.iter().filter(|i| !i.is_empty()).copied().collect();
    sorted.sort();
    let mut out: Vec<Interval> = Vec::with_capacity(sorted.len());
    for i in sorted {
        match out.last_mut() {
            Some(last) if i.start <= last.end => last.end = last.end.max(i.end),
            _ => out.push(i),
        }
    }
    out
}

fn mask(horizon: u64, intervals: &[Interval]) -> Vec<bool> {
    let mut out = vec![false; horizon as usize];
    for i in intervals {
        for t in i.start..i.end.min(horizon) {
            out[t as usize] = true;
        }
    }
    out
}

/// Checks a reservation grant held by `app` over `span`. `demand` lists the
/// ticks at which the application was backlogged.
pub fn check_reservation(
    trace: &Trace,
    app: &AppId,
    grant: &Contract,
    span: Interval,
    demand: &[Interval],
) -> Result<Vec<Violation>, VerifyError> {
    let (budget, period) = grant.reservation().ok_or(VerifyError::NotReservation(*grant))?;
    let hard = matches!(grant, Contract::Hard { .. });
    let prefix = service_prefix(trace, app);
    let demand = merge(demand);
    let end = span.end.min(trace.horizon);

    let mut out = Vec::new();
    let mut start = span.start.div_ceil(period) * period;
    while start + period <= end {
        let window = Interval::new(start, start + period);
        let observed = prefix[window.end as usize] - prefix[window.start as usize];
        if hard && observed > budget {
            out.push(Violation {
                app: app.clone(),
                window,
                kind: ViolationKind::OverCap,
                expected: budget,
                observed,
            });
        }
        let backlogged = demand
            .iter()
            .any(|d| d.start <= window.start && window.end <= d.end);
        if backlogged && observed < budget {
            out.push(Violation {
                app: app.clone(),
                window,
                kind: ViolationKind::UnderSupply,
                expected: budget,
                observed,
            });
        }
        start += period;
    }
    Ok(out)
}

/// A share grant held by one member of a share group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareMember {
    pub app: AppId,
    pub ppm: u32,
    pub span: Interval,
}

/// Checks the lag of `app` within its share group.
///
/// Time is cut into segments over which the set of backlogged members and
/// their shares stay constant. Within a segment, member `i` should have
/// received `share_i / sum(shares)` of the service the group received;
/// deviating by more than `quantum` times the number of backlogged members
/// is one `LAG_EXCEEDED` for the segment, reported at its worst tick.
pub fn check_share(
    trace: &Trace,
    app: &AppId,
    group: &[ShareMember],
    quantum: u64,
) -> Result<Vec<Violation>, VerifyError> {
    if !group.iter().any(|m| &m.app == app) {
        return Err(VerifyError::UnknownApp(app.clone()));
    }
    let horizon = trace.horizon as usize;
    let schedule = trace.schedule();
    let empty = Vec::new();
    let members: Vec<(&ShareMember, Vec<bool>)> = group
        .iter()
        .map(|m| {
            let backlog = trace.backlog.get(&m.app).unwrap_or(&empty);
            let mut live = mask(trace.horizon, backlog);
            for (t, slot) in live.iter_mut().enumerate() {
                *slot &= m.span.contains(t as u64);
            }
            (m, live)
        })
        .collect();

    let active_at = |t: usize| -> Vec<usize> {
        members
            .iter()
            .enumerate()
            .filter(|(_, (_, live))| live[t])
            .map(|(i, _)| i)
            .collect()
    };

    let mut out = Vec::new();
    let mut t = 0;
    while t < horizon {
        let set = active_at(t);
        let mine: Vec<usize> = set
            .iter()
            .copied()
            .filter(|&i| &members[i].0.app == app)
            .collect();
        if mine.is_empty() {
            t += 1;
            continue;
        }
        let start = t;
        let total: u128 = set.iter().map(|&i| members[i].0.ppm as u128).sum();
        let share: u128 = mine.iter().map(|&i| members[i].0.ppm as u128).sum();
        let bound = quantum as u128 * set.len() as u128 * total;
        let (mut observed, mut group_service) = (0u128, 0u128);
        let mut worst: Option<(u128, u128, u128)> = None;
        while t < horizon && active_at(t) == set {
            if let Some(ran) = schedule[t] {
                if set.iter().any(|&i| &members[i].0.app == ran) {
                    group_service += 1;
                    if ran == app {
                        observed += 1;
                    }
                }
            }
            let fair = share * group_service;
            let lag = (observed * total).abs_diff(fair);
            if lag > bound && worst.is_none_or(|(w, _, _)| lag > w) {
                worst = Some((lag, fair / total, observed));
            }
            t += 1;
        }
        if let Some((_, expected, observed)) = worst {
            out.push(Violation {
                app: app.clone(),
                window: Interval::new(start as u64, t as u64),
                kind: ViolationKind::LagExceeded,
                expected: expected as u64,
                observed: observed as u64,
            });
        }
    }
    Ok(out)
}

/// Runs of idle ticks during which `app` was backlogged and not held back
/// by a spent hard budget.
fn idle_while_runnable(trace: &Trace) -> Vec<Violation> {
    let schedule = trace.schedule();
    let idle: Vec<bool> = {
        let mut idle = vec![false; trace.horizon as usize];
        for event in &trace.events {
            if event.kind == EventKind::Idle {
                if let Some(slot) = idle.get_mut(event.tick as usize) {
                    *slot = true;
                }
            }
        }
        idle
    };
    let mut out = Vec::new();
    for (app, backlog) in &trace.backlog {
        let backlog = mask(trace.horizon, backlog);
        let capped = mask(trace.horizon, trace.capped.get(app).map_or(&[][..], Vec::as_slice));
        let mut faulty = Vec::new();
        for t in 0..trace.horizon as usize {
            if idle[t] && schedule[t].is_none() && backlog[t] && !capped[t] {
                faulty.push(Interval::new(t as u64, t as u64 + 1));
            }
        }
        for window in merge(&faulty) {
            out.push(Violation {
                app: app.clone(),
                window,
                kind: ViolationKind::NonConserving,
                expected: window.len(),
                observed: 0,
            });
        }
    }
    out
}

/// True iff every tick carries exactly one RUN or IDLE, the service totals
/// add up to the horizon, and the CPU never idles while an application is
/// runnable.
pub fn check_conservation(trace: &Trace) -> bool {
    let mut per_tick = vec![0u32; trace.horizon as usize];
    for event in &trace.events {
        if matches!(event.kind, EventKind::Run { .. } | EventKind::Idle) {
            match per_tick.get_mut(event.tick as usize) {
                Some(count) => *count += 1,
                None => return false,
            }
        }
    }
    let served: u64 = trace.per_app_service.values().sum();
    per_tick.iter().all(|&c| c == 1)
        && served + trace.idle_ticks == trace.horizon
        && idle_while_runnable(trace).is_empty()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GuaranteeReport {
    pub per_app: BTreeMap<AppId, Vec<Violation>>,
    pub conservation_ok: bool,
    pub reservation_checks: usize,
    pub share_checks: usize,
}

impl GuaranteeReport {
    pub fn violations(&self) -> impl Iterator<Item = &Violation> {
        self.per_app.values().flatten()
    }

    pub fn violation_count(&self) -> usize {
        self.per_app.values().map(Vec::len).sum()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations().filter(|v| v.kind == kind).count()
    }

    pub fn is_clean(&self) -> bool {
        self.conservation_ok && self.violation_count() == 0
    }

    /// Line-oriented rendering with violations sorted by app, window and kind.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "conservation {}",
            if self.conservation_ok { "ok" } else { "FAILED" }
        );
        let _ = writeln!(
            out,
            "checks reservation={} share={}",
            self.reservation_checks, self.share_checks
        );
        let _ = write!(out, "violations total={}", self.violation_count());
        for kind in ViolationKind::ALL {
            let _ = write!(out, " {}={}", kind.as_str().to_lowercase(), self.count(kind));
        }
        out.push('\n');
        for violation in self.violations() {
            let _ = writeln!(out, "{violation}");
        }
        out
    }
}

/// Runs every applicable check for each grant span in `ledger`.
pub fn build_report(trace: &Trace, ledger: &[GrantSpan]) -> Result<GuaranteeReport, VerifyError> {
    let mut found: BTreeSet<Violation> = BTreeSet::new();
    let mut report = GuaranteeReport::default();
    let mut share_groups: BTreeMap<NodeId, Vec<ShareMember>> = BTreeMap::new();
    let mut share_quantum: BTreeMap<NodeId, u64> = BTreeMap::new();

    for span in ledger {
        if !trace.per_app_service.contains_key(&span.app) {
            return Err(VerifyError::UnknownApp(span.app.clone()));
        }
        match span.contract {
            Contract::Hard { .. } | Contract::Soft { .. } => {
                let demand = trace.backlog.get(&span.app).map_or(&[][..], Vec::as_slice);
                found.extend(check_reservation(
                    trace,
                    &span.app,
                    &span.contract,
                    span.interval(),
                    demand,
                )?);
                report.reservation_checks += 1;
            }
            Contract::Share { ppm } => {
                share_groups.entry(span.node).or_default().push(ShareMember {
                    app: span.app.clone(),
                    ppm,
                    span: span.interval(),
                });
                share_quantum.insert(span.node, span.quantum);
            }
            _ => {}
        }
    }
    for (node, group) in &share_groups {
        let apps: BTreeSet<&AppId> = group.iter().map(|m| &m.app).collect();
        for app in apps {
            found.extend(check_share(trace, app, group, share_quantum[node])?);
            report.share_checks += 1;
        }
    }
    found.extend(idle_while_runnable(trace));
    report.conservation_ok = check_conservation(trace);

    for app in trace.per_app_service.keys() {
        report.per_app.insert(app.clone(), Vec::new());
    }
    for violation in found {
        report
            .per_app
            .entry(violation.app.clone())
            .or_default()
            .push(violation);
    }
    Ok(report)
}
