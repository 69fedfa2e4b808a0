//! Scenario files: a horizon, a seed, scheduler declarations and a timeline
//! of deployments.
//!
//! ```json
//! {
//!   "horizon": 1000,
//!   "seed": 7,
//!   "schedulers": [
//!     { "name": "edf", "policy": "EDF_RESERVATION", "parent_request": "RESBH[60,100]" }
//!   ],
//!   "timeline": [
//!     { "tick": 0, "deploy": { "app": "player", "class": "video",
//!                              "request": "RESBH[20,100]", "scheduler": "edf",
//!                              "workload": { "kind": "CPU_BOUND" } } },
//!     { "tick": 500, "undeploy": "player" }
//!   ]
//! }
//! ```
//!
//! Declared schedulers are loaded on demand by the deployments that name
//! them, or at tick 0 when `preload` is set. Contracts use the `TYPE[param]`
//! text grammar.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::contracts::{parse_contract, Contract, ServiceClass};
use crate::engine::Workload;
use crate::hierarchy::{AppId, PolicyKind, SchedulerSpec, DEFAULT_QUANTUM};

pub const ROOT_NAME: &str = "root";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed scenario at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{field}: {message}")]
    Field { field: String, message: String },
}

fn field_error(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Field {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedulerDecl {
    pub spec: SchedulerSpec,
    /// Name of the virtual scheduler to load under.
    pub parent: String,
    pub preload: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeployAction {
    pub app: AppId,
    pub class: String,
    pub request: Contract,
    /// A declared scheduler to load if nothing compatible is running.
    pub scheduler: Option<String>,
    /// Overrides the declared scheduler's parent.
    pub target_parent: Option<String>,
    pub workload: Workload,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Deploy(DeployAction),
    Undeploy(AppId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedAction {
    pub tick: u64,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub horizon: u64,
    pub seed: u64,
    pub schedulers: Vec<SchedulerDecl>,
    pub timeline: Vec<TimedAction>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    horizon: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    schedulers: Vec<RawScheduler>,
    #[serde(default)]
    timeline: Vec<RawEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScheduler {
    name: String,
    policy: PolicyKind,
    provides: Option<Vec<ServiceClass>>,
    parent_request: String,
    quantum: Option<u64>,
    parent: Option<String>,
    #[serde(default)]
    preload: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    tick: u64,
    deploy: Option<RawDeploy>,
    undeploy: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDeploy {
    app: String,
    #[serde(default)]
    class: String,
    request: String,
    scheduler: Option<String>,
    target_parent: Option<String>,
    workload: Option<Workload>,
}

fn contract(field: String, text: &str) -> Result<Contract, ScenarioError> {
    parse_contract(text).map_err(|e| field_error(field, e.to_string()))
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Scenario::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let raw: RawScenario = serde_json::from_str(text).map_err(|e| ScenarioError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;

        let mut schedulers = Vec::with_capacity(raw.schedulers.len());
        for (i, s) in raw.schedulers.into_iter().enumerate() {
            let at = |f: &str| format!("schedulers[{i}].{f}");
            let mut spec = SchedulerSpec::new(
                s.name,
                s.policy,
                contract(at("parent_request"), &s.parent_request)?,
            )
            .with_quantum(s.quantum.unwrap_or(DEFAULT_QUANTUM));
            if let Some(provides) = s.provides {
                spec = spec.with_provides(provides);
            }
            spec.validate()
                .map_err(|e| field_error(format!("schedulers[{i}]"), e.to_string()))?;
            schedulers.push(SchedulerDecl {
                spec,
                parent: s.parent.unwrap_or_else(|| ROOT_NAME.to_string()),
                preload: s.preload,
            });
        }

        let mut timeline = Vec::with_capacity(raw.timeline.len());
        for (i, entry) in raw.timeline.into_iter().enumerate() {
            let action = match (entry.deploy, entry.undeploy) {
                (Some(d), None) => {
                    let at = |f: &str| format!("timeline[{i}].deploy.{f}");
                    let workload = d.workload.unwrap_or(Workload::CpuBound);
                    workload
                        .validate()
                        .map_err(|e| field_error(at("workload"), e.to_string()))?;
                    Action::Deploy(DeployAction {
                        app: AppId::new(d.app),
                        class: d.class,
                        request: contract(at("request"), &d.request)?,
                        scheduler: d.scheduler,
                        target_parent: d.target_parent,
                        workload,
                    })
                }
                (None, Some(app)) => Action::Undeploy(AppId::new(app)),
                _ => {
                    return Err(field_error(
                        format!("timeline[{i}]"),
                        "needs exactly one of `deploy` or `undeploy`",
                    ))
                }
            };
            timeline.push(TimedAction {
                tick: entry.tick,
                action,
            });
        }

        let scenario = Scenario {
            horizon: raw.horizon,
            seed: raw.seed,
            schedulers,
            timeline,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn scheduler(&self, name: &str) -> Option<&SchedulerDecl> {
        self.schedulers.iter().find(|d| d.spec.name == name)
    }

    /// Checks cross-references and ordering. Run again after overriding the
    /// horizon.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.horizon == 0 {
            return Err(field_error("horizon", "must be positive"));
        }
        let mut names = BTreeSet::new();
        for (i, decl) in self.schedulers.iter().enumerate() {
            let at = |f: &str| format!("schedulers[{i}].{f}");
            let name = &decl.spec.name;
            if name == ROOT_NAME {
                return Err(field_error(at("name"), "`root` names the virtual root"));
            }
            if !names.insert(name.as_str()) {
                return Err(field_error(at("name"), format!("duplicate scheduler `{name}`")));
            }
            self.check_parent(&decl.parent, at("parent"))?;
            if decl.preload && decl.parent != ROOT_NAME {
                let parent = self.scheduler(&decl.parent).expect("checked above");
                let earlier = self.schedulers[..i]
                    .iter()
                    .any(|d| d.spec.name == decl.parent);
                if !parent.preload || !earlier {
                    return Err(field_error(
                        at("parent"),
                        format!("`{}` must be preloaded before `{name}`", decl.parent),
                    ));
                }
            }
        }

        let mut last_tick = 0;
        let mut deployed: BTreeMap<&AppId, usize> = BTreeMap::new();
        for (i, entry) in self.timeline.iter().enumerate() {
            if entry.tick < last_tick {
                return Err(field_error(
                    format!("timeline[{i}].tick"),
                    format!("tick {} goes back before {last_tick}", entry.tick),
                ));
            }
            if entry.tick >= self.horizon {
                return Err(field_error(
                    format!("timeline[{i}].tick"),
                    format!("tick {} is not before the horizon {}", entry.tick, self.horizon),
                ));
            }
            last_tick = entry.tick;
            match &entry.action {
                Action::Deploy(d) => {
                    let at = |f: &str| format!("timeline[{i}].deploy.{f}");
                    if d.app.as_str().is_empty() {
                        return Err(field_error(at("app"), "empty application id"));
                    }
                    if let Some(name) = &d.scheduler {
                        let decl = self.scheduler(name).ok_or_else(|| {
                            field_error(at("scheduler"), format!("undeclared scheduler `{name}`"))
                        })?;
                        if decl.spec.policy.is_virtual() {
                            return Err(field_error(
                                at("scheduler"),
                                format!("`{name}` is VIRTUAL and cannot host applications"),
                            ));
                        }
                    }
                    if let Some(parent) = &d.target_parent {
                        self.check_parent(parent, at("target_parent"))?;
                    }
                    deployed.entry(&d.app).or_insert(i);
                }
                Action::Undeploy(app) => {
                    if !deployed.contains_key(app) {
                        return Err(field_error(
                            format!("timeline[{i}].undeploy"),
                            format!("`{app}` is never deployed before this entry"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Deployment-time parents must exist from tick 0: the root or a
    /// preloaded virtual scheduler.
    fn check_parent(&self, parent: &str, field: String) -> Result<(), ScenarioError> {
        if parent == ROOT_NAME {
            return Ok(());
        }
        match self.scheduler(parent) {
            None => Err(field_error(field, format!("undeclared scheduler `{parent}`"))),
            Some(d) if !d.spec.policy.is_virtual() => Err(field_error(
                field,
                format!("`{parent}` is not a VIRTUAL scheduler"),
            )),
            Some(d) if !d.preload => Err(field_error(
                field,
                format!("`{parent}` must be preloaded to act as a parent"),
            )),
            Some(_) => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "horizon": 100,
        "schedulers": [
            {"name": "edf", "policy": "EDF_RESERVATION", "parent_request": "RESBH[50,100]"}
        ],
        "timeline": [
            {"tick": 0, "deploy": {"app": "a", "request": "RESBH[10,100]", "scheduler": "edf"}}
        ]
    }"#;

    fn field_of(err: ScenarioError) -> String {
        match err {
            ScenarioError::Field { field, .. } => field,
            other => panic!("expected a field error, got {other}"),
        }
    }

    #[test]
    fn minimal_scenario() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.horizon, 100);
        assert_eq!(s.seed, 0);
        assert_eq!(s.timeline.len(), 1);
        let decl = &s.schedulers[0];
        assert_eq!(decl.parent, "root");
        assert!(!decl.preload);
        assert_eq!(decl.spec.quantum, DEFAULT_QUANTUM);
        match &s.timeline[0].action {
            Action::Deploy(d) => {
                assert_eq!(d.workload, Workload::CpuBound);
                assert_eq!(d.request.to_string(), "RESBH[10,100]");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn undeclared_scheduler_is_named() {
        let text = MINIMAL.replace(r#""scheduler": "edf""#, r#""scheduler": "ghost""#);
        let err = Scenario::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");
        assert_eq!(field_of(err), "timeline[0].deploy.scheduler");
    }

    #[test]
    fn ticks_must_not_go_back() {
        let text = r#"{"horizon": 100, "timeline": [
            {"tick": 5, "deploy": {"app": "a", "request": "BE"}},
            {"tick": 3, "undeploy": "a"}
        ]}"#;
        assert_eq!(
            field_of(Scenario::from_json(text).unwrap_err()),
            "timeline[1].tick"
        );
    }

    #[test]
    fn horizon_must_exceed_last_tick() {
        let text = r#"{"horizon": 5, "timeline": [{"tick": 5, "deploy": {"app": "a", "request": "BE"}}]}"#;
        assert_eq!(
            field_of(Scenario::from_json(text).unwrap_err()),
            "timeline[0].tick"
        );
    }

    #[test]
    fn contract_errors_carry_the_field_and_position() {
        let text = MINIMAL.replace("RESBH[10,100]", "RESBH[200,100]");
        let err = Scenario::from_json(&text).unwrap_err();
        let message = err.to_string();
        assert!(message.starts_with("timeline[0].deploy.request:"), "{message}");
        assert!(message.contains("200"), "{message}");
    }

    #[test]
    fn syntax_errors_carry_line_and_column() {
        let err = Scenario::from_json("{\n  \"horizon\": 10,\n  oops\n}").unwrap_err();
        assert!(matches!(err, ScenarioError::Syntax { line: 3, .. }), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Scenario::from_json(r#"{"horizon": 10, "speed": 2}"#).unwrap_err();
        assert!(err.to_string().contains("speed"), "{err}");
    }

    #[test]
    fn undeploy_needs_an_earlier_deploy() {
        let text = r#"{"horizon": 10, "timeline": [{"tick": 1, "undeploy": "a"}]}"#;
        assert_eq!(
            field_of(Scenario::from_json(text).unwrap_err()),
            "timeline[0].undeploy"
        );
    }

    #[test]
    fn parents_must_be_preloaded_virtual_schedulers() {
        let text = r#"{"horizon": 10, "schedulers": [
            {"name": "v", "policy": "VIRTUAL", "parent_request": "RESBH[5,10]"},
            {"name": "e", "policy": "EDF_RESERVATION", "parent_request": "RESBH[1,10]", "parent": "v"}
        ]}"#;
        assert_eq!(
            field_of(Scenario::from_json(text).unwrap_err()),
            "schedulers[1].parent"
        );
        let ok = text.replace(r#""RESBH[5,10]"}"#, r#""RESBH[5,10]", "preload": true}"#);
        assert!(Scenario::from_json(&ok).is_ok());
    }

    #[test]
    fn scheduler_declarations_are_validated() {
        let text = r#"{"horizon": 10, "schedulers": [
            {"name": "rr", "policy": "ROUND_ROBIN", "provides": ["PS"], "parent_request": "BE"}
        ]}"#;
        assert_eq!(
            field_of(Scenario::from_json(text).unwrap_err()),
            "schedulers[0]"
        );
        let text = r#"{"horizon": 10, "schedulers": [
            {"name": "root", "policy": "ROUND_ROBIN", "parent_request": "BE"}
        ]}"#;
        assert_eq!(
            field_of(Scenario::from_json(text).unwrap_err()),
            "schedulers[0].name"
        );
    }

    #[test]
    fn workloads_parse_and_validate() {
        let text = MINIMAL.replace(
            r#""scheduler": "edf"}"#,
            r#""scheduler": "edf", "workload": {"kind": "PERIODIC", "period": 100, "wcet": 10}}"#,
        );
        let s = Scenario::from_json(&text).unwrap();
        let Action::Deploy(d) = &s.timeline[0].action else {
            panic!()
        };
        assert_eq!(
            d.workload,
            Workload::Periodic {
                period: 100,
                wcet: 10,
                offset: 0
            }
        );
        let bad = text.replace(r#""wcet": 10"#, r#""wcet": 0"#);
        assert_eq!(
            field_of(Scenario::from_json(&bad).unwrap_err()),
            "timeline[0].deploy.workload"
        );
    }
}
