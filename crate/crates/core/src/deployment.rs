//! The deployment protocol.
//!
//! An application states its class label and contract. If a loaded leaf
//! scheduler can serve the contract it is attached there; otherwise the
//! application's own scheduler is loaded and the tree is recomposed. A
//! rejected deployment leaves the hierarchy exactly as it found it.

use std::fmt;

use thiserror::Error;

use crate::contracts::{Contract, ServiceClass};
use crate::hierarchy::{AppId, Hierarchy, HierarchyError, NodeId, SchedulerSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeploymentRequest {
    pub app_id: AppId,
    /// Free-form label such as `video`; a matching preference, not a filter.
    pub app_class: String,
    pub request: Contract,
    /// Loaded only when no compatible service exists.
    pub scheduler: Option<SchedulerSpec>,
    /// Where to load `scheduler`; the root when absent.
    pub target_parent: Option<NodeId>,
}

impl DeploymentRequest {
    pub fn new(app_id: impl Into<String>, app_class: impl Into<String>, request: Contract) -> Self {
        DeploymentRequest {
            app_id: AppId::new(app_id),
            app_class: app_class.into(),
            request,
            scheduler: None,
            target_parent: None,
        }
    }

    pub fn with_scheduler(mut self, spec: SchedulerSpec) -> Self {
        self.scheduler = Some(spec);
        self
    }

    pub fn with_target_parent(mut self, parent: NodeId) -> Self {
        self.target_parent = Some(parent);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    NoServiceNoScheduler,
    Infeasible,
    InvalidRequest,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::NoServiceNoScheduler => "NO_SERVICE_NO_SCHEDULER",
            RejectReason::Infeasible => "INFEASIBLE",
            RejectReason::InvalidRequest => "INVALID_REQUEST",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeploymentDecision {
    AttachedExisting(NodeId),
    LoadedNew(NodeId),
    Degraded { node: NodeId, awarded: Contract },
    Rejected(RejectReason),
}

impl DeploymentDecision {
    pub fn node(&self) -> Option<NodeId> {
        match self {
            DeploymentDecision::AttachedExisting(n)
            | DeploymentDecision::LoadedNew(n)
            | DeploymentDecision::Degraded { node: n, .. } => Some(*n),
            DeploymentDecision::Rejected(_) => None,
        }
    }

    pub fn is_admitted(&self) -> bool {
        !matches!(self, DeploymentDecision::Rejected(_))
    }

    pub fn outcome(&self) -> &'static str {
        match self {
            DeploymentDecision::AttachedExisting(_) => "ATTACHED_EXISTING",
            DeploymentDecision::LoadedNew(_) => "LOADED_NEW",
            DeploymentDecision::Degraded { .. } => "DEGRADED",
            DeploymentDecision::Rejected(_) => "REJECTED",
        }
    }
}

impl fmt::Display for DeploymentDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeploymentDecision::AttachedExisting(n) | DeploymentDecision::LoadedNew(n) => {
                write!(f, "{} node={n}", self.outcome())
            }
            DeploymentDecision::Degraded { node, awarded } => {
                write!(f, "DEGRADED node={node} awarded={awarded}")
            }
            DeploymentDecision::Rejected(reason) => write!(f, "REJECTED reason={reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeploymentError {
    #[error("application `{0}` is not deployed")]
    UnknownApp(AppId),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

/// First leaf, in attachment order, able to serve `req.request` right now.
/// A leaf already hosting the same application class is preferred.
pub fn find_compatible_service(h: &Hierarchy, req: &DeploymentRequest) -> Option<NodeId> {
    let needed = req.request.utilization();
    let mut candidates = h.nodes().filter(|n| {
        !n.is_virtual()
            && n.spec.provides.contains(&req.request.class())
            && n.granted.satisfies(&req.request)
            && h.spare_capacity(n.id).is_ok_and(|spare| spare >= needed)
    });
    let first = candidates.next()?;
    if first.tags.contains(&req.app_class) {
        return Some(first.id);
    }
    Some(
        candidates
            .find(|n| n.tags.contains(&req.app_class))
            .unwrap_or(first)
            .id,
    )
}

fn validate(h: &Hierarchy, req: &DeploymentRequest) -> bool {
    let class = req.request.class();
    if req.request.validate().is_err()
        || matches!(class, ServiceClass::All | ServiceClass::Null)
        || h.app(&req.app_id).is_some()
    {
        return false;
    }
    if let Some(spec) = &req.scheduler {
        if spec.validate().is_err() || !spec.provides.contains(&class) {
            return false;
        }
    }
    match req.target_parent {
        Some(parent) => h.node(parent).is_some_and(|n| n.is_virtual()),
        None => true,
    }
}

/// Runs the protocol against `h`. Every rejection restores `h` to its prior
/// state, so the caller never observes a half-applied deployment.
pub fn deploy(h: &mut Hierarchy, req: &DeploymentRequest) -> DeploymentDecision {
    if !validate(h, req) {
        return DeploymentDecision::Rejected(RejectReason::InvalidRequest);
    }
    let snapshot = h.clone();
    let reject = |h: &mut Hierarchy, reason| {
        *h = snapshot.clone();
        DeploymentDecision::Rejected(reason)
    };

    let (node, loaded) = match find_compatible_service(h, req) {
        Some(node) => (node, false),
        None => {
            let Some(spec) = &req.scheduler else {
                return DeploymentDecision::Rejected(RejectReason::NoServiceNoScheduler);
            };
            let parent = req.target_parent.unwrap_or(NodeId::ROOT);
            match h.attach_scheduler(parent, spec.clone()) {
                Ok(node) => (node, true),
                Err(_) => return reject(h, RejectReason::InvalidRequest),
            }
        }
    };
    if h
        .attach_application(node, req.app_id.clone(), req.request)
        .is_err()
    {
        return reject(h, RejectReason::InvalidRequest);
    }
    if !h.compose().feasible {
        return reject(h, RejectReason::Infeasible);
    }

    let host = h.node_mut(node).expect("node attached above");
    host.tags.insert(req.app_class.clone());
    if loaded {
        host.loaded_for = Some(req.app_id.clone());
    }
    let (_, app) = h.app(&req.app_id).expect("app attached above");
    if app.degraded {
        DeploymentDecision::Degraded {
            node,
            awarded: app.awarded,
        }
    } else if loaded {
        DeploymentDecision::LoadedNew(node)
    } else {
        DeploymentDecision::AttachedExisting(node)
    }
}

/// Removes an application, unloads the scheduler that was loaded for it if
/// it is now empty, and recomposes so that freed capacity flows back to
/// degraded grants. Returns whether a scheduler was unloaded.
pub fn undeploy(h: &mut Hierarchy, app: &AppId) -> Result<bool, DeploymentError> {
    if h.app(app).is_none() {
        return Err(DeploymentError::UnknownApp(app.clone()));
    }
    let node = h.remove_application(app)?;
    let host = h.node(node).expect("host of a live app");
    let unload = host.apps.is_empty() && host.loaded_for.as_ref() == Some(app);
    if unload {
        h.detach(node)?;
    }
    let result = h.compose();
    debug_assert!(result.feasible, "removing demand cannot break feasibility");
    Ok(unload)
}
