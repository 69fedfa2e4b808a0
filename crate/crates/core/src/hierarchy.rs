//! The scheduler tree.
//!
//! Node 0 is the virtual root that owns the whole CPU (`ALL`). Virtual nodes
//! schedule other schedulers; every other policy is a leaf that schedules
//! applications. Grants flow top-down from [`Hierarchy::compose`]: each node
//! or application receives an awarded contract derived from what it
//! requested and what its parent can supply.
//!
//! Over-commitment at a node does not abort composition. Hard reservations
//! (`RESBH`) are kept intact, soft reservations and proportional shares are
//! shrunk pro rata to fit, and only when hard demand alone exceeds the node's
//! capacity is the newest hard contributor rejected.

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contracts::{Contract, Rational, ServiceClass, PPM};

pub const DEFAULT_QUANTUM: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AppId(String);

impl AppId {
    pub fn new(id: impl Into<String>) -> Self {
        AppId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for AppId {
    fn from(s: &str) -> Self {
        AppId(s.to_string())
    }
}

impl fmt::Display for AppId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PolicyKind {
    Virtual,
    FixedPriority,
    RoundRobin,
    EdfReservation,
    Stride,
}

impl PolicyKind {
    /// Service classes this policy knows how to deliver to its children.
    pub fn implementable(self) -> &'static [ServiceClass] {
        use ServiceClass::*;
        match self {
            PolicyKind::Virtual => &[HardReservation, SoftReservation, Share, BestEffort],
            PolicyKind::FixedPriority => &[SoftReservation, BestEffort],
            PolicyKind::RoundRobin => &[BestEffort],
            PolicyKind::EdfReservation => &[HardReservation, SoftReservation],
            PolicyKind::Stride => &[Share, BestEffort],
        }
    }

    pub fn is_virtual(self) -> bool {
        self == PolicyKind::Virtual
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Virtual => "VIRTUAL",
            PolicyKind::FixedPriority => "FIXED_PRIORITY",
            PolicyKind::RoundRobin => "ROUND_ROBIN",
            PolicyKind::EdfReservation => "EDF_RESERVATION",
            PolicyKind::Stride => "STRIDE",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Declaration of a loadable scheduler.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedulerSpec {
    pub name: String,
    pub policy: PolicyKind,
    pub provides: BTreeSet<ServiceClass>,
    /// What the scheduler asks of its parent.
    pub parent_request: Contract,
    /// Dispatch quantum for round-robin and stride selection.
    pub quantum: u64,
}

impl SchedulerSpec {
    /// A spec providing every class its policy can implement.
    pub fn new(name: impl Into<String>, policy: PolicyKind, parent_request: Contract) -> Self {
        SchedulerSpec {
            name: name.into(),
            policy,
            provides: policy.implementable().iter().copied().collect(),
            parent_request,
            quantum: DEFAULT_QUANTUM,
        }
    }

    pub fn with_provides(mut self, provides: impl IntoIterator<Item = ServiceClass>) -> Self {
        self.provides = provides.into_iter().collect();
        self
    }

    pub fn with_quantum(mut self, quantum: u64) -> Self {
        self.quantum = quantum;
        self
    }

    pub fn validate(&self) -> Result<(), HierarchyError> {
        let invalid = |reason: String| HierarchyError::InvalidSpec {
            name: self.name.clone(),
            reason,
        };
        if self.name.is_empty() {
            return Err(invalid("empty name".into()));
        }
        if self.provides.is_empty() {
            return Err(invalid("provides no service class".into()));
        }
        if let Some(class) = self
            .provides
            .iter()
            .find(|c| !self.policy.implementable().contains(c))
        {
            return Err(invalid(format!("{} cannot provide {class}", self.policy)));
        }
        self.parent_request
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        if self.parent_request == Contract::All {
            return Err(invalid("ALL is reserved for the root".into()));
        }
        if self.quantum == 0 {
            return Err(invalid("quantum must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppAttachment {
    pub id: AppId,
    pub request: Contract,
    pub awarded: Contract,
    pub degraded: bool,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedulerNode {
    pub id: NodeId,
    pub spec: SchedulerSpec,
    pub parent: Option<NodeId>,
    pub granted: Contract,
    pub degraded: bool,
    pub children: Vec<NodeId>,
    pub apps: Vec<AppAttachment>,
    /// Global attachment sequence number; lower is older.
    pub seq: u64,
    /// Application class labels of apps deployed here.
    pub tags: BTreeSet<String>,
    /// Set when the node was loaded on behalf of a specific application.
    pub loaded_for: Option<AppId>,
}

impl SchedulerNode {
    pub fn is_virtual(&self) -> bool {
        self.spec.policy.is_virtual()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Holder {
    Node(NodeId),
    App(AppId),
}

impl fmt::Display for Holder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Holder::Node(id) => write!(f, "node:{id}"),
            Holder::App(id) => write!(f, "app:{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grant {
    pub holder: Holder,
    pub requested: Contract,
    pub awarded: Contract,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub holder: Holder,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeasibilityResult {
    pub feasible: bool,
    pub grants: Vec<Grant>,
    pub rejected: Option<Rejection>,
}

impl FeasibilityResult {
    fn from_outcome(outcome: Result<Vec<Grant>, Rejection>) -> Self {
        match outcome {
            Ok(grants) => FeasibilityResult {
                feasible: true,
                grants,
                rejected: None,
            },
            Err(rejection) => FeasibilityResult {
                feasible: false,
                grants: Vec::new(),
                rejected: Some(rejection),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HierarchyError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not a virtual scheduler")]
    NotVirtual(NodeId),
    #[error("node {0} is a virtual scheduler and cannot host applications")]
    IsVirtual(NodeId),
    #[error("the root cannot be detached")]
    IsRoot,
    #[error("a scheduler named `{0}` is already loaded")]
    DuplicateName(String),
    #[error("application `{0}` is already attached")]
    DuplicateApp(AppId),
    #[error("unknown application `{0}`")]
    UnknownApp(AppId),
    #[error("node {node} does not provide {class}")]
    ClassNotProvided { node: NodeId, class: ServiceClass },
    #[error("invalid scheduler spec `{name}`: {reason}")]
    InvalidSpec { name: String, reason: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{0} carries no demand to propagate")]
    NothingToPropagate(Contract),
}

/// One contender for a node's capacity.
struct Claim {
    holder: Holder,
    request: Contract,
    seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hierarchy {
    nodes: Vec<Option<SchedulerNode>>,
    next_seq: u64,
}

impl Default for Hierarchy {
    fn default() -> Self {
        Self::new()
    }
}

impl Hierarchy {
    /// A single virtual root holding the whole CPU.
    pub fn new() -> Self {
        let root = SchedulerNode {
            id: NodeId::ROOT,
            spec: SchedulerSpec::new("root", PolicyKind::Virtual, Contract::All),
            parent: None,
            granted: Contract::All,
            degraded: false,
            children: Vec::new(),
            apps: Vec::new(),
            seq: 0,
            tags: BTreeSet::new(),
            loaded_for: None,
        };
        Hierarchy {
            nodes: vec![Some(root)],
            next_seq: 1,
        }
    }

    pub fn root(&self) -> &SchedulerNode {
        self.node(NodeId::ROOT).expect("root is never detached")
    }

    pub fn node(&self, id: NodeId) -> Option<&SchedulerNode> {
        self.nodes.get(id.0).and_then(Option::as_ref)
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> Option<&mut SchedulerNode> {
        self.nodes.get_mut(id.0).and_then(Option::as_mut)
    }

    fn get(&self, id: NodeId) -> Result<&SchedulerNode, HierarchyError> {
        self.node(id).ok_or(HierarchyError::UnknownNode(id))
    }

    /// Live nodes in id (= attachment) order.
    pub fn nodes(&self) -> impl Iterator<Item = &SchedulerNode> {
        self.nodes.iter().flatten()
    }

    pub fn node_count(&self) -> usize {
        self.nodes().count()
    }

    pub fn find_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes().find(|n| n.spec.name == name).map(|n| n.id)
    }

    /// All applications with the node hosting them.
    pub fn apps(&self) -> impl Iterator<Item = (NodeId, &AppAttachment)> {
        self.nodes()
            .flat_map(|n| n.apps.iter().map(move |a| (n.id, a)))
    }

    pub fn app(&self, id: &AppId) -> Option<(NodeId, &AppAttachment)> {
        self.apps().find(|(_, a)| &a.id == id)
    }

    /// `/`-joined scheduler names from the root down to `id`.
    pub fn path_names(&self, id: NodeId) -> String {
        let mut names = Vec::new();
        let mut cur = self.node(id);
        while let Some(node) = cur {
            names.push(node.spec.name.as_str());
            cur = node.parent.and_then(|p| self.node(p));
        }
        names.reverse();
        names.join("/")
    }

    /// Node ids from the root down to `id`, inclusive.
    pub fn path_ids(&self, id: NodeId) -> Vec<NodeId> {
        let mut ids = Vec::new();
        let mut cur = self.node(id);
        while let Some(node) = cur {
            ids.push(node.id);
            cur = node.parent.and_then(|p| self.node(p));
        }
        ids.reverse();
        ids
    }

    fn bump_seq(&mut self) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        seq
    }

    /// Adds a scheduler under a virtual parent. The node holds a provisional
    /// `NULL` grant until the next [`compose`](Self::compose).
    pub fn attach_scheduler(
        &mut self,
        parent: NodeId,
        spec: SchedulerSpec,
    ) -> Result<NodeId, HierarchyError> {
        if !self.get(parent)?.is_virtual() {
            return Err(HierarchyError::NotVirtual(parent));
        }
        spec.validate()?;
        if self.find_by_name(&spec.name).is_some() {
            return Err(HierarchyError::DuplicateName(spec.name));
        }
        let id = NodeId(self.nodes.len());
        let seq = self.bump_seq();
        self.nodes.push(Some(SchedulerNode {
            id,
            spec,
            parent: Some(parent),
            granted: Contract::Null,
            degraded: false,
            children: Vec::new(),
            apps: Vec::new(),
            seq,
            tags: BTreeSet::new(),
            loaded_for: None,
        }));
        self.node_mut(parent)
            .expect("parent checked above")
            .children
            .push(id);
        Ok(id)
    }

    pub fn attach_application(
        &mut self,
        node: NodeId,
        app: AppId,
        request: Contract,
    ) -> Result<(), HierarchyError> {
        let target = self.get(node)?;
        if target.is_virtual() {
            return Err(HierarchyError::IsVirtual(node));
        }
        request
            .validate()
            .map_err(|e| HierarchyError::InvalidRequest(e.to_string()))?;
        if !target.spec.provides.contains(&request.class()) {
            return Err(HierarchyError::ClassNotProvided {
                node,
                class: request.class(),
            });
        }
        if self.app(&app).is_some() {
            return Err(HierarchyError::DuplicateApp(app));
        }
        let seq = self.bump_seq();
        self.node_mut(node).expect("checked above").apps.push(AppAttachment {
            id: app,
            request,
            awarded: Contract::Null,
            degraded: false,
            seq,
        });
        Ok(())
    }

    /// Removes `id` and its whole subtree, applications included.
    pub fn detach(&mut self, id: NodeId) -> Result<(), HierarchyError> {
        if id == NodeId::ROOT {
            return Err(HierarchyError::IsRoot);
        }
        let parent = self.get(id)?.parent.expect("non-root nodes have a parent");
        self.node_mut(parent)
            .expect("parent of a live node is live")
            .children
            .retain(|&c| c != id);
        let mut stack = vec![id];
        while let Some(next) = stack.pop() {
            if let Some(node) = self.nodes[next.0].take() {
                stack.extend(node.children);
            }
        }
        Ok(())
    }

    /// Removes an application, returning the node that hosted it.
    pub fn remove_application(&mut self, app: &AppId) -> Result<NodeId, HierarchyError> {
        let (node, _) = self
            .app(app)
            .ok_or_else(|| HierarchyError::UnknownApp(app.clone()))?;
        self.node_mut(node)
            .expect("node of a live app is live")
            .apps
            .retain(|a| &a.id != app);
        Ok(node)
    }

    /// Replaces what a non-root node asks of its parent.
    pub fn set_parent_request(
        &mut self,
        id: NodeId,
        request: Contract,
    ) -> Result<(), HierarchyError> {
        if id == NodeId::ROOT {
            return Err(HierarchyError::IsRoot);
        }
        let node = self.node_mut(id).ok_or(HierarchyError::UnknownNode(id))?;
        let mut spec = node.spec.clone();
        spec.parent_request = request;
        spec.validate()?;
        node.spec = spec;
        Ok(())
    }

    /// Computes grants for the whole tree and installs them when feasible.
    /// An infeasible result leaves previously installed grants untouched.
    pub fn compose(&mut self) -> FeasibilityResult {
        let result = self.evaluate();
        if result.feasible {
            for grant in &result.grants {
                match &grant.holder {
                    Holder::Node(id) => {
                        let node = self.node_mut(*id).expect("granted node exists");
                        node.granted = grant.awarded;
                        node.degraded = grant.degraded;
                    }
                    Holder::App(app) => {
                        let (node, _) = self.app(app).expect("granted app exists");
                        let node = self.node_mut(node).expect("host exists");
                        let entry = node
                            .apps
                            .iter_mut()
                            .find(|a| &a.id == app)
                            .expect("granted app exists");
                        entry.awarded = grant.awarded;
                        entry.degraded = grant.degraded;
                    }
                }
            }
        }
        result
    }

    /// Pure form of [`compose`](Self::compose): the grants the tree would
    /// receive, without installing them.
    pub fn evaluate(&self) -> FeasibilityResult {
        FeasibilityResult::from_outcome(self.plan())
    }

    fn plan(&self) -> Result<Vec<Grant>, Rejection> {
        for node in self.nodes().filter(|n| !n.is_virtual()) {
            self.check_leaf_demand(node)?;
        }
        let mut grants = Vec::new();
        self.grant_children(self.root(), &Contract::All, &mut grants)?;
        Ok(grants)
    }

    /// A leaf's request must cover the reservations of its applications,
    /// both in total utilization and per application by dominance.
    fn check_leaf_demand(&self, node: &SchedulerNode) -> Result<(), Rejection> {
        let request = &node.spec.parent_request;
        let reserved: Rational = node
            .apps
            .iter()
            .filter(|a| a.request.is_reservation())
            .map(|a| a.request.utilization())
            .sum();
        let reject = |reason: String| Rejection {
            holder: Holder::Node(node.id),
            reason,
        };
        if reserved > request.utilization() {
            return Err(reject(format!(
                "reservation demand {reserved} exceeds requested {request}"
            )));
        }
        if let Some(app) = node
            .apps
            .iter()
            .find(|a| a.request.is_reservation() && !request.satisfies(&a.request))
        {
            return Err(reject(format!(
                "{request} does not dominate {} of `{}`",
                app.request, app.id
            )));
        }
        Ok(())
    }

    fn claims(&self, node: &SchedulerNode) -> Vec<Claim> {
        if node.is_virtual() {
            node.children
                .iter()
                .map(|&c| {
                    let child = self.node(c).expect("children are live");
                    Claim {
                        holder: Holder::Node(c),
                        request: child.spec.parent_request,
                        seq: child.seq,
                    }
                })
                .collect()
        } else {
            node.apps
                .iter()
                .map(|a| Claim {
                    holder: Holder::App(a.id.clone()),
                    request: a.request,
                    seq: a.seq,
                })
                .collect()
        }
    }

    fn grant_children(
        &self,
        node: &SchedulerNode,
        award: &Contract,
        out: &mut Vec<Grant>,
    ) -> Result<(), Rejection> {
        let claims = self.claims(node);
        if node.id != NodeId::ROOT {
            // A hard child needs a predictable hard supply above it.
            if let Some(claim) = claims.iter().find(|c| {
                matches!(c.request, Contract::Hard { .. })
                    && !node.spec.parent_request.satisfies(&c.request)
            }) {
                return Err(Rejection {
                    holder: claim.holder.clone(),
                    reason: format!(
                        "{} of `{}` does not dominate {}",
                        node.spec.parent_request, node.spec.name, claim.request
                    ),
                });
            }
        }
        let awards = allocate(&award.utilization(), &claims)?;
        for (claim, (awarded, degraded)) in claims.iter().zip(&awards) {
            out.push(Grant {
                holder: claim.holder.clone(),
                requested: claim.request,
                awarded: *awarded,
                degraded: *degraded,
            });
        }
        for (claim, (awarded, _)) in claims.iter().zip(&awards) {
            if let Holder::Node(id) = claim.holder {
                let child = self.node(id).expect("children are live");
                self.grant_children(child, awarded, out)?;
            }
        }
        Ok(())
    }

    /// Re-divides `node`'s current grant among its direct children. Identity
    /// when nothing is over-committed; otherwise hard reservations are kept
    /// and soft reservations and shares are scaled down.
    pub fn reallocate(&self, node: NodeId) -> Result<FeasibilityResult, HierarchyError> {
        let n = self.get(node)?;
        let claims = self.claims(n);
        let outcome = allocate(&n.granted.utilization(), &claims).map(|awards| {
            claims
                .into_iter()
                .zip(awards)
                .map(|(claim, (awarded, degraded))| Grant {
                    holder: claim.holder,
                    requested: claim.request,
                    awarded,
                    degraded,
                })
                .collect()
        });
        Ok(FeasibilityResult::from_outcome(outcome))
    }

    /// Capacity of `node`'s grant not yet awarded to its children.
    pub fn spare_capacity(&self, node: NodeId) -> Result<Rational, HierarchyError> {
        let n = self.get(node)?;
        Ok(n.granted.utilization().saturating_sub(&self.awarded_load(n)))
    }

    /// Sum of awarded reservation and share utilization below `node`.
    pub fn awarded_load(&self, node: &SchedulerNode) -> Rational {
        if node.is_virtual() {
            node.children
                .iter()
                .filter_map(|&c| self.node(c))
                .filter(|c| c.granted.claims_capacity())
                .map(|c| c.granted.utilization())
                .sum()
        } else {
            node.apps
                .iter()
                .filter(|a| a.awarded.claims_capacity())
                .map(|a| a.awarded.utilization())
                .sum()
        }
    }

    /// Enlargements of ancestor requests needed so that `global_request`,
    /// placed at `leaf`, is backed all the way up to the root rather than by
    /// the leaf's local capacity alone. A reservation ancestor is also
    /// enlarged when it has the capacity but too long a period to back the
    /// request (or an enlarged hard child). Apply with
    /// [`apply_requests`](Self::apply_requests) and recompose.
    pub fn propagate_demand(
        &self,
        leaf: NodeId,
        global_request: &Contract,
    ) -> Result<Vec<(NodeId, Contract)>, HierarchyError> {
        if !global_request.claims_capacity() {
            return Err(HierarchyError::NothingToPropagate(*global_request));
        }
        global_request
            .validate()
            .map_err(|e| HierarchyError::InvalidRequest(e.to_string()))?;
        let leaf_node = self.get(leaf)?;
        if leaf_node.is_virtual() {
            return Err(HierarchyError::IsVirtual(leaf));
        }

        let mut enlarged: Vec<(NodeId, Contract)> = Vec::new();
        let mut cur = leaf_node;
        while cur.id != NodeId::ROOT {
            let mut demand: Rational = if cur.is_virtual() {
                cur.children
                    .iter()
                    .filter_map(|&c| self.node(c))
                    .map(|c| {
                        enlarged
                            .iter()
                            .find(|(id, _)| *id == c.id)
                            .map_or(c.spec.parent_request, |(_, r)| *r)
                    })
                    .filter(Contract::claims_capacity)
                    .map(|r| r.utilization())
                    .sum()
            } else {
                cur.apps
                    .iter()
                    .filter(|a| a.request.claims_capacity())
                    .map(|a| a.request.utilization())
                    .sum()
            };
            let existing = cur.spec.parent_request;
            // a reservation that is large enough can still be too coarse
            let too_coarse = if cur.id == leaf {
                demand = &demand + &global_request.utilization();
                global_request.is_reservation() && !existing.satisfies(global_request)
            } else {
                enlarged.iter().any(|(id, r)| {
                    matches!(r, Contract::Hard { .. })
                        && self.node(*id).is_some_and(|n| n.parent == Some(cur.id))
                        && !existing.satisfies(r)
                })
            };
            let short = cur.granted.utilization() < demand;
            if short || (too_coarse && existing.is_reservation()) {
                let needed = if demand < existing.utilization() {
                    existing.utilization()
                } else {
                    demand
                };
                if let Some(request) = enlarge(&existing, &needed, global_request) {
                    if request != existing && request.utilization() >= existing.utilization() {
                        enlarged.push((cur.id, request));
                    }
                }
            }
            cur = self.get(cur.parent.expect("non-root has a parent"))?;
        }
        Ok(enlarged)
    }

    pub fn apply_requests(
        &mut self,
        requests: &[(NodeId, Contract)],
    ) -> Result<(), HierarchyError> {
        for (id, request) in requests {
            self.set_parent_request(*id, *request)?;
        }
        Ok(())
    }

    /// Deterministic text rendering of the full tree state, for equality
    /// checks and golden files.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "slots={} next_seq={}", self.nodes.len(), self.next_seq);
        for node in self.nodes() {
            let provides: Vec<&str> = node.spec.provides.iter().map(|c| c.tag()).collect();
            let children: Vec<String> = node.children.iter().map(|c| c.to_string()).collect();
            let tags: Vec<&str> = node.tags.iter().map(String::as_str).collect();
            let _ = writeln!(
                out,
                "node {} name={} policy={} parent={} provides={} request={} granted={} degraded={} quantum={} seq={} tags={} loaded_for={} children={}",
                node.id,
                node.spec.name,
                node.spec.policy,
                node.parent.map_or("-".to_string(), |p| p.to_string()),
                provides.join(","),
                node.spec.parent_request,
                node.granted,
                node.degraded,
                node.spec.quantum,
                node.seq,
                tags.join(","),
                node.loaded_for.as_ref().map_or("-", AppId::as_str),
                children.join(","),
            );
            for app in &node.apps {
                let _ = writeln!(
                    out,
                    "  app {} request={} awarded={} degraded={} seq={}",
                    app.id, app.request, app.awarded, app.degraded, app.seq
                );
            }
        }
        out
    }
}

/// Divides `capacity` among `claims`, reallocating when over-committed.
fn allocate(capacity: &Rational, claims: &[Claim]) -> Result<Vec<(Contract, bool)>, Rejection> {
    let demand: Rational = claims
        .iter()
        .filter(|c| c.request.claims_capacity())
        .map(|c| c.request.utilization())
        .sum();
    if &demand <= capacity {
        return Ok(claims.iter().map(|c| (c.request, false)).collect());
    }
    reallocate_claims(capacity, claims)
}

fn reallocate_claims(
    capacity: &Rational,
    claims: &[Claim],
) -> Result<Vec<(Contract, bool)>, Rejection> {
    let newest = |pred: &dyn Fn(&Contract) -> bool| {
        claims
            .iter()
            .filter(|c| pred(&c.request))
            .max_by_key(|c| c.seq)
            .expect("a contributor of the over-committed kind exists")
    };
    let is_hard = |c: &Contract| matches!(c, Contract::Hard { .. });
    let is_scalable = |c: &Contract| matches!(c, Contract::Soft { .. } | Contract::Share { .. });

    let hard: Rational = claims
        .iter()
        .filter(|c| is_hard(&c.request))
        .map(|c| c.request.utilization())
        .sum();
    if &hard > capacity {
        let culprit = newest(&is_hard);
        return Err(Rejection {
            holder: culprit.holder.clone(),
            reason: format!("hard demand {hard} exceeds capacity {capacity}"),
        });
    }

    let residual = capacity.saturating_sub(&hard);
    let scalable: Rational = claims
        .iter()
        .filter(|c| is_scalable(&c.request))
        .map(|c| c.request.utilization())
        .sum();
    let factor = &residual / &scalable;

    let mut awards = Vec::with_capacity(claims.len());
    for claim in claims {
        let award = match claim.request {
            Contract::Soft { budget, period } => match factor.floor_scale(budget) {
                0 => None,
                b => Some(Contract::Soft { budget: b, period }),
            },
            Contract::Share { ppm } => match factor.floor_scale(ppm as u64) {
                0 => None,
                p => Some(Contract::Share { ppm: p as u32 }),
            },
            other => Some(other),
        };
        match award {
            Some(a) => awards.push((a, a != claim.request)),
            None => {
                let culprit = newest(&is_scalable);
                return Err(Rejection {
                    holder: culprit.holder.clone(),
                    reason: format!(
                        "residual {residual} cannot fit {scalable} of soft and share demand"
                    ),
                });
            }
        }
    }
    Ok(awards)
}

/// `existing` raised to utilization `needed`, keeping its class.
fn enlarge(existing: &Contract, needed: &Rational, global: &Contract) -> Option<Contract> {
    let period_for = |period: u64| match global.reservation() {
        Some((_, global_period)) => period.min(global_period),
        None => period,
    };
    match *existing {
        Contract::Hard { period, .. } => {
            let period = period_for(period);
            Some(Contract::Hard {
                budget: needed.ceil_scale(period).min(period),
                period,
            })
        }
        Contract::Soft { period, .. } => {
            let period = period_for(period);
            Some(Contract::Soft {
                budget: needed.ceil_scale(period).min(period),
                period,
            })
        }
        Contract::Share { .. } => Some(Contract::Share {
            ppm: needed.ceil_scale(PPM as u64).min(PPM as u64) as u32,
        }),
        _ => None,
    }
}
