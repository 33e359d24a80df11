//! Domain types shared by every stage of the pipeline: the service mesh,
//! control actions on their discretization grids, and observed service
//! metrics.
//!
//! Services are addressed by their *position* in [`MeshTopology::services`]
//! everywhere a per-service vector appears (loads, blocking rates, routing
//! weights, observations). Core counts are addressed by position in
//! [`MeshTopology::scalable_nodes`].

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceKind {
    Information,
    Compute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    /// Service number as used in scenario descriptions (1, 2, 3).
    pub id: usize,
    pub kind: ServiceKind,
    /// Response time objective, seconds.
    pub delay_bound: f64,
    /// Alternative node sequences, each starting at the front node. The
    /// routing weight of the service applies to the first path; the second
    /// path receives the remainder.
    pub paths: Vec<Vec<NodeId>>,
}

impl ServiceSpec {
    /// Distinct nodes touched by any of the service's paths, in first-seen order.
    pub fn nodes(&self) -> Vec<NodeId> {
        let mut seen = HashSet::new();
        self.paths
            .iter()
            .flatten()
            .copied()
            .filter(|n| seen.insert(*n))
            .collect()
    }

    /// Fraction of the service's carried load sent down each path.
    pub fn path_weights(&self, routing: f64) -> Vec<f64> {
        match self.paths.len() {
            1 => vec![1.0],
            _ => vec![routing, 1.0 - routing],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Front,
    Backend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub role: NodeRole,
    #[serde(default)]
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTopology", into = "RawTopology")]
pub struct MeshTopology {
    nodes: Vec<Node>,
    edges: Vec<(NodeId, NodeId)>,
    services: Vec<ServiceSpec>,
    scalable_nodes: Vec<NodeId>,
    front: NodeId,
}

#[derive(Serialize, Deserialize)]
struct RawTopology {
    nodes: Vec<Node>,
    edges: Vec<(NodeId, NodeId)>,
    services: Vec<ServiceSpec>,
    scalable_nodes: Vec<NodeId>,
}

impl TryFrom<RawTopology> for MeshTopology {
    type Error = Error;

    fn try_from(raw: RawTopology) -> Result<Self> {
        MeshTopology::new(raw.nodes, raw.edges, raw.services, raw.scalable_nodes)
    }
}

impl From<MeshTopology> for RawTopology {
    fn from(t: MeshTopology) -> Self {
        RawTopology {
            nodes: t.nodes,
            edges: t.edges,
            services: t.services,
            scalable_nodes: t.scalable_nodes,
        }
    }
}

impl MeshTopology {
    pub fn new(
        nodes: Vec<Node>,
        edges: Vec<(NodeId, NodeId)>,
        services: Vec<ServiceSpec>,
        scalable_nodes: Vec<NodeId>,
    ) -> Result<Self> {
        let bad = |reason: String| Error::invalid("topology", reason);
        for (pos, node) in nodes.iter().enumerate() {
            if node.id != pos {
                return Err(bad(format!("node at position {pos} has id {}", node.id)));
            }
        }
        let fronts: Vec<_> = nodes.iter().filter(|n| n.role == NodeRole::Front).collect();
        let front = match fronts.as_slice() {
            [f] => f.id,
            _ => {
                return Err(bad(format!(
                    "expected one front node, found {}",
                    fronts.len()
                )))
            }
        };
        let n = nodes.len();
        let mut adjacency = vec![Vec::new(); n];
        for &(from, to) in &edges {
            if from >= n || to >= n || from == to {
                return Err(bad(format!(
                    "edge ({from}, {to}) is not a link between two nodes"
                )));
            }
            adjacency[from].push(to);
        }
        // Kahn's algorithm: a DAG drains completely.
        let mut indegree = vec![0usize; n];
        for &(_, to) in &edges {
            indegree[to] += 1;
        }
        if indegree[front] != 0 {
            return Err(bad("front node has incoming links".into()));
        }
        let mut queue: Vec<NodeId> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut drained = 0;
        while let Some(v) = queue.pop() {
            drained += 1;
            for &w in &adjacency[v] {
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    queue.push(w);
                }
            }
        }
        if drained != n {
            return Err(bad("graph contains a cycle".into()));
        }
        let mut reachable = vec![false; n];
        let mut stack = vec![front];
        while let Some(v) = stack.pop() {
            if !std::mem::replace(&mut reachable[v], true) {
                stack.extend(&adjacency[v]);
            }
        }
        if let Some(v) = reachable.iter().position(|r| !r) {
            return Err(bad(format!(
                "node {v} is not reachable from the front node"
            )));
        }

        if services.is_empty() {
            return Err(bad("no services".into()));
        }
        for svc in &services {
            if !(svc.delay_bound > 0.0 && svc.delay_bound.is_finite()) {
                return Err(bad(format!(
                    "service {} has delay bound {}",
                    svc.id, svc.delay_bound
                )));
            }
            if !(1..=2).contains(&svc.paths.len()) {
                return Err(bad(format!(
                    "service {} must have one or two paths",
                    svc.id
                )));
            }
            for path in &svc.paths {
                if path.first() != Some(&front) {
                    return Err(bad(format!(
                        "a path of service {} does not start at the front node",
                        svc.id
                    )));
                }
                let distinct: HashSet<_> = path.iter().collect();
                if distinct.len() != path.len() {
                    return Err(bad(format!("a path of service {} repeats a node", svc.id)));
                }
                for hop in path.windows(2) {
                    if !edges.contains(&(hop[0], hop[1])) {
                        return Err(bad(format!(
                            "service {} uses missing link ({}, {})",
                            svc.id, hop[0], hop[1]
                        )));
                    }
                }
            }
        }
        let distinct: HashSet<_> = scalable_nodes.iter().collect();
        if distinct.len() != scalable_nodes.len() || scalable_nodes.iter().any(|&v| v >= n) {
            return Err(bad("scalable nodes must be distinct existing nodes".into()));
        }

        Ok(MeshTopology {
            nodes,
            edges,
            services,
            scalable_nodes,
            front,
        })
    }

    /// The five-node mesh used by all shipped scenarios: a front node, two
    /// information nodes that both hold the databases (upper and lower
    /// path), and two compute nodes whose core counts are controllable.
    ///
    /// `service_ids` selects which of services 1, 2 (information) and
    /// 3 (compute) run on the mesh, in that order.
    pub fn testbed(service_ids: &[usize]) -> Result<Self> {
        let node = |id, role, name: &str| Node {
            id,
            role,
            name: name.to_string(),
        };
        let nodes = vec![
            node(0, NodeRole::Front, "front"),
            node(1, NodeRole::Backend, "info-upper"),
            node(2, NodeRole::Backend, "info-lower"),
            node(3, NodeRole::Backend, "compute-a"),
            node(4, NodeRole::Backend, "compute-b"),
        ];
        let edges = vec![(0, 1), (0, 2), (0, 3), (0, 4)];
        let services = service_ids
            .iter()
            .map(|&id| match id {
                1 | 2 => Ok(ServiceSpec {
                    id,
                    kind: ServiceKind::Information,
                    delay_bound: 0.10,
                    paths: vec![vec![0, 1], vec![0, 2]],
                }),
                3 => Ok(ServiceSpec {
                    id,
                    kind: ServiceKind::Compute,
                    delay_bound: 0.50,
                    paths: vec![vec![0, 3], vec![0, 4]],
                }),
                other => Err(Error::invalid(
                    "topology",
                    format!("unknown testbed service {other}"),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        MeshTopology::new(nodes, edges, services, vec![3, 4])
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn services(&self) -> &[ServiceSpec] {
        &self.services
    }

    pub fn scalable_nodes(&self) -> &[NodeId] {
        &self.scalable_nodes
    }

    pub fn front(&self) -> NodeId {
        self.front
    }

    pub fn service_count(&self) -> usize {
        self.services.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Position of `node` in the scalable node list, if its cores are controllable.
    pub fn scalable_index(&self, node: NodeId) -> Option<usize> {
        self.scalable_nodes.iter().position(|&v| v == node)
    }

    pub fn delay_bounds(&self) -> Vec<f64> {
        self.services.iter().map(|s| s.delay_bound).collect()
    }
}

/// Offered load per service, requests per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LoadVector(pub Vec<f64>);

impl LoadVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain(format!(
                "offered load {v} is not a non-negative rate"
            )));
        }
        Ok(LoadVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Admitted load after front-node blocking.
pub fn carried_load(offered: f64, blocking: f64) -> Result<f64> {
    if !(offered.is_finite() && offered >= 0.0) {
        return Err(Error::Domain(format!(
            "offered load {offered} must be non-negative"
        )));
    }
    if !(0.0..=1.0).contains(&blocking) {
        return Err(Error::Domain(format!(
            "blocking fraction {blocking} outside [0, 1]"
        )));
    }
    Ok(offered * (1.0 - blocking))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    /// Blocking fraction per service.
    pub b: Vec<f64>,
    /// Fraction of each service's requests sent to its first path.
    pub p: Vec<f64>,
    /// Cores per scalable node.
    pub c: Vec<u32>,
}

impl ControlAction {
    /// Carried load per service under this action's blocking rates.
    pub fn carried(&self, load: &LoadVector) -> Vec<f64> {
        load.0
            .iter()
            .zip(&self.b)
            .map(|(&l, &b)| l * (1.0 - b))
            .collect()
    }

    pub fn total_cores(&self) -> u32 {
        self.c.iter().sum()
    }
}

/// Cost of a service in cores: the allocation of every scalable node on any
/// of its paths, each node counted once.
pub fn service_cost(action: &ControlAction, service: &ServiceSpec, topology: &MeshTopology) -> u32 {
    service
        .nodes()
        .into_iter()
        .filter_map(|node| topology.scalable_index(node))
        .map(|k| action.c[k])
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Knobs {
    pub blocking: bool,
    pub routing: bool,
    pub scaling: bool,
}

/// Discrete levels for each control knob plus the values that inactive
/// knobs are held at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionGrid {
    pub b_levels: Vec<f64>,
    pub p_levels: Vec<f64>,
    pub c_levels: Vec<u32>,
    pub active: Knobs,
    pub b_default: f64,
    pub p_default: f64,
    pub c_default: u32,
}

fn strictly_ascending<T: PartialOrd>(levels: &[T]) -> bool {
    !levels.is_empty() && levels.windows(2).all(|w| w[0] < w[1])
}

impl ActionGrid {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::invalid("action grid", reason));
        if !strictly_ascending(&self.b_levels)
            || self.b_levels.iter().any(|b| !(0.0..=1.0).contains(b))
        {
            return bad("blocking levels must be non-empty, strictly ascending, within [0, 1]");
        }
        if !strictly_ascending(&self.p_levels)
            || self.p_levels.iter().any(|p| !(0.0..=1.0).contains(p))
        {
            return bad("routing levels must be non-empty, strictly ascending, within [0, 1]");
        }
        if !strictly_ascending(&self.c_levels) || self.c_levels[0] == 0 {
            return bad("core levels must be non-empty, strictly ascending, positive");
        }
        if !self.b_levels.contains(&self.b_default)
            || !self.p_levels.contains(&self.p_default)
            || !self.c_levels.contains(&self.c_default)
        {
            return bad("default knob values must lie on the grid");
        }
        Ok(())
    }

    /// Blocking and routing controlled, cores held at the largest level.
    pub fn admission_and_routing(
        b_levels: Vec<f64>,
        p_levels: Vec<f64>,
        c_levels: Vec<u32>,
    ) -> Self {
        let c_default = *c_levels.last().unwrap_or(&1);
        let p_default = middle(&p_levels);
        ActionGrid {
            b_default: b_levels.first().copied().unwrap_or(0.0),
            b_levels,
            p_default,
            p_levels,
            c_default,
            c_levels,
            active: Knobs {
                blocking: true,
                routing: true,
                scaling: false,
            },
        }
    }

    /// Routing and scaling controlled, blocking held at zero.
    pub fn routing_and_scaling(p_levels: Vec<f64>, c_levels: Vec<u32>) -> Self {
        let c_default = *c_levels.last().unwrap_or(&1);
        let p_default = middle(&p_levels);
        ActionGrid {
            b_levels: vec![0.0],
            b_default: 0.0,
            p_default,
            p_levels,
            c_default,
            c_levels,
            active: Knobs {
                blocking: false,
                routing: true,
                scaling: true,
            },
        }
    }
}

fn middle(levels: &[f64]) -> f64 {
    levels.get(levels.len() / 2).copied().unwrap_or(0.5)
}

/// The enumerated joint action set of a grid on a topology.
///
/// Order is lexicographic over `(b_1..b_m, p_1..p_m, c_1..c_k)` restricted
/// to active knobs, with the last coordinate varying fastest.
#[derive(Debug, Clone)]
pub struct ActionSpace {
    grid: ActionGrid,
    services: usize,
    scalable: usize,
    actions: Vec<ControlAction>,
    fingerprint: String,
}

impl ActionSpace {
    pub fn new(grid: &ActionGrid, topology: &MeshTopology) -> Result<Self> {
        grid.validate()?;
        let services = topology.service_count();
        let scalable = topology.scalable_nodes().len();
        let actions = enumerate_actions(grid, services, scalable);
        let fingerprint = grid_fingerprint(grid, services, scalable);
        Ok(ActionSpace {
            grid: grid.clone(),
            services,
            scalable,
            actions,
            fingerprint,
        })
    }

    pub fn grid(&self) -> &ActionGrid {
        &self.grid
    }

    pub fn actions(&self) -> &[ControlAction] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, index: usize) -> &ControlAction {
        &self.actions[index]
    }

    pub fn services(&self) -> usize {
        self.services
    }

    pub fn scalable(&self) -> usize {
        self.scalable
    }

    /// Hex digest identifying the grid and its dimensions.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Action with every knob at its default level.
    pub fn default_action(&self) -> ControlAction {
        ControlAction {
            b: vec![self.grid.b_default; self.services],
            p: vec![self.grid.p_default; self.services],
            c: vec![self.grid.c_default; self.scalable],
        }
    }

    /// Enumeration index of `action`, or `None` when it is off the grid
    /// (including an inactive knob away from its default).
    pub fn index_of(&self, action: &ControlAction) -> Option<usize> {
        if action.b.len() != self.services
            || action.p.len() != self.services
            || action.c.len() != self.scalable
        {
            return None;
        }
        let g = &self.grid;
        let mut index = 0usize;
        let mut push =
            |active: bool, levels_len: usize, pos: Option<usize>, default_ok: bool| -> Option<()> {
                if active {
                    index = index * levels_len + pos?;
                    Some(())
                } else if default_ok {
                    Some(())
                } else {
                    None
                }
            };
        for &b in &action.b {
            push(
                g.active.blocking,
                g.b_levels.len(),
                g.b_levels.iter().position(|&x| x == b),
                b == g.b_default,
            )?;
        }
        for &p in &action.p {
            push(
                g.active.routing,
                g.p_levels.len(),
                g.p_levels.iter().position(|&x| x == p),
                p == g.p_default,
            )?;
        }
        for &c in &action.c {
            push(
                g.active.scaling,
                g.c_levels.len(),
                g.c_levels.iter().position(|&x| x == c),
                c == g.c_default,
            )?;
        }
        Some(index)
    }

    pub fn contains(&self, action: &ControlAction) -> bool {
        self.index_of(action).is_some()
    }
}

/// Full Cartesian product of the active knobs for `services` services and
/// `scalable` controllable nodes; inactive knobs sit at their defaults.
pub fn enumerate_actions(
    grid: &ActionGrid,
    services: usize,
    scalable: usize,
) -> Vec<ControlAction> {
    let b_choices: Vec<f64> = if grid.active.blocking {
        grid.b_levels.clone()
    } else {
        vec![grid.b_default]
    };
    let p_choices: Vec<f64> = if grid.active.routing {
        grid.p_levels.clone()
    } else {
        vec![grid.p_default]
    };
    let c_choices: Vec<u32> = if grid.active.scaling {
        grid.c_levels.clone()
    } else {
        vec![grid.c_default]
    };

    let mut radices = Vec::with_capacity(2 * services + scalable);
    radices.extend(std::iter::repeat_n(b_choices.len(), services));
    radices.extend(std::iter::repeat_n(p_choices.len(), services));
    radices.extend(std::iter::repeat_n(c_choices.len(), scalable));
    let total: usize = radices.iter().product();

    let mut digits = vec![0usize; radices.len()];
    let mut actions = Vec::with_capacity(total);
    for _ in 0..total {
        actions.push(ControlAction {
            b: digits[..services].iter().map(|&d| b_choices[d]).collect(),
            p: digits[services..2 * services]
                .iter()
                .map(|&d| p_choices[d])
                .collect(),
            c: digits[2 * services..]
                .iter()
                .map(|&d| c_choices[d])
                .collect(),
        });
        for pos in (0..digits.len()).rev() {
            digits[pos] += 1;
            if digits[pos] < radices[pos] {
                break;
            }
            digits[pos] = 0;
        }
    }
    actions
}

fn grid_fingerprint(grid: &ActionGrid, services: usize, scalable: usize) -> String {
    let canonical = serde_json::json!({
        "grid": grid,
        "services": services,
        "scalable": scalable,
    });
    hex_digest(canonical.to_string().as_bytes())
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Metrics of one service over one time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceObservation {
    /// Offered load, req/s.
    pub offered: f64,
    /// Carried load, req/s.
    pub carried: f64,
    /// Mean response time, s.
    pub delay_mean: f64,
    /// Response time variance, s².
    pub delay_var: f64,
}

impl ServiceObservation {
    pub fn is_consistent(&self) -> bool {
        self.offered >= 0.0
            && self.carried >= 0.0
            && self.carried <= self.offered
            && self.delay_mean >= 0.0
            && self.delay_var >= 0.0
            && self.delay_mean.is_finite()
            && self.delay_var.is_finite()
    }
}

/// Agent-visible state: offered load and last response time per service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub loads: LoadVector,
    pub delays: Vec<f64>,
}

/// One `(s_t, a_t, s_{t+1})` sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: u64,
    pub state: SystemState,
    pub action: ControlAction,
    pub next: Vec<ServiceObservation>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_level_grid() -> ActionGrid {
        ActionGrid::admission_and_routing(vec![0.0, 0.5], vec![0.0, 1.0], vec![4])
    }

    #[test]
    fn carried_load_identity() {
        assert_eq!(carried_load(20.0, 0.25).unwrap(), 15.0);
        assert_eq!(carried_load(20.0, 0.0).unwrap(), 20.0);
        assert_eq!(carried_load(5.0, 1.0).unwrap(), 0.0);
        assert!(matches!(carried_load(5.0, 1.5), Err(Error::Domain(_))));
        assert!(matches!(carried_load(-1.0, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn enumeration_sizes() {
        let topo = MeshTopology::testbed(&[1, 2]).unwrap();
        let space = ActionSpace::new(&two_level_grid(), &topo).unwrap();
        assert_eq!(space.len(), 16);

        let singleton = ActionGrid::admission_and_routing(vec![0.0], vec![0.5], vec![2]);
        assert_eq!(ActionSpace::new(&singleton, &topo).unwrap().len(), 1);

        let topo4 = MeshTopology::testbed(&[2, 3]).unwrap();
        let grid4 =
            ActionGrid::routing_and_scaling(vec![0.0, 0.25, 0.5, 0.75, 1.0], vec![1, 2, 3, 4]);
        let space4 = ActionSpace::new(&grid4, &topo4).unwrap();
        assert_eq!(space4.len(), 400);
        assert!(space4.actions().iter().all(|a| a.b == vec![0.0, 0.0]));
    }

    #[test]
    fn enumeration_is_lexicographic_and_indexable() {
        let topo = MeshTopology::testbed(&[1, 2]).unwrap();
        let space = ActionSpace::new(&two_level_grid(), &topo).unwrap();
        let first = space.get(0);
        assert_eq!(first.b, vec![0.0, 0.0]);
        assert_eq!(first.p, vec![0.0, 0.0]);
        assert_eq!(space.get(1).p, vec![0.0, 1.0]);
        assert_eq!(space.get(15).b, vec![0.5, 0.5]);
        for (k, action) in space.actions().iter().enumerate() {
            assert_eq!(space.index_of(action), Some(k));
        }
        let mut off = space.get(3).clone();
        off.b[0] = 0.25;
        assert_eq!(space.index_of(&off), None);
        let mut inactive = space.get(3).clone();
        inactive.c[0] = 3;
        assert!(!space.contains(&inactive));
    }

    #[test]
    fn cost_sums_scalable_nodes_on_paths() {
        let topo = MeshTopology::testbed(&[2, 3]).unwrap();
        let compute = &topo.services()[1];
        let info = &topo.services()[0];
        let action = |c: Vec<u32>| ControlAction {
            b: vec![0.0; 2],
            p: vec![0.5; 2],
            c,
        };
        assert_eq!(service_cost(&action(vec![2, 3]), compute, &topo), 5);
        assert_eq!(service_cost(&action(vec![1, 1]), compute, &topo), 2);
        assert_eq!(service_cost(&action(vec![2, 3]), info, &topo), 0);
    }

    #[test]
    fn topology_validation() {
        let topo = MeshTopology::testbed(&[1, 2]).unwrap();
        let mut services = topo.services().to_vec();
        services[0].paths[0] = vec![1, 0];
        let err = MeshTopology::new(
            topo.nodes().to_vec(),
            topo.edges().to_vec(),
            services,
            vec![3, 4],
        );
        assert!(err.is_err());

        let mut edges = topo.edges().to_vec();
        edges.push((1, 0));
        let err = MeshTopology::new(
            topo.nodes().to_vec(),
            edges,
            topo.services().to_vec(),
            vec![3, 4],
        );
        assert!(err.is_err(), "cycle must be rejected");

        let mut services = topo.services().to_vec();
        services[1].paths[1] = vec![0, 2, 2];
        let err = MeshTopology::new(
            topo.nodes().to_vec(),
            topo.edges().to_vec(),
            services,
            vec![3, 4],
        );
        assert!(err.is_err(), "non-simple path must be rejected");

        let json = serde_json::to_string(&topo).unwrap();
        let back: MeshTopology = serde_json::from_str(&json).unwrap();
        assert_eq!(back, topo);
    }

    #[test]
    fn grid_validation() {
        let mut grid = two_level_grid();
        grid.b_levels = vec![0.5, 0.0];
        assert!(grid.validate().is_err());
        let mut grid = two_level_grid();
        grid.c_levels = vec![0, 1];
        assert!(grid.validate().is_err());
        let mut grid = two_level_grid();
        grid.p_default = 0.3;
        assert!(grid.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn carried_load_bounded(l in 0.0f64..1e4, b in 0.0f64..=1.0) {
                let lc = carried_load(l, b).unwrap();
                prop_assert!(lc >= 0.0 && lc <= l);
                if b == 0.0 { prop_assert_eq!(lc, l); }
                if l > 0.0 && b > 0.0 { prop_assert!(lc < l); }
            }

            #[test]
            fn enumeration_deterministic_and_on_grid(nb in 1usize..4, np in 1usize..4, nc in 1usize..4, scaling: bool) {
                let b_levels: Vec<f64> = (0..nb).map(|k| k as f64 / 4.0).collect();
                let p_levels: Vec<f64> = (0..np).map(|k| k as f64 / 3.0).collect();
                let c_levels: Vec<u32> = (1..=nc as u32).collect();
                let mut grid = ActionGrid::admission_and_routing(b_levels, p_levels, c_levels);
                grid.active.scaling = scaling;
                let topo = MeshTopology::testbed(&[1, 2]).unwrap();
                let a = ActionSpace::new(&grid, &topo).unwrap();
                let b = ActionSpace::new(&grid, &topo).unwrap();
                prop_assert_eq!(a.actions(), b.actions());
                let expected = nb.pow(2) * np.pow(2) * if scaling { nc.pow(2) } else { 1 };
                prop_assert_eq!(a.len(), expected);
                for action in a.actions() {
                    prop_assert!(a.contains(action));
                }
            }
        }
    }
}
