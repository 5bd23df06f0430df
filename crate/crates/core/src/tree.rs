//! Finite non-recombining scenario trees.
//!
//! A node stands for a path prefix `ω|[0, t_k]`: its state history is the
//! sequence of states from the root down to it. Node ids are assigned in
//! breadth-first order, so every parent id is smaller than its children's
//! ids and the nodes of one depth form a contiguous id range. A backward
//! sweep over depths therefore touches every node exactly once.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Default cap on the number of tree nodes.
pub const DEFAULT_MAX_NODES: usize = 2_000_000;

/// Node cap, honouring the `RDG_MAX_NODES` override.
pub fn max_nodes_from_env() -> usize {
    std::env::var("RDG_MAX_NODES")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_MAX_NODES)
}

/// Uniform time grid `t_k = k T / N`, `k = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    #[serde(rename = "T")]
    horizon: f64,
    #[serde(rename = "N")]
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("steps must be at least 1".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Step size Δ = T / N.
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub depth: usize,
    pub state: Vec<f64>,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    grid: TimeGrid,
    nodes: Vec<Node>,
    depth_ranges: Vec<Range<usize>>,
}

impl ScenarioTree {
    /// Builds a tree breadth-first. `branching(depth, path)` receives the
    /// depth of the node being expanded and its state history (root first)
    /// and returns the child states in emission order.
    pub fn build<F>(grid: TimeGrid, dim: usize, max_nodes: usize, mut branching: F) -> Result<Self>
    where
        F: FnMut(usize, &[&[f64]]) -> Vec<Vec<f64>>,
    {
        if dim == 0 {
            return Err(Error::InvalidTree(
                "state dimension must be at least 1".into(),
            ));
        }
        if max_nodes == 0 {
            return Err(Error::SizeLimit { cap: max_nodes });
        }
        let mut nodes = vec![Node {
            id: 0,
            depth: 0,
            state: vec![0.0; dim],
            parent: None,
            children: Vec::new(),
        }];
        let mut frontier = 0..1;
        for depth in 0..grid.steps() {
            let next_start = nodes.len();
            for id in frontier.clone() {
                let child_states = {
                    let path = path_states(&nodes, id);
                    branching(depth, &path)
                };
                if child_states.is_empty() {
                    return Err(Error::EmptyBranching { node: id });
                }
                if nodes.len() + child_states.len() > max_nodes {
                    return Err(Error::SizeLimit { cap: max_nodes });
                }
                for state in child_states {
                    if state.len() != dim {
                        return Err(Error::InvalidTree(format!(
                            "child of node {id} has dimension {}, expected {dim}",
                            state.len()
                        )));
                    }
                    let child = nodes.len();
                    nodes.push(Node {
                        id: child,
                        depth: depth + 1,
                        state,
                        parent: Some(id),
                        children: Vec::new(),
                    });
                    nodes[id].children.push(child);
                }
            }
            frontier = next_start..nodes.len();
        }
        Self::from_nodes(grid, nodes)
    }

    /// Validates an explicit node list (e.g. one read from a file).
    pub fn from_nodes(grid: TimeGrid, nodes: Vec<Node>) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidTree(msg));
        let Some(root) = nodes.first() else {
            return invalid("tree has no nodes".into());
        };
        if root.depth != 0 || root.parent.is_some() {
            return invalid("node 0 must be the root (depth 0, no parent)".into());
        }
        if root.state.is_empty() || root.state.iter().any(|&x| x != 0.0) {
            return invalid("root state must be the zero vector".into());
        }
        let dim = root.state.len();
        let n = grid.steps();
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return invalid(format!(
                    "node at position {i} has id {}; ids must be dense and ordered",
                    node.id
                ));
            }
            if node.state.len() != dim {
                return invalid(format!(
                    "node {i} has state dimension {}, expected {dim}",
                    node.state.len()
                ));
            }
            if node.state.iter().any(|x| !x.is_finite()) {
                return invalid(format!("node {i} has a non-finite state"));
            }
            if node.depth > n {
                return invalid(format!("node {i} has depth {} beyond N = {n}", node.depth));
            }
            if i > 0 {
                let Some(p) = node.parent else {
                    return invalid(format!("node {i} is a second root"));
                };
                if p >= i {
                    return invalid(format!(
                        "node {i} has parent {p}; parents must precede children"
                    ));
                }
                if nodes[p].depth + 1 != node.depth {
                    return invalid(format!(
                        "node {i} has depth {}, parent depth is {}",
                        node.depth, nodes[p].depth
                    ));
                }
                if !nodes[p].children.contains(&i) {
                    return invalid(format!("node {i} is not listed among the children of {p}"));
                }
                if nodes[i - 1].depth > node.depth {
                    return invalid(format!("node {i} breaks the depth ordering"));
                }
            }
            if node.depth < n && node.children.is_empty() {
                return Err(Error::EmptyBranching { node: i });
            }
            if node.depth == n && !node.children.is_empty() {
                return invalid(format!("node {i} at depth N has children"));
            }
            let mut seen = std::collections::BTreeSet::new();
            for &c in &node.children {
                if c >= nodes.len() {
                    return invalid(format!("node {i} lists unknown child {c}"));
                }
                if nodes[c].parent != Some(i) {
                    return invalid(format!(
                        "node {i} lists {c} as a child, but its parent differs"
                    ));
                }
                if !seen.insert(c) {
                    return invalid(format!("node {i} lists child {c} twice"));
                }
            }
        }
        let mut depth_ranges = vec![0..0; n + 1];
        let mut start = 0;
        for (k, range) in depth_ranges.iter_mut().enumerate() {
            let end = start + nodes[start..].iter().take_while(|nd| nd.depth == k).count();
            *range = start..end;
            start = end;
        }
        Ok(Self {
            grid,
            nodes,
            depth_ranges,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].state.len()
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id).ok_or(Error::UnknownNode(id))
    }

    pub fn depth(&self, id: NodeId) -> usize {
        self.nodes[id].depth
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id].children
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    pub fn state(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].state
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id].depth == self.steps()
    }

    /// Id range of the nodes at depth `k`.
    pub fn depth_range(&self, k: usize) -> Range<usize> {
        self.depth_ranges[k].clone()
    }

    pub fn nodes_at_depth(&self, k: usize) -> Result<Vec<NodeId>> {
        if k > self.steps() {
            return Err(Error::DepthOutOfRange {
                depth: k,
                steps: self.steps(),
            });
        }
        Ok(self.depth_range(k).collect())
    }

    pub fn leaves(&self) -> Range<usize> {
        self.depth_range(self.steps())
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }

    /// Non-leaf node ids in increasing order.
    pub fn decision_nodes(&self) -> Range<usize> {
        0..self.leaves().start
    }

    /// State history from the root to `id` (length `depth + 1`).
    pub fn path_of(&self, id: NodeId) -> Result<Vec<&[f64]>> {
        self.node(id)?;
        Ok(path_states(&self.nodes, id))
    }

    /// Node ids from the root to `id`, inclusive.
    pub fn path_nodes(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = Vec::with_capacity(self.nodes[id].depth + 1);
        let mut cur = Some(id);
        while let Some(c) = cur {
            path.push(c);
            cur = self.nodes[c].parent;
        }
        path.reverse();
        path
    }

    /// The ancestor of `id` at depth `k` (`id` itself when `k` is its depth).
    pub fn ancestor_at_depth(&self, id: NodeId, k: usize) -> Option<NodeId> {
        let mut cur = id;
        if self.nodes[cur].depth < k {
            return None;
        }
        while self.nodes[cur].depth > k {
            cur = self.nodes[cur].parent?;
        }
        Some(cur)
    }

    pub fn to_doc(&self) -> TreeDoc {
        TreeDoc {
            grid: self.grid,
            nodes: self.nodes.clone(),
        }
    }

    pub fn from_doc(doc: TreeDoc) -> Result<Self> {
        let grid = TimeGrid::new(doc.grid.horizon, doc.grid.steps)?;
        Self::from_nodes(grid, doc.nodes)
    }
}

fn path_states(nodes: &[Node], id: NodeId) -> Vec<&[f64]> {
    let mut path = Vec::with_capacity(nodes[id].depth + 1);
    let mut cur = Some(id);
    while let Some(c) = cur {
        path.push(nodes[c].state.as_slice());
        cur = nodes[c].parent;
    }
    path.reverse();
    path
}

/// Serialized form: `{"grid": {"T", "N"}, "nodes": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDoc {
    pub grid: TimeGrid,
    pub nodes: Vec<Node>,
}

/// Additive branching: every node gets the children `state + inc` for each
/// increment in `increments` (one-dimensional).
pub fn additive_branching(increments: Vec<f64>) -> impl FnMut(usize, &[&[f64]]) -> Vec<Vec<f64>> {
    move |_, path| {
        let last = path[path.len() - 1][0];
        increments.iter().map(|inc| vec![last + inc]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(n: usize) -> ScenarioTree {
        let grid = TimeGrid::new(1.0, n).unwrap();
        ScenarioTree::build(
            grid,
            1,
            DEFAULT_MAX_NODES,
            additive_branching(vec![1.0, -1.0]),
        )
        .unwrap()
    }

    #[test]
    fn smallest_binary_tree() {
        let t = binary(1);
        assert_eq!(t.len(), 3);
        assert_eq!(t.state(1), &[1.0]);
        assert_eq!(t.state(2), &[-1.0]);
        assert_eq!(t.children(0), &[1, 2]);
    }

    #[test]
    fn node_counts() {
        let t = binary(2);
        assert_eq!(t.len(), 7);
        assert_eq!(t.leaf_count(), 4);
        assert_eq!(t.nodes_at_depth(2).unwrap(), vec![3, 4, 5, 6]);

        let grid = TimeGrid::new(1.0, 3).unwrap();
        let t3 = ScenarioTree::build(
            grid,
            1,
            DEFAULT_MAX_NODES,
            additive_branching(vec![1.0, 0.0, -1.0]),
        )
        .unwrap();
        // 1 + 3 + 9 + 27
        assert_eq!(t3.len(), 40);
        assert_eq!(t3.leaf_count(), 27);
        let total: usize = (0..=3).map(|k| t3.nodes_at_depth(k).unwrap().len()).sum();
        assert_eq!(total, t3.len());
    }

    #[test]
    fn paths_and_prefixes() {
        let t = binary(2);
        assert_eq!(t.path_of(0).unwrap(), vec![&[0.0][..]]);
        assert_eq!(
            t.path_of(3).unwrap(),
            vec![&[0.0][..], &[1.0][..], &[2.0][..]]
        );
        for id in 1..t.len() {
            let p = t.parent(id).unwrap();
            let mut expect = t.path_of(p).unwrap();
            expect.push(t.state(id));
            assert_eq!(t.path_of(id).unwrap(), expect);
            assert_eq!(t.depth(id), t.depth(p) + 1);
            assert!(p < id);
        }
        assert_eq!(t.path_of(99), Err(Error::UnknownNode(99)));
    }

    #[test]
    fn depth_errors() {
        let t = binary(2);
        assert_eq!(t.nodes_at_depth(0).unwrap(), vec![0]);
        assert!(matches!(
            t.nodes_at_depth(3),
            Err(Error::DepthOutOfRange { depth: 3, steps: 2 })
        ));
    }

    #[test]
    fn build_errors() {
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let r = ScenarioTree::build(grid, 1, 100, |_, _| Vec::new());
        assert_eq!(r, Err(Error::EmptyBranching { node: 0 }));
        let r = ScenarioTree::build(grid, 1, 5, additive_branching(vec![1.0, -1.0]));
        assert_eq!(r, Err(Error::SizeLimit { cap: 5 }));
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(-1.0, 2).is_err());
    }

    #[test]
    fn grid_times() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert_eq!(g.times(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.dt(), 0.25);
    }

    #[test]
    fn rejects_inconsistent_nodes() {
        let t = binary(1);
        let mut doc = t.to_doc();
        doc.nodes[2].parent = Some(1);
        assert!(ScenarioTree::from_doc(doc).is_err());

        let mut doc = t.to_doc();
        doc.nodes[0].state = vec![1.0];
        assert!(ScenarioTree::from_doc(doc).is_err());

        let mut doc = t.to_doc();
        doc.nodes[0].children = vec![1, 1];
        assert!(ScenarioTree::from_doc(doc).is_err());
    }

    #[test]
    fn doc_round_trip_is_exact() {
        let grid = TimeGrid::new(0.7, 2).unwrap();
        let t =
            ScenarioTree::build(grid, 1, 100, additive_branching(vec![0.1, -1.0 / 3.0])).unwrap();
        let text = serde_json::to_string(&t.to_doc()).unwrap();
        let back = ScenarioTree::from_doc(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
