//! Rectangular prior families on a scenario tree.
//!
//! Every decision node carries a finite menu of one-step kernels over its
//! children. Choosing one kernel per node (a [`Policy`]) fixes one prior;
//! the family of all policies is closed under node-by-node swaps, which is
//! what makes the inf-expectation [`one_step_inf_expectation`] satisfy the
//! tower property.

use crate::error::{Error, Result};
use crate::tree::{NodeId, ScenarioTree};

/// Tolerance on kernel and measure normalization.
pub const MASS_TOL: f64 = 1e-12;

/// One-step law induced by one control value: a weight per child, in the
/// node's child order.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub label: f64,
    pub weights: Vec<f64>,
}

impl Kernel {
    pub fn new(label: f64, weights: Vec<f64>) -> Self {
        Self { label, weights }
    }

    pub fn uniform(label: f64, arity: usize) -> Self {
        Self::new(label, vec![1.0 / arity as f64; arity])
    }

    pub fn expectation(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMenu {
    menus: Vec<Vec<Kernel>>,
}

impl KernelMenu {
    /// `menus[id]` is the menu of node `id`; leaf entries must be empty.
    pub fn new(tree: &ScenarioTree, menus: Vec<Vec<Kernel>>) -> Result<Self> {
        if menus.len() != tree.len() {
            return Err(Error::validation(
                "ambiguity.menus",
                format!("expected {} menus, got {}", tree.len(), menus.len()),
            ));
        }
        for (id, menu) in menus.iter().enumerate() {
            if tree.is_leaf(id) {
                if !menu.is_empty() {
                    return Err(Error::InvalidKernel {
                        node: id,
                        reason: "leaves take no kernels".into(),
                    });
                }
                continue;
            }
            if menu.is_empty() {
                return Err(Error::EmptyMenu { node: id });
            }
            let arity = tree.children(id).len();
            for k in menu {
                if k.weights.len() != arity {
                    return Err(Error::InvalidKernel {
                        node: id,
                        reason: format!("{} weights for {arity} children", k.weights.len()),
                    });
                }
                if k.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err(Error::InvalidKernel {
                        node: id,
                        reason: "weights must be finite and nonnegative".into(),
                    });
                }
                let total: f64 = k.weights.iter().sum();
                if (total - 1.0).abs() > MASS_TOL {
                    return Err(Error::InvalidKernel {
                        node: id,
                        reason: format!("weights sum to {total}"),
                    });
                }
            }
        }
        Ok(Self { menus })
    }

    /// A single uniform kernel at every decision node.
    pub fn uniform(tree: &ScenarioTree) -> Self {
        let menus = (0..tree.len())
            .map(|id| {
                if tree.is_leaf(id) {
                    Vec::new()
                } else {
                    vec![Kernel::uniform(0.0, tree.children(id).len())]
                }
            })
            .collect();
        Self { menus }
    }

    pub fn at(&self, node: NodeId) -> &[Kernel] {
        &self.menus[node]
    }

    pub fn menu_sizes(&self) -> Vec<usize> {
        self.menus.iter().map(Vec::len).collect()
    }

    pub fn menus(&self) -> &[Vec<Kernel>] {
        &self.menus
    }
}

/// One prior: a kernel index for every decision node. Entries at leaves are
/// ignored and kept at zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Policy {
    choice: Vec<usize>,
}

impl Policy {
    pub fn new(tree: &ScenarioTree, menu: &KernelMenu, choice: Vec<usize>) -> Result<Self> {
        let p = Self { choice };
        p.check(tree, menu)?;
        Ok(p)
    }

    pub fn zeros(tree: &ScenarioTree) -> Self {
        Self {
            choice: vec![0; tree.len()],
        }
    }

    /// From a node -> kernel-index map that must cover every decision node.
    pub fn from_map(
        tree: &ScenarioTree,
        menu: &KernelMenu,
        map: &std::collections::BTreeMap<NodeId, usize>,
    ) -> Result<Self> {
        let mut choice = vec![0; tree.len()];
        for id in tree.decision_nodes() {
            choice[id] = *map.get(&id).ok_or(Error::IncompletePolicy { node: id })?;
        }
        Self::new(tree, menu, choice)
    }

    pub fn check(&self, tree: &ScenarioTree, menu: &KernelMenu) -> Result<()> {
        if self.choice.len() != tree.len() {
            let node = self.choice.len().min(tree.len().saturating_sub(1));
            return Err(Error::IncompletePolicy { node });
        }
        for id in tree.decision_nodes() {
            if self.choice[id] >= menu.at(id).len() {
                return Err(Error::IncompletePolicy { node: id });
            }
        }
        Ok(())
    }

    pub fn kernel(&self, node: NodeId) -> usize {
        self.choice[node]
    }

    pub fn set(&mut self, node: NodeId, kernel: usize) {
        self.choice[node] = kernel;
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.choice
    }
}

/// Probability mass of every node under one policy; the leaf entries are
/// the measure on paths.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeMeasure {
    pub mass: Vec<f64>,
}

impl TreeMeasure {
    pub fn leaf_probs<'a>(&'a self, tree: &ScenarioTree) -> &'a [f64] {
        &self.mass[tree.leaves()]
    }

    pub fn support(&self, tree: &ScenarioTree) -> Vec<NodeId> {
        tree.leaves().filter(|&l| self.mass[l] > 0.0).collect()
    }
}

pub fn measure_of(tree: &ScenarioTree, menu: &KernelMenu, policy: &Policy) -> Result<TreeMeasure> {
    policy.check(tree, menu)?;
    let mut mass = vec![0.0; tree.len()];
    mass[tree.root()] = 1.0;
    for id in tree.decision_nodes() {
        let kernel = &menu.at(id)[policy.kernel(id)];
        for (&c, w) in tree.children(id).iter().zip(&kernel.weights) {
            mass[c] = mass[id] * w;
        }
    }
    Ok(TreeMeasure { mass })
}

/// `min` over the menu of the kernel expectation of `child_values`, with the
/// lowest minimizing index.
pub fn one_step_inf_expectation(menu: &[Kernel], child_values: &[f64]) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, k) in menu.iter().enumerate() {
        if k.weights.len() != child_values.len() {
            return Err(Error::InvalidKernel {
                node: usize::MAX,
                reason: format!(
                    "{} weights for {} values",
                    k.weights.len(),
                    child_values.len()
                ),
            });
        }
        let e = k.expectation(child_values);
        match best {
            Some((b, _)) if e >= b => {}
            _ => best = Some((e, i)),
        }
    }
    best.ok_or(Error::EmptyMenu { node: usize::MAX })
}

/// Backward iteration of the one-step inf-expectation from leaf values
/// (given in leaf id order). Returns the per-node values and minimizers.
pub fn inf_expectation_backward(
    tree: &ScenarioTree,
    menu: &KernelMenu,
    leaf_values: &[f64],
) -> Result<(Vec<f64>, Vec<usize>)> {
    check_leaf_values(tree, leaf_values)?;
    let mut values = vec![0.0; tree.len()];
    let mut argmin = vec![0; tree.len()];
    values[tree.leaves()].copy_from_slice(leaf_values);
    let mut scratch = Vec::new();
    for id in tree.decision_nodes().rev() {
        scratch.clear();
        scratch.extend(tree.children(id).iter().map(|&c| values[c]));
        let (v, k) = one_step_inf_expectation(menu.at(id), &scratch).map_err(|e| at_node(e, id))?;
        values[id] = v;
        argmin[id] = k;
    }
    Ok((values, argmin))
}

pub(crate) fn at_node(e: Error, node: NodeId) -> Error {
    match e {
        Error::EmptyMenu { .. } => Error::EmptyMenu { node },
        Error::InvalidKernel { reason, .. } => Error::InvalidKernel { node, reason },
        other => other,
    }
}

fn check_leaf_values(tree: &ScenarioTree, leaf_values: &[f64]) -> Result<()> {
    if leaf_values.len() != tree.leaf_count() {
        return Err(Error::validation(
            "leaf_values",
            format!(
                "expected {} leaf values, got {}",
                tree.leaf_count(),
                leaf_values.len()
            ),
        ));
    }
    Ok(())
}

/// `E_P[ξ]` for leaf values given in leaf id order.
pub fn policy_expectation(
    tree: &ScenarioTree,
    menu: &KernelMenu,
    policy: &Policy,
    leaf_values: &[f64],
) -> Result<f64> {
    check_leaf_values(tree, leaf_values)?;
    let m = measure_of(tree, menu, policy)?;
    Ok(m.leaf_probs(tree)
        .iter()
        .zip(leaf_values)
        .map(|(p, v)| p * v)
        .sum())
}

/// Default cap on the number of enumerated policies.
pub const DEFAULT_MAX_POLICIES: u128 = 1_000_000;

/// All policies of a menu, indexed in lexicographic order of the vector
/// `(kernel at node 0, kernel at node 1, ...)`.
#[derive(Debug, Clone)]
pub struct PolicySpace {
    radices: Vec<usize>,
    decision: Vec<NodeId>,
    node_count: usize,
    count: u64,
}

pub fn enumerate_policies(
    tree: &ScenarioTree,
    menu: &KernelMenu,
    cap: u128,
) -> Result<PolicySpace> {
    let decision: Vec<NodeId> = tree.decision_nodes().collect();
    let radices: Vec<usize> = decision.iter().map(|&id| menu.at(id).len()).collect();
    let mut count: u128 = 1;
    for &r in &radices {
        count = count.saturating_mul(r as u128);
    }
    if count > cap {
        return Err(Error::EnumerationTooLarge {
            what: "policies",
            count,
            cap,
        });
    }
    Ok(PolicySpace {
        radices,
        decision,
        node_count: tree.len(),
        count: count as u64,
    })
}

impl PolicySpace {
    pub fn count(&self) -> u64 {
        self.count
    }

    /// The policy with lexicographic rank `index`.
    pub fn nth(&self, mut index: u64) -> Policy {
        let mut choice = vec![0; self.node_count];
        for (pos, &id) in self.decision.iter().enumerate().rev() {
            let r = self.radices[pos] as u64;
            choice[id] = (index % r) as usize;
            index /= r;
        }
        Policy { choice }
    }

    /// Policies with ranks in `range`, in order. Disjoint ranges can be
    /// consumed on different workers.
    pub fn iter_range(&self, range: std::ops::Range<u64>) -> PolicyIter<'_> {
        let end = range.end.min(self.count);
        let current = (range.start < end).then(|| self.nth(range.start));
        PolicyIter {
            space: self,
            current,
            remaining: end.saturating_sub(range.start),
        }
    }

    pub fn iter(&self) -> PolicyIter<'_> {
        self.iter_range(0..self.count)
    }
}

pub struct PolicyIter<'a> {
    space: &'a PolicySpace,
    current: Option<Policy>,
    remaining: u64,
}

impl Iterator for PolicyIter<'_> {
    type Item = Policy;

    fn next(&mut self) -> Option<Policy> {
        if self.remaining == 0 {
            return None;
        }
        let out = self.current.clone()?;
        self.remaining -= 1;
        if self.remaining > 0 {
            let cur = self.current.as_mut().expect("present");
            // odometer: last decision node turns fastest
            for (pos, &id) in self.space.decision.iter().enumerate().rev() {
                cur.choice[id] += 1;
                if cur.choice[id] < self.space.radices[pos] {
                    break;
                }
                cur.choice[id] = 0;
            }
        }
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.remaining as usize;
        (n, Some(n))
    }
}

/// Replaces `base`'s kernels below each node of `A_j` by those of `P_j`.
/// The sets must be disjoint subsets of the depth-`s` nodes.
pub fn paste_policies(
    tree: &ScenarioTree,
    base: &Policy,
    patches: &[(Vec<NodeId>, Policy)],
    s: usize,
) -> Result<Policy> {
    if s > tree.steps() {
        return Err(Error::DepthOutOfRange {
            depth: s,
            steps: tree.steps(),
        });
    }
    let mut owner: Vec<Option<usize>> = vec![None; tree.len()];
    for (j, (set, patch)) in patches.iter().enumerate() {
        if patch.choice.len() != tree.len() {
            return Err(Error::IncompletePolicy {
                node: patch.choice.len(),
            });
        }
        for &a in set {
            let node = tree.node(a)?;
            if node.depth != s {
                return Err(Error::DepthMismatch {
                    node: a,
                    expected: s,
                    found: node.depth,
                });
            }
            if owner[a].is_some() {
                return Err(Error::OverlappingPartition { node: a });
            }
            owner[a] = Some(j);
        }
    }
    let mut out = base.clone();
    // ids are breadth-first, so an ancestor's owner is known before its descendants
    for id in tree.depth_range(s).start..tree.len() {
        if tree.depth(id) > s {
            owner[id] = owner[tree.parent(id).expect("non-root")];
        }
        if let Some(j) = owner[id] {
            out.choice[id] = patches[j].1.choice[id];
        }
    }
    Ok(out)
}

/// True iff the two induced measures have disjoint leaf supports.
pub fn mutually_singular(
    tree: &ScenarioTree,
    menu: &KernelMenu,
    p1: &Policy,
    p2: &Policy,
) -> Result<bool> {
    let m1 = measure_of(tree, menu, p1)?;
    let m2 = measure_of(tree, menu, p2)?;
    Ok(tree
        .leaves()
        .all(|l| m1.mass[l] == 0.0 || m2.mass[l] == 0.0))
}
