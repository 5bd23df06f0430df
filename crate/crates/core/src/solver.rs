//! Backward induction for the robust Dynkin game.
//!
//! At a decision node with continuation `c = min_kernel E[v(child)] + g Δ`
//! the value is the doubly reflected `v = min(U, max(L, c))`; at depths
//! where the maximizer may not stop (coarse stopping grids) it is
//! `v = min(U, c)`. Leaves carry `v = L`.

use rayon::prelude::*;

use crate::ambiguity::{at_node, one_step_inf_expectation, KernelMenu, Policy};
use crate::error::{Error, Result};
use crate::payoff::Payoffs;
use crate::tree::{NodeId, ScenarioTree};

/// Tolerance for stopping-region membership.
pub const REGION_TOL: f64 = 1e-12;
/// Default slack for the submartingale check.
pub const SUBMART_TOL: f64 = 1e-9;

const PAR_THRESHOLD: usize = 4096;

/// Resolution of the maximizer's stopping grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridLevel {
    Dyadic(u32),
    Full,
}

/// Depths at which the maximizer may stop on the dyadic grid of level `n`.
///
/// A dyadic time `i 2^-n T` is realized at the first tree time at or after
/// it, so depth `k >= 1` is eligible iff `((k-1)T/N, kT/N]` holds a dyadic
/// time. Depth 0 is always eligible. In integer terms: some multiple of `N`
/// lies in `((k-1) 2^n, k 2^n]`.
pub fn grid_eligible_depths(steps: usize, n: u32) -> Vec<bool> {
    let mut eligible = vec![true; steps + 1];
    if n >= 64 || (1u128 << n) >= steps as u128 {
        return eligible;
    }
    let scale = 1u128 << n;
    let big_n = steps as u128;
    for (k, e) in eligible.iter_mut().enumerate().skip(1) {
        let hi = k as u128 * scale / big_n;
        let lo = (k as u128 - 1) * scale / big_n;
        *e = hi > lo;
    }
    eligible
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameSolution {
    pub grid_level: GridLevel,
    pub v: Vec<f64>,
    /// Continuation value at decision nodes; `None` at leaves.
    pub cont: Vec<Option<f64>>,
    pub argmin_kernel: Vec<usize>,
    /// Maximizer may stop at this depth.
    pub eligible: Vec<bool>,
    /// `v = L` at a depth where the maximizer may stop (leaves included).
    pub p1_stop: Vec<bool>,
    /// `v = U` and continuing is no better for the minimizer.
    pub p2_stop: Vec<bool>,
}

impl GameSolution {
    pub fn value(&self) -> f64 {
        self.v[0]
    }
}

pub fn backward_induction(
    tree: &ScenarioTree,
    pay: &Payoffs,
    menu: &KernelMenu,
) -> Result<GameSolution> {
    solve(
        tree,
        pay,
        menu,
        vec![true; tree.steps() + 1],
        GridLevel::Full,
    )
}

pub fn backward_induction_grid(
    tree: &ScenarioTree,
    pay: &Payoffs,
    menu: &KernelMenu,
    n: u32,
) -> Result<GameSolution> {
    let eligible = grid_eligible_depths(tree.steps(), n);
    solve(tree, pay, menu, eligible, GridLevel::Dyadic(n))
}

fn solve(
    tree: &ScenarioTree,
    pay: &Payoffs,
    menu: &KernelMenu,
    eligible: Vec<bool>,
    grid_level: GridLevel,
) -> Result<GameSolution> {
    let len = tree.len();
    let mut v = vec![0.0; len];
    let mut cont = vec![None; len];
    let mut argmin_kernel = vec![0; len];
    for leaf in tree.leaves() {
        v[leaf] = pay.lower[leaf];
    }
    for depth in (0..tree.steps()).rev() {
        let range = tree.depth_range(depth);
        let may_stop = eligible[depth];
        let step = |id: NodeId| -> Result<(f64, f64, usize)> {
            let values: Vec<f64> = tree.children(id).iter().map(|&c| v[c]).collect();
            let (e, k) =
                one_step_inf_expectation(menu.at(id), &values).map_err(|e| at_node(e, id))?;
            let c = e + pay.g[id] * pay.dt;
            let reflected = if may_stop { pay.lower[id].max(c) } else { c };
            Ok((pay.upper[id].min(reflected), c, k))
        };
        let rows: Vec<(f64, f64, usize)> = if range.len() >= PAR_THRESHOLD {
            range
                .clone()
                .into_par_iter()
                .map(step)
                .collect::<Result<_>>()?
        } else {
            range.clone().map(step).collect::<Result<_>>()?
        };
        for (id, (val, c, k)) in range.zip(rows) {
            v[id] = val;
            cont[id] = Some(c);
            argmin_kernel[id] = k;
        }
    }

    let mut p1_stop = vec![false; len];
    let mut p2_stop = vec![false; len];
    for id in 0..len {
        let depth = tree.depth(id);
        p1_stop[id] = eligible[depth] && (v[id] - pay.lower[id]).abs() <= REGION_TOL;
        if let Some(c) = cont[id] {
            p2_stop[id] =
                (v[id] - pay.upper[id]).abs() <= REGION_TOL && c >= pay.upper[id] - REGION_TOL;
        }
    }
    Ok(GameSolution {
        grid_level,
        v,
        cont,
        argmin_kernel,
        eligible,
        p1_stop,
        p2_stop,
    })
}

/// A set of nodes; the induced stopping time is the first entry time along
/// each path. Leaves always belong to the set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoppingRegion {
    pub members: Vec<bool>,
}

impl StoppingRegion {
    pub fn new(tree: &ScenarioTree, mut members: Vec<bool>) -> Self {
        members.resize(tree.len(), false);
        for leaf in tree.leaves() {
            members[leaf] = true;
        }
        Self { members }
    }

    /// Stopping at maturity only.
    pub fn terminal(tree: &ScenarioTree) -> Self {
        Self::new(tree, vec![false; tree.len()])
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.members[id]
    }

    /// First node of the region on the path to `leaf`.
    pub fn hit_on_path(&self, tree: &ScenarioTree, leaf: NodeId) -> NodeId {
        tree.path_nodes(leaf)
            .into_iter()
            .find(|&a| self.members[a])
            .unwrap_or(leaf)
    }

    /// For every node: whether the region was entered at or before it.
    pub fn stopped_by(&self, tree: &ScenarioTree) -> Vec<bool> {
        let mut stopped = self.members.clone();
        for id in 1..tree.len() {
            if stopped[tree.parent(id).expect("non-root")] {
                stopped[id] = true;
            }
        }
        stopped
    }

    /// Number of paths (leaves) stopped at each depth.
    pub fn depth_histogram(&self, tree: &ScenarioTree) -> Vec<usize> {
        let mut hist = vec![0; tree.steps() + 1];
        for leaf in tree.leaves() {
            hist[tree.depth(self.hit_on_path(tree, leaf))] += 1;
        }
        hist
    }

    pub fn union(&self, other: &StoppingRegion) -> StoppingRegion {
        StoppingRegion {
            members: self
                .members
                .iter()
                .zip(&other.members)
                .map(|(a, b)| *a || *b)
                .collect(),
        }
    }
}

/// `τ* = inf{t : V_t = L_t}`.
pub fn extract_tau_star(tree: &ScenarioTree, solution: &GameSolution) -> StoppingRegion {
    StoppingRegion::new(tree, solution.p1_stop.clone())
}

/// `γ* = inf{t : V_t = U_t and continuing does not help the minimizer}`.
pub fn extract_gamma_star(tree: &ScenarioTree, solution: &GameSolution) -> StoppingRegion {
    StoppingRegion::new(tree, solution.p2_stop.clone())
}

/// The greedy prior: the minimizing kernel at every decision node.
pub fn extract_p_star(tree: &ScenarioTree, solution: &GameSolution) -> Policy {
    let mut p = Policy::zeros(tree);
    for id in tree.decision_nodes() {
        p.set(id, solution.argmin_kernel[id]);
    }
    p
}

/// `Υ = V + Σ_{strict ancestors} g Δ`.
pub fn upsilon(tree: &ScenarioTree, pay: &Payoffs, solution: &GameSolution) -> Vec<f64> {
    let mut reward = vec![0.0; tree.len()];
    for id in 1..tree.len() {
        let p = tree.parent(id).expect("non-root");
        reward[id] = reward[p] + pay.g[p] * pay.dt;
    }
    solution.v.iter().zip(reward).map(|(v, r)| v + r).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubmartingaleSlack {
    /// `min_u (E_u[Υ_{stop}] - Υ_{stop ∧ t(u)})`; nonnegative when the
    /// property holds.
    pub worst: f64,
    pub witness: NodeId,
}

/// Slack of `Υ_{τ*∧ζ∧t} <= 𝔈_t[Υ_{τ*∧ζ}]` over all nodes, where `stop` is
/// the union of the τ* and ζ regions.
pub fn submartingale_slack(
    tree: &ScenarioTree,
    pay: &Payoffs,
    menu: &KernelMenu,
    solution: &GameSolution,
    stop: &StoppingRegion,
) -> Result<SubmartingaleSlack> {
    let ups = upsilon(tree, pay, solution);
    // inf-expectation of the stopped process, frozen on the region
    let mut frozen = vec![0.0; tree.len()];
    for id in (0..tree.len()).rev() {
        frozen[id] = if stop.contains(id) {
            ups[id]
        } else {
            let values: Vec<f64> = tree.children(id).iter().map(|&c| frozen[c]).collect();
            one_step_inf_expectation(menu.at(id), &values)
                .map_err(|e| at_node(e, id))?
                .0
        };
    }
    let stopped_before = stop.stopped_by(tree);
    let mut worst = SubmartingaleSlack {
        worst: f64::INFINITY,
        witness: tree.root(),
    };
    for id in 0..tree.len() {
        let already = tree.parent(id).is_some_and(|p| stopped_before[p]);
        // once stopped both sides equal the frozen value
        let slack = if already || stop.contains(id) {
            0.0
        } else {
            frozen[id] - ups[id]
        };
        if slack < worst.worst {
            worst = SubmartingaleSlack {
                worst: slack,
                witness: id,
            };
        }
    }
    Ok(worst)
}

/// Checks the submartingale property of `Υ` up to `τ* ∧ ζ` and returns the
/// worst slack.
pub fn verify_submartingale(
    tree: &ScenarioTree,
    pay: &Payoffs,
    menu: &KernelMenu,
    solution: &GameSolution,
    zeta: &StoppingRegion,
    tol: f64,
) -> Result<f64> {
    let region = extract_tau_star(tree, solution).union(zeta);
    let s = submartingale_slack(tree, pay, menu, solution, &region)?;
    if s.worst < -tol {
        return Err(Error::SubmartingaleViolated {
            node: s.witness,
            violation: s.worst,
        });
    }
    Ok(s.worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub n: u32,
    pub value: f64,
    pub gap: f64,
}

/// `(n, V^n_0, V̄_0 - V^n_0)` for `n = 0..=n_max`.
pub fn convergence_report(
    tree: &ScenarioTree,
    pay: &Payoffs,
    menu: &KernelMenu,
    n_max: u32,
) -> Result<Vec<ConvergenceRow>> {
    let full = backward_induction(tree, pay, menu)?.value();
    (0..=n_max)
        .map(|n| {
            let value = backward_induction_grid(tree, pay, menu, n)?.value();
            Ok(ConvergenceRow {
                n,
                value,
                gap: full - value,
            })
        })
        .collect()
}
