//! Exhaustive ground truth on small trees.
//!
//! Stopping rules are enumerated as antichains of stopping nodes: a rule at
//! node `v` either stops at `v` or continues with one rule per child, so the
//! number of rules obeys `S(v) = [may stop at v] + Π_children S(child)`.
//!
//! For a fixed policy the expected payoff of *every* pair of rules is
//! tabulated bottom-up: the entry for a pair at node `v` is `L(v)` if the
//! maximizer's rule stops there, else `U(v)` if the minimizer's does, else
//! `g(v) Δ + Σ_j w_j · entry(child_j)` for the pair's child components.
//! Every pair is evaluated explicitly; subtrees only share arithmetic. The
//! min/max operators are then applied over the full tables.

use std::ops::Range;

use rayon::prelude::*;

use crate::ambiguity::{enumerate_policies, measure_of, KernelMenu, Policy, PolicySpace};
use crate::error::{Error, Result};
use crate::payoff::{Payoffs, StopPair};
use crate::solver::StoppingRegion;
use crate::tree::{NodeId, ScenarioTree};

/// Default absolute tolerance for oracle comparisons.
pub const ORACLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleCaps {
    /// Stopping rules per player.
    pub max_rules: u128,
    pub max_policies: u128,
    /// Rule pairs times policies.
    pub max_triples: u128,
    /// Rule pairs held in one payoff table.
    pub max_pairs: u128,
}

impl Default for OracleCaps {
    fn default() -> Self {
        Self {
            max_rules: 100_000,
            max_policies: 1_000_000,
            max_triples: 10_000_000_000,
            max_pairs: 10_000_000,
        }
    }
}

/// One adapted stopping rule: the minimal stopping nodes (an antichain
/// meeting every root-to-leaf path exactly once).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoppingRule {
    pub stops: Vec<NodeId>,
}

impl StoppingRule {
    pub fn region(&self, tree: &ScenarioTree) -> StoppingRegion {
        let mut members = vec![false; tree.len()];
        for &s in &self.stops {
            members[s] = true;
        }
        StoppingRegion::new(tree, members)
    }
}

/// The stopping rules of one player, indexed per node.
#[derive(Debug, Clone)]
pub struct RuleSpace {
    can_stop: Vec<bool>,
    must_stop: Vec<bool>,
    count: Vec<u64>,
}

impl RuleSpace {
    /// All rules that stop only at eligible depths (maturity is forced).
    pub fn new(tree: &ScenarioTree, eligible_depths: &[bool], cap: u128) -> Result<Self> {
        if eligible_depths.len() != tree.steps() + 1 {
            return Err(Error::validation(
                "eligible_depths",
                format!("expected {} flags", tree.steps() + 1),
            ));
        }
        let can_stop = (0..tree.len())
            .map(|id| eligible_depths[tree.depth(id)])
            .collect();
        let must_stop = (0..tree.len()).map(|id| tree.is_leaf(id)).collect();
        Self::with_flags(tree, can_stop, must_stop, cap)
    }

    /// The single rule "first entry into `region`".
    pub fn fixed(tree: &ScenarioTree, region: &StoppingRegion) -> Self {
        let must_stop = region.members.clone();
        Self::with_flags(tree, vec![false; tree.len()], must_stop, u128::MAX).expect("one rule")
    }

    fn with_flags(
        tree: &ScenarioTree,
        can_stop: Vec<bool>,
        must_stop: Vec<bool>,
        cap: u128,
    ) -> Result<Self> {
        let mut wide = vec![0u128; tree.len()];
        for id in (0..tree.len()).rev() {
            wide[id] = if must_stop[id] || tree.is_leaf(id) {
                1
            } else {
                let product = tree
                    .children(id)
                    .iter()
                    .fold(1u128, |acc, &c| acc.saturating_mul(wide[c]));
                product.saturating_add(can_stop[id] as u128)
            };
        }
        let total = wide[tree.root()];
        if total > cap || total > u64::MAX as u128 {
            return Err(Error::EnumerationTooLarge {
                what: "stopping times",
                count: total,
                cap,
            });
        }
        let mut must_stop = must_stop;
        for leaf in tree.leaves() {
            must_stop[leaf] = true;
        }
        Ok(Self {
            can_stop,
            must_stop,
            count: wide.into_iter().map(|c| c as u64).collect(),
        })
    }

    pub fn count(&self) -> u64 {
        self.count[0]
    }

    fn offset(&self, id: NodeId) -> usize {
        (!self.must_stop[id] && self.can_stop[id]) as usize
    }

    fn stops(&self, id: NodeId, index: usize) -> bool {
        self.must_stop[id] || (self.can_stop[id] && index == 0)
    }

    /// The rule with rank `index`: "stop here" first, then child
    /// combinations with the first child most significant.
    pub fn rule(&self, tree: &ScenarioTree, index: u64) -> StoppingRule {
        let mut stops = Vec::new();
        let mut stack = vec![(tree.root(), index)];
        while let Some((id, idx)) = stack.pop() {
            if self.stops(id, idx as usize) {
                stops.push(id);
                continue;
            }
            let mut rest = idx - self.offset(id) as u64;
            let children = tree.children(id);
            let mut digits = vec![0u64; children.len()];
            for (j, &c) in children.iter().enumerate().rev() {
                digits[j] = rest % self.count[c];
                rest /= self.count[c];
            }
            for (j, &c) in children.iter().enumerate().rev() {
                stack.push((c, digits[j]));
            }
        }
        stops.sort_unstable();
        StoppingRule { stops }
    }

    pub fn iter<'a>(&'a self, tree: &'a ScenarioTree) -> impl Iterator<Item = StoppingRule> + 'a {
        (0..self.count()).map(move |i| self.rule(tree, i))
    }

    /// Child digits of every continuing index at `id`, flattened.
    fn digit_table(&self, tree: &ScenarioTree, id: NodeId) -> Vec<u32> {
        let children = tree.children(id);
        let off = self.offset(id);
        let n = self.count[id] as usize;
        if self.must_stop[id] {
            return Vec::new();
        }
        let mut table = vec![0u32; (n - off) * children.len()];
        for idx in off..n {
            let mut rest = (idx - off) as u64;
            let row = &mut table[(idx - off) * children.len()..(idx - off + 1) * children.len()];
            for (j, &c) in children.iter().enumerate().rev() {
                row[j] = (rest % self.count[c]) as u32;
                rest /= self.count[c];
            }
        }
        table
    }
}

/// Every adapted stopping rule with stops at eligible depths only.
pub fn enumerate_stopping_times(
    tree: &ScenarioTree,
    eligible_depths: &[bool],
    cap: u128,
) -> Result<RuleSpace> {
    RuleSpace::new(tree, eligible_depths, cap)
}

/// `E_P[R(τ, γ)]` as a sum over leaves of `P(leaf) · R(leaf; τ, γ)`.
pub fn expected_payoff(
    tree: &ScenarioTree,
    pay: &Payoffs,
    menu: &KernelMenu,
    tau: &StoppingRegion,
    gamma: &StoppingRegion,
    policy: &Policy,
) -> Result<f64> {
    let mu = measure_of(tree, menu, policy)?;
    let mut total = 0.0;
    for leaf in tree.leaves() {
        let pair = StopPair::new(
            tree.depth(tau.hit_on_path(tree, leaf)),
            tree.depth(gamma.hit_on_path(tree, leaf)),
        );
        total += mu.mass[leaf] * pay.eval_r(tree, leaf, pair)?;
    }
    Ok(total)
}

/// Values of the game under every ordering of `sup_τ`, `inf_γ`, `inf_P`
/// (outermost first).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderValues {
    pub tau_gamma_p: f64,
    pub tau_p_gamma: f64,
    pub gamma_tau_p: f64,
    pub gamma_p_tau: f64,
    pub p_tau_gamma: f64,
    pub p_gamma_tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForce {
    /// `sup_τ inf_γ inf_P`.
    pub lower: f64,
    /// `inf_P inf_γ sup_τ`.
    pub upper: f64,
    pub orders: OrderValues,
    pub tau_rules: u64,
    pub gamma_rules: u64,
    pub policies: u64,
    /// Policy rank and minimizer rule rank attaining `upper`.
    pub upper_witness: (u64, u64),
    /// Maximizer rule rank attaining `lower`.
    pub lower_witness: u64,
}

struct Partial {
    // min over P of (min_γ max_τ), with witness (policy, γ)
    upper: (f64, u64, u64),
    // min over P of (max_τ min_γ)
    p_tau_gamma: f64,
    // elementwise min over P, row-major [τ][γ]
    min_over_p: Vec<f64>,
}

impl Partial {
    fn merge(mut self, other: Partial) -> Partial {
        if other.upper.0 < self.upper.0
            || (other.upper.0 == self.upper.0
                && (other.upper.1, other.upper.2) < (self.upper.1, self.upper.2))
        {
            self.upper = other.upper;
        }
        self.p_tau_gamma = self.p_tau_gamma.min(other.p_tau_gamma);
        for (a, b) in self.min_over_p.iter_mut().zip(&other.min_over_p) {
            *a = a.min(*b);
        }
        self
    }
}

struct Grids<'a> {
    tree: &'a ScenarioTree,
    pay: &'a Payoffs,
    menu: &'a KernelMenu,
    tau: &'a RuleSpace,
    gamma: &'a RuleSpace,
    tau_digits: Vec<Vec<u32>>,
    gamma_digits: Vec<Vec<u32>>,
}

impl<'a> Grids<'a> {
    fn new(
        tree: &'a ScenarioTree,
        pay: &'a Payoffs,
        menu: &'a KernelMenu,
        tau: &'a RuleSpace,
        gamma: &'a RuleSpace,
    ) -> Self {
        let tau_digits = (0..tree.len())
            .map(|id| tau.digit_table(tree, id))
            .collect();
        let gamma_digits = (0..tree.len())
            .map(|id| gamma.digit_table(tree, id))
            .collect();
        Self {
            tree,
            pay,
            menu,
            tau,
            gamma,
            tau_digits,
            gamma_digits,
        }
    }

    fn alloc(&self) -> Vec<Vec<f64>> {
        (0..self.tree.len())
            .map(|id| vec![0.0; (self.tau.count[id] * self.gamma.count[id]) as usize])
            .collect()
    }

    /// Fills `tables[v][a * Sγ(v) + b]` with `E_P[R(τ_a, γ_b) | v]`.
    fn fill(&self, policy: &Policy, tables: &mut [Vec<f64>]) {
        let tree = self.tree;
        for id in (0..tree.len()).rev() {
            let (below, rest) = tables.split_at_mut(id + 1);
            let table = &mut below[id];
            let s_tau = self.tau.count[id] as usize;
            let s_gamma = self.gamma.count[id] as usize;
            let lower = self.pay.lower[id];
            let upper = self.pay.upper[id];
            let children = tree.children(id);
            let m = children.len();
            let off_tau = self.tau.offset(id);
            let off_gamma = self.gamma.offset(id);
            let weights = if tree.is_leaf(id) {
                &[][..]
            } else {
                &self.menu.at(id)[policy.kernel(id)].weights[..]
            };
            let reward = self.pay.g[id] * self.pay.dt;
            for a in 0..s_tau {
                let row = &mut table[a * s_gamma..(a + 1) * s_gamma];
                if self.tau.stops(id, a) {
                    row.fill(lower);
                    continue;
                }
                let da = &self.tau_digits[id][(a - off_tau) * m..(a - off_tau + 1) * m];
                for (b, slot) in row.iter_mut().enumerate() {
                    if self.gamma.stops(id, b) {
                        *slot = upper;
                        continue;
                    }
                    let db = &self.gamma_digits[id][(b - off_gamma) * m..(b - off_gamma + 1) * m];
                    let mut acc = reward;
                    for j in 0..m {
                        let c = children[j];
                        let child_table = &rest[c - id - 1];
                        let sg = self.gamma.count[c] as usize;
                        acc += weights[j] * child_table[da[j] as usize * sg + db[j] as usize];
                    }
                    *slot = acc;
                }
            }
        }
    }

    fn partial(&self, policies: &PolicySpace, range: Range<u64>) -> Partial {
        let s_tau = self.tau.count() as usize;
        let s_gamma = self.gamma.count() as usize;
        let mut tables = self.alloc();
        let mut out = Partial {
            upper: (f64::INFINITY, u64::MAX, u64::MAX),
            p_tau_gamma: f64::INFINITY,
            min_over_p: vec![f64::INFINITY; s_tau * s_gamma],
        };
        let mut col_max = vec![f64::NEG_INFINITY; s_gamma];
        for (policy_index, policy) in (range.start..).zip(policies.iter_range(range)) {
            self.fill(&policy, &mut tables);
            let root = &tables[0];
            col_max.fill(f64::NEG_INFINITY);
            let mut max_row_min = f64::NEG_INFINITY;
            for a in 0..s_tau {
                let row = &root[a * s_gamma..(a + 1) * s_gamma];
                let mut row_min = f64::INFINITY;
                for (b, &x) in row.iter().enumerate() {
                    row_min = row_min.min(x);
                    col_max[b] = col_max[b].max(x);
                }
                max_row_min = max_row_min.max(row_min);
                for (m, &x) in out.min_over_p[a * s_gamma..(a + 1) * s_gamma]
                    .iter_mut()
                    .zip(row)
                {
                    *m = m.min(x);
                }
            }
            for (b, &x) in col_max.iter().enumerate() {
                if x < out.upper.0 {
                    out.upper = (x, policy_index, b as u64);
                }
            }
            out.p_tau_gamma = out.p_tau_gamma.min(max_row_min);
        }
        out
    }
}

const POLICY_CHUNK: u64 = 64;

/// Brute-force values over the given rule spaces and all policies.
pub fn bruteforce(
    tree: &ScenarioTree,
    pay: &Payoffs,
    menu: &KernelMenu,
    tau: &RuleSpace,
    gamma: &RuleSpace,
    caps: &OracleCaps,
) -> Result<BruteForce> {
    let policies = enumerate_policies(tree, menu, caps.max_policies)?;
    let pairs = tau.count() as u128 * gamma.count() as u128;
    if pairs > caps.max_pairs {
        return Err(Error::EnumerationTooLarge {
            what: "stopping-time pairs",
            count: pairs,
            cap: caps.max_pairs,
        });
    }
    let triples = pairs.saturating_mul(policies.count() as u128);
    if triples > caps.max_triples {
        return Err(Error::EnumerationTooLarge {
            what: "strategy triples",
            count: triples,
            cap: caps.max_triples,
        });
    }
    let grids = Grids::new(tree, pay, menu, tau, gamma);
    let chunks = policies.count().div_ceil(POLICY_CHUNK);
    let merged = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * POLICY_CHUNK;
            grids.partial(
                &policies,
                start..(start + POLICY_CHUNK).min(policies.count()),
            )
        })
        .reduce_with(Partial::merge)
        .expect("at least one policy");

    let s_tau = tau.count() as usize;
    let s_gamma = gamma.count() as usize;
    let table = &merged.min_over_p;
    let mut lower = (f64::NEG_INFINITY, 0u64);
    for a in 0..s_tau {
        let row_min = table[a * s_gamma..(a + 1) * s_gamma]
            .iter()
            .fold(f64::INFINITY, |m, &x| m.min(x));
        if row_min > lower.0 {
            lower = (row_min, a as u64);
        }
    }
    let gamma_tau_p = (0..s_gamma)
        .map(|b| {
            (0..s_tau)
                .map(|a| table[a * s_gamma + b])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .fold(f64::INFINITY, f64::min);

    let upper = merged.upper.0;
    Ok(BruteForce {
        lower: lower.0,
        upper,
        orders: OrderValues {
            tau_gamma_p: lower.0,
            tau_p_gamma: lower.0,
            gamma_tau_p,
            gamma_p_tau: upper,
            p_tau_gamma: merged.p_tau_gamma,
            p_gamma_tau: upper,
        },
        tau_rules: tau.count(),
        gamma_rules: gamma.count(),
        policies: policies.count(),
        upper_witness: (merged.upper.1, merged.upper.2),
        lower_witness: lower.1,
    })
}

fn full_spaces(
    tree: &ScenarioTree,
    tau_eligible: &[bool],
    caps: &OracleCaps,
) -> Result<(RuleSpace, RuleSpace)> {
    let tau = RuleSpace::new(tree, tau_eligible, caps.max_rules)?;
    let gamma = RuleSpace::new(tree, &vec![true; tree.steps() + 1], caps.max_rules)?;
    Ok((tau, gamma))
}

/// Both brute-force values with the maximizer restricted to `tau_eligible`
/// depths (pass all-true for the unrestricted game).
pub fn bruteforce_values(
    tree: &ScenarioTree,
    pay: &Payoffs,
    menu: &KernelMenu,
    tau_eligible: &[bool],
    caps: &OracleCaps,
) -> Result<BruteForce> {
    let (tau, gamma) = full_spaces(tree, tau_eligible, caps)?;
    bruteforce(tree, pay, menu, &tau, &gamma, caps)
}

/// `sup_τ inf_γ inf_P E_P[R(τ, γ)]`.
pub fn lower_value_bruteforce(
    tree: &ScenarioTree,
    pay: &Payoffs,
    menu: &KernelMenu,
    caps: &OracleCaps,
) -> Result<f64> {
    Ok(bruteforce_values(tree, pay, menu, &vec![true; tree.steps() + 1], caps)?.lower)
}

/// `inf_P inf_γ sup_τ E_P[R(τ, γ)]`.
pub fn upper_value_bruteforce(
    tree: &ScenarioTree,
    pay: &Payoffs,
    menu: &KernelMenu,
    caps: &OracleCaps,
) -> Result<f64> {
    Ok(bruteforce_values(tree, pay, menu, &vec![true; tree.steps() + 1], caps)?.upper)
}

/// `min_{γ,P} E_P[R(τ, γ)]` for one fixed rule of the maximizer, with the
/// attaining (γ rank, policy rank).
pub fn guaranteed_by_tau(
    tree: &ScenarioTree,
    pay: &Payoffs,
    menu: &KernelMenu,
    tau: &StoppingRegion,
    caps: &OracleCaps,
) -> Result<(f64, u64, u64)> {
    let tau_space = RuleSpace::fixed(tree, tau);
    let gamma = RuleSpace::new(tree, &vec![true; tree.steps() + 1], caps.max_rules)?;
    let bf = bruteforce(tree, pay, menu, &tau_space, &gamma, caps)?;
    Ok((bf.upper, bf.upper_witness.1, bf.upper_witness.0))
}

/// `max_τ min_P E_P[R(τ, γ)]` for one fixed rule of the minimizer.
pub fn best_reply_to_gamma(
    tree: &ScenarioTree,
    pay: &Payoffs,
    menu: &KernelMenu,
    gamma: &StoppingRegion,
    caps: &OracleCaps,
) -> Result<f64> {
    let tau = RuleSpace::new(tree, &vec![true; tree.steps() + 1], caps.max_rules)?;
    let gamma_space = RuleSpace::fixed(tree, gamma);
    Ok(bruteforce(tree, pay, menu, &tau, &gamma_space, caps)?.lower)
}

/// `|min_{γ,P} E_P[R(τ*, γ)] - V_0|`; errors when it exceeds `tol`.
pub fn verify_tau_star(
    tree: &ScenarioTree,
    pay: &Payoffs,
    menu: &KernelMenu,
    tau_star: &StoppingRegion,
    v0: f64,
    caps: &OracleCaps,
    tol: f64,
) -> Result<f64> {
    let (value, gamma_index, policy_index) = guaranteed_by_tau(tree, pay, menu, tau_star, caps)?;
    let gap = (value - v0).abs();
    if gap > tol {
        return Err(Error::OptimalityViolated {
            gap,
            gamma_index,
            policy_index,
        });
    }
    Ok(gap)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddleCheck {
    /// `E_{P*}[R(τ*, γ*)]`.
    pub value: f64,
    pub max_dev: f64,
    /// `max_τ min_P E_P[R(τ, γ*)]`.
    pub best_tau_reply: f64,
    /// `min_{γ,P} E_P[R(τ*, γ)]`.
    pub best_gamma_reply: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn saddle_deviation(
    tree: &ScenarioTree,
    pay: &Payoffs,
    menu: &KernelMenu,
    tau_star: &StoppingRegion,
    gamma_star: &StoppingRegion,
    p_star: &Policy,
    v0: f64,
    caps: &OracleCaps,
) -> Result<SaddleCheck> {
    let value = expected_payoff(tree, pay, menu, tau_star, gamma_star, p_star)?;
    let best_tau_reply = best_reply_to_gamma(tree, pay, menu, gamma_star, caps)?;
    let (best_gamma_reply, _, _) = guaranteed_by_tau(tree, pay, menu, tau_star, caps)?;
    let max_dev = (value - v0)
        .abs()
        .max((best_tau_reply - value).max(0.0))
        .max((value - best_gamma_reply).max(0.0));
    Ok(SaddleCheck {
        value,
        max_dev,
        best_tau_reply,
        best_gamma_reply,
    })
}

/// Saddle check of `(τ*, γ*, P*)`; errors when the deviation exceeds `tol`.
#[allow(clippy::too_many_arguments)]
pub fn verify_saddle(
    tree: &ScenarioTree,
    pay: &Payoffs,
    menu: &KernelMenu,
    tau_star: &StoppingRegion,
    gamma_star: &StoppingRegion,
    p_star: &Policy,
    v0: f64,
    caps: &OracleCaps,
    tol: f64,
) -> Result<SaddleCheck> {
    let check = saddle_deviation(tree, pay, menu, tau_star, gamma_star, p_star, v0, caps)?;
    if check.max_dev > tol {
        return Err(Error::SaddleViolated {
            max_dev: check.max_dev,
            witness: format!(
                "value {}, V0 {v0}, best tau reply {}, best gamma reply {}",
                check.value, check.best_tau_reply, check.best_gamma_reply
            ),
        });
    }
    Ok(check)
}
