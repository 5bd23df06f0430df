//! Running reward `g`, obstacles `L <= U`, the game payoff `R` and the
//! envelope `Ψ = max(-L, U, 0)` on tree paths.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{NodeId, ScenarioTree};

/// `a + Σ b_i x_i + c t`, evaluated at the node's current state and time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Affine {
    #[serde(default, rename = "const")]
    pub constant: f64,
    #[serde(default)]
    pub state: Vec<f64>,
    #[serde(default)]
    pub time: f64,
}

impl Affine {
    fn eval(&self, state: &[f64], t: f64) -> f64 {
        let dot: f64 = self.state.iter().zip(state).map(|(b, x)| b * x).sum();
        self.constant + dot + self.time * t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PayoffKind {
    /// Explicit per-node values. A missing `g` table means `g ≡ 0`.
    Table {
        g: Option<BTreeMap<NodeId, f64>>,
        lower: BTreeMap<NodeId, f64>,
        upper: BTreeMap<NodeId, f64>,
    },
    Linear {
        g: Affine,
        lower: Affine,
        upper: Affine,
    },
    /// `L = (K - A)^+ - m` with `A` the running average of the first state
    /// component (root included); `U = L + spread` before maturity and
    /// `U = L` at maturity. `g ≡ 0`.
    AsianPut {
        strike: f64,
        shift: f64,
        spread: f64,
    },
    /// `L = (M - K)^+ - m` with `M` the running maximum of the first state
    /// component; `U` as for the Asian family; constant reward rate `g`.
    LookbackSpread {
        strike: f64,
        shift: f64,
        spread: f64,
        rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PayoffSpec {
    pub kind: PayoffKind,
}

impl PayoffSpec {
    pub fn new(kind: PayoffKind) -> Self {
        Self { kind }
    }

    pub fn eval_g(&self, tree: &ScenarioTree, node: NodeId) -> Result<f64> {
        tree.node(node)?;
        match &self.kind {
            PayoffKind::Table { g: None, .. } => Ok(0.0),
            PayoffKind::Table { g: Some(g), .. } => lookup(g, "g", node),
            PayoffKind::Linear { g, .. } => {
                Ok(g.eval(tree.state(node), tree.grid().time(tree.depth(node))))
            }
            PayoffKind::AsianPut { .. } => Ok(0.0),
            PayoffKind::LookbackSpread { rate, .. } => Ok(*rate),
        }
    }

    pub fn eval_lower(&self, tree: &ScenarioTree, node: NodeId) -> Result<f64> {
        tree.node(node)?;
        match &self.kind {
            PayoffKind::Table { lower, .. } => lookup(lower, "L", node),
            PayoffKind::Linear { lower, .. } => {
                Ok(lower.eval(tree.state(node), tree.grid().time(tree.depth(node))))
            }
            PayoffKind::AsianPut { strike, shift, .. } => {
                let path = tree.path_of(node)?;
                let avg = path.iter().map(|s| s[0]).sum::<f64>() / path.len() as f64;
                Ok((strike - avg).max(0.0) - shift)
            }
            PayoffKind::LookbackSpread { strike, shift, .. } => {
                let path = tree.path_of(node)?;
                let running_max = path.iter().map(|s| s[0]).fold(f64::NEG_INFINITY, f64::max);
                Ok((running_max - strike).max(0.0) - shift)
            }
        }
    }

    pub fn eval_upper(&self, tree: &ScenarioTree, node: NodeId) -> Result<f64> {
        match &self.kind {
            PayoffKind::Table { upper, .. } => {
                tree.node(node)?;
                lookup(upper, "U", node)
            }
            PayoffKind::Linear { upper, .. } => {
                tree.node(node)?;
                Ok(upper.eval(tree.state(node), tree.grid().time(tree.depth(node))))
            }
            PayoffKind::AsianPut { spread, .. } | PayoffKind::LookbackSpread { spread, .. } => {
                let lower = self.eval_lower(tree, node)?;
                Ok(if tree.is_leaf(node) {
                    lower
                } else {
                    lower + spread
                })
            }
        }
    }

    pub fn eval_psi(&self, tree: &ScenarioTree, node: NodeId) -> Result<f64> {
        Ok(psi(
            self.eval_lower(tree, node)?,
            self.eval_upper(tree, node)?,
        ))
    }

    /// Evaluates the payoff processes at every node and checks `L <= U`
    /// before maturity.
    pub fn tabulate(&self, tree: &ScenarioTree) -> Result<Payoffs> {
        let n = tree.len();
        let mut g = Vec::with_capacity(n);
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        for id in 0..n {
            g.push(self.eval_g(tree, id)?);
            lower.push(self.eval_lower(tree, id)?);
            upper.push(self.eval_upper(tree, id)?);
        }
        Payoffs::new(tree, g, lower, upper)
    }
}

fn lookup(table: &BTreeMap<NodeId, f64>, name: &'static str, node: NodeId) -> Result<f64> {
    table
        .get(&node)
        .copied()
        .ok_or(Error::MissingTableEntry { table: name, node })
}

pub fn psi(lower: f64, upper: f64) -> f64 {
    (-lower).max(upper).max(0.0)
}

/// Realized stopping depths of both players along one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopPair {
    pub tau_depth: usize,
    pub gamma_depth: usize,
}

impl StopPair {
    pub fn new(tau_depth: usize, gamma_depth: usize) -> Self {
        Self {
            tau_depth,
            gamma_depth,
        }
    }
}

/// Payoff processes tabulated per node, plus the step size used for the
/// left-endpoint reward sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Payoffs {
    pub g: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub dt: f64,
}

impl Payoffs {
    pub fn new(tree: &ScenarioTree, g: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = tree.len();
        if g.len() != n || lower.len() != n || upper.len() != n {
            return Err(Error::validation(
                "payoff",
                "payoff tables must cover every node",
            ));
        }
        for id in 0..n {
            for (what, x) in [("g", g[id]), ("L", lower[id]), ("U", upper[id])] {
                if !x.is_finite() {
                    return Err(Error::NonFinitePayoff { what, node: id });
                }
            }
            if !tree.is_leaf(id) && lower[id] > upper[id] {
                return Err(Error::PayoffOrder {
                    node: id,
                    lower: lower[id],
                    upper: upper[id],
                });
            }
        }
        Ok(Self {
            g,
            lower,
            upper,
            dt: tree.dt(),
        })
    }

    pub fn psi(&self, node: NodeId) -> f64 {
        psi(self.lower[node], self.upper[node])
    }

    /// `R = Σ_{k < τ∧γ} g_k Δ + 1{τ<=γ} L_{τ∧γ} + 1{γ<τ} U_{τ∧γ}` along the
    /// path ending at `leaf`.
    pub fn eval_r(&self, tree: &ScenarioTree, leaf: NodeId, pair: StopPair) -> Result<f64> {
        tree.node(leaf)?;
        let n = tree.steps();
        if !tree.is_leaf(leaf) {
            return Err(Error::validation(
                "leaf",
                format!("node {leaf} is not at depth {n}"),
            ));
        }
        if pair.tau_depth > n || pair.gamma_depth > n {
            return Err(Error::DepthOutOfRange {
                depth: pair.tau_depth.max(pair.gamma_depth),
                steps: n,
            });
        }
        let path = tree.path_nodes(leaf);
        let stop = pair.tau_depth.min(pair.gamma_depth);
        let reward: f64 = path[..stop].iter().map(|&a| self.g[a] * self.dt).sum();
        let at = path[stop];
        let terminal = if pair.tau_depth <= pair.gamma_depth {
            self.lower[at]
        } else {
            self.upper[at]
        };
        Ok(reward + terminal)
    }

    /// Worst slack of `|R| <= Σ|g|Δ + Ψ_{τ∧γ}` over all leaves and all pairs
    /// of stopping depths; errors if any slack exceeds `tol`.
    pub fn check_payoff_bound(&self, tree: &ScenarioTree, tol: f64) -> Result<f64> {
        let n = tree.steps();
        let mut worst = f64::NEG_INFINITY;
        for leaf in tree.leaves() {
            let path = tree.path_nodes(leaf);
            for tau in 0..=n {
                for gamma in 0..=n {
                    let pair = StopPair::new(tau, gamma);
                    let r = self.eval_r(tree, leaf, pair)?;
                    let stop = tau.min(gamma);
                    let abs_reward: f64 = path[..stop]
                        .iter()
                        .map(|&a| self.g[a].abs() * self.dt)
                        .sum();
                    let slack = r.abs() - (abs_reward + self.psi(path[stop]));
                    if slack > tol {
                        return Err(Error::BoundViolated {
                            leaf,
                            tau,
                            gamma,
                            slack,
                        });
                    }
                    worst = worst.max(slack);
                }
            }
        }
        Ok(worst)
    }

    /// Extra conditions for the optimal-triplet setting: no running reward,
    /// `L = U` at maturity and (optionally) `|L|, |U| <= bound`.
    pub fn check_triplet(&self, tree: &ScenarioTree, bound: Option<f64>) -> Result<()> {
        for id in 0..tree.len() {
            if self.g[id] != 0.0 {
                return Err(Error::validation(
                    format!("payoff.g.{id}"),
                    "triplet mode requires g = 0",
                ));
            }
            if tree.is_leaf(id) && self.lower[id] != self.upper[id] {
                return Err(Error::validation(
                    format!("payoff.U.{id}"),
                    "triplet mode requires L = U at maturity",
                ));
            }
            if let Some(m) = bound {
                if self.lower[id].abs() > m || self.upper[id].abs() > m {
                    return Err(Error::validation(
                        format!("payoff.L.{id}"),
                        format!("payoff exceeds the bound M0 = {m}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{additive_branching, TimeGrid, DEFAULT_MAX_NODES};

    fn binary(n: usize, horizon: f64) -> ScenarioTree {
        let grid = TimeGrid::new(horizon, n).unwrap();
        ScenarioTree::build(
            grid,
            1,
            DEFAULT_MAX_NODES,
            additive_branching(vec![1.0, -1.0]),
        )
        .unwrap()
    }

    fn constant(tree: &ScenarioTree, g: f64, lower: f64, upper: f64) -> Payoffs {
        let n = tree.len();
        Payoffs::new(tree, vec![g; n], vec![lower; n], vec![upper; n]).unwrap()
    }

    #[test]
    fn g_by_family() {
        let t = binary(2, 1.0);
        let lin = PayoffSpec::new(PayoffKind::Linear {
            g: Affine::default(),
            lower: Affine::default(),
            upper: Affine::default(),
        });
        for id in 0..t.len() {
            assert_eq!(lin.eval_g(&t, id).unwrap(), 0.0);
        }
        let mut g = BTreeMap::new();
        g.insert(3, 0.7);
        let table = PayoffSpec::new(PayoffKind::Table {
            g: Some(g),
            lower: BTreeMap::new(),
            upper: BTreeMap::new(),
        });
        assert_eq!(table.eval_g(&t, 3).unwrap(), 0.7);
        assert_eq!(
            table.eval_g(&t, 2),
            Err(Error::MissingTableEntry {
                table: "g",
                node: 2
            })
        );
        let asian = PayoffSpec::new(PayoffKind::AsianPut {
            strike: 1.0,
            shift: 0.0,
            spread: 1.0,
        });
        assert_eq!(asian.eval_g(&t, 5).unwrap(), 0.0);
    }

    #[test]
    fn path_dependent_families() {
        let t = binary(2, 1.0);
        // node 3: path 0, 1, 2; node 4: path 0, 1, 0
        let asian = PayoffSpec::new(PayoffKind::AsianPut {
            strike: 2.0,
            shift: 0.5,
            spread: 1.0,
        });
        assert_eq!(
            asian.eval_lower(&t, 3).unwrap(),
            (2.0f64 - 1.0).max(0.0) - 0.5
        );
        assert_eq!(
            asian.eval_upper(&t, 1).unwrap(),
            asian.eval_lower(&t, 1).unwrap() + 1.0
        );
        assert_eq!(
            asian.eval_upper(&t, 4).unwrap(),
            asian.eval_lower(&t, 4).unwrap()
        );
        let look = PayoffSpec::new(PayoffKind::LookbackSpread {
            strike: 0.5,
            shift: 0.0,
            spread: 0.25,
            rate: 0.1,
        });
        assert_eq!(look.eval_lower(&t, 4).unwrap(), 0.5);
        assert_eq!(look.eval_lower(&t, 6).unwrap(), 0.0);
        assert_eq!(look.eval_g(&t, 6).unwrap(), 0.1);
    }

    #[test]
    fn payoff_ties_pay_lower() {
        let t = binary(3, 1.5);
        let mut p = constant(&t, 0.0, 5.0, 7.0);
        assert_eq!(
            p.eval_r(&t, t.leaves().start, StopPair::new(0, 0)).unwrap(),
            5.0
        );
        p.upper[0] = 2.0;
        p.lower[0] = 1.0;
        assert_eq!(
            p.eval_r(&t, t.leaves().start, StopPair::new(1, 0)).unwrap(),
            2.0
        );
    }

    #[test]
    fn payoff_accumulates_reward() {
        // Δ = 0.5; L at the depth-2 ancestor = 1; brute sum g·Δ over depths 0, 1.
        let t = binary(3, 1.5);
        let p = constant(&t, 1.0, 1.0, 3.0);
        let leaf = t.leaves().start;
        let expected = (0..2).map(|_| 1.0 * 0.5).sum::<f64>() + 1.0;
        assert_eq!(p.eval_r(&t, leaf, StopPair::new(2, 3)).unwrap(), expected);
        assert_eq!(expected, 2.0);
        assert!(p.eval_r(&t, 0, StopPair::new(0, 0)).is_err());
        assert!(p.eval_r(&t, leaf, StopPair::new(4, 0)).is_err());
    }

    #[test]
    fn psi_values() {
        assert_eq!(psi(-3.0, 1.0), 3.0);
        assert_eq!(psi(0.0, 0.0), 0.0);
        assert_eq!(psi(1.0, 2.0), 2.0);
    }

    #[test]
    fn payoff_bound_holds() {
        let t = binary(2, 1.0);
        let p = Payoffs::new(
            &t,
            vec![0.3, -1.0, 2.0, 0.0, 0.0, 0.0, 0.0],
            vec![-2.0, 1.0, -4.0, 3.0, -1.0, 0.5, 2.0],
            vec![1.0, 1.5, 2.0, 3.0, -1.0, 0.5, 2.0],
        )
        .unwrap();
        assert!(p.check_payoff_bound(&t, 0.0).unwrap() <= 0.0);

        let single = TimeGrid::new(1.0, 1).unwrap();
        let t1 = ScenarioTree::build(single, 1, 10, additive_branching(vec![0.0])).unwrap();
        for c in [-2.0, 0.0, 3.5] {
            let p = constant(&t1, 0.0, c, c);
            let slack = p.check_payoff_bound(&t1, 0.0).unwrap();
            assert_eq!(slack, c.abs() - psi(c, c));
        }
    }

    #[test]
    fn order_violation_names_node() {
        let t = binary(1, 1.0);
        let r = Payoffs::new(&t, vec![0.0; 3], vec![0.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]);
        assert!(matches!(r, Err(Error::PayoffOrder { node: 0, .. })));
        // leaves are exempt: only L matters there
        assert!(Payoffs::new(&t, vec![0.0; 3], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn triplet_conditions() {
        let t = binary(1, 1.0);
        let p = Payoffs::new(&t, vec![0.0; 3], vec![0.0, 1.0, 3.0], vec![2.0, 1.0, 3.0]).unwrap();
        assert!(p.check_triplet(&t, Some(3.0)).is_ok());
        assert!(p.check_triplet(&t, Some(2.5)).is_err());
        let q = Payoffs::new(&t, vec![0.0; 3], vec![0.0, 1.0, 3.0], vec![2.0, 1.5, 3.0]).unwrap();
        assert!(q.check_triplet(&t, None).is_err());
    }
}
