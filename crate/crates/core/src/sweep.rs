//! Seeded random game instances and the full battery of per-instance
//! checks against the exhaustive oracle.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::ambiguity::{Kernel, KernelMenu};
use crate::error::Result;
use crate::oracle::{self, OracleCaps, RuleSpace};
use crate::payoff::Payoffs;
use crate::solver::{
    backward_induction, backward_induction_grid, extract_gamma_star, extract_p_star,
    extract_tau_star, grid_eligible_depths, submartingale_slack, GameSolution, StoppingRegion,
    REGION_TOL,
};
use crate::spec::{Mode, Tolerances};
use crate::tree::{additive_branching, ScenarioTree, TimeGrid};

/// Upper bound on `(rule pairs) × policies` for generated instances; menus
/// are trimmed until an instance fits.
pub const WORK_BUDGET: u128 = 20_000_000;

/// Random ζ regions checked per instance on top of `ζ ≡ N`.
pub const RANDOM_ZETAS: usize = 5;

#[derive(Debug, Clone)]
pub struct Instance {
    pub tree: ScenarioTree,
    pub menu: KernelMenu,
    pub payoffs: Payoffs,
}

/// Depth `N ∈ {1,2,3}`, branching `∈ {2,3}`, menus of 1 to 3 kernels (some
/// with zero weights), payoffs uniform in `[-5, 5]` sorted so `L <= U`. In
/// triplet mode `g ≡ 0` and `L = U` at maturity.
pub fn random_instance(rng: &mut impl Rng, mode: Mode) -> Instance {
    let steps = rng.gen_range(1..=3);
    let branching = rng.gen_range(2..=3);
    let increments = if branching == 2 {
        vec![1.0, -1.0]
    } else {
        vec![1.0, 0.0, -1.0]
    };
    let grid = TimeGrid::new(1.0, steps).expect("valid grid");
    let tree = ScenarioTree::build(grid, 1, usize::MAX, additive_branching(increments))
        .expect("small tree");

    let n = tree.len();
    let mut g = vec![0.0; n];
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for id in 0..n {
        let a: f64 = rng.gen_range(-5.0..=5.0);
        let b: f64 = rng.gen_range(-5.0..=5.0);
        lower[id] = a.min(b);
        upper[id] = a.max(b);
        if mode == Mode::Triplet && tree.is_leaf(id) {
            upper[id] = lower[id];
        }
        if mode == Mode::Standard && !tree.is_leaf(id) {
            g[id] = rng.gen_range(-5.0..=5.0);
        }
    }
    let payoffs = Payoffs::new(&tree, g, lower, upper).expect("sorted payoffs");

    let mut menus: Vec<Vec<Kernel>> = (0..n)
        .map(|id| {
            if tree.is_leaf(id) {
                return Vec::new();
            }
            let arity = tree.children(id).len();
            let size = rng.gen_range(1..=3);
            (0..size)
                .map(|k| random_kernel(rng, k as f64, arity))
                .collect()
        })
        .collect();

    let rules = RuleSpace::new(&tree, &vec![true; steps + 1], u128::MAX)
        .expect("small tree")
        .count() as u128;
    loop {
        let policies: u128 = menus
            .iter()
            .filter(|m| !m.is_empty())
            .map(|m| m.len() as u128)
            .product();
        if rules * rules * policies <= WORK_BUDGET {
            break;
        }
        let wide: Vec<usize> = (0..n).filter(|&id| menus[id].len() > 1).collect();
        let pick = *wide.choose(rng).expect("some menu is wider than one");
        menus[pick].truncate(1);
    }
    let menu = KernelMenu::new(&tree, menus).expect("normalized kernels");
    Instance {
        tree,
        menu,
        payoffs,
    }
}

fn random_kernel(rng: &mut impl Rng, label: f64, arity: usize) -> Kernel {
    let mut w: Vec<f64> = (0..arity).map(|_| rng.gen_range(0.05..1.0)).collect();
    if rng.gen_bool(0.25) {
        let keep = rng.gen_range(0..arity);
        for (i, x) in w.iter_mut().enumerate() {
            if i != keep && rng.gen_bool(0.5) {
                *x = 0.0;
            }
        }
    }
    let total: f64 = w.iter().sum();
    let mut w: Vec<f64> = w.into_iter().map(|x| x / total).collect();
    // put the rounding residue on the largest weight
    let residue = 1.0 - w.iter().sum::<f64>();
    let big = (0..arity)
        .max_by(|&a, &b| w[a].total_cmp(&w[b]))
        .expect("nonempty");
    w[big] += residue;
    Kernel::new(label, w)
}

/// Random stopping region: every node with probability 0.3 (leaves always).
pub fn random_region(rng: &mut impl Rng, tree: &ScenarioTree) -> StoppingRegion {
    let members = (0..tree.len()).map(|_| rng.gen_bool(0.3)).collect();
    StoppingRegion::new(tree, members)
}

/// Seed of instance `index` in a sweep with base seed `seed`.
pub fn instance_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Worst-case numbers for one instance (all gaps are absolute).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InstanceCheck {
    pub steps: usize,
    pub nodes: usize,
    pub policies: u64,
    pub v0: f64,
    pub lower: f64,
    pub upper: f64,
    pub coincidence_gap: f64,
    pub tau_star_gap: f64,
    pub saddle_dev: f64,
    /// Minimum slack over `ζ ≡ N` and the random ζ regions.
    pub submartingale_worst: f64,
    /// Largest `V^n - V^{n+1}` (positive means non-monotone).
    pub grid_monotone_violation: f64,
    /// Largest `V^n_0 - V̄_0`.
    pub grid_excess: f64,
    /// `V̄_0 - V^n_0` at the first `n` with `2^n >= N`.
    pub grid_final_gap: f64,
    /// `|V^0_0 - restricted brute force|`.
    pub grid_oracle_gap: f64,
    /// Largest breach of `L <= v <= U` (eligible nodes), `v <= U`, `v = L` at leaves.
    pub sandwich_violation: f64,
    pub payoff_bound_slack: f64,
}

fn sandwich_violation(tree: &ScenarioTree, pay: &Payoffs, sol: &GameSolution) -> f64 {
    let mut worst: f64 = 0.0;
    for id in 0..tree.len() {
        let v = sol.v[id];
        if tree.is_leaf(id) {
            worst = worst.max((v - pay.lower[id]).abs());
            continue;
        }
        worst = worst.max(v - pay.upper[id]);
        if sol.eligible[tree.depth(id)] {
            worst = worst.max(pay.lower[id] - v);
        }
    }
    worst
}

/// Runs every solver/oracle check on one instance.
pub fn check_instance(
    inst: &Instance,
    rng: &mut impl Rng,
    caps: &OracleCaps,
) -> Result<InstanceCheck> {
    let Instance {
        tree,
        menu,
        payoffs,
    } = inst;
    let full = backward_induction(tree, payoffs, menu)?;
    let v0 = full.value();
    let all = vec![true; tree.steps() + 1];
    let bf = oracle::bruteforce_values(tree, payoffs, menu, &all, caps)?;
    let coincidence_gap = (bf.lower - bf.upper)
        .abs()
        .max((bf.lower - v0).abs())
        .max((bf.upper - v0).abs());

    let tau = extract_tau_star(tree, &full);
    let gamma = extract_gamma_star(tree, &full);
    let p_star = extract_p_star(tree, &full);
    let saddle = oracle::saddle_deviation(tree, payoffs, menu, &tau, &gamma, &p_star, v0, caps)?;
    let tau_star_gap = (saddle.best_gamma_reply - v0).abs();

    let mut submartingale_worst = f64::INFINITY;
    let mut zetas = vec![StoppingRegion::terminal(tree)];
    zetas.extend((0..RANDOM_ZETAS).map(|_| random_region(rng, tree)));
    for zeta in &zetas {
        let s = submartingale_slack(tree, payoffs, menu, &full, &tau.union(zeta))?;
        submartingale_worst = submartingale_worst.min(s.worst);
    }

    let mut sandwich = sandwich_violation(tree, payoffs, &full);
    let mut grid_monotone_violation = f64::NEG_INFINITY;
    let mut grid_excess = f64::NEG_INFINITY;
    let mut prev: Option<f64> = None;
    let mut n = 0u32;
    let grid_final_gap = loop {
        let sol = backward_induction_grid(tree, payoffs, menu, n)?;
        sandwich = sandwich.max(sandwich_violation(tree, payoffs, &sol));
        let value = sol.value();
        if let Some(p) = prev {
            grid_monotone_violation = grid_monotone_violation.max(p - value);
        }
        grid_excess = grid_excess.max(value - v0);
        prev = Some(value);
        if (1usize << n) >= tree.steps() {
            break v0 - value;
        }
        n += 1;
    };
    let coarse = backward_induction_grid(tree, payoffs, menu, 0)?.value();
    let restricted = oracle::bruteforce_values(
        tree,
        payoffs,
        menu,
        &grid_eligible_depths(tree.steps(), 0),
        caps,
    )?;
    let grid_oracle_gap = (restricted.upper - coarse).abs();

    let payoff_bound_slack = payoffs.check_payoff_bound(tree, f64::INFINITY)?;

    Ok(InstanceCheck {
        steps: tree.steps(),
        nodes: tree.len(),
        policies: bf.policies,
        v0,
        lower: bf.lower,
        upper: bf.upper,
        coincidence_gap,
        tau_star_gap,
        saddle_dev: saddle.max_dev,
        submartingale_worst,
        grid_monotone_violation: grid_monotone_violation.max(0.0),
        grid_excess,
        grid_final_gap,
        grid_oracle_gap,
        sandwich_violation: sandwich,
        payoff_bound_slack,
    })
}

/// Worst value of one statistic and the instance that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Worst {
    pub value: f64,
    pub instance: usize,
}

impl Worst {
    fn max_of(rows: &[InstanceCheck], f: impl Fn(&InstanceCheck) -> f64) -> Worst {
        let mut w = Worst {
            value: f64::NEG_INFINITY,
            instance: 0,
        };
        for (i, r) in rows.iter().enumerate() {
            if f(r) > w.value {
                w = Worst {
                    value: f(r),
                    instance: i,
                };
            }
        }
        w
    }

    fn min_of(rows: &[InstanceCheck], f: impl Fn(&InstanceCheck) -> f64) -> Worst {
        let w = Self::max_of(rows, |r| -f(r));
        Worst {
            value: -w.value,
            instance: w.instance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub count: usize,
    pub seed: u64,
    pub coincidence_gap: Worst,
    pub tau_star_gap: Worst,
    pub saddle_dev_standard: Worst,
    pub saddle_dev_triplet: Worst,
    pub submartingale_worst: Worst,
    pub grid_monotone_violation: Worst,
    pub grid_excess: Worst,
    pub grid_final_gap: Worst,
    pub grid_oracle_gap: Worst,
    pub sandwich_violation: Worst,
    pub payoff_bound_slack: Worst,
    /// SHA-256 of every per-instance record, in order.
    pub instances_digest: String,
    /// Instance checks in order: standard mode, then triplet mode.
    #[serde(skip)]
    pub standard: Vec<InstanceCheck>,
    #[serde(skip)]
    pub triplet: Vec<InstanceCheck>,
}

impl SweepSummary {
    /// `(criterion, value, tolerance, passed)` rows.
    pub fn outcomes(&self, tol: &Tolerances) -> Vec<(&'static str, f64, f64, bool)> {
        vec![
            (
                "coincidence_gap",
                self.coincidence_gap.value,
                tol.oracle,
                self.coincidence_gap.value <= tol.oracle,
            ),
            (
                "tau_star_gap",
                self.tau_star_gap.value,
                tol.oracle,
                self.tau_star_gap.value <= tol.oracle,
            ),
            (
                "saddle_dev_triplet",
                self.saddle_dev_triplet.value,
                tol.oracle,
                self.saddle_dev_triplet.value <= tol.oracle,
            ),
            (
                "submartingale_worst",
                self.submartingale_worst.value,
                -tol.submartingale,
                self.submartingale_worst.value >= -tol.submartingale,
            ),
            (
                "grid_monotone_violation",
                self.grid_monotone_violation.value,
                0.0,
                self.grid_monotone_violation.value <= 0.0,
            ),
            (
                "grid_excess",
                self.grid_excess.value,
                0.0,
                self.grid_excess.value <= 0.0,
            ),
            (
                "grid_final_gap",
                self.grid_final_gap.value,
                0.0,
                self.grid_final_gap.value == 0.0,
            ),
            (
                "grid_oracle_gap",
                self.grid_oracle_gap.value,
                tol.oracle,
                self.grid_oracle_gap.value <= tol.oracle,
            ),
            (
                "sandwich_violation",
                self.sandwich_violation.value,
                REGION_TOL,
                self.sandwich_violation.value <= REGION_TOL,
            ),
            (
                "payoff_bound_slack",
                self.payoff_bound_slack.value,
                0.0,
                self.payoff_bound_slack.value <= 0.0,
            ),
        ]
    }
}

fn digest(rows: &[InstanceCheck]) -> String {
    let text = serde_json::to_string(rows).expect("serializable rows");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// `count` standard-mode and `count` triplet-mode instances, checked in
/// parallel on the current rayon pool; results are in instance order.
pub fn run_sweep(count: usize, seed: u64, caps: &OracleCaps) -> Result<SweepSummary> {
    let run = |mode: Mode, salt: u64| -> Result<Vec<InstanceCheck>> {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(instance_seed(seed ^ salt, i));
                let inst = random_instance(&mut rng, mode);
                check_instance(&inst, &mut rng, caps)
            })
            .collect()
    };
    let standard = run(Mode::Standard, 0)?;
    let triplet = run(Mode::Triplet, 0x7472_6970_6c65_7400)?;
    let both: Vec<InstanceCheck> = standard.iter().chain(&triplet).copied().collect();
    Ok(SweepSummary {
        count,
        seed,
        coincidence_gap: Worst::max_of(&both, |r| r.coincidence_gap),
        tau_star_gap: Worst::max_of(&both, |r| r.tau_star_gap),
        saddle_dev_standard: Worst::max_of(&standard, |r| r.saddle_dev),
        saddle_dev_triplet: Worst::max_of(&triplet, |r| r.saddle_dev),
        submartingale_worst: Worst::min_of(&both, |r| r.submartingale_worst),
        grid_monotone_violation: Worst::max_of(&both, |r| r.grid_monotone_violation),
        grid_excess: Worst::max_of(&both, |r| r.grid_excess),
        grid_final_gap: Worst::max_of(&both, |r| r.grid_final_gap.abs()),
        grid_oracle_gap: Worst::max_of(&both, |r| r.grid_oracle_gap),
        sandwich_violation: Worst::max_of(&both, |r| r.sandwich_violation),
        payoff_bound_slack: Worst::max_of(&both, |r| r.payoff_bound_slack),
        instances_digest: digest(&both),
        standard,
        triplet,
    })
}
