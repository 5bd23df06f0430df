//! Commands behind the `rdg` binary and the JSON report they emit.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::ambiguity::{measure_of, mutually_singular, paste_policies, Policy};
use crate::error::{Error, Result};
use crate::oracle::OracleCaps;
use crate::oracle::{self, OrderValues};
use crate::sde::{check_increment_scaling, lipschitz_probe, ratio_spread};
use crate::solver::{
    backward_induction, convergence_report, extract_gamma_star, extract_p_star, extract_tau_star,
    submartingale_slack, GameSolution, StoppingRegion, REGION_TOL,
};
use crate::spec::{parse_spec, GameSpec, Tolerances};
use crate::sweep::run_sweep;
use crate::tree::ScenarioTree;

/// Exact agreement tolerance for pasted measures.
pub const PASTE_TOL: f64 = 1e-12;
/// Largest admissible spread of increment-scaling ratios.
pub const SCALING_SPREAD: f64 = 4.0;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_SWEEP_COUNT: usize = 200;
pub const DEFAULT_PASTE_COUNT: usize = 100;
const LIPSCHITZ_SAMPLES: usize = 1000;
const SINGULAR_PAIRS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Oracle,
    Converge,
    PasteCheck,
    SdeCheck,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Oracle => "oracle",
            Command::Converge => "converge",
            Command::PasteCheck => "paste-check",
            Command::SdeCheck => "sde-check",
            Command::Sweep => "sweep",
        }
    }

    pub fn needs_spec(self) -> bool {
        self != Command::Sweep
    }
}

#[derive(Debug, Clone, Default)]
pub struct Flags {
    /// Worker threads; `None` uses rayon's default.
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub n_max: Option<u32>,
    pub count: Option<usize>,
    pub dump_values: Option<PathBuf>,
    pub all_orders: bool,
    pub tol_oracle: Option<f64>,
    pub tol_submart: Option<f64>,
}

impl Flags {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    fn tolerances(&self, base: Tolerances) -> Tolerances {
        Tolerances {
            oracle: self.tol_oracle.unwrap_or(base.oracle),
            submartingale: self.tol_submart.unwrap_or(base.submartingale),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToleranceOutcome {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    /// SHA-256 of the game file (hex); `null` for `sweep`.
    pub spec_digest: Option<String>,
    pub results: Value,
    pub tolerance_outcomes: Vec<ToleranceOutcome>,
    pub passed: bool,
    pub wall_time_ms: f64,
}

impl Report {
    /// The report without the wall-time field, for determinism comparisons.
    pub fn stable_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("serializable report");
        value
            .as_object_mut()
            .expect("object")
            .remove("wall_time_ms");
        serde_json::to_string_pretty(&value).expect("serializable report")
    }
}

#[derive(Default)]
struct Outcomes(Vec<ToleranceOutcome>);

impl Outcomes {
    /// `value <= tolerance`.
    fn at_most(&mut self, name: &str, value: f64, tolerance: f64) {
        self.push(name, value, tolerance, value <= tolerance);
    }

    /// `value >= tolerance`.
    fn at_least(&mut self, name: &str, value: f64, tolerance: f64) {
        self.push(name, value, tolerance, value >= tolerance);
    }

    fn push(&mut self, name: &str, value: f64, tolerance: f64, pass: bool) {
        self.0.push(ToleranceOutcome {
            name: name.to_string(),
            value,
            tolerance,
            pass,
        });
    }
}

pub fn spec_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Parses `spec_text` (when the command needs one) and runs `command` on a
/// pool of `flags.workers` threads.
pub fn run_text(command: Command, spec_text: Option<&str>, flags: &Flags) -> Result<Report> {
    let spec = match spec_text {
        Some(text) => Some(parse_spec(text)?),
        None if command.needs_spec() => {
            return Err(Error::validation(
                "",
                format!("`{}` needs a spec file", command.name()),
            ));
        }
        None => None,
    };
    let mut report = run(command, spec.as_ref(), flags)?;
    report.spec_digest = spec_text.map(spec_digest);
    Ok(report)
}

pub fn run(command: Command, spec: Option<&GameSpec>, flags: &Flags) -> Result<Report> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = flags.workers {
        builder = builder.num_threads(k.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Io(e.to_string()))?;
    let started = Instant::now();
    let (results, outcomes) = pool.install(|| -> Result<(Value, Outcomes)> {
        let need = || {
            spec.ok_or_else(|| Error::validation("", format!("`{}` needs a spec", command.name())))
        };
        match command {
            Command::Solve => solve(need()?, flags),
            Command::Oracle => oracle_cmd(need()?, flags),
            Command::Converge => converge(need()?, flags),
            Command::PasteCheck => paste_check(need()?, flags),
            Command::SdeCheck => sde_check(need()?, flags),
            Command::Sweep => sweep(spec, flags),
        }
    })?;
    let passed = outcomes.0.iter().all(|o| o.pass);
    Ok(Report {
        command: command.name().to_string(),
        spec_digest: None,
        results,
        tolerance_outcomes: outcomes.0,
        passed,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

fn sandwich_violation(tree: &ScenarioTree, spec: &GameSpec, sol: &GameSolution) -> (f64, f64) {
    let pay = &spec.payoffs;
    let mut sandwich: f64 = 0.0;
    let mut terminal: f64 = 0.0;
    for id in 0..tree.len() {
        if tree.is_leaf(id) {
            terminal = terminal.max((sol.v[id] - pay.lower[id]).abs());
        } else {
            sandwich = sandwich.max(sol.v[id] - pay.upper[id]);
            if sol.eligible[tree.depth(id)] {
                sandwich = sandwich.max(pay.lower[id] - sol.v[id]);
            }
        }
    }
    (sandwich, terminal)
}

fn dump_csv(
    path: &PathBuf,
    spec: &GameSpec,
    sol: &GameSolution,
    tau: &StoppingRegion,
    gamma: &StoppingRegion,
) -> Result<()> {
    let tree = &spec.tree;
    let pay = &spec.payoffs;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record([
        "node_id",
        "depth",
        "L",
        "U",
        "g",
        "cont",
        "v",
        "tau_star",
        "gamma_star",
    ])
    .map_err(io)?;
    for id in 0..tree.len() {
        let cont = sol.cont[id].map_or_else(String::new, |c| c.to_string());
        w.write_record([
            id.to_string(),
            tree.depth(id).to_string(),
            pay.lower[id].to_string(),
            pay.upper[id].to_string(),
            pay.g[id].to_string(),
            cont,
            sol.v[id].to_string(),
            u8::from(tau.contains(id)).to_string(),
            u8::from(gamma.contains(id)).to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn solve(spec: &GameSpec, flags: &Flags) -> Result<(Value, Outcomes)> {
    let tol = flags.tolerances(spec.tolerances);
    let tree = &spec.tree;
    let sol = backward_induction(tree, &spec.payoffs, &spec.menu)?;
    let tau = extract_tau_star(tree, &sol);
    let gamma = extract_gamma_star(tree, &sol);
    let p_star = extract_p_star(tree, &sol);
    let terminal_zeta = StoppingRegion::terminal(tree);
    let submart = submartingale_slack(
        tree,
        &spec.payoffs,
        &spec.menu,
        &sol,
        &tau.union(&terminal_zeta),
    )?;
    // informational: the process is not stopped at τ*
    let after = submartingale_slack(tree, &spec.payoffs, &spec.menu, &sol, &terminal_zeta)?;
    let bound = spec.payoffs.check_payoff_bound(tree, f64::INFINITY)?;
    let (sandwich, terminal) = sandwich_violation(tree, spec, &sol);
    if let Some(path) = &flags.dump_values {
        dump_csv(path, spec, &sol, &tau, &gamma)?;
    }
    let p_map: BTreeMap<String, usize> = tree
        .decision_nodes()
        .map(|id| (id.to_string(), p_star.kernel(id)))
        .collect();
    let results = json!({
        "V0": sol.value(),
        "nodes": tree.len(),
        "steps": tree.steps(),
        "tau_star_depth_histogram": tau.depth_histogram(tree),
        "gamma_star_depth_histogram": gamma.depth_histogram(tree),
        "p_star": p_map,
        "submartingale_worst": submart.worst,
        "submartingale_witness": submart.witness,
        "after_tau_star_worst": after.worst,
        "payoff_bound_slack": bound,
        "sandwich_violation": sandwich,
        "terminal_violation": terminal,
    });
    let mut out = Outcomes::default();
    out.at_least("submartingale_worst", submart.worst, -tol.submartingale);
    out.at_most("payoff_bound_slack", bound, 0.0);
    out.at_most("sandwich_violation", sandwich, REGION_TOL);
    out.at_most("terminal_violation", terminal, REGION_TOL);
    Ok((results, out))
}

fn orders_json(o: &OrderValues) -> Value {
    json!({
        "tau_gamma_p": o.tau_gamma_p,
        "tau_p_gamma": o.tau_p_gamma,
        "gamma_tau_p": o.gamma_tau_p,
        "gamma_p_tau": o.gamma_p_tau,
        "p_tau_gamma": o.p_tau_gamma,
        "p_gamma_tau": o.p_gamma_tau,
    })
}

fn oracle_cmd(spec: &GameSpec, flags: &Flags) -> Result<(Value, Outcomes)> {
    let tol = flags.tolerances(spec.tolerances);
    let (tree, pay, menu, caps) = (&spec.tree, &spec.payoffs, &spec.menu, &spec.caps);
    let sol = backward_induction(tree, pay, menu)?;
    let v0 = sol.value();
    let bf = oracle::bruteforce_values(tree, pay, menu, &vec![true; tree.steps() + 1], caps)?;
    let tau = extract_tau_star(tree, &sol);
    let gamma = extract_gamma_star(tree, &sol);
    let p_star = extract_p_star(tree, &sol);
    let saddle = oracle::saddle_deviation(tree, pay, menu, &tau, &gamma, &p_star, v0, caps)?;
    let coincidence_gap = (bf.lower - bf.upper)
        .abs()
        .max((bf.lower - v0).abs())
        .max((bf.upper - v0).abs());
    let tau_star_gap = (saddle.best_gamma_reply - v0).abs();
    let mut results = json!({
        "lower": bf.lower,
        "upper": bf.upper,
        "solver_V0": v0,
        "coincidence_gap": coincidence_gap,
        "tau_star_gap": tau_star_gap,
        "saddle_dev": saddle.max_dev,
        "saddle_value": saddle.value,
        "counts": {
            "stopping_times": bf.tau_rules,
            "policies": bf.policies,
        },
    });
    if flags.all_orders {
        results["orders"] = orders_json(&bf.orders);
    }
    let mut out = Outcomes::default();
    out.at_most("coincidence_gap", coincidence_gap, tol.oracle);
    out.at_most("tau_star_gap", tau_star_gap, tol.oracle);
    out.at_most("saddle_dev", saddle.max_dev, tol.oracle);
    Ok((results, out))
}

/// Smallest `n` with `2^n >= N`.
pub fn full_grid_level(steps: usize) -> u32 {
    steps.max(1).next_power_of_two().trailing_zeros()
}

fn converge(spec: &GameSpec, flags: &Flags) -> Result<(Value, Outcomes)> {
    let tree = &spec.tree;
    let full_level = full_grid_level(tree.steps());
    let n_max = flags.n_max.unwrap_or(full_level);
    let rows = convergence_report(tree, &spec.payoffs, &spec.menu, n_max)?;
    let monotone = rows
        .windows(2)
        .map(|w| w[0].value - w[1].value)
        .fold(0.0f64, f64::max);
    let min_gap = rows.iter().map(|r| r.gap).fold(f64::INFINITY, f64::min);
    let full_gap = rows
        .iter()
        .filter(|r| r.n >= full_level)
        .map(|r| r.gap.abs())
        .fold(0.0f64, f64::max);
    let table: Vec<Value> = rows
        .iter()
        .map(|r| json!({"n": r.n, "V_n0": r.value, "gap": r.gap}))
        .collect();
    let results = json!({
        "V0": rows[0].value + rows[0].gap,
        "full_grid_level": full_level,
        "rows": table,
    });
    let mut out = Outcomes::default();
    out.at_most("monotone_violation", monotone, 0.0);
    out.at_least("min_gap", min_gap, 0.0);
    out.at_most("gap_on_full_grid", full_gap, 0.0);
    Ok((results, out))
}

fn random_policy(rng: &mut impl Rng, spec: &GameSpec) -> Policy {
    let mut p = Policy::zeros(&spec.tree);
    for id in spec.tree.decision_nodes() {
        p.set(id, rng.gen_range(0..spec.menu.at(id).len()));
    }
    p
}

fn paste_check(spec: &GameSpec, flags: &Flags) -> Result<(Value, Outcomes)> {
    let tree = &spec.tree;
    let menu = &spec.menu;
    let count = flags.count.unwrap_or(DEFAULT_PASTE_COUNT);
    let mut rng = ChaCha8Rng::seed_from_u64(flags.seed());
    let mut marginal_err: f64 = 0.0;
    let mut conditional_err: f64 = 0.0;
    let mut closure_failures = 0usize;
    for _ in 0..count {
        let s = rng.gen_range(0..=tree.steps());
        let base = random_policy(&mut rng, spec);
        let groups = rng.gen_range(1..=3);
        let patches_p: Vec<Policy> = (0..groups).map(|_| random_policy(&mut rng, spec)).collect();
        let mut sets: Vec<Vec<usize>> = vec![Vec::new(); groups];
        for a in tree.depth_range(s) {
            // group `groups` means "keep the base policy"
            let j = rng.gen_range(0..=groups);
            if j < groups {
                sets[j].push(a);
            }
        }
        let patches: Vec<(Vec<usize>, Policy)> = sets.into_iter().zip(patches_p).collect();
        let pasted = paste_policies(tree, &base, &patches, s)?;
        if pasted.check(tree, menu).is_err() {
            closure_failures += 1;
            continue;
        }
        let base_m = measure_of(tree, menu, &base)?;
        let pasted_m = measure_of(tree, menu, &pasted)?;
        for id in 0..tree.depth_range(s).end {
            marginal_err = marginal_err.max((base_m.mass[id] - pasted_m.mass[id]).abs());
        }
        let mut owner: Vec<Option<usize>> = vec![None; tree.len()];
        for (j, (set, _)) in patches.iter().enumerate() {
            for &a in set {
                owner[a] = Some(j);
            }
        }
        for leaf in tree.leaves() {
            let a = tree.ancestor_at_depth(leaf, s).expect("leaf below depth s");
            let expected = match owner[a] {
                None => base_m.mass[leaf],
                Some(j) => {
                    let patch = &patches[j].1;
                    let path = tree.path_nodes(leaf);
                    let mut mass = base_m.mass[a];
                    for pair in path[s..].windows(2) {
                        let (u, c) = (pair[0], pair[1]);
                        let pos = tree
                            .children(u)
                            .iter()
                            .position(|&x| x == c)
                            .expect("child");
                        mass *= menu.at(u)[patch.kernel(u)].weights[pos];
                    }
                    mass
                }
            };
            conditional_err = conditional_err.max((expected - pasted_m.mass[leaf]).abs());
        }
    }
    let results = json!({
        "count": count,
        "closure_failures": closure_failures,
        "marginal_error": marginal_err,
        "conditional_error": conditional_err,
    });
    let mut out = Outcomes::default();
    out.at_most("closure_failures", closure_failures as f64, 0.0);
    out.at_most("marginal_error", marginal_err, PASTE_TOL);
    out.at_most("conditional_error", conditional_err, PASTE_TOL);
    Ok((results, out))
}

/// Windows of `N/2`, `N/4`, `N/8` steps (at least one step each).
pub fn scaling_windows(steps: usize) -> Vec<usize> {
    let mut w: Vec<usize> = (1..=3).map(|j| (steps >> j).max(1)).collect();
    w.dedup();
    w
}

fn sde_check(spec: &GameSpec, flags: &Flags) -> Result<(Value, Outcomes)> {
    let sde = spec
        .sde
        .as_ref()
        .ok_or_else(|| Error::validation("generator", "`sde-check` needs a generator spec"))?;
    let rows = check_increment_scaling(sde, &scaling_windows(sde.steps), spec.max_nodes)?;
    let spread = ratio_spread(&rows);
    let lipschitz = lipschitz_probe(sde, LIPSCHITZ_SAMPLES, flags.seed());

    // policies differing at the root, otherwise random
    let tree = &spec.tree;
    let root_menu = spec.menu.at(tree.root()).len();
    let mut rng = ChaCha8Rng::seed_from_u64(flags.seed());
    let mut pairs_checked = 0usize;
    let mut overlapping = 0usize;
    let mut disjoint = 0usize;
    if root_menu > 1 {
        for _ in 0..SINGULAR_PAIRS {
            let p1 = random_policy(&mut rng, spec);
            let mut p2 = random_policy(&mut rng, spec);
            let shift = rng.gen_range(1..root_menu);
            p2.set(tree.root(), (p1.kernel(tree.root()) + shift) % root_menu);
            pairs_checked += 1;
            if mutually_singular(tree, &spec.menu, &p1, &p2)? {
                disjoint += 1;
            } else {
                overlapping += 1;
            }
        }
    }
    let table: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "window": r.window,
                "delta": r.delta,
                "mean_sup_increment": r.mean_sup_increment,
                "ratio": r.ratio,
            })
        })
        .collect();
    let results = json!({
        "singular": sde.singular,
        "scaling": table,
        "ratio_spread": spread,
        "lipschitz_ratio": lipschitz,
        "kappa": sde.kappa,
        "root_pairs_checked": pairs_checked,
        "root_pairs_disjoint": disjoint,
    });
    let mut out = Outcomes::default();
    out.at_most("ratio_spread", spread, SCALING_SPREAD);
    out.at_most("lipschitz_ratio", lipschitz, sde.kappa * (1.0 + 1e-12));
    if sde.singular {
        out.at_most("root_pairs_overlapping", overlapping as f64, 0.0);
    } else {
        // dominated lattices share their support
        out.at_most("root_pairs_disjoint", disjoint as f64, 0.0);
    }
    Ok((results, out))
}

fn sweep(spec: Option<&GameSpec>, flags: &Flags) -> Result<(Value, Outcomes)> {
    let base = spec.map_or_else(Tolerances::default, |s| s.tolerances);
    let tol = flags.tolerances(base);
    let count = flags.count.unwrap_or(DEFAULT_SWEEP_COUNT);
    let summary = run_sweep(count, flags.seed(), &OracleCaps::default())?;
    let mut out = Outcomes::default();
    for (name, value, tolerance, pass) in summary.outcomes(&tol) {
        out.push(name, value, tolerance, pass);
    }
    let results = serde_json::to_value(&summary).map_err(|e| Error::Io(e.to_string()))?;
    Ok((results, out))
}
