//! Scenario trees and kernel menus from controlled path-dependent SDEs
//! `dX = b(t, X, u) dt + u dB`, discretized by an Euler step with finite
//! shocks: `X_{k+1} = X_k + b(k, path, u) Δ + u √Δ ξ`.
//!
//! In singular mode every control value spawns its own block of children
//! and its kernel charges only that block, so priors that differ in the
//! control at some reachable node are mutually singular. In dominated mode
//! the children are the shock outcomes at a reference volatility and each
//! control tilts the shock weights, shifting the drift by `u`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ambiguity::{Kernel, KernelMenu, MASS_TOL};
use crate::error::{Error, Result};
use crate::tree::{ScenarioTree, TimeGrid};

pub type DriftFn = dyn Fn(usize, &[&[f64]], f64) -> Vec<f64> + Send + Sync;

#[derive(Clone)]
pub enum Drift {
    Zero,
    Constant(f64),
    /// `coef · x_t`, componentwise.
    Linear(f64),
    /// `coef · max_{s<=t} x_s`, componentwise.
    RunningMax(f64),
    /// Arbitrary drift `(step, path, u) -> b`.
    Custom(Arc<DriftFn>),
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Zero => write!(f, "Zero"),
            Drift::Constant(v) => write!(f, "Constant({v})"),
            Drift::Linear(c) => write!(f, "Linear({c})"),
            Drift::RunningMax(c) => write!(f, "RunningMax({c})"),
            Drift::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Drift {
    pub fn eval(&self, step: usize, path: &[&[f64]], u: f64) -> Vec<f64> {
        let current = path[path.len() - 1];
        match self {
            Drift::Zero => vec![0.0; current.len()],
            Drift::Constant(v) => vec![*v; current.len()],
            Drift::Linear(c) => current.iter().map(|x| c * x).collect(),
            Drift::RunningMax(c) => (0..current.len())
                .map(|i| c * path.iter().map(|s| s[i]).fold(f64::NEG_INFINITY, f64::max))
                .collect(),
            Drift::Custom(f) => f(step, path, u),
        }
    }
}

/// Finite mean-zero, unit-variance shock law per dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum Shocks {
    /// `±1` with probability 1/2.
    Bernoulli,
    /// `{-√3, 0, √3}` with probabilities `{1/6, 2/3, 1/6}`.
    Trinomial,
    /// `(value, probability)` pairs.
    Custom(Vec<(f64, f64)>),
}

impl Shocks {
    pub fn outcomes(&self) -> Vec<(f64, f64)> {
        match self {
            Shocks::Bernoulli => vec![(1.0, 0.5), (-1.0, 0.5)],
            Shocks::Trinomial => {
                let a = 3f64.sqrt();
                vec![(a, 1.0 / 6.0), (0.0, 2.0 / 3.0), (-a, 1.0 / 6.0)]
            }
            Shocks::Custom(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdeSpec {
    pub dim: usize,
    pub horizon: f64,
    pub steps: usize,
    pub drift: Drift,
    pub controls: Vec<f64>,
    pub kappa: f64,
    pub shocks: Shocks,
    pub singular: bool,
    /// Reference volatility of the shared children in dominated mode.
    pub sigma: f64,
}

impl SdeSpec {
    pub fn new(horizon: f64, steps: usize, controls: Vec<f64>, kappa: f64) -> Self {
        Self {
            dim: 1,
            horizon,
            steps,
            drift: Drift::Zero,
            controls,
            kappa,
            shocks: Shocks::Bernoulli,
            singular: true,
            sigma: 1.0,
        }
    }

    pub fn with_drift(mut self, drift: Drift) -> Self {
        self.drift = drift;
        self
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        TimeGrid::new(self.horizon, self.steps)?;
        if self.dim == 0 {
            return Err(Error::InvalidSde("dimension must be at least 1".into()));
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::InvalidSde(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        if self.controls.is_empty() {
            return Err(Error::InvalidSde("control menu is empty".into()));
        }
        for &u in &self.controls {
            if !u.is_finite() || u.abs() > self.kappa {
                return Err(Error::InvalidControl {
                    u,
                    kappa: self.kappa,
                });
            }
        }
        let outcomes = self.shocks.outcomes();
        if outcomes.is_empty() {
            return Err(Error::InvalidSde("shock law is empty".into()));
        }
        if outcomes
            .iter()
            .any(|&(x, p)| !x.is_finite() || !(p.is_finite() && p >= 0.0))
        {
            return Err(Error::InvalidSde(
                "shock probabilities must be nonnegative".into(),
            ));
        }
        let total: f64 = outcomes.iter().map(|o| o.1).sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidSde(format!(
                "shock probabilities sum to {total}"
            )));
        }
        if !self.singular && !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidSde(
                "reference volatility must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Shock vectors (product over dimensions) and their probabilities.
    fn shock_vectors(&self) -> Vec<(Vec<f64>, f64)> {
        let one = self.shocks.outcomes();
        let mut out = vec![(Vec::new(), 1.0)];
        for _ in 0..self.dim {
            out = out
                .into_iter()
                .flat_map(|(v, p)| {
                    one.iter().map(move |&(x, q)| {
                        let mut w = v.clone();
                        w.push(x);
                        (w, p * q)
                    })
                })
                .collect();
        }
        out
    }

    /// Dominated-mode kernel for control `u`: each shock coordinate's weight
    /// is tilted by `1 + u √Δ ξ / σ`.
    fn tilted_weights(&self, u: f64, shocks: &[(Vec<f64>, f64)]) -> Result<Vec<f64>> {
        let root_dt = self.dt().sqrt();
        let weights: Vec<f64> = shocks
            .iter()
            .map(|(xi, p)| {
                p * xi
                    .iter()
                    .map(|x| 1.0 + u * root_dt * x / self.sigma)
                    .product::<f64>()
            })
            .collect();
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidControl {
                u,
                kappa: self.kappa,
            });
        }
        let total: f64 = weights.iter().sum();
        Ok(weights.into_iter().map(|w| w / total).collect())
    }
}

pub fn build_lattice(spec: &SdeSpec, max_nodes: usize) -> Result<(ScenarioTree, KernelMenu)> {
    spec.validate()?;
    let grid = TimeGrid::new(spec.horizon, spec.steps)?;
    let dt = spec.dt();
    let root_dt = dt.sqrt();
    let shocks = spec.shock_vectors();
    let tree = if spec.singular {
        ScenarioTree::build(grid, spec.dim, max_nodes, |k, path| {
            let x = path[path.len() - 1];
            let mut children = Vec::with_capacity(spec.controls.len() * shocks.len());
            for &u in &spec.controls {
                let b = spec.drift.eval(k, path, u);
                for (xi, _) in &shocks {
                    children.push(
                        (0..spec.dim)
                            .map(|i| x[i] + b[i] * dt + u * root_dt * xi[i])
                            .collect(),
                    );
                }
            }
            children
        })?
    } else {
        let u_ref = spec.controls[0];
        ScenarioTree::build(grid, spec.dim, max_nodes, |k, path| {
            let x = path[path.len() - 1];
            let b = spec.drift.eval(k, path, u_ref);
            shocks
                .iter()
                .map(|(xi, _)| {
                    (0..spec.dim)
                        .map(|i| x[i] + b[i] * dt + spec.sigma * root_dt * xi[i])
                        .collect()
                })
                .collect()
        })?
    };

    let kernels: Vec<Kernel> = if spec.singular {
        let block = shocks.len();
        spec.controls
            .iter()
            .enumerate()
            .map(|(j, &u)| {
                let mut w = vec![0.0; block * spec.controls.len()];
                for (s, (_, p)) in shocks.iter().enumerate() {
                    w[j * block + s] = *p;
                }
                Kernel::new(u, w)
            })
            .collect()
    } else {
        spec.controls
            .iter()
            .map(|&u| Ok(Kernel::new(u, spec.tilted_weights(u, &shocks)?)))
            .collect::<Result<_>>()?
    };
    let menus = (0..tree.len())
        .map(|id| {
            if tree.is_leaf(id) {
                Vec::new()
            } else {
                kernels.clone()
            }
        })
        .collect();
    let menu = KernelMenu::new(&tree, menus)?;
    Ok((tree, menu))
}

/// Largest observed `|b(t,ω,u) - b(t,ω',u)| / ‖ω - ω'‖_{0,t}` over random
/// path pairs (sup norm over the common history).
pub fn lipschitz_probe(spec: &SdeSpec, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let len = rng.gen_range(1..=spec.steps.max(1));
        let mut a: Vec<Vec<f64>> = vec![vec![0.0; spec.dim]];
        let mut b: Vec<Vec<f64>> = vec![vec![0.0; spec.dim]];
        for _ in 0..len {
            let next_a: Vec<f64> = a[a.len() - 1]
                .iter()
                .map(|x| x + rng.gen_range(-1.0..1.0))
                .collect();
            let next_b: Vec<f64> = b[b.len() - 1]
                .iter()
                .map(|x| x + rng.gen_range(-1.0..1.0))
                .collect();
            a.push(next_a);
            b.push(next_b);
        }
        let u = spec.controls[rng.gen_range(0..spec.controls.len())];
        let pa: Vec<&[f64]> = a.iter().map(Vec::as_slice).collect();
        let pb: Vec<&[f64]> = b.iter().map(Vec::as_slice).collect();
        let ba = spec.drift.eval(len - 1, &pa, u);
        let bb = spec.drift.eval(len - 1, &pb, u);
        let diff = ba
            .iter()
            .zip(&bb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let dist = a
            .iter()
            .zip(&b)
            .map(|(x, y)| {
                x.iter()
                    .zip(y)
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        if dist > 0.0 {
            worst = worst.max(diff / dist);
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    pub window: usize,
    pub delta: f64,
    /// `E[max_{1<=j<=w} |X_{t_j} - X_0|]` under the reference measure.
    pub mean_sup_increment: f64,
    /// `mean_sup_increment / √δ`.
    pub ratio: f64,
}

/// Exact tree expectation of the largest increment over windows of
/// `window` steps (`δ = window · Δ`), under the reference measure: the first
/// control's kernel in singular mode, untilted shocks in dominated mode.
pub fn check_increment_scaling(
    spec: &SdeSpec,
    windows: &[usize],
    max_nodes: usize,
) -> Result<Vec<ScalingRow>> {
    spec.validate()?;
    if let Some(&w) = windows.iter().find(|&&w| w == 0 || w > spec.steps) {
        return Err(Error::InvalidSde(format!(
            "window of {w} steps outside 1..={}",
            spec.steps
        )));
    }
    windows
        .par_iter()
        .map(|&w| {
            let mut sub = spec.clone();
            sub.steps = w;
            sub.horizon = w as f64 * spec.dt();
            let (tree, menu) = build_lattice(&sub, max_nodes)?;
            let shocks = spec.shock_vectors();
            let mut mass = vec![0.0; tree.len()];
            let mut sup = vec![0.0f64; tree.len()];
            mass[0] = 1.0;
            for id in tree.decision_nodes() {
                let weights: Vec<f64> = if spec.singular {
                    menu.at(id)[0].weights.clone()
                } else {
                    shocks.iter().map(|s| s.1).collect()
                };
                for (&c, wgt) in tree.children(id).iter().zip(&weights) {
                    mass[c] = mass[id] * wgt;
                    let inc = tree
                        .state(c)
                        .iter()
                        .zip(tree.state(0))
                        .map(|(x, x0)| (x - x0) * (x - x0))
                        .sum::<f64>()
                        .sqrt();
                    sup[c] = sup[id].max(inc);
                }
            }
            let mean: f64 = tree.leaves().map(|l| mass[l] * sup[l]).sum();
            let delta = sub.horizon;
            Ok(ScalingRow {
                window: w,
                delta,
                mean_sup_increment: mean,
                ratio: mean / delta.sqrt(),
            })
        })
        .collect()
}

/// Largest over smallest ratio in a scaling table.
pub fn ratio_spread(rows: &[ScalingRow]) -> f64 {
    let max = rows
        .iter()
        .map(|r| r.ratio)
        .fold(f64::NEG_INFINITY, f64::max);
    let min = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    max / min
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambiguity::{mutually_singular, Policy};
    use crate::tree::DEFAULT_MAX_NODES;

    #[test]
    fn zero_drift_single_step() {
        let spec = SdeSpec::new(0.25, 1, vec![0.8], 1.0);
        let (t, m) = build_lattice(&spec, DEFAULT_MAX_NODES).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.state(1), &[0.8 * 0.5]);
        assert_eq!(t.state(2), &[-0.8 * 0.5]);
        assert_eq!(m.at(0)[0].weights, vec![0.5, 0.5]);
    }

    #[test]
    fn constant_drift_one_euler_step() {
        let spec = SdeSpec::new(1.0, 1, vec![0.5], 1.0).with_drift(Drift::Constant(1.0));
        let (t, _) = build_lattice(&spec, DEFAULT_MAX_NODES).unwrap();
        assert_eq!(t.state(1), &[1.5]);
        assert_eq!(t.state(2), &[0.5]);
    }

    #[test]
    fn singular_controls_have_disjoint_supports() {
        let spec = SdeSpec::new(1.0, 1, vec![0.5, 1.0], 1.0);
        let (t, m) = build_lattice(&spec, DEFAULT_MAX_NODES).unwrap();
        assert_eq!(t.children(0).len(), 4);
        assert_eq!(m.at(0).len(), 2);
        let p1 = Policy::zeros(&t);
        let mut p2 = Policy::zeros(&t);
        p2.set(0, 1);
        assert!(mutually_singular(&t, &m, &p1, &p2).unwrap());
    }

    #[test]
    fn dominated_mode_shifts_drift() {
        let mut spec = SdeSpec::new(1.0, 4, vec![-0.5, 0.0, 0.5], 1.0);
        spec.singular = false;
        let (t, m) = build_lattice(&spec, DEFAULT_MAX_NODES).unwrap();
        assert_eq!(t.children(0).len(), 2);
        let dt = spec.dt();
        for (k, &u) in m.at(0).iter().zip(&spec.controls) {
            let mean: f64 = t
                .children(0)
                .iter()
                .zip(&k.weights)
                .map(|(&c, w)| w * t.state(c)[0])
                .sum();
            assert!((mean - u * dt).abs() < 1e-15);
        }
        let p1 = Policy::zeros(&t);
        let mut p2 = Policy::zeros(&t);
        p2.set(0, 2);
        assert!(!mutually_singular(&t, &m, &p1, &p2).unwrap());
    }

    #[test]
    fn control_bound() {
        let spec = SdeSpec::new(1.0, 2, vec![0.5, 1.5], 1.0);
        assert_eq!(
            build_lattice(&spec, DEFAULT_MAX_NODES).unwrap_err(),
            Error::InvalidControl { u: 1.5, kappa: 1.0 }
        );
        let mut tilt = SdeSpec::new(1.0, 1, vec![1.0], 1.0);
        tilt.singular = false;
        tilt.sigma = 0.5;
        assert!(matches!(
            build_lattice(&tilt, DEFAULT_MAX_NODES),
            Err(Error::InvalidControl { .. })
        ));
    }

    #[test]
    fn path_dependent_drift_does_not_recombine() {
        let spec = SdeSpec::new(2.0, 2, vec![1.0], 1.0).with_drift(Drift::RunningMax(0.5));
        let (t, _) = build_lattice(&spec, DEFAULT_MAX_NODES).unwrap();
        // (+,-) and (-,+) end at different states since the running max differs
        let up_down = t.children(1)[1];
        let down_up = t.children(2)[0];
        assert_ne!(t.state(up_down), t.state(down_up));
    }

    #[test]
    fn size_cap() {
        let spec = SdeSpec::new(1.0, 10, vec![0.5, 1.0], 1.0);
        assert!(matches!(
            build_lattice(&spec, 1000),
            Err(Error::SizeLimit { cap: 1000 })
        ));
    }

    #[test]
    fn single_step_increment_is_sqrt_dt() {
        for steps in [1, 2, 4, 8] {
            let spec = SdeSpec::new(1.0, steps, vec![1.0], 1.0);
            let rows = check_increment_scaling(&spec, &[1], DEFAULT_MAX_NODES).unwrap();
            assert!((rows[0].ratio - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lipschitz_probe_families() {
        let base = SdeSpec::new(1.0, 4, vec![1.0], 0.5);
        assert_eq!(lipschitz_probe(&base, 100, 1), 0.0);
        let lin = base.clone().with_drift(Drift::Linear(0.4));
        assert!(lipschitz_probe(&lin, 1000, 2) <= 0.4 * (1.0 + 1e-12));
        let rm = base.with_drift(Drift::RunningMax(-0.3));
        assert!(lipschitz_probe(&rm, 1000, 3) <= 0.3 * (1.0 + 1e-12));
    }
}
