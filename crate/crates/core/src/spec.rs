//! The JSON game description read by the command-line runner.
//!
//! ```json
//! {
//!   "mode": "standard",
//!   "tree": {"grid": {"T": 1.0, "N": 1}, "nodes": [...]},
//!   "payoff": {"kind": "table", "g": {...}, "L": {"0": 0.0, ...}, "U": {...}},
//!   "ambiguity": {"menus": {"0": [{"label": 0.5, "weights": {"1": 0.5, "2": 0.5}}]}}
//! }
//! ```
//!
//! Instead of `"tree"` a spec may carry `"generator": {"sde": {...}}`, in
//! which case the lattice builder supplies both tree and menus and the
//! `"ambiguity"` block must be absent.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ambiguity::{Kernel, KernelMenu};
use crate::error::{Error, Result};
use crate::oracle::{OracleCaps, ORACLE_TOL};
use crate::payoff::{Affine, PayoffKind, PayoffSpec, Payoffs};
use crate::sde::{build_lattice, Drift, SdeSpec, Shocks};
use crate::solver::SUBMART_TOL;
use crate::tree::{max_nodes_from_env, NodeId, ScenarioTree, TreeDoc};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Standard,
    /// `g = 0`, `L = U` at maturity, bounded payoffs.
    Triplet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSpecDoc {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<TreeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorDoc>,
    pub payoff: PayoffDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambiguity: Option<AmbiguityDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caps: Option<CapsDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<TolerancesDoc>,
    #[serde(default, rename = "M0", skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorDoc {
    pub sde: SdeDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeDoc {
    #[serde(default = "one")]
    pub d: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N")]
    pub steps: usize,
    #[serde(default)]
    pub drift: DriftDoc,
    pub controls: Vec<f64>,
    pub kappa: f64,
    #[serde(default = "yes")]
    pub singular: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shocks: Option<ShocksDoc>,
    #[serde(default = "unit")]
    pub sigma: f64,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftDoc {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    Linear {
        coef: f64,
    },
    RunningMax {
        coef: f64,
    },
}

/// `"bernoulli"`, `"trinomial"`, or an explicit list of outcomes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShocksDoc {
    Named(String),
    Custom(Vec<ShockDoc>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShockDoc {
    pub value: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffDoc {
    Table {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        g: Option<BTreeMap<String, f64>>,
        #[serde(rename = "L")]
        lower: BTreeMap<String, f64>,
        #[serde(rename = "U")]
        upper: BTreeMap<String, f64>,
    },
    Linear {
        params: LinearParams,
    },
    AsianPut {
        params: FamilyParams,
    },
    LookbackSpread {
        params: FamilyParams,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearParams {
    #[serde(default)]
    pub g: Affine,
    #[serde(rename = "L")]
    pub lower: Affine,
    #[serde(rename = "U")]
    pub upper: Affine,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyParams {
    #[serde(rename = "K")]
    pub strike: f64,
    #[serde(default)]
    pub m: f64,
    #[serde(default)]
    pub spread: f64,
    #[serde(default)]
    pub rate: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbiguityDoc {
    #[serde(default)]
    pub menus: BTreeMap<String, Vec<KernelDoc>>,
    /// Applied to every decision node whose arity matches and that has no
    /// explicit menu.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform: Option<Vec<UniformKernelDoc>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelDoc {
    #[serde(default)]
    pub label: f64,
    /// Child id (as a string) to weight; absent children get weight 0.
    pub weights: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformKernelDoc {
    #[serde(default)]
    pub label: f64,
    /// Weights in child order.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapsDoc {
    pub max_nodes: Option<usize>,
    pub max_rules: Option<u64>,
    pub max_policies: Option<u64>,
    pub max_triples: Option<u64>,
    pub max_pairs: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesDoc {
    pub oracle: Option<f64>,
    pub submartingale: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub oracle: f64,
    pub submartingale: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            oracle: ORACLE_TOL,
            submartingale: SUBMART_TOL,
        }
    }
}

/// A validated game instance.
#[derive(Debug, Clone)]
pub struct GameSpec {
    pub mode: Mode,
    pub tree: ScenarioTree,
    pub menu: KernelMenu,
    pub payoff: PayoffSpec,
    pub payoffs: Payoffs,
    pub sde: Option<SdeSpec>,
    pub max_nodes: usize,
    pub caps: OracleCaps,
    pub tolerances: Tolerances,
}

pub fn parse_spec(text: &str) -> Result<GameSpec> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: GameSpecDoc = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    GameSpec::from_doc(doc)
}

fn node_key(path: &str, key: &str, tree: &ScenarioTree) -> Result<NodeId> {
    let id: NodeId = key
        .parse()
        .map_err(|_| Error::validation(format!("{path}.{key}"), "node ids must be integers"))?;
    if id >= tree.len() {
        return Err(Error::validation(
            format!("{path}.{key}"),
            format!("unknown node {id}"),
        ));
    }
    Ok(id)
}

fn node_table(
    path: &str,
    table: &BTreeMap<String, f64>,
    tree: &ScenarioTree,
) -> Result<BTreeMap<NodeId, f64>> {
    table
        .iter()
        .map(|(k, v)| Ok((node_key(path, k, tree)?, *v)))
        .collect()
}

impl SdeDoc {
    pub fn to_spec(&self) -> Result<SdeSpec> {
        let drift = match self.drift {
            DriftDoc::Zero => Drift::Zero,
            DriftDoc::Constant { value } => Drift::Constant(value),
            DriftDoc::Linear { coef } => Drift::Linear(coef),
            DriftDoc::RunningMax { coef } => Drift::RunningMax(coef),
        };
        let shocks = match &self.shocks {
            None => Shocks::Bernoulli,
            Some(ShocksDoc::Named(name)) => match name.as_str() {
                "bernoulli" => Shocks::Bernoulli,
                "trinomial" => Shocks::Trinomial,
                other => {
                    return Err(Error::validation(
                        "generator.sde.shocks",
                        format!("unknown shock scheme `{other}`"),
                    ))
                }
            },
            Some(ShocksDoc::Custom(list)) => {
                Shocks::Custom(list.iter().map(|s| (s.value, s.prob)).collect())
            }
        };
        let spec = SdeSpec {
            dim: self.d,
            horizon: self.horizon,
            steps: self.steps,
            drift,
            controls: self.controls.clone(),
            kappa: self.kappa,
            shocks,
            singular: self.singular,
            sigma: self.sigma,
        };
        spec.validate().map_err(|e| match e {
            Error::InvalidControl { u, kappa } => Error::validation(
                "generator.sde.controls",
                format!("control {u} violates |u| <= kappa = {kappa}"),
            ),
            other => Error::validation("generator.sde", other.to_string()),
        })?;
        Ok(spec)
    }
}

fn build_menu(tree: &ScenarioTree, doc: Option<&AmbiguityDoc>) -> Result<KernelMenu> {
    let Some(doc) = doc else {
        return Ok(KernelMenu::uniform(tree));
    };
    let mut menus: Vec<Option<Vec<Kernel>>> = vec![None; tree.len()];
    for (key, kernels) in &doc.menus {
        let id = node_key("ambiguity.menus", key, tree)?;
        let path = format!("ambiguity.menus.{key}");
        if tree.is_leaf(id) {
            return Err(Error::validation(path, "leaves take no kernels"));
        }
        let children = tree.children(id);
        let mut out = Vec::with_capacity(kernels.len());
        for (i, k) in kernels.iter().enumerate() {
            let mut w = vec![0.0; children.len()];
            for (child_key, weight) in &k.weights {
                let kpath = format!("{path}[{i}].weights");
                let child = node_key(&kpath, child_key, tree)?;
                let pos = children.iter().position(|&c| c == child).ok_or_else(|| {
                    Error::validation(
                        format!("{kpath}.{child_key}"),
                        format!("not a child of node {id}"),
                    )
                })?;
                w[pos] = *weight;
            }
            out.push(Kernel::new(k.label, w));
        }
        menus[id] = Some(out);
    }
    let menus = (0..tree.len())
        .map(|id| {
            if tree.is_leaf(id) {
                return Ok(Vec::new());
            }
            if let Some(m) = menus[id].take() {
                return Ok(m);
            }
            let arity = tree.children(id).len();
            match &doc.uniform {
                Some(template) => {
                    let fitting: Vec<Kernel> = template
                        .iter()
                        .filter(|k| k.weights.len() == arity)
                        .map(|k| Kernel::new(k.label, k.weights.clone()))
                        .collect();
                    if fitting.is_empty() {
                        Err(Error::validation(
                            "ambiguity.uniform",
                            format!("no kernel of arity {arity} for node {id}"),
                        ))
                    } else {
                        Ok(fitting)
                    }
                }
                None => Err(Error::validation(
                    format!("ambiguity.menus.{id}"),
                    "decision node has no menu",
                )),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    KernelMenu::new(tree, menus).map_err(|e| match e {
        Error::InvalidKernel { node, reason } => {
            Error::validation(format!("ambiguity.menus.{node}"), reason)
        }
        Error::EmptyMenu { node } => {
            Error::validation(format!("ambiguity.menus.{node}"), "empty menu")
        }
        other => other,
    })
}

fn payoff_spec(doc: &PayoffDoc, tree: &ScenarioTree) -> Result<PayoffSpec> {
    let kind = match doc {
        PayoffDoc::Table { g, lower, upper } => PayoffKind::Table {
            g: g.as_ref()
                .map(|g| node_table("payoff.g", g, tree))
                .transpose()?,
            lower: node_table("payoff.L", lower, tree)?,
            upper: node_table("payoff.U", upper, tree)?,
        },
        PayoffDoc::Linear { params } => PayoffKind::Linear {
            g: params.g.clone(),
            lower: params.lower.clone(),
            upper: params.upper.clone(),
        },
        PayoffDoc::AsianPut { params } => PayoffKind::AsianPut {
            strike: params.strike,
            shift: params.m,
            spread: params.spread,
        },
        PayoffDoc::LookbackSpread { params } => PayoffKind::LookbackSpread {
            strike: params.strike,
            shift: params.m,
            spread: params.spread,
            rate: params.rate,
        },
    };
    if let PayoffDoc::AsianPut { params } | PayoffDoc::LookbackSpread { params } = doc {
        if params.spread < 0.0 {
            return Err(Error::validation(
                "payoff.params.spread",
                "spread must be nonnegative",
            ));
        }
    }
    Ok(PayoffSpec::new(kind))
}

impl GameSpec {
    pub fn from_doc(doc: GameSpecDoc) -> Result<Self> {
        let caps_doc = doc.caps.clone().unwrap_or_default();
        let max_nodes = caps_doc.max_nodes.unwrap_or_else(max_nodes_from_env);
        let defaults = OracleCaps::default();
        let caps = OracleCaps {
            max_rules: caps_doc.max_rules.map_or(defaults.max_rules, u128::from),
            max_policies: caps_doc
                .max_policies
                .map_or(defaults.max_policies, u128::from),
            max_triples: caps_doc
                .max_triples
                .map_or(defaults.max_triples, u128::from),
            max_pairs: caps_doc.max_pairs.map_or(defaults.max_pairs, u128::from),
        };
        let tol_doc = doc.tolerances.clone().unwrap_or_default();
        let tolerances = Tolerances {
            oracle: tol_doc.oracle.unwrap_or(ORACLE_TOL),
            submartingale: tol_doc.submartingale.unwrap_or(SUBMART_TOL),
        };

        let (tree, menu, sde) = match (&doc.tree, &doc.generator) {
            (Some(_), Some(_)) => {
                return Err(Error::validation(
                    "",
                    "give either `tree` or `generator`, not both",
                ));
            }
            (None, None) => {
                return Err(Error::validation(
                    "",
                    "one of `tree` or `generator` is required",
                ))
            }
            (Some(tree_doc), None) => {
                if tree_doc.nodes.len() > max_nodes {
                    return Err(Error::SizeLimit { cap: max_nodes });
                }
                let tree = ScenarioTree::from_doc(tree_doc.clone())
                    .map_err(|e| Error::validation("tree", e.to_string()))?;
                let menu = build_menu(&tree, doc.ambiguity.as_ref())?;
                (tree, menu, None)
            }
            (None, Some(generator)) => {
                if doc.ambiguity.is_some() {
                    return Err(Error::validation(
                        "ambiguity",
                        "the generator supplies the kernel menus; drop the ambiguity block",
                    ));
                }
                let sde = generator.sde.to_spec()?;
                let (tree, menu) = build_lattice(&sde, max_nodes)?;
                (tree, menu, Some(sde))
            }
        };

        let payoff = payoff_spec(&doc.payoff, &tree)?;
        let payoffs = payoff.tabulate(&tree).map_err(|e| match e {
            Error::PayoffOrder { node, lower, upper } => Error::validation(
                format!("payoff.L.{node}"),
                format!("L = {lower} exceeds U = {upper} at node {node}"),
            ),
            Error::MissingTableEntry { table, node } => {
                Error::validation(format!("payoff.{table}.{node}"), "missing table entry")
            }
            other => other,
        })?;
        if doc.mode == Mode::Triplet {
            payoffs.check_triplet(&tree, doc.bound)?;
        }
        Ok(Self {
            mode: doc.mode,
            tree,
            menu,
            payoff,
            payoffs,
            sde,
            max_nodes,
            caps,
            tolerances,
        })
    }

    /// Explicit-form document (tree, tabulated payoffs, menus) describing
    /// this instance.
    pub fn to_explicit_doc(&self) -> GameSpecDoc {
        let tree = &self.tree;
        let table = |values: &[f64]| -> BTreeMap<String, f64> {
            values
                .iter()
                .enumerate()
                .map(|(i, v)| (i.to_string(), *v))
                .collect()
        };
        let menus = tree
            .decision_nodes()
            .map(|id| {
                let kernels = self
                    .menu
                    .at(id)
                    .iter()
                    .map(|k| KernelDoc {
                        label: k.label,
                        weights: tree
                            .children(id)
                            .iter()
                            .zip(&k.weights)
                            .map(|(c, w)| (c.to_string(), *w))
                            .collect(),
                    })
                    .collect();
                (id.to_string(), kernels)
            })
            .collect();
        GameSpecDoc {
            mode: self.mode,
            tree: Some(tree.to_doc()),
            generator: None,
            payoff: PayoffDoc::Table {
                g: Some(table(&self.payoffs.g)),
                lower: table(&self.payoffs.lower),
                upper: table(&self.payoffs.upper),
            },
            ambiguity: Some(AmbiguityDoc {
                menus,
                uniform: None,
            }),
            caps: None,
            tolerances: None,
            bound: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const E1: &str = r#"{
        "tree": {"grid": {"T": 1.0, "N": 1}, "nodes": [
            {"id": 0, "depth": 0, "state": [0.0], "parent": null, "children": [1, 2]},
            {"id": 1, "depth": 1, "state": [1.0], "parent": 0, "children": []},
            {"id": 2, "depth": 1, "state": [-1.0], "parent": 0, "children": []}
        ]},
        "payoff": {"kind": "table", "L": {"0": 0.0, "1": 1.0, "2": 3.0}, "U": {"0": 2.0, "1": 1.0, "2": 3.0}},
        "ambiguity": {"menus": {"0": [{"label": 1.0, "weights": {"1": 0.5, "2": 0.5}}]}}
    }"#;

    #[test]
    fn parses_e1() {
        let spec = parse_spec(E1).unwrap();
        assert_eq!(spec.tree.len(), 3);
        assert_eq!(spec.payoffs.lower, vec![0.0, 1.0, 3.0]);
        assert_eq!(spec.payoffs.g, vec![0.0; 3]);
        assert_eq!(spec.menu.at(0).len(), 1);
    }

    #[test]
    fn order_violation_cites_node() {
        let bad = E1.replace(r#""U": {"0": 2.0"#, r#""U": {"0": -2.0"#);
        match parse_spec(&bad) {
            Err(Error::Validation { path, message }) => {
                assert_eq!(path, "payoff.L.0");
                assert!(message.contains("node 0"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_a_path() {
        let bad = E1.replace(r#""N": 1"#, r#""N": "one""#);
        match parse_spec(&bad) {
            Err(Error::Parse { path, .. }) => assert_eq!(path, "tree.grid.N"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn generator_control_bound() {
        let text = r#"{
            "generator": {"sde": {"d": 1, "T": 1.0, "N": 2, "drift": {"family": "constant", "value": 0.2},
                                  "controls": [0.5, 1.5], "kappa": 1.0, "singular": true}},
            "payoff": {"kind": "asian_put", "params": {"K": 0.5, "spread": 1.0}}
        }"#;
        match parse_spec(text) {
            Err(Error::Validation { path, .. }) => assert_eq!(path, "generator.sde.controls"),
            other => panic!("{other:?}"),
        }
        let ok = text.replace("1.5]", "1.0]");
        let spec = parse_spec(&ok).unwrap();
        assert_eq!(spec.tree.len(), 1 + 4 + 16);
        assert_eq!(spec.menu.at(0).len(), 2);
    }

    #[test]
    fn uniform_menu_shorthand() {
        let text = E1.replace(
            r#""menus": {"0": [{"label": 1.0, "weights": {"1": 0.5, "2": 0.5}}]}"#,
            r#""uniform": [{"label": 0.0, "weights": [0.5, 0.5]}, {"label": 1.0, "weights": [0.9, 0.1]}]"#,
        );
        let spec = parse_spec(&text).unwrap();
        assert_eq!(spec.menu.at(0).len(), 2);
    }

    #[test]
    fn triplet_mode_checks() {
        let text = E1.replace(r#""tree""#, r#""mode": "triplet", "tree""#);
        assert!(parse_spec(&text).is_ok());
        let bad = text.replace(r#""2": 3.0}}"#, r#""2": 4.0}}"#);
        assert!(matches!(parse_spec(&bad), Err(Error::Validation { .. })));
    }

    #[test]
    fn explicit_doc_round_trip() {
        let spec = parse_spec(E1).unwrap();
        let text = serde_json::to_string(&spec.to_explicit_doc()).unwrap();
        let again = parse_spec(&text).unwrap();
        assert_eq!(again.tree, spec.tree);
        assert_eq!(again.payoffs, spec.payoffs);
        assert_eq!(again.menu, spec.menu);
    }
}
