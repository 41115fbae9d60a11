//! Finite-domain structural causal models.
//!
//! Tables are indexed by the mixed-radix configuration of a variable's
//! parents, parents ordered by name, the first parent most significant.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphJson, Kind, MixedGraph, ProblemSpec};
use crate::set::{self, contains, VSet};

/// Row sums must be within this distance of one before renormalization.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

pub type Table = Vec<Vec<f64>>;

#[derive(Debug, Clone)]
pub struct DiscreteScm {
    pub graph: MixedGraph,
    pub spec: ProblemSpec,
    pub domains: Vec<usize>,
    pub y_values: Vec<f64>,
    pub parents: Vec<Vec<usize>>,
    /// Environment-independent tables; empty for mutable variables.
    pub cpt: Vec<Table>,
    /// Per-environment tables of mutable variables, aligned with `environments`.
    pub mutable_cpt: Vec<Vec<Table>>,
    pub environments: Vec<String>,
    order: Vec<usize>,
}

/// How mutable variables are generated during enumeration.
#[derive(Clone, Copy)]
pub enum MutableRule<'a> {
    /// Every mutable variable fixed to the value at its index.
    Do(&'a [usize]),
    /// Deterministic map from parent configuration to value.
    Policy(&'a InterventionPolicy),
    /// Stochastic kernel: one table per mutable variable index.
    Kernel(&'a [Table]),
    /// Tables of the environment with this index.
    Env(usize),
}

/// A deterministic intervention: for each mutable variable in topological
/// order, the value chosen for every parent configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterventionPolicy {
    pub vars: Vec<usize>,
    pub maps: Vec<Vec<usize>>,
}

impl InterventionPolicy {
    pub fn value(&self, var: usize, row: usize) -> usize {
        let k = self.vars.iter().position(|&v| v == var).expect("policy covers every mutable variable");
        self.maps[k][row]
    }

    pub fn to_json(&self, scm: &DiscreteScm) -> BTreeMap<String, Vec<usize>> {
        self.vars.iter().zip(&self.maps).map(|(&v, m)| (scm.graph.name(v).to_string(), m.clone())).collect()
    }
}

fn check_table(name: &str, t: &mut Table, rows: usize, width: usize) -> Result<()> {
    if t.len() != rows {
        return Err(Error::Input(format!("table for {name} has {} rows, expected {rows}", t.len())));
    }
    for row in t.iter_mut() {
        if row.len() != width {
            return Err(Error::Input(format!("table row for {name} has {} entries, expected {width}", row.len())));
        }
        if row.iter().any(|&p| !(0.0..=1.0 + ROW_SUM_TOLERANCE).contains(&p) || p.is_nan()) {
            return Err(Error::Input(format!("table for {name} has an entry outside [0, 1]")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::Input(format!("table row for {name} sums to {s}")));
        }
        for p in row.iter_mut() {
            *p /= s;
        }
    }
    Ok(())
}

impl DiscreteScm {
    /// Validates shapes and renormalizes rows. `cpt` must hold a table for
    /// every non-mutable variable and `mutable_cpt` one table per
    /// environment for every mutable variable (empty vectors elsewhere).
    pub fn new(
        graph: MixedGraph,
        spec: ProblemSpec,
        domains: Vec<usize>,
        y_values: Vec<f64>,
        mut cpt: Vec<Table>,
        mut mutable_cpt: Vec<Vec<Table>>,
        environments: Vec<String>,
    ) -> Result<Self> {
        if graph.kind() != Kind::Dag {
            return Err(Error::Input("an SCM needs a DAG".into()));
        }
        let n = graph.n();
        if domains.len() != n || cpt.len() != n || mutable_cpt.len() != n {
            return Err(Error::Input("per-variable data does not match the vertex count".into()));
        }
        if y_values.len() != domains[spec.target] {
            return Err(Error::Input("y_values length must equal the target's domain size".into()));
        }
        if spec.mutable != 0 && environments.is_empty() {
            return Err(Error::Input("mutable variables need at least one environment".into()));
        }
        let mut parents = Vec::with_capacity(n);
        for v in 0..n {
            let mut pa: Vec<usize> = set::iter(graph.parents(v)).collect();
            pa.sort_by(|&a, &b| graph.name(a).cmp(graph.name(b)));
            parents.push(pa);
        }
        for v in set::iter(graph.present()) {
            if domains[v] == 0 {
                return Err(Error::Input(format!("empty domain for {}", graph.name(v))));
            }
            let rows: usize = parents[v].iter().map(|&p| domains[p]).product();
            let name = graph.name(v).to_string();
            if contains(spec.mutable, v) {
                if mutable_cpt[v].len() != environments.len() {
                    return Err(Error::Input(format!("{name} needs one table per environment")));
                }
                for t in mutable_cpt[v].iter_mut() {
                    check_table(&name, t, rows, domains[v])?;
                }
            } else {
                check_table(&name, &mut cpt[v], rows, domains[v])?;
            }
        }
        let order = graph.topological_order()?;
        Ok(DiscreteScm { graph, spec, domains, y_values, parents, cpt, mutable_cpt, environments, order })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Mutable variables in topological order.
    pub fn mutable_order(&self) -> Vec<usize> {
        self.order.iter().copied().filter(|&v| contains(self.spec.mutable, v)).collect()
    }

    pub fn n_rows(&self, v: usize) -> usize {
        self.parents[v].iter().map(|&p| self.domains[p]).product()
    }

    pub fn row_index(&self, v: usize, assign: &[usize]) -> usize {
        self.parents[v].iter().fold(0, |acc, &p| acc * self.domains[p] + assign[p])
    }

    pub fn y_value(&self, assign: &[usize]) -> f64 {
        self.y_values[assign[self.spec.target]]
    }

    /// Mixed-radix encoder over the given variables (index order, first
    /// variable most significant).
    pub fn encoder(&self, vars: VSet) -> Encoder {
        let vars: Vec<usize> = set::iter(vars).collect();
        let radices = vars.iter().map(|&v| self.domains[v]).collect();
        Encoder { vars, radices }
    }

    /// Calls `f(assignment, probability)` for every full assignment with
    /// positive probability, drawing non-mutable variables from their tables
    /// and mutable ones from `rule`.
    pub fn enumerate(&self, rule: MutableRule<'_>, mut f: impl FnMut(&[usize], f64)) {
        let mut assign = vec![0usize; self.graph.n()];
        self.walk(0, 1.0, rule, &mut assign, &mut f);
    }

    fn walk(
        &self,
        depth: usize,
        p: f64,
        rule: MutableRule<'_>,
        assign: &mut Vec<usize>,
        f: &mut impl FnMut(&[usize], f64),
    ) {
        if depth == self.order.len() {
            f(assign, p);
            return;
        }
        let v = self.order[depth];
        let row = self.row_index(v, assign);
        if contains(self.spec.mutable, v) {
            match rule {
                MutableRule::Do(vals) => {
                    assign[v] = vals[v];
                    self.walk(depth + 1, p, rule, assign, f);
                }
                MutableRule::Policy(pol) => {
                    assign[v] = pol.value(v, row);
                    self.walk(depth + 1, p, rule, assign, f);
                }
                MutableRule::Kernel(tables) => self.branch(depth, p, &tables[v][row], rule, assign, f),
                MutableRule::Env(e) => self.branch(depth, p, &self.mutable_cpt[v][e][row], rule, assign, f),
            }
        } else {
            self.branch(depth, p, &self.cpt[v][row], rule, assign, f);
        }
    }

    fn branch(
        &self,
        depth: usize,
        p: f64,
        dist: &[f64],
        rule: MutableRule<'_>,
        assign: &mut Vec<usize>,
        f: &mut impl FnMut(&[usize], f64),
    ) {
        let v = self.order[depth];
        for (x, &q) in dist.iter().enumerate() {
            if q > 0.0 {
                assign[v] = x;
                self.walk(depth + 1, p * q, rule, assign, f);
            }
        }
    }

    /// Draws one sample per row in environment `env`.
    pub fn sample(&self, env: usize, n: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut assign = vec![0usize; self.graph.n()];
            for &v in &self.order {
                let row = self.row_index(v, &assign);
                let dist =
                    if contains(self.spec.mutable, v) { &self.mutable_cpt[v][env][row] } else { &self.cpt[v][row] };
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut x = dist.len() - 1;
                for (k, &q) in dist.iter().enumerate() {
                    acc += q;
                    if u < acc {
                        x = k;
                        break;
                    }
                }
                assign[v] = x;
            }
            out.push(assign);
        }
        out
    }

    pub fn to_json(&self) -> ScmJson {
        let g = &self.graph;
        let present: Vec<usize> = set::iter(g.present()).collect();
        ScmJson {
            graph: GraphJson::from_graph(g, &self.spec),
            domains: present.iter().map(|&v| (g.name(v).to_string(), self.domains[v])).collect(),
            y_values: self.y_values.clone(),
            cpt: present
                .iter()
                .filter(|&&v| !contains(self.spec.mutable, v))
                .map(|&v| (g.name(v).to_string(), self.cpt[v].clone()))
                .collect(),
            mutable_cpt: present
                .iter()
                .filter(|&&v| contains(self.spec.mutable, v))
                .map(|&v| {
                    let per_env = self.environments.iter().cloned().zip(self.mutable_cpt[v].iter().cloned()).collect();
                    (g.name(v).to_string(), per_env)
                })
                .collect(),
            environments: self.environments.clone(),
        }
    }
}

/// Mixed-radix index over a fixed variable list.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub vars: Vec<usize>,
    pub radices: Vec<usize>,
}

impl Encoder {
    pub fn size(&self) -> usize {
        self.radices.iter().product()
    }

    pub fn encode(&self, assign: &[usize]) -> usize {
        self.vars.iter().zip(&self.radices).fold(0, |acc, (&v, &r)| acc * r + assign[v])
    }

    /// Writes the configuration with index `k` into `assign`.
    pub fn decode_into(&self, mut k: usize, assign: &mut [usize]) {
        for (&v, &r) in self.vars.iter().zip(&self.radices).rev() {
            assign[v] = k % r;
            k /= r;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScmJson {
    pub graph: GraphJson,
    pub domains: BTreeMap<String, usize>,
    pub y_values: Vec<f64>,
    pub cpt: BTreeMap<String, Table>,
    #[serde(default)]
    pub mutable_cpt: BTreeMap<String, BTreeMap<String, Table>>,
    #[serde(default)]
    pub environments: Vec<String>,
}

impl ScmJson {
    pub fn build(&self) -> Result<DiscreteScm> {
        let (g, spec) = self.graph.build()?;
        let n = g.n();
        let mut domains = vec![0; n];
        for (name, &d) in &self.domains {
            domains[g.id(name)?] = d;
        }
        let mut cpt = vec![Vec::new(); n];
        for (name, t) in &self.cpt {
            let v = g.id(name)?;
            if contains(spec.mutable, v) {
                return Err(Error::Input(format!("{name} is mutable; its tables belong in mutable_cpt")));
            }
            cpt[v] = t.clone();
        }
        let mut mutable_cpt = vec![Vec::new(); n];
        for (name, per_env) in &self.mutable_cpt {
            let v = g.id(name)?;
            if !contains(spec.mutable, v) {
                return Err(Error::Input(format!("{name} is not mutable")));
            }
            let mut tables = Vec::new();
            for e in &self.environments {
                tables.push(
                    per_env
                        .get(e)
                        .cloned()
                        .ok_or_else(|| Error::Input(format!("{name} has no table for environment {e:?}")))?,
                );
            }
            if per_env.len() != self.environments.len() {
                return Err(Error::Input(format!("{name} has tables for unknown environments")));
            }
            mutable_cpt[v] = tables;
        }
        DiscreteScm::new(g, spec, domains, self.y_values.clone(), cpt, mutable_cpt, self.environments.clone())
    }
}

/// Settings for random SCM generation.
#[derive(Debug, Clone)]
pub struct RandomScmConfig {
    pub n_stable: usize,
    pub n_mutable: usize,
    pub edge_prob: f64,
    pub domain: usize,
    pub n_envs: usize,
}

impl Default for RandomScmConfig {
    fn default() -> Self {
        RandomScmConfig { n_stable: 3, n_mutable: 1, edge_prob: 0.5, domain: 2, n_envs: 2 }
    }
}

fn dirichlet_table(rng: &mut impl Rng, rows: usize, width: usize) -> Table {
    if width == 1 {
        return vec![vec![1.0]; rows];
    }
    let d = Dirichlet::new(&vec![1.0; width]).expect("valid concentration");
    (0..rows).map(|_| d.sample(rng)).collect()
}

/// Random DAG over `Y`, `S1..`, `M1..` (edges follow a random order with
/// probability `edge_prob`) with Dirichlet(1) tables.
pub fn random_scm(cfg: &RandomScmConfig, rng: &mut impl Rng) -> Result<DiscreteScm> {
    if cfg.domain == 0 || !(0.0..=1.0).contains(&cfg.edge_prob) {
        return Err(Error::Input("domain must be positive and edge_prob within [0, 1]".into()));
    }
    if cfg.n_mutable > 0 && cfg.n_envs == 0 {
        return Err(Error::Input("mutable variables need at least one environment".into()));
    }
    let mut names = vec!["Y".to_string()];
    names.extend((1..=cfg.n_stable).map(|i| format!("S{i}")));
    names.extend((1..=cfg.n_mutable).map(|i| format!("M{i}")));
    let n = names.len();
    let mut g = MixedGraph::new(&names)?;
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(cfg.edge_prob) {
                g.add_directed(perm[i], perm[j])?;
            }
        }
    }
    let stable = set::from_iter(1..=cfg.n_stable);
    let mutable = set::from_iter(cfg.n_stable + 1..n);
    let spec = ProblemSpec::new(&g, 0, stable, mutable)?;
    random_tables(g, spec, cfg.domain, cfg.n_envs, rng)
}

/// Dirichlet(1) tables on a fixed DAG, every variable with the same domain
/// and Y coded `0..domain`.
pub fn random_tables(
    g: MixedGraph,
    spec: ProblemSpec,
    domain: usize,
    n_envs: usize,
    rng: &mut impl Rng,
) -> Result<DiscreteScm> {
    let n = g.n();
    let environments: Vec<String> =
        if spec.mutable == 0 { Vec::new() } else { (1..=n_envs).map(|i| format!("e{i}")).collect() };
    let mut cpt = vec![Vec::new(); n];
    let mut mutable_cpt = vec![Vec::new(); n];
    for v in set::iter(g.present()) {
        let rows = domain.pow(set::len(g.parents(v)) as u32);
        if contains(spec.mutable, v) {
            mutable_cpt[v] = (0..environments.len()).map(|_| dirichlet_table(rng, rows, domain)).collect();
        } else {
            cpt[v] = dirichlet_table(rng, rows, domain);
        }
    }
    let y_values = (0..domain).map(|k| k as f64).collect();
    DiscreteScm::new(g, spec, vec![domain; n], y_values, cpt, mutable_cpt, environments)
}
