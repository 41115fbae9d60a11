//! Recovery of the mutable set, skeleton, X_M^0 and its descendants from
//! conditional independence queries over the variables and an environment
//! indicator.
//!
//! Variables are `0..n`; the environment indicator is index `n`.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::graph::{EdgeJson, GraphJson, Mark, MixedGraph, ProblemSpec};
use crate::set::{self, bit, contains, VSet};

pub const ENV_NAME: &str = "env";
pub const DEFAULT_ALPHA: f64 = 0.05;

pub trait CiOracle {
    /// Number of variables, not counting the environment indicator.
    fn n_vars(&self) -> usize;
    fn indep(&self, a: usize, b: usize, z: VSet) -> bool;
}

/// d-separation in the graph augmented with an environment vertex
/// pointing into every mutable variable.
pub struct DsepOracle {
    aug: MixedGraph,
}

impl DsepOracle {
    pub fn new(g: &MixedGraph, mutable: VSet) -> Result<Self> {
        Ok(DsepOracle { aug: augmented_graph(g, mutable)? })
    }

    pub fn graph(&self) -> &MixedGraph {
        &self.aug
    }
}

impl CiOracle for DsepOracle {
    fn n_vars(&self) -> usize {
        self.aug.n() - 1
    }

    fn indep(&self, a: usize, b: usize, z: VSet) -> bool {
        self.aug.is_separated(bit(a), bit(b), z).expect("valid query")
    }
}

/// `g` plus the environment vertex (last index) with an edge into each
/// mutable variable.
pub fn augmented_graph(g: &MixedGraph, mutable: VSet) -> Result<MixedGraph> {
    if g.n() >= set::MAX_VERTICES {
        return Err(Error::Input("no room for the environment vertex".into()));
    }
    let mut names: Vec<String> = g.names().to_vec();
    names.push(ENV_NAME.to_string());
    let mut aug = MixedGraph::new(&names)?;
    for (u, v, mu, mv) in g.edges() {
        aug.add_edge(u, v, mu, mv)?;
    }
    let e = g.n();
    for m in set::iter(mutable) {
        aug.add_directed(e, m)?;
    }
    aug.set_kind(g.kind());
    Ok(aug)
}

/// G-test of conditional independence on discrete samples. Column `n` of
/// every row holds the environment index.
pub struct GTestOracle {
    rows: Vec<Vec<usize>>,
    domains: Vec<usize>,
    pub alpha: f64,
    cache: RefCell<HashMap<(usize, usize, VSet), bool>>,
}

impl GTestOracle {
    pub fn new(rows: Vec<Vec<usize>>, alpha: f64) -> Result<Self> {
        let width = rows.first().map(|r| r.len()).ok_or_else(|| Error::Input("no samples".into()))?;
        if !(2..=set::MAX_VERTICES).contains(&width) {
            return Err(Error::Input("need between one and 63 variables plus env".into()));
        }
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Input("ragged sample rows".into()));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Input("alpha must lie in (0, 1)".into()));
        }
        let mut domains = vec![1; width];
        for r in &rows {
            for (d, &x) in domains.iter_mut().zip(r) {
                *d = (*d).max(x + 1);
            }
        }
        Ok(GTestOracle { rows, domains, alpha, cache: RefCell::new(HashMap::new()) })
    }

    pub fn n_samples(&self) -> usize {
        self.rows.len()
    }

    /// G statistic and degrees of freedom.
    pub fn statistic(&self, a: usize, b: usize, z: VSet) -> (f64, f64) {
        let (da, db) = (self.domains[a], self.domains[b]);
        let zs: Vec<usize> = set::iter(z).collect();
        let mut strata: HashMap<usize, Vec<f64>> = HashMap::new();
        for r in &self.rows {
            let k = zs.iter().fold(0, |acc, &v| acc * self.domains[v] + r[v]);
            strata.entry(k).or_insert_with(|| vec![0.0; da * db])[r[a] * db + r[b]] += 1.0;
        }
        let mut g = 0.0;
        for t in strata.values() {
            let total: f64 = t.iter().sum();
            let ra: Vec<f64> = (0..da).map(|i| t[i * db..(i + 1) * db].iter().sum()).collect();
            let cb: Vec<f64> = (0..db).map(|j| (0..da).map(|i| t[i * db + j]).sum()).collect();
            for i in 0..da {
                for j in 0..db {
                    let o = t[i * db + j];
                    if o > 0.0 {
                        g += o * (o * total / (ra[i] * cb[j])).ln();
                    }
                }
            }
        }
        let zconf: f64 = zs.iter().map(|&v| self.domains[v] as f64).product();
        let dof = (da as f64 - 1.0) * (db as f64 - 1.0) * zconf;
        (2.0 * g, dof)
    }
}

impl CiOracle for GTestOracle {
    fn n_vars(&self) -> usize {
        self.domains.len() - 1
    }

    fn indep(&self, a: usize, b: usize, z: VSet) -> bool {
        let key = (a.min(b), a.max(b), z);
        if let Some(&r) = self.cache.borrow().get(&key) {
            return r;
        }
        let (g, dof) = self.statistic(a, b, z);
        let r = if dof <= 0.0 {
            true
        } else {
            let chi = ChiSquared::new(dof).expect("positive dof");
            1.0 - chi.cdf(g) > self.alpha
        };
        self.cache.borrow_mut().insert(key, r);
        r
    }
}

/// Orientation of edges between two mutable variables, which independence
/// queries against the environment cannot settle.
pub trait OrientationOracle {
    /// `Some(true)` for `a -> b`, `Some(false)` for `b -> a`.
    fn orient(&self, a: usize, b: usize) -> Option<bool>;
}

/// Reads orientations off a known DAG.
pub struct TruthOrientation<'a>(pub &'a MixedGraph);

impl OrientationOracle for TruthOrientation<'_> {
    fn orient(&self, a: usize, b: usize) -> Option<bool> {
        if self.0.is_directed(a, b) {
            Some(true)
        } else if self.0.is_directed(b, a) {
            Some(false)
        } else {
            None
        }
    }
}

/// Leaves mutable-mutable edges unoriented.
pub struct NoOrientation;

impl OrientationOracle for NoOrientation {
    fn orient(&self, _: usize, _: usize) -> Option<bool> {
        None
    }
}

fn pair(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Mutable set, skeleton over the variables and the first separating set
/// found for every non-adjacent pair (environment included).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skeleton {
    pub n: usize,
    pub mutable: VSet,
    /// Adjacency over `0..n`.
    pub adj: Vec<VSet>,
    pub sepsets: BTreeMap<(usize, usize), VSet>,
}

impl Skeleton {
    pub fn env(&self) -> usize {
        self.n
    }

    pub fn sepset(&self, a: usize, b: usize) -> Option<VSet> {
        self.sepsets.get(&pair(a, b)).copied()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n).flat_map(|u| set::iter(self.adj[u]).filter(move |&v| v > u).map(move |v| (u, v))).collect()
    }
}

fn first_sepset(oracle: &dyn CiOracle, a: usize, b: usize, pool: VSet) -> Option<VSet> {
    set::subsets_by_size(pool).into_iter().find(|&z| oracle.indep(a, b, z))
}

/// A variable is mutable iff nothing separates it from the environment; an
/// edge is dropped iff some set separates its endpoints. Candidate sets are
/// tried by increasing size. Members of `fixed` (the target) are never
/// declared mutable, though their separating sets are still registered.
pub fn recover_mutable_and_skeleton(oracle: &dyn CiOracle, fixed: VSet) -> Skeleton {
    let n = oracle.n_vars();
    let e = n;
    let all = set::from_iter(0..n);
    let mut mutable = 0;
    let mut sepsets = BTreeMap::new();
    for i in 0..n {
        match first_sepset(oracle, i, e, all & !bit(i)) {
            Some(z) => {
                sepsets.insert(pair(i, e), z);
            }
            None if !contains(fixed, i) => mutable |= bit(i),
            None => {}
        }
    }
    let mut adj = vec![0; n];
    for i in 0..n {
        for j in i + 1..n {
            match first_sepset(oracle, i, j, (all | bit(e)) & !bit(i) & !bit(j)) {
                Some(z) => {
                    sepsets.insert((i, j), z);
                }
                None => {
                    adj[i] |= bit(j);
                    adj[j] |= bit(i);
                }
            }
        }
    }
    Skeleton { n, mutable, adj, sepsets }
}

/// Mutable neighbors `X` of the target for which conditioning on `X` on
/// top of the registered target-environment separating set makes the
/// target depend on the environment.
pub fn detect_xm0(oracle: &dyn CiOracle, sk: &Skeleton, target: usize) -> Result<VSet> {
    let cand = sk.mutable & sk.adj[target];
    if cand == 0 {
        return Ok(0);
    }
    let z = sk
        .sepset(target, sk.env())
        .ok_or_else(|| Error::Input("no separating set registered for the target and env".into()))?;
    Ok(set::from_iter(set::iter(cand).filter(|&x| !oracle.indep(target, sk.env(), z | bit(x)))))
}

/// Partially directed graph over the variables and the environment vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pdag {
    pub adj: Vec<VSet>,
    /// `out[u]` has bit `v` iff `u -> v`.
    pub out: Vec<VSet>,
    /// Orientations refused because the opposite direction was already set.
    pub conflicts: usize,
}

impl Pdag {
    fn new(sk: &Skeleton) -> Self {
        let mut adj = sk.adj.clone();
        adj.push(sk.mutable);
        for m in set::iter(sk.mutable) {
            adj[m] |= bit(sk.n);
        }
        let out = vec![0; adj.len()];
        Pdag { adj, out, conflicts: 0 }
    }

    pub fn directed(&self, u: usize, v: usize) -> bool {
        contains(self.out[u], v)
    }

    pub fn undirected(&self, u: usize, v: usize) -> bool {
        contains(self.adj[u], v) && !self.directed(u, v) && !self.directed(v, u)
    }

    pub fn parents(&self, v: usize) -> VSet {
        set::from_iter((0..self.adj.len()).filter(|&u| self.directed(u, v)))
    }

    fn orient(&mut self, u: usize, v: usize) -> bool {
        if self.directed(v, u) {
            self.conflicts += 1;
            return false;
        }
        if self.directed(u, v) {
            return false;
        }
        self.out[u] |= bit(v);
        true
    }

    /// Vertices reachable from `from` along directed edges, `from` included.
    pub fn reach(&self, from: VSet) -> VSet {
        let mut seen = from;
        let mut stack: Vec<usize> = set::iter(from).collect();
        while let Some(u) = stack.pop() {
            for v in set::iter(self.out[u] & !seen) {
                seen |= bit(v);
                stack.push(v);
            }
        }
        seen
    }

    fn meek_pass(&mut self) -> bool {
        let n = self.adj.len();
        let mut changed = false;
        for a in 0..n {
            for b in set::iter(self.adj[a]) {
                if !self.undirected(a, b) {
                    continue;
                }
                let pa_a = self.parents(a);
                let pa_b = self.parents(b);
                // R1: c -> a - b, c and b not adjacent
                let r1 = set::iter(pa_a).any(|c| c != b && !contains(self.adj[c], b));
                // R2: a -> c -> b
                let r2 = set::iter(self.out[a]).any(|c| self.directed(c, b));
                // R3: a - c -> b, a - d -> b, c and d not adjacent
                let mids: Vec<usize> = set::iter(pa_b & self.adj[a]).filter(|&c| self.undirected(a, c)).collect();
                let r3 =
                    mids.iter().enumerate().any(|(i, &c)| mids[i + 1..].iter().any(|&d| !contains(self.adj[c], d)));
                // R4: a - d -> c -> b, a adjacent to c, b and d not adjacent
                let r4 = set::iter(pa_b & self.adj[a]).any(|c| {
                    set::iter(self.parents(c) & self.adj[a])
                        .any(|d| d != b && self.undirected(a, d) && !contains(self.adj[b], d))
                });
                if (r1 || r2 || r3 || r4) && self.orient(a, b) {
                    changed = true;
                }
            }
        }
        changed
    }
}

/// Environment edges, unshielded colliders, the target into X_M^0 and
/// oracle-oriented mutable-mutable edges, closed under Meek's rules.
pub fn recover_orientations(sk: &Skeleton, xm0: VSet, target: usize, orient: &dyn OrientationOracle) -> Pdag {
    let mut p = Pdag::new(sk);
    let e = sk.n;
    for m in set::iter(sk.mutable) {
        p.orient(e, m);
    }
    let total = p.adj.len();
    for c in 0..total {
        let nb: Vec<usize> = set::iter(p.adj[c]).collect();
        for (i, &a) in nb.iter().enumerate() {
            for &b in &nb[i + 1..] {
                if contains(p.adj[a], b) {
                    continue;
                }
                if let Some(z) = sk.sepset(a, b) {
                    if !contains(z, c) {
                        p.orient(a, c);
                        p.orient(b, c);
                    }
                }
            }
        }
    }
    for x in set::iter(xm0) {
        p.orient(target, x);
    }
    for a in set::iter(sk.mutable) {
        for b in set::iter(sk.adj[a] & sk.mutable) {
            if a < b && p.undirected(a, b) {
                match orient.orient(a, b) {
                    Some(true) => {
                        p.orient(a, b);
                    }
                    Some(false) => {
                        p.orient(b, a);
                    }
                    None => {}
                }
            }
        }
    }
    while p.meek_pass() {}
    p
}

/// X_M^0 together with everything reachable from it along oriented edges.
pub fn recover_descendant_closure(p: &Pdag, xm0: VSet) -> VSet {
    p.reach(xm0)
}

#[derive(Debug, Clone)]
pub struct DiscoveryResult {
    pub names: Vec<String>,
    pub target: usize,
    pub skeleton: Skeleton,
    pub xm0: VSet,
    pub pdag: Pdag,
    pub closure: VSet,
    pub w: VSet,
    pub condition_holds: bool,
}

impl DiscoveryResult {
    pub fn env(&self) -> usize {
        self.skeleton.n
    }

    /// Strict descendants of a mutable variable along oriented edges.
    pub fn descendants(&self, v: usize) -> VSet {
        self.pdag.reach(bit(v)) & !bit(v)
    }

    /// Oriented parents, environment excluded.
    pub fn parents(&self, v: usize) -> VSet {
        self.pdag.parents(v) & !bit(self.env())
    }

    fn name(&self, v: usize) -> &str {
        if v == self.env() {
            ENV_NAME
        } else {
            &self.names[v]
        }
    }

    fn names_of(&self, s: VSet) -> Vec<String> {
        let mut out: Vec<String> = set::iter(s).map(|v| self.name(v).to_string()).collect();
        out.sort();
        out
    }

    pub fn to_json(&self) -> DiscoveryJson {
        let n = self.skeleton.n;
        let mut edges = Vec::new();
        for (u, v) in self.skeleton.edges() {
            let (a, b) = if self.pdag.directed(v, u) || (!self.pdag.directed(u, v) && self.names[u] > self.names[v]) {
                (v, u)
            } else {
                (u, v)
            };
            let directed = self.pdag.directed(a, b);
            edges.push(EdgeJson {
                u: self.names[a].clone(),
                v: self.names[b].clone(),
                mark_u: Mark::Tail,
                mark_v: if directed { Mark::Arrow } else { Mark::Tail },
            });
        }
        edges.sort_by(|a, b| (&a.u, &a.v).cmp(&(&b.u, &b.v)));
        let all = set::from_iter(0..n);
        let mut vertices = self.names.clone();
        vertices.sort();
        let graph = GraphJson {
            vertices,
            edges,
            target: self.names[self.target].clone(),
            stable: self.names_of(all & !self.skeleton.mutable & !bit(self.target)),
            mutable: self.names_of(self.skeleton.mutable),
        };
        let mut registry: Vec<SepsetJson> = self
            .skeleton
            .sepsets
            .iter()
            .map(|(&(a, b), &z)| {
                let (a, b) = (self.name(a).to_string(), self.name(b).to_string());
                let (u, v) = if a <= b { (a, b) } else { (b, a) };
                SepsetJson { u, v, sepset: self.names_of(z) }
            })
            .collect();
        registry.sort_by(|a, b| (&a.u, &a.v).cmp(&(&b.u, &b.v)));
        let mutable_detail = set::iter(self.skeleton.mutable)
            .map(|m| {
                (
                    self.names[m].clone(),
                    MutableJson {
                        parents: self.names_of(self.parents(m)),
                        descendants: self.names_of(self.descendants(m)),
                    },
                )
            })
            .collect();
        DiscoveryJson {
            graph,
            registry,
            mutable: self.names_of(self.skeleton.mutable),
            xm0: self.names_of(self.xm0),
            closure: self.names_of(self.closure),
            w: self.names_of(self.w),
            condition_holds: self.condition_holds,
            mutable_detail,
            orientation_conflicts: self.pdag.conflicts,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SepsetJson {
    pub u: String,
    pub v: String,
    pub sepset: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MutableJson {
    pub parents: Vec<String>,
    pub descendants: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscoveryJson {
    pub graph: GraphJson,
    pub registry: Vec<SepsetJson>,
    pub mutable: Vec<String>,
    pub xm0: Vec<String>,
    pub closure: Vec<String>,
    pub w: Vec<String>,
    pub condition_holds: bool,
    pub mutable_detail: BTreeMap<String, MutableJson>,
    pub orientation_conflicts: usize,
}

/// Full pipeline. The condition holds iff the target is not adjacent to
/// W, the closure minus X_M^0.
pub fn discover(
    oracle: &dyn CiOracle,
    names: &[String],
    target: usize,
    orient: &dyn OrientationOracle,
) -> Result<DiscoveryResult> {
    if names.len() != oracle.n_vars() || target >= names.len() {
        return Err(Error::Input("names must cover every variable and include the target".into()));
    }
    let skeleton = recover_mutable_and_skeleton(oracle, bit(target));
    let xm0 = detect_xm0(oracle, &skeleton, target)?;
    let pdag = recover_orientations(&skeleton, xm0, target, orient);
    let closure = recover_descendant_closure(&pdag, xm0);
    let w = closure & !xm0;
    let condition_holds = skeleton.adj[target] & w == 0;
    Ok(DiscoveryResult { names: names.to_vec(), target, skeleton, xm0, pdag, closure, w, condition_holds })
}

/// Runs the pipeline with a d-separation oracle on a known DAG.
pub fn discover_from_graph(g: &MixedGraph, spec: &ProblemSpec) -> Result<DiscoveryResult> {
    if g.present() != set::from_iter(0..g.n()) {
        return Err(Error::Input("discovery needs a graph without removed vertices".into()));
    }
    let oracle = DsepOracle::new(g, spec.mutable)?;
    discover(&oracle, g.names(), spec.target, &TruthOrientation(g))
}

/// Shorthand for the condition test alone.
pub fn test_condition(
    oracle: &dyn CiOracle,
    names: &[String],
    target: usize,
    orient: &dyn OrientationOracle,
) -> Result<bool> {
    Ok(discover(oracle, names, target, orient)?.condition_holds)
}
