//! Test-side oracles and random instance generators. Nothing here calls into
//! the separation or projection code under test.
#![allow(dead_code)]

use std::collections::HashMap;

use cmx_core::mag::Projection;
use cmx_core::minimax::{policy_count, DEFAULT_POLICY_CAP};
use cmx_core::scm::{random_scm, DiscreteScm, RandomScmConfig, Table};
use cmx_core::set::{self, bit, contains, VSet};
use cmx_core::MixedGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("V{i}")).collect()
}

/// Random DAG over `n` vertices: edges i -> j for i < j with probability `p`,
/// vertex order shuffled so index order is not topological.
pub fn random_dag(rng: &mut impl Rng, n: usize, p: f64) -> MixedGraph {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let mut g = MixedGraph::new(&names(n)).unwrap();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                g.add_directed(perm[i], perm[j]).unwrap();
            }
        }
    }
    g
}

/// Adjacency as plain parent lists for the oracles.
pub fn parent_lists(g: &MixedGraph) -> Vec<Vec<usize>> {
    (0..g.n()).map(|v| (0..g.n()).filter(|&u| g.is_directed(u, v)).collect()).collect()
}

/// d-separation by moralizing the ancestral subgraph of A ∪ B ∪ Z and
/// testing undirected connectivity after deleting Z.
pub fn moral_separated(g: &MixedGraph, a: VSet, b: VSet, z: VSet) -> bool {
    let pa = parent_lists(g);
    let n = g.n();
    let mut keep = vec![false; n];
    let mut stack: Vec<usize> = set::iter(a | b | z).collect();
    while let Some(v) = stack.pop() {
        if keep[v] {
            continue;
        }
        keep[v] = true;
        stack.extend(pa[v].iter().copied());
    }
    let mut adj = vec![vec![false; n]; n];
    for v in 0..n {
        if !keep[v] {
            continue;
        }
        for &p in &pa[v] {
            adj[p][v] = true;
            adj[v][p] = true;
        }
        for &p in &pa[v] {
            for &q in &pa[v] {
                if p != q {
                    adj[p][q] = true;
                }
            }
        }
    }
    let mut seen = vec![false; n];
    let mut stack: Vec<usize> = set::iter(a).collect();
    while let Some(v) = stack.pop() {
        if seen[v] {
            continue;
        }
        seen[v] = true;
        if contains(b, v) {
            return false;
        }
        for w in 0..n {
            if adj[v][w] && keep[w] && !contains(z, w) && !seen[w] {
                stack.push(w);
            }
        }
    }
    true
}

/// Separation in any mixed graph by enumerating simple paths and applying
/// the mark-based collider rule directly.
pub fn path_separated(g: &MixedGraph, a: VSet, b: VSet, z: VSet) -> bool {
    let n = g.n();
    // ancestors by plain DFS over directed edges
    let mut an_z = z;
    loop {
        let mut grown = an_z;
        for u in 0..n {
            for v in set::iter(an_z) {
                if g.is_directed(u, v) {
                    grown |= bit(u);
                }
            }
        }
        if grown == an_z {
            break;
        }
        an_z = grown;
    }
    fn dfs(g: &MixedGraph, path: &mut Vec<usize>, b: VSet, z: VSet, an_z: VSet) -> bool {
        let v = *path.last().unwrap();
        if path.len() >= 2 && contains(b, v) {
            return true;
        }
        for w in 0..g.n() {
            if !g.adjacent(v, w) || path.contains(&w) {
                continue;
            }
            if path.len() >= 2 {
                let prev = path[path.len() - 2];
                let collider =
                    g.mark(v, prev) == Some(cmx_core::Mark::Arrow) && g.mark(v, w) == Some(cmx_core::Mark::Arrow);
                let ok = if collider { contains(an_z, v) } else { !contains(z, v) };
                if !ok {
                    continue;
                }
            }
            path.push(w);
            if dfs(g, path, b, z, an_z) {
                return true;
            }
            path.pop();
        }
        false
    }
    for s in set::iter(a) {
        let mut path = vec![s];
        if dfs(g, &mut path, b, z, an_z) {
            return false;
        }
    }
    true
}

/// MAG adjacency oracle: u and v are adjacent iff no subset of the other
/// observed vertices, together with the selection set, separates them in the
/// source.
pub fn separable(src: &MixedGraph, u: usize, v: usize, observed: VSet, selection: VSet) -> bool {
    let rest = observed & !bit(u) & !bit(v);
    set::subsets(rest).any(|z| moral_separated(src, bit(u), bit(v), z | selection))
}

/// Stable-graph fixtures. The target is always vertex 0 named "Y".
pub fn chain(d: usize) -> MixedGraph {
    let mut nm = vec!["Y".to_string()];
    nm.extend((1..=d).map(|i| format!("X{i}")));
    let mut g = MixedGraph::new(&nm).unwrap();
    for i in 0..d {
        g.add_directed(i, i + 1).unwrap();
    }
    g
}

pub fn circle(d: usize) -> MixedGraph {
    let mut g = chain(d);
    g.add_directed(0, d).unwrap();
    g
}

/// Random tree on `n` vertices (vertex 0 is the target), edges oriented
/// away from a random root order.
pub fn random_tree(rng: &mut impl Rng, n: usize) -> MixedGraph {
    let mut nm = vec!["Y".to_string()];
    nm.extend((1..n).map(|i| format!("X{i}")));
    let mut g = MixedGraph::new(&nm).unwrap();
    for v in 1..n {
        let u = rng.gen_range(0..v);
        if rng.gen_bool(0.5) {
            g.add_directed(u, v).unwrap();
        } else {
            g.add_directed(v, u).unwrap();
        }
    }
    g
}

/// Two small fixtures: `Y -> XM -> X1 <- X2 <- Y` (condition holds) and
/// `Y -> XM -> X1 <- Y` (condition fails).
pub fn collider_fixture() -> (MixedGraph, cmx_core::ProblemSpec) {
    let g = MixedGraph::dag(&["Y", "XM", "X1", "X2"], &[("Y", "XM"), ("XM", "X1"), ("Y", "X2"), ("X2", "X1")]).unwrap();
    let spec = cmx_core::ProblemSpec::new(&g, 0, bit(2) | bit(3), bit(1)).unwrap();
    (g, spec)
}

pub fn direct_fixture() -> (MixedGraph, cmx_core::ProblemSpec) {
    let g = MixedGraph::dag(&["Y", "XM", "X1"], &[("Y", "XM"), ("Y", "X1"), ("XM", "X1")]).unwrap();
    let spec = cmx_core::ProblemSpec::new(&g, 0, bit(2), bit(1)).unwrap();
    (g, spec)
}

/// Full joint by brute force over the product of all domains. `mutable(v,
/// row, x)` gives the probability of value `x` for mutable `v` at parent
/// row `row`; rows follow parents sorted by name, first most significant.
pub fn product_joint(
    scm: &cmx_core::scm::DiscreteScm,
    mutable: &dyn Fn(usize, usize, usize) -> f64,
) -> Vec<(Vec<usize>, f64)> {
    let g = &scm.graph;
    let n = g.n();
    let mut pa: Vec<Vec<usize>> = (0..n).map(|v| (0..n).filter(|&u| g.is_directed(u, v)).collect()).collect();
    for p in pa.iter_mut() {
        p.sort_by_key(|&u| g.name(u).to_string());
    }
    let total: usize = scm.domains.iter().product();
    let mut out = Vec::new();
    let mut a = vec![0usize; n];
    for k in 0..total {
        let mut r = k;
        for (x, &d) in a.iter_mut().zip(&scm.domains) {
            *x = r % d;
            r /= d;
        }
        let mut p = 1.0;
        for v in 0..n {
            let row = pa[v].iter().fold(0, |acc, &u| acc * scm.domains[u] + a[u]);
            p *= if contains(scm.spec.mutable, v) { mutable(v, row, a[v]) } else { scm.cpt[v][row][a[v]] };
        }
        if p > 0.0 {
            out.push((a.clone(), p));
        }
    }
    out
}

/// Synthetic graph with two mutable variables; `dashed` adds `M1 -> X1`,
/// which makes X_M^0 = {M1} reach `X1..X4` and `M2`.
pub fn synthetic_fixture(dashed: bool) -> (MixedGraph, cmx_core::ProblemSpec) {
    let mut edges = vec![
        ("Y", "M1"),
        ("Y", "X1"),
        ("X1", "X2"),
        ("X2", "X3"),
        ("X1", "X4"),
        ("X4", "M2"),
        ("M2", "X3"),
        ("X5", "Y"),
        ("X6", "Y"),
        ("X5", "X6"),
        ("Y", "X7"),
        ("X7", "X8"),
        ("X8", "X3"),
    ];
    if dashed {
        edges.push(("M1", "X1"));
    }
    let names = ["Y", "M1", "M2", "X1", "X2", "X3", "X4", "X5", "X6", "X7", "X8"];
    let g = MixedGraph::dag(&names, &edges).unwrap();
    let spec = cmx_core::ProblemSpec::new(&g, 0, set::from_iter(3..11), bit(1) | bit(2)).unwrap();
    (g, spec)
}

/// `g` plus an `env` vertex pointing into `mutable`, built without the
/// library helper.
pub fn augment(g: &MixedGraph, mutable: VSet) -> MixedGraph {
    let mut names: Vec<String> = g.names().to_vec();
    names.push("env".into());
    let mut a = MixedGraph::new(&names).unwrap();
    for u in 0..g.n() {
        for v in 0..g.n() {
            if g.is_directed(u, v) {
                a.add_directed(u, v).unwrap();
            }
        }
    }
    for m in set::iter(mutable) {
        a.add_directed(g.n(), m).unwrap();
    }
    a
}

pub type Key = (Vec<usize>, Vec<usize>);

pub fn project(a: &[usize], s: VSet) -> Vec<usize> {
    set::iter(s).map(|v| a[v]).collect()
}

/// E[Y | x_s, do(x_M)] from the brute-force joint, with the interventional
/// mean as fallback on zero-mass cells.
pub fn oracle_predictor(scm: &DiscreteScm, s: VSet) -> OraclePredictor {
    let m = scm.spec.mutable;
    let mvars: Vec<usize> = set::iter(m).collect();
    let n_m: usize = mvars.iter().map(|&v| scm.domains[v]).product();
    let mut f = HashMap::new();
    let mut means = HashMap::new();
    for k in 0..n_m {
        let mut do_vals = vec![0usize; scm.graph.n()];
        let mut r = k;
        for &v in &mvars {
            do_vals[v] = r % scm.domains[v];
            r /= scm.domains[v];
        }
        let joint = product_joint(scm, &|v, _, x| (x == do_vals[v]) as u8 as f64);
        let mut num: HashMap<Vec<usize>, (f64, f64)> = HashMap::new();
        let mut mean = 0.0;
        for (a, p) in &joint {
            let y = scm.y_values[a[scm.spec.target]];
            let e = num.entry(project(a, s)).or_default();
            e.0 += p * y;
            e.1 += p;
            mean += p * y;
        }
        let xm = project(&do_vals, m);
        for (xs, (nu, de)) in num {
            f.insert((xs, xm.clone()), nu / de);
        }
        means.insert(xm, mean);
    }
    (f, means)
}

pub fn oracle_eval(pred: &OraclePredictor, a: &[usize], s: VSet, m: VSet) -> f64 {
    let xm = project(a, m);
    *pred.0.get(&(project(a, s), xm.clone())).unwrap_or(&pred.1[&xm])
}

pub type OraclePredictor = (HashMap<Key, f64>, HashMap<Vec<usize>, f64>);

pub fn oracle_risk(scm: &DiscreteScm, s: VSet, mutable: &dyn Fn(usize, usize, usize) -> f64) -> f64 {
    oracle_risk_with(scm, &oracle_predictor(scm, s), s, mutable)
}

pub fn oracle_risk_with(
    scm: &DiscreteScm,
    pred: &OraclePredictor,
    s: VSet,
    mutable: &dyn Fn(usize, usize, usize) -> f64,
) -> f64 {
    product_joint(scm, mutable)
        .iter()
        .map(|(a, p)| {
            let e = scm.y_values[a[scm.spec.target]] - oracle_eval(pred, a, s, scm.spec.mutable);
            p * e * e
        })
        .sum()
}

pub fn random_kernel(scm: &DiscreteScm, rng: &mut impl Rng) -> Vec<Table> {
    let alpha = if rng.gen_bool(0.5) { 1.0 } else { 0.1 };
    (0..scm.graph.n())
        .map(|v| {
            if !contains(scm.spec.mutable, v) {
                return Vec::new();
            }
            let d = Dirichlet::new(&vec![alpha; scm.domains[v]]).unwrap();
            (0..scm.n_rows(v))
                .map(|_| {
                    let row: Vec<f64> = d.sample(rng);
                    let s: f64 = row.iter().sum();
                    row.into_iter().map(|q| q / s).collect()
                })
                .collect()
        })
        .collect()
}

/// Binary SCM with at most five variables and one or two mutable ones,
/// redrawn until its policies can be enumerated under the default cap.
pub fn small_binary_scm(rng: &mut impl Rng) -> DiscreteScm {
    loop {
        let n_mutable = rng.gen_range(1..=2);
        let n_stable = rng.gen_range(1..=4 - n_mutable);
        let cfg = RandomScmConfig { n_stable, n_mutable, edge_prob: rng.gen_range(0.3..0.9), domain: 2, n_envs: 2 };
        let scm = random_scm(&cfg, rng).unwrap();
        if policy_count(&scm) <= DEFAULT_POLICY_CAP {
            return scm;
        }
    }
}

pub fn random_projection(r: &mut impl Rng, g: &MixedGraph) -> Projection {
    let mut p = Projection { observed: bit(0), latent: 0, selection: 0 };
    for v in 1..g.n() {
        match r.gen_range(0..4) {
            0 => p.latent |= bit(v),
            1 => p.selection |= bit(v),
            _ => p.observed |= bit(v),
        }
    }
    p
}

/// m-separation in the MAG equals d-separation in the source given the
/// selection set, for every disjoint triple of observed sets.
pub fn duality_holds(src: &MixedGraph, m: &MixedGraph, p: &Projection) -> bool {
    let obs: Vec<usize> = set::iter(p.observed).collect();
    let k = obs.len();
    let mut codes = vec![0usize; k];
    loop {
        let (mut a, mut b, mut z): (VSet, VSet, VSet) = (0, 0, 0);
        for (i, &c) in codes.iter().enumerate() {
            match c {
                1 => a |= bit(obs[i]),
                2 => b |= bit(obs[i]),
                3 => z |= bit(obs[i]),
                _ => {}
            }
        }
        if a != 0 && b != 0 {
            let lhs = m.is_separated(a, b, z).unwrap();
            if lhs != moral_separated(src, a, b, z | p.selection) || lhs != path_separated(m, a, b, z) {
                return false;
            }
        }
        let mut i = 0;
        while i < k && codes[i] == 3 {
            codes[i] = 0;
            i += 1;
        }
        if i == k {
            return true;
        }
        codes[i] += 1;
    }
}
