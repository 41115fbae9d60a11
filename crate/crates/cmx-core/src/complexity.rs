//! Chain decomposition of the stable graph's skeleton, the recursive chain
//! metric F_G and checks of the bounds relating it to the class count.
//!
//! Chains are read after merging into Y every branch vertex reachable from
//! Y through branch vertices (the set `ytilde`). A chain is Y-adjacent when
//! one of its ends attaches to `ytilde`; the head is that end.

use std::collections::HashMap;

use serde::Serialize;

use crate::equivalence::recover_classes;
use crate::error::{Error, Result};
use crate::graph::MixedGraph;
use crate::set::{self, bit, contains, VSet};

pub const DEFAULT_F_CAP: usize = 1_000_000;
/// N_G is only computed for stable graphs with at most this many covariates.
pub const DEFAULT_NG_CAP_VERTICES: usize = 24;
/// Largest graph for which the maximum-leaf spanning tree is found exactly.
pub const EXACT_SPANNING_LIMIT: usize = 16;

/// Undirected skeleton with fixed vertex indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Skeleton {
    pub y: usize,
    pub present: VSet,
    pub adj: Vec<VSet>,
}

impl Skeleton {
    pub fn from_graph(g: &MixedGraph, y: usize) -> Self {
        let adj = (0..g.n()).map(|v| g.neighbors(v) & g.present()).collect();
        Skeleton { y, present: g.present(), adj }
    }

    pub fn degree(&self, v: usize) -> usize {
        set::len(self.adj[v] & self.present)
    }

    pub fn n_edges(&self) -> usize {
        set::iter(self.present).map(|v| self.degree(v)).sum::<usize>() / 2
    }

    pub fn remove(&mut self, s: VSet) {
        self.present &= !s;
        for a in self.adj.iter_mut() {
            *a &= !s;
        }
        for v in set::iter(s) {
            self.adj[v] = 0;
        }
    }

    pub fn add_edge(&mut self, u: usize, v: usize) {
        if u != v {
            self.adj[u] |= bit(v);
            self.adj[v] |= bit(u);
        }
    }

    /// Vertices of `within` reachable from `from` without leaving `within`.
    pub fn component(&self, from: VSet, within: VSet) -> VSet {
        let mut seen = from & within;
        let mut stack: Vec<usize> = set::iter(seen).collect();
        while let Some(u) = stack.pop() {
            for v in set::iter(self.adj[u] & within & !seen) {
                seen |= bit(v);
                stack.push(v);
            }
        }
        seen
    }

    pub fn is_tree(&self) -> bool {
        let n = set::len(self.present);
        n > 0
            && self.n_edges() == n - 1
            && self.component(bit(set::iter(self.present).next().unwrap()), self.present) == self.present
    }

    fn key(&self) -> (VSet, Vec<VSet>) {
        (self.present, set::iter(self.present).map(|v| self.adj[v]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Chain {
    /// Ordered from the head when Y-adjacent.
    pub vertices: Vec<usize>,
    pub two_heads: bool,
    pub y_adjacent: bool,
    pub isolated: bool,
    /// A cycle of degree-two vertices cut off from everything else.
    pub cyclic: bool,
    /// Attachment of the head in `ytilde`.
    pub near: Option<usize>,
    /// Attachment of the other end outside `ytilde`.
    pub far: Option<usize>,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn set(&self) -> VSet {
        set::from_iter(self.vertices.iter().copied())
    }

    pub fn cost(&self) -> u128 {
        let l = self.len() as u128;
        if self.two_heads {
            (l * l + l + 2) / 2
        } else {
            l + 1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainDecomposition {
    pub branch: VSet,
    pub ytilde: VSet,
    pub chains: Vec<Chain>,
}

impl ChainDecomposition {
    pub fn d_gt2(&self) -> usize {
        set::len(self.branch)
    }

    pub fn d_le2(&self) -> usize {
        self.chains.iter().map(|c| c.len()).sum()
    }
}

pub fn decompose(g: &Skeleton) -> ChainDecomposition {
    let others = g.present & !bit(g.y);
    let chain_v = set::from_iter(set::iter(others).filter(|&v| g.degree(v) <= 2));
    let branch = others & !chain_v;
    let ytilde = g.component(bit(g.y), branch | bit(g.y));
    let mut chains = Vec::new();
    let mut left = chain_v;
    while left != 0 {
        let start = set::iter(left).next().unwrap();
        let comp = g.component(bit(start), chain_v);
        left &= !comp;
        chains.push(describe_chain(g, comp, chain_v, ytilde));
    }
    chains.sort_by(|a, b| a.vertices.cmp(&b.vertices));
    ChainDecomposition { branch, ytilde, chains }
}

fn describe_chain(g: &Skeleton, comp: VSet, chain_v: VSet, ytilde: VSet) -> Chain {
    let ends: Vec<usize> = set::iter(comp).filter(|&v| set::len(g.adj[v] & comp) < 2).collect();
    if ends.is_empty() {
        return Chain {
            vertices: set::iter(comp).collect(),
            two_heads: false,
            y_adjacent: false,
            isolated: true,
            cyclic: true,
            near: None,
            far: None,
        };
    }
    // walk the path from its first end
    let mut vertices = vec![ends[0]];
    let mut prev = ends[0];
    while let Some(next) = set::iter(g.adj[prev] & comp).find(|v| !vertices.contains(v)) {
        vertices.push(next);
        prev = next;
    }
    let first = vertices[0];
    let last = *vertices.last().unwrap();
    let att_first = g.adj[first] & g.present & !comp;
    let att_last = g.adj[last] & g.present & !comp;
    let (near, far, two_heads) = if vertices.len() == 1 {
        let mut near = None;
        let mut far = None;
        for a in set::iter(att_first) {
            if contains(ytilde, a) && near.is_none() {
                near = Some(a);
            } else if !contains(ytilde, a) {
                far = Some(a);
            }
        }
        (near, far, false)
    } else {
        let pick = |s: VSet| set::iter(s).next();
        let (fa, la) = (pick(att_first), pick(att_last));
        let in_y = |a: Option<usize>| a.is_some_and(|a| contains(ytilde, a));
        if in_y(fa) && in_y(la) {
            (fa, None, true)
        } else if in_y(la) {
            vertices.reverse();
            (la, fa, false)
        } else if in_y(fa) {
            (fa, la, false)
        } else {
            (None, None, false)
        }
    };
    let y_adjacent = near.is_some();
    let isolated = match far {
        None => true,
        Some(f) => {
            let region = g.component(bit(f), g.present & !comp & !ytilde);
            region & chain_v == 0
        }
    };
    Chain { vertices, two_heads, y_adjacent, isolated, cyclic: false, near, far: if y_adjacent { far } else { None } }
}

/// One surgery on a Y-adjacent chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainOp {
    /// Remove the first `i` vertices counted from the head.
    RemovePrefix(usize),
    /// Remove the chain and join its two attachments.
    ReplaceWithEdge,
    /// Remove the whole chain (the only operation on an isolated chain).
    Remove,
}

/// The operations available on `c` in `g`.
pub fn ops_for(g: &Skeleton, c: &Chain) -> Vec<ChainOp> {
    if c.isolated {
        return vec![ChainOp::Remove];
    }
    let mut ops: Vec<ChainOp> = (1..=c.len()).map(ChainOp::RemovePrefix).collect();
    if let (Some(n), Some(f)) = (c.near, c.far) {
        // joining already adjacent attachments equals removing the chain
        if !contains(g.adj[n], f) {
            ops.push(ChainOp::ReplaceWithEdge);
        }
    }
    ops
}

pub fn apply_opt(g: &Skeleton, c: &Chain, op: ChainOp) -> Result<Skeleton> {
    if !c.y_adjacent || !ops_for(g, c).contains(&op) {
        return Err(Error::Input(format!("operation {op:?} is not available on this chain")));
    }
    let mut out = g.clone();
    apply_in_place(&mut out, c, op);
    Ok(out)
}

fn apply_in_place(g: &mut Skeleton, c: &Chain, op: ChainOp) {
    match op {
        ChainOp::Remove => g.remove(c.set()),
        ChainOp::RemovePrefix(i) => g.remove(set::from_iter(c.vertices[..i].iter().copied())),
        ChainOp::ReplaceWithEdge => {
            g.remove(c.set());
            if let (Some(n), Some(f)) = (c.near, c.far) {
                if !contains(g.adj[n], f) {
                    g.add_edge(n, f);
                }
            }
        }
    }
}

/// Contracts `ytilde` into Y. Branch vertices keep their degree since
/// every branch neighbor of `ytilde` is already in it.
pub fn merge_into_target(g: &Skeleton) -> Skeleton {
    let dec = decompose(g);
    let inner = dec.ytilde & !bit(g.y);
    if inner == 0 {
        return g.clone();
    }
    let mut out = g.clone();
    let outside = set::iter(inner).fold(0, |acc, v| acc | g.adj[v]) & g.present & !dec.ytilde;
    out.remove(inner);
    for v in set::iter(outside) {
        out.add_edge(g.y, v);
    }
    out
}

/// F_G by the chain recursion, memoized on the residual skeleton.
pub fn compute_f(g: &Skeleton, cap: usize) -> Result<u128> {
    let mut memo = HashMap::new();
    f_rec(g, &mut memo, cap)
}

fn f_rec(g: &Skeleton, memo: &mut HashMap<(VSet, Vec<VSet>), u128>, cap: usize) -> Result<u128> {
    let g = &merge_into_target(g);
    let key = g.key();
    if let Some(&v) = memo.get(&key) {
        return Ok(v);
    }
    if memo.len() >= cap {
        return Err(Error::CapExceeded(format!("F_G recursion exceeded {cap} residual graphs")));
    }
    let dec = decompose(g);
    let adj: Vec<&Chain> = dec.chains.iter().filter(|c| c.y_adjacent).collect();
    let value = if adj.is_empty() {
        1
    } else {
        let mut base = g.clone();
        let mut factor: u128 = 1;
        let mut open = Vec::new();
        for c in adj {
            if c.isolated {
                factor = factor.saturating_mul(c.cost());
                base.remove(c.set());
            } else {
                open.push((c, ops_for(g, c)));
            }
        }
        let mut sum: u128 = 0;
        let mut idx = vec![0usize; open.len()];
        loop {
            let mut h = base.clone();
            for (k, (c, ops)) in open.iter().enumerate() {
                apply_in_place(&mut h, c, ops[idx[k]]);
            }
            sum = sum.saturating_add(f_rec(&h, memo, cap)?);
            // next tuple of operations
            let mut k = 0;
            while k < open.len() {
                idx[k] += 1;
                if idx[k] < open[k].1.len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == open.len() {
                break;
            }
        }
        factor.saturating_mul(sum)
    };
    memo.insert(key, value);
    Ok(value)
}

/// Closed form of F_G on trees: the product over Y-adjacent chains of
/// `f(c) = len(c) + 1` for a chain with no chain-children and
/// `len(c) + prod f(children)` otherwise. The children of `c` are the
/// other chains attached to the branch region beyond its far end.
pub fn tree_formula(g: &Skeleton) -> Result<u128> {
    if !g.is_tree() {
        return Err(Error::Input("the closed form needs a tree skeleton".into()));
    }
    let dec = decompose(g);
    let branch_region = dec.branch & !dec.ytilde;
    fn f(g: &Skeleton, dec: &ChainDecomposition, region_pool: VSet, i: usize) -> u128 {
        let c = &dec.chains[i];
        let kids: Vec<usize> = match c.far {
            None => Vec::new(),
            Some(far) => {
                let region = g.component(bit(far), region_pool);
                (0..dec.chains.len())
                    .filter(|&j| j != i && dec.chains[j].vertices.iter().any(|&v| g.adj[v] & region != 0))
                    .collect()
            }
        };
        if kids.is_empty() {
            c.len() as u128 + 1
        } else {
            c.len() as u128 + kids.iter().map(|&j| f(g, dec, region_pool, j)).product::<u128>()
        }
    }
    Ok((0..dec.chains.len()).filter(|&i| dec.chains[i].y_adjacent).map(|i| f(g, &dec, branch_region, i)).product())
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainReport {
    pub vertices: Vec<String>,
    pub len: usize,
    pub two_heads: bool,
    pub y_adjacent: bool,
    pub isolated: bool,
    pub cost: u128,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComplexityReport {
    pub d_s: usize,
    pub d_gt2: usize,
    pub d_le2: usize,
    pub branch: Vec<String>,
    pub chains: Vec<ChainReport>,
    pub f_g: u128,
    pub n_g: Option<u128>,
    /// `F_G <= N_G <= 2^{d_gt2} F_G` when N_G is known.
    pub bounds_hold: Option<bool>,
    pub tree_formula: Option<u128>,
    /// d_gt2 / log2(d_S); small values point to polynomial class counts.
    pub branch_log_ratio: Option<f64>,
    /// log F_G / log d_S, the degree of a polynomial matching F_G.
    pub f_degree: Option<f64>,
}

/// F_G, N_G (when the stable graph is small enough) and the bound check.
pub fn certify_bounds(g_s: &MixedGraph, y: usize, f_cap: usize, ng_cap_vertices: usize) -> Result<ComplexityReport> {
    let sk = Skeleton::from_graph(g_s, y);
    let dec = decompose(&sk);
    let f_g = compute_f(&sk, f_cap)?;
    let d_s = set::len(sk.present & !bit(y));
    let n_g = (d_s <= ng_cap_vertices).then(|| recover_classes(g_s, y).n_g() as u128);
    let bounds_hold = n_g.map(|n| f_g <= n && n <= f_g.saturating_mul(1u128 << dec.d_gt2()));
    let tree = if sk.is_tree() { tree_formula(&sk).ok() } else { None };
    let ln_d = (d_s as f64).ln();
    let names = |s: &[usize]| s.iter().map(|&v| g_s.name(v).to_string()).collect::<Vec<_>>();
    let chains = dec
        .chains
        .iter()
        .map(|c| ChainReport {
            vertices: names(&c.vertices),
            len: c.len(),
            two_heads: c.two_heads,
            y_adjacent: c.y_adjacent,
            isolated: c.isolated,
            cost: c.cost(),
        })
        .collect();
    Ok(ComplexityReport {
        d_s,
        d_gt2: dec.d_gt2(),
        d_le2: dec.d_le2(),
        branch: g_s.names_of(dec.branch),
        chains,
        f_g,
        n_g,
        bounds_hold,
        tree_formula: tree,
        branch_log_ratio: (d_s >= 2).then(|| dec.d_gt2() as f64 / (d_s as f64).log2()),
        f_degree: (d_s >= 2).then(|| (f_g as f64).ln() / ln_d),
    })
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct LemmaReport {
    pub n: usize,
    pub leaves: usize,
    pub d_gt2: usize,
    /// Leaf count at least `d_gt2 + 2`; only for trees.
    pub leaf_lemma: Option<bool>,
    /// Leaves of the best spanning tree found.
    pub spanning_leaves: Option<usize>,
    pub spanning_exact: bool,
    /// Spanning-tree leaves at least `d_gt2 / 9`; only for connected graphs.
    pub spanning_lemma: Option<bool>,
}

/// Finite checks of the leaf-count and spanning-tree lemmas on the whole
/// skeleton (Y counted as an ordinary vertex).
pub fn structural_lemma_checks(g: &Skeleton) -> LemmaReport {
    let n = set::len(g.present);
    let leaves = set::iter(g.present).filter(|&v| g.degree(v) == 1).count();
    let d_gt2 = set::iter(g.present).filter(|&v| g.degree(v) > 2).count();
    let tree = g.is_tree();
    let connected = n > 0 && g.component(bit(set::iter(g.present).next().unwrap()), g.present) == g.present;
    let (spanning_leaves, spanning_exact) = if !connected {
        (None, false)
    } else if n <= EXACT_SPANNING_LIMIT {
        (Some(max_leaf_spanning_tree(g)), true)
    } else {
        (Some(greedy_leaf_spanning_tree(g)), false)
    };
    LemmaReport {
        n,
        leaves,
        d_gt2,
        leaf_lemma: (tree && n >= 2).then_some(leaves >= d_gt2 + 2),
        spanning_leaves,
        spanning_exact,
        spanning_lemma: spanning_leaves.map(|l| 9 * l >= d_gt2),
    }
}

/// Maximum leaf count over spanning trees of a connected graph: `n` minus
/// the smallest connected dominating set.
pub fn max_leaf_spanning_tree(g: &Skeleton) -> usize {
    let n = set::len(g.present);
    if n <= 2 {
        return n;
    }
    let verts: Vec<usize> = set::iter(g.present).collect();
    for k in 1..=n {
        for sub in set::subsets_by_size(set::from_iter(0..n)) {
            if set::len(sub) != k {
                continue;
            }
            let s = set::from_iter(set::iter(sub).map(|i| verts[i]));
            let dominated = verts.iter().all(|&v| contains(s, v) || g.adj[v] & s != 0);
            if dominated && g.component(bit(set::iter(s).next().unwrap()), s) == s {
                return n - k;
            }
        }
    }
    unreachable!("the whole vertex set is a connected dominating set")
}

/// Leaves of a spanning tree grown greedily from a maximum-degree vertex,
/// always expanding the tree vertex that adds the most new vertices.
pub fn greedy_leaf_spanning_tree(g: &Skeleton) -> usize {
    let n = set::len(g.present);
    if n <= 2 {
        return n;
    }
    let root = set::iter(g.present).max_by_key(|&v| g.degree(v)).unwrap();
    let mut in_tree = bit(root);
    let mut deg = vec![0usize; g.adj.len()];
    while in_tree != g.present {
        let (u, gain) =
            set::iter(in_tree).map(|u| (u, g.adj[u] & g.present & !in_tree)).max_by_key(|&(_, s)| set::len(s)).unwrap();
        for v in set::iter(gain) {
            deg[u] += 1;
            deg[v] += 1;
            in_tree |= bit(v);
        }
    }
    set::iter(g.present).filter(|&v| deg[v] == 1).count()
}

/// Growth sweep rows: chain-dense graphs (two chains off Y) against
/// branch-dense combs (a spine from Y with one leaf per spine vertex).
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub family: &'static str,
    pub d_s: usize,
    pub d_gt2: usize,
    pub f_g: u128,
    pub n_g: u128,
}

pub fn growth_sweep(max_d: usize) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for d in 2..=max_d {
        for (family, g) in [("chain_dense", two_chains(d)?), ("branch_dense", comb(d)?)] {
            let sk = Skeleton::from_graph(&g, 0);
            let dec = decompose(&sk);
            rows.push(SweepRow {
                family,
                d_s: d,
                d_gt2: dec.d_gt2(),
                f_g: compute_f(&sk, DEFAULT_F_CAP)?,
                n_g: recover_classes(&g, 0).n_g() as u128,
            });
        }
    }
    Ok(rows)
}

fn names(d: usize) -> Vec<String> {
    std::iter::once("Y".to_string()).chain((1..=d).map(|i| format!("X{i}"))).collect()
}

/// Y with two directed chains of lengths `ceil(d/2)` and `floor(d/2)`.
pub fn two_chains(d: usize) -> Result<MixedGraph> {
    let mut g = MixedGraph::new(&names(d))?;
    let a = d.div_ceil(2);
    for i in 1..=d {
        let prev = if i == 1 || i == a + 1 { 0 } else { i - 1 };
        g.add_directed(prev, i)?;
    }
    Ok(g)
}

/// Spine `Y -> X1 -> X3 -> ...` with leaves `X(2k-1) -> X(2k)`.
pub fn comb(d: usize) -> Result<MixedGraph> {
    let mut g = MixedGraph::new(&names(d))?;
    let mut spine = 0;
    for i in 1..=d {
        if i % 2 == 1 {
            g.add_directed(spine, i)?;
            spine = i;
        } else {
            g.add_directed(i - 1, i)?;
        }
    }
    Ok(g)
}
