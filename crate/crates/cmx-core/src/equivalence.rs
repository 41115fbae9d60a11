//! Equivalence of stable subsets and recovery of the quotient of their
//! power set.
//!
//! Two subsets `s1`, `s2` are equivalent when some `t ⊆ s1 ∩ s2` separates
//! the target from `(s1 ∪ s2) \ t` given `t` in the stable graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MixedGraph;
use crate::mag::{build_mag, Projection};
use crate::set::{self, bit, contains, VSet};

pub const DEFAULT_BRUTE_FORCE_CAP: usize = 8;
pub const DEFAULT_MEMBER_CAP: u128 = 1 << 12;

/// One class: all subsets `base ∪ t` with `t ⊆ free`, where `base` is the
/// accumulated selection and `free` holds the vertices left unconditionally
/// separated from the target at the terminal recursion level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivClass {
    pub representative: VSet,
    pub free: VSet,
}

impl EquivClass {
    pub fn size(&self) -> u128 {
        1u128 << set::len(self.free)
    }

    pub fn contains(&self, stable: VSet, s: VSet) -> bool {
        s & !self.free & stable == self.representative && s & !stable == 0
    }

    pub fn members(&self) -> impl Iterator<Item = VSet> + '_ {
        set::subsets(self.free).map(move |t| self.representative | t)
    }
}

#[derive(Debug, Clone)]
pub struct EquivalencePartition {
    pub target: usize,
    pub stable: VSet,
    pub classes: Vec<EquivClass>,
    /// Recursion nodes visited while recovering; zero for brute force.
    pub recursion_nodes: usize,
}

impl EquivalencePartition {
    pub fn n_g(&self) -> usize {
        self.classes.len()
    }

    pub fn class_of(&self, s: VSet) -> Result<&EquivClass> {
        if s & !self.stable != 0 {
            return Err(Error::Input("subset contains non-stable vertices".into()));
        }
        self.classes
            .iter()
            .find(|c| c.contains(self.stable, s))
            .ok_or_else(|| Error::Invariant("subset belongs to no class".into()))
    }

    /// Sorted member sets of every class, for exact comparison.
    pub fn member_sets(&self) -> Vec<Vec<VSet>> {
        let mut out: Vec<Vec<VSet>> = self
            .classes
            .iter()
            .map(|c| {
                let mut m: Vec<VSet> = c.members().collect();
                m.sort();
                m
            })
            .collect();
        out.sort();
        out
    }

    fn sort(&mut self, g: &MixedGraph) {
        self.classes.sort_by_key(|c| subset_key(g, c.representative));
    }

    pub fn to_json(&self, g: &MixedGraph, member_cap: u128) -> PartitionJson {
        PartitionJson {
            n_g: self.n_g(),
            classes: self
                .classes
                .iter()
                .map(|c| ClassJson {
                    representative: g.names_of(c.representative),
                    size: c.size(),
                    members: (c.size() <= member_cap).then(|| {
                        let mut m: Vec<VSet> = c.members().collect();
                        m.sort_by_key(|&s| subset_key(g, s));
                        m.into_iter().map(|s| g.names_of(s)).collect()
                    }),
                })
                .collect(),
        }
    }
}

/// Ordering key for subsets: cardinality, then sorted member names.
pub fn subset_key(g: &MixedGraph, s: VSet) -> (usize, Vec<String>) {
    (set::len(s), g.names_of(s))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClassJson {
    pub representative: Vec<String>,
    pub size: u128,
    pub members: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PartitionJson {
    pub n_g: usize,
    pub classes: Vec<ClassJson>,
}

fn stable_of(g: &MixedGraph, target: usize) -> VSet {
    g.present() & !bit(target)
}

pub fn are_equivalent(g_s: &MixedGraph, target: usize, s1: VSet, s2: VSet) -> Result<bool> {
    let stable = stable_of(g_s, target);
    if (s1 | s2) & !stable != 0 {
        return Err(Error::Input("subsets must contain stable vertices only".into()));
    }
    let union = s1 | s2;
    for t in set::subsets(s1 & s2) {
        if g_s.is_separated(bit(target), union & !t, t)? || union & !t == 0 {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Partition of the stable power set by exhaustive pairwise comparison.
///
/// Pairwise separation is decomposable, so the vertices connected to the
/// target are tabulated once per conditioning set and each comparison is a
/// mask test. Fails with an invariant error if the pairwise relation is not
/// already transitive.
pub fn brute_force_partition(g_s: &MixedGraph, target: usize, cap: usize) -> Result<EquivalencePartition> {
    let stable = stable_of(g_s, target);
    let d = set::len(stable);
    if d > cap {
        return Err(Error::CapExceeded(format!("brute force over {d} stable vertices exceeds cap {cap}")));
    }
    let members: Vec<usize> = set::iter(stable).collect();
    let expand = |k: usize| -> VSet {
        let mut s = 0;
        for (i, &m) in members.iter().enumerate() {
            if k >> i & 1 == 1 {
                s |= bit(m);
            }
        }
        s
    };
    let n = 1usize << d;
    let reach: Vec<VSet> = (0..n).map(|k| g_s.connected_to(bit(target), expand(k))).collect();
    let related = |a: usize, b: usize| -> bool {
        let union = expand(a | b);
        // Enumerate submasks of the intersection in compressed coordinates.
        let inter = a & b;
        let mut t = inter;
        loop {
            if reach[t] & union & !expand(t) == 0 {
                return true;
            }
            if t == 0 {
                return false;
            }
            t = (t - 1) & inter;
        }
    };
    let mut label: Vec<usize> = (0..n).collect();
    fn find(label: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while label[r] != r {
            r = label[r];
        }
        label[x] = r;
        r
    }
    let mut rel = vec![false; n * n];
    for a in 0..n {
        for b in a..n {
            if related(a, b) {
                rel[a * n + b] = true;
                rel[b * n + a] = true;
                let (ra, rb) = (find(&mut label, a), find(&mut label, b));
                if ra != rb {
                    label[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|k| find(&mut label, k)).collect();
    for a in 0..n {
        for b in 0..n {
            if roots[a] == roots[b] && !rel[a * n + b] {
                return Err(Error::Invariant(format!(
                    "equivalence not transitive: {:?} and {:?}",
                    g_s.names_of(expand(a)),
                    g_s.names_of(expand(b))
                )));
            }
        }
    }
    let mut classes = Vec::new();
    for root in 0..n {
        if roots[root] != root {
            continue;
        }
        let ms: Vec<VSet> = (0..n).filter(|&k| roots[k] == root).map(expand).collect();
        // Classes are always of the form base × power set of free vertices.
        let rep = ms.iter().copied().fold(stable, |acc, s| acc & s);
        let free = ms.iter().copied().fold(0, |acc, s| acc | s) & !rep;
        let class = EquivClass { representative: rep, free };
        if class.size() != ms.len() as u128 || !ms.iter().all(|&s| class.contains(stable, s)) {
            return Err(Error::Invariant("class is not a product set".into()));
        }
        classes.push(class);
    }
    let mut p = EquivalencePartition { target, stable, classes, recursion_nodes: 0 };
    p.sort(g_s);
    Ok(p)
}

/// Recursive recovery. While the target has neighbors `nb`, every
/// `s ⊆ nb` is explored by projecting with `s` selected and `nb \ s`
/// latent; once the target is isolated the remaining vertices are free.
pub fn recover_classes(g_s: &MixedGraph, target: usize) -> EquivalencePartition {
    let stable = stable_of(g_s, target);
    let mut classes = Vec::new();
    let mut nodes = 0;
    recurse(g_s, target, 0, &mut classes, &mut nodes);
    let mut p = EquivalencePartition { target, stable, classes, recursion_nodes: nodes };
    p.sort(g_s);
    p
}

fn recurse(g: &MixedGraph, y: usize, acc: VSet, out: &mut Vec<EquivClass>, nodes: &mut usize) {
    *nodes += 1;
    let nb = g.neighbors(y);
    let rest = g.present() & !bit(y);
    if nb == 0 {
        out.push(EquivClass { representative: acc, free: rest });
        return;
    }
    let observed = g.present() & !nb;
    for s in set::subsets(nb) {
        let m = build_mag(g, &Projection { observed, latent: nb & !s, selection: s });
        recurse(&m, y, acc | s, out, nodes);
    }
}

/// Contracts the edge between `y` and its neighbor `x0` into `y`. Marks at
/// the merged vertex are arrowheads so it adds no directed paths.
pub fn merge_into(g: &MixedGraph, y: usize, x0: usize) -> MixedGraph {
    let mut out = g.clone();
    let nbrs = (g.neighbors(y) | g.neighbors(x0)) & !bit(y) & !bit(x0);
    out.remove_vertices(bit(x0));
    for w in set::iter(g.neighbors(y)) {
        out.remove_edge(y, w);
    }
    for w in set::iter(nbrs) {
        let far = if g.adjacent(y, w) { g.mark(w, y) } else { g.mark(w, x0) };
        out.add_edge(w, y, far.expect("adjacent"), crate::graph::Mark::Arrow).expect("fresh edge");
    }
    out
}

/// Whether every vertex outside `{y} ∪ x0` is adjacent to at most one
/// vertex of `{y} ∪ x0`.
pub fn merge_hypothesis(g: &MixedGraph, y: usize, x0: VSet) -> bool {
    let core = x0 | bit(y);
    set::iter(g.present() & !core).all(|v| set::len(g.neighbors(v) & core) <= 1)
        && set::iter(x0).all(|x| contains(g.present(), x))
}
