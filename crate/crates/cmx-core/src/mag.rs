//! Projection of a mixed graph onto an observed set, marginalizing latent
//! vertices and conditioning on selection vertices.

use std::collections::VecDeque;

use crate::graph::{Kind, Mark, MixedGraph};
use crate::set::{self, bit, contains, VSet};

/// Observed, latent and selection sets of a projection. The target is kept
/// as an observed vertex by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Projection {
    pub observed: VSet,
    pub latent: VSet,
    pub selection: VSet,
}

/// Vertices that reach a member of `c` along directed edges (tail to arrow)
/// or tail-tail edges, together with `c` itself. Endpoints of tail-tail
/// edges are included as well: in a MAG they are ancestors of a selection
/// set applied by an earlier projection, and further projections keep them so.
pub fn anterior_to(g: &MixedGraph, c: VSet) -> VSet {
    let mut out = c;
    for (u, v, mu, mv) in g.edges() {
        if mu == Mark::Tail && mv == Mark::Tail {
            out |= bit(u) | bit(v);
        }
    }
    let mut queue: VecDeque<usize> = set::iter(out).collect();
    while let Some(v) = queue.pop_front() {
        for u in set::iter(g.neighbors(v) & !out) {
            if g.mark(u, v) == Some(Mark::Tail) {
                out |= bit(u);
                queue.push_back(u);
            }
        }
    }
    out
}

/// Whether `a` and `b` are joined by an inducing path relative to
/// `<c, l>`: every interior vertex is latent or a collider, and every
/// interior collider is an ancestor of `a`, `b` or a member of `c`.
pub fn has_inducing_path(g: &MixedGraph, a: usize, b: usize, c: VSet, l: VSet) -> bool {
    if g.adjacent(a, b) {
        return true;
    }
    let ends = bit(a) | bit(b);
    let anc = ends | g.ancestors_of(ends) | anterior_to(g, c);
    let mut seen = [0u64; 2];
    let mut queue = VecDeque::new();
    for w in set::iter(g.neighbors(a) & !bit(b)) {
        let st = (g.mark(w, a) == Some(Mark::Arrow)) as usize;
        seen[st] |= bit(w);
        queue.push_back((w, st));
    }
    while let Some((v, into)) = queue.pop_front() {
        for w in set::iter(g.neighbors(v) & !bit(a)) {
            let collider = into == 1 && g.mark(v, w) == Some(Mark::Arrow);
            let pass = if collider { contains(anc, v) } else { contains(l, v) };
            if !pass {
                continue;
            }
            if w == b {
                return true;
            }
            let st = (g.mark(w, v) == Some(Mark::Arrow)) as usize;
            if !contains(seen[st], w) {
                seen[st] |= bit(w);
                queue.push_back((w, st));
            }
        }
    }
    false
}

/// The MAG over `observed` (which should include the target).
///
/// Two observed vertices are adjacent iff an inducing path joins them. The
/// mark at `u` on edge `u - v` is a tail iff `u` is an ancestor of `v` or
/// anterior to the selection set in the source.
pub fn build_mag(g: &MixedGraph, p: &Projection) -> MixedGraph {
    let sel_anc = anterior_to(g, p.selection);
    let mut out = g.induced(p.observed);
    for (u, v, _, _) in out.edges() {
        out.remove_edge(u, v);
    }
    let obs: Vec<usize> = set::iter(p.observed & g.present()).collect();
    let anc: Vec<VSet> = (0..g.n()).map(|v| g.ancestors(v)).collect();
    for (i, &u) in obs.iter().enumerate() {
        for &v in &obs[i + 1..] {
            if !has_inducing_path(g, u, v, p.selection, p.latent) {
                continue;
            }
            let tail_u = contains(anc[v] | sel_anc, u);
            let tail_v = contains(anc[u] | sel_anc, v);
            let m = |t: bool| if t { Mark::Tail } else { Mark::Arrow };
            out.add_edge(u, v, m(tail_u), m(tail_v)).expect("fresh edge between present vertices");
        }
    }
    out.set_kind(Kind::Mag);
    out
}

/// Ancestral well-formedness: acyclic directed part, no arrowhead into an
/// ancestor, and no arrowhead at an endpoint of a tail-tail edge.
pub fn is_ancestral(g: &MixedGraph) -> bool {
    if !g.is_acyclic() {
        return false;
    }
    for (u, v, mu, mv) in g.edges() {
        if mu == Mark::Arrow && contains(g.ancestors(v), u) {
            return false;
        }
        if mv == Mark::Arrow && contains(g.ancestors(u), v) {
            return false;
        }
        if mu == Mark::Tail && mv == Mark::Tail {
            for w in [u, v] {
                if set::iter(g.neighbors(w)).any(|x| g.mark(w, x) == Some(Mark::Arrow)) {
                    return false;
                }
            }
        }
    }
    true
}
