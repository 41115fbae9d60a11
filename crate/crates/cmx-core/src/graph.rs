//! Mixed graphs with endpoint marks, covering DAGs and MAGs.
//!
//! Vertices keep a fixed index for the lifetime of a graph and of every graph
//! derived from it (projections, mutilations, surgeries). Removed vertices are
//! simply absent from `present`, which keeps vertex sets comparable across a
//! whole recursion.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::set::{self, bit, contains, VSet, MAX_VERTICES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mark {
    Arrow,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Dag,
    Mag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedGraph {
    names: Vec<String>,
    present: VSet,
    // marks[u][v] is the mark at v on the edge between u and v.
    marks: Vec<Vec<Option<Mark>>>,
    kind: Kind,
}

impl MixedGraph {
    /// An edgeless graph. Kind starts as `Dag`; adding a non-directed edge
    /// turns it into a `Mag`.
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        if names.len() > MAX_VERTICES {
            return Err(Error::Input(format!("at most {MAX_VERTICES} vertices are supported, got {}", names.len())));
        }
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        let mut seen = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if seen.insert(n.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate vertex id {n:?}")));
            }
        }
        let n = names.len();
        Ok(MixedGraph {
            names,
            present: if n == 64 { u64::MAX } else { (1u64 << n) - 1 },
            marks: vec![vec![None; n]; n],
            kind: Kind::Dag,
        })
    }

    /// Builds a DAG from directed edges given by name, rejecting cycles.
    pub fn dag<S: AsRef<str>>(names: &[S], edges: &[(S, S)]) -> Result<Self> {
        let mut g = MixedGraph::new(names)?;
        for (u, v) in edges {
            let (u, v) = (g.id(u.as_ref())?, g.id(v.as_ref())?);
            g.add_edge(u, v, Mark::Tail, Mark::Arrow)?;
        }
        if !g.is_acyclic() {
            return Err(Error::Input("directed cycle in DAG".into()));
        }
        Ok(g)
    }

    /// Number of vertex slots (including removed ones).
    pub fn n(&self) -> usize {
        self.names.len()
    }

    pub fn present(&self) -> VSet {
        self.present
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn set_kind(&mut self, kind: Kind) {
        self.kind = kind;
    }

    pub fn name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .filter(|&i| contains(self.present, i))
            .ok_or_else(|| Error::Input(format!("unknown vertex {name:?}")))
    }

    pub fn set_of<S: AsRef<str>>(&self, names: &[S]) -> Result<VSet> {
        let mut s = 0;
        for n in names {
            s |= bit(self.id(n.as_ref())?);
        }
        Ok(s)
    }

    /// Names of a set, sorted lexicographically.
    pub fn names_of(&self, s: VSet) -> Vec<String> {
        let mut v: Vec<String> = set::iter(s).map(|i| self.names[i].clone()).collect();
        v.sort();
        v
    }

    fn check_vertex(&self, v: usize) -> Result<()> {
        if v < self.n() && contains(self.present, v) {
            Ok(())
        } else {
            Err(Error::Input(format!("unknown vertex index {v}")))
        }
    }

    pub fn add_edge(&mut self, u: usize, v: usize, mark_u: Mark, mark_v: Mark) -> Result<()> {
        self.check_vertex(u)?;
        self.check_vertex(v)?;
        if u == v {
            return Err(Error::Input(format!("self-loop at {}", self.names[u])));
        }
        if self.marks[u][v].is_some() {
            return Err(Error::Input(format!("duplicate edge {} - {}", self.names[u], self.names[v])));
        }
        self.marks[u][v] = Some(mark_v);
        self.marks[v][u] = Some(mark_u);
        if !(mark_u == Mark::Tail && mark_v == Mark::Arrow || mark_u == Mark::Arrow && mark_v == Mark::Tail) {
            self.kind = Kind::Mag;
        }
        Ok(())
    }

    pub fn add_directed(&mut self, u: usize, v: usize) -> Result<()> {
        self.add_edge(u, v, Mark::Tail, Mark::Arrow)
    }

    pub fn remove_edge(&mut self, u: usize, v: usize) {
        self.marks[u][v] = None;
        self.marks[v][u] = None;
    }

    /// Drops vertices together with their incident edges.
    pub fn remove_vertices(&mut self, s: VSet) {
        for v in set::iter(s & self.present) {
            for u in 0..self.n() {
                self.marks[u][v] = None;
                self.marks[v][u] = None;
            }
        }
        self.present &= !s;
    }

    /// The subgraph induced on `keep`.
    pub fn induced(&self, keep: VSet) -> MixedGraph {
        let mut g = self.clone();
        g.remove_vertices(self.present & !keep);
        g
    }

    pub fn adjacent(&self, u: usize, v: usize) -> bool {
        self.marks[u][v].is_some()
    }

    /// Mark at `at` on the edge between `at` and `other`.
    pub fn mark(&self, at: usize, other: usize) -> Option<Mark> {
        self.marks[other][at]
    }

    pub fn is_directed(&self, u: usize, v: usize) -> bool {
        self.marks[u][v] == Some(Mark::Arrow) && self.marks[v][u] == Some(Mark::Tail)
    }

    pub fn is_undirected(&self, u: usize, v: usize) -> bool {
        self.marks[u][v] == Some(Mark::Tail) && self.marks[v][u] == Some(Mark::Tail)
    }

    pub fn edges(&self) -> Vec<(usize, usize, Mark, Mark)> {
        let mut out = Vec::new();
        for u in set::iter(self.present) {
            for v in set::iter(self.present) {
                if u < v {
                    if let (Some(mv), Some(mu)) = (self.marks[u][v], self.marks[v][u]) {
                        out.push((u, v, mu, mv));
                    }
                }
            }
        }
        out
    }

    pub fn parents(&self, v: usize) -> VSet {
        set::from_iter((0..self.n()).filter(|&u| self.is_directed(u, v)))
    }

    pub fn children(&self, v: usize) -> VSet {
        set::from_iter((0..self.n()).filter(|&u| self.is_directed(v, u)))
    }

    pub fn neighbors(&self, v: usize) -> VSet {
        set::from_iter((0..self.n()).filter(|&u| self.marks[v][u].is_some()))
    }

    pub fn degree(&self, v: usize) -> usize {
        set::len(self.neighbors(v))
    }

    /// Vertices with a directed path into `s` (members of `s` only if they
    /// themselves reach another member).
    pub fn ancestors_of(&self, s: VSet) -> VSet {
        self.reach(s, |g, v| g.parents(v))
    }

    pub fn descendants_of(&self, s: VSet) -> VSet {
        self.reach(s, |g, v| g.children(v))
    }

    pub fn ancestors(&self, v: usize) -> VSet {
        self.ancestors_of(bit(v))
    }

    pub fn descendants(&self, v: usize) -> VSet {
        self.descendants_of(bit(v))
    }

    fn reach(&self, seeds: VSet, step: impl Fn(&Self, usize) -> VSet) -> VSet {
        let mut out = 0;
        let mut queue: VecDeque<usize> = set::iter(seeds).collect();
        while let Some(v) = queue.pop_front() {
            for u in set::iter(step(self, v) & !out) {
                out |= bit(u);
                queue.push_back(u);
            }
        }
        out
    }

    pub fn is_acyclic(&self) -> bool {
        set::iter(self.present).all(|v| !contains(self.descendants(v), v))
    }

    /// Present vertices in a topological order of the directed part, ties
    /// broken by index.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let mut indeg: Vec<usize> = (0..self.n()).map(|v| set::len(self.parents(v))).collect();
        let mut order = Vec::new();
        let mut done: VSet = 0;
        while order.len() < set::len(self.present) {
            let next = set::iter(self.present & !done).find(|&v| indeg[v] == 0);
            let Some(v) = next else {
                return Err(Error::Input("directed cycle".into()));
            };
            done |= bit(v);
            order.push(v);
            for c in set::iter(self.children(v)) {
                indeg[c] -= 1;
            }
        }
        Ok(order)
    }

    /// `G` with every edge whose arrowhead lies in `targets` deleted.
    pub fn mutilate(&self, targets: VSet) -> MixedGraph {
        let mut g = self.clone();
        for t in set::iter(targets) {
            for u in 0..self.n() {
                if self.marks[u][t] == Some(Mark::Arrow) {
                    g.remove_edge(u, t);
                }
            }
        }
        g
    }

    /// Vertices connected to some member of `a` by a path that is open given
    /// `z`. A path is open when every interior non-collider lies outside `z`
    /// and every interior collider is in `z` or has a descendant in `z`.
    /// Colliders are vertices where both incident marks are arrowheads.
    pub fn connected_to(&self, a: VSet, z: VSet) -> VSet {
        let open_collider = z | self.ancestors_of(z);
        // State bit: arrived at v with an arrowhead at v.
        let mut seen = [0u64; 2];
        let mut queue = VecDeque::new();
        for s in set::iter(a) {
            for w in set::iter(self.neighbors(s)) {
                let st = (self.marks[s][w] == Some(Mark::Arrow)) as usize;
                if !contains(seen[st], w) {
                    seen[st] |= bit(w);
                    queue.push_back((w, st));
                }
            }
        }
        while let Some((v, into)) = queue.pop_front() {
            for w in set::iter(self.neighbors(v)) {
                let out_arrow = self.marks[w][v] == Some(Mark::Arrow);
                let collider = into == 1 && out_arrow;
                let pass = if collider { contains(open_collider, v) } else { !contains(z, v) };
                if !pass {
                    continue;
                }
                let st = (self.marks[v][w] == Some(Mark::Arrow)) as usize;
                if !contains(seen[st], w) {
                    seen[st] |= bit(w);
                    queue.push_back((w, st));
                }
            }
        }
        (seen[0] | seen[1]) & !z & !a
    }

    /// d-separation on DAGs, m-separation on MAGs.
    pub fn is_separated(&self, a: VSet, b: VSet, z: VSet) -> Result<bool> {
        if a & b != 0 || a & z != 0 || b & z != 0 {
            return Err(Error::Input("separation query sets must be disjoint".into()));
        }
        if (a | b | z) & !self.present != 0 {
            return Err(Error::Input("separation query mentions an unknown vertex".into()));
        }
        Ok(self.connected_to(a, z) & b == 0)
    }

    /// Checks the structural invariants for the declared kind.
    pub fn validate(&self) -> Result<()> {
        for u in 0..self.n() {
            if self.marks[u][u].is_some() {
                return Err(Error::Invariant("self-loop".into()));
            }
            for v in 0..self.n() {
                if self.marks[u][v].is_some() != self.marks[v][u].is_some() {
                    return Err(Error::Invariant("half edge".into()));
                }
                if self.marks[u][v].is_some() && !(contains(self.present, u) && contains(self.present, v)) {
                    return Err(Error::Invariant("edge at removed vertex".into()));
                }
            }
        }
        if self.kind == Kind::Dag {
            for (u, v, _, _) in self.edges() {
                if !(self.is_directed(u, v) || self.is_directed(v, u)) {
                    return Err(Error::Invariant("non-directed edge in DAG".into()));
                }
            }
        }
        if !self.is_acyclic() {
            return Err(Error::Invariant("directed cycle".into()));
        }
        Ok(())
    }
}

/// Target, stable and mutable vertex sets bound to a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemSpec {
    pub target: usize,
    pub stable: VSet,
    pub mutable: VSet,
}

impl ProblemSpec {
    pub fn new(g: &MixedGraph, target: usize, stable: VSet, mutable: VSet) -> Result<Self> {
        if contains(stable | mutable, target) {
            return Err(Error::Input("target must not be stable or mutable".into()));
        }
        if stable & mutable != 0 {
            return Err(Error::Input("stable and mutable sets overlap".into()));
        }
        if stable | mutable | bit(target) != g.present() {
            return Err(Error::Input("target, stable and mutable must cover the graph's vertices".into()));
        }
        Ok(ProblemSpec { target, stable, mutable })
    }

    pub fn covariates(&self) -> VSet {
        self.stable | self.mutable
    }

    pub fn d_s(&self) -> usize {
        set::len(self.stable)
    }

    pub fn d_m(&self) -> usize {
        set::len(self.mutable)
    }
}

/// The stable graph: the subgraph induced on the target and stable vertices.
pub fn stable_graph(g: &MixedGraph, spec: &ProblemSpec) -> MixedGraph {
    g.induced(spec.stable | bit(spec.target))
}

/// A simple path with collider status derived from edge marks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    vertices: Vec<usize>,
    colliders: Vec<bool>,
}

impl Path {
    pub fn new(g: &MixedGraph, vertices: Vec<usize>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::Input("empty path".into()));
        }
        if set::len(set::from_iter(vertices.iter().copied())) != vertices.len() {
            return Err(Error::Input("path repeats a vertex".into()));
        }
        if vertices.windows(2).any(|w| !g.adjacent(w[0], w[1])) {
            return Err(Error::Input("consecutive path vertices not adjacent".into()));
        }
        let mut colliders = vec![false; vertices.len()];
        for i in 1..vertices.len().saturating_sub(1) {
            let v = vertices[i];
            colliders[i] =
                g.mark(v, vertices[i - 1]) == Some(Mark::Arrow) && g.mark(v, vertices[i + 1]) == Some(Mark::Arrow);
        }
        Ok(Path { vertices, colliders })
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn is_collider(&self, i: usize) -> bool {
        self.colliders[i]
    }

    /// Whether the path is open given `z`.
    pub fn is_open(&self, g: &MixedGraph, z: VSet) -> bool {
        let an = z | g.ancestors_of(z);
        (1..self.vertices.len().saturating_sub(1)).all(|i| {
            let v = self.vertices[i];
            if self.colliders[i] {
                contains(an, v)
            } else {
                !contains(z, v)
            }
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EdgeJson {
    pub u: String,
    pub v: String,
    pub mark_u: Mark,
    pub mark_v: Mark,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphJson {
    pub vertices: Vec<String>,
    pub edges: Vec<EdgeJson>,
    pub target: String,
    #[serde(default)]
    pub stable: Vec<String>,
    #[serde(default)]
    pub mutable: Vec<String>,
}

impl GraphJson {
    pub fn build(&self) -> Result<(MixedGraph, ProblemSpec)> {
        let mut g = MixedGraph::new(&self.vertices)?;
        for e in &self.edges {
            let (u, v) = (g.id(&e.u)?, g.id(&e.v)?);
            g.add_edge(u, v, e.mark_u, e.mark_v)?;
        }
        if !g.is_acyclic() {
            return Err(Error::Input("directed cycle in graph".into()));
        }
        let spec = ProblemSpec::new(&g, g.id(&self.target)?, g.set_of(&self.stable)?, g.set_of(&self.mutable)?)?;
        Ok((g, spec))
    }

    pub fn from_graph(g: &MixedGraph, spec: &ProblemSpec) -> Self {
        let mut vertices = g.names_of(g.present());
        vertices.sort();
        let mut edges: Vec<EdgeJson> = g
            .edges()
            .into_iter()
            .map(|(u, v, mu, mv)| {
                // Directed edges are written tail first.
                if mu == Mark::Arrow && mv == Mark::Tail || (mu == mv && g.name(u) > g.name(v)) {
                    EdgeJson { u: g.name(v).into(), v: g.name(u).into(), mark_u: mv, mark_v: mu }
                } else {
                    EdgeJson { u: g.name(u).into(), v: g.name(v).into(), mark_u: mu, mark_v: mv }
                }
            })
            .collect();
        edges.sort_by(|a, b| (&a.u, &a.v).cmp(&(&b.u, &b.v)));
        GraphJson {
            vertices,
            edges,
            target: g.name(spec.target).into(),
            stable: g.names_of(spec.stable),
            mutable: g.names_of(spec.mutable),
        }
    }
}
