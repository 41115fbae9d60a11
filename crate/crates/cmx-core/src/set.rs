//! Vertex sets as 64-bit masks over a graph's vertex indices.

pub type VSet = u64;

pub const MAX_VERTICES: usize = 64;

#[inline]
pub fn bit(v: usize) -> VSet {
    1u64 << v
}

#[inline]
pub fn contains(s: VSet, v: usize) -> bool {
    s >> v & 1 == 1
}

#[inline]
pub fn len(s: VSet) -> usize {
    s.count_ones() as usize
}

/// Iterates set members in increasing index order.
pub fn iter(s: VSet) -> impl Iterator<Item = usize> {
    let mut rest = s;
    std::iter::from_fn(move || {
        if rest == 0 {
            None
        } else {
            let v = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            Some(v)
        }
    })
}

pub fn from_iter<I: IntoIterator<Item = usize>>(it: I) -> VSet {
    it.into_iter().fold(0, |acc, v| acc | bit(v))
}

/// All subsets of `s`, starting with the empty set, in increasing order of
/// the compressed index (so lower-indexed members vary fastest).
pub fn subsets(s: VSet) -> impl Iterator<Item = VSet> {
    let members: Vec<usize> = iter(s).collect();
    let n = members.len();
    (0u64..(1u64 << n)).map(move |k| {
        let mut out = 0;
        for (i, &m) in members.iter().enumerate() {
            if k >> i & 1 == 1 {
                out |= bit(m);
            }
        }
        out
    })
}

/// Subsets of `s` grouped by increasing cardinality, lexicographic in the
/// member order within a cardinality.
pub fn subsets_by_size(s: VSet) -> Vec<VSet> {
    let members: Vec<usize> = iter(s).collect();
    let mut out = Vec::with_capacity(1 << members.len());
    for k in 0..=members.len() {
        combos(&members, k, 0, 0, &mut out);
    }
    out
}

fn combos(members: &[usize], k: usize, start: usize, acc: VSet, out: &mut Vec<VSet>) {
    if k == 0 {
        out.push(acc);
        return;
    }
    for i in start..members.len() {
        if members.len() - i < k {
            break;
        }
        combos(members, k - 1, i + 1, acc | bit(members[i]), out);
    }
}
