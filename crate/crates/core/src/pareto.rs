//! Dominance, multicriteria label propagation and Pareto node marking.
//!
//! All objectives are maximized: `a` dominates `b` when `a >= b` in every
//! coordinate and `a > b` in at least one.
//!
//! Label sets are kept sorted in descending lexicographic order. In that order
//! a vector can only be dominated by vectors that precede it, so filtering is
//! a single sweep against the survivors found so far. With two objectives the
//! survivors form a staircase and one comparison against the last survivor
//! settles each candidate.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::bdd::{Bdd, KeepSet, NodeId};
use crate::error::{Error, Result};

/// `true` iff `a` is at least `b` everywhere and strictly better somewhere.
///
/// Panics if the lengths differ.
pub fn dominates<T: PartialOrd>(a: &[T], b: &[T]) -> bool {
    assert_eq!(a.len(), b.len(), "objective vectors of different length");
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(Ordering::Less) | None => return false,
            Some(Ordering::Greater) => strict = true,
            Some(Ordering::Equal) => {}
        }
    }
    strict
}

fn lex_desc<T: PartialOrd>(a: &[T], b: &[T]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match y.partial_cmp(x).unwrap_or(Ordering::Equal) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// Maximal elements of `vs` with duplicates collapsed, in descending
/// lexicographic order, together with the number of `dominates` calls made.
pub fn filter_nondominated<T: PartialOrd + Copy>(vs: &[Vec<T>]) -> (Vec<Vec<T>>, u64) {
    let mut order: Vec<&Vec<T>> = vs.iter().collect();
    order.sort_by(|a, b| lex_desc(a, b));
    order.dedup_by(|a, b| lex_desc(a, b) == Ordering::Equal);
    let mut survivors: Vec<Vec<T>> = Vec::new();
    let mut comparisons = 0u64;
    let two = vs.first().is_some_and(|v| v.len() == 2);
    for cand in order {
        let dominated = if two {
            match survivors.last() {
                Some(last) => {
                    comparisons += 1;
                    dominates(last, cand)
                }
                None => false,
            }
        } else {
            survivors.iter().any(|s| {
                comparisons += 1;
                dominates(s, cand)
            })
        };
        if !dominated {
            survivors.push(cand.clone());
        }
    }
    (survivors, comparisons)
}

/// Per-node nondominated partial objective vectors, stored flat.
#[derive(Debug, Clone)]
pub struct NodeLabels {
    k: usize,
    offsets: Vec<usize>,
    values: Vec<u32>,
}

impl NodeLabels {
    pub fn num_objectives(&self) -> usize {
        self.k
    }

    pub fn id_bound(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn count(&self, id: NodeId) -> usize {
        let id = id as usize;
        (self.offsets[id + 1] - self.offsets[id]) / self.k
    }

    pub fn total(&self) -> usize {
        self.values.len() / self.k
    }

    /// Flat slice of a node's labels (`count * k` values).
    pub fn flat(&self, id: NodeId) -> &[u32] {
        let id = id as usize;
        &self.values[self.offsets[id]..self.offsets[id + 1]]
    }

    pub fn labels(&self, id: NodeId) -> impl Iterator<Item = &[u32]> + '_ {
        self.flat(id).chunks_exact(self.k)
    }

    /// Index of `v` among the labels of `id`.
    pub fn find(&self, id: NodeId, v: &[u32]) -> Option<usize> {
        let flat = self.flat(id);
        let k = self.k;
        let (mut lo, mut hi) = (0usize, flat.len() / k);
        while lo < hi {
            let mid = (lo + hi) / 2;
            match lex_desc(&flat[mid * k..(mid + 1) * k], v) {
                Ordering::Less => lo = mid + 1,
                Ordering::Greater => hi = mid,
                Ordering::Equal => return Some(mid),
            }
        }
        None
    }

    fn base(&self, id: NodeId) -> usize {
        self.offsets[id as usize] / self.k
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrontierPoint {
    pub objectives: Vec<u32>,
    pub solution: Vec<bool>,
}

/// Mutually nondominated objective vectors, each with one solution realizing
/// it. Points are sorted lexicographically ascending by objective vector.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Frontier {
    pub points: Vec<FrontierPoint>,
    pub comparison_count: u64,
}

impl Frontier {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[u32]> + '_ {
        self.points.iter().map(|p| p.objectives.as_slice())
    }

    pub fn vector_set(&self) -> std::collections::BTreeSet<Vec<u32>> {
        self.points.iter().map(|p| p.objectives.clone()).collect()
    }

    /// CSV with objective columns then solution-bit columns.
    pub fn to_csv(&self, num_objectives: usize, num_items: usize) -> String {
        let mut out = String::new();
        let header: Vec<String> = (1..=num_objectives)
            .map(|k| format!("z{k}"))
            .chain((1..=num_items).map(|i| format!("x{i}")))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for p in &self.points {
            let row: Vec<String> = p
                .objectives
                .iter()
                .map(u32::to_string)
                .chain(p.solution.iter().map(|&b| (b as u8).to_string()))
                .collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, num_objectives: usize, num_items: usize) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv(num_objectives, num_items)).map_err(|e| Error::io(path, e))
    }

    /// Builds a frontier from arbitrary (vector, solution) pairs, keeping the
    /// nondominated vectors and the first solution seen for each.
    pub fn from_candidates(candidates: Vec<(Vec<u32>, Vec<bool>)>) -> Frontier {
        let vectors: Vec<Vec<u32>> = candidates.iter().map(|(v, _)| v.clone()).collect();
        let (survivors, comparisons) = filter_nondominated(&vectors);
        let keep: std::collections::BTreeSet<Vec<u32>> = survivors.into_iter().collect();
        let mut seen = std::collections::BTreeSet::new();
        let mut points: Vec<FrontierPoint> = candidates
            .into_iter()
            .filter(|(v, _)| keep.contains(v) && seen.insert(v.clone()))
            .map(|(objectives, solution)| FrontierPoint {
                objectives,
                solution,
            })
            .collect();
        points.sort_by(|a, b| a.objectives.cmp(&b.objectives));
        Frontier {
            points,
            comparison_count: comparisons,
        }
    }
}

/// Scratch buffers for merging parent label lists at one node.
struct Merger {
    k: usize,
    cand: Vec<u32>,
    source: Vec<u32>,
    order: Vec<u32>,
    survivors: Vec<u32>,
    survivor_source: Vec<u32>,
}

impl Merger {
    fn new(k: usize) -> Self {
        Merger {
            k,
            cand: Vec::new(),
            source: Vec::new(),
            order: Vec::new(),
            survivors: Vec::new(),
            survivor_source: Vec::new(),
        }
    }

    fn clear(&mut self) {
        self.cand.clear();
        self.source.clear();
    }

    fn push_shifted(&mut self, labels: &[u32], shift: &[u32], source: u32) {
        for v in labels.chunks_exact(self.k) {
            self.cand.extend(v.iter().zip(shift).map(|(a, b)| a + b));
            self.source.push(source);
        }
    }

    /// Filters the candidates. Each source list must be internally
    /// nondominated, so survivors are only checked against other sources.
    fn filter(&mut self, comparisons: &mut u64) {
        let k = self.k;
        let n = self.source.len();
        self.survivors.clear();
        self.survivor_source.clear();
        self.order.clear();
        self.order.extend(0..n as u32);
        let cand = &self.cand;
        let source = &self.source;
        self.order.sort_by(|&a, &b| {
            let (a, b) = (a as usize, b as usize);
            lex_desc(&cand[a * k..(a + 1) * k], &cand[b * k..(b + 1) * k])
                .then(source[a].cmp(&source[b]))
        });
        let mut prev: Option<usize> = None;
        for &i in &self.order {
            let i = i as usize;
            let v = &cand[i * k..(i + 1) * k];
            if let Some(p) = prev {
                if cand[p * k..(p + 1) * k] == *v {
                    continue;
                }
            }
            prev = Some(i);
            let src = source[i];
            let dominated = if k == 2 {
                // staircase: the last survivor has the largest second value
                let m = self.survivor_source.len();
                if m == 0 {
                    false
                } else {
                    *comparisons += 1;
                    let last = &self.survivors[(m - 1) * 2..m * 2];
                    last[1] >= v[1]
                }
            } else {
                // s precedes v lexicographically and differs, so s[0] >= v[0]
                // already holds and >= on the rest suffices
                let covers: fn(&[u32], &[u32]) -> bool = match k {
                    3 => |s, v| s[1] >= v[1] && s[2] >= v[2],
                    4 => |s, v| s[1] >= v[1] && s[2] >= v[2] && s[3] >= v[3],
                    _ => |s, v| s[1..].iter().zip(&v[1..]).all(|(a, b)| a >= b),
                };
                let mut hit = false;
                for (s, &s_src) in self.survivors.chunks_exact(k).zip(&self.survivor_source) {
                    if s_src == src {
                        continue;
                    }
                    *comparisons += 1;
                    if covers(s, v) {
                        hit = true;
                        break;
                    }
                }
                hit
            };
            if !dominated {
                self.survivors.extend_from_slice(v);
                self.survivor_source.push(src);
            }
        }
    }
}

/// Forward multicriteria label propagation over a connected diagram.
///
/// Returns the frontier at the terminal, with one backtracked solution per
/// vector, and the label sets of every node.
pub fn enumerate_frontier(bdd: &Bdd) -> Result<(Frontier, NodeLabels)> {
    let conn = bdd.connectivity();
    if !conn.connected {
        return Err(Error::Contract(format!(
            "diagram is disconnected after layer {}",
            conn.last_connected_layer
        )));
    }
    let k = bdd.instance().num_objectives();
    let ids = bdd.id_bound();
    let mut offsets = vec![0usize; ids + 1];
    let mut values: Vec<u32> = Vec::new();
    let mut comparisons = 0u64;
    let mut merger = Merger::new(k);
    let mut shift = vec![0u32; k];
    let mut terminal_sources: Vec<u32> = Vec::new();

    let mut next_id = 0usize;
    for id in bdd.node_ids() {
        // absent ids before this one get empty ranges
        while next_id < id as usize {
            offsets[next_id + 1] = values.len();
            next_id += 1;
        }
        if id == bdd.root() {
            values.extend(std::iter::repeat_n(0, k));
        } else {
            merger.clear();
            let parents = bdd.parents(id);
            let mut sources = 0;
            for (a, arc) in parents.iter().enumerate() {
                let p = arc.parent as usize;
                let lab = &values[offsets[p]..offsets[p + 1]];
                if lab.is_empty() {
                    continue;
                }
                sources += 1;
                let layer = bdd.node(arc.parent).layer;
                for (kk, s) in shift.iter_mut().enumerate() {
                    *s = bdd.arc_value(layer, arc.domain, kk);
                }
                merger.push_shifted(lab, &shift, a as u32);
            }
            if sources == 1 {
                values.extend_from_slice(&merger.cand);
                if id == bdd.terminal() {
                    terminal_sources.extend_from_slice(&merger.source);
                }
            } else if sources > 1 {
                merger.filter(&mut comparisons);
                values.extend_from_slice(&merger.survivors);
                if id == bdd.terminal() {
                    terminal_sources.extend_from_slice(&merger.survivor_source);
                }
            }
        }
        offsets[id as usize + 1] = values.len();
        next_id = id as usize + 1;
    }
    while next_id < ids {
        offsets[next_id + 1] = values.len();
        next_id += 1;
    }

    let labels = NodeLabels { k, offsets, values };
    let mut points: Vec<FrontierPoint> = labels
        .labels(bdd.terminal())
        .zip(&terminal_sources)
        .map(|(v, &src)| {
            let arc = bdd.parents(bdd.terminal())[src as usize];
            let mut solution = vec![false; bdd.instance().num_items()];
            solution[bdd.num_layers() - 2] = arc.domain == 1;
            let prefix: Vec<u32> = (0..k)
                .map(|kk| v[kk] - bdd.arc_value(bdd.node(arc.parent).layer, arc.domain, kk))
                .collect();
            backtrack(bdd, &labels, arc.parent, prefix, &mut solution);
            FrontierPoint {
                objectives: v.to_vec(),
                solution,
            }
        })
        .collect();
    points.sort_by(|a, b| a.objectives.cmp(&b.objectives));
    Ok((
        Frontier {
            points,
            comparison_count: comparisons,
        },
        labels,
    ))
}

/// Walks from `node` (holding label `v`) back to the root, filling in the
/// decisions of one realizing path.
fn backtrack(bdd: &Bdd, labels: &NodeLabels, mut node: NodeId, mut v: Vec<u32>, solution: &mut [bool]) {
    let k = v.len();
    let mut prev = vec![0u32; k];
    while node != bdd.root() {
        let mut found = false;
        for arc in bdd.parents(node) {
            let layer = bdd.node(arc.parent).layer;
            let ok = (0..k).all(|kk| {
                let a = bdd.arc_value(layer, arc.domain, kk);
                match v[kk].checked_sub(a) {
                    Some(x) => {
                        prev[kk] = x;
                        true
                    }
                    None => false,
                }
            });
            if ok && labels.find(arc.parent, &prev).is_some() {
                solution[layer as usize - 1] = arc.domain == 1;
                node = arc.parent;
                std::mem::swap(&mut v, &mut prev);
                found = true;
                break;
            }
        }
        assert!(found, "label of node {node} has no predecessor");
    }
}

/// Number of frontier-realizing root-terminal paths through every node
/// (indexed by node id). A node is a Pareto node iff its count is positive.
///
/// Counts saturate at `u64::MAX`.
pub fn pareto_path_counts(bdd: &Bdd, labels: &NodeLabels, frontier: &Frontier) -> Result<Vec<u64>> {
    let k = labels.num_objectives();
    if labels.id_bound() != bdd.id_bound() || k != bdd.instance().num_objectives() {
        return Err(Error::Contract("labels were computed on another diagram".into()));
    }
    let term = bdd.terminal();
    let fset = frontier.vector_set();
    if labels.count(term) != fset.len() || labels.labels(term).any(|v| !fset.contains(v)) {
        return Err(Error::Contract(
            "terminal labels do not match the frontier".into(),
        ));
    }
    let total = labels.total();
    let mut prefix = vec![0u64; total];
    let mut suffix = vec![0u64; total];
    let mut shift = vec![0u32; k];

    // prefix counts: number of root paths reaching each (node, label)
    prefix[labels.base(bdd.root())] = 1;
    for id in bdd.node_ids() {
        if id == bdd.root() {
            continue;
        }
        let base = labels.base(id);
        for arc in bdd.parents(id) {
            let layer = bdd.node(arc.parent).layer;
            for (kk, sh) in shift.iter_mut().enumerate() {
                *sh = bdd.arc_value(layer, arc.domain, kk);
            }
            let pbase = labels.base(arc.parent);
            match_shifted(labels.flat(id), labels.flat(arc.parent), &shift, |i, j| {
                prefix[base + i] = prefix[base + i].saturating_add(prefix[pbase + j]);
            });
        }
    }

    // suffix counts restricted to extensions that end on the frontier
    let tbase = labels.base(term);
    for i in 0..labels.count(term) {
        suffix[tbase + i] = 1;
    }
    let order: Vec<NodeId> = bdd.node_ids().collect();
    for &id in order.iter().rev() {
        if id == term {
            continue;
        }
        let node = bdd.node(id);
        let base = labels.base(id);
        for (d, child) in node.children.iter().enumerate() {
            let Some(c) = *child else { continue };
            for (kk, sh) in shift.iter_mut().enumerate() {
                *sh = bdd.arc_value(node.layer, d as u8, kk);
            }
            let cbase = labels.base(c);
            match_shifted(labels.flat(c), labels.flat(id), &shift, |i, j| {
                suffix[base + j] = suffix[base + j].saturating_add(suffix[cbase + i]);
            });
        }
    }

    let mut counts = vec![0u64; bdd.id_bound()];
    for id in bdd.node_ids() {
        let base = labels.base(id);
        let mut acc = 0u64;
        for i in 0..labels.count(id) {
            acc = acc.saturating_add(prefix[base + i].saturating_mul(suffix[base + i]));
        }
        counts[id as usize] = acc;
    }
    Ok(counts)
}

/// Calls `f(i, j)` for every label `i` of `child` equal to label `j` of
/// `parent` plus `shift`. Both lists are in descending lexicographic order,
/// which adding a constant vector preserves.
fn match_shifted(child: &[u32], parent: &[u32], shift: &[u32], mut f: impl FnMut(usize, usize)) {
    let k = shift.len();
    let (nc, np) = (child.len() / k, parent.len() / k);
    let (mut i, mut j) = (0, 0);
    while i < nc && j < np {
        let c = &child[i * k..(i + 1) * k];
        let p = &parent[j * k..(j + 1) * k];
        let mut ord = Ordering::Equal;
        for kk in 0..k {
            ord = (p[kk] + shift[kk]).cmp(&c[kk]);
            if ord != Ordering::Equal {
                break;
            }
        }
        // descending order: the larger vector comes first
        match ord {
            Ordering::Greater => j += 1,
            Ordering::Less => i += 1,
            Ordering::Equal => {
                f(i, j);
                i += 1;
                j += 1;
            }
        }
    }
}

/// Pareto nodes of `bdd` plus root and terminal.
pub fn mark_pareto_nodes(bdd: &Bdd, labels: &NodeLabels, frontier: &Frontier) -> Result<KeepSet> {
    let counts = pareto_path_counts(bdd, labels, frontier)?;
    Ok(keepset_from_counts(bdd, &counts))
}

pub fn keepset_from_counts(bdd: &Bdd, counts: &[u64]) -> KeepSet {
    KeepSet::from_ids(bdd, bdd.node_ids().filter(|&id| counts[id as usize] > 0))
}

/// Share of the diagram's nodes that are marked.
pub fn pareto_node_fraction(bdd: &Bdd, marks: &KeepSet) -> f64 {
    let n = bdd.node_count();
    if n == 0 {
        return 0.0;
    }
    let kept = bdd.node_ids().filter(|&id| marks.contains(id)).count();
    kept as f64 / n as f64
}
