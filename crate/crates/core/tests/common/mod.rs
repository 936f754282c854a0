//! Reference implementations that share no code with the library beyond the
//! diagram accessors.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use morbdd::bdd::{Bdd, KeepSet, NodeId};
use morbdd::instance::Instance;

pub fn weakly_dominates(a: &[u32], b: &[u32]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y)
}

pub fn strictly_dominates(a: &[u32], b: &[u32]) -> bool {
    weakly_dominates(a, b) && a != b
}

/// Quadratic nondominated filter over distinct vectors.
pub fn nondominated(vs: impl IntoIterator<Item = Vec<u32>>) -> BTreeSet<Vec<u32>> {
    let all: BTreeSet<Vec<u32>> = vs.into_iter().collect();
    all.iter()
        .filter(|v| !all.iter().any(|w| strictly_dominates(w, v)))
        .cloned()
        .collect()
}

/// Objective vectors of every feasible item subset.
pub fn feasible_vectors(inst: &Instance) -> Vec<Vec<u32>> {
    let n = inst.num_items();
    assert!(n <= 22, "too many items for subset enumeration");
    let mut out = Vec::new();
    for mask in 0u64..(1 << n) {
        let mut w = 0u64;
        let mut v = vec![0u32; inst.num_objectives()];
        for i in 0..n {
            if mask >> i & 1 == 1 {
                w += inst.weights()[i] as u64;
                for (k, p) in inst.profits().iter().enumerate() {
                    v[k] += p[i];
                }
            }
        }
        if w <= inst.capacity() as u64 {
            out.push(v);
        }
    }
    out
}

pub fn brute_frontier(inst: &Instance) -> BTreeSet<Vec<u32>> {
    nondominated(feasible_vectors(inst))
}

/// Every root-terminal path of `bdd` as (nodes, objective vector).
pub fn all_paths(bdd: &Bdd) -> Vec<(Vec<NodeId>, Vec<u32>)> {
    let inst = bdd.instance();
    let mut out = Vec::new();
    let mut stack = vec![(vec![bdd.root()], vec![0u32; inst.num_objectives()])];
    while let Some((path, v)) = stack.pop() {
        let id = *path.last().unwrap();
        if id == bdd.terminal() {
            out.push((path, v));
            continue;
        }
        let node = bdd.node(id);
        let item = node.layer as usize - 1;
        for (d, child) in node.children.iter().enumerate() {
            if let Some(c) = *child {
                let mut p = path.clone();
                p.push(c);
                let mut w = v.clone();
                if d == 1 {
                    for (k, prof) in inst.profits().iter().enumerate() {
                        w[k] += prof[item];
                    }
                }
                stack.push((p, w));
            }
        }
    }
    out
}

/// Nodes lying on some path whose vector is in `frontier`.
pub fn exhaustive_marks(bdd: &Bdd, frontier: &BTreeSet<Vec<u32>>) -> BTreeSet<NodeId> {
    all_paths(bdd)
        .into_iter()
        .filter(|(_, v)| frontier.contains(v))
        .flat_map(|(p, _)| p)
        .collect()
}

/// Every selected node lies on a root-terminal path through selected nodes.
pub fn connected_selection(bdd: &Bdd, selected: &BTreeSet<NodeId>) -> bool {
    if !selected.contains(&bdd.root()) || !selected.contains(&bdd.terminal()) {
        return false;
    }
    let mut fwd: BTreeSet<NodeId> = BTreeSet::new();
    fwd.insert(bdd.root());
    let mut frontier = vec![bdd.root()];
    while let Some(id) = frontier.pop() {
        for c in bdd.node(id).children.iter().flatten() {
            if selected.contains(c) && fwd.insert(*c) {
                frontier.push(*c);
            }
        }
    }
    // backward closure via a child map
    let mut parents: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for &id in selected {
        if id == bdd.terminal() {
            continue;
        }
        for c in bdd.node(id).children.iter().flatten() {
            parents.entry(*c).or_default().push(id);
        }
    }
    let mut bwd: BTreeSet<NodeId> = BTreeSet::new();
    bwd.insert(bdd.terminal());
    let mut frontier = vec![bdd.terminal()];
    while let Some(id) = frontier.pop() {
        for &p in parents.get(&id).map(Vec::as_slice).unwrap_or(&[]) {
            if bwd.insert(p) {
                frontier.push(p);
            }
        }
    }
    selected.iter().all(|id| fwd.contains(id) && bwd.contains(id))
}

/// Cheapest superset of `kept` that is a connected selection, searching all
/// subsets of the remaining nodes. Returns (cost, selection).
pub fn subset_stitch_optimum(bdd: &Bdd, kept: &KeepSet, resistance: &[f64]) -> (f64, BTreeSet<NodeId>) {
    let base: BTreeSet<NodeId> = bdd.node_ids().filter(|&id| kept.contains(id)).collect();
    let free: Vec<NodeId> = bdd.node_ids().filter(|&id| !kept.contains(id)).collect();
    assert!(free.len() <= 22, "too many free nodes for subset search");
    let mut best: Option<(f64, BTreeSet<NodeId>)> = None;
    for mask in 0u64..(1 << free.len()) {
        let cost: f64 = (0..free.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| resistance[free[i] as usize])
            .sum();
        if best.as_ref().is_some_and(|(b, _)| cost >= *b) {
            continue;
        }
        let mut sel = base.clone();
        sel.extend((0..free.len()).filter(|i| mask >> i & 1 == 1).map(|i| free[i]));
        if connected_selection(bdd, &sel) {
            best = Some((cost, sel));
        }
    }
    best.expect("the full diagram is always a connected selection")
}

/// Seeded instance with a small item count and random K.
pub fn small_instance(seed: u64, k: usize, n: usize) -> Instance {
    morbdd::instance::generate_instance(k, n, seed)
}

/// A small exact diagram with seeded scores whose threshold keep-set is
/// disconnected.
pub struct StitchCase {
    pub bdd: Bdd,
    pub scores: morbdd::sparsifier::NodeScores<f64>,
    pub keep: KeepSet,
    pub tau: f64,
}

impl StitchCase {
    pub fn resistance_vec(&self) -> Vec<f64> {
        morbdd::sparsifier::resistances(&self.bdd, &self.scores, self.tau)
            .into_iter()
            .map(|r| r.unwrap_or(0.0))
            .collect()
    }
}

/// Scores are multiples of 1/64 so resistance sums are exact.
pub fn stitch_case(seed: u64, max_nodes: usize, max_free: usize) -> StitchCase {
    use rand::{Rng, SeedableRng};
    let tau = 0.5;
    for attempt in 0u64.. {
        let s = morbdd::instance::derive_seed(seed, &[attempt]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s);
        let n = rng.gen_range(4..=7);
        let inst = morbdd::instance::generate_instance(2, n, s);
        let bdd = morbdd::bdd::compile_exact(&inst).unwrap();
        if bdd.node_count() > max_nodes {
            continue;
        }
        let raw: Vec<Option<f64>> = (0..bdd.id_bound())
            .map(|i| {
                let id = i as NodeId;
                (bdd.contains(id) && bdd.is_interior(id)).then(|| rng.gen_range(0..=64) as f64 / 64.0)
            })
            .collect();
        let scores = morbdd::sparsifier::NodeScores::from_vec(raw);
        let keep = morbdd::sparsifier::threshold_keepset(&bdd, &scores, tau);
        let free = bdd.node_count() - bdd.node_ids().filter(|&id| keep.contains(id)).count();
        if free > max_free || bdd.induced(&keep).unwrap().is_connected() {
            continue;
        }
        return StitchCase { bdd, scores, keep, tau };
    }
    unreachable!()
}

/// Cheapest root-terminal path, pricing only nodes outside `kept`.
pub fn cheapest_connecting_path(bdd: &Bdd, kept: &KeepSet, resistance: &[f64]) -> f64 {
    let mut best: BTreeMap<NodeId, f64> = BTreeMap::new();
    best.insert(bdd.root(), 0.0);
    for layer in bdd.layers() {
        for &id in layer {
            let Some(&c) = best.get(&id) else { continue };
            for &child in bdd.node(id).children.iter().flatten() {
                let price = if kept.contains(child) { 0.0 } else { resistance[child as usize] };
                let e = best.entry(child).or_insert(f64::INFINITY);
                *e = e.min(c + price);
            }
        }
    }
    best[&bdd.terminal()]
}
