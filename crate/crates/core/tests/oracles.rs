mod common;

use std::collections::BTreeSet;

use common::*;
use morbdd::bdd::{compile_exact, NodeId};
use morbdd::instance::generate_instance;
use morbdd::oracle::brute_force_frontier;
use morbdd::pareto::{enumerate_frontier, mark_pareto_nodes};

/// Distinct prefix weights at or under capacity, per layer.
fn prefix_state_counts(inst: &morbdd::instance::Instance) -> Vec<usize> {
    let mut states: BTreeSet<u32> = BTreeSet::from([0]);
    let mut out = vec![1];
    for &w in &inst.weights()[..inst.num_items() - 1] {
        let next: BTreeSet<u32> = states
            .iter()
            .flat_map(|&s| [Some(s), (s + w <= inst.capacity()).then_some(s + w)])
            .flatten()
            .collect();
        out.push(next.len());
        states = next;
    }
    out
}

fn check_frozen(k: usize, n: usize, seed: u64, size: usize, first: &[u32], last: &[u32], marks: usize) {
    let inst = generate_instance(k, n, seed);
    let bdd = compile_exact(&inst).unwrap();
    let (frontier, labels) = enumerate_frontier(&bdd).unwrap();
    let set = frontier.vector_set();
    assert_eq!(set.len(), size);
    assert_eq!(set.iter().next().unwrap().as_slice(), first);
    assert_eq!(set.iter().last().unwrap().as_slice(), last);
    assert_eq!(mark_pareto_nodes(&bdd, &labels, &frontier).unwrap().len(), marks);
}

// values computed once with the subset oracle in common/
#[test]
fn frozen_frontiers() {
    check_frozen(2, 12, 2024, 10, &[3269, 4444], &[4235, 2957], 82);
    check_frozen(3, 10, 7, 5, &[2395, 3095, 3570], &[3514, 3645, 3478], 36);
    let inst = generate_instance(2, 12, 2024);
    assert_eq!(all_paths(&compile_exact(&inst).unwrap()).len(), 2048);
}

#[test]
fn frontier_matches_subset_oracle() {
    for seed in 0..12u64 {
        let k = 2 + (seed % 3) as usize;
        let n = 6 + (seed % 7) as usize;
        let inst = generate_instance(k, n, seed);
        let bdd = compile_exact(&inst).unwrap();
        let (frontier, _) = enumerate_frontier(&bdd).unwrap();
        assert_eq!(frontier.vector_set(), brute_frontier(&inst), "seed {seed}");
        assert_eq!(brute_force_frontier(&inst).unwrap().vector_set(), brute_frontier(&inst));
        for p in &frontier.points {
            assert!(inst.is_feasible(&p.solution));
            assert_eq!(inst.evaluate(&p.solution), p.objectives);
        }
    }
}

#[test]
fn node_count_matches_prefix_states() {
    for seed in 0..10u64 {
        let inst = generate_instance(2, 5 + seed as usize, seed);
        let bdd = compile_exact(&inst).unwrap();
        let widths: Vec<usize> = bdd.stats().per_layer_widths;
        let mut expected = prefix_state_counts(&inst);
        expected.push(1);
        assert_eq!(widths, expected, "seed {seed}");
    }
}

#[test]
fn marks_match_exhaustive_paths() {
    for seed in 100..110u64 {
        let inst = generate_instance(2 + (seed % 2) as usize, 8 + (seed % 4) as usize, seed);
        let bdd = compile_exact(&inst).unwrap();
        let (frontier, labels) = enumerate_frontier(&bdd).unwrap();
        let marked = mark_pareto_nodes(&bdd, &labels, &frontier).unwrap();
        let ours: BTreeSet<NodeId> = bdd.node_ids().filter(|&id| marked.contains(id)).collect();
        assert_eq!(ours, exhaustive_marks(&bdd, &brute_frontier(&inst)), "seed {seed}");
    }
}

#[test]
fn pareto_subdiagram_keeps_frontier() {
    for seed in 200..208u64 {
        let inst = generate_instance(3, 14, seed);
        let bdd = compile_exact(&inst).unwrap();
        let (frontier, labels) = enumerate_frontier(&bdd).unwrap();
        let marked = mark_pareto_nodes(&bdd, &labels, &frontier).unwrap();
        let sub = bdd.induced(&marked).unwrap();
        assert!(sub.node_count() <= bdd.node_count());
        assert_eq!(enumerate_frontier(&sub).unwrap().0.vector_set(), frontier.vector_set());
    }
}
