mod common;

use common::*;
use morbdd::bdd::{compile_exact, Bdd, KeepSet};
use morbdd::instance::Instance;
use morbdd::sparsifier::NodeScores;
use morbdd::stitch::{
    build_stitch_model, export_stitch_model, min_resistance_stitch, parse_lp_summary, solve_stitch_exact,
    stitch, RowKind, Stitcher,
};

/// root -> one layer-2 node -> two layer-3 nodes -> terminal; six arcs.
fn five_node() -> Bdd {
    let inst = Instance::new(1, vec![2, 1, 1], vec![vec![1, 1, 1], vec![1, 1, 1]]).unwrap();
    let bdd = compile_exact(&inst).unwrap();
    assert_eq!(bdd.stats().per_layer_widths, vec![1, 1, 2, 1]);
    bdd
}

/// Layer-3 nodes ordered by state: (state 0, state 1).
fn layer3(bdd: &Bdd) -> (u32, u32) {
    let mut l = bdd.layer(3).to_vec();
    l.sort_by_key(|&id| bdd.node(id).state);
    (l[0], l[1])
}

fn resist(bdd: &Bdd, a: f64, b: f64) -> Vec<Option<f64>> {
    let (s0, s1) = layer3(bdd);
    let mut r = vec![None; bdd.id_bound()];
    for id in bdd.node_ids() {
        if id != bdd.terminal() {
            r[id as usize] = Some(0.0);
        }
    }
    r[s0 as usize] = Some(a);
    r[s1 as usize] = Some(b);
    r
}

#[test]
fn five_node_row_counts() {
    let bdd = five_node();
    assert_eq!(bdd.arc_count(), 6);
    let model = build_stitch_model(&bdd, &resist(&bdd, 0.3, 0.1)).unwrap();
    // 4 node variables and 6 arc variables
    assert_eq!(model.num_variables(), 10);
    assert_eq!(model.count_rows(RowKind::OutArc), 4);
    assert_eq!(model.count_rows(RowKind::InArcUpper), 3);
    assert_eq!(model.count_rows(RowKind::InArcLower), 3);
    assert_eq!(model.count_rows(RowKind::FixOne), 2);
    // three arcs into the terminal with one row each, three inner arcs with three
    assert_eq!(model.count_rows(RowKind::Link), 12);
    assert_eq!(model.num_constraints(), 24);
}

#[test]
fn lp_round_trip_with_three_fixed() {
    let bdd = five_node();
    let model = build_stitch_model(&bdd, &resist(&bdd, 0.3, 0.0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stitch.lp");
    export_stitch_model(&model, &path).unwrap();
    let summary = parse_lp_summary(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(summary.fixed_to_one, 3);
    assert_eq!(summary.objective_terms, 1);
    assert_eq!(summary.variables, model.num_variables());
    assert_eq!(summary.constraints, model.num_constraints());
}

#[test]
fn min_resistance_takes_cheaper_path() {
    let bdd = five_node();
    let (s0, s1) = layer3(&bdd);
    let l2 = bdd.layer(2)[0];
    let tau = 0.5;
    let mut raw = vec![None; bdd.id_bound()];
    raw[l2 as usize] = Some(0.9);
    raw[s0 as usize] = Some(0.2);
    raw[s1 as usize] = Some(0.4);
    let scores = NodeScores::from_vec(raw);
    let keep = KeepSet::from_ids(&bdd, [l2]);
    let step = min_resistance_stitch(&bdd, &scores, &keep, tau, 2).unwrap();
    assert_eq!(step.added, vec![s1]);
    assert!(bdd.induced(&step.keep).unwrap().is_connected());

    let out = stitch(&bdd, &scores, &keep, tau, Stitcher::Mip).unwrap();
    assert!((out.added_resistance - 0.1).abs() < 1e-12);
    assert!(out.keep.contains(s1) && !out.keep.contains(s0));
}

#[test]
fn branch_and_bound_matches_subset_search() {
    for seed in 0..8u64 {
        let case = stitch_case(seed, 30, 16);
        let res = case.resistance_vec();
        let mut fixed = morbdd::sparsifier::resistances(&case.bdd, &case.scores, case.tau);
        for id in case.keep.iter() {
            fixed[id as usize] = Some(0.0);
        }
        let model = build_stitch_model(&case.bdd, &fixed).unwrap();
        let sol = solve_stitch_exact(&model, &case.bdd).unwrap();
        let (best, _) = subset_stitch_optimum(&case.bdd, &case.keep, &res);
        assert_eq!(sol.objective, best, "seed {seed}");
        let chosen = case.bdd.node_ids().filter(|&id| sol.keep.contains(id)).collect();
        assert!(connected_selection(&case.bdd, &chosen));
        assert!(case.keep.is_subset(&sol.keep));
    }
}
