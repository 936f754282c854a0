mod common;

use std::collections::BTreeSet;

use common::*;
use morbdd::bdd::compile_exact;
use morbdd::features::FeatureVector;
use morbdd::instance::generate_instance;
use morbdd::metrics::{hypervolume_exact, normalized_hypervolume, HvMethod};
use morbdd::pareto::{enumerate_frontier, filter_nondominated};
use morbdd::sparsifier::{threshold_keepset, NodeScorer, NodeScores};
use morbdd::stitch::{deploy, run_exact, run_restricted, DeployOptions, Stitcher};
use proptest::prelude::*;

fn points(k: usize, max: usize) -> impl Strategy<Value = Vec<Vec<u32>>> {
    prop::collection::vec(prop::collection::vec(1u32..50, k), 1..max)
}

fn as_f64(vs: &[Vec<u32>]) -> Vec<Vec<f64>> {
    vs.iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect()
}

/// Deterministic pseudo-scores from a few features.
struct HashScorer(u64);

impl NodeScorer<f64> for HashScorer {
    fn score(&self, f: &FeatureVector<f64>) -> f64 {
        let h = f
            .as_slice()
            .iter()
            .fold(self.0, |acc, x| (acc ^ x.to_bits()).wrapping_mul(0x100_0000_01b3));
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    fn layout_version(&self) -> u32 {
        morbdd::features::LAYOUT_VERSION
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_is_sound_and_complete(vs in points(3, 40)) {
        let (out, _) = filter_nondominated(&vs);
        let out_set: BTreeSet<Vec<u32>> = out.iter().cloned().collect();
        prop_assert_eq!(&out_set, &nondominated(vs.clone()));
        prop_assert_eq!(out_set.len(), out.len());
        let (again, _) = filter_nondominated(&out);
        prop_assert_eq!(again.into_iter().collect::<BTreeSet<_>>(), out_set);
    }

    #[test]
    fn hypervolume_grows_with_points(vs in points(3, 20), extra in prop::collection::vec(1u32..50, 3)) {
        let reference = [0.0; 3];
        let before = hypervolume_exact(&as_f64(&vs), &reference).unwrap();
        let mut more = vs.clone();
        more.push(extra);
        let after = hypervolume_exact(&as_f64(&more), &reference).unwrap();
        prop_assert!(after >= before);
    }

    #[test]
    fn dominated_points_leave_hypervolume_unchanged(vs in points(2, 20), pick in 0usize..20, shrink in 0u32..5) {
        let reference = [0.0; 2];
        let base = &vs[pick % vs.len()];
        let weaker: Vec<u32> = base.iter().map(|&x| x.saturating_sub(shrink)).collect();
        let before = hypervolume_exact(&as_f64(&vs), &reference).unwrap();
        let mut more = vs.clone();
        more.push(weaker);
        prop_assert_eq!(hypervolume_exact(&as_f64(&more), &reference).unwrap(), before);
        prop_assert_eq!(nondominated(more), nondominated(vs));
    }

    #[test]
    fn keepset_shrinks_as_threshold_rises(seed in 0u64..1000, t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let case = stitch_case(seed, 40, 40);
        let low = threshold_keepset(&case.bdd, &case.scores, lo);
        let high = threshold_keepset(&case.bdd, &case.scores, hi);
        prop_assert!(high.is_subset(&low));
        prop_assert_eq!(threshold_keepset(&case.bdd, &case.scores, 0.0).len(), case.bdd.node_count());
        prop_assert_eq!(threshold_keepset(&case.bdd, &case.scores, 1.5).len(), 2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn restricted_methods_are_sound(seed in 0u64..10_000, k in 2usize..4, n in 5usize..13, beta in 1u32..101, tau in 0.0f64..1.0) {
        let inst = generate_instance(k, n, seed);
        let exact = run_exact(&inst, usize::MAX).unwrap();
        let truth: Vec<Vec<u32>> = exact.frontier.vector_set().into_iter().collect();
        let mut runs = vec![run_restricted(&inst, beta).unwrap()];
        let mut stitchers = vec![Stitcher::MinResistance(2), Stitcher::MinResistance(1), Stitcher::None];
        // the built-in solver is meant for small diagrams
        if exact.report.inc <= 80 {
            stitchers.push(Stitcher::Mip);
        }
        for stitcher in stitchers {
            let opts = DeployOptions { stitcher, ..DeployOptions::default() };
            runs.push(deploy(&inst, &HashScorer(seed), tau, &opts).unwrap());
        }
        for run in &runs {
            for p in &run.frontier.points {
                prop_assert!(inst.is_feasible(&p.solution));
                prop_assert_eq!(inst.evaluate(&p.solution), p.objectives.clone());
                prop_assert!(!truth.iter().any(|t| strictly_dominates(&p.objectives, t)));
            }
            let hv = normalized_hypervolume(&run.frontier, &exact.frontier, &vec![0.0; k], HvMethod::Exact).unwrap();
            prop_assert!((0.0..=1.0).contains(&hv));
        }
        prop_assert_eq!(runs[0].frontier.vector_set().is_empty(), false);
        if beta == 100 {
            prop_assert_eq!(runs[0].frontier.vector_set(), exact.frontier.vector_set());
        }
    }
}

#[test]
fn zero_threshold_recovers_exact_frontier() {
    for seed in 0..6u64 {
        let inst = generate_instance(3, 10, seed);
        let bdd = compile_exact(&inst).unwrap();
        let exact = enumerate_frontier(&bdd).unwrap().0;
        let run = deploy(&inst, &HashScorer(seed), 0.0, &DeployOptions::default()).unwrap();
        assert_eq!(run.frontier.vector_set(), exact.vector_set());
        assert_eq!(run.report.rnc, bdd.node_count());
        let scores: NodeScores<f64> =
            morbdd::sparsifier::score_bdd(&HashScorer(seed), &inst, &bdd).unwrap();
        assert_eq!(scores.len(), bdd.node_count() - 2);
    }
}
