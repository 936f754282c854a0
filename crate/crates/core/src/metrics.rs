//! Frontier quality and diagram-size metrics.
//!
//! Hypervolumes are computed for maximization against a reference point that
//! every vector weakly dominates; the default reference is the origin.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pareto::Frontier;
use crate::scalar::Scalar;
use crate::stitch::RunOutput;

/// Samples drawn per Monte Carlo block; each block has its own RNG stream.
const MC_BLOCK: u64 = 4096;
/// Upper bound on Monte Carlo samples.
pub const MC_MAX_SAMPLES: u64 = 50_000_000;

/// Percentage of the exact frontier's vectors present in `approx`.
pub fn cardinality(approx: &Frontier, exact: &Frontier) -> Result<f64> {
    if exact.is_empty() {
        return Err(Error::Contract("exact frontier is empty".into()));
    }
    let truth = exact.vector_set();
    let found = approx.vectors().filter(|v| truth.contains(*v)).count();
    Ok(100.0 * found as f64 / truth.len() as f64)
}

/// Frontier vectors as scalar points.
pub fn frontier_points<F: Scalar>(frontier: &Frontier) -> Vec<Vec<F>> {
    frontier
        .vectors()
        .map(|v| v.iter().map(|&x| F::of(x as f64)).collect())
        .collect()
}

fn check_points<F: Scalar>(points: &[Vec<F>], reference: &[F]) -> Result<()> {
    for p in points {
        if p.len() != reference.len() {
            return Err(Error::Contract(format!(
                "point has {} objectives, reference has {}",
                p.len(),
                reference.len()
            )));
        }
        if p.iter().zip(reference).any(|(a, r)| a < r) {
            return Err(Error::Contract("a point lies below the reference".into()));
        }
    }
    Ok(())
}

/// Exact dominated hypervolume by dimension sweep, for up to four objectives.
pub fn hypervolume_exact<F: Scalar>(points: &[Vec<F>], reference: &[F]) -> Result<F> {
    if reference.len() > 4 {
        return Err(Error::Unsupported(format!(
            "exact hypervolume supports at most 4 objectives, got {}",
            reference.len()
        )));
    }
    check_points(points, reference)?;
    let shifted: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(reference).map(|(a, r)| a.as_f64() - r.as_f64()).collect())
        .collect();
    Ok(F::of(sweep(shifted, reference.len())))
}

/// Hypervolume of points (already shifted to a zero reference) in the first `k` coordinates.
fn sweep(mut pts: Vec<Vec<f64>>, k: usize) -> f64 {
    if pts.is_empty() || k == 0 {
        return 0.0;
    }
    if k == 1 {
        return pts.iter().map(|p| p[0]).fold(0.0, f64::max);
    }
    let last = k - 1;
    pts.sort_by(|a, b| b[last].total_cmp(&a[last]));
    if k == 2 {
        // staircase: walk down the second coordinate, tracking the widest first coordinate
        let mut vol = 0.0;
        let mut width = 0.0f64;
        for i in 0..pts.len() {
            width = width.max(pts[i][0]);
            let below = pts.get(i + 1).map_or(0.0, |p| p[1]);
            vol += width * (pts[i][1] - below);
        }
        return vol;
    }
    let mut vol = 0.0;
    for i in 0..pts.len() {
        let below = pts.get(i + 1).map_or(0.0, |p| p[last]);
        let height = pts[i][last] - below;
        if height > 0.0 {
            vol += height * sweep(pts[..=i].to_vec(), last);
        }
    }
    vol
}

/// Monte Carlo hypervolume in the bounding box `[reference, max(points)]`.
///
/// The sample count is `ceil(3 ln(2/delta) / (epsilon^2 p))`, where `p` is
/// the largest single-point box over the bounding box, a lower bound on the
/// hit probability. This gives relative error at most `epsilon` with
/// probability at least `1 - delta` by the multiplicative Chernoff bound.
pub fn hypervolume_mc<F: Scalar>(
    points: &[Vec<F>],
    reference: &[F],
    delta: f64,
    epsilon: f64,
    seed: u64,
) -> Result<F> {
    if !(delta > 0.0 && delta < 1.0 && epsilon > 0.0) {
        return Err(Error::Validation(format!(
            "need 0 < delta < 1 and epsilon > 0, got delta={delta} epsilon={epsilon}"
        )));
    }
    check_points(points, reference)?;
    let k = reference.len();
    let pts: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(reference).map(|(a, r)| a.as_f64() - r.as_f64()).collect())
        .filter(|p: &Vec<f64>| p.iter().all(|&x| x > 0.0))
        .collect();
    if pts.is_empty() {
        return Ok(F::zero());
    }
    let upper: Vec<f64> = (0..k)
        .map(|j| pts.iter().map(|p| p[j]).fold(0.0, f64::max))
        .collect();
    let box_volume: f64 = upper.iter().product();
    let largest = pts
        .iter()
        .map(|p| p.iter().product::<f64>())
        .fold(0.0, f64::max);
    let p_lb = largest / box_volume;
    let wanted = (3.0 * (2.0 / delta).ln() / (epsilon * epsilon * p_lb)).ceil();
    let samples = (wanted as u64).clamp(1, MC_MAX_SAMPLES);
    if (wanted as u64) > MC_MAX_SAMPLES {
        log::warn!("hypervolume sample count capped at {MC_MAX_SAMPLES} (wanted {wanted})");
    }

    let blocks = samples.div_ceil(MC_BLOCK);
    let mut hits = 0u64;
    let mut x = vec![0.0; k];
    for b in 0..blocks {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b);
        let n = MC_BLOCK.min(samples - b * MC_BLOCK);
        for _ in 0..n {
            for j in 0..k {
                x[j] = rng.gen::<f64>() * upper[j];
            }
            if pts.iter().any(|p| p.iter().zip(&x).all(|(a, b)| a >= b)) {
                hits += 1;
            }
        }
    }
    Ok(F::of(box_volume * hits as f64 / samples as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HvMethod {
    Exact,
    MonteCarlo { delta: f64, epsilon: f64, seed: u64 },
    /// Exact up to three objectives, Monte Carlo at (0.1, 0.1) beyond.
    Auto { seed: u64 },
}

impl Default for HvMethod {
    fn default() -> Self {
        HvMethod::Auto { seed: 0 }
    }
}

fn hypervolume_with(points: &[Vec<f64>], reference: &[f64], method: HvMethod) -> Result<f64> {
    match method {
        HvMethod::Exact => hypervolume_exact(points, reference),
        HvMethod::MonteCarlo { delta, epsilon, seed } => {
            hypervolume_mc(points, reference, delta, epsilon, seed)
        }
        HvMethod::Auto { seed } => {
            if reference.len() <= 3 {
                hypervolume_exact(points, reference)
            } else {
                hypervolume_mc(points, reference, 0.1, 0.1, seed)
            }
        }
    }
}

/// Hypervolume of `frontier` over the box from `reference` to the ideal point
/// of `exact`, clamped to `[0, 1]`.
pub fn normalized_hypervolume(
    frontier: &Frontier,
    exact: &Frontier,
    reference: &[f64],
    method: HvMethod,
) -> Result<f64> {
    if frontier.is_empty() {
        return Ok(0.0);
    }
    let truth: Vec<Vec<f64>> = frontier_points(exact);
    let k = reference.len();
    let ideal: Vec<f64> = (0..k)
        .map(|j| truth.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let denom: f64 = ideal.iter().zip(reference).map(|(i, r)| i - r).product();
    if !(denom > 0.0) {
        return Err(Error::Contract("exact frontier spans a degenerate box".into()));
    }
    let hv = hypervolume_with(&frontier_points(frontier), reference, method)?;
    Ok((hv / denom).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub inc_pct: f64,
    pub rnc_pct: f64,
    pub comp_pct: f64,
    pub time_s: f64,
    pub cardinality_pct: f64,
    pub hv_norm: f64,
    /// The exact run's own normalized hypervolume, for the averaging rule.
    pub exact_hv_norm: f64,
}

fn pct(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        100.0 * num / den
    } else {
        0.0
    }
}

/// Compares one method's run against the exact run on the same instance.
pub fn evaluate_run(exact: &RunOutput, run: &RunOutput, reference: &[f64], hv: HvMethod) -> Result<EvalReport> {
    let e = &exact.report;
    let r = &run.report;
    Ok(EvalReport {
        method: r.method.clone(),
        inc_pct: pct(r.inc as f64, e.inc as f64),
        rnc_pct: pct(r.rnc as f64, e.rnc as f64),
        comp_pct: pct(r.comp as f64, e.comp as f64),
        time_s: r.time_ms / 1e3,
        cardinality_pct: cardinality(&run.frontier, &exact.frontier)?,
        hv_norm: normalized_hypervolume(&run.frontier, &exact.frontier, reference, hv)?,
        exact_hv_norm: normalized_hypervolume(&exact.frontier, &exact.frontier, reference, hv)?,
    })
}

/// Per-size, per-method means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub size: String,
    pub method: String,
    pub instances: usize,
    pub inc_pct: f64,
    pub rnc_pct: f64,
    pub comp_pct: f64,
    pub time_s: f64,
    pub cardinality_pct: f64,
    /// Mean over instances where the exact run's HV is strictly larger
    /// (all instances for the exact method itself); `None` if there are none.
    pub hv_norm: Option<f64>,
    pub hv_instances: usize,
}

/// Groups `(size, report)` pairs by size and method, in first-seen order.
pub fn aggregate(rows: &[(String, EvalReport)]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<&EvalReport>> = BTreeMap::new();
    for (size, r) in rows {
        let key = (size.clone(), r.method.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let rs = &groups[&key];
            let n = rs.len() as f64;
            let mean = |f: fn(&EvalReport) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            let hv: Vec<f64> = rs
                .iter()
                .filter(|r| r.method == "exact" || r.exact_hv_norm > r.hv_norm)
                .map(|r| r.hv_norm)
                .collect();
            AggregateRow {
                size: key.0.clone(),
                method: key.1.clone(),
                instances: rs.len(),
                inc_pct: mean(|r| r.inc_pct),
                rnc_pct: mean(|r| r.rnc_pct),
                comp_pct: mean(|r| r.comp_pct),
                time_s: mean(|r| r.time_s),
                cardinality_pct: mean(|r| r.cardinality_pct),
                hv_norm: (!hv.is_empty()).then(|| hv.iter().sum::<f64>() / hv.len() as f64),
                hv_instances: hv.len(),
            }
        })
        .collect()
}

const TABLE_HEADER: [&str; 9] = ["Size", "Method", "n", "INC", "RNC", "Comp.", "Time (s)", "Card. (%)", "HV"];

fn table_cells(r: &AggregateRow) -> [String; 9] {
    [
        r.size.clone(),
        r.method.clone(),
        r.instances.to_string(),
        format!("{:.0}", r.inc_pct),
        format!("{:.0}", r.rnc_pct),
        format!("{:.0}", r.comp_pct),
        format!("{:.3}", r.time_s),
        format!("{:.0}", r.cardinality_pct),
        r.hv_norm.map_or("-".to_string(), |h| format!("{h:.3}")),
    ]
}

pub fn aggregate_table(rows: &[AggregateRow]) -> String {
    let cells: Vec<[String; 9]> = rows.iter().map(table_cells).collect();
    let mut widths: Vec<usize> = TABLE_HEADER.iter().map(|h| h.len()).collect();
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[String]| {
        let parts: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &TABLE_HEADER.map(String::from));
    for row in &cells {
        line(&mut out, row);
    }
    out
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("size,method,instances,inc_pct,rnc_pct,comp_pct,time_s,cardinality_pct,hv_norm,hv_instances\n");
    for r in rows {
        let _ = writeln!(
            out,
            "\"{}\",{},{},{},{},{},{},{},{},{}",
            r.size,
            r.method,
            r.instances,
            r.inc_pct,
            r.rnc_pct,
            r.comp_pct,
            r.time_s,
            r.cardinality_pct,
            r.hv_norm.map_or(String::new(), |h| h.to_string()),
            r.hv_instances
        );
    }
    out
}

/// Thresholds tried by [`select_tau`] when none are given.
pub const DEFAULT_TAU_GRID: [f64; 7] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];

/// Mean quality of one threshold over a validation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSweepRow {
    pub tau: f64,
    pub instances: usize,
    pub cardinality_pct: f64,
    pub comp_pct: f64,
    pub rnc_pct: f64,
    pub hv_norm: f64,
}

/// Averages per-threshold reports. `reports[i]` holds one report per
/// instance for `taus[i]`.
pub fn tau_sweep(taus: &[f64], reports: &[Vec<EvalReport>]) -> Result<Vec<TauSweepRow>> {
    if taus.len() != reports.len() {
        return Err(Error::Contract("one report list per threshold".into()));
    }
    Ok(taus
        .iter()
        .zip(reports)
        .map(|(&tau, rs)| {
            let n = rs.len().max(1) as f64;
            let mean = |f: fn(&EvalReport) -> f64| rs.iter().map(f).sum::<f64>() / n;
            TauSweepRow {
                tau,
                instances: rs.len(),
                cardinality_pct: mean(|r| r.cardinality_pct),
                comp_pct: mean(|r| r.comp_pct),
                rnc_pct: mean(|r| r.rnc_pct),
                hv_norm: mean(|r| r.hv_norm),
            }
        })
        .collect())
}

/// Largest threshold whose mean cardinality recovery reaches `min_card_pct`;
/// the smallest threshold if none does.
pub fn select_tau(rows: &[TauSweepRow], min_card_pct: f64) -> Option<f64> {
    rows.iter()
        .filter(|r| r.cardinality_pct >= min_card_pct)
        .map(|r| r.tau)
        .fold(None, |best: Option<f64>, t| Some(best.map_or(t, |b| b.max(t))))
        .or_else(|| rows.iter().map(|r| r.tau).reduce(f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pareto::FrontierPoint;

    fn frontier(vs: &[&[u32]]) -> Frontier {
        Frontier {
            points: vs
                .iter()
                .map(|v| FrontierPoint {
                    objectives: v.to_vec(),
                    solution: Vec::new(),
                })
                .collect(),
            comparison_count: 0,
        }
    }

    fn pts(vs: &[&[f64]]) -> Vec<Vec<f64>> {
        vs.iter().map(|v| v.to_vec()).collect()
    }

    #[test]
    fn hypervolume_hand_cases() {
        assert_eq!(hypervolume_exact(&pts(&[&[3.0, 2.0]]), &[0.0, 0.0]).unwrap(), 6.0);
        assert_eq!(
            hypervolume_exact(&pts(&[&[2.0, 1.0], &[1.0, 2.0]]), &[0.0, 0.0]).unwrap(),
            3.0
        );
        // two unit-overlapping boxes in 3d: 2*2*1 + 1*1*2 - 1*1*1
        assert_eq!(
            hypervolume_exact(&pts(&[&[2.0, 2.0, 1.0], &[1.0, 1.0, 2.0]]), &[0.0, 0.0, 0.0]).unwrap(),
            5.0
        );
        assert_eq!(
            hypervolume_exact(&pts(&[&[2.0, 3.0, 4.0, 5.0]]), &[1.0, 1.0, 1.0, 1.0]).unwrap(),
            24.0
        );
        assert_eq!(hypervolume_exact::<f64>(&[], &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn hypervolume_errors() {
        assert!(matches!(
            hypervolume_exact(&pts(&[&[1.0; 5]]), &[0.0; 5]),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            hypervolume_exact(&pts(&[&[1.0, -1.0]]), &[0.0, 0.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn mc_single_box_and_determinism() {
        let p = pts(&[&[3.0, 2.0, 5.0]]);
        let est = hypervolume_mc(&p, &[0.0; 3], 0.1, 0.1, 9).unwrap();
        assert_eq!(est, 30.0);
        let q = pts(&[&[3.0, 2.0, 5.0], &[1.0, 4.0, 2.0], &[5.0, 1.0, 1.0]]);
        let a = hypervolume_mc(&q, &[0.0; 3], 0.1, 0.1, 4).unwrap();
        let b = hypervolume_mc(&q, &[0.0; 3], 0.1, 0.1, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(hypervolume_mc::<f64>(&[], &[0.0; 3], 0.1, 0.1, 4).unwrap(), 0.0);
    }

    #[test]
    fn cardinality_cases() {
        let exact = frontier(&[&[1, 5], &[3, 3], &[5, 1]]);
        assert_eq!(cardinality(&exact, &exact).unwrap(), 100.0);
        assert_eq!(cardinality(&frontier(&[&[2, 2]]), &exact).unwrap(), 0.0);
        let part = frontier(&[&[3, 3], &[2, 2]]);
        assert!((cardinality(&part, &exact).unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert!(cardinality(&exact, &Frontier::default()).is_err());
    }

    #[test]
    fn normalized_hv_is_bounded() {
        let exact = frontier(&[&[1, 5], &[3, 3], &[5, 1]]);
        let h = normalized_hypervolume(&exact, &exact, &[0.0, 0.0], HvMethod::Exact).unwrap();
        assert!((h - 13.0 / 25.0).abs() < 1e-12);
        let empty = normalized_hypervolume(&Frontier::default(), &exact, &[0.0, 0.0], HvMethod::Exact).unwrap();
        assert_eq!(empty, 0.0);
    }

    #[test]
    fn aggregate_restricts_hv_average() {
        let rep = |m: &str, hv: f64, ex: f64| EvalReport {
            method: m.into(),
            inc_pct: 100.0,
            rnc_pct: 50.0,
            comp_pct: 10.0,
            time_s: 1.0,
            cardinality_pct: 60.0,
            hv_norm: hv,
            exact_hv_norm: ex,
        };
        let rows = vec![
            ("(3,40)".to_string(), rep("exact", 0.8, 0.8)),
            ("(3,40)".to_string(), rep("morbdd", 0.7, 0.8)),
            ("(3,40)".to_string(), rep("morbdd", 0.8, 0.8)),
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[1].instances, 2);
        assert_eq!(agg[1].hv_instances, 1);
        assert_eq!(agg[1].hv_norm, Some(0.7));
        let table = aggregate_table(&agg);
        assert!(table.lines().next().unwrap().starts_with("Size"));
        assert_eq!(aggregate_csv(&agg).lines().count(), 3);
    }

    fn sweep_row(tau: f64, card: f64) -> TauSweepRow {
        TauSweepRow {
            tau,
            instances: 1,
            cardinality_pct: card,
            comp_pct: 0.0,
            rnc_pct: 0.0,
            hv_norm: 0.0,
        }
    }

    #[test]
    fn tau_selection_rule() {
        let rows = vec![sweep_row(0.1, 80.0), sweep_row(0.2, 50.0), sweep_row(0.3, 20.0)];
        assert_eq!(select_tau(&rows, 40.0), Some(0.2));
        assert_eq!(select_tau(&rows, 90.0), Some(0.1));
        assert_eq!(select_tau(&rows, 10.0), Some(0.3));
        assert_eq!(select_tau(&[], 10.0), None);
    }
}
