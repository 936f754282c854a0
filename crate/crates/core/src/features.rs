//! Node features and supervised datasets for Pareto node prediction.
//!
//! Layout (44 entries, version [`LAYOUT_VERSION`]):
//!
//! | range  | block            | contents |
//! |--------|------------------|----------|
//! | 0..19  | instance         | K/10, N/100, W/Σw; mean/min/max/std of weights; mean/min/max/std of the per-item mean, min and max profit (all coefficient stats /1000) |
//! | 19..27 | current variable | w/1000; mean/max/min/std of the item's profits /1000; mean/w, max/w, min/w |
//! | 27..30 | current node     | state/Σw, state/W, (layer-1)/N |
//! | 30..38 | parent variable  | current-variable block of the previous item |
//! | 38..44 | parent nodes     | per arc domain (one, then zero): mean state/Σw, mean state/W, share of in-arcs |
//!
//! The variable of a node in layer `l` is item `l` (1-based), the one its
//! outgoing arcs decide.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bdd::{Bdd, KeepSet, NodeId};
use crate::error::{Error, Result};
use crate::instance::{Instance, COEFFICIENT_MAX};
use crate::scalar::Scalar;

pub const NUM_FEATURES: usize = 44;
pub const LAYOUT_VERSION: u32 = 1;

/// Normalizer for K.
pub const OBJECTIVE_SCALE: f64 = 10.0;
/// Normalizer for N.
pub const ITEM_SCALE: f64 = 100.0;
const COEFF_SCALE: f64 = COEFFICIENT_MAX as f64;
/// Floor applied to positive sample weights.
pub const MIN_POSITIVE_WEIGHT: f64 = 1e-3;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "inst_num_objectives",
    "inst_num_items",
    "inst_capacity_ratio",
    "inst_weight_mean",
    "inst_weight_min",
    "inst_weight_max",
    "inst_weight_std",
    "inst_avg_profit_mean",
    "inst_avg_profit_min",
    "inst_avg_profit_max",
    "inst_avg_profit_std",
    "inst_min_profit_mean",
    "inst_min_profit_min",
    "inst_min_profit_max",
    "inst_min_profit_std",
    "inst_max_profit_mean",
    "inst_max_profit_min",
    "inst_max_profit_max",
    "inst_max_profit_std",
    "var_weight",
    "var_profit_mean",
    "var_profit_max",
    "var_profit_min",
    "var_profit_std",
    "var_mean_per_weight",
    "var_max_per_weight",
    "var_min_per_weight",
    "node_state_norm",
    "node_state_capacity",
    "node_layer",
    "pvar_weight",
    "pvar_profit_mean",
    "pvar_profit_max",
    "pvar_profit_min",
    "pvar_profit_std",
    "pvar_mean_per_weight",
    "pvar_max_per_weight",
    "pvar_min_per_weight",
    "parent1_state_norm",
    "parent1_state_capacity",
    "parent1_share",
    "parent0_state_norm",
    "parent0_state_capacity",
    "parent0_share",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector<F>(pub [F; NUM_FEATURES]);

impl<F: Scalar> FeatureVector<F> {
    pub fn as_slice(&self) -> &[F] {
        &self.0
    }
}

/// mean, min, max, population std.
fn summary(values: &[f64]) -> [f64; 4] {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    [mean, min, max, var.sqrt()]
}

/// Precomputed per-instance blocks; extraction of a node is then O(in-degree).
pub struct FeatureExtractor<'a> {
    inst: &'a Instance,
    instance_block: [f64; 19],
    variable_blocks: Vec<[f64; 8]>,
    total_weight: f64,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(inst: &'a Instance) -> Self {
        let n = inst.num_items();
        let total_weight = inst.total_weight() as f64;
        let mut instance_block = [0.0; 19];
        instance_block[0] = inst.num_objectives() as f64 / OBJECTIVE_SCALE;
        instance_block[1] = n as f64 / ITEM_SCALE;
        instance_block[2] = inst.capacity() as f64 / total_weight;
        let ws = summary(&inst.weights().iter().map(|&w| w as f64).collect::<Vec<_>>());
        for (i, v) in ws.iter().enumerate() {
            instance_block[3 + i] = v / COEFF_SCALE;
        }
        let per_item: Vec<[f64; 4]> = (0..n)
            .map(|i| summary(&inst.item_profits(i).map(|p| p as f64).collect::<Vec<_>>()))
            .collect();
        // series: per-item mean (0), min (1), max (2) profit
        for (s, col) in [0usize, 1, 2].into_iter().enumerate() {
            let stats = summary(&per_item.iter().map(|p| p[col]).collect::<Vec<_>>());
            for (i, v) in stats.iter().enumerate() {
                instance_block[7 + 4 * s + i] = v / COEFF_SCALE;
            }
        }
        let variable_blocks = (0..n)
            .map(|i| {
                let w = inst.weight(i) as f64;
                let [mean, min, max, std] = per_item[i];
                [
                    w / COEFF_SCALE,
                    mean / COEFF_SCALE,
                    max / COEFF_SCALE,
                    min / COEFF_SCALE,
                    std / COEFF_SCALE,
                    mean / w,
                    max / w,
                    min / w,
                ]
            })
            .collect();
        FeatureExtractor {
            inst,
            instance_block,
            variable_blocks,
            total_weight,
        }
    }

    pub fn extract<F: Scalar>(&self, bdd: &Bdd, id: NodeId) -> Result<FeatureVector<F>> {
        if !bdd.is_interior(id) {
            return Err(Error::Contract(format!(
                "features are defined for interior nodes only, got node {id}"
            )));
        }
        let node = bdd.node(id);
        let layer = node.layer as usize;
        let capacity = self.inst.capacity().max(1) as f64;
        let mut out = [0.0f64; NUM_FEATURES];
        out[..19].copy_from_slice(&self.instance_block);
        out[19..27].copy_from_slice(&self.variable_blocks[layer - 1]);
        let state = node.state as f64;
        out[27] = state / self.total_weight;
        out[28] = state / capacity;
        out[29] = (layer - 1) as f64 / self.inst.num_items() as f64;
        if layer >= 2 {
            out[30..38].copy_from_slice(&self.variable_blocks[layer - 2]);
        }
        let parents = bdd.parents(id);
        let indeg = parents.len().max(1) as f64;
        for (slot, domain) in [(38usize, 1u8), (41, 0)] {
            let states: Vec<f64> = parents
                .iter()
                .filter(|a| a.domain == domain)
                .map(|a| bdd.node(a.parent).state as f64)
                .collect();
            if states.is_empty() {
                continue;
            }
            let mean = states.iter().sum::<f64>() / states.len() as f64;
            out[slot] = mean / self.total_weight;
            out[slot + 1] = mean / capacity;
            out[slot + 2] = states.len() as f64 / indeg;
        }
        Ok(FeatureVector(out.map(F::of)))
    }
}

pub fn extract_features<F: Scalar>(inst: &Instance, bdd: &Bdd, id: NodeId) -> Result<FeatureVector<F>> {
    FeatureExtractor::new(inst).extract(bdd, id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow<F> {
    pub features: FeatureVector<F>,
    pub label: u8,
    pub weight: F,
    pub instance_id: u64,
    pub node_id: NodeId,
}

/// An exact diagram labelled with its Pareto nodes.
pub struct LabeledDiagram<'a> {
    pub instance_id: u64,
    pub bdd: &'a Bdd,
    pub pareto: &'a KeepSet,
    /// Frontier-realizing path counts per node id.
    pub path_counts: &'a [u64],
}

/// Positive weights: path count over the layer's largest path count among
/// Pareto nodes, floored at [`MIN_POSITIVE_WEIGHT`].
pub fn positive_weights(labeled: &LabeledDiagram<'_>) -> BTreeMap<NodeId, f64> {
    let bdd = labeled.bdd;
    let mut out = BTreeMap::new();
    for layer in bdd.layers() {
        let positives: Vec<NodeId> = layer
            .iter()
            .copied()
            .filter(|&id| bdd.is_interior(id) && labeled.pareto.contains(id))
            .collect();
        let max = positives
            .iter()
            .map(|&id| labeled.path_counts[id as usize])
            .max()
            .unwrap_or(0);
        for id in positives {
            let w = if max == 0 {
                MIN_POSITIVE_WEIGHT
            } else {
                labeled.path_counts[id as usize] as f64 / max as f64
            };
            out.insert(id, w.clamp(MIN_POSITIVE_WEIGHT, 1.0));
        }
    }
    out
}

/// Balanced rows for one diagram: all interior Pareto nodes plus as many
/// uniformly sampled interior non-Pareto nodes.
pub fn diagram_rows<F: Scalar>(labeled: &LabeledDiagram<'_>, seed: u64) -> Result<Vec<DatasetRow<F>>> {
    let bdd = labeled.bdd;
    let weights = positive_weights(labeled);
    if weights.is_empty() {
        log::warn!(
            "instance {} has no interior Pareto nodes; skipped",
            labeled.instance_id
        );
        return Ok(Vec::new());
    }
    let mut negatives: Vec<NodeId> = bdd
        .node_ids()
        .filter(|&id| bdd.is_interior(id) && !labeled.pareto.contains(id))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(labeled.instance_id);
    let take = weights.len().min(negatives.len());
    let (chosen, _) = negatives.partial_shuffle(&mut rng, take);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();

    let extractor = FeatureExtractor::new(bdd.instance());
    let mut rows = Vec::with_capacity(weights.len() + chosen.len());
    for (&id, &w) in &weights {
        rows.push(DatasetRow {
            features: extractor.extract(bdd, id)?,
            label: 1,
            weight: F::of(w),
            instance_id: labeled.instance_id,
            node_id: id,
        });
    }
    for id in chosen {
        rows.push(DatasetRow {
            features: extractor.extract(bdd, id)?,
            label: 0,
            weight: F::one(),
            instance_id: labeled.instance_id,
            node_id: id,
        });
    }
    Ok(rows)
}

/// Compiles, enumerates and labels one instance, then draws its rows.
pub fn instance_rows<F: Scalar>(inst: &Instance, instance_id: u64, seed: u64) -> Result<Vec<DatasetRow<F>>> {
    let bdd = crate::bdd::compile_exact(inst)?;
    let (frontier, labels) = crate::pareto::enumerate_frontier(&bdd)?;
    let counts = crate::pareto::pareto_path_counts(&bdd, &labels, &frontier)?;
    drop(labels);
    let pareto = crate::pareto::keepset_from_counts(&bdd, &counts);
    diagram_rows(
        &LabeledDiagram {
            instance_id,
            bdd: &bdd,
            pareto: &pareto,
            path_counts: &counts,
        },
        seed,
    )
}

/// Rows of several diagrams, merged in instance id order.
pub fn build_dataset<F: Scalar>(diagrams: &[LabeledDiagram<'_>], seed: u64) -> Result<Vec<DatasetRow<F>>> {
    let mut order: Vec<&LabeledDiagram<'_>> = diagrams.iter().collect();
    order.sort_by_key(|d| d.instance_id);
    let mut rows = Vec::new();
    for d in order {
        rows.extend(diagram_rows(d, seed)?);
    }
    Ok(rows)
}

pub fn dataset_header() -> String {
    let mut cols: Vec<&str> = FEATURE_NAMES.to_vec();
    cols.extend(["label", "weight", "instance_id", "node_id"]);
    cols.join(",")
}

/// CSV with a leading `#` line recording the layout and normalizers.
pub fn dataset_to_csv<F: Scalar>(rows: &[DatasetRow<F>]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# layout={LAYOUT_VERSION} coefficient_scale={COEFF_SCALE} objective_scale={OBJECTIVE_SCALE} item_scale={ITEM_SCALE} state_norm=total_weight state_ratio=capacity"
    );
    out.push_str(&dataset_header());
    out.push('\n');
    for r in rows {
        for v in r.features.0.iter() {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{},{},{},{}", r.label, r.weight, r.instance_id, r.node_id);
    }
    out
}

pub fn write_dataset<F: Scalar>(rows: &[DatasetRow<F>], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset_to_csv(rows)).map_err(|e| Error::io(path, e))
}

pub fn parse_dataset<F: Scalar>(text: &str) -> Result<Vec<DatasetRow<F>>> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            if let Some(v) = line
                .split_whitespace()
                .find_map(|t| t.strip_prefix("layout="))
            {
                let found: u32 = v
                    .parse()
                    .map_err(|_| Error::parse(line_no, "bad layout version"))?;
                if found != LAYOUT_VERSION {
                    return Err(Error::Version {
                        expected: LAYOUT_VERSION,
                        found,
                    });
                }
            }
            continue;
        }
        if !saw_header {
            if line != dataset_header() {
                return Err(Error::parse(line_no, "unexpected dataset header"));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != NUM_FEATURES + 4 {
            return Err(Error::parse(
                line_no,
                format!("expected {} columns, found {}", NUM_FEATURES + 4, fields.len()),
            ));
        }
        let num = |s: &str| -> Result<F> {
            s.parse::<F>()
                .map_err(|_| Error::parse(line_no, format!("bad number {s:?}")))
        };
        let mut features = [F::zero(); NUM_FEATURES];
        for (f, s) in features.iter_mut().zip(&fields) {
            *f = num(s)?;
        }
        let label: u8 = fields[NUM_FEATURES]
            .parse()
            .ok()
            .filter(|l| *l <= 1)
            .ok_or_else(|| Error::parse(line_no, "label must be 0 or 1"))?;
        let weight = num(fields[NUM_FEATURES + 1])?;
        let instance_id = fields[NUM_FEATURES + 2]
            .parse()
            .map_err(|_| Error::parse(line_no, "bad instance id"))?;
        let node_id = fields[NUM_FEATURES + 3]
            .parse()
            .map_err(|_| Error::parse(line_no, "bad node id"))?;
        rows.push(DatasetRow {
            features: FeatureVector(features),
            label,
            weight,
            instance_id,
            node_id,
        });
    }
    Ok(rows)
}

pub fn read_dataset<F: Scalar>(path: impl AsRef<Path>) -> Result<Vec<DatasetRow<F>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdd::compile_exact;
    use crate::instance::generate_instance;
    use crate::pareto::{enumerate_frontier, keepset_from_counts, pareto_path_counts};

    #[test]
    fn names_match_layout() {
        assert_eq!(FEATURE_NAMES.len(), 44);
        let mut sorted = FEATURE_NAMES.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 44);
    }

    #[test]
    fn layer_and_state_features() {
        let inst = generate_instance(3, 12, 5);
        let bdd = compile_exact(&inst).unwrap();
        let ex = FeatureExtractor::new(&inst);
        let first: FeatureVector<f64> = ex.extract(&bdd, 1).unwrap();
        for id in bdd.node_ids().filter(|&i| bdd.is_interior(i)) {
            let f: FeatureVector<f64> = ex.extract(&bdd, id).unwrap();
            let node = bdd.node(id);
            assert_eq!(f.0[29], (node.layer - 1) as f64 / 12.0);
            assert!(f.0[29] > 0.0 && f.0[29] < 1.0);
            assert_eq!(f.0[28], node.state as f64 / inst.capacity() as f64);
            assert_eq!(f.0[..19], first.0[..19]);
            assert!(f.0.iter().all(|v| v.is_finite()));
            for i in [2, 3, 4, 5, 6, 19, 27, 28, 29, 38, 39, 40, 41, 42, 43] {
                assert!((0.0..=1.0).contains(&f.0[i]), "feature {i} = {}", f.0[i]);
            }
            assert!((f.0[40] + f.0[43] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_node_has_unit_capacity_ratio() {
        let inst = Instance::new(10, vec![3, 1, 6, 4, 5], vec![vec![1, 2, 3, 4, 5]]).unwrap();
        let bdd = compile_exact(&inst).unwrap();
        let id = bdd.follow(&[true, true, true, false, false]).unwrap()[3];
        let f: FeatureVector<f64> = extract_features(&inst, &bdd, id).unwrap();
        assert_eq!(f.0[28], 1.0);
    }

    #[test]
    fn root_and_terminal_rejected() {
        let inst = generate_instance(2, 5, 1);
        let bdd = compile_exact(&inst).unwrap();
        assert!(extract_features::<f64>(&inst, &bdd, bdd.root()).is_err());
        assert!(extract_features::<f64>(&inst, &bdd, bdd.terminal()).is_err());
    }

    #[test]
    fn dataset_is_balanced_and_round_trips() {
        let inst = generate_instance(3, 14, 2);
        let bdd = compile_exact(&inst).unwrap();
        let (front, labels) = enumerate_frontier(&bdd).unwrap();
        let counts = pareto_path_counts(&bdd, &labels, &front).unwrap();
        let marks = keepset_from_counts(&bdd, &counts);
        let labeled = LabeledDiagram {
            instance_id: 3,
            bdd: &bdd,
            pareto: &marks,
            path_counts: &counts,
        };
        let positives = bdd
            .node_ids()
            .filter(|&i| bdd.is_interior(i) && marks.contains(i))
            .count();
        let rows: Vec<DatasetRow<f64>> = build_dataset(&[labeled], 9).unwrap();
        assert_eq!(rows.len(), 2 * positives);
        assert_eq!(rows.iter().filter(|r| r.label == 1).count(), positives);
        assert!(rows.iter().all(|r| r.weight > 0.0 && r.weight <= 1.0));
        let back: Vec<DatasetRow<f64>> = parse_dataset(&dataset_to_csv(&rows)).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn dataset_layout_version_is_checked() {
        let text = format!("# layout=99\n{}\n", dataset_header());
        assert!(matches!(
            parse_dataset::<f64>(&text),
            Err(Error::Version { found: 99, .. })
        ));
    }
}
