//! Node classifiers that score BDD nodes in `[0, 1]`.
//!
//! The reference family is a gradient-boosted ensemble of depth-limited
//! regression trees with a logistic link, trained on sample-weighted binary
//! cross-entropy using second-order (Newton) leaf values and histogram split
//! finding. A plain logistic regression is available as a light fallback.
//!
//! Before training, identical `(features, label)` rows are merged and their
//! weights summed, and weights are rescaled so they average to one. Training
//! is therefore invariant to uniform duplication of the dataset. By default the
//! positive class is also rescaled to carry the same total weight as the
//! negative class, so per-node importance weights only rank positives against
//! each other.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::bdd::{Bdd, KeepSet, NodeId};
use crate::error::{Error, Result};
use crate::features::{DatasetRow, FeatureExtractor, FeatureVector, LAYOUT_VERSION, NUM_FEATURES};
use crate::instance::Instance;
use crate::scalar::Scalar;

const MAGIC: &str = "morbdd-sparsifier";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Minimum hessian mass in each child of a split.
    pub min_child_weight: f64,
    /// Histogram bins per feature, at most 256.
    pub max_bins: usize,
    /// Scale positive weights so both classes carry equal total weight.
    pub balance_classes: bool,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            rounds: 200,
            max_depth: 6,
            learning_rate: 0.1,
            lambda: 1.0,
            min_child_weight: 1.0,
            max_bins: 256,
            balance_classes: true,
        }
    }
}

impl GbdtParams {
    /// Depth {4, 6, 8} x rounds {100, 200, 400}.
    pub fn default_grid() -> Vec<GbdtParams> {
        let mut grid = Vec::new();
        for max_depth in [4, 6, 8] {
            for rounds in [100, 200, 400] {
                grid.push(GbdtParams {
                    rounds,
                    max_depth,
                    ..GbdtParams::default()
                });
            }
        }
        grid
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticParams {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub balance_classes: bool,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            iterations: 500,
            learning_rate: 0.5,
            l2: 1e-4,
            balance_classes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainParams {
    Gbdt(GbdtParams),
    Logistic(LogisticParams),
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams::Gbdt(GbdtParams::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode<F> {
    /// `None` for leaves.
    pub feature: Option<u32>,
    pub threshold: F,
    pub left: u32,
    pub right: u32,
    pub value: F,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree<F> {
    pub nodes: Vec<TreeNode<F>>,
}

impl<F: Scalar> Tree<F> {
    pub fn leaf_value(&self, x: &[F]) -> F {
        let mut i = 0usize;
        loop {
            let node = &self.nodes[i];
            match node.feature {
                None => return node.value,
                Some(f) => {
                    i = if x[f as usize] <= node.threshold {
                        node.left as usize
                    } else {
                        node.right as usize
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gbdt<F> {
    pub params: GbdtParams,
    pub base_margin: F,
    pub trees: Vec<Tree<F>>,
}

impl<F: Scalar> Gbdt<F> {
    pub fn margin(&self, x: &[F]) -> f64 {
        self.trees
            .iter()
            .fold(self.base_margin.as_f64(), |m, t| m + t.leaf_value(x).as_f64())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Logistic<F> {
    pub params: LogisticParams,
    pub bias: F,
    pub coef: Vec<F>,
    pub mean: Vec<F>,
    pub scale: Vec<F>,
}

impl<F: Scalar> Logistic<F> {
    pub fn margin(&self, x: &[F]) -> f64 {
        let mut m = self.bias.as_f64();
        for (j, v) in x.iter().enumerate() {
            let z = (v.as_f64() - self.mean[j].as_f64()) / self.scale[j].as_f64();
            m += self.coef[j].as_f64() * z;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelFamily<F> {
    Gbdt(Gbdt<F>),
    Logistic(Logistic<F>),
}

/// Anything that can score a feature vector in `[0, 1]`.
pub trait NodeScorer<F: Scalar> {
    fn score(&self, features: &FeatureVector<F>) -> F;
    fn layout_version(&self) -> u32;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsifierModel<F> {
    pub family: ModelFamily<F>,
    pub layout_version: u32,
    pub seed: u64,
}

fn sigmoid(m: f64) -> f64 {
    1.0 / (1.0 + (-m).exp())
}

impl<F: Scalar> SparsifierModel<F> {
    pub fn margin(&self, x: &[F]) -> f64 {
        match &self.family {
            ModelFamily::Gbdt(g) => g.margin(x),
            ModelFamily::Logistic(l) => l.margin(x),
        }
    }

    pub fn family_tag(&self) -> &'static str {
        match self.family {
            ModelFamily::Gbdt(_) => "gbdt",
            ModelFamily::Logistic(_) => "logistic",
        }
    }

    /// Score of a feature vector, refusing vectors of another layout.
    pub fn predict(&self, x: &FeatureVector<F>, layout_version: u32) -> Result<F> {
        if layout_version != self.layout_version {
            return Err(Error::Version {
                expected: self.layout_version,
                found: layout_version,
            });
        }
        Ok(self.score(x))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(out, "family {}", self.family_tag());
        let _ = writeln!(out, "scalar {}", F::NAME);
        let _ = writeln!(out, "layout {}", self.layout_version);
        let _ = writeln!(out, "seed {}", self.seed);
        match &self.family {
            ModelFamily::Gbdt(g) => {
                let p = &g.params;
                let _ = writeln!(out, "param rounds {}", p.rounds);
                let _ = writeln!(out, "param max_depth {}", p.max_depth);
                let _ = writeln!(out, "param learning_rate {}", p.learning_rate);
                let _ = writeln!(out, "param lambda {}", p.lambda);
                let _ = writeln!(out, "param min_child_weight {}", p.min_child_weight);
                let _ = writeln!(out, "param max_bins {}", p.max_bins);
                let _ = writeln!(out, "param balance_classes {}", p.balance_classes);
                let _ = writeln!(out, "base {}", g.base_margin);
                let _ = writeln!(out, "trees {}", g.trees.len());
                for (i, t) in g.trees.iter().enumerate() {
                    let _ = writeln!(out, "tree {i} {}", t.nodes.len());
                    for n in &t.nodes {
                        match n.feature {
                            Some(f) => {
                                let _ = writeln!(
                                    out,
                                    "{f} {} {} {} {}",
                                    n.threshold, n.left, n.right, n.value
                                );
                            }
                            None => {
                                let _ = writeln!(out, "- 0 0 0 {}", n.value);
                            }
                        }
                    }
                }
            }
            ModelFamily::Logistic(l) => {
                let p = &l.params;
                let _ = writeln!(out, "param iterations {}", p.iterations);
                let _ = writeln!(out, "param learning_rate {}", p.learning_rate);
                let _ = writeln!(out, "param l2 {}", p.l2);
                let _ = writeln!(out, "param balance_classes {}", p.balance_classes);
                let _ = writeln!(out, "bias {}", l.bias);
                for (name, vals) in [("coef", &l.coef), ("mean", &l.mean), ("scale", &l.scale)] {
                    let joined: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
                    let _ = writeln!(out, "{name} {}", joined.join(" "));
                }
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| -> Result<(usize, Vec<&str>)> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("unexpected end of model, expected {what}")))?;
            Ok((no, line.split_whitespace().collect()))
        };
        fn num<T: std::str::FromStr>(no: usize, s: &str) -> Result<T> {
            s.parse::<T>()
                .map_err(|_| Error::parse(no, format!("bad number {s:?}")))
        }
        fn expect<'a>(no: usize, toks: &'a [&'a str], key: &str, n: usize) -> Result<&'a [&'a str]> {
            if toks.first() != Some(&key) || toks.len() != n + 1 {
                return Err(Error::parse(no, format!("expected `{key}` with {n} value(s)")));
            }
            Ok(&toks[1..])
        }

        let (no, t) = next("header")?;
        let v = expect(no, &t, MAGIC, 1)?;
        if num::<u32>(no, v[0])? != FORMAT_VERSION {
            return Err(Error::parse(no, "unsupported model format version"));
        }
        let (no, t) = next("family")?;
        let family = expect(no, &t, "family", 1)?[0].to_string();
        let (no, t) = next("scalar")?;
        let scalar = expect(no, &t, "scalar", 1)?[0];
        if scalar != F::NAME {
            return Err(Error::parse(
                no,
                format!("model stores {scalar} values, reader expects {}", F::NAME),
            ));
        }
        let (no, t) = next("layout")?;
        let layout_version = num(no, expect(no, &t, "layout", 1)?[0])?;
        let (no, t) = next("seed")?;
        let seed = num(no, expect(no, &t, "seed", 1)?[0])?;
        let mut param = |name: &str| -> Result<(usize, String)> {
            let (no, t) = next(name)?;
            if t.len() != 3 || t[0] != "param" || t[1] != name {
                return Err(Error::parse(no, format!("expected `param {name}`")));
            }
            Ok((no, t[2].to_string()))
        };
        let family = match family.as_str() {
            "gbdt" => {
                let mut p = GbdtParams::default();
                let (no, v) = param("rounds")?;
                p.rounds = num(no, &v)?;
                let (no, v) = param("max_depth")?;
                p.max_depth = num(no, &v)?;
                let (no, v) = param("learning_rate")?;
                p.learning_rate = num(no, &v)?;
                let (no, v) = param("lambda")?;
                p.lambda = num(no, &v)?;
                let (no, v) = param("min_child_weight")?;
                p.min_child_weight = num(no, &v)?;
                let (no, v) = param("max_bins")?;
                p.max_bins = num(no, &v)?;
                let (no, v) = param("balance_classes")?;
                p.balance_classes = num(no, &v)?;
                let (no, t) = next("base")?;
                let base_margin = num(no, expect(no, &t, "base", 1)?[0])?;
                let (no, t) = next("trees")?;
                let count: usize = num(no, expect(no, &t, "trees", 1)?[0])?;
                let mut trees = Vec::with_capacity(count);
                for i in 0..count {
                    let (no, t) = next("tree")?;
                    let v = expect(no, &t, "tree", 2)?;
                    if num::<usize>(no, v[0])? != i {
                        return Err(Error::parse(no, "trees out of order"));
                    }
                    let len: usize = num(no, v[1])?;
                    let mut nodes = Vec::with_capacity(len);
                    for _ in 0..len {
                        let (no, t) = next("tree node")?;
                        if t.len() != 5 {
                            return Err(Error::parse(no, "tree node needs 5 fields"));
                        }
                        let feature = if t[0] == "-" {
                            None
                        } else {
                            let f: u32 = num(no, t[0])?;
                            if f as usize >= NUM_FEATURES {
                                return Err(Error::parse(no, "feature index out of range"));
                            }
                            Some(f)
                        };
                        let left: u32 = num(no, t[2])?;
                        let right: u32 = num(no, t[3])?;
                        if feature.is_some() && (left as usize >= len || right as usize >= len) {
                            return Err(Error::parse(no, "child index out of range"));
                        }
                        nodes.push(TreeNode {
                            feature,
                            threshold: num(no, t[1])?,
                            left,
                            right,
                            value: num(no, t[4])?,
                        });
                    }
                    trees.push(Tree { nodes });
                }
                ModelFamily::Gbdt(Gbdt {
                    params: p,
                    base_margin,
                    trees,
                })
            }
            "logistic" => {
                let mut p = LogisticParams::default();
                let (no, v) = param("iterations")?;
                p.iterations = num(no, &v)?;
                let (no, v) = param("learning_rate")?;
                p.learning_rate = num(no, &v)?;
                let (no, v) = param("l2")?;
                p.l2 = num(no, &v)?;
                let (no, v) = param("balance_classes")?;
                p.balance_classes = num(no, &v)?;
                let (no, t) = next("bias")?;
                let bias = num(no, expect(no, &t, "bias", 1)?[0])?;
                let mut vecs = Vec::new();
                for name in ["coef", "mean", "scale"] {
                    let (no, t) = next(name)?;
                    let v = expect(no, &t, name, NUM_FEATURES)?;
                    vecs.push(v.iter().map(|s| num(no, s)).collect::<Result<Vec<F>>>()?);
                }
                let scale = vecs.pop().unwrap();
                let mean = vecs.pop().unwrap();
                let coef = vecs.pop().unwrap();
                ModelFamily::Logistic(Logistic {
                    params: p,
                    bias,
                    coef,
                    mean,
                    scale,
                })
            }
            other => {
                return Err(Error::parse(no, format!("unknown model family {other:?}")));
            }
        };
        let (no, t) = next("end")?;
        if t != ["end"] {
            return Err(Error::parse(no, "expected `end`"));
        }
        Ok(SparsifierModel {
            family,
            layout_version,
            seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

impl<F: Scalar> NodeScorer<F> for SparsifierModel<F> {
    fn score(&self, features: &FeatureVector<F>) -> F {
        F::of(sigmoid(self.margin(&features.0)).clamp(0.0, 1.0))
    }

    fn layout_version(&self) -> u32 {
        self.layout_version
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_loss: Option<f64>,
    pub valid_accuracy: Option<f64>,
    /// Weighted training loss after each boosting round (GBDT only).
    pub loss_history: Vec<f64>,
}

/// Weighted mean binary cross-entropy of a model over rows.
pub fn weighted_log_loss<F: Scalar>(model: &SparsifierModel<F>, rows: &[DatasetRow<F>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for r in rows {
        let p = sigmoid(model.margin(&r.features.0));
        let w = r.weight.as_f64();
        num += w * bce(p, r.label);
        den += w;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn bce(p: f64, label: u8) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Unweighted accuracy at threshold `tau`.
pub fn accuracy<F: Scalar>(model: &impl NodeScorer<F>, rows: &[DatasetRow<F>], tau: f64) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let hits = rows
        .iter()
        .filter(|r| (model.score(&r.features).as_f64() >= tau) == (r.label == 1))
        .count();
    hits as f64 / rows.len() as f64
}

/// Unweighted mean of `|score - label|`.
pub fn mean_absolute_error<F: Scalar>(model: &impl NodeScorer<F>, rows: &[DatasetRow<F>]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter()
        .map(|r| (model.score(&r.features).as_f64() - r.label as f64).abs())
        .sum::<f64>()
        / rows.len() as f64
}

/// Trains a sparsifier on sample-weighted binary cross-entropy.
///
/// `valid` may be empty; its loss and accuracy are then not reported.
pub fn train<F: Scalar>(
    rows: &[DatasetRow<F>],
    valid: &[DatasetRow<F>],
    params: &TrainParams,
    seed: u64,
) -> Result<(SparsifierModel<F>, TrainReport)> {
    let balance = match params {
        TrainParams::Gbdt(p) => p.balance_classes,
        TrainParams::Logistic(p) => p.balance_classes,
    };
    let data = Prepared::new(rows, balance)?;
    let (family, loss_history) = match params {
        TrainParams::Gbdt(p) => {
            let (g, hist) = fit_gbdt(&data, p)?;
            (ModelFamily::Gbdt(g), hist)
        }
        TrainParams::Logistic(p) => (ModelFamily::Logistic(fit_logistic(&data, p)), Vec::new()),
    };
    let model = SparsifierModel {
        family,
        layout_version: LAYOUT_VERSION,
        seed,
    };
    let report = TrainReport {
        train_loss: weighted_log_loss(&model, rows),
        train_accuracy: accuracy(&model, rows, 0.5),
        valid_loss: (!valid.is_empty()).then(|| weighted_log_loss(&model, valid)),
        valid_accuracy: (!valid.is_empty()).then(|| accuracy(&model, valid, 0.5)),
        loss_history,
    };
    Ok((model, report))
}

/// Trains every configuration and keeps the one with the lowest validation
/// loss (earliest wins ties).
pub fn grid_search<F: Scalar>(
    rows: &[DatasetRow<F>],
    valid: &[DatasetRow<F>],
    grid: &[TrainParams],
    seed: u64,
) -> Result<(SparsifierModel<F>, TrainReport, usize)> {
    if valid.is_empty() {
        return Err(Error::Training("grid search needs validation rows".into()));
    }
    let mut best: Option<(SparsifierModel<F>, TrainReport, usize)> = None;
    for (i, params) in grid.iter().enumerate() {
        let (model, report) = train(rows, valid, params, seed)?;
        log::info!(
            "grid {i}: {params:?} valid loss {:.5}",
            report.valid_loss.unwrap_or(f64::NAN)
        );
        let better = match &best {
            None => true,
            Some((_, r, _)) => report.valid_loss < r.valid_loss,
        };
        if better {
            best = Some((model, report, i));
        }
    }
    best.ok_or_else(|| Error::Training("empty grid".into()))
}

/// Aggregated, weight-normalized training data.
struct Prepared<F> {
    x: Vec<[F; NUM_FEATURES]>,
    y: Vec<u8>,
    w: Vec<f64>,
}

impl<F: Scalar> Prepared<F> {
    fn new(rows: &[DatasetRow<F>], balance_classes: bool) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Training("no training rows".into()));
        }
        if let Some(r) = rows
            .iter()
            .find(|r| r.features.0.iter().any(|v| !v.is_finite()) || !(r.weight >= F::zero()))
        {
            return Err(Error::Training(format!(
                "row for node {} of instance {} has non-finite data",
                r.node_id, r.instance_id
            )));
        }
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let key_cmp = |a: &DatasetRow<F>, b: &DatasetRow<F>| -> Ordering {
            for (x, y) in a.features.0.iter().zip(&b.features.0) {
                match x.as_f64().total_cmp(&y.as_f64()) {
                    Ordering::Equal => continue,
                    o => return o,
                }
            }
            a.label.cmp(&b.label)
        };
        order.sort_by(|&a, &b| key_cmp(&rows[a], &rows[b]));
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut w: Vec<f64> = Vec::new();
        let mut prev: Option<usize> = None;
        for i in order {
            let r = &rows[i];
            if let Some(p) = prev {
                if key_cmp(&rows[p], r) == Ordering::Equal {
                    *w.last_mut().unwrap() += r.weight.as_f64();
                    continue;
                }
            }
            prev = Some(i);
            x.push(r.features.0);
            y.push(r.label);
            w.push(r.weight.as_f64());
        }
        let total: f64 = w.iter().sum();
        let (pos, neg) = y.iter().zip(&w).fold((0.0, 0.0), |(p, n), (&l, &wt)| {
            if l == 1 {
                (p + wt, n)
            } else {
                (p, n + wt)
            }
        });
        if pos <= 0.0 || neg <= 0.0 {
            return Err(Error::Training(
                "training rows must contain both classes with positive weight".into(),
            ));
        }
        let pos_scale = if balance_classes { neg / pos } else { 1.0 };
        let total = if balance_classes { 2.0 * neg } else { total };
        let scale = x.len() as f64 / total;
        for (v, &l) in w.iter_mut().zip(&y) {
            *v *= if l == 1 { pos_scale * scale } else { scale };
        }
        Ok(Prepared { x, y, w })
    }

    fn len(&self) -> usize {
        self.y.len()
    }

    fn positive_rate(&self) -> f64 {
        let pos: f64 = self
            .y
            .iter()
            .zip(&self.w)
            .filter(|(&l, _)| l == 1)
            .map(|(_, &w)| w)
            .sum();
        pos / self.w.iter().sum::<f64>()
    }
}

/// Per-feature cut points; a value falls in the first bin whose cut is >= it.
struct Binning<F> {
    cuts: Vec<Vec<F>>,
}

impl<F: Scalar> Binning<F> {
    fn new(data: &Prepared<F>, max_bins: usize) -> Self {
        let max_bins = max_bins.clamp(2, 256);
        let cuts = (0..NUM_FEATURES)
            .map(|f| {
                let mut vals: Vec<F> = data.x.iter().map(|r| r[f]).collect();
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut distinct = vals.clone();
                distinct.dedup();
                if distinct.len() <= max_bins {
                    return distinct;
                }
                let n = vals.len();
                let mut cuts: Vec<F> = (1..=max_bins).map(|j| vals[(j * n) / max_bins - 1]).collect();
                cuts.dedup();
                cuts
            })
            .collect();
        Binning { cuts }
    }

    fn bin(&self, f: usize, v: F) -> u8 {
        let cuts = &self.cuts[f];
        cuts.partition_point(|&c| c < v).min(cuts.len() - 1) as u8
    }
}

#[derive(Clone, Copy, Default)]
struct GradPair {
    g: f64,
    h: f64,
}

const HIST_BINS: usize = 256;

type Histogram = Vec<GradPair>;

struct SplitChoice {
    feature: usize,
    bin: u8,
    gain: f64,
}

fn fit_gbdt<F: Scalar>(data: &Prepared<F>, p: &GbdtParams) -> Result<(Gbdt<F>, Vec<f64>)> {
    if p.max_depth == 0 || p.rounds == 0 {
        return Err(Error::Training("rounds and max_depth must be positive".into()));
    }
    let n = data.len();
    let binning = Binning::new(data, p.max_bins);
    let bins: Vec<u8> = data
        .x
        .iter()
        .flat_map(|row| (0..NUM_FEATURES).map(|f| binning.bin(f, row[f])).collect::<Vec<_>>())
        .collect();

    let rate = data.positive_rate().clamp(1e-6, 1.0 - 1e-6);
    let base_margin = F::of((rate / (1.0 - rate)).ln());
    let mut margin = vec![base_margin.as_f64(); n];
    let mut grads = vec![GradPair::default(); n];
    let mut trees = Vec::with_capacity(p.rounds);
    let mut history = Vec::with_capacity(p.rounds);
    let total_w: f64 = data.w.iter().sum();

    for _ in 0..p.rounds {
        for i in 0..n {
            let prob = sigmoid(margin[i]);
            let w = data.w[i];
            grads[i] = GradPair {
                g: w * (prob - data.y[i] as f64),
                h: (w * prob * (1.0 - prob)).max(1e-16),
            };
        }
        let (tree, leaf_of) = grow_tree(&bins, &grads, &binning, p);
        for i in 0..n {
            margin[i] += tree.nodes[leaf_of[i] as usize].value.as_f64();
        }
        trees.push(tree);
        let loss: f64 = (0..n)
            .map(|i| data.w[i] * bce(sigmoid(margin[i]), data.y[i]))
            .sum::<f64>()
            / total_w;
        history.push(loss);
    }
    Ok((
        Gbdt {
            params: p.clone(),
            base_margin,
            trees,
        },
        history,
    ))
}

/// Depth-wise tree growth. Returns the tree and the leaf index of every row.
fn grow_tree<F: Scalar>(
    bins: &[u8],
    grads: &[GradPair],
    binning: &Binning<F>,
    p: &GbdtParams,
) -> (Tree<F>, Vec<u32>) {
    let n = grads.len();
    let mut nodes: Vec<TreeNode<F>> = Vec::new();
    let mut leaf_of = vec![0u32; n];

    struct Open {
        node: usize,
        rows: Vec<u32>,
        hist: Histogram,
        total: GradPair,
    }

    let root_rows: Vec<u32> = (0..n as u32).collect();
    let root_hist = build_histogram(bins, grads, &root_rows);
    let root_total = sum_pairs(grads, &root_rows);
    nodes.push(leaf_node(root_total, p));
    let mut open = vec![Open {
        node: 0,
        rows: root_rows,
        hist: root_hist,
        total: root_total,
    }];

    for _depth in 0..p.max_depth {
        let mut next = Vec::new();
        for o in open {
            let Some(split) = best_split(&o.hist, o.total, binning, p) else {
                for &r in &o.rows {
                    leaf_of[r as usize] = o.node as u32;
                }
                continue;
            };
            let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = o
                .rows
                .iter()
                .partition(|&&r| bins[r as usize * NUM_FEATURES + split.feature] <= split.bin);
            let left_total = sum_pairs(grads, &left_rows);
            let right_total = GradPair {
                g: o.total.g - left_total.g,
                h: o.total.h - left_total.h,
            };
            // build the smaller child's histogram, derive the other
            let (small, small_is_left) = if left_rows.len() <= right_rows.len() {
                (&left_rows, true)
            } else {
                (&right_rows, false)
            };
            let small_hist = build_histogram(bins, grads, small);
            let mut big_hist = o.hist;
            for (b, s) in big_hist.iter_mut().zip(&small_hist) {
                b.g -= s.g;
                b.h -= s.h;
            }
            let (left_hist, right_hist) = if small_is_left {
                (small_hist, big_hist)
            } else {
                (big_hist, small_hist)
            };

            let left = nodes.len();
            nodes.push(leaf_node(left_total, p));
            let right = nodes.len();
            nodes.push(leaf_node(right_total, p));
            let parent = &mut nodes[o.node];
            parent.feature = Some(split.feature as u32);
            parent.threshold = binning.cuts[split.feature][split.bin as usize];
            parent.left = left as u32;
            parent.right = right as u32;
            parent.value = F::zero();
            next.push(Open {
                node: left,
                rows: left_rows,
                hist: left_hist,
                total: left_total,
            });
            next.push(Open {
                node: right,
                rows: right_rows,
                hist: right_hist,
                total: right_total,
            });
        }
        open = next;
    }
    for o in open {
        for &r in &o.rows {
            leaf_of[r as usize] = o.node as u32;
        }
    }
    (Tree { nodes }, leaf_of)
}

fn leaf_node<F: Scalar>(total: GradPair, p: &GbdtParams) -> TreeNode<F> {
    TreeNode {
        feature: None,
        threshold: F::zero(),
        left: 0,
        right: 0,
        value: F::of(-total.g / (total.h + p.lambda) * p.learning_rate),
    }
}

fn sum_pairs(grads: &[GradPair], rows: &[u32]) -> GradPair {
    rows.iter().fold(GradPair::default(), |acc, &r| {
        let gp = grads[r as usize];
        GradPair {
            g: acc.g + gp.g,
            h: acc.h + gp.h,
        }
    })
}

fn build_histogram(bins: &[u8], grads: &[GradPair], rows: &[u32]) -> Histogram {
    let mut hist = vec![GradPair::default(); NUM_FEATURES * HIST_BINS];
    for &r in rows {
        let gp = grads[r as usize];
        let row = &bins[r as usize * NUM_FEATURES..(r as usize + 1) * NUM_FEATURES];
        for (f, &b) in row.iter().enumerate() {
            let cell = &mut hist[f * HIST_BINS + b as usize];
            cell.g += gp.g;
            cell.h += gp.h;
        }
    }
    hist
}

fn best_split<F: Scalar>(
    hist: &Histogram,
    total: GradPair,
    binning: &Binning<F>,
    p: &GbdtParams,
) -> Option<SplitChoice> {
    let score = |g: f64, h: f64| g * g / (h + p.lambda);
    let parent = score(total.g, total.h);
    let mut best: Option<SplitChoice> = None;
    for f in 0..NUM_FEATURES {
        let nb = binning.cuts[f].len();
        let mut gl = 0.0;
        let mut hl = 0.0;
        for b in 0..nb.saturating_sub(1) {
            let cell = hist[f * HIST_BINS + b];
            gl += cell.g;
            hl += cell.h;
            let gr = total.g - gl;
            let hr = total.h - hl;
            if hl < p.min_child_weight || hr < p.min_child_weight {
                continue;
            }
            let gain = score(gl, hl) + score(gr, hr) - parent;
            if gain > 1e-12 && best.as_ref().is_none_or(|s| gain > s.gain) {
                best = Some(SplitChoice {
                    feature: f,
                    bin: b as u8,
                    gain,
                });
            }
        }
    }
    best
}

fn fit_logistic<F: Scalar>(data: &Prepared<F>, p: &LogisticParams) -> Logistic<F> {
    let n = data.len();
    let d = NUM_FEATURES;
    let total_w: f64 = data.w.iter().sum();
    let mut mean = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for j in 0..d {
        let m = data.x.iter().map(|r| r[j].as_f64()).sum::<f64>() / n as f64;
        let var = data
            .x
            .iter()
            .map(|r| (r[j].as_f64() - m).powi(2))
            .sum::<f64>()
            / n as f64;
        mean[j] = m;
        scale[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
    }
    // round to the stored precision so training and prediction agree
    let mean: Vec<f64> = mean.into_iter().map(|v| F::of(v).as_f64()).collect();
    let scale: Vec<f64> = scale.into_iter().map(|v| F::of(v).as_f64()).collect();
    let z: Vec<Vec<f64>> = data
        .x
        .iter()
        .map(|r| (0..d).map(|j| (r[j].as_f64() - mean[j]) / scale[j]).collect())
        .collect();
    let mut coef = vec![0.0; d];
    let rate = data.positive_rate().clamp(1e-6, 1.0 - 1e-6);
    let mut bias = (rate / (1.0 - rate)).ln();
    for _ in 0..p.iterations {
        let mut gc = vec![0.0; d];
        let mut gb = 0.0;
        #[allow(clippy::needless_range_loop)]
        for i in 0..n {
            let m = bias + coef.iter().zip(&z[i]).map(|(c, v)| c * v).sum::<f64>();
            let r = data.w[i] * (sigmoid(m) - data.y[i] as f64);
            gb += r;
            for j in 0..d {
                gc[j] += r * z[i][j];
            }
        }
        bias -= p.learning_rate * gb / total_w;
        for j in 0..d {
            coef[j] -= p.learning_rate * (gc[j] / total_w + p.l2 * coef[j]);
        }
    }
    Logistic {
        params: p.clone(),
        bias: F::of(bias),
        coef: coef.into_iter().map(F::of).collect(),
        mean: mean.into_iter().map(F::of).collect(),
        scale: scale.into_iter().map(F::of).collect(),
    }
}

/// Scores of the interior nodes of one diagram, indexed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeScores<F> {
    scores: Vec<Option<F>>,
}

impl<F: Scalar> NodeScores<F> {
    pub fn from_vec(scores: Vec<Option<F>>) -> Self {
        NodeScores { scores }
    }

    pub fn get(&self, id: NodeId) -> Option<F> {
        self.scores.get(id as usize).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.scores.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn id_bound(&self) -> usize {
        self.scores.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, F)> + '_ {
        self.scores
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|s| (i as NodeId, s)))
    }
}

/// Scores every interior node of `bdd`.
pub fn score_bdd<F: Scalar, S: NodeScorer<F>>(scorer: &S, inst: &Instance, bdd: &Bdd) -> Result<NodeScores<F>> {
    if scorer.layout_version() != LAYOUT_VERSION {
        return Err(Error::Version {
            expected: scorer.layout_version(),
            found: LAYOUT_VERSION,
        });
    }
    let extractor = FeatureExtractor::new(inst);
    let mut scores = vec![None; bdd.id_bound()];
    for id in bdd.node_ids() {
        if bdd.is_interior(id) {
            let f = extractor.extract::<F>(bdd, id)?;
            scores[id as usize] = Some(scorer.score(&f));
        }
    }
    Ok(NodeScores { scores })
}

/// Interior nodes scoring at least `tau`, plus root and terminal.
pub fn threshold_keepset<F: Scalar>(bdd: &Bdd, scores: &NodeScores<F>, tau: F) -> KeepSet {
    KeepSet::from_ids(
        bdd,
        scores.iter().filter(|&(_, s)| s >= tau).map(|(id, _)| id),
    )
}

/// Cost of re-admitting a node: `max(0, tau - score)`.
pub fn resistance<F: Scalar>(score: F, tau: F) -> F {
    (tau - score).max(F::zero())
}

/// Per-node resistances over the whole diagram; root and terminal get zero.
pub fn resistances<F: Scalar>(bdd: &Bdd, scores: &NodeScores<F>, tau: F) -> Vec<Option<F>> {
    let mut out = vec![None; bdd.id_bound()];
    for id in bdd.node_ids() {
        out[id as usize] = if bdd.is_interior(id) {
            scores.get(id).map(|s| resistance(s, tau))
        } else {
            Some(F::zero())
        };
    }
    out
}

/// Area under the ROC curve of `scores` against binary `labels` (ties count half).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return 0.5;
    }
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(x0: f64, x1: f64, label: u8, weight: f64) -> DatasetRow<f64> {
        let mut f = [0.0; NUM_FEATURES];
        f[0] = x0;
        f[1] = x1;
        DatasetRow {
            features: FeatureVector(f),
            label,
            weight,
            instance_id: 0,
            node_id: 0,
        }
    }

    fn separable() -> Vec<DatasetRow<f64>> {
        (0..40)
            .map(|i| {
                let x = i as f64 / 40.0;
                row(x, (i * 7 % 11) as f64, (x > 0.45) as u8, 1.0 + (i % 3) as f64)
            })
            .collect()
    }

    fn small_params() -> TrainParams {
        TrainParams::Gbdt(GbdtParams {
            rounds: 30,
            max_depth: 3,
            ..GbdtParams::default()
        })
    }

    #[test]
    fn resistance_cases() {
        assert!((resistance(0.4, 0.5) - 0.1f64).abs() < 1e-12);
        assert_eq!(resistance(0.9, 0.5), 0.0f64);
        assert_eq!(resistance(0.0, 1.0), 1.0f64);
    }

    #[test]
    fn separable_fit_is_perfect() {
        let rows = separable();
        for params in [small_params(), TrainParams::Logistic(LogisticParams::default())] {
            let (model, report) = train(&rows, &[], &params, 1).unwrap();
            assert_eq!(report.train_accuracy, 1.0, "{params:?}");
            for r in &rows {
                let s = model.score(&r.features);
                assert!((0.0..=1.0).contains(&s));
                assert_eq!(s >= 0.5, r.label == 1);
            }
        }
    }

    #[test]
    fn duplication_does_not_change_the_model() {
        let rows = separable();
        let doubled: Vec<_> = rows.iter().chain(rows.iter()).cloned().collect();
        for params in [small_params(), TrainParams::Logistic(LogisticParams::default())] {
            let (a, _) = train(&rows, &[], &params, 3).unwrap();
            let (b, _) = train(&doubled, &[], &params, 3).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn boosting_loss_decreases() {
        let rows: Vec<_> = (0..200)
            .map(|i| {
                let x = (i * 37 % 200) as f64 / 200.0;
                let noisy = (i % 13 == 0) as u8;
                row(x, (i % 5) as f64, ((x > 0.3) as u8) ^ noisy, 1.0)
            })
            .collect();
        let (_, report) = train(&rows, &[], &small_params(), 0).unwrap();
        for w in report.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", report.loss_history);
        }
    }

    #[test]
    fn single_class_is_an_error() {
        let rows: Vec<_> = (0..5).map(|i| row(i as f64, 0.0, 1, 1.0)).collect();
        assert!(matches!(
            train(&rows, &[], &small_params(), 0),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn model_text_round_trip() {
        let rows = separable();
        for params in [small_params(), TrainParams::Logistic(LogisticParams::default())] {
            let (model, _) = train(&rows, &[], &params, 5).unwrap();
            let text = model.to_text();
            let back = SparsifierModel::<f64>::parse(&text).unwrap();
            assert_eq!(back, model);
            assert_eq!(back.to_text(), text);
            assert!(SparsifierModel::<f32>::parse(&text).is_err());
        }
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let (model, _) = train(&separable(), &[], &small_params(), 5).unwrap();
        let x = separable()[0].features;
        assert!(matches!(
            model.predict(&x, LAYOUT_VERSION + 1),
            Err(Error::Version { .. })
        ));
        assert!(model.predict(&x, LAYOUT_VERSION).is_ok());
    }

    #[test]
    fn auc_cases() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), 1.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[false, true]), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.1], &[false, true]), 0.0);
    }
}
