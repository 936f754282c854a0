//! Connectivity repair of sparsified diagrams and the deployment loop.
//!
//! Two stitchers are provided. The MIP stitcher selects a minimum-resistance
//! node set in which every selected node lies on a root-terminal path; it is
//! solved here by a small branch-and-bound and can be exported as an LP file
//! for larger diagrams. The min-resistance heuristic bridges the last
//! connected layer a few layers ahead at a time.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bdd::{compile_exact_with_budget, compile_restricted_width, Bdd, KeepSet, NodeId, DEFAULT_NODE_BUDGET};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::pareto::{enumerate_frontier, Frontier};
use crate::scalar::Scalar;
use crate::sparsifier::{resistance, resistances, score_bdd, threshold_keepset, NodeScorer, NodeScores};

/// Largest diagram the built-in MIP solver accepts.
pub const DEFAULT_MIP_NODE_BUDGET: usize = 500;
/// Branch-and-bound nodes explored before giving up.
pub const DEFAULT_MIP_SEARCH_LIMIT: u64 = 2_000_000;
pub const DEFAULT_ALPHA: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    /// Node selection, by node id.
    X(NodeId),
    /// Arc selection, by index into `StitchModel::arcs`.
    Y(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// A selected node keeps an outgoing arc.
    OutArc,
    /// Incoming arcs are only used by selected nodes.
    InArcUpper,
    /// A selected non-root node keeps an incoming arc.
    InArcLower,
    /// Zero-resistance nodes are selected.
    FixOne,
    /// `y_a = x_tail * x_head`, with the terminal always selected.
    Link,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub name: String,
    pub kind: RowKind,
    pub terms: Vec<(i64, Var)>,
    pub sense: Sense,
    pub rhs: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArcVar {
    pub tail: NodeId,
    pub domain: u8,
    pub head: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchModel<F> {
    /// Node variables in id order; every node but the terminal.
    pub nodes: Vec<NodeId>,
    /// Objective coefficient of each entry of `nodes`.
    pub resistance: Vec<F>,
    pub arcs: Vec<ArcVar>,
    pub rows: Vec<Row>,
    pub terminal: NodeId,
}

impl<F: Scalar> StitchModel<F> {
    pub fn num_variables(&self) -> usize {
        self.nodes.len() + self.arcs.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn count_rows(&self, kind: RowKind) -> usize {
        self.rows.iter().filter(|r| r.kind == kind).count()
    }

    pub fn fixed_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.rows.iter().filter(|r| r.kind == RowKind::FixOne).map(|r| match r.terms[0].1 {
            Var::X(id) => id,
            Var::Y(_) => unreachable!("fix rows hold node variables"),
        })
    }

    /// Objective of a selection, summed in node id order.
    pub fn objective_of(&self, selected: &KeepSet) -> F {
        self.nodes
            .iter()
            .zip(&self.resistance)
            .filter(|(id, _)| selected.contains(**id))
            .fold(F::zero(), |acc, (_, &r)| acc + r)
    }

    fn var_name(&self, v: Var) -> String {
        match v {
            Var::X(id) => format!("x{id}"),
            Var::Y(i) => {
                let a = self.arcs[i];
                format!("y{}_{}", a.tail, a.domain)
            }
        }
    }

    /// CPLEX LP text.
    pub fn to_lp(&self) -> String {
        let mut out = String::new();
        out.push_str("\\ connectivity repair\nMinimize\n obj:");
        for (id, r) in self.nodes.iter().zip(&self.resistance) {
            if *r > F::zero() {
                let _ = write!(out, " + {r} x{id}");
            }
        }
        out.push_str("\nSubject To\n");
        for row in &self.rows {
            let _ = write!(out, " {}:", row.name);
            for &(c, v) in &row.terms {
                let sign = if c < 0 { '-' } else { '+' };
                let mag = c.unsigned_abs();
                if mag == 1 {
                    let _ = write!(out, " {sign} {}", self.var_name(v));
                } else {
                    let _ = write!(out, " {sign} {mag} {}", self.var_name(v));
                }
            }
            let op = match row.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, " {op} {}", row.rhs);
        }
        out.push_str("Binary\n");
        for &id in &self.nodes {
            let _ = writeln!(out, " x{id}");
        }
        for i in 0..self.arcs.len() {
            let _ = writeln!(out, " {}", self.var_name(Var::Y(i)));
        }
        out.push_str("End\n");
        out
    }
}

/// Counts recovered from an LP file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LpSummary {
    pub variables: usize,
    pub constraints: usize,
    /// Rows of the form `x = 1`.
    pub fixed_to_one: usize,
    /// Variables with a nonzero objective coefficient.
    pub objective_terms: usize,
}

/// Reads back the section structure of an LP file written by [`StitchModel::to_lp`].
pub fn parse_lp_summary(text: &str) -> Result<LpSummary> {
    #[derive(PartialEq)]
    enum Section {
        None,
        Objective,
        Constraints,
        Binary,
        Done,
    }
    let mut section = Section::None;
    let mut summary = LpSummary {
        variables: 0,
        constraints: 0,
        fixed_to_one: 0,
        objective_terms: 0,
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('\\') {
            continue;
        }
        match line.to_ascii_lowercase().as_str() {
            "minimize" => {
                section = Section::Objective;
                continue;
            }
            "subject to" => {
                section = Section::Constraints;
                continue;
            }
            "binary" => {
                section = Section::Binary;
                continue;
            }
            "end" => {
                section = Section::Done;
                continue;
            }
            _ => {}
        }
        match section {
            Section::Objective => {
                let body = line.split_once(':').map_or(line, |(_, b)| b);
                summary.objective_terms += body
                    .split_whitespace()
                    .filter(|t| t.starts_with('x') || t.starts_with('y'))
                    .count();
            }
            Section::Constraints => {
                let (_, body) = line
                    .split_once(':')
                    .ok_or_else(|| Error::parse(i + 1, "constraint without a name"))?;
                summary.constraints += 1;
                let toks: Vec<&str> = body.split_whitespace().collect();
                if toks.len() == 4 && toks[0] == "+" && toks[2] == "=" && toks[3] == "1" {
                    summary.fixed_to_one += 1;
                }
            }
            Section::Binary => summary.variables += line.split_whitespace().count(),
            Section::None | Section::Done => {
                return Err(Error::parse(i + 1, format!("unexpected line {line:?}")));
            }
        }
    }
    if section != Section::Done {
        return Err(Error::parse(text.lines().count(), "missing `End`"));
    }
    Ok(summary)
}

pub fn export_stitch_model<F: Scalar>(model: &StitchModel<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_lp()).map_err(|e| Error::io(path, e))
}

/// Builds the connectivity-repair program for `bdd`.
///
/// `resistances` is indexed by node id and must hold a nonnegative value for
/// every node except the terminal.
pub fn build_stitch_model<F: Scalar>(bdd: &Bdd, resistances: &[Option<F>]) -> Result<StitchModel<F>> {
    let terminal = bdd.terminal();
    let root = bdd.root();
    let mut nodes = Vec::new();
    let mut res = Vec::new();
    for id in bdd.node_ids().filter(|&id| id != terminal) {
        let r = resistances
            .get(id as usize)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Contract(format!("no resistance for node {id}")))?;
        if !(r >= F::zero()) {
            return Err(Error::Contract(format!("resistance of node {id} is {r}")));
        }
        nodes.push(id);
        res.push(r);
    }
    let mut arcs = Vec::new();
    let mut out_arcs: Vec<Vec<usize>> = vec![Vec::new(); bdd.id_bound()];
    let mut in_arcs: Vec<Vec<usize>> = vec![Vec::new(); bdd.id_bound()];
    for &id in &nodes {
        for (d, c) in bdd.node(id).children.iter().enumerate() {
            if let Some(h) = *c {
                out_arcs[id as usize].push(arcs.len());
                in_arcs[h as usize].push(arcs.len());
                arcs.push(ArcVar {
                    tail: id,
                    domain: d as u8,
                    head: h,
                });
            }
        }
    }

    let mut rows = Vec::new();
    for (&id, &r) in nodes.iter().zip(&res) {
        let mut terms = vec![(1, Var::X(id))];
        terms.extend(out_arcs[id as usize].iter().map(|&a| (-1, Var::Y(a))));
        rows.push(Row {
            name: format!("out{id}"),
            kind: RowKind::OutArc,
            terms,
            sense: Sense::Le,
            rhs: 0,
        });
        let ins = &in_arcs[id as usize];
        if !ins.is_empty() {
            let mut terms: Vec<(i64, Var)> = ins.iter().map(|&a| (1, Var::Y(a))).collect();
            terms.push((-(ins.len() as i64), Var::X(id)));
            rows.push(Row {
                name: format!("inub{id}"),
                kind: RowKind::InArcUpper,
                terms,
                sense: Sense::Le,
                rhs: 0,
            });
        }
        if id != root {
            let mut terms: Vec<(i64, Var)> = ins.iter().map(|&a| (1, Var::Y(a))).collect();
            terms.push((-1, Var::X(id)));
            rows.push(Row {
                name: format!("inlb{id}"),
                kind: RowKind::InArcLower,
                terms,
                sense: Sense::Ge,
                rhs: 0,
            });
        }
        if r == F::zero() {
            rows.push(Row {
                name: format!("fix{id}"),
                kind: RowKind::FixOne,
                terms: vec![(1, Var::X(id))],
                sense: Sense::Eq,
                rhs: 1,
            });
        }
    }
    for (i, a) in arcs.iter().enumerate() {
        let tag = format!("{}_{}", a.tail, a.domain);
        if a.head == terminal {
            rows.push(Row {
                name: format!("lk{tag}"),
                kind: RowKind::Link,
                terms: vec![(1, Var::Y(i)), (-1, Var::X(a.tail))],
                sense: Sense::Eq,
                rhs: 0,
            });
        } else {
            for (suffix, terms, sense, rhs) in [
                ("t", vec![(1, Var::Y(i)), (-1, Var::X(a.tail))], Sense::Le, 0),
                ("h", vec![(1, Var::Y(i)), (-1, Var::X(a.head))], Sense::Le, 0),
                (
                    "b",
                    vec![(1, Var::Y(i)), (-1, Var::X(a.tail)), (-1, Var::X(a.head))],
                    Sense::Ge,
                    -1,
                ),
            ] {
                rows.push(Row {
                    name: format!("lk{tag}{suffix}"),
                    kind: RowKind::Link,
                    terms,
                    sense,
                    rhs,
                });
            }
        }
    }
    Ok(StitchModel {
        nodes,
        resistance: res,
        arcs,
        rows,
        terminal,
    })
}

/// Whether every node of `selected` lies on a root-terminal path inside it.
pub fn selection_is_feasible(bdd: &Bdd, selected: &KeepSet) -> bool {
    if !selected.contains(bdd.root()) || !selected.contains(bdd.terminal()) {
        return false;
    }
    let (fwd, bwd) = reach_within(bdd, |id| selected.contains(id));
    selected
        .iter()
        .all(|id| fwd[id as usize] && bwd[id as usize])
}

fn reach_within(bdd: &Bdd, allowed: impl Fn(NodeId) -> bool) -> (Vec<bool>, Vec<bool>) {
    let mut fwd = vec![false; bdd.id_bound()];
    let mut bwd = vec![false; bdd.id_bound()];
    fwd[bdd.root() as usize] = allowed(bdd.root());
    for layer in bdd.layers() {
        for &id in layer {
            if !fwd[id as usize] {
                continue;
            }
            for &c in bdd.node(id).children.iter().flatten() {
                if allowed(c) {
                    fwd[c as usize] = true;
                }
            }
        }
    }
    bwd[bdd.terminal() as usize] = allowed(bdd.terminal());
    for layer in bdd.layers().iter().rev() {
        for &id in layer {
            if allowed(id)
                && bdd
                    .node(id)
                    .children
                    .iter()
                    .flatten()
                    .any(|&c| bwd[c as usize])
            {
                bwd[id as usize] = true;
            }
        }
    }
    (fwd, bwd)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchSolution<F> {
    pub keep: KeepSet,
    pub objective: F,
    /// Branch-and-bound nodes explored.
    pub explored: u64,
}

pub fn solve_stitch_exact<F: Scalar>(model: &StitchModel<F>, bdd: &Bdd) -> Result<StitchSolution<F>> {
    solve_stitch_exact_with_limits(model, bdd, DEFAULT_MIP_NODE_BUDGET, DEFAULT_MIP_SEARCH_LIMIT)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Fix {
    Zero,
    One,
    Free,
}

struct Search<'a, F> {
    bdd: &'a Bdd,
    cost: Vec<f64>,
    state: Vec<Fix>,
    best: f64,
    best_set: Option<Vec<Fix>>,
    explored: u64,
    limit: u64,
    _scalar: std::marker::PhantomData<F>,
}

impl<F: Scalar> Search<'_, F> {
    /// Cheapest path cost (free nodes priced, fixed ones free) from the root
    /// to each node and from each node to the terminal, over non-zero nodes.
    fn path_costs(&self) -> (Vec<f64>, Vec<f64>) {
        let bdd = self.bdd;
        let n = bdd.id_bound();
        let price = |id: NodeId| match self.state[id as usize] {
            Fix::Free => self.cost[id as usize],
            _ => 0.0,
        };
        let mut down = vec![f64::INFINITY; n];
        let mut up = vec![f64::INFINITY; n];
        for layer in bdd.layers() {
            for &id in layer {
                if self.state[id as usize] == Fix::Zero {
                    continue;
                }
                let best_parent = if id == bdd.root() {
                    0.0
                } else {
                    bdd.parents(id)
                        .iter()
                        .map(|a| down[a.parent as usize])
                        .fold(f64::INFINITY, f64::min)
                };
                down[id as usize] = best_parent + price(id);
            }
        }
        for layer in bdd.layers().iter().rev() {
            for &id in layer {
                if self.state[id as usize] == Fix::Zero {
                    continue;
                }
                let best_child = if id == bdd.terminal() {
                    0.0
                } else {
                    bdd.node(id)
                        .children
                        .iter()
                        .flatten()
                        .map(|&c| up[c as usize])
                        .fold(f64::INFINITY, f64::min)
                };
                up[id as usize] = best_child + price(id);
            }
        }
        (down, up)
    }

    fn fixed_cost(&self) -> f64 {
        self.state
            .iter()
            .zip(&self.cost)
            .filter(|(s, _)| **s == Fix::One)
            .map(|(_, c)| c)
            .sum()
    }

    /// A free neighbour to branch on: the cheapest free parent (or child) of
    /// the selected node with the fewest candidates that lacks a selected
    /// parent (or child). `Err(())` if some selected node has no candidates.
    fn branch_node(&self, down: &[f64], up: &[f64]) -> std::result::Result<Option<NodeId>, ()> {
        let bdd = self.bdd;
        let is = |id: NodeId, f: Fix| self.state[id as usize] == f;
        let mut pick: Option<(usize, f64, NodeId)> = None;
        let mut consider = |cands: Vec<(f64, NodeId)>| -> std::result::Result<(), ()> {
            let Some(&(c, v)) = cands.iter().min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))) else {
                return Err(());
            };
            if pick.is_none_or(|(n, pc, _)| (cands.len(), c) < (n, pc)) {
                pick = Some((cands.len(), c, v));
            }
            Ok(())
        };
        for id in bdd.node_ids().filter(|&id| is(id, Fix::One)) {
            if id != bdd.root() && !bdd.parents(id).iter().any(|a| is(a.parent, Fix::One)) {
                consider(
                    bdd.parents(id)
                        .iter()
                        .filter(|a| is(a.parent, Fix::Free))
                        .map(|a| (down[a.parent as usize], a.parent))
                        .collect(),
                )?;
            }
            if id != bdd.terminal() {
                let children = bdd.node(id).children;
                if !children.iter().flatten().any(|&c| is(c, Fix::One)) {
                    consider(
                        children
                            .iter()
                            .flatten()
                            .filter(|&&c| is(c, Fix::Free))
                            .map(|&c| (up[c as usize], c))
                            .collect(),
                    )?;
                }
            }
        }
        Ok(pick.map(|(_, _, v)| v))
    }

    fn run(&mut self) -> Result<()> {
        self.explored += 1;
        if self.explored > self.limit {
            return Err(Error::Resource(format!(
                "stitch search exceeded {} branch-and-bound nodes; export the model and use an external solver",
                self.limit
            )));
        }
        let (down, up) = self.path_costs();
        let mut through = 0.0f64;
        for (id, s) in self.state.iter().enumerate() {
            if *s == Fix::One {
                let c = down[id] + up[id];
                if !c.is_finite() {
                    return Ok(());
                }
                through = through.max(c);
            }
        }
        let fixed = self.fixed_cost();
        if fixed + through >= self.best - 1e-12 && self.best_set.is_some() {
            return Ok(());
        }
        // every selected node having a selected parent and child is the same
        // as every selected node lying on a selected root-terminal path
        let v = match self.branch_node(&down, &up) {
            Err(()) => return Ok(()),
            Ok(None) => {
                if self.best_set.is_none() || fixed < self.best {
                    self.best = fixed;
                    self.best_set = Some(
                        self.state
                            .iter()
                            .map(|&s| if s == Fix::One { Fix::One } else { Fix::Zero })
                            .collect(),
                    );
                }
                return Ok(());
            }
            Ok(Some(v)) => v,
        };
        for choice in [Fix::One, Fix::Zero] {
            self.state[v as usize] = choice;
            self.run()?;
        }
        self.state[v as usize] = Fix::Free;
        Ok(())
    }
}

/// Exact solution of the repair program by depth-first branch-and-bound.
pub fn solve_stitch_exact_with_limits<F: Scalar>(
    model: &StitchModel<F>,
    bdd: &Bdd,
    max_nodes: usize,
    search_limit: u64,
) -> Result<StitchSolution<F>> {
    if bdd.node_count() > max_nodes {
        return Err(Error::Resource(format!(
            "diagram has {} nodes, the built-in stitch solver accepts at most {max_nodes}; export the model and use an external solver",
            bdd.node_count()
        )));
    }
    let mut cost = vec![0.0; bdd.id_bound()];
    let mut state = vec![Fix::Zero; bdd.id_bound()];
    for (&id, r) in model.nodes.iter().zip(&model.resistance) {
        if !bdd.contains(id) {
            return Err(Error::Contract(format!("model node {id} is not in the diagram")));
        }
        cost[id as usize] = r.as_f64();
        state[id as usize] = Fix::Free;
    }
    for id in model.fixed_nodes() {
        state[id as usize] = Fix::One;
    }
    state[model.terminal as usize] = Fix::One;
    if state[bdd.root() as usize] == Fix::Free {
        // the root is on every path
        state[bdd.root() as usize] = Fix::One;
    }
    let mut search = Search::<F> {
        bdd,
        cost,
        state,
        best: f64::INFINITY,
        best_set: None,
        explored: 0,
        limit: search_limit,
        _scalar: std::marker::PhantomData,
    };
    if let Some(greedy) = greedy_cover(&search) {
        search.best = greedy
            .iter()
            .zip(&search.cost)
            .filter(|(s, _)| **s == Fix::One)
            .map(|(_, c)| c)
            .sum();
        search.best_set = Some(greedy);
    }
    search.run()?;
    let best = search.best_set.ok_or_else(|| {
        Error::Contract("stitch model is infeasible: a fixed node cannot reach both ends".into())
    })?;
    let keep = KeepSet::from_ids(
        bdd,
        best.iter()
            .enumerate()
            .filter(|(_, s)| **s == Fix::One)
            .map(|(id, _)| id as NodeId),
    );
    debug_assert!(selection_is_feasible(bdd, &keep));
    Ok(StitchSolution {
        objective: model.objective_of(&keep),
        keep,
        explored: search.explored,
    })
}

/// Feasible starting point: route every uncovered fixed node along its
/// cheapest path, treating already selected nodes as free.
fn greedy_cover<F: Scalar>(search: &Search<'_, F>) -> Option<Vec<Fix>> {
    let bdd = search.bdd;
    let mut sel: Vec<bool> = search.state.iter().map(|s| *s == Fix::One).collect();
    let allowed: Vec<bool> = search.state.iter().map(|s| *s != Fix::Zero).collect();
    let targets: Vec<NodeId> = bdd.node_ids().filter(|&id| sel[id as usize]).collect();
    for t in targets {
        let (fwd, bwd) = reach_within(bdd, |id| sel[id as usize]);
        if fwd[t as usize] && bwd[t as usize] {
            continue;
        }
        let price = |id: NodeId| if sel[id as usize] { 0.0 } else { search.cost[id as usize] };
        let n = bdd.id_bound();
        let mut down = vec![f64::INFINITY; n];
        let mut down_from: Vec<Option<NodeId>> = vec![None; n];
        for layer in bdd.layers() {
            for &id in layer {
                if !allowed[id as usize] {
                    continue;
                }
                if id == bdd.root() {
                    down[id as usize] = price(id);
                    continue;
                }
                for a in bdd.parents(id) {
                    let c = down[a.parent as usize] + price(id);
                    if c < down[id as usize] {
                        down[id as usize] = c;
                        down_from[id as usize] = Some(a.parent);
                    }
                }
            }
        }
        let mut up = vec![f64::INFINITY; n];
        let mut up_to: Vec<Option<NodeId>> = vec![None; n];
        for layer in bdd.layers().iter().rev() {
            for &id in layer {
                if !allowed[id as usize] {
                    continue;
                }
                if id == bdd.terminal() {
                    up[id as usize] = price(id);
                    continue;
                }
                for &c in bdd.node(id).children.iter().flatten() {
                    let v = up[c as usize] + price(id);
                    if v < up[id as usize] {
                        up[id as usize] = v;
                        up_to[id as usize] = Some(c);
                    }
                }
            }
        }
        if !(down[t as usize] + up[t as usize]).is_finite() {
            return None;
        }
        let mut cur = Some(t);
        while let Some(c) = cur {
            sel[c as usize] = true;
            cur = down_from[c as usize];
        }
        let mut cur = Some(t);
        while let Some(c) = cur {
            sel[c as usize] = true;
            cur = up_to[c as usize];
        }
    }
    Some(
        sel.iter()
            .map(|&s| if s { Fix::One } else { Fix::Zero })
            .collect(),
    )
}

/// Result of one min-resistance pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MinResistanceStep {
    pub keep: KeepSet,
    /// Newly admitted nodes, ascending.
    pub added: Vec<NodeId>,
    /// Last connected layer before the pass.
    pub from_layer: usize,
    /// Lookahead actually used (grows when the window holds no path).
    pub alpha_used: usize,
}

/// One pass of the lookahead heuristic.
///
/// Paths are searched in `bdd` itself, so pruned nodes can be re-admitted.
/// A path costs the summed resistance of its nodes that are not yet kept.
pub fn min_resistance_stitch<F: Scalar>(
    bdd: &Bdd,
    scores: &NodeScores<F>,
    keep: &KeepSet,
    tau: F,
    alpha: usize,
) -> Result<MinResistanceStep> {
    if alpha == 0 {
        return Err(Error::Validation("lookahead must be at least 1".into()));
    }
    let sub = bdd.induced(keep)?;
    let conn = sub.connectivity();
    if conn.connected {
        return Err(Error::Contract("keep-set is already connected".into()));
    }
    let lc = conn.last_connected_layer;
    let reach = sub.forward_reachable();
    let starts: Vec<NodeId> = bdd
        .layer(lc)
        .iter()
        .copied()
        .filter(|&id| keep.contains(id) && reach[id as usize])
        .collect();
    if starts.is_empty() {
        return Err(Error::Contract(format!("no connected kept node in layer {lc}")));
    }
    let price = |id: NodeId| -> F {
        if keep.contains(id) {
            F::zero()
        } else {
            scores.get(id).map_or(F::zero(), |s| resistance(s, tau))
        }
    };
    let last = bdd.num_layers();
    let mut a = alpha;
    loop {
        let target = (lc + a).min(last);
        let mut best: Option<F> = None;
        for &s in &starts {
            walk(bdd, s, target, F::zero(), &price, &mut |_, cost| {
                if best.is_none_or(|b| cost < b) {
                    best = Some(cost);
                }
            });
        }
        if let Some(best) = best {
            let mut out = keep.clone();
            let mut added = Vec::new();
            let mut path = Vec::new();
            for &s in &starts {
                collect_min_paths(bdd, s, target, F::zero(), best, &price, &mut path, &mut |p| {
                    for &id in p {
                        if out.insert(id) {
                            added.push(id);
                        }
                    }
                });
            }
            added.sort_unstable();
            return Ok(MinResistanceStep {
                keep: out,
                added,
                from_layer: lc,
                alpha_used: a,
            });
        }
        if target == last {
            return Err(Error::Contract(format!(
                "no path leaves layer {lc} in the source diagram"
            )));
        }
        log::debug!("no path within lookahead {a} from layer {lc}; widening");
        a += 1;
    }
}

fn walk<F: Scalar>(
    bdd: &Bdd,
    id: NodeId,
    target: usize,
    cost: F,
    price: &impl Fn(NodeId) -> F,
    visit: &mut impl FnMut(NodeId, F),
) {
    if bdd.node(id).layer as usize == target {
        visit(id, cost);
        return;
    }
    for &c in bdd.node(id).children.iter().flatten() {
        walk(bdd, c, target, cost + price(c), price, visit);
    }
}

#[allow(clippy::too_many_arguments)]
fn collect_min_paths<F: Scalar>(
    bdd: &Bdd,
    id: NodeId,
    target: usize,
    cost: F,
    best: F,
    price: &impl Fn(NodeId) -> F,
    path: &mut Vec<NodeId>,
    emit: &mut impl FnMut(&[NodeId]),
) {
    path.push(id);
    if bdd.node(id).layer as usize == target {
        if cost == best {
            emit(path);
        }
    } else {
        for &c in bdd.node(id).children.iter().flatten() {
            collect_min_paths(bdd, c, target, cost + price(c), best, price, path, emit);
        }
    }
    path.pop();
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stitcher {
    Mip,
    MinResistance(usize),
    None,
}

impl fmt::Display for Stitcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stitcher::Mip => write!(f, "mip"),
            Stitcher::MinResistance(a) => write!(f, "mr({a})"),
            Stitcher::None => write!(f, "none"),
        }
    }
}

impl FromStr for Stitcher {
    type Err = Error;

    /// Accepts `mip`, `none`, `mr` and `mr(<alpha>)`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mip" => Ok(Stitcher::Mip),
            "none" => Ok(Stitcher::None),
            "mr" => Ok(Stitcher::MinResistance(DEFAULT_ALPHA)),
            _ => s
                .strip_prefix("mr(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|a| a.parse().ok())
                .filter(|&a| a >= 1)
                .map(Stitcher::MinResistance)
                .ok_or_else(|| Error::Validation(format!("unknown stitcher {s:?}"))),
        }
    }
}

/// Outcome of repairing one keep-set.
#[derive(Debug, Clone, PartialEq)]
pub struct StitchOutcome {
    pub keep: KeepSet,
    pub iterations: usize,
    /// Summed resistance of every node admitted by the stitcher.
    pub added_resistance: f64,
    pub connected: bool,
}

/// Repairs `keep` until connected (or returns it untouched for `Stitcher::None`).
pub fn stitch<F: Scalar>(
    bdd: &Bdd,
    scores: &NodeScores<F>,
    keep: &KeepSet,
    tau: F,
    stitcher: Stitcher,
) -> Result<StitchOutcome> {
    let connected = bdd.induced(keep)?.is_connected();
    if connected || stitcher == Stitcher::None {
        return Ok(StitchOutcome {
            keep: keep.clone(),
            iterations: 0,
            added_resistance: 0.0,
            connected,
        });
    }
    let res = resistances(bdd, scores, tau);
    let added_cost = |added: &KeepSet| -> f64 {
        added
            .iter()
            .filter(|&id| !keep.contains(id))
            .map(|id| res[id as usize].map_or(0.0, |r| r.as_f64()))
            .sum()
    };
    match stitcher {
        Stitcher::Mip => {
            // kept nodes are fixed in whatever state the scores give them
            let mut fixed = res.clone();
            for id in keep.iter() {
                fixed[id as usize] = Some(F::zero());
            }
            let model = build_stitch_model(bdd, &fixed)?;
            let sol = solve_stitch_exact(&model, bdd)?;
            Ok(StitchOutcome {
                added_resistance: added_cost(&sol.keep),
                connected: bdd.induced(&sol.keep)?.is_connected(),
                keep: sol.keep,
                iterations: 1,
            })
        }
        Stitcher::MinResistance(alpha) => {
            let mut cur = keep.clone();
            let mut iterations = 0;
            let mut last = 0;
            loop {
                let conn = bdd.induced(&cur)?.connectivity();
                if conn.connected {
                    break;
                }
                assert!(
                    conn.last_connected_layer > last,
                    "stitching did not advance past layer {last}"
                );
                last = conn.last_connected_layer;
                cur = min_resistance_stitch(bdd, scores, &cur, tau, alpha)?.keep;
                iterations += 1;
            }
            Ok(StitchOutcome {
                added_resistance: added_cost(&cur),
                keep: cur,
                iterations,
                connected: true,
            })
        }
        Stitcher::None => unreachable!(),
    }
}

/// Run statistics for one method on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    /// Nodes of the scored (exact) diagram, or of the compiled one for baselines.
    pub inc: usize,
    /// Nodes of the diagram that was enumerated.
    pub rnc: usize,
    /// Dominance comparisons during enumeration.
    pub comp: u64,
    pub time_ms: f64,
    pub stitch_iterations: usize,
    pub stitcher: String,
    pub tau: Option<f64>,
    pub frontier_size: usize,
    /// Nodes surviving the threshold, before stitching.
    pub threshold_kept: Option<usize>,
    pub connected: bool,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub frontier: Frontier,
    pub report: RunReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeployOptions {
    pub stitcher: Stitcher,
    /// Node budget of the exact compilation.
    pub node_budget: usize,
}

impl Default for DeployOptions {
    fn default() -> Self {
        DeployOptions {
            stitcher: Stitcher::MinResistance(DEFAULT_ALPHA),
            node_budget: DEFAULT_NODE_BUDGET,
        }
    }
}

/// Exact diagram plus full enumeration.
pub fn run_exact(inst: &Instance, node_budget: usize) -> Result<RunOutput> {
    let start = Instant::now();
    let bdd = compile_exact_with_budget(inst, node_budget)?;
    let (frontier, _) = enumerate_frontier(&bdd)?;
    let n = bdd.node_count();
    Ok(RunOutput {
        report: RunReport {
            method: "exact".into(),
            inc: n,
            rnc: n,
            comp: frontier.comparison_count,
            time_ms: start.elapsed().as_secs_f64() * 1e3,
            stitch_iterations: 0,
            stitcher: Stitcher::None.to_string(),
            tau: None,
            frontier_size: frontier.len(),
            threshold_kept: None,
            connected: true,
        },
        frontier,
    })
}

/// Width-restricted baseline.
pub fn run_restricted(inst: &Instance, beta_percent: u32) -> Result<RunOutput> {
    let start = Instant::now();
    let bdd = compile_restricted_width(inst, beta_percent)?;
    let (frontier, _) = enumerate_frontier(&bdd)?;
    let n = bdd.node_count();
    Ok(RunOutput {
        report: RunReport {
            method: format!("rbdd({beta_percent})"),
            inc: n,
            rnc: n,
            comp: frontier.comparison_count,
            time_ms: start.elapsed().as_secs_f64() * 1e3,
            stitch_iterations: 0,
            stitcher: Stitcher::None.to_string(),
            tau: None,
            frontier_size: frontier.len(),
            threshold_kept: None,
            connected: true,
        },
        frontier,
    })
}

/// Compile, score, threshold, stitch, enumerate.
///
/// Scores are computed once; stitching does not re-score. With
/// `Stitcher::None` a disconnected keep-set yields an empty frontier and a
/// report with `connected = false`.
pub fn deploy<F: Scalar, S: NodeScorer<F>>(
    inst: &Instance,
    scorer: &S,
    tau: F,
    opts: &DeployOptions,
) -> Result<RunOutput> {
    Ok(deploy_many(inst, scorer, &[tau], opts)?.remove(0))
}

/// [`deploy`] at several thresholds sharing one compilation and scoring pass.
/// Each report's time includes the shared work.
pub fn deploy_many<F: Scalar, S: NodeScorer<F>>(
    inst: &Instance,
    scorer: &S,
    taus: &[F],
    opts: &DeployOptions,
) -> Result<Vec<RunOutput>> {
    let start = Instant::now();
    let bdd = compile_exact_with_budget(inst, opts.node_budget)?;
    let scores = score_bdd(scorer, inst, &bdd)?;
    let shared = start.elapsed();
    taus.iter()
        .map(|&tau| {
            let start = Instant::now();
            let kept = threshold_keepset(&bdd, &scores, tau);
            let outcome = stitch(&bdd, &scores, &kept, tau, opts.stitcher)?;
            let (frontier, rnc) = if outcome.connected {
                let sub = bdd.induced(&outcome.keep)?;
                (enumerate_frontier(&sub)?.0, sub.node_count())
            } else {
                (Frontier::default(), outcome.keep.len())
            };
            Ok(RunOutput {
                report: RunReport {
                    method: "morbdd".into(),
                    inc: bdd.node_count(),
                    rnc,
                    comp: frontier.comparison_count,
                    time_ms: (shared + start.elapsed()).as_secs_f64() * 1e3,
                    stitch_iterations: outcome.iterations,
                    stitcher: opts.stitcher.to_string(),
                    tau: Some(tau.as_f64()),
                    frontier_size: frontier.len(),
                    threshold_kept: Some(kept.len()),
                    connected: outcome.connected,
                },
                frontier,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdd::compile_exact;
    use crate::instance::Instance;

    fn small_bdd() -> Bdd {
        let inst = Instance::new(5, vec![3, 2, 4], vec![vec![4, 3, 5], vec![2, 6, 1]]).unwrap();
        compile_exact(&inst).unwrap()
    }

    fn zero_res(bdd: &Bdd) -> Vec<Option<f64>> {
        (0..bdd.id_bound())
            .map(|i| (i as NodeId != bdd.terminal()).then_some(0.0))
            .collect()
    }

    #[test]
    fn zero_resistance_fixes_everything() {
        let bdd = small_bdd();
        let model = build_stitch_model(&bdd, &zero_res(&bdd)).unwrap();
        assert_eq!(model.count_rows(RowKind::FixOne), bdd.node_count() - 1);
        assert_eq!(model.num_variables(), bdd.node_count() - 1 + bdd.arc_count());
        let sol = solve_stitch_exact(&model, &bdd).unwrap();
        assert_eq!(sol.objective, 0.0);
        assert_eq!(sol.keep, KeepSet::all(&bdd));
    }

    #[test]
    fn missing_resistance_is_contract_error() {
        let bdd = small_bdd();
        let mut res = zero_res(&bdd);
        res[1] = None;
        assert!(matches!(
            build_stitch_model(&bdd, &res),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn oversized_diagram_is_resource_error() {
        let bdd = small_bdd();
        let model = build_stitch_model(&bdd, &zero_res(&bdd)).unwrap();
        assert!(matches!(
            solve_stitch_exact_with_limits(&model, &bdd, 3, 10),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn lp_objective_lists_positive_nodes_only() {
        let bdd = small_bdd();
        let mut res = zero_res(&bdd);
        res[1] = Some(0.25);
        let model = build_stitch_model(&bdd, &res).unwrap();
        let lp = model.to_lp();
        let obj = lp.lines().find(|l| l.starts_with(" obj:")).unwrap();
        assert_eq!(obj, " obj: + 0.25 x1");
        let summary = parse_lp_summary(&lp).unwrap();
        assert_eq!(summary.objective_terms, 1);
        assert_eq!(summary.variables, model.num_variables());
        assert_eq!(summary.constraints, model.num_constraints());
        assert_eq!(summary.fixed_to_one, model.count_rows(RowKind::FixOne));
    }

    #[test]
    fn stitcher_parsing() {
        assert_eq!("mip".parse::<Stitcher>().unwrap(), Stitcher::Mip);
        assert_eq!("mr".parse::<Stitcher>().unwrap(), Stitcher::MinResistance(2));
        assert_eq!("mr(3)".parse::<Stitcher>().unwrap(), Stitcher::MinResistance(3));
        assert!("mr(0)".parse::<Stitcher>().is_err());
        assert!("greedy".parse::<Stitcher>().is_err());
        assert_eq!(Stitcher::MinResistance(2).to_string(), "mr(2)");
    }

    #[test]
    fn already_connected_keepset_costs_nothing() {
        let bdd = small_bdd();
        let path = bdd.follow(&[false, false, false]).unwrap();
        let keep = KeepSet::from_ids(&bdd, path.iter().copied());
        let mut res: Vec<Option<f64>> = vec![None; bdd.id_bound()];
        for id in bdd.node_ids() {
            if id != bdd.terminal() {
                res[id as usize] = Some(if keep.contains(id) { 0.0 } else { 0.5 });
            }
        }
        let model = build_stitch_model(&bdd, &res).unwrap();
        let sol = solve_stitch_exact(&model, &bdd).unwrap();
        assert_eq!(sol.objective, 0.0);
        assert_eq!(sol.keep, keep);
    }
}
