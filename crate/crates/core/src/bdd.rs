//! Layered binary decision diagrams for knapsack instances.
//!
//! A [`Bdd`] owns its node table. Node ids are dense `u32`s assigned in
//! compilation order, so within a compiled diagram ids increase layer by
//! layer. Induced sub-diagrams keep the id space of their source and only
//! mark removed nodes as absent, which lets keep-sets, scores and datasets
//! refer to the same ids across every derived diagram.
//!
//! Arc values are never stored: the one-arc leaving layer `l` carries column
//! `l` of the profit matrix, the zero-arc carries the zero vector.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::instance::Instance;

pub type NodeId = u32;

/// Default node budget for compilation (~1 GB of node tables).
pub const DEFAULT_NODE_BUDGET: usize = 20_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node {
    /// 1-based layer; layer `l` decides item `l - 1` (0-based).
    pub layer: u32,
    /// Accumulated weight. The terminal merges many states and records 0.
    pub state: u32,
    /// Zero-arc and one-arc heads.
    pub children: [Option<NodeId>; 2],
}

impl Node {
    pub fn zero_child(&self) -> Option<NodeId> {
        self.children[0]
    }

    pub fn one_child(&self) -> Option<NodeId> {
        self.children[1]
    }
}

/// An incoming arc as seen from its head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InArc {
    pub parent: NodeId,
    pub domain: u8,
}

#[derive(Debug, Clone)]
pub struct Bdd {
    instance: Arc<Instance>,
    nodes: Vec<Node>,
    present: Vec<bool>,
    layers: Vec<Vec<NodeId>>,
    parent_offsets: Vec<u32>,
    parent_arcs: Vec<InArc>,
    root: NodeId,
    terminal: NodeId,
}

impl Bdd {
    fn from_parts(instance: Arc<Instance>, nodes: Vec<Node>, present: Vec<bool>) -> Self {
        let num_layers = instance.num_items() + 1;
        let mut layers = vec![Vec::new(); num_layers];
        for (id, node) in nodes.iter().enumerate() {
            if present[id] {
                layers[node.layer as usize - 1].push(id as NodeId);
            }
        }
        let root = 0;
        let terminal = (nodes.len() - 1) as NodeId;
        let (parent_offsets, parent_arcs) = build_parents(&nodes, &present);
        Bdd {
            instance,
            nodes,
            present,
            layers,
            parent_offsets,
            parent_arcs,
            root,
            terminal,
        }
    }

    pub fn instance(&self) -> &Instance {
        &self.instance
    }

    pub fn shared_instance(&self) -> &Arc<Instance> {
        &self.instance
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn terminal(&self) -> NodeId {
        self.terminal
    }

    /// Size of the id space, including ids of absent nodes.
    pub fn id_bound(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.present.get(id as usize).copied().unwrap_or(false)
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    /// Present node ids of a 1-based layer.
    pub fn layer(&self, layer: usize) -> &[NodeId] {
        &self.layers[layer - 1]
    }

    pub fn layers(&self) -> &[Vec<NodeId>] {
        &self.layers
    }

    /// Present nodes in id order.
    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.layers.iter().flatten().copied()
    }

    pub fn is_interior(&self, id: NodeId) -> bool {
        id != self.root && id != self.terminal && self.contains(id)
    }

    pub fn parents(&self, id: NodeId) -> &[InArc] {
        let lo = self.parent_offsets[id as usize] as usize;
        let hi = self.parent_offsets[id as usize + 1] as usize;
        &self.parent_arcs[lo..hi]
    }

    pub fn node_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn arc_count(&self) -> usize {
        self.parent_arcs.len()
    }

    /// Value of arc component `k` for an arc leaving `layer` with `domain`.
    #[inline]
    pub fn arc_value(&self, layer: u32, domain: u8, k: usize) -> u32 {
        if domain == 0 {
            0
        } else {
            self.instance.profits()[k][layer as usize - 1]
        }
    }

    /// Full K-vector of an arc leaving `layer` with `domain`.
    pub fn arc_vector(&self, layer: u32, domain: u8) -> Vec<u32> {
        (0..self.instance.num_objectives())
            .map(|k| self.arc_value(layer, domain, k))
            .collect()
    }

    /// Decodes a root-terminal path given as the sequence of arc domains,
    /// returning `None` if the path leaves the diagram.
    pub fn follow(&self, solution: &[bool]) -> Option<Vec<NodeId>> {
        let mut path = vec![self.root];
        let mut cur = self.root;
        for &x in solution {
            cur = self.node(cur).children[x as usize]?;
            path.push(cur);
        }
        (cur == self.terminal).then_some(path)
    }

    /// Sub-diagram induced by `keep`: other nodes and every arc touching
    /// them are removed. Unreachable leftovers are not pruned.
    pub fn induced(&self, keep: &KeepSet) -> Result<Bdd> {
        if !keep.contains(self.root) || !keep.contains(self.terminal) {
            return Err(Error::Contract(
                "keep-set must contain the root and the terminal".into(),
            ));
        }
        if keep.id_bound() != self.id_bound() {
            return Err(Error::Contract(format!(
                "keep-set spans {} ids, diagram spans {}",
                keep.id_bound(),
                self.id_bound()
            )));
        }
        if let Some(stray) = keep.iter().find(|&id| !self.contains(id)) {
            return Err(Error::Contract(format!(
                "keep-set references node {stray} absent from the diagram"
            )));
        }
        let present: Vec<bool> = (0..self.id_bound())
            .map(|i| keep.contains(i as NodeId))
            .collect();
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                let mut node = *node;
                if present[i] {
                    for c in node.children.iter_mut() {
                        if matches!(c, Some(h) if !present[*h as usize]) {
                            *c = None;
                        }
                    }
                } else {
                    node.children = [None, None];
                }
                node
            })
            .collect();
        Ok(Bdd::from_parts(self.instance.clone(), nodes, present))
    }

    /// Nodes reachable from the root.
    pub fn forward_reachable(&self) -> Vec<bool> {
        let mut reach = vec![false; self.id_bound()];
        reach[self.root as usize] = true;
        for layer in &self.layers {
            for &id in layer {
                if !reach[id as usize] {
                    continue;
                }
                for c in self.node(id).children.iter().flatten() {
                    reach[*c as usize] = true;
                }
            }
        }
        reach
    }

    /// Nodes from which the terminal is reachable.
    pub fn backward_reachable(&self) -> Vec<bool> {
        let mut reach = vec![false; self.id_bound()];
        reach[self.terminal as usize] = self.contains(self.terminal);
        for layer in self.layers.iter().rev() {
            for &id in layer {
                if self
                    .node(id)
                    .children
                    .iter()
                    .flatten()
                    .any(|c| reach[*c as usize])
                {
                    reach[id as usize] = true;
                }
            }
        }
        reach
    }

    /// Whether a root-terminal path exists, and the deepest layer holding a
    /// root-reachable node.
    pub fn connectivity(&self) -> Connectivity {
        let reach = self.forward_reachable();
        let last = self
            .layers
            .iter()
            .enumerate()
            .rev()
            .find(|(_, layer)| layer.iter().any(|&id| reach[id as usize]))
            .map(|(i, _)| i + 1)
            .unwrap_or(0);
        Connectivity {
            connected: reach[self.terminal as usize],
            last_connected_layer: last,
        }
    }

    pub fn is_connected(&self) -> bool {
        self.connectivity().connected
    }

    pub fn stats(&self) -> BddStats {
        let per_layer_widths: Vec<usize> = self.layers.iter().map(Vec::len).collect();
        BddStats {
            node_count: per_layer_widths.iter().sum(),
            max_width: per_layer_widths.iter().copied().max().unwrap_or(0),
            per_layer_widths,
        }
    }

    /// Text dump: one `id state zero one` line per node, `-` for absent arcs.
    pub fn to_dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# bdd instance={} layers={} nodes={}",
            self.instance.content_hash(),
            self.num_layers(),
            self.node_count()
        );
        let fmt = |c: Option<NodeId>| c.map_or_else(|| "-".to_string(), |c| c.to_string());
        for (l, layer) in self.layers.iter().enumerate() {
            let _ = writeln!(out, "# layer {}", l + 1);
            for &id in layer {
                let node = self.node(id);
                let _ = writeln!(
                    out,
                    "{id} {} {} {}",
                    node.state,
                    fmt(node.children[0]),
                    fmt(node.children[1])
                );
            }
        }
        out
    }

    pub fn write_dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_dump()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Connectivity {
    pub connected: bool,
    pub last_connected_layer: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BddStats {
    pub node_count: usize,
    pub max_width: usize,
    pub per_layer_widths: Vec<usize>,
}

fn build_parents(nodes: &[Node], present: &[bool]) -> (Vec<u32>, Vec<InArc>) {
    let mut indegree = vec![0u32; nodes.len() + 1];
    for (id, node) in nodes.iter().enumerate() {
        if !present[id] {
            continue;
        }
        for c in node.children.iter().flatten() {
            indegree[*c as usize + 1] += 1;
        }
    }
    for i in 1..indegree.len() {
        indegree[i] += indegree[i - 1];
    }
    let offsets = indegree;
    let mut fill = offsets.clone();
    let mut arcs = vec![
        InArc {
            parent: 0,
            domain: 0
        };
        *offsets.last().unwrap() as usize
    ];
    for (id, node) in nodes.iter().enumerate() {
        if !present[id] {
            continue;
        }
        for (d, c) in node.children.iter().enumerate() {
            if let Some(c) = c {
                let slot = &mut fill[*c as usize];
                arcs[*slot as usize] = InArc {
                    parent: id as NodeId,
                    domain: d as u8,
                };
                *slot += 1;
            }
        }
    }
    (offsets, arcs)
}

/// Node ids retained from a diagram. Always sized to the diagram's id space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeepSet {
    mask: Vec<bool>,
    len: usize,
}

impl KeepSet {
    /// Only the root and terminal of `bdd`.
    pub fn endpoints(bdd: &Bdd) -> Self {
        let mut keep = KeepSet {
            mask: vec![false; bdd.id_bound()],
            len: 0,
        };
        keep.insert(bdd.root());
        keep.insert(bdd.terminal());
        keep
    }

    /// Every present node of `bdd`.
    pub fn all(bdd: &Bdd) -> Self {
        let mut keep = Self::endpoints(bdd);
        for id in bdd.node_ids() {
            keep.insert(id);
        }
        keep
    }

    /// Endpoints plus `ids`.
    pub fn from_ids(bdd: &Bdd, ids: impl IntoIterator<Item = NodeId>) -> Self {
        let mut keep = Self::endpoints(bdd);
        for id in ids {
            keep.insert(id);
        }
        keep
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.mask.get(id as usize).copied().unwrap_or(false)
    }

    /// Returns true if the node was not already kept.
    pub fn insert(&mut self, id: NodeId) -> bool {
        let slot = &mut self.mask[id as usize];
        if *slot {
            false
        } else {
            *slot = true;
            self.len += 1;
            true
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn id_bound(&self) -> usize {
        self.mask.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &k)| k)
            .map(|(i, _)| i as NodeId)
    }

    pub fn is_subset(&self, other: &KeepSet) -> bool {
        self.iter().all(|id| other.contains(id))
    }
}

const NONE: u32 = u32::MAX;

/// Top-down DP compilation with exact state merging.
pub fn compile_exact(inst: &Instance) -> Result<Bdd> {
    compile_exact_with_budget(inst, DEFAULT_NODE_BUDGET)
}

pub fn compile_exact_with_budget(inst: &Instance, max_nodes: usize) -> Result<Bdd> {
    compile(Arc::new(inst.clone()), None, max_nodes)
}

/// Width-restricted compilation: layers wider than
/// `ceil(beta_percent / 100 * exact max width)` keep their smallest states.
pub fn compile_restricted_width(inst: &Instance, beta_percent: u32) -> Result<Bdd> {
    if beta_percent == 0 || beta_percent > 100 {
        return Err(Error::Validation(format!(
            "width percentage must lie in 1..=100, got {beta_percent}"
        )));
    }
    let exact = compile_exact(inst)?;
    let exact_width = exact.stats().max_width as u64;
    let max_width = (beta_percent as u64 * exact_width).div_ceil(100).max(1) as usize;
    compile(exact.instance.clone(), Some(max_width), DEFAULT_NODE_BUDGET)
}

fn compile(instance: Arc<Instance>, max_width: Option<usize>, max_nodes: usize) -> Result<Bdd> {
    let n = instance.num_items();
    let capacity = instance.capacity();
    let mut nodes = vec![Node {
        layer: 1,
        state: 0,
        children: [None, None],
    }];
    let mut current: Vec<NodeId> = vec![0];
    // state -> slot in `pending` for the layer under construction
    let mut slot_of = vec![NONE; capacity as usize + 1];

    for item in 0..n {
        let w = instance.weight(item);
        let next_layer = item as u32 + 2;
        if item + 1 == n {
            let terminal = nodes.len() as NodeId;
            for &id in &current {
                let s = nodes[id as usize].state;
                nodes[id as usize].children[0] = Some(terminal);
                if s as u64 + w as u64 <= capacity as u64 {
                    nodes[id as usize].children[1] = Some(terminal);
                }
            }
            nodes.push(Node {
                layer: next_layer,
                state: 0,
                children: [None, None],
            });
            break;
        }

        // Candidate states of the next layer in insertion order.
        let mut pending: Vec<u32> = Vec::new();
        for &id in &current {
            let s = nodes[id as usize].state;
            for (d, t) in [(0u8, s as u64), (1u8, s as u64 + w as u64)] {
                if d == 1 && t > capacity as u64 {
                    continue;
                }
                let t = t as u32;
                if slot_of[t as usize] == NONE {
                    slot_of[t as usize] = pending.len() as u32;
                    pending.push(t);
                }
            }
        }

        let mut kept = pending.clone();
        if let Some(mw) = max_width {
            if kept.len() > mw {
                let mut by_state: Vec<u32> = kept.clone();
                by_state.sort_unstable();
                let cutoff = by_state[mw - 1];
                kept.retain(|&s| s <= cutoff);
            }
        }

        if nodes.len() + kept.len() + 1 > max_nodes {
            for s in pending {
                slot_of[s as usize] = NONE;
            }
            return Err(Error::Resource(format!(
                "node budget of {max_nodes} exceeded while building layer {next_layer} of {}",
                n + 1
            )));
        }

        // Assign ids in insertion order; dropped states map to NONE.
        for &s in &pending {
            slot_of[s as usize] = NONE;
        }
        let first = nodes.len() as NodeId;
        for (i, &s) in kept.iter().enumerate() {
            slot_of[s as usize] = first + i as NodeId;
            nodes.push(Node {
                layer: next_layer,
                state: s,
                children: [None, None],
            });
        }
        for &id in &current {
            let s = nodes[id as usize].state;
            let zero = slot_of[s as usize];
            if zero != NONE {
                nodes[id as usize].children[0] = Some(zero);
            }
            let t = s as u64 + w as u64;
            if t <= capacity as u64 {
                let one = slot_of[t as usize];
                if one != NONE {
                    nodes[id as usize].children[1] = Some(one);
                }
            }
        }
        for &s in &kept {
            slot_of[s as usize] = NONE;
        }
        current = (first..first + kept.len() as NodeId).collect();
    }

    let mut present = vec![true; nodes.len()];
    if max_width.is_some() {
        prune_dead_ends(&mut nodes, &mut present);
    }
    Ok(Bdd::from_parts(instance, nodes, present))
}

/// Removes nodes that cannot reach the terminal. Only truncation creates them.
fn prune_dead_ends(nodes: &mut [Node], present: &mut [bool]) {
    let terminal = nodes.len() - 1;
    let mut alive = vec![false; nodes.len()];
    alive[terminal] = true;
    for id in (0..terminal).rev() {
        let node = &mut nodes[id];
        for c in node.children.iter_mut() {
            if matches!(c, Some(h) if !alive[*h as usize]) {
                *c = None;
            }
        }
        alive[id] = node.children.iter().any(Option::is_some);
    }
    // the root stays even if it lost every arc
    alive[0] = true;
    present.copy_from_slice(&alive);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::generate_instance;

    fn small() -> Instance {
        Instance::new(10, vec![3, 1, 6, 4, 5], vec![vec![1; 5], vec![1; 5]]).unwrap()
    }

    #[test]
    fn saturated_node_has_no_one_arc() {
        let bdd = compile_exact(&small()).unwrap();
        let sat = bdd
            .layer(4)
            .iter()
            .copied()
            .find(|&id| bdd.node(id).state == 10)
            .expect("state 10 in layer 4");
        assert!(bdd.node(sat).one_child().is_none());
        assert!(bdd.node(sat).zero_child().is_some());
        // x1 = x2 = x3 = 1 leads there
        let path = bdd.follow(&[true, true, true, false, false]).unwrap();
        assert_eq!(path[3], sat);
    }

    #[test]
    fn single_item() {
        let inst = Instance::new(1, vec![1], vec![vec![1]; 3]).unwrap();
        let bdd = compile_exact(&inst).unwrap();
        assert_eq!(bdd.node_count(), 2);
        let root = bdd.node(bdd.root());
        assert_eq!(root.children, [Some(bdd.terminal()), Some(bdd.terminal())]);
        assert_eq!(bdd.parents(bdd.terminal()).len(), 2);
    }

    #[test]
    fn layers_and_arcs_are_consistent() {
        let inst = generate_instance(2, 10, 3);
        let bdd = compile_exact(&inst).unwrap();
        assert_eq!(bdd.num_layers(), 11);
        assert_eq!(bdd.layer(1), &[bdd.root()]);
        assert_eq!(bdd.layer(11), &[bdd.terminal()]);
        for id in bdd.node_ids() {
            let node = bdd.node(id);
            assert!(node.state <= inst.capacity());
            for c in node.children.iter().flatten() {
                assert_eq!(bdd.node(*c).layer, node.layer + 1);
            }
            if id != bdd.terminal() {
                assert!(node.zero_child().is_some());
            }
        }
        for layer in bdd.layers() {
            let mut states: Vec<u32> = layer.iter().map(|&i| bdd.node(i).state).collect();
            states.sort_unstable();
            states.dedup();
            assert_eq!(states.len(), layer.len());
        }
    }

    #[test]
    fn stats_are_consistent() {
        let inst = generate_instance(3, 20, 8);
        let bdd = compile_exact(&inst).unwrap();
        let stats = bdd.stats();
        assert_eq!(stats.node_count, stats.per_layer_widths.iter().sum::<usize>());
        assert!(stats.max_width <= inst.capacity() as usize + 1);
        assert_eq!(bdd.arc_count(), bdd.parents(bdd.terminal()).len() + {
            bdd.node_ids()
                .filter(|&i| i != bdd.terminal())
                .map(|i| bdd.parents(i).len())
                .sum::<usize>()
        });
    }

    #[test]
    fn compilation_is_canonical() {
        let inst = generate_instance(2, 12, 1);
        let a = compile_exact(&inst).unwrap();
        let b = compile_exact(&inst).unwrap();
        assert_eq!(a.to_dump(), b.to_dump());
    }

    #[test]
    fn budget_error_names_layer() {
        let inst = generate_instance(2, 30, 1);
        let err = compile_exact_with_budget(&inst, 50).unwrap_err();
        match err {
            Error::Resource(msg) => assert!(msg.contains("layer"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn full_width_restriction_matches_exact() {
        let inst = generate_instance(2, 14, 4);
        let exact = compile_exact(&inst).unwrap();
        let full = compile_restricted_width(&inst, 100).unwrap();
        assert_eq!(exact.to_dump(), full.to_dump());
    }

    #[test]
    fn restriction_caps_width() {
        let inst = generate_instance(2, 16, 4);
        let exact = compile_exact(&inst).unwrap();
        let limit = (20 * exact.stats().max_width).div_ceil(100);
        let rbdd = compile_restricted_width(&inst, 20).unwrap();
        assert!(rbdd.stats().max_width <= limit);
        assert!(rbdd.is_connected());
        assert!(compile_restricted_width(&inst, 0).is_err());
    }

    #[test]
    fn induced_identity_and_contract() {
        let inst = generate_instance(2, 8, 2);
        let bdd = compile_exact(&inst).unwrap();
        let same = bdd.induced(&KeepSet::all(&bdd)).unwrap();
        assert_eq!(same.to_dump(), bdd.to_dump());

        let mut no_root = KeepSet::all(&bdd);
        no_root.mask[0] = false;
        assert!(matches!(bdd.induced(&no_root), Err(Error::Contract(_))));
    }

    #[test]
    fn emptied_layer_disconnects() {
        let inst = generate_instance(2, 8, 2);
        let bdd = compile_exact(&inst).unwrap();
        assert_eq!(
            bdd.connectivity(),
            Connectivity {
                connected: true,
                last_connected_layer: 9
            }
        );
        let keep = KeepSet::from_ids(
            &bdd,
            bdd.node_ids().filter(|&i| bdd.node(i).layer != 3),
        );
        let sub = bdd.induced(&keep).unwrap();
        assert_eq!(
            sub.connectivity(),
            Connectivity {
                connected: false,
                last_connected_layer: 2
            }
        );
    }

    #[test]
    fn dump_marks_missing_arcs() {
        let bdd = compile_exact(&small()).unwrap();
        let dump = bdd.to_dump();
        assert!(dump.starts_with("# bdd instance="));
        assert!(dump.lines().any(|l| l.ends_with(" -")));
    }
}
