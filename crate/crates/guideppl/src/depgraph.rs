//! Conservative dependency graph over one trace.
//!
//! Nodes are created in execution order, so parents always precede
//! children. Straight-line code forms a chain; `map_data` brackets its
//! iterations between a `split` and a `join` node, making iterations
//! mutually independent while everything before the split reaches
//! everything after the join. The graph deliberately over-approximates
//! dataflow: a path means "may depend on", never the converse.
//!
//! The payoff is `suffix_weights`: for every node, the sum of per-node
//! contributions over the node itself and everything reachable from it.
//! Because the construction yields a series-parallel DAG where only split
//! nodes fan out (and their branches rejoin at the matching join), those
//! sums come from one reverse pass instead of per-node reachability scans.

use std::collections::HashMap;
use std::fmt::Write as _;

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Root,
    /// Payload indexes the trace's choice list.
    Choice(usize),
    /// Payload indexes the trace's observation list.
    Observe(usize),
    Split,
    Join,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub kind: NodeKind,
    pub parents: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub struct DepGraph {
    pub nodes: Vec<Node>,
    /// Matched (split, join) pairs, innermost first.
    pub pairs: Vec<(NodeId, NodeId)>,
}

impl DepGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Child adjacency (reverse of the stored parent edges).
    pub fn children(&self) -> Vec<Vec<NodeId>> {
        let mut ch = vec![Vec::new(); self.nodes.len()];
        for (id, n) in self.nodes.iter().enumerate() {
            for &p in &n.parents {
                ch[p].push(id);
            }
        }
        ch
    }

    /// Everything reachable from `start` (child direction), excluding it.
    pub fn downstream(&self, start: NodeId) -> Vec<NodeId> {
        let ch = self.children();
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = vec![start];
        while let Some(id) = queue.pop() {
            for &c in &ch[id] {
                if !seen[c] {
                    seen[c] = true;
                    queue.push(c);
                }
            }
        }
        seen.iter().enumerate().filter(|(id, &s)| s && *id != start).map(|(id, _)| id).collect()
    }

    /// For each node n: contrib(n) plus the contribs of all nodes reachable
    /// from n. One reverse pass; relies on the split/join discipline (every
    /// non-split node has at most one child, and a split's branches all
    /// rejoin at its matching join).
    pub fn suffix_weights(&self, contrib: &[f64]) -> Vec<f64> {
        assert_eq!(contrib.len(), self.nodes.len(), "one contribution per node");
        let ch = self.children();
        let join_of: HashMap<NodeId, NodeId> = self.pairs.iter().copied().collect();
        let mut r = vec![0.0; self.nodes.len()];
        for id in (0..self.nodes.len()).rev() {
            let tail = match self.nodes[id].kind {
                NodeKind::Split => {
                    let j = join_of[&id];
                    // branches overlap only in the shared suffix past the join
                    ch[id].iter().map(|&h| r[h] - r[j]).sum::<f64>() + r[j]
                }
                _ => {
                    debug_assert!(ch[id].len() <= 1, "non-split node with a fan-out");
                    ch[id].first().map(|&u| r[u]).unwrap_or(0.0)
                }
            };
            r[id] = contrib[id] + tail;
        }
        r
    }

    /// DOT text for inspection; `label` decorates choice/observe nodes.
    pub fn to_dot(&self, label: &dyn Fn(NodeId) -> String) -> String {
        let mut out = String::from("digraph trace {\n  rankdir=TB;\n");
        for (id, n) in self.nodes.iter().enumerate() {
            let (name, shape) = match n.kind {
                NodeKind::Root => ("root".to_string(), "point"),
                NodeKind::Choice(_) => (label(id), "ellipse"),
                NodeKind::Observe(_) => (label(id), "box"),
                NodeKind::Split => ("split".to_string(), "triangle"),
                NodeKind::Join => ("join".to_string(), "invtriangle"),
            };
            let _ = writeln!(out, "  n{id} [label=\"{name}\", shape={shape}];");
            for &p in &n.parents {
                let _ = writeln!(out, "  n{p} -> n{id};");
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Receives trace events in execution order and assembles the graph.
///
/// The join node of a bracket is allocated at `map_data` *end* (its parents,
/// the last node of each iteration, must already exist); the stack carries
/// the split plus the collected iteration tails until then.
#[derive(Debug)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    prev: NodeId,
    stack: Vec<(NodeId, Vec<NodeId>)>,
    pairs: Vec<(NodeId, NodeId)>,
}

impl Default for GraphBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl GraphBuilder {
    pub fn new() -> GraphBuilder {
        GraphBuilder {
            nodes: vec![Node { kind: NodeKind::Root, parents: vec![] }],
            prev: 0,
            stack: Vec::new(),
            pairs: Vec::new(),
        }
    }

    fn push(&mut self, kind: NodeKind, parents: Vec<NodeId>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { kind, parents });
        id
    }

    pub fn on_choice(&mut self, choice_idx: usize) -> NodeId {
        let id = self.push(NodeKind::Choice(choice_idx), vec![self.prev]);
        self.prev = id;
        id
    }

    pub fn on_observe(&mut self, obs_idx: usize) -> NodeId {
        let id = self.push(NodeKind::Observe(obs_idx), vec![self.prev]);
        self.prev = id;
        id
    }

    pub fn on_map_data_begin(&mut self) {
        let split = self.push(NodeKind::Split, vec![self.prev]);
        self.prev = split;
        self.stack.push((split, Vec::new()));
    }

    pub fn on_iter_begin(&mut self) {
        let (split, _) = *self.stack.last().expect("iteration outside map_data");
        self.prev = split;
    }

    pub fn on_iter_end(&mut self) {
        let prev = self.prev;
        let (_, tails) = self.stack.last_mut().expect("iteration outside map_data");
        if !tails.contains(&prev) {
            tails.push(prev);
        }
    }

    pub fn on_map_data_end(&mut self) {
        let (split, mut tails) = self.stack.pop().expect("unbalanced map_data");
        if tails.is_empty() {
            tails.push(split);
        }
        let join = self.push(NodeKind::Join, tails);
        self.pairs.push((split, join));
        self.prev = join;
    }

    pub fn finish(self) -> DepGraph {
        assert!(self.stack.is_empty(), "unclosed map_data bracket");
        DepGraph { nodes: self.nodes, pairs: self.pairs }
    }
}
