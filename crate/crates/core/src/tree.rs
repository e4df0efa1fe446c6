//! Arena-backed binary decision trees with per-node row tracking.
//!
//! A row reaches the left child of an internal node iff `x[var] <= cut`.
//! Every node (internal or terminal) keeps the training rows that reach it,
//! so GROW, PRUNE and CHANGE only touch the rows of the affected subtree.

use std::fmt::Write as _;

use crate::data::Features;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRule {
    pub var: usize,
    pub cut: f64,
}

impl SplitRule {
    #[inline]
    pub fn goes_left(&self, value: f64) -> bool {
        value <= self.cut
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Internal {
        rule: SplitRule,
        left: NodeId,
        right: NodeId,
    },
    Terminal {
        mu: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    pub depth: usize,
    pub parent: Option<NodeId>,
    pub rows: Vec<usize>,
}

impl Node {
    pub fn is_terminal(&self) -> bool {
        matches!(self.kind, NodeKind::Terminal { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Option<Node>>,
    free: Vec<NodeId>,
}

pub const ROOT: NodeId = 0;

impl Tree {
    /// Single terminal node holding rows `0..n_rows`.
    pub fn stump(n_rows: usize, mu: f64) -> Self {
        Tree {
            nodes: vec![Some(Node {
                kind: NodeKind::Terminal { mu },
                depth: 0,
                parent: None,
                rows: (0..n_rows).collect(),
            })],
            free: Vec::new(),
        }
    }

    pub fn node(&self, id: NodeId) -> &Node {
        self.nodes[id].as_ref().expect("dangling node id")
    }

    fn node_mut(&mut self, id: NodeId) -> &mut Node {
        self.nodes[id].as_mut().expect("dangling node id")
    }

    pub fn is_terminal(&self, id: NodeId) -> bool {
        self.node(id).is_terminal()
    }

    pub fn is_stump(&self) -> bool {
        self.is_terminal(ROOT)
    }

    fn live(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(id, n)| n.as_ref().map(|n| (id, n)))
    }

    pub fn terminal_ids(&self) -> Vec<NodeId> {
        self.live()
            .filter(|(_, n)| n.is_terminal())
            .map(|(id, _)| id)
            .collect()
    }

    pub fn internal_ids(&self) -> Vec<NodeId> {
        self.live()
            .filter(|(_, n)| !n.is_terminal())
            .map(|(id, _)| id)
            .collect()
    }

    pub fn n_terminal(&self) -> usize {
        self.live().filter(|(_, n)| n.is_terminal()).count()
    }

    pub fn n_internal(&self) -> usize {
        self.live().filter(|(_, n)| !n.is_terminal()).count()
    }

    /// Internal nodes whose two children are both terminal.
    pub fn singly_internal_ids(&self) -> Vec<NodeId> {
        self.live()
            .filter(|(_, n)| match n.kind {
                NodeKind::Internal { left, right, .. } => {
                    self.is_terminal(left) && self.is_terminal(right)
                }
                NodeKind::Terminal { .. } => false,
            })
            .map(|(id, _)| id)
            .collect()
    }

    pub fn singly_internal_count(&self) -> usize {
        self.singly_internal_ids().len()
    }

    pub fn max_depth(&self) -> usize {
        self.live().map(|(_, n)| n.depth).max().unwrap_or(0)
    }

    /// Leaf value reached by a row whose covariates are served by `get`.
    pub fn evaluate_with<F: Fn(usize) -> f64>(&self, get: F) -> f64 {
        let mut id = ROOT;
        loop {
            match self.node(id).kind {
                NodeKind::Terminal { mu } => return mu,
                NodeKind::Internal { rule, left, right } => {
                    id = if rule.goes_left(get(rule.var)) { left } else { right };
                }
            }
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.evaluate_with(|j| x[j])
    }

    pub fn evaluate_row(&self, features: &Features, row: usize) -> f64 {
        self.evaluate_with(|j| features.get(row, j))
    }

    pub fn set_mu(&mut self, id: NodeId, value: f64) {
        match &mut self.node_mut(id).kind {
            NodeKind::Terminal { mu } => *mu = value,
            NodeKind::Internal { .. } => panic!("set_mu on internal node {id}"),
        }
    }

    pub fn mu(&self, id: NodeId) -> Option<f64> {
        match self.node(id).kind {
            NodeKind::Terminal { mu } => Some(mu),
            NodeKind::Internal { .. } => None,
        }
    }

    pub fn rule(&self, id: NodeId) -> Option<SplitRule> {
        match self.node(id).kind {
            NodeKind::Internal { rule, .. } => Some(rule),
            NodeKind::Terminal { .. } => None,
        }
    }

    pub fn children(&self, id: NodeId) -> Option<(NodeId, NodeId)> {
        match self.node(id).kind {
            NodeKind::Internal { left, right, .. } => Some((left, right)),
            NodeKind::Terminal { .. } => None,
        }
    }

    /// Writes the leaf value of every row into `out` (indexed by row).
    pub fn fill_fit(&self, out: &mut [f64]) {
        for (_, n) in self.live() {
            if let NodeKind::Terminal { mu } = n.kind {
                for &i in &n.rows {
                    out[i] = mu;
                }
            }
        }
    }

    fn alloc(&mut self, node: Node) -> NodeId {
        match self.free.pop() {
            Some(id) => {
                self.nodes[id] = Some(node);
                id
            }
            None => {
                self.nodes.push(Some(node));
                self.nodes.len() - 1
            }
        }
    }

    /// Turns terminal `id` into an internal node with two fresh leaves.
    /// Returns the new `(left, right)` ids.
    pub fn grow(
        &mut self,
        id: NodeId,
        rule: SplitRule,
        features: &Features,
        mu_left: f64,
        mu_right: f64,
    ) -> (NodeId, NodeId) {
        assert!(self.is_terminal(id), "grow on internal node {id}");
        let (lrows, rrows) = partition_rows(&self.node(id).rows, rule, features);
        let depth = self.node(id).depth + 1;
        let left = self.alloc(Node {
            kind: NodeKind::Terminal { mu: mu_left },
            depth,
            parent: Some(id),
            rows: lrows,
        });
        let right = self.alloc(Node {
            kind: NodeKind::Terminal { mu: mu_right },
            depth,
            parent: Some(id),
            rows: rrows,
        });
        self.node_mut(id).kind = NodeKind::Internal { rule, left, right };
        (left, right)
    }

    /// Collapses a singly internal node into a terminal node.
    pub fn prune(&mut self, id: NodeId, mu: f64) {
        let (left, right) = self.children(id).expect("prune on terminal node");
        assert!(
            self.is_terminal(left) && self.is_terminal(right),
            "prune on node {id} that is not singly internal"
        );
        self.nodes[left] = None;
        self.nodes[right] = None;
        self.free.push(right);
        self.free.push(left);
        self.node_mut(id).kind = NodeKind::Terminal { mu };
    }

    /// Replaces the rule of a singly internal node, re-routing its rows.
    pub fn change_rule(&mut self, id: NodeId, rule: SplitRule, features: &Features) {
        let (left, right) = self.children(id).expect("change on terminal node");
        assert!(
            self.is_terminal(left) && self.is_terminal(right),
            "change on node {id} that is not singly internal"
        );
        let (lrows, rrows) = partition_rows(&self.node(id).rows, rule, features);
        self.node_mut(left).rows = lrows;
        self.node_mut(right).rows = rrows;
        self.node_mut(id).kind = NodeKind::Internal { rule, left, right };
    }

    /// Admissible cutpoints for `var` at `id`: the distinct values among the
    /// node's rows, ascending, without the largest one.
    pub fn valid_cutpoints(&self, features: &Features, id: NodeId, var: usize) -> Vec<f64> {
        let col = features.column(var);
        let mut values: Vec<f64> = self.node(id).rows.iter().map(|&i| col[i]).collect();
        values.sort_by(|a, b| a.total_cmp(b));
        values.dedup();
        values.pop();
        values
    }

    /// Whether `var` has at least two distinct values among the node's rows.
    pub fn has_cutpoint(&self, features: &Features, id: NodeId, var: usize) -> bool {
        let col = features.column(var);
        let rows = &self.node(id).rows;
        match rows.first() {
            Some(&first) => {
                let v0 = col[first];
                rows[1..].iter().any(|&i| col[i] != v0)
            }
            None => false,
        }
    }

    /// Predictors with a non-empty cutpoint pool at `id`.
    pub fn available_predictors(&self, features: &Features, id: NodeId) -> Vec<usize> {
        (0..features.n_cols())
            .filter(|&j| self.has_cutpoint(features, id, j))
            .collect()
    }

    /// Adds the number of internal nodes splitting on each variable into `counts`.
    pub fn add_split_counts(&self, counts: &mut [u32]) {
        for (_, n) in self.live() {
            if let NodeKind::Internal { rule, .. } = n.kind {
                counts[rule.var] += 1;
            }
        }
    }

    /// Indented text dump, one node per line, depth-first left to right.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        self.dump_node(ROOT, &mut out);
        out
    }

    fn dump_node(&self, id: NodeId, out: &mut String) {
        let node = self.node(id);
        let indent = "  ".repeat(node.depth);
        match node.kind {
            NodeKind::Terminal { mu } => {
                let _ = writeln!(out, "{indent}L(mu={mu})");
            }
            NodeKind::Internal { rule, left, right } => {
                let _ = writeln!(out, "{indent}I(var={}, cut={})", rule.var, rule.cut);
                self.dump_node(left, out);
                self.dump_node(right, out);
            }
        }
    }

    /// Full structural audit against `features`; returns a description of
    /// the first violated invariant.
    pub fn check(&self, features: &Features) -> Result<(), String> {
        let root = self.node(ROOT);
        if root.parent.is_some() || root.depth != 0 {
            return Err("root has a parent or nonzero depth".into());
        }
        let mut seen = vec![0u32; features.n_rows()];
        let mut reached = 0usize;
        let mut stack = vec![ROOT];
        while let Some(id) = stack.pop() {
            reached += 1;
            let node = self.node(id);
            match node.kind {
                NodeKind::Terminal { mu } => {
                    if node.rows.is_empty() {
                        return Err(format!("terminal node {id} is empty"));
                    }
                    if !mu.is_finite() {
                        return Err(format!("terminal node {id} has non-finite value"));
                    }
                    for &i in &node.rows {
                        seen[i] += 1;
                    }
                }
                NodeKind::Internal { rule, left, right } => {
                    for child in [left, right] {
                        let c = self.node(child);
                        if c.parent != Some(id) || c.depth != node.depth + 1 {
                            return Err(format!("child {child} of {id} has bad parent or depth"));
                        }
                    }
                    let (l, r) = partition_rows(&node.rows, rule, features);
                    if l != self.node(left).rows || r != self.node(right).rows {
                        return Err(format!("row routing at node {id} is stale"));
                    }
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        if reached != self.live().count() {
            return Err("unreachable nodes in arena".into());
        }
        if root.rows.len() != features.n_rows() || seen.iter().any(|&c| c != 1) {
            return Err("terminal rows do not partition the training rows".into());
        }
        Ok(())
    }
}

pub(crate) fn partition_rows(
    rows: &[usize],
    rule: SplitRule,
    features: &Features,
) -> (Vec<usize>, Vec<usize>) {
    let col = features.column(rule.var);
    rows.iter().partition(|&&i| rule.goes_left(col[i]))
}
