//! Binary composition trees over the original token positions.

use std::rc::Rc;

/// A node of the induced composition tree. Leaves carry the index of the
/// original token they cover.
#[derive(Debug, PartialEq, Eq)]
pub enum TreeNode {
    Leaf(usize),
    Branch(Rc<TreeNode>, Rc<TreeNode>),
}

impl TreeNode {
    pub fn leaf(i: usize) -> Rc<TreeNode> {
        Rc::new(TreeNode::Leaf(i))
    }

    pub fn branch(left: Rc<TreeNode>, right: Rc<TreeNode>) -> Rc<TreeNode> {
        Rc::new(TreeNode::Branch(left, right))
    }

    /// Leaf indices in left-to-right order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<usize>) {
        match self {
            TreeNode::Leaf(i) => out.push(*i),
            TreeNode::Branch(l, r) => {
                l.collect_leaves(out);
                r.collect_leaves(out);
            }
        }
    }

    /// Maximum number of nested branches from this node down to any leaf.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 0,
            TreeNode::Branch(l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    /// Bracketed text form, e.g. `((a b) c)`, with `labels[i]` naming leaf `i`.
    pub fn bracketed(&self, labels: &[String]) -> String {
        match self {
            TreeNode::Leaf(i) => labels
                .get(*i)
                .cloned()
                .unwrap_or_else(|| format!("{}", i)),
            TreeNode::Branch(l, r) => {
                format!("({} {})", l.bracketed(labels), r.bracketed(labels))
            }
        }
    }
}

/// Rebuilds the tree described by a merge trace over `n` leaves. Each trace
/// entry is the merge position within the shrinking node sequence.
pub fn from_trace(n: usize, merges: &[usize]) -> Option<Rc<TreeNode>> {
    if n == 0 {
        return None;
    }
    let mut nodes: Vec<Rc<TreeNode>> = (0..n).map(TreeNode::leaf).collect();
    for &j in merges {
        if j + 1 >= nodes.len() {
            return None;
        }
        let right = nodes.remove(j + 1);
        let left = nodes[j].clone();
        nodes[j] = TreeNode::branch(left, right);
    }
    if nodes.len() == 1 {
        Some(nodes.pop().unwrap())
    } else {
        None
    }
}
