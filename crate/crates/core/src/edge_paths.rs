//! Zero-padded edge paths for every token of a linearized tree.
//!
//! Index `l` of a path is the `l`-th edge on the reverse path from the node to
//! the root. Both hop kinds use a slot: the attribute-to-child edge carries the
//! child's 1-based position in its slot, the object-to-attribute edge carries
//! the attribute's 1-based position in its owner.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::typed_tree::{ObjectNode, SlotKind, TypedTree};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PathError {
    #[error("tree depth {depth} exceeds the edge path length {max}")]
    DepthExceeded { depth: usize, max: usize },
    #[error("the decoder state is finished; no next position exists")]
    Finished,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgePath(Vec<u32>);

impl EdgePath {
    pub fn zeros(len: usize) -> Self {
        EdgePath(vec![0; len])
    }

    /// Pads `nonzero` (node-to-root order) to `len`.
    pub fn from_reverse_edges(nonzero: &[u32], len: usize) -> Result<Self, PathError> {
        if nonzero.len() > len {
            return Err(PathError::DepthExceeded {
                depth: nonzero.len(),
                max: len,
            });
        }
        let mut v = nonzero.to_vec();
        v.resize(len, 0);
        Ok(EdgePath(v))
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of hops to the root.
    pub fn depth(&self) -> usize {
        self.0.iter().take_while(|&&i| i != 0).count()
    }

    /// The path one hop up: first index dropped, zero appended.
    pub fn parent(&self) -> EdgePath {
        let mut v = self.0[1.min(self.0.len())..].to_vec();
        v.push(0);
        EdgePath(v)
    }
}

impl From<Vec<u32>> for EdgePath {
    fn from(v: Vec<u32>) -> Self {
        EdgePath(v)
    }
}

impl fmt::Display for EdgePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// One path per token of `tree.linearize()`, in the same order.
///
/// `le` tokens take the position one past the last child of their list slot;
/// literal tokens take their leaf's path.
pub fn edge_paths(tree: &TypedTree, len: usize) -> Result<Vec<EdgePath>, PathError> {
    fn walk(
        node: &ObjectNode,
        rev: &mut Vec<u32>,
        len: usize,
        out: &mut Vec<EdgePath>,
    ) -> Result<(), PathError> {
        out.push(EdgePath::from_reverse_edges(rev, len)?);
        for (a, slot) in node.attrs.iter().enumerate() {
            for (c, child) in slot.children.iter().enumerate() {
                rev.splice(0..0, [c as u32 + 1, a as u32 + 1]);
                walk(child, rev, len, out)?;
                rev.drain(0..2);
            }
            if slot.kind == SlotKind::List {
                rev.splice(0..0, [slot.children.len() as u32 + 1, a as u32 + 1]);
                let path = EdgePath::from_reverse_edges(rev, len);
                rev.drain(0..2);
                out.push(path?);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(tree.root(), &mut Vec::new(), len, &mut out)?;
    Ok(out)
}

/// Deepest path length (in hops) over all token positions of `tree`.
pub fn tree_depth(tree: &TypedTree) -> usize {
    fn walk(node: &ObjectNode, depth: usize) -> usize {
        node.attrs
            .iter()
            .map(|slot| {
                let below = slot
                    .children
                    .iter()
                    .map(|c| walk(c, depth + 2))
                    .max()
                    .unwrap_or(depth + 2);
                if slot.kind == SlotKind::List {
                    below.max(depth + 2)
                } else {
                    below
                }
            })
            .max()
            .unwrap_or(depth)
    }
    walk(tree.root(), 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::typed_tree::tests::assign_a10;

    fn p(v: [u32; 10]) -> EdgePath {
        EdgePath(v.to_vec())
    }

    #[test]
    fn assign_paths() {
        let paths = edge_paths(&assign_a10(), 10).unwrap();
        let expected = [
            p([0, 0, 0, 0, 0, 0, 0, 0, 0, 0]),
            p([1, 1, 0, 0, 0, 0, 0, 0, 0, 0]),
            p([1, 1, 1, 1, 0, 0, 0, 0, 0, 0]),
            p([1, 1, 1, 1, 1, 1, 0, 0, 0, 0]),
            p([1, 1, 1, 1, 1, 1, 1, 1, 0, 0]),
            p([2, 1, 1, 1, 1, 1, 0, 0, 0, 0]),
            p([1, 2, 1, 1, 1, 1, 0, 0, 0, 0]),
            p([1, 1, 1, 2, 1, 1, 1, 1, 0, 0]),
            p([2, 1, 1, 1, 0, 0, 0, 0, 0, 0]),
            p([1, 2, 0, 0, 0, 0, 0, 0, 0, 0]),
        ];
        assert_eq!(paths, expected);
        assert_eq!(tree_depth(&assign_a10()), 8);
    }

    #[test]
    fn depth_limit_is_an_error() {
        assert_eq!(
            edge_paths(&assign_a10(), 7),
            Err(PathError::DepthExceeded { depth: 8, max: 7 })
        );
        assert!(edge_paths(&assign_a10(), 8).is_ok());
    }

    #[test]
    fn single_node_tree_root_is_zero() {
        let t = TypedTree::new(ObjectNode::leaf("X")).unwrap();
        let paths = edge_paths(&t, 4).unwrap();
        assert_eq!(paths[0], EdgePath::zeros(4));
        assert_eq!(paths.len(), 3);
    }

    #[test]
    fn parent_drops_first_index() {
        let a = EdgePath(vec![1, 1, 1, 1, 1, 1, 1, 1, 0, 0]);
        assert_eq!(a.parent(), EdgePath(vec![1, 1, 1, 1, 1, 1, 1, 0, 0, 0]));
        assert_eq!(a.depth(), 8);
    }
}
