//! Multicast trees and their routing matrices.
//!
//! A tree spans the probe source (root) and a set of receivers (leaves).
//! The routing matrix `A` has one row per receiver and one column per edge,
//! with `A[i][j] = 1` iff edge `j` lies on the root-to-receiver-`i` path.
//! Column order is breadth-first from the root, left-to-right among
//! siblings; row order follows the receiver list.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = u32;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("tree has no edges")]
    Empty,
    #[error("node {0} has more than one parent")]
    MultipleParents(NodeId),
    #[error("edge ({0}, {1}) is a self loop")]
    SelfLoop(NodeId, NodeId),
    #[error("root {0} appears as a child")]
    RootHasParent(NodeId),
    #[error("node {0} is not reachable from the root (cycle or disconnected edge)")]
    Unreachable(NodeId),
    #[error("internal node {0} has a single child; multicast trees require at least two")]
    UnaryInternal(NodeId),
    #[error("leaf list does not match the childless nodes of the tree: {0}")]
    LeafMismatch(String),
    #[error("matrix is not binary at row {row}, column {col}")]
    NotBinary { row: usize, col: usize },
    #[error("rows have inconsistent lengths")]
    RaggedRows,
}

/// A multicast tree: a single root, directed edges away from it, and an
/// ordered receiver list that fixes the row order of `Y` and `A`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeTopology {
    root: NodeId,
    edges: Vec<(NodeId, NodeId)>,
    leaves: Vec<NodeId>,
    children: BTreeMap<NodeId, Vec<NodeId>>,
    parent: HashMap<NodeId, NodeId>,
}

/// On-disk form: `{"root": id, "edges": [[parent, child], ...], "leaves": [...]}`.
#[derive(Debug, Serialize, Deserialize)]
struct TopologyFile {
    root: NodeId,
    edges: Vec<(NodeId, NodeId)>,
    leaves: Vec<NodeId>,
}

impl Serialize for TreeTopology {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TopologyFile {
            root: self.root,
            edges: self.edges.clone(),
            leaves: self.leaves.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TreeTopology {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let file = TopologyFile::deserialize(deserializer)?;
        Self::new(file.root, file.edges, file.leaves).map_err(serde::de::Error::custom)
    }
}

impl TreeTopology {
    pub fn new(
        root: NodeId,
        edges: Vec<(NodeId, NodeId)>,
        leaves: Vec<NodeId>,
    ) -> Result<Self, TopologyError> {
        if edges.is_empty() {
            return Err(TopologyError::Empty);
        }
        let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        let mut parent: HashMap<NodeId, NodeId> = HashMap::new();
        for &(p, c) in &edges {
            if p == c {
                return Err(TopologyError::SelfLoop(p, c));
            }
            if c == root {
                return Err(TopologyError::RootHasParent(root));
            }
            if parent.insert(c, p).is_some() {
                return Err(TopologyError::MultipleParents(c));
            }
            children.entry(p).or_default().push(c);
        }
        // Reachability from the root covers both cycles and disconnected parts:
        // every child has a unique parent, so |reachable| = |edges| + 1 iff the
        // edge set forms one tree rooted at `root`.
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([root]);
        seen.insert(root);
        while let Some(node) = queue.pop_front() {
            for &c in children.get(&node).into_iter().flatten() {
                seen.insert(c);
                queue.push_back(c);
            }
        }
        for &(p, c) in &edges {
            if !seen.contains(&p) {
                return Err(TopologyError::Unreachable(p));
            }
            if !seen.contains(&c) {
                return Err(TopologyError::Unreachable(c));
            }
        }
        for (&node, kids) in &children {
            if node != root && kids.len() == 1 {
                return Err(TopologyError::UnaryInternal(node));
            }
        }
        let childless: HashSet<NodeId> = seen
            .iter()
            .copied()
            .filter(|n| *n != root && !children.contains_key(n))
            .collect();
        let listed: HashSet<NodeId> = leaves.iter().copied().collect();
        if listed.len() != leaves.len() || listed != childless {
            return Err(TopologyError::LeafMismatch(format!(
                "listed {:?}, childless {:?}",
                leaves, childless
            )));
        }
        Ok(Self {
            root,
            edges,
            leaves,
            children,
            parent,
        })
    }

    pub fn from_json(json: &str) -> Result<Self, TopologyError> {
        let file: TopologyFile = serde_json::from_str(json)
            .map_err(|e| TopologyError::LeafMismatch(format!("bad topology JSON: {e}")))?;
        Self::new(file.root, file.edges, file.leaves)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&TopologyFile {
            root: self.root,
            edges: self.edges.clone(),
            leaves: self.leaves.clone(),
        })
        .expect("topology serializes")
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges in column order: breadth-first from the root, siblings in the
    /// order their edges were declared.
    pub fn ordered_edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::with_capacity(self.edges.len());
        let mut queue = VecDeque::from([self.root]);
        while let Some(node) = queue.pop_front() {
            for &c in self.children.get(&node).into_iter().flatten() {
                out.push((node, c));
                queue.push_back(c);
            }
        }
        out
    }

    /// Node ids on the path from the root to `leaf`, excluding the root.
    fn path_to(&self, leaf: NodeId) -> Vec<NodeId> {
        let mut rev = vec![leaf];
        let mut cur = leaf;
        while let Some(&p) = self.parent.get(&cur) {
            if p != self.root {
                rev.push(p);
            }
            cur = p;
        }
        rev.reverse();
        rev
    }

    /// The two-receiver tree: root 0 → 1, 1 → {2, 3}.
    pub fn two_leaf() -> Self {
        Self::new(0, vec![(0, 1), (1, 2), (1, 3)], vec![2, 3]).expect("valid builtin")
    }

    /// The four-receiver tree: root 0 → 1, 1 → {2, 3}, 2 → {4, 5}, 3 → {6, 7}.
    pub fn four_leaf() -> Self {
        Self::new(
            0,
            vec![(0, 1), (1, 2), (1, 3), (2, 4), (2, 5), (3, 6), (3, 7)],
            vec![4, 5, 6, 7],
        )
        .expect("valid builtin")
    }

    /// A symmetric binary tree with `2^depth` receivers below a single root
    /// link (`depth` ≥ 1).
    pub fn balanced_binary(depth: u32) -> Self {
        let mut edges = vec![(0u32, 1u32)];
        let mut level = vec![1u32];
        let mut next_id = 2u32;
        for _ in 0..depth {
            let mut next_level = Vec::new();
            for &node in &level {
                for _ in 0..2 {
                    edges.push((node, next_id));
                    next_level.push(next_id);
                    next_id += 1;
                }
            }
            level = next_level;
        }
        Self::new(0, edges, level).expect("valid builtin")
    }
}

/// Binary receiver-by-edge incidence matrix of a tree (or any 0/1 matrix for
/// rank diagnostics).
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingMatrix {
    entries: Vec<u8>,
    receivers: usize,
    links: usize,
    edge_order: Vec<(NodeId, NodeId)>,
}

impl RoutingMatrix {
    /// Accepts an arbitrary rectangular 0/1 matrix; used by the
    /// identifiability rank check, which is not restricted to trees.
    pub fn from_binary_rows(rows: Vec<Vec<u8>>) -> Result<Self, TopologyError> {
        let links = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut entries = Vec::with_capacity(rows.len() * links);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != links {
                return Err(TopologyError::RaggedRows);
            }
            for (j, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(TopologyError::NotBinary { row: i, col: j });
                }
                entries.push(v);
            }
        }
        Ok(Self {
            entries,
            receivers: rows.len(),
            links,
            edge_order: Vec::new(),
        })
    }

    pub fn receivers(&self) -> usize {
        self.receivers
    }

    pub fn links(&self) -> usize {
        self.links
    }

    /// Edge (parent, child) behind each column; empty for matrices built
    /// directly from rows.
    pub fn edge_order(&self) -> &[(NodeId, NodeId)] {
        &self.edge_order
    }

    #[inline]
    pub fn entry(&self, receiver: usize, link: usize) -> u8 {
        self.entries[receiver * self.links + link]
    }

    pub fn row(&self, receiver: usize) -> &[u8] {
        &self.entries[receiver * self.links..(receiver + 1) * self.links]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.receivers, self.links, |i, j| self.entry(i, j) as f64)
    }

    /// Receivers whose paths include `link`.
    pub fn receivers_on_link(&self, link: usize) -> Vec<usize> {
        (0..self.receivers)
            .filter(|&i| self.entry(i, link) == 1)
            .collect()
    }
}

/// Derive the routing matrix of a tree: `A[i][j] = 1` iff edge `j` is on the
/// root-to-`leaves[i]` path.
pub fn routing_matrix(topology: &TreeTopology) -> RoutingMatrix {
    let edge_order = topology.ordered_edges();
    let links = edge_order.len();
    let receivers = topology.leaf_count();
    let col_of: HashMap<NodeId, usize> = edge_order
        .iter()
        .enumerate()
        .map(|(j, &(_, child))| (child, j))
        .collect();
    let mut entries = vec![0u8; receivers * links];
    for (i, &leaf) in topology.leaves().iter().enumerate() {
        for node in topology.path_to(leaf) {
            entries[i * links + col_of[&node]] = 1;
        }
    }
    RoutingMatrix {
        entries,
        receivers,
        links,
        edge_order,
    }
}

/// The stacked matrix of all rows of `A` plus the element-wise products of
/// every distinct row pair, `(i, k)` with `i < k` in lexicographic order.
/// Full column rank certifies that the link-delay distributions are
/// identifiable up to a per-link shift.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductMatrix {
    entries: Vec<u8>,
    rows: usize,
    cols: usize,
}

impl ProductMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn entry(&self, row: usize, col: usize) -> u8 {
        self.entries[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.entries[row * self.cols..(row + 1) * self.cols]
    }

    /// Row index carrying Cov(Y_i, Y_k): the plain rows for `i == k`, the
    /// pair rows beyond them for `i < k`.
    pub fn pair_row(&self, receivers: usize, i: usize, k: usize) -> usize {
        assert!(i <= k && k < receivers);
        if i == k {
            return i;
        }
        // Pairs (0,1), (0,2), ..., (0,I-1), (1,2), ... after the first I rows.
        let before = i * receivers - i * (i + 1) / 2;
        receivers + before + (k - i - 1)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.entry(i, j) as f64)
    }
}

pub fn product_matrix(a: &RoutingMatrix) -> ProductMatrix {
    let receivers = a.receivers();
    let cols = a.links();
    let rows = receivers * (receivers + 1) / 2;
    let mut entries = Vec::with_capacity(rows * cols);
    for i in 0..receivers {
        entries.extend_from_slice(a.row(i));
    }
    for i in 0..receivers {
        for k in (i + 1)..receivers {
            for j in 0..cols {
                entries.push(a.entry(i, j) & a.entry(k, j));
            }
        }
    }
    ProductMatrix {
        entries,
        rows,
        cols,
    }
}

/// Singular values below `1e-9` of the largest count as zero; fine for 0/1
/// matrices at the sizes trees produce.
pub const RANK_TOLERANCE: f64 = 1e-9;

pub fn column_rank(b: &ProductMatrix) -> usize {
    dense_rank(&b.to_dense())
}

pub(crate) fn dense_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let max_sv = svd.singular_values.max();
    if max_sv <= 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > RANK_TOLERANCE * max_sv)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_leaf_routing_matrix() {
        let a = routing_matrix(&TreeTopology::two_leaf());
        assert_eq!(a.receivers(), 2);
        assert_eq!(a.links(), 3);
        assert_eq!(a.row(0), &[1, 1, 0]);
        assert_eq!(a.row(1), &[1, 0, 1]);
    }

    #[test]
    fn four_leaf_routing_matrix() {
        let a = routing_matrix(&TreeTopology::four_leaf());
        assert_eq!(a.receivers(), 4);
        assert_eq!(a.links(), 7);
        // Y1 = X1 + X2 + X4 in one-based link numbering.
        assert_eq!(a.row(0), &[1, 1, 0, 1, 0, 0, 0]);
        assert_eq!(a.row(1), &[1, 1, 0, 0, 1, 0, 0]);
        assert_eq!(a.row(2), &[1, 0, 1, 0, 0, 1, 0]);
        assert_eq!(a.row(3), &[1, 0, 1, 0, 0, 0, 1]);
    }

    #[test]
    fn single_edge_chain() {
        let t = TreeTopology::new(0, vec![(0, 1)], vec![1]).unwrap();
        let a = routing_matrix(&t);
        assert_eq!(a.receivers(), 1);
        assert_eq!(a.row(0), &[1]);
    }

    #[test]
    fn rejects_malformed_trees() {
        // Unary internal node (serial chain).
        assert!(matches!(
            TreeTopology::new(0, vec![(0, 1), (1, 2)], vec![2]),
            Err(TopologyError::UnaryInternal(1))
        ));
        // Cycle.
        assert!(TreeTopology::new(0, vec![(0, 1), (1, 2), (2, 1)], vec![2]).is_err());
        // Disconnected edge.
        assert!(matches!(
            TreeTopology::new(0, vec![(0, 1), (5, 6)], vec![1, 6]),
            Err(TopologyError::Unreachable(_))
        ));
        // Leaf list mismatch.
        assert!(matches!(
            TreeTopology::new(0, vec![(0, 1), (1, 2), (1, 3)], vec![3, 2, 2]),
            Err(TopologyError::LeafMismatch(_))
        ));
    }

    #[test]
    fn two_leaf_product_matrix() {
        let a = routing_matrix(&TreeTopology::two_leaf());
        let b = product_matrix(&a);
        assert_eq!((b.rows(), b.cols()), (3, 3));
        assert_eq!(b.row(0), &[1, 1, 0]);
        assert_eq!(b.row(1), &[1, 0, 1]);
        assert_eq!(b.row(2), &[1, 0, 0]);
        assert_eq!(column_rank(&b), 3);
    }

    #[test]
    fn four_leaf_product_matrix_by_hand() {
        let a = routing_matrix(&TreeTopology::four_leaf());
        let b = product_matrix(&a);
        assert_eq!((b.rows(), b.cols()), (10, 7));
        // Hand-enumerated pair products in (i, k) lexicographic order.
        let expected: [[u8; 7]; 6] = [
            [1, 1, 0, 0, 0, 0, 0], // rows 1,2 share links 1,2
            [1, 0, 0, 0, 0, 0, 0], // rows 1,3 share link 1
            [1, 0, 0, 0, 0, 0, 0],
            [1, 0, 0, 0, 0, 0, 0],
            [1, 0, 0, 0, 0, 0, 0],
            [1, 0, 1, 0, 0, 0, 0], // rows 3,4 share links 1,3
        ];
        for (offset, row) in expected.iter().enumerate() {
            assert_eq!(b.row(4 + offset), row);
        }
        assert_eq!(column_rank(&b), 7);
    }

    #[test]
    fn product_matrix_single_row_is_input() {
        let a = RoutingMatrix::from_binary_rows(vec![vec![1, 0, 1]]).unwrap();
        let b = product_matrix(&a);
        assert_eq!((b.rows(), b.cols()), (1, 3));
        assert_eq!(b.row(0), &[1, 0, 1]);
    }

    #[test]
    fn rank_of_zero_matrix() {
        let a = RoutingMatrix::from_binary_rows(vec![vec![0, 0], vec![0, 0]]).unwrap();
        assert_eq!(column_rank(&product_matrix(&a)), 0);
    }

    #[test]
    fn pair_row_indexing() {
        let a = routing_matrix(&TreeTopology::four_leaf());
        let b = product_matrix(&a);
        assert_eq!(b.pair_row(4, 2, 2), 2);
        assert_eq!(b.pair_row(4, 0, 1), 4);
        assert_eq!(b.pair_row(4, 0, 3), 6);
        assert_eq!(b.pair_row(4, 1, 2), 7);
        assert_eq!(b.pair_row(4, 2, 3), 9);
    }

    #[test]
    fn row_sums_equal_leaf_depths() {
        for topo in [
            TreeTopology::two_leaf(),
            TreeTopology::four_leaf(),
            TreeTopology::balanced_binary(3),
        ] {
            let a = routing_matrix(&topo);
            for (i, &leaf) in topo.leaves().iter().enumerate() {
                let depth = topo.path_to(leaf).len();
                let sum: u32 = a.row(i).iter().map(|&v| v as u32).sum();
                assert_eq!(sum as usize, depth);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let t = TreeTopology::four_leaf();
        let back = TreeTopology::from_json(&t.to_json()).unwrap();
        assert_eq!(t, back);
        assert_eq!(routing_matrix(&t), routing_matrix(&back));
    }
}
