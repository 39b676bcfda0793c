//! Rooted trees, leaf counts and exact subtree sums.
//!
//! Nodes carry opaque string ids from the input files but are addressed
//! internally by dense [`NodeId`]s assigned in breadth-first order, so every
//! parent precedes its children and each depth level is a contiguous run.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Largest tree we are willing to materialize.
pub const MAX_NODES: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
pub struct TreeShape {
    names: Vec<String>,
    lookup: HashMap<String, NodeId>,
    parent: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    /// 1-based: the root has depth 1.
    depth: Vec<u32>,
    levels: Vec<Vec<NodeId>>,
    leaves: Vec<NodeId>,
    preorder: Vec<NodeId>,
    /// Position of each node in `preorder`; its subtree is `enter..exit`.
    enter: Vec<u32>,
    exit: Vec<u32>,
}

impl TreeShape {
    /// Builds a tree from `(node, parent)` pairs; the root has no parent.
    pub fn from_parents<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Option<S>)>,
        S: Into<String>,
    {
        let entries: Vec<(String, Option<String>)> = entries
            .into_iter()
            .map(|(n, p)| (n.into(), p.map(Into::into)))
            .collect();
        if entries.len() > MAX_NODES {
            return Err(Error::ResourceCap {
                what: "tree",
                requested: entries.len() as u128,
                cap: MAX_NODES as u128,
            });
        }

        let mut position: HashMap<&str, usize> = HashMap::with_capacity(entries.len());
        for (i, (name, _)) in entries.iter().enumerate() {
            if position.insert(name.as_str(), i).is_some() {
                return Err(Error::DuplicateNode(name.clone()));
            }
        }

        let mut roots = Vec::new();
        let mut kids: Vec<Vec<usize>> = vec![Vec::new(); entries.len()];
        for (i, (name, parent)) in entries.iter().enumerate() {
            match parent {
                None => roots.push(i),
                Some(p) => match position.get(p.as_str()) {
                    Some(&j) => kids[j].push(i),
                    None => {
                        return Err(Error::UnknownParent {
                            node: name.clone(),
                            parent: p.clone(),
                        })
                    }
                },
            }
        }
        let root = match roots.as_slice() {
            [] if entries.is_empty() => return Err(Error::NoRoot),
            // Every node has a parent inside a finite set, so some chain loops.
            [] => return Err(Error::Cycle(entries[0].0.clone())),
            [r] => *r,
            many => {
                return Err(Error::MultipleRoots(
                    many.iter().map(|&i| entries[i].0.clone()).collect(),
                ))
            }
        };

        // Breadth-first relabeling.
        let mut order = Vec::with_capacity(entries.len());
        let mut new_id = vec![u32::MAX; entries.len()];
        order.push(root);
        new_id[root] = 0;
        let mut head = 0;
        while head < order.len() {
            let u = order[head];
            head += 1;
            for &k in &kids[u] {
                new_id[k] = order.len() as u32;
                order.push(k);
            }
        }
        if order.len() != entries.len() {
            let stray = (0..entries.len()).find(|&i| new_id[i] == u32::MAX).unwrap();
            return Err(Error::Cycle(entries[stray].0.clone()));
        }

        let mut names = Vec::with_capacity(order.len());
        let mut parent = Vec::with_capacity(order.len());
        let mut children = Vec::with_capacity(order.len());
        for &old in &order {
            let (name, p) = &entries[old];
            names.push(name.clone());
            parent.push(p.as_ref().map(|p| NodeId(new_id[position[p.as_str()]])));
            children.push(kids[old].iter().map(|&k| NodeId(new_id[k])).collect());
        }
        Ok(Self::assemble(names, parent, children))
    }

    /// Complete binary tree of depth `d` with heap-numbered ids `n1, n2, ...`.
    pub fn complete_binary(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("depth", 0.0, "must be at least 1"));
        }
        let n: u128 = (1u128 << d.min(127)) - 1;
        if d >= 127 || n > MAX_NODES as u128 {
            return Err(Error::ResourceCap {
                what: "complete binary tree",
                requested: n,
                cap: MAX_NODES as u128,
            });
        }
        let n = n as usize;
        let names = (1..=n).map(|h| format!("n{h}")).collect();
        let parent = (0..n)
            .map(|i| (i > 0).then(|| NodeId(((i - 1) / 2) as u32)))
            .collect();
        let children = (0..n)
            .map(|i| {
                let l = 2 * i + 1;
                if l < n {
                    vec![NodeId(l as u32), NodeId(l as u32 + 1)]
                } else {
                    Vec::new()
                }
            })
            .collect();
        Ok(Self::assemble(names, parent, children))
    }

    /// Path of `len` nodes `p1 -> p2 -> ...`.
    pub fn path(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::param("length", 0.0, "must be at least 1"));
        }
        Self::from_parents((1..=len).map(|i| {
            let parent = (i > 1).then(|| format!("p{}", i - 1));
            (format!("p{i}"), parent)
        }))
    }

    // Expects ids in breadth-first order.
    fn assemble(names: Vec<String>, parent: Vec<Option<NodeId>>, children: Vec<Vec<NodeId>>) -> Self {
        let n = names.len();
        let mut depth = vec![0u32; n];
        for i in 0..n {
            depth[i] = match parent[i] {
                None => 1,
                Some(p) => depth[p.index()] + 1,
            };
        }
        let max_depth = depth.iter().copied().max().unwrap_or(0) as usize;
        let mut levels = vec![Vec::new(); max_depth];
        for i in 0..n {
            levels[depth[i] as usize - 1].push(NodeId(i as u32));
        }
        let leaves = (0..n)
            .filter(|&i| children[i].is_empty())
            .map(|i| NodeId(i as u32))
            .collect();

        let mut preorder = Vec::with_capacity(n);
        let mut enter = vec![0u32; n];
        let mut exit = vec![0u32; n];
        let mut stack: Vec<(NodeId, bool)> = vec![(NodeId(0), false)];
        while let Some((u, done)) = stack.pop() {
            if done {
                exit[u.index()] = preorder.len() as u32;
                continue;
            }
            enter[u.index()] = preorder.len() as u32;
            preorder.push(u);
            stack.push((u, true));
            for &c in children[u.index()].iter().rev() {
                stack.push((c, false));
            }
        }

        let lookup = names
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), NodeId(i as u32)))
            .collect();
        TreeShape {
            names,
            lookup,
            parent,
            children,
            depth,
            levels,
            leaves,
            preorder,
            enter,
            exit,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    /// Maximum depth `d` (number of nodes on the longest root-to-leaf path).
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn depth_of(&self, u: NodeId) -> usize {
        self.depth[u.index()] as usize
    }

    pub fn parent(&self, u: NodeId) -> Option<NodeId> {
        self.parent[u.index()]
    }

    pub fn children(&self, u: NodeId) -> &[NodeId] {
        &self.children[u.index()]
    }

    pub fn is_leaf(&self, u: NodeId) -> bool {
        self.children[u.index()].is_empty()
    }

    /// Leaves in left-to-right (breadth-first) order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = NodeId> + '_ {
        (0..self.len() as u32).map(NodeId)
    }

    pub fn nodes_at_depth(&self, i: usize) -> Result<&[NodeId]> {
        if i == 0 || i > self.depth() {
            return Err(Error::DepthOutOfRange {
                depth: i,
                max: self.depth(),
            });
        }
        Ok(&self.levels[i - 1])
    }

    pub fn id(&self, name: &str) -> Option<NodeId> {
        self.lookup.get(name).copied()
    }

    pub fn resolve(&self, name: &str) -> Result<NodeId> {
        self.id(name).ok_or_else(|| Error::UnknownNode(name.to_owned()))
    }

    pub fn name(&self, u: NodeId) -> &str {
        &self.names[u.index()]
    }

    /// All nodes of the subtree rooted at `u`, in preorder (`u` first).
    pub fn subtree(&self, u: NodeId) -> &[NodeId] {
        let i = u.index();
        &self.preorder[self.enter[i] as usize..self.exit[i] as usize]
    }

    pub fn is_ancestor_or_self(&self, ancestor: NodeId, u: NodeId) -> bool {
        let (a, x) = (ancestor.index(), u.index());
        self.enter[a] <= self.enter[x] && self.exit[x] <= self.exit[a]
    }

    /// `u`, its parent, and so on up to the root.
    pub fn ancestors(&self, u: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::successors(Some(u), move |&v| self.parent(v))
    }
}

/// The private input: a non-negative count per leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafCounts {
    // Indexed by node; internal nodes stay at zero.
    values: Vec<u64>,
}

/// Direction of a single-unit neighbor step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Up,
    Down,
}

impl LeafCounts {
    pub fn zeros(tree: &TreeShape) -> Self {
        LeafCounts {
            values: vec![0; tree.len()],
        }
    }

    pub fn from_pairs<'a, I>(tree: &TreeShape, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, u64)>,
    {
        let mut counts = Self::zeros(tree);
        for (name, v) in pairs {
            counts.set(tree, tree.resolve(name)?, v)?;
        }
        Ok(counts)
    }

    /// Every leaf set to `value`.
    pub fn uniform(tree: &TreeShape, value: u64) -> Self {
        let mut counts = Self::zeros(tree);
        for &l in tree.leaves() {
            counts.values[l.index()] = value;
        }
        counts
    }

    pub fn set(&mut self, tree: &TreeShape, leaf: NodeId, value: u64) -> Result<()> {
        if !tree.is_leaf(leaf) {
            return Err(Error::NotALeaf(tree.name(leaf).to_owned()));
        }
        self.values[leaf.index()] = value;
        Ok(())
    }

    pub fn get(&self, leaf: NodeId) -> u64 {
        self.values[leaf.index()]
    }

    pub fn total(&self) -> u128 {
        self.values.iter().map(|&v| v as u128).sum()
    }

    pub fn l1_distance(&self, other: &LeafCounts) -> u128 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a.abs_diff(b) as u128)
            .sum()
    }

    /// A copy with `leaf` moved by exactly one unit.
    pub fn neighbor(&self, tree: &TreeShape, leaf: NodeId, step: Step) -> Result<LeafCounts> {
        if !tree.is_leaf(leaf) {
            return Err(Error::NotALeaf(tree.name(leaf).to_owned()));
        }
        let mut next = self.clone();
        let v = &mut next.values[leaf.index()];
        *v = match step {
            Step::Up => v
                .checked_add(1)
                .ok_or_else(|| Error::Overflow(tree.name(leaf).to_owned()))?,
            Step::Down => v
                .checked_sub(1)
                .ok_or_else(|| Error::CountUnderflow(tree.name(leaf).to_owned()))?,
        };
        Ok(next)
    }

    pub(crate) fn matches(&self, tree: &TreeShape) -> bool {
        self.values.len() == tree.len()
    }
}

/// Exact subtree sums `w_u`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeWeights(Vec<u64>);

impl NodeWeights {
    pub fn get(&self, u: NodeId) -> u64 {
        self.0[u.index()]
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn aggregate_exact(tree: &TreeShape, counts: &LeafCounts) -> Result<NodeWeights> {
    if !counts.matches(tree) {
        return Err(Error::param(
            "counts",
            counts.values.len() as f64,
            "built for a different tree",
        ));
    }
    let mut w = counts.values.clone();
    // Breadth-first ids: children always come after their parent.
    for i in (1..tree.len()).rev() {
        let p = tree.parent[i].expect("non-root has a parent").index();
        w[p] = w[p]
            .checked_add(w[i])
            .ok_or_else(|| Error::Overflow(tree.names[p].clone()))?;
    }
    Ok(NodeWeights(w))
}

/// A released (noisy) estimate per node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEstimates(Vec<f64>);

impl NodeEstimates {
    pub fn new(values: Vec<f64>) -> Self {
        NodeEstimates(values)
    }

    pub fn filled(tree: &TreeShape, value: f64) -> Self {
        NodeEstimates(vec![value; tree.len()])
    }

    pub fn exact(weights: &NodeWeights) -> Self {
        NodeEstimates(weights.0.iter().map(|&w| w as f64).collect())
    }

    pub fn get(&self, u: NodeId) -> f64 {
        self.0[u.index()]
    }

    pub fn set(&mut self, u: NodeId, value: f64) {
        self.0[u.index()] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn weights_by_name(tree: &TreeShape, w: &NodeWeights) -> Vec<(String, u64)> {
        tree.nodes()
            .map(|u| (tree.name(u).to_owned(), w.get(u)))
            .collect()
    }

    #[test]
    fn single_node_tree() {
        let t = TreeShape::from_parents([("r", None)]).unwrap();
        assert_eq!(t.depth(), 1);
        assert!(t.is_leaf(t.root()));
        let c = LeafCounts::from_pairs(&t, [("r", 5)]).unwrap();
        assert_eq!(aggregate_exact(&t, &c).unwrap().get(t.root()), 5);
    }

    #[test]
    fn binary_depth_two() {
        let t = TreeShape::complete_binary(2).unwrap();
        let c = LeafCounts::from_pairs(&t, [("n2", 1), ("n3", 2)]).unwrap();
        let w = aggregate_exact(&t, &c).unwrap();
        assert_eq!(
            weights_by_name(&t, &w),
            vec![("n1".into(), 3), ("n2".into(), 1), ("n3".into(), 2)]
        );
    }

    #[test]
    fn binary_depth_three_hand_sums() {
        let t = TreeShape::complete_binary(3).unwrap();
        let c = LeafCounts::from_pairs(&t, [("n4", 1), ("n5", 0), ("n6", 2), ("n7", 4)]).unwrap();
        let w = aggregate_exact(&t, &c).unwrap();
        assert_eq!(w.get(t.resolve("n2").unwrap()), 1);
        assert_eq!(w.get(t.resolve("n3").unwrap()), 6);
        assert_eq!(w.get(t.root()), 7);
    }

    #[test]
    fn unknown_leaf_rejected() {
        let t = TreeShape::complete_binary(2).unwrap();
        assert!(matches!(
            LeafCounts::from_pairs(&t, [("zz", 1)]),
            Err(Error::UnknownNode(_))
        ));
        assert!(matches!(
            LeafCounts::from_pairs(&t, [("n1", 1)]),
            Err(Error::NotALeaf(_))
        ));
    }

    #[test]
    fn overflow_is_checked() {
        let t = TreeShape::complete_binary(2).unwrap();
        let c = LeafCounts::from_pairs(&t, [("n2", u64::MAX), ("n3", 1)]).unwrap();
        assert!(matches!(aggregate_exact(&t, &c), Err(Error::Overflow(_))));
    }

    #[test]
    fn neighbor_steps() {
        let t = TreeShape::from_parents([("r", None), ("a", Some("r")), ("b", Some("r"))]).unwrap();
        let a = t.resolve("a").unwrap();
        let b = t.resolve("b").unwrap();

        let c = LeafCounts::from_pairs(&t, [("a", 3)]).unwrap();
        let up = c.neighbor(&t, a, Step::Up).unwrap();
        assert_eq!(up.get(a), 4);

        let zero = LeafCounts::zeros(&t);
        assert!(matches!(
            zero.neighbor(&t, a, Step::Down),
            Err(Error::CountUnderflow(_))
        ));

        let c = LeafCounts::from_pairs(&t, [("a", 3), ("b", 1)]).unwrap();
        let down = c.neighbor(&t, b, Step::Down).unwrap();
        assert_eq!((down.get(a), down.get(b)), (3, 0));
        assert_eq!(c.l1_distance(&down), 1);
    }

    #[test]
    fn depth_levels() {
        let t = TreeShape::complete_binary(3).unwrap();
        assert_eq!(t.nodes_at_depth(1).unwrap(), &[t.root()]);
        assert_eq!(t.nodes_at_depth(3).unwrap().len(), 4);
        assert!(matches!(
            t.nodes_at_depth(4),
            Err(Error::DepthOutOfRange { .. })
        ));
        assert!(t.nodes_at_depth(0).is_err());

        let p = TreeShape::path(4).unwrap();
        let lvl = p.nodes_at_depth(2).unwrap();
        assert_eq!(lvl.len(), 1);
        assert_eq!(p.name(lvl[0]), "p2");
        assert_eq!(p.parent(lvl[0]), Some(p.root()));
    }

    #[test]
    fn complete_binary_sizes() {
        let t = TreeShape::complete_binary(1).unwrap();
        assert_eq!(t.len(), 1);
        let t = TreeShape::complete_binary(3).unwrap();
        assert_eq!((t.len(), t.leaves().len()), (7, 4));
        let t = TreeShape::complete_binary(10).unwrap();
        assert_eq!(t.len(), 1023);
        assert!(t
            .nodes()
            .filter(|&u| !t.is_leaf(u))
            .all(|u| t.children(u).len() == 2));
        assert!(matches!(
            TreeShape::complete_binary(40),
            Err(Error::ResourceCap { .. })
        ));
        assert!(TreeShape::complete_binary(0).is_err());
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(
            TreeShape::from_parents(Vec::<(String, Option<String>)>::new()),
            Err(Error::NoRoot)
        ));
        assert!(matches!(
            TreeShape::from_parents([("a", Some("b")), ("b", Some("a"))]),
            Err(Error::Cycle(_))
        ));
        // A rooted component plus a detached loop.
        assert!(matches!(
            TreeShape::from_parents([("r", None), ("a", Some("b")), ("b", Some("a"))]),
            Err(Error::Cycle(_))
        ));
        assert!(matches!(
            TreeShape::from_parents([("r", None), ("s", None)]),
            Err(Error::MultipleRoots(_))
        ));
        assert!(matches!(
            TreeShape::from_parents([("r", None), ("r", Some("r"))]),
            Err(Error::DuplicateNode(_))
        ));
        assert!(matches!(
            TreeShape::from_parents([("r", None), ("a", Some("q"))]),
            Err(Error::UnknownParent { .. })
        ));
    }

    #[test]
    fn subtree_ranges() {
        let t = TreeShape::complete_binary(3).unwrap();
        let n2 = t.resolve("n2").unwrap();
        let names: Vec<_> = t.subtree(n2).iter().map(|&u| t.name(u)).collect();
        assert_eq!(names, ["n2", "n4", "n5"]);
        assert!(t.is_ancestor_or_self(t.root(), n2));
        assert!(!t.is_ancestor_or_self(n2, t.resolve("n6").unwrap()));
        assert_eq!(t.ancestors(t.resolve("n5").unwrap()).count(), 3);
    }

    /// Random tree from a parent sequence: node i > 0 hangs under some j < i.
    fn arb_tree() -> impl Strategy<Value = (TreeShape, Vec<u64>)> {
        prop::collection::vec(any::<prop::sample::Index>(), 0..40).prop_flat_map(|picks| {
            let mut entries = vec![("v0".to_string(), None)];
            for (i, pick) in picks.iter().enumerate() {
                let p = pick.index(i + 1);
                entries.push((format!("v{}", i + 1), Some(format!("v{p}"))));
            }
            let tree = TreeShape::from_parents(entries).unwrap();
            let n = tree.leaves().len();
            (Just(tree), prop::collection::vec(0u64..1000, n))
        })
    }

    proptest! {
        #[test]
        fn conservation_and_monotonicity((tree, vals) in arb_tree()) {
            let mut counts = LeafCounts::zeros(&tree);
            for (&l, &v) in tree.leaves().iter().zip(&vals) {
                counts.set(&tree, l, v).unwrap();
            }
            let w = aggregate_exact(&tree, &counts).unwrap();
            prop_assert_eq!(w.get(tree.root()) as u128, counts.total());
            for u in tree.nodes() {
                if let Some(p) = tree.parent(u) {
                    prop_assert!(w.get(p) >= w.get(u));
                    prop_assert_eq!(tree.depth_of(u), tree.depth_of(p) + 1);
                }
            }
        }

        #[test]
        fn unit_change_moves_exactly_the_ancestors((tree, vals) in arb_tree(), pick in any::<prop::sample::Index>()) {
            let mut counts = LeafCounts::zeros(&tree);
            for (&l, &v) in tree.leaves().iter().zip(&vals) {
                counts.set(&tree, l, v).unwrap();
            }
            let leaf = tree.leaves()[pick.index(tree.leaves().len())];
            let next = counts.neighbor(&tree, leaf, Step::Up).unwrap();
            let w0 = aggregate_exact(&tree, &counts).unwrap();
            let w1 = aggregate_exact(&tree, &next).unwrap();
            let mut changed = 0;
            for u in tree.nodes() {
                let diff = w1.get(u) - w0.get(u);
                prop_assert_eq!(diff == 1, tree.is_ancestor_or_self(u, leaf));
                changed += diff;
            }
            prop_assert_eq!(changed as usize, tree.depth_of(leaf));
            prop_assert!(changed as usize <= tree.depth());
        }
    }
}
