//! Index space: the dyadic grid, the universe of canonical partition nodes,
//! and navigation between them.
//!
//! A node is addressed per dimension by a dyadic interval `(level, offset)`
//! standing for `[offset * 2^(J_i - level), (offset + 1) * 2^(J_i - level) - 1]`.
//! Each dimension contributes `2 * n_i - 1` interval slots laid out heap-style
//! (`slot = 2^level - 1 + offset`), and a node's flat id is the mixed-radix
//! combination of its per-dimension slots with the last dimension fastest.
//! This gives O(1) id arithmetic for children (`slot -> 2*slot+1, 2*slot+2`)
//! and parents (`slot -> (slot-1)/2`) without hashing.

use crate::error::{Result, WarpError};
use num_bigint::BigUint;
use std::collections::HashMap;

/// A dyadic grid: `m` dimensions with side lengths `n_i = 2^{J_i}`.
#[derive(Clone, Debug)]
pub struct Grid {
    dims: Vec<u64>,
    levels: Vec<u8>,
    depth: u32,
    n: u64,
    node_strides: Vec<u64>,
    pixel_strides: Vec<u64>,
    node_count: u64,
    classes: Vec<LevelClass>,
    classes_by_depth: Vec<Vec<usize>>,
}

/// One equivalence class of nodes sharing a level vector. All nodes in a class
/// have the same size, depth, divisible dimensions and split history.
#[derive(Clone, Debug)]
pub struct LevelClass {
    pub levels: Vec<u8>,
    pub depth: u32,
    /// Number of locations per node, `2^(J - depth)`.
    pub size: u64,
    /// Number of nodes in the class, `prod 2^{l_i}`.
    pub count: u64,
    /// Dimensions with `l_i < J_i`.
    pub divisible: Vec<usize>,
    /// Dimensions with `l_i > 0` (split at least once; the node has a parent there).
    pub parent_dims: Vec<usize>,
}

impl Grid {
    /// Build a grid from side lengths; every side must be a power of two.
    pub fn new(dims: &[u64]) -> Result<Self> {
        if dims.is_empty() {
            return Err(WarpError::InvalidInput(
                "grid needs at least one dimension".into(),
            ));
        }
        let mut levels = Vec::with_capacity(dims.len());
        for (i, &d) in dims.iter().enumerate() {
            if d == 0 || !d.is_power_of_two() {
                return Err(WarpError::NonDyadic { dim: i, size: d });
            }
            levels.push(d.trailing_zeros() as u8);
        }
        let depth: u32 = levels.iter().map(|&j| j as u32).sum();
        let n: u64 = dims.iter().product();
        let node_radix: Vec<u64> = dims.iter().map(|&d| 2 * d - 1).collect();
        let m = dims.len();
        let mut node_strides = vec![1u64; m];
        for i in (0..m.saturating_sub(1)).rev() {
            node_strides[i] = node_strides[i + 1] * node_radix[i + 1];
        }
        let mut pixel_strides = vec![1u64; m];
        for i in (0..m.saturating_sub(1)).rev() {
            pixel_strides[i] = pixel_strides[i + 1] * dims[i + 1];
        }
        let node_count: u64 = node_radix.iter().product();

        // Enumerate all level vectors, lexicographically within each depth.
        let mut classes = Vec::new();
        let mut cur = vec![0u8; m];
        'outer: loop {
            let d: u32 = cur.iter().map(|&l| l as u32).sum();
            let divisible: Vec<usize> = (0..m).filter(|&i| cur[i] < levels[i]).collect();
            let parent_dims: Vec<usize> = (0..m).filter(|&i| cur[i] > 0).collect();
            let count: u64 = cur.iter().map(|&l| 1u64 << l).product();
            classes.push(LevelClass {
                levels: cur.clone(),
                depth: d,
                size: 1u64 << (depth - d),
                count,
                divisible,
                parent_dims,
            });
            let mut i = m;
            loop {
                if i == 0 {
                    break 'outer;
                }
                i -= 1;
                if cur[i] < levels[i] {
                    cur[i] += 1;
                    for v in cur[i + 1..].iter_mut() {
                        *v = 0;
                    }
                    break;
                }
                cur[i] = 0;
            }
        }
        classes.sort_by(|a, b| (a.depth, a.levels.clone()).cmp(&(b.depth, b.levels.clone())));
        let mut classes_by_depth = vec![Vec::new(); depth as usize + 1];
        for (idx, c) in classes.iter().enumerate() {
            classes_by_depth[c.depth as usize].push(idx);
        }

        Ok(Grid {
            dims: dims.to_vec(),
            levels,
            depth,
            n,
            node_strides,
            pixel_strides,
            node_count,
            classes,
            classes_by_depth,
        })
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[u64] {
        &self.dims
    }

    /// Per-dimension maximum levels `J_i`.
    pub fn max_levels(&self) -> &[u8] {
        &self.levels
    }

    /// Total number of locations `n`.
    pub fn len(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Total depth `J = sum J_i`.
    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Cardinality of the node universe, `prod (2 n_i - 1)`.
    pub fn node_count(&self) -> u64 {
        self.node_count
    }

    pub fn node_strides(&self) -> &[u64] {
        &self.node_strides
    }

    pub fn pixel_strides(&self) -> &[u64] {
        &self.pixel_strides
    }

    pub fn classes(&self) -> &[LevelClass] {
        &self.classes
    }

    pub fn classes_at_depth(&self, depth: u32) -> &[usize] {
        &self.classes_by_depth[depth as usize]
    }

    /// Row-major flat index of a location.
    pub fn location_index(&self, coords: &[u64]) -> u64 {
        coords
            .iter()
            .zip(&self.pixel_strides)
            .map(|(&c, &s)| c * s)
            .sum()
    }

    /// Visit every node of a level class in lexicographic offset order.
    /// The callback receives the node's flat id and its per-dimension slots
    /// (`slot_i = 2^{l_i} - 1 + offset_i`).
    pub fn for_each_node_in_class<F: FnMut(u64, &[u64])>(&self, class: &LevelClass, f: F) {
        self.for_each_node_in_class_range(class, 0, class.count, f);
    }

    /// As `for_each_node_in_class`, but starting at rank `start` and visiting
    /// `len` nodes. Ranks follow lexicographic offset order; used to split a
    /// class across threads.
    pub fn for_each_node_in_class_range<F: FnMut(u64, &[u64])>(
        &self,
        class: &LevelClass,
        start: u64,
        len: u64,
        mut f: F,
    ) {
        if len == 0 {
            return;
        }
        let m = self.ndim();
        let mut offs = vec![0u64; m];
        let mut rem = start;
        for i in (0..m).rev() {
            let radix = 1u64 << class.levels[i];
            offs[i] = rem % radix;
            rem /= radix;
        }
        let mut slots: Vec<u64> = class
            .levels
            .iter()
            .zip(&offs)
            .map(|(&l, &o)| (1u64 << l) - 1 + o)
            .collect();
        let hi: Vec<u64> = class
            .levels
            .iter()
            .map(|&l| 2 * ((1u64 << l) - 1))
            .collect();
        let mut id: u64 = slots
            .iter()
            .zip(&self.node_strides)
            .map(|(&s, &st)| s * st)
            .sum();
        let mut done = 0u64;
        loop {
            f(id, &slots);
            done += 1;
            if done == len {
                return;
            }
            let mut i = m;
            loop {
                if i == 0 {
                    return;
                }
                i -= 1;
                if slots[i] < hi[i] {
                    slots[i] += 1;
                    id += self.node_strides[i];
                    break;
                }
                let span = slots[i] - ((1u64 << class.levels[i]) - 1);
                slots[i] -= span;
                id -= span * self.node_strides[i];
            }
        }
    }

    /// All nodes in ascending-depth (top-down) order.
    pub fn nodes_ascending(&self) -> impl Iterator<Item = DyadicNode> + '_ {
        self.classes.iter().flat_map(move |c| {
            let mut out = Vec::with_capacity(c.count as usize);
            self.for_each_node_in_class(c, |_, slots| {
                out.push(DyadicNode::from_slots(c, slots));
            });
            out
        })
    }

    /// All nodes in descending-depth (bottom-up) order.
    pub fn nodes_descending(&self) -> impl Iterator<Item = DyadicNode> + '_ {
        self.classes.iter().rev().flat_map(move |c| {
            let mut out = Vec::with_capacity(c.count as usize);
            self.for_each_node_in_class(c, |_, slots| {
                out.push(DyadicNode::from_slots(c, slots));
            });
            out
        })
    }

    /// Number of canonical recursive dyadic partitions of the grid, via the
    /// shape recursion `c(shape) = sum_d c(shape - e_d)^2`, `c(0,...,0) = 1`.
    /// Exact arbitrary-precision result; memoized on the sorted shape since
    /// counts depend only on shape, not position.
    pub fn count_rdp_trees(&self) -> BigUint {
        fn rec(shape: &mut Vec<u8>, memo: &mut HashMap<Vec<u8>, BigUint>) -> BigUint {
            if shape.iter().all(|&a| a == 0) {
                return BigUint::from(1u32);
            }
            let mut key = shape.clone();
            key.sort_unstable();
            if let Some(v) = memo.get(&key) {
                return v.clone();
            }
            let mut total = BigUint::from(0u32);
            for d in 0..shape.len() {
                if shape[d] > 0 {
                    shape[d] -= 1;
                    let c = rec(shape, memo);
                    shape[d] += 1;
                    total += &c * &c;
                }
            }
            memo.insert(key, total.clone());
            total
        }
        let mut shape: Vec<u8> = self.levels.clone();
        rec(&mut shape, &mut HashMap::new())
    }
}

/// One canonical partition block, addressed per dimension by `(level, offset)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicNode {
    levels: Vec<u8>,
    offsets: Vec<u64>,
}

impl DyadicNode {
    pub fn new(grid: &Grid, levels: Vec<u8>, offsets: Vec<u64>) -> Result<Self> {
        if levels.len() != grid.ndim() || offsets.len() != grid.ndim() {
            return Err(WarpError::InvalidInput("node arity mismatch".into()));
        }
        for i in 0..levels.len() {
            if levels[i] > grid.levels[i] || offsets[i] >= (1u64 << levels[i]) {
                return Err(WarpError::InvalidInput(format!(
                    "node out of range in dimension {i}"
                )));
            }
        }
        Ok(DyadicNode { levels, offsets })
    }

    pub fn root(grid: &Grid) -> Self {
        DyadicNode {
            levels: vec![0; grid.ndim()],
            offsets: vec![0; grid.ndim()],
        }
    }

    fn from_slots(class: &LevelClass, slots: &[u64]) -> Self {
        DyadicNode {
            levels: class.levels.clone(),
            offsets: slots
                .iter()
                .zip(&class.levels)
                .map(|(&s, &l)| s - ((1u64 << l) - 1))
                .collect(),
        }
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub fn offsets(&self) -> &[u64] {
        &self.offsets
    }

    pub fn depth(&self) -> u32 {
        self.levels.iter().map(|&l| l as u32).sum()
    }

    pub fn size(&self, grid: &Grid) -> u64 {
        1u64 << (grid.depth - self.depth())
    }

    pub fn is_atomic(&self, grid: &Grid) -> bool {
        self.size(grid) == 1
    }

    /// Dimensions in which the node spans at least two locations.
    pub fn divisible_dims(&self, grid: &Grid) -> Vec<usize> {
        (0..self.levels.len())
            .filter(|&i| self.levels[i] < grid.levels[i])
            .collect()
    }

    /// Dimensions split at least once (the node has a parent there).
    pub fn parent_dims(&self) -> Vec<usize> {
        (0..self.levels.len())
            .filter(|&i| self.levels[i] > 0)
            .collect()
    }

    /// Halve the node in dimension `d`.
    pub fn children(&self, grid: &Grid, d: usize) -> Result<(DyadicNode, DyadicNode)> {
        if d >= self.levels.len() || self.levels[d] >= grid.levels[d] {
            return Err(WarpError::NotDivisible {
                dim: d,
                node: self.describe(grid),
            });
        }
        let mut left = self.clone();
        let mut right = self.clone();
        left.levels[d] += 1;
        right.levels[d] += 1;
        left.offsets[d] *= 2;
        right.offsets[d] = right.offsets[d] * 2 + 1;
        Ok((left, right))
    }

    /// Inverse of `children` composed with side selection.
    pub fn parent(&self, grid: &Grid, d: usize) -> Result<DyadicNode> {
        if d >= self.levels.len() || self.levels[d] == 0 {
            return Err(WarpError::NoParent {
                dim: d,
                node: self.describe(grid),
            });
        }
        let mut p = self.clone();
        p.levels[d] -= 1;
        p.offsets[d] /= 2;
        Ok(p)
    }

    /// True if this node is the left child of its parent in dimension `d`.
    pub fn is_left_child(&self, d: usize) -> bool {
        self.offsets[d] % 2 == 0
    }

    /// Flat id in the grid's node universe.
    pub fn id(&self, grid: &Grid) -> u64 {
        self.levels
            .iter()
            .zip(&self.offsets)
            .zip(&grid.node_strides)
            .map(|((&l, &o), &s)| ((1u64 << l) - 1 + o) * s)
            .sum()
    }

    pub fn from_id(grid: &Grid, id: u64) -> Self {
        let m = grid.ndim();
        let mut levels = vec![0u8; m];
        let mut offsets = vec![0u64; m];
        let mut rem = id;
        for i in 0..m {
            let slot = rem / grid.node_strides[i];
            rem %= grid.node_strides[i];
            // invert heap indexing: slot = 2^l - 1 + o with 0 <= o < 2^l
            let l = 63 - (slot + 1).leading_zeros() as u64;
            levels[i] = l as u8;
            offsets[i] = slot + 1 - (1u64 << l);
        }
        DyadicNode { levels, offsets }
    }

    /// Inclusive per-dimension location bounds `[lo_i, hi_i]`.
    pub fn bounds(&self, grid: &Grid) -> Vec<(u64, u64)> {
        (0..self.levels.len())
            .map(|i| {
                let extent = grid.dims[i] >> self.levels[i];
                let lo = self.offsets[i] * extent;
                (lo, lo + extent - 1)
            })
            .collect()
    }

    /// Row-major flat indices of all locations in the node.
    pub fn locations(&self, grid: &Grid) -> Vec<u64> {
        let bounds = self.bounds(grid);
        let mut out = Vec::with_capacity(self.size(grid) as usize);
        let mut coord: Vec<u64> = bounds.iter().map(|&(lo, _)| lo).collect();
        'outer: loop {
            out.push(grid.location_index(&coord));
            let mut i = coord.len();
            loop {
                if i == 0 {
                    break 'outer;
                }
                i -= 1;
                if coord[i] < bounds[i].1 {
                    coord[i] += 1;
                    break;
                }
                coord[i] = bounds[i].0;
            }
        }
        out
    }

    pub fn describe(&self, grid: &Grid) -> String {
        let b = self.bounds(grid);
        b.iter()
            .map(|&(lo, hi)| format!("[{lo},{hi}]"))
            .collect::<Vec<_>>()
            .join("x")
    }
}
