//! Recursive dyadic partition trees: sampling from the generative prior,
//! the induced vectorization permutation, and canonical JSON serialization.

use crate::error::{Result, WarpError};
use crate::grid::{DyadicNode, Grid};
use rand::Rng;
use serde_json::{json, Value};

/// A node of an RDP tree. Leaves are either atomic blocks or blocks marked
/// as pruned (declared constant; not refined further).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TreeNode {
    Leaf { pruned: bool },
    Split { dim: usize, left: Box<TreeNode>, right: Box<TreeNode> },
}

/// One recursive dyadic partition of a grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RdpTree {
    root: TreeNode,
}

impl RdpTree {
    pub fn new(root: TreeNode) -> Self {
        RdpTree { root }
    }

    pub fn root(&self) -> &TreeNode {
        &self.root
    }

    /// Sample a fully refined tree from the generative prior with uniform
    /// split-dimension selection over divisible dimensions.
    pub fn sample_prior<R: Rng>(grid: &Grid, rng: &mut R) -> RdpTree {
        fn rec<R: Rng>(grid: &Grid, node: &DyadicNode, rng: &mut R) -> TreeNode {
            let dims = node.divisible_dims(grid);
            if dims.is_empty() {
                return TreeNode::Leaf { pruned: false };
            }
            let d = dims[rng.gen_range(0..dims.len())];
            let (l, r) = node.children(grid, d).unwrap();
            TreeNode::Split {
                dim: d,
                left: Box::new(rec(grid, &l, rng)),
                right: Box::new(rec(grid, &r, rng)),
            }
        }
        RdpTree {
            root: rec(grid, &DyadicNode::root(grid), rng),
        }
    }

    /// Check structural validity against a grid: every split dimension must be
    /// divisible at its node and every unpruned leaf must be atomic.
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        fn rec(grid: &Grid, node: &DyadicNode, t: &TreeNode) -> Result<()> {
            match t {
                TreeNode::Leaf { pruned } => {
                    if !pruned && !node.is_atomic(grid) {
                        return Err(WarpError::NotRefined {
                            node: node.describe(grid),
                        });
                    }
                    Ok(())
                }
                TreeNode::Split { dim, left, right } => {
                    let (l, r) = node.children(grid, *dim)?;
                    rec(grid, &l, left)?;
                    rec(grid, &r, right)
                }
            }
        }
        rec(grid, &DyadicNode::root(grid), &self.root)
    }

    pub fn is_fully_refined(&self, grid: &Grid) -> bool {
        fn rec(t: &TreeNode) -> bool {
            match t {
                TreeNode::Leaf { pruned } => !pruned,
                TreeNode::Split { left, right, .. } => rec(left) && rec(right),
            }
        }
        self.validate(grid).is_ok() && rec(&self.root)
    }

    /// The permutation induced by a fully refined tree: `forward[s] = t(s)`
    /// maps a row-major location index to its vector position, where the bit
    /// of `t` at level `l` records the branch taken (left 0, right 1).
    pub fn permutation(&self, grid: &Grid) -> Result<Permutation> {
        let n = grid.len();
        let mut forward = vec![u64::MAX; n as usize];
        let depth = grid.depth();
        fn rec(
            grid: &Grid,
            node: &DyadicNode,
            t: &TreeNode,
            prefix: u64,
            depth_left: u32,
            forward: &mut [u64],
        ) -> Result<()> {
            match t {
                TreeNode::Leaf { pruned } => {
                    if *pruned || !node.is_atomic(grid) {
                        return Err(WarpError::NotRefined {
                            node: node.describe(grid),
                        });
                    }
                    let loc = grid.location_index(node.offsets());
                    forward[loc as usize] = prefix;
                    Ok(())
                }
                TreeNode::Split { dim, left, right } => {
                    let (l, r) = node.children(grid, *dim)?;
                    let bit = 1u64 << (depth_left - 1);
                    rec(grid, &l, left, prefix, depth_left - 1, forward)?;
                    rec(grid, &r, right, prefix | bit, depth_left - 1, forward)
                }
            }
        }
        rec(
            grid,
            &DyadicNode::root(grid),
            &self.root,
            0,
            depth,
            &mut forward,
        )?;
        let mut inverse = vec![0u64; n as usize];
        for (s, &t) in forward.iter().enumerate() {
            inverse[t as usize] = s as u64;
        }
        Ok(Permutation { forward, inverse })
    }

    /// Canonical JSON: splits are `{"dim": d, "left": ..., "right": ...}`,
    /// leaves are `{"leaf": true}` with `"pruned": true` added on pruned leaves.
    pub fn to_json(&self) -> Value {
        fn rec(t: &TreeNode) -> Value {
            match t {
                TreeNode::Leaf { pruned } => {
                    if *pruned {
                        json!({"leaf": true, "pruned": true})
                    } else {
                        json!({"leaf": true})
                    }
                }
                TreeNode::Split { dim, left, right } => {
                    json!({"dim": dim, "left": rec(left), "right": rec(right)})
                }
            }
        }
        rec(&self.root)
    }

    pub fn from_json(v: &Value) -> Result<RdpTree> {
        fn rec(v: &Value) -> Result<TreeNode> {
            let obj = v
                .as_object()
                .ok_or_else(|| WarpError::Format("tree node must be an object".into()))?;
            if obj.get("leaf").and_then(Value::as_bool) == Some(true) {
                let pruned = obj.get("pruned").and_then(Value::as_bool).unwrap_or(false);
                return Ok(TreeNode::Leaf { pruned });
            }
            let dim = obj
                .get("dim")
                .and_then(Value::as_u64)
                .ok_or_else(|| WarpError::Format("split node needs a dim".into()))? as usize;
            let left = rec(obj
                .get("left")
                .ok_or_else(|| WarpError::Format("split node needs left".into()))?)?;
            let right = rec(obj
                .get("right")
                .ok_or_else(|| WarpError::Format("split node needs right".into()))?)?;
            Ok(TreeNode::Split {
                dim,
                left: Box::new(left),
                right: Box::new(right),
            })
        }
        Ok(RdpTree { root: rec(v)? })
    }
}

/// A bijection between row-major location indices and vector positions.
pub struct Permutation {
    /// `forward[location] = position`
    pub forward: Vec<u64>,
    /// `inverse[position] = location`
    pub inverse: Vec<u64>,
}

impl Permutation {
    /// Gather the observation into vector order.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; values.len()];
        for (loc, &pos) in self.forward.iter().enumerate() {
            out[pos as usize] = values[loc];
        }
        out
    }

    /// Scatter a vector back to row-major location order.
    pub fn invert(&self, vector: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; vector.len()];
        for (loc, &pos) in self.forward.iter().enumerate() {
            out[loc] = vector[pos as usize];
        }
        out
    }
}
