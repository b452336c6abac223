//! Brute-force oracles shared by the integration and acceptance suites.
//!
//! Everything here recomputes posterior quantities from first principles:
//! partitions are enumerated as explicit structures, latent configurations
//! are either enumerated literally (small grids) or summed per tree with no
//! sharing across trees, block sums come from direct summation over
//! locations, and the pruned-block likelihood is the literal product of
//! spike densities over a subtree. None of it touches the engine's recursion
//! over the shared node universe.

#![allow(dead_code)]

use std::collections::HashMap;
use warp_core::grid::{DyadicNode, Grid};
use warp_core::priors::HyperParams;
use warp_core::smc::WaveletFilter;
use warp_core::stats::{NodeSums, Observation};
use warp_core::tree::{RdpTree, TreeNode};

pub fn direct_sum(grid: &Grid, node: &DyadicNode, values: &[f64]) -> f64 {
    node.locations(grid)
        .iter()
        .map(|&l| values[l as usize])
        .sum()
}

/// Haar detail by direct summation over both children.
pub fn direct_w(grid: &Grid, node: &DyadicNode, d: usize, values: &[f64]) -> f64 {
    let (l, r) = node.children(grid, d).unwrap();
    (direct_sum(grid, &l, values) - direct_sum(grid, &r, values))
        / (node.size(grid) as f64).sqrt()
}

pub fn normal_pdf(x: f64, sigma: f64) -> f64 {
    (-0.5 * (x / sigma) * (x / sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// All fully refined partitions of the grid, as explicit tree structures.
pub fn enumerate_full_trees(grid: &Grid) -> Vec<RdpTree> {
    fn rec(grid: &Grid, node: &DyadicNode) -> Vec<TreeNode> {
        let div = node.divisible_dims(grid);
        if div.is_empty() {
            return vec![TreeNode::Leaf { pruned: false }];
        }
        let mut out = Vec::new();
        for d in div {
            let (l, r) = node.children(grid, d).unwrap();
            for lt in rec(grid, &l) {
                for rt in rec(grid, &r) {
                    out.push(TreeNode::Split {
                        dim: d,
                        left: Box::new(lt.clone()),
                        right: Box::new(rt.clone()),
                    });
                }
            }
        }
        out
    }
    rec(grid, &DyadicNode::root(grid))
        .into_iter()
        .map(RdpTree::new)
        .collect()
}

/// One internal node of an enumerated tree, preorder.
struct FlatNode {
    node: DyadicNode,
    id: u64,
    depth: u32,
    dim: usize,
    w: f64,
    m0: f64,
    m1: f64,
    /// product of spike densities over this node's whole internal subtree
    /// (the literal pruned-block likelihood)
    p0_prod: f64,
    /// preorder index just past this node's subtree
    next: usize,
    /// uniform split prior at this node
    lambda: f64,
    /// preorder indices of internal children (None when atomic)
    left_idx: Option<usize>,
    right_idx: Option<usize>,
    left_node: DyadicNode,
    right_node: DyadicNode,
}

fn flatten_tree(
    grid: &Grid,
    obs: &Observation,
    hyper: &HyperParams,
    tree: &RdpTree,
) -> Vec<FlatNode> {
    let mut out: Vec<FlatNode> = Vec::new();
    fn rec(
        grid: &Grid,
        values: &[f64],
        hyper: &HyperParams,
        node: &DyadicNode,
        t: &TreeNode,
        out: &mut Vec<FlatNode>,
    ) -> f64 {
        match t {
            TreeNode::Leaf { .. } => 1.0,
            TreeNode::Split { dim, left, right } => {
                let idx = out.len();
                let depth = node.depth();
                let w = direct_w(grid, node, *dim, values);
                let tau = hyper.tau_at(depth);
                let m0 = normal_pdf(w, hyper.sigma);
                let m1 = warp_core::priors::log_marginal_slab(w, tau, hyper.sigma, hyper.slab)
                    .unwrap()
                    .exp();
                let lambda = 1.0 / node.divisible_dims(grid).len() as f64;
                let (l, r) = node.children(grid, *dim).unwrap();
                out.push(FlatNode {
                    node: node.clone(),
                    id: node.id(grid),
                    depth,
                    dim: *dim,
                    w,
                    m0,
                    m1,
                    p0_prod: 0.0,
                    next: 0,
                    lambda,
                    left_idx: None,
                    right_idx: None,
                    left_node: l.clone(),
                    right_node: r.clone(),
                });
                let before_left = out.len();
                let pl = rec(grid, values, hyper, &l, left, out);
                let left_idx = (out.len() > before_left).then_some(before_left);
                let before_right = out.len();
                let pr = rec(grid, values, hyper, &r, right, out);
                let right_idx = (out.len() > before_right).then_some(before_right);
                let p0 = out[idx].m0 * pl * pr;
                out[idx].p0_prod = p0;
                out[idx].next = out.len();
                out[idx].left_idx = left_idx;
                out[idx].right_idx = right_idx;
                p0
            }
        }
    }
    rec(
        grid,
        obs.values(),
        hyper,
        &DyadicNode::root(grid),
        tree.root(),
        &mut out,
    );
    out
}

/// Posterior quantities accumulated by enumeration. All masses are joint
/// (unnormalized) weights; divide by `evidence` for probabilities.
#[derive(Default)]
pub struct OracleStats {
    pub evidence: f64,
    /// mass of {A in T, no ancestor pruned}
    pub reached: HashMap<u64, f64>,
    /// mass of {A in T, A is the highest pruned node on its branch}
    pub pruned: HashMap<u64, f64>,
    /// mass of {reached unpruned, split in d}
    pub split: HashMap<(u64, usize), f64>,
    /// mass of {reached unpruned, split in d, slab}
    pub slab: HashMap<(u64, usize), f64>,
}

impl OracleStats {
    pub fn eta_tilde(&self, id: u64) -> f64 {
        let pruned = self.pruned.get(&id).copied().unwrap_or(0.0);
        let reached = self.reached.get(&id).copied().unwrap_or(0.0);
        pruned / reached
    }

    pub fn lambda_tilde(&self, id: u64, d: usize, m: usize) -> f64 {
        let num = self.split.get(&(id, d)).copied().unwrap_or(0.0);
        let den: f64 = (0..m)
            .map(|dd| self.split.get(&(id, dd)).copied().unwrap_or(0.0))
            .sum();
        num / den
    }

    pub fn rho_tilde(&self, id: u64, d: usize) -> f64 {
        let num = self.slab.get(&(id, d)).copied().unwrap_or(0.0);
        let den = self.split.get(&(id, d)).copied().unwrap_or(0.0);
        num / den
    }
}

/// Literal enumeration of every (tree, pruning set, spike/slab assignment):
/// each configuration contributes one explicit product. Exponential; only for
/// the smallest grids.
pub fn op_oracle_flat(obs: &Observation, hyper: &HyperParams) -> OracleStats {
    let grid = obs.grid();
    let trees = enumerate_full_trees(grid);
    let mut stats = OracleStats::default();
    for tree in &trees {
        let nodes = flatten_tree(grid, obs, hyper, tree);
        let tree_prior: f64 = nodes.iter().map(|n| n.lambda).product();
        // role per internal node: 0 spike, 1 slab, 2 minimal pruned
        let mut roles = vec![0u8; nodes.len()];
        enumerate_configs(&nodes, hyper, 0, tree_prior, &mut roles, &mut stats);
    }
    stats
}

fn enumerate_configs(
    nodes: &[FlatNode],
    hyper: &HyperParams,
    idx: usize,
    weight: f64,
    roles: &mut Vec<u8>,
    stats: &mut OracleStats,
) {
    if idx == nodes.len() {
        stats.evidence += weight;
        // replay roles: a node is "reached" if no ancestor is pruned, which
        // the preorder recursion guarantees by skipping pruned subtrees
        let mut i = 0;
        while i < nodes.len() {
            let n = &nodes[i];
            *stats.reached.entry(n.id).or_default() += weight;
            if roles[i] == 2 {
                *stats.pruned.entry(n.id).or_default() += weight;
                i = n.next;
            } else {
                *stats.split.entry((n.id, n.dim)).or_default() += weight;
                if roles[i] == 1 {
                    *stats.slab.entry((n.id, n.dim)).or_default() += weight;
                }
                i += 1;
            }
        }
        return;
    }
    let n = &nodes[idx];
    let eta = hyper.eta_at(n.depth);
    let rho = hyper.rho_at(n.depth);
    // prune here: everything below contributes spike densities
    if eta > 0.0 {
        roles[idx] = 2;
        enumerate_configs(
            nodes,
            hyper,
            n.next,
            weight * eta * n.p0_prod,
            roles,
            stats,
        );
    }
    // spike
    roles[idx] = 0;
    enumerate_configs(
        nodes,
        hyper,
        idx + 1,
        weight * (1.0 - eta) * (1.0 - rho) * n.m0,
        roles,
        stats,
    );
    // slab
    if rho > 0.0 {
        roles[idx] = 1;
        enumerate_configs(
            nodes,
            hyper,
            idx + 1,
            weight * (1.0 - eta) * rho * n.m1,
            roles,
            stats,
        );
    }
    roles[idx] = 0;
}

/// Per-tree exact sums over latent configurations (no sharing across trees).
/// Handles grids where the flat enumeration is too large.
pub fn op_oracle_sumprod(obs: &Observation, hyper: &HyperParams) -> OracleStats {
    let grid = obs.grid();
    let trees = enumerate_full_trees(grid);
    let mut stats = OracleStats::default();
    for tree in &trees {
        let nodes = flatten_tree(grid, obs, hyper, tree);
        let tree_prior: f64 = nodes.iter().map(|n| n.lambda).product();
        // bottom-up subtree marginals given the node is reached unpruned
        let mut z = vec![1.0f64; nodes.len()];
        let mut m_mix = vec![1.0f64; nodes.len()];
        for i in (0..nodes.len()).rev() {
            let n = &nodes[i];
            let eta = hyper.eta_at(n.depth);
            let rho = hyper.rho_at(n.depth);
            m_mix[i] = rho * n.m1 + (1.0 - rho) * n.m0;
            // children in preorder: left internal child at i+1 when the left
            // subtree is non-atomic; z of atomic children is 1
            let (zl, zr) = children_z(&nodes[..], &z, i);
            z[i] = eta * n.p0_prod + (1.0 - eta) * m_mix[i] * zl * zr;
        }
        // top-down outside messages
        let mut outside = vec![0.0f64; nodes.len()];
        outside[0] = tree_prior;
        for i in 0..nodes.len() {
            let n = &nodes[i];
            let eta = hyper.eta_at(n.depth);
            let rho = hyper.rho_at(n.depth);
            let (zl, zr) = children_z(&nodes[..], &z, i);
            let (li, ri) = (nodes[i].left_idx, nodes[i].right_idx);
            if let Some(li) = li {
                outside[li] = outside[i] * (1.0 - eta) * m_mix[i] * zr;
            }
            if let Some(ri) = ri {
                outside[ri] = outside[i] * (1.0 - eta) * m_mix[i] * zl;
            }
            *stats.reached.entry(n.id).or_default() += outside[i] * z[i];
            *stats.pruned.entry(n.id).or_default() += outside[i] * eta * n.p0_prod;
            let split_mass = outside[i] * (1.0 - eta) * m_mix[i] * zl * zr;
            *stats.split.entry((n.id, n.dim)).or_default() += split_mass;
            *stats.slab.entry((n.id, n.dim)).or_default() +=
                outside[i] * (1.0 - eta) * rho * n.m1 * zl * zr;
        }
        stats.evidence += outside[0] * z[0];
    }
    stats
}

fn children_z(nodes: &[FlatNode], z: &[f64], i: usize) -> (f64, f64) {
    (
        nodes[i].left_idx.map_or(1.0, |j| z[j]),
        nodes[i].right_idx.map_or(1.0, |j| z[j]),
    )
}

/// Posterior-mean oracle: enumerate (tree, pruning antichain), weight each by
/// its exact marginal, and average the conditional means.
pub fn op_oracle_mean(obs: &Observation, hyper: &HyperParams) -> Vec<f64> {
    let grid = obs.grid();
    let trees = enumerate_full_trees(grid);
    let n = grid.len() as usize;
    let mut acc = vec![0.0f64; n];
    let mut total = 0.0f64;
    for tree in &trees {
        let nodes = flatten_tree(grid, obs, hyper, tree);
        let tree_prior: f64 = nodes.iter().map(|n| n.lambda).product();
        // enumerate pruning antichains over the preorder
        let mut pruned = vec![false; nodes.len()];
        enumerate_prunings(
            grid,
            obs,
            hyper,
            &nodes,
            0,
            tree_prior,
            &mut pruned,
            &mut acc,
            &mut total,
        );
    }
    acc.iter().map(|v| v / total).collect()
}

#[allow(clippy::too_many_arguments)]
fn enumerate_prunings(
    grid: &Grid,
    obs: &Observation,
    hyper: &HyperParams,
    nodes: &[FlatNode],
    idx: usize,
    weight: f64,
    pruned: &mut Vec<bool>,
    acc: &mut [f64],
    total: &mut f64,
) {
    if idx == nodes.len() {
        // conditional mean given (tree, pruning)
        let c_root = direct_sum(grid, &DyadicNode::root(grid), obs.values())
            / (grid.len() as f64).sqrt();
        let mut img = vec![0.0f64; acc.len()];
        fill_conditional(grid, hyper, nodes, 0, c_root, pruned, &mut img);
        for (a, v) in acc.iter_mut().zip(&img) {
            *a += weight * v;
        }
        *total += weight;
        return;
    }
    let n = &nodes[idx];
    let eta = hyper.eta_at(n.depth);
    let rho = hyper.rho_at(n.depth);
    if eta > 0.0 {
        pruned[idx] = true;
        enumerate_prunings(
            grid,
            obs,
            hyper,
            nodes,
            n.next,
            weight * eta * n.p0_prod,
            pruned,
            acc,
            total,
        );
        pruned[idx] = false;
    }
    let m_mix = rho * n.m1 + (1.0 - rho) * n.m0;
    enumerate_prunings(
        grid,
        obs,
        hyper,
        nodes,
        idx + 1,
        weight * (1.0 - eta) * m_mix,
        pruned,
        acc,
        total,
    );
}

/// Fill the conditional mean of a (tree, pruning) pair; returns the preorder
/// index just past the subtree of `idx`.
fn fill_conditional(
    grid: &Grid,
    hyper: &HyperParams,
    nodes: &[FlatNode],
    idx: usize,
    scale: f64,
    pruned: &[bool],
    img: &mut [f64],
) {
    let n = &nodes[idx];
    if pruned[idx] {
        let v = scale / (n.node.size(grid) as f64).sqrt();
        for loc in n.node.locations(grid) {
            img[loc as usize] = v;
        }
        return;
    }
    let rho = hyper.rho_at(n.depth);
    let m_mix = rho * n.m1 + (1.0 - rho) * n.m0;
    let rho_post = rho * n.m1 / m_mix;
    let tau = hyper.tau_at(n.depth);
    let mu = warp_core::priors::posterior_mean_mu1(n.w, tau, hyper.sigma, hyper.slab).unwrap();
    let z = rho_post * mu;
    let sq2 = std::f64::consts::SQRT_2;
    match n.left_idx {
        Some(li) => fill_conditional(grid, hyper, nodes, li, (scale + z) / sq2, pruned, img),
        None => img[grid.location_index(n.left_node.offsets()) as usize] = (scale + z) / sq2,
    }
    match n.right_idx {
        Some(ri) => fill_conditional(grid, hyper, nodes, ri, (scale - z) / sq2, pruned, img),
        None => img[grid.location_index(n.right_node.offsets()) as usize] = (scale - z) / sq2,
    }
}

/// Posterior distribution over the structures the sampler draws: trees
/// truncated at their highest pruned nodes, keyed by canonical JSON.
pub fn op_oracle_structures(obs: &Observation, hyper: &HyperParams) -> HashMap<String, f64> {
    let grid = obs.grid();
    let trees = enumerate_full_trees(grid);
    let mut masses: HashMap<String, f64> = HashMap::new();
    let mut total = 0.0;
    for tree in &trees {
        let nodes = flatten_tree(grid, obs, hyper, tree);
        let tree_prior: f64 = nodes.iter().map(|n| n.lambda).product();
        let mut pruned = vec![false; nodes.len()];
        collect_structures(
            grid, hyper, &nodes, tree, 0, tree_prior, &mut pruned, &mut masses, &mut total,
        );
    }
    for v in masses.values_mut() {
        *v /= total;
    }
    masses
}

#[allow(clippy::too_many_arguments)]
fn collect_structures(
    grid: &Grid,
    hyper: &HyperParams,
    nodes: &[FlatNode],
    tree: &RdpTree,
    idx: usize,
    weight: f64,
    pruned: &mut Vec<bool>,
    masses: &mut HashMap<String, f64>,
    total: &mut f64,
) {
    if idx == nodes.len() {
        let truncated = truncate_tree(tree, nodes, pruned);
        let key = serde_json::to_string(&truncated.to_json()).unwrap();
        *masses.entry(key).or_default() += weight;
        *total += weight;
        return;
    }
    let n = &nodes[idx];
    let eta = hyper.eta_at(n.depth);
    let rho = hyper.rho_at(n.depth);
    if eta > 0.0 {
        pruned[idx] = true;
        collect_structures(
            grid,
            hyper,
            nodes,
            tree,
            n.next,
            weight * eta * n.p0_prod,
            pruned,
            masses,
            total,
        );
        pruned[idx] = false;
    }
    let m_mix = rho * n.m1 + (1.0 - rho) * n.m0;
    collect_structures(
        grid,
        hyper,
        nodes,
        tree,
        idx + 1,
        weight * (1.0 - eta) * m_mix,
        pruned,
        masses,
        total,
    );
}

fn truncate_tree(tree: &RdpTree, nodes: &[FlatNode], pruned: &[bool]) -> RdpTree {
    fn rec(t: &TreeNode, nodes: &[FlatNode], pruned: &[bool], idx: &mut usize) -> TreeNode {
        match t {
            TreeNode::Leaf { .. } => TreeNode::Leaf { pruned: false },
            TreeNode::Split { dim, left, right } => {
                let my = *idx;
                *idx += 1;
                if pruned[my] {
                    // skip the subtree in preorder
                    *idx = nodes[my].next;
                    return TreeNode::Leaf { pruned: true };
                }
                let l = rec(left, nodes, pruned, idx);
                let r = rec(right, nodes, pruned, idx);
                TreeNode::Split {
                    dim: *dim,
                    left: Box::new(l),
                    right: Box::new(r),
                }
            }
        }
    }
    let mut idx = 0;
    RdpTree::new(rec(tree.root(), nodes, pruned, &mut idx))
}

/// Evidence of the independent-coefficient model by enumeration:
/// sum over trees of prior(T) times the product of per-node marginals.
pub fn theorem1_oracle(
    obs: &Observation,
    marginal: &dyn Fn(&Grid, &DyadicNode, usize) -> f64,
) -> f64 {
    let grid = obs.grid();
    let mut total = 0.0;
    for tree in enumerate_full_trees(grid) {
        let mut weight = 1.0f64;
        fn rec(
            grid: &Grid,
            node: &DyadicNode,
            t: &TreeNode,
            marginal: &dyn Fn(&Grid, &DyadicNode, usize) -> f64,
            weight: &mut f64,
        ) {
            if let TreeNode::Split { dim, left, right } = t {
                let lambda = 1.0 / node.divisible_dims(grid).len() as f64;
                *weight *= lambda * marginal(grid, node, *dim).exp();
                let (l, r) = node.children(grid, *dim).unwrap();
                rec(grid, &l, left, marginal, weight);
                rec(grid, &r, right, marginal, weight);
            }
        }
        rec(
            grid,
            &DyadicNode::root(grid),
            tree.root(),
            marginal,
            &mut weight,
        );
        total += weight;
    }
    total
}

/// Evidence of a K-state latent model by joint enumeration over
/// (tree, state assignment on internal nodes).
pub fn theorem2_oracle(
    obs: &Observation,
    k: usize,
    root_probs: &[f64],
    trans: &dyn Fn(u32, usize, usize) -> f64,
    marginal: &dyn Fn(&Grid, &DyadicNode, usize, usize) -> f64,
) -> f64 {
    let grid = obs.grid();
    let mut total = 0.0;
    for tree in enumerate_full_trees(grid) {
        // collect internal nodes with parent pointers, preorder
        struct Rec {
            node: DyadicNode,
            dim: usize,
            parent: Option<usize>,
        }
        let mut internals: Vec<Rec> = Vec::new();
        fn gather(
            grid: &Grid,
            node: &DyadicNode,
            t: &TreeNode,
            parent: Option<usize>,
            out: &mut Vec<Rec>,
        ) {
            if let TreeNode::Split { dim, left, right } = t {
                let idx = out.len();
                out.push(Rec {
                    node: node.clone(),
                    dim: *dim,
                    parent,
                });
                let (l, r) = node.children(grid, *dim).unwrap();
                gather(grid, &l, left, Some(idx), out);
                gather(grid, &r, right, Some(idx), out);
            }
        }
        gather(
            grid,
            &DyadicNode::root(grid),
            tree.root(),
            None,
            &mut internals,
        );
        let prior: f64 = internals
            .iter()
            .map(|r| 1.0 / r.node.divisible_dims(grid).len() as f64)
            .product();
        // enumerate state assignments
        let count = internals.len();
        let mut states = vec![0usize; count];
        loop {
            let mut weight = prior;
            for (i, r) in internals.iter().enumerate() {
                let s = states[i];
                let chain = match r.parent {
                    None => root_probs[s],
                    Some(p) => trans(r.node.depth(), states[p], s),
                };
                weight *= chain * marginal(grid, &r.node, r.dim, s).exp();
            }
            total += weight;
            // odometer over states
            let mut i = count;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                states[i] += 1;
                if states[i] < k {
                    break;
                }
                states[i] = 0;
                if i == 0 {
                    i = usize::MAX;
                    break;
                }
            }
            if i == usize::MAX || count == 0 {
                break;
            }
        }
        if count == 0 {
            total += prior;
        }
    }
    total
}

/// Reference recomputation of a particle's full coefficient state from its
/// public tree structure: frontier scale values from block sums, everything
/// above through the filter with wrap-around over the built row lengths.
pub fn reference_particle_coefficients(
    grid: &Grid,
    sums: &NodeSums,
    filter: &WaveletFilter,
    split_dims: &[Vec<u8>],
    node_ids: &[Vec<u64>],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let levels = node_ids.len();
    let mut c: Vec<Vec<f64>> = vec![Vec::new(); levels];
    let mut w: Vec<Vec<f64>> = vec![Vec::new(); levels];
    for lvl in (0..levels).rev() {
        let row_len = node_ids[lvl].len();
        if row_len == 0 {
            continue;
        }
        let expanded = split_dims[lvl].len();
        c[lvl] = vec![0.0; row_len];
        w[lvl] = vec![0.0; expanded];
        for pos in 0..row_len {
            if pos < expanded {
                let child_len = node_ids[lvl + 1].len();
                let mut nc = 0.0;
                let mut nw = 0.0;
                for t in 0..filter.support() {
                    let idx = (2 * pos + t) % child_len;
                    nc += filter.lowpass()[t] * c[lvl + 1][idx];
                    nw += filter.highpass()[t] * c[lvl + 1][idx];
                }
                c[lvl][pos] = nc;
                w[lvl][pos] = nw;
            } else {
                let node = DyadicNode::from_id(grid, node_ids[lvl][pos]);
                c[lvl][pos] =
                    sums.sum[node_ids[lvl][pos] as usize] / (node.size(grid) as f64).sqrt();
            }
        }
    }
    (c, w)
}

/// Evidence of the no-pruning target under an arbitrary filter by full
/// enumeration: every tree's complete coefficient state is rebuilt from
/// scratch.
pub fn basis_evidence_oracle(
    obs: &Observation,
    hyper: &HyperParams,
    filter: &WaveletFilter,
) -> f64 {
    use warp_core::priors::LevelSchedules;
    let grid = obs.grid();
    let sums = NodeSums::new(obs);
    let schedules = LevelSchedules::new(hyper, grid.depth());
    let mut total = 0.0;
    for tree in enumerate_full_trees(grid) {
        // build per-level ids and split dims by replay
        let depth = grid.depth() as usize;
        let mut node_ids: Vec<Vec<u64>> = vec![Vec::new(); depth + 1];
        let mut split_dims: Vec<Vec<u8>> = vec![Vec::new(); depth + 1];
        fn walk(
            grid: &Grid,
            node: &DyadicNode,
            t: &TreeNode,
            level: usize,
            node_ids: &mut [Vec<u64>],
            split_dims: &mut [Vec<u8>],
        ) {
            node_ids[level].push(node.id(grid));
            if let TreeNode::Split { dim, .. } = t {
                split_dims[level].push(*dim as u8);
            }
        }
        // breadth-first walk
        let mut frontier: Vec<(DyadicNode, &TreeNode)> =
            vec![(DyadicNode::root(grid), tree.root())];
        let mut level = 0usize;
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for (node, t) in &frontier {
                walk(grid, node, t, level, &mut node_ids, &mut split_dims);
                if let TreeNode::Split { dim, left, right } = t {
                    let (l, r) = node.children(grid, *dim).unwrap();
                    next.push((l, left.as_ref()));
                    next.push((r, right.as_ref()));
                }
            }
            frontier = next;
            level += 1;
        }
        let (_, w) = reference_particle_coefficients(grid, &sums, filter, &split_dims, &node_ids);
        let mut weight: f64 = node_ids
            .iter()
            .take(depth)
            .flat_map(|ids| ids.iter())
            .map(|&id| {
                let node = DyadicNode::from_id(grid, id);
                1.0 / node.divisible_dims(grid).len() as f64
            })
            .product();
        for lvl in 0..depth {
            for &wv in &w[lvl] {
                weight *= schedules.marginals[lvl].log_mixture(wv).0.exp();
            }
        }
        total += weight;
    }
    total
}

/// Cheap deterministic Gaussian noise for test fixtures.
pub fn noisy(obs: &Observation, sigma: f64, seed: u64) -> Observation {
    warp_core::synth::add_noise(obs, sigma, seed).unwrap()
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}
