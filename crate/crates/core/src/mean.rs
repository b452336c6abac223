//! Top-down inference products: the analytic posterior mean, exact posterior
//! tree sampling, Rao-Blackwellized estimation, and cycle spinning.
//!
//! The posterior-mean recursion runs top-down (coarse to fine) over the same
//! node universe the bottom-up engine filled, carrying three maps per node:
//! `psi0(A) = P(A in T, unpruned | y)`, `phi0(A) = E(c(A) 1{A in T, unpruned} | y)`
//! and `phi(A) = E(c(A) 1{A in T} | y)`. The reconstruction at the atoms is
//! exact; no Monte Carlo is involved. The root scale coefficient is the
//! observed one (it is invariant across partitions), so a constant image is
//! reproduced exactly.

use crate::engine::{PosteriorMaps, SplitPrior};
use crate::error::{Result, WarpError};
use crate::grid::{DyadicNode, Grid};
use crate::priors::{HyperParams, LevelSchedules};
use crate::stats::{NodeSums, Observation};
use crate::tree::{RdpTree, TreeNode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Exact posterior mean of the signal, one real per location.
pub fn posterior_mean(
    obs: &Observation,
    maps: &PosteriorMaps,
    sums: &NodeSums,
    hyper: &HyperParams,
    lambda: &SplitPrior,
) -> Result<Vec<f64>> {
    let grid = obs.grid();
    let m = grid.ndim();
    let count = grid.node_count() as usize;
    if maps.node_count != count || maps.ndim != m || maps.lambda_t.len() != count * m {
        return Err(WarpError::InvalidInput(
            "posterior maps do not match this observation (run the engine in full mode)".into(),
        ));
    }
    let schedules = LevelSchedules::new(hyper, grid.depth());
    let mut psi0 = vec![0.0f64; count];
    let mut phi0 = vec![0.0f64; count];
    let mut phi = vec![0.0f64; count];

    let eta_root = maps.eta_t[0];
    let c_root = sums.sum[0] / (grid.len() as f64).sqrt();
    psi0[0] = 1.0 - eta_root;
    phi0[0] = (1.0 - eta_root) * c_root;
    phi[0] = c_root;

    let strides = grid.node_strides();
    for depth in 1..=grid.depth() {
        for &ci in grid.classes_at_depth(depth) {
            let class = &grid.classes()[ci];
            let lm_parent = &schedules.marginals[depth as usize - 1];
            let inv_sqrt_parent = 1.0 / (2.0 * class.size as f64).sqrt();
            // uniform prior at the parent: divisible count gains d itself if d
            // is exhausted at this class
            let parent_div: Vec<f64> = class
                .parent_dims
                .iter()
                .map(|&d| {
                    let extra = if class.divisible.contains(&d) { 0 } else { 1 };
                    (class.divisible.len() + extra) as f64
                })
                .collect();
            let mut next_psi0 = vec![0.0f64; class.count as usize];
            let mut next_phi0 = vec![0.0f64; class.count as usize];
            let mut next_phi = vec![0.0f64; class.count as usize];
            let mut rank = 0usize;
            grid.for_each_node_in_class(class, |id, slots| {
                let idu = id as usize;
                let mut t_psi = 0.0;
                let mut t0 = 0.0;
                let mut t1 = 0.0;
                for (t, &d) in class.parent_dims.iter().enumerate() {
                    let stride = strides[d];
                    let s_d = slots[d];
                    let p_d = (s_d - 1) >> 1;
                    let parent = (idu as u64 - stride * (s_d - p_d)) as usize;
                    let left = parent + (stride * (p_d + 1)) as usize;
                    let right = left + stride as usize;
                    let w = (sums.sum[left] - sums.sum[right]) * inv_sqrt_parent;
                    let lam_post = maps.lambda_t[parent * m + d];
                    let rho_post = maps.rho_t[parent * m + d];
                    let mu = lm_parent.mu1(w);
                    let sign = if s_d & 1 == 1 { 1.0 } else { -1.0 };
                    let lam_prior = match lambda {
                        SplitPrior::Uniform => 1.0 / parent_div[t],
                        SplitPrior::Custom(f) => {
                            f(grid, &DyadicNode::from_id(grid, parent as u64))[d]
                        }
                    };
                    t_psi += psi0[parent] * lam_post;
                    t0 += lam_post * (phi0[parent] + sign * rho_post * mu * psi0[parent]);
                    t1 += (phi[parent] - phi0[parent]) * lam_prior;
                }
                let eta = maps.eta_t[idu];
                t0 /= SQRT_2;
                next_psi0[rank] = (1.0 - eta) * t_psi;
                next_phi0[rank] = (1.0 - eta) * t0;
                next_phi[rank] = t0 + t1 / SQRT_2;
                rank += 1;
            });
            let mut rank = 0usize;
            grid.for_each_node_in_class(class, |id, _| {
                psi0[id as usize] = next_psi0[rank];
                phi0[id as usize] = next_phi0[rank];
                phi[id as usize] = next_phi[rank];
                rank += 1;
            });
        }
    }

    // atoms in class sweep order are exactly row-major locations
    let mut image = vec![0.0f64; grid.len() as usize];
    let atomic_class = grid
        .classes_at_depth(grid.depth())
        .first()
        .map(|&ci| &grid.classes()[ci])
        .expect("grid has an atomic class");
    let mut loc = 0usize;
    grid.for_each_node_in_class(atomic_class, |id, _| {
        image[loc] = phi[id as usize];
        loc += 1;
    });
    Ok(image)
}

/// The three top-down maps at the root, exposed for diagnostics and tests.
pub fn mean_maps_root(maps: &PosteriorMaps, sums: &NodeSums, grid: &Grid) -> (f64, f64, f64) {
    let eta_root = maps.eta_t[0];
    let c_root = sums.sum[0] / (grid.len() as f64).sqrt();
    (1.0 - eta_root, (1.0 - eta_root) * c_root, c_root)
}

fn sample_tree_node<R: Rng>(
    grid: &Grid,
    maps: &PosteriorMaps,
    node: &DyadicNode,
    rng: &mut R,
) -> TreeNode {
    if node.is_atomic(grid) {
        return TreeNode::Leaf { pruned: false };
    }
    let id = node.id(grid);
    let eta = maps.eta_t[id as usize];
    if eta > 0.0 && rng.gen::<f64>() < eta {
        return TreeNode::Leaf { pruned: true };
    }
    // inverse-CDF draw over dimensions in index order
    let div = node.divisible_dims(grid);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut chosen = *div.last().unwrap();
    for &d in &div {
        acc += maps.lambda(id, d);
        if u < acc {
            chosen = d;
            break;
        }
    }
    let (l, r) = node.children(grid, chosen).unwrap();
    TreeNode::Split {
        dim: chosen,
        left: Box::new(sample_tree_node(grid, maps, &l, rng)),
        right: Box::new(sample_tree_node(grid, maps, &r, rng)),
    }
}

/// Draw `b` i.i.d. exact posterior partitions (with pruning markers). Draw `i`
/// uses RNG stream `i` of the seed, so any prefix is reproducible.
pub fn sample_posterior_trees(
    grid: &Grid,
    maps: &PosteriorMaps,
    b: usize,
    seed: u64,
) -> Vec<RdpTree> {
    (0..b)
        .map(|i| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            RdpTree::new(sample_tree_node(grid, maps, &DyadicNode::root(grid), &mut rng))
        })
        .collect()
}

/// Exact conditional mean of the signal given one sampled partition (and its
/// pruning markers): shrink each detail by its posterior slab weight, fill
/// pruned blocks with their running scale value.
pub fn tree_conditional_mean(
    grid: &Grid,
    maps: &PosteriorMaps,
    sums: &NodeSums,
    schedules: &LevelSchedules,
    tree: &RdpTree,
) -> Result<Vec<f64>> {
    let mut image = vec![0.0f64; grid.len() as usize];
    let root_scale = sums.sum[0] / (grid.len() as f64).sqrt();
    fn fill(
        grid: &Grid,
        maps: &PosteriorMaps,
        sums: &NodeSums,
        schedules: &LevelSchedules,
        node: &DyadicNode,
        t: &TreeNode,
        scale: f64,
        image: &mut [f64],
    ) -> Result<()> {
        match t {
            TreeNode::Leaf { pruned } => {
                if *pruned {
                    let v = scale / (node.size(grid) as f64).sqrt();
                    for loc in node.locations(grid) {
                        image[loc as usize] = v;
                    }
                } else {
                    if !node.is_atomic(grid) {
                        return Err(WarpError::NotRefined {
                            node: node.describe(grid),
                        });
                    }
                    image[grid.location_index(node.offsets()) as usize] = scale;
                }
                Ok(())
            }
            TreeNode::Split { dim, left, right } => {
                let id = node.id(grid);
                let (l, r) = node.children(grid, *dim)?;
                let w = (sums.sum[l.id(grid) as usize] - sums.sum[r.id(grid) as usize])
                    / (node.size(grid) as f64).sqrt();
                let mu = schedules.marginals[node.depth() as usize].mu1(w);
                let z = maps.rho(id, *dim) * mu;
                fill(grid, maps, sums, schedules, &l, left, (scale + z) / SQRT_2, image)?;
                fill(grid, maps, sums, schedules, &r, right, (scale - z) / SQRT_2, image)
            }
        }
    }
    fill(
        grid,
        maps,
        sums,
        schedules,
        &DyadicNode::root(grid),
        tree.root(),
        root_scale,
        &mut image,
    )?;
    Ok(image)
}

/// Rao-Blackwellized posterior mean: average of `tree_conditional_mean` over
/// `b` posterior draws. Returns the mean image and the per-pixel sample
/// variance of the tree-conditional means (for Monte Carlo error bars).
pub fn rao_blackwell_mean_with_variance(
    obs: &Observation,
    maps: &PosteriorMaps,
    sums: &NodeSums,
    hyper: &HyperParams,
    b: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if b == 0 {
        return Err(WarpError::InvalidInput("need at least one draw".into()));
    }
    let grid = obs.grid();
    let schedules = LevelSchedules::new(hyper, grid.depth());
    let n = grid.len() as usize;
    let mut mean = vec![0.0f64; n];
    let mut m2 = vec![0.0f64; n];
    for i in 0..b {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let tree = RdpTree::new(sample_tree_node(grid, maps, &DyadicNode::root(grid), &mut rng));
        let img = tree_conditional_mean(grid, maps, sums, &schedules, &tree)?;
        // Welford update
        let k = (i + 1) as f64;
        for (j, &v) in img.iter().enumerate() {
            let delta = v - mean[j];
            mean[j] += delta / k;
            m2[j] += delta * (v - mean[j]);
        }
    }
    let var: Vec<f64> = m2
        .iter()
        .map(|&s| if b > 1 { s / (b as f64 - 1.0) } else { 0.0 })
        .collect();
    Ok((mean, var))
}

pub fn rao_blackwell_mean(
    obs: &Observation,
    maps: &PosteriorMaps,
    sums: &NodeSums,
    hyper: &HyperParams,
    b: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(rao_blackwell_mean_with_variance(obs, maps, sums, hyper, b, seed)?.0)
}

/// Per-dimension shift steps for cycle spinning.
#[derive(Clone, Debug)]
pub struct ShiftSpec {
    pub steps: Vec<Vec<i64>>,
}

impl ShiftSpec {
    /// Defaults: steps -5..5 per dimension in 1D/2D (121 shifts in 2D),
    /// -2..2 per dimension in 3D and higher (125 shifts in 3D).
    pub fn default_for(grid: &Grid) -> Self {
        let r = if grid.ndim() <= 2 { 5 } else { 2 };
        Self::radius(grid, r)
    }

    pub fn radius(grid: &Grid, r: i64) -> Self {
        let steps = grid
            .dims()
            .iter()
            .map(|&n| {
                let r = r.min(n as i64 - 1);
                (-r..=r).collect()
            })
            .collect();
        ShiftSpec { steps }
    }

    pub fn single(grid: &Grid) -> Self {
        ShiftSpec {
            steps: vec![vec![0]; grid.ndim()],
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if self.steps.len() != grid.ndim() {
            return Err(WarpError::InvalidInput("shift arity mismatch".into()));
        }
        for (i, (steps, &n)) in self.steps.iter().zip(grid.dims()).enumerate() {
            if steps.is_empty() {
                return Err(WarpError::InvalidInput(format!("no steps in dimension {i}")));
            }
            if steps.iter().any(|&s| s.unsigned_abs() >= n) {
                return Err(WarpError::InvalidInput(format!(
                    "shift step exceeds the side length in dimension {i}"
                )));
            }
        }
        Ok(())
    }

    /// All shift vectors, in lexicographic order.
    pub fn vectors(&self) -> Vec<Vec<i64>> {
        let mut out = vec![Vec::new()];
        for dim_steps in &self.steps {
            let mut next = Vec::with_capacity(out.len() * dim_steps.len());
            for prefix in &out {
                for &s in dim_steps {
                    let mut v = prefix.clone();
                    v.push(s);
                    next.push(v);
                }
            }
            out = next;
        }
        out
    }
}

/// Denoise with cycle spinning: run the full pipeline on circularly shifted
/// copies of the input and average the unshifted reconstructions. The
/// hyperparameters are fitted once (by the caller) and shared across shifts.
/// Shifts are processed in `threads` deterministic chunks.
pub fn cycle_spin_denoise(
    obs: &Observation,
    hyper: &HyperParams,
    shifts: &ShiftSpec,
    threads: usize,
) -> Result<Vec<f64>> {
    shifts.validate(obs.grid())?;
    let vectors = shifts.vectors();
    let op = crate::engine::OpSpec::new(hyper.clone())?;
    let chunk_count = threads.max(1).min(vectors.len());
    let chunk_size = vectors.len().div_ceil(chunk_count);
    let chunks: Vec<&[Vec<i64>]> = vectors.chunks(chunk_size).collect();
    let partials: Vec<Result<Vec<f64>>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut acc = vec![0.0f64; obs.grid().len() as usize];
            for v in chunk.iter() {
                let shifted = obs.circular_shift(v);
                let sums = NodeSums::new(&shifted);
                let maps = crate::engine::run_op_with(
                    &shifted,
                    &op,
                    &sums,
                    crate::engine::OpMode::Full,
                    &SplitPrior::Uniform,
                )?;
                let img = posterior_mean(&shifted, &maps, &sums, hyper, &SplitPrior::Uniform)?;
                let neg: Vec<i64> = v.iter().map(|&s| -s).collect();
                let rec =
                    Observation::new(obs.grid().clone(), img)?.circular_shift(&neg);
                for (a, &r) in acc.iter_mut().zip(rec.values()) {
                    *a += r;
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![0.0f64; obs.grid().len() as usize];
    for p in partials {
        let p = p?;
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let scale = 1.0 / vectors.len() as f64;
    for t in total.iter_mut() {
        *t *= scale;
    }
    Ok(total)
}
