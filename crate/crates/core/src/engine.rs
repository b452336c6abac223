//! Bottom-up exact posterior recursions over the node universe.
//!
//! Three engines share the same sweep structure (nodes grouped by depth,
//! deepest first, with a barrier between depths):
//!
//! - `run_theorem1`: independent-coefficient models with an arbitrary
//!   per-(node, dimension) marginal evaluator.
//! - `run_theorem2`: K-state Markov-tree latent models with per-state
//!   marginal evaluators and per-level transition matrices.
//! - `run_op`: the optimized spike-and-slab engine with optional pruning;
//!   the production path for denoising. Zero pruning probability recovers
//!   the independent-shrinkage model exactly.
//!
//! Everything is carried in log space; the evidence is the root value of the
//! recursion. Within a depth level node computations are independent and are
//! chunked across threads; results land in disjoint slots of dense per-node
//! arrays indexed by flat node id.

use crate::error::{Result, WarpError};
use crate::grid::{DyadicNode, Grid};
use crate::math::{logsumexp2, LN_2PI};
use crate::priors::{HyperParams, LevelSchedules};
use crate::stats::{centered_ss_checked, NodeSums, Observation};
use rayon::prelude::*;
use std::sync::Mutex;

/// Split-dimension prior: uniform over divisible dimensions by default, with a
/// per-node override hook for research use.
pub enum SplitPrior<'a> {
    Uniform,
    Custom(&'a (dyn Fn(&Grid, &DyadicNode) -> Vec<f64> + Sync)),
}

impl SplitPrior<'_> {
    /// Log prior selection probabilities aligned with `divisible`.
    pub fn log_lambda(&self, grid: &Grid, node: &DyadicNode, divisible: &[usize]) -> Vec<f64> {
        match self {
            SplitPrior::Uniform => {
                let v = -(divisible.len() as f64).ln();
                vec![v; divisible.len()]
            }
            SplitPrior::Custom(f) => {
                let probs = f(grid, node);
                divisible
                    .iter()
                    .map(|&d| if probs[d] > 0.0 { probs[d].ln() } else { f64::NEG_INFINITY })
                    .collect()
            }
        }
    }
}

/// Controls whether the per-(node, dimension) posterior maps are stored or
/// only the evidence is needed (hyperparameter search).
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum OpMode {
    EvidenceOnly,
    Full,
}

/// Spike-and-slab model with optional pruning. The latent structure is
/// equivalent to a three-state Markov tree (slab, spike, pruned) whose
/// per-level transition matrix is exposed for the generic engine.
#[derive(Clone, Debug)]
pub struct OpSpec {
    pub hyper: HyperParams,
}

impl OpSpec {
    pub fn new(hyper: HyperParams) -> Result<Self> {
        hyper.validate()?;
        Ok(OpSpec { hyper })
    }

    /// Transition matrix for a child node at `depth`; rows are the parent
    /// state, columns the child state, states ordered (slab, spike, pruned).
    /// The pruned state is absorbing.
    pub fn transition_matrix(&self, depth: u32) -> [[f64; 3]; 3] {
        let rho = self.hyper.rho_at(depth);
        let eta = self.hyper.eta_at(depth);
        let row = [rho * (1.0 - eta), (1.0 - rho) * (1.0 - eta), eta];
        [row, row, [0.0, 0.0, 1.0]]
    }

    /// Root state distribution: prune with probability eta_0, otherwise the
    /// spike/slab draw at depth 0.
    pub fn root_distribution(&self) -> [f64; 3] {
        let rho = self.hyper.rho_at(0);
        let eta = self.hyper.eta_at(0);
        [rho * (1.0 - eta), (1.0 - rho) * (1.0 - eta), eta]
    }
}

/// Posterior maps from the bottom-up recursion, indexed by flat node id.
/// `lambda_t` and `rho_t` are `node_count * ndim` row-major and empty in
/// evidence-only mode.
pub struct PosteriorMaps {
    pub ndim: usize,
    pub node_count: usize,
    /// log Psi(A): marginal likelihood of the data in A given A is reached
    /// unpruned (log Phi(A) when pruning is disabled).
    pub log_psi: Vec<f64>,
    /// Posterior pruning probability of A given A is reached unpruned.
    pub eta_t: Vec<f64>,
    /// Posterior split-dimension probabilities given A is not pruned.
    pub lambda_t: Vec<f64>,
    /// Posterior slab probability of the coefficient at (A, d).
    pub rho_t: Vec<f64>,
    /// log Psi at the root: the model evidence.
    pub log_evidence: f64,
}

impl PosteriorMaps {
    pub fn lambda(&self, id: u64, d: usize) -> f64 {
        self.lambda_t[id as usize * self.ndim + d]
    }
    pub fn rho(&self, id: u64, d: usize) -> f64 {
        self.rho_t[id as usize * self.ndim + d]
    }
}

#[derive(Clone, Copy)]
struct RawSlice(*mut f64);
// Writers touch disjoint indices within a depth level; readers only see slots
// finished behind the level barrier.
unsafe impl Send for RawSlice {}
unsafe impl Sync for RawSlice {}
impl RawSlice {
    #[inline(always)]
    unsafe fn write(&self, i: usize, v: f64) {
        *self.0.add(i) = v;
    }
}

fn record_error(cell: &Mutex<Option<WarpError>>, e: WarpError) {
    let mut guard = cell.lock().unwrap();
    if guard.is_none() {
        *guard = Some(e);
    }
}

/// The spike-and-slab + optional-pruning engine. Fills the posterior maps
/// bottom-up and returns them with the evidence.
pub fn run_op(obs: &Observation, op: &OpSpec) -> Result<PosteriorMaps> {
    let sums = NodeSums::new(obs);
    run_op_with(obs, op, &sums, OpMode::Full, &SplitPrior::Uniform)
}

pub fn run_op_with(
    obs: &Observation,
    op: &OpSpec,
    sums: &NodeSums,
    mode: OpMode,
    lambda: &SplitPrior,
) -> Result<PosteriorMaps> {
    op.hyper.validate()?;
    let grid = obs.grid();
    let m = grid.ndim();
    let count = grid.node_count() as usize;
    let schedules = LevelSchedules::new(&op.hyper, grid.depth());
    let sigma = op.hyper.sigma;
    let log_sigma_term = LN_2PI + 2.0 * sigma.ln();
    let inv_2s2 = 0.5 / (sigma * sigma);

    let mut log_psi = vec![0.0f64; count];
    let mut eta_t = vec![0.0f64; count];
    let full = mode == OpMode::Full;
    let mut lambda_t = vec![0.0f64; if full { count * m } else { 0 }];
    let mut rho_t = vec![0.0f64; if full { count * m } else { 0 }];

    let psi_ptr = RawSlice(log_psi.as_mut_ptr());
    let eta_ptr = RawSlice(eta_t.as_mut_ptr());
    let lam_ptr = RawSlice(lambda_t.as_mut_ptr());
    let rho_ptr = RawSlice(rho_t.as_mut_ptr());
    let error_cell: Mutex<Option<WarpError>> = Mutex::new(None);

    let strides = grid.node_strides();
    for depth in (0..=grid.depth()).rev() {
        for &ci in grid.classes_at_depth(depth) {
            let class = &grid.classes()[ci];
            if class.size == 1 {
                // log Psi = 0 at atoms; posterior pruning equals the prior there.
                let eta_atom = schedules.eta[depth as usize];
                grid.for_each_node_in_class(class, |id, _| unsafe {
                    psi_ptr.write(id as usize, 0.0);
                    eta_ptr.write(id as usize, eta_atom);
                });
                continue;
            }
            let lm = &schedules.marginals[depth as usize];
            let eta = schedules.eta[depth as usize];
            let log_eta = if eta > 0.0 { eta.ln() } else { f64::NEG_INFINITY };
            let log_1meta = if eta < 1.0 { (1.0 - eta).ln() } else { f64::NEG_INFINITY };
            let ndiv = class.divisible.len();
            let uniform_log_lambda = -(ndiv as f64).ln();
            let inv_sqrt_size = 1.0 / (class.size as f64).sqrt();
            let size_f = class.size as f64;
            let p0_const = -0.5 * (size_f - 1.0) * log_sigma_term;

            let body = |id: u64, slots: &[u64]| {
                let idu = id as usize;
                let mut log_s = [f64::NEG_INFINITY; 16];
                let custom_lambda = match lambda {
                    SplitPrior::Uniform => None,
                    SplitPrior::Custom(_) => Some(lambda.log_lambda(
                        grid,
                        &DyadicNode::from_id(grid, id),
                        &class.divisible,
                    )),
                };
                let mut hi = f64::NEG_INFINITY;
                for (t, &d) in class.divisible.iter().enumerate() {
                    let stride = strides[d];
                    let left = (id + stride * (slots[d] + 1)) as usize;
                    let right = left + stride as usize;
                    let w = (sums.sum[left] - sums.sum[right]) * inv_sqrt_size;
                    let (log_m, rho_post) = lm.log_mixture(w);
                    let ll = custom_lambda
                        .as_ref()
                        .map_or(uniform_log_lambda, |v| v[t]);
                    let ls = ll + log_m + log_psi[left] + log_psi[right];
                    log_s[t] = ls;
                    if ls > hi {
                        hi = ls;
                    }
                    if full {
                        unsafe { rho_ptr.write(idu * m + d, rho_post) };
                    }
                }
                let mut acc = 0.0;
                for v in log_s.iter().take(ndiv) {
                    acc += (v - hi).exp();
                }
                let split_total = hi + acc.ln();

                let (lp, et) = if eta > 0.0 {
                    let ss = match centered_ss_checked(
                        sums.sum[idu],
                        sums.sumsq[idu],
                        size_f,
                        || DyadicNode::from_id(grid, id).describe(grid),
                    ) {
                        Ok(v) => v,
                        Err(e) => {
                            record_error(&error_cell, e);
                            0.0
                        }
                    };
                    let log_p0 = p0_const - ss * inv_2s2;
                    let total = logsumexp2(log_1meta + split_total, log_eta + log_p0);
                    (total, (log_eta + log_p0 - total).exp())
                } else {
                    (split_total, 0.0)
                };
                if !lp.is_finite() {
                    record_error(
                        &error_cell,
                        WarpError::NonFinite {
                            node: DyadicNode::from_id(grid, id).describe(grid),
                            what: format!("log marginal likelihood ({lp})"),
                        },
                    );
                }
                unsafe {
                    psi_ptr.write(idu, lp);
                    eta_ptr.write(idu, et);
                }
                if full {
                    for (t, &d) in class.divisible.iter().enumerate() {
                        let v = if split_total == f64::NEG_INFINITY {
                            // fully pruned: report the prior
                            custom_lambda
                                .as_ref()
                                .map_or(uniform_log_lambda, |l| l[t])
                                .exp()
                        } else {
                            (log_s[t] - split_total).exp()
                        };
                        unsafe { lam_ptr.write(idu * m + d, v) };
                    }
                }
            };

            let threads = rayon::current_num_threads();
            if threads > 1 && class.count >= 8192 {
                let chunk = class.count.div_ceil(threads as u64 * 4);
                let ranges: Vec<(u64, u64)> = (0..class.count)
                    .step_by(chunk as usize)
                    .map(|s| (s, chunk.min(class.count - s)))
                    .collect();
                ranges.into_par_iter().for_each(|(start, len)| {
                    grid.for_each_node_in_class_range(class, start, len, body);
                });
            } else {
                grid.for_each_node_in_class(class, body);
            }
            if let Some(e) = error_cell.lock().unwrap().take() {
                return Err(e);
            }
        }
    }

    let log_evidence = log_psi[0];
    Ok(PosteriorMaps {
        ndim: m,
        node_count: count,
        log_psi,
        eta_t,
        lambda_t,
        rho_t,
        log_evidence,
    })
}

/// Independent-coefficient engine with an arbitrary marginal evaluator
/// (log scale). Returns maps with zero pruning probabilities.
pub fn run_theorem1(
    obs: &Observation,
    lambda: &SplitPrior,
    marginal: &(dyn Fn(&Grid, &DyadicNode, usize) -> f64 + Sync),
) -> Result<PosteriorMaps> {
    let grid = obs.grid();
    let m = grid.ndim();
    let count = grid.node_count() as usize;
    let mut log_phi = vec![0.0f64; count];
    let mut lambda_t = vec![0.0f64; count * m];

    for depth in (0..=grid.depth()).rev() {
        for &ci in grid.classes_at_depth(depth) {
            let class = &grid.classes()[ci];
            if class.size == 1 {
                continue;
            }
            let mut err = None;
            grid.for_each_node_in_class(class, |id, slots| {
                if err.is_some() {
                    return;
                }
                let node = DyadicNode::from_id(grid, id);
                let log_lam = lambda.log_lambda(grid, &node, &class.divisible);
                let mut log_s = vec![f64::NEG_INFINITY; class.divisible.len()];
                for (t, &d) in class.divisible.iter().enumerate() {
                    let stride = grid.node_strides()[d];
                    let left = (id + stride * (slots[d] + 1)) as usize;
                    let right = left + stride as usize;
                    log_s[t] =
                        log_lam[t] + marginal(grid, &node, d) + log_phi[left] + log_phi[right];
                }
                let total = crate::math::logsumexp(&log_s);
                if !total.is_finite() {
                    err = Some(WarpError::NonFinite {
                        node: node.describe(grid),
                        what: format!("log marginal likelihood ({total})"),
                    });
                    return;
                }
                log_phi[id as usize] = total;
                for (t, &d) in class.divisible.iter().enumerate() {
                    lambda_t[id as usize * m + d] = (log_s[t] - total).exp();
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
        }
    }

    let log_evidence = log_phi[0];
    Ok(PosteriorMaps {
        ndim: m,
        node_count: count,
        log_psi: log_phi,
        eta_t: vec![0.0; count],
        lambda_t,
        rho_t: vec![0.0; count * m],
        log_evidence,
    })
}

/// K-state Markov-tree latent specification for the generic engine.
/// `trans_log[j]` is the row-major log transition matrix for child nodes at
/// depth `j >= 1`; the root state is drawn from `root_log_probs`.
pub struct MarkovTreeSpec<'a> {
    pub k: usize,
    pub root_log_probs: Vec<f64>,
    pub trans_log: Vec<Vec<f64>>,
    #[allow(clippy::type_complexity)]
    pub marginal: &'a (dyn Fn(&Grid, &DyadicNode, usize, usize) -> f64 + Sync),
}

impl MarkovTreeSpec<'_> {
    pub fn validate(&self, depth: u32) -> Result<()> {
        let close = |s: f64| (s - 1.0).abs() <= 1e-12;
        let root_sum: f64 = self.root_log_probs.iter().map(|&p| p.exp()).sum();
        if self.root_log_probs.len() != self.k || !close(root_sum) {
            return Err(WarpError::InvalidInput(
                "root state distribution must sum to 1".into(),
            ));
        }
        if self.trans_log.len() < depth as usize + 1 {
            return Err(WarpError::InvalidInput(format!(
                "need transition matrices for depths 1..={depth}"
            )));
        }
        for (j, mat) in self.trans_log.iter().enumerate().skip(1) {
            if mat.len() != self.k * self.k {
                return Err(WarpError::InvalidInput(format!(
                    "transition matrix at depth {j} has wrong shape"
                )));
            }
            for row in 0..self.k {
                let s: f64 = (0..self.k).map(|c| mat[row * self.k + c].exp()).sum();
                if !close(s) {
                    return Err(WarpError::InvalidInput(format!(
                        "transition row {row} at depth {j} sums to {s}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Posterior maps of the K-state engine.
pub struct MarkovMaps {
    pub k: usize,
    pub ndim: usize,
    /// `log Phi_s(A)` indexed `id * k + s`: likelihood of the data in A given
    /// A in the tree with parent state s.
    pub log_phi: Vec<f64>,
    /// Posterior state transitions `P(S_A = s' | S_parent = s, ...)`,
    /// indexed `(id * k + s) * k + s'`.
    pub trans_post: Vec<f64>,
    /// Posterior split probabilities `P(D_A = d | S_A = s', ...)`,
    /// indexed `(id * k + s') * m + d`.
    pub split_post: Vec<f64>,
    /// Posterior root-state distribution.
    pub root_post: Vec<f64>,
    pub log_evidence: f64,
}

/// The general latent-state engine. States are conditioned on the parent's
/// state through per-level transitions; a single state recovers `run_theorem1`.
pub fn run_theorem2(
    obs: &Observation,
    lambda: &SplitPrior,
    mt: &MarkovTreeSpec,
) -> Result<MarkovMaps> {
    let grid = obs.grid();
    let m = grid.ndim();
    let k = mt.k;
    mt.validate(grid.depth().saturating_sub(1))?;
    let count = grid.node_count() as usize;
    let mut log_phi = vec![0.0f64; count * k];
    let mut trans_post = vec![0.0f64; count * k * k];
    let mut split_post = vec![0.0f64; count * k * m];
    let mut root_inner = vec![f64::NEG_INFINITY; k];

    for depth in (0..=grid.depth()).rev() {
        for &ci in grid.classes_at_depth(depth) {
            let class = &grid.classes()[ci];
            let mut err = None;
            grid.for_each_node_in_class(class, |id, slots| {
                if err.is_some() {
                    return;
                }
                let idu = id as usize;
                if class.size == 1 {
                    // no coefficient: posterior transitions equal the prior
                    if depth > 0 {
                        let mat = &mt.trans_log[depth as usize];
                        for s in 0..k {
                            for sp in 0..k {
                                trans_post[(idu * k + s) * k + sp] = mat[s * k + sp].exp();
                            }
                        }
                    }
                    return;
                }
                let node = DyadicNode::from_id(grid, id);
                let log_lam = lambda.log_lambda(grid, &node, &class.divisible);
                // inner(d, s') = log lambda_d + log M_d^{(s')} + log Phi_{s'}(l) + log Phi_{s'}(r)
                let ndiv = class.divisible.len();
                let mut inner = vec![f64::NEG_INFINITY; ndiv * k];
                for (t, &d) in class.divisible.iter().enumerate() {
                    let stride = grid.node_strides()[d];
                    let left = (id + stride * (slots[d] + 1)) as usize;
                    let right = left + stride as usize;
                    for sp in 0..k {
                        inner[t * k + sp] = log_lam[t]
                            + (mt.marginal)(grid, &node, d, sp)
                            + log_phi[left * k + sp]
                            + log_phi[right * k + sp];
                    }
                }
                // inner_s(s') = LSE over d
                let mut inner_s = vec![f64::NEG_INFINITY; k];
                for sp in 0..k {
                    let vals: Vec<f64> = (0..ndiv).map(|t| inner[t * k + sp]).collect();
                    inner_s[sp] = crate::math::logsumexp(&vals);
                    for (t, &d) in class.divisible.iter().enumerate() {
                        split_post[(idu * k + sp) * m + d] =
                            (inner[t * k + sp] - inner_s[sp]).exp();
                    }
                }
                if depth == 0 {
                    root_inner.copy_from_slice(&inner_s);
                    // root "Phi" rows: evidence for every incoming state
                    let vals: Vec<f64> = (0..k)
                        .map(|sp| mt.root_log_probs[sp] + inner_s[sp])
                        .collect();
                    let total = crate::math::logsumexp(&vals);
                    for s in 0..k {
                        log_phi[idu * k + s] = total;
                        for sp in 0..k {
                            trans_post[(idu * k + s) * k + sp] = (vals[sp] - total).exp();
                        }
                    }
                    if !total.is_finite() {
                        err = Some(WarpError::NonFinite {
                            node: node.describe(grid),
                            what: format!("log marginal likelihood ({total})"),
                        });
                    }
                    return;
                }
                let mat = &mt.trans_log[depth as usize];
                for s in 0..k {
                    let vals: Vec<f64> = (0..k)
                        .map(|sp| mat[s * k + sp] + inner_s[sp])
                        .collect();
                    let total = crate::math::logsumexp(&vals);
                    if !total.is_finite() {
                        err = Some(WarpError::NonFinite {
                            node: node.describe(grid),
                            what: format!("log Phi_{s} ({total})"),
                        });
                        return;
                    }
                    log_phi[idu * k + s] = total;
                    for sp in 0..k {
                        trans_post[(idu * k + s) * k + sp] = (vals[sp] - total).exp();
                    }
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
        }
    }

    let log_evidence = log_phi[0];
    let root_post = (0..k)
        .map(|sp| (mt.root_log_probs[sp] + root_inner[sp] - log_evidence).exp())
        .collect();
    Ok(MarkovMaps {
        k,
        ndim: m,
        log_phi,
        trans_post,
        split_post,
        root_post,
        log_evidence,
    })
}

/// One grid point of the empirical-Bayes search.
#[derive(Clone, Debug)]
pub struct EvidenceRow {
    pub hyper: HyperParams,
    pub log_evidence: f64,
    pub selected: bool,
}

/// Candidate hyperparameter grid. The defaults are a deliberately coarse net;
/// the evidence surface is flat enough that a small set suffices.
#[derive(Clone, Debug)]
pub struct HyperGrid {
    pub slab: SlabFamily,
    pub alphas: Vec<f64>,
    pub tau0s: Vec<f64>,
    pub betas: Vec<f64>,
    pub cs: Vec<f64>,
    pub eta0s: Vec<f64>,
}

use crate::priors::SlabFamily;

impl HyperGrid {
    pub fn default_for(slab: SlabFamily) -> Self {
        let (alphas, tau0s) = match slab {
            // the quasi-Cauchy slab has no scale parameter
            SlabFamily::QuasiCauchy => (vec![0.0], vec![1.0]),
            // alpha = 0 (depth-constant slab scale) and wide tau0 matter for
            // sharp discontinuities at deep levels; C > 1 keeps the slab
            // probability saturated over the first ~log2(C)/beta levels
            _ => (
                vec![0.0, 0.5, 1.0, 2.0],
                vec![1.0, 16.0, 64.0, 256.0, 1024.0, 4096.0],
            ),
        };
        HyperGrid {
            slab,
            alphas,
            tau0s,
            betas: vec![0.5, 1.0],
            cs: vec![0.5, 1.0, 4.0, 8.0],
            eta0s: vec![0.0, 0.1, 0.3, 0.5],
        }
    }

    /// Candidates in deterministic nesting order (alpha, tau0, beta, C, eta0);
    /// argmax ties break toward the earliest candidate.
    pub fn candidates(&self, sigma: f64) -> Vec<HyperParams> {
        let mut out = Vec::new();
        for &alpha in &self.alphas {
            for &tau0 in &self.tau0s {
                for &beta in &self.betas {
                    for &c in &self.cs {
                        for &eta0 in &self.eta0s {
                            out.push(HyperParams {
                                slab: self.slab,
                                alpha,
                                tau0,
                                beta,
                                c,
                                eta0,
                                sigma,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Maximize the marginal likelihood over a candidate grid. Returns the argmax
/// (first in grid order on ties) and the full evidence table.
pub fn grid_search_mmle(
    obs: &Observation,
    grid_spec: &HyperGrid,
    sigma: f64,
    sums: &NodeSums,
) -> Result<(HyperParams, Vec<EvidenceRow>)> {
    let candidates = grid_spec.candidates(sigma);
    if candidates.is_empty() {
        return Err(WarpError::InvalidInput("empty hyperparameter grid".into()));
    }
    let evidences: Vec<Result<f64>> = candidates
        .par_iter()
        .map(|h| {
            let op = OpSpec::new(h.clone())?;
            Ok(run_op_with(obs, &op, sums, OpMode::EvidenceOnly, &SplitPrior::Uniform)?
                .log_evidence)
        })
        .collect();
    let mut rows = Vec::with_capacity(candidates.len());
    for (h, ev) in candidates.into_iter().zip(evidences) {
        rows.push(EvidenceRow {
            hyper: h,
            log_evidence: ev?,
            selected: false,
        });
    }
    let mut best = 0;
    for (i, row) in rows.iter().enumerate() {
        if row.log_evidence > rows[best].log_evidence {
            best = i;
        }
    }
    rows[best].selected = true;
    Ok((rows[best].hyper.clone(), rows))
}
