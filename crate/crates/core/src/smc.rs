//! Sequential Monte Carlo for wavelet bases with support longer than Haar.
//!
//! The exact Haar posterior supplies the proposal over partitions; particles
//! are partial trees propagated breadth first, each carrying the coefficient
//! state of the target basis under its own vectorization with periodic
//! padding. Expanding one node changes only a sparse set of coefficients (at
//! most `2l - 1` per level for a support-`2l` filter), so weights are updated
//! from likelihood ratios over the changed positions only. Multinomial
//! resampling triggers when the effective sample size falls below a threshold
//! fraction; systematic resampling is available behind a flag.
//!
//! The target model here is the spike-and-slab regression without pruning;
//! proposals fitted with pruning enabled are still valid (the split maps are
//! conditional on not pruning), but the produced trees are always fully
//! refined.

use crate::engine::PosteriorMaps;
use crate::error::{Result, WarpError};
use crate::grid::{DyadicNode, Grid};
use crate::math::logsumexp;
use crate::priors::{HyperParams, LevelSchedules};
use crate::stats::NodeSums;
use crate::tree::{RdpTree, TreeNode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Orthonormal two-channel filter pair. `highpass` produces detail
/// coefficients, `lowpass` scale coefficients; both have the same even
/// support `2l`.
#[derive(Clone, Debug)]
pub struct WaveletFilter {
    highpass: Vec<f64>,
    lowpass: Vec<f64>,
}

impl WaveletFilter {
    pub fn new(highpass: Vec<f64>, lowpass: Vec<f64>) -> Result<Self> {
        let f = WaveletFilter { highpass, lowpass };
        f.validate()?;
        Ok(f)
    }

    /// Haar: details are (left - right) / sqrt(2).
    pub fn haar() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        WaveletFilter {
            highpass: vec![s, -s],
            lowpass: vec![s, s],
        }
    }

    /// Daubechies-4: scaling taps ((1 +- sqrt3), (3 +- sqrt3)) / (4 sqrt2),
    /// detail taps the usual alternating-flip of the scaling filter.
    pub fn d4() -> Self {
        let s3 = 3f64.sqrt();
        let z = 4.0 * 2f64.sqrt();
        let low = vec![(1.0 + s3) / z, (3.0 + s3) / z, (3.0 - s3) / z, (1.0 - s3) / z];
        let high = vec![low[3], -low[2], low[1], -low[0]];
        WaveletFilter {
            highpass: high,
            lowpass: low,
        }
    }

    /// Plain-text filter file: first line the support `2l`, second line the
    /// high-pass row, third line the low-pass row (whitespace separated).
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let support: usize = lines
            .next()
            .ok_or_else(|| WarpError::Format("empty filter file".into()))?
            .trim()
            .parse()
            .map_err(|_| WarpError::Format("bad filter support line".into()))?;
        let parse_row = |line: Option<&str>, name: &str| -> Result<Vec<f64>> {
            let row: std::result::Result<Vec<f64>, _> = line
                .ok_or_else(|| WarpError::Format(format!("missing {name} row")))?
                .split_whitespace()
                .map(str::parse)
                .collect();
            let row = row.map_err(|_| WarpError::Format(format!("bad {name} row")))?;
            if row.len() != support {
                return Err(WarpError::Format(format!(
                    "{name} row has {} taps, expected {support}",
                    row.len()
                )));
            }
            Ok(row)
        };
        let highpass = parse_row(lines.next(), "high-pass")?;
        let lowpass = parse_row(lines.next(), "low-pass")?;
        Self::new(highpass, lowpass)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "haar" => Ok(Self::haar()),
            "d4" => Ok(Self::d4()),
            path => {
                let text = std::fs::read_to_string(path)?;
                Self::from_text(&text)
            }
        }
    }

    pub fn support(&self) -> usize {
        self.lowpass.len()
    }

    pub fn half_support(&self) -> usize {
        self.support() / 2
    }

    pub fn highpass(&self) -> &[f64] {
        &self.highpass
    }

    pub fn lowpass(&self) -> &[f64] {
        &self.lowpass
    }

    pub fn validate(&self) -> Result<()> {
        if self.highpass.len() != self.lowpass.len()
            || self.highpass.is_empty()
            || self.highpass.len() % 2 != 0
        {
            return Err(WarpError::InvalidInput(
                "filter rows must share an even support".into(),
            ));
        }
        let hh: f64 = self.highpass.iter().map(|v| v * v).sum();
        let gg: f64 = self.lowpass.iter().map(|v| v * v).sum();
        let hg: f64 = self
            .highpass
            .iter()
            .zip(&self.lowpass)
            .map(|(a, b)| a * b)
            .sum();
        if (hh - 1.0).abs() > 1e-12 || (gg - 1.0).abs() > 1e-12 || hg.abs() > 1e-12 {
            return Err(WarpError::InvalidInput(format!(
                "filter is not orthonormal (|h|^2={hh}, |g|^2={gg}, <h,g>={hg})"
            )));
        }
        Ok(())
    }
}

/// One particle: a partial partition built breadth first, its coefficient
/// state under the target basis, and its running log weight.
#[derive(Clone, Debug)]
pub struct Particle {
    /// Split dimension of each expanded node, per level, in position order.
    split_dims: Vec<Vec<u8>>,
    /// Flat node ids of all built nodes, per level.
    node_ids: Vec<Vec<u64>>,
    /// Scale coefficients of all built nodes, per level.
    c: Vec<Vec<f64>>,
    /// Detail coefficients of expanded nodes, per level.
    w: Vec<Vec<f64>>,
    pub log_weight: f64,
}

/// Diagnostics of one expansion move.
pub struct ExpandOutcome {
    /// Sum over changed coefficients of log M_new - log M_old (the target
    /// likelihood ratio of the move).
    pub log_likelihood_ratio: f64,
    /// Largest number of value-changed coefficients on any single level.
    pub max_changed_per_level: usize,
}

impl Particle {
    pub fn new(grid: &Grid, sums: &NodeSums) -> Particle {
        let depth = grid.depth() as usize;
        let mut node_ids = vec![Vec::new(); depth + 1];
        let mut c = vec![Vec::new(); depth + 1];
        node_ids[0].push(0);
        c[0].push(sums.sum[0] / (grid.len() as f64).sqrt());
        Particle {
            split_dims: vec![Vec::new(); depth + 1],
            node_ids,
            c,
            w: vec![Vec::new(); depth + 1],
            log_weight: 0.0,
        }
    }

    pub fn split_dims(&self) -> &[Vec<u8>] {
        &self.split_dims
    }

    pub fn node_ids(&self) -> &[Vec<u64>] {
        &self.node_ids
    }

    pub fn scale_coefficients(&self) -> &[Vec<f64>] {
        &self.c
    }

    pub fn detail_coefficients(&self) -> &[Vec<f64>] {
        &self.w
    }

    /// Expand the node at `(level, pos)` in dimension `dim`, append its
    /// children, refresh the affected coefficients and return the target
    /// likelihood ratio of the move.
    pub fn expand(
        &mut self,
        grid: &Grid,
        sums: &NodeSums,
        filter: &WaveletFilter,
        schedules: &LevelSchedules,
        level: usize,
        pos: usize,
        dim: usize,
    ) -> Result<ExpandOutcome> {
        debug_assert_eq!(self.split_dims[level].len(), pos);
        let id = self.node_ids[level][pos];
        let node = DyadicNode::from_id(grid, id);
        let (lchild, rchild) = node.children(grid, dim)?;
        let child_size_sqrt = ((lchild.size(grid)) as f64).sqrt();
        let lid = lchild.id(grid);
        let rid = rchild.id(grid);
        self.split_dims[level].push(dim as u8);
        self.node_ids[level + 1].push(lid);
        self.node_ids[level + 1].push(rid);
        self.c[level + 1].push(sums.sum[lid as usize] / child_size_sqrt);
        self.c[level + 1].push(sums.sum[rid as usize] / child_size_sqrt);

        let half = filter.half_support();
        let support = filter.support();
        let mut log_ratio = 0.0;
        let mut max_changed = 1usize; // the new detail coefficient itself

        // Refresh the last `l` expanded positions at this level: they read the
        // new children or wrapped around the previous end of the child row.
        let child_len = self.c[level + 1].len();
        let mut changed_c: Vec<usize> = Vec::new();
        let mut touched_w = 1usize;
        let first = pos.saturating_sub(half - 1);
        for p in first..=pos {
            let mut nc = 0.0;
            let mut nw = 0.0;
            for t in 0..support {
                let idx = (2 * p + t) % child_len;
                nc += filter.lowpass[t] * self.c[level + 1][idx];
                nw += filter.highpass[t] * self.c[level + 1][idx];
            }
            let lm = &schedules.marginals[level];
            if p == pos {
                // frontier node becomes internal: its detail enters the likelihood
                self.w[level].push(nw);
                log_ratio += lm.log_mixture(nw).0;
                if self.c[level][p] != nc {
                    self.c[level][p] = nc;
                    changed_c.push(p);
                }
            } else {
                let old_w = self.w[level][p];
                if old_w != nw {
                    log_ratio += lm.log_mixture(nw).0 - lm.log_mixture(old_w).0;
                    self.w[level][p] = nw;
                    touched_w += 1;
                }
                if self.c[level][p] != nc {
                    self.c[level][p] = nc;
                    changed_c.push(p);
                }
            }
        }
        max_changed = max_changed.max(touched_w);
        debug_assert!(touched_w <= support - 1);

        // Propagate scale changes upward; rows above the frontier are complete.
        let mut lvl = level;
        while lvl > 0 && !changed_c.is_empty() {
            let child_row_len = self.c[lvl].len();
            let parent_count = self.split_dims[lvl - 1].len();
            let mut candidates: Vec<usize> = Vec::new();
            for &q in &changed_c {
                for t in 0..support {
                    let posn = (q as i64 - t as i64).rem_euclid(child_row_len as i64) as usize;
                    if posn % 2 == 0 {
                        let parent = posn / 2;
                        if parent < parent_count {
                            candidates.push(parent);
                        }
                    }
                }
            }
            candidates.sort_unstable();
            candidates.dedup();
            let mut next_changed = Vec::new();
            let mut level_w = 0usize;
            for p in candidates {
                let mut nc = 0.0;
                let mut nw = 0.0;
                for t in 0..support {
                    let idx = (2 * p + t) % child_row_len;
                    nc += filter.lowpass[t] * self.c[lvl][idx];
                    nw += filter.highpass[t] * self.c[lvl][idx];
                }
                let lm = &schedules.marginals[lvl - 1];
                if self.w[lvl - 1][p] != nw {
                    log_ratio += lm.log_mixture(nw).0 - lm.log_mixture(self.w[lvl - 1][p]).0;
                    self.w[lvl - 1][p] = nw;
                    level_w += 1;
                }
                if self.c[lvl - 1][p] != nc {
                    self.c[lvl - 1][p] = nc;
                    next_changed.push(p);
                }
            }
            max_changed = max_changed.max(level_w);
            debug_assert!(
                level_w <= support - 1,
                "level {} changed {} coefficients, support {}",
                lvl - 1,
                level_w,
                support
            );
            changed_c = next_changed;
            lvl -= 1;
        }

        Ok(ExpandOutcome {
            log_likelihood_ratio: log_ratio,
            max_changed_per_level: max_changed,
        })
    }

    /// Rebuild the final partition as a tree (valid once fully propagated).
    pub fn to_tree(&self, grid: &Grid) -> RdpTree {
        fn rec(p: &Particle, grid: &Grid, level: usize, pos: usize) -> TreeNode {
            if level == grid.depth() as usize {
                return TreeNode::Leaf { pruned: false };
            }
            TreeNode::Split {
                dim: p.split_dims[level][pos] as usize,
                left: Box::new(rec(p, grid, level + 1, 2 * pos)),
                right: Box::new(rec(p, grid, level + 1, 2 * pos + 1)),
            }
        }
        RdpTree::new(rec(self, grid, 0, 0))
    }

    /// Conditional posterior mean of the signal given this particle's
    /// partition: shrink every detail, synthesize, undo the vectorization.
    pub fn conditional_mean(
        &self,
        grid: &Grid,
        filter: &WaveletFilter,
        schedules: &LevelSchedules,
    ) -> Vec<f64> {
        let depth = grid.depth() as usize;
        let mut cur = vec![self.c[0][0]];
        for level in 0..depth {
            let row = &self.w[level];
            let next_len = 2 * cur.len();
            let mut next = vec![0.0f64; next_len];
            let lm = &schedules.marginals[level];
            for (k, (&s, &wv)) in cur.iter().zip(row).enumerate() {
                let (_, rho_post) = lm.log_mixture(wv);
                let z = rho_post * lm.mu1(wv);
                for t in 0..filter.support() {
                    let idx = (2 * k + t) % next_len;
                    next[idx] += filter.lowpass[t] * s + filter.highpass[t] * z;
                }
            }
            cur = next;
        }
        let mut image = vec![0.0f64; grid.len() as usize];
        for (posn, &id) in self.node_ids[depth].iter().enumerate() {
            let node = DyadicNode::from_id(grid, id);
            image[grid.location_index(node.offsets()) as usize] = cur[posn];
        }
        image
    }
}

#[derive(Clone, Debug)]
pub struct SmcOptions {
    pub particles: usize,
    /// Resample when ESS < ess_threshold * particles.
    pub ess_threshold: f64,
    pub systematic_resampling: bool,
    pub seed: u64,
}

impl Default for SmcOptions {
    fn default() -> Self {
        SmcOptions {
            particles: 10,
            ess_threshold: 0.1,
            systematic_resampling: false,
            seed: 0,
        }
    }
}

pub struct SmcResult {
    pub particles: Vec<Particle>,
    /// Normalized weights, summing to one.
    pub weights: Vec<f64>,
    pub log_evidence: f64,
    pub resamples: usize,
    pub max_changed_per_level: usize,
}

/// Run the particle filter. The proposal maps come from the exact Haar
/// engine on the same observation; `hyper` gives the target model's spike,
/// slab and noise schedules (pruning is not part of the target).
pub fn smc_run(
    grid: &Grid,
    maps: &PosteriorMaps,
    sums: &NodeSums,
    hyper: &HyperParams,
    filter: &WaveletFilter,
    opts: &SmcOptions,
) -> Result<SmcResult> {
    if opts.particles < 1 {
        return Err(WarpError::InvalidInput("need at least one particle".into()));
    }
    if !(opts.ess_threshold > 0.0 && opts.ess_threshold <= 1.0) {
        return Err(WarpError::InvalidInput(
            "ESS threshold must lie in (0, 1]".into(),
        ));
    }
    if maps.lambda_t.is_empty() {
        return Err(WarpError::InvalidInput(
            "proposal maps were built in evidence-only mode".into(),
        ));
    }
    filter.validate()?;
    hyper.validate()?;
    let schedules = LevelSchedules::new(hyper, grid.depth());
    let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
    let i_count = opts.particles;
    let mut particles: Vec<Particle> = (0..i_count).map(|_| Particle::new(grid, sums)).collect();
    let mut resamples = 0usize;
    let mut max_changed = 0usize;

    for level in 0..grid.depth() as usize {
        for pos in 0..(1usize << level) {
            for particle in particles.iter_mut() {
                let id = particle.node_ids[level][pos];
                let node = DyadicNode::from_id(grid, id);
                let div = node.divisible_dims(grid);
                // proposal draw from the posterior split map, dimension order
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut dim = *div.last().unwrap();
                for &d in &div {
                    acc += maps.lambda(id, d);
                    if u < acc {
                        dim = d;
                        break;
                    }
                }
                let lam_prior = 1.0 / div.len() as f64;
                let lam_prop = maps.lambda(id, dim).max(f64::MIN_POSITIVE);
                let outcome =
                    particle.expand(grid, sums, filter, &schedules, level, pos, dim)?;
                particle.log_weight +=
                    lam_prior.ln() - lam_prop.ln() + outcome.log_likelihood_ratio;
                max_changed = max_changed.max(outcome.max_changed_per_level);
            }
            // normalize and test the effective sample size
            let logs: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
            let log_w = logsumexp(&logs);
            if !log_w.is_finite() {
                return Err(WarpError::WeightCollapse {
                    node: format!("level {level}, position {pos}"),
                });
            }
            let log_sq = logsumexp(&logs.iter().map(|l| 2.0 * l).collect::<Vec<f64>>());
            let ess = (2.0 * log_w - log_sq).exp();
            if ess < opts.ess_threshold * i_count as f64 && i_count > 1 {
                let weights: Vec<f64> = logs.iter().map(|l| (l - log_w).exp()).collect();
                let picks = if opts.systematic_resampling {
                    systematic_resample(&weights, &mut rng)
                } else {
                    multinomial_resample(&weights, &mut rng)
                };
                let reset = log_w - (i_count as f64).ln();
                particles = picks
                    .into_iter()
                    .map(|i| {
                        let mut p = particles[i].clone();
                        p.log_weight = reset;
                        p
                    })
                    .collect();
                resamples += 1;
            }
        }
    }

    let logs: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
    let log_w = logsumexp(&logs);
    if !log_w.is_finite() {
        return Err(WarpError::WeightCollapse {
            node: "final".into(),
        });
    }
    let weights: Vec<f64> = logs.iter().map(|l| (l - log_w).exp()).collect();
    Ok(SmcResult {
        particles,
        weights,
        log_evidence: log_w - (i_count as f64).ln(),
        resamples,
        max_changed_per_level: max_changed,
    })
}

fn multinomial_resample<R: Rng>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, &w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    return i;
                }
            }
            n - 1
        })
        .collect()
}

fn systematic_resample<R: Rng>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let step = 1.0 / n as f64;
    let start: f64 = rng.gen::<f64>() * step;
    let mut out = Vec::with_capacity(n);
    let mut acc = weights[0];
    let mut i = 0;
    for k in 0..n {
        let u = start + k as f64 * step;
        while u >= acc && i + 1 < n {
            i += 1;
            acc += weights[i];
        }
        out.push(i);
    }
    out
}

/// Denoise under a non-Haar basis: per cycle-spin shift, fit nothing new;
/// reuse the given hyperparameters (pruning disabled), run the Haar engine
/// for proposals, run the particle filter, average the particle-conditional
/// means under their weights, then unshift and average across shifts.
pub fn smc_denoise(
    obs: &crate::stats::Observation,
    hyper: &HyperParams,
    filter: &WaveletFilter,
    opts: &SmcOptions,
    shifts: &crate::mean::ShiftSpec,
    threads: usize,
) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    shifts.validate(obs.grid())?;
    let mut target = hyper.clone();
    target.eta0 = 0.0;
    let op = crate::engine::OpSpec::new(target.clone())?;
    let vectors = shifts.vectors();
    let chunk_count = threads.max(1).min(vectors.len());
    let chunk_size = vectors.len().div_ceil(chunk_count);
    let chunks: Vec<(usize, &[Vec<i64>])> = vectors
        .chunks(chunk_size)
        .enumerate()
        .collect();
    let partials: Vec<Result<Vec<f64>>> = chunks
        .par_iter()
        .map(|(chunk_idx, chunk)| {
            let schedules = LevelSchedules::new(&target, obs.grid().depth());
            let mut acc = vec![0.0f64; obs.grid().len() as usize];
            for (j, v) in chunk.iter().enumerate() {
                let shifted = obs.circular_shift(v);
                let sums = NodeSums::new(&shifted);
                let maps = crate::engine::run_op_with(
                    &shifted,
                    &op,
                    &sums,
                    crate::engine::OpMode::Full,
                    &crate::engine::SplitPrior::Uniform,
                )?;
                let shift_opts = SmcOptions {
                    seed: opts
                        .seed
                        .wrapping_add((chunk_idx * chunk_size + j) as u64),
                    ..opts.clone()
                };
                let result = smc_run(obs.grid(), &maps, &sums, &target, filter, &shift_opts)?;
                let mut img = vec![0.0f64; acc.len()];
                for (particle, &weight) in result.particles.iter().zip(&result.weights) {
                    let cm = particle.conditional_mean(obs.grid(), filter, &schedules);
                    for (a, &b) in img.iter_mut().zip(&cm) {
                        *a += weight * b;
                    }
                }
                let neg: Vec<i64> = v.iter().map(|&s| -s).collect();
                let rec = crate::stats::Observation::new(obs.grid().clone(), img)?
                    .circular_shift(&neg);
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
