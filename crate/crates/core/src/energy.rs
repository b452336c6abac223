//! Energy-concentration analysis: how many sorted squared detail coefficients
//! a transform needs to reach a given fraction of the centered energy.
//! Compares an adaptively sampled partition against fixed 1D and separable 2D
//! Haar transforms. Curves are computed on centered energy (the final scale
//! coefficient is excluded) with details sorted by squared magnitude.

use crate::engine::PosteriorMaps;
use crate::error::{Result, WarpError};
use crate::grid::{DyadicNode, Grid};
use crate::stats::Observation;
use crate::tree::{RdpTree, TreeNode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Fractions at which coefficient counts are reported.
pub fn default_fractions() -> Vec<f64> {
    let mut f: Vec<f64> = (10..=19).map(|i| i as f64 * 0.05).collect(); // 0.50..0.95
    f.extend([0.96, 0.97, 0.98, 0.99, 0.995, 0.999]);
    f
}

/// Counts-to-reach-fraction for one transform.
#[derive(Clone, Debug)]
pub struct EnergyCurve {
    pub fractions: Vec<f64>,
    pub counts: Vec<u64>,
}

impl EnergyCurve {
    /// Sort the squared details and count how many are needed per fraction.
    pub fn from_details(details: &[f64], fractions: &[f64]) -> EnergyCurve {
        let mut sq: Vec<f64> = details.iter().map(|d| d * d).collect();
        sq.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
        let total: f64 = sq.iter().sum();
        let counts = fractions
            .iter()
            .map(|&f| {
                if total <= 0.0 {
                    return 0;
                }
                let target = f * total;
                let mut acc = 0.0;
                for (i, &v) in sq.iter().enumerate() {
                    acc += v;
                    if acc >= target {
                        return (i + 1) as u64;
                    }
                }
                sq.len() as u64
            })
            .collect();
        EnergyCurve {
            fractions: fractions.to_vec(),
            counts,
        }
    }

    pub fn count_at(&self, fraction: f64) -> u64 {
        let idx = self
            .fractions
            .iter()
            .position(|&f| (f - fraction).abs() < 1e-9)
            .expect("fraction not in curve");
        self.counts[idx]
    }
}

/// Full 1D Haar pyramid; returns the final scale coefficient and all details.
/// Detail convention: (left - right) / sqrt(2).
pub fn haar_1d(values: &[f64]) -> (f64, Vec<f64>) {
    assert!(values.len().is_power_of_two());
    let mut cur = values.to_vec();
    let mut details = Vec::with_capacity(values.len() - 1);
    while cur.len() > 1 {
        let half = cur.len() / 2;
        let mut next = Vec::with_capacity(half);
        for i in 0..half {
            let a = cur[2 * i];
            let b = cur[2 * i + 1];
            next.push((a + b) / SQRT_2);
            details.push((a - b) / SQRT_2);
        }
        cur = next;
    }
    (cur[0], details)
}

/// Inverse of `haar_1d` given the scale coefficient and details in the order
/// that `haar_1d` produced them.
pub fn haar_1d_inverse(scale: f64, details: &[f64]) -> Vec<f64> {
    let n = details.len() + 1;
    assert!(n.is_power_of_two());
    let mut cur = vec![scale];
    let mut consumed = details.len();
    while cur.len() < n {
        let half = cur.len();
        consumed -= half;
        let level = &details[consumed..consumed + half];
        let mut next = Vec::with_capacity(half * 2);
        for (s, d) in cur.iter().zip(level) {
            next.push((s + d) / SQRT_2);
            next.push((s - d) / SQRT_2);
        }
        cur = next;
    }
    cur
}

/// Standard separable 2D Haar, full decomposition. Returns the DC coefficient
/// and all detail coefficients.
pub fn haar_2d(values: &[f64], rows: usize, cols: usize) -> (f64, Vec<f64>) {
    assert_eq!(values.len(), rows * cols);
    assert!(rows.is_power_of_two() && cols.is_power_of_two());
    let mut a = values.to_vec();
    let (mut r, mut c) = (rows, cols);
    // one level: transform every row of the active block, then every column
    // (including the detail half), then shrink the active block
    while r > 1 || c > 1 {
        if c > 1 {
            for row in 0..r {
                let mut line = Vec::with_capacity(c);
                for j in 0..c / 2 {
                    let x = a[row * cols + 2 * j];
                    let y = a[row * cols + 2 * j + 1];
                    line.push((x + y) / SQRT_2);
                }
                for j in 0..c / 2 {
                    let x = a[row * cols + 2 * j];
                    let y = a[row * cols + 2 * j + 1];
                    line.push((x - y) / SQRT_2);
                }
                for (j, v) in line.into_iter().enumerate() {
                    a[row * cols + j] = v;
                }
            }
        }
        if r > 1 {
            for col in 0..c {
                let mut line = Vec::with_capacity(r);
                for i in 0..r / 2 {
                    let x = a[(2 * i) * cols + col];
                    let y = a[(2 * i + 1) * cols + col];
                    line.push((x + y) / SQRT_2);
                }
                for i in 0..r / 2 {
                    let x = a[(2 * i) * cols + col];
                    let y = a[(2 * i + 1) * cols + col];
                    line.push((x - y) / SQRT_2);
                }
                for (i, v) in line.into_iter().enumerate() {
                    a[i * cols + col] = v;
                }
            }
        }
        if c > 1 {
            c /= 2;
        }
        if r > 1 {
            r /= 2;
        }
    }
    let dc = a[0];
    let mut details = Vec::with_capacity(values.len() - 1);
    for (i, &v) in a.iter().enumerate() {
        if i != 0 {
            details.push(v);
        }
    }
    (dc, details)
}

fn sample_full_tree_from_lambda<R: Rng>(
    grid: &Grid,
    maps: &PosteriorMaps,
    node: &DyadicNode,
    rng: &mut R,
) -> TreeNode {
    let div = node.divisible_dims(grid);
    if div.is_empty() {
        return TreeNode::Leaf { pruned: false };
    }
    let id = node.id(grid);
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
        left: Box::new(sample_full_tree_from_lambda(grid, maps, &l, rng)),
        right: Box::new(sample_full_tree_from_lambda(grid, maps, &r, rng)),
    }
}

/// One posterior-sampled fully refined partition for energy analysis. Pruning
/// markers are ignored: the split-probability maps define the refinement all
/// the way to the atoms.
pub fn sample_energy_tree(grid: &Grid, maps: &PosteriorMaps, seed: u64) -> RdpTree {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    RdpTree::new(sample_full_tree_from_lambda(
        grid,
        maps,
        &DyadicNode::root(grid),
        &mut rng,
    ))
}

pub enum EnergyMode<'a> {
    /// Haar details under a posterior-sampled adaptive partition.
    WarpSample { maps: &'a PosteriorMaps, seed: u64 },
    /// Row-major fixed vectorization, full 1D Haar.
    Fixed1d,
    /// Standard separable 2D Haar (2D grids only).
    Fixed2d,
}

/// Detail coefficients of the observation under the selected transform.
pub fn transform_details(obs: &Observation, mode: &EnergyMode) -> Result<Vec<f64>> {
    match mode {
        EnergyMode::WarpSample { maps, seed } => {
            let tree = sample_energy_tree(obs.grid(), maps, *seed);
            let perm = tree.permutation(obs.grid())?;
            let (_, details) = haar_1d(&perm.apply(obs.values()));
            Ok(details)
        }
        EnergyMode::Fixed1d => Ok(haar_1d(obs.values()).1),
        EnergyMode::Fixed2d => {
            if obs.grid().ndim() != 2 {
                return Err(WarpError::InvalidInput(
                    "the separable 2D transform needs a 2D grid".into(),
                ));
            }
            let dims = obs.grid().dims();
            Ok(haar_2d(obs.values(), dims[0] as usize, dims[1] as usize).1)
        }
    }
}

pub fn energy_curve(obs: &Observation, mode: &EnergyMode, fractions: &[f64]) -> Result<EnergyCurve> {
    Ok(EnergyCurve::from_details(
        &transform_details(obs, mode)?,
        fractions,
    ))
}

/// All curves side by side plus the percentage saving of the adaptive
/// partition against the strongest applicable fixed baseline (2D when the
/// grid is 2D, else 1D).
pub struct EnergyReport {
    pub fractions: Vec<f64>,
    pub warp: EnergyCurve,
    pub fixed_1d: EnergyCurve,
    pub fixed_2d: Option<EnergyCurve>,
    pub saving_pct: Vec<f64>,
}

pub fn energy_report(obs: &Observation, maps: &PosteriorMaps, seed: u64) -> Result<EnergyReport> {
    let fractions = default_fractions();
    let warp = energy_curve(obs, &EnergyMode::WarpSample { maps, seed }, &fractions)?;
    let fixed_1d = energy_curve(obs, &EnergyMode::Fixed1d, &fractions)?;
    let fixed_2d = if obs.grid().ndim() == 2 {
        Some(energy_curve(obs, &EnergyMode::Fixed2d, &fractions)?)
    } else {
        None
    };
    let baseline = fixed_2d.as_ref().unwrap_or(&fixed_1d);
    let saving_pct = warp
        .counts
        .iter()
        .zip(&baseline.counts)
        .map(|(&w, &f)| {
            if f == 0 {
                0.0
            } else {
                100.0 * (1.0 - w as f64 / f as f64)
            }
        })
        .collect();
    Ok(EnergyReport {
        fractions,
        warp,
        fixed_1d,
        fixed_2d,
        saving_pct,
    })
}
