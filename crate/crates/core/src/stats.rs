//! Observations and integral-volume tables: O(2^m)-per-query block sums and
//! sums of squares, Haar and scale coefficients, and the pruned-block
//! likelihood.
//!
//! All likelihood quantities are kept in log space end to end; the pruned
//! likelihood for large blocks underflows doubles catastrophically otherwise.

use crate::error::{Result, WarpError};
use crate::grid::{DyadicNode, Grid};
use crate::math::{CompensatedSum, LN_2PI};

/// Centered sums of squares more negative than this fraction of the raw sum of
/// squares indicate a bug rather than roundoff and raise an error.
pub const CENTERED_SS_CLAMP_REL: f64 = 1e-9;

/// Values observed on a grid, one real per location in row-major order.
#[derive(Clone, Debug)]
pub struct Observation {
    grid: Grid,
    values: Vec<f64>,
}

impl Observation {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() as u64 != grid.len() {
            return Err(WarpError::InvalidInput(format!(
                "value count {} does not match grid size {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(WarpError::InvalidInput(format!(
                "non-finite value at location {i}"
            )));
        }
        Ok(Observation { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Circularly shift the observation by `shift[i]` along each dimension
    /// (positive shifts move content toward lower indices; the inverse shift
    /// restores the original).
    pub fn circular_shift(&self, shift: &[i64]) -> Observation {
        let dims = self.grid.dims();
        let m = dims.len();
        let mut out = vec![0.0; self.values.len()];
        let mut coord = vec![0u64; m];
        for (dst, slot) in out.iter_mut().enumerate() {
            // coord of dst, then source = coord + shift (wrapped)
            let mut rem = dst as u64;
            for i in 0..m {
                let s = self.grid.pixel_strides()[i];
                coord[i] = rem / s;
                rem %= s;
            }
            let mut src = 0u64;
            for i in 0..m {
                let d = dims[i] as i64;
                let c = (coord[i] as i64 + shift[i]).rem_euclid(d) as u64;
                src += c * self.grid.pixel_strides()[i];
            }
            *slot = self.values[src as usize];
        }
        Observation {
            grid: self.grid.clone(),
            values: out,
        }
    }
}

/// Integral volumes of the observation and its squares: m-dimensional
/// cumulative sums padded with a zero border so any block sum is an
/// inclusion-exclusion over 2^m corners.
pub struct BlockStatsTable {
    padded_dims: Vec<u64>,
    strides: Vec<u64>,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

impl BlockStatsTable {
    pub fn new(obs: &Observation) -> Self {
        let grid = obs.grid();
        let dims = grid.dims();
        let m = dims.len();
        let padded_dims: Vec<u64> = dims.iter().map(|&d| d + 1).collect();
        let mut strides = vec![1u64; m];
        for i in (0..m.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * padded_dims[i + 1];
        }
        let total: u64 = padded_dims.iter().product();
        let mut sum = vec![0.0; total as usize];
        let mut sumsq = vec![0.0; total as usize];

        // Scatter values into the padded array at coord + 1.
        let mut coord = vec![0u64; m];
        for (idx, &v) in obs.values().iter().enumerate() {
            let mut rem = idx as u64;
            let mut dst = 0u64;
            for i in 0..m {
                let s = grid.pixel_strides()[i];
                coord[i] = rem / s;
                rem %= s;
                dst += (coord[i] + 1) * strides[i];
            }
            sum[dst as usize] = v;
            sumsq[dst as usize] = v * v;
        }

        // Prefix-sum along each axis with Neumaier compensation per line.
        for axis in 0..m {
            let axis_len = padded_dims[axis];
            let axis_stride = strides[axis];
            let line_count = total / axis_len;
            for line in 0..line_count {
                // base index of this line: expand `line` over the other axes
                let mut base = 0u64;
                let mut rem = line;
                for i in 0..m {
                    if i == axis {
                        continue;
                    }
                    let extent = padded_dims[i];
                    base += (rem % extent) * strides[i];
                    rem /= extent;
                }
                let mut acc_s = CompensatedSum::default();
                let mut acc_q = CompensatedSum::default();
                for k in 0..axis_len {
                    let idx = (base + k * axis_stride) as usize;
                    acc_s.add(sum[idx]);
                    acc_q.add(sumsq[idx]);
                    sum[idx] = acc_s.value();
                    sumsq[idx] = acc_q.value();
                }
            }
        }

        BlockStatsTable {
            padded_dims,
            strides,
            sum,
            sumsq,
        }
    }

    fn corner_query(&self, table: &[f64], lo: &[(u64, u64)]) -> f64 {
        let m = self.padded_dims.len();
        let mut total = 0.0;
        for mask in 0u32..(1 << m) {
            let mut idx = 0u64;
            let mut sign = 1.0;
            for (i, &(l, h)) in lo.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    idx += l * self.strides[i];
                    sign = -sign;
                } else {
                    idx += (h + 1) * self.strides[i];
                }
            }
            total += sign * table[idx as usize];
        }
        total
    }

    /// Sum of values over a block, O(2^m).
    pub fn block_sum(&self, grid: &Grid, node: &DyadicNode) -> f64 {
        self.corner_query(&self.sum, &node.bounds(grid))
    }

    /// Sum of squared values over a block, O(2^m).
    pub fn block_sumsq(&self, grid: &Grid, node: &DyadicNode) -> f64 {
        self.corner_query(&self.sumsq, &node.bounds(grid))
    }

    /// Centered sum of squares over a block, with the roundoff clamp rule:
    /// tiny negatives are clamped to zero, larger negatives are an internal
    /// consistency error.
    pub fn centered_ss(&self, grid: &Grid, node: &DyadicNode) -> Result<f64> {
        let s = self.block_sum(grid, node);
        let q = self.block_sumsq(grid, node);
        centered_ss_checked(s, q, node.size(grid) as f64, || node.describe(grid))
    }
}

/// `sumsq - sum^2/size` with the clamp rule shared by every code path.
pub fn centered_ss_checked(
    sum: f64,
    sumsq: f64,
    size: f64,
    describe: impl Fn() -> String,
) -> Result<f64> {
    let ss = sumsq - sum * sum / size;
    if ss >= 0.0 {
        return Ok(ss);
    }
    if -ss <= CENTERED_SS_CLAMP_REL * sumsq {
        return Ok(0.0);
    }
    Err(WarpError::NumericalConsistency(format!(
        "centered sum of squares {ss} on block {} exceeds the roundoff clamp",
        describe()
    )))
}

/// Haar wavelet coefficient of a block split in dimension `d`:
/// `(left sum - right sum) / sqrt(|A|)`.
pub fn haar_coefficient(
    grid: &Grid,
    node: &DyadicNode,
    d: usize,
    stats: &BlockStatsTable,
) -> Result<f64> {
    let (l, r) = node.children(grid, d)?;
    let size = node.size(grid) as f64;
    Ok((stats.block_sum(grid, &l) - stats.block_sum(grid, &r)) / size.sqrt())
}

/// Scale (father wavelet) coefficient of a block: `sum / sqrt(|A|)`.
pub fn scale_coefficient(grid: &Grid, node: &DyadicNode, stats: &BlockStatsTable) -> f64 {
    stats.block_sum(grid, node) / (node.size(grid) as f64).sqrt()
}

/// Log marginal likelihood of the data in a block when the block is declared
/// constant: all detail coefficients below it are spiked, leaving
/// `(2 pi sigma^2)^(-(|A|-1)/2) * exp(-centered_ss / (2 sigma^2))`.
pub fn pruned_likelihood_log(
    grid: &Grid,
    node: &DyadicNode,
    sigma: f64,
    stats: &BlockStatsTable,
) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(WarpError::InvalidInput(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let ss = stats.centered_ss(grid, node)?;
    let k = node.size(grid) as f64 - 1.0;
    Ok(-0.5 * k * (LN_2PI + 2.0 * sigma.ln()) - ss / (2.0 * sigma * sigma))
}

/// Per-node block sums and sums of squares over the whole node universe,
/// accumulated bottom-up (children pairs), which is pairwise summation. This
/// is the level-synchronous form the recursions consume; it avoids repeated
/// corner queries in the hot loops.
pub struct NodeSums {
    pub sum: Vec<f64>,
    pub sumsq: Vec<f64>,
}

impl NodeSums {
    pub fn new(obs: &Observation) -> Self {
        let grid = obs.grid();
        let count = grid.node_count() as usize;
        let mut sum = vec![0.0; count];
        let mut sumsq = vec![0.0; count];
        for depth in (0..=grid.depth()).rev() {
            for &ci in grid.classes_at_depth(depth) {
                let class = &grid.classes()[ci];
                if class.size == 1 {
                    // atomic sweep visits locations in row-major order
                    let mut loc = 0usize;
                    grid.for_each_node_in_class(class, |id, _| {
                        let v = obs.values()[loc];
                        sum[id as usize] = v;
                        sumsq[id as usize] = v * v;
                        loc += 1;
                    });
                } else {
                    let d = class.divisible[0];
                    let stride = grid.node_strides()[d];
                    grid.for_each_node_in_class(class, |id, slots| {
                        let left = id + stride * (slots[d] + 1);
                        let right = left + stride;
                        sum[id as usize] = sum[left as usize] + sum[right as usize];
                        sumsq[id as usize] = sumsq[left as usize] + sumsq[right as usize];
                    });
                }
            }
        }
        NodeSums { sum, sumsq }
    }
}
