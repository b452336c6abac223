//! Deterministic synthetic test images and volumes, with optional seeded
//! Gaussian noise. Coordinates are cell centers: `x_i = (i + 0.5) / n`.

use crate::error::Result;
use crate::grid::Grid;
use crate::stats::Observation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Smooth quadratic background with an embedded cube and cylinder.
pub fn f1(x: f64, y: f64, z: f64) -> f64 {
    let q = -(x - 0.5).powi(2) - (y - 0.5).powi(2) - (z - 0.5).powi(2);
    let in_cube =
        (x - 0.5).abs() <= 0.25 && (y - 0.5).abs() <= 0.25 && (z - 0.5).abs() <= 0.25;
    let in_cylinder =
        (x - 0.5).powi(2) + (y - 0.5).powi(2) <= 0.15f64.powi(2) && (z - 0.5).abs() <= 0.35;
    q + if in_cube || in_cylinder { 1.0 } else { 0.0 }
}

/// Smooth sinusoidal background with an embedded cone section and a partial
/// spherical shell.
pub fn f2(x: f64, y: f64, z: f64) -> f64 {
    let base = 0.25 * (2.0 * std::f64::consts::PI * (x + y + z) + 1.0).sin() + 0.25;
    let r2 = (x - 0.5).powi(2) + (y - 0.5).powi(2);
    let in_cone = r2 <= 0.25 * (z - 0.5).powi(2) && (0.2..=0.5).contains(&z);
    let s2 = r2 + (z - 0.5).powi(2);
    let in_shell = (0.04..=0.16).contains(&s2) && z < 0.45;
    base + if in_cone || in_shell { 1.0 } else { 0.0 }
}

fn volume(n: u64, f: impl Fn(f64, f64, f64) -> f64) -> Result<Observation> {
    let grid = Grid::new(&[n, n, n])?;
    let mut values = Vec::with_capacity((n * n * n) as usize);
    let h = 1.0 / n as f64;
    for i in 0..n {
        let x = (i as f64 + 0.5) * h;
        for j in 0..n {
            let y = (j as f64 + 0.5) * h;
            for k in 0..n {
                let z = (k as f64 + 0.5) * h;
                values.push(f(x, y, z));
            }
        }
    }
    Observation::new(grid, values)
}

pub fn synth_f1(n: u64) -> Result<Observation> {
    volume(n, f1)
}

pub fn synth_f2(n: u64) -> Result<Observation> {
    volume(n, f2)
}

/// Head-phantom test image: sums of indicator ellipses, clamped to [0, 1].
/// Coordinates run over [-1, 1]^2 with the first grid dimension as the
/// vertical axis.
pub fn synth_phantom(n: u64) -> Result<Observation> {
    // (value, a, b, x0, y0, phi_degrees)
    const ELLIPSES: [(f64, f64, f64, f64, f64, f64); 10] = [
        (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
        (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
        (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
        (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
        (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
        (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
        (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
        (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
        (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
        (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
    ];
    let grid = Grid::new(&[n, n])?;
    let mut values = Vec::with_capacity((n * n) as usize);
    let h = 2.0 / n as f64;
    for r in 0..n {
        let y = 1.0 - (r as f64 + 0.5) * h;
        for c in 0..n {
            let x = -1.0 + (c as f64 + 0.5) * h;
            let mut v = 0.0;
            for &(a, ax, ay, x0, y0, phi) in &ELLIPSES {
                let th = phi.to_radians();
                let xr = (x - x0) * th.cos() + (y - y0) * th.sin();
                let yr = -(x - x0) * th.sin() + (y - y0) * th.cos();
                if (xr / ax).powi(2) + (yr / ay).powi(2) <= 1.0 {
                    v += a;
                }
            }
            values.push(v.clamp(0.0, 1.0));
        }
    }
    Observation::new(grid, values)
}

/// Piecewise-constant horizontal layers with boundaries off the dyadic
/// midpoints, so fixed separable transforms cannot isolate them.
pub fn synth_layers(rows: u64, cols: u64) -> Result<Observation> {
    let grid = Grid::new(&[rows, cols])?;
    const BANDS: [(f64, f64); 4] = [(0.0, 0.0), (11.0 / 64.0, 1.0), (29.0 / 64.0, 0.2), (50.0 / 64.0, 0.65)];
    let mut values = Vec::with_capacity((rows * cols) as usize);
    for r in 0..rows {
        let frac = r as f64 / rows as f64;
        let mut v = BANDS[0].1;
        for &(start, val) in &BANDS {
            if frac >= start {
                v = val;
            }
        }
        for _ in 0..cols {
            values.push(v);
        }
    }
    Observation::new(grid, values)
}

/// Standard normal deviate by Box-Muller.
pub fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let v: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (-2.0 * u.ln()).sqrt() * v.cos()
}

/// Add seeded white Gaussian noise.
pub fn add_noise(obs: &Observation, sigma: f64, seed: u64) -> Result<Observation> {
    if sigma == 0.0 {
        return Ok(obs.clone());
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let values = obs
        .values()
        .iter()
        .map(|v| v + sigma * gaussian(&mut rng))
        .collect();
    Observation::new(obs.grid().clone(), values)
}

pub fn by_name(pattern: &str, dims: &[u64]) -> Result<Observation> {
    use crate::error::WarpError;
    match pattern {
        "f1" => synth_f1(dims[0]),
        "f2" => synth_f2(dims[0]),
        "phantom" => synth_phantom(dims[0]),
        "layers" => {
            let cols = dims.get(1).copied().unwrap_or(dims[0]);
            synth_layers(dims[0], cols)
        }
        other => Err(WarpError::Config(format!("unknown pattern: {other}"))),
    }
}
