//! Spike-and-slab marginal likelihoods and posterior-mean functions for the
//! three slab families, noise estimation, and the level-indexed hyperparameter
//! schedules.
//!
//! A wavelet coefficient w at a depth-j node is modeled as w = z + e with
//! e ~ N(0, sigma^2) and z either exactly zero (spike, probability 1 - rho_j)
//! or drawn from a symmetric slab gamma(.|tau_j, sigma). The slab convolutions
//! and posterior means below are the standard closed forms for the normal,
//! Laplace and quasi-Cauchy slabs.

use crate::error::{Result, WarpError};
use crate::math::{log_ndtr_lower, log_ndtr_upper, log_normal_pdf, logsumexp2, median, LN_2PI};
use crate::stats::Observation;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlabFamily {
    Normal,
    Laplace,
    QuasiCauchy,
}

impl SlabFamily {
    pub fn name(&self) -> &'static str {
        match self {
            SlabFamily::Normal => "normal",
            SlabFamily::Laplace => "laplace",
            SlabFamily::QuasiCauchy => "quasi_cauchy",
        }
    }
}

impl std::str::FromStr for SlabFamily {
    type Err = WarpError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(SlabFamily::Normal),
            "laplace" => Ok(SlabFamily::Laplace),
            "quasi_cauchy" | "quasi-cauchy" | "cauchy" => Ok(SlabFamily::QuasiCauchy),
            other => Err(WarpError::Config(format!("unknown slab family: {other}"))),
        }
    }
}

/// Hyperparameters of the regression model. Depth-indexed schedules:
/// `rho_j = min(1, 2^(-beta j) C)`, `tau_j = 2^(-alpha j) tau0`
/// (the quasi-Cauchy slab has no scale and forces `tau_j = 1`), and a
/// constant pruning probability `eta_j = eta0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub slab: SlabFamily,
    pub alpha: f64,
    pub tau0: f64,
    pub beta: f64,
    pub c: f64,
    pub eta0: f64,
    pub sigma: f64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(WarpError::InvalidInput(format!(
                "sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        if !(self.tau0 > 0.0) {
            return Err(WarpError::InvalidInput("tau0 must be positive".into()));
        }
        if !(self.c > 0.0) {
            return Err(WarpError::InvalidInput("C must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eta0) {
            return Err(WarpError::InvalidInput("eta0 must lie in [0,1]".into()));
        }
        Ok(())
    }

    pub fn tau_at(&self, depth: u32) -> f64 {
        match self.slab {
            SlabFamily::QuasiCauchy => 1.0,
            _ => (2f64).powf(-self.alpha * depth as f64) * self.tau0,
        }
    }

    pub fn rho_at(&self, depth: u32) -> f64 {
        ((2f64).powf(-self.beta * depth as f64) * self.c).min(1.0)
    }

    pub fn eta_at(&self, _depth: u32) -> f64 {
        self.eta0
    }
}

/// Log density of the spike marginal: w ~ N(0, sigma^2).
pub fn log_marginal_spike(w: f64, sigma: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(WarpError::InvalidInput("sigma must be positive".into()));
    }
    Ok(log_normal_pdf(w / sigma) - sigma.ln())
}

/// Log of the slab marginal `int phi(w | z, sigma) gamma(z | tau, sigma) dz`.
pub fn log_marginal_slab(w: f64, tau: f64, sigma: f64, slab: SlabFamily) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(WarpError::InvalidInput("sigma must be positive".into()));
    }
    if slab != SlabFamily::QuasiCauchy && tau <= 0.0 {
        return Err(WarpError::InvalidInput("tau must be positive".into()));
    }
    let x = w / sigma;
    let v = match slab {
        // Convolution of two normals: N(0, (1 + tau) sigma^2).
        SlabFamily::Normal => {
            let s2 = 1.0 + tau;
            -0.5 * (LN_2PI + s2.ln()) - 0.5 * x * x / s2
        }
        // a/2 e^{a^2/2} [ e^{-ax} Phi(x-a) + e^{ax} (1 - Phi(x+a)) ], a = sqrt(2/tau).
        SlabFamily::Laplace => {
            let a = (2.0 / tau).sqrt();
            let l1 = -a * x + log_ndtr_lower(x - a);
            let l2 = a * x + log_ndtr_upper(x + a);
            (0.5 * a).ln() + 0.5 * a * a + logsumexp2(l1, l2)
        }
        // (2 pi)^{-1/2} x^{-2} (1 - e^{-x^2/2}).
        SlabFamily::QuasiCauchy => {
            if x.abs() < 1e-3 {
                // series: (1 - e^{-x^2/2})/x^2 = 1/2 - x^2/8 + x^4/48
                let x2 = x * x;
                -0.5 * LN_2PI + (0.5 - x2 / 8.0 + x2 * x2 / 48.0).ln()
            } else {
                -0.5 * LN_2PI - 2.0 * x.abs().ln() + (-(-0.5 * x * x).exp_m1()).ln()
            }
        }
    };
    Ok(v - sigma.ln())
}

/// Posterior mean of the coefficient under the slab component, `E(z | w, S=1)`.
pub fn posterior_mean_mu1(w: f64, tau: f64, sigma: f64, slab: SlabFamily) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(WarpError::InvalidInput("sigma must be positive".into()));
    }
    let x = w / sigma;
    let v = match slab {
        SlabFamily::Normal => w / (1.0 + 1.0 / tau),
        SlabFamily::Laplace => {
            let a = (2.0 / tau).sqrt();
            let l1 = -a * x + log_ndtr_lower(x - a);
            let l2 = a * x + log_ndtr_upper(x + a);
            // (e^l1 - e^l2)/(e^l1 + e^l2) = tanh((l1 - l2)/2)
            w - sigma * a * ((l1 - l2) / 2.0).tanh()
        }
        SlabFamily::QuasiCauchy => {
            if x.abs() < 1e-3 {
                // removable singularity: mu1/sigma = x/2 + x^3/24 + O(x^5)
                sigma * (x / 2.0 + x * x * x / 24.0)
            } else {
                w / (-(-0.5 * x * x).exp_m1()) - 2.0 * sigma / x
            }
        }
    };
    Ok(v)
}

/// Robust noise-scale estimate from the finest-scale Haar differences:
/// non-overlapping pairs `(y[2t] - y[2t+1]) / sqrt(2)` along the last grid
/// dimension (any canonical partition's atomic-level splits reduce to
/// adjacent-pair differences in some dimension, so the estimate is
/// tree-independent), then `median(|d|) / 0.6745`. Falls back to `sigma_min`
/// on degenerate input.
pub fn estimate_sigma(obs: &Observation, sigma_min: f64) -> Result<f64> {
    let grid = obs.grid();
    let m = grid.ndim();
    let last = grid.dims()[m - 1];
    if last < 2 {
        return Err(WarpError::InvalidInput(
            "sigma estimation needs at least two locations along the last dimension".into(),
        ));
    }
    let values = obs.values();
    let mut diffs = Vec::with_capacity(values.len() / 2);
    for chunk in values.chunks_exact(last as usize) {
        for pair in chunk.chunks_exact(2) {
            diffs.push((pair[0] - pair[1]).abs() / std::f64::consts::SQRT_2);
        }
    }
    let mad = median(&mut diffs);
    let sigma = mad / 0.6745;
    Ok(if sigma > sigma_min { sigma } else { sigma_min })
}

/// Precomputed per-level evaluator for the spike/slab mixture, used by the
/// hot recursions. All level-dependent constants are folded in once.
#[derive(Clone, Debug)]
pub struct LevelMarginal {
    slab: SlabFamily,
    sigma: f64,
    tau: f64,
    pub rho: f64,
    log_rho: f64,
    log_1mrho: f64,
    // normal-family constants
    c_spike: f64,
    q_spike: f64,
    c_slab: f64,
    q_slab: f64,
    // laplace constant
    a: f64,
    log_a_half: f64,
}

impl LevelMarginal {
    pub fn new(hyper: &HyperParams, depth: u32) -> Self {
        let sigma = hyper.sigma;
        let tau = hyper.tau_at(depth);
        let rho = hyper.rho_at(depth);
        let a = (2.0 / tau).sqrt();
        let s2 = sigma * sigma;
        LevelMarginal {
            slab: hyper.slab,
            sigma,
            tau,
            rho,
            log_rho: if rho > 0.0 { rho.ln() } else { f64::NEG_INFINITY },
            log_1mrho: if rho < 1.0 {
                (1.0 - rho).ln()
            } else {
                f64::NEG_INFINITY
            },
            c_spike: -0.5 * (LN_2PI + s2.ln()),
            q_spike: 0.5 / s2,
            c_slab: -0.5 * (LN_2PI + (s2 * (1.0 + tau)).ln()),
            q_slab: 0.5 / (s2 * (1.0 + tau)),
            a,
            log_a_half: (0.5 * a).ln() + 0.5 * a * a - sigma.ln(),
        }
    }

    #[inline(always)]
    pub fn log_spike(&self, w: f64) -> f64 {
        self.c_spike - self.q_spike * w * w
    }

    #[inline]
    pub fn log_slab(&self, w: f64) -> f64 {
        match self.slab {
            SlabFamily::Normal => self.c_slab - self.q_slab * w * w,
            SlabFamily::Laplace => {
                let x = w / self.sigma;
                let l1 = -self.a * x + log_ndtr_lower(x - self.a);
                let l2 = self.a * x + log_ndtr_upper(x + self.a);
                self.log_a_half + logsumexp2(l1, l2)
            }
            SlabFamily::QuasiCauchy => {
                log_marginal_slab(w, 1.0, self.sigma, SlabFamily::QuasiCauchy).unwrap()
            }
        }
    }

    /// Log mixture marginal and the posterior slab probability
    /// `rho_tilde = rho e^slab / (rho e^slab + (1-rho) e^spike)`.
    #[inline]
    pub fn log_mixture(&self, w: f64) -> (f64, f64) {
        if self.rho >= 1.0 {
            return (self.log_slab(w), 1.0);
        }
        if self.rho <= 0.0 {
            return (self.log_spike(w), 0.0);
        }
        let ls = self.log_rho + self.log_slab(w);
        let lp = self.log_1mrho + self.log_spike(w);
        let tot = logsumexp2(ls, lp);
        (tot, (ls - tot).exp())
    }

    /// Posterior mean of the coefficient given it carries signal.
    #[inline]
    pub fn mu1(&self, w: f64) -> f64 {
        posterior_mean_mu1(w, self.tau, self.sigma, self.slab).unwrap()
    }
}

/// Evaluators for every depth of a grid, plus the level pruning probabilities.
pub struct LevelSchedules {
    pub marginals: Vec<LevelMarginal>,
    pub eta: Vec<f64>,
}

impl LevelSchedules {
    pub fn new(hyper: &HyperParams, depth: u32) -> Self {
        let marginals = (0..=depth).map(|j| LevelMarginal::new(hyper, j)).collect();
        let eta = (0..=depth).map(|j| hyper.eta_at(j)).collect();
        LevelSchedules { marginals, eta }
    }
}
