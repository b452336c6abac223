//! C ABI for the warp denoising library.
//!
//! Every handle is opaque; functions return a status code and write results
//! through out-pointers. The last error message for the calling thread is
//! available from `warp_last_error_message`. The header is generated into
//! `include/warp.h` at build time.

#![allow(non_camel_case_types)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use warp_core::engine::{grid_search_mmle, run_op_with, HyperGrid, OpMode, OpSpec, SplitPrior};
use warp_core::error::WarpError;
use warp_core::mean::{cycle_spin_denoise, ShiftSpec};
use warp_core::priors::{estimate_sigma, SlabFamily};
use warp_core::smc::{smc_denoise, SmcOptions, WaveletFilter};
use warp_core::stats::{NodeSums, Observation};
use warp_core::{Grid, HyperParams};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum warp_status {
    WARP_OK = 0,
    WARP_ERROR = 1,
    WARP_INVALID_INPUT = 2,
    WARP_NUMERIC_ERROR = 3,
    WARP_WEIGHT_COLLAPSE = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &WarpError) -> warp_status {
    match e.exit_code() {
        2 => warp_status::WARP_INVALID_INPUT,
        3 => warp_status::WARP_NUMERIC_ERROR,
        4 => warp_status::WARP_WEIGHT_COLLAPSE,
        _ => warp_status::WARP_ERROR,
    }
}

fn guard<F: FnOnce() -> Result<warp_status, WarpError>>(f: F) -> warp_status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err(e)) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            warp_status::WARP_ERROR
        }
    }
}

/// Message describing the most recent failure on this thread. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn warp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn warp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Opaque observation handle: values on a dyadic grid.
pub struct warp_observation {
    obs: Observation,
}

/// Create an observation from row-major values. `dims` lists side lengths
/// (each a power of two); `values` must hold their product.
///
/// # Safety
/// `values` must point to `prod(dims)` doubles and `dims` to `ndims` entries.
#[no_mangle]
pub unsafe extern "C" fn warp_observation_create(
    values: *const f64,
    dims: *const u64,
    ndims: usize,
    out: *mut *mut warp_observation,
) -> warp_status {
    guard(|| {
        if values.is_null() || dims.is_null() || out.is_null() || ndims == 0 {
            return Err(WarpError::InvalidInput("null argument".into()));
        }
        let dims = std::slice::from_raw_parts(dims, ndims);
        let grid = Grid::new(dims)?;
        let n = grid.len() as usize;
        let values = std::slice::from_raw_parts(values, n).to_vec();
        let obs = Observation::new(grid, values)?;
        *out = Box::into_raw(Box::new(warp_observation { obs }));
        Ok(warp_status::WARP_OK)
    })
}

/// # Safety
/// `obs` must come from `warp_observation_create` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn warp_observation_free(obs: *mut warp_observation) {
    if !obs.is_null() {
        drop(Box::from_raw(obs));
    }
}

/// Slab families for `warp_denoise_options`.
#[repr(C)]
#[derive(Clone, Copy)]
pub enum warp_slab {
    WARP_SLAB_NORMAL = 0,
    WARP_SLAB_LAPLACE = 1,
    WARP_SLAB_QUASI_CAUCHY = 2,
}

/// Wavelet bases for `warp_denoise_options`.
#[repr(C)]
#[derive(Clone, Copy)]
pub enum warp_basis {
    WARP_BASIS_HAAR = 0,
    WARP_BASIS_D4 = 1,
}

/// Denoising options. Start from `warp_denoise_options_default` and adjust.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct warp_denoise_options {
    pub slab: warp_slab,
    /// Noise level; zero or negative requests the automatic estimate.
    pub sigma: f64,
    /// When nonzero the five fixed hyperparameters below are used instead of
    /// the evidence search.
    pub use_fixed_hyper: i32,
    pub alpha: f64,
    pub tau0: f64,
    pub beta: f64,
    pub c: f64,
    pub eta0: f64,
    /// Cycle-spin step radius per dimension; negative selects the default
    /// (5 in 1D/2D, 2 in 3D and higher).
    pub spin_radius: i64,
    pub basis: warp_basis,
    /// Particle count for non-Haar bases.
    pub particles: usize,
    /// Resampling threshold as a fraction of the particle count.
    pub ess_threshold: f64,
    pub seed: u64,
    /// Worker threads; zero uses all cores.
    pub threads: usize,
}

#[no_mangle]
pub extern "C" fn warp_denoise_options_default() -> warp_denoise_options {
    warp_denoise_options {
        slab: warp_slab::WARP_SLAB_NORMAL,
        sigma: 0.0,
        use_fixed_hyper: 0,
        alpha: 0.5,
        tau0: 1024.0,
        beta: 0.5,
        c: 1.0,
        eta0: 0.1,
        spin_radius: -1,
        basis: warp_basis::WARP_BASIS_HAAR,
        particles: 10,
        ess_threshold: 0.1,
        seed: 0,
        threads: 0,
    }
}

/// Opaque result handle holding the reconstruction and run summary.
pub struct warp_result {
    values: Vec<f64>,
    log_evidence: f64,
    sigma: f64,
}

fn slab_of(s: warp_slab) -> SlabFamily {
    match s {
        warp_slab::WARP_SLAB_NORMAL => SlabFamily::Normal,
        warp_slab::WARP_SLAB_LAPLACE => SlabFamily::Laplace,
        warp_slab::WARP_SLAB_QUASI_CAUCHY => SlabFamily::QuasiCauchy,
    }
}

fn resolve(
    obs: &Observation,
    opts: &warp_denoise_options,
    force_no_pruning: bool,
) -> Result<(HyperParams, NodeSums, f64), WarpError> {
    let sigma = if opts.sigma > 0.0 {
        opts.sigma
    } else {
        estimate_sigma(obs, 1e-6)?
    };
    let sums = NodeSums::new(obs);
    let slab = slab_of(opts.slab);
    let hyper = if opts.use_fixed_hyper != 0 {
        let mut h = HyperParams {
            slab,
            alpha: opts.alpha,
            tau0: opts.tau0,
            beta: opts.beta,
            c: opts.c,
            eta0: opts.eta0,
            sigma,
        };
        if force_no_pruning {
            h.eta0 = 0.0;
        }
        h.validate()?;
        h
    } else {
        let mut grid_spec = HyperGrid::default_for(slab);
        if force_no_pruning {
            grid_spec.eta0s = vec![0.0];
        }
        grid_search_mmle(obs, &grid_spec, sigma, &sums)?.0
    };
    Ok((hyper, sums, sigma))
}

/// Reconstruct the posterior-mean signal with cycle spinning (Haar) or the
/// particle filter (other bases).
///
/// # Safety
/// `obs` and `out` must be valid; the result must be freed with
/// `warp_result_free`.
#[no_mangle]
pub unsafe extern "C" fn warp_denoise(
    obs: *const warp_observation,
    opts: *const warp_denoise_options,
    out: *mut *mut warp_result,
) -> warp_status {
    guard(|| {
        if obs.is_null() || opts.is_null() || out.is_null() {
            return Err(WarpError::InvalidInput("null argument".into()));
        }
        let obs = &(*obs).obs;
        let opts = &*opts;
        let non_haar = !matches!(opts.basis, warp_basis::WARP_BASIS_HAAR);
        let (hyper, sums, sigma) = resolve(obs, opts, non_haar)?;
        let op = OpSpec::new(hyper.clone())?;
        let log_evidence =
            run_op_with(obs, &op, &sums, OpMode::EvidenceOnly, &SplitPrior::Uniform)?
                .log_evidence;
        let shifts = if opts.spin_radius < 0 {
            ShiftSpec::default_for(obs.grid())
        } else {
            ShiftSpec::radius(obs.grid(), opts.spin_radius)
        };
        let threads = if opts.threads > 0 {
            opts.threads
        } else {
            rayon::current_num_threads()
        };
        let values = if non_haar {
            let smc_opts = SmcOptions {
                particles: opts.particles.max(1),
                ess_threshold: opts.ess_threshold,
                systematic_resampling: false,
                seed: opts.seed,
            };
            smc_denoise(obs, &hyper, &WaveletFilter::d4(), &smc_opts, &shifts, threads)?
        } else {
            cycle_spin_denoise(obs, &hyper, &shifts, threads)?
        };
        *out = Box::into_raw(Box::new(warp_result {
            values,
            log_evidence,
            sigma,
        }));
        Ok(warp_status::WARP_OK)
    })
}

/// Log marginal likelihood of the observation under the selected (or fixed)
/// hyperparameters.
///
/// # Safety
/// `obs` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn warp_evidence(
    obs: *const warp_observation,
    opts: *const warp_denoise_options,
    out: *mut f64,
) -> warp_status {
    guard(|| {
        if obs.is_null() || opts.is_null() || out.is_null() {
            return Err(WarpError::InvalidInput("null argument".into()));
        }
        let obs = &(*obs).obs;
        let (hyper, sums, _) = resolve(obs, &*opts, false)?;
        let op = OpSpec::new(hyper)?;
        *out = run_op_with(obs, &op, &sums, OpMode::EvidenceOnly, &SplitPrior::Uniform)?
            .log_evidence;
        Ok(warp_status::WARP_OK)
    })
}

/// Robust noise-scale estimate from finest-scale differences.
///
/// # Safety
/// `obs` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn warp_estimate_sigma(
    obs: *const warp_observation,
    sigma_min: f64,
    out: *mut f64,
) -> warp_status {
    guard(|| {
        if obs.is_null() || out.is_null() {
            return Err(WarpError::InvalidInput("null argument".into()));
        }
        *out = estimate_sigma(&(*obs).obs, sigma_min)?;
        Ok(warp_status::WARP_OK)
    })
}

/// Base-2 logarithm of the number of canonical recursive dyadic partitions
/// of the grid.
///
/// # Safety
/// `dims` must point to `ndims` entries and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn warp_count_trees_log2(
    dims: *const u64,
    ndims: usize,
    out: *mut f64,
) -> warp_status {
    guard(|| {
        if dims.is_null() || out.is_null() || ndims == 0 {
            return Err(WarpError::InvalidInput("null argument".into()));
        }
        let dims = std::slice::from_raw_parts(dims, ndims);
        let grid = Grid::new(dims)?;
        let count = grid.count_rdp_trees();
        let bits = count.bits();
        let log2 = if bits <= 53 {
            let v: u64 = (&count).try_into().unwrap();
            (v as f64).log2()
        } else {
            let shift = bits - 53;
            let top: u64 = (&count >> shift).try_into().unwrap();
            (top as f64).log2() + shift as f64
        };
        *out = log2;
        Ok(warp_status::WARP_OK)
    })
}

/// # Safety
/// `result` must come from `warp_denoise`; `len` may be null.
#[no_mangle]
pub unsafe extern "C" fn warp_result_values(
    result: *const warp_result,
    len: *mut usize,
) -> *const f64 {
    if result.is_null() {
        return ptr::null();
    }
    if !len.is_null() {
        *len = (*result).values.len();
    }
    (*result).values.as_ptr()
}

/// # Safety
/// `result` must come from `warp_denoise`.
#[no_mangle]
pub unsafe extern "C" fn warp_result_log_evidence(result: *const warp_result) -> f64 {
    if result.is_null() {
        return f64::NAN;
    }
    (*result).log_evidence
}

/// # Safety
/// `result` must come from `warp_denoise`.
#[no_mangle]
pub unsafe extern "C" fn warp_result_sigma(result: *const warp_result) -> f64 {
    if result.is_null() {
        return f64::NAN;
    }
    (*result).sigma
}

/// # Safety
/// `result` must come from `warp_denoise` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn warp_result_free(result: *mut warp_result) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
