//! Command-line interface: denoising, evidence tables, posterior tree
//! sampling, energy-concentration curves, synthetic data, and tree counting.

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use std::path::PathBuf;
use std::time::Instant;
use warp_core::config::{RunConfig, SigmaPolicy};
use warp_core::engine::{grid_search_mmle, run_op_with, OpMode, OpSpec, SplitPrior};
use warp_core::error::{Result, WarpError};
use warp_core::io;
use warp_core::mean::{cycle_spin_denoise, sample_posterior_trees, ShiftSpec};
use warp_core::priors::estimate_sigma;
use warp_core::smc::{smc_denoise, SmcOptions, WaveletFilter};
use warp_core::stats::{NodeSums, Observation};
use warp_core::{Grid, HyperParams};

#[derive(Parser)]
#[command(
    name = "warp",
    about = "Adaptive-partition wavelet regression for multi-dimensional grids",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonOpts {
    /// Config file (.json or .toml) supplying defaults for any flag
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Slab family: normal | laplace | quasi_cauchy
    #[arg(long)]
    slab: Option<String>,
    /// Noise level: "auto" or a number
    #[arg(long)]
    sigma: Option<String>,
    /// Floor for the automatic noise estimate
    #[arg(long)]
    sigma_min: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Spike-probability base (C in the level schedule)
    #[arg(long = "prior-c")]
    prior_c: Option<f64>,
    #[arg(long)]
    eta0: Option<f64>,
    /// Candidate lists for the evidence search, comma separated
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    tau0s: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    cs: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    eta0s: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct the signal by the posterior mean with cycle spinning
    Denoise {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Clean reference image for error metrics
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Metrics JSON path (default: <output>.metrics.json)
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Cycle-spin step radius per dimension (default: 5 in 1D/2D, 2 in 3D+)
        #[arg(long)]
        spins: Option<i64>,
        /// Wavelet basis: haar | d4 | path to a filter file
        #[arg(long)]
        basis: Option<String>,
        /// Particles per run for non-Haar bases
        #[arg(long)]
        particles: Option<usize>,
        /// Resample when ESS drops below this fraction of the particle count
        #[arg(long)]
        ess: Option<f64>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Evidence table over the hyperparameter grid
    Evidence {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Draw exact posterior partitions as JSON lines
    SampleTrees {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Number of draws
        #[arg(short = 'B', long)]
        count: usize,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Energy-concentration curves against fixed transforms
    Energy {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Generate synthetic test data
    Synth {
        /// Pattern: f1 | f2 | phantom | layers
        #[arg(long)]
        pattern: String,
        /// Grid side lengths, comma separated
        #[arg(long, value_delimiter = ',')]
        dims: Vec<u64>,
        #[arg(short, long)]
        output: PathBuf,
        /// Gaussian noise level to add
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Count the canonical recursive dyadic partitions of a grid
    CountTrees {
        #[arg(long, value_delimiter = ',')]
        dims: Vec<u64>,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn resolve_common(common: &CommonOpts, command: &str) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cfg.command = command.to_string();
    if let Some(s) = &common.slab {
        cfg.slab = s.parse()?;
    }
    if let Some(s) = &common.sigma {
        cfg.sigma = SigmaPolicy::parse(s)?;
    }
    if let Some(v) = common.sigma_min {
        cfg.sigma_min = v;
    }
    if common.alpha.is_some() {
        cfg.hyper.alpha = common.alpha;
    }
    if common.tau0.is_some() {
        cfg.hyper.tau0 = common.tau0;
    }
    if common.beta.is_some() {
        cfg.hyper.beta = common.beta;
    }
    if common.prior_c.is_some() {
        cfg.hyper.c = common.prior_c;
    }
    if common.eta0.is_some() {
        cfg.hyper.eta0 = common.eta0;
    }
    if common.alphas.is_some() {
        cfg.grid.alphas = common.alphas.clone();
    }
    if common.tau0s.is_some() {
        cfg.grid.tau0s = common.tau0s.clone();
    }
    if common.betas.is_some() {
        cfg.grid.betas = common.betas.clone();
    }
    if common.cs.is_some() {
        cfg.grid.cs = common.cs.clone();
    }
    if common.eta0s.is_some() {
        cfg.grid.eta0s = common.eta0s.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    if cfg.threads > 0 {
        // a pool may already exist when invoked twice in-process; that's fine
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }
    Ok(cfg)
}

fn effective_threads(cfg: &RunConfig) -> usize {
    if cfg.threads > 0 {
        cfg.threads
    } else {
        rayon::current_num_threads()
    }
}

fn resolve_sigma(cfg: &RunConfig, obs: &Observation) -> Result<f64> {
    match cfg.sigma {
        SigmaPolicy::Fixed(v) => {
            if v <= 0.0 {
                return Err(WarpError::Config("sigma must be positive".into()));
            }
            Ok(v)
        }
        SigmaPolicy::Auto(_) => estimate_sigma(obs, cfg.sigma_min),
    }
}

/// Returns the working hyperparameters and the evidence rows if a search ran.
fn resolve_hyper(
    cfg: &RunConfig,
    obs: &Observation,
    sums: &NodeSums,
    sigma: f64,
    force_no_pruning: bool,
) -> Result<(HyperParams, Option<Vec<warp_core::engine::EvidenceRow>>)> {
    if cfg.hyper.complete() {
        let mut h = cfg.hyper.into_hyper(cfg.slab, sigma).unwrap();
        if force_no_pruning {
            h.eta0 = 0.0;
        }
        h.validate()?;
        return Ok((h, None));
    }
    let mut grid_spec = cfg.grid.build(cfg.slab);
    if force_no_pruning {
        grid_spec.eta0s = vec![0.0];
    }
    let (best, rows) = grid_search_mmle(obs, &grid_spec, sigma, sums)?;
    Ok((best, Some(rows)))
}

fn error_metrics(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    let mae = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
    (mse, mae)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Denoise {
            input,
            output,
            reference,
            metrics,
            spins,
            basis,
            particles,
            ess,
            common,
        } => {
            let mut cfg = resolve_common(&common, "denoise")?;
            cfg.input = Some(input.display().to_string());
            cfg.output = Some(output.display().to_string());
            cfg.reference = reference.as_ref().map(|p| p.display().to_string());
            if spins.is_some() {
                cfg.spin_radius = spins;
            }
            if let Some(b) = basis {
                cfg.basis = b;
            }
            if let Some(p) = particles {
                cfg.particles = p;
            }
            if let Some(e) = ess {
                cfg.ess_threshold = e;
            }

            let obs = io::read_image(&input)?;
            let non_haar = cfg.basis != "haar";
            let filter = WaveletFilter::by_name(&cfg.basis)?;

            let tune_start = Instant::now();
            let sigma = resolve_sigma(&cfg, &obs)?;
            let sums = NodeSums::new(&obs);
            let (hyper, _) = resolve_hyper(&cfg, &obs, &sums, sigma, non_haar)?;
            let op = OpSpec::new(hyper.clone())?;
            let log_evidence =
                run_op_with(&obs, &op, &sums, OpMode::EvidenceOnly, &SplitPrior::Uniform)?
                    .log_evidence;
            let tuning_seconds = tune_start.elapsed().as_secs_f64();

            let est_start = Instant::now();
            let shifts = match cfg.spin_radius {
                Some(r) => ShiftSpec::radius(obs.grid(), r),
                None => ShiftSpec::default_for(obs.grid()),
            };
            let threads = effective_threads(&cfg);
            let image = if non_haar {
                let opts = SmcOptions {
                    particles: cfg.particles,
                    ess_threshold: cfg.ess_threshold,
                    systematic_resampling: false,
                    seed: cfg.seed,
                };
                smc_denoise(&obs, &hyper, &filter, &opts, &shifts, threads)?
            } else {
                cycle_spin_denoise(&obs, &hyper, &shifts, threads)?
            };
            let estimation_seconds = est_start.elapsed().as_secs_f64();

            let result = Observation::new(obs.grid().clone(), image)?;
            io::write_image(&output, &result)?;
            cfg.write_manifest(&output)?;

            let mut doc = json!({
                "log_evidence": log_evidence,
                "sigma": sigma,
                "hyper": hyper,
                "tuning_seconds": tuning_seconds,
                "estimation_seconds": estimation_seconds,
                "spins": shifts.vectors().len(),
            });
            if let Some(ref_path) = &reference {
                let reference = io::read_image(ref_path)?;
                if reference.grid().dims() != obs.grid().dims() {
                    return Err(WarpError::Format(
                        "reference dimensions do not match the input".into(),
                    ));
                }
                let (mse, mae) = error_metrics(result.values(), reference.values());
                doc["mse"] = json!(mse);
                doc["mae"] = json!(mae);
                doc["mse_255"] = json!(mse * 255.0 * 255.0);
                doc["psnr"] = json!(-10.0 * mse.log10());
            }
            let metrics_path = metrics.unwrap_or_else(|| {
                let mut p = output.as_os_str().to_owned();
                p.push(".metrics.json");
                PathBuf::from(p)
            });
            io::atomic_write(&metrics_path, serde_json::to_string_pretty(&doc)?.as_bytes())?;
            Ok(())
        }

        Command::Evidence {
            input,
            output,
            common,
        } => {
            let mut cfg = resolve_common(&common, "evidence")?;
            cfg.input = Some(input.display().to_string());
            cfg.output = Some(output.display().to_string());
            let obs = io::read_image(&input)?;
            let sigma = resolve_sigma(&cfg, &obs)?;
            let sums = NodeSums::new(&obs);
            let grid_spec = cfg.grid.build(cfg.slab);
            let (_, rows) = grid_search_mmle(&obs, &grid_spec, sigma, &sums)?;
            io::write_evidence_csv(&output, &rows)?;
            cfg.write_manifest(&output)?;
            Ok(())
        }

        Command::SampleTrees {
            input,
            output,
            count,
            common,
        } => {
            let mut cfg = resolve_common(&common, "sample-trees")?;
            cfg.input = Some(input.display().to_string());
            cfg.output = Some(output.display().to_string());
            cfg.count = Some(count);
            let obs = io::read_image(&input)?;
            let sigma = resolve_sigma(&cfg, &obs)?;
            let sums = NodeSums::new(&obs);
            let (hyper, _) = resolve_hyper(&cfg, &obs, &sums, sigma, false)?;
            let op = OpSpec::new(hyper)?;
            let maps = run_op_with(&obs, &op, &sums, OpMode::Full, &SplitPrior::Uniform)?;
            let trees = sample_posterior_trees(obs.grid(), &maps, count, cfg.seed);
            let mut out = String::new();
            let weight = if count > 0 { 1.0 / count as f64 } else { 0.0 };
            for tree in &trees {
                let line = json!({"tree": tree.to_json(), "weight": weight});
                out.push_str(&serde_json::to_string(&line)?);
                out.push('\n');
            }
            io::atomic_write(&output, out.as_bytes())?;
            cfg.write_manifest(&output)?;
            Ok(())
        }

        Command::Energy {
            input,
            output,
            common,
        } => {
            let mut cfg = resolve_common(&common, "energy")?;
            cfg.input = Some(input.display().to_string());
            cfg.output = Some(output.display().to_string());
            let obs = io::read_image(&input)?;
            let sigma = resolve_sigma(&cfg, &obs)?;
            let sums = NodeSums::new(&obs);
            let (hyper, _) = resolve_hyper(&cfg, &obs, &sums, sigma, false)?;
            let op = OpSpec::new(hyper)?;
            let maps = run_op_with(&obs, &op, &sums, OpMode::Full, &SplitPrior::Uniform)?;
            let report = warp_core::energy::energy_report(&obs, &maps, cfg.seed)?;
            io::write_energy_csv(&output, &report)?;
            cfg.write_manifest(&output)?;
            Ok(())
        }

        Command::Synth {
            pattern,
            dims,
            output,
            noise,
            common,
        } => {
            let mut cfg = resolve_common(&common, "synth")?;
            cfg.pattern = Some(pattern.clone());
            cfg.dims = Some(dims.clone());
            cfg.noise = Some(noise);
            cfg.output = Some(output.display().to_string());
            if dims.is_empty() {
                return Err(WarpError::Config("--dims is required".into()));
            }
            let clean = warp_core::synth::by_name(&pattern, &dims)?;
            let noisy = warp_core::synth::add_noise(&clean, noise, cfg.seed)?;
            io::write_image(&output, &noisy)?;
            cfg.write_manifest(&output)?;
            Ok(())
        }

        Command::CountTrees { dims } => {
            if dims.is_empty() {
                return Err(WarpError::Config("--dims is required".into()));
            }
            let grid = Grid::new(&dims)?;
            println!("{}", grid.count_rdp_trees());
            Ok(())
        }
    }
}
