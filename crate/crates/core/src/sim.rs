//! Synthetic tracks with known truth.
//!
//! Paths are `μ(t) = μ(0) + H̃(w(t))·ε` with `ε ~ N(0, σ²I)` per coordinate over
//! the knots and `μ(0) = (0, 0)`. Observations sit on a regular grid over
//! `[0, 1]`, optionally thinned, plus `N(0, σ_s²)` noise.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::ingest::StandardizedTrack;
use crate::kernels::{build_basis, KernelFamily, KernelSpec, KnotGrid};
use crate::rng::{derive_seed, rng_from_seed, tag};
use crate::warp::{linspace, unit_grid, WarpField, WarpParams, WarpSampler, DEFAULT_GRID_LEN};
use crate::{FmmError, Result};

/// Number of points in the exported truth path.
pub const TRUTH_GRID_LEN: usize = 1001;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_obs: usize,
    pub kernel: KernelSpec,
    pub m_knots: usize,
    pub sigma2_s: f64,
    pub sigma2: f64,
    /// `None` simulates without deformation.
    pub warp: Option<WarpField>,
    pub missingness: f64,
    pub seed: u64,
}

impl SimConfig {
    /// The stationary scenario: G kernel, 300 observations, 400 knots.
    pub fn stationary(seed: u64) -> Self {
        SimConfig {
            n_obs: 300,
            kernel: KernelSpec::new(KernelFamily::Gaussian, 0.005).expect("valid kernel"),
            m_knots: 400,
            sigma2_s: 0.001,
            sigma2: 0.01,
            warp: None,
            missingness: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_obs < 10 {
            return Err(FmmError::InvalidArgument(format!("n_obs must be at least 10, got {}", self.n_obs)));
        }
        if !(0.0..1.0).contains(&self.missingness) {
            return Err(FmmError::InvalidArgument(format!(
                "missingness must lie in [0, 1), got {}",
                self.missingness
            )));
        }
        if !(self.sigma2_s >= 0.0 && self.sigma2 >= 0.0 && self.sigma2_s.is_finite() && self.sigma2.is_finite()) {
            return Err(FmmError::InvalidArgument("variances must be finite and non-negative".into()));
        }
        if self.m_knots < 2 {
            return Err(FmmError::InvalidArgument("need at least 2 knots".into()));
        }
        Ok(())
    }
}

/// Generating parameters of a simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthParams {
    pub family: KernelFamily,
    pub phi: f64,
    pub sigma2_s: f64,
    pub sigma2: f64,
}

impl TruthParams {
    pub fn sigma_ratio(&self) -> f64 {
        (self.sigma2 / self.sigma2_s).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub track: StandardizedTrack,
    /// Latent path at the observation times.
    pub truth_at_obs: Vec<[f64; 2]>,
    pub truth_times: Vec<f64>,
    pub truth_path: Vec<[f64; 2]>,
    pub truth_params: TruthParams,
    pub warp_truth: WarpField,
    pub epsilon: [Vec<f64>; 2],
    pub seed: u64,
}

/// Keep both endpoints and drop `round(frac·n)` interior indices at random.
pub fn thin_indices<R: Rng + ?Sized>(n: usize, frac: f64, rng: &mut R) -> Vec<usize> {
    let drop = ((frac * n as f64).round() as usize).min(n.saturating_sub(2));
    if drop == 0 {
        return (0..n).collect();
    }
    let mut removed = vec![false; n];
    for i in sample(rng, n - 2, drop).into_iter() {
        removed[i + 1] = true;
    }
    (0..n).filter(|&i| !removed[i]).collect()
}

fn draw_normals<R: Rng + ?Sized>(rng: &mut R, k: usize, sd: f64) -> Vec<f64> {
    (0..k).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn apply(h: &DMatrix<f64>, eps: &[f64]) -> Vec<f64> {
    (h * DVector::from_column_slice(eps)).iter().copied().collect()
}

pub fn simulate(config: &SimConfig) -> Result<SimOutput> {
    config.validate()?;
    let warp = config.warp.clone().unwrap_or_else(|| WarpField::identity(DEFAULT_GRID_LEN));
    let knots = KnotGrid::new(config.m_knots)?;

    let mut eps_rng = rng_from_seed(derive_seed(config.seed, &[tag("epsilon")]));
    let sd = config.sigma2.sqrt();
    let epsilon = [
        draw_normals(&mut eps_rng, knots.len(), sd),
        draw_normals(&mut eps_rng, knots.len(), sd),
    ];

    let grid_times = linspace(0.0, 1.0, config.n_obs);
    let mut miss_rng = rng_from_seed(derive_seed(config.seed, &[tag("missing")]));
    let keep = thin_indices(config.n_obs, config.missingness, &mut miss_rng);
    let times: Vec<f64> = keep.iter().map(|&i| grid_times[i]).collect();

    let h_obs = build_basis(&times, &knots, &config.kernel, &warp)?.h;
    let mu_x = apply(&h_obs, &epsilon[0]);
    let mu_y = apply(&h_obs, &epsilon[1]);
    let truth_at_obs: Vec<[f64; 2]> = mu_x.iter().zip(&mu_y).map(|(x, y)| [*x, *y]).collect();

    let mut noise_rng = rng_from_seed(derive_seed(config.seed, &[tag("noise")]));
    let noise_sd = config.sigma2_s.sqrt();
    let positions: Vec<[f64; 2]> = truth_at_obs
        .iter()
        .map(|p| {
            let nx: f64 = noise_rng.sample(StandardNormal);
            let ny: f64 = noise_rng.sample(StandardNormal);
            [p[0] + noise_sd * nx, p[1] + noise_sd * ny]
        })
        .collect();

    let truth_times = unit_grid(TRUTH_GRID_LEN);
    let h_dense = build_basis(&truth_times, &knots, &config.kernel, &warp)?.h;
    let px = apply(&h_dense, &epsilon[0]);
    let py = apply(&h_dense, &epsilon[1]);

    Ok(SimOutput {
        track: StandardizedTrack::from_model_units(times, positions)?,
        truth_at_obs,
        truth_times,
        truth_path: px.iter().zip(&py).map(|(x, y)| [*x, *y]).collect(),
        truth_params: TruthParams {
            family: config.kernel.family,
            phi: config.kernel.phi,
            sigma2_s: config.sigma2_s,
            sigma2: config.sigma2,
        },
        warp_truth: warp,
        epsilon,
        seed: config.seed,
    })
}

/// Warp parameters for the canonical deformed scenario: grid cell 4 of 10 on
/// each axis of `[0.001, 1]`.
pub fn canonical_warp_params() -> WarpParams {
    let v = linspace(0.001, 1.0, 10)[4];
    WarpParams { sigma_w: v, phi_w: v }
}

/// First accepted warp from the canonical parameters under `seed`.
pub fn canonical_warp(seed: u64) -> Result<WarpField> {
    let grid = unit_grid(DEFAULT_GRID_LEN);
    let sampler = WarpSampler::new(canonical_warp_params(), &grid)?;
    let mut rng = rng_from_seed(derive_seed(seed, &[tag("canonical-warp")]));
    for _ in 0..10_000 {
        if let Some(values) = sampler.propose(&mut rng) {
            return WarpField::from_values("truth", grid, values, Some(sampler.params()));
        }
    }
    Err(FmmError::EmptyCandidateSet)
}

/// The canonical nonstationary scenario used by the acceptance runs.
pub fn simulate_warped_experiment(seed: u64) -> Result<SimOutput> {
    let mut cfg = SimConfig::stationary(seed);
    cfg.warp = Some(canonical_warp(seed)?);
    simulate(&cfg)
}
