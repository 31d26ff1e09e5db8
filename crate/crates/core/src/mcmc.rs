//! Metropolis-within-Gibbs fitting of a single (kernel family, warp) model.
//!
//! The chain runs over `θ = (φ, σ_s², σ_{μ/s})`. `φ` moves on its discrete
//! grid, the other two by random walks on the log scale. Likelihood
//! evaluations use a per-φ [`LikelihoodWorkspace`] held in a [`BasisStore`].

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

use crate::gauss::LikelihoodWorkspace;
use crate::ingest::StandardizedTrack;
use crate::kernels::{basis_from_warped_times, KernelFamily, KernelSpec, KnotGrid};
use crate::rng::rng_from_seed;
use crate::warp::{linspace, WarpField};
use crate::{FmmError, Result};

/// Priors on `θ` and on the model indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    pub phi_grid: Vec<f64>,
    pub ratio_upper: f64,
    pub ig_shape: f64,
    pub ig_scale: f64,
    /// Prior model probabilities; `None` means uniform.
    pub model_prior: Option<Vec<f64>>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            phi_grid: linspace(0.001, 0.1, 100),
            ratio_upper: 20.0,
            ig_shape: 12.0,
            ig_scale: 0.01,
            model_prior: None,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phi_grid.is_empty() || self.phi_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FmmError::InvalidArgument("φ grid must be non-empty and strictly increasing".into()));
        }
        if self.phi_grid[0] <= 0.0 {
            return Err(FmmError::InvalidArgument("φ grid values must be positive".into()));
        }
        if !(self.ig_shape > 1.0 && self.ig_scale > 0.0) {
            return Err(FmmError::InvalidArgument("inverse-gamma prior needs shape > 1 and scale > 0".into()));
        }
        if !(self.ratio_upper > 0.0 && self.ratio_upper.is_finite()) {
            return Err(FmmError::InvalidArgument("ratio_upper must be positive".into()));
        }
        if let Some(p) = &self.model_prior {
            let s: f64 = p.iter().sum();
            if p.iter().any(|v| *v < 0.0) || (s - 1.0).abs() > 1e-9 {
                return Err(FmmError::InvalidArgument("model prior must be non-negative and sum to 1".into()));
            }
        }
        Ok(())
    }

    /// Prior mean `scale / (shape − 1)` of σ_s² (shape-scale convention).
    pub fn sigma2_s_prior_mean(&self) -> f64 {
        self.ig_scale / (self.ig_shape - 1.0)
    }

    pub fn log_ig(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let (a, b) = (self.ig_shape, self.ig_scale);
        a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
    }

    pub fn log_uniform_ratio(&self, r: f64) -> f64 {
        if r > 0.0 && r < self.ratio_upper {
            -self.ratio_upper.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// `log [θ | M]` on the natural parameters.
    pub fn log_prior(&self, family: KernelFamily, sigma2_s: f64, sigma_ratio: f64) -> f64 {
        let phi_term = if family.is_phi_free() {
            0.0
        } else {
            -(self.phi_grid.len() as f64).ln()
        };
        phi_term + self.log_ig(sigma2_s) + self.log_uniform_ratio(sigma_ratio)
    }
}

/// Identifies one model: kernel family `l` and warp `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub family: KernelFamily,
    pub warp_id: String,
    pub l: usize,
    pub j: usize,
}

impl ModelSpec {
    pub fn new(family: KernelFamily, warp_id: impl Into<String>, j: usize) -> Self {
        ModelSpec {
            family,
            warp_id: warp_id.into(),
            l: family.index(),
            j,
        }
    }
}

/// Lazily filled likelihood workspaces, one per φ value.
///
/// φ-free families hold a single entry with φ recorded as 0.
pub struct BasisStore {
    family: KernelFamily,
    phis: Vec<f64>,
    warped_times: Vec<f64>,
    knots: KnotGrid,
    residuals: [Vec<f64>; 2],
    entries: Vec<OnceLock<LikelihoodWorkspace>>,
}

/// Default memory cap for a store, in bytes.
pub const DEFAULT_STORE_CAP: usize = 1 << 30;

impl BasisStore {
    pub fn new(
        track: &StandardizedTrack,
        knots: &KnotGrid,
        family: KernelFamily,
        prior: &PriorConfig,
        warp: &WarpField,
        mem_cap: usize,
    ) -> Result<Self> {
        prior.validate()?;
        let phis = if family.is_phi_free() {
            vec![0.0]
        } else {
            prior.phi_grid.clone()
        };
        let warped_times = track
            .times
            .iter()
            .map(|&t| warp.eval(t))
            .collect::<Result<Vec<f64>>>()?;
        let mu0 = track.positions[0];
        let residuals = [
            track.positions.iter().map(|p| p[0] - mu0[0]).collect(),
            track.positions.iter().map(|p| p[1] - mu0[1]).collect(),
        ];
        let store = BasisStore {
            family,
            entries: (0..phis.len()).map(|_| OnceLock::new()).collect(),
            phis,
            warped_times,
            knots: knots.clone(),
            residuals,
        };
        let needed = store.estimated_bytes();
        if needed > mem_cap {
            return Err(FmmError::MemoryBudget { needed, cap: mem_cap });
        }
        Ok(store)
    }

    /// Upper bound on the bytes held once every entry is filled.
    pub fn estimated_bytes(&self) -> usize {
        let k = self.warped_times.len().min(self.knots.len());
        let per_entry = 8 * 3 * k + std::mem::size_of::<LikelihoodWorkspace>();
        self.phis.len() * per_entry
    }

    pub fn len(&self) -> usize {
        self.phis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phis.is_empty()
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn phi(&self, k: usize) -> f64 {
        self.phis[k]
    }

    pub fn phis(&self) -> &[f64] {
        &self.phis
    }

    pub fn kernel(&self, k: usize) -> Result<KernelSpec> {
        KernelSpec::new(self.family, self.phis[k])
    }

    /// The `n × m` basis for entry `k`, recomputed on request.
    pub fn basis(&self, k: usize) -> Result<nalgebra::DMatrix<f64>> {
        basis_from_warped_times(&self.warped_times, &self.knots, &self.kernel(k)?)
    }

    pub fn workspace(&self, k: usize) -> Result<&LikelihoodWorkspace> {
        if let Some(ws) = self.entries[k].get() {
            return Ok(ws);
        }
        let h = self.basis(k)?;
        let ws = LikelihoodWorkspace::new(&h, [&self.residuals[0], &self.residuals[1]])?;
        let _ = self.entries[k].set(ws);
        Ok(self.entries[k].get().expect("entry was just set"))
    }

    pub fn loglik(&self, k: usize, sigma2_s: f64, sigma2_ratio: f64) -> Result<f64> {
        Ok(self.workspace(k)?.loglik(sigma2_s, sigma2_ratio))
    }

    /// Fill every entry now.
    pub fn fill(&self) -> Result<()> {
        for k in 0..self.len() {
            self.workspace(k)?;
        }
        Ok(())
    }
}

/// Build and fully populate the store for one model.
pub fn precompute_bases(
    track: &StandardizedTrack,
    knots: &KnotGrid,
    family: KernelFamily,
    prior: &PriorConfig,
    warp: &WarpField,
    mem_cap: usize,
) -> Result<BasisStore> {
    let store = BasisStore::new(track, knots, family, prior, warp, mem_cap)?;
    store.fill()?;
    Ok(store)
}

/// Chain length, burn-in, thinning and the prior-only switch.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub n_iter: usize,
    pub n_keep: usize,
    pub burn_frac: f64,
    pub prior_only: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_iter: 10_000,
            n_keep: 1000,
            burn_frac: 0.2,
            prior_only: false,
        }
    }
}

impl FitConfig {
    pub fn burn_in(&self) -> usize {
        (self.n_iter as f64 * self.burn_frac).floor() as usize
    }

    /// Number of retained draws and the thinning interval.
    pub fn retention(&self) -> (usize, usize) {
        let post = self.n_iter - self.burn_in();
        let keep = self.n_keep.min(post).max(1);
        (keep, (post / keep).max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub phi: f64,
    pub sigma2_s: f64,
    pub sigma_ratio: f64,
}

impl Draw {
    /// `σ²_{μ/s}` as used by the likelihood.
    pub fn sigma2_ratio(&self) -> f64 {
        self.sigma_ratio * self.sigma_ratio
    }

    /// Process variance `σ² = σ_s²·σ²_{μ/s}`.
    pub fn sigma2(&self) -> f64 {
        self.sigma2_s * self.sigma2_ratio()
    }
}

/// Post-burn-in acceptance rates per update block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acceptance {
    pub phi: f64,
    pub sigma2_s: f64,
    pub sigma_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit {
    pub spec: ModelSpec,
    pub draws: Vec<Draw>,
    pub phi_index: Vec<usize>,
    pub loglik: Vec<f64>,
    pub logprior: Vec<f64>,
    pub acceptance: Acceptance,
    pub seed: u64,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl ModelFit {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Map any integer onto `[0, k−1]` by repeated reflection at both ends.
fn reflect(x: i64, k: usize) -> usize {
    if k == 1 {
        return 0;
    }
    let period = 2 * (k as i64 - 1);
    let r = x.rem_euclid(period);
    (if r < k as i64 { r } else { period - r }) as usize
}

pub const PHI_MAX_STEP: i64 = 5;

/// Probability that the φ proposal moves from index `from` to `to`.
fn phi_proposal_prob(from: usize, to: usize, k: usize) -> f64 {
    let hits = (1..=PHI_MAX_STEP)
        .flat_map(|d| [d, -d])
        .filter(|d| reflect(from as i64 + d, k) == to)
        .count();
    hits as f64 / (2 * PHI_MAX_STEP) as f64
}

struct RwStep {
    log_step: f64,
    accepted: usize,
    tried: usize,
}

impl RwStep {
    fn new(step: f64) -> Self {
        RwStep {
            log_step: step.ln(),
            accepted: 0,
            tried: 0,
        }
    }

    fn record(&mut self, ok: bool) {
        self.tried += 1;
        if ok {
            self.accepted += 1;
        }
    }

    /// Nudge the step towards 20–50% acceptance and reset the counters.
    fn adapt(&mut self) {
        if self.tried == 0 {
            return;
        }
        let rate = self.accepted as f64 / self.tried as f64;
        if rate < 0.2 {
            self.log_step -= 0.3;
        } else if rate > 0.5 {
            self.log_step += 0.3;
        }
        self.accepted = 0;
        self.tried = 0;
    }

    fn rate(&self) -> f64 {
        if self.tried == 0 {
            0.0
        } else {
            self.accepted as f64 / self.tried as f64
        }
    }
}

const ADAPT_BATCH: usize = 50;

/// Run one chain on a prepared store.
pub fn fit_with_store(
    store: &BasisStore,
    spec: &ModelSpec,
    prior: &PriorConfig,
    config: &FitConfig,
    seed: u64,
) -> Result<ModelFit> {
    prior.validate()?;
    if config.n_iter < 1000 {
        return Err(FmmError::InvalidArgument(format!(
            "n_iter must be at least 1000, got {}",
            config.n_iter
        )));
    }
    if store.family() != spec.family {
        return Err(FmmError::InvalidArgument("store and model use different kernel families".into()));
    }
    let mut rng = rng_from_seed(seed);
    let k_phi = store.len();
    let family = spec.family;

    let log_target = |idx: usize, log_s2: f64, log_r: f64| -> Result<(f64, f64, f64)> {
        let s2 = log_s2.exp();
        let r = log_r.exp();
        let lp = prior.log_prior(family, s2, r);
        if lp == f64::NEG_INFINITY {
            return Ok((f64::NEG_INFINITY, 0.0, lp));
        }
        let ll = if config.prior_only {
            0.0
        } else {
            store.loglik(idx, s2, r * r)?
        };
        // Jacobians of the log transforms.
        Ok((ll + lp + log_s2 + log_r, ll, lp))
    };

    let mut idx = k_phi / 2;
    let mut log_s2 = prior.sigma2_s_prior_mean().ln();
    let mut log_r = 1f64.min(0.5 * prior.ratio_upper).ln();
    let (mut cur, mut cur_ll, mut cur_lp) = log_target(idx, log_s2, log_r)?;
    if !cur.is_finite() {
        return Err(FmmError::NonFinite(format!("initial log posterior for {}", spec.warp_id)));
    }

    let burn = config.burn_in();
    let (keep, thin) = config.retention();
    let first_kept = config.n_iter - keep * thin;

    let mut phi_stats = RwStep::new(1.0);
    let mut s2_step = RwStep::new(0.3);
    let mut r_step = RwStep::new(0.3);

    let mut fit = ModelFit {
        spec: spec.clone(),
        draws: Vec::with_capacity(keep),
        phi_index: Vec::with_capacity(keep),
        loglik: Vec::with_capacity(keep),
        logprior: Vec::with_capacity(keep),
        acceptance: Acceptance {
            phi: 0.0,
            sigma2_s: 0.0,
            sigma_ratio: 0.0,
        },
        seed,
        n_iter: config.n_iter,
        burn_in: burn,
        thin,
    };

    for it in 0..config.n_iter {
        if it == burn {
            phi_stats = RwStep::new(1.0);
            s2_step.accepted = 0;
            s2_step.tried = 0;
            r_step.accepted = 0;
            r_step.tried = 0;
        }

        if k_phi > 1 {
            let mut d = rng.random_range(1..=PHI_MAX_STEP);
            if rng.random::<bool>() {
                d = -d;
            }
            let prop = reflect(idx as i64 + d, k_phi);
            let (t, ll, lp) = log_target(prop, log_s2, log_r)?;
            let log_q = phi_proposal_prob(prop, idx, k_phi).ln() - phi_proposal_prob(idx, prop, k_phi).ln();
            let ok = rng.random::<f64>().ln() < t - cur + log_q;
            if ok {
                idx = prop;
                (cur, cur_ll, cur_lp) = (t, ll, lp);
            }
            phi_stats.record(ok);
        }

        let prop = log_s2 + s2_step.log_step.exp() * rng.sample::<f64, _>(StandardNormal);
        let (t, ll, lp) = log_target(idx, prop, log_r)?;
        let ok = rng.random::<f64>().ln() < t - cur;
        if ok {
            log_s2 = prop;
            (cur, cur_ll, cur_lp) = (t, ll, lp);
        }
        s2_step.record(ok);

        let prop = log_r + r_step.log_step.exp() * rng.sample::<f64, _>(StandardNormal);
        let (t, ll, lp) = log_target(idx, log_s2, prop)?;
        let ok = rng.random::<f64>().ln() < t - cur;
        if ok {
            log_r = prop;
            (cur, cur_ll, cur_lp) = (t, ll, lp);
        }
        r_step.record(ok);

        if it < burn && (it + 1) % ADAPT_BATCH == 0 {
            s2_step.adapt();
            r_step.adapt();
        }

        if it >= first_kept && (it - first_kept + 1) % thin == 0 {
            fit.draws.push(Draw {
                phi: store.phi(idx),
                sigma2_s: log_s2.exp(),
                sigma_ratio: log_r.exp(),
            });
            fit.phi_index.push(idx);
            fit.loglik.push(cur_ll);
            fit.logprior.push(cur_lp);
        }
    }

    fit.acceptance = Acceptance {
        phi: if k_phi > 1 { phi_stats.rate() } else { 1.0 },
        sigma2_s: s2_step.rate(),
        sigma_ratio: r_step.rate(),
    };
    if fit.acceptance.sigma2_s == 0.0 || fit.acceptance.sigma_ratio == 0.0 {
        return Err(FmmError::StuckChain(format!("{} / {}", spec.family, spec.warp_id)));
    }
    log::debug!(
        "fit {} / {}: acceptance φ={:.2} σ_s²={:.2} σ_μ/s={:.2}",
        spec.family,
        spec.warp_id,
        fit.acceptance.phi,
        fit.acceptance.sigma2_s,
        fit.acceptance.sigma_ratio
    );
    Ok(fit)
}

/// Fit one model from scratch: build the store lazily, then run the chain.
pub fn fit_model(
    track: &StandardizedTrack,
    knots: &KnotGrid,
    warp: &WarpField,
    spec: &ModelSpec,
    prior: &PriorConfig,
    config: &FitConfig,
    seed: u64,
) -> Result<ModelFit> {
    if warp.id != spec.warp_id {
        return Err(FmmError::InvalidArgument(format!(
            "model expects warp {} but got {}",
            spec.warp_id, warp.id
        )));
    }
    let store = BasisStore::new(track, knots, spec.family, prior, warp, DEFAULT_STORE_CAP)?;
    fit_with_store(&store, spec, prior, config, seed)
}

/// Recompute `log [s | θ]` for retained draw `k` of a fit.
pub fn recompute_loglik(store: &BasisStore, fit: &ModelFit, k: usize) -> Result<f64> {
    let d = fit.draws[k];
    store.loglik(fit.phi_index[k], d.sigma2_s, d.sigma2_ratio())
}
