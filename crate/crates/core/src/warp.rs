//! Temporal warp fields.
//!
//! A warp maps observation time `t` to a deformed time `w(t)`. Candidates are
//! Gaussian-process draws `w ~ N(t, Σ_w)` with
//! `Σ_w[i, j] = σ_w² exp(-(t_i - t_j)² / φ_w²)`, kept only when they preserve
//! time order. Fields are stored on a dense grid and linearly interpolated.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::gauss::cholesky_jittered;
use crate::rng::{derive_seed, rng_from_seed};
use crate::{FmmError, Result};

pub const IDENTITY_ID: &str = "identity";
pub const DEFAULT_GRID_LEN: usize = 401;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpParams {
    pub sigma_w: f64,
    pub phi_w: f64,
}

impl WarpParams {
    pub fn new(sigma_w: f64, phi_w: f64) -> Result<Self> {
        if !(sigma_w.is_finite() && sigma_w > 0.0 && phi_w.is_finite() && phi_w > 0.0) {
            return Err(FmmError::InvalidArgument(format!(
                "warp parameters must be positive and finite (σ_w={sigma_w}, φ_w={phi_w})"
            )));
        }
        Ok(WarpParams { sigma_w, phi_w })
    }
}

/// A monotone map of `[0, 1]` sampled on a dense grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpField {
    pub id: String,
    pub grid_times: Vec<f64>,
    pub values: Vec<f64>,
    pub params: Option<WarpParams>,
    pub derivative: Vec<f64>,
    identity: bool,
}

pub fn unit_grid(len: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..len).map(|i| i as f64 / (len - 1) as f64).collect();
    g[len - 1] = 1.0;
    g
}

impl WarpField {
    /// `w(t) = t`, evaluated exactly.
    pub fn identity(grid_len: usize) -> Self {
        let grid = unit_grid(grid_len.max(2));
        WarpField {
            id: IDENTITY_ID.to_string(),
            derivative: vec![1.0; grid.len()],
            values: grid.clone(),
            grid_times: grid,
            params: None,
            identity: true,
        }
    }

    /// Build a field from grid values; fails if the values fold.
    pub fn from_values(
        id: impl Into<String>,
        grid_times: Vec<f64>,
        values: Vec<f64>,
        params: Option<WarpParams>,
    ) -> Result<Self> {
        let id = id.into();
        if grid_times.len() != values.len() || grid_times.len() < 2 {
            return Err(FmmError::InvalidArgument(format!(
                "warp {id}: grid and values must have equal length ≥ 2"
            )));
        }
        if grid_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FmmError::InvalidArgument(format!(
                "warp {id}: grid times must be strictly increasing"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FmmError::NonFinite(format!("warp {id} values")));
        }
        if !is_non_folding(&values) {
            return Err(FmmError::InvalidArgument(format!("warp {id} folds")));
        }
        let derivative = finite_difference(&grid_times, &values);
        Ok(WarpField {
            identity: id == IDENTITY_ID,
            id,
            grid_times,
            values,
            params,
            derivative,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// `w(t)` by linear interpolation on the grid.
    pub fn eval(&self, t: f64) -> Result<f64> {
        let lo = self.grid_times[0];
        let hi = *self.grid_times.last().unwrap();
        let tol = 1e-12;
        if !(t >= lo - tol && t <= hi + tol) {
            return Err(FmmError::WarpRange { time: t, lo, hi });
        }
        if self.identity {
            return Ok(t);
        }
        let t = t.clamp(lo, hi);
        let k = self.grid_times.partition_point(|&g| g <= t);
        if k == 0 {
            return Ok(self.values[0]);
        }
        if k >= self.grid_times.len() {
            return Ok(*self.values.last().unwrap());
        }
        let (t0, t1) = (self.grid_times[k - 1], self.grid_times[k]);
        let (w0, w1) = (self.values[k - 1], self.values[k]);
        Ok(w0 + (t - t0) / (t1 - t0) * (w1 - w0))
    }

    /// `dw/dt` linearly interpolated from the grid derivative.
    pub fn derivative_at(&self, t: f64) -> Result<f64> {
        let lo = self.grid_times[0];
        let hi = *self.grid_times.last().unwrap();
        if !(t >= lo - 1e-12 && t <= hi + 1e-12) {
            return Err(FmmError::WarpRange { time: t, lo, hi });
        }
        let t = t.clamp(lo, hi);
        let k = self.grid_times.partition_point(|&g| g <= t);
        if k == 0 {
            return Ok(self.derivative[0]);
        }
        if k >= self.grid_times.len() {
            return Ok(*self.derivative.last().unwrap());
        }
        let (t0, t1) = (self.grid_times[k - 1], self.grid_times[k]);
        let (d0, d1) = (self.derivative[k - 1], self.derivative[k]);
        Ok(d0 + (t - t0) / (t1 - t0) * (d1 - d0))
    }
}

/// Strict increase at grid resolution; ties count as folding.
pub fn is_non_folding(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] > w[0])
}

/// Central differences inside, one-sided differences at the ends.
pub fn finite_difference(grid: &[f64], values: &[f64]) -> Vec<f64> {
    let g = grid.len();
    (0..g)
        .map(|i| {
            if i == 0 {
                (values[1] - values[0]) / (grid[1] - grid[0])
            } else if i == g - 1 {
                (values[g - 1] - values[g - 2]) / (grid[g - 1] - grid[g - 2])
            } else {
                (values[i + 1] - values[i - 1]) / (grid[i + 1] - grid[i - 1])
            }
        })
        .collect()
}

pub fn warp_derivative(field: &WarpField) -> Vec<f64> {
    if field.is_identity() {
        return vec![1.0; field.grid_times.len()];
    }
    finite_difference(&field.grid_times, &field.values)
}

/// Reusable Gaussian-process sampler for one parameter pair.
pub struct WarpSampler {
    params: WarpParams,
    grid: Vec<f64>,
    factor: DMatrix<f64>,
}

impl WarpSampler {
    pub fn new(params: WarpParams, grid_times: &[f64]) -> Result<Self> {
        if grid_times.len() < 50 {
            return Err(FmmError::InvalidArgument(format!(
                "warp grid needs at least 50 points, got {}",
                grid_times.len()
            )));
        }
        if grid_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FmmError::InvalidArgument("warp grid must be strictly increasing".into()));
        }
        let g = grid_times.len();
        let s2 = params.sigma_w * params.sigma_w;
        let p2 = params.phi_w * params.phi_w;
        let cov = DMatrix::from_fn(g, g, |i, j| {
            let d = grid_times[i] - grid_times[j];
            s2 * (-(d * d) / p2).exp()
        });
        let (chol, _) = cholesky_jittered(cov, "warp covariance")?;
        Ok(WarpSampler {
            params,
            grid: grid_times.to_vec(),
            factor: chol.unpack(),
        })
    }

    pub fn params(&self) -> WarpParams {
        self.params
    }

    /// One proposal `t + L z`; `None` when it folds.
    pub fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<f64>> {
        let g = self.grid.len();
        let z = DVector::from_iterator(g, (0..g).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let dev = &self.factor * z;
        let values: Vec<f64> = self.grid.iter().zip(dev.iter()).map(|(t, d)| t + d).collect();
        is_non_folding(&values).then_some(values)
    }
}

/// Outcome of a single warp draw.
#[derive(Debug, Clone)]
pub enum WarpDraw {
    Accepted(WarpField),
    Rejected,
}

/// Draw one warp; `Rejected` when the draw folds.
pub fn sample_warp(params: WarpParams, grid_times: &[f64], seed: u64) -> Result<WarpDraw> {
    let sampler = WarpSampler::new(params, grid_times)?;
    let mut rng = rng_from_seed(seed);
    Ok(match sampler.propose(&mut rng) {
        Some(values) => WarpDraw::Accepted(WarpField::from_values(
            format!("s{seed}"),
            grid_times.to_vec(),
            values,
            Some(params),
        )?),
        None => WarpDraw::Rejected,
    })
}

/// Parameter grid and budgets for a candidate set.
#[derive(Debug, Clone)]
pub struct CandidateConfig {
    pub sigma_values: Vec<f64>,
    pub phi_values: Vec<f64>,
    pub per_combo: usize,
    /// Proposal budget per parameter combination.
    pub max_attempts: usize,
    pub grid_len: usize,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        CandidateConfig {
            sigma_values: linspace(0.001, 1.0, 10),
            phi_values: linspace(0.001, 1.0, 10),
            per_combo: 40,
            max_attempts: 500,
            grid_len: DEFAULT_GRID_LEN,
        }
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Per-combination bookkeeping for a candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct ComboReport {
    pub combo: usize,
    pub sigma_w: f64,
    pub phi_w: f64,
    pub accepted: usize,
    pub attempts: usize,
}

impl ComboReport {
    pub fn exhausted(&self, per_combo: usize) -> bool {
        self.accepted < per_combo
    }
}

/// A collection of warps addressable by id.
#[derive(Debug, Clone, Default)]
pub struct WarpSet {
    pub fields: Vec<WarpField>,
}

impl WarpSet {
    pub fn new(fields: Vec<WarpField>) -> Self {
        WarpSet { fields }
    }

    pub fn get(&self, id: &str) -> Option<&WarpField> {
        self.fields.iter().find(|w| w.id == id)
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub warps: WarpSet,
    pub report: Vec<ComboReport>,
}

/// Cell `[v - h, v + h]` around grid value `v`, clipped to the grid range.
fn cell(values: &[f64], k: usize) -> (f64, f64) {
    let lo_all = values[0];
    let hi_all = *values.last().unwrap();
    let half = if values.len() > 1 {
        0.5 * (hi_all - lo_all) / (values.len() - 1) as f64
    } else {
        0.0
    };
    ((values[k] - half).max(lo_all), (values[k] + half).min(hi_all))
}

/// Stratified (Latin hypercube) parameter pairs within one grid cell.
fn lhs_params<R: Rng + ?Sized>(
    rng: &mut R,
    sigma_cell: (f64, f64),
    phi_cell: (f64, f64),
    slots: usize,
) -> Vec<(f64, f64)> {
    let mut perm_s: Vec<usize> = (0..slots).collect();
    let mut perm_p: Vec<usize> = (0..slots).collect();
    perm_s.shuffle(rng);
    perm_p.shuffle(rng);
    (0..slots)
        .map(|s| {
            let us: f64 = rng.random();
            let up: f64 = rng.random();
            let fs = (perm_s[s] as f64 + us) / slots as f64;
            let fp = (perm_p[s] as f64 + up) / slots as f64;
            (
                sigma_cell.0 + fs * (sigma_cell.1 - sigma_cell.0),
                phi_cell.0 + fp * (phi_cell.1 - phi_cell.0),
            )
        })
        .collect()
}

fn run_combo(
    combo: usize,
    config: &CandidateConfig,
    grid: &[f64],
    seed: u64,
) -> Result<(Vec<WarpField>, ComboReport)> {
    let nphi = config.phi_values.len();
    let (si, pi) = (combo / nphi, combo % nphi);
    let mut rng = rng_from_seed(derive_seed(seed, &[combo as u64]));
    let slots = lhs_params(
        &mut rng,
        cell(&config.sigma_values, si),
        cell(&config.phi_values, pi),
        config.per_combo,
    );
    let mut accepted = Vec::new();
    let mut attempts = 0;
    'slots: for (slot, &(sigma_w, phi_w)) in slots.iter().enumerate() {
        let params = WarpParams::new(sigma_w, phi_w)?;
        let sampler = WarpSampler::new(params, grid)?;
        loop {
            if attempts >= config.max_attempts {
                break 'slots;
            }
            attempts += 1;
            if let Some(values) = sampler.propose(&mut rng) {
                accepted.push(WarpField::from_values(
                    format!("c{combo:03}_{slot:03}"),
                    grid.to_vec(),
                    values,
                    Some(params),
                )?);
                break;
            }
        }
    }
    let report = ComboReport {
        combo,
        sigma_w: config.sigma_values[si],
        phi_w: config.phi_values[pi],
        accepted: accepted.len(),
        attempts,
    };
    Ok((accepted, report))
}

/// Candidate warps over the full parameter grid, plus the identity warp.
///
/// Each combination runs on its own seeded stream, so the result does not
/// depend on how combinations are scheduled across threads.
pub fn build_candidate_set(config: &CandidateConfig, seed: u64) -> Result<CandidateSet> {
    if config.per_combo == 0 {
        return Err(FmmError::InvalidArgument("per_combo must be at least 1".into()));
    }
    if config.sigma_values.is_empty() || config.phi_values.is_empty() {
        return Err(FmmError::InvalidArgument("empty warp parameter grid".into()));
    }
    let grid = unit_grid(config.grid_len);
    let n_combos = config.sigma_values.len() * config.phi_values.len();
    let results: Vec<(Vec<WarpField>, ComboReport)> = (0..n_combos)
        .into_par_iter()
        .map(|c| run_combo(c, config, &grid, seed))
        .collect::<Result<_>>()?;

    let mut fields = vec![WarpField::identity(config.grid_len)];
    let mut report = Vec::with_capacity(n_combos);
    for (warps, rep) in results {
        if rep.exhausted(config.per_combo) {
            log::info!(
                "warp combo {} (σ_w={:.3}, φ_w={:.3}) exhausted its budget: {}/{} accepted after {} attempts",
                rep.combo,
                rep.sigma_w,
                rep.phi_w,
                rep.accepted,
                config.per_combo,
                rep.attempts
            );
        }
        fields.extend(warps);
        report.push(rep);
    }
    if fields.len() == 1 {
        return Err(FmmError::EmptyCandidateSet);
    }
    Ok(CandidateSet {
        warps: WarpSet::new(fields),
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_sigma_stays_at_identity() {
        let grid = unit_grid(401);
        let p = WarpParams::new(1e-8, 0.3).unwrap();
        for seed in 0..5 {
            match sample_warp(p, &grid, seed).unwrap() {
                WarpDraw::Accepted(w) => {
                    for (t, v) in w.grid_times.iter().zip(&w.values) {
                        assert!((t - v).abs() < 1e-3);
                    }
                }
                WarpDraw::Rejected => panic!("near-identity warp rejected"),
            }
        }
    }

    #[test]
    fn rough_fields_fold_often() {
        let grid = unit_grid(401);
        let sampler = WarpSampler::new(WarpParams::new(1.0, 0.001).unwrap(), &grid).unwrap();
        let mut rng = rng_from_seed(3);
        let rejected = (0..200).filter(|_| sampler.propose(&mut rng).is_none()).count();
        assert!(rejected > 100, "only {rejected}/200 rejected");
    }

    #[test]
    fn sampling_is_deterministic() {
        let grid = unit_grid(101);
        let p = WarpParams::new(0.05, 0.4).unwrap();
        let a = sample_warp(p, &grid, 42).unwrap();
        let b = sample_warp(p, &grid, 42).unwrap();
        match (a, b) {
            (WarpDraw::Accepted(a), WarpDraw::Accepted(b)) => assert_eq!(a, b),
            (WarpDraw::Rejected, WarpDraw::Rejected) => {}
            _ => panic!("draws differ"),
        }
    }

    #[test]
    fn derivative_cases() {
        let id = WarpField::identity(401);
        assert!(warp_derivative(&id).iter().all(|d| (d - 1.0).abs() < 1e-10));
        let grid = unit_grid(201);
        let values: Vec<f64> = grid.iter().map(|t| 2.0 * t - 0.3).collect();
        let w = WarpField::from_values("lin2", grid, values, None).unwrap();
        assert!(warp_derivative(&w).iter().all(|d| (d - 2.0).abs() < 1e-8));
    }

    #[test]
    fn folding_values_are_rejected() {
        let grid = unit_grid(60);
        let mut values = grid.clone();
        values[10] = values[9];
        assert!(WarpField::from_values("x", grid, values, None).is_err());
    }

    #[test]
    fn interpolation_exact_on_grid_and_monotone_between() {
        let grid = unit_grid(101);
        let values: Vec<f64> = grid.iter().map(|t| t + 0.1 * (3.0 * t).sin()).collect();
        let w = WarpField::from_values("s", grid.clone(), values.clone(), None).unwrap();
        for (t, v) in grid.iter().zip(&values) {
            assert_eq!(w.eval(*t).unwrap(), *v);
        }
        let fine: Vec<f64> = (0..=2000).map(|i| w.eval(i as f64 / 2000.0).unwrap()).collect();
        assert!(fine.windows(2).all(|p| p[1] > p[0]));
        assert!(w.eval(1.5).is_err());
        assert!(w.eval(-0.1).is_err());
    }

    #[test]
    fn small_candidate_set_is_valid_and_reproducible() {
        let cfg = CandidateConfig {
            per_combo: 2,
            max_attempts: 20,
            grid_len: 101,
            ..CandidateConfig::default()
        };
        let a = build_candidate_set(&cfg, 9).unwrap();
        let b = build_candidate_set(&cfg, 9).unwrap();
        assert_eq!(a.warps.fields, b.warps.fields);
        assert_eq!(a.report, b.report);
        assert!(a.warps.len() <= 201);
        assert_eq!(a.warps.fields[0].id, IDENTITY_ID);
        for w in &a.warps.fields {
            assert!(is_non_folding(&w.values));
            assert!(warp_derivative(w).iter().all(|d| *d > 0.0));
        }
    }

    #[test]
    fn exhausted_combos_are_reported() {
        let cfg = CandidateConfig {
            per_combo: 1,
            max_attempts: 1,
            grid_len: 101,
            ..CandidateConfig::default()
        };
        let set = build_candidate_set(&cfg, 5).unwrap();
        assert!(set.warps.len() - 1 < 100);
        let exhausted = set.report.iter().filter(|r| r.exhausted(1)).count();
        assert_eq!(exhausted, 100 - (set.warps.len() - 1));
        assert!(exhausted > 0);
    }

    #[test]
    fn lhs_slots_stay_in_cell() {
        let mut rng = rng_from_seed(1);
        let pts = lhs_params(&mut rng, (0.1, 0.2), (0.5, 0.6), 8);
        let mut strata_s: Vec<usize> = pts.iter().map(|p| ((p.0 - 0.1) / 0.1 * 8.0) as usize).collect();
        strata_s.sort();
        assert_eq!(strata_s, (0..8).collect::<Vec<_>>());
        assert!(pts.iter().all(|p| p.1 >= 0.5 && p.1 <= 0.6));
    }
}
