//! Composition sampling of the latent path.
//!
//! For each retained model-chain state the knot weights have the Gaussian
//! full conditional
//!
//! ```text
//! ε | s, θ ~ N(Σ_ε H̃'s̃ / σ_s², Σ_ε),   Σ_ε = (H̃'H̃ / σ_s² + I / σ²)⁻¹
//! ```
//!
//! per coordinate, with `s̃ = s − μ(0)`. A path draw is `μ(0) + H̃_q ε` for any
//! set of query times. `Σ_ε` is applied through the eigendecomposition of
//! `H̃'H̃`, which is cached per (model, φ) and shared by all draws that use it.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::bma::BmaResult;
use crate::ingest::StandardizedTrack;
use crate::kernels::{build_basis, KernelSpec, KnotGrid};
use crate::mcmc::{ModelFit, ModelSpec};
use crate::rng::{derive_seed, rng_from_seed};
use crate::stats::quantile_sorted;
use crate::warp::WarpSet;
use crate::{FmmError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PathDraws {
    pub query_times: Vec<f64>,
    /// `draws[r][i]` is the position of draw `r` at `query_times[i]`.
    pub draws: Vec<Vec<[f64; 2]>>,
    /// (model index, parameter-draw index) behind each draw.
    pub source: Vec<(usize, usize)>,
}

impl PathDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Pointwise posterior mean and central interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSummaryRow {
    pub t: f64,
    pub mean: [f64; 2],
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

/// Pointwise mean and `level` central interval of a set of path draws.
pub fn summarize_paths(paths: &PathDraws, level: f64) -> Vec<PathSummaryRow> {
    let alpha = 0.5 * (1.0 - level);
    let r = paths.len() as f64;
    (0..paths.query_times.len())
        .map(|i| {
            let mut row = PathSummaryRow {
                t: paths.query_times[i],
                mean: [0.0; 2],
                lo: [0.0; 2],
                hi: [0.0; 2],
            };
            for a in 0..2 {
                let mut vals: Vec<f64> = paths.draws.iter().map(|d| d[i][a]).collect();
                row.mean[a] = vals.iter().sum::<f64>() / r;
                vals.sort_by(f64::total_cmp);
                row.lo[a] = quantile_sorted(&vals, alpha);
                row.hi[a] = quantile_sorted(&vals, 1.0 - alpha);
            }
            row
        })
        .collect()
}

/// Quantities shared by every draw from one (model, φ) pair.
struct Conditional {
    eigvecs: DMatrix<f64>,
    lambda: DVector<f64>,
    /// `V'H̃'s̃` per coordinate.
    proj: [DVector<f64>; 2],
    h_query: DMatrix<f64>,
}

impl Conditional {
    fn new(h_obs: &DMatrix<f64>, h_query: DMatrix<f64>, resid: &[DVector<f64>; 2]) -> Self {
        let eig = SymmetricEigen::new(h_obs.tr_mul(h_obs));
        let proj = [
            eig.eigenvectors.tr_mul(&h_obs.tr_mul(&resid[0])),
            eig.eigenvectors.tr_mul(&h_obs.tr_mul(&resid[1])),
        ];
        Conditional {
            lambda: eig.eigenvalues.map(|l| l.max(0.0)),
            eigvecs: eig.eigenvectors,
            proj,
            h_query,
        }
    }

    /// One draw of `H̃_q ε` for both coordinates.
    fn draw<R: Rng + ?Sized>(&self, sigma2_s: f64, sigma2: f64, rng: &mut R) -> [DVector<f64>; 2] {
        let m = self.lambda.len();
        // Eigenvalues of Σ_ε in the eigenbasis of H̃'H̃.
        let d: Vec<f64> = if sigma2 > 0.0 {
            self.lambda
                .iter()
                .map(|l| sigma2 * sigma2_s / (l * sigma2 + sigma2_s))
                .collect()
        } else {
            vec![0.0; m]
        };
        let mut out = [DVector::zeros(0), DVector::zeros(0)];
        for (a, slot) in out.iter_mut().enumerate() {
            let coeffs = DVector::from_fn(m, |k, _| {
                let z: f64 = rng.sample(StandardNormal);
                d[k] * self.proj[a][k] / sigma2_s + d[k].sqrt() * z
            });
            let eps = &self.eigvecs * coeffs;
            *slot = &self.h_query * eps;
        }
        out
    }
}

/// A chain holding a single model, for predicting from one fit.
pub fn single_model_chain(fit: &ModelFit) -> BmaResult {
    let k = fit.len();
    BmaResult {
        models: vec![fit.spec.clone()],
        model_probs: vec![1.0],
        kernel_probs: [(fit.spec.family, 1.0)].into_iter().collect(),
        model_chain: vec![0; k],
        draw_index: (0..k).collect(),
        n_rj_iter: k,
    }
}

/// Draw latent paths at `query_times`, one per model-chain state (or the
/// first `max_draws` states when given).
#[allow(clippy::too_many_arguments)]
pub fn sample_path(
    track: &StandardizedTrack,
    knots: &KnotGrid,
    warps: &WarpSet,
    fits: &[ModelFit],
    chain: &BmaResult,
    query_times: &[f64],
    max_draws: Option<usize>,
    seed: u64,
) -> Result<PathDraws> {
    if let Some(t) = query_times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(FmmError::InvalidArgument(format!("query time {t} outside [0, 1]")));
    }
    let find_fit = |spec: &ModelSpec| -> Result<&ModelFit> {
        fits.iter()
            .find(|f| f.spec == *spec)
            .ok_or_else(|| FmmError::Unknown(format!("fit for {} / {}", spec.family, spec.warp_id)))
    };
    let n_draws = max_draws.unwrap_or(chain.model_chain.len()).min(chain.model_chain.len());
    if n_draws == 0 {
        return Err(FmmError::InvalidArgument("no chain states to sample from".into()));
    }

    let mu0 = track.positions[0];
    let resid = [
        DVector::from_iterator(track.len(), track.positions.iter().map(|p| p[0] - mu0[0])),
        DVector::from_iterator(track.len(), track.positions.iter().map(|p| p[1] - mu0[1])),
    ];

    // (model, φ index) → parameter source per draw.
    let mut plan = Vec::with_capacity(n_draws);
    let mut keys: BTreeSet<(usize, usize)> = BTreeSet::new();
    for r in 0..n_draws {
        let model = chain.model_chain[r];
        let k = chain.draw_index[r];
        let fit = find_fit(&chain.models[model])?;
        if k >= fit.len() {
            return Err(FmmError::InvalidArgument(format!("draw index {k} beyond fit length {}", fit.len())));
        }
        keys.insert((model, fit.phi_index[k]));
        plan.push((model, k, fit));
    }

    let key_list: Vec<(usize, usize)> = keys.into_iter().collect();
    let conditionals: Vec<Conditional> = key_list
        .par_iter()
        .map(|&(model, phi_idx)| {
            let spec = &chain.models[model];
            let warp = warps
                .get(&spec.warp_id)
                .ok_or_else(|| FmmError::Unknown(format!("warp {}", spec.warp_id)))?;
            let fit = find_fit(spec)?;
            let k = fit.phi_index.iter().position(|&i| i == phi_idx).expect("φ index present");
            let kernel = KernelSpec::new(spec.family, fit.draws[k].phi)?;
            let h_obs = build_basis(&track.times, knots, &kernel, warp)?.h;
            let h_query = build_basis(query_times, knots, &kernel, warp)?.h;
            Ok(Conditional::new(&h_obs, h_query, &resid))
        })
        .collect::<Result<Vec<_>>>()?;

    let results: Vec<(Vec<[f64; 2]>, (usize, usize))> = plan
        .par_iter()
        .enumerate()
        .map(|(r, &(model, k, fit))| {
            let d = fit.draws[k];
            let ci = key_list
                .binary_search(&(model, fit.phi_index[k]))
                .expect("key present");
            let mut rng = rng_from_seed(derive_seed(seed, &[r as u64]));
            let [x, y] = conditionals[ci].draw(d.sigma2_s, d.sigma2(), &mut rng);
            let path = x.iter().zip(y.iter()).map(|(a, b)| [mu0[0] + a, mu0[1] + b]).collect();
            (path, (model, k))
        })
        .collect();

    let (draws, source) = results.into_iter().unzip();
    Ok(PathDraws {
        query_times: query_times.to_vec(),
        draws,
        source,
    })
}

/// `s(t_i) − μ_r(t_i)` for every draw; paths must be at the observation times.
pub fn posterior_residuals(track: &StandardizedTrack, paths: &PathDraws) -> Result<Vec<Vec<[f64; 2]>>> {
    if paths.query_times.len() != track.len()
        || paths
            .query_times
            .iter()
            .zip(&track.times)
            .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(FmmError::InvalidArgument(
            "path draws are not at the observation times".into(),
        ));
    }
    Ok(paths
        .draws
        .iter()
        .map(|d| {
            d.iter()
                .zip(&track.positions)
                .map(|(m, s)| [s[0] - m[0], s[1] - m[1]])
                .collect()
        })
        .collect())
}
