//! Two-stage reversible-jump model averaging over fitted models.
//!
//! Every model is fitted on its own first. Iteration `k` of the second stage
//! then takes retained draw `k` from every fit, weights model `(l, j)` by
//! `[s | θ_lj][θ_lj | M_lj]·p_lj`, normalizes, and samples the model
//! indicator. Model probabilities are indicator frequencies.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use crate::kernels::KernelFamily;
use crate::mcmc::{ModelFit, ModelSpec, PriorConfig};
use crate::rng::rng_from_seed;
use crate::stats::log_sum_exp;
use crate::warp::{WarpField, WarpSet};
use crate::{FmmError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BmaResult {
    pub models: Vec<ModelSpec>,
    pub model_probs: Vec<f64>,
    pub kernel_probs: BTreeMap<KernelFamily, f64>,
    /// Sampled model index per RJ iteration.
    pub model_chain: Vec<usize>,
    /// Index of the parameter draw used at each RJ iteration.
    pub draw_index: Vec<usize>,
    pub n_rj_iter: usize,
}

/// Log prior model probabilities, uniform unless configured.
fn log_model_prior(prior: &PriorConfig, n_models: usize) -> Result<Vec<f64>> {
    match &prior.model_prior {
        None => Ok(vec![-(n_models as f64).ln(); n_models]),
        Some(p) if p.len() == n_models => Ok(p.iter().map(|v| v.ln()).collect()),
        Some(p) => Err(FmmError::Averaging(format!(
            "model prior has {} entries for {n_models} models",
            p.len()
        ))),
    }
}

/// Normalized model weights at RJ iteration `k`.
pub fn iteration_weights(fits: &[ModelFit], log_p: &[f64], k: usize) -> Result<Vec<f64>> {
    let logw: Vec<f64> = fits
        .par_iter()
        .zip(log_p.par_iter())
        .map(|(f, lp)| f.loglik[k] + f.logprior[k] + lp)
        .collect();
    let lse = log_sum_exp(&logw);
    if !lse.is_finite() {
        return Err(FmmError::Averaging(format!(
            "all model weights are non-finite at iteration {k}"
        )));
    }
    Ok(logw.iter().map(|w| (w - lse).exp()).collect())
}

fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave the cumulative sum just short of 1.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

pub fn rjmcmc_average(
    fits: &[ModelFit],
    prior: &PriorConfig,
    n_rj_iter: usize,
    seed: u64,
) -> Result<BmaResult> {
    if fits.is_empty() {
        return Err(FmmError::Averaging("no fitted models".into()));
    }
    let k_draws = fits[0].len();
    if let Some(bad) = fits.iter().find(|f| f.len() != k_draws) {
        return Err(FmmError::Averaging(format!(
            "fit {}/{} has {} draws, expected {k_draws}",
            bad.spec.family,
            bad.spec.warp_id,
            bad.len()
        )));
    }
    if n_rj_iter == 0 || n_rj_iter > k_draws {
        return Err(FmmError::Averaging(format!(
            "n_rj_iter must lie in 1..={k_draws}, got {n_rj_iter}"
        )));
    }
    let log_p = log_model_prior(prior, fits.len())?;
    let mut rng = rng_from_seed(seed);
    let mut counts = vec![0usize; fits.len()];
    let mut chain = Vec::with_capacity(n_rj_iter);
    let offset = k_draws - n_rj_iter;
    for it in 0..n_rj_iter {
        let k = offset + it;
        let w = iteration_weights(fits, &log_p, k)?;
        debug_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let pick = sample_categorical(&mut rng, &w);
        counts[pick] += 1;
        chain.push(pick);
    }
    let model_probs: Vec<f64> = counts.iter().map(|&c| c as f64 / n_rj_iter as f64).collect();
    let models: Vec<ModelSpec> = fits.iter().map(|f| f.spec.clone()).collect();
    let kernel_probs = accumulate_kernel_probs(&models, &model_probs);
    Ok(BmaResult {
        models,
        model_probs,
        kernel_probs,
        model_chain: chain,
        draw_index: (offset..k_draws).collect(),
        n_rj_iter,
    })
}

/// Sum model probabilities over warps within each kernel family.
pub fn accumulate_kernel_probs(models: &[ModelSpec], probs: &[f64]) -> BTreeMap<KernelFamily, f64> {
    let mut out: BTreeMap<KernelFamily, f64> = BTreeMap::new();
    for (m, p) in models.iter().zip(probs) {
        *out.entry(m.family).or_insert(0.0) += p;
    }
    out
}

/// Sum model probabilities over kernel families for each warp.
pub fn accumulate_warp_probs(models: &[ModelSpec], probs: &[f64]) -> BTreeMap<String, f64> {
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for (m, p) in models.iter().zip(probs) {
        *out.entry(m.warp_id.clone()).or_insert(0.0) += p;
    }
    out
}

/// Model-averaged `dw/dt` on the warps' common grid.
pub fn averaged_warp_derivative(result: &BmaResult, warps: &WarpSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let probs = accumulate_warp_probs(&result.models, &result.model_probs);
    let mut grid: Option<Vec<f64>> = None;
    let mut acc: Vec<f64> = Vec::new();
    for (id, p) in probs {
        if p == 0.0 {
            continue;
        }
        let w: &WarpField = warps.get(&id).ok_or_else(|| FmmError::Unknown(format!("warp {id}")))?;
        match &grid {
            None => {
                grid = Some(w.grid_times.clone());
                acc = vec![0.0; w.grid_times.len()];
            }
            Some(g) if g != &w.grid_times => {
                return Err(FmmError::Averaging("warps use different grids".into()));
            }
            _ => {}
        }
        for (a, d) in acc.iter_mut().zip(&w.derivative) {
            *a += p * d;
        }
    }
    let grid = grid.ok_or_else(|| FmmError::Averaging("no warp carries probability".into()))?;
    Ok((grid, acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::{Acceptance, Draw};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn fake_fit(family: KernelFamily, warp: &str, j: usize, loglik: Vec<f64>) -> ModelFit {
        let k = loglik.len();
        ModelFit {
            spec: ModelSpec::new(family, warp, j),
            draws: vec![
                Draw {
                    phi: 0.0,
                    sigma2_s: 0.001,
                    sigma_ratio: 1.0
                };
                k
            ],
            phi_index: vec![0; k],
            logprior: vec![0.0; k],
            loglik,
            acceptance: Acceptance {
                phi: 1.0,
                sigma2_s: 0.3,
                sigma_ratio: 0.3,
            },
            seed: 0,
            n_iter: 1000,
            burn_in: 200,
            thin: 1,
        }
    }

    #[test]
    fn duplicated_model_splits_evenly() {
        let ll: Vec<f64> = (0..10_000).map(|i| -100.0 - (i % 7) as f64).collect();
        let a = fake_fit(KernelFamily::Gaussian, "identity", 0, ll.clone());
        let mut b = a.clone();
        b.spec = ModelSpec::new(KernelFamily::Gaussian, "w1", 1);
        let r = rjmcmc_average(&[a, b], &PriorConfig::default(), 10_000, 1).unwrap();
        assert!((r.model_probs[0] - 0.5).abs() < 0.02);
        assert!((r.model_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn large_loglik_gap_dominates() {
        let a = fake_fit(KernelFamily::Gaussian, "identity", 0, vec![-50.0; 1000]);
        let b = fake_fit(KernelFamily::Bm, "identity", 0, vec![-150.0; 1000]);
        let r = rjmcmc_average(&[a, b], &PriorConfig::default(), 1000, 2).unwrap();
        assert!(r.model_probs[0] > 0.999);
        assert!(r.kernel_probs[&KernelFamily::Gaussian] > 0.999);
    }

    #[test]
    fn single_model_gets_everything() {
        let a = fake_fit(KernelFamily::TailUp, "identity", 0, vec![-1e6; 500]);
        let r = rjmcmc_average(&[a], &PriorConfig::default(), 500, 3).unwrap();
        assert_eq!(r.model_probs, vec![1.0]);
        assert_eq!(r.kernel_probs[&KernelFamily::TailUp], 1.0);
    }

    #[test]
    fn mismatched_and_underflowing_inputs_error() {
        let a = fake_fit(KernelFamily::Gaussian, "identity", 0, vec![-1.0; 100]);
        let b = fake_fit(KernelFamily::Bm, "identity", 0, vec![-1.0; 99]);
        assert!(rjmcmc_average(&[a.clone(), b], &PriorConfig::default(), 50, 1).is_err());
        assert!(rjmcmc_average(&[a.clone()], &PriorConfig::default(), 101, 1).is_err());
        let c = fake_fit(KernelFamily::Bm, "identity", 0, vec![f64::NEG_INFINITY; 100]);
        let d = fake_fit(KernelFamily::Ibm, "identity", 0, vec![f64::NEG_INFINITY; 100]);
        assert!(matches!(
            rjmcmc_average(&[c, d], &PriorConfig::default(), 100, 1),
            Err(FmmError::Averaging(_))
        ));
    }

    #[test]
    fn kernel_accumulation_is_exact_and_order_free() {
        let mut models = Vec::new();
        for f in KernelFamily::ALL {
            for j in 0..4 {
                models.push(ModelSpec::new(f, format!("w{j}"), j));
            }
        }
        let probs = vec![1.0 / 20.0; 20];
        let k = accumulate_kernel_probs(&models, &probs);
        for f in KernelFamily::ALL {
            assert!((k[&f] - 0.2).abs() < 1e-12);
        }
        let mut rev_models = models.clone();
        rev_models.reverse();
        let mut probs2: Vec<f64> = (0..20).map(|i| i as f64 / 190.0).collect();
        let k1 = accumulate_kernel_probs(&models, &probs2);
        probs2.reverse();
        let k2 = accumulate_kernel_probs(&rev_models, &probs2);
        for f in KernelFamily::ALL {
            assert!((k1[&f] - k2[&f]).abs() < 1e-15);
        }
    }

    #[test]
    fn indicator_frequencies_match_weights() {
        // Three models with fixed log-weights; the chain must follow the categorical law.
        let n = 6000;
        let fits = vec![
            fake_fit(KernelFamily::Gaussian, "a", 0, vec![0.0; n]),
            fake_fit(KernelFamily::TailUp, "a", 0, vec![1.0; n]),
            fake_fit(KernelFamily::TailDown, "a", 0, vec![-0.5; n]),
        ];
        let r = rjmcmc_average(&fits, &PriorConfig::default(), n, 11).unwrap();
        let w = iteration_weights(&fits, &[0.0; 3], 0).unwrap();
        let mut chi2 = 0.0;
        for i in 0..3 {
            let expected = w[i] * n as f64;
            let observed = r.model_chain.iter().filter(|&&m| m == i).count() as f64;
            chi2 += (observed - expected).powi(2) / expected;
        }
        let p = 1.0 - ChiSquared::new(2.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2={chi2} p={p}");
    }

    #[test]
    fn seeded_result_is_reproducible() {
        let fits = vec![
            fake_fit(KernelFamily::Gaussian, "a", 0, vec![0.0; 300]),
            fake_fit(KernelFamily::TailUp, "a", 0, vec![0.3; 300]),
        ];
        let a = rjmcmc_average(&fits, &PriorConfig::default(), 300, 5).unwrap();
        let b = rjmcmc_average(&fits, &PriorConfig::default(), 300, 5).unwrap();
        assert_eq!(a, b);
    }
}
