//! With the likelihood switched off the sampler must return the priors.

use fmm_core::kernels::{KernelFamily, KnotGrid};
use fmm_core::mcmc::{fit_model, FitConfig, ModelSpec, PriorConfig};
use fmm_core::sim::{simulate, SimConfig};
use fmm_core::warp::WarpField;
use statrs::distribution::{ContinuousCDF, InverseGamma, Uniform};

/// Two-sided Kolmogorov–Smirnov distance of `xs` from `cdf`.
fn ks_distance(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn prior_only_chain_recovers_priors() {
    let mut sc = SimConfig::stationary(4);
    sc.n_obs = 60;
    sc.m_knots = 40;
    let track = simulate(&sc).unwrap().track;
    let knots = KnotGrid::new(40).unwrap();
    let prior = PriorConfig::default();
    let cfg = FitConfig {
        n_iter: 125_000,
        n_keep: 10_000,
        burn_frac: 0.2,
        prior_only: true,
    };
    let spec = ModelSpec::new(KernelFamily::Gaussian, "identity", 0);
    let fit = fit_model(&track, &knots, &WarpField::identity(401), &spec, &prior, &cfg, 21).unwrap();
    assert_eq!(fit.len(), 10_000);
    assert!(fit.loglik.iter().all(|l| *l == 0.0));

    let ig = InverseGamma::new(prior.ig_shape, prior.ig_scale).unwrap();
    let s2: Vec<f64> = fit.draws.iter().map(|d| d.sigma2_s).collect();
    let d_s2 = ks_distance(&s2, |x| ig.cdf(x));

    let unif = Uniform::new(0.0, prior.ratio_upper).unwrap();
    let ratio: Vec<f64> = fit.draws.iter().map(|d| d.sigma_ratio).collect();
    let d_ratio = ks_distance(&ratio, |x| unif.cdf(x));

    // Discrete uniform on the φ grid, compared through the grid index.
    let g = prior.phi_grid.len() as f64;
    let mut counts = vec![0usize; prior.phi_grid.len()];
    for &i in &fit.phi_index {
        counts[i] += 1;
    }
    let mut d_phi: f64 = 0.0;
    let mut cum = 0usize;
    for (k, c) in counts.iter().enumerate() {
        cum += c;
        d_phi = d_phi.max((cum as f64 / fit.len() as f64 - (k + 1) as f64 / g).abs());
    }

    assert!(d_s2 < 0.05, "σ_s² KS distance {d_s2}");
    assert!(d_ratio < 0.05, "σ_μ/s KS distance {d_ratio}");
    assert!(d_phi < 0.05, "φ KS distance {d_phi}");
}
