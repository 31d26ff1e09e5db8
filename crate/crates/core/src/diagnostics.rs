//! Empirical variograms of data and posterior predictive residuals.
//!
//! The estimator is the classical one: `γ(b) = Σ (v_i − v_k)² / (2·N_b)` over
//! the `N_b` pairs whose time lag falls in bin `b`. Two-coordinate inputs are
//! pooled by averaging the per-coordinate semivariances.

use rayon::prelude::*;

use crate::ingest::StandardizedTrack;
use crate::predict::{posterior_residuals, PathDraws};
use crate::stats::quantile_sorted;
use crate::{FmmError, Result};

pub const DEFAULT_BINS: usize = 15;
pub const DEFAULT_MAX_LAG: f64 = 0.3;
/// Below this many draws the envelope is reported with a warning.
pub const MIN_ENVELOPE_DRAWS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Variogram {
    pub lag_centers: Vec<f64>,
    /// `None` marks an empty bin.
    pub semivariance: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    /// Pointwise (2.5%, 97.5%) bounds across draws.
    pub envelope: Option<Vec<(f64, f64)>>,
    pub max_lag: f64,
}

impl Variogram {
    pub fn bins(&self) -> usize {
        self.lag_centers.len()
    }
}

fn check_bins(bins: usize, max_lag: f64) -> Result<()> {
    if !(max_lag > 0.0 && max_lag.is_finite()) {
        return Err(FmmError::InvalidArgument(format!("max_lag must be positive, got {max_lag}")));
    }
    if bins == 0 {
        return Err(FmmError::InvalidArgument("need at least one bin".into()));
    }
    Ok(())
}

/// Pooled variogram of one or more coordinates observed at `times`.
pub fn empirical_variogram(coords: &[&[f64]], times: &[f64], bins: usize, max_lag: f64) -> Result<Variogram> {
    check_bins(bins, max_lag)?;
    if coords.is_empty() || coords.iter().any(|c| c.len() != times.len()) {
        return Err(FmmError::InvalidArgument("values and times differ in length".into()));
    }
    let width = max_lag / bins as f64;
    let mut counts = vec![0usize; bins];
    let mut sums = vec![0.0f64; bins];
    let n = times.len();
    for i in 0..n {
        for k in (i + 1)..n {
            let lag = (times[k] - times[i]).abs();
            if lag > max_lag {
                continue;
            }
            let b = ((lag / width) as usize).min(bins - 1);
            counts[b] += 1;
            let sq: f64 = coords.iter().map(|c| (c[i] - c[k]).powi(2)).sum();
            sums[b] += sq / coords.len() as f64;
        }
    }
    Ok(Variogram {
        lag_centers: (0..bins).map(|b| (b as f64 + 0.5) * width).collect(),
        semivariance: counts
            .iter()
            .zip(&sums)
            .map(|(&c, &s)| (c > 0).then(|| s / (2.0 * c as f64)))
            .collect(),
        counts,
        envelope: None,
        max_lag,
    })
}

/// Pooled variogram of a two-coordinate track.
pub fn track_variogram(track: &StandardizedTrack, bins: usize, max_lag: f64) -> Result<Variogram> {
    let x = track.coordinate(0);
    let y = track.coordinate(1);
    empirical_variogram(&[&x, &y], &track.times, bins, max_lag)
}

/// Per-draw residual variograms with their pointwise median and 95% envelope.
pub fn residual_variogram_envelope(
    paths: &PathDraws,
    track: &StandardizedTrack,
    bins: usize,
    max_lag: f64,
) -> Result<(Variogram, Vec<Variogram>)> {
    check_bins(bins, max_lag)?;
    let residuals = posterior_residuals(track, paths)?;
    if residuals.len() < MIN_ENVELOPE_DRAWS {
        log::warn!(
            "residual envelope from {} draws is unreliable (fewer than {MIN_ENVELOPE_DRAWS})",
            residuals.len()
        );
    }
    let per_draw: Vec<Variogram> = residuals
        .par_iter()
        .map(|r| {
            let x: Vec<f64> = r.iter().map(|p| p[0]).collect();
            let y: Vec<f64> = r.iter().map(|p| p[1]).collect();
            empirical_variogram(&[&x, &y], &track.times, bins, max_lag)
        })
        .collect::<Result<_>>()?;
    let first = &per_draw[0];
    let mut central = Vec::with_capacity(bins);
    let mut envelope = Vec::with_capacity(bins);
    for b in 0..bins {
        let mut vals: Vec<f64> = per_draw.iter().filter_map(|v| v.semivariance[b]).collect();
        if vals.is_empty() {
            central.push(None);
            envelope.push((f64::NAN, f64::NAN));
            continue;
        }
        vals.sort_by(f64::total_cmp);
        central.push(Some(quantile_sorted(&vals, 0.5)));
        envelope.push((quantile_sorted(&vals, 0.025), quantile_sorted(&vals, 0.975)));
    }
    let summary = Variogram {
        lag_centers: first.lag_centers.clone(),
        semivariance: central,
        counts: first.counts.clone(),
        envelope: Some(envelope),
        max_lag,
    };
    Ok((summary, per_draw))
}

/// Whether the central first-bin value lies within `[min lo, max hi]` of the
/// remaining non-empty bins.
pub fn first_bin_within_rest(v: &Variogram) -> bool {
    let Some(env) = &v.envelope else {
        return false;
    };
    let Some(first) = v.semivariance[0] else {
        return false;
    };
    let rest: Vec<(f64, f64)> = env[1..]
        .iter()
        .zip(&v.semivariance[1..])
        .filter(|(_, s)| s.is_some())
        .map(|(e, _)| *e)
        .collect();
    if rest.is_empty() {
        return false;
    }
    let lo = rest.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    let hi = rest.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    first >= lo && first <= hi
}

/// Whether a horizontal line at `level` passes through the envelope in every
/// non-empty bin.
pub fn envelope_contains_level(v: &Variogram, level: f64) -> bool {
    let Some(env) = &v.envelope else {
        return false;
    };
    env.iter()
        .zip(&v.semivariance)
        .filter(|(_, s)| s.is_some())
        .all(|(e, _)| e.0 <= level && level <= e.1)
}

/// Whether the first `k` bins rise monotonically (non-decreasing).
pub fn rising_over_first(v: &Variogram, k: usize) -> bool {
    let vals: Option<Vec<f64>> = v.semivariance.iter().take(k).copied().collect();
    match vals {
        Some(vals) if vals.len() == k => vals.windows(2).all(|w| w[1] >= w[0]),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn constant_values_have_zero_semivariance() {
        let t = grid(50);
        let v = vec![3.0; 50];
        let g = empirical_variogram(&[&v], &t, 10, 0.3).unwrap();
        assert!(g.semivariance.iter().flatten().all(|s| *s == 0.0));
    }

    #[test]
    fn two_point_hand_computation() {
        let g = empirical_variogram(&[&[0.0, 2.0]], &[0.0, 0.1], 1, 0.3).unwrap();
        assert_eq!(g.semivariance, vec![Some(2.0)]);
        assert_eq!(g.counts, vec![1]);
    }

    #[test]
    fn white_noise_reaches_its_sill() {
        let mut rng = rng_from_seed(4);
        let n = 2000;
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let g = empirical_variogram(&[&v], &grid(n), DEFAULT_BINS, DEFAULT_MAX_LAG).unwrap();
        for s in g.semivariance.iter().flatten() {
            assert!((s - 1.0).abs() < 0.15, "{s}");
        }
    }

    #[test]
    fn empty_bins_and_bad_lag() {
        let g = empirical_variogram(&[&[0.0, 1.0]], &[0.0, 0.25], 5, 0.3).unwrap();
        assert_eq!(g.semivariance.iter().filter(|s| s.is_none()).count(), 4);
        assert!(empirical_variogram(&[&[0.0, 1.0]], &[0.0, 0.25], 5, 0.0).is_err());
    }

    #[test]
    fn degenerate_envelope_for_exact_paths() {
        let t = grid(30);
        let positions: Vec<[f64; 2]> = t.iter().map(|x| [x.sin(), x.cos()]).collect();
        let track = StandardizedTrack::from_model_units(t.clone(), positions.clone()).unwrap();
        let paths = PathDraws {
            query_times: t,
            draws: vec![positions; 25],
            source: vec![(0, 0); 25],
        };
        let (v, per) = residual_variogram_envelope(&paths, &track, 5, 0.3).unwrap();
        assert_eq!(per.len(), 25);
        assert!(v.semivariance.iter().flatten().all(|s| *s == 0.0));
        assert!(v.envelope.unwrap().iter().all(|e| e.0 == 0.0 && e.1 == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn shift_and_scale_properties(seed in 0u64..1000, c in -5.0f64..5.0, k in 0.1f64..4.0) {
            let mut rng = rng_from_seed(seed);
            let n = 60;
            let t = grid(n);
            let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
            let g = empirical_variogram(&[&v], &t, 6, 0.3).unwrap();
            let gs = empirical_variogram(&[&shifted], &t, 6, 0.3).unwrap();
            let gk = empirical_variogram(&[&scaled], &t, 6, 0.3).unwrap();
            for b in 0..6 {
                let (a, s, q) = (g.semivariance[b].unwrap(), gs.semivariance[b].unwrap(), gk.semivariance[b].unwrap());
                prop_assert!((a - s).abs() <= 1e-9 * a.max(1.0));
                prop_assert!((q - k * k * a).abs() <= 1e-9 * q.max(1.0));
            }
            let within = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                .filter(|&(i, j)| t[j] - t[i] <= 0.3).count();
            prop_assert_eq!(g.counts.iter().sum::<usize>(), within);
        }
    }
}
